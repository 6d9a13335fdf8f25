"""Print the class schedule for a 409 / 227 / 82 release structure.

Stage 0 holds 409 starting classes (one increment), then two releases add
227 and 82 classes over five increments each.
"""
import argparse

from owl.protocol import StageSpec, plan_increments
from owl.synth import schedule_manifest


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rule", choices=("ceil", "floor"), default="ceil")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    manifest = schedule_manifest(409, [227, 82])
    start = {r.label for r in manifest if r.source == 0}
    plan = plan_increments(manifest, start, [StageSpec(0, 1), StageSpec(1, 5), StageSpec(2, 5)],
                           args.seed, rule=args.rule)
    print("increment\tknown\tnovel\ttotal")
    for inc in plan.increments:
        k, n = len(inc.known_labels), len(inc.novel_labels)
        print(f"{inc.index}\t{k}\t{n}\t{k + n}")


if __name__ == "__main__":
    main()

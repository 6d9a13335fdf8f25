"""The `owl` command line: plan, synth, run, metrics, ablate, perturb, replay, validate.

Exit codes: 0 success, 1 usage error, 2 data error. Diagnostics go to
stderr; data goes to files or stdout.
"""
from __future__ import annotations

import argparse
import json
import sys
import types
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from owl.data import SPLITS, validate_plan
from owl.evaluator import (ExperimentConfig, KnownLedger, replay_with_perturbation, run_experiment)
from owl.io import (dumps_record, read_checkpoint, read_features, read_jsonl, read_labels, read_manifest,
                    read_plan, write_checkpoint, write_features, write_labels, write_manifest, write_plan)
from owl.metrics import MEASURES, MODES, ConfusionMatrix, group_metrics
from owl.predictors import PredictorConfig, make_predictor, predictor_from_checkpoint
from owl.protocol import parse_stages, plan_increments, unify_labels
from owl.synth import KINDS as PERTURBATION_KINDS
from owl.synth import BlobSpec, Perturbation, assign_sources, class_label, gen_blobs, perturb


class UsageError(Exception):
    pass


class ConfigError(ValueError):
    pass


# run configuration

@dataclass(frozen=True)
class RunConfig:
    seed: int
    manifest_path: str
    plan_path: str
    features_path: str
    output_path: str
    predictor: PredictorConfig
    experiment: ExperimentConfig
    checkpoint_dir: str | None = None
    predictions_path: str | None = None

    PATHS = ("manifest_path", "plan_path", "features_path", "output_path", "checkpoint_dir", "predictions_path")


def _type_ok(value, hint) -> bool:
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        return any(_type_ok(value, h) for h in typing.get_args(hint))
    if hint is type(None):
        return value is None
    if hint is bool:
        return isinstance(value, bool)
    if hint is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if hint is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if hint is str:
        return isinstance(value, str)
    if origin is tuple:
        inner = typing.get_args(hint)[0]
        return isinstance(value, list) and all(_type_ok(v, inner) for v in value)
    return True


def _build(cls, obj, path: str, defaults: dict | None = None):
    """Construct a config dataclass from parsed JSON, naming the key path on any violation."""
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    for key in obj:
        if key not in names:
            raise ConfigError(f"{path}.{key}: unknown key")
    values = dict(defaults or {})
    values.update(obj)
    for key, value in values.items():
        if not _type_ok(value, hints[key]):
            raise ConfigError(f"{path}.{key}: unexpected value {value!r}")
        if isinstance(value, list):
            values[key] = tuple(value)
    try:
        return cls(**values)
    except ValueError as e:
        raise ConfigError(f"{path}.{e}") from None


def load_run_config(path) -> RunConfig:
    """Relative paths resolve against the config file's directory.

    The top-level seed is the default for predictor.seed and experiment.seed.
    """
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(obj, dict):
        raise ConfigError("config: expected an object")
    allowed = {f.name for f in fields(RunConfig)}
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"config.{key}: unknown key")
    for key in ("seed", "manifest_path", "plan_path", "features_path", "output_path", "predictor", "experiment"):
        if key not in obj:
            raise ConfigError(f"config.{key}: missing required key")
    seed = obj["seed"]
    if not _type_ok(seed, int):
        raise ConfigError(f"config.seed: expected an integer, got {seed!r}")
    resolved = {}
    for key in RunConfig.PATHS:
        value = obj.get(key)
        if value is None and key in ("checkpoint_dir", "predictions_path"):
            continue
        if not isinstance(value, str) or not value:
            raise ConfigError(f"config.{key}: expected a nonempty path")
        resolved[key] = str(path.parent / value)
    return RunConfig(
        seed=seed,
        predictor=_build(PredictorConfig, obj["predictor"], "config.predictor", {"seed": seed}),
        experiment=_build(ExperimentConfig, obj["experiment"], "config.experiment", {"seed": seed}),
        **resolved,
    )


# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="owl", description="open-world learning experiment harness")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("plan", help="build an increment plan from a manifest")
    s.add_argument("--manifest", action="append", required=True,
                   help="manifest CSV; repeat for several releases (latest label wins)")
    s.add_argument("--start-known", required=True, help="file with one starting known label per line")
    s.add_argument("--stages", required=True, help="source:increments pairs, e.g. 0:1,1:5")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rule", choices=("ceil", "floor"), default="ceil")
    s.add_argument("--out", required=True)

    s = sub.add_parser("synth", help="generate a Gaussian-blob dataset")
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--per-class", type=int, required=True)
    s.add_argument("--separation", type=float, required=True)
    s.add_argument("--split-fractions", default="0.6,0.2,0.2")
    s.add_argument("--novel-classes", type=int, default=0,
                   help="the last N classes debut in release 1 instead of release 0")
    s.add_argument("--carryover", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--manifest", required=True, help="output manifest CSV")
    s.add_argument("--features", required=True, help="output feature file (.csv for text)")
    s.add_argument("--start-known", help="also write the release-0 labels here")

    s = sub.add_parser("run", help="run an experiment from a config file")
    s.add_argument("--config", required=True)

    s = sub.add_parser("metrics", help="recompute one measure per step from a log")
    s.add_argument("--log", required=True)
    s.add_argument("--reduction", choices=("raw",) + MODES, default="classification")
    s.add_argument("--measure", choices=tuple(MEASURES), default="accuracy")
    s.add_argument("--split", choices=SPLITS)
    s.add_argument("--cumulative", action="store_true", help="read the cumulative records instead")

    s = sub.add_parser("ablate", help="measures per metadata group from per-sample predictions")
    s.add_argument("--predictions", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--group-key", required=True)
    s.add_argument("--binned", action="store_true", help="tercile-bin numeric values")
    s.add_argument("--step", type=float)
    s.add_argument("--split", choices=SPLITS)
    s.add_argument("--measure", action="append", choices=tuple(MEASURES))
    s.add_argument("--reduction", choices=MODES)
    s.add_argument("--log", help="evaluation log supplying the known labels for --reduction")

    s = sub.add_parser("perturb", help="apply a feature-space perturbation")
    s.add_argument("--features", required=True)
    s.add_argument("--kind", choices=PERTURBATION_KINDS, required=True)
    s.add_argument("--magnitude", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("replay", help="replay an increment from a checkpoint under perturbations")
    s.add_argument("--config", required=True)
    s.add_argument("--checkpoint", required=True, help="checkpoint written after increment t-1")
    s.add_argument("--increment", type=int, required=True)
    s.add_argument("--perturbation", action="append", help="kind[:magnitude]; repeatable")
    s.add_argument("--perturbation-seed", type=int, default=0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("validate", help="check a plan against its manifest")
    s.add_argument("--plan", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--features")
    return p


# subcommands

def cmd_plan(args) -> int:
    manifests = [read_manifest(m) for m in args.manifest]
    manifest = manifests[0] if len(manifests) == 1 else unify_labels(manifests)
    try:
        stages = parse_stages(args.stages)
    except ValueError as e:
        raise UsageError(f"--stages: {e}") from None
    plan = plan_increments(manifest, read_labels(args.start_known), stages, args.seed, rule=args.rule)
    write_plan(plan, args.out)
    print("increment\tknown\tnovel\ttrain\tvalidation\ttest")
    for inc in plan.increments:
        print(f"{inc.index}\t{len(inc.known_labels)}\t{len(inc.novel_labels)}\t"
              f"{len(inc.train_ids)}\t{len(inc.validation_ids)}\t{len(inc.test_ids)}")
    return 0


def cmd_synth(args) -> int:
    try:
        fractions = tuple(float(x) for x in args.split_fractions.split(","))
    except ValueError:
        raise UsageError("--split-fractions: expected three comma-separated numbers") from None
    if not 0 <= args.novel_classes < args.classes:
        raise UsageError("--novel-classes must be in [0, classes)")
    spec = BlobSpec(args.classes, args.dim, args.per_class, args.separation, fractions, args.seed)
    manifest, features, _ = gen_blobs(spec)
    first_novel = args.classes - args.novel_classes
    if args.novel_classes:
        sources = {class_label(k): int(k >= first_novel) for k in range(args.classes)}
        manifest = assign_sources(manifest, sources, args.carryover, args.seed)
    write_manifest(manifest, args.manifest)
    write_features(features, args.features)
    if args.start_known:
        write_labels([class_label(k) for k in range(first_novel)], args.start_known)
    return 0


def _checkpoint_writer(directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    def save(predictor, ledger, t):
        header, blocks = predictor.to_checkpoint()
        header = dict(header, ledger=ledger.to_json(), increment=t)
        write_checkpoint(header, blocks, directory / f"increment_{t:03d}.owlc")
    return save


def cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    manifest = read_manifest(cfg.manifest_path)
    plan = read_plan(cfg.plan_path)
    features = read_features(cfg.features_path)
    predictor = make_predictor(cfg.predictor)
    checkpoint = _checkpoint_writer(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    with open(cfg.output_path, "w", encoding="utf-8") as log:
        preds_fh = open(cfg.predictions_path, "w", encoding="utf-8") if cfg.predictions_path else None

        def sink(rec):
            # flushed per record so an aborted run leaves a readable prefix
            log.write(dumps_record(rec.to_json()) + "\n")
            log.flush()

        def prediction_sink(step, split, ids, preds):
            for sid, p in zip(ids, preds):
                preds_fh.write(dumps_record({"step": float(step), "split": split, "id": sid, "label": p.label,
                                             "novelty_flag": p.novelty_flag}) + "\n")

        try:
            run_experiment(plan, manifest, features, predictor, cfg.experiment, sink=sink, checkpoint=checkpoint,
                           prediction_sink=prediction_sink if preds_fh else None)
        finally:
            if preds_fh:
                preds_fh.close()
    return 0


def _matrix(rec: dict, reduction: str) -> ConfusionMatrix:
    return ConfusionMatrix.from_json(rec["raw_cm"] if reduction == "raw" else rec["reduced_cms"][reduction])


def cmd_metrics(args) -> int:
    fn = MEASURES[args.measure]
    print("step\tsplit\tvalue")
    for rec in read_jsonl(args.log):
        if bool(rec.get("cumulative")) != args.cumulative or "perturbation" in rec:
            continue
        if args.split and rec["split"] != args.split:
            continue
        print(f"{rec['step']:g}\t{rec['split']}\t{fn(_matrix(rec, args.reduction)):.17g}")
    return 0


def cmd_ablate(args) -> int:
    if args.reduction and not args.log:
        raise UsageError("--reduction needs --log for the known labels")
    records = read_manifest(args.manifest).by_id()
    rows = [r for r in read_jsonl(args.predictions)
            if (args.step is None or r["step"] == args.step) and (args.split is None or r["split"] == args.split)]
    steps = {(r["step"], r["split"]) for r in rows}
    known: set[str] = set()
    if args.reduction:
        if len(steps) != 1:
            raise UsageError("--reduction needs --step and --split selecting a single evaluation")
        step, split = next(iter(steps))
        match = [r for r in read_jsonl(args.log) if r["step"] == step and r["split"] == split
                 and not r.get("cumulative") and "perturbation" not in r]
        if not match:
            raise ValueError(f"no log record for step {step:g} split {split}")
        known = set(match[0]["known_labels"])
    pairs = []
    for r in rows:
        rec = records.get(r["id"])
        if rec is None:
            raise ValueError(f"prediction for sample {r['id']!r} has no manifest entry")
        pairs.append((rec.label, r["label"], rec.metadata))
    table = group_metrics(pairs, args.group_key, args.measure or ("accuracy", "mcc", "nmi"),
                          binned=args.binned, reduction=args.reduction, known=known)
    print(json.dumps(table, indent=1, sort_keys=True))
    return 0


def cmd_perturb(args) -> int:
    store = read_features(args.features)
    write_features(perturb(store, Perturbation(args.kind, args.magnitude, args.seed)), args.out)
    return 0


def cmd_replay(args) -> int:
    cfg = load_run_config(args.config)
    manifest = read_manifest(cfg.manifest_path)
    plan = read_plan(cfg.plan_path)
    features = read_features(cfg.features_path)
    header, blocks = read_checkpoint(args.checkpoint)
    if not 1 <= args.increment < len(plan):
        raise UsageError(f"--increment must be in [1, {len(plan) - 1}]")
    saved_at = header.get("increment")
    if saved_at != args.increment - 1:
        raise ValueError(f"checkpoint was written after increment {saved_at}; "
                         f"replaying increment {args.increment} needs the state after {args.increment - 1}")
    if header["dims"]["input"] != features.dim:
        raise ValueError(f"checkpoint expects dimension {header['dims']['input']}, features have {features.dim}")
    try:
        perts = [Perturbation.parse(text, args.perturbation_seed) for text in (args.perturbation or ["identity"])]
    except ValueError as e:
        raise UsageError(f"--perturbation: {e}") from None
    predictor = predictor_from_checkpoint(header, blocks)
    ledger = KnownLedger.from_json(header["ledger"])
    results = replay_with_perturbation(predictor, ledger, plan.increments[args.increment], manifest, features,
                                       perts, cfg.experiment)
    with open(args.out, "w", encoding="utf-8") as fh:
        for recs in results.values():
            for rec in recs:
                fh.write(dumps_record(rec.to_json()) + "\n")
    print("perturbation\tsplit\taccuracy\tmcc\tnmi")
    for name, recs in results.items():
        for rec in recs:
            m = rec.measures["classification"]
            print(f"{name}\t{rec.split}\t{m['accuracy']:.6f}\t{m['mcc']:.6f}\t{m['nmi']:.6f}")
    return 0


def cmd_validate(args) -> int:
    manifest = read_manifest(args.manifest)
    plan = read_plan(args.plan)
    problems = validate_plan(plan, manifest)
    if args.features:
        store = read_features(args.features)
        problems += [f"id {sid!r} has no feature vector"
                     for inc in plan.increments for sid in inc.all_ids() if sid not in store]
    for msg in problems:
        print(msg, file=sys.stderr)
    if problems:
        return 2
    print(f"ok: {len(plan)} increments")
    return 0


COMMANDS = {"plan": cmd_plan, "synth": cmd_synth, "run": cmd_run, "metrics": cmd_metrics, "ablate": cmd_ablate,
            "perturb": cmd_perturb, "replay": cmd_replay, "validate": cmd_validate}


def execute(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError, KeyError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return 2


def main():
    sys.exit(execute())


if __name__ == "__main__":
    main()

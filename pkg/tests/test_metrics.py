import numpy as np
import pytest
from hypothesis import given, strategies as st

from owl.data import PredictionRecord
from owl.metrics import (ConfusionMatrix, accuracy, aggregate, build_confusion, confusion_from_labels,
                         group_metrics, mcc, measure_all, nmi_arith, reaction_time, reduce_confusion,
                         tercile_bins, topk_confusion)
from oracles import binary_mcc, expand, nmi_direct, onehot_pearson, random_counts, reaction_direct

LABELS = [f"c{i}" for i in range(8)]


def pred(label, sid="s"):
    return PredictionRecord(sid, {label: 1.0}, False)


def cm_from(counts, labels=None):
    labels = labels or LABELS[:counts.shape[0]]
    return ConfusionMatrix.from_dense(labels, labels, counts)


counts_st = st.integers(1, 6).flatmap(
    lambda k: st.lists(st.integers(0, 30), min_size=k * k, max_size=k * k)
    .filter(lambda v: sum(v) > 0).map(lambda v: np.array(v).reshape(k, k)))


# construction

def test_build_small_cases():
    cm = build_confusion([("A", pred("A"))])
    assert cm.rows == ("A",) and cm.dense().tolist() == [[1]]
    cm = build_confusion([("A", pred("B")), ("B", pred("B"))])
    assert cm.rows == ("A", "B") and cm.get("A", "B") == 1 and cm.get("B", "B") == 1 and cm.total == 2
    with pytest.raises(ValueError):
        build_confusion([])


def test_row_sums_count_truths():
    rng = np.random.default_rng(1)
    truths = rng.choice(list("ABCDE"), 1000)
    preds = rng.choice(list("ABCDE"), 1000)
    cm = confusion_from_labels(truths.tolist(), preds.tolist())
    assert cm.row_sums() == {k: int((truths == k).sum()) for k in "ABCDE"}


def test_topk():
    assert topk_confusion([("A", ["B", "A", "C"])], 5).get("A", "A") == 1
    assert topk_confusion([("A", ["B", "A", "C"])], 1).get("A", "B") == 1
    with pytest.raises(ValueError):
        topk_confusion([("A", ["A"])], 0)


@given(st.lists(st.tuples(st.sampled_from("ABCD"), st.permutations("ABCD")), min_size=1, max_size=40),
       st.integers(1, 4))
def test_topk_accuracy_is_membership_rate(pairs, k):
    cm = topk_confusion(pairs, k)
    assert accuracy(cm) == pytest.approx(np.mean([t in r[:k] for t, r in pairs]))


# reductions

def test_classification_folds_unseen_labels():
    cm = confusion_from_labels(["A", "A", "novelX", "novelX"], ["A", "novelX", "A", "unknown_1"])
    red = reduce_confusion(cm, "classification", {"A"})
    assert red.rows == ("A", "unknown")
    assert red.dense().tolist() == [[1, 1], [1, 1]]


def test_detection_pads_to_two_by_two():
    cm = confusion_from_labels(["A", "B"], ["A", "B"])
    red = reduce_confusion(cm, "detection", {"A", "B"})
    assert red.rows == ("known", "unknown") and red.dense().tolist() == [[2, 0], [0, 0]]


def test_recognition_keeps_clusters():
    rng = np.random.default_rng(3)
    labels = ["A", "B", "C", "unknown", "unknown_1", "unknown_2"]
    counts = rng.integers(0, 9, (6, 6))
    red = reduce_confusion(ConfusionMatrix.from_dense(labels, labels, counts), "recognition", {"A", "B"})
    assert set(red.cols) == {"known", "C", "unknown", "unknown_1", "unknown_2"}
    assert red.get("known", "unknown_2") == counts[:2, 5].sum()
    assert red.get("known", "known") == counts[:2, :2].sum()
    assert red.get("C", "unknown_1") == counts[2, 4]


@given(counts_st, st.sets(st.sampled_from(LABELS)))
def test_reduction_properties(counts, known):
    cm = cm_from(counts)
    for mode in ("classification", "detection", "recognition"):
        assert reduce_confusion(cm, mode, known).total == cm.total
    det = reduce_confusion(cm, "detection", known)
    assert reduce_confusion(det, "detection", {"known"}) == det



def test_reduction_unknown_mode():
    with pytest.raises(ValueError):
        reduce_confusion(cm_from(np.eye(2, dtype=int)), "bogus", set())


# measures

def test_fixed_values():
    assert accuracy(cm_from(np.eye(3, dtype=int))) == 1.0
    assert accuracy(cm_from(np.array([[0, 2], [3, 0]]))) == 0.0
    assert mcc(cm_from(np.array([[5, 0], [0, 5]]))) == 1.0
    assert mcc(cm_from(np.array([[1, 1], [1, 1]]))) == 0.0
    assert mcc(cm_from(np.array([[4, 0], [3, 0]]))) == 0.0  # constant predictions
    assert nmi_arith(cm_from(np.array([[0, 4, 0], [0, 0, 2], [7, 0, 0]]))) == 1.0
    assert nmi_arith(cm_from(np.outer([1, 2, 3], [2, 1, 1]))) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        accuracy(ConfusionMatrix(("A",), ("A",), {}))


@given(counts_st)
def test_accuracy_matches_counting(counts):
    t, p = expand(counts)
    assert accuracy(cm_from(counts)) == pytest.approx(np.mean(t == p), abs=1e-15)


@given(counts_st)
def test_mcc_matches_onehot_oracle(counts):
    assert abs(mcc(cm_from(counts)) - onehot_pearson(counts)) < 1e-10


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_mcc_binary_case(tp, fn, fp, tn):
    if tp + fn + fp + tn == 0:
        return
    cm = cm_from(np.array([[tp, fn], [fp, tn]]), ["P", "N"])
    assert mcc(cm) == pytest.approx(binary_mcc(tp, fn, fp, tn), abs=1e-12)


@given(counts_st)
def test_nmi_matches_direct_sum(counts):
    assert abs(nmi_arith(cm_from(counts)) - nmi_direct(counts)) < 1e-12


@given(counts_st, st.randoms(use_true_random=False))
def test_measures_ignore_label_order_and_stay_in_range(counts, rnd):
    k = counts.shape[0]
    perm = list(range(k))
    rnd.shuffle(perm)
    base = measure_all(cm_from(counts))
    labels = [LABELS[i] for i in perm]
    shuffled = ConfusionMatrix.from_dense(labels, labels, counts[np.ix_(perm, perm)])
    for name, value in measure_all(shuffled).items():
        assert value == pytest.approx(base[name], abs=1e-12)
    assert -1 - 1e-12 <= base["mcc"] <= 1 + 1e-12
    assert 0 <= base["nmi"] <= 1


def test_random_matrix_oracles_seeded():
    rng = np.random.default_rng(11)
    for _ in range(50):
        counts = random_counts(rng, max_total=500)
        cm = cm_from(counts)
        assert abs(mcc(cm) - onehot_pearson(counts)) < 1e-10
        assert abs(nmi_arith(cm) - nmi_direct(counts)) < 1e-12


# reaction time

def test_reaction_time_cases():
    assert reaction_time([0, 0, 1, 1], [0, 0, 1, 0]) == 0.0
    assert reaction_time([0, 1, 1], [0, 0, 0]) == 1.0
    assert reaction_time([0, 0, 0], [1, 0, 0]) is None
    # a=0, z=3, d=2, r=2, m=1
    assert reaction_time([1, 0, 0, 1], [0, 0, 1, 0]) == 0.5
    # detections before the first novel sample do not count
    assert reaction_time([0, 1, 0], [1, 0, 1]) == reaction_direct([0, 1, 0], [0, 0, 1])
    with pytest.raises(ValueError):
        reaction_time([1], [1, 0])


bools = st.lists(st.booleans(), min_size=1, max_size=40)


@given(bools, st.data())
def test_reaction_time_matches_definition(truth, data):
    pred = data.draw(st.lists(st.booleans(), min_size=len(truth), max_size=len(truth)))
    got = reaction_time(truth, pred)
    want = reaction_direct(truth, pred)
    assert got == want if want is None else got == pytest.approx(want, abs=1e-15)
    if got is not None:
        assert 0.0 <= got <= 1.0


@given(bools.filter(any), st.data())
def test_reaction_time_monotone_in_detection(truth, data):
    a = truth.index(True)
    d1 = data.draw(st.integers(a, len(truth)))
    d2 = data.draw(st.integers(d1, len(truth)))
    # single detection at d (or none when d == len)
    scores = [reaction_time(truth, [i == d for i in range(len(truth))]) for d in (d1, d2)]
    assert scores[0] <= scores[1] + 1e-15


# aggregation and ablation

def test_aggregate():
    m = confusion_from_labels(["A", "B"], ["A", "A"])
    assert aggregate([m]) == m
    z = ConfusionMatrix(("C",), ("C",), {})
    padded = aggregate([m, z])
    assert padded.rows == ("A", "B", "C") and padded.total == m.total
    with pytest.raises(ValueError):
        aggregate([])


@given(st.lists(st.lists(st.tuples(st.sampled_from("ABC"), st.sampled_from("ABCD")), min_size=1, max_size=20),
                min_size=1, max_size=5))
def test_aggregate_equals_concatenation(chunks):
    parts = [confusion_from_labels(*zip(*c)) for c in chunks]
    flat = [pair for c in chunks for pair in c]
    whole = confusion_from_labels(*zip(*flat))
    assert aggregate(parts).cells == whole.cells


def test_tercile_bins():
    assert tercile_bins([str(v) for v in [9, 1, 5, 3, 7, 2, 8, 4, 6]]) == [
        "large", "small", "medium", "small", "large", "small", "large", "medium", "medium"]
    assert tercile_bins(["1", "x", ""]) == ["small", "N/A", "N/A"]


def test_group_metrics():
    pairs = [("A", "A", {"g": "x"}), ("B", "A", {"g": "x"}), ("A", "A", {}), ("B", "B", {"g": ""})]
    out = group_metrics(pairs, "g", ["accuracy"])
    assert out == {"N/A": {"count": 2, "accuracy": 1.0}, "x": {"count": 2, "accuracy": 0.5}}
    same = group_metrics([(t, p, {"g": "1"}) for t, p, _ in pairs], "g")
    assert same["1"] == {"count": 4, **measure_all(confusion_from_labels(["A", "B", "A", "B"], ["A", "A", "A", "B"]))}
    binned = group_metrics([("A", "A", {"area": str(v)}) for v in range(9)], "area", ["accuracy"], binned=True)
    assert {k: v["count"] for k, v in binned.items()} == {"small": 3, "medium": 3, "large": 3}
    red = group_metrics([("N", "unknown_1", {})], "g", ["accuracy"], reduction="classification", known={"A"})
    assert red["N/A"]["accuracy"] == 1.0
    with pytest.raises(ValueError):
        group_metrics(pairs, "g", ["f1"])


def test_json_round_trip():
    cm = confusion_from_labels(["A", "B", "B"], ["B", "B", "unknown_1"])
    assert ConfusionMatrix.from_json(cm.to_json()) == cm
    assert cm.to_json()["cells"] == [[0, 1, 1], [1, 1, 1], [1, 2, 1]]

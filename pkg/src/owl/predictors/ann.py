"""One-hidden-layer softmax classifier with a thresholded catch-all unknown output."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from owl import UNKNOWN
from owl.data import PredictionRecord
from owl.predictors.base import Predictor, PredictorConfig, calibrate_threshold, records_from_scores, NoveltyThreshold
from owl.rng import derive_seed


@dataclass(frozen=True)
class AnnState:
    """Network parameters plus momentum buffers.

    Output rows follow `labels`, with the catch-all unknown unit last.
    """

    labels: tuple[str, ...]
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    vW1: np.ndarray
    vb1: np.ndarray
    vW2: np.ndarray
    vb2: np.ndarray
    slope: float = 0.01
    dropout: float = 0.5
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 256

    PARAMS = ("W1", "b1", "W2", "b2")

    @property
    def outputs(self) -> tuple[str, ...]:
        return self.labels + (UNKNOWN,)

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.PARAMS}


def _output_row(seed: int, label: str, hidden: int) -> np.ndarray:
    rng = np.random.default_rng(derive_seed(seed, "output", label))
    bound = 1.0 / np.sqrt(hidden)
    return rng.uniform(-bound, bound, size=hidden)


def ann_init(dim: int, hidden: int, labels, seed: int, **hyper) -> AnnState:
    rng = np.random.default_rng(derive_seed(seed, "hidden"))
    bound = 1.0 / np.sqrt(dim)
    W1 = rng.uniform(-bound, bound, size=(hidden, dim))
    b1 = rng.uniform(-bound, bound, size=hidden)
    labels = tuple(sorted(labels))
    W2 = np.stack([_output_row(seed, lab, hidden) for lab in labels + (UNKNOWN,)])
    b2 = np.zeros(len(labels) + 1)
    zeros = lambda a: np.zeros_like(a)
    return AnnState(labels, W1, b1, W2, b2, zeros(W1), zeros(b1), zeros(W2), zeros(b2), **hyper)


def ann_grow_outputs(state: AnnState, new_labels, seed: int) -> AnnState:
    """Add one output unit per new label just before the unknown unit; old rows are untouched."""
    new_labels = sorted(new_labels)
    if len(set(new_labels)) != len(new_labels):
        raise ValueError("duplicate labels in growth request")
    clash = set(new_labels) & set(state.outputs)
    if clash:
        raise ValueError(f"labels already present in the output layer: {sorted(clash)}")
    if not new_labels:
        return state
    hidden = state.W1.shape[0]
    rows = np.stack([_output_row(seed, lab, hidden) for lab in new_labels])

    def grow(mat, extra):
        return np.concatenate([mat[:-1], extra, mat[-1:]])

    return replace(
        state,
        labels=state.labels + tuple(new_labels),
        W2=grow(state.W2, rows), b2=grow(state.b2, np.zeros(len(new_labels))),
        vW2=grow(state.vW2, np.zeros_like(rows)), vb2=grow(state.vb2, np.zeros(len(new_labels))),
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(params: dict, X: np.ndarray, slope: float, mask: np.ndarray | None = None):
    z1 = X @ params["W1"].T + params["b1"]
    a1 = np.where(z1 > 0, z1, slope * z1)
    h = a1 if mask is None else a1 * mask
    logits = h @ params["W2"].T + params["b2"]
    return logits, (z1, h)


def loss_and_grads(params: dict, X: np.ndarray, y: np.ndarray, slope: float,
                   mask: np.ndarray | None = None) -> tuple[float, dict]:
    """Mean cross-entropy and its gradient; `mask` is an already-scaled dropout mask."""
    n = X.shape[0]
    logits, (z1, h) = forward(params, X, slope, mask)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(logp[np.arange(n), y].mean())
    g = np.exp(logp)
    g[np.arange(n), y] -= 1.0
    g /= n
    grads = {"W2": g.T @ h, "b2": g.sum(axis=0)}
    dh = g @ params["W2"]
    if mask is not None:
        dh = dh * mask
    dz1 = dh * np.where(z1 > 0, 1.0, slope)
    grads["W1"] = dz1.T @ X
    grads["b1"] = dz1.sum(axis=0)
    return loss, grads


def ann_train_epoch(state: AnnState, X: np.ndarray, labels, seed: int) -> tuple[AnnState, float]:
    """One shuffled pass of mini-batch SGD with momentum; returns the mean batch loss."""
    index = {lab: i for i, lab in enumerate(state.labels)}
    try:
        y = np.array([index[lab] for lab in labels], dtype=np.int64)
    except KeyError as e:
        raise ValueError(f"label {e.args[0]!r} is not an output of the network") from None
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(y))
    params = {k: v.copy() for k, v in state.params().items()}
    vel = {k: getattr(state, "v" + k).copy() for k in AnnState.PARAMS}
    keep = 1.0 - state.dropout
    losses = []
    for start in range(0, len(y), state.batch_size):
        batch = order[start:start + state.batch_size]
        mask = None
        if state.dropout > 0:
            mask = (rng.random((len(batch), params["W1"].shape[0])) < keep) / keep
        loss, grads = loss_and_grads(params, X[batch], y[batch], state.slope, mask)
        losses.append(loss)
        for k in AnnState.PARAMS:
            vel[k] = state.momentum * vel[k] - state.learning_rate * grads[k]
            params[k] = params[k] + vel[k]
    new = replace(state, **params, **{"v" + k: v for k, v in vel.items()})
    return new, float(np.mean(losses)) if losses else 0.0


def ann_log_probabilities(state: AnnState, X: np.ndarray) -> np.ndarray:
    logits, _ = forward(state.params(), X, state.slope)
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def ann_probabilities(state: AnnState, X: np.ndarray) -> np.ndarray:
    return np.exp(ann_log_probabilities(state, X))


class AnnPredictor(Predictor):
    kind = "ann"

    def __init__(self, config: PredictorConfig):
        super().__init__(config)
        self.state: AnnState | None = None
        self.updates = 0
        self.memory_ids: list[str] = []
        self.memory_labels: list[str] = []
        self.memory_X = np.zeros((0, 0))
        self.shift = np.zeros(0)
        self.scale = np.ones(0)

    @property
    def known_labels(self) -> frozenset[str]:
        return frozenset(self.state.labels) if self.state else frozenset()

    def _inputs(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.shift) / self.scale

    def _train(self):
        cfg = self.config
        self.updates += 1
        X, labels = self.memory_X, self.memory_labels
        if cfg.class_balanced:
            # every class tiled up to the largest class count
            lab = np.array(labels)
            groups = [np.flatnonzero(lab == c) for c in sorted(set(labels))]
            top = max(len(g) for g in groups)
            idx = np.concatenate([np.resize(g, top) for g in groups])
            X, labels = X[idx], lab[idx].tolist()
        X = self._inputs(X)
        for epoch in range(cfg.epochs_per_increment):
            self.state, _ = ann_train_epoch(self.state, X, labels,
                                            derive_seed(cfg.seed, "train", self.updates, epoch))

    def fit_initial(self, ids, X, labels, val_ids, val_X, val_labels):
        cfg = self.config
        X = np.asarray(X, dtype=np.float64)
        if cfg.standardize:
            self.shift = X.mean(axis=0)
            sd = X.std(axis=0)
            self.scale = np.where(sd > 0, sd, 1.0)
        else:
            self.shift, self.scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
        hidden = X.shape[1] if cfg.hidden_width == "feature_dim" else cfg.hidden_width
        self.state = ann_init(X.shape[1], hidden, set(labels), cfg.seed, slope=cfg.leaky_slope,
                              dropout=cfg.dropout, learning_rate=cfg.learning_rate,
                              momentum=cfg.momentum, batch_size=cfg.batch_size)
        self.memory_ids = list(ids)
        self.memory_labels = list(labels)
        self.memory_X = X.copy()
        self._train()
        calib = self.confidence(val_X) if len(val_ids) else self.confidence(X)
        self.threshold = calibrate_threshold(calib, cfg.accepted_error)

    def feedback(self, ids, X, labels):
        if not len(ids):
            return
        seen = set(self.memory_ids)
        fresh = [i for i, sid in enumerate(ids) if sid not in seen]
        if not fresh:
            return
        X = np.asarray(X, dtype=np.float64)[fresh]
        labels = [labels[i] for i in fresh]
        self.state = ann_grow_outputs(self.state, set(labels) - set(self.state.labels), self.config.seed)
        self.memory_ids += [ids[i] for i in fresh]
        self.memory_labels += labels
        self.memory_X = np.concatenate([self.memory_X, X])
        self._train()

    def confidence(self, X) -> np.ndarray:
        # log of the top known-class probability: same ordering as the
        # probability itself, but it does not saturate at 1.0
        logp = ann_log_probabilities(self.state, self._inputs(X))
        return logp[:, :-1].max(axis=1)

    def predict(self, ids, X) -> list[PredictionRecord]:
        logp = ann_log_probabilities(self.state, self._inputs(X))
        probs = np.exp(logp)
        top = probs[:, :-1].max(axis=1)
        flagged = logp[:, :-1].max(axis=1) < self.threshold.value
        # flagged rows move mass max(p) onto the unknown unit: still a
        # probability vector, and the unknown unit becomes the strict argmax
        adj = probs.copy()
        adj[flagged] *= (1.0 - top[flagged])[:, None]
        adj[flagged, -1] += top[flagged]
        outputs = self.state.outputs
        order = np.argsort(outputs, kind="stable")
        return records_from_scores(list(ids), [outputs[i] for i in order], adj[:, order])

    def to_checkpoint(self):
        s = self.state
        header = {
            "kind": self.kind,
            "dims": {"input": int(s.W1.shape[1]), "hidden": int(s.W1.shape[0])},
            "labels": list(s.labels),
            "config": self.config.to_dict(),
            "threshold": [self.threshold.value, self.threshold.calibration_size],
            "updates": self.updates,
            "feedback_round": self.feedback_round,
            "memory_ids": list(self.memory_ids),
            "memory_labels": list(self.memory_labels),
        }
        names = AnnState.PARAMS + tuple("v" + k for k in AnnState.PARAMS)
        blocks = [(k, getattr(s, k)) for k in names] + [("memory_X", self.memory_X),
                                                        ("shift", self.shift), ("scale", self.scale)]
        # snapshot: later training must not reach back into a saved checkpoint
        return header, [(name, np.array(b, dtype=np.float64)) for name, b in blocks]

    @classmethod
    def from_checkpoint(cls, header, blocks):
        cfg = PredictorConfig(**header["config"])
        p = cls(cfg)
        p.state = AnnState(tuple(header["labels"]), *(blocks[k] for k in AnnState.PARAMS),
                           *(blocks["v" + k] for k in AnnState.PARAMS), slope=cfg.leaky_slope,
                           dropout=cfg.dropout, learning_rate=cfg.learning_rate,
                           momentum=cfg.momentum, batch_size=cfg.batch_size)
        p.threshold = NoveltyThreshold(header["threshold"][0], header["threshold"][1])
        p.updates = header["updates"]
        p.feedback_round = header["feedback_round"]
        p.memory_ids = list(header["memory_ids"])
        p.memory_labels = list(header["memory_labels"])
        p.memory_X = blocks["memory_X"]
        p.shift, p.scale = blocks["shift"], blocks["scale"]
        return p

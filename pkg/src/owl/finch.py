"""FINCH: parameter-free hierarchical clustering from first-neighbor links.

Level 0 links every point to its nearest neighbor; clusters are the
connected components of that graph. Each further level repeats the same
step on the cluster means until a single cluster remains.
"""
from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

_BLOCK = 2048


def first_neighbors(points: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """Index of each point's nearest other point (ties -> lowest index)."""
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if metric == "cosine":
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        x = x / np.where(norms > 0, norms, 1.0)
        dist_metric = "cosine_sim"
    elif metric == "euclidean":
        dist_metric = "sqeuclidean"
    else:
        raise ValueError(f"unsupported metric {metric!r}")
    nn = np.empty(n, dtype=np.int64)
    for start in range(0, n, _BLOCK):
        block = x[start:start + _BLOCK]
        if dist_metric == "cosine_sim":
            d = 1.0 - block @ x.T
        else:
            d = cdist(block, x, "sqeuclidean")
        d[np.arange(len(block)), np.arange(start, start + len(block))] = np.inf
        nn[start:start + len(block)] = np.argmin(d, axis=1)
    return nn


def _components(nn: np.ndarray) -> np.ndarray:
    n = len(nn)
    # i-nn(i) edges already join i and j whenever nn(i) == nn(j)
    graph = coo_matrix((np.ones(n), (np.arange(n), nn)), shape=(n, n))
    _, comp = connected_components(graph, directed=True, connection="weak")
    # renumber by first appearance so ids are stable
    _, first = np.unique(comp, return_index=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return remap[comp]


def finch_cluster(points, metric: str = "euclidean") -> list[np.ndarray]:
    """Partition hierarchy, finest first; each partition maps point index -> cluster id."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("finch_cluster needs a non-empty 2-d array of points")
    n = x.shape[0]
    if n == 1:
        return [np.zeros(1, dtype=np.int64)]
    levels = []
    assign = np.arange(n)
    current = x
    while True:
        comp = _components(first_neighbors(current, metric))
        assign = comp[assign]
        levels.append(assign.copy())
        k = int(assign.max()) + 1
        if k == 1:
            break
        counts = np.bincount(assign, minlength=k).astype(np.float64)
        current = np.zeros((k, x.shape[1]))
        np.add.at(current, assign, x)
        current /= counts[:, None]
    return levels


def select_partition(levels: list[np.ndarray], which: str = "finest") -> np.ndarray:
    if which == "finest":
        return levels[0]
    if which == "coarsest_nontrivial":
        for level in reversed(levels):
            if level.max() > 0:
                return level
        return levels[0]
    if which == "coarsest":
        return levels[-1]
    raise ValueError(f"unknown partition choice {which!r}")

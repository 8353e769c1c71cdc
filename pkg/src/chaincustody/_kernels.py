"""Connected-components kernels for transaction-graph clustering.

Unifying the input addresses of tens of millions of transactions is the
one hot loop in this package, so it runs on integer arrays: addresses are
interned to node ids and each transaction contributes star edges from its
first input to the rest.

Two interchangeable backends compute the components:

* ``numba`` (default when importable): an @njit union-find with path
  halving and union by size over the edge arrays;
* ``numpy`` (fallback): vectorized minimum-label propagation with pointer
  jumping, no Python-level loop over edges.

Set ``CHAINCUSTODY_NO_NUMBA=1`` to force the numpy path. Both backends
return the same normalized labels (the minimum node id of each component),
so results are bit-identical either way; ``benchmarks/bench_clustering.py``
compares their throughput.
"""

from __future__ import annotations

import os

import numpy as np

_ENV_FLAG = "CHAINCUSTODY_NO_NUMBA"


def _numba_disabled() -> bool:
    return os.environ.get(_ENV_FLAG, "") not in ("", "0")


def _uf_components(parent: np.ndarray, size: np.ndarray, us: np.ndarray, vs: np.ndarray) -> None:
    for k in range(us.shape[0]):
        a = us[k]
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        b = vs[k]
        while parent[b] != b:
            parent[b] = parent[parent[b]]
            b = parent[b]
        if a == b:
            continue
        if size[a] < size[b]:
            a, b = b, a
        parent[b] = a
        size[a] += size[b]
    for i in range(parent.shape[0]):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]


try:  # pragma: no cover - exercised indirectly through backend tests
    from numba import njit

    _uf_components_jit = njit(cache=True)(_uf_components)
except ImportError:  # pragma: no cover
    _uf_components_jit = None


def _components_unionfind(n_nodes: int, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    parent = np.arange(n_nodes, dtype=np.int64)
    size = np.ones(n_nodes, dtype=np.int64)
    kernel = _uf_components_jit if _uf_components_jit is not None else _uf_components
    kernel(parent, size, us, vs)
    return parent


def _components_labelprop(n_nodes: int, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    labels = np.arange(n_nodes, dtype=np.int64)
    if us.size == 0:
        return labels
    while True:
        m = np.minimum(labels[us], labels[vs])
        np.minimum.at(labels, us, m)
        np.minimum.at(labels, vs, m)
        while True:
            jumped = labels[labels]
            if np.array_equal(jumped, labels):
                break
            labels = jumped
        if np.all(labels[us] == labels[vs]):
            return labels


def _normalize(labels: np.ndarray) -> np.ndarray:
    """Relabel every component by its minimum node id."""
    n = labels.shape[0]
    minimum = np.arange(n, dtype=np.int64)
    np.minimum.at(minimum, labels, np.arange(n, dtype=np.int64))
    return minimum[labels]


def active_backend() -> str:
    if _numba_disabled() or _uf_components_jit is None:
        return "numpy"
    return "numba"


def connected_components(n_nodes: int, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Labels (min node id per component) for an undirected edge list."""
    us = np.ascontiguousarray(us, dtype=np.int64)
    vs = np.ascontiguousarray(vs, dtype=np.int64)
    if us.shape != vs.shape:
        raise ValueError("edge arrays must have equal length")
    if us.size and (us.max() >= n_nodes or vs.max() >= n_nodes or us.min() < 0 or vs.min() < 0):
        raise ValueError("edge endpoint out of range")
    if active_backend() == "numba":
        labels = _components_unionfind(n_nodes, us, vs)
    else:
        labels = _components_labelprop(n_nodes, us, vs)
    return _normalize(labels)

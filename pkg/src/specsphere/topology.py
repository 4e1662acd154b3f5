"""Per-graph operators consumed by the two branches.

A :class:`Topology` is either constant (built from a :class:`Graph`) or
relaxed: every candidate node pair carries a differentiable weight in [0, 1]
that enters both the rescaled Laplacian and the attention neighbourhoods, so
loss gradients with respect to adjacency entries are available.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .graph import Graph, normalized_laplacian
from .sparse import SparseMatrix, SparseValue


@dataclass(eq=False)
class Topology:
    n: int
    ltilde: SparseMatrix | SparseValue
    lap: SparseMatrix
    att_rows: np.ndarray
    att_cols: np.ndarray
    att_weight: Value | None = None
    pairs: np.ndarray | None = None
    pair_weight: Value | None = None


def _with_self_loops(rows, cols, n):
    loops = np.arange(n)
    return np.concatenate([rows, loops]), np.concatenate([cols, loops])


def topology(g: Graph) -> Topology:
    lp = normalized_laplacian(g)
    rows, cols = _with_self_loops(g.adjacency.row_ids, g.adjacency.indices, g.n)
    return Topology(g.n, lp.Ltilde, lp.L, rows, cols)


def relaxed_topology(g: Graph, pairs: np.ndarray, weights: np.ndarray,
                     lap: SparseMatrix | None = None) -> Topology:
    """Topology whose pair weights are leaves requiring gradients.

    ``pairs`` is a (P, 2) array with i < j; ``weights`` holds the current
    adjacency value of each pair (1 for an edge, 0 for a non-edge). A (P, 1)
    Value is used as is, so callers can differentiate through it.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    n, P = g.n, len(pairs)
    if isinstance(weights, Value):
        w = weights
    else:
        w = Value(np.asarray(weights, dtype=np.float64).reshape(P, 1), requires_grad=True)
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    w_dir = ad.gather_rows(w, np.concatenate([np.arange(P), np.arange(P)]))
    deg = ad.segment_sum(w_dir, rows, n)
    dinv = ad.rsqrt_safe(deg)
    vals = -(w_dir * ad.gather_rows(dinv, rows) * ad.gather_rows(dinv, cols))
    ltilde = SparseValue(rows, cols, (n, n), vals)
    att_rows, att_cols = _with_self_loops(rows, cols, n)
    att_w = ad.concat_rows([w_dir, Value(np.ones((n, 1)))])
    if lap is None:
        lap = normalized_laplacian(g).L
    return Topology(n, ltilde, lap, att_rows, att_cols, att_w, pairs, w)

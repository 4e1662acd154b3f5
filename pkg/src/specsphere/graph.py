"""Undirected graphs, Laplacians, homophily, 1-WL refinement and edge edits."""
from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, ShapeError
from .sparse import SparseMatrix


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected graph with node data.

    ``labels`` uses -1 for unlabeled nodes. Masks are boolean vectors of
    length ``n`` and must be pairwise disjoint.
    """

    n: int
    adjacency: SparseMatrix
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    def __post_init__(self):
        if self.adjacency.shape != (self.n, self.n):
            raise ShapeError("adjacency must be n x n")
        if self.features.ndim != 2 or self.features.shape[0] != self.n:
            raise ShapeError(f"features must have {self.n} rows")
        for m in (self.labels, self.train_mask, self.val_mask, self.test_mask):
            if m.shape != (self.n,):
                raise ShapeError("labels and masks must have length n")
        overlap = (self.train_mask.astype(int) + self.val_mask.astype(int)
                   + self.test_mask.astype(int))
        if np.any(overlap > 1):
            raise InputError("train/val/test masks must be disjoint")

    @property
    def num_edges(self) -> int:
        return self.adjacency.nnz // 2

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        lab = self.labels[self.labels >= 0]
        return int(lab.max()) + 1 if lab.size else 0

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.indptr).astype(np.float64)

    def edges(self) -> np.ndarray:
        """Undirected edges as an (m, 2) array with i < j, lexicographically sorted."""
        rows = self.adjacency.row_ids
        cols = self.adjacency.indices
        keep = rows < cols
        return np.stack([rows[keep], cols[keep]], axis=1)

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def with_features(self, x: np.ndarray) -> "Graph":
        return replace(self, features=np.asarray(x, dtype=np.float64))

    def with_edges(self, edges: np.ndarray) -> "Graph":
        return replace(self, adjacency=_adjacency(edges, self.n))


def _adjacency(edges, n: int) -> SparseMatrix:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise InputError("edge endpoint out of range")
    if np.any(e[:, 0] == e[:, 1]):
        raise InputError("self-loops are not allowed")
    lo, hi = np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1])
    pairs = np.unique(np.stack([lo, hi], axis=1), axis=0) if e.size else e
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    return SparseMatrix.from_coo(rows, cols, np.ones(rows.size), (n, n), symmetric=True)


def build_graph(edges: Iterable[Sequence[int]], n: int, features=None, labels=None,
                train_mask=None, val_mask=None, test_mask=None) -> Graph:
    """Build a symmetric, deduplicated graph from an edge list."""
    x = np.ones((n, 1)) if features is None else np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != n:
        raise ShapeError(f"feature matrix has {x.shape[0] if x.ndim else 0} rows, expected {n}")
    y = -np.ones(n, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)

    def mask(m):
        return np.zeros(n, dtype=bool) if m is None else np.asarray(m, dtype=bool)

    edge_arr = np.array(list(edges) if not isinstance(edges, np.ndarray) else edges,
                        dtype=np.int64).reshape(-1, 2)
    return Graph(n, _adjacency(edge_arr, n), x, y, mask(train_mask), mask(val_mask),
                 mask(test_mask))


@dataclass(frozen=True, eq=False)
class LaplacianPair:
    L: SparseMatrix
    Ltilde: SparseMatrix


def normalized_laplacian(g: Graph) -> LaplacianPair:
    """L = I - D^-1/2 A D^-1/2 and the rescaled L - I (fixed lambda_max = 2).

    Isolated nodes get D^-1/2 = 0, so their row of L is an identity row.
    """
    deg = g.degrees()
    dinv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    a = g.adjacency
    rows, cols = a.row_ids, a.indices
    vals = -a.data * dinv[rows] * dinv[cols]
    ltilde = SparseMatrix.from_coo(rows, cols, vals, (g.n, g.n), symmetric=True)
    diag = np.arange(g.n)
    lap = SparseMatrix.from_coo(np.concatenate([rows, diag]), np.concatenate([cols, diag]),
                                np.concatenate([vals, np.ones(g.n)]), (g.n, g.n),
                                symmetric=True)
    return LaplacianPair(lap, ltilde)


def spectral_energy(lap: SparseMatrix, h: np.ndarray) -> float:
    """trace(H^T L H), i.e. the squared Frobenius norm of L^1/2 H."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim == 1:
        h = h[:, None]
    if h.shape[0] != lap.n_cols:
        raise ShapeError(f"H has {h.shape[0]} rows, L is {lap.shape}")
    return float(np.sum(h * (lap @ h)))


def rayleigh_quotient(lap: SparseMatrix, h: np.ndarray) -> float:
    """Aggregate frequency trace(H^T L H) / ||H||_F^2 (0 for H = 0)."""
    h = np.asarray(h, dtype=np.float64)
    denom = float(np.sum(h * h))
    return spectral_energy(lap, h) / denom if denom > 0 else 0.0


def local_homophily(g: Graph, yhat) -> np.ndarray:
    """Fraction of each node's neighbours sharing its label; 0.5 for isolated nodes."""
    yhat = np.asarray(yhat)
    a = g.adjacency
    same = (yhat[a.row_ids] == yhat[a.indices]).astype(np.float64)
    counts = np.bincount(a.row_ids, weights=same, minlength=g.n)
    deg = g.degrees()
    return np.where(deg > 0, counts / np.where(deg > 0, deg, 1.0), 0.5)


@dataclass
class WLResult:
    colors: list[str]
    histogram: Counter
    history: list[Counter] = field(default_factory=list)


def _color_hash(own: str, neigh: list[str]) -> str:
    payload = own + "|" + ",".join(sorted(neigh))
    return hashlib.blake2b(payload.encode(), digest_size=8).hexdigest()


def wl1_refinement(g: Graph, init_colors=None, iters: int = 1) -> WLResult:
    """Colour refinement with content-based hashes, comparable across graphs.

    ``history[t]`` is the colour histogram after t rounds (``history[0]`` is
    the initial colouring).
    """
    if iters < 1:
        raise InputError("iters must be >= 1")
    colors = ["0"] * g.n if init_colors is None else [str(c) for c in init_colors]
    history = [Counter(colors)]
    nbrs = [g.neighbors(i) for i in range(g.n)]
    for _ in range(iters):
        colors = [_color_hash(colors[i], [colors[j] for j in nbrs[i]]) for i in range(g.n)]
        history.append(Counter(colors))
    return WLResult(colors, history[-1], history)


def is_isomorphic(g1: Graph, g2: Graph) -> bool:
    """Exact isomorphism test by backtracking, pruned by degree and adjacency."""
    if g1.n != g2.n or g1.num_edges != g2.num_edges:
        return False
    a1 = g1.adjacency.to_dense() > 0
    a2 = g2.adjacency.to_dense() > 0
    d1, d2 = a1.sum(1), a2.sum(1)
    if sorted(d1) != sorted(d2):
        return False
    n = g1.n
    order = list(np.argsort(-d1, kind="stable"))
    mapping = [-1] * n
    used = [False] * n

    def extend(k: int) -> bool:
        if k == n:
            return True
        u = order[k]
        for v in range(n):
            if used[v] or d2[v] != d1[u]:
                continue
            if any(a1[u, order[j]] != a2[v, mapping[order[j]]] for j in range(k)):
                continue
            mapping[u] = v
            used[v] = True
            if extend(k + 1):
                return True
            used[v] = False
            mapping[u] = -1
        return False

    return extend(0)


# Two connected 4-regular graphs on 10 vertices with equal adjacency (hence
# normalized-Laplacian) spectra that are not isomorphic. Equal degree makes
# them indistinguishable by colour refinement from uniform colours.
_CFI_EDGES_G = [(0, 2), (0, 3), (0, 7), (0, 9), (1, 2), (1, 6), (1, 7), (1, 8), (2, 5), (2, 7),
                (3, 6), (3, 7), (3, 9), (4, 5), (4, 6), (4, 8), (4, 9), (5, 6), (5, 8), (8, 9)]
_CFI_EDGES_H = [(0, 5), (0, 6), (0, 8), (0, 9), (1, 2), (1, 4), (1, 5), (1, 6), (2, 3), (2, 4),
                (2, 8), (3, 4), (3, 6), (3, 7), (4, 8), (5, 7), (5, 9), (6, 7), (7, 9), (8, 9)]


def laplacian_spectrum(g: Graph) -> np.ndarray:
    return np.linalg.eigvalsh(normalized_laplacian(g).L.to_dense())


def cfi_pair(features=None) -> tuple[Graph, Graph]:
    """Fixed 10-vertex pair: 1-WL-equivalent, co-spectral, non-isomorphic.

    All three properties are re-verified on every call.
    """
    x = np.eye(10) if features is None else features
    g = build_graph(_CFI_EDGES_G, 10, x)
    h = build_graph(_CFI_EDGES_H, 10, x)
    wl_g, wl_h = wl1_refinement(g, iters=10), wl1_refinement(h, iters=10)
    if wl_g.history != wl_h.history:
        raise RuntimeError("CFI pair self-check failed: 1-WL histograms differ")
    if np.max(np.abs(laplacian_spectrum(g) - laplacian_spectrum(h))) > 1e-9:
        raise RuntimeError("CFI pair self-check failed: spectra differ")
    if is_isomorphic(g, h):
        raise RuntimeError("CFI pair self-check failed: graphs are isomorphic")
    return g, h


def flip_edges(g: Graph, flips: Iterable[Sequence[int]]) -> Graph:
    """Toggle each listed node pair; a pair listed twice cancels out."""
    f = np.asarray(list(flips) if not isinstance(flips, np.ndarray) else flips,
                   dtype=np.int64).reshape(-1, 2)
    if np.any(f[:, 0] == f[:, 1]):
        raise InputError("cannot flip a self-loop pair")
    if f.size and (f.min() < 0 or f.max() >= g.n):
        raise InputError("flip pair out of range")
    n = g.n
    keys = np.minimum(f[:, 0], f[:, 1]) * n + np.maximum(f[:, 0], f[:, 1])
    uniq, counts = np.unique(keys, return_counts=True)
    toggled = uniq[counts % 2 == 1]
    e = g.edges()
    current = e[:, 0] * n + e[:, 1]
    new = np.setxor1d(current, toggled)
    return g.with_edges(np.stack([new // n, new % n], axis=1))


def drop_edges(g: Graph, rate: float, rng: np.random.Generator) -> Graph:
    """Remove each edge independently with probability ``rate``."""
    e = g.edges()
    keep = rng.random(len(e)) >= rate
    return g.with_edges(e[keep])


def permute(g: Graph, perm: np.ndarray) -> Graph:
    """Relabel node ``i`` as ``perm[i]``, carrying features, labels and masks."""
    perm = np.asarray(perm)
    inv = np.argsort(perm)
    e = g.edges()
    return Graph(
        g.n,
        _adjacency(perm[e] if e.size else e, g.n),
        g.features[inv], g.labels[inv],
        g.train_mask[inv], g.val_mask[inv], g.test_mask[inv],
    )


def sample_non_edges(g: Graph, k: int, rng: np.random.Generator) -> np.ndarray:
    """Up to ``k`` distinct absent pairs (i < j), uniformly at random, sorted."""
    n = g.n
    total = n * (n - 1) // 2
    e = g.edges()
    present = set((e[:, 0] * n + e[:, 1]).tolist())
    available = total - len(present)
    k = min(k, available)
    if k <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    if k > available // 2:
        iu, ju = np.triu_indices(n, 1)
        keys = iu * n + ju
        keys = keys[~np.isin(keys, e[:, 0] * n + e[:, 1])]
        chosen = np.sort(rng.choice(keys, size=k, replace=False))
    else:
        found: set[int] = set()
        while len(found) < k:
            i = rng.integers(0, n, size=2 * (k - len(found)) + 8)
            j = rng.integers(0, n, size=i.size)
            lo, hi = np.minimum(i, j), np.maximum(i, j)
            for key in (lo * n + hi)[lo != hi].tolist():
                if key not in present and key not in found:
                    found.add(key)
                    if len(found) == k:
                        break
        chosen = np.array(sorted(found), dtype=np.int64)
    return np.stack([chosen // n, chosen % n], axis=1)

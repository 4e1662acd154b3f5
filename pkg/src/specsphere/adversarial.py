"""Threat model and the inner maximisations: edge flips, feature PGD, joint.

Every attack maximises a cross-entropy objective against one of three score
functions: the spectral branch through its auxiliary head (``"spec"``), the
spatial branch through its head (``"spat"``) or the model's own logits
(``"model"``, the fused classifier for a fused model). Attacks never return a
perturbation whose loss is below the clean loss.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .errors import InputError
from .fusion import cross_entropy, linear
from .graph import Graph, flip_edges, sample_non_edges
from .model import ModelParams, forward
from .spatial import spatial_forward
from .spectral import spectral_forward
from .topology import Topology, relaxed_topology, topology

TARGETS = ("spec", "spat", "model")


@dataclass(frozen=True)
class ThreatBudget:
    p: int = 0
    eps: float = 0.0

    def __post_init__(self):
        if self.p < 0 or int(self.p) != self.p:
            raise InputError("p must be a non-negative integer")
        if not (math.isfinite(self.eps) and self.eps >= 0):
            raise InputError("eps must be finite and non-negative")

    def check(self, n: int) -> None:
        if self.p > n * (n - 1) // 2:
            raise InputError(f"p={self.p} exceeds the {n * (n - 1) // 2} node pairs")


@dataclass
class AttackConfig:
    steps_A: int = 1
    steps_X: int = 10
    # unused by the top-p projection; kept so configs round-trip
    alpha_A: float = 0.01
    alpha_X: float = 0.01
    joint_period: int = 10
    candidate_factor: int = 10
    # per-round budget 1: re-score this many first-order leaders exactly
    shortlist: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.steps_A < 1 or self.steps_X < 1 or self.joint_period < 1:
            raise ValueError("attack steps and joint_period must be >= 1")


def target_logits(params: ModelParams, topo: Topology, x, target: str,
                  signals: np.ndarray | None = None) -> Value:
    cfg = params.config
    if target == "spec":
        if cfg.mode == "spatial":
            raise InputError("a spatial-only model has no spectral branch")
        z = spectral_forward(topo, ad.lift(x), cfg.spectral, params).z
        return linear(z, params["head_spec.W"], params["head_spec.b"])
    if target == "spat":
        if cfg.mode == "spectral":
            raise InputError("a spectral-only model has no spatial branch")
        z = spatial_forward(topo, ad.lift(x), cfg.spatial, params).z
        return linear(z, params["head_spat.W"], params["head_spat.b"])
    if target == "model":
        return forward(params, topo, x, signals).logits
    raise InputError(f"unknown attack target {target!r}")


@dataclass
class Objective:
    """Cross-entropy of ``target`` logits on the masked nodes."""
    params: ModelParams
    labels: np.ndarray
    mask: np.ndarray
    target: str = "model"
    signals: np.ndarray | None = None

    def __call__(self, topo: Topology, x) -> Value:
        logits = target_logits(self.params, topo, x, self.target, self.signals)
        return cross_entropy(logits, self.labels, self.mask)

    def value(self, g: Graph, x: np.ndarray) -> float:
        return self(topology(g), Value(x)).item()


def _objective(params, g, target, labels, mask, signals) -> Objective:
    labels = g.labels if labels is None else np.asarray(labels)
    mask = g.train_mask if mask is None else np.asarray(mask, dtype=bool)
    return Objective(params, labels, mask, target, signals)


# ---------------------------------------------------------------- edges

def candidate_pairs(g: Graph, rng: np.random.Generator, factor: int = 10) -> np.ndarray:
    """Existing edges plus a seeded sample of absent pairs, lexicographically sorted."""
    e = g.edges()
    k = max(factor * len(e), g.n)
    pairs = np.concatenate([e, sample_non_edges(g, k, rng)]).reshape(-1, 2)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def pair_presence(g: Graph, pairs: np.ndarray) -> np.ndarray:
    e = g.edges()
    return np.isin(pairs[:, 0] * g.n + pairs[:, 1], e[:, 0] * g.n + e[:, 1])


def flip_scores(grad: np.ndarray, present: np.ndarray) -> np.ndarray:
    """First-order loss increase of toggling each pair."""
    return np.where(present, -grad, grad)


def top_p_pairs(pairs: np.ndarray, scores: np.ndarray, p: int) -> np.ndarray:
    """The p highest-scoring pairs; ties go to the lexicographically lowest pair."""
    if p <= 0 or len(pairs) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    order = np.lexsort((pairs[:, 1], pairs[:, 0], -scores))
    return pairs[order[:p]]


def edge_gradient(obj: Objective, g: Graph, x: np.ndarray, pairs: np.ndarray):
    """(loss, d loss / d pair weight) at the current adjacency."""
    present = pair_presence(g, pairs)
    topo = relaxed_topology(g, pairs, present.astype(np.float64))
    loss = obj(topo, Value(x))
    ad.backward(loss)
    return loss.item(), topo.pair_weight.grad[:, 0].copy(), present


def greedy_edge_flips(obj: Objective, g: Graph, x: np.ndarray, p: int,
                      cfg: AttackConfig, pairs: np.ndarray | None = None) -> Graph:
    if p == 0:
        return g
    if pairs is None:
        pairs = candidate_pairs(g, np.random.default_rng(cfg.seed), cfg.candidate_factor)
    used = np.zeros(len(pairs), dtype=bool)
    current, best = g, obj.value(g, x)
    remaining = p
    for r in range(cfg.steps_A):
        if remaining == 0 or used.all():
            break
        budget = math.ceil(remaining / (cfg.steps_A - r))
        _, grad, present = edge_gradient(obj, current, x, pairs)
        scores = flip_scores(grad, present)
        scores[used] = -np.inf
        if budget == 1:
            lead = top_p_pairs(pairs[~used], scores[~used], cfg.shortlist)
            trials = [(obj.value(flip_edges(current, [q]), x), i) for i, q in enumerate(lead)]
            loss, i = max(trials, key=lambda t: (t[0], -t[1]))
            chosen = lead[i:i + 1]
        else:
            chosen = top_p_pairs(pairs[~used], scores[~used], budget)
            loss = obj.value(flip_edges(current, chosen), x)
        if loss < best:
            break  # round rejected: it would lower the attacked loss
        current, best = flip_edges(current, chosen), loss
        keys = chosen[:, 0] * g.n + chosen[:, 1]
        used |= np.isin(pairs[:, 0] * g.n + pairs[:, 1], keys)
        remaining -= len(chosen)
    return current


def pgd_edge_attack(params: ModelParams, g: Graph, budget: ThreatBudget, cfg: AttackConfig,
                    *, target: str = "spec", labels=None, mask=None, signals=None,
                    x: np.ndarray | None = None) -> Graph:
    """At most ``budget.p`` edge flips chosen by first-order score."""
    budget.check(g.n)
    x = g.features if x is None else x
    obj = _objective(params, g, target, labels, mask, signals)
    return greedy_edge_flips(obj, g, x, budget.p, cfg)


# ---------------------------------------------------------------- features

def sign_pgd(obj: Objective, topo: Topology, x0: np.ndarray, eps: float, alpha: float,
             steps: int, start: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Best iterate of clipped sign ascent inside the box around ``x0``."""
    xc = (x0 if start is None else start).copy()
    best_x, best = xc.copy(), -np.inf
    for _ in range(steps):
        xv = Value(xc, requires_grad=True)
        loss = obj(topo, xv)
        ad.backward(loss)
        if loss.item() > best:
            best_x, best = xc.copy(), loss.item()
        xc = np.clip(xc + alpha * np.sign(xv.grad), x0 - eps, x0 + eps)
    final = obj(topo, Value(xc)).item()
    if final >= best:
        best_x, best = xc, final
    return best_x, best


def pgd_feature_attack(params: ModelParams, g: Graph, budget: ThreatBudget, cfg: AttackConfig,
                       *, target: str = "spat", labels=None, mask=None, signals=None,
                       x: np.ndarray | None = None) -> np.ndarray:
    """Feature perturbation with ``|X' - X|_inf <= eps`` from sign-gradient PGD."""
    x = g.features if x is None else np.asarray(x, dtype=np.float64)
    if budget.eps == 0:
        return x.copy()
    obj = _objective(params, g, target, labels, mask, signals)
    x_adv, _ = sign_pgd(obj, topology(g), x, budget.eps, cfg.alpha_X, cfg.steps_X)
    return x_adv


# ---------------------------------------------------------------- joint

def joint_attack(params: ModelParams, g: Graph, budget: ThreatBudget, cfg: AttackConfig,
                 *, target: str = "model", labels=None, mask=None, signals=None,
                 x: np.ndarray | None = None) -> tuple[Graph, np.ndarray]:
    """Edge selection and feature PGD against one objective, better of both orders."""
    budget.check(g.n)
    x = g.features if x is None else np.asarray(x, dtype=np.float64)
    obj = _objective(params, g, target, labels, mask, signals)
    pairs = candidate_pairs(g, np.random.default_rng(cfg.seed), cfg.candidate_factor)

    def features(graph, start):
        if budget.eps == 0:
            return start, obj.value(graph, start)
        return sign_pgd(obj, topology(graph), x, budget.eps, cfg.alpha_X, cfg.steps_X, start)

    # edges first, then features on the attacked graph
    g1 = greedy_edge_flips(obj, g, x, budget.p, cfg, pairs)
    x1, l1 = features(g1, x)
    # features first, then edges on the attacked features
    x2, _ = features(g, x)
    g2 = greedy_edge_flips(obj, g, x2, budget.p, cfg, pairs)
    l2 = obj.value(g2, x2)
    return (g1, x1) if l1 >= l2 else (g2, x2)


def flip_count(g: Graph, g_adv: Graph) -> int:
    a, b = g.edges(), g_adv.edges()
    n = g.n
    return int(np.setxor1d(a[:, 0] * n + a[:, 1], b[:, 0] * n + b[:, 1]).size)

"""Attention-based spatial branch (GAT-style, optional FAGCN-style layers)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .errors import ShapeError
from .sparse import SparseMatrix, SparseValue
from .spectral import ACTIVATIONS, BranchResult, laplacian_energy


@dataclass
class SpatialConfig:
    layers: int = 2
    hidden: int = 32
    heads: int = 8
    variant: str = "gat"
    leaky_slope: float = 0.2
    activation: str = "relu"
    activate_last: bool = False
    # "concat": heads of width hidden // heads side by side; "mean": average full-width heads
    head_merge: str = "concat"

    def __post_init__(self):
        if self.heads < 1 or self.layers < 1:
            raise ValueError("need heads >= 1 and layers >= 1")
        if self.variant not in ("gat", "fagcn"):
            raise ValueError(f"unknown spatial variant {self.variant!r}")
        if self.head_merge not in ("concat", "mean"):
            raise ValueError(f"unknown head_merge {self.head_merge!r}")
        if self.head_merge == "concat" and self.hidden % self.n_heads:
            raise ValueError("hidden must be divisible by heads when concatenating")

    @property
    def n_heads(self) -> int:
        # FAGCN layers use a single attention map
        return self.heads if self.variant == "gat" else 1

    @property
    def head_width(self) -> int:
        return self.hidden // self.n_heads if self.head_merge == "concat" else self.hidden


def attention_adjacency(topo, hw: Value, a_src: Value, a_dst: Value,
                        slope: float = 0.2) -> SparseValue:
    """Row-stochastic attention over each node's neighbourhood plus self-loop.

    Scores are LeakyReLU(a_dst . Wh_i + a_src . Wh_j), softmax-normalised over
    j for every target node i, one map per head.
    """
    heads = a_src.shape[0]
    rows, cols, n = topo.att_rows, topo.att_cols, topo.n
    s_dst = ad.head_scores(hw, a_dst)
    s_src = ad.head_scores(hw, a_src)
    e = ad.leaky_relu(ad.gather_rows(s_dst, rows) + ad.gather_rows(s_src, cols), slope)
    shift = np.full((n, heads), -np.inf)
    np.maximum.at(shift, rows, e.data)
    ex = ad.exp(e - Value(shift[rows]))
    if topo.att_weight is not None:
        ex = ex * topo.att_weight
    denom = ad.segment_sum(ex, rows, n)
    alpha = ex / ad.gather_rows(denom, rows)
    return SparseValue(rows, cols, (n, n), alpha, heads=heads)


def _head_mean(heads: int, d: int) -> Value:
    return Value(np.tile(np.eye(d), (heads, 1)) / heads)


def gat_layer(topo, h: Value, w: Value, a_src: Value, a_dst: Value,
              slope: float, merge: str = "concat") -> tuple[Value, SparseValue]:
    heads, d = a_src.shape
    if w.shape[0] != h.shape[1] or w.shape[1] != heads * d:
        raise ShapeError(f"W is {w.shape}, input width {h.shape[1]}, heads x d = {heads}x{d}")
    hw = h @ w
    att = attention_adjacency(topo, hw, a_src, a_dst, slope)
    out = ad.spmm(att, hw)
    if heads > 1 and merge == "mean":
        out = out @ _head_mean(heads, d)
    return out, att


def fagcn_layer(topo, h: Value, w_lp: Value, w_hp: Value, w_g: Value, a_src: Value,
                a_dst: Value, slope: float, gate_override: float | None = None):
    """Low/high-pass split with a per-channel tanh gate.

    The concatenated [F_LP | F_HP] is projected back to width d by ``w_g``
    before the tanh so the gate matches F_LP's shape.
    """
    if w_lp.shape[0] != h.shape[1]:
        raise ShapeError(f"W_LP expects width {w_lp.shape[0]}, got {h.shape[1]}")
    hw_lp = h @ w_lp
    att = attention_adjacency(topo, hw_lp, a_src, a_dst, slope)
    f_lp = ad.spmm(att, hw_lp)
    hw_hp = h @ w_hp
    f_hp = hw_hp - ad.spmm(att, hw_hp)
    if gate_override is None:
        g = ad.tanh(ad.concat_cols([f_lp, f_hp]) @ w_g)
    else:
        g = Value(np.full(f_lp.shape, float(gate_override)))
    return g * f_lp + (1.0 - g) * f_hp, att


def spatial_forward(topo, x: Value, cfg: SpatialConfig, params,
                    gate_override: float | None = None) -> BranchResult:
    act = ACTIVATIONS[cfg.activation]
    hidden, atts = [], []
    h = x
    for layer in range(cfg.layers):
        p = f"spat.{layer}."
        if cfg.variant == "gat":
            h, att = gat_layer(topo, h, params[p + "W"], params[p + "a_src"],
                               params[p + "a_dst"], cfg.leaky_slope, cfg.head_merge)
        else:
            h, att = fagcn_layer(topo, h, params[p + "W_lp"], params[p + "W_hp"],
                                 params[p + "W_g"], params[p + "a_src"], params[p + "a_dst"],
                                 cfg.leaky_slope, gate_override)
        if layer < cfg.layers - 1 or cfg.activate_last:
            h = act(h)
        hidden.append(h)
        atts.append(att)
    return BranchResult(hidden, h, atts)


def fagcn_forward(topo, x: Value, cfg: SpatialConfig, params,
                  gate_override: float | None = None) -> BranchResult:
    if cfg.variant != "fagcn":
        raise ValueError("fagcn_forward requires variant='fagcn'")
    return spatial_forward(topo, x, cfg, params, gate_override)


def hp_regularizer(hidden: list[Value], lap: SparseMatrix) -> Value:
    """Positive high-frequency energy; the objective subtracts it."""
    if not hidden:
        raise ValueError("hidden must be non-empty")
    total = laplacian_energy(hidden[0], lap)
    for h in hidden[1:]:
        total = total + laplacian_energy(h, lap)
    return total

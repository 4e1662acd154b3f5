"""Robustness signals, the node-channel gate, fusion and cross-entropy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .errors import ContractError, ShapeError
from .graph import Graph, sample_non_edges
from .spatial import spatial_forward
from .spectral import spectral_forward
from .topology import Topology, relaxed_topology, topology


@dataclass
class RobustnessSignals:
    rA_spec: np.ndarray
    rX_spec: np.ndarray
    rA_spat: np.ndarray
    rX_spat: np.ndarray

    def raw(self) -> np.ndarray:
        return np.stack([self.rA_spec, self.rX_spec, self.rA_spat, self.rX_spat], axis=1)

    def matrix(self) -> np.ndarray:
        """(n, 4) gate input; each column divided by its mean over nodes."""
        r = self.raw()
        return r / (r.mean(axis=0, keepdims=True) + 1e-12)


def linear(z: Value, w: Value, b: Value | None = None) -> Value:
    out = z @ w
    return out + b if b is not None else out


def cross_entropy(logits: Value, labels, mask) -> Value:
    """Mean negative log-likelihood of softmax(logits) over the masked nodes."""
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if idx.size == 0:
        raise ContractError("cross-entropy needs at least one masked node")
    y = np.asarray(labels)[idx]
    if np.any(y < 0):
        raise ContractError("masked nodes must be labeled")
    logp = ad.log_softmax_rows(ad.gather_rows(logits, idx))
    onehot = np.zeros(logp.shape)
    onehot[np.arange(idx.size), y] = 1.0
    return ad.sum(logp * Value(onehot)) * (-1.0 / idx.size)


def ce_loss(z: Value, w_cls: Value, labels, mask, bias: Value | None = None) -> Value:
    return cross_entropy(linear(z, w_cls, bias), labels, mask)


def _mlp(h: Value, params, prefix: str, n_layers: int) -> Value:
    for layer in range(n_layers):
        h = linear(h, params[f"{prefix}.{layer}.W"], params[f"{prefix}.{layer}.b"])
        if layer < n_layers - 1:
            h = ad.relu(h)
    return h


def gate(z_spec: Value, z_spat: Value, signals: np.ndarray, params) -> Value:
    """alpha = sigmoid(MLP([Z_spec | Z_spat | r])) with r broadcast per node."""
    if z_spec.shape != z_spat.shape:
        raise ShapeError(f"branch embeddings differ: {z_spec.shape} vs {z_spat.shape}")
    sig = np.asarray(signals, dtype=np.float64)
    if sig.shape != (z_spec.shape[0], 4):
        raise ShapeError(f"signals must be (n, 4), got {sig.shape}")
    inp = ad.concat_cols([z_spec, z_spat, Value(sig)])
    return ad.sigmoid(_mlp(inp, params, "gate", params.config.gate_layers + 1))


def mask_weights(signals: np.ndarray, params) -> Value:
    """Consistency weights b_u in (0, 1), shape (n, 1)."""
    return ad.sigmoid(_mlp(Value(signals), params, "mask", 2))


def fuse(alpha: Value, z_spec: Value, z_spat: Value) -> Value:
    return alpha * z_spec + (1.0 - alpha) * z_spat


def _row_l1(g: np.ndarray) -> np.ndarray:
    return np.abs(g).sum(axis=1)


def robustness_signals(params, g: Graph, labels=None, mask=None, x=None,
                       topo: Topology | None = None, seed: int = 0,
                       max_pairs: int = 50_000) -> RobustnessSignals:
    """Per-node L1 norms of branch-only CE gradients w.r.t. adjacency and features.

    Each branch is differentiated alone through its auxiliary head. For the
    spectral branch the adjacency gradient covers existing edges plus every
    absent pair, or an equal-sized seeded sample of absent pairs once there are
    more than ``max_pairs`` of them (exhaustive keeps the signals permutation
    equivariant); for the spatial branch it is the gradient w.r.t. the
    attention entries of every layer and head.
    """
    cfg = params.config
    labels = g.labels if labels is None else np.asarray(labels)
    mask = g.train_mask if mask is None else np.asarray(mask, dtype=bool)
    if not np.any(mask):
        raise ContractError("robustness signals need at least one labeled training node")
    x = g.features if x is None else np.asarray(x, dtype=np.float64)
    n = g.n

    edges = g.edges()
    absent = n * (n - 1) // 2 - len(edges)
    k = absent if absent <= max_pairs else len(edges)
    non_edges = sample_non_edges(g, k, np.random.default_rng(seed))
    pairs = np.concatenate([edges, non_edges]).reshape(-1, 2)
    weights = np.concatenate([np.ones(len(edges)), np.zeros(len(non_edges))])
    relaxed = relaxed_topology(g, pairs, weights)
    xv = Value(x, requires_grad=True)
    spec = spectral_forward(relaxed, xv, cfg.spectral, params)
    loss = ce_loss(spec.z, params["head_spec.W"], labels, mask, params["head_spec.b"])
    ad.backward(loss)
    rx_spec = _row_l1(xv.grad)
    gp = np.abs(relaxed.pair_weight.grad[:, 0])
    ra_spec = (np.bincount(pairs[:, 0], gp, minlength=n)
               + np.bincount(pairs[:, 1], gp, minlength=n)) if len(pairs) else np.zeros(n)

    topo = topology(g) if topo is None else topo
    xv = Value(x, requires_grad=True)
    spat = spatial_forward(topo, xv, cfg.spatial, params)
    loss = ce_loss(spat.z, params["head_spat.W"], labels, mask, params["head_spat.b"])
    ad.backward(loss)
    rx_spat = _row_l1(xv.grad)
    ra_spat = np.zeros(n)
    for att in spat.attention:
        ra_spat += np.bincount(att.rows, _row_l1(att.vals.grad), minlength=n)
    return RobustnessSignals(ra_spec, rx_spec, ra_spat, rx_spat)

"""Chebyshev-filtered spectral branch and its low-pass regularizer."""
from __future__ import annotations

from dataclasses import dataclass, field

from . import autodiff as ad
from .autodiff import Value
from .errors import ShapeError
from .sparse import SparseMatrix, SparseValue

ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh, "identity": lambda v: v}


@dataclass
class SpectralConfig:
    K: int = 2
    layers: int = 2
    hidden: int = 32
    activation: str = "relu"
    # the last layer is linear unless this is set
    activate_last: bool = False

    def __post_init__(self):
        if self.K < 0 or self.layers < 1:
            raise ValueError("need K >= 0 and layers >= 1")


@dataclass
class BranchResult:
    hidden: list[Value]
    z: Value
    attention: list[SparseValue] = field(default_factory=list)


def cheb_apply(ltilde: SparseMatrix | SparseValue, h: Value, K: int) -> list[Value]:
    """[T_0(L~)H, ..., T_K(L~)H] by the three-term recurrence."""
    if ltilde.shape[1] != h.shape[0]:
        raise ShapeError(f"L~ is {ltilde.shape}, H has {h.shape[0]} rows")
    terms = [h]
    if K >= 1:
        terms.append(ad.spmm(ltilde, h))
    for _ in range(2, K + 1):
        terms.append(2.0 * ad.spmm(ltilde, terms[-1]) - terms[-2])
    return terms


def theta_name(layer: int, k: int) -> str:
    return f"spec.{layer}.theta{k}"


def spectral_layer(ltilde, h: Value, thetas: list[Value]) -> Value:
    terms = cheb_apply(ltilde, h, len(thetas) - 1)
    out = terms[0] @ thetas[0]
    for t, theta in zip(terms[1:], thetas[1:]):
        out = out + t @ theta
    return out


def spectral_forward(topo, x: Value, cfg: SpectralConfig, params) -> BranchResult:
    act = ACTIVATIONS[cfg.activation]
    hidden = []
    h = x
    for layer in range(cfg.layers):
        thetas = [params[theta_name(layer, k)] for k in range(cfg.K + 1)]
        if thetas[0].shape[0] != h.shape[1]:
            raise ShapeError(f"layer {layer} expects width {thetas[0].shape[0]}, got {h.shape[1]}")
        h = spectral_layer(topo.ltilde, h, thetas)
        if layer < cfg.layers - 1 or cfg.activate_last:
            h = act(h)
        hidden.append(h)
    return BranchResult(hidden, h)


def laplacian_energy(h: Value, lap: SparseMatrix) -> Value:
    """trace(H^T L H) as a differentiable scalar."""
    return ad.sum(h * ad.spmm(lap, h))


def lp_regularizer(hidden: list[Value], lap: SparseMatrix) -> Value:
    if not hidden:
        raise ValueError("hidden must be non-empty")
    total = laplacian_energy(hidden[0], lap)
    for h in hidden[1:]:
        total = total + laplacian_energy(h, lap)
    return total

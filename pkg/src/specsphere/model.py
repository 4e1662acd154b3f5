"""Model configuration, parameter container and the full dual-branch forward."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .errors import ContractError, ShapeError
from .fusion import fuse, gate, linear
from .spatial import SpatialConfig, spatial_forward
from .spectral import BranchResult, SpectralConfig, spectral_forward, theta_name

MODES = ("fused", "spectral", "spatial")


@dataclass
class ModelConfig:
    in_dim: int
    n_classes: int
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    spatial: SpatialConfig = field(default_factory=SpatialConfig)
    gate_hidden: int = 32
    gate_layers: int = 2
    mask_hidden: int = 32
    mode: str = "fused"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode == "fused" and self.spectral.hidden != self.spatial.hidden:
            raise ValueError("fusion needs equal branch output widths")

    @property
    def width(self) -> int:
        return self.spectral.hidden if self.mode != "spatial" else self.spatial.hidden

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["spectral"] = SpectralConfig(**d.get("spectral", {}))
        d["spatial"] = SpatialConfig(**d.get("spatial", {}))
        return cls(**d)


class ModelParams:
    """Ordered mapping of parameter name to trainable :class:`Value`."""

    def __init__(self, config: ModelConfig, values: dict[str, Value]):
        self.config = config
        self.values = values

    def __getitem__(self, name: str) -> Value:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def items(self):
        return self.values.items()

    def shapes(self) -> dict[str, tuple[int, int]]:
        return {k: v.shape for k, v in self.values.items()}

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.values.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.values):
            raise ShapeError("parameter names differ from this architecture")
        for k, v in self.values.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != v.shape:
                raise ShapeError(f"{k}: expected {v.shape}, got {a.shape}")
            v.data = a.copy()

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: Value(v.data.copy(), requires_grad=True)
                                         for k, v in self.values.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v.data)) for v in self.values.values())


def _glorot(rng, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out))


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}
    d = config.width
    uses_spec = config.mode in ("fused", "spectral")
    uses_spat = config.mode in ("fused", "spatial")

    if uses_spec:
        sc = config.spectral
        widths = [config.in_dim] + [sc.hidden] * sc.layers
        for layer in range(sc.layers):
            for k in range(sc.K + 1):
                p[theta_name(layer, k)] = _glorot(rng, widths[layer], widths[layer + 1])
        p["head_spec.W"] = _glorot(rng, d, config.n_classes)
        p["head_spec.b"] = np.zeros((1, config.n_classes))
    if uses_spat:
        pc = config.spatial
        widths = [config.in_dim] + [pc.hidden] * pc.layers
        heads = pc.n_heads
        for layer in range(pc.layers):
            a, b = widths[layer], widths[layer + 1]
            pre = f"spat.{layer}."
            if pc.variant == "gat":
                hw = pc.head_width
                p[pre + "W"] = _glorot(rng, a, hw, (a, heads * hw))
                p[pre + "a_src"] = _glorot(rng, hw, 1, (heads, hw))
                p[pre + "a_dst"] = _glorot(rng, hw, 1, (heads, hw))
            else:
                p[pre + "W_lp"] = _glorot(rng, a, b)
                p[pre + "W_hp"] = _glorot(rng, a, b)
                p[pre + "W_g"] = _glorot(rng, 2 * b, b)
                p[pre + "a_src"] = _glorot(rng, b, 1, (heads, b))
                p[pre + "a_dst"] = _glorot(rng, b, 1, (heads, b))
        p["head_spat.W"] = _glorot(rng, d, config.n_classes)
        p["head_spat.b"] = np.zeros((1, config.n_classes))
    if config.mode == "fused":
        widths = [2 * d + 4] + [config.gate_hidden] * config.gate_layers + [d]
        for layer in range(len(widths) - 1):
            p[f"gate.{layer}.W"] = _glorot(rng, widths[layer], widths[layer + 1])
            p[f"gate.{layer}.b"] = np.zeros((1, widths[layer + 1]))
        p["mask.0.W"] = _glorot(rng, 4, config.mask_hidden)
        p["mask.0.b"] = np.zeros((1, config.mask_hidden))
        p["mask.1.W"] = _glorot(rng, config.mask_hidden, 1)
        p["mask.1.b"] = np.zeros((1, 1))
        p["cls.W"] = _glorot(rng, d, config.n_classes)
        p["cls.b"] = np.zeros((1, config.n_classes))
    return ModelParams(config, {k: Value(v, requires_grad=True) for k, v in p.items()})


def spatial_weight_blocks(params: ModelParams) -> list[tuple[str, slice]]:
    """(parameter name, column slice) of every per-head spatial weight matrix."""
    pc = params.config.spatial
    blocks = []
    for layer in range(pc.layers):
        pre = f"spat.{layer}."
        if pc.variant == "gat":
            if pre + "W" not in params:
                continue
            d = params[pre + "a_src"].shape[1]
            blocks += [(pre + "W", slice(h * d, (h + 1) * d)) for h in range(pc.n_heads)]
        elif pre + "W_lp" in params:
            blocks += [(pre + "W_lp", slice(None)), (pre + "W_hp", slice(None))]
    return blocks


@dataclass
class BranchOutputs:
    z: Value
    logits: Value
    spec: BranchResult | None = None
    spat: BranchResult | None = None
    alpha: Value | None = None
    logits_spec: Value | None = None
    logits_spat: Value | None = None

    @property
    def z_spec(self) -> Value | None:
        return self.spec.z if self.spec else None

    @property
    def z_spat(self) -> Value | None:
        return self.spat.z if self.spat else None


def forward(params: ModelParams, topo, x, signals: np.ndarray | None = None, *,
            train: bool = False, dropout: float = 0.0,
            rng: np.random.Generator | None = None) -> BranchOutputs:
    """Full forward pass; ``signals`` is the normalised (n, 4) gate context."""
    cfg = params.config
    x = ad.lift(x)

    def drop(v: Value) -> Value:
        if not train or dropout <= 0.0:
            return v
        keep = (rng.random(v.shape) >= dropout) / (1.0 - dropout)
        return v * Value(keep)

    spec = spat = None
    logits_spec = logits_spat = None
    if cfg.mode in ("fused", "spectral"):
        spec = spectral_forward(topo, drop(x), cfg.spectral, params)
        logits_spec = linear(spec.z, params["head_spec.W"], params["head_spec.b"])
    if cfg.mode in ("fused", "spatial"):
        spat = spatial_forward(topo, drop(x), cfg.spatial, params)
        logits_spat = linear(spat.z, params["head_spat.W"], params["head_spat.b"])

    if cfg.mode == "spectral":
        return BranchOutputs(spec.z, logits_spec, spec=spec, logits_spec=logits_spec)
    if cfg.mode == "spatial":
        return BranchOutputs(spat.z, logits_spat, spat=spat, logits_spat=logits_spat)
    if signals is None:
        raise ContractError("the fused model needs robustness signals for the gate")
    alpha = gate(spec.z, spat.z, signals, params)
    z = fuse(alpha, spec.z, spat.z)
    logits = linear(z, params["cls.W"], params["cls.b"])
    return BranchOutputs(z, logits, spec, spat, alpha, logits_spec, logits_spat)


def predict(params: ModelParams, topo, x, signals=None) -> np.ndarray:
    return forward(params, topo, x, signals).logits.data.argmax(axis=1)

"""Training objective, the per-epoch loop and evaluation."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .adversarial import (AttackConfig, ThreatBudget, joint_attack, pgd_edge_attack,
                          pgd_feature_attack, target_logits)
from .autodiff import Value
from .errors import ContractError, NumericalError
from .fusion import cross_entropy, linear, mask_weights, robustness_signals
from .graph import Graph, drop_edges
from .model import ModelConfig, ModelParams, forward, init_params, spatial_weight_blocks
from .spatial import hp_regularizer
from .spectral import lp_regularizer
from .topology import topology

METRIC_KEYS = ("epoch", "ce", "adv_A", "adv_X", "adv_joint", "r_lp", "r_hp",
               "cons", "comp", "total", "val_acc", "test_acc")


@dataclass
class LossWeights:
    lambda_adv: float = 0.0
    lambda_cons: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        for k, v in dataclasses.asdict(self).items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{k} must be finite and non-negative, got {v}")


@dataclass
class TrainConfig:
    epochs: int = 300
    patience: int = 100
    learning_rate: float = 1e-2
    weight_decay: float = 5e-4
    # heavy-ball momentum; 0 gives plain SGD
    momentum: float = 0.0
    # rescale the whole gradient to at most this global norm; None disables
    clip_norm: float | None = None
    dropout: float = 0.5
    seed: int = 0
    attack: AttackConfig = field(default_factory=AttackConfig)
    # None means the default p = floor(0.1 |E|), eps = 0.1
    budget: ThreatBudget | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    # rescale every spatial head weight to spectral norm <= 1 after each step
    project_spatial: bool = False
    # False returns the last iterate instead of the best-validation checkpoint
    restore_best: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.patience < 1:
            raise ValueError("epochs and patience must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def default_budget(g: Graph) -> ThreatBudget:
    return ThreatBudget(p=int(math.floor(0.1 * g.num_edges)), eps=0.1)


# ---------------------------------------------------------------- losses

def _masked_rows(v: Value, mask) -> Value:
    return ad.gather_rows(v, np.flatnonzero(np.asarray(mask, dtype=bool)))


def branch_gap(z_spec: Value, z_spat: Value) -> Value:
    """Per-node ||Z_spec,u - Z_spat,u||_2 as an (n, 1) value."""
    return ad.row_norm(z_spec - z_spat)


def consistency_loss(z_spec: Value, z_spat: Value, b: Value, unlabeled) -> Value:
    """Sum over unlabeled u of b_u ||Z_spec,u - Z_spat,u||^2."""
    diff = z_spec - z_spat
    sq = ad.sum(diff * diff, axis=1)
    return ad.sum(_masked_rows(b * sq, unlabeled))


def complementarity_loss(z_spec: Value, z_spat: Value, b: Value, gamma: float,
                         unlabeled) -> Value:
    """Sum over unlabeled u of (1 - b_u) max(0, gamma - Delta_u)^2."""
    if gamma < 0:
        raise ContractError("gamma must be non-negative")
    hinge = ad.relu(gamma - branch_gap(z_spec, z_spat))
    return ad.sum(_masked_rows((1.0 - b) * hinge * hinge, unlabeled))


def total_loss(c: dict, w: LossWeights) -> Value:
    """CE + l_adv (adv_A + adv_X + adv_joint) + l_cons (r_lp + r_hp + cons + comp).

    ``c["r_hp"]`` is already the signed (negated) high-pass energy.
    """
    def lift(v):
        return v if isinstance(v, Value) else Value(float(v))

    for k, v in c.items():
        if lift(v).shape != (1, 1):
            raise ContractError(f"loss component {k} is not scalar")
    adv = lift(c["adv_A"]) + lift(c["adv_X"]) + lift(c["adv_joint"])
    reg = lift(c["r_lp"]) + lift(c["r_hp"]) + lift(c["cons"]) + lift(c["comp"])
    return lift(c["ce"]) + w.lambda_adv * adv + w.lambda_cons * reg


# ---------------------------------------------------------------- optimiser

def sgd_step(params: ModelParams, lr: float, weight_decay: float, momentum: float = 0.0,
             velocity: dict | None = None) -> None:
    """theta <- theta - lr (grad + weight_decay theta); missing grads count as zero.

    With ``momentum`` > 0 the step uses v <- momentum v + (grad + wd theta),
    keeping ``velocity`` between calls.
    """
    for name, v in params.items():
        g = v.grad if v.grad is not None else 0.0
        step = g + weight_decay * v.data
        if momentum > 0:
            step = velocity[name] = momentum * velocity.get(name, 0.0) + step
        v.data = v.data - lr * step


def clip_gradients(params: ModelParams, max_norm: float) -> float:
    """Scale all gradients jointly so their global norm is at most ``max_norm``."""
    grads = [v.grad for v in params.values.values() if v.grad is not None]
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        for v in params.values.values():
            if v.grad is not None:
                v.grad = v.grad * (max_norm / norm)
    return norm


def project_spatial_weights(params: ModelParams) -> None:
    from .certify import spectral_norm
    for name, cols in spatial_weight_blocks(params):
        w = params[name].data
        s = spectral_norm(w[:, cols])
        if s > 1.0:
            w = w.copy()
            w[:, cols] /= s
            params[name].data = w


# ---------------------------------------------------------------- evaluation

@dataclass(frozen=True)
class Perturbation:
    kind: str  # "drop_edge", "pgd_feature" or "pgd_edge"
    amount: float
    seed: int = 0


def model_signals(params: ModelParams, g: Graph, x=None, seed: int = 0):
    if params.config.mode != "fused":
        return None
    return robustness_signals(params, g, x=x, seed=seed).matrix()


def accuracy(logits: np.ndarray, labels, mask) -> float:
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if idx.size == 0:
        raise ContractError("accuracy needs a non-empty mask")
    return float(np.mean(logits[idx].argmax(axis=1) == np.asarray(labels)[idx]))


def evaluate(params: ModelParams, g: Graph, mask=None, perturbation: Perturbation | None = None,
             attack: AttackConfig | None = None) -> float:
    """Accuracy of the model's logits on ``mask`` after an optional perturbation."""
    mask = g.test_mask if mask is None else np.asarray(mask, dtype=bool)
    x = g.features
    attack = attack or AttackConfig()
    if perturbation is not None:
        kind, amt = perturbation.kind, perturbation.amount
        if kind == "drop_edge":
            g = drop_edges(g, amt, np.random.default_rng(perturbation.seed))
        elif kind in ("pgd_feature", "pgd_edge"):
            sig = model_signals(params, g)
            if kind == "pgd_feature":
                x = pgd_feature_attack(params, g, ThreatBudget(0, float(amt)), attack,
                                       target="model", mask=mask, signals=sig)
            else:
                g = pgd_edge_attack(params, g, ThreatBudget(int(amt), 0.0), attack,
                                    target="model", mask=mask, signals=sig)
        else:
            raise ValueError(f"unknown perturbation {kind!r}")
    sig = model_signals(params, g, x=x)
    logits = forward(params, topology(g), x, sig).logits.data
    return accuracy(logits, g.labels, mask)


# ---------------------------------------------------------------- loop

@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict]
    best_epoch: int
    best_val: float


def _branch_target(mode: str, preferred: str) -> str:
    if mode == "fused":
        return preferred
    return "spec" if mode == "spectral" else "spat"


def train(g: Graph, model_cfg: ModelConfig, cfg: TrainConfig,
          params: ModelParams | None = None) -> TrainResult:
    if not np.any(g.train_mask):
        raise ContractError("training needs a non-empty train mask")
    params = init_params(model_cfg, cfg.seed) if params is None else params
    mode = model_cfg.mode
    budget = cfg.budget if cfg.budget is not None else default_budget(g)
    w = cfg.weights
    rng = np.random.default_rng(cfg.seed)
    topo = topology(g)
    lap = topo.lap
    x, y = g.features, g.labels
    unlabeled = ~g.train_mask
    has_val = bool(np.any(g.val_mask))
    has_test = bool(np.any(g.test_mask))

    def score(sig):
        logits = forward(params, topo, x, sig).logits.data
        val = accuracy(logits, y, g.val_mask) if has_val else accuracy(logits, y, g.train_mask)
        test = accuracy(logits, y, g.test_mask) if has_test else float("nan")
        return val, test

    sig0 = model_signals(params, g, seed=cfg.seed)
    best_val, _ = score(sig0)
    best_arrays, best_epoch = params.arrays(), 0
    log: list[dict] = []
    velocity: dict = {}

    for epoch in range(1, cfg.epochs + 1):
        attack = dataclasses.replace(cfg.attack, seed=cfg.attack.seed * 100003 + epoch)
        # robustness signals of the clean graph, constants for this epoch
        signals = model_signals(params, g, seed=attack.seed)

        # (1) branch-specific adversarial examples
        attacking = w.lambda_adv > 0
        joint_epoch = attacking and epoch % attack.joint_period == 0
        if attacking:
            g_a = pgd_edge_attack(params, g, ThreatBudget(budget.p, 0.0), attack,
                                  target=_branch_target(mode, "spec"))
            x_x = pgd_feature_attack(params, g, ThreatBudget(0, budget.eps), attack,
                                     target=_branch_target(mode, "spat"))
        if joint_epoch:
            g_j, x_j = joint_attack(params, g, budget, attack, target="model", signals=signals)

        # (2)-(4) clean forwards, gate and fusion
        out = forward(params, topo, x, signals, train=True, dropout=cfg.dropout, rng=rng)
        c: dict = {"ce": cross_entropy(out.logits, y, g.train_mask)}

        # (5) consistency / complementarity on unlabeled nodes
        if mode == "fused" and np.any(unlabeled):
            b = mask_weights(signals, params)
            c["cons"] = consistency_loss(out.z_spec, out.z_spat, b, unlabeled)
            c["comp"] = complementarity_loss(out.z_spec, out.z_spat, b, w.gamma, unlabeled)
        else:
            c["cons"] = c["comp"] = 0.0

        # (6) regularisers and adversarial losses
        c["r_lp"] = lp_regularizer(out.spec.hidden, lap) if out.spec else 0.0
        c["r_hp"] = -hp_regularizer(out.spat.hidden, lap) if out.spat else 0.0
        c["adv_A"] = c["adv_X"] = c["adv_joint"] = 0.0
        if attacking:
            c["adv_A"] = cross_entropy(
                target_logits(params, topology(g_a), x, _branch_target(mode, "spec")),
                y, g.train_mask)
            c["adv_X"] = cross_entropy(
                target_logits(params, topo, x_x, _branch_target(mode, "spat")),
                y, g.train_mask)
        if joint_epoch:
            c["adv_joint"] = cross_entropy(
                forward(params, topology(g_j), x_j, signals).logits, y, g.train_mask)

        # (7) total loss and SGD step
        total = total_loss(c, w)
        objective = total
        if mode == "fused":
            # auxiliary heads learn from detached embeddings only
            probe = (cross_entropy(linear(ad.detach(out.z_spec), params["head_spec.W"],
                                          params["head_spec.b"]), y, g.train_mask)
                     + cross_entropy(linear(ad.detach(out.z_spat), params["head_spat.W"],
                                            params["head_spat.b"]), y, g.train_mask))
            objective = total + probe
        if not math.isfinite(total.item()):
            parts = {k: (v.item() if isinstance(v, Value) else float(v)) for k, v in c.items()}
            raise NumericalError(f"non-finite loss at epoch {epoch}: {parts}")
        ad.backward(objective)
        if cfg.clip_norm is not None:
            clip_gradients(params, cfg.clip_norm)
        sgd_step(params, cfg.learning_rate, cfg.weight_decay, cfg.momentum, velocity)
        if cfg.project_spatial:
            project_spatial_weights(params)
        if not params.all_finite():
            raise NumericalError(f"non-finite parameters after epoch {epoch}")

        val, test = score(model_signals(params, g, seed=attack.seed))
        rec = {"epoch": epoch}
        for k in METRIC_KEYS[1:10]:
            v = total if k == "total" else c[k]
            rec[k] = v.item() if isinstance(v, Value) else float(v)
        rec["val_acc"], rec["test_acc"] = val, test
        log.append(rec)
        if val > best_val:
            best_val, best_epoch, best_arrays = val, epoch, params.arrays()
        elif epoch - best_epoch >= cfg.patience:
            break

    if cfg.restore_best:
        params.load_arrays(best_arrays)
    return TrainResult(params, log, best_epoch, best_val)


def tradeoff_quantities(params: ModelParams, g: Graph, gamma: float, signals=None):
    """(b, Delta, L_cons, L_comp) on the clean graph for post-training checks."""
    signals = model_signals(params, g) if signals is None else signals
    out = forward(params, topology(g), g.features, signals)
    b = mask_weights(signals, params)
    unlabeled = ~g.train_mask
    delta = branch_gap(out.z_spec, out.z_spat).data[:, 0]
    cons = consistency_loss(out.z_spec, out.z_spat, b, unlabeled).item()
    comp = complementarity_loss(out.z_spec, out.z_spat, b, gamma, unlabeled).item()
    return b.data[:, 0], delta, cons, comp

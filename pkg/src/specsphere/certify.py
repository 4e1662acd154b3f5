"""Closed-form (p, eps) certificates for the fused model and an empirical auditor.

Gate signals are held at their clean-graph values throughout: the certificate
treats the trained gate as a function of the two branch embeddings only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adversarial import AttackConfig, Objective, ThreatBudget, joint_attack
from .errors import ContractError, NumericalError
from .graph import Graph, flip_edges
from .model import ModelParams, forward, spatial_weight_blocks
from .spectral import theta_name
from .topology import topology
from .training import model_signals


def spectral_norm(w: np.ndarray, iters: int = 100, tol: float = 1e-9) -> float:
    """Largest singular value by power iteration on W^T W."""
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0 or not np.any(w):
        return 0.0
    v = np.random.default_rng(0).standard_normal(w.shape[1])
    v /= np.linalg.norm(v)
    s = 0.0
    for _ in range(iters):
        u = w.T @ (w @ v)
        nu = np.linalg.norm(u)
        if nu == 0:
            return 0.0
        v = u / nu
        s_new = math.sqrt(nu)
        if abs(s_new - s) <= tol * max(s_new, 1.0):
            s = s_new
            break
        s = s_new
    # a final Rayleigh step makes the estimate exact for rank-one W
    return float(max(s, np.linalg.norm(w @ v)))


@dataclass(frozen=True)
class LipschitzConstants:
    B_spec_A: float
    B_spec_X: float
    B_spat_A: float
    B_spat_X: float
    L_gate: float
    L_gate_tilde: float
    beta: float
    c_norm: float
    L_phi: float
    K: int
    L_p: int
    L_f: int
    x_inf: float

    @property
    def B_A(self) -> float:
        return self.B_spec_A + self.B_spat_A

    @property
    def B_X(self) -> float:
        return self.B_spec_X + self.B_spat_X


def assemble_constants(K: int, c_norm: float, beta: float, L_p: int, L_phi: float,
                       x_inf: float, L_f: int = 1) -> LipschitzConstants:
    cheb = 2.0 ** (K + 1) - 1.0
    b_spec_a, b_spec_x = cheb * c_norm * x_inf, cheb * c_norm
    b_spat_a, b_spat_x = beta ** L_p * x_inf, beta ** L_p
    return LipschitzConstants(
        b_spec_a, b_spec_x, b_spat_a, b_spat_x,
        0.25 * L_phi * (b_spec_a + b_spat_a), 0.25 * L_phi * (b_spec_x + b_spat_x),
        beta, c_norm, L_phi, K, L_p, L_f, x_inf)


def extract_constants(params: ModelParams, x: np.ndarray) -> LipschitzConstants:
    cfg = params.config
    if cfg.mode != "fused":
        raise ContractError("certificates are defined for the fused model")
    if not params.all_finite():
        raise NumericalError("non-finite parameters; refusing to certify")
    sc, pc = cfg.spectral, cfg.spatial
    c_norm = 1.0
    for layer in range(sc.layers):
        c_norm *= sum(spectral_norm(params[theta_name(layer, k)].data) for k in range(sc.K + 1))
    if pc.variant == "gat":
        per_layer: dict[str, list[float]] = {}
        for name, cols in spatial_weight_blocks(params):
            per_layer.setdefault(name, []).append(spectral_norm(params[name].data[:, cols]))
        # concatenated heads stack column blocks: ||[M_1 .. M_H]|| <= sqrt(sum ||M_h||^2)
        merge = max if pc.head_merge == "mean" else (lambda s: math.sqrt(sum(v * v for v in s)))
        beta = max(merge(s) for s in per_layer.values())
    else:
        # |g| <= 1, |1 - g| <= 2 and ||I - A_hat|| <= 2 bound each FAGCN layer
        beta = max(spectral_norm(params[f"spat.{l}.W_lp"].data)
                   + 4.0 * spectral_norm(params[f"spat.{l}.W_hp"].data)
                   for l in range(pc.layers))
    l_phi = 1.0
    for layer in range(cfg.gate_layers + 1):
        l_phi *= spectral_norm(params[f"gate.{layer}.W"].data)
    x_inf = float(np.max(np.abs(x))) if np.size(x) else 0.0
    return assemble_constants(sc.K, c_norm, beta, pc.layers, l_phi, x_inf, sc.layers)


def fused_bound(consts: LipschitzConstants, p: float, eps: float) -> float:
    """Upper bound on ||Z(A', X') - Z(A, X)|| within the (p, eps) threat set."""
    if p < 0 or eps < 0:
        raise ContractError("p and eps must be non-negative")
    return ((1.0 + consts.L_gate) * consts.B_A * math.sqrt(2.0 * p)
            + (1.0 + consts.L_gate_tilde) * consts.B_X * eps)


def margins(logits: np.ndarray, pred: np.ndarray | None = None) -> np.ndarray:
    """Predicted-class logit minus the best other logit, per node."""
    logits = np.asarray(logits, dtype=np.float64)
    pred = logits.argmax(axis=1) if pred is None else np.asarray(pred)
    rows = np.arange(len(logits))
    top = logits[rows, pred]
    others = logits.copy()
    others[rows, pred] = -np.inf
    return top - others.max(axis=1)


def logit_factor(params: ModelParams) -> float:
    """max_c ||W_cls[:, c]||_1: worst-case logit change per unit of max-norm on Z."""
    return float(np.abs(params["cls.W"].data).sum(axis=0).max())


@dataclass(frozen=True)
class Certificate:
    node: int
    margin: float
    bound: float  # bound on the change of any logit gap
    certified: bool
    p: int
    eps: float


@dataclass
class CertifyReport:
    certificates: list[Certificate]
    constants: LipschitzConstants
    z_bound: float
    factor: float

    @property
    def certified_fraction(self) -> float:
        if not self.certificates:
            return 0.0
        return float(np.mean([c.certified for c in self.certificates]))


def clean_state(params: ModelParams, g: Graph):
    signals = model_signals(params, g)
    out = forward(params, topology(g), g.features, signals)
    return signals, out


def certify(params: ModelParams, g: Graph, budget: ThreatBudget, nodes=None,
            consts: LipschitzConstants | None = None, state=None) -> CertifyReport:
    consts = extract_constants(params, g.features) if consts is None else consts
    _, out = clean_state(params, g) if state is None else state
    m = margins(out.logits.data)
    nodes = np.flatnonzero(g.test_mask) if nodes is None else np.asarray(nodes)
    factor = logit_factor(params)
    zb = fused_bound(consts, budget.p, budget.eps)
    gap_bound = 2.0 * zb * factor
    certs = [Certificate(int(u), float(m[u]), gap_bound, bool(gap_bound < m[u]),
                         budget.p, budget.eps) for u in nodes]
    return CertifyReport(certs, consts, zb, factor)


# ---------------------------------------------------------------- auditing

@dataclass
class Transcript:
    node: int
    flips: np.ndarray
    x_adv: np.ndarray
    clean_pred: int
    adv_pred: int
    method: str


def _pred(params, g, x, signals, node) -> int:
    return int(forward(params, topology(g), x, signals).logits.data[node].argmax())


def _flips_between(g: Graph, g_adv: Graph) -> np.ndarray:
    n = g.n
    a, b = g.edges(), g_adv.edges()
    keys = np.setxor1d(a[:, 0] * n + a[:, 1], b[:, 0] * n + b[:, 1])
    return np.stack([keys // n, keys % n], axis=1)


def random_attack(g: Graph, budget: ThreatBudget, rng: np.random.Generator,
                  around: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Budget-feasible random flips (optionally touching ``around``) and box-vertex noise."""
    n = g.n
    k = int(rng.integers(0, budget.p + 1)) if budget.p else 0
    flips = set()
    while len(flips) < k:
        i = around if around is not None and rng.random() < 0.5 else int(rng.integers(n))
        j = int(rng.integers(n))
        if i != j:
            flips.add((min(i, j), max(i, j)))
    flips = np.array(sorted(flips), dtype=np.int64).reshape(-1, 2)
    x_adv = g.features + budget.eps * rng.choice([-1.0, 1.0], size=g.features.shape)
    return flips, x_adv


def receptive_pairs(g: Graph, node: int, radius: int) -> np.ndarray:
    """Every node pair with an endpoint within ``radius`` hops of ``node``."""
    dist = np.full(g.n, -1)
    dist[node], frontier = 0, [node]
    for r in range(1, radius + 1):
        nxt = []
        for u in frontier:
            for v in g.neighbors(u):
                if dist[v] < 0:
                    dist[v] = r
                    nxt.append(int(v))
        frontier = nxt
    near = np.flatnonzero(dist >= 0)
    iu, ju = np.triu_indices(g.n, 1)
    keep = np.isin(iu, near) | np.isin(ju, near)
    return np.stack([iu[keep], ju[keep]], axis=1)


def falsify(params: ModelParams, g: Graph, budget: ThreatBudget, node: int, *,
            trials: int = 200, seed: int = 0, attack: AttackConfig | None = None,
            exhaustive: bool = True, state=None) -> Transcript | None:
    """Search the threat set for a perturbation that changes ``node``'s prediction."""
    signals, out = clean_state(params, g) if state is None else state
    clean = int(out.logits.data[node].argmax())
    rng = np.random.default_rng(seed)

    def check(flips, x_adv, method):
        g_adv = flip_edges(g, flips) if len(flips) else g
        pred = _pred(params, g_adv, x_adv, signals, node)
        return Transcript(node, flips, x_adv, clean, pred, method) if pred != clean else None

    for _ in range(trials):
        flips, x_adv = random_attack(g, budget, rng, around=node)
        t = check(flips, x_adv, "random")
        if t:
            return t

    labels = np.full(g.n, clean)
    mask = np.zeros(g.n, dtype=bool)
    mask[node] = True
    attack = attack or AttackConfig(steps_A=max(budget.p, 1), steps_X=20, seed=seed)
    g_adv, x_adv = joint_attack(params, g, budget, attack, target="model",
                                labels=labels, mask=mask, signals=signals)
    t = check(_flips_between(g, g_adv), x_adv, "pgd")
    if t:
        return t

    if exhaustive and budget.p >= 1:
        cfg = params.config
        radius = max(cfg.spectral.K * cfg.spectral.layers, cfg.spatial.layers) + 1
        for pair in receptive_pairs(g, node, radius):
            t = check(pair[None, :], g.features, "single_flip")
            if t:
                return t
    return None


@dataclass
class BoundCheck:
    max_deviation: float
    bound: float
    violations: int
    trials: int


def bound_validity(params: ModelParams, g: Graph, budget: ThreatBudget, trials: int = 500,
                   seed: int = 0, consts: LipschitzConstants | None = None) -> BoundCheck:
    """Compare sampled ||Z(A', X') - Z(A, X)||_inf with the closed-form bound."""
    consts = extract_constants(params, g.features) if consts is None else consts
    bound = fused_bound(consts, budget.p, budget.eps)
    signals, out = clean_state(params, g)
    z0 = out.z.data
    rng = np.random.default_rng(seed)
    worst, bad = 0.0, 0
    for _ in range(trials):
        flips, x_adv = random_attack(g, budget, rng)
        g_adv = flip_edges(g, flips) if len(flips) else g
        z = forward(params, topology(g_adv), x_adv, signals).z.data
        dev = float(np.max(np.abs(z - z0)))
        worst = max(worst, dev)
        bad += dev > bound
    return BoundCheck(worst, bound, bad, trials)


def objective_for_node(params, g, node, signals) -> Objective:
    clean = int(forward(params, topology(g), g.features, signals).logits.data[node].argmax())
    mask = np.zeros(g.n, dtype=bool)
    mask[node] = True
    return Objective(params, np.full(g.n, clean), mask, "model", signals)


def exhaustive_single_flip(obj: Objective, g: Graph, x: np.ndarray) -> tuple[float, np.ndarray]:
    """(best loss, best pair) over every single pair flip."""
    best, best_pair = -np.inf, None
    for i, j in zip(*np.triu_indices(g.n, 1)):
        val = obj.value(flip_edges(g, [(i, j)]), x)
        if val > best:
            best, best_pair = val, np.array([i, j])
    return best, best_pair

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specsphere.adversarial import ThreatBudget
from specsphere.certify import (assemble_constants, bound_validity, certify, exhaustive_single_flip,
                                extract_constants, falsify, fused_bound, logit_factor, margins,
                                objective_for_node, random_attack, receptive_pairs, spectral_norm)
from specsphere.errors import ContractError, NumericalError
from specsphere.graph import build_graph, flip_edges
from specsphere.model import init_params
from specsphere.training import model_signals

from conftest import random_graph, tiny_config


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), r=st.integers(1, 6), c=st.integers(1, 6))
def test_property_spectral_norm_matches_svd(seed, r, c):
    w = np.random.default_rng(seed).standard_normal((r, c))
    assert spectral_norm(w, iters=500, tol=1e-13) == pytest.approx(np.linalg.norm(w, 2), rel=1e-6)


def test_spectral_norm_edge_cases():
    assert spectral_norm(np.zeros((3, 2))) == 0.0
    assert spectral_norm(np.array([[3.0, 4.0]])) == pytest.approx(5.0)
    assert spectral_norm(np.eye(4) * 2) == pytest.approx(2.0)


def test_assemble_constants_closed_form():
    c = assemble_constants(K=2, c_norm=1.5, beta=0.8, L_p=2, L_phi=2.0, x_inf=3.0)
    cheb = 2 ** 3 - 1
    assert c.B_spec_A == pytest.approx(cheb * 1.5 * 3.0)
    assert c.B_spec_X == pytest.approx(cheb * 1.5)
    assert c.B_spat_A == pytest.approx(0.64 * 3.0)
    assert c.B_spat_X == pytest.approx(0.64)
    assert c.L_gate == pytest.approx(0.25 * 2.0 * c.B_A)
    assert c.L_gate_tilde == pytest.approx(0.25 * 2.0 * c.B_X)


def test_fused_bound_formula_and_monotone():
    c = assemble_constants(2, 1.0, 1.0, 2, 1.0, 1.0)
    assert fused_bound(c, 0, 0.0) == 0.0
    expect = (1 + c.L_gate) * c.B_A * math.sqrt(6) + (1 + c.L_gate_tilde) * c.B_X * 0.1
    assert fused_bound(c, 3, 0.1) == pytest.approx(expect)
    assert fused_bound(c, 4, 0.1) > fused_bound(c, 3, 0.1) > fused_bound(c, 3, 0.05)
    with pytest.raises(ContractError):
        fused_bound(c, -1, 0.0)


def test_margins():
    logits = np.array([[3.0, 1.0, 2.5], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(margins(logits), [0.5, 1.0])
    np.testing.assert_allclose(margins(logits, np.array([1, 0])), [-2.0, -1.0])


def test_extract_constants_checks(small_graph):
    spec_only = init_params(tiny_config(small_graph.num_features, mode="spectral"), 0)
    with pytest.raises(ContractError):
        extract_constants(spec_only, small_graph.features)
    p = init_params(tiny_config(small_graph.num_features), 0)
    p["cls.W"].data[0, 0] = np.inf
    with pytest.raises(NumericalError):
        extract_constants(p, small_graph.features)


@pytest.mark.parametrize("variant,merge", [("gat", "concat"), ("gat", "mean"), ("fagcn", "concat")])
def test_branch_lipschitz_constants_hold_empirically(variant, merge):
    """The feature-side branch constants upper-bound sampled embedding changes."""
    from specsphere.autodiff import Value
    from specsphere.model import ModelConfig
    from specsphere.spatial import SpatialConfig, spatial_forward
    from specsphere.spectral import SpectralConfig, spectral_forward
    from specsphere.topology import topology
    g = random_graph(12, 0.3, 3, seed=5)
    cfg = ModelConfig(3, 2, SpectralConfig(K=2, layers=2, hidden=4),
                      SpatialConfig(layers=2, hidden=4, heads=2, variant=variant, head_merge=merge),
                      gate_hidden=5, mask_hidden=5)
    p = init_params(cfg, 1)
    c = extract_constants(p, g.features)
    topo = topology(g)
    rng = np.random.default_rng(0)
    z0s = spectral_forward(topo, Value(g.features), cfg.spectral, p).z.data
    for _ in range(50):
        dx = rng.uniform(-1e-3, 1e-3, g.features.shape)
        zs = spectral_forward(topo, Value(g.features + dx), cfg.spectral, p).z.data
        # X-side constants are stated for the spectral norm of the perturbation
        assert np.linalg.norm(zs - z0s, 2) <= c.B_spec_X * np.linalg.norm(dx, 2) + 1e-12


def test_logit_factor_bounds_logit_change(small_params):
    rng = np.random.default_rng(0)
    w = small_params["cls.W"].data
    f = logit_factor(small_params)
    for _ in range(100):
        dz = rng.uniform(-1, 1, (1, w.shape[0]))
        assert np.max(np.abs(dz @ w)) <= f * np.max(np.abs(dz)) + 1e-12


def test_random_attack_feasible():
    g = random_graph(10, 0.3, 3, seed=0)
    rng = np.random.default_rng(0)
    b = ThreatBudget(3, 0.05)
    for _ in range(30):
        flips, x = random_attack(g, b, rng, around=2)
        assert len(flips) <= 3 and np.all(flips[:, 0] < flips[:, 1])
        assert np.max(np.abs(x - g.features)) <= 0.05 + 1e-15


def test_receptive_pairs():
    path = build_graph([(0, 1), (1, 2), (2, 3), (3, 4)], 5)
    pairs = receptive_pairs(path, 0, 1)
    assert all(0 in p or 1 in p for p in pairs.tolist())
    assert len(pairs) == 4 + 3  # pairs touching 0, plus pairs touching 1 but not 0


def test_certify_report_fields(trained_sbm200):
    g, res = trained_sbm200
    rep = certify(res.params, g, ThreatBudget(3, 0.05))
    assert len(rep.certificates) == int(g.test_mask.sum())
    assert all(c.bound == pytest.approx(2 * rep.z_bound * rep.factor) for c in rep.certificates)
    assert 0.0 <= rep.certified_fraction <= 1.0
    tiny = certify(res.params, g, ThreatBudget(0, 1e-7))
    assert tiny.certified_fraction > 0.5


def test_certified_nodes_survive_falsifier(trained_sbm200):
    g, res = trained_sbm200
    budget = ThreatBudget(0, 1e-6)
    rep = certify(res.params, g, budget)
    certified = [c.node for c in rep.certificates if c.certified][:10]
    assert certified
    for u in certified:
        assert falsify(res.params, g, budget, u, trials=20, seed=u) is None


def test_falsifier_finds_flip_on_fragile_node():
    """An uncertified node with a tiny margin is flipped by some feasible attack."""
    g = random_graph(10, 0.3, 3, seed=2, train_frac=0.5)
    p = init_params(tiny_config(3), 4)
    sig = model_signals(p, g)
    from specsphere.model import forward
    from specsphere.topology import topology
    m = margins(forward(p, topology(g), g.features, sig).logits.data)
    u = int(np.argmin(m))
    t = falsify(p, g, ThreatBudget(2, 1.0), u, trials=200, seed=0)
    assert t is not None and t.adv_pred != t.clean_pred
    assert len(t.flips) <= 2 and np.max(np.abs(t.x_adv - g.features)) <= 1.0 + 1e-12


def test_bound_validity_small(small_graph, small_params):
    chk = bound_validity(small_params, small_graph, ThreatBudget(2, 0.05), trials=40)
    assert chk.violations == 0 and chk.max_deviation <= chk.bound


def test_exhaustive_single_flip(small_graph, small_params):
    sig = model_signals(small_params, small_graph)
    obj = objective_for_node(small_params, small_graph, 0, sig)
    best, pair = exhaustive_single_flip(obj, small_graph, small_graph.features)
    again = obj.value(flip_edges(small_graph, [tuple(pair)]), small_graph.features)
    assert again == pytest.approx(best)

import math

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from specsphere.adversarial import ThreatBudget
from specsphere.autodiff import Value
from specsphere.data import SbmConfig, generate_sbm
from specsphere.errors import ContractError, NumericalError
from specsphere.graph import drop_edges
from specsphere.model import ModelConfig, init_params
from specsphere.training import (METRIC_KEYS, LossWeights, Perturbation, TrainConfig, accuracy,
                                 clip_gradients, complementarity_loss, consistency_loss,
                                 default_budget, evaluate, tradeoff_quantities,
                                 project_spatial_weights, sgd_step, total_loss, train)
from specsphere.certify import spectral_norm

from conftest import random_graph, tiny_config

QUICK = dict(epochs=4, patience=4)


# ---------------------------------------------------------------- losses

def test_consistency_examples():
    rng = np.random.default_rng(0)
    z = Value(rng.standard_normal((4, 3)))
    b = Value(np.full((4, 1), 0.7))
    unl = np.array([True, True, False, True])
    assert consistency_loss(z, z, b, unl).item() == 0.0
    z2 = Value(rng.standard_normal((4, 3)))
    assert consistency_loss(z, z2, Value(np.zeros((4, 1))), unl).item() == 0.0
    zs = Value(np.array([[1.0, 0.0], [0.0, 0.0], [5.0, 5.0]]))
    zp = Value(np.array([[0.0, 2.0], [3.0, 0.0], [0.0, 0.0]]))
    bb = Value(np.array([[0.25], [0.5], [0.9]]))
    hand = 0.25 * (1 + 4) + 0.5 * 9
    assert consistency_loss(zs, zp, bb, [True, True, False]).item() == pytest.approx(hand, abs=1e-12)


def test_complementarity_examples():
    zs = Value(np.array([[0.0, 0.0], [3.0, 0.0]]))
    zp = Value(np.array([[0.0, 0.0], [0.0, 0.0]]))
    unl = np.array([True, True])
    half = complementarity_loss(zs, zp, Value(np.full((2, 1), 0.5)), 1.0, unl).item()
    assert half == pytest.approx(0.5)  # node 0 contributes 0.5, node 1 has gap 3 >= gamma
    assert complementarity_loss(zs, zp, Value(np.ones((2, 1))), 1.0, unl).item() == 0.0
    far = Value(np.array([[2.0, 0.0], [3.0, 0.0]]))
    assert complementarity_loss(far, zp, Value(np.zeros((2, 1))), 1.0, unl).item() == 0.0
    with pytest.raises(ContractError):
        complementarity_loss(zs, zp, Value(np.ones((2, 1))), -1.0, unl)


def test_total_loss_assembly():
    c = {"ce": 0.5, "adv_A": 1.0, "adv_X": 2.0, "adv_joint": 3.0, "r_lp": 0.25,
         "r_hp": -0.75, "cons": 0.125, "comp": 0.0625}
    assert total_loss(c, LossWeights()).item() == 0.5
    w = LossWeights(lambda_adv=0.5, lambda_cons=2.0)
    assert total_loss(c, w).item() == pytest.approx(0.5 + 0.5 * 6 + 2.0 * (-0.3125), abs=1e-15)
    no_adv = dict(c, adv_A=0.0, adv_X=0.0, adv_joint=0.0)
    assert total_loss(no_adv, w).item() == pytest.approx(0.5 + 2.0 * (-0.3125), abs=1e-15)
    with pytest.raises(ContractError):
        total_loss(dict(c, ce=Value(np.ones((2, 1)))), w)


def test_loss_weights_validated():
    with pytest.raises(ValueError):
        LossWeights(lambda_adv=-1)
    with pytest.raises(ValueError):
        LossWeights(gamma=float("nan"))
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_default_budget():
    g = random_graph(20, 0.3, 2, seed=0)
    b = default_budget(g)
    assert b.p == math.floor(0.1 * g.num_edges) and b.eps == 0.1


# ---------------------------------------------------------------- optimiser

def test_sgd_zero_gradient_weight_decay_shrinks(small_params):
    p = small_params.copy()
    norms = [sum(np.sum(v.data ** 2) for _, v in p.items())]
    for _ in range(3):
        for _, v in p.items():
            v.grad = np.zeros_like(v.data)
        sgd_step(p, 0.1, 5e-4)
        norms.append(sum(np.sum(v.data ** 2) for _, v in p.items()))
    assert all(b <= a for a, b in zip(norms, norms[1:]))


def test_sgd_momentum_accumulates():
    cfg = tiny_config(2)
    p = init_params(cfg, 0)
    name = "cls.b"
    for _, v in p.items():
        v.grad = np.zeros_like(v.data)
    p[name].grad = np.ones_like(p[name].data)
    vel: dict = {}
    before = p[name].data.copy()
    sgd_step(p, 1.0, 0.0, 0.5, vel)
    sgd_step(p, 1.0, 0.0, 0.5, vel)
    np.testing.assert_allclose(p[name].data, before - 1.0 - 1.5)


def test_clip_gradients():
    p = init_params(tiny_config(2), 0)
    for _, v in p.items():
        v.grad = np.full(v.shape, 3.0)
    norm = clip_gradients(p, 1.0)
    new = math.sqrt(sum(np.sum(v.grad ** 2) for _, v in p.items()))
    assert norm > 1.0 and new == pytest.approx(1.0)


def test_project_spatial_weights():
    p = init_params(tiny_config(3), 0)
    p["spat.0.W"].data = p["spat.0.W"].data * 50
    project_spatial_weights(p)
    assert spectral_norm(p["spat.0.W"].data[:, :2]) <= 1 + 1e-9
    assert spectral_norm(p["spat.0.W"].data[:, 2:]) <= 1 + 1e-9


# ---------------------------------------------------------------- loop

def test_zero_learning_rate_is_bit_exact(small_graph):
    cfg = tiny_config(small_graph.num_features)
    start = init_params(cfg, 3)
    before = start.arrays()
    tc = TrainConfig(epochs=1, learning_rate=0.0, weights=LossWeights(0.5, 0.1),
                     budget=ThreatBudget(1, 0.05))
    res = train(small_graph, cfg, dict_replace(tc, restore_best=False), params=start)
    for k, v in res.params.arrays().items():
        assert np.array_equal(v, before[k]), k


def dict_replace(tc, **kw):
    import dataclasses
    return dataclasses.replace(tc, **kw)


def test_training_deterministic(small_graph):
    cfg = tiny_config(small_graph.num_features)
    tc = TrainConfig(epochs=3, weights=LossWeights(0.5, 0.1), budget=ThreatBudget(1, 0.05))
    tc = dict_replace(tc, attack=dict_replace(tc.attack, joint_period=2))
    a, b = train(small_graph, cfg, tc), train(small_graph, cfg, tc)
    assert a.log == b.log
    assert all(set(r) == set(METRIC_KEYS) for r in a.log)
    assert a.log[1]["adv_joint"] > 0 and a.log[0]["adv_joint"] == 0.0


def test_train_requires_train_nodes(small_graph):
    g = small_graph
    from dataclasses import replace
    g0 = replace(g, train_mask=np.zeros(g.n, bool))
    with pytest.raises(ContractError):
        train(g0, tiny_config(g.num_features), TrainConfig(**QUICK))


def test_nan_loss_aborts(small_graph):
    cfg = tiny_config(small_graph.num_features)
    p = init_params(cfg, 0)
    p["cls.W"].data = np.full(p["cls.W"].shape, np.nan)
    with pytest.raises(NumericalError):
        train(small_graph, cfg, TrainConfig(**QUICK), params=p)


def test_early_stopping_checkpoint(sbm200):
    g = sbm200.graph
    tc = TrainConfig(epochs=40, patience=10, momentum=0.9, seed=1)
    res = train(g, ModelConfig(g.num_features, 2), tc)
    best_logged = max([r["val_acc"] for r in res.log])
    assert res.best_val >= best_logged - 1e-12 or res.best_epoch == 0
    assert evaluate(res.params, g, g.val_mask) == pytest.approx(res.best_val)
    last = res.log[-1]["epoch"]
    assert last == 40 or last - res.best_epoch >= 10


def test_separable_sbm_reaches_full_train_accuracy():
    g = generate_sbm(SbmConfig(n=60, p_in=0.1, p_out=0.02, signal=2.0, seed=0)).graph
    oracle = LogisticRegression(C=1e6, max_iter=5000).fit(g.features, g.labels)
    assert oracle.score(g.features, g.labels) == 1.0  # linearly separable
    tc = TrainConfig(epochs=200, patience=200, budget=ThreatBudget(0, 0.0), restore_best=False)
    res = train(g, ModelConfig(g.num_features, 2), tc)
    assert evaluate(res.params, g, g.train_mask) == 1.0


# ---------------------------------------------------------------- evaluation

def test_accuracy_examples():
    logits = np.array([[2.0, 0.0], [0.0, 1.0]])
    assert accuracy(logits, [0, 1], [True, True]) == 1.0
    with pytest.raises(ContractError):
        accuracy(logits, [0, 1], [False, False])


def test_drop_edge_zero_is_clean(trained_sbm200):
    g, res = trained_sbm200
    assert evaluate(res.params, g, perturbation=Perturbation("drop_edge", 0.0)) == evaluate(res.params, g)


def test_drop_edge_all_equals_features_only_oracle(sbm200):
    g = sbm200.graph
    cfg = ModelConfig(g.num_features, 2, mode="spatial")
    res = train(g, cfg, TrainConfig(epochs=30, patience=30, momentum=0.9))
    p = res.params
    # with no edges attention is the identity: each layer is a per-node linear map
    heads = cfg.spatial.n_heads
    h = np.maximum(g.features @ p["spat.0.W"].data, 0)
    z = h @ p["spat.1.W"].data
    assert heads * cfg.spatial.head_width == z.shape[1]
    logits = z @ p["head_spat.W"].data + p["head_spat.b"].data
    oracle = accuracy(logits, g.labels, g.test_mask)
    got = evaluate(p, g, perturbation=Perturbation("drop_edge", 1.0))
    assert got == oracle
    assert drop_edges(g, 1.0, np.random.default_rng(0)).num_edges == 0


def test_evaluate_attacks_do_not_raise_accuracy(trained_sbm200):
    g, res = trained_sbm200
    clean = evaluate(res.params, g)
    assert evaluate(res.params, g, perturbation=Perturbation("pgd_feature", 0.1)) <= clean + 1e-12
    with pytest.raises(ValueError):
        evaluate(res.params, g, perturbation=Perturbation("metattack", 1))


# ---------------------------------------------------------------- trade-off

def test_tradeoff_bound(trained_sbm200):
    g, res = trained_sbm200
    b, delta, cons, comp = tradeoff_quantities(res.params, g, gamma=1.0)
    unl = ~g.train_mask
    assert cons == pytest.approx(float(np.sum(b[unl] * delta[unl] ** 2)), abs=1e-9)
    low = unl & (b <= 0.5)
    assert np.all(delta[low] >= 1.0 - math.sqrt(2 * comp) - 1e-6)


def test_regularised_high_frequency_energy_bound():
    """Regularised spectral energy stays under the reference CE divided by lambda_cons."""
    g = generate_sbm(SbmConfig(n=60, seed=0)).graph
    mc = ModelConfig(g.num_features, 2, mode="spectral")
    common = dict(epochs=150, patience=150, dropout=0.0, budget=ThreatBudget(0, 0.0),
                  restore_best=False)
    ref = train(g, mc, TrainConfig(weights=LossWeights(0.0, 0.0), **common))
    reg = train(g, mc, TrainConfig(weights=LossWeights(0.0, 0.1), **common))
    assert reg.log[-1]["r_lp"] <= ref.log[-1]["ce"] / 0.1 * 1.05
    assert reg.log[-1]["r_lp"] < ref.log[-1]["r_lp"]

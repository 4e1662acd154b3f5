import numpy as np
import pytest

from specsphere.data import SbmConfig, generate_sbm
from specsphere.graph import build_graph
from specsphere.model import ModelConfig, init_params
from specsphere.spatial import SpatialConfig
from specsphere.spectral import SpectralConfig
from specsphere.training import TrainConfig, train


def random_graph(n, p, d, seed, n_classes=2, train_frac=0.5):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p
    labels = rng.integers(0, n_classes, n)
    labels[:n_classes] = np.arange(n_classes)
    train = np.zeros(n, dtype=bool)
    train[: max(n_classes, int(train_frac * n))] = True
    test = ~train
    return build_graph(np.stack([iu[keep], ju[keep]], 1), n, rng.standard_normal((n, d)),
                       labels, train, np.zeros(n, dtype=bool), test)


def tiny_config(in_dim, n_classes=2, variant="gat", mode="fused", K=2, heads=2, hidden=4):
    return ModelConfig(
        in_dim, n_classes,
        spectral=SpectralConfig(K=K, layers=2, hidden=hidden),
        spatial=SpatialConfig(layers=2, hidden=hidden, heads=heads, variant=variant),
        gate_hidden=5, gate_layers=2, mask_hidden=5, mode=mode,
    )


@pytest.fixture
def small_graph():
    return random_graph(10, 0.35, 3, seed=1)


@pytest.fixture
def small_params(small_graph):
    return init_params(tiny_config(small_graph.num_features), seed=3)


@pytest.fixture(scope="session")
def sbm200():
    return generate_sbm(SbmConfig(n=200, C=2, p_in=0.05, p_out=0.01, d=16, signal=1.0, seed=0))


@pytest.fixture(scope="session")
def trained_sbm200(sbm200):
    g = sbm200.graph
    cfg = TrainConfig(epochs=60, patience=60, momentum=0.9, seed=0)
    res = train(g, ModelConfig(g.num_features, g.num_classes), cfg)
    return g, res


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

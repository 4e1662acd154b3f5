import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specsphere.data import (MAGIC, DatasetBundle, SbmConfig, generate_sbm, global_homophily,
                             load_dataset, load_model, parse_sbm_spec, read_jsonl, save_dataset,
                             save_model, write_csv, write_jsonl)
from specsphere.errors import FormatError, InputError, ShapeError, ValidationError
from specsphere.graph import build_graph, local_homophily
from specsphere.model import init_params

from conftest import tiny_config


def _benchmark_like(n, n_edges, n_classes, d, splits, seed=0):
    """Random graph with a benchmark's published counts (no real data involved)."""
    rng = np.random.default_rng(seed)
    keys: set[int] = set()
    while len(keys) < n_edges:
        i, j = rng.integers(0, n, 2)
        if i != j:
            keys.add(min(i, j) * n + max(i, j))
    k = np.array(sorted(keys))
    labels = rng.permutation(np.arange(n) % n_classes)
    order = rng.permutation(n)
    masks, start = [], 0
    for size in splits:
        m = np.zeros(n, bool)
        m[order[start:start + size]] = True
        masks.append(m)
        start += size
    g = build_graph(np.stack([k // n, k % n], 1), n, rng.random((n, d)), labels, *masks)
    return DatasetBundle(g, "synthetic", global_homophily(g))


@pytest.mark.parametrize("name,n,entries,classes", [("cora", 2708, 10556, 7),
                                                    ("citeseer", 3327, 9104, 6)])
def test_benchmark_counts_round_trip(tmp_path, name, n, entries, classes):
    b = _benchmark_like(n, entries // 2, classes, 8, (20 * classes, 500, 1000))
    save_dataset(b, tmp_path / name)
    got = load_dataset(tmp_path / name)
    m = json.loads((tmp_path / name / "manifest.json").read_text())
    assert m["num_edge_entries"] == entries and got.graph.n == n
    assert got.graph.num_classes == classes
    assert int(got.graph.train_mask.sum()) == 20 * classes
    assert int(got.graph.val_mask.sum()) == 500 and int(got.graph.test_mask.sum()) == 1000
    np.testing.assert_array_equal(got.graph.features, b.graph.features)
    np.testing.assert_array_equal(got.graph.edges(), b.graph.edges())


@pytest.fixture
def saved(tmp_path):
    b = generate_sbm(SbmConfig(n=30, seed=1))
    save_dataset(b, tmp_path / "d")
    return tmp_path / "d"


def test_load_missing(tmp_path, saved):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope")
    (saved / "labels.txt").unlink()
    with pytest.raises(FileNotFoundError):
        load_dataset(saved)


def test_truncated_features(saved):
    lines = (saved / "features.csv").read_text().splitlines()
    (saved / "features.csv").write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(ValidationError):
        load_dataset(saved)


def test_manifest_mismatch(saved):
    m = json.loads((saved / "manifest.json").read_text())
    m["num_train"] += 1
    (saved / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(ValidationError):
        load_dataset(saved)


def test_bad_edges(saved):
    (saved / "edges.txt").write_text("0 999\n")
    with pytest.raises(ValidationError):
        load_dataset(saved)
    (saved / "edges.txt").write_text("0 x\n")
    with pytest.raises(ValidationError):
        load_dataset(saved)


# ---------------------------------------------------------------- SBM

def test_sbm_extremes():
    homo = generate_sbm(SbmConfig(n=60, p_in=0.3, p_out=0.0, seed=0))
    assert homo.homophily_global == 1.0
    hetero = generate_sbm(SbmConfig(n=60, p_in=0.0, p_out=0.3, seed=0))
    assert hetero.homophily_global == 0.0


def test_sbm_deterministic():
    a = generate_sbm(SbmConfig(seed=7)).graph
    b = generate_sbm(SbmConfig(seed=7)).graph
    np.testing.assert_array_equal(a.edges(), b.edges())
    np.testing.assert_array_equal(a.features, b.features)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(3, 80), C=st.integers(1, 5), seed=st.integers(0, 1000))
def test_property_sbm_balanced(n, C, seed):
    if n < C:
        return
    g = generate_sbm(SbmConfig(n=n, C=C, seed=seed)).graph
    counts = np.bincount(g.labels, minlength=C)
    assert counts.max() - counts.min() <= 1


def test_sbm_validation():
    with pytest.raises(InputError):
        SbmConfig(p_in=1.5)
    with pytest.raises(InputError):
        SbmConfig(n=2, C=3)


def test_parse_sbm_spec():
    cfg = parse_sbm_spec("sbm:n=50,p_in=0.1,C=3,seed=4")
    assert (cfg.n, cfg.p_in, cfg.C, cfg.seed) == (50, 0.1, 3, 4)
    assert parse_sbm_spec("sbm") == SbmConfig()
    with pytest.raises(InputError):
        parse_sbm_spec("sbm:bogus=1")


def test_global_homophily_ignores_isolated():
    g = build_graph([(0, 1)], 3, labels=[0, 0, 1])
    assert global_homophily(g) == 1.0
    assert local_homophily(g, g.labels)[2] == 0.5


# ---------------------------------------------------------------- model files

@pytest.mark.parametrize("variant,mode", [("gat", "fused"), ("fagcn", "fused"),
                                          ("gat", "spectral"), ("gat", "spatial")])
def test_model_round_trip_bit_exact(tmp_path, variant, mode):
    p = init_params(tiny_config(5, n_classes=3, variant=variant, mode=mode), seed=2)
    # awkward values must survive as well
    first = next(iter(p))
    p[first].data[0, 0] = np.nextafter(1.0, 2.0)
    p[first].data[-1, -1] = -0.0
    save_model(tmp_path / "m.ssm", p)
    q = load_model(tmp_path / "m.ssm")
    assert q.config == p.config
    for k, v in p.arrays().items():
        assert q[k].data.tobytes() == v.tobytes()


def test_model_bad_magic_and_truncation(tmp_path):
    p = init_params(tiny_config(3), 0)
    save_model(tmp_path / "m.ssm", p)
    blob = (tmp_path / "m.ssm").read_bytes()
    (tmp_path / "bad.ssm").write_bytes(b"X" + blob[1:])
    with pytest.raises(FormatError):
        load_model(tmp_path / "bad.ssm")
    (tmp_path / "short.ssm").write_bytes(blob[:-20])
    with pytest.raises(FormatError):
        load_model(tmp_path / "short.ssm")
    ver = bytearray(blob)
    ver[len(MAGIC)] = 99
    (tmp_path / "ver.ssm").write_bytes(bytes(ver))
    with pytest.raises(FormatError):
        load_model(tmp_path / "ver.ssm")


def test_model_into_mismatched_architecture(tmp_path):
    save_model(tmp_path / "m.ssm", init_params(tiny_config(3, hidden=4), 0))
    with pytest.raises(ShapeError):
        load_model(tmp_path / "m.ssm", into=init_params(tiny_config(3, hidden=6, heads=2), 0))


# ---------------------------------------------------------------- logs

def test_jsonl_and_csv(tmp_path):
    recs = [{"epoch": 1, "ce": 0.1 + 0.2}, {"epoch": 2, "ce": float("nan")}]
    write_jsonl(tmp_path / "m.jsonl", recs)
    back = read_jsonl(tmp_path / "m.jsonl")
    assert back[0]["ce"] == 0.1 + 0.2 and np.isnan(back[1]["ce"])
    write_csv(tmp_path / "s.csv", ["a", "b"], [[1, 0.1 + 0.2], [True, np.float64(2.5)]])
    assert (tmp_path / "s.csv").read_text() == "a,b\n1,0.30000000000000004\n1,2.5\n"

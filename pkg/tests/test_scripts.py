import importlib.util
import pickle
from collections import defaultdict
from pathlib import Path

import numpy as np
import scipy.sparse as sp

ROOT = Path(__file__).resolve().parents[1] / "scripts"


def _script(name):
    spec = importlib.util.spec_from_file_location(name, ROOT / f"{name}.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def _fake_planetoid(raw: Path, name: str, rng, skip_test_id=False):
    """Tiny raw set laid out like the public pickles: 12 nodes, 3 classes, d = 5."""
    n, d, C, n_lab = 12, 5, 3, 3
    test_idx = np.array([11, 9, 10, 8])
    if skip_test_id:
        test_idx = np.array([11, 9, 8])  # id 10 has no features, as in citeseer
    feats = (rng.random((n, d)) < 0.4).astype(float)
    y = np.eye(C)[rng.integers(0, C, n)]
    parts = {"x": sp.csr_matrix(feats[:n_lab]), "y": y[:n_lab],
             "allx": sp.csr_matrix(feats[:8]), "ally": y[:8],
             "tx": sp.csr_matrix(feats[test_idx]), "ty": y[test_idx]}
    graph = defaultdict(list)
    for u in range(n):
        graph[u].extend([(u + 1) % n, u])  # ring plus a self-loop to be dropped
    parts["graph"] = graph
    for k, v in parts.items():
        with open(raw / f"ind.{name}.{k}", "wb") as f:
            pickle.dump(v, f)
    np.savetxt(raw / f"ind.{name}.test.index", test_idx, fmt="%d")
    return feats, y.argmax(1), test_idx


def test_convert_planetoid_round_trip(tmp_path):
    conv = _script("convert_planetoid")
    feats, labels, test_idx = _fake_planetoid(tmp_path, "cora", np.random.default_rng(0))
    b = conv.convert(tmp_path, "cora")
    g = b.graph
    np.testing.assert_array_equal(g.features, feats)
    np.testing.assert_array_equal(g.labels, labels)
    assert g.num_edges == 12 and sorted(np.flatnonzero(g.test_mask)) == sorted(test_idx)
    assert g.train_mask.sum() == 3 and g.val_mask[3:8].all()
    from specsphere.data import load_dataset, save_dataset
    save_dataset(b, tmp_path / "out")
    back = load_dataset(tmp_path / "out").graph
    np.testing.assert_array_equal(back.features, g.features)


def test_convert_pads_missing_citeseer_ids(tmp_path):
    conv = _script("convert_planetoid")
    feats, _, _ = _fake_planetoid(tmp_path, "citeseer", np.random.default_rng(1), True)
    g = conv.convert(tmp_path, "citeseer").graph
    assert g.n == 12
    assert not g.features[10].any()
    np.testing.assert_array_equal(g.features[11], feats[11])


def test_make_sbm_script(tmp_path, monkeypatch, capsys):
    mod = _script("make_sbm")
    monkeypatch.setattr("sys.argv", ["make_sbm", "--out", str(tmp_path / "s"),
                                     "--spec", "sbm:n=30,seed=2"])
    mod.main()
    from specsphere.data import load_dataset
    assert load_dataset(tmp_path / "s").graph.n == 30
    assert "n=30" in capsys.readouterr().out

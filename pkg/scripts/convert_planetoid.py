"""One-shot conversion of raw Planetoid files (ind.<name>.*) to the interchange format.

Usage: python3 scripts/convert_planetoid.py --raw DIR --name cora --out data/cora

The toolkit itself never reads these pickles; run this once offline.
The standard public split is kept: train = first len(y) nodes, val = next 500,
test = ind.<name>.test.index. Citeseer's isolated test ids are zero-padded.
"""
import argparse
import pickle
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from specsphere.data import DatasetBundle, global_homophily, load_dataset, save_dataset
from specsphere.graph import build_graph


def _load(raw: Path, name: str, part: str):
    with open(raw / f"ind.{name}.{part}", "rb") as f:
        return pickle.load(f, encoding="latin1")


def convert(raw: Path, name: str, row_normalise: bool = False) -> DatasetBundle:
    x, y, tx, ty, allx, ally, graph = (_load(raw, name, p)
                                       for p in ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    test_idx = np.loadtxt(raw / f"ind.{name}.test.index", dtype=np.int64)
    lo, hi = test_idx.min(), test_idx.max()
    if name == "citeseer":
        # some test ids have no features; pad so every id in [lo, hi] has a row
        full = sp.lil_matrix((hi - lo + 1, tx.shape[1]))
        full[np.sort(test_idx) - lo] = tx
        tx = full
        ty_full = np.zeros((hi - lo + 1, ty.shape[1]))
        ty_full[np.sort(test_idx) - lo] = ty
        ty = ty_full
    feats = sp.vstack([allx, tx]).tolil()
    labels_1h = np.vstack([ally, ty])
    order = np.sort(test_idx)
    feats[test_idx] = feats[order]
    labels_1h[test_idx] = labels_1h[order]
    feats = np.asarray(feats.todense(), dtype=np.float64)
    if row_normalise:
        s = feats.sum(1, keepdims=True)
        feats = feats / np.where(s > 0, s, 1.0)
    n = feats.shape[0]
    labels = labels_1h.argmax(1)
    edges = {(min(u, v), max(u, v)) for u, nbrs in graph.items() for v in nbrs if u != v}
    train = np.zeros(n, bool)
    train[: len(y)] = True
    val = np.zeros(n, bool)
    # validation never reaches into the test block
    val[len(y): min(len(y) + 500, allx.shape[0])] = True
    test = np.zeros(n, bool)
    test[test_idx] = True
    g = build_graph(sorted(edges), n, feats, labels, train, val, test)
    return DatasetBundle(g, name, global_homophily(g))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--raw", required=True, type=Path)
    ap.add_argument("--name", required=True, choices=["cora", "citeseer", "pubmed"])
    ap.add_argument("--out", required=True, type=Path)
    ap.add_argument("--row-normalise", action="store_true")
    a = ap.parse_args()
    save_dataset(convert(a.raw, a.name, a.row_normalise), a.out)
    b = load_dataset(a.out)  # validates the written files against the manifest
    g = b.graph
    print(f"{a.name}: n={g.n} edges={g.num_edges} classes={g.num_classes} "
          f"train/val/test={g.train_mask.sum()}/{g.val_mask.sum()}/{g.test_mask.sum()} "
          f"homophily={b.homophily_global:.3f}")


if __name__ == "__main__":
    main()

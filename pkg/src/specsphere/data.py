"""Dataset interchange files, synthetic SBM graphs, model files and metric logs."""
from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, ShapeError, ValidationError
from .graph import Graph, build_graph, local_homophily
from .model import ModelConfig, ModelParams, init_params


@dataclass(frozen=True)
class DatasetBundle:
    graph: Graph
    name: str
    homophily_global: float


def global_homophily(g: Graph) -> float:
    if g.num_edges == 0:
        return 0.0
    h = local_homophily(g, g.labels)
    return float(h[g.degrees() > 0].mean())


# ---------------------------------------------------------------- interchange

FILES = ("edges.txt", "features.csv", "labels.txt", "train_idx.txt", "val_idx.txt",
         "test_idx.txt", "manifest.json")


def _read_ints(path: Path) -> np.ndarray:
    text = path.read_text().split()
    try:
        return np.array([int(t) for t in text], dtype=np.int64)
    except ValueError as e:
        raise ValidationError(f"{path.name}: non-integer entry ({e})") from None


def _mask(idx: np.ndarray, n: int, name: str) -> np.ndarray:
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValidationError(f"{name}: index out of range for n={n}")
    m = np.zeros(n, dtype=bool)
    m[idx] = True
    return m


def load_dataset(path, name: str | None = None) -> DatasetBundle:
    """Read an interchange directory and cross-check it against its manifest."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"dataset directory {path} does not exist")
    for f in FILES:
        if not (path / f).is_file():
            raise FileNotFoundError(f"{path / f} is missing")
    manifest = json.loads((path / "manifest.json").read_text())
    n = int(manifest["num_nodes"])

    with open(path / "features.csv", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        feats = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as e:
        raise ValidationError(f"features.csv: {e}") from None
    if len({len(r) for r in rows}) > 1:
        raise ValidationError("features.csv: ragged rows")
    if feats.shape[0] != n:
        raise ValidationError(f"features.csv has {feats.shape[0]} rows, manifest says {n}")
    if "num_features" in manifest and feats.shape[1] != int(manifest["num_features"]):
        raise ValidationError("features.csv width differs from manifest")

    labels = _read_ints(path / "labels.txt")
    if labels.size != n:
        raise ValidationError(f"labels.txt has {labels.size} entries, manifest says {n}")
    ev = _read_ints(path / "edges.txt")
    if ev.size % 2:
        raise ValidationError("edges.txt: odd number of endpoints")
    edges = ev.reshape(-1, 2)
    try:
        g = build_graph(edges, n, feats, labels,
                        _mask(_read_ints(path / "train_idx.txt"), n, "train_idx"),
                        _mask(_read_ints(path / "val_idx.txt"), n, "val_idx"),
                        _mask(_read_ints(path / "test_idx.txt"), n, "test_idx"))
    except InputError as e:
        raise ValidationError(str(e)) from None

    checks = {
        "num_edge_entries": 2 * g.num_edges,
        "num_classes": g.num_classes,
        "num_train": int(g.train_mask.sum()),
        "num_val": int(g.val_mask.sum()),
        "num_test": int(g.test_mask.sum()),
    }
    for key, got in checks.items():
        if key in manifest and int(manifest[key]) != got:
            raise ValidationError(f"{key}: manifest says {manifest[key]}, files give {got}")
    name = name or manifest.get("name", path.name)
    return DatasetBundle(g, name, global_homophily(g))


def save_dataset(bundle: DatasetBundle, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    g = bundle.graph
    (path / "edges.txt").write_text("".join(f"{i} {j}\n" for i, j in g.edges()))
    buf = io.StringIO()
    for row in g.features:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    (path / "features.csv").write_text(buf.getvalue())
    (path / "labels.txt").write_text("".join(f"{int(v)}\n" for v in g.labels))
    for split, m in (("train", g.train_mask), ("val", g.val_mask), ("test", g.test_mask)):
        (path / f"{split}_idx.txt").write_text("".join(f"{i}\n" for i in np.flatnonzero(m)))
    manifest = {
        "name": bundle.name,
        "num_nodes": g.n,
        "num_features": g.num_features,
        "num_edge_entries": 2 * g.num_edges,
        "num_classes": g.num_classes,
        "num_train": int(g.train_mask.sum()),
        "num_val": int(g.val_mask.sum()),
        "num_test": int(g.test_mask.sum()),
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class SbmConfig:
    n: int = 200
    C: int = 2
    p_in: float = 0.05
    p_out: float = 0.01
    d: int = 16
    signal: float = 1.0
    seed: int = 0
    train_frac: float = 0.2
    val_frac: float = 0.2

    def __post_init__(self):
        if not (0 <= self.p_in <= 1 and 0 <= self.p_out <= 1):
            raise InputError("edge probabilities must lie in [0, 1]")
        if self.n < self.C or self.C < 1:
            raise InputError("need n >= C >= 1")
        if self.train_frac + self.val_frac > 1:
            raise InputError("train_frac + val_frac must not exceed 1")


def generate_sbm(cfg: SbmConfig) -> DatasetBundle:
    """Balanced stochastic block model with Gaussian class-mean features."""
    rng = np.random.default_rng(cfg.seed)
    labels = rng.permutation(np.arange(cfg.n) % cfg.C)
    iu, ju = np.triu_indices(cfg.n, 1)
    prob = np.where(labels[iu] == labels[ju], cfg.p_in, cfg.p_out)
    keep = rng.random(iu.size) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    means = rng.standard_normal((cfg.C, cfg.d))
    means *= cfg.signal / np.maximum(np.linalg.norm(means, axis=1, keepdims=True), 1e-12)
    x = means[labels] + rng.standard_normal((cfg.n, cfg.d)) / np.sqrt(cfg.d)
    order = rng.permutation(cfg.n)
    n_tr, n_va = int(round(cfg.train_frac * cfg.n)), int(round(cfg.val_frac * cfg.n))
    masks = [np.zeros(cfg.n, dtype=bool) for _ in range(3)]
    masks[0][order[:n_tr]] = True
    masks[1][order[n_tr:n_tr + n_va]] = True
    masks[2][order[n_tr + n_va:]] = True
    g = build_graph(edges, cfg.n, x, labels, *masks)
    name = f"sbm_n{cfg.n}_c{cfg.C}_pin{cfg.p_in}_pout{cfg.p_out}_s{cfg.seed}"
    return DatasetBundle(g, name, global_homophily(g))


def parse_sbm_spec(spec: str) -> SbmConfig:
    """``sbm:n=200,p_in=0.05,...`` -> SbmConfig."""
    body = spec.split(":", 1)[1] if ":" in spec else ""
    kw = {}
    types = {f: type(v) for f, v in SbmConfig().__dict__.items()}
    for item in filter(None, body.split(",")):
        if "=" not in item:
            raise InputError(f"bad sbm option {item!r}")
        k, v = item.split("=", 1)
        k = k.strip()
        if k not in types:
            raise InputError(f"unknown sbm option {k!r}")
        kw[k] = types[k](v)
    return SbmConfig(**kw)


# ---------------------------------------------------------------- model files

MAGIC = b"SSPHMDL\0"
VERSION = 1


def save_model(path, params: ModelParams) -> None:
    cfg = json.dumps(params.config.to_dict(), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(params.values)))
        for name, v in params.items():
            key = name.encode()
            rows, cols = v.shape
            fh.write(struct.pack("<I", len(key)) + key + struct.pack("<QQ", rows, cols))
            fh.write(np.ascontiguousarray(v.data, dtype="<f8").tobytes())


def load_model(path, into: ModelParams | None = None) -> ModelParams:
    """Read a model file; with ``into`` the file must match that architecture."""
    blob = Path(path).read_bytes()
    if blob[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a model file (bad magic bytes)")
    pos = len(MAGIC)
    try:
        version, clen = struct.unpack_from("<II", blob, pos)
        if version != VERSION:
            raise FormatError(f"{path}: model file version {version}, expected {VERSION}")
        pos += 8
        cfg = ModelConfig.from_dict(json.loads(blob[pos:pos + clen]))
        pos += clen
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        arrays = {}
        for _ in range(count):
            (klen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + klen].decode()
            pos += klen
            rows, cols = struct.unpack_from("<QQ", blob, pos)
            pos += 16
            nbytes = 8 * rows * cols
            if pos + nbytes > len(blob):
                raise FormatError(f"{path}: truncated block {name}")
            arrays[name] = np.frombuffer(blob, dtype="<f8", count=rows * cols,
                                         offset=pos).reshape(rows, cols).astype(np.float64)
            pos += nbytes
    except struct.error as e:
        raise FormatError(f"{path}: truncated header ({e})") from None
    params = into if into is not None else init_params(cfg)
    params.load_arrays(arrays)
    return params


# ---------------------------------------------------------------- metrics

def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True, allow_nan=True) + "\n")


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line]


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v

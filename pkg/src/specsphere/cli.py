"""Batch entry points: ``specsphere <command> [options]``.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error,
3 numerical abort. Outputs carry no timestamps so reruns are byte-identical.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .adversarial import AttackConfig, ThreatBudget
from .certify import certify, extract_constants
from .data import (DatasetBundle, generate_sbm, load_dataset, load_model, parse_sbm_spec,
                   read_jsonl, save_model, write_csv, write_jsonl)
from .errors import FormatError, InputError, NumericalError, ShapeError, ValidationError
from .expressivity import cfi_test
from .model import ModelConfig
from .spatial import SpatialConfig
from .spectral import SpectralConfig
from .training import (METRIC_KEYS, LossWeights, Perturbation, TrainConfig, default_budget,
                       evaluate, train)

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
DEFAULT_LAMBDA_ADV = (0.0, 0.1, 0.5, 1.0, 2.0)
DEFAULT_LAMBDA_CONS = (0.0, 1e-3, 0.01, 0.1, 1.0)
METATTACK_SUBSTITUTE = "greedy_edge_attack_(metattack_substitute)"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- config

def _coerce(value: str, like):
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"not a boolean: {value!r}")
    if like is None:
        return None if value.lower() in ("", "none") else float(value)
    try:
        return type(like)(value)
    except ValueError:
        raise UsageError(f"cannot parse {value!r} as {type(like).__name__}") from None


def _apply(obj, section: dict, name: str):
    fields = {f.name for f in dataclasses.fields(obj)}
    kw = {}
    for k, v in section.items():
        if k not in fields:
            raise UsageError(f"[{name}] has no option {k!r}")
        kw[k] = _coerce(v, getattr(obj, k))
    return dataclasses.replace(obj, **kw)


@dataclasses.dataclass
class RunConfig:
    spectral: SpectralConfig
    spatial: SpatialConfig
    gate_hidden: int
    gate_layers: int
    train: TrainConfig
    p: int | None
    eps: float
    lambda_adv: tuple
    lambda_cons: tuple


def load_config(path: str | None, args) -> RunConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # option names match dataclass fields exactly (steps_A)
    if path:
        if not Path(path).is_file():
            raise UsageError(f"config file {path} not found")
        try:
            cp.read(path)
        except configparser.Error as e:
            raise UsageError(f"config parse error: {e}") from None
    sec = {s: dict(cp[s]) for s in cp.sections()}
    known = {"spectral", "spatial", "model", "train", "attack", "loss", "budget", "sweep"}
    unknown = set(sec) - known
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    try:
        spectral = _apply(SpectralConfig(), sec.get("spectral", {}), "spectral")
        spatial = _apply(SpatialConfig(), sec.get("spatial", {}), "spatial")
        model = sec.get("model", {})
        gate_hidden = int(model.pop("gate_hidden", 32))
        gate_layers = int(model.pop("gate_layers", 2))
        if model:
            raise UsageError(f"[model] has no options {sorted(model)}")
        attack = _apply(AttackConfig(), sec.get("attack", {}), "attack")
        weights = _apply(LossWeights(), sec.get("loss", {}), "loss")
        tsec = dict(sec.get("train", {}))
        tc = _apply(TrainConfig(), tsec, "train")
        budget = sec.get("budget", {})
        p = int(budget["p"]) if "p" in budget else None
        eps = float(budget.get("eps", 0.1))
        sweep = sec.get("sweep", {})
        ladv = tuple(float(v) for v in sweep.get(
            "lambda_adv", ",".join(map(str, DEFAULT_LAMBDA_ADV))).split(","))
        lcons = tuple(float(v) for v in sweep.get(
            "lambda_cons", ",".join(map(str, DEFAULT_LAMBDA_CONS))).split(","))
    except (ValueError, TypeError) as e:
        raise UsageError(f"invalid configuration: {e}") from None

    # command-line flags override the file
    if args.variant:
        spatial = dataclasses.replace(spatial, variant=args.variant)
    if args.joint_period is not None:
        attack = dataclasses.replace(attack, joint_period=args.joint_period)
    if args.lambda_adv is not None:
        weights = dataclasses.replace(weights, lambda_adv=args.lambda_adv)
        ladv = (args.lambda_adv,)
    if args.lambda_cons is not None:
        weights = dataclasses.replace(weights, lambda_cons=args.lambda_cons)
        lcons = (args.lambda_cons,)
    if args.p is not None:
        p = args.p[0]
    if args.eps is not None:
        eps = args.eps[0]
    if args.epochs is not None:
        tc = dataclasses.replace(tc, epochs=args.epochs)
    tc = dataclasses.replace(tc, attack=attack, weights=weights)
    return RunConfig(spectral, spatial, gate_hidden, gate_layers, tc, p, eps, ladv, lcons)


def load_data(spec: str | None) -> DatasetBundle:
    if not spec:
        raise UsageError("--data is required")
    if spec.startswith("sbm"):
        return generate_sbm(parse_sbm_spec(spec))
    if not Path(spec).is_dir():
        raise UsageError(f"dataset path {spec} does not exist")
    return load_dataset(spec)


def model_config(rc: RunConfig, bundle: DatasetBundle, mode: str = "fused") -> ModelConfig:
    g = bundle.graph
    return ModelConfig(g.num_features, g.num_classes, rc.spectral, rc.spatial,
                       rc.gate_hidden, rc.gate_layers, mode=mode)


def run_budget(rc: RunConfig, bundle: DatasetBundle) -> ThreatBudget:
    p = default_budget(bundle.graph).p if rc.p is None else rc.p
    return ThreatBudget(p, rc.eps)


def _out(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seeds(args) -> list[int]:
    return list(args.seed) if args.seed else [0]


def _mean_std(values) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std())


# ---------------------------------------------------------------- commands

def _train_one(rc: RunConfig, bundle, seed: int, mode: str = "fused"):
    tc = dataclasses.replace(rc.train, seed=seed, budget=run_budget(rc, bundle),
                             attack=dataclasses.replace(rc.train.attack, seed=seed))
    return train(bundle.graph, model_config(rc, bundle, mode), tc)


def cmd_train(args) -> int:
    rc = load_config(args.config, args)
    bundle = load_data(args.data)
    out = _out(args)
    rows = []
    for seed in _seeds(args):
        res = _train_one(rc, bundle, seed)
        save_model(out / f"model_seed{seed}.ssm", res.params)
        write_jsonl(out / f"metrics_seed{seed}.jsonl", res.log)
        test = evaluate(res.params, bundle.graph)
        rows.append([seed, res.best_epoch, res.best_val, test])
    vals, tests = [r[2] for r in rows], [r[3] for r in rows]
    (vm, vs), (tm, ts) = _mean_std(vals), _mean_std(tests)
    write_csv(out / "summary.csv", ["seed", "best_epoch", "val_acc", "test_acc"],
              rows + [["mean", "", vm, tm], ["std", "", vs, ts]])
    print(f"trained {len(rows)} seed(s): test accuracy {tm:.4f} +- {ts:.4f}")
    return EXIT_OK


def _model_files(path: str | None) -> list[tuple[int, Path]]:
    if not path:
        raise UsageError("--model is required")
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("model_seed*.ssm"))
    elif p.is_file():
        files = [p]
    else:
        raise UsageError(f"model path {path} does not exist")
    if not files:
        raise UsageError(f"no model files under {path}")
    out = []
    for i, f in enumerate(files):
        stem = f.stem
        seed = int(stem.split("seed")[-1]) if "seed" in stem else i
        out.append((seed, f))
    return out


def _load_matched(path: Path, rc: RunConfig, bundle):
    params = load_model(path)
    cfg = params.config
    g = bundle.graph
    if cfg.in_dim != g.num_features or cfg.n_classes != g.num_classes:
        raise ShapeError(f"{path}: model expects {cfg.in_dim} features / {cfg.n_classes} "
                         f"classes, data has {g.num_features} / {g.num_classes}")
    return params


def cmd_evaluate(args) -> int:
    rc = load_config(args.config, args)
    bundle = load_data(args.data)
    out = _out(args)
    rows = []
    pert = Perturbation("drop_edge", args.drop_edge) if args.drop_edge is not None else None
    for seed, f in _model_files(args.model):
        params = _load_matched(f, rc, bundle)
        acc = evaluate(params, bundle.graph, perturbation=pert, attack=rc.train.attack)
        rows.append([seed, acc])
    write_csv(out / "evaluate.csv", ["seed", "test_acc"], rows)
    for seed, acc in rows:
        print(f"seed {seed}: test accuracy {acc:.4f}")
    return EXIT_OK


def cmd_attack(args) -> int:
    rc = load_config(args.config, args)
    bundle = load_data(args.data)
    out = _out(args)
    budget = run_budget(rc, bundle)
    header = ["seed", "clean", "drop_edge_0.2", f"{METATTACK_SUBSTITUTE}_p{budget.p}",
              f"pgd_feature_eps{budget.eps}"]
    rows = []
    for seed, f in _model_files(args.model):
        params = _load_matched(f, rc, bundle)
        g = bundle.graph
        atk = dataclasses.replace(rc.train.attack, seed=seed)
        rows.append([
            seed,
            evaluate(params, g),
            evaluate(params, g, perturbation=Perturbation("drop_edge", 0.2, seed)),
            evaluate(params, g, perturbation=Perturbation("pgd_edge", budget.p, seed), attack=atk),
            evaluate(params, g, perturbation=Perturbation("pgd_feature", budget.eps, seed),
                     attack=atk),
        ])
    write_csv(out / "attack.csv", header, rows)
    print(",".join(header))
    for r in rows:
        print(",".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in r))
    return EXIT_OK


def cmd_certify(args) -> int:
    rc = load_config(args.config, args)
    bundle = load_data(args.data)
    out = _out(args)
    ps = args.p if args.p else [0, 1, 3]
    epss = args.eps if args.eps else [0.0, 0.01, 0.05]
    seed, f = _model_files(args.model)[0]
    params = _load_matched(f, rc, bundle)
    g = bundle.graph
    consts = extract_constants(params, g.features)
    rows, grid = [], []
    for p in sorted(ps):
        for eps in sorted(epss):
            rep = certify(params, g, ThreatBudget(int(p), float(eps)), consts=consts)
            rows += [[c.node, c.margin, c.bound, c.certified, c.p, c.eps]
                     for c in rep.certificates]
            grid.append({"p": int(p), "eps": float(eps), "z_bound": rep.z_bound,
                         "certified_fraction": rep.certified_fraction})
    write_csv(out / "certificates.csv", ["node", "margin", "bound", "certified", "p", "eps"], rows)
    summary = {"model": f.name, "logit_factor": rep.factor, "grid": grid,
               "constants": dataclasses.asdict(consts)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for cell in grid:
        print(f"p={cell['p']} eps={cell['eps']}: certified {cell['certified_fraction']:.4f}")
    return EXIT_OK


def _sweep_cell(payload):
    rc, data_spec, ladv, lcons, seeds = payload
    bundle = load_data(data_spec)
    accs = []
    for seed in seeds:
        w = dataclasses.replace(rc.train.weights, lambda_adv=ladv, lambda_cons=lcons)
        rc_cell = dataclasses.replace(rc, train=dataclasses.replace(rc.train, weights=w))
        res = _train_one(rc_cell, bundle, seed)
        accs.append(evaluate(res.params, bundle.graph,
                             perturbation=Perturbation("drop_edge", 0.2, seed)))
    m, s = _mean_std(accs)
    return [ladv, lcons, m, s, len(seeds)]


def cmd_sweep(args) -> int:
    rc = load_config(args.config, args)
    load_data(args.data)  # fail fast on a bad dataset
    out = _out(args)
    seeds = list(args.seed) if args.seed else [0, 1, 2]
    cells = [(rc, args.data, a, c, seeds) for a in rc.lambda_adv for c in rc.lambda_cons]
    workers = max(1, int(os.environ.get("SPECSPHERE_THREADS", "1")))
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as ex:
            rows = list(ex.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    rows.sort(key=lambda r: (r[0], r[1]))
    write_csv(out / "sweep.csv",
              ["lambda_adv", "lambda_cons", "drop_edge_0.2_acc_mean", "drop_edge_0.2_acc_std",
               "seeds"], rows)
    print(f"sweep: {len(rows)} cells written")
    return EXIT_OK


def cmd_cfi_test(args) -> int:
    rep = cfi_test(K=args.K, isomorphic=args.isomorphic)
    if args.out:
        out = _out(args)
        (out / "cfi_report.json").write_text(
            json.dumps({"checks": rep.checks, "details": rep.details}, indent=2,
                       sort_keys=True) + "\n")
    for name, ok in rep.checks.items():
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    if "error" in rep.details:
        print(rep.details["error"])
    if rep.passed:
        print(f"cfi-test passed: ||Z(G) - Z(G')||_inf = {rep.details['z_inf_distance']:.3e}")
        return EXIT_OK
    print(f"cfi-test failed: {', '.join(rep.failing())}")
    return EXIT_CHECK


def cmd_report(args) -> int:
    """Collect every CSV/JSONL artifact under --out into one JSON digest."""
    out = _out(args)
    digest = {}
    for f in sorted(out.glob("*.csv")):
        lines = f.read_text().splitlines()
        digest[f.name] = {"header": lines[0].split(",") if lines else [], "rows": len(lines) - 1}
    for f in sorted(out.glob("metrics_seed*.jsonl")):
        log = read_jsonl(f)
        last = log[-1] if log else {}
        digest[f.name] = {"epochs": len(log),
                          "final": {k: last.get(k) for k in METRIC_KEYS if k in last}}
    (out / "report.json").write_text(json.dumps(digest, indent=2, sort_keys=True) + "\n")
    print(json.dumps(digest, indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "attack": cmd_attack,
    "certify": cmd_certify,
    "sweep": cmd_sweep,
    "cfi-test": cmd_cfi_test,
    "report": cmd_report,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="specsphere", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--data", help="interchange directory or sbm:key=value,... spec")
    ap.add_argument("--config", help="INI file with [spectral] [spatial] [train] ... sections")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--model", help="model file or directory of model_seed*.ssm files")
    ap.add_argument("--seed", type=int, nargs="+")
    ap.add_argument("--p", type=int, nargs="+", help="edge-flip budget(s)")
    ap.add_argument("--eps", type=float, nargs="+", help="feature budget(s)")
    ap.add_argument("--lambda-adv", type=float)
    ap.add_argument("--lambda-cons", type=float)
    ap.add_argument("--variant", choices=["gat", "fagcn"])
    ap.add_argument("--joint-period", type=int)
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--drop-edge", type=float, help="evaluate: drop-edge rate")
    ap.add_argument("--K", type=int, help="cfi-test: Chebyshev order")
    ap.add_argument("--isomorphic", action="store_true",
                    help="cfi-test: substitute a relabelled copy (expected to fail)")
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, ValidationError, FormatError, ShapeError, InputError,
            ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

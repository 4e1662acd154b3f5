"""DropEdge-20% accuracy over a (lambda_adv, lambda_cons) grid; thin wrapper over the CLI.

Example: SPECSPHERE_THREADS=4 python3 scripts/lambda_sweep.py --data sbm:n=200 --out runs/sweep
"""
import argparse
import csv
import sys

from specsphere.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", default="sbm:n=200,p_in=0.01,p_out=0.05")
    ap.add_argument("--config")
    ap.add_argument("--out", required=True)
    ap.add_argument("--epochs", type=int, default=100)
    a = ap.parse_args()
    argv = ["sweep", "--data", a.data, "--out", a.out, "--epochs", str(a.epochs)]
    if a.config:
        argv += ["--config", a.config]
    code = cli_main(argv)
    if code:
        sys.exit(code)
    with open(f"{a.out}/sweep.csv") as f:
        rows = list(csv.DictReader(f))
    best = max(rows, key=lambda r: float(r["drop_edge_0.2_acc_mean"]))
    print(f"best cell: lambda_adv={best['lambda_adv']} lambda_cons={best['lambda_cons']} "
          f"acc={float(best['drop_edge_0.2_acc_mean']):.4f}")


if __name__ == "__main__":
    main()

"""Desk-scale benchmark: simulate runs, train every architecture, render the tables.

Full size (12 runs, 6 architectures, 20 trials, 3 seeds) takes hours on one
core; the defaults below finish in minutes.

    python3 scripts/desk_benchmark.py --out bench --runs 4 --trials 2 --epochs 10
"""

import argparse
import sys
from pathlib import Path

from thermosurrogate.cli import main as cli


def run(argv):
    print("$ thermosurrogate", " ".join(argv), flush=True)
    code = cli(argv)
    if code:
        sys.exit(code)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="bench")
    p.add_argument("--runs", type=int, default=4)
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--arch", default="all")
    p.add_argument("--trials", type=int, default=2)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--quantity", default="both")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--generalised", action="store_true", help="also run leave-one-out")
    a = p.parse_args()

    out = Path(a.out)
    data = out / "data"
    run(["simulate", "--runs", str(a.runs), "--steps", str(a.steps), "--seed", str(a.seed), "--out", str(data)])
    protocols = ["specialised", "generalised"] if a.generalised else ["specialised"]
    for protocol in protocols:
        run(["train", "--data", str(data), "--arch", a.arch, "--protocol", protocol,
             "--search", f"trials={a.trials}" if a.trials else "none", "--epochs", str(a.epochs),
             "--seeds", a.seeds, "--quantity", a.quantity, "--seed", str(a.seed),
             "--out", str(out / protocol)])
    run(["benchmark", "--data", str(out), "--out", str(out / "report")])
    print((out / "report" / "report.txt").read_text(encoding="utf-8"))


if __name__ == "__main__":
    main()

"""Run the three directional ablations over several seeds and print a flagged report.

Writes one CSV per comparison through the ``ablate`` command.
"""

import argparse
import csv
import json
import logging
from pathlib import Path

from jointslu.ablate import directional_grids, directions
from jointslu.cli import main as cli_main


def read_summary(path: Path) -> dict[str, dict[str, float]]:
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return {r["cell"]: {k: float(r[k]) for k in ("precision", "recall", "slu_f1", "intent_acc")}
            for r in csv.DictReader(lines) if r["seed"] == "mean"}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="base RunConfig JSON (defaults to the desk model)")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--out", default="runs/ablations")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stage = {"epochs": args.epochs, "lr": args.lr, "lr_schedule": "cosine"}
    summary = {}
    for name, grid in directional_grids(stage).items():
        (out / f"{name}.grid.json").write_text(json.dumps(grid, indent=2))
        argv = ["ablate", "--grid", str(out / f"{name}.grid.json"), "--seeds", args.seeds, "--out", str(out / name)]
        if args.config:
            argv += ["--config", args.config]
        if cli_main(argv) != 0:
            raise SystemExit(f"ablation {name} failed")
        summary.update(read_summary(out / name / "ablation.csv"))
    for d in directions(summary):
        print(d.line())


if __name__ == "__main__":
    main()

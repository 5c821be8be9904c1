"""Run the shipped ablation grids (chunk size, auxiliary tokens x mask, SPD init)."""

import argparse
import os
from dataclasses import replace

from morphopolicy.cli import load_grid
from morphopolicy.evaluation import aggregate_report, summary_csv
from morphopolicy.training import run_ablation

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
GRIDS = {
    "chunk": "ablate_chunk.json",
    "akt": "ablate_akt.json",
    "spd_init": "ablate_spd_init.json",
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("which", choices=sorted(GRIDS) + ["all"])
    ap.add_argument("--steps", type=int, default=None, help="override the grid's step count")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default="ablations")
    args = ap.parse_args()

    names = sorted(GRIDS) if args.which == "all" else [args.which]
    os.makedirs(args.out, exist_ok=True)
    for name in names:
        grid = load_grid(os.path.join(ROOT, "configs", GRIDS[name]))
        if args.steps is not None:
            grid = [replace(e, train=replace(e.train, steps=args.steps)) for e in grid]
        if args.seed is not None:
            grid = [replace(e, train=replace(e.train, seed=args.seed), policy=replace(e.policy, seed=args.seed))
                    for e in grid]
        reports = run_ablation(grid, progress=None)
        rows = aggregate_report(reports)
        text = summary_csv(rows)
        print(f"== {name}\n{text}")
        with open(os.path.join(args.out, f"{name}.csv"), "w", encoding="utf-8") as fh:
            fh.write(text)


if __name__ == "__main__":
    main()

"""Baseline vs. KT + mix_mask + FiLM on the chain-6 task across seeds."""

import argparse
import json
import os
from dataclasses import replace

from morphopolicy.training import load_experiment, run_experiment

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=None)
    ap.add_argument("--baseline", default=os.path.join(ROOT, "configs", "chain6_baseline.json"))
    ap.add_argument("--variant", default=os.path.join(ROOT, "configs", "chain6_kt_mix_film.json"))
    ap.add_argument("--out", default=None, help="write a JSON summary here")
    args = ap.parse_args()

    configs = [load_experiment(args.baseline), load_experiment(args.variant)]
    rows = []
    for seed in args.seeds:
        losses = {}
        for exp in configs:
            exp = replace(exp, train=replace(exp.train, seed=seed), policy=replace(exp.policy, seed=seed))
            if args.steps is not None:
                exp = replace(exp, train=replace(exp.train, steps=args.steps))
            report, _ = run_experiment(exp)
            losses[exp.name] = report.mean_val_loss
            print(f"seed={seed} {exp.name}: {report.mean_val_loss:.5f} ({report.runtime_s:.1f}s)", flush=True)
        base, var = (losses[c.name] for c in configs)
        rows.append({"seed": seed, "baseline": base, "variant": var, "variant_wins": var < base})
    wins = sum(r["variant_wins"] for r in rows)
    print(f"variant wins on {wins}/{len(rows)} seeds")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"rows": rows, "wins": wins}, fh, indent=2)


if __name__ == "__main__":
    main()

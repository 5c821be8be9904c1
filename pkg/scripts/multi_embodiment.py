"""Two-robot co-training at an 8:2 sampling ratio, baseline vs. full morphology stack."""

import argparse
import os
from dataclasses import replace

import numpy as np

from morphopolicy.training import load_experiment, run_experiment

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

VARIANTS = {
    "baseline": dict(kt_enabled=False, mask_mode="no_mask", film_enabled=False),
    "kt": dict(kt_enabled=True, mask_mode="no_mask", film_enabled=False),
    "kt+mix": dict(kt_enabled=True, mask_mode="mix_mask", film_enabled=False),
    "kt+mix+film": dict(kt_enabled=True, mask_mode="mix_mask", film_enabled=True),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=os.path.join(ROOT, "configs", "panda_so101_mix.json"))
    ap.add_argument("--steps", type=int, default=None)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    base = load_experiment(args.config)
    for name, overrides in VARIANTS.items():
        exp = replace(base, name=name, policy=replace(base.policy, seed=args.seed, **overrides),
                      train=replace(base.train, seed=args.seed))
        if args.steps is not None:
            exp = replace(exp, train=replace(exp.train, steps=args.steps))
        report, _ = run_experiment(exp)
        per = " ".join(f"{k}={v:.5f}" for k, v in report.final_val_loss.items())
        print(f"{name:12s} {per} macro={np.mean(list(report.final_val_loss.values())):.5f}", flush=True)


if __name__ == "__main__":
    main()

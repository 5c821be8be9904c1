"""Train under mix_mask, then continue under spd_softmask from each table init."""

import argparse
import os
import tempfile
from dataclasses import replace

from morphopolicy.policy import save_checkpoint, warm_start
from morphopolicy.topo_attention import SPD_INITS
from morphopolicy.training import build_datasets, load_experiment, run_experiment, train, validation_loss

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=os.path.join(ROOT, "configs", "chain6_kt_mix_film.json"))
    ap.add_argument("--pre-steps", type=int, default=500)
    ap.add_argument("--post-steps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    exp = load_experiment(args.config)
    exp = replace(exp, train=replace(exp.train, steps=args.pre_steps, seed=args.seed),
                  policy=replace(exp.policy, seed=args.seed))
    report, model = run_experiment(exp)
    print(f"pretrained ({exp.policy.mask_mode}): val {report.mean_val_loss:.5f}")
    datasets = build_datasets(exp)
    weights = [e.weight for e in exp.embodiments]
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "pre.json")
        save_checkpoint(model, path)
        for init in SPD_INITS:
            warm = warm_start(path, spd_init=init)
            before = sum(validation_loss(warm, d) for d in datasets) / len(datasets)
            warm, _ = train(warm, datasets, weights, replace(exp.train, steps=args.post_steps))
            after = sum(validation_loss(warm, d) for d in datasets) / len(datasets)
            print(f"spd init={init:7s} val at load {before:.5f} -> after {args.post_steps} steps {after:.5f}")


if __name__ == "__main__":
    main()

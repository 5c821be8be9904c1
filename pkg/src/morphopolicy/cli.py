"""Command-line entry point: ``morphopolicy {graph,mask,gen,train,ablate,eval}``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import torch

from . import topo_attention as ta
from .evaluation import TrialOutcome, aggregate_report, macro_sr, summary_csv, wilson_interval
from .morphology import (
    DESCRIPTOR_FIELDS,
    MorphologyError,
    adjacency_indicator,
    load_robot_spec,
    morphology_to_dict,
    shortest_path_distances,
)
from .policy import ConfigError, _atomic_write_text, save_checkpoint
from .training import (
    ExperimentConfig,
    RunReport,
    build_datasets,
    build_model,
    expand_grid,
    load_experiment,
    run_experiment,
    set_path,
)

OUT_ENV = "MORPHOPOLICY_OUT"

MODE_ALIASES = {
    "none": "no_mask", "no_mask": "no_mask",
    "full": "full_mask", "full_mask": "full_mask",
    "mix": "mix_mask", "mix_mask": "mix_mask",
    "spd": "spd_softmask", "spd_softmask": "spd_softmask",
    "adj-v1.0": "adj_softmask_v10", "adj_softmask_v10": "adj_softmask_v10",
    "adj-v1.1": "adj_softmask_v11", "adj_softmask_v11": "adj_softmask_v11",
    "adj-v2.0": "adj_softmask_v20", "adj_softmask_v20": "adj_softmask_v20",
}


class CliError(Exception):
    pass


def _write_json(path: str, obj) -> None:
    _atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def _out_dir(args) -> str:
    out = args.out or os.environ.get(OUT_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_spec(path: str):
    if not os.path.exists(path):
        raise CliError(f"spec not found: {path}")
    try:
        return load_robot_spec(path)
    except MorphologyError as exc:
        raise CliError(f"{path}: {exc}") from exc


def _load_experiment(path: str) -> ExperimentConfig:
    if not os.path.exists(path):
        raise CliError(f"config not found: {path}")
    return load_experiment(path)


def _fmt(x: float) -> str:
    return str(int(x)) if x == int(x) else repr(x)


# -- graph --------------------------------------------------------------------


def cmd_graph(args) -> int:
    m = _load_spec(args.spec)
    M = adjacency_indicator(m)
    spd = shortest_path_distances(m)
    print(f"name={m.name} J={m.num_joints} d_max={spd.d_max}")
    print("edges=" + json.dumps([list(e) for e in sorted(m.edges)]))
    for j, d in enumerate(m.descriptors):
        fields_ = " ".join(f"{k}={_fmt(getattr(d, k))}" for k in DESCRIPTOR_FIELDS)
        print(f"joint {j}: {fields_}")
    if args.out:
        _write_json(args.out, {
            "spec": morphology_to_dict(m),
            "seed": args.seed,
            "J": m.num_joints,
            "d_max": spd.d_max,
            "adjacency": M.tolist(),
            "spd": spd.matrix.tolist(),
        })
    return 0


# -- mask ---------------------------------------------------------------------


def joint_bias_for(mode: str, m, layers: int, layer: int, init: str | None, strength: float,
                   theta_max: float, d_max: int | None = None) -> torch.Tensor:
    if not 0 <= layer < layers:
        raise CliError(f"--layer {layer} out of range for --layers {layers}")
    M = adjacency_indicator(m)
    if mode in ta.HARD_MODES:
        if init is not None:
            raise CliError(f"--init is not valid with hard mode {mode}")
        sched = ta.layer_schedule(mode, layers)
        return ta.hard_bias(M) if sched[layer] == "masked" else torch.zeros(M.shape, dtype=torch.float64)
    if mode == "spd_softmask":
        spd = shortest_path_distances(m)
        width = max(d_max if d_max is not None else spd.d_max, 1)
        table = ta.init_spd_table(init or "zero", layers, width, strength)
        return ta.spd_bias(table, spd, layer)
    variant = ta.ADJ_VARIANTS[mode]
    if init not in (None, "zero", "hard"):
        raise CliError(f"--init {init} is not valid with {mode}; use zero or hard")
    theta = ta.init_adj_theta(variant, layers, m.num_joints, init or "zero", theta_max, strength)
    return ta.adj_soft_bias(ta.AdjSoftParams(variant, theta, theta_max), M, layer)


def cmd_mask(args) -> int:
    m = _load_spec(args.spec)
    mode = MODE_ALIASES.get(args.mode)
    if mode is None:
        raise CliError(f"unknown --mode {args.mode}")
    B = joint_bias_for(mode, m, args.layers, args.layer, args.init, args.strength, args.theta_max, args.dmax)
    payload = {
        "spec": args.spec,
        "name": m.name,
        "mode": mode,
        "layers": args.layers,
        "layer": args.layer,
        "init": args.init,
        "strength": args.strength,
        "theta_max": args.theta_max,
        "seed": args.seed,
        "matrix": ta.to_jsonable(B),
    }
    if args.sequence:
        layout = ta.SequenceLayout(args.n_obs, args.n_action, m.num_joints, args.G, args.M)
        payload["layout"] = {"n_obs": args.n_obs, "n_action": args.n_action, "J": m.num_joints,
                             "G": args.G, "M": args.M}
        payload["sequence_mask"] = ta.to_jsonable(ta.compose_sequence_mask(layout, B))
    text = json.dumps(payload, indent=None if args.compact else 2) + "\n"
    if args.out:
        _atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# -- gen / train / ablate -----------------------------------------------------


def _apply_overrides(exp: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "steps", None) is not None:
        exp = replace(exp, train=replace(exp.train, steps=args.steps))
    if args.seed is not None:
        exp = replace(exp, train=replace(exp.train, seed=args.seed), policy=replace(exp.policy, seed=args.seed))
    return exp


def cmd_gen(args) -> int:
    exp = _apply_overrides(_load_experiment(args.config), args).validate()
    out = _out_dir(args)
    datasets = build_datasets(exp)
    for spec, data in zip(exp.embodiments, datasets):
        _write_json(os.path.join(out, f"data_{data.name}.json"), {
            "config": exp.to_dict(),
            "seed": spec.seed,
            "embodiment": data.name,
            "spec": morphology_to_dict(data.morphology),
            "train": {"obs": data.train_obs.tolist(), "actions": data.train_actions.tolist()},
            "val": {"obs": data.val_obs.tolist(), "actions": data.val_actions.tolist()},
        })
    print(f"wrote {len(datasets)} dataset file(s) to {out}")
    return 0


def _write_run(out: str, report: RunReport, model=None) -> None:
    os.makedirs(out, exist_ok=True)
    _atomic_write_text(os.path.join(out, "metrics.csv"), report.metrics_csv)
    _write_json(os.path.join(out, "report.json"), report.to_dict())
    if model is not None:
        save_checkpoint(model, os.path.join(out, "checkpoint.json"),
                        extra={"experiment": report.config, "seed": report.seed})


def cmd_train(args) -> int:
    exp = _apply_overrides(_load_experiment(args.config), args).validate()
    out = _out_dir(args)
    if args.init_only:
        model = build_model(exp, build_datasets(exp))
        save_checkpoint(model, os.path.join(out, "checkpoint.json"), extra={"experiment": exp.to_dict()})
        return 0
    report, model = run_experiment(exp)
    _write_run(out, report, model)
    print(f"{report.name}: mean_val_loss={report.mean_val_loss:.6f} ({report.runtime_s:.1f}s) -> {out}")
    return 0


def load_grid(path: str) -> list[ExperimentConfig]:
    """Grid file: ``{"base": <experiment>, "grid": {"policy.G": [1, 2], ...}}`` or
    ``{"base": ..., "cells": [{"policy.G": 1, ...}, ...]}``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    base_dir = os.path.dirname(os.path.abspath(path))
    base = ExperimentConfig.from_dict(doc.get("base", {}), base_dir=base_dir)
    if "cells" in doc:
        grid = []
        for cell in doc["cells"]:
            exp = base
            parts = []
            for k, v in cell.items():
                exp = set_path(exp, k, v)
                parts.append(f"{k.split('.')[-1]}={v}")
            grid.append(replace(exp, name="__".join([base.name] + parts)))
        return grid
    return expand_grid(base, doc.get("grid", {}))


def cmd_ablate(args) -> int:
    if not os.path.exists(args.config):
        raise CliError(f"config not found: {args.config}")
    grid = load_grid(args.config)
    if args.steps is not None or args.seed is not None:
        grid = [_apply_overrides(exp, args) for exp in grid]
    errors = []
    for exp in grid:
        errors += [f"{exp.name}: {e}" for e in exp.errors()]
    if errors:
        raise ConfigError("invalid ablation grid: " + "; ".join(errors))
    out = _out_dir(args)
    reports = []
    for exp in grid:
        report, _ = run_experiment(exp)
        _write_run(os.path.join(out, exp.name), report)
        _write_json(os.path.join(out, f"report_{exp.name}.json"), report.to_dict())
        reports.append(report)
        print(f"{exp.name}: mean_val_loss={report.mean_val_loss:.6f}")
    rows = aggregate_report(reports) if reports else []
    _atomic_write_text(os.path.join(out, "summary.csv"), summary_csv(rows))
    _write_json(os.path.join(out, "summary.json"), {"grid": args.config, "rows": rows,
                                                    "configs": [e.to_dict() for e in grid]})
    return 0


# -- eval ---------------------------------------------------------------------


def cmd_eval(args) -> int:
    if args.k is not None or args.n is not None:
        if args.k is None or args.n is None:
            raise CliError("--k and --n must be given together")
        res = wilson_interval(TrialOutcome(args.k, args.n), args.confidence)
        print(res.format_pct())
        if args.out:
            _write_json(args.out, {"k": args.k, "n": args.n, "confidence": args.confidence, "seed": args.seed,
                                   "sr": res.sr, "lo": res.lo, "hi": res.hi, "half_width": res.half_width})
        return 0
    if args.macro:
        print(f"{macro_sr(args.macro):.6g}")
        return 0
    if args.reports:
        reports = []
        for path in args.reports:
            with open(path, encoding="utf-8") as fh:
                reports.append(json.load(fh))
        rows = aggregate_report(reports, args.metric, args.higher_is_better)
        text = summary_csv(rows)
        if args.out:
            base, _ = os.path.splitext(args.out)
            _atomic_write_text(base + ".csv", text)
            _write_json(base + ".json", {"rows": rows, "reports": args.reports})
        sys.stdout.write(text)
        return 0
    raise CliError("eval needs --k/--n, --macro, or --reports")


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)

    p = argparse.ArgumentParser(prog="morphopolicy", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("graph", parents=[common], help="inspect a robot-description file")
    g.add_argument("spec")
    g.add_argument("--out")
    g.set_defaults(func=cmd_graph)

    m = sub.add_parser("mask", parents=[common], help="emit a joint-to-joint attention bias as JSON")
    m.add_argument("spec")
    m.add_argument("--mode", required=True, choices=sorted(MODE_ALIASES))
    m.add_argument("--layers", type=int, default=2)
    m.add_argument("--layer", type=int, default=0)
    m.add_argument("--init", choices=list(ta.SPD_INITS))
    m.add_argument("--strength", type=float, default=3.0)
    m.add_argument("--theta-max", type=float, default=5.0)
    m.add_argument("--dmax", type=int, help="SPD table distance range (defaults to the graph diameter)")
    m.add_argument("--sequence", action="store_true", help="also emit the full sequence mask")
    m.add_argument("--n-obs", type=int, default=2)
    m.add_argument("--n-action", type=int, default=4)
    m.add_argument("--G", type=int, default=1)
    m.add_argument("--M", type=int, default=0)
    m.add_argument("--compact", action="store_true")
    m.add_argument("--out")
    m.set_defaults(func=cmd_mask)

    for name, func, helptext in (("gen", cmd_gen, "generate synthetic datasets"),
                                 ("train", cmd_train, "train one experiment"),
                                 ("ablate", cmd_ablate, "run an ablation grid")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("config")
        s.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
        if name != "gen":
            s.add_argument("--steps", type=int)
        if name == "train":
            s.add_argument("--init-only", action="store_true", help="write the initialized checkpoint and exit")
        s.set_defaults(func=func)

    e = sub.add_parser("eval", parents=[common], help="success-rate statistics and report tables")
    e.add_argument("--k", type=int)
    e.add_argument("--n", type=int)
    e.add_argument("--confidence", type=float, default=0.95)
    e.add_argument("--macro", type=float, nargs="+")
    e.add_argument("--reports", nargs="+")
    e.add_argument("--metric", default="mean_val_loss")
    e.add_argument("--higher-is-better", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, MorphologyError, ta.MaskError, ValueError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {args.command}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

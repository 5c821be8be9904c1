"""Acceptance criteria, one test each, at the stated tolerances and runtime budgets.

Every test prints a single ``[Cn] PASS|FAIL`` line; the lines are repeated in
the terminal summary.
"""

import itertools
import math
import os
import random
import time
from dataclasses import replace

import numpy as np
import pytest
import torch

import conftest
from morphopolicy import topo_attention as ta
from morphopolicy.conditioning import FilmGenerator, generate, modulate
from morphopolicy.evaluation import TrialOutcome, macro_sr, wilson_interval
from morphopolicy.gradcheck import check_model_gradients
from morphopolicy.morphology import JointDescriptor, adjacency_indicator, make_morphology, shortest_path_distances
from morphopolicy.policy import PolicyConfig, PolicyModel, save_checkpoint, warm_start
from morphopolicy.robots import chain
from morphopolicy.tokenization import ChunkSpec, chunk_actions, token_count, unchunk_actions
from morphopolicy.training import (
    SyntheticTask,
    TrainConfig,
    build_dataset,
    load_experiment,
    run_experiment,
    sample_batch,
    train,
)

from oracles import floyd_warshall, random_connected_graph

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


def report(n, ok, detail, elapsed, budget):
    within = elapsed < budget
    line = f"[C{n}] {'PASS' if ok and within else 'FAIL'} {detail} ({elapsed:.2f}s, budget {budget:g}s)"
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)
    assert ok, line
    assert within, line


def graph(n, edges):
    return make_morphology("g", n, edges, [JointDescriptor()] * n)


# (SR %, published half-width %), n = 300
WILSON_PAIRS = [(19.7, 4.5), (47.4, 5.6), (36.0, 5.4), (28.0, 5.0),
                (67.7, 5.3), (6.0, 2.7), (77.7, 4.7), (24.7, 4.9)]


def test_c1_wilson():
    t0 = time.perf_counter()
    worst = 0.0
    for sr, delta in WILSON_PAIRS:
        k = round(sr * 3)
        worst = max(worst, abs(100 * wilson_interval(TrialOutcome(k, 300)).half_width - delta))
    report(1, worst <= 0.1, f"Wilson half-widths, max |diff| = {worst:.3f}pp over {len(WILSON_PAIRS)} pairs",
           time.perf_counter() - t0, 1)


def test_c2_macro():
    t0 = time.perf_counter()
    v = macro_sr([0.21, 0.10])
    report(2, v == 0.155, f"macro_sr(0.21, 0.10) = {v!r}", time.perf_counter() - t0, 1)


def test_c3_spd_oracle():
    t0 = time.perf_counter()
    rng = random.Random(2024)
    bad = 0
    for _ in range(100):
        n = rng.randint(1, 12)
        edges = random_connected_graph(n, rng, extra_edge_prob=rng.choice([0.0, 0.1, 0.3]))
        if not np.array_equal(shortest_path_distances(graph(n, edges)).matrix, floyd_warshall(n, edges)):
            bad += 1
    report(3, bad == 0, f"SPD vs Floyd-Warshall, {bad}/100 mismatches", time.perf_counter() - t0, 5)


def test_c4_masks():
    t0 = time.perf_counter()
    failures = []
    rng = random.Random(7)
    for trial in range(30):
        n = rng.randint(2, 10)
        m = graph(n, random_connected_graph(n, rng))
        M = adjacency_indicator(m)
        spd = shortest_path_distances(m)
        hb = ta.hard_bias(M)
        # hard-mask zero law
        if not (torch.equal(hb == 0, torch.as_tensor(M) == 1) and torch.isneginf(hb[torch.as_tensor(M) == 0]).all()):
            failures.append("hard zero law")
        # soft-mask neutrality
        g = torch.Generator().manual_seed(trial)
        q, k, v = (torch.randn(2, n, 4, generator=g, dtype=torch.float64) for _ in range(3))
        zero = ta.spd_bias(torch.zeros(2, spd.d_max + 1, dtype=torch.float64), spd, 0)
        if not (torch.equal(ta.biased_attention(q, k, v, zero)[0], ta.biased_attention(q, k, v, None)[0])):
            failures.append("spd neutrality")
        # permutation equivariance
        perm = list(range(n))
        rng.shuffle(perm)
        pm = m.permuted(perm)
        PM, pspd = adjacency_indicator(pm), shortest_path_distances(pm)
        table = torch.randn(1, spd.d_max + 1, generator=g, dtype=torch.float64)
        pairs = [
            (ta.hard_bias(PM), ta.hard_bias(M)),
            (ta.spd_bias(table, pspd, 0), ta.spd_bias(table, spd, 0)),
        ]
        for variant, theta in (("v1.0", torch.full((1, n, n), 0.7)), ("v1.1", torch.tensor([0.4])),
                               ("v2.0", torch.tensor([-1.3]))):
            p = ta.AdjSoftParams(variant, theta.double())
            pairs.append((ta.adj_soft_bias(p, PM, 0), ta.adj_soft_bias(p, M, 0)))
        for permuted, base in pairs:
            if not torch.equal(permuted, ta.permute_matrix(base, perm)):
                failures.append("equivariance")
        off = torch.as_tensor(M) == 0
        if off.any():
            b10 = ta.adj_soft_bias(ta.AdjSoftParams("v1.0", torch.zeros(1, n, n, dtype=torch.float64)), M, 0)
            if not ((b10[off] == -1).all() and (b10[~off] == 0).all()):
                failures.append("v1.0 theta=0")
            clamp = ta.adj_soft_bias(ta.AdjSoftParams("v1.1", torch.tensor([50.0], dtype=torch.float64), 5.0), M, 0)
            if not (clamp[off] == -math.exp(5.0)).all():
                failures.append("clamp")
            v20 = ta.adj_soft_bias(ta.AdjSoftParams("v2.0", torch.tensor([-2.0], dtype=torch.float64)), M, 0)
            if not (v20[off] == 2.0).all():
                failures.append("v2.0 sign")
    for L in range(1, 33):
        if ta.layer_schedule("mix_mask", L).count("masked") != math.ceil(L / 2):
            failures.append(f"mix parity L={L}")
    report(4, not failures, f"mask suite, {len(failures)} failures {sorted(set(failures))}",
           time.perf_counter() - t0, 5)


def test_c5_round_trip_and_counts():
    t0 = time.perf_counter()
    ok = True
    rng = np.random.default_rng(5)
    for H in (8, 16, 32):
        A = rng.standard_normal((H, 7))
        for G in [g for g in range(1, H + 1) if H % g == 0]:
            spec = ChunkSpec(H, G)
            tok = chunk_actions(A, spec)
            ok &= tok.shape == (7, G, H // G)
            ok &= unchunk_actions(tok, spec).tobytes() == A.tobytes()
    for M in (0, 1, 2):
        for J in (1, 6, 8):
            for G in (1, 2, 4, 16):
                ok &= token_count(J, G, M) == J * G * (1 + M)
                ok &= ta.SequenceLayout(2, 16, J, G, M).n_kin == J * G * (1 + M)
    report(5, bool(ok), "chunk/unchunk identity and token counts", time.perf_counter() - t0, 5)


def test_c6_film_identity():
    t0 = time.perf_counter()
    g = torch.Generator().manual_seed(6)
    gen = FilmGenerator(16).double()
    z = torch.randn(1000, 16, generator=g, dtype=torch.float64) * 10
    s = torch.randn(1000, 12, generator=g, dtype=torch.float64) * 10
    out = modulate(z, generate(gen, s))
    ok = out.detach().numpy().tobytes() == z.numpy().tobytes()
    report(6, ok, "zero-init FiLM identity on 1000 draws", time.perf_counter() - t0, 1)


def test_c7_gradients():
    t0 = time.perf_counter()
    worst, where = 0.0, None
    combos = list(itertools.product([False, True],
                                    ["no_mask", "full_mask", "mix_mask", "spd_softmask", "adj_softmask_v20"],
                                    [False, True]))
    for kt, mode, film in combos:
        cfg = PolicyConfig(d=16, L=2, heads=2, H=8, J_max=4, obs_dim=4, kt_enabled=kt, mask_mode=mode,
                           film_enabled=film, G=2, M_aux=1 if kt else 0)
        errors = check_model_gradients(PolicyModel(cfg), chain(4))
        name = max(errors, key=errors.get)
        if errors[name] > worst:
            worst, where = errors[name], (kt, mode, film, name)
    report(7, worst < 1e-4, f"max relative FD error {worst:.2e} over {len(combos)} configs (worst {where})",
           time.perf_counter() - t0, 120)


def test_c8_freeze():
    t0 = time.perf_counter()
    cfg = PolicyConfig(d=16, L=2, heads=2, H=8, J_max=4, obs_dim=4, kt_enabled=True, mask_mode="mix_mask",
                       film_enabled=True)
    model = PolicyModel(cfg)
    ds = [build_dataset(SyntheticTask(chain(4), obs_dim=4, H=8), 64, 8)]
    before = {k: v.clone() for k, v in model.state_dict().items()}
    train(model, ds, [1.0], TrainConfig(steps=100, batch_size=8, finetune_mode="AP-FT"))
    after = model.state_dict()
    frozen = all(torch.equal(before[k], after[k]) for k in before if model.partition_of(k) == "backbone")
    moved = sum(not torch.equal(before[k], after[k]) for k in before if model.partition_of(k) == "action")
    report(8, frozen and moved > 0, f"backbone unchanged={frozen}, action tensors changed={moved}",
           time.perf_counter() - t0, 60)


def test_c9_sampler_ratio():
    t0 = time.perf_counter()
    ds = [build_dataset(SyntheticTask(chain(3)), 8, 2), build_dataset(SyntheticTask(chain(2)), 8, 2)]
    rng = np.random.default_rng(9)
    first = sum(sample_batch([0.8, 0.2], ds, 1, rng)[0] == 0 for _ in range(10_000)) / 10_000
    report(9, abs(first - 0.8) <= 0.02, f"first-embodiment frequency {first:.4f}", time.perf_counter() - t0, 5)


DIRECTION_SEEDS = (0, 1, 2)


@pytest.mark.slow
def test_c10_direction():
    t0 = time.perf_counter()
    base = load_experiment(os.path.join(CONFIGS, "chain6_baseline.json"))
    morph = load_experiment(os.path.join(CONFIGS, "chain6_kt_mix_film.json"))
    wins, rows = 0, []
    for seed in DIRECTION_SEEDS:
        losses = []
        for exp in (base, morph):
            exp = replace(exp, train=replace(exp.train, seed=seed), policy=replace(exp.policy, seed=seed))
            losses.append(run_experiment(exp)[0].mean_val_loss)
        wins += losses[1] < losses[0]
        rows.append(f"s{seed}: {losses[0]:.5f} vs {losses[1]:.5f}")
    report(10, wins >= 2, f"morphology config wins {wins}/3 ({'; '.join(rows)})", time.perf_counter() - t0, 600)


def test_c11_determinism():
    t0 = time.perf_counter()
    exp = load_experiment(os.path.join(CONFIGS, "panda_so101_mix.json"))
    exp = replace(exp, train=replace(exp.train, steps=150))
    a = run_experiment(exp)[0].metrics_csv
    b = run_experiment(exp)[0].metrics_csv
    report(11, a == b and a.count("\n") == 151, "bitwise-identical metrics CSV across two runs",
           time.perf_counter() - t0, 120)


def test_c12_warm_start(tmp_path):
    t0 = time.perf_counter()
    exp = load_experiment(os.path.join(CONFIGS, "chain6_kt_mix_film.json"))
    exp = replace(exp, train=replace(exp.train, steps=50))
    _, model = run_experiment(exp)
    path = tmp_path / "mix.json"
    save_checkpoint(model, path)
    warm = warm_start(path, spd_init="mix")
    shared = all(torch.equal(p, warm.state_dict()[k]) for k, p in model.state_dict().items())
    table_ok = torch.equal(warm.spd_table.detach(),
                           ta.init_spd_table("mix", warm.config.L, warm.config.spd_width - 1).double())
    ds = [build_dataset(SyntheticTask(chain(6)), 512, 128)]
    _, log = train(warm, ds, [1.0], TrainConfig(steps=200, batch_size=16))
    finite = all(math.isfinite(r[2]) for r in log.rows) and len(log.rows) == 200
    report(12, shared and table_ok and finite,
           f"shared tensors preserved={shared}, table init ok={table_ok}, 200 finite steps={finite}",
           time.perf_counter() - t0, 120)

"""Acceptance suite: one PASS/FAIL line per criterion at the pinned tolerances.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines print even when
output capture is on.
"""
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from batchensemble.cli import main
from batchensemble.core import SeededRng
from batchensemble.data import corrupt, split_tasks, subsample
from batchensemble.experiments import BlobSpec, VariantSpec, blob_splits, predict_variant, summarize, train_variant
from batchensemble.gradcheck import REL_TOL, run_suite
from batchensemble.layers import BatchEnsembleLayer, be_forward
from batchensemble.lifelong import evaluate_lifelong, param_overhead, task_logits, train_sequence
from batchensemble.metrics import accuracy, diversity_profile, ece
from batchensemble.model import Model, build_mlp
from batchensemble.training import TrainConfig, train

SEEDS = range(5)
SPEC = BlobSpec()
VSPEC = VariantSpec()
RECIPE = TrainConfig(batch_size=128, epochs=40, base_lr=0.1, weight_decay=1e-4)
TREND_VARIANTS = ("single", "batch_ensemble", "mc_dropout", "naive_ensemble")


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return report


def test_criterion_01_vectorized_forward_matches_per_example(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    rng = SeededRng(2024)
    for k in range(100):
        r = rng.child(k)
        m, n, B = (int(v) for v in r.integers(1, 17, size=3))
        M = int((1, 2, 4)[k % 3])
        layer = BatchEnsembleLayer(r.child(0).normal(size=(m, n)), r.child(1).normal(size=(M, m)),
                                   r.child(2).normal(size=(M, n)), r.child(3).normal(size=(M, n)))
        X = r.child(4).normal(size=(B, m))
        assign = r.child(5).integers(0, M, size=B)
        _, cache = be_forward(layer, X, assign)
        ref = np.stack([X[b] @ (layer.W * np.outer(layer.fast_r[i], layer.fast_s[i])) + layer.params["bias"][i]
                        for b, i in enumerate(assign)])
        worst = max(worst, float(np.max(np.abs(cache.A - ref))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-12 and elapsed < 5.0
    verdict(1, ok, f"max abs diff {worst:.2e} (< 1e-12), {elapsed:.2f}s (< 5s)")
    assert ok


def test_criterion_02_gradients_match_finite_differences(verdict):
    t0 = time.perf_counter()
    worst, groups = run_suite(50, seed=0)
    elapsed = time.perf_counter() - t0
    ok = worst <= REL_TOL and elapsed < 30.0
    top = max(groups, key=groups.get)
    verdict(2, ok, f"max rel err {worst:.2e} in {top} over {len(groups)} groups (<= 1e-6), {elapsed:.1f}s (< 30s)")
    assert ok


def test_criterion_03_m1_reduces_to_dense_trajectory(verdict):
    spec = BlobSpec(n_classes=4, train_per_class=60, test_per_class=10, dim=8, spread=1.0)
    data, _ = blob_splits(spec, 0)
    dense = build_mlp([8, 16, 16, 4], seed=3)
    be = Model([BatchEnsembleLayer(L.params["W"], np.ones((1, L.params["W"].shape[0])),
                                   np.ones((1, L.params["W"].shape[1])), L.params["b"][None, :],
                                   activation=L.activation) for L in dense.layers])
    cfg = TrainConfig(batch_size=12, epochs=5, seed=1)
    # fast weights held at 1 so the member weight stays equal to W
    slow_only = {k: None for k in be.param_keys() if k[2] in ("W", "bias")}
    traj_d, traj_b = [], []
    train(dense, data, cfg, on_step=lambda s, m: traj_d.append(m.state()))
    train(be, data, cfg, trainable=slow_only, on_step=lambda s, m: traj_b.append(m.state()))
    worst = 0.0
    for sd, sb in zip(traj_d, traj_b):
        for i in range(3):
            worst = max(worst, float(np.max(np.abs(sd[("layer", i, "W")] - sb[("layer", i, "W")]))),
                        float(np.max(np.abs(sd[("layer", i, "b")] - sb[("layer", i, "bias")][0]))))
    ok = len(traj_d) == len(traj_b) == 100 and worst <= 1e-10
    verdict(3, ok, f"{len(traj_d)} steps, max per-parameter deviation {worst:.2e} (<= 1e-10)")
    assert ok


def test_criterion_04_parameter_accounting(verdict):
    widths = [784, 128, 128, 10]
    model = build_mlp(widths, kind="batch_ensemble", ensemble_size=4, seed=0)
    shared = sum(m * n for m, n in zip(widths, widths[1:]))
    extra = sum(4 * (m + 2 * n) for m, n in zip(widths, widths[1:]))
    be = param_overhead(model)
    naive = param_overhead(build_mlp(widths, seed=0), T=4, scheme="naive")
    ok = (be["shared_params"] == shared and be["member_params"] == extra
          and be["overhead_fraction"] == extra / shared and naive["overhead_fraction"] == 3.0)
    verdict(4, ok, f"BatchEnsemble overhead {extra}/{shared} = {be['overhead_fraction']:.4%}, "
                   f"naive {naive['overhead_fraction']:.0%}")
    assert ok


@pytest.fixture(scope="module")
def trend_runs():
    """Clean and level-5 metrics for every trend variant and seed, plus per-variant wall time."""
    out = {v: [] for v in TREND_VARIANTS}
    seconds = dict.fromkeys(TREND_VARIANTS, 0.0)
    for seed in SEEDS:
        tr, te = blob_splits(SPEC, seed)
        noisy = corrupt(te, 5, seed)
        for v in TREND_VARIANTS:
            t0 = time.perf_counter()
            models = train_variant(v, tr, RECIPE, VSPEC, seed)
            seconds[v] += time.perf_counter() - t0
            clean = summarize(predict_variant(v, models, te.features, VSPEC, seed), te.labels)
            hit = summarize(predict_variant(v, models, noisy.features, VSPEC, seed), noisy.labels)
            out[v].append({"accuracy": clean["accuracy"], "ece5": hit["ece"]})
    return out, seconds


def _median(runs, v, key):
    return float(np.median([r[key] for r in runs[v]]))


@pytest.mark.slow
def test_criterion_05_accuracy_trend(verdict, trend_runs):
    runs, seconds = trend_runs
    acc = {v: _median(runs, v, "accuracy") for v in TREND_VARIANTS}
    pp = 0.003
    checks = [acc["naive_ensemble"] >= acc["batch_ensemble"],
              acc["batch_ensemble"] >= acc["single"] - pp,
              acc["batch_ensemble"] >= acc["mc_dropout"] - pp,
              max(seconds.values()) < 600]
    ok = all(checks)
    verdict(5, ok, "median acc " + ", ".join(f"{v} {a:.4f}" for v, a in acc.items())
            + f"; slowest variant {max(seconds.values()):.0f}s (< 600s)")
    assert ok


@pytest.mark.slow
def test_criterion_06_zero_forgetting(verdict):
    totals = []
    be_zero = True
    bit_identical = True
    cfg = TrainConfig(batch_size=128, epochs=10, seed=0)
    for seed in SEEDS:
        tr, te = blob_splits(SPEC, seed)
        tasks = split_tasks(tr, 5, seed, test=te)
        seen = {}

        def snap(t, lm):
            seen[t] = task_logits(lm, tasks[t], t).copy()

        be = train_sequence(tasks, replace(cfg, ensemble_size=5, seed=seed),
                            method="batch_ensemble", on_task_end=snap)
        rep = evaluate_lifelong(be, tasks)
        be_zero &= all(f == 0.0 for f in rep.forgetting)
        bit_identical &= all(task_logits(be, tasks[t], t).tobytes() == seen[t].tobytes() for t in range(5))
        van = train_sequence(tasks, replace(cfg, seed=seed), method="vanilla")
        totals.append(evaluate_lifelong(van, tasks).total_forgetting)
    med = float(np.median(totals))
    ok = be_zero and bit_identical and med > 0
    verdict(6, ok, f"BatchEnsemble forgetting all 0: {be_zero}, logits bit-identical: {bit_identical}; "
                   f"vanilla median total forgetting {med:.4f} (> 0)")
    assert ok


def test_criterion_07_ece_units(verdict):
    probs = np.array([[0.9, 0.1 / 3, 0.1 / 3, 0.1 / 3], [0.8, 0.2 / 3, 0.2 / 3, 0.2 / 3],
                      [0.4, 0.2, 0.2, 0.2], [0.3, 0.25, 0.25, 0.2]])
    hand = ece(probs, np.array([0, 1, 0, 2]), 2).ece
    worst = 0.0
    g = np.random.default_rng(7)
    for _ in range(200):
        n, C = int(g.integers(1, 50)), int(g.integers(2, 8))
        z = np.exp(g.normal(size=(n, C)) * 2)
        p = z / z.sum(axis=1, keepdims=True)
        y = g.integers(0, C, size=n)
        worst = max(worst, abs(ece(p, y, 1).ece - abs(accuracy(p, y) - p.max(axis=1).mean())))
    ok = abs(hand - 0.25) <= 1e-12 and worst <= 1e-12
    verdict(7, ok, f"hand-built case {hand!r} (0.25 within 1e-12); single-bin gap error {worst:.1e}")
    assert ok


@pytest.mark.slow
def test_criterion_08_calibration_under_corruption(verdict, trend_runs):
    runs, _ = trend_runs
    e = {v: _median(runs, v, "ece5") for v in ("single", "batch_ensemble", "naive_ensemble")}
    a = e["batch_ensemble"] <= e["single"]
    b = e["naive_ensemble"] <= e["batch_ensemble"] + 0.02
    ok = a and b
    verdict(8, ok, f"level-5 median ECE single {e['single']:.4f}, batch_ensemble {e['batch_ensemble']:.4f}, "
                   f"naive_ensemble {e['naive_ensemble']:.4f}; BE <= single: {a}, naive <= BE + 0.02: {b}")
    assert ok


@pytest.mark.slow
def test_criterion_09_diversity_on_limited_data(verdict):
    div = {v: [] for v in ("batch_ensemble", "mc_dropout", "naive_ensemble")}
    for seed in SEEDS:
        tr, te = blob_splits(SPEC, seed)
        part = subsample(tr, 0.1, seed)
        for v in div:
            models = train_variant(v, part, RECIPE, VSPEC, seed)
            bundle = predict_variant(v, models, te.features, VSPEC, seed)
            pts = diversity_profile(bundle.member_labels, te.labels)
            div[v].append(float(np.median([p.raw for p in pts[1:]])))
    med = {v: float(np.median(d)) for v, d in div.items()}
    ok = med["batch_ensemble"] >= med["mc_dropout"] and med["naive_ensemble"] >= med["batch_ensemble"] - 0.02
    verdict(9, ok, "median raw disagreement vs base " + ", ".join(f"{v} {d:.4f}" for v, d in med.items()))
    assert ok


DET_CONFIG = """
[data]
kind = blobs
n_classes = 4
train_per_class = 40
test_per_class = 20
dim = 6

[model]
hidden = 12
ensemble_size = 2
mc_samples = 3

[train]
batch_size = 16
epochs = 2

[compare]
variants = single, batch_ensemble, mc_dropout, naive_ensemble, naive_small

[lifelong]
tasks = 2
hidden = 8

[diversity]
fractions = 1.0, 0.5

[corrupt]
levels = 1, 5
checkpoint_dir = {ckpt}
export_probs = yes
"""


def _tree(d):
    out = {}
    for root, _, files in os.walk(d):
        for f in files:
            full = os.path.join(root, f)
            with open(full, "rb") as fh:
                out[os.path.relpath(full, d)] = fh.read()
    return out


def test_criterion_10_cli_determinism(verdict, tmp_path):
    cfg = tmp_path / "det.ini"
    cfg.write_text(DET_CONFIG.format(ckpt=tmp_path / "run0" / "compare" / "checkpoints"))
    commands = ("train", "compare", "lifelong", "diversity", "corrupt")
    differing = []
    n_files = 0
    for run in ("run0", "run1"):
        for command in commands:
            code = main([command, "--config", str(cfg), "--seed", "0,1", "--out", str(tmp_path / run / command)])
            assert code == 0, (run, command)
    for command in commands:
        a, b = _tree(tmp_path / "run0" / command), _tree(tmp_path / "run1" / command)
        n_files += len(a)
        if a.keys() != b.keys() or any(a[k] != b[k] for k in a):
            differing.append(command)
    ok = not differing and n_files > 0
    verdict(10, ok, f"{n_files} files across {len(commands)} commands byte-identical on rerun"
            if ok else f"differing outputs: {differing}")
    assert ok

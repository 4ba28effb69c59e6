"""Acceptance criteria, one test each.

Every test prints a single PASS/FAIL line with the measured value, the
tolerance and the runtime; the lines are repeated in the terminal summary.
"""

import os
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import report_criterion
from lunar import classic
from lunar.cli import main
from lunar.dataset import load_csv, split, write_csv
from lunar.evaluation import (
    TOY_CENTERS,
    BenchConfig,
    contour_grid,
    fit_unsupervised_lunar,
    run_benchmark,
    toy_dataset,
)
from lunar.metrics import auc
from lunar.model import TrainConfig, init_model, score_normalized, train
from lunar.negatives import NegativeConfig
from lunar.neighbors import build_graph
from oracles import auc_pairs, lof_direct, random_isometry
from test_model import _fd_check

TOY_K = (2, 10, 50, 100)
SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="session")
def toy_bench():
    """KNN and LUNAR over the k sweep; shared by the robustness and ablation checks."""
    t0 = time.perf_counter()
    rep = run_benchmark(toy_dataset(0), ["knn", "lunar"], TOY_K, SEEDS)
    return rep, time.perf_counter() - t0


def test_criterion_01_engine_matches_closed_form_knn():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(100):
        m, d = int(rng.integers(6, 61)), int(rng.integers(1, 5))
        k = int(rng.integers(1, 6))
        train_x = rng.normal(size=(m, d))
        g = build_graph(train_x, rng.normal(size=(int(rng.integers(1, 20)), d)), k, False)
        if classic.score_knn(g, k).tobytes() != g.neighbor_dist[:, k - 1].copy().tobytes():
            mismatches += 1
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and dt < 1.0
    report_criterion(1, ok, f"KNN engine vs k-th distance: {mismatches}/100 mismatches (exact, <1s)", dt)
    assert ok


def test_criterion_02_lof_matches_direct():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        d, k = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        train_x = rng.normal(size=(int(rng.integers(k + 2, 40)), d))
        test_x = rng.normal(size=(10, d)) * 1.5
        tg = build_graph(train_x, train_x, k, True)
        g = build_graph(train_x, test_x, k, False)
        diff = np.abs(classic.score_lof(tg, g, k) - lof_direct(train_x, test_x, k))
        worst = max(worst, float(diff.max()))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and dt < 5.0
    report_criterion(2, ok, f"LOF vs direct: max |diff| {worst:.2e} (<=1e-9, <5s)", dt)
    assert ok


def test_criterion_03_equivariance():
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    parts = split(toy_dataset(0, n_per_cluster=40, n_uniform=6), seed=0)
    cfg = TrainConfig(k=5, epochs=20, hidden_width=16, hidden_depth=2)
    trained = train(parts.train, parts.validation, NegativeConfig(), cfg)
    specs = [classic.get_spec(n, 0.8, 3) for n in classic.CLASSIC_DETECTORS]
    worst = {s.name: 0.0 for s in specs}
    worst["lunar"] = 0.0
    for _ in range(20):
        d = int(rng.integers(1, 5))
        train_x, test_x = rng.normal(size=(40, d)), rng.normal(size=(12, d)) * 2
        q, t = random_isometry(rng, d)
        for spec in specs:
            a = classic.score_points(spec, train_x, test_x, 5)
            b = classic.score_points(spec, train_x @ q + t, test_x @ q + t, 5)
            worst[spec.name] = max(worst[spec.name], float(np.abs(a - b).max()))
        q2, t2 = random_isometry(rng, 2)
        pts = rng.random((30, 2))
        moved = replace(trained, train_matrix=trained.train_matrix @ q2 + t2)
        diff = score_normalized(trained, pts) - score_normalized(moved, pts @ q2 + t2)
        worst["lunar"] = max(worst["lunar"], float(np.abs(diff).max()))
    dt = time.perf_counter() - t0
    top = max(worst.values())
    ok = top <= 1e-7 and dt < 10.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report_criterion(3, ok, f"equivariance max |diff| {top:.2e} (<=1e-7, <10s): {detail}", dt)
    assert ok


def test_criterion_04_gradient_check():
    t0 = time.perf_counter()
    worst = 0.0
    for case in range(50):
        rng = np.random.default_rng(4000 + case)
        depth = (1, 2, 4)[case % 3]
        k = int(rng.integers(1, 6))
        dims = (k, *[int(rng.integers(2, 8)) for _ in range(depth - 1)], 1)
        m = init_model(dims, case)
        for b in m.biases:
            b[...] = rng.normal(size=b.shape) * 0.3
        x = rng.normal(size=(int(rng.integers(1, 9)), k))
        y = rng.integers(0, 2, size=len(x)).astype(float)
        worst = max(worst, _fd_check(m, x, y))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-5 and dt < 30.0
    report_criterion(4, ok, f"gradient check: max relative error {worst:.2e} (<=1e-5, <30s)", dt)
    assert ok


def test_criterion_05_auc_oracle():
    rng = np.random.default_rng(505)
    t0 = time.perf_counter()
    mismatches = 0
    for i in range(100):
        n = int(rng.integers(2, 201))
        s = rng.integers(0, 10, size=n).astype(float) if i % 2 else rng.random(n)
        y = np.r_[0, 1, rng.integers(0, 2, size=n - 2)]
        mismatches += auc(s, y) != auc_pairs(s, y)
    dt = time.perf_counter() - t0
    ok = mismatches == 0
    report_criterion(5, ok, f"rank AUC vs pair enumeration: {mismatches}/100 mismatches (exact)", dt)
    assert ok


@pytest.mark.slow
@pytest.mark.parametrize("k", [10, 100])
def test_criterion_06_toy_contours(k):
    data = toy_dataset(0)
    t0 = time.perf_counter()
    trained, scores = fit_unsupervised_lunar(data, NegativeConfig(), TrainConfig(k=k))
    top20 = np.argsort(-scores, kind="stable")[:20]
    hits = int(data.labels[top20].sum())
    grid = contour_grid(trained, bounds=(0.0, 1.0), resolution=5)
    at = {(round(x, 2), round(y, 2)): s for x, y, s in grid}
    centers = float(np.mean([at[c] for c in TOY_CENTERS]))
    corners = float(np.mean([at[c] for c in ((0, 0), (0, 1), (1, 0), (1, 1))]))
    dt = time.perf_counter() - t0
    ok = hits >= 12 and centers < corners and dt < 120
    report_criterion(
        6, ok,
        f"toy k={k}: {hits}/15 uniform points in top 20 (>=12); "
        f"center mean {centers:.3f} < corner mean {corners:.3f} (<2 min)", dt,
    )
    assert ok


@pytest.mark.slow
def test_criterion_07_robustness_over_k(toy_bench):
    rep, dt = toy_bench
    assert not rep.failures, rep.failures
    knn_range, lunar_range = rep.auc_range("knn"), rep.auc_range("lunar")
    means = rep.aggregates()
    detail = "; ".join(
        f"k={k}: knn {means[('knn', k)][0]:.3f} lunar {means[('lunar', k)][0]:.3f}" for k in TOY_K
    )
    ok = lunar_range <= knn_range
    report_criterion(
        7, ok,
        f"AUC range over k: lunar {lunar_range:.4f} {'<=' if ok else '>'} knn {knn_range:.4f} "
        f"(required <=; {detail})", dt,
    )
    assert ok


PENDIGITS = os.environ.get("LUNAR_PENDIGITS_CSV")


@pytest.mark.slow
def test_criterion_08_pendigits_spot_check():
    if not PENDIGITS:
        reason = "no data: set LUNAR_PENDIGITS_CSV to a labelled PENDIGITS CSV to run"
        report_criterion(8, None, reason, 0.0)
        pytest.skip(reason)
    data = load_csv(PENDIGITS, os.environ.get("LUNAR_PENDIGITS_LABEL", "label"))
    t0 = time.perf_counter()
    rep = run_benchmark(data, ["lunar"], [100], SEEDS)
    dt = time.perf_counter() - t0
    mean = 100 * rep.aggregates()[("lunar", 100)][0]
    ok = abs(mean - 99.81) <= 2.0 and dt < 900
    report_criterion(8, ok, f"PENDIGITS k=100 mean AUC {mean:.2f} (99.81 +/- 2.0, <15 min)", dt)
    assert ok


@pytest.mark.slow
def test_criterion_09_negative_mix_ablation(toy_bench):
    rep, _ = toy_bench
    data = toy_dataset(0)
    t0 = time.perf_counter()
    means = {"mixed": np.mean([rep.cells[("lunar", 10, s)] for s in SEEDS])}
    for mix in ("uniform_only", "subspace_only"):
        cfg = BenchConfig(negatives=NegativeConfig(mix=mix))
        other = run_benchmark(data, ["lunar"], [10], SEEDS, cfg)
        assert not other.failures, other.failures
        means[mix] = other.aggregates()[("lunar", 10)][0]
    dt = time.perf_counter() - t0
    floor = min(means["uniform_only"], means["subspace_only"]) - 0.02
    ok = means["mixed"] >= floor
    report_criterion(
        9, ok,
        f"k=10 mean AUC over 5 seeds: mixed {means['mixed']:.4f} >= {floor:.4f} "
        f"(uniform {means['uniform_only']:.4f}, subspace {means['subspace_only']:.4f}, minus 0.02)", dt,
    )
    assert ok


def test_criterion_10_cli_determinism(tmp_path):
    data = tmp_path / "toy.csv"
    write_csv(toy_dataset(0), data)
    common = ["--data", str(data), "--label-col", "label", "--k", "10",
              "--epochs", "10", "--hidden-width", "32", "--hidden-depth", "2"]
    t0 = time.perf_counter()
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["fit", *common, "--out", str(out / "fit")]) == 0
        assert main(["score", "--model", str(out / "fit" / "model.npz"), "--data", str(data),
                     "--label-col", "label", "--out", str(out / "scores.csv")]) == 0
        assert main(["bench", *common, "--detector", "knn,lof,lunar", "--k", "5,10",
                     "--seeds", "0,1", "--out", str(out / "bench")]) == 0
    files = ["fit/model.npz", "fit/history.csv", "scores.csv", "bench/cells.csv", "bench/summary.csv"]
    differ = [f for f in files
              if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    dt = time.perf_counter() - t0
    ok = not differ
    report_criterion(
        10, ok, f"fit/score/bench reruns: {len(files) - len(differ)}/{len(files)} outputs "
        f"byte-identical{' (differ: ' + ', '.join(differ) + ')' if differ else ''}", dt,
    )
    assert ok

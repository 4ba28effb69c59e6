"""Benchmark harness, toy data and contour grids.

A benchmark cell is one (detector, k, seed) triple: the dataset is split with
the seed, normalized with training statistics, the detector is fitted on the
training normals and the test set is scored. Cells fail independently; a
failure is recorded in the report instead of aborting the sweep.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from lunar import classic
from lunar.dataset import Dataset, apply_normalizer, fit_normalizer, make_rng, split
from lunar.metrics import auc, auc_pairwise  # noqa: F401  (re-exported)
from lunar.model import TrainConfig, TrainedModel, score, score_training, train
from lunar.negatives import NegativeConfig

logger = logging.getLogger(__name__)

TOY_CENTERS = ((0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75))


def toy_dataset(
    seed: int = 0,
    n_per_cluster: int = 250,
    centers=TOY_CENTERS,
    sigma: float = 0.05,
    n_uniform: int = 15,
) -> Dataset:
    """Four isotropic Gaussian clusters (label 0) plus uniform noise (label 1)."""
    rng = make_rng(seed)
    blobs = [
        rng.normal(loc=c, scale=sigma, size=(n_per_cluster, 2)) for c in centers
    ]
    noise = rng.uniform(0.0, 1.0, size=(n_uniform, 2))
    x = np.concatenate([*blobs, noise])
    y = np.concatenate([np.zeros(len(x) - n_uniform), np.ones(n_uniform)])
    return Dataset(x, y.astype(np.int64), feature_names=("x", "y"))


def lattice(bounds, resolution: int) -> np.ndarray:
    """``resolution``^2 points, x varying slowest."""
    (x0, x1), (y0, y1) = _bounds2(bounds)
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def _bounds2(bounds):
    b = np.asarray(bounds, dtype=np.float64)
    if b.shape == (2,):
        b = np.stack([b, b])
    if b.shape != (2, 2):
        raise ValueError("bounds must be (low, high) or one pair per axis")
    return b


def contour_grid(scorer, bounds=(0.0, 1.0), resolution: int = 50) -> np.ndarray:
    """Evaluate a 2-D scorer on a lattice.

    Args:
        scorer: A :class:`TrainedModel` or any callable mapping an (n, 2)
            array to n scores.

    Returns:
        (resolution^2, 3) array of ``(x, y, score)`` rows.
    """
    if isinstance(scorer, TrainedModel):
        if scorer.normalizer.d != 2:
            raise ValueError(f"contour grids need a 2-D scorer, model has d={scorer.normalizer.d}")
        fn = lambda pts: score(scorer, pts)  # noqa: E731
    else:
        d = getattr(scorer, "d", 2)
        if d != 2:
            raise ValueError(f"contour grids need a 2-D scorer, got d={d}")
        fn = scorer
    pts = lattice(bounds, resolution)
    return np.column_stack([pts, np.asarray(fn(pts), dtype=np.float64)])


def write_grid_csv(grid: np.ndarray, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "score"])
        for x, y, s in grid:
            w.writerow([repr(float(x)), repr(float(y)), repr(float(s))])


class ClassicScorer:
    """A fitted classic detector usable as a contour-grid scorer."""

    def __init__(self, spec: classic.DetectorSpec, train: np.ndarray, k: int):
        self.spec = spec
        self.train = np.asarray(train, dtype=np.float64)
        self.k = k
        self.d = self.train.shape[1]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return classic.score_points(self.spec, self.train, points, self.k)


def fit_unsupervised_lunar(
    data: Dataset,
    neg_cfg: NegativeConfig,
    cfg: TrainConfig,
) -> tuple[TrainedModel, np.ndarray]:
    """Train LUNAR on every row of ``data`` (labels ignored) and score each row.

    Rows are shuffled and split 85:15 into training and validation. A training
    row is scored with itself excluded from its neighbours, a validation row
    against all training rows, so no row ever counts itself as a neighbour.
    """
    rng = make_rng(cfg.seed)
    perm = rng.permutation(data.n_rows)
    n_train = int(math.floor(0.85 * data.n_rows))
    tr, va = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    unlabeled = Dataset(data.features)
    trained = train(unlabeled.subset(tr), unlabeled.subset(va), neg_cfg, cfg)
    scores = np.empty(data.n_rows)
    scores[tr] = score_training(trained)
    scores[va] = score(trained, data.features[va])
    return trained, scores


@dataclass
class BenchConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    negatives: NegativeConfig = field(default_factory=NegativeConfig)
    epsilon_radius: float | None = None
    min_pts: float | None = None


@dataclass
class EvalReport:
    """AUC per (detector, k, seed) cell plus per-(detector, k) aggregates."""

    cells: dict[tuple[str, int, int], float] = field(default_factory=dict)
    failures: dict[tuple[str, int, int], str] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def aggregates(self) -> dict[tuple[str, int], tuple[float, float, int]]:
        """(mean, population std, count) of successful cells."""
        groups: dict[tuple[str, int], list[float]] = {}
        for (det, k, _), v in sorted(self.cells.items()):
            groups.setdefault((det, k), []).append(v)
        return {
            key: (float(np.mean(v)), float(np.std(v)), len(v))
            for key, v in groups.items()
        }

    def auc_range(self, detector: str) -> float:
        means = [m for (det, _), (m, _, _) in self.aggregates().items() if det == detector]
        return max(means) - min(means)

    def write(self, cells_path: str | Path, summary_path: str | Path) -> None:
        keys = sorted(set(self.cells) | set(self.failures))
        with open(cells_path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["detector", "k", "seed", "auc", "error"])
            for key in keys:
                if key in self.cells:
                    w.writerow([*key, repr(self.cells[key]), ""])
                else:
                    w.writerow([*key, "", self.failures[key].replace("\n", " ")])
        with open(summary_path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["detector", "k", "mean", "std", "count"])
            for (det, k), (mean, std, n) in sorted(self.aggregates().items()):
                w.writerow([det, k, repr(mean), repr(std), n])

    @classmethod
    def read_cells(cls, path: str | Path) -> EvalReport:
        rep = cls()
        with open(path, encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                key = (row["detector"], int(row["k"]), int(row["seed"]))
                if row["auc"]:
                    rep.cells[key] = float(row["auc"])
                else:
                    rep.failures[key] = row["error"]
        return rep


def score_cell(detector: str, k: int, seed: int, data: Dataset, cfg: BenchConfig):
    """Test labels and scores for one benchmark cell."""
    parts = split(data, seed)
    if detector == "lunar":
        tcfg = replace(cfg.train, k=k, seed=seed)
        ncfg = replace(cfg.negatives, seed=seed)
        trained = train(parts.train, parts.validation, ncfg, tcfg)
        return parts.test.labels, score(trained, parts.test)
    spec = classic.get_spec(detector, cfg.epsilon_radius, cfg.min_pts)
    norm = fit_normalizer(parts.train)
    x_train = apply_normalizer(norm, parts.train).features
    x_test = apply_normalizer(norm, parts.test).features
    return parts.test.labels, classic.score_points(spec, x_train, x_test, k)


def run_benchmark(
    data: Dataset,
    detectors,
    k_values,
    seeds,
    cfg: BenchConfig | None = None,
    resume: EvalReport | None = None,
    on_cell: Callable[[EvalReport], None] | None = None,
    dataset_name: str = "",
) -> EvalReport:
    """Evaluate every (detector, k, seed) cell; AUC on the held-out test set.

    Cells already present in ``resume`` are kept and not recomputed.
    ``on_cell`` is called after each new cell, e.g. to checkpoint the report.
    """
    cfg = cfg or BenchConfig()
    if data.labels is None:
        raise ValueError("benchmarking needs a labelled dataset")
    if "dbscan" in detectors:
        classic.get_spec("dbscan", cfg.epsilon_radius, cfg.min_pts)
    report = EvalReport(metadata={"dataset": dataset_name})
    if resume is not None:
        report.cells.update(resume.cells)
    for det in detectors:
        for k in k_values:
            for seed in seeds:
                key = (det, int(k), int(seed))
                if key in report.cells:
                    continue
                try:
                    labels, scores = score_cell(det, int(k), int(seed), data, cfg)
                    report.cells[key] = auc(scores, labels)
                    report.failures.pop(key, None)
                except Exception as exc:  # isolate the cell
                    logger.warning("cell %s failed: %s", key, exc)
                    report.failures[key] = f"{type(exc).__name__}: {exc}"
                if on_cell is not None:
                    on_cell(report)
    return report

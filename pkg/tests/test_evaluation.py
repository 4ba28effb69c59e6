import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lunar import classic
from lunar.dataset import Dataset
from lunar.evaluation import (
    TOY_CENTERS,
    BenchConfig,
    ClassicScorer,
    EvalReport,
    contour_grid,
    lattice,
    run_benchmark,
    score_cell,
    toy_dataset,
    write_grid_csv,
)
from lunar.metrics import auc, auc_pairwise
from lunar.model import TrainConfig
from oracles import auc_pairs


class TestAuc:
    @pytest.mark.parametrize(
        "scores, labels, expected",
        [
            ([0.9, 0.1, 0.8], [1, 0, 1], 1.0),
            ([0.2, 0.4, 0.6, 0.8], [0, 1, 0, 1], 0.75),
            ([0.3] * 6, [0, 1, 0, 1, 1, 0], 0.5),
        ],
    )
    def test_examples(self, scores, labels, expected):
        assert auc(scores, labels) == expected

    def test_single_class(self):
        with pytest.raises(ValueError, match="both classes"):
            auc([0.1, 0.2], [1, 1])

    def test_non_binary_labels(self):
        with pytest.raises(ValueError):
            auc([0.1, 0.2], [0, 2])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 200))
    def test_matches_pair_enumeration(self, seed, n):
        rng = np.random.default_rng(seed)
        # coarse scores so ties are common
        s = rng.integers(0, 8, size=n).astype(float)
        y = np.r_[0, 1, rng.integers(0, 2, size=n - 2)]
        assert auc(s, y) == auc_pairs(s, y) == auc_pairwise(s, y)

    def test_monotone_transform(self):
        rng = np.random.default_rng(3)
        s = rng.normal(size=150)
        y = rng.integers(0, 2, size=150)
        for f in (np.exp, lambda v: 3 * v - 7, lambda v: v**3, np.arctan):
            assert auc(f(s), y) == auc(s, y)

    def test_row_permutation(self):
        rng = np.random.default_rng(4)
        s, y = rng.random(80), rng.integers(0, 2, size=80)
        p = rng.permutation(80)
        assert auc(s[p], y[p]) == auc(s, y)


class TestToy:
    def test_shape_and_labels(self):
        ds = toy_dataset(0)
        assert ds.n_rows == 1015 and ds.d == 2
        assert int(ds.labels.sum()) == 15
        assert np.all(ds.labels[:1000] == 0)

    def test_uniform_points_in_cube(self):
        ds = toy_dataset(2)
        noise = ds.features[ds.labels == 1]
        assert noise.min() >= 0 and noise.max() <= 1

    def test_cluster_means(self):
        # averaged over seeds the sampling error of each mean is ~0.001
        means = np.mean(
            [toy_dataset(s).features[:1000].reshape(4, 250, 2).mean(axis=1) for s in range(5)],
            axis=0,
        )
        np.testing.assert_allclose(means, TOY_CENTERS, atol=0.01)

    def test_deterministic(self):
        assert toy_dataset(5).features.tobytes() == toy_dataset(5).features.tobytes()
        assert toy_dataset(5).features.tobytes() != toy_dataset(6).features.tobytes()


class TestGrid:
    def test_lattice(self):
        pts = lattice((0, 1), 3)
        assert pts.shape == (9, 2)
        assert {tuple(p) for p in pts.tolist()} == {
            (a, b) for a in (0, 0.5, 1) for b in (0, 0.5, 1)
        }

    def test_constant_scorer(self):
        grid = contour_grid(lambda p: np.full(len(p), 0.7), resolution=4)
        assert grid.shape == (16, 3) and np.all(grid[:, 2] == 0.7)

    def test_per_axis_bounds(self):
        grid = contour_grid(lambda p: p[:, 0], bounds=((0, 2), (-1, 1)), resolution=5)
        assert grid[:, 0].max() == 2 and grid[:, 1].min() == -1

    def test_rejects_non_2d(self):
        scorer = ClassicScorer(classic.KNN, np.zeros((5, 3)), 2)
        with pytest.raises(ValueError, match="2-D"):
            contour_grid(scorer)

    def test_classic_scorer_csv(self, tmp_path):
        data = toy_dataset(0)
        scorer = ClassicScorer(classic.LOF, data.features[:1000], 10)
        grid = contour_grid(scorer, resolution=6)
        write_grid_csv(grid, tmp_path / "g.csv")
        lines = (tmp_path / "g.csv").read_text().splitlines()
        assert lines[0] == "x,y,score" and len(lines) == 37
        back = np.loadtxt(tmp_path / "g.csv", delimiter=",", skiprows=1)
        assert back.tobytes() == grid.tobytes()


def small_toy():
    return toy_dataset(0, n_per_cluster=40, n_uniform=6)


class TestBenchmark:
    def test_bookkeeping(self):
        rep = run_benchmark(small_toy(), ["knn"], [5], [1, 2, 3, 4, 5])
        assert len(rep.cells) == 5
        assert rep.aggregates()[("knn", 5)][2] == 5

    def test_deterministic(self):
        cfg = BenchConfig(train=TrainConfig(epochs=3, hidden_width=8, hidden_depth=1))
        a = run_benchmark(small_toy(), ["lof", "lunar"], [3], [0, 1], cfg)
        b = run_benchmark(small_toy(), ["lof", "lunar"], [3], [0, 1], cfg)
        assert a.cells == b.cells

    def test_failure_isolated(self):
        rep = run_benchmark(small_toy(), ["knn"], [3, 500], [0])
        assert ("knn", 3, 0) in rep.cells
        assert ("knn", 500, 0) in rep.failures

    def test_dbscan_needs_params_up_front(self):
        with pytest.raises(classic.DetectorError):
            run_benchmark(small_toy(), ["knn", "dbscan"], [3], [0])

    def test_unlabelled(self):
        with pytest.raises(ValueError):
            run_benchmark(Dataset(np.zeros((5, 2))), ["knn"], [2], [0])

    def test_resume_skips_done_cells(self):
        done = EvalReport(cells={("knn", 3, 0): 0.123})
        seen = []
        rep = run_benchmark(small_toy(), ["knn"], [3], [0, 1], resume=done,
                            on_cell=lambda r: seen.append(len(r.cells)))
        assert rep.cells[("knn", 3, 0)] == 0.123
        assert seen == [2]

    def test_population_std(self):
        rep = EvalReport(cells={("a", 1, 0): 0.5, ("a", 1, 1): 0.7})
        mean, std, n = rep.aggregates()[("a", 1)]
        assert mean == pytest.approx(0.6) and std == pytest.approx(0.1) and n == 2

    def test_csv_round_trip(self, tmp_path):
        rep = run_benchmark(small_toy(), ["knn"], [3, 500], [0, 1])
        rep.write(tmp_path / "cells.csv", tmp_path / "summary.csv")
        back = EvalReport.read_cells(tmp_path / "cells.csv")
        assert back.cells == rep.cells
        assert set(back.failures) == set(rep.failures)
        summary = (tmp_path / "summary.csv").read_text().splitlines()
        assert summary[0] == "detector,k,mean,std,count" and len(summary) == 2

    def test_test_row_order_does_not_matter(self):
        data = small_toy()
        labels, scores = score_cell("lof", 4, 0, data, BenchConfig())
        p = np.random.default_rng(0).permutation(len(labels))
        assert auc(scores[p], labels[p]) == auc(scores, labels)

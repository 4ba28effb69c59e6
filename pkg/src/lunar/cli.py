"""Command-line entry point: ``lunar {fit,score,bench,toy,grid}``.

Exit codes: 0 on success, 1 on an internal error, 2 on a usage, config or
input-data error. Every command writes its fully resolved configuration next
to its output so that the run can be repeated with ``--config``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from lunar import classic
from lunar.config import ConfigError, RunConfig, resolve
from lunar.dataset import DataError, Dataset, load_csv, split, write_csv
from lunar.evaluation import (
    BenchConfig,
    ClassicScorer,
    EvalReport,
    contour_grid,
    run_benchmark,
    toy_dataset,
    write_grid_csv,
)
from lunar.model import load_model, save_model, score, train
from lunar.neighbors import NeighborError

logger = logging.getLogger("lunar")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE = 0, 1, 2
CONFIG_NAME = "config.txt"


class UsageError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser, *names: str) -> None:
    flags = {
        "data": dict(help="input CSV with a header row"),
        "label-col": dict(help="name of the 0/1 label column"),
        "detector": dict(
            help="detector name; comma-separated list for bench "
            "(knn, aggr-knn, lof, simple-lof, dbscan, inflo, lunar)"
        ),
        "k": dict(help="neighbours; comma-separated list for bench"),
        "seed": dict(help="random seed"),
        "seeds": dict(help="comma-separated trial seeds for bench"),
        "epochs": dict(),
        "lr": dict(help="Adam learning rate"),
        "weight-decay": dict(),
        "decay-mode": dict(choices=["decoupled", "l2"]),
        "hidden-width": dict(),
        "hidden-depth": dict(),
        "batch-size": dict(help="mini-batch size, or 'full'"),
        "neg-mix": dict(choices=["uniform", "subspace", "mixed"]),
        "neg-eps": dict(help="negative sampling epsilon"),
        "neg-p": dict(help="subspace perturbation probability"),
        "neg-ratio": dict(help="negatives per normal row"),
        "eps": dict(help="DBSCAN radius"),
        "min-pts": dict(help="DBSCAN minimum neighbour count"),
        "model": dict(help="saved model file"),
        "resolution": dict(help="grid points per axis"),
        "bounds": dict(help="grid bounds 'low,high'"),
        "out": dict(help="output path"),
    }
    p.add_argument("--config", help="key=value config file")
    p.add_argument("-v", "--verbose", action="store_true")
    for name in names:
        p.add_argument(f"--{name}", default=None, **flags[name])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lunar", description="Local outlier detection on k-NN graphs."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    train_flags = (
        "k", "seed", "epochs", "lr", "weight-decay", "decay-mode", "hidden-width",
        "hidden-depth", "batch-size", "neg-mix", "neg-eps", "neg-p", "neg-ratio",
    )
    _add_common(
        sub.add_parser("fit", help="train a LUNAR model"),
        "data", "label-col", *train_flags, "out",
    )
    _add_common(
        sub.add_parser("score", help="score a CSV with a saved model"),
        "model", "data", "label-col", "out",
    )
    _add_common(
        sub.add_parser("bench", help="multi-seed AUC benchmark"),
        "data", "label-col", "detector", "seeds", *train_flags, "eps", "min-pts", "out",
    )
    _add_common(sub.add_parser("toy", help="write the four-cluster toy dataset"), "seed", "out")
    _add_common(
        sub.add_parser("grid", help="score a 2-D lattice for contour plots"),
        "model", "data", "label-col", "detector", "k", "eps", "min-pts",
        "resolution", "bounds", "out",
    )
    return parser


def _resolve(args: argparse.Namespace) -> RunConfig:
    skip = {"command", "config", "verbose"}
    overrides = {k: v for k, v in vars(args).items() if k not in skip}
    return resolve(args.config, overrides)


def _need(cfg: RunConfig, *names: str) -> None:
    for name in names:
        if getattr(cfg, name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def _load(cfg: RunConfig) -> Dataset:
    path = Path(cfg.data)
    if not path.is_file():
        raise UsageError(f"data file not found: {path}")
    return load_csv(path, cfg.label_col)


def _echo(cfg: RunConfig, path: Path) -> None:
    path.write_text(cfg.dumps(), encoding="utf-8")


def _sibling_config(out: Path) -> Path:
    return out.with_name(out.name + ".config.txt")


def cmd_fit(cfg: RunConfig) -> None:
    _need(cfg, "data", "out")
    data = _load(cfg)
    if data.labels is not None:
        parts = split(data, cfg.seed)
        tr, va = parts.train, parts.validation
    else:
        rng_idx = np.random.Generator(np.random.PCG64(cfg.seed)).permutation(data.n_rows)
        n_train = int(np.floor(0.85 * data.n_rows))
        tr, va = data.subset(np.sort(rng_idx[:n_train])), data.subset(np.sort(rng_idx[n_train:]))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    trained = train(tr, va, cfg.negative_config(), cfg.train_config())
    save_model(trained, out / "model.npz")
    with open(out / "history.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_auc"])
        for epoch, (loss, val_auc) in enumerate(trained.history, 1):
            w.writerow([epoch, repr(float(loss)), repr(float(val_auc))])
    _echo(cfg, out / CONFIG_NAME)
    logger.info("best validation AUC %.4f at epoch %d", trained.best_val_auc, trained.best_epoch)


def _write_scores(scores: np.ndarray, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_index", "score"])
        for i, s in enumerate(scores):
            w.writerow([i, repr(float(s))])


def cmd_score(cfg: RunConfig) -> None:
    _need(cfg, "model", "data", "out")
    if not Path(cfg.model).is_file():
        raise UsageError(f"model file not found: {cfg.model}")
    trained = load_model(cfg.model)
    data = _load(cfg)
    if data.d != trained.normalizer.d:
        raise UsageError(
            f"dimension mismatch: model expects d={trained.normalizer.d}, data has d={data.d}"
        )
    out = Path(cfg.out)
    _write_scores(score(trained, data), out)
    _echo(cfg, _sibling_config(out))


def cmd_bench(cfg: RunConfig) -> int:
    _need(cfg, "data", "out")
    for det in cfg.detector:
        if det != "lunar" and det not in classic.CLASSIC_DETECTORS:
            raise UsageError(f"unknown detector {det!r}")
    data = _load(cfg)
    if data.labels is None:
        raise UsageError("bench needs --label-col")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cells, summary = out / "cells.csv", out / "summary.csv"
    resume = EvalReport.read_cells(cells) if cells.is_file() else None
    bench = BenchConfig(
        train=cfg.train_config(), negatives=cfg.negative_config(),
        epsilon_radius=cfg.eps, min_pts=cfg.min_pts,
    )
    _echo(cfg, out / CONFIG_NAME)
    report = run_benchmark(
        data, cfg.detector, cfg.k, cfg.seeds, bench, resume=resume,
        on_cell=lambda r: r.write(cells, summary), dataset_name=Path(cfg.data).name,
    )
    report.write(cells, summary)
    for key, msg in sorted(report.failures.items()):
        logger.warning("cell %s failed: %s", key, msg)
    return EXIT_OK if report.cells else EXIT_INTERNAL


def cmd_toy(cfg: RunConfig) -> None:
    _need(cfg, "out")
    out = Path(cfg.out)
    write_csv(toy_dataset(cfg.seed), out)
    _echo(cfg, _sibling_config(out))


def cmd_grid(cfg: RunConfig) -> None:
    _need(cfg, "out")
    if cfg.model is not None:
        if not Path(cfg.model).is_file():
            raise UsageError(f"model file not found: {cfg.model}")
        scorer = load_model(cfg.model)
    else:
        _need(cfg, "data")
        if len(cfg.detector) != 1 or cfg.detector[0] == "lunar":
            raise UsageError("grid without --model needs one classic --detector")
        data = _load(cfg)
        spec = classic.get_spec(cfg.detector[0], cfg.eps, cfg.min_pts)
        scorer = ClassicScorer(spec, data.features, cfg.k[0])
    grid = contour_grid(scorer, cfg.bounds, cfg.resolution)
    out = Path(cfg.out)
    write_grid_csv(grid, out)
    _echo(cfg, _sibling_config(out))


COMMANDS = {
    "fit": cmd_fit, "score": cmd_score, "bench": cmd_bench,
    "toy": cmd_toy, "grid": cmd_grid,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _resolve(args)
        code = COMMANDS[args.command](cfg)
    except (UsageError, ConfigError, DataError, NeighborError,
            classic.DetectorError, FileNotFoundError) as exc:
        print(f"lunar {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        logger.exception("internal error")
        print(f"lunar {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())

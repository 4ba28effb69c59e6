"""Plain ``key=value`` run configuration with command-line overrides.

Blank lines and lines starting with ``#`` are ignored. Keys are the long CLI
flag names with dashes written as underscores (``weight_decay=0.1``). Unknown
keys are rejected so that a resolved config file fully describes a run.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from lunar.model import TrainConfig
from lunar.negatives import NegativeConfig


class ConfigError(ValueError):
    pass


NEG_MIX = {"uniform": "uniform_only", "subspace": "subspace_only", "mixed": "mixed"}


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _float_pair(text: str) -> tuple[float, float]:
    lo, hi = (float(v) for v in str(text).split(","))
    return lo, hi


def _opt_int(text):
    return None if text in (None, "", "full", "None") else int(text)


def _opt_float(text):
    return None if text in (None, "", "None") else float(text)


@dataclass
class RunConfig:
    data: str | None = None
    label_col: str | None = None
    detector: tuple[str, ...] = ("lunar",)
    k: tuple[int, ...] = (100,)
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    epochs: int = 200
    lr: float = 0.001
    weight_decay: float = 0.1
    decay_mode: str = "decoupled"
    hidden_width: int = 256
    hidden_depth: int = 4
    batch_size: int | None = None
    neg_mix: str = "mixed"
    neg_eps: float = 0.1
    neg_p: float = 0.3
    neg_ratio: float = 1.0
    eps: float | None = None
    min_pts: float | None = None
    model: str | None = None
    resolution: int = 50
    bounds: tuple[float, float] = (0.0, 1.0)
    out: str | None = None

    def validate(self) -> RunConfig:
        if self.neg_mix not in NEG_MIX:
            raise ConfigError(f"neg_mix must be one of {sorted(NEG_MIX)}, got {self.neg_mix!r}")
        if not self.k or min(self.k) < 1:
            raise ConfigError("k must be a positive integer")
        if "dbscan" in self.detector and (self.eps is None or self.min_pts is None):
            raise ConfigError("detector dbscan requires --eps and --min-pts")
        try:
            self.train_config()
            self.negative_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def train_config(self, k: int | None = None, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            k=self.k[0] if k is None else k,
            epochs=self.epochs,
            learning_rate=self.lr,
            weight_decay=self.weight_decay,
            decay_mode=self.decay_mode,
            batch_size=self.batch_size,
            seed=self.seed if seed is None else seed,
            hidden_width=self.hidden_width,
            hidden_depth=self.hidden_depth,
        )

    def negative_config(self, seed: int | None = None) -> NegativeConfig:
        return NegativeConfig(
            epsilon=self.neg_eps,
            subspace_prob=self.neg_p,
            ratio=self.neg_ratio,
            mix=NEG_MIX.get(self.neg_mix, self.neg_mix),
            seed=self.seed if seed is None else seed,
        )

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


PARSERS = {
    "data": str,
    "label_col": str,
    "detector": _str_list,
    "k": _int_list,
    "seed": int,
    "seeds": _int_list,
    "epochs": int,
    "lr": float,
    "weight_decay": float,
    "decay_mode": str,
    "hidden_width": int,
    "hidden_depth": int,
    "batch_size": _opt_int,
    "neg_mix": str,
    "neg_eps": float,
    "neg_p": float,
    "neg_ratio": float,
    "eps": _opt_float,
    "min_pts": _opt_float,
    "model": str,
    "resolution": int,
    "bounds": _float_pair,
    "out": str,
}


def parse_value(key: str, raw) -> object:
    if key not in PARSERS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return PARSERS[key](raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def read_config_file(path: str | Path) -> dict[str, object]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = parse_value(key, raw)
    return values


def resolve(config_path: str | None, overrides: dict[str, object]) -> RunConfig:
    """Defaults, then the config file, then non-None ``overrides``."""
    values = read_config_file(config_path) if config_path else {}
    for key, raw in overrides.items():
        if raw is not None:
            values[key] = parse_value(key, raw)
    return RunConfig(**values).validate()

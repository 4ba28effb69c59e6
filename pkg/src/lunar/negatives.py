"""Synthetic anomalies used as the positive class when training LUNAR.

Two generators work in normalized feature space:

* uniform: points drawn from U(-eps, 1 + eps) in every dimension, covering the
  padded unit cube that normalized training data lives in;
* subspace perturbation: a random training row plus ``eps * z`` Gaussian noise
  on a Bernoulli(p) subset of its coordinates, giving harder negatives that sit
  just off the normal data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lunar.dataset import make_rng

MIXES = ("uniform_only", "subspace_only", "mixed")


@dataclass(frozen=True)
class NegativeConfig:
    epsilon: float = 0.1
    subspace_prob: float = 0.3
    ratio: float = 1.0
    mix: str = "mixed"
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not 0 < self.subspace_prob <= 1:
            raise ValueError(f"subspace_prob must be in (0, 1], got {self.subspace_prob}")
        if not self.ratio > 0:
            raise ValueError(f"ratio must be > 0, got {self.ratio}")
        if self.mix not in MIXES:
            raise ValueError(f"mix must be one of {MIXES}, got {self.mix!r}")


def sample_uniform(
    count: int, d: int, epsilon: float, rng: np.random.Generator
) -> np.ndarray:
    if count < 0 or d < 1:
        raise ValueError(f"need count >= 0 and d >= 1, got {count}, {d}")
    return rng.uniform(-epsilon, 1.0 + epsilon, size=(count, d))


def sample_subspace(
    train: np.ndarray,
    count: int,
    epsilon: float,
    p: float,
    rng: np.random.Generator,
    return_mask: bool = False,
):
    """Perturb randomly chosen training rows on a random coordinate subset.

    The source row, the Bernoulli(p) mask and the N(0, I) noise are drawn
    independently for every sample. Unmasked coordinates are copied exactly.
    """
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] == 0:
        raise ValueError("subspace perturbation needs a nonempty training matrix")
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    src = rng.integers(0, train.shape[0], size=count)
    mask = rng.random((count, train.shape[1])) < p
    z = rng.standard_normal((count, train.shape[1]))
    out = train[src].copy()
    out[mask] += epsilon * z[mask]
    if return_mask:
        return out, mask, src
    return out


def split_counts(n_train: int, cfg: NegativeConfig) -> tuple[int, int]:
    """Number of (uniform, subspace) negatives for ``n_train`` normal rows."""
    total = int(np.floor(cfg.ratio * n_train + 0.5))
    if cfg.mix == "uniform_only":
        return total, 0
    if cfg.mix == "subspace_only":
        return 0, total
    return total // 2, total - total // 2


def build_negative_set(train: np.ndarray, cfg: NegativeConfig) -> np.ndarray:
    """Uniform negatives followed by subspace negatives, seeded by ``cfg.seed``."""
    train = np.asarray(train, dtype=np.float64)
    n_uniform, n_subspace = split_counts(train.shape[0], cfg)
    rng = make_rng(cfg.seed)
    parts = [sample_uniform(n_uniform, train.shape[1], cfg.epsilon, rng)]
    if n_subspace:
        parts.append(
            sample_subspace(train, n_subspace, cfg.epsilon, cfg.subspace_prob, rng)
        )
    return np.concatenate(parts, axis=0)

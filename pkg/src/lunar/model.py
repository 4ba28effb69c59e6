"""LUNAR: a learnable aggregation of each node's k nearest-neighbour distances.

Every node (a training normal, a synthetic negative, or a point to be scored)
is turned into its ascending vector of distances to the k nearest training
normals. A fully connected network with tanh hidden layers and a sigmoid
output maps that vector to an anomaly score in (0, 1). It is trained with a
mean squared error against target 0 for normals and 1 for negatives, using
Adam with weight decay, and the parameters with the best validation AUC are
kept.

Weight decay defaults to the decoupled form. Adding ``0.1 * theta`` to the
gradient instead (``decay_mode="l2"``) outweighs the loss gradient by about
an order of magnitude at this learning rate and drives every weight to zero
within roughly a hundred epochs, leaving a constant 0.5 output.

Forward and backward passes are written out by hand in numpy (float64).
"""

from __future__ import annotations

import json
import logging
import zipfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from lunar.dataset import (
    DataError,
    Dataset,
    Normalizer,
    apply_normalizer,
    fit_normalizer,
    make_rng,
)
from lunar.metrics import auc
from lunar.negatives import NegativeConfig, build_negative_set
from lunar.neighbors import KnnGraph, build_graph

logger = logging.getLogger(__name__)

MODEL_FORMAT = "lunar-model"
MODEL_VERSION = 1
DECAY_MODES = ("l2", "decoupled")


@dataclass
class MlpModel:
    """Dense network; ``weights[l]`` has shape (layer_dims[l], layer_dims[l+1])."""

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        self.layer_dims = tuple(int(v) for v in self.layer_dims)
        if len(self.weights) != len(self.layer_dims) - 1:
            raise ValueError("one weight matrix per layer expected")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[l], self.layer_dims[l + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise ValueError(f"layer {l}: bad shapes {w.shape}, {b.shape}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> MlpModel:
        return MlpModel(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


def layer_dims_for(k: int, hidden_width: int = 256, hidden_depth: int = 4):
    return (k, *([hidden_width] * hidden_depth), 1)


def init_model(layer_dims, seed: int) -> MlpModel:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    layer_dims = tuple(int(v) for v in layer_dims)
    if len(layer_dims) < 2 or min(layer_dims) < 1:
        raise ValueError(f"invalid layer dims {layer_dims}")
    rng = make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(layer_dims, weights, biases)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class ForwardCache:
    """Layer inputs; ``activations[0]`` is the batch, the last entry the scores."""

    activations: list[np.ndarray]
    model_id: int


def forward(model: MlpModel, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise ValueError(
            f"batch width {x.shape[-1] if x.ndim else 0} does not match "
            f"input size {model.layer_dims[0]}"
        )
    acts = [x]
    a = x
    last = model.n_layers - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        a = sigmoid(z) if l == last else np.tanh(z)
        acts.append(a)
    return a[:, 0], ForwardCache(acts, id(model))


def loss_mse(scores: np.ndarray, targets: np.ndarray) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if scores.shape != targets.shape:
        raise ValueError(f"length mismatch: {scores.shape} vs {targets.shape}")
    return float(np.mean((scores - targets) ** 2))


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


def backward(model: MlpModel, cache: ForwardCache, targets: np.ndarray) -> Gradients:
    """Gradients of :func:`loss_mse` with respect to every weight and bias."""
    if cache.model_id != id(model) or len(cache.activations) != model.n_layers + 1:
        raise ValueError("cache does not belong to this model")
    acts = cache.activations
    s = acts[-1][:, 0]
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != s.shape:
        raise ValueError(f"targets have shape {y.shape}, scores {s.shape}")
    n = s.shape[0]
    # d loss / d pre-activation of the sigmoid output
    delta = (2.0 / n) * (s - y) * s * (1.0 - s)
    delta = delta[:, None]
    gw = [None] * model.n_layers
    gb = [None] * model.n_layers
    for l in range(model.n_layers - 1, -1, -1):
        gw[l] = acts[l].T @ delta
        gb[l] = delta.sum(axis=0)
        if l:
            delta = (delta @ model.weights[l].T) * (1.0 - acts[l] ** 2)
    return Gradients(gw, gb)


@dataclass(frozen=True)
class TrainConfig:
    k: int = 100
    epochs: int = 200
    learning_rate: float = 0.001
    weight_decay: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int | None = None  # None = full batch
    seed: int = 0
    hidden_width: int = 256
    hidden_depth: int = 4
    decay_mode: str = "decoupled"

    def __post_init__(self) -> None:
        if self.decay_mode not in DECAY_MODES:
            raise ValueError(f"decay_mode must be one of {DECAY_MODES}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.hidden_width < 1 or self.hidden_depth < 1:
            raise ValueError("hidden width and depth must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return layer_dims_for(self.k, self.hidden_width, self.hidden_depth)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, model: MlpModel) -> AdamState:
        ps = model.params()
        return cls([np.zeros_like(p) for p in ps], [np.zeros_like(p) for p in ps])


def adam_step(
    model: MlpModel, grads: Gradients, state: AdamState, cfg: TrainConfig
) -> tuple[MlpModel, AdamState]:
    """One Adam update, in place.

    With ``decay_mode="l2"`` the weight decay term ``weight_decay * theta`` is
    added to the gradient before the moment estimates. With ``"decoupled"``
    the parameters are shrunk by ``lr * weight_decay * theta`` directly and
    the moments only see the loss gradient.
    """
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(model.params(), grads.params(), state.m, state.v):
        if p.shape != g.shape:
            raise ValueError("gradient shape mismatch")
        if cfg.decay_mode == "l2":
            g = g + cfg.weight_decay * p
        else:
            p -= cfg.learning_rate * cfg.weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return model, state


def distance_vector(graph: KnnGraph, node: int) -> np.ndarray:
    if not 0 <= node < graph.n_targets:
        raise IndexError(f"node {node} out of range for {graph.n_targets} targets")
    return np.array(graph.neighbor_dist[node])


@dataclass
class TrainedModel:
    model: MlpModel
    normalizer: Normalizer
    train_matrix: np.ndarray  # normalized training normals
    k: int
    best_val_auc: float
    history: list[tuple[float, float]] = field(default_factory=list)
    best_epoch: int = 1


def stream_seeds(seed: int) -> dict[str, int]:
    """Independent child seeds for each random stream of one training run."""
    children = np.random.SeedSequence(seed).spawn(4)
    names = ("init", "train_negatives", "val_negatives", "shuffle")
    return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}


def _features(train_x, points, k, is_train):
    return build_graph(train_x, points, k, is_train).neighbor_dist


def train(
    train_data: Dataset,
    val_data: Dataset,
    neg_cfg: NegativeConfig,
    cfg: TrainConfig,
) -> TrainedModel:
    """Fit a LUNAR model on normal training rows.

    Training and validation rows are normalized with statistics from the
    training rows. Each set gets its own negatives (separate seed streams).
    Training nodes query the training normals with self-exclusion; all other
    nodes query the training normals directly.
    """
    k = cfg.k
    if train_data.n_rows == 0:
        raise DataError("training set is empty")
    if val_data.n_rows == 0:
        raise DataError("validation set is empty")
    if k > train_data.n_rows - 1:
        raise DataError(
            f"k={k} too large for {train_data.n_rows} training rows (max {train_data.n_rows - 1})"
        )
    seeds = stream_seeds(cfg.seed)
    norm = fit_normalizer(train_data)
    x_train = apply_normalizer(norm, train_data).features
    x_val = apply_normalizer(norm, val_data).features
    neg_train = build_negative_set(x_train, replace(neg_cfg, seed=seeds["train_negatives"]))
    neg_val = build_negative_set(x_val, replace(neg_cfg, seed=seeds["val_negatives"]))

    inputs = np.concatenate(
        [_features(x_train, x_train, k, True), _features(x_train, neg_train, k, False)]
    )
    targets = np.concatenate([np.zeros(len(x_train)), np.ones(len(neg_train))])
    val_inputs = np.concatenate(
        [_features(x_train, x_val, k, False), _features(x_train, neg_val, k, False)]
    )
    val_labels = np.concatenate([np.zeros(len(x_val)), np.ones(len(neg_val))])

    model = init_model(cfg.layer_dims, seeds["init"])
    state = AdamState.zeros_like(model)
    shuffle_rng = make_rng(seeds["shuffle"])
    n = len(inputs)
    batch = n if cfg.batch_size is None else min(cfg.batch_size, n)

    history: list[tuple[float, float]] = []
    best, best_auc, best_epoch = None, -np.inf, 0
    for epoch in range(1, cfg.epochs + 1):
        order = np.arange(n) if batch == n else shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            scores, cache = forward(model, inputs[idx])
            total += loss_mse(scores, targets[idx]) * len(idx)
            adam_step(model, backward(model, cache, targets[idx]), state, cfg)
        val_scores, _ = forward(model, val_inputs)
        val_auc = auc(val_scores, val_labels)
        history.append((total / n, val_auc))
        if val_auc > best_auc:
            best, best_auc, best_epoch = model.copy(), val_auc, epoch
        logger.debug("epoch %d loss %.6f val_auc %.4f", epoch, total / n, val_auc)

    logger.info("trained k=%d: best val AUC %.4f at epoch %d", k, best_auc, best_epoch)
    return TrainedModel(best, norm, x_train, k, float(best_auc), history, best_epoch)


def score_normalized(trained: TrainedModel, points: np.ndarray) -> np.ndarray:
    """Score points already in the model's normalized coordinates."""
    feats = _features(trained.train_matrix, points, trained.k, False)
    return forward(trained.model, feats)[0]


def score(trained: TrainedModel, test: Dataset | np.ndarray) -> np.ndarray:
    """Anomaly score in (0, 1) for each test row; higher is more anomalous."""
    x = test.features if isinstance(test, Dataset) else np.asarray(test, float)
    if x.ndim != 2 or x.shape[1] != trained.normalizer.d:
        raise DataError(
            f"dimension mismatch: model expects d={trained.normalizer.d}, "
            f"got d={x.shape[-1] if x.ndim else 0}"
        )
    return score_normalized(trained, trained.normalizer.transform(x))


def score_training(trained: TrainedModel) -> np.ndarray:
    """Scores of the stored training rows, each excluded from its own neighbours."""
    feats = _features(trained.train_matrix, trained.train_matrix, trained.k, True)
    return forward(trained.model, feats)[0]


def save_model(trained: TrainedModel, path: str | Path) -> None:
    """Write a single ``.npz`` file with a JSON header and float64 arrays."""
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "layer_dims": list(trained.model.layer_dims),
        "k": trained.k,
        "best_val_auc": trained.best_val_auc,
        "best_epoch": trained.best_epoch,
        "history": [list(h) for h in trained.history],
        "activations": {"hidden": "tanh", "output": "sigmoid"},
    }
    arrays = {
        "header": np.array(json.dumps(header, sort_keys=True)),
        "norm_min": trained.normalizer.minimum,
        "norm_max": trained.normalizer.maximum,
        "train_matrix": trained.train_matrix,
    }
    for l, (w, b) in enumerate(zip(trained.model.weights, trained.model.biases)):
        arrays[f"W{l}"] = w
        arrays[f"b{l}"] = b
    # fixed entry timestamps keep identical models byte-identical on disk
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asanyarray(arr), allow_pickle=False)


def load_model(path: str | Path) -> TrainedModel:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != MODEL_FORMAT:
            raise DataError(f"{path} is not a LUNAR model file")
        if header["version"] != MODEL_VERSION:
            raise DataError(f"unsupported model version {header['version']}")
        n = len(header["layer_dims"]) - 1
        model = MlpModel(
            tuple(header["layer_dims"]),
            [z[f"W{l}"].astype(np.float64) for l in range(n)],
            [z[f"b{l}"].astype(np.float64) for l in range(n)],
        )
        return TrainedModel(
            model=model,
            normalizer=Normalizer(z["norm_min"], z["norm_max"]),
            train_matrix=np.array(z["train_matrix"], dtype=np.float64),
            k=int(header["k"]),
            best_val_auc=float(header["best_val_auc"]),
            history=[tuple(h) for h in header["history"]],
            best_epoch=int(header["best_epoch"]),
        )

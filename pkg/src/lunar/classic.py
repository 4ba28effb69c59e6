"""Classic local outlier detectors expressed as message passing on a k-NN graph.

Each detector is a :class:`DetectorSpec`: an edge feature (plain distance or
reachability distance) and one or two layers, where every layer is a
(message, aggregation, update) triple. :func:`run_layer` is the single
engine that evaluates any such layer; the ``score_*`` functions only choose
specs.

Two graphs take part in a two-layer detector. ``train_graph`` connects the
training rows to each other (self excluded) and provides layer-1 states for
every training node. ``target_graph`` connects the training rows to the points
being scored. Layer 2 on a target reads its neighbours' layer-1 states from
the training nodes and its own layer-1 state from the target side.

Degenerate densities follow one convention: a zero mean reachability gives
an infinite density, and the ratio of two infinite densities is 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lunar.neighbors import KnnGraph, NeighborError, build_graph, reach_edges

MESSAGES = ("edge", "edge_squared", "heaviside_eps_minus_edge", "ratio_prev", "prev")
AGGREGATIONS = ("max", "sum", "mean", "kth_max")
UPDATES = ("identity", "reciprocal", "heaviside_minus_minpts", "one_minus")
EDGE_FEATURES = ("distance", "reachability")


class DetectorError(ValueError):
    pass


def heaviside(t: np.ndarray) -> np.ndarray:
    """H(t) = 1 for t >= 0, else 0."""
    return (np.asarray(t) >= 0).astype(np.float64)


@dataclass(frozen=True)
class LayerSpec:
    message: str
    aggregation: str
    update: str

    def __post_init__(self) -> None:
        if self.message not in MESSAGES:
            raise DetectorError(f"unknown message {self.message!r}")
        if self.aggregation not in AGGREGATIONS:
            raise DetectorError(f"unknown aggregation {self.aggregation!r}")
        if self.update not in UPDATES:
            raise DetectorError(f"unknown update {self.update!r}")


@dataclass(frozen=True)
class DetectorSpec:
    name: str
    edge_feature: str
    layers: tuple[LayerSpec, ...]
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.edge_feature not in EDGE_FEATURES:
            raise DetectorError(f"unknown edge feature {self.edge_feature!r}")
        if len(self.layers) not in (1, 2):
            raise DetectorError("a detector has one or two layers")
        if self.layers[0].message in ("ratio_prev", "prev"):
            raise DetectorError("layer 1 has no previous state to read")


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / den
    out[np.isinf(num) & np.isinf(den)] = 1.0
    return out


def run_layer(
    graph: KnnGraph,
    layer: LayerSpec,
    edge_values: np.ndarray | None = None,
    source_state: np.ndarray | None = None,
    target_state: np.ndarray | None = None,
    params: dict | None = None,
) -> np.ndarray:
    """Evaluate one message-passing layer for every target of ``graph``.

    Args:
        graph: Edges from training sources to targets.
        layer: The (message, aggregation, update) triple.
        edge_values: (n_targets, k) edge features; defaults to the stored
            distances.
        source_state: Previous-layer state of every training node, indexed by
            training row. Needed by ``ratio_prev`` and ``prev`` messages.
        target_state: Previous-layer state of each target (h_i). Needed by
            ``ratio_prev``.
        params: ``epsilon_radius`` and ``min_pts`` for the Heaviside terms.

    Returns:
        New state per target, shape (n_targets,).
    """
    params = params or {}
    e = graph.neighbor_dist if edge_values is None else np.asarray(edge_values, float)
    if e.shape != graph.neighbor_index.shape:
        raise DetectorError(f"edge values have shape {e.shape}, graph {graph.neighbor_index.shape}")

    msg = layer.message
    if msg in ("ratio_prev", "prev"):
        if source_state is None:
            raise DetectorError(f"{msg} messages need the neighbours' previous state")
        source_state = np.asarray(source_state, dtype=np.float64)
        if graph.neighbor_index.size and graph.neighbor_index.max() >= len(source_state):
            raise DetectorError("previous state missing for a referenced node")
        h_j = source_state[graph.neighbor_index]
    if msg == "edge":
        m = e
    elif msg == "edge_squared":
        m = e**2
    elif msg == "heaviside_eps_minus_edge":
        m = heaviside(_param(params, "epsilon_radius") - e)
    elif msg == "prev":
        m = h_j
    else:
        if target_state is None or len(target_state) != graph.n_targets:
            raise DetectorError("ratio_prev messages need every target's own state")
        h_i = np.asarray(target_state, dtype=np.float64)[:, None]
        m = _ratio(h_j, np.broadcast_to(h_i, h_j.shape))

    agg = layer.aggregation
    if agg == "max":
        h = m.max(axis=1)
    elif agg == "sum":
        h = m.sum(axis=1)
    elif agg == "mean":
        h = m.mean(axis=1)
    else:
        # k-th largest counted from the nearest neighbour: the k-th smallest
        # message, which for distance messages is the k-distance term
        if m.shape[1] < graph.k:
            raise DetectorError("kth_max needs k messages per target")
        h = np.sort(m, axis=1)[:, graph.k - 1]

    upd = layer.update
    if upd == "identity":
        return h
    if upd == "reciprocal":
        with np.errstate(divide="ignore"):
            return 1.0 / h
    if upd == "heaviside_minus_minpts":
        return heaviside(h - _param(params, "min_pts"))
    return 1.0 - h


def _param(params: dict, name: str) -> float:
    if name not in params:
        raise DetectorError(f"missing detector parameter {name!r}")
    return float(params[name])


KNN = DetectorSpec("knn", "distance", (LayerSpec("edge", "max", "identity"),))
AGGR_KNN = DetectorSpec("aggr-knn", "distance", (LayerSpec("edge", "sum", "identity"),))
LOF = DetectorSpec(
    "lof",
    "reachability",
    (LayerSpec("edge", "mean", "reciprocal"), LayerSpec("ratio_prev", "mean", "identity")),
)
SIMPLE_LOF = DetectorSpec(
    "simple-lof",
    "distance",
    (LayerSpec("edge", "mean", "reciprocal"), LayerSpec("ratio_prev", "mean", "identity")),
)
INFLO = DetectorSpec(
    "inflo",
    "distance",
    (
        LayerSpec("edge_squared", "kth_max", "reciprocal"),
        LayerSpec("ratio_prev", "mean", "identity"),
    ),
)


def dbscan_spec(epsilon_radius: float, min_pts: float) -> DetectorSpec:
    if epsilon_radius <= 0:
        raise DetectorError("epsilon_radius must be > 0")
    if min_pts < 0:
        raise DetectorError("min_pts must be >= 0")
    return DetectorSpec(
        "dbscan",
        "distance",
        (
            LayerSpec("heaviside_eps_minus_edge", "sum", "heaviside_minus_minpts"),
            LayerSpec("prev", "max", "one_minus"),
        ),
        {"epsilon_radius": float(epsilon_radius), "min_pts": float(min_pts)},
    )


def run_detector(
    spec: DetectorSpec,
    target_graph: KnnGraph,
    train_graph: KnnGraph | None = None,
) -> np.ndarray:
    """Score every target of ``target_graph`` with ``spec``."""
    two_layer = len(spec.layers) == 2
    needs_train = two_layer or spec.edge_feature == "reachability"
    if needs_train:
        if train_graph is None or not train_graph.target_is_train:
            raise DetectorError(f"{spec.name} needs a train-over-train graph")
        if train_graph.k != target_graph.k:
            raise DetectorError("train and target graphs use different k")

    if spec.edge_feature == "reachability":
        e_train = reach_edges(train_graph, train_graph)
        e_target = reach_edges(train_graph, target_graph)
    else:
        e_train = None if train_graph is None else train_graph.neighbor_dist
        e_target = target_graph.neighbor_dist

    first = spec.layers[0]
    h_target = run_layer(target_graph, first, e_target, params=spec.params)
    if not two_layer:
        return h_target
    h_train = run_layer(train_graph, first, e_train, params=spec.params)
    return run_layer(
        target_graph,
        spec.layers[1],
        e_target,
        source_state=h_train,
        target_state=h_target,
        params=spec.params,
    )


def score_knn(graph: KnnGraph, k: int | None = None) -> np.ndarray:
    _check_k(graph, k)
    return run_detector(KNN, graph)


def score_aggr_knn(graph: KnnGraph, k: int | None = None) -> np.ndarray:
    _check_k(graph, k)
    return run_detector(AGGR_KNN, graph)


def score_lof(train_graph: KnnGraph, target_graph: KnnGraph, k: int | None = None):
    _check_k(target_graph, k)
    return run_detector(LOF, target_graph, train_graph)


def score_simple_lof(train_graph: KnnGraph, target_graph: KnnGraph, k: int | None = None):
    _check_k(target_graph, k)
    return run_detector(SIMPLE_LOF, target_graph, train_graph)


def score_inflo(train_graph: KnnGraph, target_graph: KnnGraph, k: int | None = None):
    _check_k(target_graph, k)
    return run_detector(INFLO, target_graph, train_graph)


def score_dbscan(
    train_graph: KnnGraph,
    target_graph: KnnGraph,
    k: int | None,
    epsilon_radius: float,
    min_pts: float,
) -> np.ndarray:
    """DBSCAN outlier column: 1 unless some k-NN neighbour is a core point."""
    _check_k(target_graph, k)
    return run_detector(dbscan_spec(epsilon_radius, min_pts), target_graph, train_graph)


def _check_k(graph: KnnGraph, k: int | None) -> None:
    if k is not None and k != graph.k:
        raise NeighborError(f"graph was built with k={graph.k}, not {k}")


CLASSIC_DETECTORS = ("knn", "aggr-knn", "lof", "simple-lof", "dbscan", "inflo")


def get_spec(name: str, epsilon_radius: float | None = None, min_pts: float | None = None):
    """Look up a classic detector by its CLI name."""
    fixed = {s.name: s for s in (KNN, AGGR_KNN, LOF, SIMPLE_LOF, INFLO)}
    if name in fixed:
        return fixed[name]
    if name == "dbscan":
        if epsilon_radius is None or min_pts is None:
            raise DetectorError("dbscan requires --eps and --min-pts")
        return dbscan_spec(epsilon_radius, min_pts)
    raise DetectorError(f"unknown detector {name!r}")


def score_points(
    spec: DetectorSpec,
    train: np.ndarray,
    targets: np.ndarray | None,
    k: int,
    backend: str = "auto",
) -> np.ndarray:
    """Fit on ``train`` and score ``targets`` (the training rows when None)."""
    train_graph = None
    if len(spec.layers) == 2 or spec.edge_feature == "reachability" or targets is None:
        train_graph = build_graph(train, train, k, True, backend)
    if targets is None:
        return run_detector(spec, train_graph, train_graph)
    target_graph = build_graph(train, targets, k, False, backend)
    return run_detector(spec, target_graph, train_graph)

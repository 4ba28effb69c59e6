"""Euclidean k-nearest-neighbour queries and the directed k-NN graph.

Neighbours are always searched among training rows. Results are ordered by
ascending distance with ties broken by the smaller training index, so every
query has exactly one correct answer. Two backends produce it: an exact brute
force scan (the reference) and a KD-tree that only proposes candidates; the
final ranking is always recomputed with the same distance routine, which makes
both backends return identical arrays.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

# brute force is cheaper than building a tree for small problems
_TREE_MIN_ROWS = 512
_TREE_MAX_DIM = 20


class NeighborError(ValueError):
    pass


def euclidean(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise NeighborError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def _dists(train: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Distances from one query to each row of ``train`` (shared by backends)."""
    diff = train - query
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _rank(cand: np.ndarray, dist: np.ndarray, k: int, exclude: int | None):
    if exclude is not None:
        keep = cand != exclude
        cand, dist = cand[keep], dist[keep]
    order = np.lexsort((cand, dist))[:k]
    return cand[order], dist[order]


def knn_query(
    train: np.ndarray,
    query: np.ndarray,
    k: int,
    exclude_index: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Brute-force k nearest training rows to ``query``.

    Returns:
        ``(indices, dists)``, both length ``k``, nearest first.

    Raises:
        NeighborError: ``k`` exceeds the number of eligible training rows.
    """
    train = np.asarray(train, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    m = train.shape[0]
    eligible = m - (1 if exclude_index is not None and 0 <= exclude_index < m else 0)
    if k < 1 or k > eligible:
        raise NeighborError(f"k={k} exceeds the {eligible} eligible training rows")
    if query.shape != (train.shape[1],):
        raise NeighborError(
            f"query has shape {query.shape}, training rows have d={train.shape[1]}"
        )
    return _rank(np.arange(m), _dists(train, query), k, exclude_index)


@dataclass(frozen=True)
class KnnGraph:
    """Directed k-NN graph: row i lists the k training sources of target i.

    Attributes:
        k: Neighbours per target.
        neighbor_index: (n_targets, k) training-row indices, nearest first.
        neighbor_dist: (n_targets, k) matching Euclidean distances.
        target_is_train: True when the targets are the training rows
            themselves and each target's own row was excluded.
    """

    k: int
    neighbor_index: np.ndarray
    neighbor_dist: np.ndarray
    target_is_train: bool

    @property
    def n_targets(self) -> int:
        return self.neighbor_index.shape[0]

    def save_csv(self, path: str | Path) -> None:
        """One row per edge: target, rank, neighbour, distance (round-trip repr)."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["target", "rank", "neighbor", "distance"])
            for i in range(self.n_targets):
                for r in range(self.k):
                    w.writerow(
                        [i, r, int(self.neighbor_index[i, r]),
                         repr(float(self.neighbor_dist[i, r]))]
                    )

    @classmethod
    def load_csv(cls, path: str | Path, target_is_train: bool) -> KnnGraph:
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        n = 1 + max(int(r["target"]) for r in rows)
        k = 1 + max(int(r["rank"]) for r in rows)
        idx = np.empty((n, k), dtype=np.int64)
        dist = np.empty((n, k), dtype=np.float64)
        for r in rows:
            i, j = int(r["target"]), int(r["rank"])
            idx[i, j] = int(r["neighbor"])
            dist[i, j] = float(r["distance"])
        return cls(k, idx, dist, target_is_train)


def _brute_graph(train, targets, k, targets_are_train):
    n, m = targets.shape[0], train.shape[0]
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k), dtype=np.float64)
    allidx = np.arange(m)
    for i in range(n):
        ex = i if targets_are_train else None
        idx[i], dist[i] = _rank(allidx, _dists(train, targets[i]), k, ex)
    return idx, dist


def _tree_graph(train, targets, k, targets_are_train):
    tree = cKDTree(train)
    n = targets.shape[0]
    kq = k + (1 if targets_are_train else 0)
    _, first = tree.query(targets, k=kq)
    first = first.reshape(n, kq)
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k), dtype=np.float64)
    for i in range(n):
        q = targets[i]
        # everything within the kq-th candidate radius, widened so that
        # exact ties and rounding differences are never lost
        radius = _dists(train[first[i]], q).max()
        cand = np.asarray(
            tree.query_ball_point(q, radius * (1 + 1e-9) + 1e-12), dtype=np.int64
        )
        cand = np.union1d(cand, first[i])
        ex = i if targets_are_train else None
        idx[i], dist[i] = _rank(cand, _dists(train[cand], q), k, ex)
    return idx, dist


def build_graph(
    train: np.ndarray,
    targets: np.ndarray,
    k: int,
    targets_are_train: bool,
    backend: str = "auto",
) -> KnnGraph:
    """Build the k-NN graph from training rows to each target.

    Args:
        train: (m, d) training matrix; the only candidate neighbours.
        targets: (n, d) query points. Must be ``train`` itself when
            ``targets_are_train`` is set, in which case target i never
            receives training row i as a neighbour.
        k: Neighbours per target.
        backend: ``"brute"``, ``"kdtree"`` or ``"auto"``. All give identical
            output.
    """
    train = np.asarray(train, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if train.ndim != 2 or targets.ndim != 2 or train.shape[1] != targets.shape[1]:
        raise NeighborError(
            f"incompatible shapes: train {train.shape}, targets {targets.shape}"
        )
    if targets_are_train and targets.shape[0] != train.shape[0]:
        raise NeighborError("targets_are_train requires targets to be the train rows")
    eligible = train.shape[0] - (1 if targets_are_train else 0)
    if k < 1 or k > eligible:
        raise NeighborError(f"k={k} exceeds the {eligible} eligible training rows")

    if backend == "auto":
        big = train.shape[0] >= _TREE_MIN_ROWS and train.shape[1] <= _TREE_MAX_DIM
        backend = "kdtree" if big else "brute"
    if backend == "brute":
        idx, dist = _brute_graph(train, targets, k, targets_are_train)
    elif backend == "kdtree":
        idx, dist = _tree_graph(train, targets, k, targets_are_train)
    else:
        raise NeighborError(f"unknown backend {backend!r}")
    idx.setflags(write=False)
    dist.setflags(write=False)
    return KnnGraph(k, idx, dist, targets_are_train)


def k_dist(graph: KnnGraph, node: int) -> float:
    """Distance from target ``node`` to its k-th nearest training row."""
    if not 0 <= node < graph.n_targets:
        raise IndexError(f"node {node} out of range for {graph.n_targets} targets")
    return float(graph.neighbor_dist[node, graph.k - 1])


def k_dists(graph: KnnGraph) -> np.ndarray:
    return graph.neighbor_dist[:, graph.k - 1]


def reach_dist(graph_over_train: KnnGraph, i: int, j: int) -> float:
    """Reachability distance of training node i from its neighbour j."""
    if not graph_over_train.target_is_train:
        raise NeighborError("reachability needs a train-over-train graph")
    hit = np.flatnonzero(graph_over_train.neighbor_index[i] == j)
    if hit.size == 0:
        raise NeighborError(f"{j} is not a neighbour of {i}")
    d = graph_over_train.neighbor_dist[i, hit[0]]
    return float(max(k_dist(graph_over_train, j), d))


def reach_edges(train_graph: KnnGraph, graph: KnnGraph) -> np.ndarray:
    """Reachability distance on every edge of ``graph``.

    ``train_graph`` supplies the k-distance of each training source node.
    """
    if not train_graph.target_is_train:
        raise NeighborError("reachability needs a train-over-train graph")
    if train_graph.k != graph.k:
        raise NeighborError("graphs were built with different k")
    return np.maximum(k_dists(train_graph)[graph.neighbor_index], graph.neighbor_dist)

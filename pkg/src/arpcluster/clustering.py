"""K-means over latent points, one-level progressive splitting, representatives."""
from __future__ import annotations

import csv
import json
import string
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TOP_K = 5
SUB_K = 5
N_INIT = 10
MAX_ITER = 300


class TooFewPoints(ValueError):
    pass


class SplitTooSmall(UserWarning):
    pass


class LloydMonotonicityError(AssertionError):
    pass


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    labels: np.ndarray
    event_ids: list[str]
    inertia: float          # sum of unsquared distances to assigned centroid
    sse: float              # squared objective that Lloyd minimises
    n_iter: int
    traces: list[list[float]] = field(default_factory=list, repr=False)

    @property
    def assignments(self) -> dict[str, int]:
        return dict(zip(self.event_ids, self.labels.tolist()))

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)


def _coerce(points, event_ids=None) -> tuple[np.ndarray, list[str]]:
    """Accept LatentPoint-like objects or an (n, d) array (+ optional ids)."""
    if isinstance(points, np.ndarray):
        X = np.asarray(points, dtype=np.float64)
        ids = list(event_ids) if event_ids is not None else [str(i) for i in range(len(X))]
        return X, ids
    points = list(points)
    ids = [p.event_id for p in points]
    X = np.array([p.z for p in points], dtype=np.float64).reshape(len(ids), -1)
    return X, ids


def squared_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [X[rng.integers(len(X))]]
    closest = squared_distances(X, centers[0][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        idx = rng.choice(len(X), p=closest / total)
        centers.append(X[idx])
        closest = np.minimum(closest, squared_distances(X, X[idx][None, :])[:, 0])
    return np.array(centers)


def _update_centroids(X: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    return np.array([X[labels == c].mean(axis=0) for c in range(k)])


def _fill_empty(X: np.ndarray, C: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    labels = labels.copy()
    for c in range(k):
        if np.any(labels == c):
            continue
        sizes = np.bincount(labels, minlength=k)
        d = np.sum((X - C[labels]) ** 2, axis=1)
        d[sizes[labels] < 2] = -1.0  # never empty another cluster
        labels[int(np.argmax(d))] = c
    return labels


def _lloyd(X: np.ndarray, C: np.ndarray, k: int, max_iter: int):
    labels = None
    trace = []
    for it in range(1, max_iter + 1):
        d2 = squared_distances(X, C)
        new_labels = np.argmin(d2, axis=1)  # first minimum = lowest index on ties
        sse = float(d2[np.arange(len(X)), new_labels].sum())
        if trace and sse > trace[-1] * (1 + 1e-12) + 1e-300:
            raise LloydMonotonicityError(f"objective rose from {trace[-1]} to {sse}")
        trace.append(sse)
        if labels is not None and np.array_equal(new_labels, labels):
            return C, labels, sse, it, trace
        labels = _fill_empty(X, C, new_labels, k)
        C = _update_centroids(X, labels, k)
    d2 = squared_distances(X, C)
    labels = np.argmin(d2, axis=1)
    return C, labels, float(d2[np.arange(len(X)), labels].sum()), max_iter, trace


def kmeans(points, k: int, seed: int = 0, n_init: int = N_INIT,
           max_iter: int = MAX_ITER, event_ids: Sequence[str] | None = None) -> ClusterModel:
    """Best of ``n_init`` k-means++ seeded Lloyd runs by squared objective.

    Points are put in a canonical (coordinate, id) order before seeding, so
    the partition does not depend on input order.
    """
    X, ids = _coerce(points, event_ids)
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(X) == 0 or len(np.unique(X, axis=0)) < k:
        raise TooFewPoints(f"need at least {k} distinct points")

    order = np.lexsort((np.array(ids, dtype=object).astype(str),) + tuple(X.T[::-1]))
    Xs = X[order]
    rng = np.random.default_rng(seed)
    best = None
    traces = []
    for _ in range(n_init):
        C0 = _kmeans_pp(Xs, k, rng)
        C, labels, sse, n_iter, trace = _lloyd(Xs, C0, k, max_iter)
        traces.append(trace)
        if best is None or sse < best[2]:
            best = (C, labels, sse, n_iter)
    C, labels_sorted, sse, n_iter = best
    labels = np.empty_like(labels_sorted)
    labels[order] = labels_sorted
    inertia = float(np.sqrt(np.sum((X - C[labels]) ** 2, axis=1)).sum())
    return ClusterModel(k, C, labels, ids, inertia, sse, n_iter, traces)


def representatives(model: ClusterModel, points) -> dict[int, str]:
    """Per non-empty cluster, the member closest to its centroid.

    Equal distances resolve to the lexicographically smallest event id.
    """
    X, _ = _coerce(points)
    ids = model.event_ids
    dist = np.sqrt(np.sum((X - model.centroids[model.labels]) ** 2, axis=1))
    reps = {}
    for c in range(model.k):
        members = np.flatnonzero(model.labels == c)
        if len(members):
            reps[c] = ids[min(members, key=lambda i: (dist[i], ids[i]))]
    return reps


def mean_dispersion(model: ClusterModel, X: np.ndarray) -> np.ndarray:
    """Mean Euclidean distance of each cluster's members to its centroid."""
    dist = np.sqrt(np.sum((X - model.centroids[model.labels]) ** 2, axis=1))
    out = np.zeros(model.k)
    for c in range(model.k):
        members = model.labels == c
        if members.any():
            out[c] = dist[members].mean()
    return out


@dataclass
class Leaf:
    label: str
    centroid: np.ndarray
    members: np.ndarray           # indices into the full point list
    fraction: float
    representative: str | None


def _model_json(model: ClusterModel, reps: dict[int, str], n_total: int, labels: list[str]) -> dict:
    clusters = []
    for c in range(model.k):
        count = int(np.sum(model.labels == c))
        clusters.append({"index": c, "label": labels[c], "count": count,
                         "percent": count / n_total, "representative_event": reps.get(c)})
    return {"k": model.k, "centroids": model.centroids.tolist(),
            "inertia": model.inertia, "clusters": clusters}


@dataclass
class ClusterTree:
    top: ClusterModel
    split_cluster: int | None
    sub: ClusterModel | None
    leaves: list[Leaf]
    event_ids: list[str]
    points: np.ndarray = field(repr=False)

    @property
    def percentages(self) -> dict[str, float]:
        return {leaf.label: leaf.fraction for leaf in self.leaves}

    @property
    def representatives(self) -> dict[str, str | None]:
        return {leaf.label: leaf.representative for leaf in self.leaves}

    def leaf_labels(self) -> list[str]:
        """Leaf label for every point, in input order."""
        out = [""] * len(self.event_ids)
        for leaf in self.leaves:
            for i in leaf.members:
                out[i] = leaf.label
        return out

    def to_json(self) -> dict:
        n = len(self.event_ids)
        letters = list(string.ascii_uppercase[:self.top.k])
        doc = _model_json(self.top, representatives(self.top, self.points), n, letters)
        doc["split_cluster"] = self.split_cluster
        doc["sub"] = None
        if self.sub is not None:
            members = self.top.members(self.split_cluster)
            prefix = letters[self.split_cluster]
            doc["sub"] = _model_json(self.sub, representatives(self.sub, self.points[members]), n,
                                     [f"{prefix}{s + 1}" for s in range(self.sub.k)])
        doc["leaves"] = [{"label": leaf.label, "percent": leaf.fraction,
                          "count": int(len(leaf.members)),
                          "representative_event": leaf.representative}
                         for leaf in self.leaves]
        return doc


def _distinct(X: np.ndarray) -> int:
    return len(np.unique(X, axis=0)) if len(X) else 0


def progressive_cluster(points, split_selector="auto", seed: int = 0, k: int = TOP_K,
                        sub_k: int = SUB_K, n_init: int = N_INIT,
                        event_ids: Sequence[str] | None = None) -> ClusterTree:
    """Top-level K-means, then optionally re-cluster one mixed cluster.

    ``split_selector`` is ``"auto"`` (the cluster with the largest mean
    distance to its centroid), ``"none"``, or an integer cluster index.
    Top-level leaves are labelled A, B, C, ...; the split cluster's children
    carry its letter with a 1-based suffix (C1..C5).
    """
    X, ids = _coerce(points, event_ids)
    top = kmeans(X, k, seed, n_init, event_ids=ids)

    if split_selector in (None, "none"):
        split = None
    elif split_selector == "auto":
        split = int(np.argmax(mean_dispersion(top, X)))
    else:
        split = int(split_selector)
        if not 0 <= split < k:
            raise ValueError(f"split index {split} outside 0..{k - 1}")

    sub = None
    if split is not None:
        members = top.members(split)
        if _distinct(X[members]) < sub_k:
            warnings.warn(f"cluster {split} has fewer than {sub_k} distinct points; not splitting",
                          SplitTooSmall, stacklevel=2)
            split = None
        else:
            sub = kmeans(X[members], sub_k, seed, n_init, event_ids=[ids[i] for i in members])

    n = len(X)
    leaves = []
    top_reps = representatives(top, X)
    for c in range(k):
        letter = string.ascii_uppercase[c]
        members = top.members(c)
        if c != split:
            leaves.append(Leaf(letter, top.centroids[c], members, len(members) / n,
                               top_reps.get(c)))
            continue
        sub_reps = representatives(sub, X[members])
        for s in range(sub_k):
            sub_members = members[sub.labels == s]
            leaves.append(Leaf(f"{letter}{s + 1}", sub.centroids[s], sub_members,
                               len(sub_members) / n, sub_reps.get(s)))
    return ClusterTree(top, split, sub, leaves, ids, X)


def purity(predicted: Sequence, truth: Sequence) -> float:
    """Fraction of points whose cluster's majority true label equals their own."""
    if len(predicted) == 0:
        return 0.0
    by_cluster: dict = {}
    for p, t in zip(predicted, truth):
        by_cluster.setdefault(p, Counter())[t] += 1
    return sum(c.most_common(1)[0][1] for c in by_cluster.values()) / len(predicted)


def write_cluster_json(tree: ClusterTree, stream) -> None:
    json.dump(tree.to_json(), stream, indent=1)
    stream.write("\n")


def write_assignments_csv(tree: ClusterTree, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["event_id", "leaf_label"])
    for event_id, label in zip(tree.event_ids, tree.leaf_labels()):
        writer.writerow([event_id, label])

"""k-means and the ACC / NMI / ARI clustering scores."""

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DataError, InvalidParameterError, ShapeError
from .numerics import as_matrix, make_rng, pairwise_sq_euclidean

RESULTS_COLUMNS = ("setting", "eta", "seed", "ACC", "NMI", "ARI", "KL")


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    inertia_trace: list = field(default_factory=list)

    @property
    def C(self):
        return self.centroids.shape[0]


def _kmeanspp(X, C, rng):
    n = X.shape[0]
    centers = np.empty((C, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = pairwise_sq_euclidean(X, centers[:1])[:, 0]
    for c in range(1, C):
        total = closest.sum()
        if total > 0:
            i = rng.choice(n, p=closest / total)
        else:
            i = rng.integers(n)
        centers[c] = X[i]
        closest = np.minimum(closest, pairwise_sq_euclidean(X, centers[c:c + 1])[:, 0])
    return centers


def _lloyd(X, centers, max_iters):
    labels = None
    trace = []
    it = 0
    for it in range(1, max_iters + 1):
        D = pairwise_sq_euclidean(X, centers)
        new = D.argmin(axis=1)
        dist = D[np.arange(X.shape[0]), new]
        trace.append(float(dist.sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=centers.shape[0])
        centers = np.zeros_like(centers)
        np.add.at(centers, labels, X)
        empty = np.flatnonzero(counts == 0)
        nonempty = counts > 0
        centers[nonempty] /= counts[nonempty, None]
        if empty.size:
            # re-seed each empty cluster on the currently worst-served point
            far = np.argsort(-dist, kind="stable")
            for c, i in zip(empty, far):
                centers[c] = X[i]
                dist[i] = 0.0
    D = pairwise_sq_euclidean(X, centers)
    labels = D.argmin(axis=1)
    inertia = float(D[np.arange(X.shape[0]), labels].sum())
    return labels, centers, inertia, it, trace


def kmeans(X, C, seed=0, max_iters=300, restarts=10):
    """k-means++ seeding + Lloyd iterations, best of ``restarts`` by inertia."""
    X = as_matrix(X, "X")
    n = X.shape[0]
    if not 1 <= C <= n:
        raise InvalidParameterError(f"cluster count must lie in [1, {n}], got {C}")
    if restarts < 1 or max_iters < 1:
        raise InvalidParameterError("restarts and max_iters must be >= 1")
    best = None
    for r in range(restarts):
        rng = make_rng(seed, r)
        labels, centers, inertia, it, trace = _lloyd(X, _kmeanspp(X, C, rng), max_iters)
        if best is None or inertia < best.inertia:
            best = ClusterAssignment(labels, centers, inertia, it, trace)
    return best


def _check_pair(pred, true):
    pred = np.asarray(pred).ravel()
    true = np.asarray(true).ravel()
    if pred.shape != true.shape:
        raise ShapeError(f"label vectors differ in length: {pred.size} vs {true.size}")
    return pred, true


def contingency(pred, true):
    """Counts ``N[i, j]`` of samples with predicted cluster i and true class j."""
    pred, true = _check_pair(pred, true)
    if pred.size == 0:
        return np.zeros((0, 0), dtype=np.int64)
    pu, p = np.unique(pred, return_inverse=True)
    tu, t = np.unique(true, return_inverse=True)
    return np.bincount(p * tu.size + t, minlength=pu.size * tu.size).reshape(pu.size, tu.size)


def clustering_accuracy(pred, true):
    N = contingency(pred, true)
    if N.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(N, maximize=True)
    return float(N[rows, cols].sum() / N.sum())


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(pred, true):
    """Mutual information normalised by the arithmetic mean of the two entropies."""
    N = contingency(pred, true)
    n = N.sum()
    if n == 0:
        return 0.0
    a = N.sum(axis=1)
    b = N.sum(axis=0)
    h_pred, h_true = _entropy(a, n), _entropy(b, n)
    if h_pred == 0.0 and h_true == 0.0:
        return 1.0
    nz = N > 0
    outer = np.outer(a, b)[nz]
    mi = float((N[nz] / n * np.log(N[nz] * n / outer)).sum())
    return float(min(max(mi / (0.5 * (h_pred + h_true)), 0.0), 1.0))


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def ari(pred, true):
    N = contingency(pred, true)
    n = N.sum()
    if n < 2:
        return 1.0
    index = _comb2(N).sum()
    sa = _comb2(N.sum(axis=1)).sum()
    sb = _comb2(N.sum(axis=0)).sum()
    expected = sa * sb / _comb2(n)
    max_index = 0.5 * (sa + sb)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


@dataclass
class ClusteringReport:
    acc: float
    nmi: float
    ari: float
    kl: float = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def score(pred, true, kl=None, **metadata):
    return ClusteringReport(clustering_accuracy(pred, true), nmi(pred, true), ari(pred, true), kl, dict(metadata))


def evaluate(stack, dataset, C, seed=0, **metadata):
    """Embed ``dataset`` with the target encoders, run k-means, and score the partition."""
    from .pipeline import extract_embeddings

    if dataset.labels is None:
        raise DataError("evaluation needs a labelled dataset")
    Z = extract_embeddings(stack, dataset)
    assignment = kmeans(Z, C, seed)
    meta = {"seed": seed, "C": C, "eta": dataset.missing_rate}
    if getattr(stack, "config", None) is not None:
        meta["config_hash"] = stack.config.digest()
    meta.update(metadata)
    return score(assignment.labels, dataset.labels, **meta)


def write_report(path, report):
    with open(path, "w") as fh:
        fh.write(report.to_json() + "\n")


def append_results(path, setting, eta, seed, report):
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(RESULTS_COLUMNS)
        kl = "" if report.kl is None else repr(report.kl)
        w.writerow([setting, repr(float(eta)), seed, repr(report.acc), repr(report.nmi), repr(report.ari), kl])

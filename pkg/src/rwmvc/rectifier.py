"""Soft contrastive targets built from a batch of target-branch embeddings.

The random-walk target connects every pair of (L2-normalised) embeddings with
a heat-kernel weight, row-normalises that graph into a transition matrix and
mixes its ``t``-th power with the identity:

    T = alpha * I + (1 - alpha) * M**t

k-NN and epsilon-neighbourhood targets are kept as first-order baselines, and
``oracle_target`` / ``kl_to_oracle`` score any target against the labels.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidParameterError, NumericDomainError, ShapeError
from .numerics import as_matrix, l2_normalize, matrix_power, pairwise_sq_euclidean

STRATEGIES = ("random_walk", "knn", "eps", "none")
TARGET_STRATEGIES = ("self_swap", "self", "swap", "concat")
STRATEGY_ALIASES = {"rw": "random_walk", "random-walk": "random_walk", "identity": "none"}


@dataclass(frozen=True)
class TargetMatrix:
    matrix: np.ndarray
    provenance: str

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    @property
    def n(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class AffinityGraph:
    A: np.ndarray
    sigma: float


@dataclass(frozen=True)
class TransitionMatrix:
    M: np.ndarray
    degree: np.ndarray


@dataclass(frozen=True)
class RectifierConfig:
    strategy: str = "random_walk"
    target_strategy: str = "self_swap"
    t: int = 5
    alpha: float = 0.5
    sigma: float = 0.1
    k: int = 10
    epsilon: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "strategy", STRATEGY_ALIASES.get(self.strategy, self.strategy))
        if self.strategy not in STRATEGIES:
            raise InvalidParameterError(f"unknown rectifier strategy {self.strategy!r}")
        if self.target_strategy not in TARGET_STRATEGIES:
            raise InvalidParameterError(f"unknown target strategy {self.target_strategy!r}")
        _check_alpha(self.alpha)
        if self.t < 0:
            raise InvalidParameterError(f"walk length must be >= 0, got {self.t}")
        if not self.sigma > 0:
            raise InvalidParameterError(f"sigma must be positive, got {self.sigma}")
        if self.k < 1:
            raise InvalidParameterError(f"k must be >= 1, got {self.k}")
        if self.epsilon < 0:
            raise InvalidParameterError(f"epsilon must be >= 0, got {self.epsilon}")


def _check_alpha(alpha):
    if not 0.0 <= alpha <= 1.0:
        raise InvalidParameterError(f"alpha must lie in [0, 1], got {alpha}")


def identity_target(n):
    return TargetMatrix(np.eye(n), "identity")


def affinity_graph(Z, sigma=0.1):
    """Heat-kernel graph ``exp(-|z_i - z_j|^2 / sigma)`` on row-normalised ``Z``."""
    Z = as_matrix(Z, "Z")
    if Z.shape[0] < 2:
        raise DegenerateInputError("affinity graph needs at least 2 samples")
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    Zn = l2_normalize(Z, "Z")
    A = np.exp(-pairwise_sq_euclidean(Zn, Zn) / sigma)
    return AffinityGraph(A, float(sigma))


def transition_matrix(graph):
    A = graph.A if isinstance(graph, AffinityGraph) else as_matrix(graph, "A")
    d = A.sum(axis=1)
    if np.any(d <= 0):
        raise DegenerateInputError("graph has a node with zero degree")
    return TransitionMatrix(A / d[:, None], d)


def random_walk_target(Z, sigma=0.1, t=5, alpha=0.5):
    _check_alpha(alpha)
    M = transition_matrix(affinity_graph(Z, sigma)).M
    n = M.shape[0]
    T = alpha * np.eye(n) + (1.0 - alpha) * matrix_power(M, t)
    return TargetMatrix(T, "random_walk")


def _neighbourhood_target(nbr, alpha, provenance):
    """``alpha * e_i + (1 - alpha) * uniform(nbr[i])``; empty rows fall back to ``e_i``."""
    n = nbr.shape[0]
    counts = nbr.sum(axis=1)
    U = np.zeros((n, n))
    has = counts > 0
    U[has] = nbr[has] / counts[has, None]
    T = np.eye(n)
    T[has] = alpha * T[has] + (1.0 - alpha) * U[has]
    return TargetMatrix(T, provenance)


def knn_target(Z, k=10, alpha=0.5):
    """k nearest neighbours by cosine similarity, self excluded, ties to the lower index."""
    _check_alpha(alpha)
    Zn = l2_normalize(as_matrix(Z, "Z"), "Z")
    n = Zn.shape[0]
    if not 1 <= k <= n - 1:
        raise InvalidParameterError(f"k must lie in [1, {n - 1}], got {k}")
    S = Zn @ Zn.T
    np.fill_diagonal(S, -np.inf)
    order = np.argsort(-S, axis=1, kind="stable")[:, :k]
    nbr = np.zeros((n, n), dtype=bool)
    nbr[np.arange(n)[:, None], order] = True
    return _neighbourhood_target(nbr, alpha, "knn")


def eps_target(Z, epsilon=0.5, alpha=0.5):
    """Neighbours are the other samples within squared distance ``epsilon`` on the unit sphere.

    ``epsilon`` may be a scalar or one radius per anchor.
    """
    _check_alpha(alpha)
    Zn = l2_normalize(as_matrix(Z, "Z"), "Z")
    n = Zn.shape[0]
    eps = np.broadcast_to(np.asarray(epsilon, dtype=np.float64), (n,))
    if np.any(eps < 0):
        raise InvalidParameterError("epsilon must be >= 0")
    D = pairwise_sq_euclidean(Zn, Zn)
    nbr = D <= eps[:, None]
    np.fill_diagonal(nbr, False)
    return _neighbourhood_target(nbr, alpha, "eps")


def oracle_target(labels, n=None):
    """Uniform mass over the in-batch samples sharing the anchor's label (self included)."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeError("labels must be 1-D")
    if n is not None and labels.shape[0] != n:
        raise ShapeError(f"expected {n} labels, got {labels.shape[0]}")
    same = (labels[:, None] == labels[None, :]).astype(np.float64)
    return TargetMatrix(same / same.sum(axis=1, keepdims=True), "oracle")


def kl_to_oracle(Tgt, T, floor=None):
    """Row-averaged ``KL(Tgt || T)`` with ``0 log 0 = 0``.

    Strict by default: zero mass in ``T`` where ``Tgt`` is positive raises.
    With ``floor`` the entries of ``T`` are clamped from below before the
    logarithm, which keeps identity and k-NN targets finite (``floor=1e-10``
    puts the identity target near ``ln 1e10 = 23.03`` per anchor).
    """
    P = np.asarray(Tgt, dtype=np.float64)
    Q = np.asarray(T, dtype=np.float64)
    if P.shape != Q.shape or P.ndim != 2:
        raise ShapeError(f"target shapes differ: {P.shape} vs {Q.shape}")
    support = P > 0
    if floor is not None:
        if not floor > 0:
            raise InvalidParameterError(f"floor must be positive, got {floor}")
        Q = np.maximum(Q, floor)
    elif np.any(Q[support] <= 0):
        raise NumericDomainError("T has zero mass where the oracle target is positive")
    terms = np.zeros_like(P)
    terms[support] = P[support] * (np.log(P[support]) - np.log(Q[support]))
    return float(max(terms.sum() / P.shape[0], 0.0))


KL_FLOOR = 1e-10


def make_target(Z, config):
    """Single target matrix for ``Z`` under ``config.strategy``."""
    Z = as_matrix(Z, "Z")
    s = config.strategy
    if s == "none":
        return identity_target(Z.shape[0])
    if s == "random_walk":
        return random_walk_target(Z, config.sigma, config.t, config.alpha)
    if s == "knn":
        return knn_target(Z, min(config.k, Z.shape[0] - 1), config.alpha)
    return eps_target(Z, config.epsilon, config.alpha)


def _masked_target(Z, present, config):
    """Target built from present rows only; absent anchors keep an identity row."""
    n = Z.shape[0]
    idx = np.flatnonzero(present)
    T = np.eye(n)
    if idx.size >= 2:
        sub = make_target(Z[idx], config)
        T[np.ix_(idx, idx)] = sub.matrix
    return TargetMatrix(T, config.strategy)


@dataclass
class TargetAssignment:
    """Targets for every loss term: ``intra[v]`` and ``inter[(v, u)]``."""

    per_view: list
    intra: list
    inter: dict
    provenance: str


def build_targets(zk, config, present=None):
    """Assign targets to the intra- and inter-view terms.

    ``self_swap`` (default): intra term of view v uses view v's graph, the
    inter term ``v -> u`` uses view u's graph. ``self`` always uses the
    anchor view v, ``swap`` always uses the other view (for the intra term
    the next view, cyclically), ``concat`` one graph on the concatenation of
    all per-view normalised embeddings.

    ``present`` is an optional ``(n, V)`` boolean mask; when given, each view's
    graph is built from its observed rows only.
    """
    V = len(zk)
    n = zk[0].shape[0]
    if any(z.shape[0] != n for z in zk):
        raise ShapeError("all views must share one batch size")
    if config.strategy == "none":
        per_view = [identity_target(n) for _ in range(V)]
    elif config.target_strategy == "concat":
        Zc = np.hstack([l2_normalize(z, f"zk[{v}]") for v, z in enumerate(zk)])
        if present is not None:
            shared = _masked_target(Zc, np.asarray(present).all(axis=1), config)
        else:
            shared = make_target(Zc, config)
        per_view = [shared] * V
    elif present is not None:
        present = np.asarray(present, dtype=bool)
        per_view = [_masked_target(as_matrix(z), present[:, v], config) for v, z in enumerate(zk)]
    else:
        per_view = [make_target(z, config) for z in zk]

    mats = [p.matrix for p in per_view]
    ts = config.target_strategy
    if ts == "swap":
        intra = [mats[(v + 1) % V] for v in range(V)]
    else:
        intra = list(mats)
    inter = {}
    for v in range(V):
        for u in range(V):
            if u != v:
                inter[(v, u)] = mats[v] if ts == "self" else mats[u]
    return TargetAssignment(per_view, intra, inter, per_view[0].provenance)


def write_matrix_csv(path, M):
    np.savetxt(path, np.asarray(M, dtype=np.float64), delimiter=",", fmt="%.17g")

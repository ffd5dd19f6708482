"""Dense float64 kernels and seeded randomness shared by the other modules."""

import os

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import DegenerateInputError, InvalidParameterError, ShapeError

THREADS_ENV = "RWMVC_THREADS"

_thread_limiter = None


def as_matrix(a, name="matrix"):
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidParameterError(f"{name} contains non-finite entries")
    return m


def make_rng(seed, *stream):
    """Return a PCG64 generator keyed by ``seed`` plus optional stream ids.

    Stream ids let independent consumers (per-epoch shuffles, k-means
    restarts, ...) draw from non-overlapping sequences that do not depend on
    how many numbers other consumers have already drawn.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


def configure_threads(n=None):
    """Cap BLAS/OpenMP threads. ``n=1`` is the bit-reproducible mode.

    With ``n=None`` the value is read from ``$RWMVC_THREADS``; unset leaves
    the BLAS default alone.
    """
    global _thread_limiter
    if n is None:
        raw = os.environ.get(THREADS_ENV)
        if not raw:
            return None
        try:
            n = int(raw)
        except ValueError:
            raise InvalidParameterError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    if n < 1:
        raise InvalidParameterError(f"thread count must be >= 1, got {n}")
    _thread_limiter = threadpool_limits(limits=n)
    return n


def row_softmax(S, tau):
    """Row-wise softmax of ``S / tau``, stabilised by subtracting each row max."""
    if not tau > 0:
        raise InvalidParameterError(f"tau must be positive, got {tau}")
    S = as_matrix(S, "S")
    logits = S / tau
    logits = logits - logits.max(axis=1, keepdims=True)
    E = np.exp(logits)
    return E / E.sum(axis=1, keepdims=True)


def matrix_power(M, t):
    """``M**t`` by repeated squaring; ``t == 0`` gives the identity."""
    M = as_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise ShapeError(f"matrix_power needs a square matrix, got {M.shape}")
    t = int(t)
    if t < 0:
        raise InvalidParameterError(f"power must be nonnegative, got {t}")
    result = np.eye(M.shape[0])
    base = M.copy()
    first = True
    while t:
        if t & 1:
            # avoid the I @ base product so t=1 returns M bit-exactly
            result = base.copy() if first else result @ base
            first = False
        t >>= 1
        if t:
            base = base @ base
    return result


def _row_norms(A, name):
    norms = np.sqrt(np.einsum("ij,ij->i", A, A))
    if np.any(norms == 0):
        raise DegenerateInputError(f"{name} has zero-norm rows: {np.flatnonzero(norms == 0).tolist()}")
    return norms


def l2_normalize(A, name="A"):
    A = as_matrix(A, name)
    return A / _row_norms(A, name)[:, None]


def pairwise_cosine(A, B):
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"feature dims differ: {A.shape[1]} vs {B.shape[1]}")
    C = l2_normalize(A, "A") @ l2_normalize(B, "B").T
    return np.clip(C, -1.0, 1.0)


def pairwise_sq_euclidean(A, B):
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"feature dims differ: {A.shape[1]} vs {B.shape[1]}")
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    D = aa[:, None] + bb[None, :] - 2.0 * (A @ B.T)
    np.maximum(D, 0.0, out=D)
    if A is B or (A.shape == B.shape and np.array_equal(A, B)):
        np.fill_diagonal(D, 0.0)
        D = 0.5 * (D + D.T)
    return D

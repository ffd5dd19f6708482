"""Soft-target contrastive cross-entropy over cosine-similarity softmax rows.

The loss for one (anchor, key) pair of batches is

    H(T, P) = -(1/n) * sum_ij T_ij * log P_ij,   P = row_softmax(cos(Zq, Zk) / tau)

and the decoupled objective sums it over the intra-view pairs
``(zq[v], zk[v])`` and the inter-view pairs ``(p[v->u], zk[u])``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericDomainError, ShapeError
from .numerics import as_matrix, l2_normalize, row_softmax

DEFAULT_TAU = 0.5


def similarity_rows(Zq, Zk, tau=DEFAULT_TAU):
    Zq = as_matrix(Zq, "Zq")
    Zk = as_matrix(Zk, "Zk")
    if Zq.shape != Zk.shape:
        raise ShapeError(f"Zq {Zq.shape} and Zk {Zk.shape} must match")
    C = l2_normalize(Zq, "Zq") @ l2_normalize(Zk, "Zk").T
    return row_softmax(C, tau)


def soft_cross_entropy(T, P):
    T = np.asarray(T, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if T.shape != P.shape:
        raise ShapeError(f"target {T.shape} and distribution {P.shape} must match")
    support = T > 0
    if np.any(P[support] <= 0):
        raise NumericDomainError("zero probability where the target has mass")
    logs = np.zeros_like(P)
    logs[support] = np.log(P[support])
    return float(-(T * logs).sum() / T.shape[0])


def _cosine_backward(G, Zq, Zk, key_grad):
    """Chain dLoss/dcos = G through cos_ij = <q_i, k_j> / (|q_i| |k_j|)."""
    qn = np.linalg.norm(Zq, axis=1, keepdims=True)
    kn = np.linalg.norm(Zk, axis=1, keepdims=True)
    qh = Zq / qn
    kh = Zk / kn
    dqh = G @ kh
    dZq = (dqh - qh * np.sum(qh * dqh, axis=1, keepdims=True)) / qn
    if not key_grad:
        return dZq, None
    dkh = G.T @ qh
    dZk = (dkh - kh * np.sum(kh * dkh, axis=1, keepdims=True)) / kn
    return dZq, dZk


def contrastive_term(T, Zq, Zk, tau=DEFAULT_TAU, key_grad=False):
    """Loss value and gradients of ``H(T, similarity_rows(Zq, Zk))``.

    Returns ``(loss, dZq, dZk)``; ``dZk`` is ``None`` unless ``key_grad``.
    """
    T = np.asarray(T, dtype=np.float64)
    P = similarity_rows(Zq, Zk, tau)
    if T.shape != P.shape:
        raise ShapeError(f"target {T.shape} does not match batch size {P.shape[0]}")
    loss = soft_cross_entropy(T, P)
    G = (P - T) / (T.shape[0] * tau)
    dZq, dZk = _cosine_backward(G, np.asarray(Zq, dtype=np.float64), np.asarray(Zk, dtype=np.float64), key_grad)
    return loss, dZq, dZk


def contrastive_grad(T, Zq, Zk, tau=DEFAULT_TAU):
    """Gradient of the soft cross-entropy w.r.t. ``Zq`` with ``Zk`` held constant."""
    return contrastive_term(T, Zq, Zk, tau)[1]


@dataclass
class LossBreakdown:
    total: float
    intra: dict
    inter: dict
    dzq: list
    dp: dict
    dzk: list = field(default=None)

    def terms(self):
        """Flat ``{name: value}`` view, e.g. ``intra_0`` or ``inter_0_1``."""
        out = {f"intra_{v}": x for v, x in sorted(self.intra.items())}
        out.update({f"inter_{v}_{u}": x for (v, u), x in sorted(self.inter.items())})
        return out


def decoupled_loss(zq, zk, decoded, intra_targets, inter_targets, tau=DEFAULT_TAU,
                   use_intra=True, use_inter=True, key_grad=False):
    """Sum of intra-view and inter-view soft contrastive terms.

    Parameters
    ----------
    zq, zk : list of arrays (n, d)
        Online and target embeddings per view.
    decoded : dict ``(v, u) -> array (n, d)`` or None
        Cross-view decoder outputs ``p[v->u]``. ``None`` means no decoder: the
        inter term for ``(v, u)`` then compares ``zq[v]`` with ``zk[u]``.
    intra_targets : list of (n, n) targets, one per view.
    inter_targets : dict ``(v, u) -> (n, n)`` target.
    key_grad : bool
        Also return gradients for ``zk`` (only used when the target branch is
        not stop-gradiented).
    """
    V = len(zq)
    if V < 2 or len(zk) != V:
        raise ShapeError(f"need >= 2 views with matching online/target lists, got {len(zq)}/{len(zk)}")
    n = zq[0].shape[0]
    if any(z.shape[0] != n for z in list(zq) + list(zk)):
        raise ShapeError("all views must share one batch size")
    dzq = [np.zeros_like(np.asarray(z, dtype=np.float64)) for z in zq]
    dzk = [np.zeros_like(np.asarray(z, dtype=np.float64)) for z in zk] if key_grad else None
    dp = {}
    intra, inter = {}, {}
    if use_intra:
        for v in range(V):
            loss, gq, gk = contrastive_term(intra_targets[v], zq[v], zk[v], tau, key_grad)
            intra[v] = loss
            dzq[v] += gq
            if key_grad:
                dzk[v] += gk
    if use_inter:
        for v in range(V):
            for u in range(V):
                if u == v:
                    continue
                anchor = zq[v] if decoded is None else decoded[(v, u)]
                if anchor.shape[0] != n:
                    raise ShapeError(f"decoded batch for {(v, u)} has {anchor.shape[0]} rows, expected {n}")
                loss, gq, gk = contrastive_term(inter_targets[(v, u)], anchor, zk[u], tau, key_grad)
                inter[(v, u)] = loss
                if decoded is None:
                    dzq[v] += gq
                else:
                    dp[(v, u)] = gq
                if key_grad:
                    dzk[u] += gk
    total = sum(intra.values()) + sum(inter.values())
    return LossBreakdown(float(total), intra, inter, dzq, dp, dzk)

"""Hand-differentiated MLPs (linear / batchnorm / relu), Adam, and EMA copies.

Weights are stored as ``(in_dim, out_dim)`` so a layer computes ``X @ W + b``
on row-major batches.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, InvalidParameterError, ShapeError, SpecError
from .numerics import as_matrix

LAYER_KINDS = ("linear", "batchnorm", "relu")
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int = None
    out_dim: int = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise SpecError(f"unknown layer kind {self.kind!r}")
        if self.kind == "linear" and (self.in_dim is None or self.out_dim is None):
            raise SpecError("linear layers need in_dim and out_dim")
        if self.kind == "batchnorm" and self.in_dim is None:
            raise SpecError("batchnorm layers need in_dim")


def linear(in_dim, out_dim):
    return LayerSpec("linear", int(in_dim), int(out_dim))


def batchnorm(dim):
    return LayerSpec("batchnorm", int(dim), int(dim))


def relu():
    return LayerSpec("relu")


def encoder_spec(in_dim, hidden=(1024, 1024, 1024), out_dim=128):
    """Linear+BN+ReLU blocks followed by a final Linear+BN (no activation)."""
    layers = []
    width = in_dim
    for h in hidden:
        layers += [linear(width, h), batchnorm(h), relu()]
        width = h
    layers += [linear(width, out_dim), batchnorm(out_dim)]
    return layers


def decoder_spec(dim, hidden=512):
    return [linear(dim, hidden), relu(), linear(hidden, dim)]


def check_chain(specs):
    width = None
    for i, s in enumerate(specs):
        if s.kind == "relu":
            continue
        if width is not None and s.in_dim != width:
            raise SpecError(f"layer {i} ({s.kind}) expects width {s.in_dim}, previous output is {width}")
        width = s.out_dim if s.kind == "linear" else s.in_dim
    return width


@dataclass
class ForwardCache:
    inputs: list
    xhat: list
    inv_std: list


class Mlp:
    """Sequential MLP with explicit parameter and running-statistic storage."""

    def __init__(self, specs, params, buffers, eps=BN_EPS, bn_momentum=BN_MOMENTUM):
        self.specs = tuple(specs)
        self.params = params
        self.buffers = buffers
        self.eps = eps
        self.bn_momentum = bn_momentum

    @property
    def in_dim(self):
        for s in self.specs:
            if s.kind != "relu":
                return s.in_dim
        return None

    @property
    def out_dim(self):
        return check_chain(self.specs)

    def named_parameters(self):
        for i, p in enumerate(self.params):
            for k in sorted(p):
                yield f"{i}.{k}", p[k]

    def named_buffers(self):
        for i, b in enumerate(self.buffers):
            for k in sorted(b):
                yield f"{i}.{k}", b[k]

    def n_parameters(self):
        return sum(a.size for _, a in self.named_parameters())

    def copy(self):
        return Mlp(
            self.specs,
            [{k: v.copy() for k, v in p.items()} for p in self.params],
            [{k: v.copy() for k, v in b.items()} for b in self.buffers],
            self.eps,
            self.bn_momentum,
        )

    def zero_grads(self):
        return [{k: np.zeros_like(v) for k, v in p.items()} for p in self.params]

    def forward(self, X, mode="train", update_stats=True):
        """Run the network on a batch.

        Parameters
        ----------
        X : array (n, d)
        mode : {"train", "eval"}
            Train mode normalises batchnorm layers with batch statistics and
            returns a cache for :meth:`backward`; eval mode uses the running
            statistics and returns ``None`` as the cache.
        update_stats : bool
            In train mode, whether running statistics are updated.
        """
        if mode not in ("train", "eval"):
            raise InvalidParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
        X = as_matrix(X, "X")
        if self.in_dim is not None and X.shape[1] != self.in_dim:
            raise ShapeError(f"input width {X.shape[1]} does not match first layer ({self.in_dim})")
        train = mode == "train"
        has_bn = any(s.kind == "batchnorm" for s in self.specs)
        if train and has_bn and X.shape[0] < 2:
            raise DegenerateInputError("train-mode batchnorm needs at least 2 samples")
        cache = ForwardCache([], [], []) if train else None
        h = X
        n = X.shape[0]
        for s, p, buf in zip(self.specs, self.params, self.buffers):
            if train:
                cache.inputs.append(h)
            xhat = inv_std = None
            if s.kind == "linear":
                h = h @ p["W"] + p["b"]
            elif s.kind == "relu":
                h = np.maximum(h, 0.0)
            elif train:
                mu = h.mean(axis=0)
                var = h.var(axis=0)
                inv_std = 1.0 / np.sqrt(var + self.eps)
                xhat = (h - mu) * inv_std
                h = xhat * p["gamma"] + p["beta"]
                if update_stats:
                    mom = self.bn_momentum
                    buf["running_mean"] *= 1.0 - mom
                    buf["running_mean"] += mom * mu
                    buf["running_var"] *= 1.0 - mom
                    buf["running_var"] += mom * var * (n / (n - 1))
            else:
                inv = 1.0 / np.sqrt(buf["running_var"] + self.eps)
                h = (h - buf["running_mean"]) * inv * p["gamma"] + p["beta"]
            if train:
                cache.xhat.append(xhat)
                cache.inv_std.append(inv_std)
        return h, cache

    def backward(self, cache, dY):
        """Backpropagate ``dY`` through the cached forward pass.

        Returns per-layer gradient dicts (same layout as ``params``) and the
        gradient with respect to the network input.
        """
        if cache is None:
            raise InvalidParameterError("backward needs a train-mode forward cache")
        if len(cache.inputs) != len(self.specs):
            raise ShapeError("cache does not belong to this network")
        dY = np.asarray(dY, dtype=np.float64)
        if self.specs:
            out_shape = (cache.inputs[0].shape[0], self.out_dim)
            if dY.shape != out_shape:
                raise ShapeError(f"dY has shape {dY.shape}, expected {out_shape}")
        grads = [dict() for _ in self.specs]
        g = dY
        for i in range(len(self.specs) - 1, -1, -1):
            s, p, x = self.specs[i], self.params[i], cache.inputs[i]
            if s.kind == "linear":
                grads[i]["W"] = x.T @ g
                grads[i]["b"] = g.sum(axis=0)
                g = g @ p["W"].T
            elif s.kind == "relu":
                g = g * (x > 0)
            else:
                xhat, inv_std = cache.xhat[i], cache.inv_std[i]
                grads[i]["gamma"] = (g * xhat).sum(axis=0)
                grads[i]["beta"] = g.sum(axis=0)
                dxhat = g * p["gamma"]
                n = x.shape[0]
                g = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        return grads, g


def build_mlp(specs, rng, eps=BN_EPS, bn_momentum=BN_MOMENTUM):
    """Initialise a network: W ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), b = 0, BN = identity."""
    specs = list(specs)
    check_chain(specs)
    params, buffers = [], []
    for s in specs:
        if s.kind == "linear":
            bound = np.sqrt(6.0 / s.in_dim)
            params.append({
                "W": rng.uniform(-bound, bound, size=(s.in_dim, s.out_dim)),
                "b": np.zeros(s.out_dim),
            })
            buffers.append({})
        elif s.kind == "batchnorm":
            params.append({"gamma": np.ones(s.in_dim), "beta": np.zeros(s.in_dim)})
            buffers.append({"running_mean": np.zeros(s.in_dim), "running_var": np.ones(s.in_dim)})
        else:
            params.append({})
            buffers.append({})
    return Mlp(specs, params, buffers, eps, bn_momentum)


def mlp_forward(net, X, mode="train", update_stats=True):
    return net.forward(X, mode, update_stats)


def mlp_backward(net, cache, dY):
    return net.backward(cache, dY)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net, **kw):
        return cls(net.zero_grads(), net.zero_grads(), **kw)


def adam_step(net, grads, state, lr):
    """Bias-corrected Adam update in place; no weight decay."""
    if not lr > 0:
        raise InvalidParameterError(f"learning rate must be positive, got {lr}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(net.params, grads, state.m, state.v):
        for k in p:
            gk = g.get(k)
            if gk is None:
                gk = np.zeros_like(p[k])
            if gk.shape != p[k].shape:
                raise ShapeError(f"gradient for {k} has shape {gk.shape}, parameter is {p[k].shape}")
            m[k] *= b1
            m[k] += (1.0 - b1) * gk
            v[k] *= b2
            v[k] += (1.0 - b2) * gk * gk
            p[k] -= lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + state.eps)


def same_architecture(a, b):
    return a.specs == b.specs


def ema_update(target, online, m):
    """theta_target <- m * theta_target + (1 - m) * theta_online; BN running stats are copied."""
    if not 0.0 <= m <= 1.0:
        raise InvalidParameterError(f"momentum must lie in [0, 1], got {m}")
    if not same_architecture(target, online):
        raise SpecError("EMA needs identical architectures")
    for pt, pq in zip(target.params, online.params):
        for k in pt:
            pt[k] *= m
            pt[k] += (1.0 - m) * pq[k]
    for bt, bq in zip(target.buffers, online.buffers):
        for k in bt:
            bt[k][...] = bq[k]

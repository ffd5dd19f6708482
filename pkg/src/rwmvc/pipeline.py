"""Training loop: Siamese encoders, cross-view decoders, warm-up then rectified targets.

Per optimisation step, for a batch of sample indices:

1. each view's online encoder (train mode) and target encoder embed the
   present rows; missing rows are imputed through the cross-view decoders
   applied to target embeddings of the observed views;
2. decoders map online embeddings of view v into view u's space;
3. targets are the identity during warm-up and the configured rectifier
   afterwards, built from the target embeddings;
4. the decoupled loss is backpropagated into decoders and online encoders
   only, Adam steps them, and the target encoders follow by EMA.
"""

import csv
import dataclasses
import hashlib
import io
import json
import os
import time
import zipfile
from dataclasses import dataclass, field

import numpy as np

from . import kvconfig
from .contrastive import decoupled_loss
from .dataio import MultiViewDataset
from .errors import CheckpointError, ConfigError
from .network import (
    AdamState, LayerSpec, Mlp, adam_step, build_mlp, decoder_spec, ema_update, encoder_spec,
)
from .numerics import make_rng
from .rectifier import KL_FLOOR, RectifierConfig, build_targets, kl_to_oracle, oracle_target

CHECKPOINT_MAGIC = b"RWMVC-CHECKPOINT\n"
CHECKPOINT_VERSION = 1

_INIT_STREAM = 101
_SHUFFLE_STREAM = 202


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-3
    batch_size: int = 1024
    epochs: int = 200
    rectify_start_epoch: int = 100
    tau: float = 0.5
    sigma: float = 0.1
    t: int = 5
    alpha: float = 0.5
    momentum: float = 0.98
    seed: int = 0
    strategy: str = "random_walk"
    target_strategy: str = "self_swap"
    k: int = 10
    epsilon: float = 0.5
    use_intra: bool = True
    use_inter: bool = True
    use_decoder: bool = True
    share_target: bool = False
    stop_gradient: bool = True
    clusters: int = 0
    encoder_hidden: tuple = (1024, 1024, 1024)
    embed_dim: int = 128
    decoder_hidden: int = 512
    track_kl: bool = False
    rectify_observed_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(int(h) for h in self.encoder_hidden))
        self.validate()

    def validate(self):
        if not 0 <= self.rectify_start_epoch <= self.epochs:
            raise ConfigError(f"rectify_start_epoch={self.rectify_start_epoch} must lie in [0, epochs={self.epochs}]")
        for name in ("lr", "tau", "sigma"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigError("momentum must lie in [0, 1]")
        if not (self.use_intra or self.use_inter):
            raise ConfigError("at least one of use_intra / use_inter must be enabled")
        if not self.stop_gradient and not self.share_target:
            raise ConfigError("disabling stop_gradient requires share_target (a momentum encoder is never trained)")
        if self.embed_dim < 1 or self.decoder_hidden < 1 or any(h < 1 for h in self.encoder_hidden):
            raise ConfigError("layer widths must be positive")
        if self.clusters < 0:
            raise ConfigError("clusters must be >= 0 (0 = infer from labels)")
        try:
            self.rectifier(self.epochs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def rectifier(self, epoch):
        """Rectifier settings in force during ``epoch`` (identity during warm-up)."""
        strategy = self.strategy if epoch >= self.rectify_start_epoch else "none"
        return RectifierConfig(strategy, self.target_strategy, self.t, self.alpha, self.sigma, self.k, self.epsilon)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        return kvconfig.format_kv(self)

    def digest(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def load_config(path):
    return kvconfig.read_kv(path, TrainConfig)


def save_config(path, config):
    kvconfig.write_kv(path, config)


@dataclass
class NetworkStack:
    config: TrainConfig
    view_dims: list
    online: list
    target: list
    decoders: dict
    adam: dict
    epoch: int = 0
    step: int = 0

    @property
    def V(self):
        return len(self.online)

    def target_encoder(self, v):
        return self.online[v] if self.config.share_target else self.target[v]

    def trainable(self):
        """``(name, net)`` for every gradient-trained network, in a fixed order."""
        out = [(f"online/{v}", net) for v, net in enumerate(self.online)]
        out += [(f"decoder/{v}-{u}", net) for (v, u), net in sorted(self.decoders.items())]
        return out

    def networks(self):
        out = self.trainable()
        if self.target is not None:
            out += [(f"target/{v}", net) for v, net in enumerate(self.target)]
        return out


def build_stack(config, view_dims):
    rng = make_rng(config.seed, _INIT_STREAM)
    online = [build_mlp(encoder_spec(d, config.encoder_hidden, config.embed_dim), rng) for d in view_dims]
    target = None if config.share_target else [net.copy() for net in online]
    decoders = {}
    if config.use_decoder:
        V = len(view_dims)
        for v in range(V):
            for u in range(V):
                if u != v:
                    decoders[(v, u)] = build_mlp(decoder_spec(config.embed_dim, config.decoder_hidden), rng)
    stack = NetworkStack(config, list(view_dims), online, target, decoders, {})
    stack.adam = {name: AdamState.for_net(net) for name, net in stack.trainable()}
    return stack


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def columns(self):
        cols = []
        for row in self.rows:
            for k in row:
                if k not in cols:
                    cols.append(k)
        return cols

    def to_csv(self, path):
        cols = self.columns() or ["epoch", "total"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in self.rows:
                w.writerow(["" if row.get(c) is None else repr(row[c]) for c in cols])


def effective_batch_size(batch_size, n, eta=0.0):
    """``min(batch_size, (1 - eta) * n)``, never below 2."""
    return max(2, min(int(batch_size), int((1.0 - eta) * n)))


def make_batches(n, batch_size, seed, epoch=0):
    """Shuffled index batches for one epoch; a final batch smaller than 2 is dropped."""
    if isinstance(n, MultiViewDataset):
        n = n.n
    if batch_size < 2:
        raise ConfigError("batch_size must be >= 2")
    perm = make_rng(seed, _SHUFFLE_STREAM, epoch).permutation(n)
    b = min(batch_size, n)
    if b < 2:
        return []
    batches = [perm[i:i + b] for i in range(0, n, b)]
    return [idx for idx in batches if idx.size >= 2]


def _embed_present(stack, dataset, idx, v, mode):
    """Target and (train mode) online embeddings of view ``v`` for the present rows of ``idx``.

    Returns ``(rows, zq, zk, cache)``; ``cache`` is ``None`` when the batch has
    fewer than two present rows (those rows are then embedded in eval mode and
    receive no gradient) or when ``mode == "eval"``.
    """
    rows = np.flatnonzero(dataset.mask[idx, v])
    if rows.size == 0:
        return rows, None, None, None
    X = dataset.views[v][idx[rows]]
    online, target = stack.online[v], stack.target_encoder(v)
    if mode == "train" and rows.size >= 2:
        zq, cache = online.forward(X, "train")
        if stack.config.share_target:
            zk = zq
        else:
            zk, _ = target.forward(X, "train", update_stats=False)
        return rows, zq, zk, cache
    zk, _ = target.forward(X, "eval")
    zq = zk if mode == "eval" else online.forward(X, "eval")[0]
    return rows, zq, zk, None


def _impute(stack, n, present_rows, zk_rows, u):
    """Rows of view ``u`` that are missing, filled from the observed views.

    With decoders, each observed view v contributes ``g[v->u](zk[v])``; several
    observed views are averaged. Without decoders the observed target
    embeddings are averaged directly.
    """
    d = stack.config.embed_dim
    acc = np.zeros((n, d))
    cnt = np.zeros(n)
    for v in range(stack.V):
        if v == u or zk_rows[v] is None:
            continue
        rows = present_rows[v]
        z = zk_rows[v]
        if stack.decoders:
            z, _ = stack.decoders[(v, u)].forward(z, "eval")
        acc[rows] += z
        cnt[rows] += 1
    filled = cnt > 0
    acc[filled] /= cnt[filled, None]
    return acc


def _assemble(stack, dataset, idx, mode):
    """Full-batch online/target embeddings per view, with imputed rows for missing entries."""
    n = len(idx)
    V = stack.V
    parts = [_embed_present(stack, dataset, idx, v, mode) for v in range(V)]
    present_rows = [p[0] for p in parts]
    zk_rows = [p[2] for p in parts]
    zq_full, zk_full = [], []
    for u in range(V):
        rows, zq, zk, _ = parts[u]
        if rows.size == n:
            zq_full.append(zq)
            zk_full.append(zk)
            continue
        imp = _impute(stack, n, present_rows, zk_rows, u)
        q = imp.copy()
        k = imp
        if rows.size:
            q[rows] = zq
            k = imp.copy()
            k[rows] = zk
        zq_full.append(q)
        zk_full.append(k)
    return parts, zq_full, zk_full


def compute_gradients(stack, dataset, idx, rect, targets=None):
    """Forward one batch, build targets, and backpropagate the decoupled loss.

    Returns ``(loss, targets, grads)`` where ``grads`` maps the names from
    :meth:`NetworkStack.trainable` to per-layer gradient dicts. Networks that
    received no gradient (no present rows, disabled terms) are absent. Passing
    ``targets`` skips target construction.
    """
    cfg = stack.config
    parts, zq, zk = _assemble(stack, dataset, idx, "train")
    decoded, dec_cache = None, {}
    if cfg.use_decoder and cfg.use_inter:
        decoded = {}
        for key, dec in sorted(stack.decoders.items()):
            decoded[key], dec_cache[key] = dec.forward(zq[key[0]], "train")
    if targets is None:
        present = dataset.mask[idx] if cfg.rectify_observed_only else None
        targets = build_targets(zk, rect, present)
    key_grad = cfg.share_target and not cfg.stop_gradient
    loss = decoupled_loss(zq, zk, decoded, targets.intra, targets.inter, cfg.tau,
                          cfg.use_intra, cfg.use_inter, key_grad)

    grads = {}
    dzq = [g.copy() for g in loss.dzq]
    for key in sorted(loss.dp):
        g, dx = stack.decoders[key].backward(dec_cache[key], loss.dp[key])
        dzq[key[0]] += dx
        grads[f"decoder/{key[0]}-{key[1]}"] = g
    for v in range(stack.V):
        rows, _, _, cache = parts[v]
        if cache is None:
            continue
        dz = dzq[v][rows]
        if key_grad:
            dz = dz + loss.dzk[v][rows]
        grads[f"online/{v}"], _ = stack.online[v].backward(cache, dz)
    return loss, targets, grads


def apply_gradients(stack, grads):
    """Adam on the trained networks, then EMA of the target encoders."""
    cfg = stack.config
    for name, net in stack.trainable():
        if name in grads:
            adam_step(net, grads[name], stack.adam[name], cfg.lr)
    if not cfg.share_target:
        for v in range(stack.V):
            ema_update(stack.target[v], stack.online[v], cfg.momentum)
    stack.step += 1


def _train_step(stack, dataset, idx, rect, on_step=None):
    loss, targets, grads = compute_gradients(stack, dataset, idx, rect)
    apply_gradients(stack, grads)
    if on_step is not None:
        on_step(stack, idx, targets, loss)
    return loss, targets


def train(config, dataset, stack=None, until=None, on_step=None):
    """Train from scratch, or resume ``stack`` from ``stack.epoch``.

    Parameters
    ----------
    until : int, optional
        Stop after this many total epochs instead of ``config.epochs``.
    on_step : callable, optional
        ``on_step(stack, batch_indices, targets, loss)`` after every step.

    Returns ``(stack, history)`` where history covers the epochs run here.
    """
    config.validate()
    if dataset.V < 2:
        raise ConfigError("training needs at least 2 views")
    if stack is None:
        stack = build_stack(config, dataset.dims)
    elif stack.view_dims != dataset.dims:
        raise ConfigError(f"checkpoint expects view dims {stack.view_dims}, data has {dataset.dims}")
    stack.config = config
    end = config.epochs if until is None else min(until, config.epochs)
    history = TrainHistory()
    track_kl = config.track_kl and dataset.labels is not None
    for epoch in range(stack.epoch, end):
        t0 = time.perf_counter()
        rect = config.rectifier(epoch)
        sums, kls, steps = {}, [], 0
        for idx in make_batches(dataset.n, config.batch_size, config.seed, epoch):
            loss, targets = _train_step(stack, dataset, idx, rect, on_step)
            steps += 1
            sums["total"] = sums.get("total", 0.0) + loss.total
            for k, x in loss.terms().items():
                sums[k] = sums.get(k, 0.0) + x
            if track_kl:
                gt = oracle_target(dataset.labels[idx])
                kls.append(np.mean([kl_to_oracle(gt, T, KL_FLOOR) for T in targets.per_view]))
        row = {"epoch": epoch}
        row.update({k: s / max(steps, 1) for k, s in sums.items()})
        if track_kl:
            row["kl"] = float(np.mean(kls)) if kls else None
        history.rows.append(row)
        history.seconds.append(time.perf_counter() - t0)
        stack.epoch = epoch + 1
    return stack, history


def embed_batch(stack, dataset, idx):
    """Eval-mode target embeddings of rows ``idx``, one matrix per view (imputed where missing)."""
    return _assemble(stack, dataset, np.asarray(idx), "eval")[2]


def batch_targets(stack, dataset, rect, batch_size=None, seed=0):
    """Targets a rectifier builds from eval-mode target embeddings, batch by batch.

    Yields ``(idx, TargetAssignment)`` over one seeded shuffle of the data.
    """
    bs = stack.config.batch_size if batch_size is None else batch_size
    for idx in make_batches(dataset.n, bs, seed):
        zk = embed_batch(stack, dataset, idx)
        present = dataset.mask[idx] if stack.config.rectify_observed_only else None
        yield idx, build_targets(zk, rect, present)


def target_kl(stack, dataset, rect=None, batch_size=None, seed=0):
    """Mean floored ``KL(oracle || T)`` over batches and views (needs labels)."""
    rect = stack.config.rectifier(stack.config.epochs) if rect is None else rect
    vals = []
    for idx, targets in batch_targets(stack, dataset, rect, batch_size, seed):
        gt = oracle_target(dataset.labels[idx])
        vals.extend(kl_to_oracle(gt, T, KL_FLOOR) for T in targets.per_view)
    return float(np.mean(vals)) if vals else float("nan")


def impute_view(stack, zk_observed, v_obs, u_missing):
    """Representation of view ``u_missing`` recovered from target embeddings of ``v_obs``."""
    if not stack.decoders:
        return np.array(zk_observed, dtype=np.float64)
    out, _ = stack.decoders[(v_obs, u_missing)].forward(zk_observed, "eval")
    return out


def extract_embeddings(stack, dataset):
    """Eval-mode target embeddings of every view (imputed where missing), concatenated."""
    return np.hstack(embed_batch(stack, dataset, np.arange(dataset.n)))


# -- checkpoints ---------------------------------------------------------------------------

def _spec_json(net):
    return json.dumps([[s.kind, s.in_dim, s.out_dim] for s in net.specs])


def _net_from(arrays, prefix):
    specs = [LayerSpec(k, i, o) for k, i, o in json.loads(str(arrays[f"{prefix}/specs"]))]
    eps, mom = arrays[f"{prefix}/bn"]
    params, buffers = [], []
    for li, s in enumerate(specs):
        if s.kind == "linear":
            params.append({k: arrays[f"{prefix}/p/{li}.{k}"] for k in ("W", "b")})
            buffers.append({})
        elif s.kind == "batchnorm":
            params.append({k: arrays[f"{prefix}/p/{li}.{k}"] for k in ("beta", "gamma")})
            buffers.append({k: arrays[f"{prefix}/s/{li}.{k}"] for k in ("running_mean", "running_var")})
        else:
            params.append({})
            buffers.append({})
    return Mlp(specs, params, buffers, float(eps), float(mom))


def save_checkpoint(stack, path):
    arrays = {
        "config": np.array(stack.config.to_text()),
        "meta": np.array([stack.epoch, stack.step], dtype=np.int64),
        "view_dims": np.array(stack.view_dims, dtype=np.int64),
    }
    for name, net in stack.networks():
        arrays[f"{name}/specs"] = np.array(_spec_json(net))
        arrays[f"{name}/bn"] = np.array([net.eps, net.bn_momentum])
        for k, a in net.named_parameters():
            arrays[f"{name}/p/{k}"] = a
        for k, a in net.named_buffers():
            arrays[f"{name}/s/{k}"] = a
    for name, st in stack.adam.items():
        arrays[f"adam:{name}/hyper"] = np.array([st.step, st.beta1, st.beta2, st.eps])
        for li, (m, v) in enumerate(zip(st.m, st.v)):
            for k in m:
                arrays[f"adam:{name}/m/{li}.{k}"] = m[k]
                arrays[f"adam:{name}/v/{li}.{k}"] = v[k]
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    payload = buf.getvalue()
    header = CHECKPOINT_MAGIC + f"{CHECKPOINT_VERSION}\n{len(payload)}\n{hashlib.sha256(payload).hexdigest()}\n".encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header + payload)
    os.replace(tmp, path)


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic header)")
    rest = blob[len(CHECKPOINT_MAGIC):]
    try:
        version, size, digest, payload = rest.split(b"\n", 3)
        version, size, digest = int(version), int(size), digest.decode()
    except ValueError:
        raise CheckpointError(f"{path}: malformed checkpoint header") from None
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads {CHECKPOINT_VERSION}")
    if len(payload) != size or hashlib.sha256(payload).hexdigest() != digest:
        raise CheckpointError(f"{path}: payload is truncated or corrupt")
    try:
        with np.load(io.BytesIO(payload), allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
        config = kvconfig.parse_kv(str(arrays["config"]), TrainConfig, path)
        epoch, step = (int(x) for x in arrays["meta"])
        view_dims = [int(d) for d in arrays["view_dims"]]
        V = len(view_dims)
        online = [_net_from(arrays, f"online/{v}") for v in range(V)]
        target = None if config.share_target else [_net_from(arrays, f"target/{v}") for v in range(V)]
        decoders = {}
        if config.use_decoder:
            for v in range(V):
                for u in range(V):
                    if u != v:
                        decoders[(v, u)] = _net_from(arrays, f"decoder/{v}-{u}")
        stack = NetworkStack(config, view_dims, online, target, decoders, {}, epoch, step)
        for name, net in stack.trainable():
            st_step, b1, b2, eps = arrays[f"adam:{name}/hyper"]
            m = [{k: arrays[f"adam:{name}/m/{li}.{k}"] for k in p} for li, p in enumerate(net.params)]
            v = [{k: arrays[f"adam:{name}/v/{li}.{k}"] for k in p} for li, p in enumerate(net.params)]
            stack.adam[name] = AdamState(m, v, int(st_step), float(b1), float(b2), float(eps))
    except (KeyError, ValueError, zipfile.BadZipFile, ConfigError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint contents ({exc})") from exc
    return stack

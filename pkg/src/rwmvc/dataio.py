"""Multi-view datasets: container, on-disk layout, and a synthetic generator.

A dataset directory holds ``manifest.json`` plus one feature file per view,
an optional labels file and an optional presence mask. Feature files are CSV
(one sample per row, 17 significant digits) or ``.npy`` when the manifest
names a file with that extension. Missing view entries are stored as NaN.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError, InvalidParameterError
from .numerics import make_rng

MANIFEST = "manifest.json"


@dataclass
class MultiViewDataset:
    views: list
    labels: np.ndarray = None
    mask: np.ndarray = None

    def __post_init__(self):
        self.views = [np.asarray(x, dtype=np.float64) for x in self.views]
        if not self.views:
            raise DataError("dataset has no views")
        n = self.views[0].shape[0]
        for v, x in enumerate(self.views):
            if x.ndim != 2:
                raise DataError(f"view {v} must be 2-D, got shape {x.shape}")
            if x.shape[0] != n:
                raise DataError(f"view {v} has {x.shape[0]} rows, view 0 has {n}")
        if self.mask is None:
            self.mask = np.ones((n, len(self.views)), dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (n, len(self.views)):
            raise DataError(f"mask shape {self.mask.shape} does not match ({n}, {len(self.views)})")
        if n and not self.mask.any(axis=1).all():
            raise DataError("every sample needs at least one present view")
        for v, x in enumerate(self.views):
            if not np.all(np.isfinite(x[self.mask[:, v]])):
                raise DataError(f"view {v} has non-finite entries in present rows")
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (n,):
                raise DataError(f"labels must have shape ({n},), got {lab.shape}")
            if lab.size and (not np.all(np.equal(np.mod(lab, 1), 0)) or lab.min() < 0):
                raise DataError("labels must be nonnegative integers")
            self.labels = lab.astype(np.int64)

    @property
    def n(self):
        return self.views[0].shape[0]

    @property
    def V(self):
        return len(self.views)

    @property
    def dims(self):
        return [x.shape[1] for x in self.views]

    @property
    def n_classes(self):
        return None if self.labels is None else int(np.unique(self.labels).size)

    @property
    def missing_rate(self):
        """Fraction of samples with at least one missing view."""
        return float((~self.mask).any(axis=1).mean()) if self.n else 0.0

    @property
    def complete(self):
        return bool(self.mask.all())


def simulate_missing(dataset, eta, seed):
    """Drop one uniformly chosen view from ``round(eta * n)`` random samples."""
    if not 0.0 <= eta < 1.0:
        raise InvalidParameterError(f"missing rate must lie in [0, 1), got {eta}")
    if dataset.V < 2:
        raise InvalidParameterError("missing-view simulation needs at least 2 views")
    if not dataset.complete:
        raise InvalidParameterError("dataset already has missing views")
    n, V = dataset.n, dataset.V
    rng = make_rng(seed, 7)
    m = int(round(eta * n))
    chosen = rng.choice(n, size=m, replace=False)
    dropped = rng.integers(V, size=m)
    mask = np.ones((n, V), dtype=bool)
    mask[chosen, dropped] = False
    views = []
    for v, x in enumerate(dataset.views):
        x = x.copy()
        x[~mask[:, v]] = np.nan
        views.append(x)
    return MultiViewDataset(views, None if dataset.labels is None else dataset.labels.copy(), mask)


@dataclass
class SyntheticSpec:
    n: int = 1000
    C: int = 4
    latent_dim: int = 8
    view_dims: tuple = (20, 20)
    noise: tuple = (1.0, 1.0)
    separation: float = 3.0
    latent_noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.view_dims = tuple(int(d) for d in np.atleast_1d(self.view_dims))
        noise = tuple(float(s) for s in np.atleast_1d(self.noise))
        if len(noise) == 1:
            noise = noise * len(self.view_dims)
        self.noise = noise
        if len(self.noise) != len(self.view_dims):
            raise InvalidParameterError("need one noise scale per view")
        if min(self.n, self.C, self.latent_dim, *self.view_dims) < 1:
            raise InvalidParameterError("n, C, latent_dim and view dims must be positive")
        if self.C > self.n:
            raise InvalidParameterError(f"C={self.C} exceeds n={self.n}")
        if self.C > self.latent_dim:
            raise InvalidParameterError("latent_dim must be >= C so cluster means form a simplex")
        if self.separation <= 0 or self.latent_noise < 0 or any(s < 0 for s in self.noise):
            raise InvalidParameterError("separation must be positive and noise scales nonnegative")


def generate_synthetic(spec):
    """Gaussian clusters in a latent space, observed through per-view linear maps.

    Cluster means are ``separation`` times ``C`` orthonormal latent directions
    (a regular simplex); each view is ``latent @ W_v + noise_v * N(0, I)``
    with a fixed Gaussian ``W_v``.
    """
    rng = make_rng(spec.seed, 11)
    Q, _ = np.linalg.qr(rng.standard_normal((spec.latent_dim, spec.latent_dim)))
    means = spec.separation * Q[: spec.C]
    labels = rng.permutation(np.arange(spec.n) % spec.C)
    latent = means[labels] + spec.latent_noise * rng.standard_normal((spec.n, spec.latent_dim))
    views = []
    for d, s in zip(spec.view_dims, spec.noise):
        W = rng.standard_normal((spec.latent_dim, d)) / np.sqrt(spec.latent_dim)
        views.append(latent @ W + s * rng.standard_normal((spec.n, d)))
    ds = MultiViewDataset(views, labels)
    ds.latent = latent
    return ds


def _write_matrix(path, X):
    if path.endswith(".npy"):
        np.save(path, X)
    else:
        np.savetxt(path, X, delimiter=",", fmt="%.17g")


def _read_matrix(path, ncols):
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}")
    try:
        if path.endswith(".npy"):
            X = np.load(path, allow_pickle=False)
        else:
            X = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if ncols is not None and X.size and X.shape[1] != ncols:
        raise DataError(f"{path}: expected {ncols} columns, found {X.shape[1]}")
    return X


def save_dataset(dataset, directory, fmt="csv"):
    os.makedirs(directory, exist_ok=True)
    ext = ".npy" if fmt == "npy" else ".csv"
    manifest = {"n": dataset.n, "V": dataset.V, "dims": dataset.dims, "views": []}
    for v, x in enumerate(dataset.views):
        name = f"view{v}{ext}"
        _write_matrix(os.path.join(directory, name), x)
        manifest["views"].append(name)
    if dataset.labels is not None:
        manifest["labels"] = "labels.csv"
        np.savetxt(os.path.join(directory, "labels.csv"), dataset.labels, fmt="%d")
    if not dataset.complete:
        manifest["mask"] = "mask.csv"
        np.savetxt(os.path.join(directory, "mask.csv"), dataset.mask.astype(int), fmt="%d", delimiter=",")
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_dataset(directory):
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise DataError(f"no {MANIFEST} in {directory}")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"unreadable manifest {path}: {exc}") from exc
    names = manifest.get("views")
    if not names:
        raise DataError("manifest lists no views")
    dims = manifest.get("dims") or [None] * len(names)
    if len(dims) != len(names) or ("V" in manifest and manifest["V"] != len(names)):
        raise DataError("manifest view count is inconsistent")
    views = [_read_matrix(os.path.join(directory, f), d) for f, d in zip(names, dims)]
    n = manifest.get("n")
    for f, x in zip(names, views):
        if n is not None and x.shape[0] != n:
            raise DataError(f"{f}: expected {n} rows, found {x.shape[0]}")
    labels = mask = None
    if manifest.get("labels"):
        raw = _read_matrix(os.path.join(directory, manifest["labels"]), 1)[:, 0]
        if not np.all(np.isfinite(raw)) or not np.all(raw == np.round(raw)):
            raise DataError("labels must be integers")
        labels = raw.astype(np.int64)
        C = manifest.get("C")
        if C is not None and (labels.min() < 0 or labels.max() >= C):
            raise DataError(f"labels must lie in [0, {C})")
    if manifest.get("mask"):
        mask = _read_matrix(os.path.join(directory, manifest["mask"]), len(names)) != 0
    return MultiViewDataset(views, labels, mask)



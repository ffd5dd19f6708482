"""PNG figures written next to the CSV outputs of the command-line tools."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def plot_history(rows, path):
    """Per-epoch loss terms; the KL diagnostic, when present, on a twin axis."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    epochs = [r["epoch"] for r in rows]
    keys = [k for k in (rows[0] if rows else {}) if k not in ("epoch", "kl")]
    for k in keys:
        ax.plot(epochs, [r[k] for r in rows], lw=2 if k == "total" else 1, label=k)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if rows and rows[0].get("kl") is not None:
        ax2 = ax.twinx()
        ax2.plot(epochs, [r["kl"] for r in rows], "k--", lw=1, label="kl")
        ax2.set_ylabel("KL to oracle")
    ax.legend(fontsize=7, loc="upper right")
    return _save(fig, path)


def plot_missing_sweep(summary, path):
    """Mean metric against missing rate with a one-std band per metric."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    eta = np.array([r["eta"] for r in summary])
    for metric in ("ACC", "NMI", "ARI"):
        mean = np.array([r[f"{metric}_mean"] for r in summary])
        std = np.array([r[f"{metric}_std"] for r in summary])
        ax.plot(eta, mean, marker="o", label=metric)
        ax.fill_between(eta, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("missing rate")
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_rectify_bench(rows, path):
    """ACC bars per rectifier with the floored KL as a second panel."""
    names = [r["strategy"] for r in rows]
    x = np.arange(len(names))
    fig, (a, b) = plt.subplots(1, 2, figsize=(7, 3.2))
    a.bar(x, [r["ACC"] for r in rows], color="tab:blue")
    a.set_ylabel("ACC")
    a.set_ylim(0, 1)
    b.bar(x, [r["KL"] for r in rows], color="tab:orange")
    b.set_ylabel("KL to oracle")
    for ax in (a, b):
        ax.set_xticks(x)
        ax.set_xticklabels(names)
    return _save(fig, path)


def plot_embedding(P, labels, path):
    """2-D projection coloured by class (or uniform when unlabelled)."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    c = None if labels is None else np.asarray(labels)
    ax.scatter(P[:, 0], P[:, 1], c=c, s=6, cmap="tab10")
    ax.set_xlabel("PC1")
    ax.set_ylabel("PC2")
    return _save(fig, path)

"""Command-line entry point: ``rwmvc <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or checkpoint
error, 3 numeric failure. ``RWMVC_THREADS`` caps BLAS threads; ``1`` is the
bit-reproducible mode.
"""

import argparse
import csv
import json
import os
import platform
import sys

import numpy as np

from . import __version__, kvconfig, report
from .dataio import SyntheticSpec, generate_synthetic, load_dataset, save_dataset, simulate_missing
from .errors import ConfigError, DataError, RwmvcError
from .evalcluster import append_results, evaluate, write_report
from .numerics import configure_threads, matrix_power
from .pipeline import (
    batch_targets, effective_batch_size, embed_batch, extract_embeddings, load_checkpoint, load_config,
    save_checkpoint, save_config, target_kl, train,
)
from .rectifier import STRATEGY_ALIASES, affinity_graph, transition_matrix, write_matrix_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _write_record(path, command, args, config=None, seed=None, **extra):
    """JSON reproducibility record: command line, resolved config, seed, environment."""
    rec = {
        "command": command,
        "argv": sys.argv[1:],
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "seed": seed,
        "config": None if config is None else kvconfig.format_kv(config),
        "config_hash": None if config is None or not hasattr(config, "digest") else config.digest(),
        "version": __version__,
        "threads": os.environ.get("RWMVC_THREADS"),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    rec.update(extra)
    with open(path, "w") as fh:
        json.dump(rec, fh, indent=2, default=str)
        fh.write("\n")
    return path


def _sibling(path, suffix):
    stem, _ = os.path.splitext(path)
    return stem + suffix


def _ensure_parent(path):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)


def _clusters(requested, dataset):
    if requested:
        return requested
    if dataset.labels is None:
        raise DataError("cannot infer the cluster count from an unlabelled dataset; pass --clusters")
    return dataset.n_classes


# -- commands --------------------------------------------------------------------------------

def cmd_generate(args):
    spec = kvconfig.read_kv(args.spec, SyntheticSpec)
    ds = generate_synthetic(spec)
    if args.eta:
        ds = simulate_missing(ds, args.eta, spec.seed)
    save_dataset(ds, args.out, args.format)
    _write_record(os.path.join(args.out, "run.json"), "generate", args, spec, spec.seed)
    print(f"wrote {ds.n} samples x {ds.V} views to {args.out}")


def cmd_train(args):
    config = load_config(args.config)
    ds = load_dataset(args.data)
    if not ds.complete:
        eta = ds.missing_rate
        config = config.replace(batch_size=effective_batch_size(config.batch_size, ds.n, eta))
    stack = load_checkpoint(args.resume) if args.resume else None
    os.makedirs(args.out, exist_ok=True)
    save_config(os.path.join(args.out, "config.cfg"), config)
    _write_record(os.path.join(args.out, "run.json"), "train", args, config, config.seed)
    stack, history = train(config, ds, stack)
    ckpt = os.path.join(args.out, "model.ckpt")
    save_checkpoint(stack, ckpt)
    history.to_csv(os.path.join(args.out, "history.csv"))
    if history.rows:
        report.plot_history(history.rows, os.path.join(args.out, "history.png"))
    last = history.rows[-1]["total"] if history.rows else float("nan")
    print(f"trained {len(history)} epochs (final loss {last:.6f}); checkpoint {ckpt}")


def cmd_eval(args):
    stack = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    C = _clusters(args.clusters, ds)
    kl = target_kl(stack, ds) if args.kl else None
    rep = evaluate(stack, ds, C, args.seed)
    rep.kl = kl
    text = rep.to_json()
    print(text)
    if args.out:
        _ensure_parent(args.out)
        write_report(args.out, rep)
        _write_record(_sibling(args.out, ".run.json"), "eval", args, stack.config, args.seed)


def _canonical_strategy(name):
    name = name.strip().lower()
    return STRATEGY_ALIASES.get(name, name)


def cmd_rectify_bench(args):
    """Fine-tune the checkpoint under each rectifier; report ACC/NMI/ARI and floored KL."""
    base = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    if ds.labels is None:
        raise DataError("rectify-bench needs labels for the oracle target")
    C = _clusters(args.clusters, ds)
    rows = []
    for name in args.strategies.split(","):
        strategy = _canonical_strategy(name)
        stack = load_checkpoint(args.checkpoint)
        start = stack.epoch
        cfg = base.config.replace(strategy=strategy, epochs=start + args.epochs,
                                  rectify_start_epoch=min(base.config.rectify_start_epoch, start))
        stack, _ = train(cfg, ds, stack)
        rect = cfg.rectifier(cfg.epochs)
        rep = evaluate(stack, ds, C, args.seed)
        kl = target_kl(stack, ds, rect)
        rows.append({"strategy": name.strip(), "ACC": rep.acc, "NMI": rep.nmi, "ARI": rep.ari, "KL": kl})
        if args.export_dir:
            os.makedirs(args.export_dir, exist_ok=True)
            idx, targets = next(batch_targets(stack, ds, rect))
            write_matrix_csv(os.path.join(args.export_dir, f"target_{strategy}.csv"), targets.per_view[0].matrix)
            if strategy == "random_walk":
                M = transition_matrix(affinity_graph(embed_batch(stack, ds, idx)[0], cfg.sigma)).M
                write_matrix_csv(os.path.join(args.export_dir, "transition.csv"), M)
                write_matrix_csv(os.path.join(args.export_dir, f"transition_t{cfg.t}.csv"), matrix_power(M, cfg.t))
        print(f"{name.strip():>12s}  ACC {rep.acc:.4f}  NMI {rep.nmi:.4f}  ARI {rep.ari:.4f}  KL {kl:.4f}")
    _ensure_parent(args.out)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, ["strategy", "ACC", "NMI", "ARI", "KL"])
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    report.plot_rectify_bench(rows, _sibling(args.out, ".png"))
    _write_record(_sibling(args.out, ".run.json"), "rectify-bench", args, base.config, args.seed)


def summarise(runs):
    """Mean and population std of ACC/NMI/ARI/KL per missing rate."""
    out = []
    for eta in sorted({r["eta"] for r in runs}):
        sel = [r for r in runs if r["eta"] == eta]
        row = {"eta": eta, "runs": len(sel)}
        for m in ("ACC", "NMI", "ARI", "KL"):
            vals = np.array([r[m] for r in sel], dtype=float)
            row[f"{m}_mean"] = float(vals.mean())
            row[f"{m}_std"] = float(vals.std())
        out.append(row)
    return out


def missing_sweep(config, ds, etas, seeds, runs_path=None, log=print):
    """Train and score one model per (missing rate, seed); returns the per-run rows."""
    if not ds.complete:
        raise DataError("missing-sweep expects a complete dataset (missing views are simulated)")
    C = config.clusters or _clusters(0, ds)
    runs = []
    for eta in etas:
        for seed in range(seeds):
            data = simulate_missing(ds, eta, seed) if eta > 0 else ds
            cfg = config.replace(seed=seed, batch_size=effective_batch_size(config.batch_size, ds.n, eta))
            stack, _ = train(cfg, data)
            rep = evaluate(stack, data, C, seed)
            rep.kl = target_kl(stack, data) if data.labels is not None else None
            row = {"setting": "complete" if eta == 0 else "incomplete", "eta": eta, "seed": seed,
                   "ACC": rep.acc, "NMI": rep.nmi, "ARI": rep.ari, "KL": rep.kl}
            runs.append(row)
            if runs_path:
                append_results(runs_path, row["setting"], eta, seed, rep)
            log(f"eta={eta:.2f} seed={seed} ACC {rep.acc:.4f} NMI {rep.nmi:.4f} ARI {rep.ari:.4f}")
    return runs


def cmd_missing_sweep(args):
    config = load_config(args.config)
    ds = load_dataset(args.data)
    if ds.labels is None:
        raise DataError("missing-sweep needs a labelled dataset")
    runs_path = _sibling(args.out, "_runs.csv")
    _ensure_parent(args.out)
    if os.path.exists(runs_path):
        os.remove(runs_path)
    _write_record(_sibling(args.out, ".run.json"), "missing-sweep", args, config, config.seed,
                  seeds=list(range(args.seeds)))
    runs = missing_sweep(config, ds, args.etas, args.seeds, runs_path)
    summary = summarise(runs)
    cols = ["eta", "runs"] + [f"{m}_{s}" for m in ("ACC", "NMI", "ARI", "KL") for s in ("mean", "std")]
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, cols)
        w.writeheader()
        for r in summary:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    report.plot_missing_sweep(summary, _sibling(args.out, ".png"))


def pca2(Z):
    """Scores on the two leading principal axes (sign fixed by the largest loading)."""
    X = Z - Z.mean(axis=0)
    _, _, Vt = np.linalg.svd(X, full_matrices=False)
    Vt = Vt[:2]
    signs = np.sign(Vt[np.arange(Vt.shape[0]), np.abs(Vt).argmax(axis=1)])
    return X @ (Vt * signs[:, None]).T


def cmd_export_embeddings(args):
    stack = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    Z = extract_embeddings(stack, ds)
    header = [f"v{v}_{j}" for v in range(stack.V) for j in range(stack.config.embed_dim)]
    cols = [Z]
    if args.pca2:
        P = pca2(Z)
        cols.append(P)
        header += ["pc1", "pc2"][: P.shape[1]]
    _ensure_parent(args.out)
    np.savetxt(args.out, np.hstack(cols), delimiter=",", fmt="%.17g", header=",".join(header), comments="")
    if args.pca2 and Z.shape[0] >= 1 and P.shape[1] == 2:
        report.plot_embedding(P, ds.labels, _sibling(args.out, ".png"))
    _write_record(_sibling(args.out, ".run.json"), "export-embeddings", args, stack.config, stack.config.seed)
    print(f"wrote {Z.shape[0]} x {Z.shape[1]} embeddings to {args.out}")


def build_parser():
    p = _Parser(prog="rwmvc", description="Multi-view clustering with random-walk rectified contrastive targets.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic multi-view dataset")
    g.add_argument("--spec", required=True, help="key = value file of synthetic dataset fields")
    g.add_argument("--out", required=True)
    g.add_argument("--format", choices=("csv", "npy"), default="csv")
    g.add_argument("--eta", type=float, default=0.0, help="also drop one view from this fraction of samples")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model; writes checkpoint and history")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="continue from this checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="k-means on the embeddings and ACC/NMI/ARI")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--clusters", type=int, default=0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--kl", action="store_true", help="also report the KL of the final targets to the oracle")
    e.add_argument("--out", help="write the report JSON here")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rectify-bench", help="compare rectifiers by accuracy and KL to the oracle target")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--strategies", default="rw,knn,eps,none")
    r.add_argument("--out", required=True)
    r.add_argument("--epochs", type=int, default=10, help="fine-tuning epochs per strategy")
    r.add_argument("--clusters", type=int, default=0)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--export-dir", help="write transition matrices and targets of one batch as CSV")
    r.set_defaults(func=cmd_rectify_bench)

    m = sub.add_parser("missing-sweep", help="accuracy against the missing-view rate")
    m.add_argument("--config", required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--etas", type=_float_list, default=[round(0.1 * i, 1) for i in range(10)])
    m.add_argument("--seeds", type=int, default=5)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_missing_sweep)

    x = sub.add_parser("export-embeddings", help="write concatenated embeddings as CSV")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--pca2", action="store_true", help="append a 2-D PCA projection and plot it")
    x.set_defaults(func=cmd_export_embeddings)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configure_threads()
        if getattr(args, "seeds", 1) < 1 or getattr(args, "epochs", 0) < 0:
            raise ConfigError("--seeds must be >= 1 and --epochs >= 0")
        args.func(args)
    except RwmvcError as exc:
        print(f"rwmvc {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"rwmvc {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"rwmvc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"rwmvc {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

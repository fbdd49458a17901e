"""Command-line entry point: ``lassonet {dense,path,refit,export,impute}``.

Every output file starts with a block of ``# key: value`` lines recording the
tool version, the command, the full configuration, the seed and the dataset
fingerprint. No timestamps are written, so identical runs give identical
files. Files are written to a temporary name and renamed into place.

Path files (``path.jsonl``) hold the header block followed by one JSON object
per checkpoint, in path order::

    {"step": 0, "lambda": ..., "k": ..., "indices": [...], "names": [...],
     "train_loss": ..., "val_loss": ..., "val_metric": ...,
     "test_loss": ..., "test_metric": ..., "theta_norm": [... one per feature ...],
     "snapshot": "snapshots/ck_00000.npz"}

Non-finite numbers are written as ``null``.
"""

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .completion import (
    entry_split,
    lassonet_impute,
    masked_mse,
    read_mask_file,
    soft_impute_cv,
    _standardize_observed,
)
from .data_io import impute_column_means, load_csv, split_standardize
from .errors import ContractError, NumericalError
from .network import save_snapshot
from .prox import feature_norms
from .training import (
    TrainConfig,
    as_problem,
    evaluate,
    metric_higher_is_better,
    new_net,
    refit_debiased,
    train_dense,
    train_path,
)

log = logging.getLogger("lassonet")

TOOL = "lassonet"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Output helpers


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` through a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode("utf-8") if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(v):
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _dumps(obj):
    return json.dumps(_clean(obj), sort_keys=True, separators=(",", ":"))


def header_block(meta):
    lines = [f"# tool: {TOOL}", f"# version: {__version__}"]
    for key in sorted(meta):
        value = meta[key]
        text = value if isinstance(value, str) else _dumps(value)
        lines.append(f"# {key}: {text}")
    return "\n".join(lines) + "\n"


def parse_header(lines):
    meta = {}
    for line in lines:
        if not line.startswith("# "):
            break
        key, _, value = line[2:].rstrip("\n").partition(": ")
        try:
            meta[key] = json.loads(value)
        except ValueError:
            meta[key] = value
    return meta


def csv_text(meta, columns, rows):
    buf = io.StringIO()
    buf.write(header_block(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow(["" if v is None else _fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "undefined" if math.isnan(v) else repr(v)
    return str(v)


def read_csv_body(path):
    with open(path) as fh:
        rows = [line for line in fh if not line.startswith("#")]
    return list(csv.reader(rows))


# ---------------------------------------------------------------------------
# Arguments

CONFIG_FLAGS = (
    ("hidden", str, "comma-separated hidden layer sizes"),
    ("epochs-b", int, "epochs per penalty value"),
    ("learning-rate", float, "dense-phase Adam learning rate"),
    ("path-learning-rate", float, "path-phase step size (default: learning rate)"),
    ("momentum", float, "path-phase momentum"),
    ("dense-epochs", int, "maximum dense-phase epochs"),
    ("path-multiplier", float, "penalty growth factor epsilon"),
    ("hierarchy-m", float, "hierarchy multiplier M"),
    ("lambda-start", str, "'auto' or a positive number"),
    ("patience", int, "early-stopping patience"),
    ("batch-size", int, "dense-phase minibatch size"),
    ("seed", int, "random seed"),
    ("max-lambda-ratio", float, "abort when lambda exceeds this multiple of lambda_start"),
)
FLAG_ALIASES = {"hierarchy-m": ["--m"], "path-multiplier": ["--eps"], "epochs-b": ["--epochs"]}


def _add_config(p):
    g = p.add_argument_group("training configuration")
    for name, typ, help_text in CONFIG_FLAGS:
        g.add_argument(f"--{name}", *FLAG_ALIASES.get(name, []), type=typ, default=None, help=help_text)
    g.add_argument("--linear-only", action="store_true", default=None, help="lasso path on the skip layer only")


def _add_data(p, label=True):
    g = p.add_argument_group("data")
    g.add_argument("--data", required=True, help="CSV file with a header row")
    if label:
        g.add_argument("--label", default=None, help="label column name or 0-based index")
        g.add_argument("--task", choices=("classification", "regression"), default=None)
        g.add_argument("--mode", choices=("supervised", "unsupervised"), default=None)
    g.add_argument("--drop", default="", help="comma-separated columns to ignore")
    g.add_argument("--no-header", action="store_true")
    g.add_argument("--no-standardize", action="store_true")
    g.add_argument("--split", default="0.7,0.1,0.2", help="train,val,test fractions")
    g.add_argument("--split-seed", type=int, default=None, help="defaults to --seed")


def build_parser():
    p = argparse.ArgumentParser(prog=TOOL, description="Feature selection with hierarchy-constrained residual networks.")
    p.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("dense", help="train the dense model only")
    _add_data(d)
    _add_config(d)
    d.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("path", help="train the dense-to-sparse feature path")
    _add_data(s)
    _add_config(s)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--max-steps", type=int, default=None, help="stop after this many checkpoints")

    r = sub.add_parser("refit", help="debiased refit on a checkpoint's features")
    r.add_argument("--path", required=True, help="path.jsonl written by the path command")
    grp = r.add_mutually_exclusive_group(required=True)
    grp.add_argument("--k", type=int, help="target number of features")
    grp.add_argument("--lambda", dest="lam", type=float, help="use the first checkpoint with penalty >= this")
    r.add_argument("--data", default=None, help="override the data file recorded in the path header")
    r.add_argument("--hidden", default=None, help="refit hidden sizes (default: as in the path run)")
    r.add_argument("--out", required=True, help="output CSV")

    e = sub.add_parser("export", help="plot-ready tables from a path file")
    e.add_argument("--path", required=True)
    e.add_argument("--out", required=True, help="output directory")

    m = sub.add_parser("impute", help="matrix completion with the network and with Soft-Impute")
    _add_data(m, label=False)
    _add_config(m)
    m.add_argument("--mask", default=None, help="file of observed 'row,col' pairs")
    m.add_argument("--entry-split", default="0.8,0.1,0.1", help="observed,val,test entry fractions")
    m.add_argument("--methods", default="lassonet,soft_impute")
    m.add_argument("--max-outer", type=int, default=50)
    m.add_argument("--input-dropout", type=float, default=0.2)
    m.add_argument("--no-path", action="store_true", help="skip the feature path after imputation")
    m.add_argument("--out", required=True, help="output directory")
    return p


def _fractions(text, n=3):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"bad fractions {text!r}") from None
    if len(vals) != n or min(vals) < 0 or abs(sum(vals) - 1) > 1e-9:
        raise UsageError(f"fractions must be {n} non-negative numbers summing to 1, got {text!r}")
    return vals


def config_from_args(args, base=None):
    kw = dict(base or {})
    for name, _, _ in CONFIG_FLAGS:
        v = getattr(args, name.replace("-", "_"), None)
        if v is None:
            continue
        if name == "hidden":
            try:
                v = tuple(int(h) for h in v.split(","))
            except ValueError:
                raise UsageError(f"bad --hidden {v!r}") from None
        if name == "lambda-start" and v != "auto":
            try:
                v = float(v)
            except ValueError:
                raise UsageError("--lambda-start must be 'auto' or a number") from None
        kw[name.replace("-", "_")] = v
    if getattr(args, "linear_only", None):
        kw["linear_only"] = True
    if "hidden" in kw:
        kw["hidden"] = tuple(kw["hidden"])
    m = kw.get("hierarchy_m", 10.0)
    if not kw.get("linear_only") and m <= 0:
        raise UsageError("M must be positive; use --linear-only for the lasso limit")
    try:
        return TrainConfig(**kw)
    except ContractError as exc:
        raise UsageError(str(exc)) from None


def _data_options(args):
    opts = {
        "data": args.data,
        "drop": args.drop,
        "header": not args.no_header,
        "standardize": not args.no_standardize,
        "split": list(_fractions(args.split)),
    }
    for key in ("label", "task", "mode"):
        if hasattr(args, key):
            opts[key] = getattr(args, key)
    opts["split_seed"] = args.split_seed
    return opts


def load_dataset(opts, seed):
    mode = opts.get("mode") or ("supervised" if opts.get("label") is not None else "unsupervised")
    label = opts.get("label") if mode == "supervised" else None
    if mode == "supervised" and label is None:
        raise UsageError("supervised mode needs --label")
    if label is not None and label.isdigit():
        label = int(label)
    drop = [c for c in opts.get("drop", "").split(",") if c]
    table = load_csv(opts["data"], label_column=label, header=opts.get("header", True), drop_columns=drop)
    if np.isnan(table.values).any():
        table = impute_column_means(table)
    task = opts.get("task") if mode == "supervised" else "unsupervised"
    split_seed = seed if opts.get("split_seed") is None else opts["split_seed"]
    return split_standardize(
        table, tuple(opts["split"]), seed=split_seed, task=task or None, standardize_x=opts.get("standardize", True)
    )


def _meta(command, opts, cfg, ds):
    return {
        "command": command,
        "config": cfg.to_dict(),
        "data": opts,
        "fingerprint": ds.fingerprint,
        "seed": cfg.seed,
        "task": ds.task,
    }


# ---------------------------------------------------------------------------
# Commands


def cmd_dense(args):
    cfg = config_from_args(args)
    opts = _data_options(args)
    ds = load_dataset(opts, cfg.seed)
    prob = as_problem(ds)
    net = train_dense(new_net(prob, cfg), prob, cfg)
    os.makedirs(args.out, exist_ok=True)
    buf = io.BytesIO()
    save_snapshot(net, buf)
    atomic_write(os.path.join(args.out, "dense.npz"), buf.getvalue())
    rows = []
    for part in ("train", "val", "test"):
        l, m = evaluate(net, getattr(prob, f"x_{part}"), getattr(prob, f"y_{part}"), prob.kind)
        rows.append((part, l, m))
    atomic_write(
        os.path.join(args.out, "dense_metrics.csv"),
        csv_text(_meta("dense", opts, cfg, ds), ("split", "loss", "metric"), rows),
    )
    return 0


def _checkpoint_record(i, ck, names, snap):
    return {
        "step": i,
        "lambda": ck.lam,
        "k": ck.k_active,
        "indices": list(ck.active_set),
        "names": [names[j] for j in ck.active_set],
        "train_loss": ck.train_loss,
        "val_loss": ck.val_loss,
        "val_metric": ck.val_metric,
        "test_loss": ck.test_loss,
        "test_metric": ck.test_metric,
        "theta_norm": feature_norms(ck.model.skip).tolist(),
        "snapshot": snap,
    }


def cmd_path(args):
    cfg = config_from_args(args)
    opts = _data_options(args)
    ds = load_dataset(opts, cfg.seed)
    prob = as_problem(ds)
    dense = train_dense(new_net(prob, cfg), prob, cfg)
    path = train_path(dense, prob, cfg, max_steps=args.max_steps)

    out = args.out
    os.makedirs(os.path.join(out, "snapshots"), exist_ok=True)
    meta = _meta("path", opts, cfg, ds)
    meta["feature_names"] = ds.feature_names
    meta["lambda_start"] = path.lambda_start
    meta["loss"] = path.kind
    meta["metric"] = "accuracy" if metric_higher_is_better(path.kind) else "mse"
    lines = [header_block(meta)]
    for i, ck in enumerate(path.checkpoints):
        snap = f"snapshots/ck_{i:05d}.npz"
        buf = io.BytesIO()
        save_snapshot(ck.model, buf)
        atomic_write(os.path.join(out, snap), buf.getvalue())
        lines.append(_dumps(_checkpoint_record(i, ck, ds.feature_names, snap)) + "\n")
    atomic_write(os.path.join(out, "path.jsonl"), "".join(lines))
    rows = [(ck.lam, ck.k_active, ck.val_metric) for ck in path.checkpoints]
    atomic_write(
        os.path.join(out, "summary.csv"),
        csv_text(meta, ("lambda", "k", "val_metric"), rows),
    )
    return 0


def read_path_file(path):
    if not os.path.isfile(path):
        raise UsageError(f"path file not found: {path}")
    with open(path) as fh:
        lines = fh.readlines()
    meta = parse_header(lines)
    records = [json.loads(line) for line in lines if line.strip() and not line.startswith("#")]
    if not records:
        raise UsageError(f"path file has no checkpoints: {path}")
    return meta, records


def select_for_k(records, k, higher_is_better):
    """Largest ``k_active <= k``; among equal ``k`` the best validation metric, then the earliest."""
    pool = [r for r in records if r["k"] <= k and r["k"] > 0]
    if not pool:
        raise UsageError(f"no checkpoint with 1..{k} active features")
    k_sel = max(r["k"] for r in pool)
    pool = [r for r in pool if r["k"] == k_sel]
    sign = 1.0 if higher_is_better else -1.0

    def key(r):
        v = r["val_metric"]
        return (sign * v) if v is not None else -math.inf

    return max(pool, key=lambda r: (key(r), -r["step"]))


def cmd_refit(args):
    meta, records = read_path_file(args.path)
    higher = meta.get("metric") == "accuracy"
    if args.k is not None:
        if args.k < 1:
            raise UsageError("--k must be at least 1")
        rec = select_for_k(records, args.k, higher)
    else:
        later = [r for r in records if r["lambda"] >= args.lam and r["k"] > 0]
        if not later:
            raise UsageError(f"no non-empty checkpoint with lambda >= {args.lam}")
        rec = later[0]
    opts = dict(meta["data"])
    if args.data:
        opts["data"] = args.data
    base = dict(meta["config"])
    if args.hidden:
        base["hidden"] = tuple(int(h) for h in args.hidden.split(","))
    cfg = TrainConfig(**{**base, "hidden": tuple(base["hidden"])})
    ds = load_dataset(opts, cfg.seed)
    if ds.fingerprint != meta.get("fingerprint"):
        log.warning("dataset fingerprint differs from the path run")
    prob = as_problem(ds)
    net = refit_debiased(rec["indices"], prob, cfg)
    test_loss, test_metric = evaluate(net, prob.x_test, prob.y_test, prob.kind)
    val_loss, val_metric = evaluate(net, prob.x_val, prob.y_val, prob.kind)
    out_meta = {
        "command": "refit",
        "config": cfg.to_dict(),
        "data": opts,
        "fingerprint": ds.fingerprint,
        "seed": cfg.seed,
        "path_file": os.path.abspath(args.path),
        "target_k": args.k,
        "target_lambda": args.lam,
    }
    rows = [(
        rec["k"], rec["lambda"], " ".join(map(str, rec["indices"])), val_loss, val_metric, test_loss, test_metric,
    )]
    cols = ("k", "lambda", "indices", "val_loss", "val_metric", "test_loss", "test_metric")
    atomic_write(args.out, csv_text(out_meta, cols, rows))
    print(f"k={rec['k']} test_metric={_fmt(test_metric)}")
    return 0


def feature_lambda_table(records, d):
    """Per feature: smallest and largest penalty at which it is active, and the penalty that removed it."""
    rows = []
    lams = [r["lambda"] for r in records]
    for j in range(d):
        active = [i for i, r in enumerate(records) if j in set(r["indices"])]
        if not active:
            rows.append((j, None, None, None))
            continue
        last = active[-1]
        exit_lam = lams[last + 1] if last + 1 < len(records) else None
        rows.append((j, lams[active[0]], lams[last], exit_lam))
    return rows


def cmd_export(args):
    meta, records = read_path_file(args.path)
    names = meta.get("feature_names") or [f"x{j}" for j in range(len(records[0]["theta_norm"]))]
    d = len(names)
    out_meta = {k: v for k, v in meta.items() if k != "version" and k != "tool"}
    out_meta["command"] = "export"
    out_meta["path_file"] = os.path.basename(args.path)
    os.makedirs(args.out, exist_ok=True)

    by_k = sorted(((r["k"], r["lambda"], r["val_metric"], r["test_metric"]) for r in records),
                  key=lambda t: (t[0], t[1]))
    atomic_write(
        os.path.join(args.out, "metric_by_k.csv"),
        csv_text(out_meta, ("k", "lambda", "val_metric", "test_metric"), by_k),
    )
    coef_rows = [(r["lambda"], r["k"], *r["theta_norm"]) for r in records]
    atomic_write(
        os.path.join(args.out, "coefficient_path.csv"),
        csv_text(out_meta, ("lambda", "k", *names), coef_rows),
    )
    lam_rows = [(j, names[j], *rest) for j, *rest in feature_lambda_table(records, d)]
    atomic_write(
        os.path.join(args.out, "feature_lambdas.csv"),
        csv_text(out_meta, ("index", "name", "first_active_lambda", "last_active_lambda", "removed_at_lambda"),
                 lam_rows),
    )
    return 0


def cmd_impute(args):
    cfg_args = config_from_args(args)
    opts = _data_options(args)
    drop = [c for c in opts["drop"].split(",") if c]
    table = load_csv(opts["data"], label_column=None, header=opts["header"], drop_columns=drop)
    z = table.values
    present = ~np.isnan(z)
    if args.mask:
        observed = read_mask_file(args.mask, z.shape)
        if np.any(observed & ~present):
            raise UsageError("mask marks missing cells as observed")
        held = present & ~observed
        split = (None, None, None)
        val = np.zeros_like(observed)
        test = held
    else:
        split = _fractions(args.entry_split)
        observed, val, test = entry_split(z.shape, split, seed=cfg_args.seed)
        observed &= present
        val &= present
        test &= present
    if args.hidden is None:
        cfg = TrainConfig(**{**cfg_args.to_dict(), "hidden": (z.shape[1], z.shape[1])})
    else:
        cfg = cfg_args
    methods = [m for m in args.methods.split(",") if m]
    unknown = set(methods) - {"lassonet", "soft_impute"}
    if unknown:
        raise UsageError(f"unknown methods {sorted(unknown)}")

    out = args.out
    os.makedirs(out, exist_ok=True)
    meta = {
        "command": "impute",
        "config": cfg.to_dict(),
        "data": opts,
        "entry_split": list(split) if split[0] is not None else None,
        "mask_file": args.mask,
        "fingerprint": table.fingerprint,
        "seed": cfg.seed,
        "scale": "columns standardized with observed-entry statistics",
    }
    mu, sd = _standardize_observed(np.nan_to_num(z), observed)
    zs = (np.nan_to_num(z) - mu) / sd

    rows = []
    imputed = {}
    for method in methods:
        if method == "lassonet":
            _, x, state = lassonet_impute(
                np.nan_to_num(z), observed, cfg, val_mask=val, test_mask=test,
                max_outer=args.max_outer, input_dropout=args.input_dropout, run_path=not args.no_path,
            )
            extra = state.iteration
        else:
            xs, thr = soft_impute_cv(zs, observed, val)
            x = xs * sd + mu
            x = np.where(observed, np.nan_to_num(z), x)
            extra = thr
        imputed[method] = x
        xs_m = (x - mu) / sd
        rows.append((method, masked_mse(xs_m, zs, val), masked_mse(xs_m, zs, test), int(observed.sum()),
                     int(val.sum()), int(test.sum()), extra))
    atomic_write(
        os.path.join(out, "mse.csv"),
        csv_text(meta, ("method", "val_mse", "test_mse", "n_observed", "n_val", "n_test", "detail"), rows),
    )
    for method, x in imputed.items():
        atomic_write(
            os.path.join(out, f"imputed_{method}.csv"),
            csv_text(meta | {"method": method}, table.feature_names, x.tolist()),
        )
    buf = io.StringIO()
    for r, c in zip(*np.nonzero(observed)):
        buf.write(f"{r},{c}\n")
    atomic_write(os.path.join(out, "observed_mask.txt"), buf.getvalue())
    return 0


COMMANDS = {"dense": cmd_dense, "path": cmd_path, "refit": cmd_refit, "export": cmd_export, "impute": cmd_impute}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"{TOOL}: error: usage: {exc}", file=sys.stderr)
        return 2
    except (ContractError, NumericalError, OSError, ValueError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"{TOOL}: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

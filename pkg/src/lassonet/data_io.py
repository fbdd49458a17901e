"""CSV ingestion, missing-value imputation and the train/validation/test split."""

import csv
import hashlib
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError
from .numeric import make_rng

MISSING_MARKERS = ("", "NA")


class ParseError(ContractError):
    def __init__(self, msg, row=None, col=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if col is not None:
            loc.append(f"col {col}")
        super().__init__(f"{msg} ({', '.join(loc)})" if loc else msg)
        self.row = row
        self.col = col


@dataclass
class RawTable:
    values: np.ndarray  # (n, d) float, NaN marks a missing cell
    feature_names: list
    labels: list = None  # raw label strings, one per row
    fingerprint: str = ""

    @property
    def shape(self):
        return self.values.shape

    @property
    def missing(self):
        return np.isnan(self.values)


def fingerprint_bytes(data):
    return "sha256:" + hashlib.sha256(data).hexdigest()


def fingerprint_array(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return "sha256:" + h.hexdigest()


def _resolve_column(column, names, width):
    if column is None:
        return None
    if isinstance(column, int) or (isinstance(column, str) and column.lstrip("-").isdigit() and column not in names):
        idx = int(column)
        if idx < 0:
            idx += width
        if not 0 <= idx < width:
            raise ContractError(f"column index {column} out of range")
        return idx
    if column not in names:
        raise ContractError(f"no column named {column!r}")
    return names.index(column)


def load_csv(path, label_column=None, header=True, drop_columns=()):
    """Read a comma-separated numeric table.

    ``label_column`` (name or index) is split off as raw strings; columns in
    ``drop_columns`` are discarded. Empty cells and ``NA`` become NaN. Any
    other non-numeric feature cell, or a row of the wrong width, raises
    :class:`ParseError` carrying the 1-based file row and 0-based column.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    text = raw.decode("utf-8-sig")
    rows = list(csv.reader(text.splitlines()))
    rows = [r for r in rows if r]  # blank lines
    if not rows:
        raise ParseError("empty file")
    width = len(rows[0])
    if header:
        names = [c.strip() for c in rows[0]]
        body = rows[1:]
        first = 2
    else:
        names = [f"x{i}" for i in range(width)]
        body = rows
        first = 1

    label_idx = _resolve_column(label_column, names, width)
    drop_idx = {_resolve_column(c, names, width) for c in drop_columns}
    feat_idx = [i for i in range(width) if i != label_idx and i not in drop_idx]

    values = np.empty((len(body), len(feat_idx)))
    labels = [] if label_idx is not None else None
    for r, row in enumerate(body):
        if len(row) != width:
            raise ParseError(f"expected {width} cells, found {len(row)}", row=r + first)
        for out_c, c in enumerate(feat_idx):
            cell = row[c].strip()
            if cell in MISSING_MARKERS:
                values[r, out_c] = np.nan
                continue
            try:
                values[r, out_c] = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric cell {cell!r}", row=r + first, col=c) from None
            if not np.isfinite(values[r, out_c]):
                raise ParseError(f"non-finite cell {cell!r}", row=r + first, col=c)
        if labels is not None:
            labels.append(row[label_idx].strip())
    return RawTable(values, [names[i] for i in feat_idx], labels, fingerprint_bytes(raw))


MICE_NON_FEATURE_COLUMNS = ("MouseID", "Genotype", "Treatment", "Behavior")


def load_mice_protein(path):
    """MICE Protein Expression (UCI) exported to CSV: 77 proteins, label ``class``."""
    with open(path, newline="", encoding="utf-8-sig") as fh:
        head = next(csv.reader(fh))
    drop = [c for c in MICE_NON_FEATURE_COLUMNS if c in [h.strip() for h in head]]
    return load_csv(path, label_column="class", header=True, drop_columns=drop)


def impute_column_means(table):
    values = table.values.copy()
    miss = np.isnan(values)
    if not miss.any():
        return replace(table, values=values)
    counts = (~miss).sum(axis=0)
    if np.any(counts == 0):
        j = int(np.flatnonzero(counts == 0)[0])
        raise ContractError(f"column {table.feature_names[j]!r} has no observed values")
    means = np.nansum(values, axis=0) / counts
    values[miss] = np.take(means, np.nonzero(miss)[1])
    return replace(table, values=values)


@dataclass
class Dataset:
    x: np.ndarray  # (n, d), transformed with training statistics
    y: np.ndarray  # class indices, real targets, or None
    feature_names: list
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    task: str  # "classification", "regression" or "unsupervised"
    classes: list = None
    fingerprint: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n_features(self):
        return self.x.shape[1]

    @property
    def n_classes(self):
        return len(self.classes) if self.classes is not None else 0

    def part(self, name):
        idx = getattr(self, name)
        return self.x[idx], (None if self.y is None else self.y[idx])

    @property
    def x_train(self):
        return self.x[self.train]

    @property
    def y_train(self):
        return None if self.y is None else self.y[self.train]

    @property
    def x_val(self):
        return self.x[self.val]

    @property
    def y_val(self):
        return None if self.y is None else self.y[self.val]

    @property
    def x_test(self):
        return self.x[self.test]

    @property
    def y_test(self):
        return None if self.y is None else self.y[self.test]

    def restrict(self, features):
        """Copy in which every column outside ``features`` is zeroed."""
        keep = np.zeros(self.n_features, dtype=bool)
        keep[np.asarray(features, dtype=int)] = True
        x = np.where(keep, self.x, 0.0)
        return replace(self, x=x, meta={**self.meta, "restricted_to": np.flatnonzero(keep).tolist()})


def encode_labels(labels):
    """Map label strings to indices in order of first appearance."""
    classes = []
    index = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        if lab not in index:
            index[lab] = len(classes)
            classes.append(lab)
        out[i] = index[lab]
    return out, classes


def split_sizes(n, fractions):
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def split_indices(n, fractions=(0.7, 0.1, 0.2), seed=0, strata=None):
    """Shuffle and cut ``range(n)`` into train/val/test index arrays.

    With ``strata`` (one class index per row) the members of each class are
    spread evenly through the cut order, so every part gets close to its share
    of each class while part sizes stay exact.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    rng = make_rng(seed, task_id=1)
    perm = rng.permutation(n)
    if strata is not None:
        strata = np.asarray(strata)
        _, counts = np.unique(strata, return_counts=True)
        if counts.min() < 3:
            warnings.warn("a class has fewer than 3 samples; falling back to an unstratified split")
        else:
            key = np.empty(n)
            s_perm = strata[perm]
            for c in np.unique(strata):
                pos = np.flatnonzero(s_perm == c)
                key[pos] = (np.arange(pos.size) + 0.5) / pos.size
            perm = perm[np.argsort(key, kind="stable")]
    n_train, n_val, _ = split_sizes(n, fractions)
    return (
        np.sort(perm[:n_train]),
        np.sort(perm[n_train : n_train + n_val]),
        np.sort(perm[n_train + n_val :]),
    )


def standardize(x, train_idx):
    mean = x[train_idx].mean(axis=0)
    std = x[train_idx].std(axis=0)
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
    return (x - mean) / std, mean, std


def split_standardize(table, fractions=(0.7, 0.1, 0.2), stratify=None, seed=0, task=None, standardize_x=True):
    """Build a :class:`Dataset` from a fully observed table.

    ``task`` defaults to classification when labels are present. Means and
    standard deviations are fitted on the training rows only; constant
    columns keep a scale of 1.
    """
    if np.isnan(table.values).any():
        raise ContractError("table has missing cells; impute first")
    if task is None:
        task = "classification" if table.labels is not None else "unsupervised"
    classes = None
    y = None
    if task == "classification":
        y, classes = encode_labels(table.labels)
    elif task == "regression":
        try:
            y = np.array([float(v) for v in table.labels])
        except (TypeError, ValueError) as exc:
            raise ContractError(f"regression targets must be numeric: {exc}") from None
    elif task != "unsupervised":
        raise ContractError(f"unknown task {task!r}")
    if stratify is None:
        stratify = task == "classification"
    n = table.values.shape[0]
    train, val, test = split_indices(n, fractions, seed, strata=y if stratify and y is not None else None)
    if standardize_x:
        x, mean, std = standardize(table.values, train)
    else:
        d = table.values.shape[1]
        x, mean, std = table.values.copy(), np.zeros(d), np.ones(d)
    return Dataset(
        x, y, list(table.feature_names), train, val, test, mean, std, task, classes, table.fingerprint,
        {"fractions": list(fractions), "seed": int(seed), "stratified": bool(stratify)},
    )


def dataset_from_arrays(x, y=None, task=None, fractions=(0.7, 0.1, 0.2), seed=0, feature_names=None, stratify=None):
    """Convenience wrapper for in-memory data (already numeric, no missing cells)."""
    x = np.asarray(x, dtype=np.float64)
    names = feature_names or [f"x{i}" for i in range(x.shape[1])]
    if task is None:
        task = "unsupervised" if y is None else (
            "classification" if np.issubdtype(np.asarray(y).dtype, np.integer) else "regression"
        )
    labels = None if y is None else [str(v) if task == "classification" else repr(float(v)) for v in np.asarray(y)]
    table = RawTable(x, names, labels, fingerprint_array(x, *(() if y is None else (np.asarray(y),))))
    ds = split_standardize(table, fractions, stratify=stratify, seed=seed, task=task)
    if task == "classification":
        # keep caller's integer labels rather than first-appearance codes
        y = np.asarray(y, dtype=np.int64)
        ds = replace(ds, y=y, classes=[str(c) for c in range(int(y.max()) + 1)])
    return ds

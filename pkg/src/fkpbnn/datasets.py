"""Synthetic data generators and CSV ingestion."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import CSVFormatError

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class Dataset:
    """Covariates ``x`` (N, d_x), targets ``y`` (N, d_y) and optional split tags."""

    x: np.ndarray
    y: np.ndarray
    split: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"x has {x.shape[0]} rows but y has {y.shape[0]}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.split is not None:
            split = np.asarray(self.split, dtype=object)
            if split.shape != (x.shape[0],):
                raise ValueError("one split tag per row required")
            object.__setattr__(self, "split", split)

    def __len__(self):
        return self.x.shape[0]

    def subset(self, tag: str) -> "Dataset":
        if self.split is None:
            return self if tag == "train" else Dataset(self.x[:0], self.y[:0])
        m = self.split == tag
        return Dataset(self.x[m], self.y[m])

    @property
    def train(self) -> "Dataset":
        return self.subset("train")

    @property
    def validation(self) -> "Dataset":
        return self.subset("validation")

    @property
    def test(self) -> "Dataset":
        return self.subset("test")


def _tags(n_per_split):
    return np.repeat(np.array(SPLITS, dtype=object), n_per_split)


def make_crescent_data(psi_true=1.0, phi_true=(0.0, 0.0), N=100, seed=None) -> Dataset:
    """Observations of the crescent model: ``y_n ~ N(phi_1/psi + (phi_0**2 + psi**2)/2, 1)``."""
    if N < 1:
        raise ValueError("N must be positive")
    rng = np.random.default_rng(seed)
    phi0, phi1 = phi_true
    mean = phi1 / psi_true + 0.5 * (phi0 ** 2 + psi_true ** 2)
    y = mean + rng.standard_normal(N)
    return Dataset(np.zeros((N, 0)), y, np.full(N, "train", dtype=object))


def regression_function(x):
    """``f(x) = x sin(x tanh(x))``."""
    x = np.asarray(x, dtype=float)
    return x * np.sin(x * np.tanh(x))


def make_regression_data(N_per_split=100, seed=None, noise=True, low=-6.0, high=6.0) -> Dataset:
    """``y = f(x) + xi`` with ``x ~ U(low, high)`` and ``xi ~ N(0, 1)``, three equal splits."""
    if N_per_split < 1:
        raise ValueError("N_per_split must be positive")
    rng = np.random.default_rng(seed)
    n = 3 * N_per_split
    x = rng.uniform(low, high, size=n)
    xi = rng.standard_normal(n)
    y = regression_function(x) + (xi if noise else 0.0)
    return Dataset(x, y, _tags(N_per_split))


def make_moons_data(N_per_split=100, noise_std=0.3, seed=None) -> Dataset:
    """Two interleaving half circles with isotropic Gaussian noise.

    Class 0 lies on ``(cos t, sin t)``, class 1 on ``(1 - cos t, 0.5 - sin t)``
    with ``t ~ U(0, pi)``. Each split is balanced up to one point. The noise
    is drawn after the clean points, so ``noise_std=0`` with the same seed
    gives the noiseless construction.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    rng = np.random.default_rng(seed)
    labels = np.concatenate([
        rng.permutation(np.arange(N_per_split) % 2) for _ in SPLITS
    ]).astype(float)
    n = labels.shape[0]
    t = rng.uniform(0.0, np.pi, size=n)
    clean = np.where(labels[:, None] == 0,
                     np.column_stack([np.cos(t), np.sin(t)]),
                     np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)]))
    x = clean + noise_std * rng.standard_normal((n, 2))
    return Dataset(x, labels, _tags(N_per_split))


# --- CSV --------------------------------------------------------------------------

def _read_table(path):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise CSVFormatError("empty file", row=1)
    header = [h.strip() for h in rows[0]]
    return header, rows[1:]


def _parse_numeric(header, rows, skip=()):
    if not rows:
        raise CSVFormatError("no data rows", row=2)
    out = np.empty((len(rows), len(header)))
    for i, r in enumerate(rows):
        line = i + 2
        if len(r) != len(header):
            raise CSVFormatError(f"expected {len(header)} fields, found {len(r)}", row=line)
        for j, cell in enumerate(r):
            if j in skip:
                continue
            try:
                out[i, j] = float(cell)
            except ValueError:
                raise CSVFormatError(f"non-numeric cell {cell!r} in column {header[j]!r}", row=line) from None
    return out


def _standardise(a, train_mask):
    mu = a[train_mask].mean(axis=0)
    sd = a[train_mask].std(axis=0)
    sd_safe = np.where(sd > 0, sd, 1.0)
    out = (a - mu) / sd_safe
    out[:, sd == 0] = 0.0
    return out


def split_tags(n, fractions=(0.6, 0.3, 0.1)):
    """Contiguous train/validation/test tags with sizes rounded from ``fractions``."""
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_val = min(n_val, n - n_train)
    return np.array(["train"] * n_train + ["validation"] * n_val
                    + ["test"] * (n - n_train - n_val), dtype=object)


def load_csv(path, target_columns, label_mode="regression", standardize=True, shuffle_seed=None) -> Dataset:
    """Read a numeric CSV with a header row into a :class:`Dataset`.

    ``target_columns`` lists column names (or positions) holding targets.
    ``label_mode`` is ``"regression"``, ``"binary"`` (one 0/1 column) or
    ``"categorical"`` (one integer class column, one-hot encoded). A column
    named ``split`` overrides the default 60/30/10 partition. With
    ``standardize``, features (and regression targets) are scaled with
    train-split statistics.
    """
    header, rows = _read_table(path)
    split_col = header.index("split") if "split" in header else None
    data = _parse_numeric(header, rows, skip=() if split_col is None else (split_col,))
    tcols = [header.index(c) if isinstance(c, str) else int(c) for c in target_columns]
    xcols = [j for j in range(len(header)) if j not in tcols and j != split_col]
    x, y = data[:, xcols], data[:, tcols]
    n = x.shape[0]
    if split_col is not None:
        split = np.array([r[split_col].strip() for r in rows], dtype=object)
        bad = [i for i, s in enumerate(split) if s not in SPLITS]
        if bad:
            raise CSVFormatError(f"unknown split tag {split[bad[0]]!r}", row=bad[0] + 2)
    else:
        split = split_tags(n)
        if shuffle_seed is not None:
            split = split[np.random.default_rng(shuffle_seed).permutation(n)]
    if label_mode == "categorical":
        if y.shape[1] != 1:
            raise ValueError("categorical mode expects exactly one target column")
        classes, inv = np.unique(y[:, 0], return_inverse=True)
        y = np.eye(classes.shape[0])[inv]
    elif label_mode == "binary":
        if y.shape[1] != 1 or not np.all(np.isin(y, (0.0, 1.0))):
            raise ValueError("binary mode expects one column of 0/1 labels")
    elif label_mode != "regression":
        raise ValueError(f"unknown label_mode {label_mode!r}")
    if standardize:
        train = split == "train"
        x = _standardise(x, train)
        if label_mode == "regression":
            y = _standardise(y, train)
    return Dataset(x, y, split)


def save_csv(ds: Dataset, path) -> None:
    """Write all rows with a header ``x0.., y0.., split``."""
    dx, dy = ds.x.shape[1], ds.y.shape[1]
    split = ds.split if ds.split is not None else np.full(len(ds), "train", dtype=object)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k}" for k in range(dx)] + [f"y{k}" for k in range(dy)] + ["split"])
        for xi, yi, s in zip(ds.x, ds.y, split):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(v)) for v in yi] + [s])


def write_splits(ds: Dataset, directory, stem="data") -> Path:
    """Write one CSV per split plus ``<stem>.manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for tag in SPLITS:
        part = ds.subset(tag)
        name = f"{stem}.{tag}.csv"
        save_csv(Dataset(part.x, part.y, np.full(len(part), tag, dtype=object)), directory / name)
        files[tag] = {"file": name, "rows": len(part)}
    manifest = directory / f"{stem}.manifest.json"
    manifest.write_text(json.dumps({"x_dim": ds.x.shape[1], "y_dim": ds.y.shape[1], "splits": files}, indent=2))
    return manifest


def read_splits(manifest) -> Dataset:
    manifest = Path(manifest)
    meta = json.loads(manifest.read_text())
    dx, dy = meta["x_dim"], meta["y_dim"]
    xs, ys, tags = [], [], []
    for tag in SPLITS:
        header, rows = _read_table(manifest.parent / meta["splits"][tag]["file"])
        if rows:
            data = _parse_numeric(header, rows, skip=(dx + dy,))
            xs.append(data[:, :dx])
            ys.append(data[:, dx:dx + dy])
            tags += [tag] * len(rows)
    return Dataset(np.concatenate(xs), np.concatenate(ys), np.array(tags, dtype=object))

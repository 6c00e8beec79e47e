"""Datasets: synthetic generators, CSV ingestion, and splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, EmptyFile, MissingColumn, NonNumericCell
from .linalg import SpdMatrix
from .models import LinearGaussianTruth, truth_sample

SPLITS = ("train", "val", "test")
STD_FLOOR = 1e-12


@dataclass
class Dataset:
    """Paired inputs and targets with a split tag per row.

    ``targets`` is ``(N, n)`` float for regression or ``(N,)`` int class
    indices when ``num_classes`` is set.
    """

    inputs: np.ndarray
    targets: np.ndarray
    split: np.ndarray
    num_classes: int | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if self.num_classes is None:
            t = np.asarray(self.targets, dtype=float)
            self.targets = t.reshape(-1, 1) if t.ndim == 1 else t
        else:
            self.targets = np.asarray(self.targets, dtype=int).ravel()
        self.split = np.asarray(self.split, dtype=object)
        n = self.inputs.shape[0]
        if n == 0:
            raise DataError("dataset is empty")
        if self.targets.shape[0] != n or self.split.shape[0] != n:
            raise DataError("inputs, targets and split tags must have the same number of rows")
        if not np.all(np.isfinite(self.inputs)) or not np.all(np.isfinite(self.targets)):
            raise DataError("dataset contains non-finite entries")
        bad = set(self.split.tolist()) - set(SPLITS)
        if bad:
            raise DataError(f"unknown split tags {sorted(bad)}")
        if self.num_classes is not None and (self.targets.min() < 0 or self.targets.max() >= self.num_classes):
            raise DataError("class index out of range")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def is_classification(self) -> bool:
        return self.num_classes is not None

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.num_classes if self.is_classification else self.targets.shape[1]

    def rows(self, index) -> "Dataset":
        return Dataset(
            self.inputs[index], self.targets[index], self.split[index], self.num_classes, dict(self.provenance)
        )

    def subset(self, tag: str) -> "Dataset":
        mask = self.split == tag
        if not mask.any():
            raise DataError(f"split {tag!r} is empty")
        return self.rows(mask)

    @property
    def train(self) -> "Dataset":
        return self.subset("train")

    @property
    def val(self) -> "Dataset":
        return self.subset("val")

    @property
    def test(self) -> "Dataset":
        return self.subset("test")

    def one_hot_targets(self) -> np.ndarray:
        if not self.is_classification:
            return self.targets
        return np.eye(self.num_classes)[self.targets]


def split_tags(count: int, rng: np.random.Generator, fractions=(0.8, 0.1, 0.1)) -> np.ndarray:
    """Shuffled train/val/test tags; each split gets at least one row when ``count >= 3``."""
    perm = rng.permutation(count)
    n_train = int(round(fractions[0] * count))
    n_val = int(round(fractions[1] * count))
    if count >= 3:
        n_train = min(max(n_train, 1), count - 2)
        n_val = min(max(n_val, 1), count - n_train - 1)
    tags = np.empty(count, dtype=object)
    tags[perm[:n_train]] = "train"
    tags[perm[n_train : n_train + n_val]] = "val"
    tags[perm[n_train + n_val :]] = "test"
    return tags


def generate_synthetic(n: int = 2, m: int = 2, count: int = 2000, beta: float = 0.5, seed: int = 0):
    """Linear-Gaussian regression data with isotropic noise ``beta^2 I``.

    ``Lambda`` has entries uniform in ``[-1, 1]``; inputs are uniform on
    ``[-5, 5]^m``. Returns ``(dataset, truth)``.
    """
    if min(n, m, count) <= 0 or beta <= 0:
        raise ValueError("n, m, count and beta must be positive")
    rng = np.random.default_rng(seed)
    lam = rng.uniform(-1.0, 1.0, size=(n, m))
    truth = LinearGaussianTruth(lam, SpdMatrix.diagonal(np.full(n, beta**2)))
    x = rng.uniform(-5.0, 5.0, size=(count, m))
    y = truth_sample(truth, x, rng)
    tags = split_tags(count, rng)
    prov = {"source": "synthetic-linear-gaussian", "n": n, "m": m, "count": count, "beta": beta, "seed": seed}
    return Dataset(x, y, tags, provenance=prov), truth


def default_class_weights(k: int) -> np.ndarray:
    if k == 2:
        return np.array([0.78, 0.22])
    w = 0.7 ** np.arange(k)
    return w / w.sum()


def generate_classification(
    count: int = 3000,
    features: int = 8,
    num_classes: int = 2,
    seed: int = 0,
    class_weights=None,
    separation: float = 1.0,
) -> Dataset:
    """Gaussian class clusters with imbalanced priors, features standardized on the train split."""
    rng = np.random.default_rng(seed)
    weights = default_class_weights(num_classes) if class_weights is None else np.asarray(class_weights, float)
    weights = weights / weights.sum()
    centers = separation * rng.standard_normal((num_classes, features))
    labels = rng.choice(num_classes, size=count, p=weights)
    mix = rng.standard_normal((features, features)) / np.sqrt(features) + np.eye(features)
    x = centers[labels] + rng.standard_normal((count, features)) @ mix
    tags = split_tags(count, rng)
    x = standardize(x, tags == "train")
    prov = {
        "source": "synthetic-classification",
        "count": count,
        "features": features,
        "num_classes": num_classes,
        "seed": seed,
        "separation": separation,
    }
    return Dataset(x, labels, tags, num_classes=num_classes, provenance=prov)


def generate_regression(count: int = 2000, state_dim: int = 3, action_dim: int = 1, seed: int = 0) -> Dataset:
    """Dynamics-style regression: ``x = (state, action)``, ``y`` = next-state delta.

    The delta is a smooth nonlinear function of state and action plus
    state-dependent Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    w_s = rng.normal(scale=0.8, size=(state_dim, state_dim))
    w_a = rng.normal(scale=0.8, size=(action_dim, state_dim))
    state = rng.normal(size=(count, state_dim))
    action = rng.uniform(-1.0, 1.0, size=(count, action_dim))
    drift = 0.5 * np.tanh(state @ w_s) + action @ w_a - 0.1 * state
    noise_scale = 0.05 + 0.15 * np.abs(np.sin(state[:, :1]))
    delta = drift + noise_scale * rng.standard_normal((count, state_dim))
    x = np.hstack([state, action])
    tags = split_tags(count, rng)
    prov = {"source": "synthetic-dynamics", "count": count, "state_dim": state_dim, "action_dim": action_dim, "seed": seed}
    return Dataset(x, delta, tags, provenance=prov)


def standardize(x: np.ndarray, train_mask: np.ndarray) -> np.ndarray:
    ref = x[train_mask] if train_mask.any() else x
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    sd = np.where(sd < STD_FLOOR, 1.0, sd)
    out = (x - mu) / sd
    # constant columns standardize to exactly zero
    out[:, ref.std(axis=0) < STD_FLOOR] = 0.0
    return out


@dataclass
class CsvSchema:
    features: list[str]
    targets: list[str]
    task: str = "classification"
    split_column: str | None = None
    standardize: bool = True

    def __post_init__(self):
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "classification" and len(self.targets) != 1:
            raise ValueError("classification needs exactly one target column")


def load_csv(path, schema: CsvSchema, seed: int = 0) -> Dataset:
    """Read a headered UTF-8 CSV into a :class:`Dataset`.

    Class labels are mapped to contiguous indices in sorted order. Rows are
    split by ``schema.split_column`` when given, else shuffled by ``seed``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyFile(f"{path} is empty") from None
        rows = [r for r in reader if any(c.strip() for c in r)]
    if not rows:
        raise EmptyFile(f"{path} has a header but no data rows")
    wanted = schema.features + schema.targets + ([schema.split_column] if schema.split_column else [])
    for col in wanted:
        if col not in header:
            raise MissingColumn(f"column {col!r} not found in {path}")
    pos = {name: header.index(name) for name in wanted}

    def numeric(col):
        out = np.empty(len(rows))
        for i, r in enumerate(rows):
            cell = r[pos[col]].strip() if pos[col] < len(r) else ""
            try:
                out[i] = float(cell)
            except ValueError:
                raise NonNumericCell(i + 2, col, cell) from None
            if not np.isfinite(out[i]):
                raise NonNumericCell(i + 2, col, cell)
        return out

    x = np.column_stack([numeric(c) for c in schema.features]) if schema.features else np.zeros((len(rows), 0))
    if schema.split_column:
        tags = np.array([r[pos[schema.split_column]].strip() for r in rows], dtype=object)
    else:
        tags = split_tags(len(rows), np.random.default_rng(seed))
    if schema.standardize and x.shape[1]:
        x = standardize(x, tags == "train")
    prov = {"source": str(path), "seed": seed}
    if schema.task == "classification":
        raw = [r[pos[schema.targets[0]]].strip() for r in rows]
        labels = sorted(set(raw), key=_label_key)
        index = {lab: i for i, lab in enumerate(labels)}
        y = np.array([index[v] for v in raw], dtype=int)
        prov["labels"] = labels
        return Dataset(x, y, tags, num_classes=len(labels), provenance=prov)
    y = np.column_stack([numeric(c) for c in schema.targets])
    return Dataset(x, y, tags, provenance=prov)


def _label_key(label: str):
    try:
        return (0, float(label), label)
    except ValueError:
        return (1, 0.0, label)


def save_csv(data: Dataset, path, feature_prefix: str = "x", target_prefix: str = "y") -> CsvSchema:
    """Write features, targets and a ``split`` column; returns a schema that reloads it exactly."""
    features = [f"{feature_prefix}{i}" for i in range(data.input_dim)]
    if data.is_classification:
        targets = ["label"]
        tcols = data.targets.reshape(-1, 1)
    else:
        targets = [f"{target_prefix}{j}" for j in range(data.targets.shape[1])]
        tcols = data.targets
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(features + targets + ["split"])
        for xi, ti, s in zip(data.inputs, tcols, data.split):
            w.writerow([repr(float(v)) for v in xi] + [str(int(v)) if data.is_classification else repr(float(v)) for v in ti] + [s])
    return CsvSchema(
        features,
        targets,
        "classification" if data.is_classification else "regression",
        split_column="split",
        standardize=False,
    )

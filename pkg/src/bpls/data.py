"""Datasets: CSV ingestion, the test/labeled/unlabeled split, and the simulator."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyAfterDrop, LabeledTooSmall, MissingTarget, NonNumericFeature

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Dataset:
    name: str
    features: np.ndarray
    labels: np.ndarray
    columns: tuple[str, ...]
    dropped: int = 0

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float).reshape(-1)
        if x.ndim != 2 or x.shape[0] != y.size:
            raise ValueError("features and labels disagree in length")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain missing or non-finite values")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0/1")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def to_csv(self, fh, target: str = "y") -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*self.columns, target])
        for row, label in zip(self.features, self.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])

    def write_csv(self, path, target: str = "y") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            self.to_csv(fh, target)


@dataclass(frozen=True)
class SplitSpec:
    test_share: float = 0.5
    unlabeled_share: float = 0.8
    seed: int = 0
    standardize: bool = False

    def __post_init__(self):
        for name in ("test_share", "unlabeled_share"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


@dataclass(frozen=True)
class SimSpec:
    n: int
    q: int
    mu: float = 0.0
    sigma: float = 1.0
    coefficients: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.q < 1:
            raise ValueError("n and q must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.coefficients is not None:
            object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
            if len(self.coefficients) != self.q:
                raise ValueError("need one coefficient per feature")

    @property
    def beta(self) -> np.ndarray:
        if self.coefficients is not None:
            return np.array(self.coefficients)
        beta = np.ones(self.q)
        beta[0] = -1.0
        return beta


@dataclass(frozen=True, eq=False)
class LabeledSet:
    ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.ids.size


@dataclass(frozen=True, eq=False)
class UnlabeledPool:
    """Unlabeled rows: ids and features only.

    True labels of pool rows stay with the :class:`Split` that produced the
    pool (``Split.audit_label``) and never travel with the pool itself.
    """

    ids: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        x = np.asarray(self.features, dtype=float)
        if x.ndim != 2:
            x = x.reshape(ids.size, -1)
        if x.shape[0] != ids.size:
            raise ValueError("pool ids and features disagree in length")
        if np.unique(ids).size != ids.size:
            raise ValueError("pool ids must be unique")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "features", x)

    def __len__(self):
        return self.ids.size


@dataclass(frozen=True, eq=False)
class Split:
    labeled: LabeledSet
    pool: UnlabeledPool
    test: LabeledSet
    _pool_labels: dict = field(repr=False, default_factory=dict)

    def audit_label(self, pool_id: int) -> int:
        return self._pool_labels[int(pool_id)]

    @property
    def train_features(self) -> np.ndarray:
        return np.vstack([self.labeled.features, self.pool.features])


def load_csv(path, target: str, positive: str = "1", name: str | None = None) -> Dataset:
    """Read a comma-separated file with a header row.

    Rows with an empty or non-numeric feature cell (or an empty target) are
    dropped and counted.  A feature column with no numeric value at all is
    reported as :class:`NonNumericFeature`.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyAfterDrop(f"{path}: no header row") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    if target not in header:
        raise MissingTarget(f"target column {target!r} not in {header}")
    t = header.index(target)
    feat_idx = [i for i in range(len(header)) if i != t]
    columns = [header[i] for i in feat_idx]

    keep_x, keep_y = [], []
    numeric_seen = np.zeros(len(feat_idx), dtype=bool)
    dropped = 0
    for r in rows:
        if len(r) != len(header):
            dropped += 1
            continue
        vals = []
        ok = bool(r[t].strip())
        for k, i in enumerate(feat_idx):
            try:
                v = float(r[i])
            except ValueError:
                ok = False
                continue
            if not np.isfinite(v):
                ok = False
                continue
            numeric_seen[k] = True
            vals.append(v)
        if not ok:
            dropped += 1
            continue
        keep_x.append(vals)
        keep_y.append(1.0 if r[t].strip() == positive else 0.0)
    if rows and not numeric_seen.all():
        bad = columns[int(np.flatnonzero(~numeric_seen)[0])]
        raise NonNumericFeature(f"column {bad!r} has no numeric values")
    if not keep_x:
        raise EmptyAfterDrop(f"{path}: no complete rows (dropped {dropped})")
    if dropped:
        log.warning("%s: dropped %d incomplete row(s)", path.name, dropped)
    return Dataset(name or path.stem, np.array(keep_x), np.array(keep_y), tuple(columns), dropped)


def split(ds: Dataset, spec: SplitSpec) -> Split:
    """Test draw, then labeled draw from the remainder; the rest is the pool."""
    rng = np.random.default_rng(spec.seed)
    n = ds.n
    n_test = int(round(spec.test_share * n))
    perm = rng.permutation(n)
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    n_lab = int(round((1.0 - spec.unlabeled_share) * train_idx.size))
    order = rng.permutation(train_idx.size)
    lab_idx = np.sort(train_idx[order[:n_lab]])
    pool_idx = np.sort(train_idx[order[n_lab:]])
    test_idx = np.sort(test_idx)

    y_lab = ds.labels[lab_idx]
    if lab_idx.size < 2 or np.unique(y_lab).size < 2:
        raise LabeledTooSmall(f"labeled set has {lab_idx.size} rows and {np.unique(y_lab).size} class(es)")
    if lab_idx.size < ds.p + 2:
        log.warning("labeled set has %d rows, fewer than the %d model parameters plus one",
                    lab_idx.size, ds.p + 1)

    x = ds.features
    if spec.standardize:
        center = x[lab_idx].mean(axis=0)
        scale = x[lab_idx].std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        x = (x - center) / scale
    return Split(
        LabeledSet(lab_idx, x[lab_idx], y_lab),
        UnlabeledPool(pool_idx, x[pool_idx]),
        LabeledSet(test_idx, x[test_idx], ds.labels[test_idx]),
        {int(i): int(ds.labels[i]) for i in pool_idx},
    )


def simulate(spec: SimSpec) -> Dataset:
    """Gaussian features and Bernoulli labels from a logistic model without intercept."""
    rng = np.random.default_rng(spec.seed)
    x = rng.normal(spec.mu, spec.sigma, size=(spec.n, spec.q))
    eta = x @ spec.beta
    p = 1.0 / (1.0 + np.exp(-eta))
    y = (rng.random(spec.n) < p).astype(float)
    return Dataset(f"sim_n{spec.n}_q{spec.q}", x, y, tuple(f"x{j}" for j in range(spec.q)))

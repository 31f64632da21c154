"""Parameter priors: the flat (uninformative) prior and multivariate Gaussians."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConfigError
from .numerics import cholesky, log_det_from_cholesky


@dataclass(frozen=True)
class Uninformative:
    """Flat prior on a compact parameter set; its log-density is taken as 0."""

    def log_density(self, theta) -> float:
        return 0.0

    def log_density_batch(self, thetas: np.ndarray) -> np.ndarray:
        return np.zeros(np.asarray(thetas).shape[0])

    def to_dict(self) -> dict:
        return {"kind": "uninformative"}


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    covariance: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False)
    _precision: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.covariance, dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(mean.size)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {mean.size}")
        chol = cholesky(cov)
        eye = np.eye(mean.size)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_precision", np.linalg.solve(cov, eye))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def precision(self) -> np.ndarray:
        return self._precision

    def log_density(self, theta) -> float:
        return float(self.log_density_batch(np.asarray(theta, dtype=float)[None, :])[0])

    def log_density_batch(self, thetas: np.ndarray) -> np.ndarray:
        diff = np.atleast_2d(np.asarray(thetas, dtype=float)) - self.mean
        z = solve_triangular(self._chol, diff.T, lower=True)
        maha = np.sum(z * z, axis=0)
        return -0.5 * (self.dim * np.log(2 * np.pi) + log_det_from_cholesky(self._chol) + maha)

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "mean": self.mean.tolist(), "covariance": self.covariance.tolist()}

    def __eq__(self, other):
        if not isinstance(other, Gaussian):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.covariance, other.covariance)

    def __hash__(self):
        return hash((self.mean.tobytes(), self.covariance.tobytes()))


Prior = Uninformative | Gaussian


def prior_from_dict(d: dict | None) -> Prior:
    """Build a prior from ``{"kind": ..., "mean": ..., "covariance": ...}``.

    ``kind`` defaults to ``"gaussian"`` when a mean is given.  ``covariance``
    may be a scalar (isotropic) or a full matrix.
    """
    if not d:
        return Uninformative()
    extra = set(d) - {"kind", "mean", "covariance"}
    if extra:
        raise ConfigError(f"unknown prior keys: {sorted(extra)}")
    kind = d.get("kind", "gaussian" if "mean" in d else "uninformative")
    if kind == "uninformative":
        return Uninformative()
    if kind != "gaussian":
        raise ConfigError(f"unknown prior kind {kind!r}")
    if "mean" not in d or "covariance" not in d:
        raise ConfigError("a gaussian prior needs 'mean' and 'covariance'")
    try:
        return Gaussian(np.asarray(d["mean"], dtype=float), np.asarray(d["covariance"], dtype=float))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid gaussian prior: {exc}") from None

"""Logistic GLM / fixed-basis GAM for binary targets.

The fitter runs Newton's method on the weighted log-likelihood and is written
against stacks of problems ``(B, n, q)`` so that every candidate-augmented refit
of one self-training iteration shares a single vectorized loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import DegenerateFeature, SingularInformation
from .numerics import PIVOT_TOL
from .prior import Gaussian, Prior, Uninformative

ETA_CLAMP = 35.0
JITTER = 1e-6
GRAD_TOL = 1e-8
MAX_ITER = 100


# --------------------------------------------------------------------------
# basis expansion


@dataclass(frozen=True)
class BasisSpec:
    """Per-feature expansion applied before the intercept is prepended.

    ``kind`` is ``"identity"``, ``"polynomial"`` (powers 1..degree) or
    ``"spline"`` (truncated-power basis with ``knots`` interior knots at
    empirical quantiles).  ``apply`` optionally restricts the expansion to the
    flagged features; unflagged ones enter linearly.
    """

    kind: str = "identity"
    degree: int = 1
    knots: int = 0
    apply: tuple[bool, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "polynomial", "spline"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.knots < 0:
            raise ValueError("knot count must be >= 0")

    @classmethod
    def parse(cls, text: str) -> "BasisSpec":
        """Parse ``identity``, ``poly:D`` or ``spline:D:K``."""
        parts = text.strip().split(":")
        try:
            if parts[0] == "identity" and len(parts) == 1:
                return cls()
            if parts[0] in ("poly", "polynomial") and len(parts) == 2:
                return cls("polynomial", degree=int(parts[1]))
            if parts[0] == "spline" and len(parts) == 3:
                return cls("spline", degree=int(parts[1]), knots=int(parts[2]))
        except ValueError:
            pass
        raise ValueError(f"cannot parse basis {text!r}; expected identity, poly:D or spline:D:K")

    def __str__(self) -> str:
        if self.kind == "identity":
            return "identity"
        if self.kind == "polynomial":
            return f"poly:{self.degree}"
        return f"spline:{self.degree}:{self.knots}"

    def _flags(self, p: int) -> tuple[bool, ...]:
        if self.apply is None:
            return (True,) * p
        if len(self.apply) != p:
            raise ValueError(f"apply flags cover {len(self.apply)} features, data has {p}")
        return tuple(bool(a) for a in self.apply)

    def columns_per_feature(self) -> int:
        if self.kind == "identity":
            return 1
        if self.kind == "polynomial":
            return self.degree
        return self.degree + self.knots

    def dim(self, p: int) -> int:
        """Expanded column count, intercept included."""
        per = self.columns_per_feature()
        return 1 + sum(per if f else 1 for f in self._flags(p))

    def to_dict(self) -> dict:
        return {"basis": str(self), "apply": None if self.apply is None else list(self.apply)}


def spline_knots(x: np.ndarray, count: int) -> np.ndarray:
    levels = np.arange(1, count + 1) / (count + 1)
    return np.quantile(x, levels)


def expand_basis(raw_features, spec: BasisSpec, reference=None) -> np.ndarray:
    """Build the design matrix ``[1 | f(x_1) | ... | f(x_p)]``.

    Spline knots are quantiles of ``reference`` (defaults to ``raw_features``),
    so pool and test rows can be expanded with the knots of the training rows.
    """
    x = np.asarray(raw_features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if not np.all(np.isfinite(x)):
        raise ValueError("raw features must be finite")
    ref = x if reference is None else np.atleast_2d(np.asarray(reference, dtype=float))
    if ref.shape[1] != x.shape[1]:
        raise ValueError("reference has a different feature count")

    blocks = [np.ones((x.shape[0], 1))]
    for j, flag in enumerate(spec._flags(x.shape[1])):
        col = x[:, j]
        if not flag or spec.kind == "identity":
            blocks.append(col[:, None])
            continue
        blocks.append(np.column_stack([col**d for d in range(1, spec.degree + 1)]))
        if spec.kind == "spline" and spec.knots:
            if np.ptp(ref[:, j]) == 0:
                raise DegenerateFeature(f"feature {j} is constant; cannot place spline knots")
            knots = spline_knots(ref[:, j], spec.knots)
            blocks.append(np.maximum(col[:, None] - knots[None, :], 0.0) ** spec.degree)
    return np.hstack(blocks)


# --------------------------------------------------------------------------
# likelihood pieces


def _clamped_eta(theta, design):
    return np.clip(design @ theta, -ETA_CLAMP, ETA_CLAMP)


def _sigmoid(eta):
    return 1.0 / (1.0 + np.exp(-eta))


def _weights(weights, n):
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weights must have shape ({n},)")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative with at least one positive entry")
    return w


def predict_proba(theta, x) -> np.ndarray | float:
    """Logistic probability of class 1 for one row or a matrix of rows."""
    x = np.asarray(x, dtype=float)
    p = _sigmoid(_clamped_eta(np.asarray(theta, dtype=float), x))
    return float(p) if np.ndim(p) == 0 else p


def log_likelihood(theta, design, labels, weights=None) -> float:
    """``sum_i w_i [y_i log p_i + (1 - y_i) log(1 - p_i)]`` in log-sum-exp form."""
    design = np.asarray(design, dtype=float)
    y = np.asarray(labels, dtype=float)
    w = _weights(weights, design.shape[0])
    eta = _clamped_eta(np.asarray(theta, dtype=float), design)
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def score_vector(theta, design, labels, weights=None) -> np.ndarray:
    """Gradient of :func:`log_likelihood` with respect to ``theta``."""
    design = np.asarray(design, dtype=float)
    w = _weights(weights, design.shape[0])
    p = _sigmoid(_clamped_eta(np.asarray(theta, dtype=float), design))
    return design.T @ (w * (np.asarray(labels, dtype=float) - p))


def observed_fisher(theta, design, labels, weights=None, normalize_by: float = 1.0) -> np.ndarray:
    """Negative Hessian of the weighted log-likelihood divided by ``normalize_by``.

    ``labels`` does not enter for the logit link; it is accepted so the
    signature matches the likelihood.
    """
    if normalize_by <= 0:
        raise ValueError("normalize_by must be positive")
    design = np.asarray(design, dtype=float)
    w = _weights(weights, design.shape[0])
    p = _sigmoid(_clamped_eta(np.asarray(theta, dtype=float), design))
    info = (design * (w * p * (1.0 - p))[:, None]).T @ design / normalize_by
    return 0.5 * (info + info.T)


class StackedProblems:
    """``B`` weighted logistic problems that share a block of base rows.

    Problem ``b`` consists of the base rows ``(X0, y0, w0)`` followed by its own
    rows ``(X[b], y[b], w[b])``.  Sharing the base block turns the Hessian
    accumulation into one dense matrix product over precomputed outer products.
    """

    def __init__(self, base_design=None, base_labels=None, base_weights=None,
                 own_designs=None, own_labels=None, own_weights=None, n_problems=None):
        if base_design is None and own_designs is None:
            raise ValueError("need base rows, own rows, or both")
        if own_designs is not None:
            own_x = np.asarray(own_designs, dtype=float)
            n_problems = own_x.shape[0]
            q = own_x.shape[2]
        else:
            q = np.asarray(base_design).shape[1]
            own_x = np.zeros((n_problems or 1, 0, q))
            n_problems = own_x.shape[0]
        B, k = own_x.shape[:2]
        self.q = q
        self.own_x = own_x
        self.own_y = np.zeros((B, k)) if own_labels is None else np.asarray(own_labels, dtype=float).reshape(B, k)
        self.own_w = np.ones((B, k)) if own_weights is None else np.asarray(own_weights, dtype=float).reshape(B, k)
        if base_design is None:
            self.base_x = np.zeros((0, q))
        else:
            self.base_x = np.asarray(base_design, dtype=float)
            if self.base_x.shape[1] != q:
                raise ValueError("base and own designs disagree on column count")
        n0 = self.base_x.shape[0]
        self.base_y = np.zeros(n0) if base_labels is None else np.asarray(base_labels, dtype=float).reshape(n0)
        self.base_w = np.ones(n0) if base_weights is None else np.asarray(base_weights, dtype=float).reshape(n0)
        self._iu = np.triu_indices(q)
        # position of every (i, j) entry inside the packed upper triangle
        full = np.zeros((q, q), dtype=np.intp)
        full[self._iu] = np.arange(self._iu[0].size)
        full[self._iu[1], self._iu[0]] = full[self._iu]
        self._unpack = full.ravel()
        self._outer = None
        self._own = None

    @property
    def size(self) -> int:
        return self.own_x.shape[0]

    @property
    def n_rows(self) -> int:
        return self.base_x.shape[0] + self.own_x.shape[1]

    def _base_outer(self):
        if self._outer is None:
            i, j = self._iu
            self._outer = self.base_x[:, i] * self.base_x[:, j]
        return self._outer

    def _own_outer(self):
        if self._own is None:
            i, j = self._iu
            self._own = self.own_x[..., i] * self.own_x[..., j]
        return self._own

    def etas(self, theta, idx):
        eta0 = np.clip(theta @ self.base_x.T, -ETA_CLAMP, ETA_CLAMP)
        eta1 = np.clip(np.einsum("bkq,bq->bk", self.own_x[idx], theta), -ETA_CLAMP, ETA_CLAMP)
        return eta0, eta1

    def loglik(self, theta, idx=slice(None)):
        eta0, eta1 = self.etas(theta, idx)
        ll = (self.base_w * (self.base_y * eta0 - np.logaddexp(0.0, eta0))).sum(axis=1)
        return ll + (self.own_w[idx] * (self.own_y[idx] * eta1 - np.logaddexp(0.0, eta1))).sum(axis=1)

    def loglik_grad(self, theta, idx=slice(None)):
        """Log-likelihood, its gradient and the fitted probabilities."""
        eta0, eta1 = self.etas(theta, idx)
        y1, w1 = self.own_y[idx], self.own_w[idx]
        p0, p1 = _sigmoid(eta0), _sigmoid(eta1)
        ll = (self.base_w * (self.base_y * eta0 - np.logaddexp(0.0, eta0))).sum(axis=1)
        ll = ll + (w1 * (y1 * eta1 - np.logaddexp(0.0, eta1))).sum(axis=1)
        grad = (self.base_w * (self.base_y - p0)) @ self.base_x
        grad = grad + np.einsum("bkq,bk->bq", self.own_x[idx], w1 * (y1 - p1))
        return ll, grad, (p0, p1)

    def information(self, probs, idx=slice(None)):
        """Unnormalized negative Hessian ``sum_i w_i p_i (1 - p_i) x_i x_i^T``."""
        p0, p1 = probs
        packed = (self.base_w * p0 * (1.0 - p0)) @ self._base_outer()
        if self.own_x.shape[1]:
            c1 = self.own_w[idx] * p1 * (1.0 - p1)
            packed += np.einsum("bk,bkm->bm", c1, self._own_outer()[idx])
        return np.take(packed, self._unpack, axis=1).reshape(-1, self.q, self.q)

    def fisher(self, theta, normalize_by, idx=slice(None)):
        eta0, eta1 = self.etas(theta, idx)
        info = self.information((_sigmoid(eta0), _sigmoid(eta1)), idx)
        return info / np.asarray(normalize_by, dtype=float).reshape(-1, 1, 1)


def loglik_batch(thetas, designs, labels, weights) -> np.ndarray:
    eta = np.clip(np.einsum("bnq,bq->bn", designs, thetas), -ETA_CLAMP, ETA_CLAMP)
    return np.sum(weights * (labels * eta - np.logaddexp(0.0, eta)), axis=1)


# --------------------------------------------------------------------------
# fitting


@dataclass(frozen=True, eq=False)
class FittedModel:
    theta: np.ndarray
    converged: bool
    iterations: int
    final_loglik: float
    jittered: bool = False

    def predict_proba(self, x):
        return predict_proba(self.theta, x)


@dataclass
class BatchFit:
    """Result arrays of :func:`fit_stacked`; ``failed`` rows hold NaN thetas."""

    theta: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    loglik: np.ndarray
    jittered: np.ndarray
    failed: np.ndarray

    def model(self, b: int) -> FittedModel:
        if self.failed[b]:
            raise SingularInformation(f"problem {b}: Newton system not positive definite after jitter")
        return FittedModel(
            self.theta[b].copy(), bool(self.converged[b]), int(self.iterations[b]),
            float(self.loglik[b]), bool(self.jittered[b]),
        )


def _objective(problems, theta, idx, prior):
    ll, grad, probs = problems.loglik_grad(theta, idx)
    obj = ll
    if isinstance(prior, Gaussian):
        diff = theta - prior.mean
        pdiff = diff @ prior.precision
        obj = ll - 0.5 * np.sum(diff * pdiff, axis=1)
        grad = grad - pdiff
    return ll, obj, grad, probs


def _spd_solve(a, b):
    """Cholesky solve of one system; ``None`` if ``a`` is not positive definite."""
    chol, x, info = lapack.dposv(a, b, lower=1)
    if info != 0 or chol.diagonal().min() ** 2 <= PIVOT_TOL:
        return None
    return x


def _newton_step(info, grad, prior, rank_deficient: bool):
    """Solve the Newton system, adding the ridge jitter where it is not PD.

    The check and the ridge act on the matrix divided by its mean diagonal, so
    the ridge is ``JITTER`` relative to the curvature scale.  A separated fit,
    whose curvature decays towards zero, then keeps taking full Newton steps.
    Returns ``(step, jittered, failed)``.
    """
    if isinstance(prior, Gaussian):
        info = info + prior.precision
        rank_deficient = False
    B, q, _ = info.shape
    scale = np.trace(info, axis1=1, axis2=2) / q
    scale = np.where(scale > 0, scale, 1.0)
    normed = info / scale[:, None, None]
    rhs = grad / scale[:, None]
    ridge = JITTER * np.eye(q)
    step = np.full((B, q), np.nan)
    needs = np.zeros(B, dtype=bool)
    # a per-matrix LAPACK loop beats numpy's stacked cholesky + solve here
    for b in range(B):
        x = None if rank_deficient else _spd_solve(normed[b], rhs[b])
        if x is None:
            needs[b] = True
            x = _spd_solve(normed[b] + ridge, rhs[b])
        if x is not None:
            step[b] = x
    failed = ~np.all(np.isfinite(step), axis=1)
    return step, needs, failed


def fit_stacked(problems: StackedProblems, prior: Prior | None = None, *, init=None,
                max_iter: int = MAX_ITER, tol: float = GRAD_TOL) -> BatchFit:
    """Newton fits of every problem in ``problems``.

    A :class:`Gaussian` prior turns the objective into the log-posterior (MAP
    fit); ``None`` or :class:`Uninformative` maximizes the likelihood alone.
    Iteration stops per problem once the gradient sup-norm is ``<= tol``.
    """
    B, q = problems.size, problems.q
    prior = prior or Uninformative()
    if isinstance(prior, Gaussian) and prior.dim != q:
        raise ValueError(f"prior dimension {prior.dim} != design columns {q}")
    theta = np.zeros((B, q)) if init is None else np.array(init, dtype=float).reshape(B, q)

    converged = np.zeros(B, dtype=bool)
    failed = np.zeros(B, dtype=bool)
    jittered = np.zeros(B, dtype=bool)
    iterations = np.zeros(B, dtype=int)

    ll, obj, grad, (p0, p1) = _objective(problems, theta, slice(None), prior)
    active = np.ones(B, dtype=bool)
    while True:
        done = np.max(np.abs(grad), axis=1, initial=0.0) <= tol
        converged |= active & done
        active &= ~done
        if not active.any() or iterations.max(initial=0) >= max_iter:
            break
        idx = np.flatnonzero(active)
        info = problems.information((p0[idx], p1[idx]), idx)
        step, jit, bad = _newton_step(info, grad[idx], prior, problems.n_rows < q)
        jittered[idx[jit]] = True
        if bad.any():
            failed[idx[bad]] = True
            active[idx[bad]] = False
            idx, step = idx[~bad], step[~bad]
            if not idx.size:
                break
        iterations[idx] += 1

        # step halving keeps the objective monotone
        base_theta, base_obj = theta[idx], obj[idx]
        factor = np.ones(idx.size)
        pending = np.ones(idx.size, dtype=bool)
        trial = base_theta + step
        for _ in range(40):
            n_ll, n_obj, n_grad, (n_p0, n_p1) = _objective(problems, trial, idx, prior)
            pending &= n_obj < base_obj - 1e-12 * np.maximum(1.0, np.abs(base_obj))
            if not pending.any():
                break
            factor[pending] *= 0.5
            trial[pending] = base_theta[pending] + factor[pending, None] * step[pending]
        # no ascent left along the Newton direction: freeze without convergence
        active[idx[pending]] = False
        moved = ~pending
        sel = idx[moved]
        theta[sel] = trial[moved]
        ll[sel] = n_ll[moved]
        obj[sel] = n_obj[moved]
        grad[sel] = n_grad[moved]
        p0[sel] = n_p0[moved]
        p1[sel] = n_p1[moved]

    theta[failed] = np.nan
    final = np.full(B, np.nan)
    ok = ~failed
    if ok.any():
        final[ok] = problems.loglik(theta[ok], np.flatnonzero(ok))
    return BatchFit(theta, converged, iterations, final, jittered, failed)


def fit_batch(designs, labels, weights=None, prior: Prior | None = None, *, init=None,
              max_iter: int = MAX_ITER, tol: float = GRAD_TOL) -> BatchFit:
    """Fit ``B`` unrelated problems given as ``(B, n, q)`` / ``(B, n)`` stacks."""
    problems = StackedProblems(own_designs=designs, own_labels=labels, own_weights=weights)
    return fit_stacked(problems, prior, init=init, max_iter=max_iter, tol=tol)


def fit(design, labels, weights=None, prior: Prior | None = None, *, init=None,
        max_iter: int = MAX_ITER, tol: float = GRAD_TOL) -> FittedModel:
    """Weighted maximum-likelihood (or MAP, with a Gaussian prior) logistic fit.

    Raises
    ------
    SingularInformation
        If the Newton system is not positive definite even after the ridge
        jitter.
    """
    X = np.asarray(design, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("design must be a non-empty 2-D array")
    y = np.asarray(labels, dtype=float)
    if y.shape != (X.shape[0],):
        raise ValueError("labels length does not match design rows")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    w = _weights(weights, X.shape[0])
    problems = StackedProblems(X, y, w, n_problems=1)
    res = fit_stacked(problems, prior, init=None if init is None else np.asarray(init)[None],
                      max_iter=max_iter, tol=tol)
    return res.model(0)

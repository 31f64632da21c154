"""Pseudo-label selection criteria and the exact oracles used to check them.

Every score is oriented so that larger is better and is defined only up to
constants that do not depend on the candidate; compare scores within one pool,
never across pools.  A candidate whose augmented refit (or Fisher information)
cannot be handled gets the ``-inf`` sentinel and is never selected.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import AllCandidatesInvalid, EmptyPool, GridTooCoarse
from .model import JITTER, FittedModel, StackedProblems, fit_stacked, predict_proba
from .numerics import cholesky_batch, log_det_from_cholesky
from .prior import Gaussian, Prior, Uninformative

log = logging.getLogger(__name__)

PPP_U = "ppp-u"
PPP_I = "ppp-i"
PPP_FINE = "ppp-fine"
MAXMAX = "likelihood-maxmax"
PROB_SCORE = "prob-score"
PRED_VARIANCE = "pred-variance"
RANDOM = "random"

CRITERIA = (PPP_U, PPP_I, PPP_FINE, MAXMAX, PROB_SCORE, PRED_VARIANCE, RANDOM)


@dataclass(frozen=True, eq=False)
class Candidate:
    id: int
    features: np.ndarray
    pseudo_label: int


@dataclass(frozen=True)
class CandidateScore:
    candidate_id: int
    criterion: str
    value: float


@dataclass
class AugmentedScores:
    """Per-candidate pieces of the Laplace criteria for one pool."""

    loglik: np.ndarray        # likelihood term at the augmented maximizer
    log_det: np.ndarray       # log |I(theta~)|, -inf/NaN-free only where valid
    log_prior: np.ndarray
    theta: np.ndarray
    valid_fit: np.ndarray
    valid_det: np.ndarray

    @property
    def laplace(self) -> np.ndarray:
        """``loglik - log_det / 2 + log_prior`` with the sentinel applied."""
        out = self.loglik - 0.5 * self.log_det + self.log_prior
        return np.where(self.valid_fit & self.valid_det, out, -np.inf)

    @property
    def likelihood(self) -> np.ndarray:
        return np.where(self.valid_fit, self.loglik, -np.inf)


def _labeled_arrays(labeled):
    design, labels = labeled
    design = np.asarray(design, dtype=float)
    labels = np.asarray(labels, dtype=float).reshape(-1)
    if design.ndim != 2 or design.shape[0] != labels.size:
        raise ValueError("labeled design and labels disagree")
    if design.shape[0] == 0:
        raise ValueError("labeled data must be nonempty")
    return design, labels


def log_det_with_jitter(info: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Log-determinants of a stack, retrying failures once with ``+JITTER*I``.

    Returns ``(log_det, valid)``; invalid entries are NaN.
    """
    chol, ok = cholesky_batch(info)
    out = np.full(info.shape[0], np.nan)
    if ok.any():
        out[ok] = log_det_from_cholesky(chol[ok])
    if not ok.all():
        bad = np.flatnonzero(~ok)
        chol2, ok2 = cholesky_batch(info[bad] + JITTER * np.eye(info.shape[-1]))
        out[bad[ok2]] = log_det_from_cholesky(chol2[ok2])
        ok = ok.copy()
        ok[bad[ok2]] = True
    return out, ok


def augmented_scores(labeled, cand_features, cand_labels, *, prior: Prior | None = None,
                     fine: bool = False, normalize_by: float | None = None,
                     map_fit: bool = False, init=None) -> AugmentedScores:
    """Refit on ``D + (x_i, y_i)`` for every candidate at once.

    ``fine=False`` maximizes the augmented likelihood (uBPLS/iBPLS and max-max);
    ``fine=True`` maximizes ``l_{D+i} + l_D``, i.e. weight 2 on labeled rows.
    The Fisher matrix is normalized by ``n + 1`` (``2n + 1`` when fine) unless
    ``normalize_by`` is given.

    Each candidate fit starts from ``init`` (default zero), so a score equals
    that of a standalone fit of the augmented data.  Under separation the
    maximizer does not exist and the stopping point, hence the score, depends
    on the start; warm starts are faster but change such scores.
    """
    design, labels = _labeled_arrays(labeled)
    xs = np.atleast_2d(np.asarray(cand_features, dtype=float))
    ys = np.asarray(cand_labels, dtype=float).reshape(-1)
    if xs.shape[0] != ys.size:
        raise ValueError("candidate features and labels disagree")
    if xs.shape[1] != design.shape[1]:
        raise ValueError("candidate rows have the wrong column count")
    prior = prior or Uninformative()
    n = design.shape[0]
    base_weight = 2.0 if fine else 1.0
    if normalize_by is None:
        normalize_by = base_weight * n + 1

    fit_prior = prior if map_fit else None
    if init is None:
        init = np.zeros(design.shape[1])
    start = np.broadcast_to(np.asarray(init, dtype=float), xs.shape)
    problems = StackedProblems(design, labels, np.full(n, base_weight), xs[:, None, :], ys[:, None], None)
    res = fit_stacked(problems, fit_prior, init=start)
    valid_fit = ~res.failed
    log_det = np.full(ys.size, np.nan)
    valid_det = np.zeros(ys.size, dtype=bool)
    log_prior = np.zeros(ys.size)
    if valid_fit.any():
        idx = np.flatnonzero(valid_fit)
        info = problems.fisher(res.theta[idx], normalize_by, idx)
        ld, ok = log_det_with_jitter(info)
        log_det[idx] = ld
        valid_det[idx] = ok
        log_prior[idx] = prior.log_density_batch(res.theta[idx])
    n_bad = int(np.sum(~(valid_fit & valid_det)))
    if n_bad:
        log.warning("%d of %d candidates have singular information; scored -inf", n_bad, ys.size)
    return AugmentedScores(res.loglik, log_det, log_prior, res.theta, valid_fit, valid_det)


# -- pool-level scoring ------------------------------------------------------


def ubpls_values(labeled, cand_features, cand_labels, **kw) -> np.ndarray:
    return augmented_scores(labeled, cand_features, cand_labels, **kw).laplace


def ibpls_values(labeled, cand_features, cand_labels, prior: Prior, **kw) -> np.ndarray:
    return augmented_scores(labeled, cand_features, cand_labels, prior=prior, **kw).laplace


def fine_ppp_values(labeled, cand_features, cand_labels, prior: Prior | None = None, **kw) -> np.ndarray:
    return augmented_scores(labeled, cand_features, cand_labels, prior=prior, fine=True, **kw).laplace


def maxmax_values(labeled, cand_features, cand_labels) -> np.ndarray:
    return augmented_scores(labeled, cand_features, cand_labels).likelihood


def probability_values(theta, cand_features) -> np.ndarray:
    p = np.atleast_1d(predict_proba(theta, np.atleast_2d(cand_features)))
    return np.maximum(p, 1.0 - p)


def variance_values(theta, cand_features) -> np.ndarray:
    p = np.atleast_1d(predict_proba(theta, np.atleast_2d(cand_features)))
    return -p * (1.0 - p)


# -- single-candidate API ----------------------------------------------------


def _one(value, cand: Candidate, tag: str) -> CandidateScore:
    return CandidateScore(cand.id, tag, float(np.asarray(value).reshape(-1)[0]))


def score_ubpls(labeled, cand: Candidate, *, normalize_by: float | None = None) -> CandidateScore:
    """Uninformative BPLS: ``l_{D+i}(theta~) - log|I(theta~)| / 2``."""
    v = ubpls_values(labeled, cand.features[None, :], [cand.pseudo_label], normalize_by=normalize_by)
    return _one(v, cand, PPP_U)


def score_ibpls(labeled, cand: Candidate, prior: Prior, *, map_fit: bool = False) -> CandidateScore:
    """Informative BPLS: uBPLS plus the prior log-density at ``theta~``."""
    v = ibpls_values(labeled, cand.features[None, :], [cand.pseudo_label], prior, map_fit=map_fit)
    return _one(v, cand, PPP_I)


def score_fine_ppp(labeled, cand: Candidate, prior: Prior | None = None) -> CandidateScore:
    v = fine_ppp_values(labeled, cand.features[None, :], [cand.pseudo_label], prior)
    return _one(v, cand, PPP_FINE)


def score_maxmax_likelihood(labeled, cand: Candidate) -> CandidateScore:
    """Augmented log-likelihood at its own maximizer (the optimistic max-max rule)."""
    return _one(maxmax_values(labeled, cand.features[None, :], [cand.pseudo_label]), cand, MAXMAX)


def score_probability(model: FittedModel, cand: Candidate) -> CandidateScore:
    return _one(probability_values(model.theta, cand.features), cand, PROB_SCORE)


def score_predictive_variance(model: FittedModel, cand: Candidate) -> CandidateScore:
    """Negated Bernoulli variance ``-p(1-p)`` so that larger is preferred."""
    return _one(variance_values(model.theta, cand.features), cand, PRED_VARIANCE)


def select_best(scores: Sequence[CandidateScore]) -> int:
    """Id of the maximal score; ties go to the smallest id."""
    if not scores:
        raise EmptyPool("no candidates to select from")
    best_id, best_val = None, -np.inf
    for s in scores:
        v = s.value if np.isfinite(s.value) or s.value == np.inf else -np.inf
        if v == -np.inf:
            continue
        if best_id is None or v > best_val or (v == best_val and s.candidate_id < best_id):
            best_id, best_val = s.candidate_id, v
    if best_id is None:
        raise AllCandidatesInvalid("every candidate scored -inf")
    return best_id


def argmax_by_id(ids, values) -> int:
    return select_best([CandidateScore(int(i), "", float(v)) for i, v in zip(ids, values)])


# -- oracles -----------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    low: float = -8.0
    high: float = 8.0
    points: int = 201

    def refined(self) -> "GridSpec":
        return GridSpec(self.low, self.high, 2 * (self.points - 1) + 1)


def _trapezoid_log_weights(spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    nodes = np.linspace(spec.low, spec.high, spec.points)
    h = nodes[1] - nodes[0]
    w = np.full(spec.points, h)
    w[[0, -1]] = h / 2
    return nodes, np.log(w)


def _grid_logsumexp(terms, q: int, spec: GridSpec, chunk: int = 1 << 18) -> np.ndarray:
    """``log sum_grid w(theta) exp(f_k(theta))`` for each integrand ``f_k``.

    ``terms(thetas) -> (P, K)`` evaluates the log-integrands at grid points.
    """
    nodes, logw = _trapezoid_log_weights(spec)
    G = spec.points
    total = G**q
    acc = None
    for start in range(0, total, chunk):
        flat = np.arange(start, min(total, start + chunk))
        digits = np.stack(np.unravel_index(flat, (G,) * q), axis=1)
        thetas = nodes[digits]
        lw = logw[digits].sum(axis=1)
        part = logsumexp(terms(thetas) + lw[:, None], axis=0)
        acc = part if acc is None else np.logaddexp(acc, part)
    return acc


def _grid_loglik(thetas, design, labels):
    if design.shape[0] == 0:
        return np.zeros(thetas.shape[0])
    eta = thetas @ design.T
    return np.sum(labels * eta - np.logaddexp(0.0, eta), axis=1)


def oracle_log_ppp(labeled, cands: Sequence[Candidate] | Candidate, prior: Prior | None = None,
                   grid: GridSpec = GridSpec(), *, check: bool = True) -> np.ndarray | float:
    """Log pseudo posterior predictive by brute-force trapezoid quadrature.

    Integrates ``p(D + i | theta) p(theta | D)`` over the box ``[low, high]^q``
    with the posterior normalized on the same grid.  The uninformative prior
    is the uniform density on the box.  With ``check`` the result is recomputed
    on a grid of twice the resolution and :class:`GridTooCoarse` is raised if
    any value moves by more than 1e-3.
    """
    single = isinstance(cands, Candidate)
    cand_list = [cands] if single else list(cands)
    design = np.asarray(labeled[0], dtype=float)
    labels = np.asarray(labeled[1], dtype=float).reshape(-1)
    q = design.shape[1] if design.size else cand_list[0].features.size
    design = design.reshape(-1, q)
    if q > 3:
        raise ValueError("quadrature oracle supports q <= 3")
    if grid.points < 201 or grid.low > -8 or grid.high < 8:
        raise ValueError("grid must cover [-8, 8]^q with at least 201 points per axis")
    prior = prior or Uninformative()
    xs = np.array([c.features for c in cand_list], dtype=float).reshape(-1, q)
    ys = np.array([c.pseudo_label for c in cand_list], dtype=float)
    log_vol = q * np.log(grid.high - grid.low)

    def evaluate(spec):
        def terms(thetas):
            lp = -log_vol * np.ones(thetas.shape[0]) if isinstance(prior, Uninformative) \
                else prior.log_density_batch(thetas)
            ll_d = _grid_loglik(thetas, design, labels)
            eta = thetas @ xs.T
            ll_i = ys * eta - np.logaddexp(0.0, eta)
            # column 0: posterior normalizer; the rest: p(D+i|theta) p(D|theta) pi(theta)
            post = ll_d + lp
            return np.column_stack([post, post[:, None] + ll_d[:, None] + ll_i])
        out = _grid_logsumexp(terms, q, spec)
        return out[1:] - out[0]

    values = evaluate(grid)
    if check:
        finer = evaluate(grid.refined())
        if np.max(np.abs(finer - values)) > 1e-3:
            raise GridTooCoarse(f"refinement moved the oracle by {np.max(np.abs(finer - values)):.2e}")
    return float(values[0]) if single else values


def oracle_discrete_bayes(theta_grid, prior_weights, labeled, pool: Sequence[Candidate], *,
                          update: bool = True) -> int:
    """Exact Bayes action on a finite parameter set.

    Utility of selecting candidate ``i`` under ``theta`` is the pseudo-label
    likelihood ``p(D + (x_i, y_i) | theta)``.  With ``update`` the expectation
    is taken under the posterior given ``D`` (pseudo posterior predictive);
    otherwise under the prior weights (pseudo marginal likelihood).
    """
    thetas = np.atleast_2d(np.asarray(theta_grid, dtype=float))
    w = np.asarray(prior_weights, dtype=float).reshape(-1)
    if w.size != thetas.shape[0]:
        raise ValueError("one prior weight per grid point required")
    if not np.isclose(w.sum(), 1.0) or np.any(w < 0):
        raise ValueError("prior weights must be nonnegative and sum to 1")
    design = np.asarray(labeled[0], dtype=float).reshape(-1, thetas.shape[1])
    labels = np.asarray(labeled[1], dtype=float).reshape(-1)
    ll_d = _grid_loglik(thetas, design, labels)
    with np.errstate(divide="ignore"):
        log_w = np.log(w)
    if update:
        log_w = log_w + ll_d - logsumexp(log_w + ll_d)
    xs = np.array([c.features for c in pool], dtype=float).reshape(-1, thetas.shape[1])
    ys = np.array([c.pseudo_label for c in pool], dtype=float)
    eta = thetas @ xs.T
    ll_i = ys * eta - np.logaddexp(0.0, eta)
    expected = logsumexp(log_w[:, None] + ll_d[:, None] + ll_i, axis=0)
    return argmax_by_id([c.id for c in pool], expected)

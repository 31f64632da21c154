"""Variants of the BPLS criterion: robust prior sets, label-agnostic scoring,
selection without a predicted label, and a model-size penalized choice of basis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .criteria import Candidate, CandidateScore, augmented_scores, ubpls_values
from .errors import AllCandidatesInvalid, EmptyPool
from .model import BasisSpec, expand_basis
from .prior import Gaussian, Prior

PPP_ROBUST = "ppp-robust"
PPP_FANTASY = "ppp-fantasy"
BPLS_NOPRED = "bpls-nopred"
BPLS_BIVARIATE = "bpls-bivariate"

EXTENSIONS = (PPP_ROBUST, PPP_FANTASY, BPLS_NOPRED, BPLS_BIVARIATE)

DEFAULT_LAMBDA = 0.5


@dataclass(frozen=True)
class PriorSet:
    """Finite set of priors; the robust rule takes the pessimistic member."""

    members: tuple[Prior, ...]

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("a prior set needs at least one member")
        dims = {m.dim for m in members if isinstance(m, Gaussian)}
        if len(dims) > 1:
            raise ValueError(f"prior set members disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)

    def least_favorable(self, theta_hat) -> Prior:
        """Member with the smallest density at ``theta_hat`` (first on ties)."""
        dens = [m.log_density(theta_hat) for m in self.members]
        return self.members[int(np.argmin(dens))]


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha


# -- robust ------------------------------------------------------------------


def robust_values(labeled, cand_features, cand_labels, prior_set: PriorSet, theta_hat, *,
                  map_fit: bool = False) -> np.ndarray:
    prior = prior_set.least_favorable(theta_hat)
    return augmented_scores(labeled, cand_features, cand_labels, prior=prior, map_fit=map_fit).laplace


def score_robust_ppp(labeled, cand: Candidate, prior_set: PriorSet, theta_hat) -> CandidateScore:
    """iBPLS under the member prior least favorable to the current ML fit."""
    v = robust_values(labeled, cand.features[None, :], [cand.pseudo_label], prior_set, theta_hat)
    return CandidateScore(cand.id, PPP_ROBUST, float(v[0]))


# -- fantasy -----------------------------------------------------------------


def hurwicz(scores_0: np.ndarray, scores_1: np.ndarray, alpha: float) -> np.ndarray:
    """``alpha * max + (1 - alpha) * min`` with the ``-inf`` sentinel respected."""
    alpha = _check_alpha(alpha)
    hi = np.maximum(scores_0, scores_1)
    lo = np.minimum(scores_0, scores_1)
    # lo + alpha * (hi - lo) stays monotone in alpha under rounding
    with np.errstate(invalid="ignore"):
        out = hi if alpha == 1.0 else lo + alpha * (hi - lo)
    out = np.where(np.isneginf(lo), -np.inf if alpha < 1.0 else hi, out)
    return np.where(np.isneginf(hi), -np.inf, out)


def label_table(labeled, cand_features) -> np.ndarray:
    """uBPLS for every row under both labels, shape ``(m, 2)``."""
    xs = np.atleast_2d(np.asarray(cand_features, dtype=float))
    m = xs.shape[0]
    vals = ubpls_values(labeled, np.vstack([xs, xs]), np.r_[np.zeros(m), np.ones(m)])
    return np.column_stack([vals[:m], vals[m:]])


def fantasy_values(labeled, cand_features, alpha: float) -> np.ndarray:
    table = label_table(labeled, cand_features)
    return hurwicz(table[:, 0], table[:, 1], alpha)


def score_fantasy_ppp(labeled, cand_features, alpha: float, cand_id: int = 0) -> CandidateScore:
    """Hurwicz mix of the uBPLS scores obtained with either label on the row."""
    v = fantasy_values(labeled, np.asarray(cand_features, dtype=float)[None, :], alpha)
    return CandidateScore(int(cand_id), PPP_FANTASY, float(v[0]))


# -- without predictions -----------------------------------------------------


def argmax_pair(ids, table) -> tuple[int, int]:
    """Best ``(id, label)`` of a ``(m, 2)`` table; ties to smaller id, then label 0."""
    ids = np.asarray(ids)
    table = np.asarray(table, dtype=float)
    if ids.size == 0:
        raise EmptyPool("no candidates to select from")
    vals = np.where(np.isnan(table), -np.inf, table)
    if np.all(np.isneginf(vals)):
        raise AllCandidatesInvalid("every (row, label) pair scored -inf")
    best = vals.max()
    rows, labels = np.nonzero(vals == best)
    order = np.lexsort((labels, ids[rows]))
    k = order[0]
    return int(ids[rows[k]]), int(labels[k])


def select_without_predictions(labeled, pool_features, ids: Sequence[int] | None = None) -> tuple[int, int]:
    """Score every row under both labels and return the best ``(id, label)``."""
    xs = np.asarray(pool_features, dtype=float)
    if xs.size == 0:
        raise EmptyPool("empty pool")
    xs = np.atleast_2d(xs)
    ids = np.arange(xs.shape[0]) if ids is None else np.asarray(ids)
    return argmax_pair(ids, label_table(labeled, xs))


# -- bivariate ---------------------------------------------------------------


@dataclass
class BivariateResult:
    values: np.ndarray      # penalized scores
    chosen: np.ndarray      # index into the ladder, -1 where every basis failed
    dims: np.ndarray


def bivariate_values(labeled_raw, cand_raw, cand_labels, basis_ladder: Sequence[BasisSpec],
                     lam: float = DEFAULT_LAMBDA, reference=None) -> BivariateResult:
    """Per candidate, pick the basis that best fits the augmented training data.

    For every basis the labeled rows plus the pseudo-labeled candidate are
    refit; the basis with the highest log-likelihood wins (earliest on ties)
    and the score is its uBPLS value minus ``lam`` times its dimension.
    Bases whose fit or information fails are skipped.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if not basis_ladder:
        raise ValueError("basis ladder is empty")
    x_lab = np.atleast_2d(np.asarray(labeled_raw[0], dtype=float))
    y_lab = np.asarray(labeled_raw[1], dtype=float)
    xs = np.atleast_2d(np.asarray(cand_raw, dtype=float))
    ref = x_lab if reference is None else np.asarray(reference, dtype=float)
    m = xs.shape[0]
    lik = np.full((len(basis_ladder), m), -np.inf)
    lap = np.full((len(basis_ladder), m), -np.inf)
    dims = np.array([b.dim(x_lab.shape[1]) for b in basis_ladder])
    for k, basis in enumerate(basis_ladder):
        design = expand_basis(x_lab, basis, ref)
        cand_design = expand_basis(xs, basis, ref)
        sc = augmented_scores((design, y_lab), cand_design, cand_labels)
        ok = np.isfinite(sc.laplace)
        lik[k] = np.where(ok, sc.likelihood, -np.inf)
        lap[k] = sc.laplace
    any_ok = np.any(np.isfinite(lik), axis=0)
    chosen = np.where(any_ok, np.argmax(lik, axis=0), -1)
    cols = np.arange(m)
    values = np.where(any_ok, lap[np.maximum(chosen, 0), cols] - lam * dims[np.maximum(chosen, 0)], -np.inf)
    return BivariateResult(values, chosen, dims)


def score_bivariate(labeled_raw, cand: Candidate, basis_ladder: Sequence[BasisSpec],
                    lam: float = DEFAULT_LAMBDA, reference=None) -> CandidateScore:
    """Penalized uBPLS under the best-fitting basis; ``cand.features`` are raw."""
    res = bivariate_values(labeled_raw, cand.features[None, :], [cand.pseudo_label], basis_ladder, lam, reference)
    return CandidateScore(cand.id, BPLS_BIVARIATE, float(res.values[0]))

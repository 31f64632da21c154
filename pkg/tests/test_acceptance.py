"""Acceptance suite: one test per criterion, each reporting a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v``; the summary section at the
end of the session lists every criterion.  Criterion 7 is soft: a miss emits
a warning instead of failing.
"""

import logging
import os
import time
import warnings

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import spearmanr

from bpls import extensions as E
from bpls.bench import ApproxConfig, DataSource, ExperimentConfig, compare_approximations, run_experiment
from bpls.criteria import (Candidate, CandidateScore, ibpls_values, oracle_discrete_bayes,
                           oracle_log_ppp, score_fine_ppp, select_best, ubpls_values)
from bpls.data import SimSpec, SplitSpec, simulate, split
from bpls.model import fit, log_likelihood, observed_fisher, predict_proba
from bpls.prior import Gaussian, Uninformative
from bpls.selftrain import CRITERIA, SelfTrainConfig, run_self_training

from conftest import logistic_data

THREADS = os.cpu_count() or 1
TABLE_METHODS = ["ppp-u", "prob-score", "pred-variance", "likelihood-maxmax", "random"]


@pytest.fixture(autouse=True)
def _silence_fit_warnings():
    logging.disable(logging.WARNING)
    yield
    logging.disable(logging.NOTSET)


def paired_gap(report, a, b, pick):
    """Mean and standard error of per-repetition differences ``pick(a) - pick(b)``."""
    diff = np.array([pick(ta) - pick(tb) for ta, tb in zip(report.traces(a), report.traces(b))])
    return diff.mean(), diff.std(ddof=1) / np.sqrt(diff.size)


# -- 1 -----------------------------------------------------------------------


def test_c01_fine_ppp_tracks_quadrature(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    rhos, gaps = [], []
    for _ in range(50):
        n, m = int(rng.integers(6, 13)), int(rng.integers(3, 6))
        beta = rng.uniform(-1.5, 1.5)
        x = rng.normal(size=(n, 1))
        y = (rng.random(n) < 1 / (1 + np.exp(-beta * x[:, 0]))).astype(float)
        xs = 1.5 * rng.normal(size=(m, 1))
        ys = (predict_proba(fit(x, y).theta, xs) >= 0.5).astype(int)
        cands = [Candidate(i, xs[i], int(ys[i])) for i in range(m)]
        fine = np.array([score_fine_ppp((x, y), c).value for c in cands])
        exact = oracle_log_ppp((x, y), cands)
        rhos.append(spearmanr(fine, exact).statistic)
        gaps.append(np.mean(np.abs((fine - fine.mean()) - (exact - exact.mean()))))
    elapsed = time.perf_counter() - t0
    rho, gap = float(np.mean(rhos)), float(np.mean(gaps))
    ok = rho >= 0.9 and gap <= 0.5 and elapsed < 60
    verdict(1, ok, f"mean Spearman {rho:.3f} (>= 0.9), centered gap {gap:.4f} nats (<= 0.5), {elapsed:.1f}s")
    assert rho >= 0.9
    assert gap <= 0.5
    assert elapsed < 60


# -- 2 -----------------------------------------------------------------------


def _fd_hessian(f, theta, h=1e-4):
    q = theta.size
    eye = np.eye(q) * h
    hess = np.empty((q, q))
    for i in range(q):
        for j in range(q):
            hess[i, j] = (f(theta + eye[i] + eye[j]) - f(theta + eye[i] - eye[j])
                          - f(theta - eye[i] + eye[j]) + f(theta - eye[i] - eye[j])) / (4 * h * h)
    return hess


def test_c02_fisher_matches_finite_differences(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(100):
        q, n = int(rng.integers(1, 9)), int(rng.integers(2, 51))
        design, y, _ = logistic_data(rng, n, q)
        theta = rng.normal(size=q)
        fisher = observed_fisher(theta, design, y)
        numeric = -_fd_hessian(lambda t: log_likelihood(t, design, y), theta)
        worst = max(worst, np.max(np.abs(fisher - numeric)) / np.max(np.abs(fisher)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 30
    verdict(2, ok, f"max relative error {worst:.2e} (<= 1e-4), {elapsed:.1f}s")
    assert worst <= 1e-4
    assert elapsed < 30


# -- 3 -----------------------------------------------------------------------


def _log_lik(theta, xs, ys):
    eta = xs @ theta
    return float(np.sum(ys * eta - np.logaddexp(0.0, eta)))


def _first_argmax(values):
    best, arg = -np.inf, None
    for i, v in enumerate(values):
        if v > best:
            best, arg = v, i
    return arg


def _instance(rng):
    q = int(rng.integers(1, 4))
    k = int(rng.integers(2, 9))
    n, m = int(rng.integers(1, 7)), int(rng.integers(2, 7))
    thetas = rng.normal(scale=1.5, size=(k, q))
    weights = rng.dirichlet(np.ones(k))
    lab = (rng.normal(size=(n, q)), rng.integers(0, 2, n).astype(float))
    pool = [Candidate(i, rng.normal(size=q), int(rng.integers(0, 2))) for i in range(m)]
    return thetas, weights, lab, pool


def _augmented(lab, c):
    return np.vstack([lab[0], c.features]), np.append(lab[1], c.pseudo_label)


def test_c03_discrete_oracles_match_decision_rules(verdict):
    rng = np.random.default_rng(303)
    hits = {"posterior": 0, "single": 0, "prior": 0}
    for _ in range(100):
        thetas, w, lab, pool = _instance(rng)
        # expected utility of each selection under the posterior over the finite set
        log_post = np.log(w) + np.array([_log_lik(t, *lab) for t in thetas])
        log_post -= logsumexp(log_post)
        eu = [logsumexp(log_post + np.array([_log_lik(t, *_augmented(lab, c)) for t in thetas])) for c in pool]
        hits["posterior"] += oracle_discrete_bayes(thetas, w, lab, pool) == pool[_first_argmax(eu)].id

        lik = [_log_lik(thetas[0], *_augmented(lab, c)) for c in pool]
        hits["single"] += oracle_discrete_bayes(thetas[:1], [1.0], lab, pool) == pool[_first_argmax(lik)].id

        marginal = [logsumexp(np.log(w) + np.array([_log_lik(t, *_augmented(lab, c)) for t in thetas]))
                    for c in pool]
        hits["prior"] += oracle_discrete_bayes(thetas, w, lab, pool, update=False) == pool[_first_argmax(marginal)].id
    ok = all(v == 100 for v in hits.values())
    verdict(3, ok, "agreement posterior/single/prior = "
            + "/".join(f"{hits[k]}%" for k in ("posterior", "single", "prior")) + " (100%)")
    assert hits == {"posterior": 100, "single": 100, "prior": 100}


# -- 4 -----------------------------------------------------------------------


def test_c04_ranking_invariances(verdict):
    rng = np.random.default_rng(404)
    same_rank = same_norm = same_affine = 0
    for _ in range(50):
        design, y, _ = logistic_data(rng, int(rng.integers(15, 40)), 3)
        m = int(rng.integers(3, 12))
        xs = np.column_stack([np.ones(m), rng.normal(size=(m, 2))])
        ys = (predict_proba(fit(design, y).theta, xs) >= 0.5).astype(int)
        u = ubpls_values((design, y), xs, ys)
        i = ibpls_values((design, y), xs, ys, Uninformative())
        same_rank += np.array_equal(np.argsort(u, kind="stable"), np.argsort(i, kind="stable"))
        raw = ubpls_values((design, y), xs, ys, normalize_by=1.0)
        same_norm += np.argmax(raw) == np.argmax(u)
        values = rng.normal(size=m)
        a, b = rng.uniform(0.1, 10.0), rng.uniform(-100.0, 100.0)
        base = select_best([CandidateScore(k, "x", v) for k, v in enumerate(values)])
        moved = select_best([CandidateScore(k, "x", a * v + b) for k, v in enumerate(values)])
        same_affine += base == moved
    ok = same_rank == same_norm == same_affine == 50
    verdict(4, ok, f"uniform iBPLS = uBPLS {same_rank}/50, normalization {same_norm}/50, "
                   f"affine {same_affine}/50 (all exact)")
    assert (same_rank, same_norm, same_affine) == (50, 50, 50)


# -- 5 -----------------------------------------------------------------------


def test_c05_fine_and_simplified_converge(verdict):
    t0 = time.perf_counter()
    cfg = ApproxConfig(DataSource(sim=SimSpec(1, 4)), n_grid=(120, 400),
                       split=SplitSpec(test_share=0.5, unlabeled_share=0.8), seeds=(0, 1, 2, 3, 4))
    stats = compare_approximations(cfg)
    elapsed = time.perf_counter() - t0
    small = {s.seed: s.agreement for s in stats if s.n == 120}
    large = {s.seed: s.agreement for s in stats if s.n == 400}
    nondecreasing = sum(large[k] >= small[k] for k in small)
    worst = min(large.values())
    ok = nondecreasing >= 4 and worst >= 0.8 and elapsed < 600
    verdict(5, ok, f"agreement n=400 >= n=120 in {nondecreasing}/5 seeds (>= 4), "
                   f"min agreement at n=400 {worst:.3f} (>= 0.8), {elapsed:.0f}s")
    assert nondecreasing >= 4
    assert worst >= 0.8
    assert elapsed < 600


# -- 6 and 7 -----------------------------------------------------------------


@pytest.fixture(scope="session")
def table_runs():
    t0 = time.perf_counter()
    runs = {}
    for n in (60, 400):
        cfg = ExperimentConfig.from_dict({
            "data": {"simulate": {"n": n, "q": 60}},
            "split": {"test_share": 0.5, "unlabeled_share": 0.8},
            "methods": [{"criterion": c} for c in TABLE_METHODS] + [{"criterion": "supervised"}],
            "repetitions": 20, "seed": 0})
        runs[n] = run_experiment(cfg, threads=THREADS)
    return runs, time.perf_counter() - t0


def test_c06_ppp_beats_probability_baselines(verdict, table_runs):
    runs, elapsed = table_runs
    lines, ok = [], elapsed < 1800
    for n, report in runs.items():
        for other in ("prob-score", "pred-variance"):
            gap, se = paired_gap(report, "ppp-u", other, lambda t: t.accuracies.max())
            ok &= gap > se
            lines.append(f"n={n} vs {other}: {gap:+.4f} (se {se:.4f})")
    verdict(6, ok, "oracle ppp-u minus baseline, needs > 1 se: " + "; ".join(lines) + f"; {elapsed:.0f}s")
    assert ok


def test_c07_maxmax_stays_closest_to_supervised(verdict, table_runs):
    runs, _ = table_runs
    lines, ok = [], True
    for n, report in runs.items():
        mad = np.array([[np.mean(np.abs(t.accuracies[1:] - t.accuracies[0])) for t in report.traces(tag)]
                        for tag in TABLE_METHODS])
        maxmax = TABLE_METHODS.index("likelihood-maxmax")
        share = float(np.mean(mad[maxmax] <= mad.min(axis=0)))
        ok &= share >= 0.7
        lines.append(f"n={n}: smallest deviation in {share:.0%} of reps")
    detail = "likelihood-maxmax " + "; ".join(lines) + " (>= 70%)"
    verdict(7, ok, detail + ("" if ok else "; soft criterion, warning only"))
    if not ok:
        warnings.warn(f"criterion 7 not met: {detail}", UserWarning)


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("BPLS_SLOW"), reason="set BPLS_SLOW=1 for the n=1000 reproduction")
def test_large_sample_reversal():
    cfg = ExperimentConfig.from_dict({
        "data": {"simulate": {"n": 1000, "q": 60}}, "split": {"unlabeled_share": 0.8},
        "methods": [{"criterion": "ppp-u"}, {"criterion": "prob-score"}], "repetitions": 20, "seed": 0})
    report = run_experiment(cfg, threads=THREADS)
    assert report.method("prob-score").oracle > report.method("ppp-u").oracle


# -- 8 -----------------------------------------------------------------------


def test_c08_informative_prior_gain(verdict):
    t0 = time.perf_counter()
    cfg = ExperimentConfig.from_dict({
        "data": {"simulate": {"n": 300, "q": 10}},
        "split": {"test_share": 0.5, "unlabeled_share": 0.8},
        "methods": [{"criterion": "ppp-i", "prior": {"mean": "truth", "covariance": 0.25}},
                    {"criterion": "prob-score"}, {"criterion": "supervised"}],
        "repetitions": 20, "seed": 0})
    report = run_experiment(cfg, threads=THREADS)
    elapsed = time.perf_counter() - t0
    gap, se = paired_gap(report, "ppp-i", "prob-score", lambda t: t.accuracies[-1])
    ok = gap >= se and elapsed < 900
    verdict(8, ok, f"final ppp-i minus prob-score {gap:+.4f} (se {se:.4f}, needs >= 1 se), {elapsed:.0f}s")
    assert gap >= se
    assert elapsed < 900


# -- 9 -----------------------------------------------------------------------


def _fixture_split():
    ds = simulate(SimSpec(30, 2, seed=5))
    return ds, split(ds, SplitSpec(test_share=0.5, unlabeled_share=0.6, seed=1))


def test_c09_loop_conservation_and_determinism(verdict):
    ds, parts = _fixture_split()
    assert ds.n == 30
    prior = Gaussian(np.zeros(3), 2.0)
    prior_set = E.PriorSet((prior, Gaussian(np.ones(3), 1.0)))
    failures = []
    for tag in CRITERIA:
        cfg = SelfTrainConfig(tag, prior=prior, prior_set=prior_set, seed=3)
        a = run_self_training(cfg, parts.labeled, parts.pool, parts.test)
        b = run_self_training(cfg, parts.labeled, parts.pool, parts.test)
        chosen = [r.candidate_id for r in a.records]
        expected_steps = 0 if tag == "supervised" else len(parts.pool)
        sizes = [len(parts.pool)] + [r.pool_size for r in a.records]
        checks = {
            "steps": len(chosen) == expected_steps,
            "partition": len(set(chosen)) == len(chosen) and set(chosen) <= set(parts.pool.ids.tolist()),
            "shrinking": all(y == x - 1 for x, y in zip(sizes, sizes[1:])),
            "conserved": sizes[-1] + len(chosen) == len(parts.pool),
            "rerun": a.to_dict() == b.to_dict() and a.accuracies.tobytes() == b.accuracies.tobytes(),
        }
        failures += [f"{tag}:{k}" for k, v in checks.items() if not v]
    ok = not failures
    verdict(9, ok, f"{len(CRITERIA)} criteria on a 30-row fixture; violations: {failures or 'none'}")
    assert not failures


# -- 10 ----------------------------------------------------------------------


def test_c10_extension_sanity(verdict):
    rng = np.random.default_rng(1010)
    design, y, _ = logistic_data(rng, 40, 3)
    lab = (design, y)
    xs = np.column_stack([np.ones(20), rng.normal(size=(20, 2))])

    alphas = np.linspace(0.0, 1.0, 11)
    curves = np.array([E.fantasy_values(lab, xs, a) for a in alphas])
    monotone = bool(np.all(np.diff(curves, axis=0) >= 0))

    rows = xs[:8]
    ids = np.arange(100, 108)
    table = [(float(ubpls_values(lab, rows[i:i + 1], [label])[0]), i, label) for i in range(8) for label in (0, 1)]
    best = max(v for v, _, _ in table)
    i_best, label_best = min((i, label) for v, i, label in table if v == best)
    exhaustive = (int(ids[i_best]), label_best)
    nopred = E.select_without_predictions(lab, rows, ids) == exhaustive

    prior = Gaussian(np.array([0.2, -0.3, 0.5]), 0.8)
    ys = (predict_proba(fit(design, y).theta, xs) >= 0.5).astype(int)
    robust = E.robust_values(lab, xs, ys, E.PriorSet((prior,)), fit(design, y).theta)
    robust_same = np.array_equal(robust, ibpls_values(lab, xs, ys, prior))

    ok = monotone and nopred and robust_same
    verdict(10, ok, f"fantasy monotone in alpha: {monotone}; no-prediction argmax = exhaustive table: {nopred}; "
                    f"singleton robust = iBPLS: {robust_same}")
    assert monotone
    assert nopred
    assert robust_same

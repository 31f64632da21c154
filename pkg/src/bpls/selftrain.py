"""The self-training loop: fit, pseudo-label the pool, pick one row, absorb it, refit."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import criteria as C
from . import extensions as E
from .data import LabeledSet, UnlabeledPool
from .errors import ConfigError, EmptyTestSet, SingularInformation, UnfittableInitialModel
from .model import BasisSpec, FittedModel, expand_basis, fit, predict_proba
from .prior import Gaussian, Prior, Uninformative, prior_from_dict

SUPERVISED = "supervised"
CRITERIA = C.CRITERIA + E.EXTENSIONS + (SUPERVISED,)
DEFAULT_LADDER = (BasisSpec(), BasisSpec("polynomial", 2))


@dataclass(frozen=True)
class SelfTrainConfig:
    criterion: str
    prior: Prior = field(default_factory=Uninformative)
    basis: BasisSpec = field(default_factory=BasisSpec)
    max_iterations: int | None = None
    seed: int = 0
    name: str | None = None
    alpha: float = 0.5
    lam: float = E.DEFAULT_LAMBDA
    prior_set: E.PriorSet | None = None
    basis_ladder: tuple[BasisSpec, ...] | None = None
    map_fit: bool = False

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ConfigError(f"unknown criterion {self.criterion!r}; expected one of {', '.join(CRITERIA)}")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")

    @property
    def label(self) -> str:
        return self.name or self.criterion

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "criterion": self.criterion,
            "prior": self.prior.to_dict(),
            "basis": str(self.basis),
            "max_iterations": self.max_iterations,
            "seed": int(self.seed),
            "alpha": self.alpha,
            "lambda": self.lam,
            "prior_set": None if self.prior_set is None else [m.to_dict() for m in self.prior_set.members],
            "basis_ladder": None if self.basis_ladder is None else [str(b) for b in self.basis_ladder],
            "map_fit": self.map_fit,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelfTrainConfig":
        known = {"name", "criterion", "prior", "basis", "max_iterations", "seed", "alpha",
                 "lambda", "prior_set", "basis_ladder", "map_fit"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown method keys: {sorted(extra)}")
        if "criterion" not in d:
            raise ConfigError("method entry needs a 'criterion'")
        ps = d.get("prior_set")
        ladder = d.get("basis_ladder")
        return cls(
            criterion=d["criterion"],
            prior=prior_from_dict(d.get("prior")),
            basis=BasisSpec.parse(d.get("basis") or "identity"),
            max_iterations=d.get("max_iterations"),
            seed=int(d.get("seed", 0)),
            name=d.get("name"),
            alpha=float(d.get("alpha", 0.5)),
            lam=float(d.get("lambda", E.DEFAULT_LAMBDA)),
            prior_set=None if ps is None else E.PriorSet(tuple(prior_from_dict(m) for m in ps)),
            basis_ladder=None if ladder is None else tuple(BasisSpec.parse(b) for b in ladder),
            map_fit=bool(d.get("map_fit", False)),
        )


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    candidate_id: int
    pseudo_label: int
    value: float
    test_accuracy: float
    pool_size: int
    shadow_id: int | None = None


@dataclass(frozen=True)
class SelfTrainTrace:
    config: dict
    initial_accuracy: float
    records: tuple[IterationRecord, ...]

    @property
    def accuracies(self) -> np.ndarray:
        """Accuracy curve with the supervised fit at index 0."""
        return np.array([self.initial_accuracy] + [r.test_accuracy for r in self.records])

    def to_dict(self) -> dict:
        return {"config": self.config, "initial_accuracy": self.initial_accuracy,
                "records": [asdict(r) for r in self.records]}

    @classmethod
    def from_dict(cls, d: dict) -> "SelfTrainTrace":
        return cls(d["config"], float(d["initial_accuracy"]),
                   tuple(IterationRecord(**r) for r in d["records"]))


def evaluate_accuracy(model: FittedModel | np.ndarray, test_set) -> float:
    """Share of rows where ``1{p >= 0.5}`` matches the label.

    ``test_set`` is a ``(design, labels)`` pair already in the model's basis.
    """
    design, labels = test_set
    labels = np.asarray(labels).reshape(-1)
    if labels.size == 0:
        raise EmptyTestSet("test set is empty")
    theta = model.theta if isinstance(model, FittedModel) else np.asarray(model)
    pred = np.atleast_1d(predict_proba(theta, np.atleast_2d(design))) >= 0.5
    return float(np.mean(pred == (labels == 1)))


class _State:
    """Mutable working copy of the labeled set and the remaining pool."""

    def __init__(self, cfg, labeled, pool, test, reference):
        self.cfg = cfg
        self.reference = reference
        order = np.argsort(pool.ids, kind="stable")
        self.pool_ids = pool.ids[order]
        self.raw_pool = pool.features[order]
        self.design_pool = self.expand(self.raw_pool)
        self.raw_lab = np.asarray(labeled.features, dtype=float)
        self.design_lab = self.expand(self.raw_lab)
        self.y_lab = np.asarray(labeled.labels, dtype=float)
        self.test = (self.expand(test.features), test.labels)
        self.active = np.ones(self.pool_ids.size, dtype=bool)
        self.rng = np.random.default_rng(cfg.seed)
        q = self.design_lab.shape[1]
        for p in [cfg.prior] + list(cfg.prior_set.members if cfg.prior_set else []):
            if isinstance(p, Gaussian) and p.dim != q:
                raise ConfigError(f"prior dimension {p.dim} does not match model dimension {q}")

    def expand(self, raw):
        return expand_basis(np.asarray(raw, dtype=float).reshape(-1, self.reference.shape[1]),
                            self.cfg.basis, self.reference)

    def fit(self) -> FittedModel:
        prior = self.cfg.prior if self.cfg.map_fit else None
        return fit(self.design_lab, self.y_lab, prior=prior)

    def absorb(self, pos: int, label: int) -> None:
        self.raw_lab = np.vstack([self.raw_lab, self.raw_pool[pos]])
        self.design_lab = np.vstack([self.design_lab, self.design_pool[pos]])
        self.y_lab = np.append(self.y_lab, float(label))
        self.active[pos] = False


def _choose(state: _State, model: FittedModel, cfg: SelfTrainConfig | None = None) -> tuple[int, int, float]:
    """Position in the pool, assigned label and criterion value of the winner."""
    cfg = cfg or state.cfg
    idx = np.flatnonzero(state.active)
    ids = state.pool_ids[idx]
    xs = state.design_pool[idx]
    yhat = (np.atleast_1d(predict_proba(model.theta, xs)) >= 0.5).astype(int)
    lab = (state.design_lab, state.y_lab)
    tag = cfg.criterion

    if tag == E.BPLS_NOPRED:
        table = E.label_table(lab, xs)
        best_id, label = E.argmax_pair(ids, table)
        k = int(np.flatnonzero(ids == best_id)[0])
        return idx[k], label, float(table[k, label])

    if tag == C.PPP_U:
        values = C.ubpls_values(lab, xs, yhat)
    elif tag == C.PPP_I:
        values = C.ibpls_values(lab, xs, yhat, cfg.prior, map_fit=cfg.map_fit)
    elif tag == C.PPP_FINE:
        values = C.fine_ppp_values(lab, xs, yhat, cfg.prior)
    elif tag == C.MAXMAX:
        values = C.maxmax_values(lab, xs, yhat)
    elif tag == C.PROB_SCORE:
        values = C.probability_values(model.theta, xs)
    elif tag == C.PRED_VARIANCE:
        values = C.variance_values(model.theta, xs)
    elif tag == C.RANDOM:
        values = state.rng.random(idx.size)
    elif tag == E.PPP_ROBUST:
        prior_set = cfg.prior_set or E.PriorSet((cfg.prior,))
        values = E.robust_values(lab, xs, yhat, prior_set, model.theta, map_fit=cfg.map_fit)
    elif tag == E.PPP_FANTASY:
        values = E.fantasy_values(lab, xs, cfg.alpha)
    elif tag == E.BPLS_BIVARIATE:
        ladder = cfg.basis_ladder or DEFAULT_LADDER
        values = E.bivariate_values((state.raw_lab, state.y_lab), state.raw_pool[idx], yhat,
                                    ladder, cfg.lam, state.reference).values
    else:  # pragma: no cover - guarded by SelfTrainConfig
        raise ConfigError(tag)
    best_id = C.argmax_by_id(ids, values)
    k = int(np.flatnonzero(ids == best_id)[0])
    return idx[k], int(yhat[k]), float(values[k])


def run_self_training(cfg: SelfTrainConfig, labeled: LabeledSet, pool: UnlabeledPool, test_set: LabeledSet,
                      *, reference=None, shadow: SelfTrainConfig | None = None,
                      progress: Callable[[int, int], None] | None = None) -> SelfTrainTrace:
    """Run the loop until the pool is empty or ``cfg.max_iterations`` is reached.

    Features are raw; the basis is expanded with knots placed on ``reference``
    (default: labeled and pool rows together, i.e. the training features).
    The ``"supervised"`` criterion runs no iterations.  With ``shadow``, each
    record also stores the id that the shadow criterion would have picked on
    the same state, without affecting the trajectory.
    """
    if len(test_set) == 0:
        raise EmptyTestSet("test set is empty")
    if reference is None:
        reference = np.vstack([labeled.features, pool.features])
    state = _State(cfg, labeled, pool, test_set, np.asarray(reference, dtype=float))
    try:
        model = state.fit()
    except SingularInformation as exc:
        raise UnfittableInitialModel(str(exc)) from exc
    initial = evaluate_accuracy(model, state.test)

    n_steps = len(pool) if cfg.max_iterations is None else min(len(pool), cfg.max_iterations)
    if cfg.criterion == SUPERVISED:
        n_steps = 0
    records = []
    for it in range(1, n_steps + 1):
        pos, label, value = _choose(state, model)
        shadow_id = None
        if shadow is not None:
            shadow_id = int(state.pool_ids[_choose(state, model, shadow)[0]])
        state.absorb(pos, label)
        model = state.fit()
        records.append(IterationRecord(it, int(state.pool_ids[pos]), int(label), value,
                                       evaluate_accuracy(model, state.test), int(state.active.sum()),
                                       shadow_id))
        if progress is not None:
            progress(it, n_steps)
    return SelfTrainTrace(cfg.to_dict(), initial, tuple(records))

"""Bayesian pseudo-label selection for self-training with logistic models."""

from .criteria import (
    Candidate,
    CandidateScore,
    oracle_discrete_bayes,
    oracle_log_ppp,
    score_fine_ppp,
    score_ibpls,
    score_maxmax_likelihood,
    score_predictive_variance,
    score_probability,
    score_ubpls,
    select_best,
)
from .data import SimSpec, SplitSpec, load_csv, simulate, split
from .model import BasisSpec, FittedModel, expand_basis, fit, log_likelihood, observed_fisher, predict_proba
from .prior import Gaussian, Uninformative
from .selftrain import SelfTrainConfig, evaluate_accuracy, run_self_training

__version__ = "0.1.0"

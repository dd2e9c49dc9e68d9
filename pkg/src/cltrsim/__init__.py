"""Simulation toolkit for counterfactual learning to rank."""

from .click_sim import ClickLog, Session, SimParams, generate_log, simulate_session, simulate_sessions
from .letor import DatasetSplit, QueryGroup, filter_queries, make_toy_dataset, normalize_features, parse_letor
from .metrics import EvalReport, arp, inc_ninc, ndcg_at_k
from .mlp import MlpParams, apply_update, backward, forward, init_params, rank_documents
from .propensity import PropensityTable, em_pbm, mle_dcm, regression_em_pbm, session_propensity
from .train import LossKind, TrainConfig, dla_step, train_cltr, train_ranker

__version__ = "0.1.0"

__all__ = [
    "ClickLog",
    "DatasetSplit",
    "EvalReport",
    "LossKind",
    "MlpParams",
    "PropensityTable",
    "QueryGroup",
    "Session",
    "SimParams",
    "TrainConfig",
    "apply_update",
    "arp",
    "backward",
    "dla_step",
    "em_pbm",
    "filter_queries",
    "forward",
    "generate_log",
    "inc_ninc",
    "init_params",
    "make_toy_dataset",
    "mle_dcm",
    "ndcg_at_k",
    "normalize_features",
    "parse_letor",
    "rank_documents",
    "regression_em_pbm",
    "session_propensity",
    "simulate_session",
    "simulate_sessions",
    "train_cltr",
    "train_ranker",
]

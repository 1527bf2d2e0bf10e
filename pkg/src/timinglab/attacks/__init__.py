"""Adversary procedures. Everything here consumes Trace metadata only."""
from .abtest import AbAttack, AttackConfig, SignatureGmm, ab_accuracy, fit_ab, score_ab
from .active import (
    PlantedLandscape,
    HttpRephraser,
    SecondTokenOracle,
    TemplateMutator,
    distinguishing_rate,
    extract_secret,
    fit_second_token_oracle,
    second_token_delay,
    second_token_oracle,
    suffix_search,
)
from .boost import BoostEnsemble, boost_fit, boost_infer
from .convnet import ConvNet, ConvNetConfig, train_convnet
from .features import FeatureSpec, featurize, feature_matrix, trace_features
from .modelio import load_model, save_model
from .multiclass import Conversation, SignatureClassifier, fit_multiclass, multi_turn_accuracy
from .pr import PRCurve, pr_sweep
from .whitebox import DifficultyScorer, LogLinearLM, difficulty, greedy_coordinate_search

__all__ = [
    "AbAttack", "AttackConfig", "SignatureGmm", "ab_accuracy", "fit_ab", "score_ab",
    "PlantedLandscape", "HttpRephraser", "SecondTokenOracle", "TemplateMutator", "distinguishing_rate",
    "extract_secret", "fit_second_token_oracle", "second_token_delay", "second_token_oracle", "suffix_search",
    "BoostEnsemble", "boost_fit", "boost_infer", "ConvNet", "ConvNetConfig", "train_convnet",
    "FeatureSpec", "featurize", "feature_matrix", "trace_features", "load_model", "save_model",
    "Conversation", "SignatureClassifier", "fit_multiclass", "multi_turn_accuracy", "PRCurve", "pr_sweep",
    "DifficultyScorer", "LogLinearLM", "difficulty", "greedy_coordinate_search",
]

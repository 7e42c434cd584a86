"""Radiology report generation from region features with an M-linear
attention encoder, an LSTM decoder and hybrid-reward self-critical training."""
from .decoding import beam_search, greedy_decode, sample_decode
from .metrics import METRIC_NAMES, MetricWeights, ScoreVector, corpus_scores, hybrid_reward, score_vector
from .model import FeatureBundle, ModelConfig, ReportModel
from .search import LookupScorer, evaluation_budget, greedy_weight_search, grid_search_oracle
from .trainer import TrainConfig, train
from .vocab import Vocab, build_vocab

__version__ = "0.1.0"

__all__ = [
    "METRIC_NAMES", "FeatureBundle", "LookupScorer", "MetricWeights", "ModelConfig", "ReportModel",
    "ScoreVector", "TrainConfig", "Vocab", "beam_search", "build_vocab", "corpus_scores", "evaluation_budget",
    "greedy_decode", "greedy_weight_search", "grid_search_oracle", "hybrid_reward", "sample_decode",
    "score_vector", "train",
]

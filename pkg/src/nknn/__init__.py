"""n-gram nearest-neighbor retrieval for autoregressive and non-autoregressive translation."""

from .ann import IVFConfig, NeighborSet, VectorIndex, exact_search, ivf_search, train_ivf
from .core import BOS, EOS, PAD, UNK, SentencePair, Vocabulary, build_vocab, load_corpus
from .datastore import Datastore, NGramConfig, build_datastore, load_datastore, pool_ngram, save_datastore
from .decode_at import BeamConfig, BeamHypothesis, beam_search, decode_at, update_beam_weight
from .decode_nat import NATDecodeConfig, decode_nat, first_pass_candidate, repetition_aware_check
from .knnmath import RetrievalParams, aggregate_positionwise, interpolate, knn_distribution
from .metrics import EvalReport, corpus_bleu, repetition_ratio, topk_accuracy, wsd_contrastive
from .model import SyntheticATModel, SyntheticModelConfig, SyntheticNATModel

__version__ = "0.1.0"

__all__ = [
    "BOS", "EOS", "PAD", "UNK",
    "BeamConfig", "BeamHypothesis", "Datastore", "EvalReport", "IVFConfig", "NATDecodeConfig",
    "NGramConfig", "NeighborSet", "RetrievalParams", "SentencePair", "SyntheticATModel",
    "SyntheticModelConfig", "SyntheticNATModel", "VectorIndex", "Vocabulary",
    "aggregate_positionwise", "beam_search", "build_datastore", "build_vocab", "corpus_bleu",
    "decode_at", "decode_nat", "exact_search", "first_pass_candidate", "interpolate",
    "ivf_search", "knn_distribution", "load_corpus", "load_datastore", "pool_ngram",
    "repetition_aware_check", "repetition_ratio", "save_datastore", "topk_accuracy",
    "train_ivf", "update_beam_weight", "wsd_contrastive",
]

"""Siamese inter-lingual NLI classifier head over frozen transformer embeddings."""

from .corpus import LABELS, PairExample, expand_language_pairs, load_sick, summarize
from .model import HeadConfig, HeadParams, baseline_forward, count_trainable, forward
from .store import Batch, EmbedStore, EmbeddingRecord, StoreWriter, assemble_batch
from .tensor import RngState, Tensor, backward, cross_entropy
from .trainer import OptimizerConfig, TrainRunConfig, evaluate, lr_at, train

__version__ = "0.1.0"

__all__ = [
    "LABELS",
    "PairExample",
    "expand_language_pairs",
    "load_sick",
    "summarize",
    "HeadConfig",
    "HeadParams",
    "baseline_forward",
    "count_trainable",
    "forward",
    "Batch",
    "EmbedStore",
    "EmbeddingRecord",
    "StoreWriter",
    "assemble_batch",
    "RngState",
    "Tensor",
    "backward",
    "cross_entropy",
    "OptimizerConfig",
    "TrainRunConfig",
    "evaluate",
    "lr_at",
    "train",
]

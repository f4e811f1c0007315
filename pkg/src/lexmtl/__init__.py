"""lexmtl: a from-scratch multi-task sequence-to-sequence model for legal text.

A numpy autodiff engine, a convolutional encoder/decoder with mixture-of-experts
layers, round-robin joint training across translation, summarisation and
multi-label classification tasks, and the evaluation metrics to score them.
"""

from .errors import LexMTLError
from .estimator import MultiModelEstimator
from .metrics import bleu, corpus_bleu, prf, rouge_l, rouge_n
from .model import ModelConfig, MultiModel, TaskRegistry, preset
from .trainer import Trainer, build_joint_config, combination_members
from .vocab import Vocabulary, build_subword_vocab

__version__ = "0.1.0"

__all__ = [
    "LexMTLError", "ModelConfig", "MultiModel", "MultiModelEstimator", "TaskRegistry",
    "Trainer", "Vocabulary", "bleu", "build_joint_config", "build_subword_vocab",
    "combination_members", "corpus_bleu", "preset", "prf", "rouge_l", "rouge_n",
]

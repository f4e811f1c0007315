"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .corpus import TASK_KINDS
from .errors import ConfigError, EmptyInputError, VocabularyError


def check_token_sequences(X, vocab_size: int, reserved_size: int, name: str = "X") -> list[list[int]]:
    """Return ``X`` as a list of int lists; every id must be a text id below ``vocab_size``."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = X.tolist()
    seqs = []
    for i, seq in enumerate(X):
        row = [int(t) for t in seq]
        if not row:
            raise EmptyInputError(f"{name}[{i}] is empty")
        bad = [t for t in row if not reserved_size <= t < vocab_size]
        if bad:
            raise VocabularyError(
                f"{name}[{i}] holds token id {bad[0]} outside the text range "
                f"[{reserved_size}, {vocab_size})")
        seqs.append(row)
    if not seqs:
        raise EmptyInputError(f"{name} holds no sequences")
    return seqs


def check_kind(kind: str) -> str:
    if kind not in TASK_KINDS:
        raise ConfigError(f"unknown task kind {kind!r}; valid: {', '.join(TASK_KINDS)}")
    return kind


def check_label_sets(y: Iterable, name: str = "y") -> list[frozenset]:
    out = []
    for i, labels in enumerate(y):
        if isinstance(labels, (int, np.integer)):
            labels = [labels]
        out.append(frozenset(int(c) for c in labels))
    return out


def check_consistent_length(*arrays: Sequence) -> None:
    lengths = {len(a) for a in arrays}
    if len(lengths) > 1:
        raise ConfigError(f"inconsistent numbers of samples: {sorted(lengths)}")

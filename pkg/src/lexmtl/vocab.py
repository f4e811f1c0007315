"""Shared subword vocabulary and the reserved token-id layout.

Ids ``0 .. reserved_size-1`` are reserved: padding, end of sequence, unknown,
begin of sequence, sixteen task-token slots and the class-label tokens. Text
subwords start at ``reserved_size``, so text encoding can never emit a
reserved id.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, ParseError, VocabularyError

PAD = 0
EOS = 1
UNK = 2
BOS = 3
TASK_BASE = 4
TASK_SLOTS = 16
LABEL_BASE = TASK_BASE + TASK_SLOTS
DEFAULT_RESERVED = 64
VOCAB_FORMAT = "lexmtl-vocab 1"

_CHUNK = re.compile(r"\s*\S+|\s+")


def task_token(slot: int) -> int:
    if not 0 <= slot < TASK_SLOTS:
        raise ConfigError(f"task slot {slot} outside [0, {TASK_SLOTS})")
    return TASK_BASE + slot


def is_task_token(token: int) -> bool:
    return TASK_BASE <= token < LABEL_BASE


def label_token(index: int, reserved_size: int = DEFAULT_RESERVED) -> int:
    if not 0 <= index < reserved_size - LABEL_BASE:
        raise VocabularyError(
            f"label index {index} outside the {reserved_size - LABEL_BASE} label slots")
    return LABEL_BASE + index


def is_label_token(token: int, reserved_size: int = DEFAULT_RESERVED) -> bool:
    return LABEL_BASE <= token < reserved_size


def pretokenize(text: str) -> list[str]:
    """Split on whitespace boundaries, keeping each run of spaces with the next word."""
    return _CHUNK.findall(text)


def _merge_word(word: tuple, pair: tuple, joined: str) -> tuple:
    out = []
    i = 0
    while i < len(word):
        if i + 1 < len(word) and word[i] == pair[0] and word[i + 1] == pair[1]:
            out.append(joined)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


def count_pairs(words: dict[tuple, int]) -> Counter:
    pairs: Counter = Counter()
    for word, freq in words.items():
        for a, b in zip(word, word[1:]):
            pairs[(a, b)] += freq
    return pairs


class Vocabulary:
    """Subword inventory with greedy pair merges.

    Build one with :func:`build_subword_vocab`; ``encode`` and ``decode`` are
    exact inverses on text drawn from the training character set.
    """

    def __init__(self, tokens: Sequence[str], merges: Sequence[tuple[str, str]],
                 reserved_size: int = DEFAULT_RESERVED, classes: Sequence[int] = ()):
        if reserved_size < LABEL_BASE + 1:
            raise ConfigError(f"reserved block of {reserved_size} ids leaves no label slots")
        self.tokens = list(tokens)
        self.merges = [tuple(m) for m in merges]
        self.reserved_size = reserved_size
        self.classes = sorted(set(int(c) for c in classes))
        self._ids = {tok: reserved_size + i for i, tok in enumerate(self.tokens)}
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._cache: dict[str, list[int]] = {}
        self.stats: Counter = Counter()

    def __len__(self) -> int:
        return self.reserved_size + len(self.tokens)

    @property
    def size(self) -> int:
        return len(self)

    @property
    def label_slots(self) -> int:
        return self.reserved_size - LABEL_BASE

    # -- text ---------------------------------------------------------------
    def _encode_chunk(self, chunk: str) -> list[int]:
        cached = self._cache.get(chunk)
        if cached is not None:
            return cached
        word = list(chunk)
        while len(word) > 1:
            best = None
            for i in range(len(word) - 1):
                rank = self._ranks.get((word[i], word[i + 1]))
                if rank is not None and (best is None or rank < best[0]):
                    best = (rank, i)
            if best is None:
                break
            pair = self.merges[best[0]]
            word = list(_merge_word(tuple(word), pair, pair[0] + pair[1]))
        ids = []
        for piece in word:
            ids.append(self._ids.get(piece, UNK))
        self._cache[chunk] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for chunk in pretokenize(text):
            ids.extend(self._encode_chunk(chunk))
        unknown = ids.count(UNK)
        if unknown:
            self.stats["unknown_chars"] += unknown
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        out = []
        for tid in ids:
            tid = int(tid)
            if tid == EOS:
                break
            if tid == UNK:
                out.append("�")
            elif tid >= self.reserved_size:
                try:
                    out.append(self.tokens[tid - self.reserved_size])
                except IndexError:
                    raise VocabularyError(f"token id {tid} outside vocabulary of size {len(self)}")
        return "".join(out)

    # -- labels -------------------------------------------------------------
    def register_classes(self, class_ids: Iterable[int]) -> None:
        merged = sorted(set(self.classes) | {int(c) for c in class_ids})
        if len(merged) > self.label_slots:
            raise ConfigError(
                f"{len(merged)} classes exceed the {self.label_slots} label slots; "
                f"raise reserved_size")
        self.classes = merged

    def encode_labels(self, class_ids: Iterable[int]) -> list[int]:
        index = {c: i for i, c in enumerate(self.classes)}
        try:
            return sorted(label_token(index[int(c)], self.reserved_size) for c in set(class_ids))
        except KeyError as exc:
            raise VocabularyError(f"class id {exc.args[0]} not in the class inventory") from None

    def decode_labels(self, label_indices: Iterable[int]) -> set[int]:
        return {self.classes[i] for i in label_indices if 0 <= i < len(self.classes)}

    # -- persistence --------------------------------------------------------
    def to_text(self) -> str:
        lines = [VOCAB_FORMAT, f"reserved\t{self.reserved_size}"]
        lines += [f"class\t{c}" for c in self.classes]
        lines += [f"token\t{json.dumps(t, ensure_ascii=False)}" for t in self.tokens]
        lines += [f"merge\t{json.dumps(a, ensure_ascii=False)}\t{json.dumps(b, ensure_ascii=False)}"
                  for a, b in self.merges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        if not lines or lines[0] != VOCAB_FORMAT:
            raise ParseError(f"not a vocabulary file (header {lines[0]!r})")
        reserved, classes, tokens, merges = DEFAULT_RESERVED, [], [], []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            kind, _, rest = line.partition("\t")
            try:
                if kind == "reserved":
                    reserved = int(rest)
                elif kind == "class":
                    classes.append(int(rest))
                elif kind == "token":
                    tokens.append(json.loads(rest))
                elif kind == "merge":
                    a, b = rest.split("\t")
                    merges.append((json.loads(a), json.loads(b)))
                else:
                    raise ValueError(kind)
            except ValueError as exc:
                raise ParseError(f"vocabulary line {lineno}: {line!r}") from exc
        return cls(tokens, merges, reserved, classes)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def hash(self) -> bytes:
        """32-byte digest identifying this vocabulary (stored in checkpoints)."""
        return hashlib.sha256(self.to_text().encode("utf-8")).digest()


def build_subword_vocab(corpora: Iterable[Iterable[str]], target_size: int,
                        reserved_size: int = DEFAULT_RESERVED) -> Vocabulary:
    """Learn greedy pair merges until the vocabulary reaches ``target_size`` ids.

    The most frequent adjacent pair wins; ties go to the lexicographically
    smallest pair. The result depends only on the text and its order.
    """
    words: Counter = Counter()
    for corpus in corpora:
        for line in corpus:
            words.update(pretokenize(line))
    alphabet = sorted({ch for w in words for ch in w})
    if target_size <= reserved_size + len(alphabet):
        raise ConfigError(
            f"target_size {target_size} must exceed reserved ids ({reserved_size}) "
            f"plus the character inventory ({len(alphabet)})")
    split = {tuple(w): c for w, c in words.items()}
    tokens = list(alphabet)
    merges: list[tuple[str, str]] = []
    known = set(tokens)
    while reserved_size + len(tokens) < target_size:
        pairs = count_pairs(split)
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        joined = best[0] + best[1]
        merges.append(best)
        if joined not in known:
            tokens.append(joined)
            known.add(joined)
        split = {(_merge_word(w, best, joined) if joined in "".join(w) else w): c
                 for w, c in split.items()}
    return Vocabulary(tokens, merges, reserved_size)

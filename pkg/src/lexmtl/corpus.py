"""Corpus ingestion, id-level datasets, batching and synthetic tasks."""

from __future__ import annotations

import hashlib
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import AlignmentError, ConfigError, DegenerateBatchError, ParseError
from .vocab import EOS, LABEL_BASE, PAD, Vocabulary, label_token

TASK_KINDS = ("translation", "summarization", "classification")
MAX_LABELS = 7


@dataclass
class IngestReport:
    source: str
    input_lines: int = 0
    kept: int = 0
    cleaned: int = 0
    quarantined: int = 0
    violations: list = field(default_factory=list)

    def balanced(self) -> bool:
        return self.kept + self.cleaned + self.quarantined == self.input_lines

    def as_dict(self) -> dict:
        return {"source": self.source, "input_lines": self.input_lines, "kept": self.kept,
                "cleaned": self.cleaned, "quarantined": self.quarantined}


def clean_line(line: str) -> str:
    return "".join(ch for ch in line if ch == "\t" or unicodedata.category(ch) != "Cc")


def _read_lines(path) -> list[str]:
    text = Path(path).read_bytes().decode("utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


# -- parallel corpora -------------------------------------------------------------

@dataclass
class ParallelCorpus:
    source: list[str]
    target: list[str]
    pair: str
    report: IngestReport

    def __len__(self) -> int:
        return len(self.source)


def read_moses_pair(src_path, tgt_path, pair_tag: str) -> ParallelCorpus:
    """Read two line-aligned Moses files; line ``i`` of each forms one pair."""
    src, tgt = _read_lines(src_path), _read_lines(tgt_path)
    if len(src) != len(tgt):
        raise AlignmentError(
            f"{src_path} has {len(src)} lines but {tgt_path} has {len(tgt)} "
            f"({len(src)}, {len(tgt)})")
    report = IngestReport(f"{src_path}|{tgt_path}", input_lines=len(src))
    out_src, out_tgt = [], []
    for lineno, (s, t) in enumerate(zip(src, tgt), start=1):
        cs, ct = clean_line(s), clean_line(t)
        if not cs.strip() or not ct.strip():
            report.quarantined += 1
            report.violations.append((lineno, "empty after cleaning"))
            continue
        if cs != s or ct != t:
            report.cleaned += 1
        else:
            report.kept += 1
        out_src.append(cs)
        out_tgt.append(ct)
    return ParallelCorpus(out_src, out_tgt, pair_tag, report)


def write_moses_pair(corpus: ParallelCorpus, src_path, tgt_path) -> None:
    Path(src_path).write_bytes(("".join(line + "\n" for line in corpus.source)).encode("utf-8"))
    Path(tgt_path).write_bytes(("".join(line + "\n" for line in corpus.target)).encode("utf-8"))


# -- summarisation -----------------------------------------------------------------

@dataclass
class SummarizationCorpus:
    pairs: list[tuple[str, str]]  # (body, title)
    report: IngestReport

    def __len__(self) -> int:
        return len(self.pairs)


def read_summarization(path) -> SummarizationCorpus:
    """Read ``body TAB title`` lines; titles must be non-empty and shorter than the body."""
    report = IngestReport(str(path))
    pairs = []
    for lineno, raw in enumerate(_read_lines(path), start=1):
        report.input_lines += 1
        parts = raw.split("\t")
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected 'body<TAB>title', got {len(parts)} fields")
        body, title = clean_line(parts[0]), clean_line(parts[1])
        if not title.strip() or len(title.split()) >= len(body.split()):
            report.quarantined += 1
            report.violations.append((lineno, "title empty or not shorter than body"))
            continue
        if (body, title) != tuple(parts):
            report.cleaned += 1
        else:
            report.kept += 1
        pairs.append((body, title))
    return SummarizationCorpus(pairs, report)


# -- multi-label documents -------------------------------------------------------------

@dataclass
class LabeledCorpus:
    docs: list[tuple[str, str, frozenset]]  # (doc id, text, class ids)
    classes: list[int]
    report: IngestReport

    def __len__(self) -> int:
        return len(self.docs)


def read_labeled(docs_path, labels_path) -> LabeledCorpus:
    """Join ``doc-id TAB text`` documents with ``doc-id TAB id id ...`` label lines.

    Label lists are sets. Documents with zero or more than seven labels are
    quarantined and reported, never dropped silently.
    """
    texts: dict[str, str] = {}
    for lineno, raw in enumerate(_read_lines(docs_path), start=1):
        doc_id, sep, text = raw.partition("\t")
        if not sep or not doc_id:
            raise ParseError(f"{docs_path}:{lineno}: expected 'doc-id<TAB>text'")
        texts[doc_id] = clean_line(text)
    report = IngestReport(f"{docs_path}|{labels_path}")
    docs = []
    classes: set[int] = set()
    for lineno, raw in enumerate(_read_lines(labels_path), start=1):
        report.input_lines += 1
        doc_id, sep, ids = raw.partition("\t")
        if not sep or not doc_id:
            raise ParseError(f"{labels_path}:{lineno}: expected 'doc-id<TAB>class ids'")
        try:
            labels = frozenset(int(tok) for tok in ids.split())
        except ValueError:
            raise ParseError(f"{labels_path}:{lineno}: non-integer class id in {ids!r}") from None
        if doc_id not in texts or not texts[doc_id].strip():
            raise ParseError(f"{labels_path}:{lineno}: document {doc_id!r} has no text")
        if not 1 <= len(labels) <= MAX_LABELS:
            report.quarantined += 1
            report.violations.append((lineno, f"{len(labels)} labels outside [1, {MAX_LABELS}]"))
            continue
        report.kept += 1
        classes |= labels
        docs.append((doc_id, texts[doc_id], labels))
    return LabeledCorpus(docs, sorted(classes), report)


# -- id-level datasets ----------------------------------------------------------------

@dataclass
class Sample:
    src: list[int]
    tgt: list[int]  # without end-of-sequence


@dataclass
class TaskDataset:
    name: str
    kind: str
    samples: list[Sample]

    def __len__(self) -> int:
        return len(self.samples)

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}; valid: {', '.join(TASK_KINDS)}")

    def subset(self, indices) -> "TaskDataset":
        return TaskDataset(self.name, self.kind, [self.samples[i] for i in indices])

    def save(self, path) -> None:
        lines = [" ".join(map(str, s.src)) + "\t" + " ".join(map(str, s.tgt)) for s in self.samples]
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    @classmethod
    def load(cls, path, name: str, kind: str) -> "TaskDataset":
        samples = []
        for lineno, raw in enumerate(_read_lines(path), start=1):
            src, sep, tgt = raw.partition("\t")
            if not sep:
                raise ParseError(f"{path}:{lineno}: expected 'src ids<TAB>tgt ids'")
            try:
                samples.append(Sample([int(t) for t in src.split()], [int(t) for t in tgt.split()]))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer token id") from None
        return cls(name, kind, samples)


def split_of(key: str) -> str:
    """90/5/5 train/valid/test assignment by a stable hash of the raw sample."""
    bucket = int(hashlib.sha1(key.encode("utf-8")).hexdigest(), 16) % 100
    if bucket < 90:
        return "train"
    return "valid" if bucket < 95 else "test"


def parallel_dataset(corpus: ParallelCorpus, vocab: Vocabulary, name: str) -> TaskDataset:
    return TaskDataset(name, "translation",
                       [Sample(vocab.encode(s), vocab.encode(t))
                        for s, t in zip(corpus.source, corpus.target)])


def summarization_dataset(corpus: SummarizationCorpus, vocab: Vocabulary, name: str) -> TaskDataset:
    return TaskDataset(name, "summarization",
                       [Sample(vocab.encode(body), vocab.encode(title))
                        for body, title in corpus.pairs])


def labeled_dataset(corpus: LabeledCorpus, vocab: Vocabulary, name: str) -> TaskDataset:
    vocab.register_classes(corpus.classes)
    return TaskDataset(name, "classification",
                       [Sample(vocab.encode(text), vocab.encode_labels(labels))
                        for _, text, labels in corpus.docs])


# -- batching ---------------------------------------------------------------------------

@dataclass
class Batch:
    src: np.ndarray       # [batch, src_len]
    tgt: np.ndarray       # [batch, tgt_len], end-of-sequence appended
    src_pad: np.ndarray   # True exactly at padded positions
    tgt_pad: np.ndarray
    indices: np.ndarray
    epoch: int = 0
    last_in_epoch: bool = False
    task_token: Optional[int] = None

    def __len__(self) -> int:
        return len(self.indices)


class Batcher:
    """Deterministic length-bucketed batches for one dataset.

    Each epoch is a fresh seeded permutation; windows of ``bucket_batches``
    batches are sorted by source length before slicing, full batches are
    shuffled and the single short remainder (if any) closes the epoch.
    """

    def __init__(self, dataset: TaskDataset, batch_size: int, max_len: int = 64,
                 seed=0, pad_id: int = PAD, eos_id: int = EOS, bucket_batches: int = 8):
        if batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
        if len(dataset) == 0:
            raise DegenerateBatchError(f"dataset {dataset.name!r} is empty")
        if max_len < 2:
            raise ConfigError(f"max_len must be >= 2, got {max_len}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.max_len = max_len
        self.seed = seed
        self.pad_id = pad_id
        self.eos_id = eos_id
        self.bucket_batches = bucket_batches
        self.truncated: set[int] = set()
        self._epoch_cache: dict[int, list[np.ndarray]] = {}

    @property
    def batches_per_epoch(self) -> int:
        return -(-len(self.dataset) // self.batch_size)

    def epoch_order(self, epoch: int) -> list[np.ndarray]:
        cached = self._epoch_cache.get(epoch)
        if cached is not None:
            return cached
        rng = np.random.default_rng([*np.atleast_1d(self.seed).tolist(), epoch])
        perm = rng.permutation(len(self.dataset))
        lengths = np.array([len(self.dataset.samples[i].src) for i in perm])
        window = self.batch_size * self.bucket_batches
        full, rest = [], []
        for start in range(0, len(perm), window):
            chunk = perm[start:start + window]
            chunk = chunk[np.argsort(lengths[start:start + window], kind="stable")]
            for b in range(0, len(chunk), self.batch_size):
                piece = chunk[b:b + self.batch_size]
                (full if len(piece) == self.batch_size else rest).append(piece)
        order = [full[i] for i in rng.permutation(len(full))] + rest
        self._epoch_cache = {epoch: order}
        return order

    def _collate(self, indices: np.ndarray) -> Batch:
        srcs, tgts = [], []
        for i in indices:
            s = self.dataset.samples[int(i)]
            src = list(s.src[:self.max_len])
            tgt = list(s.tgt[:self.max_len - 1]) + [self.eos_id]
            if len(s.src) > self.max_len or len(s.tgt) > self.max_len - 1:
                self.truncated.add(int(i))
            if not src:
                src = [self.eos_id]
            srcs.append(src)
            tgts.append(tgt)
        src_arr = _pad(srcs, self.pad_id)
        tgt_arr = _pad(tgts, self.pad_id)
        src_pad = np.ones(src_arr.shape, dtype=bool)
        tgt_pad = np.ones(tgt_arr.shape, dtype=bool)
        for r, (s, t) in enumerate(zip(srcs, tgts)):
            src_pad[r, :len(s)] = False
            tgt_pad[r, :len(t)] = False
        return Batch(src_arr, tgt_arr, src_pad, tgt_pad, np.asarray(indices))

    def batch_at(self, index: int) -> Batch:
        """The ``index``-th batch of the infinite epoch sequence."""
        epoch, within = divmod(index, self.batches_per_epoch)
        order = self.epoch_order(epoch)
        batch = self._collate(order[within])
        batch.epoch = epoch
        batch.last_in_epoch = within == len(order) - 1
        return batch

    def __iter__(self) -> Iterator[Batch]:
        index = 0
        while True:
            yield self.batch_at(index)
            index += 1


def _pad(seqs: Sequence[Sequence[int]], pad_id: int) -> np.ndarray:
    out = np.full((len(seqs), max(len(s) for s in seqs)), pad_id, dtype=np.int64)
    for r, s in enumerate(seqs):
        out[r, :len(s)] = s
    return out


def make_batches(dataset: TaskDataset, vocab: Optional[Vocabulary], batch_size: int,
                 max_len: int = 64, seed: int = 0, epochs: Optional[int] = 1) -> Iterator[Batch]:
    """Stream batches for ``epochs`` epochs (forever when ``None``).

    ``Batch.last_in_epoch`` marks each epoch boundary. ``vocab`` is accepted
    for symmetry with text pipelines; ids are already encoded.
    """
    batcher = Batcher(dataset, batch_size, max_len, seed)
    limit = None if epochs is None else epochs * batcher.batches_per_epoch
    for i, batch in enumerate(batcher):
        if limit is not None and i >= limit:
            return
        yield batch


# -- synthetic desk-scale tasks ------------------------------------------------------------

SYNTHETIC_KINDS = ("copy", "reverse", "token-sort", "keyword-label")


def gen_synthetic_task(kind: str, n_samples: int, vocab_slice: tuple[int, int], seed: int = 0,
                       min_len: int = 3, max_len: int = 8, n_keywords: int = 8,
                       max_labels: int = 3, name: Optional[str] = None) -> TaskDataset:
    """Deterministic toy tasks over token ids ``vocab_slice[0] <= id < vocab_slice[1]``.

    ``keyword-label`` reserves the first ``n_keywords`` ids of the slice as
    keywords; each document plants 1..``max_labels`` distinct keywords among
    filler ids and its label set is exactly the planted keyword indices.
    """
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    if kind not in SYNTHETIC_KINDS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; valid: {', '.join(SYNTHETIC_KINDS)}")
    lo, hi = vocab_slice
    rng = np.random.default_rng([seed, SYNTHETIC_KINDS.index(kind)])
    samples = []
    if kind == "keyword-label":
        if hi - lo <= n_keywords:
            raise ConfigError("vocab slice too small for keywords plus fillers")
        for _ in range(n_samples):
            length = int(rng.integers(min_len, max_len + 1))
            k = int(rng.integers(1, min(max_labels, length) + 1))
            keywords = rng.choice(n_keywords, size=k, replace=False)
            doc = rng.integers(lo + n_keywords, hi, size=length)
            slots = rng.choice(length, size=k, replace=False)
            doc[slots] = lo + keywords
            samples.append(Sample([int(t) for t in doc],
                                  sorted(label_token(int(i)) for i in keywords)))
        return TaskDataset(name or kind, "classification", samples)
    for _ in range(n_samples):
        length = int(rng.integers(min_len, max_len + 1))
        src = [int(t) for t in rng.integers(lo, hi, size=length)]
        if kind == "copy":
            tgt = list(src)
        elif kind == "reverse":
            tgt = src[::-1]
        else:
            tgt = sorted(src)
        samples.append(Sample(src, tgt))
    return TaskDataset(name or kind, "translation", samples)


def keyword_labels(doc: Sequence[int], vocab_slice: tuple[int, int], n_keywords: int = 8) -> set[int]:
    """Label indices recoverable by scanning ``doc`` for keyword ids."""
    lo = vocab_slice[0]
    return {t - lo for t in doc if lo <= t < lo + n_keywords}


def label_indices(tokens: Sequence[int]) -> set[int]:
    return {t - LABEL_BASE for t in tokens if t >= LABEL_BASE}

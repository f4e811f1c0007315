"""Task metrics: BLEU, ROUGE-N, ROUGE-L and micro-averaged precision/recall/F1.

All scores are fractions in [0, 1]. Inputs are token sequences; callers
whitespace-split detokenised text so subword segmentation never leaks into a
score.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import AlignmentError, UndefinedMetricError

MAX_ORDER = 4


def ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def tokenize(text: str) -> list[str]:
    return text.split()


@dataclass
class NGramStats:
    matches: list = field(default_factory=lambda: [0] * MAX_ORDER)
    totals: list = field(default_factory=lambda: [0] * MAX_ORDER)
    hyp_len: int = 0
    ref_len: int = 0

    def __iadd__(self, other: "NGramStats") -> "NGramStats":
        self.matches = [a + b for a, b in zip(self.matches, other.matches)]
        self.totals = [a + b for a, b in zip(self.totals, other.totals)]
        self.hyp_len += other.hyp_len
        self.ref_len += other.ref_len
        return self


def bleu_stats(hyp: Sequence, ref: Sequence) -> NGramStats:
    stats = NGramStats(hyp_len=len(hyp), ref_len=len(ref))
    for n in range(1, MAX_ORDER + 1):
        h, r = ngrams(hyp, n), ngrams(ref, n)
        stats.matches[n - 1] = sum(min(c, r[g]) for g, c in h.items())
        stats.totals[n - 1] = max(len(hyp) - n + 1, 0)
    return stats


def bleu_from_stats(stats: NGramStats, brevity: str = "literal") -> float:
    """Score pooled n-gram statistics.

    ``brevity="literal"`` multiplies by ``min(1, hyp_len / ref_len)``;
    ``"standard"`` uses ``exp(1 - ref_len / hyp_len)`` for short hypotheses.
    Orders with no hypothesis n-grams are left out of the geometric mean;
    zero-match orders above 1 get add-one smoothing.
    """
    if stats.ref_len == 0:
        raise UndefinedMetricError("BLEU is undefined for an empty reference")
    if stats.hyp_len == 0:
        return 0.0
    log_sum, orders = 0.0, 0
    for n in range(1, MAX_ORDER + 1):
        m, t = stats.matches[n - 1], stats.totals[n - 1]
        if t == 0:
            continue
        if m == 0:
            if n == 1:
                return 0.0
            m, t = m + 1, t + 1
        log_sum += math.log(m / t)
        orders += 1
    precision = math.exp(log_sum / orders)
    ratio = stats.hyp_len / stats.ref_len
    if brevity == "literal":
        factor = min(1.0, ratio)
    elif brevity == "standard":
        factor = 1.0 if ratio >= 1 else math.exp(1.0 - 1.0 / ratio)
    else:
        raise ValueError(f"unknown brevity mode {brevity!r}")
    return factor * precision


def bleu(hyp: Sequence, ref: Sequence, brevity: str = "literal") -> float:
    return bleu_from_stats(bleu_stats(hyp, ref), brevity)


def corpus_bleu(hyps: Sequence[Sequence], refs: Sequence[Sequence], brevity: str = "literal") -> float:
    if len(hyps) != len(refs):
        raise AlignmentError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    pooled = NGramStats()
    for h, r in zip(hyps, refs):
        pooled += bleu_stats(h, r)
    return bleu_from_stats(pooled, brevity)


def rouge_n(hyp: Sequence, refs, n: int) -> float:
    """Recall-oriented n-gram overlap summed over every reference summary."""
    if refs and not isinstance(refs[0], (list, tuple)):
        refs = [refs]
    hyp_grams = ngrams(hyp, n)
    matched = total = 0
    for ref in refs:
        ref_grams = ngrams(ref, n)
        total += sum(ref_grams.values())
        matched += sum(min(c, hyp_grams[g]) for g, c in ref_grams.items())
    if total == 0:
        raise UndefinedMetricError(f"ROUGE-{n} needs a reference with at least {n} tokens")
    return matched / total


def lcs_length(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hyp: Sequence, ref: Sequence) -> float:
    if not ref:
        raise UndefinedMetricError("ROUGE-L is undefined for an empty reference")
    lcs = lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(hyp), lcs / len(ref)
    return 2 * p * r / (p + r)


# -- classification -------------------------------------------------------------------

@dataclass
class LabelConfusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, predicted: Iterable, gold: Iterable) -> None:
        predicted, gold = set(predicted), set(gold)
        self.tp += len(predicted & gold)
        self.fp += len(predicted - gold)
        self.fn += len(gold - predicted)


def micro_confusion(predictions: Sequence[Iterable], references: Sequence[Iterable]) -> LabelConfusion:
    if len(predictions) != len(references):
        raise AlignmentError(f"{len(predictions)} predictions vs {len(references)} references")
    conf = LabelConfusion()
    for p, g in zip(predictions, references):
        conf.add(p, g)
    return conf


def f1_score(precision: float, recall: float, literal: bool = False) -> float:
    """Harmonic mean of precision and recall.

    ``literal=True`` drops the factor 2, which yields half the harmonic mean.
    """
    if precision + recall == 0:
        return 0.0
    scale = 1.0 if literal else 2.0
    return scale * precision * recall / (precision + recall)


def prf(conf: LabelConfusion, strict: bool = True, literal_f1: bool = False):
    """Precision, recall and F1 from pooled counts.

    With ``strict`` an undefined precision (no predicted labels) or recall
    (no gold labels) raises; otherwise it is reported as NaN and F1 is 0.
    """
    p = conf.tp / (conf.tp + conf.fp) if conf.tp + conf.fp else math.nan
    r = conf.tp / (conf.tp + conf.fn) if conf.tp + conf.fn else math.nan
    if strict and (math.isnan(p) or math.isnan(r)):
        which = "precision" if math.isnan(p) else "recall"
        raise UndefinedMetricError(f"{which} is undefined for {conf}")
    if math.isnan(p) or math.isnan(r):
        return p, r, 0.0
    return p, r, f1_score(p, r, literal_f1)


# -- reports ------------------------------------------------------------------------

@dataclass
class MetricReport:
    task: str
    dataset: str
    values: dict
    n_samples: int

    def rows(self) -> list[tuple]:
        return [(self.task, self.dataset, k, v, self.n_samples) for k, v in self.values.items()]


REPORT_COLUMNS = ("task", "dataset", "metric", "value", "n_samples")


def reports_to_csv(reports: Iterable[MetricReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for rep in reports:
        for task, dataset, metric, value, n in rep.rows():
            writer.writerow([task, dataset, metric, repr(float(value)), n])
    return buf.getvalue()


def summary_table(reports: Iterable[MetricReport]) -> str:
    rows = [(r.task, r.dataset, m, f"{v:.4f}", str(r.n_samples))
            for r in reports for m, v in r.values.items()]
    header = ("task", "dataset", "metric", "value", "n")
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines) + "\n"


def metric_names(kind: str) -> tuple[str, ...]:
    return {"translation": ("bleu",),
            "summarization": ("rouge_1", "rouge_2", "rouge_l"),
            "classification": ("precision", "recall", "f1")}[kind]


def evaluate_task(task, predictions: Sequence, references: Sequence, dataset: str = "",
                  brevity: str = "literal") -> MetricReport:
    """Score aligned predictions for ``task`` (a TaskSpec or a kind string).

    Translation uses pooled corpus BLEU, summarisation the per-sample mean of
    ROUGE-1/2/L (samples whose reference is too short for an order are
    skipped for that order) and classification micro-averaged P/R/F1.
    """
    kind = task if isinstance(task, str) else task.kind
    name = task if isinstance(task, str) else task.name
    if len(predictions) != len(references):
        raise AlignmentError(f"{len(predictions)} predictions vs {len(references)} references")
    if kind == "translation":
        values = {"bleu": corpus_bleu(predictions, references, brevity)}
    elif kind == "summarization":
        values = {}
        for key, fn in (("rouge_1", lambda h, r: rouge_n(h, r, 1)),
                        ("rouge_2", lambda h, r: rouge_n(h, r, 2)),
                        ("rouge_l", rouge_l)):
            scores = []
            for h, r in zip(predictions, references):
                try:
                    scores.append(fn(h, r))
                except UndefinedMetricError:
                    continue
            values[key] = sum(scores) / len(scores) if scores else math.nan
    elif kind == "classification":
        p, r, f = prf(micro_confusion(predictions, references), strict=False)
        values = {"precision": p, "recall": r, "f1": f}
    else:
        raise ValueError(f"unknown task kind {kind!r}")
    return MetricReport(name, dataset, values, len(predictions))


def token_accuracy(hyps: Sequence[Sequence], refs: Sequence[Sequence],
                   eos: Optional[object] = None) -> float:
    """Position-wise exact match over reference tokens (plus a closing ``eos`` when given)."""
    hit = total = 0
    for h, r in zip(hyps, refs):
        h, r = list(h), list(r)
        if eos is not None:
            h, r = h + [eos], r + [eos]
        total += len(r)
        hit += sum(1 for i, t in enumerate(r) if i < len(h) and h[i] == t)
    return hit / total if total else math.nan

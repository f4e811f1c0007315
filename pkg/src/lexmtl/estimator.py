"""scikit-learn style wrapper around the model and the round-robin trainer."""

from __future__ import annotations

from typing import Mapping, Optional

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import Sample, TaskDataset
from .metrics import evaluate_task
from .model import MultiModel, TaskRegistry, preset
from .trainer import PRIMARY_METRIC, JointConfig, TaskSpec, Trainer, predict_dataset
from .validation import (check_consistent_length, check_kind, check_label_sets,
                         check_token_sequences)
from .vocab import LABEL_BASE


class MultiModelEstimator(BaseEstimator):
    """Sequence-to-sequence estimator over token-id sequences.

    ``fit(X, y)`` trains the main task; ``auxiliary_tasks`` maps extra task
    names to ``(X, y, kind)`` triples trained jointly in round-robin order
    after the main task. For ``kind="classification"`` each ``y`` entry is an
    iterable of class ids and ``predict`` returns sets of class ids.
    """

    def __init__(self, preset: str = "MM-desk", kind: str = "translation", steps: int = 1000,
                 batch_size: int = 16, lr: float = 3e-4, warmup: int = 100, max_len: int = 64,
                 seed: int = 0, hidden_size: Optional[int] = None, clip_norm: Optional[float] = None):
        self.preset = preset
        self.kind = kind
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.warmup = warmup
        self.max_len = max_len
        self.seed = seed
        self.hidden_size = hidden_size
        self.clip_norm = clip_norm

    def _config(self):
        overrides = {}
        if self.hidden_size is not None:
            heads = preset(self.preset).heads
            while self.hidden_size % heads:
                heads //= 2
            overrides = {"hidden_size": self.hidden_size, "filter_size": 2 * self.hidden_size,
                         "heads": heads}
        return preset(self.preset, **overrides)

    def _dataset(self, name, X, y, kind, cfg) -> TaskDataset:
        check_kind(kind)
        X = check_token_sequences(X, cfg.vocab_size, cfg.reserved_size)
        check_consistent_length(X, y)
        if kind == "classification":
            sets = check_label_sets(y)
            classes = self.classes_.setdefault(name, sorted(set().union(*sets)))
            index = {c: i for i, c in enumerate(classes)}
            if len(classes) > cfg.reserved_size - LABEL_BASE:
                raise ValueError(f"{len(classes)} classes exceed the label slots")
            tgts = [sorted(LABEL_BASE + index[c] for c in s) for s in sets]
        else:
            tgts = check_token_sequences(y, cfg.vocab_size, cfg.reserved_size, "y")
        return TaskDataset(name, kind, [Sample(s, t) for s, t in zip(X, tgts)])

    def fit(self, X, y, auxiliary_tasks: Optional[Mapping[str, tuple]] = None):
        cfg = self._config()
        self.classes_ = {}
        registry = TaskRegistry()
        specs = [TaskSpec("main", self.kind, self._dataset("main", X, y, self.kind, cfg),
                          registry.register("main"))]
        for name, (Xa, ya, kind) in (auxiliary_tasks or {}).items():
            specs.append(TaskSpec(name, kind, self._dataset(name, Xa, ya, kind, cfg),
                                  registry.register(name)))
        self.model_ = MultiModel(cfg, registry, seed=self.seed)
        joint = JointConfig("custom:" + ",".join(s.name for s in specs), specs,
                            batch_size=self.batch_size, steps=self.steps, max_len=self.max_len)
        self.trainer_ = Trainer(self.model_, joint, lr=self.lr, warmup=self.warmup,
                                seed=self.seed, clip_norm=self.clip_norm)
        self.trainer_.fit(self.steps)
        self.tasks_ = {s.name: s for s in specs}
        self.loss_curve_ = [row["main"] for row in self.trainer_.state.loss_history]
        return self

    def predict(self, X, task: str = "main"):
        check_is_fitted(self, "model_")
        spec = self.tasks_[task]
        cfg = self.model_.cfg
        X = check_token_sequences(X, cfg.vocab_size, cfg.reserved_size)
        data = TaskDataset(task, spec.kind, [Sample(s, []) for s in X])
        preds = predict_dataset(self.model_, spec, data, self.max_len)
        if spec.kind == "classification":
            classes = self.classes_[task]
            return [{classes[i] for i in p if i < len(classes)} for p in preds]
        return preds

    def score(self, X, y, task: str = "main") -> float:
        """The task's primary metric: BLEU, ROUGE-L or micro F1."""
        spec = self.tasks_[task]
        preds = self.predict(X, task)
        refs = check_label_sets(y) if spec.kind == "classification" else [list(t) for t in y]
        report = evaluate_task(spec, preds, refs)
        return float(report.values[PRIMARY_METRIC[spec.kind]])

"""Joint multi-task training: task combinations, round-robin steps, Adam, early stopping."""

from __future__ import annotations

import logging
import math
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import tensor as T
from .corpus import Batcher, TaskDataset, label_indices
from .errors import ConfigError, LexMTLError
from .metrics import MetricReport, evaluate_task, metric_names
from .model import MultiModel, TaskToken
from .tensor import Tensor
from .vocab import Vocabulary

logger = logging.getLogger(__name__)

LANGUAGES = ("cs", "de", "en", "es", "fr", "it", "sv")
POOL_PAIRS = ("de-en", "de-es", "de-fr", "de-it", "de-sv")
CHAIN_PAIRS = ("cs-de", "de-en", "en-es", "es-fr", "fr-it", "it-sv")
COMBINATIONS = ("jt-pool-5", "jt-chain-7", "js-7", "jl-7", "ja-3")
PRIMARY_METRIC = {"translation": "bleu", "summarization": "rouge_l", "classification": "f1"}


class BatchError(LexMTLError):
    pass


def _pairs(pairs: Sequence[str], both_directions: bool) -> list[str]:
    out = []
    for pair in pairs:
        out.append(f"translate:{pair}")
        if both_directions:
            a, b = pair.split("-")
            out.append(f"translate:{b}-{a}")
    return out


def combination_members(name: str, source: str = "de", both_directions: bool = False) -> list[str]:
    """Task names making up a named combination, in training order.

    ``single:<task>`` trains one task and ``custom:<a>,<b>,...`` an explicit list.
    """
    if name == "jt-pool-5":
        return _pairs(POOL_PAIRS, both_directions)
    if name == "jt-chain-7":
        return _pairs(CHAIN_PAIRS, both_directions)
    if name == "js-7":
        return [f"summarize:{lang}" for lang in LANGUAGES]
    if name == "jl-7":
        return [f"classify:{lang}" for lang in LANGUAGES]
    if name == "ja-3":
        target = "en" if source != "en" else "de"
        return [f"translate:{source}-{target}", f"summarize:{source}", f"classify:{source}"]
    if name.startswith("single:") and len(name) > len("single:"):
        return [name[len("single:"):]]
    if name.startswith("custom:") and len(name) > len("custom:"):
        return [t for t in name[len("custom:"):].split(",") if t]
    raise ConfigError(
        f"unknown combination {name!r}; valid: {', '.join(COMBINATIONS)}, single:<task>, "
        f"custom:<task>,<task>,...")


@dataclass
class TaskSpec:
    name: str
    kind: str
    dataset: TaskDataset
    token: TaskToken
    eval_data: Optional[TaskDataset] = None

    @property
    def metrics(self) -> tuple[str, ...]:
        return metric_names(self.kind)


@dataclass
class JointConfig:
    name: str
    tasks: list[TaskSpec]
    batch_size: int = 16
    steps: int = 1000
    patience: int = 5
    max_len: int = 64

    def __post_init__(self):
        if not self.tasks:
            raise ConfigError(f"combination {self.name!r} has no member tasks")
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate task names in {self.name!r}: {names}")

    @property
    def task_names(self) -> list[str]:
        return [t.name for t in self.tasks]


def build_joint_config(name: str, registry: Mapping[str, TaskSpec], source: str = "de",
                       both_directions: bool = False, **kwargs) -> JointConfig:
    members = combination_members(name, source, both_directions)
    missing = [m for m in members if m not in registry]
    if missing:
        raise ConfigError(f"combination {name!r} needs unregistered tasks: {', '.join(missing)}")
    return JointConfig(name, [registry[m] for m in members], **kwargs)


# -- optimisation ------------------------------------------------------------------

class Adam:
    """Adam with bias correction and linear learning-rate warmup."""

    def __init__(self, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 warmup: int = 100, clip_norm: Optional[float] = None):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.warmup = warmup
        self.clip_norm = clip_norm
        self.t = 0
        self.nonfinite = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def lr_at(self, t: int) -> float:
        if self.warmup <= 0:
            return self.lr
        return self.lr * min(1.0, t / self.warmup)

    def step(self, params: Mapping[str, Tensor]) -> bool:
        """Apply one update from ``param.grad``; returns False when rejected."""
        grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for name, p in params.items()}
        return adam_update(self, params, grads)


def adam_update(opt: Adam, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
                lr: Optional[float] = None) -> bool:
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ConfigError(f"gradient for {name!r} has shape {g.shape}, "
                              f"parameter has {params[name].shape}")
        if not np.all(np.isfinite(g)):
            opt.nonfinite += 1
            logger.warning("non-finite gradient in %s; update skipped", name)
            return False
    scale = 1.0
    if opt.clip_norm is not None:
        norm = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
        if norm > opt.clip_norm:
            scale = opt.clip_norm / norm
    opt.t += 1
    step_lr = opt.lr_at(opt.t) if lr is None else lr
    c1 = 1.0 - opt.beta1 ** opt.t
    c2 = 1.0 - opt.beta2 ** opt.t
    for name, g in grads.items():
        p = params[name]
        if scale != 1.0:
            g = g * scale
        if name not in opt.m:
            opt.m[name] = np.zeros_like(p.data)
            opt.v[name] = np.zeros_like(p.data)
        m, v = opt.m[name], opt.v[name]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        update = step_lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
        p.data -= update.astype(p.dtype)
    return True


def early_stop_check(history: Sequence[float], patience: int, min_delta: float = 1e-4,
                     mode: str = "max") -> bool:
    """True once the metric has failed to improve for ``patience`` evaluations in a row."""
    if patience < 1:
        raise ConfigError(f"patience must be >= 1, got {patience}")
    sign = 1.0 if mode == "max" else -1.0
    best = None
    stale = 0
    for value in history:
        score = sign * value
        if best is None or score > best + min_delta:
            best = score
            stale = 0
        else:
            stale += 1
    return stale >= patience


# -- evaluation ----------------------------------------------------------------------

def predict_dataset(model: MultiModel, task: TaskSpec, dataset: TaskDataset,
                    max_len: int = 64, chunk: int = 64):
    srcs = [s.src[:max_len] or [1] for s in dataset.samples]
    out = []
    for start in range(0, len(srcs), chunk):
        part = srcs[start:start + chunk]
        if task.kind == "classification":
            out.extend(model.decode_labels(part, task.token))
        else:
            out.extend(model.greedy_decode(part, task.token, max_len=max_len))
    return out


def evaluate_dataset(model: MultiModel, task: TaskSpec, dataset: Optional[TaskDataset] = None,
                     vocab: Optional[Vocabulary] = None, max_len: int = 64,
                     dataset_tag: str = "") -> MetricReport:
    """Decode ``dataset`` (default: the task's held-out data) and score it."""
    dataset = dataset if dataset is not None else (task.eval_data or task.dataset)
    preds = predict_dataset(model, task, dataset, max_len)
    if task.kind == "classification":
        refs = [label_indices(s.tgt) for s in dataset.samples]
    elif vocab is not None:
        preds = [vocab.decode(p).split() for p in preds]
        refs = [vocab.decode(s.tgt).split() for s in dataset.samples]
    else:
        refs = [list(s.tgt) for s in dataset.samples]
    return evaluate_task(task, preds, refs, dataset=dataset_tag)


# -- the trainer ----------------------------------------------------------------------

def _task_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


@dataclass
class TrainState:
    step: int = 0
    updates: Counter = field(default_factory=Counter)
    loss_history: list = field(default_factory=list)
    metric_history: list = field(default_factory=list)


class Trainer:
    """Sequential round-robin trainer: each step trains every member task once, in order.

    Batches and gate noise are pure functions of ``(seed, step, task name)``,
    so a run restored from a checkpoint continues exactly where it stopped.
    """

    def __init__(self, model: MultiModel, joint: JointConfig, lr: float = 3e-4,
                 warmup: int = 100, seed: int = 0, clip_norm: Optional[float] = None,
                 optimizer: Optional[Adam] = None):
        self.model = model
        self.joint = joint
        self.seed = seed
        self.opt = optimizer or Adam(lr=lr, warmup=warmup, clip_norm=clip_norm)
        self.state = TrainState()
        self.batchers = {t.name: Batcher(t.dataset, joint.batch_size, joint.max_len,
                                         seed=[seed, _task_key(t.name)])
                         for t in joint.tasks}

    @property
    def step(self) -> int:
        return self.state.step

    def batch_for(self, task: TaskSpec, step: int):
        try:
            return self.batchers[task.name].batch_at(step)
        except Exception as exc:
            raise BatchError(f"task {task.name!r}: batch construction failed: {exc}") from exc

    def train_step(self) -> dict[str, float]:
        losses = {}
        for task in self.joint.tasks:
            batch = self.batch_for(task, self.state.step)
            rng = np.random.default_rng([self.seed, self.state.step, _task_key(task.name)])
            self.model.zero_grad()
            loss, ce = self.model.loss(batch.src, batch.tgt, task.token, train=True, rng=rng)
            T.backward(loss)
            self.opt.step(self.model.params)
            losses[task.name] = ce
            self.state.updates[task.name] += 1
        self.state.step += 1
        self.state.loss_history.append(losses)
        return losses

    def evaluate(self, vocab: Optional[Vocabulary] = None) -> dict[str, MetricReport]:
        return {t.name: evaluate_dataset(self.model, t, vocab=vocab, max_len=self.joint.max_len)
                for t in self.joint.tasks}

    def fit(self, steps: Optional[int] = None, eval_every: Optional[int] = None,
            patience: Optional[int] = None, vocab: Optional[Vocabulary] = None,
            on_eval: Optional[Callable[["Trainer", dict], None]] = None) -> TrainState:
        """Run until ``steps`` total steps or early stopping on the mean primary metric."""
        steps = self.joint.steps if steps is None else steps
        patience = self.joint.patience if patience is None else patience
        scores: list[float] = []
        while self.state.step < steps:
            losses = self.train_step()
            logger.debug("step %d losses %s", self.state.step, losses)
            if eval_every and self.state.step % eval_every == 0:
                reports = self.evaluate(vocab)
                primary = [r.values[PRIMARY_METRIC[t.kind]]
                           for t, r in zip(self.joint.tasks, reports.values())]
                primary = [0.0 if math.isnan(v) else v for v in primary]
                score = float(np.mean(primary))
                scores.append(score)
                self.state.metric_history.append(
                    {"step": self.state.step, "score": score,
                     **{f"{n}.{k}": v for n, r in reports.items() for k, v in r.values.items()}})
                if on_eval is not None:
                    on_eval(self, reports)
                if early_stop_check(scores, patience):
                    logger.info("early stop at step %d", self.state.step)
                    break
        return self.state

"""Command line entry point: ``lexmtl preprocess|train|evaluate|decode|report``.

Every subcommand reads an optional flat ``key = value`` config file
(``--config``); command-line flags override file values. Outputs are staged in
a scratch directory and moved into ``--out`` only on success, and the
resolved config is archived beside them as ``run.config``.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import checkpoint as ckpt_io
from .baselines import SYSTEMS, published_lookup
from .corpus import (TaskDataset, gen_synthetic_task, labeled_dataset,
                     parallel_dataset, read_labeled, read_moses_pair, read_summarization,
                     split_of, summarization_dataset)
from .errors import ConfigError, EmptyInputError, LexMTLError, MergeError
from .metrics import (MetricReport, REPORT_COLUMNS, evaluate_task, reports_to_csv,
                      summary_table, token_accuracy)
from .model import ModelConfig, MultiModel, TaskRegistry, preset
from .trainer import (JointConfig, PRIMARY_METRIC, TaskSpec, Trainer, combination_members,
                      early_stop_check, evaluate_dataset, predict_dataset)
from .vocab import EOS, Vocabulary, build_subword_vocab

logger = logging.getLogger("lexmtl")

SPLITS = ("train", "valid", "test")
TOY_SLICE = (64, 128)
# name -> (generator kind, samples); memorisation tasks evaluate on their training set
TOY_TASKS = {
    "copy-toy": ("copy", 32),
    "reverse-toy": ("reverse", 32),
    "sort-toy": ("token-sort", 32),
    "keyword-toy": ("keyword-label", 64),
}


# -- config -----------------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        values[key.strip()] = value.strip()
    return values


def format_config(values: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in sorted(values.items()) if v is not None)


@dataclass
class RunConfig:
    preset: str = "MM-desk"
    joint: str = ""
    data: Optional[str] = None
    seed: int = 0
    steps: int = 1000
    eval_every: int = 0
    patience: int = 5
    batch_size: int = 16
    lr: float = 3e-4
    warmup: int = 100
    max_len: int = 64
    out: str = "run"
    resume: Optional[str] = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        kwargs, extra = {}, {}
        types = {f: type(getattr(cls(), f)) for f in
                 ("preset", "joint", "seed", "steps", "eval_every", "patience", "batch_size",
                  "lr", "warmup", "max_len", "out")}
        for key, value in values.items():
            key = key.replace("-", "_")
            if value is None:
                continue
            if key in types:
                try:
                    kwargs[key] = types[key](value)
                except ValueError:
                    raise ConfigError(f"config key {key!r}: cannot parse {value!r}") from None
            elif key in ("data", "resume"):
                kwargs[key] = str(value)
            else:
                extra[key] = value
        run = cls(**kwargs, extra=extra)
        run.validate()
        return run

    def validate(self) -> None:
        for key in ("data", "resume"):
            path = getattr(self, key)
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{key} path {path!r} does not exist")

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in
               ("preset", "joint", "data", "seed", "steps", "eval_every", "patience",
                "batch_size", "lr", "warmup", "max_len", "out", "resume")}
        out.update(self.extra)
        return out


def _merged(args, keys) -> dict:
    values = read_config(args.config) if getattr(args, "config", None) else {}
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            values[key] = value
    return values


@contextlib.contextmanager
def staged_output(out_dir):
    """Yield a scratch directory whose files move into ``out_dir`` only on success."""
    out_dir = Path(out_dir)
    parent = out_dir.parent if str(out_dir.parent) else Path(".")
    parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".stage-", dir=parent))
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    out_dir.mkdir(parents=True, exist_ok=True)
    for root, _, files in os.walk(stage):
        rel = Path(root).relative_to(stage)
        (out_dir / rel).mkdir(parents=True, exist_ok=True)
        for name in files:
            os.replace(Path(root) / name, out_dir / rel / name)
    shutil.rmtree(stage, ignore_errors=True)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(text.encode("utf-8"))


def _publish(path: Path, text: str) -> None:
    ckpt_io.atomic_write(path, text.encode("utf-8"))


def _file_key(task: str) -> str:
    return task.replace(":", "_").replace("/", "_")


# -- data directories ---------------------------------------------------------------

@dataclass
class DataDir:
    vocab: Optional[Vocabulary]
    tasks: dict  # name -> (kind, {split: TaskDataset})

    @property
    def vocab_hash(self) -> bytes:
        if self.vocab is None:
            return ckpt_io.ids_only_vocab_hash()
        return self.vocab.hash()


def load_data(path) -> DataDir:
    path = Path(path)
    vocab = Vocabulary.load(path / "vocab.txt") if (path / "vocab.txt").exists() else None
    tasks = {}
    manifest = path / "tasks.tsv"
    if not manifest.exists():
        raise ConfigError(f"{path} is not a preprocessed data directory (no tasks.tsv)")
    for line in manifest.read_text(encoding="utf-8").splitlines()[1:]:
        name, kind = line.split("\t")[:2]
        tasks[name] = (kind, {s: TaskDataset.load(path / "data" / f"{_file_key(name)}.{s}.ids",
                                                  name, kind) for s in SPLITS})
    return DataDir(vocab, tasks)


def toy_task(name: str, seed: int = 0) -> TaskDataset:
    kind, n = TOY_TASKS[name]
    return gen_synthetic_task(kind, n, TOY_SLICE, seed=seed, name=name)


def task_splits(name: str, data: Optional[DataDir]) -> tuple[str, dict]:
    if data is not None and name in data.tasks:
        return data.tasks[name]
    if name in TOY_TASKS:
        ds = toy_task(name)
        return ds.kind, {s: ds for s in SPLITS}
    raise ConfigError(f"task {name!r} is neither in the data directory nor a built-in toy "
                      f"({', '.join(TOY_TASKS)})")


# -- preprocess -------------------------------------------------------------------------

def cmd_preprocess(values: dict) -> int:
    out = Path(values.get("out", "data"))
    vocab_size = int(values.get("vocab_size", 512))
    reserved = int(values.get("reserved_size", 64))
    reports, text_tasks, synthetic = [], [], []
    for key in sorted(values):
        group, _, tag = key.partition(".")
        if not tag:
            continue
        paths = values[key].split()
        if group == "translation":
            if len(paths) != 2:
                raise ConfigError(f"{key}: expected 'src_path tgt_path'")
            corpus = read_moses_pair(paths[0], paths[1], tag)
            reports.append(corpus.report)
            text_tasks.append((f"translate:{tag}", "translation", corpus))
        elif group == "summarization":
            corpus = read_summarization(paths[0])
            reports.append(corpus.report)
            text_tasks.append((f"summarize:{tag}", "summarization", corpus))
        elif group == "classification":
            if len(paths) != 2:
                raise ConfigError(f"{key}: expected 'docs_path labels_path'")
            corpus = read_labeled(paths[0], paths[1])
            reports.append(corpus.report)
            text_tasks.append((f"classify:{tag}", "classification", corpus))
        elif group == "synthetic":
            synthetic.append((tag, paths))
        else:
            raise ConfigError(f"unknown config group {group!r} in key {key!r}")

    vocab = None
    if text_tasks:
        lines = []
        for _, kind, corpus in text_tasks:
            if kind == "translation":
                lines += corpus.source + corpus.target
            elif kind == "summarization":
                lines += [b for b, _ in corpus.pairs] + [t for _, t in corpus.pairs]
            else:
                lines += [text for _, text, _ in corpus.docs]
        vocab = build_subword_vocab([lines], vocab_size, reserved)

    with staged_output(out) as stage:
        manifest = ["task\tkind\ttrain\tvalid\ttest"]
        for name, kind, corpus in text_tasks:
            if kind == "translation":
                ds = parallel_dataset(corpus, vocab, name)
                keys = [s + "\t" + t for s, t in zip(corpus.source, corpus.target)]
            elif kind == "summarization":
                ds = summarization_dataset(corpus, vocab, name)
                keys = [b + "\t" + t for b, t in corpus.pairs]
            else:
                ds = labeled_dataset(corpus, vocab, name)
                keys = [doc_id + "\t" + text for doc_id, text, _ in corpus.docs]
            parts = {s: [i for i, k in enumerate(keys) if split_of(k) == s] for s in SPLITS}
            manifest.append(_write_splits(stage, name, kind,
                                          {s: ds.subset(idx) for s, idx in parts.items()}))
        for tag, spec in synthetic:
            kind = spec[0]
            n = int(spec[1]) if len(spec) > 1 else 32
            seed = int(spec[2]) if len(spec) > 2 else 0
            ds = gen_synthetic_task(kind, n, TOY_SLICE, seed=seed, name=tag)
            if len(spec) > 3 and spec[3] == "split":
                keys = [" ".join(map(str, s.src)) for s in ds.samples]
                parts = {s: ds.subset([i for i, k in enumerate(keys) if split_of(k) == s])
                         for s in SPLITS}
            else:
                parts = {s: ds for s in SPLITS}
            manifest.append(_write_splits(stage, tag, ds.kind, parts))
        if vocab is not None:
            vocab.save(stage / "vocab.txt")
        _write(stage / "tasks.tsv", "\n".join(manifest) + "\n")
        rows = ["source\tinput_lines\tkept\tcleaned\tquarantined"]
        rows += [f"{r.source}\t{r.input_lines}\t{r.kept}\t{r.cleaned}\t{r.quarantined}"
                 for r in reports]
        _write(stage / "ingest_report.tsv", "\n".join(rows) + "\n")
        _write(stage / "run.config", format_config(values))
    for r in reports:
        print(f"{r.source}: input={r.input_lines} kept={r.kept} cleaned={r.cleaned} "
              f"quarantined={r.quarantined}")
    return 0


def _write_splits(stage: Path, name: str, kind: str, parts: dict) -> str:
    for split, ds in parts.items():
        path = stage / "data" / f"{_file_key(name)}.{split}.ids"
        path.parent.mkdir(parents=True, exist_ok=True)
        ds.save(path)
    return "\t".join([name, kind] + [str(len(parts[s])) for s in SPLITS])


# -- train ---------------------------------------------------------------------------------

def model_from_checkpoint(ckpt: ckpt_io.Checkpoint) -> MultiModel:
    cfg = ModelConfig(**ckpt.config["model"])
    model = MultiModel(cfg, TaskRegistry.from_dict(ckpt.config["tasks"]))
    model.load_state_dict(ckpt.params)
    return model


def _sequence_report(model, spec, ds, vocab, max_len, tag) -> MetricReport:
    report = evaluate_dataset(model, spec, ds, vocab=vocab, max_len=max_len, dataset_tag=tag)
    if spec.kind != "classification":
        preds = predict_dataset(model, spec, ds, max_len)
        report.values["token_accuracy"] = token_accuracy(preds, [s.tgt for s in ds.samples],
                                                         eos=EOS)
    return report


def cmd_train(values: dict) -> int:
    run = RunConfig.from_mapping(values)
    if not run.joint:
        raise ConfigError("train needs a combination name (--joint)")
    members = combination_members(run.joint, run.extra.get("source", "de"),
                                  run.extra.get("both_directions", "false") == "true")
    data = load_data(run.data) if run.data else None
    splits = {name: task_splits(name, data) for name in members}
    vocab = data.vocab if data else None
    vocab_hash = data.vocab_hash if data else ckpt_io.ids_only_vocab_hash()

    resumed = None
    if run.resume:
        resumed = ckpt_io.load_checkpoint(run.resume, expected_vocab_hash=vocab_hash)
        cfg = ModelConfig(**resumed.config["model"])
        registry = TaskRegistry.from_dict(resumed.config["tasks"])
    else:
        cfg = preset(run.preset)
        if vocab is not None:
            # the output layer spans exactly the ids the data can contain
            top = max((max(s.src + s.tgt, default=0) for _, parts in splits.values()
                       for s in parts["train"].samples), default=0)
            cfg = cfg.with_vocab(max(len(vocab), top + 1))
        registry = TaskRegistry()
        for name in members:
            registry.register(name)
    specs, eval_tags = [], {}
    for name, (kind, parts) in splits.items():
        held_out = "valid" if len(parts["valid"]) else "train"
        if held_out == "train":
            logger.warning("task %s has an empty valid split; validating on train", name)
        eval_tags[name] = held_out
        specs.append(TaskSpec(name, kind, parts["train"], registry.resolve(name),
                              eval_data=parts[held_out]))
    joint = JointConfig(run.joint, specs, batch_size=run.batch_size, steps=run.steps,
                        patience=run.patience, max_len=run.max_len)
    model = MultiModel(cfg, registry, seed=run.seed)
    trainer = Trainer(model, joint, lr=run.lr, warmup=run.warmup, seed=run.seed)
    if resumed is not None:
        ckpt_io.restore(trainer, resumed)
    extra = {"joint": run.joint, "data": run.data,
             "task_kinds": {s.name: s.kind for s in specs}}

    # checkpoints must survive an interrupted run, so training publishes each
    # file atomically into the output directory instead of staging them
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    _publish(out / "run.config", format_config(run.as_dict()))
    ckpt_path = out / "checkpoint.mmlg"
    loss_rows = ["step,task,loss"]
    scores: list[float] = []
    first_step = trainer.step
    while trainer.step < run.steps:
        losses = trainer.train_step()
        loss_rows += [f"{trainer.step},{name},{value!r}" for name, value in losses.items()]
        logger.info("step %d losses %s", trainer.step, losses)
        if run.eval_every and trainer.step % run.eval_every == 0:
            reports = [evaluate_dataset(model, s, vocab=vocab, max_len=run.max_len,
                                        dataset_tag=eval_tags[s.name]) for s in specs]
            score = float(np.mean([np.nan_to_num(r.values[PRIMARY_METRIC[s.kind]])
                                   for s, r in zip(specs, reports)]))
            scores.append(score)
            trainer.state.metric_history.append({"step": trainer.step, "score": score})
            ckpt_io.save_checkpoint(ckpt_path, ckpt_io.capture(trainer, vocab_hash, extra))
            _publish(out / "losses.csv", "\n".join(loss_rows) + "\n")
            logger.info("step %d validation score %.4f", trainer.step, score)
            if early_stop_check(scores, run.patience):
                print(f"early stop at step {trainer.step}")
                break
    ckpt_io.save_checkpoint(ckpt_path, ckpt_io.capture(trainer, vocab_hash, extra))
    if trainer.step == first_step:
        return 0
    final = [_sequence_report(model, s, s.eval_data, vocab, run.max_len, eval_tags[s.name])
             for s in specs]
    _publish(out / "losses.csv", "\n".join(loss_rows) + "\n")
    _publish(out / "metrics.csv", reports_to_csv(final))
    _publish(out / "summary.txt", f"# seed={run.seed} steps={trainer.step}\n" + summary_table(final))
    print(summary_table(final), end="")
    return 0


# -- evaluate ------------------------------------------------------------------------

def _read_tokens(path, kind: str) -> list:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if kind == "classification":
        return [{int(t) for t in line.split()} for line in lines]
    return [line.split() for line in lines]


def cmd_evaluate(values: dict) -> int:
    out = Path(values.get("out", "eval"))
    if values.get("hyp") or values.get("ref"):
        kind = values.get("kind", "translation")
        hyps, refs = _read_tokens(values["hyp"], kind), _read_tokens(values["ref"], kind)
        reports = [evaluate_task(values.get("task", kind), hyps, refs,
                                 dataset=values.get("dataset", Path(values["ref"]).stem))]
        if kind == "translation":
            from .metrics import bleu
            per_line = [bleu(h, r) for h, r in zip(hyps, refs) if r]
            reports[0].values["min_sentence_bleu"] = min(per_line) if per_line else float("nan")
    else:
        path = values.get("checkpoint")
        if not path or not Path(path).exists():
            raise ConfigError(f"checkpoint {path!r} not found")
        data = load_data(values["data"]) if values.get("data") else None
        expected = data.vocab_hash if data else ckpt_io.ids_only_vocab_hash()
        ckpt = ckpt_io.load_checkpoint(path, expected_vocab_hash=expected)
        model = model_from_checkpoint(ckpt)
        kinds = ckpt.config.get("task_kinds", {})
        names = [values["task"]] if values.get("task") else list(kinds)
        split = values.get("split", "test")
        max_len = int(values.get("max_len", 64))
        reports = []
        for name in names:
            kind, parts = task_splits(name, data)
            spec = TaskSpec(name, kind, parts["train"], model.registry.resolve(name))
            if not len(parts[split]):
                if values.get("task"):
                    raise EmptyInputError(f"task {name!r} has no {split} samples")
                logger.warning("skipping %s: no %s samples", name, split)
                continue
            reports.append(_sequence_report(model, spec, parts[split],
                                            data.vocab if data else None, max_len, split))
    if not reports:
        raise EmptyInputError(f"no task has {split} samples")
    with staged_output(out) as stage:
        _write(stage / "metrics.csv", reports_to_csv(reports))
        _write(stage / "summary.txt", summary_table(reports))
        _write(stage / "run.config", format_config(values))
    print(summary_table(reports), end="")
    return 0


# -- decode --------------------------------------------------------------------------

def cmd_decode(values: dict) -> int:
    path = values.get("checkpoint")
    if not path or not Path(path).exists():
        raise ConfigError(f"checkpoint {path!r} not found")
    if not values.get("input") or not values.get("out"):
        raise ConfigError("decode needs --input and --out")
    data = load_data(values["data"]) if values.get("data") else None
    expected = data.vocab_hash if data else ckpt_io.ids_only_vocab_hash()
    ckpt = ckpt_io.load_checkpoint(path, expected_vocab_hash=expected)
    model = model_from_checkpoint(ckpt)
    task = values.get("task", "")
    token = model.registry.resolve(task)
    kind = ckpt.config.get("task_kinds", {}).get(task, "translation")
    vocab = data.vocab if data else None
    max_len = int(values.get("max_len", 64))
    lines = Path(values["input"]).read_text(encoding="utf-8").splitlines()
    srcs = [vocab.encode(line) if vocab else [int(t) for t in line.split()] for line in lines]
    srcs = [s[:max_len] or [EOS] for s in srcs]
    outputs = []
    for start in range(0, len(srcs), 64):
        part = srcs[start:start + 64]
        if kind == "classification":
            for labels in model.decode_labels(part, token):
                ids = sorted(vocab.decode_labels(labels)) if vocab else sorted(labels)
                outputs.append(" ".join(map(str, ids)))
        else:
            for ids in model.greedy_decode(part, token, max_len=max_len):
                outputs.append(vocab.decode(ids) if vocab else " ".join(map(str, ids)))
    out = Path(values["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt_io.atomic_write(out, "".join(line + "\n" for line in outputs).encode("utf-8"))
    return 0


# -- report --------------------------------------------------------------------------

def merge_reports(paths) -> dict:
    """(task, dataset, metric) -> (value, n_samples, source path); conflicting values raise."""
    merged: dict = {}
    for path in paths:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
                raise MergeError(f"{path}: expected columns {','.join(REPORT_COLUMNS)}")
            for row in reader:
                key = (row["task"], row["dataset"], row["metric"])
                value = float(row["value"])
                if key in merged and merged[key][0] != value:
                    raise MergeError(f"conflicting values for {key}: {merged[key][0]} from "
                                     f"{merged[key][2]} and {value} from {path}")
                merged.setdefault(key, (value, int(row["n_samples"]), str(path)))
    return merged


def render_report(merged: dict, with_baselines: bool = True) -> str:
    published = published_lookup() if with_baselines else {}
    keys = sorted(set(merged) | set(published))
    header = ["task", "dataset", "metric", "value", "n", "source"]
    header += [f"{s} (published)" for s in SYSTEMS] if with_baselines else []
    rows = []
    for key in keys:
        value, n, source = merged.get(key, (None, "", ""))
        row = list(key) + ["" if value is None else f"{value:.4f}", str(n), source]
        if with_baselines:
            row += [f"{published.get(key, {})[s]:g}" if s in published.get(key, {}) else ""
                    for s in SYSTEMS]
        rows.append(row)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(header, widths)).rstrip(),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    if with_baselines:
        lines.append("")
        lines.append("published columns: German-source results, fixture constants; BLEU on the 0-100 scale")
    return "\n".join(lines) + "\n"


def cmd_report(values: dict, csvs) -> int:
    if not csvs:
        raise ConfigError("report needs at least one metrics CSV")
    table = render_report(merge_reports(csvs), values.get("baselines", "true") != "false")
    if values.get("out"):
        out = Path(values["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        ckpt_io.atomic_write(out, table.encode("utf-8"))
    print(table, end="")
    return 0


# -- argument parsing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lexmtl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        return p

    p = common(sub.add_parser("preprocess", help="ingest corpora, build vocabulary and splits"))
    p.add_argument("--vocab-size", dest="vocab_size", type=int)

    p = common(sub.add_parser("train", help="joint round-robin training"))
    p.add_argument("--joint")
    p.add_argument("--preset")
    p.add_argument("--data")
    p.add_argument("--steps", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--resume")

    p = common(sub.add_parser("evaluate", help="score a checkpoint or a hypothesis file"))
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--task")
    p.add_argument("--split", choices=SPLITS)
    p.add_argument("--hyp")
    p.add_argument("--ref")
    p.add_argument("--kind", choices=("translation", "summarization", "classification"))

    p = common(sub.add_parser("decode", help="decode one source per line"))
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--task")
    p.add_argument("--input")

    p = common(sub.add_parser("report", help="merge metric CSVs into one comparison table"))
    p.add_argument("csvs", nargs="*")
    p.add_argument("--no-baselines", dest="baselines", action="store_const", const="false")
    return parser


KEYS = {
    "preprocess": ("seed", "out", "vocab_size"),
    "train": ("seed", "out", "joint", "preset", "data", "steps", "eval_every", "patience",
              "batch_size", "lr", "warmup", "max_len", "resume"),
    "evaluate": ("seed", "out", "checkpoint", "data", "task", "split", "hyp", "ref", "kind"),
    "decode": ("seed", "out", "checkpoint", "data", "task", "input"),
    "report": ("out", "baselines"),
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = _merged(args, KEYS[args.command])
        if args.command == "preprocess":
            return cmd_preprocess(values)
        if args.command == "train":
            return cmd_train(values)
        if args.command == "evaluate":
            return cmd_evaluate(values)
        if args.command == "decode":
            return cmd_decode(values)
        return cmd_report(values, args.csvs)
    except (LexMTLError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

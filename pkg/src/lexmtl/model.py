"""The multi-task sequence model: language modality, encoder, I/O mixer, decoder.

Source tokens are embedded, tagged with a timing signal and passed through
the convolutional encoder (a mixture-of-experts layer sits mid-stack). The
mixer runs two causal conv blocks over the shifted decoder input and attends
into the encoder output. The decoder stacks causal conv blocks with encoder
attention, again with a mid-stack mixture of experts, and projects back onto
the shared vocabulary. The first decoder input slot holds the task token.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import blocks as B
from . import tensor as T
from .errors import ConfigError, EmptyInputError, TaskRegistryError
from .tensor import Tensor
from .vocab import (DEFAULT_RESERVED, EOS, LABEL_BASE, PAD, TASK_BASE, TASK_SLOTS,
                    is_label_token)


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int = 64
    filter_size: int = 128
    vocab_size: int = 512
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    mixer_conv_blocks: int = 2
    mixer_attention_blocks: int = 1
    heads: int = 4
    n_experts: int = 2
    top_k: int = 1
    gate_noise: float = 1.0
    balance_coef: float = 0.01
    dilations: tuple = B.DEFAULT_DILATIONS
    kernel_size: int = B.KERNEL_SIZE
    tie_embeddings: bool = False
    reserved_size: int = DEFAULT_RESERVED
    preset: str = "custom"

    def __post_init__(self):
        if self.hidden_size % 2:
            raise ConfigError(f"hidden_size must be even, got {self.hidden_size}")
        if self.hidden_size % self.heads:
            raise ConfigError(f"heads={self.heads} must divide hidden_size={self.hidden_size}")
        if not 1 <= self.top_k <= self.n_experts:
            raise ConfigError(f"top_k={self.top_k} must lie in [1, n_experts={self.n_experts}]")
        if min(self.encoder_blocks, self.decoder_blocks) < 1:
            raise ConfigError("encoder and decoder need at least one block each")
        if self.mixer_attention_blocks != 1:
            raise ConfigError("the mixer holds exactly one attention block")
        if self.vocab_size <= self.reserved_size:
            raise ConfigError(
                f"vocab_size {self.vocab_size} leaves no room above {self.reserved_size} reserved ids")
        object.__setattr__(self, "dilations", tuple(self.dilations))

    @property
    def encoder_moe_after(self) -> int:
        return math.ceil(self.encoder_blocks / 2)

    @property
    def decoder_moe_after(self) -> int:
        return math.ceil(self.decoder_blocks / 2)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))

    def with_vocab(self, vocab_size: int) -> "ModelConfig":
        return replace(self, vocab_size=vocab_size)


PRESETS = {
    "MM-B": ModelConfig(hidden_size=512, filter_size=2048, vocab_size=8192, encoder_blocks=6,
                        decoder_blocks=4, heads=8, n_experts=4, top_k=2, preset="MM-B"),
    "MM-L": ModelConfig(hidden_size=512, filter_size=2048, vocab_size=8192, encoder_blocks=3,
                        decoder_blocks=2, heads=8, n_experts=2, top_k=1, preset="MM-L"),
    "MM-desk": ModelConfig(hidden_size=64, filter_size=128, vocab_size=512, encoder_blocks=2,
                           decoder_blocks=2, heads=4, n_experts=2, top_k=1, preset="MM-desk"),
    "MM-tiny": ModelConfig(hidden_size=16, filter_size=32, vocab_size=512, encoder_blocks=2,
                           decoder_blocks=2, heads=2, n_experts=2, top_k=1, preset="MM-tiny"),
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; valid: {', '.join(PRESETS)}") from None
    return replace(cfg, **overrides) if overrides else cfg


# -- tasks ----------------------------------------------------------------------

@dataclass(frozen=True)
class TaskToken:
    task_id: str
    token_id: int


class TaskRegistry:
    """Maps task names to their reserved decoder-start tokens."""

    def __init__(self):
        self._by_name: dict[str, TaskToken] = {}
        self._by_token: dict[int, TaskToken] = {}

    def register(self, name: str, token_id: Optional[int] = None) -> TaskToken:
        if name in self._by_name:
            raise TaskRegistryError(f"task {name!r} already registered")
        if token_id is None:
            free = [t for t in range(TASK_BASE, TASK_BASE + TASK_SLOTS) if t not in self._by_token]
            if not free:
                raise TaskRegistryError(f"all {TASK_SLOTS} task-token slots are taken")
            token_id = free[0]
        if not TASK_BASE <= token_id < TASK_BASE + TASK_SLOTS:
            raise TaskRegistryError(
                f"task token {token_id} outside reserved range "
                f"[{TASK_BASE}, {TASK_BASE + TASK_SLOTS})")
        if token_id in self._by_token:
            raise TaskRegistryError(
                f"token {token_id} already used by task {self._by_token[token_id].task_id!r}")
        tok = TaskToken(name, token_id)
        self._by_name[name] = tok
        self._by_token[token_id] = tok
        return tok

    def resolve(self, task: Union[str, int, TaskToken]) -> TaskToken:
        if isinstance(task, TaskToken):
            if self._by_token.get(task.token_id) != task:
                raise TaskRegistryError(f"unknown task token {task}")
            return task
        if isinstance(task, str):
            if task not in self._by_name:
                raise TaskRegistryError(f"unknown task {task!r}")
            return self._by_name[task]
        if int(task) not in self._by_token:
            raise TaskRegistryError(f"unknown task token id {task}")
        return self._by_token[int(task)]

    def __contains__(self, name) -> bool:
        return name in self._by_name

    def __iter__(self):
        return iter(self._by_name.values())

    def __len__(self) -> int:
        return len(self._by_name)

    def to_dict(self) -> dict[str, int]:
        return {name: tok.token_id for name, tok in self._by_name.items()}

    @classmethod
    def from_dict(cls, mapping: dict[str, int]) -> "TaskRegistry":
        reg = cls()
        for name, token in mapping.items():
            reg.register(name, int(token))
        return reg


# -- parameter layout -----------------------------------------------------------

def _conv_shapes(prefix: str, cfg: ModelConfig) -> dict[str, tuple]:
    d, k = cfg.hidden_size, cfg.kernel_size
    out = {}
    for i in range(len(cfg.dilations)):
        out[f"{prefix}.sub{i}.depthwise"] = (k, d)
        out[f"{prefix}.sub{i}.pointwise"] = (d, d)
        out[f"{prefix}.sub{i}.ln_gain"] = (d,)
        out[f"{prefix}.sub{i}.ln_bias"] = (d,)
    return out


def _attn_shapes(prefix: str, d: int) -> dict[str, tuple]:
    return {f"{prefix}.{n}": (d, d) for n in ("query", "key", "value", "output")}


def _moe_shapes(prefix: str, cfg: ModelConfig) -> dict[str, tuple]:
    d, f = cfg.hidden_size, cfg.filter_size
    out = {f"{prefix}.gate": (d, cfg.n_experts)}
    for e in range(cfg.n_experts):
        out[f"{prefix}.expert{e}.w_in"] = (d, f)
        out[f"{prefix}.expert{e}.b_in"] = (f,)
        out[f"{prefix}.expert{e}.w_out"] = (f, d)
        out[f"{prefix}.expert{e}.b_out"] = (d,)
    return out


def _ln_shapes(prefix: str, d: int) -> dict[str, tuple]:
    return {f"{prefix}.gain": (d,), f"{prefix}.bias": (d,)}


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Name -> shape of every trainable tensor, in construction order."""
    d, V = cfg.hidden_size, cfg.vocab_size
    shapes = {"embed": (V, d)}
    for i in range(cfg.encoder_blocks):
        shapes.update(_conv_shapes(f"enc.block{i}", cfg))
        if i + 1 == cfg.encoder_moe_after:
            shapes.update(_moe_shapes("enc.moe", cfg))
            shapes.update(_ln_shapes("enc.moe_ln", d))
    for i in range(cfg.mixer_conv_blocks):
        shapes.update(_conv_shapes(f"mix.conv{i}", cfg))
    shapes.update(_attn_shapes("mix.attn", d))
    shapes.update(_ln_shapes("mix.attn_ln", d))
    for i in range(cfg.decoder_blocks):
        shapes.update(_conv_shapes(f"dec.block{i}.conv", cfg))
        shapes.update(_attn_shapes(f"dec.block{i}.attn", d))
        shapes.update(_ln_shapes(f"dec.block{i}.attn_ln", d))
        if i + 1 == cfg.decoder_moe_after:
            shapes.update(_moe_shapes("dec.moe", cfg))
            shapes.update(_ln_shapes("dec.moe_ln", d))
    if not cfg.tie_embeddings:
        shapes["out.proj"] = (d, V)
    return shapes


def count_params(cfg: ModelConfig) -> int:
    """Exact number of trainable scalars for ``cfg``."""
    return int(sum(math.prod(s) for s in param_shapes(cfg).values()))


@dataclass
class EncoderState:
    output: Tensor            # [batch, src_len, d]
    pad: np.ndarray           # [batch, src_len] bool, True at padding
    aux_losses: list = field(default_factory=list)

    @property
    def length(self) -> int:
        return self.output.shape[-2]


@dataclass
class _LayerNorm:
    gain: Tensor
    bias: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


def _as_batch(ids) -> tuple[np.ndarray, bool]:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim != 2:
        raise ConfigError(f"token ids must be 1-D or 2-D, got shape {arr.shape}")
    return arr, False


def pad_sequences(seqs: Sequence[Sequence[int]], pad_id: int = PAD) -> np.ndarray:
    width = max((len(s) for s in seqs), default=0)
    out = np.full((len(seqs), width), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


class MultiModel:
    """Parameters plus forward passes for one :class:`ModelConfig`.

    ``params`` is an ordered name -> :class:`Tensor` mapping shared with the
    structured block records, so optimiser updates are visible to both.
    """

    def __init__(self, cfg: ModelConfig, registry: Optional[TaskRegistry] = None,
                 seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.registry = registry if registry is not None else TaskRegistry()
        self.diagnostics = {"off_segment_labels": 0}
        rng = np.random.default_rng(seed)
        d = cfg.hidden_size

        def conv():
            return B.init_conv_block(d, rng, cfg.dilations, dtype=dtype,
                                     kernel_size=cfg.kernel_size)

        def moe():
            return B.init_moe(d, cfg.filter_size, cfg.n_experts, cfg.top_k, rng,
                              cfg.gate_noise, cfg.balance_coef, dtype=dtype)

        def ln():
            return _LayerNorm(Tensor(np.ones(d, dtype), requires_grad=True),
                              Tensor(np.zeros(d, dtype), requires_grad=True))

        self.embed = Tensor(rng.normal(0.0, 1.0, (cfg.vocab_size, d)).astype(dtype),
                            requires_grad=True)
        self.enc_blocks = []
        self.enc_moe = self.enc_moe_ln = None
        for i in range(cfg.encoder_blocks):
            self.enc_blocks.append(conv())
            if i + 1 == cfg.encoder_moe_after:
                self.enc_moe, self.enc_moe_ln = moe(), ln()
        self.mix_convs = [conv() for _ in range(cfg.mixer_conv_blocks)]
        self.mix_attn = B.init_attention(d, cfg.heads, rng, dtype=dtype)
        self.mix_ln = ln()
        self.dec_blocks = []
        self.dec_moe = self.dec_moe_ln = None
        for i in range(cfg.decoder_blocks):
            self.dec_blocks.append((conv(), B.init_attention(d, cfg.heads, rng, dtype=dtype), ln()))
            if i + 1 == cfg.decoder_moe_after:
                self.dec_moe, self.dec_moe_ln = moe(), ln()
        self.out_proj = None
        if not cfg.tie_embeddings:
            self.out_proj = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), (d, cfg.vocab_size))
                                   .astype(dtype), requires_grad=True)
        self.params = self._collect()
        expected = param_shapes(cfg)
        assert {k: v.shape for k, v in self.params.items()} == expected

    def _collect(self) -> dict[str, Tensor]:
        p: dict[str, Tensor] = {"embed": self.embed}
        for i, blk in enumerate(self.enc_blocks):
            p.update(blk.tensors(f"enc.block{i}"))
            if i + 1 == self.cfg.encoder_moe_after:
                p.update(self.enc_moe.tensors("enc.moe"))
                p["enc.moe_ln.gain"], p["enc.moe_ln.bias"] = self.enc_moe_ln.gain, self.enc_moe_ln.bias
        for i, blk in enumerate(self.mix_convs):
            p.update(blk.tensors(f"mix.conv{i}"))
        p.update(self.mix_attn.tensors("mix.attn"))
        p["mix.attn_ln.gain"], p["mix.attn_ln.bias"] = self.mix_ln.gain, self.mix_ln.bias
        for i, (conv, attn, norm) in enumerate(self.dec_blocks):
            p.update(conv.tensors(f"dec.block{i}.conv"))
            p.update(attn.tensors(f"dec.block{i}.attn"))
            p[f"dec.block{i}.attn_ln.gain"], p[f"dec.block{i}.attn_ln.bias"] = norm.gain, norm.bias
            if i + 1 == self.cfg.decoder_moe_after:
                p.update(self.dec_moe.tensors("dec.moe"))
                p["dec.moe_ln.gain"], p["dec.moe_ln.bias"] = self.dec_moe_ln.gain, self.dec_moe_ln.bias
        if self.out_proj is not None:
            p["out.proj"] = self.out_proj
        for name, t in p.items():
            t.name = name
        return p

    # -- parameter utilities ------------------------------------------------------
    @property
    def dtype(self):
        return self.embed.dtype

    def n_params(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if name not in state:
                raise ConfigError(f"state is missing parameter {name!r}")
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise ConfigError(f"parameter {name!r}: shape {arr.shape} != {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)

    def astype(self, dtype) -> "MultiModel":
        clone = MultiModel(self.cfg, self.registry, seed=0, dtype=dtype)
        clone.load_state_dict(self.state_dict())
        return clone

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    # -- forward passes -----------------------------------------------------------
    def _embed(self, ids: np.ndarray) -> Tensor:
        x = T.embedding_lookup(self.embed, ids)
        signal = B.timing_signal(ids.shape[1], self.cfg.hidden_size, self.dtype)
        return x + Tensor(signal)

    def encode(self, src_ids, src_pad: Optional[np.ndarray] = None, train: bool = False,
               rng: Optional[np.random.Generator] = None) -> EncoderState:
        ids, _ = _as_batch(src_ids)
        if ids.shape[1] == 0:
            raise EmptyInputError("cannot encode an empty source sequence")
        pad = (ids == PAD) if src_pad is None else np.asarray(src_pad, dtype=bool)
        keep = (~pad)[..., None].astype(self.dtype)
        x = self._embed(np.where(pad, PAD, ids)) * keep
        aux = []
        for i, blk in enumerate(self.enc_blocks):
            x = B.conv_block(x, blk, causal=False, keep=keep)
            if i + 1 == self.cfg.encoder_moe_after:
                res = B.moe(x, self.enc_moe, train_mode=train, rng=rng, keep=keep)
                x = self.enc_moe_ln(x + res.output)
                if res.balance_loss is not None:
                    aux.append(res.balance_loss)
        return EncoderState(x * keep, pad, aux)

    def io_mix(self, enc: EncoderState, dec_prefix: Tensor) -> Tensor:
        if enc.length == 0:
            raise EmptyInputError("I/O mixer needs a non-empty encoder state")
        h = dec_prefix
        for blk in self.mix_convs:
            h = B.conv_block(h, blk, causal=True)
        return self.mix_ln(h + B.attention(h, enc.output, self.mix_attn, key_pad=enc.pad))

    def decode_stack(self, enc: EncoderState, dec_ids: np.ndarray, train: bool = False,
                     rng: Optional[np.random.Generator] = None) -> tuple[Tensor, list]:
        h = self.io_mix(enc, self._embed(dec_ids))
        aux = []
        for i, (conv, attn, norm) in enumerate(self.dec_blocks):
            h = B.conv_block(h, conv, causal=True)
            h = norm(h + B.attention(h, enc.output, attn, key_pad=enc.pad))
            if i + 1 == self.cfg.decoder_moe_after:
                res = B.moe(h, self.dec_moe, train_mode=train, rng=rng)
                h = self.dec_moe_ln(h + res.output)
                if res.balance_loss is not None:
                    aux.append(res.balance_loss)
        proj = self.out_proj if self.out_proj is not None else T.transpose(self.embed)
        return h @ proj, aux

    def decoder_input(self, tgt_ids: np.ndarray, token: TaskToken) -> np.ndarray:
        start = np.full((tgt_ids.shape[0], 1), token.token_id, dtype=np.int64)
        return np.concatenate([start, tgt_ids[:, :-1]], axis=1)

    def forward_train(self, src_ids, tgt_ids, task, train: bool = False,
                      rng: Optional[np.random.Generator] = None,
                      src_pad: Optional[np.ndarray] = None, return_aux: bool = False):
        """Teacher-forced logits [.., tgt_len, vocab] for ``tgt_ids`` given ``src_ids``."""
        token = self.registry.resolve(task)
        src, squeeze = _as_batch(src_ids)
        tgt, _ = _as_batch(tgt_ids)
        if tgt.shape[1] == 0:
            raise EmptyInputError("empty target sequence")
        enc = self.encode(src, src_pad, train=train, rng=rng)
        logits, aux = self.decode_stack(enc, self.decoder_input(tgt, token), train, rng)
        aux = enc.aux_losses + aux
        if squeeze:
            logits = logits.reshape(logits.shape[1:])
        return (logits, aux) if return_aux else logits

    def loss(self, src_ids, tgt_ids, task, train: bool = True,
             rng: Optional[np.random.Generator] = None) -> tuple[Tensor, float]:
        """Training objective: token cross-entropy plus expert-balance terms."""
        logits, aux = self.forward_train(src_ids, tgt_ids, task, train=train, rng=rng,
                                         return_aux=True)
        ce = T.cross_entropy(logits, _as_batch(tgt_ids)[0] if logits.ndim == 3
                             else np.asarray(tgt_ids), PAD)
        total = ce
        for term in aux:
            total = total + term
        return total, float(ce.item())

    # -- decoding -------------------------------------------------------------------
    def greedy_decode(self, src_ids, task, max_len: int = 64):
        """Feed back the argmax token until end of sequence or ``max_len`` tokens.

        Accepts one id sequence (returns one list) or a list of them.
        """
        if max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {max_len}")
        token = self.registry.resolve(task)
        single = len(src_ids) > 0 and np.ndim(src_ids[0]) == 0
        seqs = [list(src_ids)] if single else [list(s) for s in src_ids]
        if not seqs:
            return []
        for s in seqs:
            if not s:
                raise EmptyInputError("cannot decode an empty source sequence")
        src = pad_sequences(seqs)
        n = len(seqs)
        out = [[] for _ in range(n)]
        done = np.zeros(n, dtype=bool)
        dec = np.full((n, 1), token.token_id, dtype=np.int64)
        with T.no_grad():
            enc = self.encode(src)
            for _ in range(max_len):
                logits, _ = self.decode_stack(enc, dec)
                nxt = logits.data[:, -1, :].argmax(axis=-1)
                for i in np.nonzero(~done)[0]:
                    if nxt[i] == EOS:
                        done[i] = True
                    else:
                        out[i].append(int(nxt[i]))
                if done.all():
                    break
                dec = np.concatenate([dec, np.where(done, PAD, nxt)[:, None]], axis=1)
        return out[0] if single else out

    def decode_labels(self, src_ids, task, max_labels: int = 7):
        """Greedy-decode label tokens and return label indices (token - label base).

        Tokens outside the label segment are skipped and counted in
        ``diagnostics['off_segment_labels']``.
        """
        single = len(src_ids) > 0 and np.ndim(src_ids[0]) == 0
        decoded = self.greedy_decode(src_ids, task, max_len=max_labels + 1)
        results = [self.labels_from_tokens(d, max_labels) for d in
                   ([decoded] if single else decoded)]
        return results[0] if single else results

    def labels_from_tokens(self, tokens: Iterable[int], max_labels: int = 7) -> set[int]:
        labels: list[int] = []
        for tok in tokens:
            if tok == EOS:
                break
            if not is_label_token(tok, self.cfg.reserved_size):
                self.diagnostics["off_segment_labels"] += 1
                continue
            idx = tok - LABEL_BASE
            if idx not in labels and len(labels) < max_labels:
                labels.append(idx)
        return set(labels)

"""Convolution, attention and mixture-of-experts blocks built on :mod:`lexmtl.tensor`.

All blocks take activations shaped ``[len, d]`` or ``[batch, len, d]`` and
return the same shape. Parameter records are plain dataclasses of
:class:`~lexmtl.tensor.Tensor` so the model can enumerate and serialise them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, EmptyInputError
from .tensor import Tensor

DEFAULT_DILATIONS = (1, 1, 2)
KERNEL_SIZE = 3


def timing_signal(length: int, d: int, dtype=np.float32) -> np.ndarray:
    """Interleaved sin/cos position encoding over geometric wavelengths.

    Column ``2i`` holds ``sin(p / 10000**(2i/d))`` and column ``2i+1`` the
    matching cosine, so position 0 is ``[0, 1, 0, 1, ...]``.
    """
    if d % 2:
        raise ConfigError(f"timing signal width must be even, got {d}")
    if length < 1:
        raise ConfigError(f"timing signal length must be positive, got {length}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    inv_freq = 1.0 / (10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d))
    angles = pos * inv_freq[None, :]
    signal = np.empty((length, d), dtype=np.float64)
    signal[:, 0::2] = np.sin(angles)
    signal[:, 1::2] = np.cos(angles)
    return signal.astype(dtype)


@dataclass
class SepConvLayer:
    depthwise: Tensor  # [k, d]
    pointwise: Tensor  # [d, d]
    ln_gain: Tensor
    ln_bias: Tensor


@dataclass
class ConvBlockParams:
    layers: list[SepConvLayer]
    dilations: tuple = DEFAULT_DILATIONS
    residual: bool = True

    def __post_init__(self):
        if len(self.layers) != len(self.dilations):
            raise ConfigError(
                f"{len(self.layers)} sublayers but {len(self.dilations)} dilations")
        widths = {layer.pointwise.shape[0] for layer in self.layers}
        if len(widths) != 1:
            raise ConfigError(f"sublayers disagree on hidden width: {sorted(widths)}")

    @property
    def width(self) -> int:
        return self.layers[0].pointwise.shape[0]

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}.sub{i}.depthwise"] = layer.depthwise
            out[f"{prefix}.sub{i}.pointwise"] = layer.pointwise
            out[f"{prefix}.sub{i}.ln_gain"] = layer.ln_gain
            out[f"{prefix}.sub{i}.ln_bias"] = layer.ln_bias
        return out


@dataclass
class AttentionParams:
    query: Tensor
    key: Tensor
    value: Tensor
    output: Tensor
    heads: int
    causal: bool = False

    def __post_init__(self):
        d = self.query.shape[0]
        if d % self.heads:
            raise ConfigError(f"head count {self.heads} does not divide width {d}")

    @property
    def width(self) -> int:
        return self.query.shape[0]

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.query": self.query, f"{prefix}.key": self.key,
                f"{prefix}.value": self.value, f"{prefix}.output": self.output}


@dataclass
class Expert:
    w_in: Tensor   # [d, filter]
    b_in: Tensor   # [filter]
    w_out: Tensor  # [filter, d]
    b_out: Tensor  # [d]


@dataclass
class MoEParams:
    gate: Tensor  # [d, E]
    experts: list[Expert]
    top_k: int = 1
    noise_scale: float = 1.0
    balance_coef: float = 0.01

    def __post_init__(self):
        n = len(self.experts)
        if not 1 <= self.top_k <= n:
            raise ConfigError(f"top_k={self.top_k} must lie in [1, {n}]")
        if self.gate.shape[1] != n:
            raise ConfigError(f"gate has {self.gate.shape[1]} columns for {n} experts")

    @property
    def width(self) -> int:
        return self.gate.shape[0]

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.gate": self.gate}
        for e, ex in enumerate(self.experts):
            out[f"{prefix}.expert{e}.w_in"] = ex.w_in
            out[f"{prefix}.expert{e}.b_in"] = ex.b_in
            out[f"{prefix}.expert{e}.w_out"] = ex.w_out
            out[f"{prefix}.expert{e}.b_out"] = ex.b_out
        return out


# -- parameter factories ------------------------------------------------------

def _param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(arr.astype(dtype), requires_grad=True)


def init_conv_block(d: int, rng: np.random.Generator, dilations=DEFAULT_DILATIONS,
                    residual: bool = True, zero: bool = False, dtype=np.float32,
                    kernel_size: int = KERNEL_SIZE) -> ConvBlockParams:
    layers = []
    for _ in dilations:
        if zero:
            dw = np.zeros((kernel_size, d))
            pw = np.zeros((d, d))
        else:
            dw = rng.normal(0.0, 1.0 / np.sqrt(kernel_size), (kernel_size, d))
            pw = rng.normal(0.0, 1.0 / np.sqrt(d), (d, d))
        layers.append(SepConvLayer(_param(dw, dtype), _param(pw, dtype),
                                   _param(np.ones(d), dtype), _param(np.zeros(d), dtype)))
    return ConvBlockParams(layers, tuple(dilations), residual)


def init_attention(d: int, heads: int, rng: np.random.Generator, causal: bool = False,
                   dtype=np.float32) -> AttentionParams:
    def proj():
        return _param(rng.normal(0.0, 1.0 / np.sqrt(d), (d, d)), dtype)
    return AttentionParams(proj(), proj(), proj(), proj(), heads, causal)


def init_moe(d: int, filter_size: int, n_experts: int, top_k: int, rng: np.random.Generator,
             noise_scale: float = 1.0, balance_coef: float = 0.01,
             dtype=np.float32) -> MoEParams:
    gate = _param(rng.normal(0.0, 1.0 / np.sqrt(d), (d, n_experts)), dtype)
    experts = [
        Expert(_param(rng.normal(0.0, np.sqrt(2.0 / d), (d, filter_size)), dtype),
               _param(np.zeros(filter_size), dtype),
               _param(rng.normal(0.0, 1.0 / np.sqrt(filter_size), (filter_size, d)), dtype),
               _param(np.zeros(d), dtype))
        for _ in range(n_experts)
    ]
    return MoEParams(gate, experts, top_k, noise_scale, balance_coef)


# -- forward passes -----------------------------------------------------------

def _check_width(x: Tensor, width: int, what: str) -> None:
    if x.shape[-1] != width:
        raise DimensionError(f"{what} expects width {width}, got input shape {x.shape}")


def conv_block(x: Tensor, p: ConvBlockParams, causal: bool = False,
               keep: Optional[np.ndarray] = None) -> Tensor:
    """relu -> separable dilated conv -> layer norm per sublayer, residual over the block.

    ``keep`` ([..., len, 1], 1 for real tokens) zeroes padded positions before
    every convolution so padding content never reaches real positions.
    """
    _check_width(x, p.width, "conv_block")
    y = x
    for layer, dilation in zip(p.layers, p.dilations):
        h = T.relu(y)
        if keep is not None:
            h = h * keep
        h = T.depthwise_conv1d(h, layer.depthwise, dilation, causal)
        h = h @ layer.pointwise
        y = T.layer_norm(h, layer.ln_gain, layer.ln_bias)
    return x + y if p.residual else y


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, length, d = x.shape
    return x.reshape(b, length, heads, d // heads).transpose(0, 2, 1, 3)


def attention(q_in: Tensor, kv_in: Tensor, p: AttentionParams,
              key_pad: Optional[np.ndarray] = None, return_weights: bool = False):
    """Multi-head scaled dot-product attention of ``q_in`` over ``kv_in``.

    ``key_pad`` marks padded key positions ([batch, lk] bool) which receive
    zero weight. With ``p.causal`` query ``t`` only sees keys ``<= t``.
    """
    _check_width(q_in, p.width, "attention query")
    _check_width(kv_in, p.width, "attention key/value")
    if kv_in.shape[-2] == 0:
        raise EmptyInputError("attention over an empty source")
    squeeze = q_in.ndim == 2
    if squeeze:
        q_in = q_in.reshape(1, *q_in.shape)
    if kv_in.ndim == 2:
        kv_in = kv_in.reshape(1, *kv_in.shape)
    b, lq, d = q_in.shape
    lk = kv_in.shape[1]
    h = p.heads
    q = _split_heads(q_in @ p.query, h)
    k = _split_heads(kv_in @ p.key, h)
    v = _split_heads(kv_in @ p.value, h)
    logits = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d // h))
    mask = np.zeros((b, 1, lq, lk), dtype=logits.dtype)
    if key_pad is not None:
        mask = np.where(np.asarray(key_pad, bool)[:, None, None, :], -np.inf, mask)
    if p.causal:
        future = np.triu(np.ones((lq, lk), dtype=bool), k=1)
        mask = np.where(future[None, None], -np.inf, mask)
    if mask.any():
        logits = logits + Tensor(mask.astype(logits.dtype))
    weights = T.softmax(logits, axis=-1)
    ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, lq, d)
    out = ctx @ p.output
    if squeeze:
        out = out.reshape(lq, d)
    if return_weights:
        return out, weights.data
    return out


def _topk_mask(logits: np.ndarray, k: int) -> np.ndarray:
    order = np.argsort(-logits, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(logits.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=-1)
    T.note_branch(mask)
    return mask


@dataclass
class MoEOutput:
    output: Tensor
    load: Tensor
    gates: np.ndarray
    balance_loss: Optional[Tensor] = field(default=None)


def moe(x: Tensor, p: MoEParams, train_mode: bool = False,
        rng: Optional[np.random.Generator] = None,
        keep: Optional[np.ndarray] = None) -> MoEOutput:
    """Sparse noisy top-k mixture of experts applied per position.

    In ``train_mode`` the gate logits are scaled by ``1 + noise_scale * N(0,1)``
    before top-k selection. The kept logits are renormalised with a softmax
    and every other expert gets exactly zero weight.
    ``load`` counts routed positions per expert. ``balance_loss`` is the
    coefficient-weighted squared coefficient of variation of the per-expert
    gate mass.
    """
    _check_width(x, p.width, "moe")
    shape = x.shape
    d = shape[-1]
    flat = x.reshape(-1, d)
    n = flat.shape[0]
    n_experts = len(p.experts)
    logits = flat @ p.gate
    if train_mode and p.noise_scale > 0:
        if rng is None:
            raise ConfigError("train_mode gating needs a random generator")
        noise = 1.0 + p.noise_scale * rng.standard_normal(logits.shape)
        logits = logits * Tensor(noise.astype(logits.dtype))
    kept = _topk_mask(logits.data, p.top_k)
    neg = np.where(kept, 0.0, -np.inf).astype(logits.dtype)
    gates = T.softmax(logits + Tensor(neg), axis=-1)
    real = np.ones(n, dtype=bool) if keep is None else np.asarray(keep).reshape(-1) > 0

    # every expert runs on every row and unrouted rows get zero gate weight;
    # gathering a data-dependent number of rows would let BLAS pick different
    # kernels per matrix height and break bitwise causality across positions
    out = None
    for e, ex in enumerate(p.experts):
        he = T.relu(flat @ ex.w_in + ex.b_in) @ ex.w_out + ex.b_out
        part = he * T.getitem(gates, (slice(None), slice(e, e + 1)))
        out = part if out is None else out + part
    load = Tensor((kept & real[:, None]).sum(axis=0).astype(x.dtype))

    balance = None
    if p.balance_coef > 0 and n_experts > 1:
        weight = Tensor(real[:, None].astype(x.dtype))
        importance = (gates * weight).sum(axis=0)
        mean = importance.mean()
        centered = importance - mean
        var = (centered * centered).mean()
        balance = var / (mean * mean + 1e-10) * p.balance_coef
    return MoEOutput(out.reshape(shape), load, gates.data.reshape(shape[:-1] + (n_experts,)),
                     balance)

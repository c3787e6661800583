"""Decoder step with optional Future/Past layers, and teacher-forced scoring."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from . import tensor as T
from .attention import attend, precompute_keys
from .cells import (
    ConfigurationError, FutureCellKind, GruParams, future_step, gru_step, past_step, uniform, zeros,
)
from .encoder import Annotations, VocabError, as_batch, encode, initial_states
from .tensor import Tensor

if TYPE_CHECKING:
    from .model import ModelParams

PAD, UNK, BOS, EOS = 0, 1, 2, 3


class FeedTiming(str, enum.Enum):
    CURRENT = "current"    # decoder sees s^F_t (Future-only formulation)
    PREVIOUS = "previous"  # decoder sees s^F_{t-1} (combined formulation)


@dataclass(frozen=True)
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    e: int = 32
    d_enc: int = 64
    d_dec: int = 64
    d_o: int = 64
    d_a: int | None = None
    use_future: bool = False
    future_kind: FutureCellKind = FutureCellKind.GRU
    use_past: bool = False
    use_losses: bool = False
    feed_future_timing: FeedTiming = FeedTiming.PREVIOUS
    separate_future_init: bool = False
    future_loss_weight: float = 1.0
    past_loss_weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "future_kind", FutureCellKind(self.future_kind))
        object.__setattr__(self, "feed_future_timing", FeedTiming(self.feed_future_timing))
        if self.d_a is None:
            object.__setattr__(self, "d_a", self.d_dec)
        for name in ("src_vocab", "tgt_vocab", "e", "d_enc", "d_dec", "d_o", "d_a"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")

    @property
    def ann_dim(self) -> int:
        return 2 * self.d_enc

    @property
    def dec_input_dim(self) -> int:
        return self.e + self.ann_dim + self.d_dec * (int(self.use_future) + int(self.use_past))

    @property
    def future_loss_on(self) -> bool:
        return self.use_losses and self.use_future

    @property
    def past_loss_on(self) -> bool:
        return self.use_losses and self.use_past

    def to_dict(self) -> dict:
        d = asdict(self)
        d["future_kind"] = self.future_kind.value
        d["feed_future_timing"] = self.feed_future_timing.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


PRESETS = {
    "baseline": {},
    "+frnn-gru": dict(use_future=True, future_kind=FutureCellKind.GRU),
    "+frnn-gru-o": dict(use_future=True, future_kind=FutureCellKind.GRU_O),
    "+frnn-gru-i": dict(use_future=True, future_kind=FutureCellKind.GRU_I),
    "+frnn+loss": dict(use_future=True, future_kind=FutureCellKind.GRU_I, use_losses=True),
    "+prnn": dict(use_past=True),
    "+prnn+loss": dict(use_past=True, use_losses=True),
    "+frnn+prnn": dict(use_future=True, future_kind=FutureCellKind.GRU_I, use_past=True),
    "+frnn+prnn+loss": dict(use_future=True, future_kind=FutureCellKind.GRU_I, use_past=True,
                            use_losses=True),
}


def preset(name: str, **overrides) -> ModelConfig:
    """Build a :class:`ModelConfig` from a named model variant plus dimension overrides."""
    try:
        flags = PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return ModelConfig(**{**flags, **overrides})


@dataclass
class DecoderParams:
    tgt_embeddings: Tensor
    dec_cell: GruParams
    W_o1: Tensor
    b_o1: Tensor
    W_o2: Tensor
    b_o2: Tensor

    @classmethod
    def init(cls, rng, cfg: ModelConfig) -> "DecoderParams":
        return cls(
            tgt_embeddings=uniform(rng, (cfg.tgt_vocab, cfg.e)),
            dec_cell=GruParams.init(rng, cfg.d_dec, cfg.dec_input_dim),
            W_o1=uniform(rng, (cfg.d_o, cfg.e + cfg.d_dec + cfg.ann_dim)),
            b_o1=zeros(cfg.d_o),
            W_o2=uniform(rng, (cfg.tgt_vocab, cfg.d_o)),
            b_o2=zeros(cfg.tgt_vocab),
        )


@dataclass
class DecoderState:
    s: Tensor
    sF: Tensor | None = None
    sP: Tensor | None = None


@dataclass
class DecodeStep:
    s: Tensor
    sF: Tensor | None
    sP: Tensor | None
    c: Tensor
    alpha: Tensor
    logprobs: Tensor
    prev: DecoderState | None = field(default=None, repr=False)

    @property
    def state(self) -> DecoderState:
        return DecoderState(self.s, self.sF, self.sP)


def start_state(cfg: ModelConfig, params: "ModelParams", ann: Annotations) -> DecoderState:
    s0, sF0, sP0 = initial_states(params.encoder, ann)
    return DecoderState(s0, sF0 if cfg.use_future else None, sP0 if cfg.use_past else None)


def readout(params: DecoderParams, y_emb: Tensor, s: Tensor, c: Tensor) -> Tensor:
    hidden = T.tanh(T.linear(T.concat([y_emb, s, c]), params.W_o1, params.b_o1))
    return T.log_softmax(T.linear(hidden, params.W_o2, params.b_o2))


def decode_step(cfg: ModelConfig, params: "ModelParams", prev: DecoderState, y_prev_ids,
                ann: Annotations, keys: Tensor | None = None) -> DecodeStep:
    """Advance every row of the batch by one target position.

    Order: attention on the previous states, Future and Past updates from the
    new context, decoder GRU over ``[E(y_prev); c; Future; Past_prev]``, then
    the deep-output word distribution.
    """
    if (prev.sF is None) == cfg.use_future or (prev.sP is None) == cfg.use_past:
        raise ConfigurationError("decoder state does not match use_future/use_past")
    y_prev_ids = np.asarray(y_prev_ids, dtype=np.int64).reshape(-1)
    V = params.decoder.tgt_embeddings.shape[0]
    if y_prev_ids.min() < 0 or y_prev_ids.max() >= V:
        raise VocabError(f"target id out of range [0, {V})")

    alpha, c = attend(params.attention, prev.s, ann, prev.sF, prev.sP, keys=keys)
    sF = future_step(cfg.future_kind, params.future, prev.sF, c) if cfg.use_future else None
    sP = past_step(params.past, prev.sP, c) if cfg.use_past else None

    y_emb = T.embed(params.decoder.tgt_embeddings, y_prev_ids)
    inputs = [y_emb, c]
    if cfg.use_future:
        inputs.append(sF if cfg.feed_future_timing is FeedTiming.CURRENT else prev.sF)
    if cfg.use_past:
        inputs.append(prev.sP)
    s = gru_step(params.decoder.dec_cell, prev.s, T.concat(inputs))
    logprobs = readout(params.decoder, y_emb, s, c)
    return DecodeStep(s=s, sF=sF, sP=sP, c=c, alpha=alpha, logprobs=logprobs, prev=prev)


def teacher_forced_pass(cfg: ModelConfig, params: "ModelParams", src_ids, tgt_ids,
                        src_mask=None, tgt_mask=None) -> tuple[list[DecodeStep], list[Tensor]]:
    """Score gold targets; returns the decode steps and per-step NLL tensors of shape [B].

    Padded target positions (``tgt_mask`` False) get zero NLL and zero gradient.
    """
    src, smask = as_batch(src_ids, src_mask)
    tgt, tmask = as_batch(tgt_ids, tgt_mask)
    if tgt.shape[0] != src.shape[0]:
        raise ConfigurationError("source and target batch sizes differ")
    ann = encode(params.encoder, src, smask)
    keys = precompute_keys(params.attention, ann)
    state = start_state(cfg, params, ann)
    B, J = tgt.shape
    y_prev = np.full(B, BOS, dtype=np.int64)
    steps, nll = [], []
    for t in range(J):
        step = decode_step(cfg, params, state, y_prev, ann, keys=keys)
        gold = np.where(tmask[:, t], tgt[:, t], PAD)
        loss = T.sub(0.0, T.pick(step.logprobs, gold))
        if not tmask[:, t].all():
            loss = loss * tmask[:, t].astype(np.float64)
        steps.append(step)
        nll.append(loss)
        state = step.state
        y_prev = gold
    return steps, nll


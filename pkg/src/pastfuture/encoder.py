"""Source embedding and bidirectional GRU encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .cells import GruParams, gru_step, uniform, zeros
from .tensor import Tensor


class VocabError(IndexError):
    """A token id falls outside the vocabulary."""


class EmptySourceError(ValueError):
    pass


@dataclass
class EncoderParams:
    src_embeddings: Tensor
    fwd: GruParams
    bwd: GruParams
    W_s: Tensor
    b_s: Tensor
    # only allocated with ``separate_future_init``
    W_sF: Tensor | None = None
    b_sF: Tensor | None = None

    @classmethod
    def init(cls, rng, vocab_size: int, e: int, d_enc: int, d_dec: int,
             separate_future_init: bool = False) -> "EncoderParams":
        p = cls(
            src_embeddings=uniform(rng, (vocab_size, e)),
            fwd=GruParams.init(rng, d_enc, e),
            bwd=GruParams.init(rng, d_enc, e),
            W_s=uniform(rng, (d_dec, 2 * d_enc)),
            b_s=zeros(d_dec),
        )
        if separate_future_init:
            p.W_sF = uniform(rng, (d_dec, 2 * d_enc))
            p.b_sF = zeros(d_dec)
        return p


@dataclass
class Annotations:
    """Encoder output for a batch: ``h`` is [B, I, 2*d_enc], ``mask`` is [B, I] (True = real)."""

    h: Tensor
    mask: np.ndarray
    summary: Tensor  # [B, 2*d_enc] = [last forward state; first backward state]

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)


def as_batch(ids, mask=None) -> tuple[np.ndarray, np.ndarray]:
    """Normalise a single id list or a padded [B, I] array into (ids, mask)."""
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if mask is None:
        mask = np.ones(arr.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool).reshape(arr.shape)
    return arr, mask


def _masked(m: np.ndarray | None, new: Tensor, old: Tensor) -> Tensor:
    if m is None:
        return new
    return m * new + (1.0 - m) * old


def encode(p: EncoderParams, src_ids, src_mask=None) -> Annotations:
    ids, mask = as_batch(src_ids, src_mask)
    if ids.shape[1] == 0 or not mask.any(axis=1).all():
        raise EmptySourceError("source sentence is empty")
    vocab = p.src_embeddings.shape[0]
    if ids.min() < 0 or ids.max() >= vocab:
        raise VocabError(f"source id out of range [0, {vocab})")

    B, I = ids.shape
    x = T.embed(p.src_embeddings, ids)
    full = mask.all()
    if not full:
        x = x * mask[:, :, None].astype(np.float64)
    col = mask.astype(np.float64)

    d = p.fwd.state_dim
    s = T.constant(np.zeros((B, d)))
    fwd = []
    for i in range(I):
        m = None if full or mask[:, i].all() else col[:, i:i + 1]
        s = _masked(m, gru_step(p.fwd, s, T.take(x, i, axis=1)), s)
        fwd.append(s)
    last_fwd = s

    s = T.constant(np.zeros((B, p.bwd.state_dim)))
    bwd = [None] * I
    for i in reversed(range(I)):
        m = None if full or mask[:, i].all() else col[:, i:i + 1]
        s = _masked(m, gru_step(p.bwd, s, T.take(x, i, axis=1)), s)
        bwd[i] = s

    states = [T.concat([f, b]) for f, b in zip(fwd, bwd)]
    h = T.concat([T.reshape(st, (B, 1, 2 * d)) for st in states], axis=1)
    summary = T.concat([last_fwd, bwd[0]])
    return Annotations(h=h, mask=mask, summary=summary)


def initial_states(p: EncoderParams, ann: Annotations) -> tuple[Tensor, Tensor, Tensor]:
    """``s_0 = tanh(W_s [fwd_I; bwd_1] + b_s)``; the Future layer starts from the same
    summary projection and the Past layer from zeros."""
    s0 = T.tanh(T.linear(ann.summary, p.W_s, p.b_s))
    if p.W_sF is not None:
        sF0 = T.tanh(T.linear(ann.summary, p.W_sF, p.b_sF))
    else:
        sF0 = s0
    sP0 = T.constant(np.zeros(s0.shape))
    return s0, sF0, sP0

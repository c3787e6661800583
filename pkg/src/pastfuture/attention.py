"""Additive attention whose energy may also see the Future and Past states."""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .cells import ConfigurationError, uniform, zeros
from .encoder import Annotations
from .tensor import Tensor


@dataclass
class AttentionParams:
    W_a: Tensor
    U_a: Tensor
    v_a: Tensor
    b_a: Tensor
    V_f: Tensor | None = None
    V_p: Tensor | None = None

    @classmethod
    def init(cls, rng, d_a: int, d_dec: int, ann_dim: int,
             use_future: bool = False, use_past: bool = False) -> "AttentionParams":
        return cls(
            W_a=uniform(rng, (d_a, d_dec)),
            U_a=uniform(rng, (d_a, ann_dim)),
            v_a=uniform(rng, (d_a,)),
            b_a=zeros(d_a),
            V_f=uniform(rng, (d_a, d_dec)) if use_future else None,
            V_p=uniform(rng, (d_a, d_dec)) if use_past else None,
        )


def precompute_keys(p: AttentionParams, ann: Annotations) -> Tensor:
    """``U_a h_i + b_a`` for every source position; constant across decode steps."""
    return T.linear(ann.h, p.U_a, p.b_a)


def attend(p: AttentionParams, s_prev: Tensor, ann: Annotations,
           sF_prev: Tensor | None = None, sP_prev: Tensor | None = None,
           keys: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Return ``(alpha [B, I], c [B, 2*d_enc])``."""
    if (sF_prev is None) != (p.V_f is None) or (sP_prev is None) != (p.V_p is None):
        raise ConfigurationError("Future/Past states do not match the attention parameters")
    if keys is None:
        keys = precompute_keys(p, ann)
    query = T.linear(s_prev, p.W_a)
    if sF_prev is not None:
        query = query + T.linear(sF_prev, p.V_f)
    if sP_prev is not None:
        query = query + T.linear(sP_prev, p.V_p)
    B, I, d_a = keys.shape
    energy = T.tanh(keys + T.reshape(query, (B, 1, d_a)))
    scores = T.reshape(T.linear(energy, T.reshape(p.v_a, (1, d_a))), (B, I))
    alpha = T.softmax(scores, ann.mask)
    c = T.reshape(T.matmul(T.reshape(alpha, (B, 1, I)), ann.h), (B, ann.h.shape[-1]))
    return alpha, c

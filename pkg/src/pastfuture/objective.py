"""Negative log-likelihood plus the Future (subtraction) and Past (addition) losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .cells import uniform, zeros
from .decoder import DecodeStep, ModelConfig
from .encoder import VocabError
from .tensor import ContractViolation, Tensor


@dataclass
class AuxLossParams:
    W_F: Tensor | None = None
    b_F: Tensor | None = None
    W_P: Tensor | None = None
    b_P: Tensor | None = None

    @classmethod
    def init(cls, rng, cfg: ModelConfig) -> "AuxLossParams":
        p = cls()
        if cfg.future_loss_on:
            p.W_F, p.b_F = uniform(rng, (cfg.d_dec, cfg.e)), zeros(1)
        if cfg.past_loss_on:
            p.W_P, p.b_P = uniform(rng, (cfg.d_dec, cfg.e)), zeros(1)
        return p


@dataclass
class StepDeltas:
    dF: Tensor | None  # s^F_{t-1} - s^F_t
    dP: Tensor | None  # s^P_t - s^P_{t-1}


def step_deltas(steps: Sequence[DecodeStep]) -> list[StepDeltas]:
    out = []
    for st in steps:
        dF = T.sub(st.prev.sF, st.sF) if st.sF is not None else None
        dP = T.sub(st.sP, st.prev.sP) if st.sP is not None else None
        out.append(StepDeltas(dF, dP))
    return out


def delta_scores(W: Tensor, b: Tensor, delta: Tensor, tgt_embeddings: Tensor) -> Tensor:
    """Bilinear score ``delta^T W E(y) + b`` for every vocabulary entry y."""
    projected = T.matmul(delta if delta.data.ndim == 2 else T.reshape(delta, (1, -1)), W)
    scores = T.linear(projected, tgt_embeddings)
    return T.add(scores, b)


def delta_loss(W: Tensor, b: Tensor, delta: Tensor, gold_ids, tgt_embeddings: Tensor) -> Tensor:
    """Softmax cross-entropy of the gold word under the bilinear delta score, per row."""
    gold = np.asarray(gold_ids, dtype=np.int64).reshape(-1)
    V = tgt_embeddings.shape[0]
    if gold.min() < 0 or gold.max() >= V:
        raise VocabError(f"gold id out of range [0, {V})")
    logp = T.log_softmax(delta_scores(W, b, delta, tgt_embeddings))
    return T.sub(0.0, T.pick(logp, gold))


def objective_terms(cfg: ModelConfig, nll_steps: Sequence[Tensor], deltas_steps: Sequence[StepDeltas],
                    aux: AuxLossParams, tgt_ids, tgt_embeddings: Tensor,
                    tgt_mask=None) -> tuple[Tensor, Tensor | None, Tensor | None]:
    """Summed (nll, future loss, past loss); disabled terms come back as None."""
    tgt = np.asarray(tgt_ids, dtype=np.int64)
    if tgt.ndim == 1:
        tgt = tgt[None, :]
    mask = np.ones(tgt.shape, dtype=bool) if tgt_mask is None else np.asarray(tgt_mask, bool).reshape(tgt.shape)
    J = tgt.shape[1]
    if len(nll_steps) != J or (deltas_steps is not None and len(deltas_steps) != J and
                               (cfg.future_loss_on or cfg.past_loss_on)):
        raise ContractViolation(f"expected {J} per-step terms, got {len(nll_steps)}")

    nll = T.sum(T.concat([T.reshape(n, (-1,)) for n in nll_steps]))
    fut = past = None
    fut_terms, past_terms = [], []
    for t in range(J if (cfg.future_loss_on or cfg.past_loss_on) else 0):
        col = mask[:, t]
        gold = np.where(col, tgt[:, t], 0)
        weight = None if col.all() else col.astype(np.float64)
        if cfg.future_loss_on:
            term = delta_loss(aux.W_F, aux.b_F, deltas_steps[t].dF, gold, tgt_embeddings)
            fut_terms.append(term if weight is None else term * weight)
        if cfg.past_loss_on:
            term = delta_loss(aux.W_P, aux.b_P, deltas_steps[t].dP, gold, tgt_embeddings)
            past_terms.append(term if weight is None else term * weight)
    if fut_terms:
        fut = T.sum(T.concat(fut_terms))
    if past_terms:
        past = T.sum(T.concat(past_terms))
    return nll, fut, past


def total_objective(cfg: ModelConfig, nll_steps: Sequence[Tensor], deltas_steps: Sequence[StepDeltas],
                    aux: AuxLossParams, tgt_ids, tgt_embeddings: Tensor, tgt_mask=None) -> Tensor:
    nll, fut, past = objective_terms(cfg, nll_steps, deltas_steps, aux, tgt_ids, tgt_embeddings, tgt_mask)
    total = nll
    if fut is not None:
        total = total + (fut if cfg.future_loss_weight == 1.0 else fut * cfg.future_loss_weight)
    if past is not None:
        total = total + (past if cfg.past_loss_weight == 1.0 else past * cfg.past_loss_weight)
    return total

"""Parameter container for one model configuration, and its batch loss."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, NamedTuple

import numpy as np

from .attention import AttentionParams
from .cells import GruParams, init_future
from .decoder import DecoderParams, ModelConfig, teacher_forced_pass
from .encoder import EncoderParams
from .objective import AuxLossParams, objective_terms, step_deltas
from .tensor import Tensor


@dataclass
class ModelParams:
    encoder: EncoderParams
    attention: AttentionParams
    decoder: DecoderParams
    future: Any = None
    past: GruParams | None = None
    aux: AuxLossParams = dataclasses.field(default_factory=AuxLossParams)

    def named(self) -> dict[str, Tensor]:
        """Flat ``{dotted.name: tensor}`` view in a stable order."""
        out: dict[str, Tensor] = {}
        _walk(self, "", out)
        return out

    def __iter__(self):
        return iter(self.named().values())

    def zero_grad(self) -> None:
        for t in self:
            t.grad = None

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self))


def _walk(obj, prefix: str, out: dict) -> None:
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        name = f"{prefix}{f.name}"
        if value is None:
            continue
        if isinstance(value, Tensor):
            out[name] = value
        elif dataclasses.is_dataclass(value):
            _walk(value, name + ".", out)


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    return ModelParams(
        encoder=EncoderParams.init(rng, cfg.src_vocab, cfg.e, cfg.d_enc, cfg.d_dec,
                                   separate_future_init=cfg.separate_future_init),
        attention=AttentionParams.init(rng, cfg.d_a, cfg.d_dec, cfg.ann_dim,
                                       use_future=cfg.use_future, use_past=cfg.use_past),
        decoder=DecoderParams.init(rng, cfg),
        future=init_future(cfg.future_kind, rng, cfg.d_dec, cfg.ann_dim) if cfg.use_future else None,
        past=GruParams.init(rng, cfg.d_dec, cfg.ann_dim) if cfg.use_past else None,
        aux=AuxLossParams.init(rng, cfg),
    )


def scale_params(params: ModelParams, rng: np.random.Generator, scale: float) -> ModelParams:
    """Overwrite every entry with uniform(-scale, scale); used for gradient checks."""
    for t in params:
        t.data[...] = rng.uniform(-scale, scale, size=t.shape)
    return params


class BatchLoss(NamedTuple):
    total: Tensor
    nll: Tensor
    future: Tensor | None
    past: Tensor | None
    tokens: int


def batch_loss(cfg: ModelConfig, params: ModelParams, src, tgt, src_mask=None, tgt_mask=None) -> BatchLoss:
    """Summed objective over a (padded) batch together with its target-token count."""
    steps, nll_steps = teacher_forced_pass(cfg, params, src, tgt, src_mask, tgt_mask)
    deltas = step_deltas(steps) if (cfg.future_loss_on or cfg.past_loss_on) else None
    nll, fut, past = objective_terms(cfg, nll_steps, deltas, params.aux, tgt,
                                     params.decoder.tgt_embeddings, tgt_mask)
    total = nll
    if fut is not None:
        total = total + (fut if cfg.future_loss_weight == 1.0 else fut * cfg.future_loss_weight)
    if past is not None:
        total = total + (past if cfg.past_loss_weight == 1.0 else past * cfg.past_loss_weight)
    tokens = int(np.asarray(tgt).size if tgt_mask is None else np.asarray(tgt_mask).sum())
    return BatchLoss(total, nll, fut, past, tokens)

"""Greedy and beam-search decoding, n-best reranking, attention alignments."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .attention import precompute_keys
from .cells import ConfigurationError
from .decoder import EOS, BOS, DecoderState, ModelConfig, decode_step, start_state
from .encoder import Annotations, as_batch, encode
from .model import ModelParams
from .objective import delta_scores


@dataclass
class Hypothesis:
    tokens: list[int]
    logprob: float = 0.0
    future_loss: float = 0.0
    past_loss: float = 0.0
    attention: list[np.ndarray] = field(default_factory=list, repr=False)
    finished: bool = False
    state: DecoderState | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def normalized_logprob(self) -> float:
        return self.logprob / max(len(self.tokens), 1)

    def score(self, normalize: bool = True) -> float:
        return self.normalized_logprob if normalize else self.logprob


def _rows(ann: Annotations, keys: T.Tensor, idx: np.ndarray) -> tuple[Annotations, T.Tensor]:
    sub = Annotations(h=T.constant(ann.h.data[idx]), mask=ann.mask[idx], summary=T.constant(ann.summary.data[idx]))
    return sub, T.constant(keys.data[idx])


def _take_state(state: DecoderState, idx: np.ndarray) -> DecoderState:
    pick = lambda t: None if t is None else T.constant(t.data[idx])  # noqa: E731
    return DecoderState(pick(state.s), pick(state.sF), pick(state.sP))


def _aux_losses(params: ModelParams, cfg: ModelConfig, step) -> tuple[np.ndarray, np.ndarray]:
    """Per-row, per-token Future and Past loss values ``[k, V]`` (zeros when disabled)."""
    k, V = step.logprobs.shape
    E = params.decoder.tgt_embeddings
    fut = np.zeros((k, V))
    past = np.zeros((k, V))
    if cfg.future_loss_on:
        dF = T.sub(step.prev.sF, step.sF)
        fut = -T.log_softmax(delta_scores(params.aux.W_F, params.aux.b_F, dF, E)).data
    if cfg.past_loss_on:
        dP = T.sub(step.sP, step.prev.sP)
        past = -T.log_softmax(delta_scores(params.aux.W_P, params.aux.b_P, dP, E)).data
    return fut, past


def beam_search(cfg: ModelConfig, params: ModelParams, src_ids, beam: int = 12, max_out_len: int = 100,
                normalize: bool = True) -> list[Hypothesis]:
    """Return completed hypotheses best-first.

    The beam shrinks by one for every hypothesis that emits EOS.  If
    ``max_out_len`` is reached first, the surviving live hypotheses are
    returned too, with ``finished=False``.
    """
    if beam < 1:
        raise ConfigurationError("beam size must be at least 1")
    if max_out_len < 1:
        raise ConfigurationError("max_out_len must be at least 1")
    with T.no_tape():
        src, mask = as_batch(src_ids)
        ann = encode(params.encoder, src, mask)
        keys = precompute_keys(params.attention, ann)
        state = start_state(cfg, params, ann)
        live = [Hypothesis(tokens=[])]
        finished: list[Hypothesis] = []
        for _ in range(max_out_len):
            k = len(live)
            rows = np.zeros(k, dtype=np.int64)
            ann_k, keys_k = _rows(ann, keys, rows)
            y_prev = np.array([h.tokens[-1] if h.tokens else BOS for h in live])
            step = decode_step(cfg, params, state, y_prev, ann_k, keys=keys_k)
            logp = step.logprobs.data
            fut, past = _aux_losses(params, cfg, step)
            totals = np.array([h.logprob for h in live])[:, None] + logp
            width = beam - len(finished)
            order = np.argsort(-totals.reshape(-1), kind="stable")[:width]
            V = logp.shape[1]
            new_live, keep_rows = [], []
            for flat in order:
                r, y = divmod(int(flat), V)
                parent = live[r]
                hyp = Hypothesis(
                    tokens=parent.tokens + [y],
                    logprob=float(totals[r, y]),
                    future_loss=parent.future_loss + float(fut[r, y]),
                    past_loss=parent.past_loss + float(past[r, y]),
                    attention=parent.attention + [step.alpha.data[r].copy()],
                )
                if y == EOS:
                    hyp.finished = True
                    finished.append(hyp)
                else:
                    new_live.append(hyp)
                    keep_rows.append(r)
            if not new_live or len(finished) >= beam:
                live = []
                break
            idx = np.array(keep_rows)
            state = _take_state(step.state, idx)
            for j, hyp in enumerate(new_live):
                hyp.state = _take_state(state, np.array([j]))
            live = new_live
        out = finished + live
    return sorted(out, key=lambda h: -h.score(normalize))


def greedy_decode(cfg: ModelConfig, params: ModelParams, src_ids, max_out_len: int = 100) -> Hypothesis:
    """Follow the argmax token (first index on ties) until EOS or the length cap."""
    with T.no_tape():
        src, mask = as_batch(src_ids)
        ann = encode(params.encoder, src, mask)
        keys = precompute_keys(params.attention, ann)
        state = start_state(cfg, params, ann)
        hyp = Hypothesis(tokens=[])
        y = BOS
        for _ in range(max_out_len):
            step = decode_step(cfg, params, state, [y], ann, keys=keys)
            logp = step.logprobs.data[0]
            y = int(np.argmax(logp))
            fut, past = _aux_losses(params, cfg, step)
            hyp.tokens.append(y)
            hyp.logprob += float(logp[y])
            hyp.future_loss += float(fut[0, y])
            hyp.past_loss += float(past[0, y])
            hyp.attention.append(step.alpha.data[0].copy())
            state = step.state
            if y == EOS:
                hyp.finished = True
                break
    return hyp


def greedy_batch(cfg: ModelConfig, params: ModelParams, sources: Sequence[Sequence[int]],
                 max_out_len: int = 100, batch_size: int = 64) -> list[list[int]]:
    """Greedy token sequences (EOS included when produced) for many sentences at once."""
    from .trainer import pad_batch

    out: list[list[int]] = []
    with T.no_tape():
        for start in range(0, len(sources), batch_size):
            chunk = [list(s) for s in sources[start:start + batch_size]]
            src, mask = pad_batch(chunk)
            ann = encode(params.encoder, src, mask)
            keys = precompute_keys(params.attention, ann)
            state = start_state(cfg, params, ann)
            B = len(chunk)
            y = np.full(B, BOS, dtype=np.int64)
            done = np.zeros(B, dtype=bool)
            seqs = [[] for _ in range(B)]
            for _ in range(max_out_len):
                step = decode_step(cfg, params, state, y, ann, keys=keys)
                y = np.argmax(step.logprobs.data, axis=1)
                for b in np.flatnonzero(~done):
                    seqs[b].append(int(y[b]))
                done |= y == EOS
                if done.all():
                    break
                state = step.state
            out.extend(seqs)
    return out


def rerank(hyps: Sequence[Hypothesis], weights: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> list[Hypothesis]:
    """Stable sort by ``w_nll*logp/|h| - w_F*future/|h| - w_P*past/|h|``, best first."""
    w_nll, w_f, w_p = weights

    def key(h: Hypothesis) -> float:
        n = max(len(h.tokens), 1)
        return w_nll * h.logprob / n - w_f * h.future_loss / n - w_p * h.past_loss / n

    return sorted(hyps, key=lambda h: -key(h))


def extract_alignment(hyp: Hypothesis) -> list[tuple[int, int]]:
    """``(target_pos, source_pos)`` links, 1-based, from each step's attention argmax.

    The EOS step has no target word and contributes no link; ties go to the
    leftmost source position.
    """
    links = []
    for t, (tok, row) in enumerate(zip(hyp.tokens, hyp.attention), start=1):
        if tok == EOS:
            continue
        links.append((t, int(np.argmax(row)) + 1))
    return links


def translate(cfg: ModelConfig, params: ModelParams, sources: Sequence[Sequence[int]], beam: int = 12,
              max_out_len: int = 100, rerank_weights: tuple[float, float, float] | None = None,
              normalize: bool = True) -> list[list[Hypothesis]]:
    """n-best lists for every source sentence, optionally reranked."""
    out = []
    for src in sources:
        if beam == 1 and rerank_weights is None:
            hyps = [greedy_decode(cfg, params, src, max_out_len)]
        else:
            hyps = beam_search(cfg, params, src, beam, max_out_len, normalize)
        if rerank_weights is not None:
            hyps = rerank(hyps, rerank_weights)
        out.append(hyps)
    return out

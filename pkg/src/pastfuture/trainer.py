"""Mini-batch training: padding, Adam with validation-driven halving, checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import DataError, ParallelCorpus
from .decoder import PAD, ModelConfig
from .model import ModelParams, batch_loss, init_params
from .tensor import ContractViolation, Tape, backward, no_tape

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict | None = None) -> None:
    """Bias-corrected Adam update, in place.

    ``grads`` defaults to each tensor's ``.grad``; a parameter without a
    gradient is a contract violation.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            raise ContractViolation(f"no gradient for parameter {name}")
        if name not in state.m:
            state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_gradients(params: dict, max_norm: float) -> float:
    """Scale all gradients by ``min(1, max_norm / ||g||)``; returns the pre-clip norm."""
    norm = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params.values() if p.grad is not None))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


@dataclass
class Batch:
    src: np.ndarray
    src_mask: np.ndarray
    tgt: np.ndarray
    tgt_mask: np.ndarray
    index: list[int]

    def __len__(self) -> int:
        return len(self.index)


def pad_batch(seqs: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for k, s in enumerate(seqs):
        ids[k, :len(s)] = s
        mask[k, :len(s)] = True
    return ids, mask


def length_filter(corpus: ParallelCorpus, max_len: int) -> list[int]:
    """Indices of pairs whose source and target (without EOS) are at most ``max_len`` long."""
    return [k for k, (s, t) in enumerate(corpus.pairs) if len(s) <= max_len and len(t) - 1 <= max_len]


def make_batches(corpus: ParallelCorpus, batch_size: int, max_len: int, seed: int | None) -> list[Batch]:
    """Length-filtered, optionally shuffled (``seed=None`` keeps corpus order), padded batches."""
    if batch_size < 1 or max_len < 1:
        raise ValueError("batch_size and max_len must be positive")
    keep = length_filter(corpus, max_len)
    if not keep:
        raise DataError(f"no sentence pair survives the length filter max_len={max_len}")
    if seed is not None:
        keep = [keep[i] for i in np.random.default_rng(seed).permutation(len(keep))]
    batches = []
    for start in range(0, len(keep), batch_size):
        idx = keep[start:start + batch_size]
        src, smask = pad_batch([corpus.pairs[i][0] for i in idx])
        tgt, tmask = pad_batch([corpus.pairs[i][1] for i in idx])
        batches.append(Batch(src, smask, tgt, tmask, idx))
    return batches


@dataclass
class TrainConfig:
    batch_size: int = 16
    max_len: int = 50
    lr0: float = 0.003
    halve_on_plateau: bool = True
    min_lr_ratio: float = 1.0 / 64
    max_epochs: int = 30
    shuffle_seed: int = 1
    grad_clip_norm: float = 1.0
    init_from: str | None = None
    target_dev_nll: float | None = None  # optional early exit once dev NLL drops below this

    def __post_init__(self):
        if self.batch_size < 1 or self.max_len < 1:
            raise ValueError("batch_size and max_len must be positive")


@dataclass
class EpochMetrics:
    epoch: int
    train_nll: float
    train_future: float
    train_past: float
    dev_nll: float
    lr: float

    def tsv(self) -> str:
        return (f"{self.epoch}\t{self.train_nll:.6f}\t{self.train_future:.6f}\t"
                f"{self.train_past:.6f}\t{self.dev_nll:.6f}\t{self.lr:.8g}")


def evaluate(cfg: ModelConfig, params: ModelParams, corpus: ParallelCorpus, batch_size: int = 64,
             max_len: int | None = None) -> dict[str, float]:
    """Per-token NLL and auxiliary losses over a corpus, without recording a tape."""
    totals = {"nll": 0.0, "future": 0.0, "past": 0.0}
    tokens = 0
    limit = max_len or max(max(len(s), len(t)) for s, t in corpus.pairs)
    with no_tape():
        for b in make_batches(corpus, batch_size, limit, seed=None):
            out = batch_loss(cfg, params, b.src, b.tgt, b.src_mask, b.tgt_mask)
            totals["nll"] += float(out.nll.data)
            totals["future"] += float(out.future.data) if out.future is not None else 0.0
            totals["past"] += float(out.past.data) if out.past is not None else 0.0
            tokens += out.tokens
    return {k: v / tokens for k, v in totals.items()}


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, cfg: ModelConfig, params: ModelParams, adam: AdamState | None = None,
                    extra: dict | None = None) -> None:
    arrays = {f"param/{k}": t.data for k, t in params.named().items()}
    meta = {"version": CHECKPOINT_VERSION, "model": cfg.to_dict(), "extra": extra or {}}
    if adam is not None:
        meta["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps, "t": adam.t}
        arrays.update({f"adam_m/{k}": v for k, v in adam.m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in adam.v.items()})
    arrays["__meta__"] = np.array(json.dumps(meta))
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def _read(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError) as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from None
    if "__meta__" not in arrays:
        raise CheckpointError(f"{path} is not a checkpoint (no metadata)")
    meta = json.loads(str(arrays.pop("__meta__")))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
    return meta, arrays


def load_checkpoint(path, cfg: ModelConfig | None = None) -> tuple[ModelConfig, ModelParams, AdamState | None]:
    """Load and validate every tensor shape against the configuration.

    When ``cfg`` is given it must equal the stored configuration.
    """
    meta, arrays = _read(path)
    stored = ModelConfig.from_dict(meta["model"])
    if cfg is not None and cfg != stored:
        raise CheckpointError(f"checkpoint {path} was trained with a different model configuration")
    params = init_params(stored, seed=0)
    named = params.named()
    for name, t in named.items():
        key = f"param/{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint lacks parameter {name}")
        if arrays[key].shape != t.shape:
            raise CheckpointError(f"{name}: checkpoint shape {arrays[key].shape} != expected {t.shape}")
        t.data = np.array(arrays[key], dtype=np.float64)
    extra_names = {k[6:] for k in arrays if k.startswith("param/")} - set(named)
    if extra_names:
        raise CheckpointError(f"checkpoint has unknown parameters {sorted(extra_names)}")
    adam = None
    if "adam" in meta:
        a = meta["adam"]
        adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], t=a["t"])
        adam.m = {k[7:]: v.astype(np.float64) for k, v in arrays.items() if k.startswith("adam_m/")}
        adam.v = {k[7:]: v.astype(np.float64) for k, v in arrays.items() if k.startswith("adam_v/")}
    return stored, params, adam


def load_shared(params: ModelParams, path) -> tuple[list[str], list[str]]:
    """Two-pass initialisation: copy every parameter the checkpoint shares by name.

    The decoder GRU's input matrices grow when Future/Past inputs are added;
    their leading columns (embedding and context inputs, same order as the
    baseline) are copied and only the new columns keep their fresh values.
    Returns ``(loaded, fresh)`` parameter names.
    """
    _, arrays = _read(path)
    loaded, fresh = [], []
    for name, t in params.named().items():
        src = arrays.get(f"param/{name}")
        if src is None:
            fresh.append(name)
            continue
        if src.shape == t.shape:
            t.data = np.array(src, dtype=np.float64)
        elif (name.startswith("decoder.dec_cell.W") and src.ndim == 2
              and src.shape[0] == t.shape[0] and src.shape[1] < t.shape[1]):
            t.data[:, :src.shape[1]] = src
        else:
            raise CheckpointError(f"{name}: checkpoint shape {src.shape} incompatible with {t.shape}")
        loaded.append(name)
    return loaded, fresh


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochMetrics]
    best_dev_nll: float
    adam: AdamState


def train(tcfg: TrainConfig, cfg: ModelConfig, params: ModelParams, train_corpus: ParallelCorpus,
          dev_corpus: ParallelCorpus, checkpoint: str | Path | None = None,
          metrics_log: str | Path | None = None,
          on_epoch: Callable[[EpochMetrics], bool | None] | None = None,
          restore_best: bool = True) -> TrainResult:
    """Train ``params`` in place; the best dev-NLL weights are kept (and saved if ``checkpoint``).

    ``on_epoch`` sees each epoch's metrics and may return True to stop early.
    """
    if tcfg.init_from:
        loaded, fresh = load_shared(params, tcfg.init_from)
        log.info("initialised %d tensors from %s, %d fresh", len(loaded), tcfg.init_from, len(fresh))
    named = params.named()
    adam = AdamState(lr=tcfg.lr0)
    floor = tcfg.lr0 * tcfg.min_lr_ratio
    best = math.inf
    best_arrays = None
    history: list[EpochMetrics] = []
    if metrics_log is not None:
        Path(metrics_log).write_text("")

    for epoch in range(1, tcfg.max_epochs + 1):
        sums = np.zeros(3)
        tokens = 0
        for batch in make_batches(train_corpus, tcfg.batch_size, tcfg.max_len, tcfg.shuffle_seed + epoch):
            params.zero_grad()
            with Tape() as tape:
                out = batch_loss(cfg, params, batch.src, batch.tgt, batch.src_mask, batch.tgt_mask)
                loss = out.total * (1.0 / out.tokens)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            backward(loss, tape)
            clip_gradients(named, tcfg.grad_clip_norm)
            adam_step(adam, named)
            sums += [float(out.nll.data),
                     float(out.future.data) if out.future is not None else 0.0,
                     float(out.past.data) if out.past is not None else 0.0]
            tokens += out.tokens

        dev = evaluate(cfg, params, dev_corpus)["nll"]
        metrics = EpochMetrics(epoch, *(sums / tokens), dev, adam.lr)
        history.append(metrics)
        if metrics_log is not None:
            with open(metrics_log, "a") as fh:
                fh.write(metrics.tsv() + "\n")
        log.info("epoch %d %s", epoch, metrics.tsv())
        stop = bool(on_epoch(metrics)) if on_epoch is not None else False

        if dev < best:
            best = dev
            best_arrays = {k: t.data.copy() for k, t in named.items()}
            if checkpoint is not None:
                save_checkpoint(checkpoint, cfg, params, adam, extra={"epoch": epoch, "dev_nll": dev})
        elif tcfg.halve_on_plateau:
            adam.lr = max(adam.lr / 2.0, floor)
        if stop or (tcfg.target_dev_nll is not None and dev < tcfg.target_dev_nll):
            break

    if restore_best and best_arrays is not None:
        for k, t in named.items():
            t.data[...] = best_arrays[k]
    return TrainResult(params, history, best, adam)


def config_dict(tcfg: TrainConfig) -> dict:
    return asdict(tcfg)

"""Vocabularies, corpus files, and synthetic parallel tasks."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cells import ConfigurationError
from .decoder import BOS, EOS, PAD, UNK

RESERVED = ("<pad>", "<unk>", "<s>", "</s>")


class DataError(ValueError):
    pass


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED:
            raise DataError(f"vocabulary must start with {RESERVED}")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    def token(self, i: int) -> str:
        return self.tokens[i]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.tokens[i])
        return out

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln != ""])

    @classmethod
    def from_size(cls, size: int) -> "Vocabulary":
        """Synthetic vocabulary ``w4 .. w{size-1}`` after the reserved entries."""
        return cls(list(RESERVED) + [f"w{i}" for i in range(len(RESERVED), size)])


def build_vocab(lines: Iterable[str], max_size: int) -> Vocabulary:
    """Most frequent tokens first, ties broken lexicographically; ``max_size`` counts reserved ids."""
    counts = Counter(tok for line in lines for tok in line.split())
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted(counts, key=lambda t: (-counts[t], t))
    keep = max(0, max_size - len(RESERVED))
    return Vocabulary(list(RESERVED) + ranked[:keep])


def map_ids(vocab: Vocabulary, line: str) -> list[int]:
    return [vocab.id(tok) for tok in line.split()]


@dataclass
class ParallelCorpus:
    pairs: list[tuple[list[int], list[int]]]
    # optional gold links per pair, 1-based (target_pos, source_pos)
    alignments: list[set[tuple[int, int]]] | None = None

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def subset(self, idx: Sequence[int]) -> "ParallelCorpus":
        al = None if self.alignments is None else [self.alignments[i] for i in idx]
        return ParallelCorpus([self.pairs[i] for i in idx], al)


def load_corpus(src_path, tgt_path, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> ParallelCorpus:
    """Line-aligned UTF-8 files; EOS is appended to every target."""
    for p in (src_path, tgt_path):
        if not Path(p).is_file():
            raise DataError(f"corpus file not found: {p}")
    src_lines = Path(src_path).read_text(encoding="utf-8").splitlines()
    tgt_lines = Path(tgt_path).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise DataError(f"{src_path} has {len(src_lines)} lines but {tgt_path} has {len(tgt_lines)}")
    pairs = []
    for s, t in zip(src_lines, tgt_lines):
        sid, tid = map_ids(src_vocab, s), map_ids(tgt_vocab, t)
        if sid and tid:
            pairs.append((sid, tid + [EOS]))
    if not pairs:
        raise DataError("corpus has no non-empty sentence pairs")
    return ParallelCorpus(pairs)


class SyntheticTask(str, enum.Enum):
    COPY = "copy"
    REVERSE = "reverse"
    LEX_SUB_SHIFT = "lex-sub-shift"


def gen_synthetic(task, vocab_size: int, len_range: tuple[int, int], n_pairs: int, seed: int,
                  shift: int = 3) -> ParallelCorpus:
    """Random source strings over ``w4..w{V-1}`` and their deterministic targets.

    LEX_SUB_SHIFT maps each token to the one ``shift`` places later (cyclic over
    the content tokens) and swaps neighbours inside every aligned window of two
    positions, so gold alignments are non-monotone.
    """
    task = SyntheticTask(task)
    lo, hi = len_range
    if vocab_size < len(RESERVED) + 1 or lo < 1 or hi < lo or n_pairs < 1:
        raise ConfigurationError(f"invalid synthetic task config: V={vocab_size} len={len_range} n={n_pairs}")
    n_content = vocab_size - len(RESERVED)
    rng = np.random.default_rng(seed)
    pairs, links = [], []
    for _ in range(n_pairs):
        n = int(rng.integers(lo, hi + 1))
        src = (rng.integers(0, n_content, size=n) + len(RESERVED)).tolist()
        if task is SyntheticTask.COPY:
            order = list(range(n))
            tgt = list(src)
        elif task is SyntheticTask.REVERSE:
            order = list(reversed(range(n)))
            tgt = [src[i] for i in order]
        else:
            order = []
            for k in range(0, n, 2):
                order.extend([k + 1, k] if k + 1 < n else [k])
            tgt = [len(RESERVED) + (src[i] - len(RESERVED) + shift) % n_content for i in order]
        pairs.append((src, tgt + [EOS]))
        links.append({(j + 1, i + 1) for j, i in enumerate(order)})
    return ParallelCorpus(pairs, links)


def write_corpus(corpus: ParallelCorpus, vocab: Vocabulary, src_path, tgt_path, align_path=None) -> None:
    src_lines, tgt_lines = [], []
    for s, t in corpus.pairs:
        src_lines.append(" ".join(vocab.decode(s)))
        tgt_lines.append(" ".join(vocab.decode(t)))
    Path(src_path).write_text("".join(x + "\n" for x in src_lines), encoding="utf-8")
    Path(tgt_path).write_text("".join(x + "\n" for x in tgt_lines), encoding="utf-8")
    if align_path is not None and corpus.alignments is not None:
        Path(align_path).write_text(
            "".join(" ".join(f"{t}-{i}" for t, i in sorted(a)) + "\n" for a in corpus.alignments),
            encoding="utf-8",
        )

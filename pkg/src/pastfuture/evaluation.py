"""Corpus BLEU and alignment error rate, plus over/under-translation counts."""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .cells import ConfigurationError
from .data import DataError

Link = tuple[int, int]


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(hyps: Sequence[str], refs: Sequence[str], max_n: int = 4,
               case_sensitive: bool = True) -> tuple[list[int], list[int], int, int]:
    """Clipped n-gram matches, n-gram totals, hypothesis length, reference length."""
    if len(hyps) != len(refs):
        raise DataError(f"{len(hyps)} hypotheses but {len(refs)} references")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        if not case_sensitive:
            hyp, ref = hyp.lower(), ref.lower()
        h, r = hyp.split(), ref.split()
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def corpus_bleu(hyps: Sequence[str], refs: Sequence[str], max_n: int = 4,
                case_sensitive: bool = True) -> float:
    """Unsmoothed corpus BLEU in percent, single reference per line."""
    if not hyps:
        raise DataError("BLEU needs at least one line")
    matches, totals, c, r = bleu_stats(hyps, refs, max_n, case_sensitive)
    if c == 0 or any(m == 0 for m in matches):
        return 0.0
    log_prec = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_prec)


@dataclass
class AlignmentGold:
    sure: list[set[Link]]
    possible: list[set[Link]] = field(default_factory=list)

    def __post_init__(self):
        if not self.possible:
            self.possible = [set(s) for s in self.sure]
        # S is always a subset of P
        self.possible = [p | s for p, s in zip(self.possible, self.sure)]


def parse_links(line: str) -> tuple[set[Link], set[Link]]:
    """``"1-1 2?3"`` -> sure {(1,1)}, possible {(1,1),(2,3)}; pairs are target-source."""
    sure, possible = set(), set()
    for tok in line.split():
        sep = "-" if "-" in tok else "?"
        t, i = tok.split(sep)
        link = (int(t), int(i))
        possible.add(link)
        if sep == "-":
            sure.add(link)
    return sure, possible


def load_gold(path) -> AlignmentGold:
    sure, possible = [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        s, p = parse_links(line)
        sure.append(s)
        possible.append(p)
    return AlignmentGold(sure, possible)


def format_links(links: Iterable[Link]) -> str:
    return " ".join(f"{t}-{i}" for t, i in sorted(links))


def aer(pred: Sequence[set[Link]], gold: AlignmentGold) -> float:
    """Alignment error rate in percent, with counts summed over the corpus."""
    if len(pred) != len(gold.sure):
        raise DataError(f"{len(pred)} predicted alignments but {len(gold.sure)} gold")
    a_s = a_p = n_a = n_s = 0
    for A, S, P in zip(pred, gold.sure, gold.possible):
        A = set(A)
        a_s += len(A & S)
        a_p += len(A & P)
        n_a += len(A)
        n_s += len(S)
    if n_a + n_s == 0:
        return 0.0
    return 100.0 * (1.0 - (a_s + a_p) / (n_a + n_s))


class CoverageTask(str, enum.Enum):
    COPY = "copy"
    PERMUTED_COPY = "permuted-copy"


def coverage_diagnostics(src_ids: Sequence, hyp_ids: Sequence, task="copy") -> tuple[float, float]:
    """Over- and under-translation ratios against the tokens that must each appear once.

    For COPY ``src_ids`` is the source itself; for PERMUTED_COPY pass the
    reference target (any permutation of it is a perfect translation).  Both
    ratios are counted per source token occurrence:
    over = sum of surplus copies / |src|, under = sum of missing copies / |src|.
    """
    try:
        CoverageTask(task)
    except ValueError:
        raise ConfigurationError(f"coverage diagnostics do not support task {task!r}") from None
    if len(src_ids) == 0:
        return 0.0, 0.0
    want, got = Counter(src_ids), Counter(hyp_ids)
    over = sum(max(got[t] - n, 0) for t, n in want.items())
    under = sum(max(n - got[t], 0) for t, n in want.items())
    return over / len(src_ids), under / len(src_ids)


def corpus_coverage(srcs: Sequence[Sequence], hyps: Sequence[Sequence], task="copy") -> tuple[float, float]:
    """Pooled over/under ratios: surplus and missing counts summed before dividing."""
    total = over = under = 0.0
    for s, h in zip(srcs, hyps):
        o, u = coverage_diagnostics(s, h, task)
        over += o * len(s)
        under += u * len(s)
        total += len(s)
    return (over / total, under / total) if total else (0.0, 0.0)

"""Command-line entry point: ``pastfuture {train,translate,evaluate,gradcheck,gen-data}``.

Configuration files are flat ``key = value`` documents (``#`` starts a
comment).  Exit codes: 0 success, 1 gradient check failed, 2 bad
configuration, 3 bad data, 4 numeric divergence, 5 checkpoint mismatch.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from .cells import ConfigurationError
from .data import DataError, SyntheticTask, Vocabulary, build_vocab, gen_synthetic, load_corpus, map_ids, write_corpus
from .decoder import EOS, ModelConfig, PRESETS, preset
from .encoder import EmptySourceError, VocabError
from .evaluation import aer, corpus_bleu, corpus_coverage, format_links, load_gold, parse_links
from .inference import beam_search, extract_alignment, greedy_decode, rerank
from .model import batch_loss, init_params, scale_params
from .tensor import finite_difference_report
from .trainer import CheckpointError, DivergenceError, TrainConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger("pastfuture")

EXIT_OK, EXIT_GRADCHECK, EXIT_CONFIG, EXIT_DATA, EXIT_NAN, EXIT_CHECKPOINT = 0, 1, 2, 3, 4, 5
GRADCHECK_TOL = 1e-4

_SECTION = "run"
_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)} - {"src_vocab", "tgt_vocab"}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_PATH_KEYS = {"train_src", "train_tgt", "dev_src", "dev_tgt", "src_vocab_file", "tgt_vocab_file",
              "checkpoint", "metrics_log"}
_OTHER_KEYS = {"preset", "seed", "vocab_size", "beam", "max_out_len", "rerank_weights", "length_normalize"}

DEFAULT_CONFIG = """\
# pastfuture run configuration (flat key = value)
preset = baseline
seed = 1

# model (full-scale values in comments)
e = 32              # 512
d_enc = 64          # 1024
d_dec = 64          # 1024
d_o = 64            # 512

# training
batch_size = 16     # 80
max_len = 50        # 50
lr0 = 0.003         # 0.0005
max_epochs = 30
vocab_size = 30000

# inference
beam = 12           # 12
max_out_len = 100
rerank_weights = 1,1,1
length_normalize = true

# paths (relative to this file)
train_src = train.src
train_tgt = train.tgt
dev_src = dev.src
dev_tgt = dev.tgt
src_vocab_file = vocab.src
tgt_vocab_file = vocab.tgt
checkpoint = model.npz
metrics_log = metrics.tsv
"""


class UsageError(ConfigurationError):
    pass


@dataclasses.dataclass
class RunConfig:
    model: dict
    train: TrainConfig
    paths: dict[str, Path]
    preset: str = "baseline"
    seed: int = 1
    vocab_size: int = 30000
    beam: int = 12
    max_out_len: int = 100
    rerank_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    length_normalize: bool = True

    def model_config(self, src_vocab: int, tgt_vocab: int) -> ModelConfig:
        return preset(self.preset, src_vocab=src_vocab, tgt_vocab=tgt_vocab, **self.model)

    def path(self, key: str) -> Path:
        if key not in self.paths:
            raise UsageError(f"configuration needs '{key}'")
        return self.paths[key]

    def dump(self) -> str:
        lines = [f"preset = {self.preset}", f"seed = {self.seed}", f"vocab_size = {self.vocab_size}",
                 f"beam = {self.beam}", f"max_out_len = {self.max_out_len}",
                 "rerank_weights = " + ",".join(repr(w) for w in self.rerank_weights),
                 f"length_normalize = {str(self.length_normalize).lower()}"]
        lines += [f"{k} = {_fmt(v)}" for k, v in sorted(self.model.items())]
        lines += [f"{k} = {_fmt(v)}" for k, v in dataclasses.asdict(self.train).items() if v is not None]
        lines += [f"{k} = {v}" for k, v in sorted(self.paths.items())]
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if hasattr(v, "value"):
        return v.value
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(key: str, raw: str, kind):
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise UsageError(f"bad value for {key}: {raw!r}") from None
    return raw


def _field_kind(cls, name):
    hints = {"bool": bool, "int": int, "float": float}
    f = next(f for f in dataclasses.fields(cls) if f.name == name)
    text = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    return hints.get(text.split("|")[0].strip(), str)


def parse_rerank_weights(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"rerank weights must be three numbers, got {text!r}") from None
    if len(vals) != 3:
        raise UsageError(f"rerank weights must be three numbers, got {text!r}")
    return vals


def load_run_config(path) -> RunConfig:
    """Parse a flat config file; relative paths resolve against the file's directory."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string(f"[{_SECTION}]\n" + path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as err:
        raise UsageError(f"cannot parse {path}: {err}") from None
    raw = dict(parser[_SECTION])
    unknown = set(raw) - _MODEL_KEYS - _TRAIN_KEYS - _PATH_KEYS - _OTHER_KEYS
    if unknown:
        raise UsageError(f"unknown configuration keys: {sorted(unknown)}")

    model = {k: _parse_value(k, v, _field_kind(ModelConfig, k)) for k, v in raw.items() if k in _MODEL_KEYS}
    tkw = {k: _parse_value(k, v, _field_kind(TrainConfig, k)) for k, v in raw.items() if k in _TRAIN_KEYS}
    base = path.parent
    paths = {k: (base / v if not Path(v).is_absolute() else Path(v)) for k, v in raw.items() if k in _PATH_KEYS}
    if "init_from" in tkw:
        tkw["init_from"] = str(base / tkw["init_from"])
    cfg = RunConfig(
        model=model,
        train=TrainConfig(**tkw),
        paths=paths,
        preset=raw.get("preset", "baseline"),
        seed=_parse_value("seed", raw.get("seed", "1"), int),
        vocab_size=_parse_value("vocab_size", raw.get("vocab_size", "30000"), int),
        beam=_parse_value("beam", raw.get("beam", "12"), int),
        max_out_len=_parse_value("max_out_len", raw.get("max_out_len", "100"), int),
        rerank_weights=parse_rerank_weights(raw.get("rerank_weights", "1,1,1")),
        length_normalize=_parse_value("length_normalize", raw.get("length_normalize", "true"), bool),
    )
    if cfg.preset not in PRESETS:
        raise UsageError(f"unknown preset {cfg.preset!r}; choose from {sorted(PRESETS)}")
    cfg.model_config(5, 5)  # validate overrides early
    return cfg


def _vocabularies(rc: RunConfig, build: bool) -> tuple[Vocabulary, Vocabulary]:
    out = []
    for side in ("src", "tgt"):
        vpath = rc.path(f"{side}_vocab_file")
        if vpath.is_file():
            out.append(Vocabulary.load(vpath))
        elif build:
            corpus = rc.path(f"train_{side}")
            if not corpus.is_file():
                raise DataError(f"corpus file not found: {corpus}")
            vocab = build_vocab(corpus.read_text(encoding="utf-8").splitlines(), rc.vocab_size)
            vocab.save(vpath)
            log.info("built %s vocabulary of %d types -> %s", side, len(vocab), vpath)
            out.append(vocab)
        else:
            raise DataError(f"vocabulary file not found: {vpath}")
    return out[0], out[1]


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    rc = load_run_config(args.config)
    if args.seed is not None:
        rc.seed = args.seed
    if args.init_from:
        rc.train = dataclasses.replace(rc.train, init_from=args.init_from)
    sv, tv = _vocabularies(rc, build=True)
    train_c = load_corpus(rc.path("train_src"), rc.path("train_tgt"), sv, tv)
    dev_c = load_corpus(rc.path("dev_src"), rc.path("dev_tgt"), sv, tv)
    cfg = rc.model_config(len(sv), len(tv))
    params = init_params(cfg, rc.seed)
    ckpt = rc.path("checkpoint")
    Path(str(ckpt) + ".cfg").write_text(rc.dump(), encoding="utf-8")
    t0 = time.time()
    result = train(rc.train, cfg, params, train_c, dev_c, checkpoint=ckpt,
                   metrics_log=rc.paths.get("metrics_log"))
    log.info("trained %d epochs in %.1fs, best dev nll %.4f", len(result.history), time.time() - t0,
             result.best_dev_nll)
    return EXIT_OK


def _read_sources(path: Path, vocab: Vocabulary) -> list[list[int]]:
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    return [map_ids(vocab, line) for line in path.read_text(encoding="utf-8").splitlines()]


def cmd_translate(args) -> int:
    rc = load_run_config(args.config)
    sv, tv = _vocabularies(rc, build=False)
    cfg = rc.model_config(len(sv), len(tv))
    _, params, _ = load_checkpoint(rc.path("checkpoint"), cfg)
    beam = 1 if args.greedy else (args.beam or rc.beam)
    weights = parse_rerank_weights(args.rerank_weights) if args.rerank_weights else None
    sources = _read_sources(Path(args.input), sv)

    lines, nbest_lines, align_lines = [], [], []
    for sid, src in enumerate(sources):
        if not src:
            lines.append("")
            align_lines.append("")
            continue
        if args.greedy:
            hyps = [greedy_decode(cfg, params, src, rc.max_out_len)]
        else:
            hyps = beam_search(cfg, params, src, beam, rc.max_out_len, rc.length_normalize)
        if weights is not None:
            hyps = rerank(hyps, weights)
        best = hyps[0]
        lines.append(" ".join(tv.decode(best.tokens)))
        align_lines.append(format_links(extract_alignment(best)))
        if args.nbest:
            for h in hyps[: int(args.nbest[0])]:
                nbest_lines.append(f"{sid} ||| {' '.join(tv.decode(h.tokens))} ||| {-h.logprob:.6f} ||| "
                                   f"{h.future_loss:.6f} ||| {h.past_loss:.6f}")

    text = "".join(line + "\n" for line in lines)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.dump_alignments:
        Path(args.dump_alignments).write_text("".join(a + "\n" for a in align_lines), encoding="utf-8")
    if args.nbest:
        Path(args.nbest[1]).write_text("".join(n + "\n" for n in nbest_lines), encoding="utf-8")
    return EXIT_OK


def _lines(path) -> list[str]:
    if not Path(path).is_file():
        raise DataError(f"file not found: {path}")
    return Path(path).read_text(encoding="utf-8").splitlines()


def cmd_evaluate(args) -> int:
    hyps, refs = _lines(args.hyp), _lines(args.ref)
    report: dict[str, float] = {"bleu": round(corpus_bleu(hyps, refs), 4) if hyps else 0.0}
    if args.gold_alignments:
        if not args.alignments:
            raise UsageError("--gold-alignments needs --alignments (predicted links)")
        gold = load_gold(args.gold_alignments)
        pred = [parse_links(line)[1] for line in _lines(args.alignments)]
        report["aer"] = round(aer(pred, gold), 4)
    if args.task:
        if args.task == "copy":
            if not args.src:
                raise UsageError("task copy needs --src")
            want = [line.split() for line in _lines(args.src)]
        else:
            want = [line.split() for line in refs]
        if len(want) != len(hyps):
            raise DataError(f"{len(want)} reference lines but {len(hyps)} hypotheses")
        over, under = corpus_coverage(want, [h.split() for h in hyps], args.task)
        report["over_ratio"] = round(over, 6)
        report["under_ratio"] = round(under, 6)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def gradcheck_report(names: Sequence[str], dims: int = 8, vocab: int = 11, seed: int = 0,
                     h: float = 1e-4) -> dict[str, dict[str, float]]:
    """Max relative error per parameter tensor for each preset on one random pair."""
    rng = np.random.default_rng(seed)
    src = rng.integers(4, vocab, size=5).tolist()
    tgt = rng.integers(4, vocab, size=3).tolist() + [EOS]
    out = {}
    for name in names:
        cfg = preset(name, src_vocab=vocab, tgt_vocab=vocab, e=dims, d_enc=dims, d_dec=dims, d_o=dims)
        params = init_params(cfg, seed)
        scale_params(params, np.random.default_rng(seed + 1), 0.5)
        out[name] = finite_difference_report(lambda: batch_loss(cfg, params, src, tgt).total,
                                             params.named(), h=h, stencil=2, extended=True)
    return out


def cmd_gradcheck(args) -> int:
    names = args.preset or list(PRESETS)
    for name in names:
        if name not in PRESETS:
            raise UsageError(f"unknown preset {name!r}")
    report = gradcheck_report(names, args.dims, args.vocab, args.seed if args.seed is not None else 0)
    failed = []
    for name, errs in report.items():
        worst = max(errs, key=errs.get)
        ok = errs[worst] < GRADCHECK_TOL
        print(f"{name}\t{errs[worst]:.3e}\t{worst}\t{'ok' if ok else 'FAIL'}")
        failed += [f"{name}:{k}" for k, v in errs.items() if not v < GRADCHECK_TOL]
    if failed:
        print("failing parameters: " + " ".join(failed), file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_gen_data(args) -> int:
    seed = args.seed if args.seed is not None else 1
    corpus = gen_synthetic(args.task, args.vocab_size, (args.min_len, args.max_len), args.n_pairs, seed,
                           shift=args.shift)
    vocab = Vocabulary.from_size(args.vocab_size)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus, vocab, f"{prefix}.src", f"{prefix}.tgt", f"{prefix}.align")
    vocab.save(f"{prefix}.vocab")
    log.info("wrote %d %s pairs to %s.{src,tgt,align,vocab}", len(corpus), args.task, prefix)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pastfuture", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--init-from", help="checkpoint whose shared parameters seed this model")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    tr = sub.add_parser("translate", help="decode an input file with a trained checkpoint")
    tr.add_argument("--config", required=True)
    tr.add_argument("--input", required=True)
    tr.add_argument("--output")
    tr.add_argument("--beam", type=int)
    tr.add_argument("--greedy", action="store_true")
    tr.add_argument("--rerank-weights", metavar="a,b,c")
    tr.add_argument("--dump-alignments", metavar="PATH")
    tr.add_argument("--nbest", nargs=2, metavar=("K", "PATH"))
    tr.add_argument("--seed", type=int)
    tr.set_defaults(func=cmd_translate)

    ev = sub.add_parser("evaluate", help="score a hypothesis file against references")
    ev.add_argument("--hyp", required=True)
    ev.add_argument("--ref", required=True)
    ev.add_argument("--src")
    ev.add_argument("--alignments", help="predicted links, one sentence per line")
    ev.add_argument("--gold-alignments")
    ev.add_argument("--task", choices=["copy", "permuted-copy"])
    ev.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("gradcheck", help="finite-difference check of every parameter")
    g.add_argument("--dims", type=int, default=8)
    g.add_argument("--vocab", type=int, default=11)
    g.add_argument("--preset", action="append")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gradcheck)

    d = sub.add_parser("gen-data", help="write a synthetic parallel corpus")
    d.add_argument("--task", choices=[t.value for t in SyntheticTask], default="copy")
    d.add_argument("--vocab-size", type=int, default=20)
    d.add_argument("--min-len", type=int, default=5)
    d.add_argument("--max-len", type=int, default=12)
    d.add_argument("--n-pairs", type=int, default=2000)
    d.add_argument("--shift", type=int, default=3)
    d.add_argument("--seed", type=int)
    d.add_argument("--out", required=True, help="output prefix")
    d.set_defaults(func=cmd_gen_data)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        if args.threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except (DataError, VocabError, EmptySourceError) as err:
        log.error("%s", err)
        return EXIT_DATA
    except CheckpointError as err:
        log.error("%s", err)
        return EXIT_CHECKPOINT
    except DivergenceError as err:
        log.error("%s", err)
        return EXIT_NAN
    except (ConfigurationError, ValueError) as err:
        log.error("%s", err)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Two-pass training on the shifted-substitution task, with coverage and AER.

    python demos/two_pass_alignment.py --seed 1

The baseline is pretrained, then both the baseline and the full Past/Future
model (warm-started from the baseline checkpoint) get a second pass at a
lower learning rate.  The test set is scored for under-translation and for
alignment error against the generator's gold links.  One seed takes about
a minute and a half on one core.
"""

import argparse
import tempfile
from pathlib import Path

import numpy as np

from pastfuture import init_params, preset
from pastfuture.data import gen_synthetic
from pastfuture.evaluation import AlignmentGold, aer, corpus_coverage
from pastfuture.inference import extract_alignment, greedy_decode
from pastfuture.decoder import EOS
from pastfuture.trainer import TrainConfig, train

V = 30
DIMS = dict(e=32, d_enc=64, d_dec=64, d_o=64)


def score(cfg, params, test_c):
    hyps = [greedy_decode(cfg, params, s, max_out_len=40) for s, _ in test_c.pairs]
    over, under = corpus_coverage([t[:-1] for _, t in test_c.pairs],
                                  [[y for y in h.tokens if y != EOS] for h in hyps], "permuted-copy")
    err = aer([set(extract_alignment(h)) for h in hyps], AlignmentGold(test_c.alignments))
    return over, under, err, hyps


def show_attention(hyp, src_len):
    rows = np.array(hyp.attention[:-1] if hyp.finished else hyp.attention)
    print("attention (rows = output words, columns = source words):")
    for t, row in enumerate(rows, start=1):
        print(f"  {t:2d} " + " ".join("#" if i == row.argmax() else ("+" if a > 0.2 else ".")
                                      for i, a in enumerate(row[:src_len])))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--pretrain-epochs", type=int, default=15)
    ap.add_argument("--finetune-epochs", type=int, default=10)
    args = ap.parse_args()
    s = args.seed

    train_c = gen_synthetic("lex-sub-shift", V, (8, 15), 1000, seed=100 + s)
    dev_c = gen_synthetic("lex-sub-shift", V, (8, 15), 200, seed=200 + s)
    test_c = gen_synthetic("lex-sub-shift", V, (8, 15), 100, seed=300 + s)
    print("gold links of the first test pair:", sorted(test_c.alignments[0]))

    base_cfg = preset("baseline", src_vocab=V, tgt_vocab=V, **DIMS)
    base = init_params(base_cfg, s)
    with tempfile.TemporaryDirectory() as tmp:
        ckpt = Path(tmp) / "baseline.npz"
        print(f"pretraining the baseline for {args.pretrain_epochs} epochs ...")
        train(TrainConfig(lr0=0.003, max_epochs=args.pretrain_epochs, shuffle_seed=s), base_cfg, base,
              train_c, dev_c, checkpoint=ckpt)
        second = dict(lr0=0.0005, max_epochs=args.finetune_epochs, shuffle_seed=s + args.pretrain_epochs)
        train(TrainConfig(**second), base_cfg, base, train_c, dev_c)

        cfg = preset("+frnn+prnn+loss", src_vocab=V, tgt_vocab=V, **DIMS)
        params = init_params(cfg, s)
        print("second pass for the Past/Future model, warm-started from the baseline ...")
        train(TrainConfig(**second, init_from=str(ckpt)), cfg, params, train_c, dev_c)

    for name, c, p in (("baseline", base_cfg, base), ("+frnn+prnn+loss", cfg, params)):
        over, under, err, hyps = score(c, p, test_c)
        print(f"{name:16s} over {over:.4f}  under {under:.4f}  AER {err:.2f}")
    show_attention(hyps[0], len(test_c.pairs[0][0]))


if __name__ == "__main__":
    main()

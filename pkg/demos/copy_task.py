"""Train the attention baseline and the full Past/Future model on the copy task.

    python demos/copy_task.py --epochs 12

Prints one line per epoch with dev NLL and greedy token accuracy, then a
sample translation with its attention argmax links.  A dozen epochs at the
default sizes take a couple of minutes per model on one core.
"""

import argparse
import time

from pastfuture import init_params, preset
from pastfuture.data import Vocabulary, gen_synthetic
from pastfuture.inference import beam_search, extract_alignment, greedy_batch
from pastfuture.trainer import TrainConfig, train


def accuracy(cfg, params, corpus):
    out = greedy_batch(cfg, params, [s for s, _ in corpus.pairs], max_out_len=30)
    hit = total = 0
    for hyp, (_, tgt) in zip(out, corpus.pairs):
        total += len(tgt)
        hit += sum(1 for j, y in enumerate(tgt) if j < len(hyp) and hyp[j] == y)
    return hit / total


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--pairs", type=int, default=2000)
    ap.add_argument("--presets", nargs="+", default=["baseline", "+frnn+prnn+loss"])
    args = ap.parse_args()

    V = 20
    vocab = Vocabulary.from_size(V)
    train_c = gen_synthetic("copy", V, (5, 12), args.pairs, seed=1)
    dev_c = gen_synthetic("copy", V, (5, 12), 200, seed=2)

    for name in args.presets:
        cfg = preset(name, src_vocab=V, tgt_vocab=V, e=32, d_enc=64, d_dec=64, d_o=64)
        params = init_params(cfg, 0)
        print(f"\n== {name}: {params.num_parameters()} parameters")
        t0 = time.perf_counter()

        def report(m):
            print(f"epoch {m.epoch:2d}  train nll {m.train_nll:.4f}  dev nll {m.dev_nll:.4f}  "
                  f"lr {m.lr:.2g}  dev acc {accuracy(cfg, params, dev_c):.4f}  "
                  f"{time.perf_counter() - t0:.0f}s")

        train(TrainConfig(lr0=0.003, max_epochs=args.epochs), cfg, params, train_c, dev_c, on_epoch=report)

        src = dev_c.pairs[0][0]
        best = beam_search(cfg, params, src, beam=12, max_out_len=30)[0]
        print("source:", " ".join(vocab.decode(src)))
        print("output:", " ".join(vocab.decode(best.tokens)))
        print("links: ", " ".join(f"{t}-{i}" for t, i in extract_alignment(best)))
        print(f"scores: nll/token {-best.normalized_logprob:.4f}  future loss {best.future_loss:.3f}  "
              f"past loss {best.past_loss:.3f}")


if __name__ == "__main__":
    main()

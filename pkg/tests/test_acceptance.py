"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line (see the ``verdict`` fixture) that is
repeated in the terminal summary.  The training-based criteria are slow: the
whole module takes about twelve minutes on one core.
"""

import math
import time

import numpy as np
import pytest

import oracles
from pastfuture import PRESETS, init_params, preset
from pastfuture import tensor as T
from pastfuture.cells import FutureCellKind, GruParams, future_step, gru_step, init_future, past_step
from pastfuture.cli import gradcheck_report
from pastfuture.data import gen_synthetic
from pastfuture.decoder import EOS, DecoderState, decode_step, teacher_forced_pass
from pastfuture.encoder import Annotations
from pastfuture.evaluation import AlignmentGold, aer, corpus_bleu, corpus_coverage
from pastfuture.inference import beam_search, extract_alignment, greedy_batch, greedy_decode, rerank
from pastfuture.model import batch_loss, scale_params
from pastfuture.objective import delta_scores, step_deltas
from pastfuture.trainer import TrainConfig, train

# desk dimensions for the training criteria
DESK = dict(e=32, d_enc=64, d_dec=64, d_o=64)
COMBINED = "+frnn+prnn+loss"


# -- 1: gradient fidelity ------------------------------------------------------------------------


def test_criterion_1_gradcheck_every_preset(verdict):
    worst, slowest = {}, 0.0
    for name in PRESETS:
        t0 = time.perf_counter()
        errs = gradcheck_report([name], dims=8, vocab=11, seed=0)[name]
        slowest = max(slowest, time.perf_counter() - t0)
        worst[name] = max(errs.values())
    top = max(worst, key=worst.get)
    ok = worst[top] < 1e-4 and slowest < 60.0
    verdict(1, ok, f"max relative error {worst[top]:.2e} ({top}) over {len(worst)} presets; "
                   f"slowest preset {slowest:.1f}s (limit 60s per preset)")


# -- 2: baseline reduction ---------------------------------------------------------------------


def test_criterion_2_baseline_step_is_bitwise_independent_reference(verdict):
    identical = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        cfg = preset("baseline", src_vocab=13, tgt_vocab=17, e=6, d_enc=5, d_dec=7, d_o=8)
        params = scale_params(init_params(cfg, seed), rng, 0.5)
        B, I = 3, 6
        h = rng.standard_normal((B, I, 10))
        s = rng.standard_normal((B, 7))
        y = rng.integers(0, 17, B)
        ann = Annotations(T.constant(h), np.ones((B, I), bool), T.constant(np.zeros((B, 10))))
        step = decode_step(cfg, params, DecoderState(T.constant(s)), y, ann)
        ref = oracles.baseline_step_numpy(params, s, y, h)
        got = (step.s.data, step.alpha.data, step.c.data, step.logprobs.data)
        identical += all(np.array_equal(a, b) for a, b in zip(got, ref))
    verdict(2, identical == 20, f"{identical}/20 seeds bitwise identical (state, attention, context, log-probs)")


# -- 3: degenerate identities ------------------------------------------------------------------


def _zero(obj):
    for t in _tensors(obj):
        t.data = np.zeros(t.shape)
    return obj


def _tensors(obj):
    for v in vars(obj).values():
        if isinstance(v, T.Tensor):
            yield v
        elif v is not None and hasattr(v, "__dataclass_fields__"):
            yield from _tensors(v)


def test_criterion_3_zero_parameter_identities(verdict):
    rng = np.random.default_rng(3)
    s = rng.standard_normal((4, 6))
    c = rng.standard_normal((4, 6))
    halves = [np.array_equal(future_step(k, _zero(init_future(k, rng, 6, 6)), T.constant(s), T.constant(c)).data,
                             0.5 * s) for k in FutureCellKind]
    g = _zero(GruParams.init(rng, 6, 6))
    halves.append(np.array_equal(gru_step(g, T.constant(s), T.constant(c)).data, 0.5 * s))
    halves.append(np.array_equal(past_step(g, T.constant(s), T.constant(c)).data, 0.5 * s))

    worst = 0.0
    for V in (7, 11, 30):
        for name in ("baseline", "+frnn+loss", "+prnn+loss", COMBINED):
            cfg = preset(name, src_vocab=V, tgt_vocab=V, e=4, d_enc=4, d_dec=4, d_o=4)
            params = init_params(cfg, 0)
            for t in params:
                t.data = np.zeros(t.shape)
            src = rng.integers(4, V, 5).tolist()
            tgt = rng.integers(4, V, 3).tolist() + [EOS]
            with T.no_tape():
                out = batch_loss(cfg, params, src, tgt)
            per_token = [out.nll.item() / 4]
            per_token += [x.item() / 4 for x in (out.future, out.past) if x is not None]
            worst = max(worst, *(abs(v - math.log(V)) for v in per_token))
    ok = all(halves) and worst <= 1e-12
    verdict(3, ok, f"{sum(halves)}/{len(halves)} cells give exactly 0.5*s_prev; "
                   f"max |per-token loss - ln V| = {worst:.1e}")


# -- 4, 7, 10: copy task ------------------------------------------------------------------------


def token_accuracy(cfg, params, corpus):
    out = greedy_batch(cfg, params, [s for s, _ in corpus.pairs], max_out_len=30)
    hit = total = 0
    for hyp, (_, tgt) in zip(out, corpus.pairs):
        total += len(tgt)
        hit += sum(1 for j, y in enumerate(tgt) if j < len(hyp) and hyp[j] == y)
    return hit / total


@pytest.fixture(scope="module")
def copy_runs():
    train_c = gen_synthetic("copy", 20, (5, 12), 2000, seed=1)
    dev_c = gen_synthetic("copy", 20, (5, 12), 200, seed=2)
    runs = {}
    for name in ("baseline", COMBINED):
        cfg = preset(name, src_vocab=20, tgt_vocab=20, **DESK)
        params = init_params(cfg, 0)

        def reached(m, cfg=cfg, params=params):
            # stop once the current weights decode the dev set well enough
            return token_accuracy(cfg, params, dev_c) >= 0.99

        t0 = time.perf_counter()
        result = train(TrainConfig(batch_size=16, lr0=0.003, max_epochs=50), cfg, params, train_c, dev_c,
                       on_epoch=reached)
        runs[name] = dict(cfg=cfg, params=params, epochs=len(result.history), seconds=time.perf_counter() - t0,
                          accuracy=token_accuracy(cfg, params, dev_c), dev_nll=result.best_dev_nll)
    runs["train"], runs["dev"] = train_c, dev_c
    return runs


def test_criterion_4_copy_task_convergence(copy_runs, verdict):
    parts, ok = [], True
    for name in ("baseline", COMBINED):
        r = copy_runs[name]
        ok &= r["accuracy"] >= 0.99 and r["epochs"] <= 50 and r["seconds"] < 600
        parts.append(f"{name} acc {r['accuracy']:.4f} after {r['epochs']} epochs in {r['seconds']:.0f}s")
    verdict(4, ok, "; ".join(parts))


def test_criterion_7_future_delta_is_discriminative(copy_runs, verdict):
    r = copy_runs[COMBINED]
    cfg, params = r["cfg"], r["params"]
    aux, E = params.aux, params.decoder.tgt_embeddings
    hit = total = 0
    with T.no_tape():
        for src, tgt in copy_runs["train"].pairs:
            steps, _ = teacher_forced_pass(cfg, params, src, tgt)
            for d, y in zip(step_deltas(steps), tgt):
                scores = delta_scores(aux.W_F, aux.b_F, d.dF, E).data[0]
                hit += int(np.argmax(scores)) == y
                total += 1
    frac = hit / total
    verdict(7, frac > 0.80, f"argmax of the Future-delta score is the gold word on {frac:.1%} "
                            f"of {total} training steps (threshold 80%)")


def test_criterion_10_rerank_without_aux_weights_keeps_nll_best(copy_runs, verdict):
    r = copy_runs[COMBINED]
    same = n = 0
    for src, _ in copy_runs["dev"].pairs[:60]:
        hyps = beam_search(r["cfg"], r["params"], src, beam=12, max_out_len=30)
        same += rerank(hyps, (1.0, 0.0, 0.0))[0] is hyps[0]
        n += 1
    verdict(10, same == n, f"NLL-only reranking kept the NLL 1-best on {same}/{n} beam-12 decodes")


# -- 5, 6: coverage and alignment direction on LEX_SUB_SHIFT --------------------------------------

PRETRAIN_EPOCHS, FINETUNE_EPOCHS = 15, 10


def _score_lss(cfg, params, test_c):
    hyps = [greedy_decode(cfg, params, s, max_out_len=40) for s, _ in test_c.pairs]
    refs = [t[:-1] for _, t in test_c.pairs]
    _, under = corpus_coverage(refs, [[y for y in h.tokens if y != EOS] for h in hyps], "permuted-copy")
    err = aer([set(extract_alignment(h)) for h in hyps], AlignmentGold(test_c.alignments))
    return under, err


@pytest.fixture(scope="module")
def lss_runs(tmp_path_factory):
    """Two-pass protocol: pretrain the baseline, then continue it and warm-start the combined model."""
    out = {"baseline": [], COMBINED: []}
    ckpt_dir = tmp_path_factory.mktemp("lss")
    for seed in range(1, 6):
        train_c = gen_synthetic("lex-sub-shift", 30, (8, 15), 1000, seed=100 + seed)
        dev_c = gen_synthetic("lex-sub-shift", 30, (8, 15), 200, seed=200 + seed)
        test_c = gen_synthetic("lex-sub-shift", 30, (8, 15), 100, seed=300 + seed)
        base_cfg = preset("baseline", src_vocab=30, tgt_vocab=30, **DESK)
        base = init_params(base_cfg, seed)
        ckpt = ckpt_dir / f"base{seed}.npz"
        train(TrainConfig(lr0=0.003, max_epochs=PRETRAIN_EPOCHS, shuffle_seed=seed), base_cfg, base,
              train_c, dev_c, checkpoint=ckpt)
        second = TrainConfig(lr0=0.0005, max_epochs=FINETUNE_EPOCHS, shuffle_seed=seed + PRETRAIN_EPOCHS)
        train(second, base_cfg, base, train_c, dev_c)
        out["baseline"].append(_score_lss(base_cfg, base, test_c))

        cfg = preset(COMBINED, src_vocab=30, tgt_vocab=30, **DESK)
        params = init_params(cfg, seed)
        train(TrainConfig(**{**second.__dict__, "init_from": str(ckpt)}), cfg, params, train_c, dev_c)
        out[COMBINED].append(_score_lss(cfg, params, test_c))
    return out


def test_criterion_5_under_translation_direction(lss_runs, verdict):
    base = np.mean([u for u, _ in lss_runs["baseline"]])
    comb = np.mean([u for u, _ in lss_runs[COMBINED]])
    verdict(5, comb <= base, f"mean under-translation ratio over 5 seeds: {COMBINED} {comb:.5f} "
                             f"vs baseline {base:.5f}")


def test_criterion_6_alignment_direction(lss_runs, verdict):
    base = np.mean([a for _, a in lss_runs["baseline"]])
    comb = np.mean([a for _, a in lss_runs[COMBINED]])
    verdict(6, comb <= base, f"mean AER over 5 seeds: {COMBINED} {comb:.3f} vs baseline {base:.3f}")


# -- 8: decode/score consistency -------------------------------------------------------------------


def test_criterion_8_decode_score_consistency(verdict):
    rng = np.random.default_rng(8)
    names = list(PRESETS)
    worst, checked, greedy_equal = 0.0, 0, 0
    for i in range(100):
        cfg = preset(names[i % len(names)], src_vocab=12, tgt_vocab=12, e=6, d_enc=6, d_dec=6, d_o=6)
        params = scale_params(init_params(cfg, i), rng, 1.0)
        src = rng.integers(4, 12, int(rng.integers(2, 8))).tolist()
        for h in beam_search(cfg, params, src, beam=12, max_out_len=10):
            with T.no_tape():
                loss = batch_loss(cfg, params, [src], [h.tokens])
            worst = max(worst, abs(h.logprob + loss.nll.item()))
            checked += 1
        g = greedy_decode(cfg, params, src, max_out_len=10)
        (b,) = beam_search(cfg, params, src, beam=1, max_out_len=10)
        greedy_equal += b.tokens == g.tokens and b.logprob == g.logprob
    ok = worst <= 1e-9 and greedy_equal == 100
    verdict(8, ok, f"max |stored - rescored log-prob| {worst:.1e} over {checked} hypotheses from 100 decodes; "
                   f"beam 1 equals greedy on {greedy_equal}/100")


# -- 9: metric correctness -------------------------------------------------------------------------


def test_criterion_9_metric_examples(verdict):
    bleu = corpus_bleu(["a b c d e"], ["a b c d f"])
    gold = AlignmentGold([{(1, 1)}], [{(1, 1), (2, 3)}])
    err = aer([{(1, 1), (2, 2)}], gold)
    S = {(1, 1), (2, 2)}
    checks = [
        abs(bleu - 66.87) <= 0.01,
        err == 100 * (1 - 2 / 3),
        corpus_bleu(["a b c d e"], ["a b c d e"]) == 100.0,
        aer([S], AlignmentGold([S])) == 0.0,
    ]
    verdict(9, all(checks), f"BLEU {bleu:.4f} (target 66.87 +/- 0.01); AER {err:.4f} (target 100/3); "
                            f"perfect-match cases {sum(checks[2:])}/2")

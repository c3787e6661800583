import math

import numpy as np
import pytest

import oracles
from pastfuture import PRESETS, ModelConfig, init_params, preset
from pastfuture import tensor as T
from pastfuture.cells import ConfigurationError
from pastfuture.decoder import BOS, EOS, DecoderState, FeedTiming, decode_step, start_state, teacher_forced_pass
from pastfuture.encoder import VocabError, encode
from pastfuture.model import batch_loss, scale_params
from pastfuture.objective import delta_loss, objective_terms, step_deltas, total_objective
from pastfuture.tensor import ContractViolation


def small(name, V=7, d=4, **kw):
    return preset(name, src_vocab=V, tgt_vocab=V, e=d, d_enc=d, d_dec=d, d_o=d, **kw)


def random_model(cfg, seed=0, scale=0.6):
    return scale_params(init_params(cfg, seed), np.random.default_rng(seed + 100), scale)


def zero_model(cfg):
    params = init_params(cfg, 0)
    for t in params:
        t.data = np.zeros(t.shape)
    return params


# -- configuration ------------------------------------------------------------------


def test_presets_cover_table_rows():
    assert set(PRESETS) == {"baseline", "+frnn-gru", "+frnn-gru-o", "+frnn-gru-i", "+frnn+loss", "+prnn",
                            "+prnn+loss", "+frnn+prnn", "+frnn+prnn+loss"}
    combined = small("+frnn+prnn+loss")
    assert combined.use_future and combined.use_past and combined.future_loss_on and combined.past_loss_on
    assert combined.future_kind == "gru-i"
    assert small("baseline").dec_input_dim == 4 + 8
    assert combined.dec_input_dim == 4 + 8 + 4 + 4
    with pytest.raises(ConfigurationError):
        preset("+frnn+attention")
    with pytest.raises(ConfigurationError):
        small("baseline", d=0)


def test_config_round_trip():
    cfg = small("+frnn+prnn+loss", feed_future_timing="current", future_loss_weight=0.5)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_parameter_inventory_by_preset():
    base = init_params(small("baseline"), 0).named()
    full = init_params(small("+frnn+prnn+loss"), 0).named()
    assert not any(k.startswith(("future", "past", "aux")) for k in base)
    assert {"attention.V_f", "attention.V_p", "aux.W_F", "aux.W_P", "past.U", "future.gru.U"} <= set(full)
    assert set(base) < set(full)


# -- decode step ----------------------------------------------------------------------


def test_zero_model_is_uniform():
    cfg = small("+frnn+prnn+loss")
    params = zero_model(cfg)
    ann = encode(params.encoder, [4, 5, 6])
    step = decode_step(cfg, params, start_state(cfg, params, ann), [BOS], ann)
    np.testing.assert_allclose(step.logprobs.data, -math.log(7), rtol=0, atol=1e-15)


@pytest.mark.parametrize("name", sorted(PRESETS))
@pytest.mark.parametrize("timing", ["previous", "current"])
def test_step_matches_scalar_reference(name, timing):
    cfg = small(name, feed_future_timing=timing)
    params = random_model(cfg, seed=3)
    src = [4, 6, 5]
    ann = encode(params.encoder, src)
    h, summary = oracles.encode(params.encoder, src)
    s, sF, sP = oracles.init_states(params.encoder, summary, cfg.use_future, cfg.use_past)
    state = start_state(cfg, params, ann)
    y_prev = BOS
    for y in (5, 4, EOS):
        step = decode_step(cfg, params, state, [y_prev], ann)
        s, sF, sP, alpha, c, logp = oracles.step(cfg, params, s, sF, sP, y_prev, h)
        np.testing.assert_allclose(step.logprobs.data[0], logp, rtol=1e-11, atol=1e-13)
        np.testing.assert_allclose(step.alpha.data[0], alpha, rtol=1e-11, atol=1e-14)
        np.testing.assert_allclose(step.s.data[0], s, rtol=1e-11, atol=1e-14)
        if cfg.use_future:
            np.testing.assert_allclose(step.sF.data[0], sF, rtol=1e-11, atol=1e-14)
        if cfg.use_past:
            np.testing.assert_allclose(step.sP.data[0], sP, rtol=1e-11, atol=1e-14)
        state, y_prev = step.state, y


def test_feed_timing_changes_only_decoder_input():
    prev = random_model(small("+frnn-gru-i", feed_future_timing=FeedTiming.PREVIOUS), seed=1)
    cur_cfg = small("+frnn-gru-i", feed_future_timing=FeedTiming.CURRENT)
    ann = encode(prev.encoder, [4, 5])
    st = start_state(cur_cfg, prev, ann)
    a = decode_step(small("+frnn-gru-i"), prev, st, [BOS], ann)
    b = decode_step(cur_cfg, prev, st, [BOS], ann)
    np.testing.assert_array_equal(a.sF.data, b.sF.data)
    np.testing.assert_array_equal(a.alpha.data, b.alpha.data)
    assert not np.array_equal(a.s.data, b.s.data)


def test_baseline_step_is_bitwise_the_plain_attention_model():
    cfg = preset("baseline", src_vocab=13, tgt_vocab=17, e=6, d_enc=5, d_dec=7, d_o=8)
    rng = np.random.default_rng(5)
    params = random_model(cfg, seed=5, scale=0.5)
    h = rng.standard_normal((3, 6, 10))
    s = rng.standard_normal((3, 7))
    y = rng.integers(0, 17, 3)
    from pastfuture.encoder import Annotations

    ann = Annotations(T.constant(h), np.ones((3, 6), bool), T.constant(np.zeros((3, 10))))
    step = decode_step(cfg, params, DecoderState(T.constant(s)), y, ann)
    ref = oracles.baseline_step_numpy(params, s, y, h)
    for got, want in zip((step.s, step.alpha, step.c, step.logprobs), ref):
        np.testing.assert_array_equal(got.data, want)


def test_decode_step_errors():
    cfg = small("+frnn+prnn")
    params = random_model(cfg)
    ann = encode(params.encoder, [4, 5])
    st = start_state(cfg, params, ann)
    with pytest.raises(ConfigurationError):
        decode_step(cfg, params, DecoderState(st.s, None, st.sP), [BOS], ann)
    with pytest.raises(VocabError):
        decode_step(cfg, params, st, [7], ann)


# -- teacher forcing and objective ------------------------------------------------------


def test_zero_model_nll_is_length_times_log_v():
    cfg = preset("baseline", src_vocab=10, tgt_vocab=10, e=3, d_enc=3, d_dec=3, d_o=3)
    params = zero_model(cfg)
    _, nll = teacher_forced_pass(cfg, params, [4, 5], [6, 7, EOS])
    total = sum(float(n.data.sum()) for n in nll)
    assert abs(total - 3 * math.log(10)) < 1e-12


def test_zero_model_objective_with_both_losses():
    cfg = preset("+frnn+prnn+loss", src_vocab=10, tgt_vocab=10, e=3, d_enc=3, d_dec=3, d_o=3)
    params = zero_model(cfg)
    out = batch_loss(cfg, params, [4, 5, 6], [7, EOS])
    assert abs(out.nll.item() - 2 * math.log(10)) < 1e-12
    assert abs(out.future.item() - 2 * math.log(10)) < 1e-12
    assert abs(out.past.item() - 2 * math.log(10)) < 1e-12
    assert abs(out.total.item() - 6 * math.log(10)) < 1e-12
    assert out.tokens == 2


def test_nll_sums_to_sequence_log_probability():
    cfg = small("+frnn+prnn")
    params = random_model(cfg, seed=2)
    tgt = [5, 4, 6, EOS]
    steps, nll = teacher_forced_pass(cfg, params, [4, 5, 6], tgt)
    logp = sum(float(st.logprobs.data[0, y]) for st, y in zip(steps, tgt))
    assert abs(sum(n.item() for n in nll) + logp) < 1e-12


@pytest.mark.parametrize("name", ["baseline", "+frnn-gru-o", "+frnn+loss", "+prnn+loss", "+frnn+prnn+loss"])
def test_loss_matches_scalar_reference(name):
    cfg = small(name)
    params = random_model(cfg, seed=4)
    src, tgt = [4, 6, 5, 4], [6, 5, EOS]
    out = batch_loss(cfg, params, src, tgt)
    nll, fut, past = oracles.sentence_loss(cfg, params, src, tgt)
    assert abs(out.nll.item() - nll) < 1e-10
    if cfg.future_loss_on:
        assert abs(out.future.item() - fut) < 1e-10
    else:
        assert out.future is None
    if cfg.past_loss_on:
        assert abs(out.past.item() - past) < 1e-10
    else:
        assert out.past is None
    assert abs(out.total.item() - (nll + fut + past)) < 1e-10


def test_padded_batch_equals_sum_of_singles():
    cfg = small("+frnn+prnn+loss")
    params = random_model(cfg, seed=6)
    pairs = [([4, 5, 6], [6, 5, 4, EOS]), ([5], [4, EOS]), ([6, 4], [5, 5, EOS])]
    from pastfuture.trainer import pad_batch

    src, smask = pad_batch([s for s, _ in pairs])
    tgt, tmask = pad_batch([t for _, t in pairs])
    out = batch_loss(cfg, params, src, tgt, smask, tmask)
    singles = [batch_loss(cfg, params, s, t) for s, t in pairs]
    assert out.tokens == 9
    for field in ("nll", "future", "past", "total"):
        assert abs(getattr(out, field).item() - sum(getattr(x, field).item() for x in singles)) < 1e-11


def test_loss_weights_scale_terms():
    cfg = small("+frnn+prnn+loss", future_loss_weight=0.25, past_loss_weight=2.0)
    params = random_model(cfg, seed=7)
    out = batch_loss(cfg, params, [4, 5], [6, EOS])
    assert abs(out.total.item() - (out.nll.item() + 0.25 * out.future.item() + 2.0 * out.past.item())) < 1e-12


def test_delta_loss_examples(rng):
    E = T.constant(np.eye(2))
    W = T.constant(np.array([[1.0, 0.0]]))
    loss = delta_loss(W, T.constant([0.0]), T.constant([[2.0]]), [0], E)
    assert abs(loss.item() - math.log(1 + math.exp(-2))) < 1e-15

    Ez = T.constant(rng.standard_normal((6, 3)))
    zero = delta_loss(T.constant(np.zeros((4, 3))), T.constant([0.7]), T.constant(rng.standard_normal((1, 4))),
                      [2], Ez)
    assert abs(zero.item() - math.log(6)) < 1e-15

    Wr, d, b = rng.standard_normal((4, 3)), rng.standard_normal(4), 0.3
    got = delta_loss(T.constant(Wr), T.constant([b]), T.constant(d[None]), [5], Ez)
    assert abs(got.item() - oracles.delta_loss(Wr, b, list(d), 5, Ez.data)) < 1e-13
    with pytest.raises(VocabError):
        delta_loss(T.constant(Wr), T.constant([b]), T.constant(d[None]), [6], Ez)


def test_objective_terms_contracts():
    cfg = small("baseline")
    params = random_model(cfg)
    steps, nll = teacher_forced_pass(cfg, params, [4, 5], [6, EOS])
    total = total_objective(cfg, nll, None, params.aux, [6, EOS], params.decoder.tgt_embeddings)
    assert total.item() == sum(n.item() for n in nll)
    with pytest.raises(ContractViolation):
        objective_terms(cfg, nll[:1], None, params.aux, [6, EOS], params.decoder.tgt_embeddings)


def test_deltas_have_documented_signs():
    cfg = small("+frnn+prnn")
    params = random_model(cfg, seed=8)
    steps, _ = teacher_forced_pass(cfg, params, [4, 5], [6, EOS])
    d = step_deltas(steps)
    np.testing.assert_array_equal(d[1].dF.data, steps[0].sF.data - steps[1].sF.data)
    np.testing.assert_array_equal(d[1].dP.data, steps[1].sP.data - steps[0].sP.data)


@pytest.mark.parametrize("name", ["+frnn-gru-o", "+frnn+prnn+loss"])
def test_full_model_gradients_dims_four(name):
    cfg = small(name)
    params = random_model(cfg, seed=9, scale=0.5)
    f = lambda: batch_loss(cfg, params, [4, 5, 6], [5, 6, EOS]).total  # noqa: E731
    assert T.finite_difference_check(f, params.named(), h=1e-4, extended=True) < 1e-4

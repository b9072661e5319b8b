import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import multislt.tensor as T
from multislt.model import (ModelConfig, SpeechTransformer, distance_penalty,
                            encoder_length, positional_encoding)
from multislt.tensor import Tensor, grad_check


def tiny_cfg(**kw):
    base = dict(d_model=16, ff_hidden=32, n_heads=2,
                n_encoder_layers=1, n_decoder_layers=1, dropout=0.1)
    base.update(kw)
    return ModelConfig(vocab_size=12, **base)


def make_model(seed=0, **kw):
    return SpeechTransformer(tiny_cfg(**kw), seed=seed).eval()


# distance penalty ------------------------------------------------------

def test_penalty_values():
    m = distance_penalty(8)
    assert m[3, 3] == 0.0
    assert m[3, 4] == 0.0  # ln 1
    np.testing.assert_allclose(m[0, 5], np.log(5.0), atol=1e-15)


def test_penalty_matrix_matches_formula_entrywise():
    m = distance_penalty(8)
    for i in range(8):
        for j in range(8):
            d = abs(i - j)
            expected = 0.0 if d == 0 else np.log(d)
            assert abs(m[i, j] - expected) < 1e-12
    np.testing.assert_array_equal(m, m.T)
    np.testing.assert_array_equal(np.diag(m), 0.0)


def test_penalty_strictly_increasing_beyond_one():
    m = distance_penalty(20)
    row = m[0]
    assert np.all(np.diff(row[1:]) > 0)


def test_penalty_invalid_size():
    with pytest.raises(ValueError):
        distance_penalty(0)


# positional encoding ---------------------------------------------------

def test_positional_encoding_origin():
    pe = positional_encoding(3, 8)
    np.testing.assert_array_equal(pe[0], [0, 1, 0, 1, 0, 1, 0, 1])


def test_positional_encoding_closed_form():
    pe = positional_encoding(2, 8)
    np.testing.assert_allclose(pe[1, 0], np.sin(1.0), atol=1e-12)


def test_positional_encoding_bounded():
    pe = positional_encoding(50, 16)
    assert np.all(np.abs(pe) <= 1.0)


def test_positional_encoding_odd_dim_rejected():
    with pytest.raises(ValueError):
        positional_encoding(4, 7)


# shape algebra ---------------------------------------------------------

def test_encoder_length_examples():
    assert encoder_length(100) == 25
    assert encoder_length(100, concat_at_pre=True) == 26


@given(st.integers(4, 120))
@settings(max_examples=25, deadline=None)
def test_encoder_output_matches_shape_oracle(t):
    m = make_model()
    feats = np.random.default_rng(t).normal(size=(1, t, 40))
    enc = m.encode(feats, [t])
    assert enc.memory.shape == (1, encoder_length(t), 16)
    assert enc.mask.shape == (1, encoder_length(t))


def test_frontend_boundary_t4_f4():
    # two ceil-halvings take a 4x4 patch to 1x1
    from multislt.model import ceil_div
    assert ceil_div(ceil_div(4, 2), 2) == 1


def test_zero_input_is_finite():
    m = make_model()
    enc = m.encode(np.zeros((1, 20, 40)), [20])
    assert np.all(np.isfinite(enc.memory.data))


# model behaviour -------------------------------------------------------

def test_batch_equivariance_eval_mode():
    m = make_model()
    rng = np.random.default_rng(5)
    feats = rng.normal(size=(3, 24, 40))
    lengths = [24, 18, 24]
    enc = m.encode(feats, lengths)
    perm = [2, 0, 1]
    enc_p = m.encode(feats[perm], [lengths[i] for i in perm])
    np.testing.assert_allclose(enc_p.memory.data, enc.memory.data[perm], atol=1e-12)


def test_padding_frames_get_zero_attention_weight(monkeypatch):
    captured = []
    real_softmax = T.softmax

    def spy(x, axis=-1):
        out = real_softmax(x, axis=axis)
        captured.append(out.data)
        return out

    m = make_model()
    feats = np.random.default_rng(6).normal(size=(2, 16, 40))
    monkeypatch.setattr(T, "softmax", spy)
    m.encode(feats, [16, 8])  # second utterance: frames 2.. at T' scale are pads
    t_prime = encoder_length(16)
    valid = encoder_length(8)
    time_axis = [a for a in captured if a.shape[-1] == t_prime]
    assert time_axis
    for attn in time_axis:
        assert np.all(attn[1, ..., valid:] == 0.0)


def test_penalty_suppresses_distant_attention(monkeypatch):
    # the same adversarially attractive distant frame gets strictly less
    # weight with the penalty than without, all else equal
    captured = []
    real_softmax = T.softmax

    def spy(x, axis=-1):
        out = real_softmax(x, axis=axis)
        captured.append(out.data)
        return out

    rng = np.random.default_rng(7)
    feats = rng.normal(size=(1, 40, 40))
    feats[0, 32:] *= 5.0  # attractive frames far from early queries
    monkeypatch.setattr(T, "softmax", spy)

    make_model(seed=3).encode(feats, [40])
    with_pen = [a.copy() for a in captured]
    captured.clear()

    import multislt.model as mm
    monkeypatch.setattr(mm, "distance_penalty", lambda n: np.zeros((n, n)))
    make_model(seed=3).encode(feats, [40])
    without_pen = captured

    t_prime = encoder_length(40)
    pairs = [(a, b) for a, b in zip(with_pen, without_pen) if a.shape[-1] == t_prime]
    assert pairs
    # only the first attention map sees identical inputs in both runs
    a, b = pairs[0]
    wa = a[..., 0, t_prime - 1]  # query 0 attending to the most distant key
    wb = b[..., 0, t_prime - 1]
    assert np.all(wa < wb)


def test_sa2d_preserves_time_and_freq_extent():
    m = make_model()
    feats = np.random.default_rng(8).normal(size=(2, 32, 40))
    enc = m.encode(feats, [32, 32])
    assert enc.memory.shape[1] == encoder_length(32)


def test_causal_mask_contract():
    m = make_model()
    feats = np.random.default_rng(9).normal(size=(1, 20, 40))
    enc = m.encode(feats, [20])
    prefix = np.array([[1, 5, 6, 7, 8]])
    logits = m.decode_logits(enc, prefix).data
    tampered = prefix.copy()
    tampered[0, 3:] = [9, 10]
    logits2 = m.decode_logits(enc, tampered).data
    np.testing.assert_allclose(logits2[0, :3], logits[0, :3], atol=1e-12)


def test_decoder_logits_shape():
    m = make_model()
    enc = m.encode(np.random.default_rng(10).normal(size=(1, 16, 40)), [16])
    logits = m.decode_logits(enc, np.array([[1, 4, 5, 6]]))
    assert logits.shape == (1, 4, 12)


def test_decoder_rejects_out_of_range_token():
    m = make_model()
    enc = m.encode(np.random.default_rng(11).normal(size=(1, 16, 40)), [16])
    with pytest.raises(IndexError):
        m.decode_logits(enc, np.array([[1, 99]]))


def test_gradient_reaches_encoder_via_cross_attention():
    m = SpeechTransformer(tiny_cfg(), seed=0)
    m.eval()  # deterministic; dropout off
    feats = np.random.default_rng(12).normal(size=(2, 12, 40))
    enc = m.encode(feats, [12, 12])
    logits = m.decode_logits(enc, np.array([[1, 4], [1, 5]]))
    loss = T.cross_entropy(T.reshape(logits, (-1, 12)), np.array([4, 2, 5, 2]), 0)
    loss.backward()
    enc_proj_grad = dict(m.named_parameters())["encoder.proj.weight"].grad
    assert enc_proj_grad is not None and np.abs(enc_proj_grad).max() > 0


def test_full_model_gradient_check_on_input():
    m = make_model(seed=1)
    rng = np.random.default_rng(13)
    feats = rng.normal(size=(2, 12, 40))
    prefix = np.array([[1, 4, 5], [1, 6, 7]])
    labels = np.array([4, 5, 2, 6, 7, 2])

    def f(x):
        enc = m.encode(x, [12, 12])
        logits = m.decode_logits(enc, prefix)
        return T.cross_entropy(T.reshape(logits, (-1, 12)), labels, 0)

    err = grad_check(f, Tensor(feats), sample=40, rng=np.random.default_rng(0))
    assert err < 1e-4


def test_autoregressive_consistency():
    from multislt.decoding import greedy_decode
    from multislt.manifest import Vocabulary
    m = make_model(seed=4)
    vocab = Vocabulary("abcdefgh")
    feats = np.random.default_rng(14).normal(size=(18, 40))
    hyp = greedy_decode(m, vocab, feats, max_len=12)
    enc = m.encode(feats[None], [18])
    logits = m.decode_logits(enc, np.array([hyp.ids[:-1]])).data[0]
    steps = np.argmax(logits, axis=1)
    np.testing.assert_array_equal(steps, hyp.ids[1:])


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        ModelConfig(vocab_size=10, d_model=10, n_heads=3)
    with pytest.raises(ValueError, match="forcing"):
        ModelConfig(vocab_size=10, forcing_mode="blend")
    with pytest.raises(ValueError, match="languages"):
        ModelConfig(vocab_size=10, forcing_mode="merge")


def test_lang_required_when_forcing_enabled():
    m = make_model(forcing_mode="merge", forcing_site="pre", languages=("L0",))
    with pytest.raises(ValueError, match="languages"):
        m.encode(np.zeros((1, 8, 40)), [8], None)

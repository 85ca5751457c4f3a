import numpy as np
import pytest

from vedocr.config import ModelConfig
from vedocr.decoder import (
    count_targets,
    decoder_forward,
    greedy_generate,
    init_decoder,
    mlm_pretrain_step,
    mlm_select,
    teacher_forced_loss,
    warm_start,
)
from vedocr.encoder import ContractError, EncoderOutput, encode, init_encoder
from vedocr.tensor import Tensor, parameters_gradcheck
from vedocr.tokenizer import BOS, EOS, MASK, NUM_SPECIAL, PAD, Tokenizer

V = 12


def setup(variant="global", seed=0):
    cfg = ModelConfig(variant=variant, H=8, W=16, P=4, D=8, heads=2, enc_layers=1, dec_layers=2, lmax=10,
                      window=2, merge_stages=0, dtype="float64")
    rng = np.random.default_rng(seed)
    params = init_encoder(cfg, rng, np.float64)
    params.update(init_decoder(cfg, V, cfg.D, rng, np.float64))
    return cfg, params


def test_logits_shape():
    cfg, params = setup()
    enc = encode(Tensor(np.random.default_rng(1).random((2, 1, 8, 16))), params, cfg)
    out = decoder_forward(np.array([[BOS, 5, 6], [BOS, 7, PAD]]), enc, params, cfg)
    assert out.shape == (2, 3, V)


def test_future_tokens_do_not_change_past_logits():
    cfg, params = setup()
    rng = np.random.default_rng(2)
    for _ in range(10):
        enc = encode(Tensor(rng.random((1, 8, 16))), params, cfg)
        ids = rng.integers(NUM_SPECIAL, V, size=8)
        t = int(rng.integers(1, 8))
        base = decoder_forward(ids, enc, params, cfg).data
        edited = ids.copy()
        edited[t:] = rng.integers(NUM_SPECIAL, V, size=8 - t)
        out = decoder_forward(edited, enc, params, cfg).data
        assert np.array_equal(out[:t], base[:t])


def test_bidirectional_mode_sees_the_future():
    cfg, params = setup()
    ids = np.array([BOS, 5, 6, 7])
    a = decoder_forward(ids, None, params, cfg, causal=False).data
    b = decoder_forward(np.array([BOS, 5, 6, 8]), None, params, cfg, causal=False).data
    assert not np.array_equal(a[0], b[0])


def test_lmax_contract():
    cfg, params = setup()
    with pytest.raises(ContractError):
        decoder_forward(np.full(11, 5), None, params, cfg)


def test_teacher_forced_loss_ignores_padding():
    cfg, params = setup()
    enc = encode(Tensor(np.random.default_rng(1).random((1, 8, 16))), params, cfg)
    ids = np.array([BOS, 5, 6, EOS])
    padded = np.array([BOS, 5, 6, EOS, PAD, PAD])
    a = teacher_forced_loss(ids, enc, params, cfg).data
    b = teacher_forced_loss(padded, enc, params, cfg).data
    np.testing.assert_allclose(a, b, rtol=1e-12)
    assert count_targets(padded) == 3


def test_teacher_forced_gradcheck_over_decoder_params():
    cfg, params = setup()
    enc = encode(Tensor(np.random.default_rng(1).random((2, 1, 8, 16))), params, cfg)
    enc = EncoderOutput(Tensor(enc.states.data), "global")
    ids = np.array([[BOS, 5, 6, EOS], [BOS, 7, EOS, PAD]])
    names = ["dec.0.cross.k.w", "dec.1.self.q.w", "dec.pos", "dec.out.b"]
    err = parameters_gradcheck(lambda: teacher_forced_loss(ids, enc, params, cfg), [params[n] for n in names])
    assert err < 1e-4


def test_greedy_generation_stops_and_is_deterministic():
    cfg, params = setup()
    enc = encode(Tensor(np.random.default_rng(1).random((3, 1, 8, 16))), params, cfg)
    a = greedy_generate(enc, params, cfg, max_len=6)
    b = greedy_generate(enc, params, cfg, max_len=6)
    assert a == b
    assert all(len(s) <= 6 and EOS not in s for s in a)
    single = greedy_generate(EncoderOutput(enc.states[0], "global"), params, cfg, max_len=6)
    assert single == a[0]


def test_greedy_generation_follows_argmax():
    cfg, params = setup()
    enc = encode(Tensor(np.random.default_rng(1).random((1, 8, 16))), params, cfg)
    out = greedy_generate(enc, params, cfg, max_len=4)
    prefix = [BOS]
    for tok in out:
        logits = decoder_forward(np.array(prefix), enc, params, cfg).data
        assert int(logits[-1].argmax()) == tok
        prefix.append(tok)


def test_mlm_selection_skips_specials():
    ids = np.array([[BOS, 5, 6, 7, EOS, PAD] * 10])
    sel = mlm_select(ids, 0.9, seed=0)
    assert not sel[ids < NUM_SPECIAL].any()
    assert sel.any()


def test_mlm_step_masks_selected_positions():
    cfg, params = setup()
    ids = np.array([[BOS, 5, 6, 7, 8, EOS]])
    loss, sel = mlm_pretrain_step(ids, params, cfg, 0.5, seed=3)
    again, sel2 = mlm_pretrain_step(ids, params, cfg, 0.5, seed=3)
    np.testing.assert_array_equal(sel, sel2)
    assert float(loss.data) == float(again.data)
    assert MASK == 4


def test_warm_start_reinitialises_cross_attention():
    cfg, params = setup()
    _, other = setup(seed=9)
    pretrained = {k: v.data for k, v in other.items()}
    loaded = warm_start(params, pretrained, np.random.default_rng(0))
    assert "dec.0.self.q.w" in loaded and not any(".cross." in n for n in loaded)
    np.testing.assert_array_equal(params["dec.tok"].data, other["dec.tok"].data)
    assert not np.array_equal(params["dec.0.cross.q.w"].data, other["dec.0.cross.q.w"].data)
    assert (params["dec.0.cross.q.b"].data == 0).all()


def test_tokenizer_roundtrip_and_specials(tmp_path):
    tok = Tokenizer.default()
    assert len(tok.symbols) == 23
    text = "بَسْ لا"
    ids = tok.tokenize(text)
    assert ids[0] == BOS and ids[-1] == EOS
    assert tok.decode(ids) == text
    path = tmp_path / "vocab.txt"
    tok.save(path)
    assert Tokenizer.load(path).symbols == tok.symbols

import json
import math

import numpy as np
import pytest

from vedocr.checkpoint import (
    CheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    restore_params,
    save_checkpoint,
)
from vedocr.config import ConfigError, HyperParams, ModelConfig, SynthConfig
from vedocr.data.manifest import load_images, load_manifest
from vedocr.data.synth import generate_corpus
from vedocr.models import build_model, init_params
from vedocr.optim import Adam, AdamState, OptimError, adam_step, cosine_lr
from vedocr.tensor import Tensor
from vedocr.tokenizer import Tokenizer
from vedocr.train import TrainError, accumulate_step, evaluate_wer, train


def test_cosine_endpoints():
    assert cosine_lr(0, 10, 1e-3) == 1e-3
    assert cosine_lr(10, 10, 1e-3) == 0.0
    assert cosine_lr(5, 10, 1e-3) == pytest.approx(5e-4)
    with pytest.raises(OptimError):
        cosine_lr(11, 10, 1e-3)


def test_adam_first_step_magnitude():
    p = {"x": Tensor(np.array([2.0]), requires_grad=True)}
    state = adam_step(p, {"x": np.array([1.0])}, AdamState(), lr=0.1)
    assert state.t == 1
    assert p["x"].data[0] == pytest.approx(2.0 - 0.1 / (1 + 1e-8))


def test_adam_zero_gradient_is_noop():
    p = {"x": Tensor(np.array([2.0, -1.0]), requires_grad=True)}
    adam_step(p, {"x": np.zeros(2)}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(p["x"].data, [2.0, -1.0])


def test_adam_matches_hand_rollout():
    p = {"x": Tensor(np.array([0.5]), requires_grad=True)}
    opt = Adam(p)
    m = v = 0.0
    x = 0.5
    for t, g in enumerate([0.3, -1.2, 0.7], 1):
        opt.step(0.01, {"x": np.array([g])})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.01 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert p["x"].data[0] == pytest.approx(x, abs=1e-15)
    with pytest.raises(OptimError):
        opt.step(0.01, {"x": np.zeros(2)})


def test_hyperparam_invariants():
    with pytest.raises(ConfigError):
        HyperParams(train_batch=8, grad_accum_steps=4, effective_batch=64)
    with pytest.raises(ConfigError):
        HyperParams(beta1=1.0)
    hp = HyperParams.from_dict({"train_batch": 4, "grad_accum_steps": 2})
    assert hp.effective_batch == 8


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return load_manifest(generate_corpus(SynthConfig(count=16, seed=5, max_len=3, height=16), root))


def tiny_cfg(variant):
    return ModelConfig(variant=variant, H=16, W=64, P=8, D=8, heads=2, enc_layers=1, dec_layers=1, lmax=16,
                       ctc_channels=(4,), window=2, merge_stages=0, dtype="float64")


@pytest.mark.parametrize("variant", ["global", "windowed", "ctc"])
def test_accumulation_equivalence(corpus, variant):
    cfg = tiny_cfg(variant)
    tok = Tokenizer.default()
    images = load_images(corpus, cfg.H, cfg.W, cfg.P, np.float64)
    texts = [s.text for s in corpus]
    order = list(range(16))
    results = []
    for micro in ([order[i : i + 4] for i in range(0, 16, 4)], [order]):
        model = build_model(cfg, tok, seed=3)
        accumulate_step(model, Adam(model.params), images, texts, micro, lr=1e-3)
        results.append({k: p.data.copy() for k, p in model.params.items()})
    for k in results[0]:
        np.testing.assert_allclose(results[0][k], results[1][k], rtol=0, atol=1e-10)


def test_lr_zero_keeps_parameters(corpus, tmp_path):
    cfg = tiny_cfg("global")
    model = build_model(cfg, Tokenizer.default(), seed=1)
    before = {k: p.data.copy() for k, p in model.params.items()}
    hp = HyperParams(lr=0.0, train_batch=4, grad_accum_steps=2, effective_batch=8, epochs=1)
    train(model, corpus, corpus[:2], hp, tmp_path)
    for k, p in model.params.items():
        np.testing.assert_array_equal(p.data, before[k])


def test_empty_training_set():
    model = build_model(tiny_cfg("global"), Tokenizer.default())
    with pytest.raises(TrainError):
        train(model, [], [], HyperParams())


def test_training_is_deterministic(corpus, tmp_path):
    hp = HyperParams(lr=1e-3, train_batch=4, grad_accum_steps=2, effective_batch=8, epochs=2)
    runs = []
    for name in ("a", "b"):
        model = build_model(tiny_cfg("ctc"), Tokenizer.default(), seed=hp.seed)
        res = train(model, corpus, corpus[:4], hp, tmp_path / name)
        runs.append((res.metrics_log.read_bytes(), res.checkpoint_sha256))
        lines = [json.loads(x) for x in res.metrics_log.read_text().splitlines()]
        assert [x["epoch"] for x in lines] == [1, 2]
        assert set(lines[0]) == {"epoch", "train_loss", "dev_wer", "lr"}
    assert runs[0] == runs[1]


def test_single_batch_loss_mostly_decreases(corpus):
    cfg = tiny_cfg("global")
    model = build_model(cfg, Tokenizer.default(), seed=0)
    images = load_images(corpus[:8], cfg.H, cfg.W, cfg.P, np.float64)
    texts = [s.text for s in corpus[:8]]
    opt = Adam(model.params)
    losses = [accumulate_step(model, opt, images, texts, [list(range(8))], 1e-3)[0] for _ in range(50)]
    ups = sum(b > a for a, b in zip(losses, losses[1:]))
    assert ups <= 5 and losses[-1] < losses[0]


def test_checkpoint_roundtrip_reproduces_outputs(corpus, tmp_path):
    cfg = tiny_cfg("global")
    tok = Tokenizer.default()
    model = build_model(cfg, tok, seed=2)
    images = load_images(corpus, cfg.H, cfg.W, cfg.P, np.float64)
    # float32 storage: round the weights first so the reload is exact
    for p in model.params.values():
        p.data[...] = p.data.astype(np.float32)
    sha = save_checkpoint(tmp_path / "m.ckpt", cfg, tok, model.params, {"note": 1})
    ck = load_checkpoint(tmp_path / "m.ckpt")
    assert ck.config == cfg and ck.vocab == tok.symbols and ck.extra == {"note": 1}
    clone = build_model(cfg, tok, params=restore_params(init_params(cfg, tok, 9), ck.tensors))
    texts = [s.text for s in corpus]
    assert evaluate_wer(model, images, texts) == evaluate_wer(clone, images, texts)
    assert sha == __import__("hashlib").sha256((tmp_path / "m.ckpt").read_bytes()).hexdigest()


def test_checkpoint_corruption_detected():
    cfg = tiny_cfg("ctc")
    tok = Tokenizer.default()
    blob = encode_checkpoint(cfg, tok, init_params(cfg, tok, 0))
    assert blob[:4] == b"QVED"
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        decode_checkpoint(blob[:-3])
    with pytest.raises(CheckpointError):
        decode_checkpoint(blob + b"\0")
    params = init_params(cfg, tok, 0)
    tensors = decode_checkpoint(blob).tensors
    tensors["ctc.out.b"] = np.zeros(3, dtype=np.float32)
    with pytest.raises(CheckpointError):
        restore_params(params, tensors)

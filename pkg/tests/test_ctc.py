import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vedocr import ctc
from vedocr.config import ModelConfig
from vedocr.encoder import ContractError
from vedocr.tensor import Tensor, finite_difference_check, parameters_gradcheck

HALF = np.log(np.full((2, 2), 0.5))  # T=2 frames over {a, blank}


def nll(logits, target):
    return float(ctc.ctc_loss(Tensor(np.asarray(logits, dtype=np.float64)), target).data)


def test_two_frame_fixture():
    assert nll(HALF, [0]) == pytest.approx(-math.log(0.75), abs=1e-12)
    assert nll(HALF, []) == pytest.approx(math.log(4.0), abs=1e-12)


def test_infeasible_target_raises():
    with pytest.raises(ctc.InfeasibleTargetError):
        nll(HALF, [0, 0])
    assert ctc.min_frames([0, 0]) == 3
    assert ctc.min_frames([0, 1, 1, 1]) == 6


def random_instance(rng):
    T = int(rng.integers(1, 7))
    V = int(rng.integers(1, 4))
    U = int(rng.integers(0, 4))
    target = [int(x) for x in rng.integers(0, V, size=U)]
    logits = rng.standard_normal((T, V + 1)) * rng.uniform(0.1, 4.0)
    return logits, target


def test_oracle_equivalence_1000_instances():
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 1000:
        logits, target = random_instance(rng)
        brute = ctc.ctc_brute_force(logits, target)
        if ctc.min_frames(target) > logits.shape[0]:
            assert brute == 0.0
            continue
        assert abs(math.exp(-nll(logits, target)) - brute) < 1e-10
        checked += 1


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 3), st.integers(0, 10**6))
def test_brute_force_total_probability(T, V, seed):
    logits = np.random.default_rng(seed).standard_normal((T, V + 1))
    path_p, groups = ctc.path_probabilities(logits)
    assert abs(sum(path_p[idx].sum() for idx in groups.values()) - 1.0) < 1e-10


def test_brute_force_limits():
    with pytest.raises(ContractError):
        ctc.ctc_brute_force(np.zeros((20, 4)), [0])
    assert ctc.ctc_brute_force(np.zeros((2, 3)), [0, 1, 0]) == 0.0


def test_tiny_probabilities_stay_finite():
    logits = np.full((6, 3), -700.0)
    logits[:, 2] = 0.0
    out = nll(logits, [0, 1])
    assert np.isfinite(out) and out > 600


def test_loss_gradcheck():
    rng = np.random.default_rng(5)
    logits = Tensor(rng.standard_normal((5, 4)))
    assert finite_difference_check(lambda z: ctc.ctc_loss(z, [0, 2, 2]), logits) < 1e-4
    batch = Tensor(rng.standard_normal((2, 5, 4)))
    assert finite_difference_check(lambda z: ctc.ctc_loss(z, [[1], [0, 1]], denom=3.0), batch) < 1e-4


def test_greedy_decode_collapse_rules():
    def onehot(path, C=3):
        return np.eye(C)[path]

    assert ctc.ctc_greedy_decode(onehot([0, 0, 2, 1])) == [0, 1]
    assert ctc.ctc_greedy_decode(onehot([2, 2, 2])) == []
    assert ctc.ctc_greedy_decode(onehot([0, 2, 0])) == [0, 0]


def tiny_cfg(**kw):
    base = dict(variant="ctc", H=8, W=12, P=4, D=8, ctc_channels=(3, 4), ctc_context=(3,), dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def test_frame_count_formula():
    for W, T in ((8, 1), (12, 3), (16, 5), (20, 7)):
        cfg = tiny_cfg(W=W)
        params = ctc.init_ctc(cfg, 5, np.random.default_rng(0))
        out = ctc.frame_features(Tensor(np.ones((1, 8, W))), params, cfg)
        assert out.shape == (T, 6) == (ctc.ctc_frames(cfg), 6)


def test_too_small_image_rejected():
    with pytest.raises(ContractError):
        ctc.init_ctc(tiny_cfg(H=4, W=8, ctc_channels=(3, 3, 3)), 5, np.random.default_rng(0))


def test_full_model_gradcheck():
    cfg = tiny_cfg()
    rng = np.random.default_rng(1)
    params = ctc.init_ctc(cfg, 3, rng)
    images = rng.random((2, 1, 8, 12))
    loss = lambda: ctc.ctc_loss(ctc.frame_features(Tensor(images), params, cfg), [[0, 1], [2]])
    assert parameters_gradcheck(loss, params.values()) < 1e-4

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import adam_reference, aam_reference
from tmfuse import ops
from tmfuse.model import ModelConfig, build_model
from tmfuse.tensor import ConfigError, UsageError
from tmfuse.train import (
    AamConfig, AdamState, DatasetError, ScheduleConfig, TrainConfig, adam_step, cosine_lr, split_dataset,
    synth_dataset, train_toy,
)


def unit_rows(a):
    a = np.asarray(a, dtype=float)
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# AAM softmax
# ---------------------------------------------------------------------------


def test_aam_matches_scalar_oracle(rng):
    e, w = unit_rows(rng.standard_normal((5, 4))), unit_rows(rng.standard_normal((3, 4)))
    y = np.array([0, 1, 2, 2, 0])
    got = float(ops.aam_softmax_loss(e, w, y, 0.2, 30.0).data)
    assert got == pytest.approx(aam_reference(e, w, y, 0.2, 30.0), abs=1e-12)


def test_aam_without_margin_is_cross_entropy(rng):
    e, w = unit_rows(rng.standard_normal((4, 6))), unit_rows(rng.standard_normal((5, 6)))
    y = np.array([4, 0, 1, 1])
    logits = e @ w.T
    ce = np.mean([-(logits[i, y[i]] - np.log(np.exp(logits[i]).sum())) for i in range(4)])
    assert float(ops.aam_softmax_loss(e, w, y, 0.0, 1.0).data) == pytest.approx(ce, abs=1e-12)


def test_aam_aligned_embedding():
    w = np.eye(3)
    e = np.array([[1.0, 0.0, 0.0]])
    cy = 1 - 1e-7
    want = -math.log(math.exp(30 * math.cos(math.acos(cy) + 0.2)) /
                     (math.exp(30 * math.cos(math.acos(cy) + 0.2)) + 2 * math.exp(0.0)))
    assert float(ops.aam_softmax_loss(e, w, [0], 0.2, 30.0).data) == pytest.approx(want, rel=1e-9)


@given(seed=st.integers(0, 9999))
def test_aam_monotone_in_margin(seed):
    rng = np.random.default_rng(seed)
    e, w = unit_rows(rng.standard_normal((3, 4))), unit_rows(rng.standard_normal((4, 4)))
    y = rng.integers(0, 4, 3)
    # cos(theta + m) only falls while theta + m <= pi, so sweep up to that point
    theta = np.arccos(np.clip(np.einsum("ij,ij->i", e, w[y]), -1, 1)).max()
    top = min(1.5, np.pi - theta)
    losses = [float(ops.aam_softmax_loss(e, w, y, m, 30.0).data) for m in np.linspace(0, top, 16)]
    assert all(b >= a - 1e-12 for a, b in zip(losses, losses[1:]))


def test_aam_rejects_unnormalised(rng):
    w = unit_rows(rng.standard_normal((3, 4)))
    with pytest.raises(UsageError):
        ops.aam_softmax_loss(2 * unit_rows(rng.standard_normal((2, 4))), w, [0, 1])
    with pytest.raises(ConfigError):
        AamConfig(margin=2.0)


# ---------------------------------------------------------------------------
# Adam and schedule
# ---------------------------------------------------------------------------


def test_adam_matches_oracle(rng):
    p = rng.standard_normal(5)
    grads = [rng.standard_normal(5) for _ in range(4)]
    lrs = [1e-3, 2e-3, 5e-4, 1e-3]
    state = AdamState.zeros_like([p])
    cur = [p]
    for g, lr in zip(grads, lrs):
        cur, state = adam_step(cur, [g], state, lr)
    assert np.allclose(cur[0], adam_reference(p, grads, lrs), atol=1e-15)
    assert state.step == 4


def test_adam_zero_gradient_and_first_step(rng):
    p = rng.standard_normal(3)
    state = AdamState.zeros_like([p])
    (q,), s1 = adam_step([p], [np.zeros(3)], state, 0.1)
    assert np.array_equal(q, p) and s1.step == 1 and not s1.m[0].any() and not s1.v[0].any()
    (q,), _ = adam_step([p], [np.array([3.0, -0.5, 1e-2])], state, 0.1)
    assert np.allclose(np.abs(q - p), 0.1, rtol=1e-5)


def test_schedule_examples():
    cfg = ScheduleConfig(total_steps=111, warmup_steps=10, lr_max=1e-3, lr_min=1e-8)
    assert cosine_lr(0, cfg) == 0.0
    assert cosine_lr(10, cfg) == 1e-3
    assert abs(cosine_lr(110, cfg) - 1e-8) <= 1e-12
    assert cosine_lr(60, cfg) == pytest.approx((1e-3 + 1e-8) / 2, abs=1e-15)
    for bad in (-1, 111):
        with pytest.raises(UsageError):
            cosine_lr(bad, cfg)
    with pytest.raises(ConfigError):
        ScheduleConfig(total_steps=5, warmup_steps=5)
    with pytest.raises(ConfigError):
        ScheduleConfig(total_steps=50, lr_max=1e-8, lr_min=1e-3)


@given(total=st.integers(2, 400), warm=st.integers(0, 399))
def test_schedule_shape(total, warm):
    warm = min(warm, total - 1)
    cfg = ScheduleConfig(total, warm)
    lrs = [cosine_lr(s, cfg) for s in range(total)]
    assert all(b >= a for a, b in zip(lrs[: warm + 1], lrs[1 : warm + 1]))
    assert all(b <= a for a, b in zip(lrs[warm:], lrs[warm + 1 :]))
    assert all(0.0 <= x <= cfg.lr_max for x in lrs)


# ---------------------------------------------------------------------------
# data and training
# ---------------------------------------------------------------------------


def test_synth_dataset():
    a = synth_dataset(3, 4, n=8, t=5, seed=1)
    b = synth_dataset(3, 4, n=8, t=5, seed=1)
    assert np.array_equal(a.features, b.features) and a.features.shape == (12, 8, 5)
    quiet = synth_dataset(2, 3, n=8, t=5, seed=1, noise=0.0)
    assert np.array_equal(quiet.features[0], quiet.features[2])
    assert not np.array_equal(quiet.features[0], quiet.features[3])
    with pytest.raises(DatasetError):
        synth_dataset(1, 4)


def test_split():
    tr, va = split_dataset(synth_dataset(3, 5, n=4, t=3), 2)
    assert len(tr) == 9 and len(va) == 6
    assert list(va.speakers) == [0, 0, 1, 1, 2, 2]
    with pytest.raises(DatasetError):
        split_dataset(synth_dataset(2, 2, n=4, t=3), 2)


SMALL = ModelConfig(n=16, l=4, channels=4, kernel=(3,), dilation=(1, 2), embedding_dim=8)


def test_zero_epochs_leave_model_unchanged():
    data = synth_dataset(3, 5, n=16, t=20, seed=0)
    model = build_model(SMALL, seed=0)
    before = [t.data.copy() for t in model.parameters()]
    res = train_toy(model, data, TrainConfig(epochs=0, val_per_speaker=2))
    assert len(res.log) == 1
    assert all(np.array_equal(a, t.data) for a, t in zip(before, model.parameters()))


def test_training_reduces_loss_and_is_deterministic():
    data = synth_dataset(4, 8, n=16, t=30, seed=2, noise=1.0)
    cfg = TrainConfig(epochs=3, batch_size=8, val_per_speaker=2, seed=2, lr_max=5e-3)
    r1 = train_toy(SMALL, data, cfg)
    r2 = train_toy(SMALL, data, cfg)
    assert r1.log_tsv() == r2.log_tsv()
    assert r1.log[1].loss < r1.log[0].loss
    assert r1.log_tsv().splitlines()[0] == "epoch\tloss\tval_eer\tlr"


def test_two_speakers_separate():
    data = synth_dataset(2, 12, n=16, t=30, seed=5, noise=0.1)
    res = train_toy(SMALL, data, TrainConfig(epochs=5, batch_size=8, val_per_speaker=4, seed=5, lr_max=5e-3))
    assert res.log[-1].val_eer < 0.05


def test_invalid_dataset():
    data = synth_dataset(2, 4, n=12, t=10)
    with pytest.raises(DatasetError):
        train_toy(SMALL, data, TrainConfig(epochs=1, val_per_speaker=1))

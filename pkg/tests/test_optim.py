"""AdamW and learning-rate schedule contracts."""

import math

import numpy as np
import pytest

from groundlex.optim import AdamWState, LRSchedule, adamw_step, lr_at
from groundlex.tensor import Tensor


def make_param(values):
    p = Tensor(np.asarray(values, dtype=float), requires_grad=True)
    p.grad = np.ones_like(p.data)
    return p


def test_adamw_lr_zero_is_identity():
    p = make_param([1.0, -2.0, 3.0])
    state = AdamWState(weight_decay=0.1)
    before = p.data.copy()
    adamw_step({"p": p}, state, lr=0.0)
    np.testing.assert_array_equal(p.data, before)
    assert state.first_moment == {} and state.second_moment == {}
    assert state.step_count == 1


def test_adamw_first_step_moves_by_lr():
    # Closed form with bias correction: m_hat = g, v_hat = g^2, so the first
    # step with g = 1 and wd = 0 moves by -lr/(1 + eps).
    p = make_param([0.0])
    state = AdamWState(weight_decay=0.0, epsilon=1e-8)
    adamw_step({"p": p}, state, lr=0.01)
    assert abs(p.data[0] + 0.01) < 1e-9


def test_adamw_decoupled_weight_decay():
    # Zero gradient: the only movement is the multiplicative decay.
    p = make_param([10.0])
    p.grad = np.zeros_like(p.data)
    state = AdamWState(weight_decay=0.1)
    adamw_step({"p": p}, state, lr=0.5)
    np.testing.assert_allclose(p.data, [10.0 * (1 - 0.5 * 0.1)])


def test_adamw_default_weight_decay_matches_training_configuration():
    assert AdamWState().weight_decay == 0.1


def test_adamw_shape_mismatch():
    p = make_param([1.0, 2.0])
    p.grad = np.ones(3)
    with pytest.raises(Exception):
        adamw_step({"p": p}, AdamWState(), lr=0.1)


def test_adamw_step_count_strictly_increases():
    p = make_param([1.0])
    state = AdamWState()
    for expected in range(1, 5):
        adamw_step({"p": p}, state, lr=1e-3)
        assert state.step_count == expected


def test_lr_schedule_endpoints():
    sched = LRSchedule(peak_lr=1e-4, warmup_steps=5000, total_steps=20000)
    assert lr_at(sched, 0) == 0.0
    assert lr_at(sched, 5000) == pytest.approx(1e-4)
    assert abs(lr_at(sched, 20000)) < 1e-12


def test_lr_schedule_warmup_is_linear():
    sched = LRSchedule(peak_lr=2e-3, warmup_steps=100, total_steps=1000)
    for step in (1, 25, 50, 99):
        assert lr_at(sched, step) == pytest.approx(2e-3 * step / 100)


def test_lr_schedule_clamps_past_total():
    sched = LRSchedule(peak_lr=1.0, warmup_steps=10, total_steps=100)
    assert lr_at(sched, 150) == lr_at(sched, 100)


def test_lr_schedule_nonnegative_and_continuous_at_warmup():
    sched = LRSchedule(peak_lr=3e-4, warmup_steps=500, total_steps=5000)
    values = [lr_at(sched, s) for s in range(0, 5001, 7)]
    assert all(v >= 0.0 for v in values)
    left = lr_at(sched, 499)
    right = lr_at(sched, 501)
    peak = lr_at(sched, 500)
    assert left < peak <= 3e-4 and right < peak
    assert peak == pytest.approx(3e-4)


def test_lr_schedule_rejects_bad_bounds():
    with pytest.raises(ValueError):
        LRSchedule(peak_lr=1.0, warmup_steps=0, total_steps=10)
    with pytest.raises(ValueError):
        LRSchedule(peak_lr=1.0, warmup_steps=10, total_steps=5)

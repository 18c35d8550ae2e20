import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eccfm.channel import ChannelConfig, RngStream, ebn0_to_sigma, modulate_bpsk, transmit
from eccfm.diffusion import (DiffusionSchedule, ScheduleCoverageError, cumulative_variance, ddecc_target,
                             sample_pair)

SCHED = DiffusionSchedule(0.01, 8)


def test_cumulative_values():
    assert cumulative_variance(SCHED, 0) == 0.0
    assert cumulative_variance(SCHED, 5) == pytest.approx(0.05, abs=1e-15)
    assert cumulative_variance(SCHED, 0.8 * 5) == pytest.approx(0.04, abs=1e-15)
    for t in (-0.1, 8.5):
        with pytest.raises(ValueError, match="t must lie"):
            cumulative_variance(SCHED, t)


@given(st.floats(0, 8), st.floats(0, 8))
def test_cumulative_monotone(a, b):
    lo, hi = sorted((a, b))
    assert cumulative_variance(SCHED, lo) <= cumulative_variance(SCHED, hi)


def test_schedule_defaults_and_validation():
    s = DiffusionSchedule.for_code(7, 4)
    assert (s.N, s.beta_step) == (8, 0.01)
    assert DiffusionSchedule.for_code(7, 4, steps_override=56).N == 56
    with pytest.raises(ValueError, match="beta_step"):
        DiffusionSchedule(0.0, 4)
    with pytest.raises(ValueError, match="total_steps"):
        DiffusionSchedule(0.01, 0)


def test_coverage_guard():
    sigma = ebn0_to_sigma(2.0, 4 / 7)  # sigma^2 = 1 / (8/7 * 10^0.2) = 0.5521
    with pytest.raises(ScheduleCoverageError, match="at least 56 steps"):
        DiffusionSchedule.for_code(7, 4).require_coverage(sigma)
    n = DiffusionSchedule.steps_to_cover(sigma)
    DiffusionSchedule(0.01, n).require_coverage(sigma)
    assert n * 0.01 >= sigma**2 > (n - 1) * 0.01


def test_zero_noise_and_alpha_one():
    x0 = modulate_bpsk(np.array([0, 1, 1, 0, 1, 0, 0], dtype=np.uint8))
    p = sample_pair(x0, 5, 0.8, SCHED, None, epsilon=np.zeros(7))
    assert np.array_equal(p.x_t, x0) and np.array_equal(p.x_r, x0)
    q = sample_pair(x0, 5, 1.0, SCHED, np.random.default_rng(0))
    assert np.array_equal(q.x_t, q.x_r)
    assert q.r == 5.0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.floats(0, 1), st.integers(0, 2**31))
def test_shared_noise_identity(t, alpha, seed):
    x0 = np.ones(7)
    p = sample_pair(x0, t, alpha, SCHED, np.random.default_rng(seed))
    gap = (math.sqrt(SCHED.cumulative(t)) - math.sqrt(SCHED.cumulative(alpha * t))) * p.epsilon
    assert np.allclose(p.x_t - p.x_r, gap, atol=1e-14)
    assert p.r <= t


def test_batched_steps():
    x0 = np.ones((3, 7))
    t = np.array([1, 4, 8])
    eps = np.ones((3, 7))
    p = sample_pair(x0, t, 0.5, SCHED, None, epsilon=eps)
    assert np.allclose(p.x_t[:, 0] - 1, np.sqrt(0.01 * t))
    assert np.allclose(p.x_r[:, 0] - 1, np.sqrt(0.005 * t))


@pytest.mark.parametrize("t, alpha", [(0, 0.5), (9, 0.5), (2.5, 0.5), (3, -0.1), (3, 1.1)])
def test_sample_pair_rejects(t, alpha):
    with pytest.raises(ValueError):
        sample_pair(np.ones(7), t, alpha, SCHED, np.random.default_rng(0))


@pytest.mark.parametrize("t", [1, 4, 8])
def test_forward_variance(t):
    rng = np.random.default_rng(10 + t)
    draws = 100_000
    x0 = np.ones((draws, 1))
    p = sample_pair(x0, np.full(draws, t), 0.8, SCHED, rng)
    z = (p.x_t - x0).ravel()
    target = SCHED.cumulative(t)
    se = target * math.sqrt(2 / (draws - 1))
    assert abs(z.var(ddof=1) - target) < 3 * se


def test_forward_matches_channel_at_covering_step():
    # a channel draw at sigma and a forward draw at beta_bar = sigma^2 share a distribution
    sched = DiffusionSchedule(0.01, 49)
    sigma = math.sqrt(0.49)
    draws = 100_000
    x0 = np.ones(draws)
    y, _ = transmit(x0, ChannelConfig(0.0, 1.0, sigma_override=sigma), RngStream(3))
    p = sample_pair(x0[:, None], np.full(draws, 49), 0.8, sched, np.random.default_rng(4))
    se = 0.49 * math.sqrt(2 / (draws - 1))
    assert abs((y - x0).var(ddof=1) - (p.x_t[:, 0] - 1).var(ddof=1)) < 3 * math.sqrt(2) * se


def test_ddecc_target():
    x0 = modulate_bpsk(np.array([0, 1, 0, 1], dtype=np.uint8))
    assert not ddecc_target(x0, x0).any()
    xt = x0.copy()
    xt[2] = -0.3
    assert ddecc_target(x0, xt).tolist() == [0, 0, 1, 0]
    assert ddecc_target(x0, np.zeros(4)).tolist() == [0, 0, 0, 0]

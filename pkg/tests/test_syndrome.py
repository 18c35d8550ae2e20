import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eccfm.channel import modulate_bpsk
from eccfm.codes import HAMMING74_H, ParityCheckMatrix
from eccfm.syndrome import (SATURATION_FLOOR, SaturatedSyndromeError, soft_syndrome, soft_syndrome_condition,
                            soft_syndrome_loss, soft_syndrome_loss_and_grad, syndrome_error_sum)

H = ParityCheckMatrix(HAMMING74_H)


def reference_soft_syndrome(x, rows, sigma):
    """Literal per-check loop with the logistic form ``2*sigmoid(2x/sigma^2) - 1``."""
    out = []
    for row in rows:
        prod = 1.0
        for i, h in enumerate(row):
            if h:
                prod *= 2.0 / (1.0 + math.exp(-2.0 * x[i] / sigma**2)) - 1.0
        out.append(0.5 - 0.5 * prod)
    return np.array(out)


finite = st.floats(-4, 4, allow_nan=False)


# --- hard sum -----------------------------------------------------------------------------

def test_error_sum_examples(hamming):
    for w in modulate_bpsk(hamming.codewords()):
        assert syndrome_error_sum(w, H) == 0
    for i in range(7):
        y = np.ones(7)
        y[i] = -1.0
        assert syndrome_error_sum(y, H) == H.col_weights[i]
    assert syndrome_error_sum(np.zeros(7), H) == 0
    with pytest.raises(ValueError, match="last dimension 7"):
        syndrome_error_sum(np.ones(6), H)


# --- soft syndrome --------------------------------------------------------------------------

def test_weight_four_all_plus_one():
    h4 = ParityCheckMatrix(np.array([[1, 1, 1, 1, 0], [0, 0, 0, 1, 1]], dtype=np.uint8))
    s = soft_syndrome(np.ones(5), h4, 1.0).values
    # sigmoid(2) = 0.880797 -> factor 0.761594; 0.5 - 0.5 * factor^4
    assert s[0] == pytest.approx(0.331785, abs=1e-6)


def test_zero_coordinate_gives_half():
    x = np.array([0.9, -1.2, 0.0, 0.4, 1.1, -0.3, 2.0])
    s = soft_syndrome(x, H, 0.8).values
    for j in np.flatnonzero(HAMMING74_H[:, 2]):
        assert s[j] == 0.5


def test_valid_codeword_small_sigma():
    cw = modulate_bpsk(np.array([[0] * 7, [1, 1, 1, 0, 0, 0, 0]], dtype=np.uint8))
    assert not np.any(syndrome_error_sum(cw, H))
    assert np.all(soft_syndrome_condition(cw, H, 0.3) < 1e-6)


def test_condition_values():
    one = ParityCheckMatrix(np.array([[1, 1]], dtype=np.uint8))
    assert soft_syndrome_condition(np.array([0.0, 1.0]), one, 1.0) == pytest.approx(math.log(2))
    # Hamming rows all have weight 4, so each check equals the weight-4 value above
    assert soft_syndrome_condition(np.ones(7), H, 1.0) == pytest.approx(-math.log(1 - 0.3317851), abs=1e-6)
    # -ln(0.668215) = 0.403146; a quoted 0.40317 is off in the fifth place
    assert soft_syndrome_condition(np.ones(7), H, 1.0) == pytest.approx(0.403146, abs=1e-6)


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, 7, elements=finite), st.floats(0.3, 2.0))
def test_matches_reference_and_bounds(x, sigma):
    s = soft_syndrome(x, H, sigma).values
    assert np.allclose(s, reference_soft_syndrome(x, HAMMING74_H, sigma), atol=1e-12)
    assert np.all((s >= 0) & (s <= 1))
    assert soft_syndrome_condition(x, H, sigma) >= 0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 7, elements=st.floats(0.05, 3)), st.integers(0, 6))
def test_flip_increases_violation(x, i):
    flipped = x.copy()
    flipped[i] = -x[i]
    before, after = soft_syndrome(x, H, 1.0).values, soft_syndrome(flipped, H, 1.0).values
    touched = HAMMING74_H[:, i].astype(bool)
    assert np.all(after[touched] > before[touched])
    assert np.allclose(after[~touched], before[~touched])


def test_row_permutation_invariance_and_mean():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(10, 7))
    perm = ParityCheckMatrix(HAMMING74_H[[2, 0, 1]])
    assert np.allclose(soft_syndrome_condition(x, H, 0.9), soft_syndrome_condition(x, perm, 0.9))
    # repeating every check leaves a mean unchanged (a sum would double)
    doubled = ParityCheckMatrix(np.vstack([HAMMING74_H, HAMMING74_H]))
    assert np.allclose(soft_syndrome_condition(x, doubled, 0.9), soft_syndrome_condition(x, H, 0.9))


def test_batch_and_per_sample_sigma():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(6, 7))
    sig = rng.uniform(0.4, 1.5, size=6)
    batched = soft_syndrome_condition(x, H, sig)
    single = [soft_syndrome_condition(x[b], H, sig[b]) for b in range(6)]
    assert np.allclose(batched, single)


def test_sigma_validation():
    with pytest.raises(ValueError, match="sigma"):
        soft_syndrome(np.ones(7), H, 0.0)
    with pytest.raises(ValueError, match="sigma"):
        soft_syndrome(np.ones(7), H, -1.0)


def test_saturation_clamp_and_error():
    x = 50.0 * np.ones(7)
    x[6] = -50.0  # coordinate 6 sits in every check -> each has one negative -> s = 1
    assert soft_syndrome(x, H, 0.5).values == pytest.approx(np.ones(3))
    assert soft_syndrome_condition(x, H, 0.5) == pytest.approx(-math.log(SATURATION_FLOOR))
    with pytest.raises(SaturatedSyndromeError):
        soft_syndrome_condition(x, H, 0.5, clamp=False)


# --- loss and gradient -------------------------------------------------------------------------

def test_loss_equals_condition():
    rng = np.random.default_rng(6)
    x = rng.normal(1, 1, size=(5, 7))
    assert np.allclose(soft_syndrome_loss(x, H, 0.7), soft_syndrome_condition(x, H, 0.7))
    cw = 30.0 * modulate_bpsk(np.zeros(7, dtype=np.uint8))
    assert soft_syndrome_loss(cw, H, 1.0) < 1e-12


def test_prob_input_maps_to_bipolar():
    p = np.array([0.1, 0.9, 0.2, 0.3, 0.5, 0.8, 0.05])
    assert soft_syndrome_loss(p, H, 0.6, from_probs=True) == pytest.approx(
        soft_syndrome_condition(1 - 2 * p, H, 0.6))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 7, elements=st.floats(-2.5, 2.5)), st.floats(0.5, 1.5), st.booleans())
def test_gradient_finite_differences(x, sigma, probs):
    if probs:
        x = 1 / (1 + np.exp(-x))
    _, g = soft_syndrome_loss_and_grad(x, H, sigma, from_probs=probs)
    h = 1e-6
    for i in range(7):
        e = np.zeros(7)
        e[i] = h
        fd = (soft_syndrome_loss(x + e, H, sigma, from_probs=probs)
              - soft_syndrome_loss(x - e, H, sigma, from_probs=probs)) / (2 * h)
        assert abs(fd - g[i]) <= 1e-5 * max(abs(fd), abs(g[i]), 1e-4)


def test_zero_factor_gradient_uses_leave_one_out():
    # a zero coordinate makes the check product vanish; the gradient must still be finite and correct
    x = np.array([0.0, 0.7, -0.4, 1.2, 0.3, 0.9, -1.1])
    _, g = soft_syndrome_loss_and_grad(x, H, 1.0)
    assert np.all(np.isfinite(g))
    e = np.zeros(7)
    e[0] = 1e-6
    fd = (soft_syndrome_loss(x + e, H, 1.0) - soft_syndrome_loss(x - e, H, 1.0)) / 2e-6
    assert g[0] == pytest.approx(fd, rel=1e-5)

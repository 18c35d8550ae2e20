"""Hard syndrome-error sums and the differentiable soft syndrome.

The soft syndrome of check ``j`` under a mean-field (independent bits) model is::

    s_j = 1/2 - 1/2 * prod_{i in N(j)} (2*sigmoid(2 x_i / sigma^2) - 1)

and the noise condition is ``e = -(1/m) sum_j log(1 - s_j)``.  Note
``2*sigmoid(2u) - 1 == tanh(u)``, which is what is evaluated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import demodulate_hard
from .codes import ParityCheckMatrix, hard_syndrome

#: floor applied to ``1 - s_j`` before the log
SATURATION_FLOOR = 1e-12


class SaturatedSyndromeError(ValueError):
    """A check has ``s_j == 1`` and the unclamped condition is infinite."""


def _check_len(x: np.ndarray, H: ParityCheckMatrix) -> None:
    if x.shape[-1] != H.n:
        raise ValueError(f"expected last dimension {H.n}, got shape {x.shape}")


def _sigma_array(sigma, batch_shape) -> np.ndarray:
    s = np.asarray(sigma, dtype=np.float64)
    if np.any(~(s > 0)):
        raise ValueError(f"sigma must be positive, got {sigma}")
    return np.broadcast_to(s, batch_shape) if s.ndim else s


def syndrome_error_sum(y, H: ParityCheckMatrix):
    """Number of unsatisfied checks of the hard decision of ``y``."""
    y = np.asarray(y, dtype=np.float64)
    _check_len(y, H)
    return hard_syndrome(demodulate_hard(y), H).sum(axis=-1).astype(np.int64)


def _gather(factors: np.ndarray, H: ParityCheckMatrix) -> np.ndarray:
    pad = np.ones(factors.shape[:-1] + (1,))
    return np.concatenate([factors, pad], axis=-1)[..., H.padded_supports]


def _leave_one_out_products(f: np.ndarray) -> np.ndarray:
    """``out[..., a] = prod_{b != a} f[..., b]`` without division."""
    ones = np.ones(f.shape[:-1] + (1,))
    prefix = np.cumprod(np.concatenate([ones, f[..., :-1]], axis=-1), axis=-1)
    rev = f[..., ::-1]
    suffix = np.cumprod(np.concatenate([ones, rev[..., :-1]], axis=-1), axis=-1)[..., ::-1]
    return prefix * suffix


@dataclass(frozen=True)
class SoftSyndrome:
    values: np.ndarray  # (..., m), each in [0, 1]
    sigma_used: np.ndarray | float


def _tanh_factors(x: np.ndarray, sigma) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(sigma, dtype=np.float64)
    s2 = (s**2)[..., None] if s.ndim else s**2
    return np.tanh(x / s2), s2


def soft_syndrome(x_t, H: ParityCheckMatrix, sigma) -> SoftSyndrome:
    x = np.asarray(x_t, dtype=np.float64)
    _check_len(x, H)
    sig = _sigma_array(sigma, x.shape[:-1])
    f, _ = _tanh_factors(x, sig)
    prod = _gather(f, H).prod(axis=-1)
    return SoftSyndrome(values=0.5 - 0.5 * prod, sigma_used=sig)


def soft_syndrome_condition(x_t, H: ParityCheckMatrix, sigma, clamp: bool = True):
    """``e_soft = -(1/m) sum_j log(1 - s_j)``, per sample.

    With ``clamp=False`` a saturated check raises :class:`SaturatedSyndromeError`
    instead of being floored at :data:`SATURATION_FLOOR`.
    """
    s = soft_syndrome(x_t, H, sigma).values
    sat = 1.0 - s
    if not clamp and np.any(sat <= 0):
        raise SaturatedSyndromeError("soft syndrome saturated at 1; condition is infinite")
    return -np.log(np.maximum(sat, SATURATION_FLOOR)).mean(axis=-1)


def soft_syndrome_loss_and_grad(x, H: ParityCheckMatrix, sigma, *, from_probs: bool = False):
    """Soft-syndrome regulariser ``+e_soft`` and its gradient w.r.t. ``x``.

    With ``from_probs`` the input holds bit-one probabilities ``p`` and is mapped to the
    bipolar expectation ``1 - 2p`` first.  For a batch the per-sample values are
    returned (the gradient is that of each sample's own value).
    """
    x = np.asarray(x, dtype=np.float64)
    _check_len(x, H)
    v = 1.0 - 2.0 * x if from_probs else x
    sig = _sigma_array(sigma, v.shape[:-1])
    f, s2 = _tanh_factors(v, sig)
    g = _gather(f, H)  # (..., m, w)
    loo = _leave_one_out_products(g)
    prod = g.prod(axis=-1)
    sat = 0.5 + 0.5 * prod  # 1 - s_j
    m = H.m
    live = sat > SATURATION_FLOOR
    value = -np.log(np.where(live, sat, SATURATION_FLOOR)).sum(axis=-1) / m
    d_prod = np.where(live, -0.5 / np.where(live, sat, 1.0), 0.0) / m  # d value / d prod_j
    d_f_edges = d_prod[..., None] * loo  # (..., m, w)
    edges = d_f_edges.reshape(v.shape[:-1] + (-1,))
    d_f = (edges @ H.edge_scatter)[..., : H.n]
    grad = d_f * (1.0 - f**2) / s2
    if from_probs:
        grad = -2.0 * grad
    return value, grad


def soft_syndrome_loss(x, H: ParityCheckMatrix, sigma, *, from_probs: bool = False):
    return soft_syndrome_loss_and_grad(x, H, sigma, from_probs=from_probs)[0]

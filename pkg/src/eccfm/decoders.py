"""Inference procedures: one-step and multi-step consistency decoding, iterative
syndrome-indexed denoising (DDECC), flooding belief propagation, exhaustive ML
and plain hard decision.

Every ``decode_*`` function is batch-native: ``y`` may be a single word ``(n,)``
or a batch ``(B, n)``, and the outcome fields follow the same leading shape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import as_generator, demodulate_hard, modulate_bpsk
from .codes import LinearCode, ParityCheckMatrix, hard_syndrome
from .diffusion import DiffusionSchedule
from .syndrome import soft_syndrome_condition, syndrome_error_sum

LLR_CLAMP = 30.0
ML_MAX_K = 16


class DecoderError(ValueError):
    pass


@dataclass
class DecodeOutcome:
    """Decoder result for one word or a batch.

    ``per_step_trace`` holds, per word, a ``(steps_used, 2)`` array of
    ``(e_hard, e_soft)`` measured after each iteration.  ``distance`` is only
    set by the exhaustive ML decoder.
    """

    bits: np.ndarray
    steps_used: np.ndarray | int
    converged: np.ndarray | bool
    per_step_trace: list[np.ndarray] | np.ndarray | None = None
    distance: np.ndarray | float | None = None


def _batch(y) -> tuple[np.ndarray, bool]:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim not in (1, 2):
        raise DecoderError(f"expected a word or a batch of words, got shape {y.shape}")
    return np.atleast_2d(y), y.ndim == 1


def _outcome(bits, steps, converged, single: bool, trace=None, distance=None) -> DecodeOutcome:
    bits = np.asarray(bits, dtype=np.uint8)
    steps = np.asarray(steps, dtype=np.int64)
    converged = np.asarray(converged, dtype=bool)
    if single:
        return DecodeOutcome(bits[0], int(steps[0]), bool(converged[0]),
                             None if trace is None else trace[0],
                             None if distance is None else float(distance[0]))
    return DecodeOutcome(bits, steps, converged, trace, distance)


def _valid(bits, H: ParityCheckMatrix) -> np.ndarray:
    return ~hard_syndrome(bits, H).any(axis=-1)


def _require_model(model, H: ParityCheckMatrix, output: str) -> None:
    mh = getattr(model, "H", None)
    if mh is not None and mh != H:
        raise DecoderError("model was built for a different parity-check matrix")
    if getattr(model, "output", output) != output:
        raise DecoderError(f"decoder needs a model with a {output!r} output head, got {model.output!r}")


def _condition(model, x, H, sigma) -> np.ndarray:
    if getattr(model, "condition_kind", "soft") == "hard":
        return syndrome_error_sum(x, H).astype(np.float64)
    return soft_syndrome_condition(x, H, sigma)


# --- consistency decoders --------------------------------------------------------

def decode_one_step(model, y, H: ParityCheckMatrix, sigma: float) -> DecodeOutcome:
    """Single network evaluation conditioned on the received word's noise level.

    Bits are ``p > 0.5``, so an exact tie decodes to 0.
    """
    yb, single = _batch(y)
    _require_model(model, H, "codeword")
    p = model.predict_proba(yb, _condition(model, yb, H, sigma))
    bits = (p > 0.5).astype(np.uint8)
    return _outcome(bits, np.ones(len(yb)), _valid(bits, H), single)


def decode_multi_step(model, y, H: ParityCheckMatrix, sigma: float, n_steps: int,
                      renoise_fraction: float, schedule: DiffusionSchedule, rng=None) -> DecodeOutcome:
    """Decode, re-modulate, add fresh noise of variance ``beta_bar(fraction * N)``, repeat.

    The re-noised input is conditioned at the re-noising standard deviation,
    floored at one schedule step so a zero fraction stays well defined.
    """
    if n_steps < 1:
        raise DecoderError("n_steps must be at least 1")
    if not 0.0 <= renoise_fraction <= 1.0:
        raise DecoderError(f"renoise_fraction must lie in [0, 1], got {renoise_fraction}")
    out = decode_one_step(model, y, H, sigma)
    if n_steps == 1:
        return out
    gen = as_generator(rng)
    var = schedule.cumulative(renoise_fraction * schedule.N)
    cond_sigma = max(np.sqrt(var), np.sqrt(schedule.beta_step))
    for _ in range(n_steps - 1):
        x = modulate_bpsk(out.bits)
        if var > 0:
            x = x + np.sqrt(var) * gen.standard_normal(x.shape)
        out = decode_one_step(model, x, H, cond_sigma)
    single = np.ndim(out.bits) == 1
    steps = np.full(1 if single else len(out.bits), n_steps)
    bits = np.atleast_2d(out.bits)
    return _outcome(bits, steps, _valid(bits, H), single)


# --- DDECC -------------------------------------------------------------------------

def ddecc_coefficient(schedule: DiffusionSchedule, t) -> np.ndarray:
    """Reverse-step gain ``sqrt(beta_bar_t) * beta / (beta_bar_t + beta)``."""
    bb = schedule.cumulative(t)
    b = schedule.beta_step
    return np.sqrt(bb) * b / (bb + b)


def decode_ddecc(model, y, H: ParityCheckMatrix, sigma: float, schedule: DiffusionSchedule,
                 max_steps: int | None = None, trace: bool = False) -> DecodeOutcome:
    """Iterative denoising indexed by the syndrome error sum.

    Each iteration recomputes ``e_hard``, stops the word if it is zero, and
    otherwise uses ``t = clamp(e_hard, 1, N)`` both as the network condition
    (for hard-conditioned models) and as the schedule index of the update
    ``x <- x - c_t * (x - sign(x) * eps_hat)`` with ``eps_hat = 1 - 2q``.
    """
    if max_steps is None:
        max_steps = 2 * schedule.N
    if max_steps <= 0:
        raise DecoderError("max_steps must be positive")
    _require_model(model, H, "noise")
    yb, single = _batch(y)
    x = yb.copy()
    B = len(x)
    steps = np.zeros(B, dtype=np.int64)
    e = syndrome_error_sum(x, H)
    rows: list[list] = [[] for _ in range(B)] if trace else None
    active = np.flatnonzero(e > 0)
    for _ in range(max_steps):
        if active.size == 0:
            break
        xa, ea = x[active], e[active]
        t = np.clip(ea, 1, schedule.N)
        if getattr(model, "condition_kind", "hard") == "hard":
            cond = ea.astype(np.float64)
        else:
            cond = soft_syndrome_condition(xa, H, sigma)
        q = model.predict_proba(xa, cond)
        sgn = np.where(xa >= 0, 1.0, -1.0)
        xa = xa - ddecc_coefficient(schedule, t)[:, None] * (xa - sgn * (1.0 - 2.0 * q))
        x[active] = xa
        steps[active] += 1
        ea = syndrome_error_sum(xa, H)
        e[active] = ea
        if trace:
            es = soft_syndrome_condition(xa, H, sigma)
            for i, a in enumerate(active):
                rows[a].append((ea[i], es[i]))
        active = active[ea > 0]
    bits = demodulate_hard(x)
    tr = [np.asarray(r, dtype=np.float64).reshape(-1, 2) for r in rows] if trace else None
    return _outcome(bits, steps, e == 0, single, tr)


# --- belief propagation ----------------------------------------------------------

def check_node_update(v2c, mask=None) -> np.ndarray:
    """Sum-product check-to-variable messages along the last axis.

    ``out[..., a] = 2 atanh(prod_{b != a} tanh(v2c[..., b] / 2))``.  Entries with
    ``mask == False`` are padding: they contribute a neutral factor and get 0.
    """
    v2c = np.asarray(v2c, dtype=np.float64)
    t = np.tanh(np.clip(v2c, -LLR_CLAMP, LLR_CLAMP) / 2.0)
    if mask is not None:
        t = np.where(mask, t, 1.0)
    ones = np.ones(t.shape[:-1] + (1,))
    prefix = np.cumprod(np.concatenate([ones, t[..., :-1]], axis=-1), axis=-1)
    suffix = np.cumprod(np.concatenate([ones, t[..., :0:-1]], axis=-1), axis=-1)[..., ::-1]
    loo = np.clip(prefix * suffix, -1.0 + 1e-15, 1.0 - 1e-15)
    out = np.clip(2.0 * np.arctanh(loo), -LLR_CLAMP, LLR_CLAMP)
    return out if mask is None else np.where(mask, out, 0.0)


def decode_bp(y, H: ParityCheckMatrix, sigma: float, max_iters: int = 50) -> DecodeOutcome:
    """Flooding sum-product on the Tanner graph with channel LLRs ``2y/sigma^2``.

    Words whose channel hard decision is already valid exit with 0 iterations;
    the rest stop at the first iteration whose posterior decision is valid.
    """
    if max_iters < 1:
        raise DecoderError("max_iters must be at least 1")
    yb, single = _batch(y)
    if yb.shape[-1] != H.n:
        raise DecoderError(f"expected {H.n} samples per word, got shape {yb.shape}")
    idx = H.padded_supports  # (m, w), padded with n
    mask = idx < H.n
    # a noiseless channel (sigma = 0) saturates every LLR at the clamp
    llr = np.clip(2.0 * yb / max(sigma**2, np.finfo(float).tiny), -LLR_CLAMP, LLR_CLAMP)
    bits = demodulate_hard(yb)
    steps = np.zeros(len(yb), dtype=np.int64)
    active = np.flatnonzero(~_valid(bits, H))
    L = llr[active]
    pad = lambda a: np.concatenate([a, np.zeros(a.shape[:-1] + (1,))], axis=-1)  # noqa: E731
    v2c = pad(L)[:, idx]
    for _ in range(max_iters):
        if active.size == 0:
            break
        c2v = check_node_update(v2c, mask)
        post = L + (c2v.reshape(len(L), -1) @ H.edge_scatter)[:, : H.n]
        dec = (post < 0).astype(np.uint8)
        bits[active] = dec
        steps[active] += 1
        keep = ~_valid(dec, H)
        v2c = (pad(post)[:, idx] - c2v)[keep]
        L, active = L[keep], active[keep]
    return _outcome(bits, steps, _valid(bits, H), single)


# --- oracles -----------------------------------------------------------------------

def decode_ml_exhaustive(y, code: LinearCode) -> DecodeOutcome:
    """Nearest bipolar codeword in Euclidean distance; ties go to the lowest index."""
    if code.k > ML_MAX_K:
        raise DecoderError(f"exhaustive search limited to k <= {ML_MAX_K}, code has k = {code.k}")
    yb, single = _batch(y)
    if yb.shape[-1] != code.n:
        raise DecoderError(f"expected {code.n} samples per word, got shape {yb.shape}")
    cw = code.codewords()
    S = modulate_bpsk(cw)
    # ||y - s||^2 = ||y||^2 - 2 y.s + n, argmin is first-index on ties
    d = (yb**2).sum(-1, keepdims=True) - 2.0 * yb @ S.T + code.n
    best = d.argmin(axis=1)
    dist = np.maximum(d[np.arange(len(yb)), best], 0.0)
    return _outcome(cw[best], np.zeros(len(yb)), np.ones(len(yb)), single, distance=dist)


def decode_hard(y, H: ParityCheckMatrix) -> DecodeOutcome:
    """Uncoded symbol-wise hard decision (no correction)."""
    yb, single = _batch(y)
    bits = demodulate_hard(yb)
    return _outcome(bits, np.zeros(len(yb)), _valid(bits, H), single)


# --- decoder objects used by the harness ---------------------------------------------

class Decoder:
    """Uniform ``decoder(y, sigma, rng=None) -> DecodeOutcome`` interface."""

    name = "decoder"

    def __init__(self, code: LinearCode):
        self.code = code

    def __call__(self, y, sigma: float, rng=None) -> DecodeOutcome:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"name": self.name}


class HardDecisionDecoder(Decoder):
    name = "uncoded"

    def __call__(self, y, sigma, rng=None):
        return decode_hard(y, self.code.H)


class MLDecoder(Decoder):
    name = "ml"

    def __call__(self, y, sigma, rng=None):
        return decode_ml_exhaustive(y, self.code)


class BPDecoder(Decoder):
    name = "bp"

    def __init__(self, code: LinearCode, max_iters: int = 50):
        super().__init__(code)
        self.max_iters = max_iters

    def __call__(self, y, sigma, rng=None):
        return decode_bp(y, self.code.H, sigma, self.max_iters)

    def describe(self):
        return {"name": self.name, "max_iters": self.max_iters}


class OneStepDecoder(Decoder):
    name = "eccfm"

    def __init__(self, code: LinearCode, model, n_steps: int = 1, renoise_fraction: float = 0.2,
                 schedule: DiffusionSchedule | None = None):
        super().__init__(code)
        if n_steps > 1 and schedule is None:
            raise DecoderError("multi-step decoding needs a diffusion schedule")
        self.model, self.n_steps = model, n_steps
        self.renoise_fraction, self.schedule = renoise_fraction, schedule

    def __call__(self, y, sigma, rng=None):
        if self.n_steps == 1:
            return decode_one_step(self.model, y, self.code.H, sigma)
        return decode_multi_step(self.model, y, self.code.H, sigma, self.n_steps,
                                 self.renoise_fraction, self.schedule, rng)

    def describe(self):
        return {"name": self.name, "n_steps": self.n_steps, "renoise_fraction": self.renoise_fraction}


class DDECCDecoder(Decoder):
    name = "ddecc"

    def __init__(self, code: LinearCode, model, schedule: DiffusionSchedule, max_steps: int | None = None,
                 trace: bool = False):
        super().__init__(code)
        self.model, self.schedule, self.trace = model, schedule, trace
        self.max_steps = 2 * schedule.N if max_steps is None else max_steps

    def __call__(self, y, sigma, rng=None):
        return decode_ddecc(self.model, y, self.code.H, sigma, self.schedule, self.max_steps, self.trace)

    def describe(self):
        return {"name": self.name, "max_steps": self.max_steps}

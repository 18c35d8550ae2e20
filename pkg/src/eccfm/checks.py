"""Self-contained property suites, shared by the test-suite and the ``check`` command."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .backbone import BackboneConfig
from .channel import RngStream, modulate_bpsk
from .codes import LinearCode, ParityCheckMatrix, load_code
from .syndrome import soft_syndrome, soft_syndrome_condition, soft_syndrome_loss_and_grad, syndrome_error_sum
from .trainer import TrainConfig, Trainer, prop1_check

SUITES = ("prop1", "gradient", "syndrome")


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "seconds": self.seconds, **self.details}


def _timed(name, fn) -> CheckResult:
    t0 = time.perf_counter()
    passed, details = fn()
    return CheckResult(name, bool(passed), details, time.perf_counter() - t0)


# --- semi-triangle inequality ---------------------------------------------------------

def check_prop1(n_triples: int = 1_000_000, seed: int = 0) -> CheckResult:
    """``|p - q|^2 <= BCE(p, x0) + BCE(q, x0)`` on random per-bit triples.

    Half of the probabilities are drawn near the ends of ``(0, 1)`` so the
    saturated regime is exercised too.
    """
    def run():
        gen = RngStream(seed, 31).generator()
        p = gen.uniform(size=n_triples)
        q = gen.uniform(size=n_triples)
        edge = gen.uniform(size=n_triples) < 0.5
        p[edge] = np.clip(p[edge] ** 8, 1e-300, None)
        q[edge] = 1.0 - q[edge] ** 8
        x0 = gen.integers(0, 2, size=n_triples)
        ok = prop1_check(p, q, x0)
        return ok.all(), {"triples": n_triples, "violations": int((~ok).sum())}
    return _timed("prop1", run)


# --- analytic vs numerical gradients ---------------------------------------------------

def loss_gradient_error(kind: str, code: LinearCode | None = None, n_coords: int = 25, seed: int = 0,
                        h: float = 1e-5, floor: float = 1e-6) -> float:
    """Worst relative error between the analytic total-loss gradient and central differences.

    Relative error is ``|fd - g| / max(|fd|, |g|, floor)``; the floor keeps
    coordinates with a vanishing gradient from amplifying round-off.
    """
    code = code or load_code("hamming74")
    cfg = TrainConfig(epochs=1, steps_per_epoch=1, batch_size=16, seed=seed, steps_override=40)
    tr = Trainer(code, cfg, BackboneConfig(code.n, code.m, kind=kind, depth=2, width=16, embed_dim=8))
    gen = RngStream(seed, 32).generator()
    # move off the symmetric initialisation so every block carries signal
    params = tr.state.params.with_values(tr.state.params.values + 0.05 * gen.standard_normal(tr.state.params.count))
    batch = tr.sample_batch(rng=gen)
    _, grad, _ = tr.loss_and_grad(params, batch)
    worst = 0.0
    for i in gen.choice(params.count, size=n_coords, replace=False):
        vp, vm = params.values.copy(), params.values.copy()
        vp[i] += h
        vm[i] -= h
        fd = (tr.loss_and_grad(params.with_values(vp), batch, need_grad=False)[0]
              - tr.loss_and_grad(params.with_values(vm), batch, need_grad=False)[0]) / (2 * h)
        worst = max(worst, abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), floor))
    return worst


def check_gradient(tol: float = 1e-4, seed: int = 0) -> CheckResult:
    def run():
        errs = {k: float(loss_gradient_error(k, seed=seed)) for k in ("mlp", "tiny_cross_attention")}
        return max(errs.values()) < tol, {"worst_relative_error": errs, "tolerance": tol}
    return _timed("gradient", run)


# --- soft syndrome ------------------------------------------------------------------------------

def zero_crossing_sweep(code: LinearCode, coord: int = 0, spacing: float = 1e-2, sigma: float = 1.0):
    """Move one coordinate of the all-(+1) codeword from +1 to -1 on a grid.

    Returns ``(grid, e_hard, e_soft)``.
    """
    grid = np.arange(1.0, -1.0 - spacing / 2, -spacing)
    x = np.ones((grid.size, code.n))
    x[:, coord] = grid
    return grid, syndrome_error_sum(x, code.H), soft_syndrome_condition(x, code.H, sigma)


def check_syndrome(seed: int = 0) -> CheckResult:
    """Closed-form values, zero-coordinate and codeword identities, sweep smoothness and
    the soft-syndrome gradient against central differences."""
    def run():
        code = load_code("hamming74")
        d = {}
        w4 = ParityCheckMatrix(np.array([[1, 1, 1, 1, 0], [0, 0, 0, 1, 1]], dtype=np.uint8))
        d["s_weight4_unit"] = float(soft_syndrome(np.ones(5), w4, 1.0).values[0])
        ok = abs(d["s_weight4_unit"] - 0.331785) <= 1e-6
        x = np.ones(code.n)
        x[2] = 0.0
        s = soft_syndrome(x, code.H, 0.7).values
        touched = code.H.rows[:, 2].astype(bool)
        ok &= bool(np.all(s[touched] == 0.5))
        cw = modulate_bpsk(code.codewords())
        d["e_soft_codeword_max"] = float(soft_syndrome_condition(cw, code.H, 0.3).max())
        ok &= d["e_soft_codeword_max"] < 1e-6
        heavy = int(np.argmax(code.H.col_weights))
        _, eh, es = zero_crossing_sweep(code, heavy)
        d["e_hard_jump"] = int(eh.max() - eh.min())
        d["e_soft_max_step"] = float(np.abs(np.diff(es)).max())
        ok &= d["e_hard_jump"] == int(code.H.col_weights[heavy]) and d["e_soft_max_step"] < 0.05
        gen = RngStream(seed, 33).generator()
        y = gen.normal(1.0, 0.8, size=(4, code.n))
        _, g = soft_syndrome_loss_and_grad(y, code.H, 0.8)
        h, worst = 1e-6, 0.0
        for b in range(4):
            for i in range(code.n):
                e = np.zeros_like(y)
                e[b, i] = h
                fd = (soft_syndrome_condition(y + e, code.H, 0.8)[b]
                      - soft_syndrome_condition(y - e, code.H, 0.8)[b]) / (2 * h)
                worst = max(worst, abs(fd - g[b, i]) / max(abs(fd), abs(g[b, i]), 1e-6))
        d["grad_relative_error"] = float(worst)
        ok &= worst < 1e-5
        return ok, d
    return _timed("syndrome", run)


def run_checks(suites=SUITES, seed: int = 0) -> list[CheckResult]:
    table = {"prop1": check_prop1, "gradient": check_gradient, "syndrome": check_syndrome}
    unknown = set(suites) - set(table)
    if unknown:
        raise ValueError(f"unknown check suites: {sorted(unknown)}")
    return [table[s](seed=seed) for s in suites]

"""Monte-Carlo BER/FER evaluation, throughput benchmarks, convergence statistics
and trajectory traces.

Nothing here touches the filesystem; the command-line layer owns all I/O.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .channel import ChannelConfig, RngStream, modulate_bpsk, transmit
from .codes import LinearCode, encode

ARTIFACT_VERSION = "eccfm/0.1.0"
_EVAL_STREAM = 21
_BENCH_STREAM = 22
_CONV_STREAM = 23


@dataclass(frozen=True)
class StopRule:
    """Stop once ``min_frame_errors`` frame errors are seen or ``max_frames`` are decoded."""

    min_frame_errors: int = 500
    max_frames: int = 10_000_000

    def __post_init__(self):
        if self.min_frame_errors < 1 or self.max_frames < 1:
            raise ValueError("stop rule limits must be positive")


@dataclass
class EvalResult:
    frames: int
    bit_errors: int
    frame_errors: int
    n: int
    decoder_id: str
    code_id: str
    channel: dict
    seed: int
    steps_total: int = 0
    wall_time: float = 0.0
    batch_size: int = 0
    workers: int = 1
    aborted: str | None = None

    @property
    def ber(self) -> float:
        return self.bit_errors / (self.frames * self.n) if self.frames else 0.0

    @property
    def fer(self) -> float:
        return self.frame_errors / self.frames if self.frames else 0.0

    @property
    def neg_ln_ber(self) -> float | None:
        """``-ln(BER)``; absent when no bit error was observed."""
        return -math.log(self.ber) if self.bit_errors > 0 else None

    @property
    def throughput(self) -> float:
        return self.frames / self.wall_time if self.wall_time > 0 else float("nan")

    @property
    def mean_steps(self) -> float:
        return self.steps_total / self.frames if self.frames else 0.0

    def counts(self) -> dict:
        """Deterministic part of the result (no timing), suitable for byte-exact comparison."""
        out = {
            "decoder_id": self.decoder_id, "code_id": self.code_id, "channel": self.channel,
            "seed": self.seed, "frames": self.frames, "bit_errors": self.bit_errors,
            "frame_errors": self.frame_errors, "ber": self.ber, "fer": self.fer,
            "mean_steps": self.mean_steps, "batch_size": self.batch_size,
        }
        if self.neg_ln_ber is not None:
            out["neg_ln_ber"] = self.neg_ln_ber
        if self.aborted:
            out["aborted"] = self.aborted
        return out

    def timing(self) -> dict:
        return {"wall_time": self.wall_time, "throughput": self.throughput, "workers": self.workers}


class EvalAborted(RuntimeError):
    """Decoder failure mid-run; ``partial`` holds the counts accumulated so far."""

    def __init__(self, message: str, partial: EvalResult):
        super().__init__(message)
        self.partial = partial


# --- frame generation -------------------------------------------------------------

def draw_frames(code: LinearCode, channel: ChannelConfig, rng: RngStream, size: int,
                zero_codeword: bool = False):
    """``(bits, y)`` for ``size`` frames from one substream.

    Random messages are encoded unless ``zero_codeword``; the Rayleigh fading
    gain is not passed on (decoders see ``y`` only).
    """
    gen = rng.generator()
    if zero_codeword:
        bits = np.zeros((size, code.n), dtype=np.uint8)
    else:
        bits = encode(gen.integers(0, 2, size=(size, code.k), dtype=np.uint8), code.G)
    y, _ = transmit(modulate_bpsk(bits), channel, gen)
    return bits, y


def _eval_batch(decoder, code, channel, seed, index, size, zero_codeword):
    rng = RngStream(seed, _EVAL_STREAM, (index,))
    bits, y = draw_frames(code, channel, rng, size, zero_codeword)
    out = decoder(y, channel.sigma, rng.child(1))
    wrong = np.asarray(out.bits) != bits
    per_frame = wrong.sum(axis=1)
    return int(per_frame.sum()), int((per_frame > 0).sum()), int(np.sum(out.steps_used))


def run_eval(decoder, code: LinearCode, channel: ChannelConfig, stop: StopRule = StopRule(),
             seed: int = 0, batch_size: int = 10_000, workers: int = 1,
             zero_codeword: bool = False) -> EvalResult:
    """Decode fresh frames batch by batch until the stop rule fires.

    Batch ``i`` always draws from substream ``i`` and batches are reduced in
    index order, so the counts do not depend on ``workers``.  The run stops
    after the first batch whose cumulative frame-error count reaches the
    threshold; the final batch is shortened so ``max_frames`` is never exceeded.
    """
    if batch_size < 1 or workers < 1:
        raise ValueError("batch_size and workers must be positive")
    res = EvalResult(0, 0, 0, code.n, getattr(decoder, "name", type(decoder).__name__), code.name,
                     channel.describe(), seed, batch_size=batch_size, workers=workers)
    n_batches = -(-stop.max_frames // batch_size)

    def size(j):
        return min(batch_size, stop.max_frames - j * batch_size)

    t0 = time.perf_counter()
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        i = 0
        while i < n_batches and res.frame_errors < stop.min_frame_errors:
            wave = range(i, min(i + workers, n_batches))
            args = [(decoder, code, channel, seed, j, size(j), zero_codeword) for j in wave]
            try:
                if pool is None:
                    parts = [_eval_batch(*a) for a in args]
                else:
                    parts = list(pool.map(_eval_batch, *zip(*args)))
            except Exception as exc:  # noqa: BLE001 - any decoder failure aborts with partial counts
                res.wall_time = time.perf_counter() - t0
                res.aborted = f"{type(exc).__name__}: {exc}"
                raise EvalAborted(f"decoder failed in batch {i}: {exc}", res) from exc
            for j, (be, fe, st) in zip(wave, parts):
                res.frames += size(j)
                res.bit_errors += be
                res.frame_errors += fe
                res.steps_total += st
                i = j + 1
                if res.frame_errors >= stop.min_frame_errors:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    res.wall_time = time.perf_counter() - t0
    return res


# --- benchmarking ---------------------------------------------------------------------

@dataclass
class BenchRow:
    decoder_id: str
    frames: int
    batch_size: int
    wall_time: float
    throughput: float
    mean_steps: float
    speedup: float = 1.0  # throughput relative to the reference row


def run_benchmark(decoders: list, code: LinearCode, channel: ChannelConfig, n_frames: int,
                  warmup_frames: int = 100, batch_size: int = 1, seed: int = 0,
                  reference: int = 0) -> list[BenchRow]:
    """Time each decoder on the same frames with a monotonic clock.

    Warmup frames are decoded first and excluded.  ``speedup`` is each row's
    throughput divided by that of ``decoders[reference]``.
    """
    if n_frames <= 0:
        raise ValueError("n_frames must be positive")
    if warmup_frames < 0 or batch_size < 1:
        raise ValueError("warmup_frames must be >= 0 and batch_size >= 1")
    _, y = draw_frames(code, channel, RngStream(seed, _BENCH_STREAM), n_frames + warmup_frames)
    warm, timed = y[:warmup_frames], y[warmup_frames:]
    sigma = channel.sigma
    rows = []
    for d in decoders:
        for s in range(0, len(warm), batch_size):
            d(warm[s:s + batch_size], sigma)
        steps = 0
        t0 = time.perf_counter()
        for s in range(0, n_frames, batch_size):
            steps += int(np.sum(d(timed[s:s + batch_size], sigma).steps_used))
        dt = time.perf_counter() - t0
        rows.append(BenchRow(getattr(d, "name", type(d).__name__), n_frames, batch_size, dt,
                             n_frames / dt, steps / n_frames))
    ref = rows[reference].throughput
    for r in rows:
        r.speedup = r.throughput / ref
    return rows


# --- convergence statistics -------------------------------------------------------------

@dataclass
class ConvergenceStats:
    ebn0_db: float
    frames: int
    mean: float
    variance: float
    non_converged: int


def run_convergence_stats(decoder, code: LinearCode, ebn0_list, frames: int, seed: int = 0,
                          sigma_override: float | None = None, kind: str = "awgn") -> list[ConvergenceStats]:
    """Mean and variance of ``steps_used`` per Eb/N0.

    Words that never reach a zero syndrome contribute ``steps_used`` (the step
    cap) and are counted in ``non_converged``.
    """
    out = []
    for i, ebn0 in enumerate(ebn0_list):
        ch = ChannelConfig(ebn0, code.rate, kind, sigma_override=sigma_override)
        _, y = draw_frames(code, ch, RngStream(seed, _CONV_STREAM, (i,)), frames)
        res = decoder(y, ch.sigma)
        steps = np.asarray(res.steps_used, dtype=np.float64)
        out.append(ConvergenceStats(float(ebn0), frames, float(steps.mean()), float(steps.var()),
                                    int((~np.asarray(res.converged)).sum())))
    return out


# --- trajectory traces ----------------------------------------------------------------------

TRACE_COLUMNS = ("sample_id", "step", "e_hard", "e_soft")


def trace_trajectory(decoder, y, sigma: float) -> list[tuple[int, int, int, float]]:
    """Run a tracing decoder on ``y`` and flatten to ``(sample_id, step, e_hard, e_soft)`` rows.

    Steps are numbered from 1; word ``i`` contributes ``steps_used[i]`` rows.
    """
    res = decoder(np.atleast_2d(y), sigma)
    if res.per_step_trace is None:
        raise ValueError("decoder did not record a per-step trace")
    rows = []
    for sid, tr in enumerate(res.per_step_trace):
        for step, (eh, es) in enumerate(np.asarray(tr).reshape(-1, 2), start=1):
            rows.append((sid, step, int(eh), float(es)))
    return rows


def trace_smoothness(rows, m: int) -> tuple[float, float]:
    """Largest absolute step-to-step change of ``e_soft`` and of ``e_hard / m``, within samples."""
    by_sample: dict[int, list] = {}
    for sid, _, eh, es in rows:
        by_sample.setdefault(sid, []).append((eh / m, es))
    soft = hard = 0.0
    for seq in by_sample.values():
        a = np.asarray(seq)
        if len(a) > 1:
            d = np.abs(np.diff(a, axis=0)).max(axis=0)
            hard, soft = max(hard, d[0]), max(soft, d[1])
    return soft, hard


# --- experiment configuration ----------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one CLI run; serialised verbatim next to its outputs."""

    command: str
    code: str = "hamming74"
    ebn0_db: list = field(default_factory=lambda: [4.0])
    channel: str = "awgn"
    sigma_override: float | None = None
    decoder: str = "bp"
    decoders: list = field(default_factory=lambda: ["eccfm", "ddecc"])
    decoder_params: dict = field(default_factory=dict)
    checkpoint: str | None = None
    ddecc_checkpoint: str | None = None
    train: dict = field(default_factory=dict)
    backbone: dict = field(default_factory=dict)
    stop: dict = field(default_factory=lambda: asdict(StopRule()))
    batch_size: int = 10_000
    workers: int = 1
    frames: int = 10_000
    warmup_frames: int = 100
    suites: list = field(default_factory=lambda: ["prop1", "gradient", "syndrome"])
    output_dir: str = "."
    seed: int = 0

    def validate(self) -> "ExperimentConfig":
        if self.command not in ("train", "eval", "bench", "trace", "check"):
            raise ValueError(f"unknown command {self.command!r}")
        if self.channel not in ("awgn", "rayleigh"):
            raise ValueError(f"unknown channel {self.channel!r}")
        if not self.ebn0_db:
            raise ValueError("at least one Eb/N0 value is required")
        StopRule(**self.stop)
        for name in ("batch_size", "workers", "frames"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.warmup_frames < 0:
            raise ValueError("warmup_frames must be non-negative")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d).validate()

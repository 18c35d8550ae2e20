"""BPSK modulation and AWGN / Rayleigh channels with reproducible random streams."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CHANNEL_KINDS = ("awgn", "rayleigh")


@dataclass(frozen=True)
class RngStream:
    """Deterministic, splittable random stream.

    ``(seed, stream_id, path)`` fully determines the draws; distinct ids or paths give
    independent streams (numpy ``SeedSequence`` spawn keys).
    """

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.path + (int(index),))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,) + self.path)
        return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def ebn0_to_sigma(ebn0_db: float, rate: float) -> float:
    """Noise std for unit-energy BPSK: ``sigma = (2 R 10^(EbN0/10))^(-1/2)``."""
    if not 0 < rate <= 1:
        raise ValueError(f"code rate must lie in (0, 1], got {rate}")
    return float((2.0 * rate * 10.0 ** (ebn0_db / 10.0)) ** -0.5)


@dataclass(frozen=True)
class ChannelConfig:
    ebn0_db: float
    rate: float
    kind: str = "awgn"
    rayleigh_scale: float = 1.0
    sigma_override: float | None = None

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}; expected one of {CHANNEL_KINDS}")
        if not 0 < self.rate <= 1:
            raise ValueError(f"code rate must lie in (0, 1], got {self.rate}")
        if self.rayleigh_scale <= 0:
            raise ValueError("rayleigh_scale must be positive")
        if self.sigma_override is not None and self.sigma_override < 0:
            raise ValueError("sigma_override must be non-negative")

    @property
    def sigma(self) -> float:
        if self.sigma_override is not None:
            return float(self.sigma_override)
        return ebn0_to_sigma(self.ebn0_db, self.rate)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "ebn0_db": self.ebn0_db,
            "rate": self.rate,
            "sigma": self.sigma,
            "rayleigh_scale": self.rayleigh_scale,
            "sigma_override": self.sigma_override,
        }


def modulate_bpsk(bits) -> np.ndarray:
    """0 -> +1, 1 -> -1."""
    b = np.asarray(bits)
    if not np.all((b == 0) | (b == 1)):
        raise ValueError("BPSK input must be binary")
    return 1.0 - 2.0 * b.astype(np.float64)


def demodulate_hard(y) -> np.ndarray:
    """Hard decision with ``sign(0) = +1``: ``y >= 0`` -> 0, ``y < 0`` -> 1."""
    y = np.asarray(y, dtype=np.float64)
    if np.isnan(y).any():
        raise ValueError("cannot demodulate NaN samples")
    return (y < 0).astype(np.uint8)


def transmit(x_signal, cfg: ChannelConfig, rng) -> tuple[np.ndarray, np.ndarray | None]:
    """Pass a bipolar signal through the channel; returns ``(y, h)``, ``h`` only for Rayleigh.

    The input array is never modified.
    """
    x = np.asarray(x_signal, dtype=np.float64)
    gen = as_generator(rng)
    sigma = cfg.sigma
    if cfg.kind == "rayleigh":
        h = gen.rayleigh(scale=cfg.rayleigh_scale, size=x.shape)
        y = h * x + sigma * gen.standard_normal(x.shape)
        return y, h
    return x + sigma * gen.standard_normal(x.shape), None

"""Training objectives and the consistency-training loop.

Objectives share one step routine and differ only in the loss/target:

* ``eccfm``      -- BCE of both trajectory-pair predictions against ``x0`` plus the
                    soft-syndrome regulariser on the predictions.
* ``vanilla_cm`` -- BCE of the online prediction at ``t`` against the hard-decided
                    EMA prediction at ``r`` (stop-gradient).
* ``ddecc``      -- BCE of a multiplicative-noise predictor at ``t``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .backbone import (Backbone, BackboneConfig, ModelParams, NeuralModel, params_from_bytes,
                       params_to_bytes, preprocess, sigmoid)
from .channel import RngStream, ebn0_to_sigma, modulate_bpsk
from .codes import LinearCode, ParityCheckMatrix, encode
from .diffusion import DiffusionSchedule, ddecc_target, sample_pair
from .syndrome import soft_syndrome_condition, soft_syndrome_loss_and_grad, syndrome_error_sum

PROB_CLAMP = 1e-12
OBJECTIVES = ("eccfm", "vanilla_cm", "ddecc")

# stream ids of the training RNG
_INIT_STREAM = 11
_DATA_STREAM = 12


class TrainingDivergedError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1500
    steps_per_epoch: int = 1000
    batch_size: int = 128
    lr_init: float = 1e-4
    lr_final: float = 5e-7
    lambda_syn: float = 0.01
    alpha: float = 0.8
    ema_decay: float = 0.999
    weighting: float = 1.0
    objective: str = "eccfm"
    condition_kind: str | None = None  # None: soft, or hard for ddecc
    sigma_mode: str = "cumulative"  # or "fixed": use train_sigma in the soft syndrome
    beta_step: float = 0.01
    steps_override: int | None = None
    train_ebn0_db: float | None = None  # lowest Eb/N0 the schedule must cover
    random_codewords: bool = False
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    history_limit: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}; expected one of {OBJECTIVES}")
        if self.condition_kind not in (None, "soft", "hard"):
            raise ValueError(f"unknown condition kind {self.condition_kind!r}")
        if self.sigma_mode not in ("cumulative", "fixed"):
            raise ValueError(f"unknown sigma mode {self.sigma_mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")
        for name in ("epochs", "steps_per_epoch", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("lr_init", "lr_final", "beta_step", "weighting"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.lambda_syn < 0:
            raise ValueError("lambda_syn must be non-negative")
        if self.sigma_mode == "fixed" and self.train_ebn0_db is None:
            raise ValueError("sigma_mode 'fixed' needs train_ebn0_db")

    @property
    def resolved_condition(self) -> str:
        if self.condition_kind is not None:
            return self.condition_kind
        return "hard" if self.objective == "ddecc" else "soft"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "adam_betas" in d:
            d["adam_betas"] = tuple(d["adam_betas"])
        return cls(**d)


#: desk-scale budget: 60 x 200 steps at a 10x larger initial rate than the long-run default
DESK_BUDGET = {"epochs": 60, "steps_per_epoch": 200, "lr_init": 1e-3}


def desk_config(code: LinearCode, lowest_ebn0_db: float = 2.0, **overrides) -> TrainConfig:
    """Short-run config whose schedule covers the channel noise down to ``lowest_ebn0_db``.

    The default ``N = n - k + 5`` only reaches ``beta_bar = 0.08`` on Hamming(7,4)
    while the channel variance at 2-4 dB is 0.35-0.55, so ``N`` is raised to the
    smallest value with ``beta_bar(N) >= sigma^2``.
    """
    beta = overrides.get("beta_step", TrainConfig.beta_step)
    steps = DiffusionSchedule.steps_to_cover(ebn0_to_sigma(lowest_ebn0_db, code.rate), beta)
    kw = {**DESK_BUDGET, "steps_override": steps, "train_ebn0_db": lowest_ebn0_db, **overrides}
    return TrainConfig(**kw)


def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    """Cosine decay from ``lr_init`` at epoch 0 to ``lr_final`` at the last epoch."""
    if cfg.epochs == 1:
        return cfg.lr_init
    frac = epoch / (cfg.epochs - 1)
    return cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + math.cos(math.pi * frac))


# --- losses -------------------------------------------------------------------

def _clamp(p):
    return np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)


def bce(probs, bits) -> np.ndarray:
    """Per-word mean binary cross-entropy (natural log), clamped probabilities."""
    p = _clamp(probs)
    x = np.asarray(bits, dtype=np.float64)
    if p.shape != x.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {x.shape}")
    return -(x * np.log(p) + (1.0 - x) * np.log1p(-p)).mean(axis=-1)


def ec_cm_loss(probs_t, probs_r, x0_bits, weight: float = 1.0) -> float:
    return float(np.mean(weight * (bce(probs_t, x0_bits) + bce(probs_r, x0_bits))))


def total_loss(probs_t, probs_r, x0_bits, H: ParityCheckMatrix, sigma_t, sigma_r,
               lambda_syn: float = 0.01, weight: float = 1.0) -> float:
    reg = soft_syndrome_loss_and_grad(probs_t, H, sigma_t, from_probs=True)[0] \
        + soft_syndrome_loss_and_grad(probs_r, H, sigma_r, from_probs=True)[0]
    return ec_cm_loss(probs_t, probs_r, x0_bits, weight) + lambda_syn * float(np.mean(reg))


def hard_decision(probs) -> np.ndarray:
    """Bit is 1 only when its probability exceeds 1/2."""
    return (np.asarray(probs) > 0.5).astype(np.uint8)


def vanilla_cm_loss(probs_t, probs_r_target) -> float:
    """BCE of the online prediction against the binarised (constant) target prediction."""
    return float(np.mean(bce(probs_t, hard_decision(probs_r_target))))


def ddecc_loss(noise_probs, target) -> float:
    return float(np.mean(bce(noise_probs, target)))


def _bce_from_logits(logits, bits):
    """Per-word BCE of ``sigmoid(logits)`` and its gradient w.r.t. ``logits`` (summed over words)."""
    p = sigmoid(logits)
    x = np.asarray(bits, dtype=np.float64)
    value = bce(p, x)
    live = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    grad = np.where(live, p - x, 0.0) / x.shape[-1]
    return value, grad, p


def prop1_check(probs_p, probs_q, x0_bits) -> np.ndarray:
    """Per-bit ``|p - q|^2 <= BCE(p, x0) + BCE(q, x0)``; expected all true."""
    p = np.asarray(probs_p, dtype=np.float64)
    q = np.asarray(probs_q, dtype=np.float64)
    x = np.asarray(x0_bits, dtype=np.float64)
    with np.errstate(divide="ignore"):
        bp = np.where(x == 1, -np.log(p), -np.log1p(-p))
        bq = np.where(x == 1, -np.log(q), -np.log1p(-q))
    return (p - q) ** 2 <= bp + bq


# --- training state / loop -------------------------------------------------------

@dataclass
class TrainState:
    params: ModelParams
    ema_params: ModelParams
    adam_m: np.ndarray
    adam_v: np.ndarray
    epoch: int = 0
    global_step: int = 0
    history: deque = field(default_factory=deque)


@dataclass(frozen=True)
class StepBatch:
    """Everything drawn for one step; kept for divergence diagnostics."""

    x0_bits: np.ndarray
    t: np.ndarray
    x_t: np.ndarray
    x_r: np.ndarray
    sigma_t: np.ndarray
    sigma_r: np.ndarray


class Trainer:
    """Single-writer training loop over one code.

    >>> tr = Trainer(load_code("rep2"), TrainConfig(epochs=1, steps_per_epoch=5))  # doctest: +SKIP
    >>> tr.run()                                                                     # doctest: +SKIP
    """

    def __init__(self, code: LinearCode, cfg: TrainConfig, backbone: BackboneConfig | None = None):
        self.code = code
        self.cfg = cfg
        output = "noise" if cfg.objective == "ddecc" else "codeword"
        if backbone is None:
            backbone = BackboneConfig(code.n, code.m, output=output)
        if backbone.output != output:
            raise ValueError(f"objective {cfg.objective!r} needs a {output!r} output head")
        self.net = Backbone(backbone, code.H)
        self.schedule = DiffusionSchedule.for_code(code.n, code.k, cfg.beta_step, cfg.steps_override)
        self.train_sigma = None
        if cfg.train_ebn0_db is not None:
            self.train_sigma = ebn0_to_sigma(cfg.train_ebn0_db, code.rate)
            self.schedule.require_coverage(self.train_sigma)
        params = self.net.init(RngStream(cfg.seed, _INIT_STREAM))
        self.state = TrainState(
            params=params,
            ema_params=params.copy(),
            adam_m=np.zeros(params.count),
            adam_v=np.zeros(params.count),
            history=deque(maxlen=cfg.history_limit),
        )
        self._rng = RngStream(cfg.seed, _DATA_STREAM).generator()

    # data ---------------------------------------------------------------------
    def _x0_bits(self, rng, batch: int) -> np.ndarray:
        if self.cfg.random_codewords:
            msgs = rng.integers(0, 2, size=(batch, self.code.k), dtype=np.uint8)
            return encode(msgs, self.code.G)
        return np.zeros((batch, self.code.n), dtype=np.uint8)

    def _sigma(self, t) -> np.ndarray:
        if self.cfg.sigma_mode == "fixed":
            return np.full(np.shape(t), self.train_sigma)
        return np.sqrt(self.schedule.cumulative(t))

    def sample_batch(self, rng=None, batch: int | None = None, x0_bits=None) -> StepBatch:
        rng = self._rng if rng is None else rng
        if x0_bits is None:
            x0_bits = self._x0_bits(rng, batch or self.cfg.batch_size)
        x0_bits = np.asarray(x0_bits, dtype=np.uint8)
        B = x0_bits.shape[0]
        t = rng.integers(1, self.schedule.N + 1, size=B)
        pair = sample_pair(modulate_bpsk(x0_bits), t, self.cfg.alpha, self.schedule, rng)
        return StepBatch(x0_bits, t, pair.x_t, pair.x_r, self._sigma(t), self._sigma(pair.r))

    def conditions(self, x, sigma) -> np.ndarray:
        if self.cfg.resolved_condition == "hard":
            return syndrome_error_sum(x, self.code.H).astype(np.float64)
        return soft_syndrome_condition(x, self.code.H, sigma)

    # objective ------------------------------------------------------------------
    def loss_and_grad(self, params: ModelParams, batch: StepBatch, ema_params: ModelParams | None = None,
                      need_grad: bool = True):
        """Objective value, its parameter gradient and a dict of loss components."""
        cfg, H, net = self.cfg, self.code.H, self.net
        B = batch.x0_bits.shape[0]
        inp_t = preprocess(batch.x_t, H, self.conditions(batch.x_t, batch.sigma_t))
        logits_t, cache_t = net.forward(params, inp_t, return_cache=True)
        parts = {"e_cond_mean": float(inp_t.condition.mean())}
        grad = np.zeros(params.count) if need_grad else None

        if cfg.objective == "eccfm":
            inp_r = preprocess(batch.x_r, H, self.conditions(batch.x_r, batch.sigma_r))
            logits_r, cache_r = net.forward(params, inp_r, return_cache=True)
            bce_t, g_t, p_t = _bce_from_logits(logits_t, batch.x0_bits)
            bce_r, g_r, p_r = _bce_from_logits(logits_r, batch.x0_bits)
            syn_t, gs_t = soft_syndrome_loss_and_grad(p_t, H, batch.sigma_t, from_probs=True)
            syn_r, gs_r = soft_syndrome_loss_and_grad(p_r, H, batch.sigma_r, from_probs=True)
            consistency = cfg.weighting * float(np.mean(bce_t + bce_r))
            reg = float(np.mean(syn_t + syn_r))
            value = consistency + cfg.lambda_syn * reg
            parts.update(consistency=consistency, soft_syn=reg)
            if need_grad:
                d_t = (cfg.weighting * g_t + cfg.lambda_syn * gs_t * p_t * (1.0 - p_t)) / B
                d_r = (cfg.weighting * g_r + cfg.lambda_syn * gs_r * p_r * (1.0 - p_r)) / B
                grad += net.backward(params, inp_t, d_t, cache=cache_t)
                grad += net.backward(params, inp_r, d_r, cache=cache_r)
        elif cfg.objective == "vanilla_cm":
            target_params = ema_params if ema_params is not None else params
            inp_r = preprocess(batch.x_r, H, self.conditions(batch.x_r, batch.sigma_r))
            target = hard_decision(sigmoid(net.forward(target_params, inp_r)))
            loss_t, g_t, _ = _bce_from_logits(logits_t, target)
            value = cfg.weighting * float(np.mean(loss_t))
            parts.update(consistency=value)
            if need_grad:
                grad += net.backward(params, inp_t, cfg.weighting * g_t / B, cache=cache_t)
        else:
            target = ddecc_target(modulate_bpsk(batch.x0_bits), batch.x_t)
            loss_t, g_t, _ = _bce_from_logits(logits_t, target)
            value = float(np.mean(loss_t))
            parts.update(consistency=value)
            if need_grad:
                grad += net.backward(params, inp_t, g_t / B, cache=cache_t)
        parts["total"] = value
        return value, grad, parts

    # optimisation ---------------------------------------------------------------
    def step(self, x0_bits=None, lr: float | None = None) -> float:
        """One Adam step on a fresh batch; updates EMA weights and the history."""
        cfg, st = self.cfg, self.state
        lr = cosine_lr(st.epoch, cfg) if lr is None else lr
        batch = self.sample_batch(x0_bits=x0_bits)
        value, grad, parts = self.loss_and_grad(st.params, batch, st.ema_params)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise TrainingDivergedError(
                f"non-finite loss at step {st.global_step}",
                {"step": st.global_step, "epoch": st.epoch, "loss": value, "parts": parts,
                 "batch": asdict(batch), "param_norm": float(np.linalg.norm(st.params.values))},
            )
        b1, b2 = cfg.adam_betas
        st.global_step += 1
        st.adam_m = b1 * st.adam_m + (1 - b1) * grad
        st.adam_v = b2 * st.adam_v + (1 - b2) * grad * grad
        m_hat = st.adam_m / (1 - b1**st.global_step)
        v_hat = st.adam_v / (1 - b2**st.global_step)
        st.params = st.params.with_values(st.params.values - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps))
        d = cfg.ema_decay
        st.ema_params = st.ema_params.with_values(d * st.ema_params.values + (1 - d) * st.params.values)
        st.history.append({"step": st.global_step, "epoch": st.epoch, "lr": lr, "loss": value,
                           "consistency": parts["consistency"], "e_cond_mean": parts["e_cond_mean"]})
        return value

    def run(self, callback=None) -> TrainState:
        """Train for the configured epochs; ``callback(state)`` runs after each epoch."""
        st = self.state
        while st.epoch < self.cfg.epochs:
            lr = cosine_lr(st.epoch, self.cfg)
            for _ in range(self.cfg.steps_per_epoch):
                self.step(lr=lr)
            st.epoch += 1
            if callback is not None:
                callback(st)
        return st

    def evaluate(self, n_samples: int = 4096, seed: int = 12345, use_ema: bool = True) -> dict:
        """Loss components on a fixed held-out batch, no parameter update."""
        rng = RngStream(seed, _DATA_STREAM).generator()
        batch = self.sample_batch(rng=rng, batch=n_samples)
        params = self.state.ema_params if use_ema else self.state.params
        return self.loss_and_grad(params, batch, self.state.ema_params, need_grad=False)[2]

    # export -----------------------------------------------------------------------
    def model(self, use_ema: bool = True) -> NeuralModel:
        params = self.state.ema_params if use_ema else self.state.params
        return NeuralModel(self.net, params, self.cfg.resolved_condition)

    def checkpoint_bytes(self) -> bytes:
        st = self.state
        meta = {"train_config": self.cfg.to_dict(), "epoch": st.epoch, "global_step": st.global_step,
                "condition_kind": self.cfg.resolved_condition, "code": self.code.name,
                "code_hash": self.code.H.digest(),
                "schedule": {"beta_step": self.schedule.beta_step, "total_steps": self.schedule.N}}
        return params_to_bytes(self.net.config, st.params,
                               {"ema_params": st.ema_params.values, "adam_m": st.adam_m, "adam_v": st.adam_v},
                               meta)


@dataclass
class Checkpoint:
    net: Backbone
    params: ModelParams
    ema_params: ModelParams
    meta: dict
    arrays: dict

    def model(self, use_ema: bool = True) -> NeuralModel:
        return NeuralModel(self.net, self.ema_params if use_ema else self.params,
                           self.meta.get("condition_kind", "soft"))

    @property
    def schedule(self) -> DiffusionSchedule:
        s = self.meta["schedule"]
        return DiffusionSchedule(s["beta_step"], s["total_steps"])


def load_checkpoint(data: bytes, code: LinearCode) -> Checkpoint:
    net, params, header, arrays = params_from_bytes(data, code.H)
    meta = header["meta"]
    if meta.get("code_hash") not in (None, code.H.digest()):
        raise ValueError("checkpoint was trained on a different parity-check matrix")
    ema = params.with_values(arrays.get("ema_params", params.values))
    return Checkpoint(net, params, ema, meta, arrays)


def resume(data: bytes, code: LinearCode) -> Trainer:
    """Rebuild a :class:`Trainer` with the saved optimiser/EMA state (data RNG restarts)."""
    ck = load_checkpoint(data, code)
    tr = Trainer(code, TrainConfig.from_dict(ck.meta["train_config"]), ck.net.config)
    tr.state.params = ck.params
    tr.state.ema_params = ck.ema_params
    tr.state.adam_m = ck.arrays["adam_m"]
    tr.state.adam_v = ck.arrays["adam_v"]
    tr.state.epoch = ck.meta["epoch"]
    tr.state.global_step = ck.meta["global_step"]
    return tr

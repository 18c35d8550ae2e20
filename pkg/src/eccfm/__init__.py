"""Consistency-model decoding of linear block codes over BPSK channels.

Modules
-------
codes       parity-check matrices, generators, alist I/O
channel     BPSK, AWGN / Rayleigh, reproducible random streams
syndrome    hard syndrome sums and the differentiable soft syndrome
diffusion   forward noising schedule and trajectory pairs
backbone    numpy networks with hand-written gradients
trainer     consistency / vanilla-CM / DDECC objectives and the training loop
decoders    one-step, multi-step, DDECC, BP, exhaustive ML, hard decision
harness     BER/FER simulation, benchmarks, convergence stats, traces
"""
from .backbone import Backbone, BackboneConfig, ModelParams, NeuralModel
from .channel import ChannelConfig, RngStream, ebn0_to_sigma, modulate_bpsk, transmit
from .codes import LinearCode, ParityCheckMatrix, derive_generator, encode, hard_syndrome, load_code
from .decoders import (DecodeOutcome, decode_bp, decode_ddecc, decode_hard, decode_ml_exhaustive,
                       decode_multi_step, decode_one_step)
from .diffusion import DiffusionSchedule, sample_pair
from .harness import EvalResult, StopRule, run_benchmark, run_convergence_stats, run_eval, trace_trajectory
from .syndrome import soft_syndrome, soft_syndrome_condition, syndrome_error_sum
from .trainer import TrainConfig, Trainer, load_checkpoint

__version__ = "0.1.0"

"""How the soft and hard syndrome conditions react to noise.

The hard condition counts unsatisfied checks and moves in jumps of 1/m; the soft one
varies continuously with the received amplitudes. Runs in a few seconds.
"""
import numpy as np

from eccfm.channel import ChannelConfig, RngStream, transmit
from eccfm.codes import load_code
from eccfm.syndrome import soft_syndrome_condition, syndrome_error_sum

code = load_code("hamming74")
rng = RngStream(0).generator()

# %% one word walked from clean to noisy ------------------------------------------------------
x = np.ones(code.n)
direction = rng.normal(size=code.n)
sigma = 0.7
print(f"{'scale':>6} {'e_hard':>7} {'e_soft':>8}")
for scale in np.linspace(0, 2, 11):
    y = x + scale * direction
    print(f"{scale:6.2f} {syndrome_error_sum(y, code.H) / code.m:7.3f} "
          f"{float(soft_syndrome_condition(y, code.H, sigma)):8.4f}")

# %% averages over the channel -------------------------------------------------------------------
print(f"\n{'Eb/N0':>6} {'mean e_hard':>12} {'mean e_soft':>12}")
for ebn0 in (0.0, 2.0, 4.0, 6.0, 8.0):
    ch = ChannelConfig(ebn0, code.rate)
    y, _ = transmit(np.ones((20_000, code.n)), ch, rng)
    e_hard = syndrome_error_sum(y, code.H) / code.m
    e_soft = soft_syndrome_condition(y, code.H, ch.sigma)
    print(f"{ebn0:6.1f} {e_hard.mean():12.4f} {e_soft.mean():12.4f}")

"""Iterative noise-estimation (DDECC) decoding: step counts and per-step trajectories.

Trains a small noise-head model, then shows that the number of reverse steps falls as
the channel improves and prints one word's trajectory. About one minute.
"""
import numpy as np

from eccfm.channel import ChannelConfig, RngStream
from eccfm.codes import load_code
from eccfm.decoders import DDECCDecoder
from eccfm.harness import draw_frames, run_convergence_stats, trace_smoothness, trace_trajectory
from eccfm.trainer import Trainer, desk_config

code = load_code("hamming74")
tr = Trainer(code, desk_config(code, objective="ddecc", seed=0))
tr.run()
dec = DDECCDecoder(code, tr.model(), tr.schedule, trace=True)

# %% steps per word --------------------------------------------------------------------------------
print(f"{'Eb/N0':>6} {'mean':>7} {'var':>7} {'capped':>7}")
for s in run_convergence_stats(dec, code, [2.0, 4.0, 6.0], frames=5_000):
    print(f"{s.ebn0_db:6.1f} {s.mean:7.3f} {s.variance:7.3f} {s.non_converged:7d}")

# %% one trajectory -----------------------------------------------------------------------------------
ch = ChannelConfig(2.0, code.rate)
_, y = draw_frames(code, ch, RngStream(5), 200)
rows = trace_trajectory(dec, y, ch.sigma)
longest = max({r[0] for r in rows}, key=lambda sid: sum(r[0] == sid for r in rows))
print(f"\nword {longest}: step, e_hard, e_soft")
for _, step, eh, es in (r for r in rows if r[0] == longest):
    print(f"  {step:3d} {eh:3d} {es:8.4f}")
soft, hard = trace_smoothness(rows, code.m)
print(f"largest per-step change: e_soft {soft:.4f}, e_hard/m {hard:.4f}")

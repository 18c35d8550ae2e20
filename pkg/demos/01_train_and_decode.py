"""Train a one-step consistency decoder on the Hamming(7,4) code and compare it with BP and ML.

Run with ``python demos/01_train_and_decode.py``; about a minute on one core.
"""
import time

import numpy as np

from eccfm.channel import ChannelConfig
from eccfm.codes import load_code
from eccfm.decoders import BPDecoder, HardDecisionDecoder, MLDecoder, OneStepDecoder
from eccfm.harness import StopRule, run_eval
from eccfm.trainer import Trainer, desk_config

code = load_code("hamming74")
print(f"code {code.name}: n={code.n} k={code.k} rate={code.rate:.3f}")
print(code.H.rows)

# %% train ------------------------------------------------------------------------------
# desk budget: 60 epochs of 200 steps, diffusion horizon wide enough for 2 dB
cfg = desk_config(code, seed=0)
tr = Trainer(code, cfg)
print(f"training {tr.net.param_count} parameters, N={tr.schedule.N}, beta={tr.schedule.beta_step}")

t0 = time.perf_counter()


def report(st):
    if st.epoch % 10 == 0:
        recent = list(st.history)[-cfg.steps_per_epoch:]
        print(f"  epoch {st.epoch:3d}  loss {np.mean([h['loss'] for h in recent]):.5f}")


tr.run(report)
print(f"trained in {time.perf_counter() - t0:.0f} s")

# %% evaluate ---------------------------------------------------------------------------
decoders = [HardDecisionDecoder(code), BPDecoder(code), MLDecoder(code), OneStepDecoder(code, tr.model())]
stop = StopRule(min_frame_errors=200, max_frames=200_000)
print(f"\n{'Eb/N0':>6}" + "".join(f"{d.name:>11}" for d in decoders))
for ebn0 in (2.0, 3.0, 4.0, 5.0, 6.0):
    ch = ChannelConfig(ebn0, code.rate)
    bers = [run_eval(d, code, ch, stop, seed=1).ber for d in decoders]
    print(f"{ebn0:6.1f}" + "".join(f"{b:11.2e}" for b in bers))

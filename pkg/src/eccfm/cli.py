"""Command-line entry point: ``train``, ``eval``, ``bench``, ``trace`` and ``check``.

Settings resolve as built-in defaults < ``--config`` JSON file < explicit flags.
The default output directory comes from ``$ECCFM_OUTPUT_DIR`` (else the
current directory).  Failures print one JSON object on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from .backbone import BackboneConfig
from .channel import ChannelConfig, RngStream
from .checks import SUITES, run_checks
from .codes import LinearCode, load_code
from .decoders import BPDecoder, DDECCDecoder, HardDecisionDecoder, MLDecoder, OneStepDecoder
from .harness import (ARTIFACT_VERSION, TRACE_COLUMNS, EvalAborted, ExperimentConfig, StopRule, draw_frames,
                      run_benchmark, run_eval, trace_trajectory)
from .trainer import TrainConfig, Trainer, load_checkpoint

OUTPUT_ENV = "ECCFM_OUTPUT_DIR"
DECODERS = ("bp", "ml", "uncoded", "eccfm", "ddecc")
_TRACE_STREAM = 24


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = 2):
        super().__init__(message)
        self.kind, self.code = kind, code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


# flag -> key inside a nested config section; other flags are top-level fields
_TRAIN_FLAGS = {
    "objective": "objective", "condition": "condition_kind", "epochs": "epochs",
    "steps_per_epoch": "steps_per_epoch", "train_batch_size": "batch_size", "lr": "lr_init",
    "lr_final": "lr_final", "lambda_syn": "lambda_syn", "alpha": "alpha", "ema_decay": "ema_decay",
    "steps_override": "steps_override", "beta_step": "beta_step", "train_ebn0": "train_ebn0_db",
    "random_codewords": "random_codewords",
}
_BACKBONE_FLAGS = {"backbone": "kind", "depth": "depth", "width": "width", "embed_dim": "embed_dim"}
_DECODER_FLAGS = {"max_iters": "max_iters", "n_steps": "n_steps", "renoise_fraction": "renoise_fraction",
                  "max_steps": "max_steps"}
_STOP_FLAGS = {"min_frame_errors": "min_frame_errors", "max_frames": "max_frames"}
_COMMAND_DEFAULTS = {"bench": {"batch_size": 1}, "trace": {"frames": 32, "ebn0_db": [2.0]}}


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    common = _Parser(add_help=False, argument_default=S)
    common.add_argument("--config", help="JSON file with any of the settings below")
    common.add_argument("--code", help="built-in code id or .alist / dense matrix path")
    common.add_argument("--seed", type=int)
    common.add_argument("--output-dir", dest="output_dir")

    chan = _Parser(add_help=False, argument_default=S)
    chan.add_argument("--ebn0", dest="ebn0_db", type=float, nargs="+")
    chan.add_argument("--channel", choices=("awgn", "rayleigh"))
    chan.add_argument("--sigma-override", dest="sigma_override", type=float)

    dec = _Parser(add_help=False, argument_default=S)
    dec.add_argument("--checkpoint", help="checkpoint of a codeword-head (one-step) model")
    dec.add_argument("--ddecc-checkpoint", dest="ddecc_checkpoint", help="checkpoint of a noise-head model")
    dec.add_argument("--max-iters", dest="max_iters", type=int, help="BP iterations")
    dec.add_argument("--n-steps", dest="n_steps", type=int, help="consistency decoding steps")
    dec.add_argument("--renoise-fraction", dest="renoise_fraction", type=float)
    dec.add_argument("--max-steps", dest="max_steps", type=int, help="DDECC step cap")

    p = _Parser(prog="eccfm", description="Consistency-model decoders for linear block codes.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], argument_default=S, help="train a neural decoder")
    t.add_argument("--objective", choices=("eccfm", "vanilla_cm", "ddecc"))
    t.add_argument("--condition", choices=("soft", "hard"))
    t.add_argument("--backbone", choices=("mlp", "tiny_cross_attention"))
    t.add_argument("--depth", type=int)
    t.add_argument("--width", type=int)
    t.add_argument("--embed-dim", dest="embed_dim", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
    t.add_argument("--batch-size", dest="train_batch_size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lr-final", dest="lr_final", type=float)
    t.add_argument("--lambda-syn", dest="lambda_syn", type=float)
    t.add_argument("--alpha", type=float)
    t.add_argument("--ema-decay", dest="ema_decay", type=float)
    t.add_argument("--beta-step", dest="beta_step", type=float)
    t.add_argument("--steps-override", dest="steps_override", type=int)
    t.add_argument("--train-ebn0", dest="train_ebn0", type=float)
    t.add_argument("--random-codewords", dest="random_codewords", action="store_true")

    e = sub.add_parser("eval", parents=[common, chan, dec], argument_default=S, help="BER/FER simulation")
    e.add_argument("--decoder", choices=DECODERS)
    e.add_argument("--min-frame-errors", dest="min_frame_errors", type=int)
    e.add_argument("--max-frames", dest="max_frames", type=int)
    e.add_argument("--batch-size", dest="batch_size", type=int)
    e.add_argument("--workers", type=int)

    b = sub.add_parser("bench", parents=[common, chan, dec], argument_default=S, help="throughput benchmark")
    b.add_argument("--decoders", nargs="+", choices=DECODERS)
    b.add_argument("--frames", type=int)
    b.add_argument("--warmup-frames", dest="warmup_frames", type=int)
    b.add_argument("--batch-size", dest="batch_size", type=int)

    tr = sub.add_parser("trace", parents=[common, chan, dec], argument_default=S,
                        help="per-step syndrome trajectory of the DDECC decoder")
    tr.add_argument("--frames", type=int)

    c = sub.add_parser("check", parents=[common], argument_default=S, help="run the property suites")
    c.add_argument("--suites", nargs="+", choices=SUITES)
    return p


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    d = ExperimentConfig(args.command).to_dict()
    d["output_dir"] = os.environ.get(OUTPUT_ENV, ".")
    if command_defaults := _COMMAND_DEFAULTS.get(args.command):
        d.update(command_defaults)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    if cfg_path := getattr(args, "config", None):
        path = Path(cfg_path)
        if not path.is_file():
            raise CliError("config", f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError("config", f"{path}: invalid JSON ({exc})") from exc
        for section in ("train", "backbone", "decoder_params", "stop"):
            if section in loaded:
                d[section] = {**d[section], **loaded.pop(section)}
        loaded.pop("command", None)
        d.update(loaded)
    for flag, value in flags.items():
        for section, table in (("train", _TRAIN_FLAGS), ("backbone", _BACKBONE_FLAGS),
                               ("decoder_params", _DECODER_FLAGS), ("stop", _STOP_FLAGS)):
            if flag in table:
                d[section][table[flag]] = value
                break
        else:
            d[flag] = value
    try:
        return ExperimentConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise CliError("config", str(exc)) from exc


# --- helpers ---------------------------------------------------------------------

def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _provenance(cfg: ExperimentConfig, code: LinearCode, param_count: int) -> dict:
    resolved = cfg.to_dict()
    resolved.pop("output_dir")  # results must not depend on where they are written
    return {"version": ARTIFACT_VERSION, "config": resolved, "seed": cfg.seed, "code_id": code.name,
            "code_hash": code.H.digest(), "parameter_count": param_count}


def _load_ck(path: str | None, code: LinearCode, what: str):
    if path is None:
        raise CliError("config", f"decoder {what!r} needs a checkpoint")
    p = Path(path)
    if not p.is_file():
        raise CliError("io", f"checkpoint not found: {p}")
    return load_checkpoint(p.read_bytes(), code)


def _make_decoder(name: str, cfg: ExperimentConfig, code: LinearCode, trace: bool = False):
    """``(decoder, parameter_count)``."""
    dp = cfg.decoder_params
    if name == "bp":
        return BPDecoder(code, dp.get("max_iters", 50)), 0
    if name == "ml":
        return MLDecoder(code), 0
    if name == "uncoded":
        return HardDecisionDecoder(code), 0
    if name == "eccfm":
        ck = _load_ck(cfg.checkpoint, code, name)
        d = OneStepDecoder(code, ck.model(), dp.get("n_steps", 1), dp.get("renoise_fraction", 0.2), ck.schedule)
        return d, ck.net.param_count
    ck = _load_ck(cfg.ddecc_checkpoint or cfg.checkpoint, code, name)
    return DDECCDecoder(code, ck.model(), ck.schedule, dp.get("max_steps"), trace=trace), ck.net.param_count


# --- commands -----------------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig, code: LinearCode, out: Path) -> dict:
    tcfg = TrainConfig.from_dict({**cfg.train, "seed": cfg.seed})
    output = "noise" if tcfg.objective == "ddecc" else "codeword"
    bcfg = BackboneConfig(code.n, code.m, output=output, **cfg.backbone)
    trainer = Trainer(code, tcfg, bcfg)
    log = []

    def on_epoch(st):
        recent = list(st.history)[-tcfg.steps_per_epoch:]
        mean = {k: sum(h[k] for h in recent) / len(recent) for k in ("loss", "consistency", "e_cond_mean")}
        log.append((st.global_step, st.epoch, recent[-1]["lr"], mean["loss"], mean["consistency"],
                    mean["e_cond_mean"]))

    trainer.run(on_epoch)
    (out / "checkpoint.npz").write_bytes(trainer.checkpoint_bytes())
    _csv(out / "train_log.csv", ("step", "epoch", "lr", "loss", "consistency", "condition_mean"),
         [tuple(repr(v) if isinstance(v, float) else v for v in row) for row in log])
    summary = _provenance(cfg, code, trainer.net.param_count)
    summary.update(final_loss=log[-1][3], epochs=tcfg.epochs, global_step=trainer.state.global_step,
                   schedule={"beta_step": trainer.schedule.beta_step, "total_steps": trainer.schedule.N},
                   heldout=trainer.evaluate())
    _dump(out / "summary.json", summary)
    return {"checkpoint": str(out / "checkpoint.npz"), "final_loss": summary["final_loss"]}


def cmd_eval(cfg: ExperimentConfig, code: LinearCode, out: Path) -> dict:
    decoder, count = _make_decoder(cfg.decoder, cfg, code)
    stop = StopRule(**cfg.stop)
    summary = _provenance(cfg, code, count)
    results, timing = [], []
    for ebn0 in cfg.ebn0_db:
        ch = ChannelConfig(ebn0, code.rate, cfg.channel, sigma_override=cfg.sigma_override)
        try:
            res = run_eval(decoder, code, ch, stop, cfg.seed, cfg.batch_size, cfg.workers)
        except EvalAborted as exc:
            results.append(exc.partial.counts())
            _dump(out / "summary.json", {**summary, "results": results, "status": "aborted"})
            raise CliError("decoder", str(exc), 3) from exc
        results.append(res.counts())
        timing.append({"ebn0_db": ebn0, **res.timing()})
    _dump(out / "summary.json", {**summary, "results": results, "status": "complete"})
    _dump(out / "timing.json", timing)
    return {"results": [{"ebn0_db": r["channel"]["ebn0_db"], "ber": r["ber"], "fer": r["fer"]} for r in results]}


def cmd_bench(cfg: ExperimentConfig, code: LinearCode, out: Path) -> dict:
    made = [_make_decoder(n, cfg, code) for n in cfg.decoders]
    ch = ChannelConfig(cfg.ebn0_db[0], code.rate, cfg.channel, sigma_override=cfg.sigma_override)
    rows = run_benchmark([d for d, _ in made], code, ch, cfg.frames, cfg.warmup_frames, cfg.batch_size, cfg.seed)
    _csv(out / "bench.csv", ("decoder_id", "frames", "batch_size", "wall_time", "throughput", "mean_steps", "speedup"),
         [(r.decoder_id, r.frames, r.batch_size, f"{r.wall_time:.6f}", f"{r.throughput:.3f}",
           f"{r.mean_steps:.4f}", f"{r.speedup:.4f}") for r in rows])
    _dump(out / "summary.json", {**_provenance(cfg, code, max(c for _, c in made)),
                                 "decoders": [r.decoder_id for r in rows]})
    return {"rows": [{"decoder_id": r.decoder_id, "throughput": r.throughput, "speedup": r.speedup} for r in rows]}


def cmd_trace(cfg: ExperimentConfig, code: LinearCode, out: Path) -> dict:
    decoder, count = _make_decoder("ddecc", cfg, code, trace=True)
    ch = ChannelConfig(cfg.ebn0_db[0], code.rate, cfg.channel, sigma_override=cfg.sigma_override)
    _, y = draw_frames(code, ch, RngStream(cfg.seed, _TRACE_STREAM), cfg.frames)
    rows = trace_trajectory(decoder, y, ch.sigma)
    _csv(out / "trace.csv", TRACE_COLUMNS, [(s, k, eh, repr(es)) for s, k, eh, es in rows])
    _dump(out / "summary.json", {**_provenance(cfg, code, count), "rows": len(rows)})
    return {"rows": len(rows)}


def cmd_check(cfg: ExperimentConfig, code: LinearCode, out: Path) -> dict:
    results = run_checks(cfg.suites, cfg.seed)
    report = {**_provenance(cfg, code, 0), "checks": [r.to_dict() for r in results]}
    _dump(out / "check.json", report)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise CliError("check", f"property suites failed: {failed}", 1)
    return {"passed": [r.name for r in results]}


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "bench": cmd_bench, "trace": cmd_trace, "check": cmd_check}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        try:
            code = load_code(cfg.code)
        except FileNotFoundError as exc:
            raise CliError("io", str(exc)) from exc
        except ValueError as exc:
            raise CliError("code", str(exc)) from exc
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _dump(out / "config.json", cfg.to_dict())
        info = COMMANDS[cfg.command](cfg, code, out)
    except CliError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}), file=sys.stderr)
        return exc.code
    except Exception as exc:  # noqa: BLE001 - every failure becomes one machine-readable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps({"status": "ok", "command": cfg.command, "output_dir": str(out), **info}))
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands: simulate (draw a loss trace), apply (degrade audio with a
trace), train, infer (conceal a lossy file), eval (objective metrics over
paired directories), info (checkpoint summary with parameter count and
measured real-time factor).

Exit codes: 0 success, 1 I/O error, 2 validation/config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import frontend, losses
from .audio import read_wav, write_wav
from .channel import (GEParams, apply_trace, expected_loss_rate, read_trace,
                      sample_trace, write_trace)
from .discriminators import si_sdr
from .frontend import StftConfig
from .generator import count_parameters, load_checkpoint
from .inference import DecayPolicy, SpliceConfig, conceal, measure_rtf
from .training import format_config, parse_config_file, train_loop

REFERENCE_PARAM_COUNT = "3.81M (full-scale reference model)"


def _print_resolved(name: str, args: argparse.Namespace) -> None:
    print(f"[{name}] resolved configuration:")
    for key, value in sorted(vars(args).items()):
        if key == "func":
            continue
        print(f"  {key} = {value}")


def _cmd_simulate(args) -> int:
    _print_resolved("simulate", args)
    params = GEParams(p_gb=args.p_gb, p_bg=args.p_bg, loss_good=args.loss_good,
                      loss_bad=args.loss_bad, seed=args.seed)
    expected = expected_loss_rate(params)
    trace = sample_trace(params, args.packets, max_rate=args.max_rate)
    write_trace(args.out, trace)
    print(f"expected loss rate: {expected:.4f}")
    print(f"realized loss rate: {trace.loss_rate:.4f}")
    print(f"wrote {trace.num_packets} packet flags to {args.out}")
    return 0


def _cmd_apply(args) -> int:
    _print_resolved("apply", args)
    wave = read_wav(args.in_path)
    trace = read_trace(args.trace)
    out = apply_trace(wave, trace)
    write_wav(args.out, out, encoding=args.encoding)
    print(f"degraded {args.in_path} -> {args.out} "
          f"({trace.flags[: -(-len(wave) // trace.packet_samples)].sum()} packets lost)")
    return 0


def _cmd_train(args) -> int:
    config = parse_config_file(args.config)
    print("[train] resolved configuration:")
    print(format_config(config))
    state = train_loop(config, resume=args.resume, log_fn=print)
    print(f"finished at step {state.step}; artifacts in {config.out_dir}")
    return 0


def _cmd_infer(args) -> int:
    _print_resolved("infer", args)
    model, extra = load_checkpoint(args.ckpt)
    wave = read_wav(args.in_path)
    trace = read_trace(args.trace) if args.trace else None
    decay = DecayPolicy(threshold_packets=args.decay_threshold)
    splice = SpliceConfig(enabled=not args.no_splice)
    restored = conceal(model, wave, trace, decay=decay, splice=splice)
    write_wav(args.out, restored, encoding=args.encoding)
    print(f"restored {args.in_path} -> {args.out} ({len(restored)} samples)")
    return 0


def _lsd(ref_mag: np.ndarray, deg_mag: np.ndarray) -> float:
    eps = 1e-8
    diff = 20.0 * np.log10(ref_mag + eps) - 20.0 * np.log10(deg_mag + eps)
    return float(np.mean(np.sqrt(np.mean(diff ** 2, axis=1))))


def _eval_pair(ref_path: Path, deg_path: Path) -> dict:
    config = StftConfig()
    ref = read_wav(ref_path)
    deg = read_wav(deg_path)
    if len(ref) != len(deg):
        raise ValueError(f"length mismatch: {len(ref)} vs {len(deg)} samples")
    ref_spec = frontend.stft(ref.samples, config).numpy()
    deg_spec = frontend.stft(deg.samples, config).numpy()
    value = si_sdr(deg.samples, ref.samples)
    capped = 60.0 if value == float("inf") else max(min(value, 60.0), -60.0)
    return {
        "si_sdr": capped,
        "plcpa": float(losses.plcpa_loss(deg_spec, ref_spec, config.compression_exponent)),
        "lsd_wide": _lsd(np.abs(ref_spec[:, :frontend.WIDE_BINS]),
                         np.abs(deg_spec[:, :frontend.WIDE_BINS])),
        "lsd_high": _lsd(np.abs(ref_spec[:, frontend.WIDE_BINS:]),
                         np.abs(deg_spec[:, frontend.WIDE_BINS:])),
    }


def _cmd_eval(args) -> int:
    _print_resolved("eval", args)
    ref_dir, deg_dir = Path(args.ref), Path(args.deg)
    if not ref_dir.is_dir() or not deg_dir.is_dir():
        raise FileNotFoundError("both --ref and --deg must be directories")
    report: dict = {"files": {}, "skipped": [], "mean": {}}
    names = sorted(p.name for p in ref_dir.glob("*.wav"))
    if not names:
        raise ValueError(f"no .wav files in {ref_dir}")
    for name in names:
        deg_path = deg_dir / name
        if not deg_path.exists():
            report["skipped"].append({"file": name, "reason": "missing degraded file"})
            continue
        try:
            report["files"][name] = _eval_pair(ref_dir / name, deg_path)
        except ValueError as exc:
            report["skipped"].append({"file": name, "reason": str(exc)})
    if report["files"]:
        keys = next(iter(report["files"].values())).keys()
        report["mean"] = {
            k: float(np.mean([m[k] for m in report["files"].values()])) for k in keys
        }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print(f"evaluated {len(report['files'])} pairs "
          f"({len(report['skipped'])} skipped) -> {args.out}")
    for k, v in report["mean"].items():
        print(f"  mean {k} = {v:.4f}")
    return 0


def _cmd_info(args) -> int:
    _print_resolved("info", args)
    model, extra = load_checkpoint(args.ckpt)
    count = count_parameters(model)
    print(f"preset: {model.config.preset}")
    print(f"parameters: {count} ({count / 1e6:.2f}M; reference: {REFERENCE_PARAM_COUNT})")
    if extra:
        print(f"extra: {extra}")
    rtf = measure_rtf(model, seconds=args.rtf_seconds)
    print(f"single-thread RTF on {args.rtf_seconds:.1f} s synthetic audio: {rtf:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bandplc",
        description="Band-split packet loss concealment toolkit (48 kHz mono WAV)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="draw a Gilbert-Elliott loss trace")
    sim.add_argument("--packets", type=int, required=True)
    sim.add_argument("--p-gb", type=float, required=True, dest="p_gb")
    sim.add_argument("--p-bg", type=float, required=True, dest="p_bg")
    sim.add_argument("--loss-good", type=float, default=0.0)
    sim.add_argument("--loss-bad", type=float, default=1.0)
    sim.add_argument("--max-rate", type=float, default=0.5)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=_cmd_simulate)

    app = sub.add_parser("apply", help="zero out lost packets per a trace file")
    app.add_argument("--in", dest="in_path", required=True)
    app.add_argument("--trace", required=True)
    app.add_argument("--out", required=True)
    app.add_argument("--encoding", choices=("pcm16", "float32"), default="pcm16")
    app.set_defaults(func=_cmd_apply)

    tr = sub.add_parser("train", help="run or resume a training job")
    tr.add_argument("--config", required=True)
    tr.add_argument("--resume", default=None)
    tr.set_defaults(func=_cmd_train)

    inf = sub.add_parser("infer", help="conceal a lossy recording")
    inf.add_argument("--in", dest="in_path", required=True)
    inf.add_argument("--trace", default=None)
    inf.add_argument("--ckpt", required=True)
    inf.add_argument("--out", required=True)
    inf.add_argument("--no-splice", action="store_true")
    inf.add_argument("--decay-threshold", type=int, default=7)
    inf.add_argument("--encoding", choices=("pcm16", "float32"), default="pcm16")
    inf.set_defaults(func=_cmd_infer)

    ev = sub.add_parser("eval", help="objective metrics over paired directories")
    ev.add_argument("--ref", required=True)
    ev.add_argument("--deg", required=True)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=_cmd_eval)

    info = sub.add_parser("info", help="checkpoint summary: preset, parameters, RTF")
    info.add_argument("--ckpt", required=True)
    info.add_argument("--rtf-seconds", type=float, default=10.0)
    info.set_defaults(func=_cmd_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

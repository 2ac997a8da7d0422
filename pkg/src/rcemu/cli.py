"""Command-line front end.

Subcommands mirror the workflow stages:

* ``sound``       - channel measuring step: estimate, window and invert
                    chamber snapshots; writes raw/windowed CIRs and the
                    derived equalizer per snapshot.
* ``closed-loop`` - full two-step synthesis of a tap model through the
                    equalized chamber, scored against the coerced target
                    (``--bypass-ce`` turns it into the pure cancellation
                    experiment, ``--stir-between`` breaks the loop).
* ``baseline``    - artificial-path sweep: residual and self-correlation
                    versus the companion-path offset.
* ``emulate``     - stand-alone emulator run: coerced tap table plus a
                    fading realization summary.
* ``report``      - human-readable summary of a previous output directory.

Every run writes a ``manifest.json`` recording the full configuration and
derived seeds; pass a manifest as ``--config`` to replay a run bit for bit.

Exit codes: 0 ok, 2 configuration error, 3 numerical error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .chamber import export_cir_csv
from .emulator import DopplerConfig, generate_fading, load_model, model_to_cir
from .equalizer import export_equalizer_csv
from .errors import ConfigError, NumericalError
from .experiments import (RunConfig, baseline_sweep_run, cancellation_run,
                          closed_loop_run, prepare_model, sound_snapshot)
from .metrics import compute_pdp, export_pdp_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_BOOL_KEYS = {"stir_between", "bypass_ce"}
_TUPLE_KEYS = {"dt_sweep_ns", "fine_dts_ns"}
_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce_value(key: str, raw: str):
    raw = raw.strip()
    if key in _TUPLE_KEYS:
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if key in _BOOL_KEYS:
        return raw.lower() in ("1", "true", "yes", "on")
    if raw.lower() in ("none", ""):
        return None
    field = _FIELDS[key]
    if field.type in ("int", int):
        return int(raw)
    if field.type in ("float", float):
        return float(raw)
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def load_config(path: str | None) -> RunConfig:
    """Build a RunConfig from a key=value file or a previous manifest."""
    cfg = RunConfig()
    if path is None:
        return cfg
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    if path.endswith(".json"):
        with open(path) as f:
            data = json.load(f).get("config", {})
        for k, v in data.items():
            if k not in _FIELDS:
                raise ConfigError(f"unknown config key {k!r}")
            if k in _TUPLE_KEYS and v is not None:
                v = tuple(v)
            setattr(cfg, k, v)
        return cfg
    with open(path) as f:
        for ln, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{ln}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in _FIELDS:
                raise ConfigError(f"{path}:{ln}: unknown config key {key!r}")
            setattr(cfg, key, _coerce_value(key, val))
    return cfg


def _apply_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.master_seed = args.seed
    if getattr(args, "model", None) is not None:
        cfg.model = args.model
    if getattr(args, "ds_ns", None) is not None:
        cfg.ds_target_ns = args.ds_ns
    if getattr(args, "epsilon", None) is not None:
        cfg.epsilon_rel = args.epsilon
    if getattr(args, "snapshots", None) is not None:
        cfg.n_snapshots = args.snapshots
    if getattr(args, "realizations", None) is not None:
        cfg.n_eval_realizations = args.realizations
    if getattr(args, "bypass_ce", False):
        cfg.bypass_ce = True
    if getattr(args, "stir_between", False):
        cfg.stir_between = True
    return cfg


def _write_manifest(outdir: str, cfg: RunConfig, command: str,
                    outputs: list[str], seeds: dict) -> str:
    manifest = {
        "command": command,
        "config": cfg.to_dict(),
        "derived_seeds": seeds,
        "outputs": sorted(outputs),
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _maybe_plot(outdir: str, name: str, draw) -> list[str]:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("plots requested but matplotlib is not installed", file=sys.stderr)
        return []
    fig, ax = plt.subplots(figsize=(8, 4))
    draw(ax)
    path = os.path.join(outdir, name)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def cmd_sound(cfg: RunConfig, outdir: str, plots: bool) -> int:
    outputs, seeds = [], {}
    results = []
    for s in range(cfg.n_snapshots):
        results.append(sound_snapshot(cfg, s))
    # all snapshots computed before anything is written: a late failure
    # leaves no partial output behind
    for res in results:
        s = res.snapshot
        for tag, cir in (("raw", res.raw_estimate), ("windowed", res.windowed_estimate)):
            path = os.path.join(outdir, f"{tag}_cir_s{s:03d}.csv")
            export_cir_csv(cir, path)
            outputs.append(path)
        path = os.path.join(outdir, f"equalizer_s{s:03d}.csv")
        export_equalizer_csv(res.equalizer, path)
        outputs.append(path)
        seeds[f"sound_snapshot_{s}"] = int(np.random.SeedSequence(
            (cfg.master_seed, 1, s)).generate_state(1)[0])
    if plots:
        def draw(ax):
            est = results[0].raw_estimate
            p = 20 * np.log10(np.maximum(np.abs(est.taps.samples), 1e-9))
            ax.plot(np.arange(len(p)) / est.sample_rate * 1e9, p, lw=0.6)
            ax.set_xlabel("delay [ns]"); ax.set_ylabel("|h| [dB]")
            ax.set_title("raw estimate, snapshot 0")
        outputs += _maybe_plot(outdir, "raw_cir_s000.png", draw)
    outputs.append(_write_manifest(outdir, cfg, "sound", outputs, seeds))
    print(f"sound: {cfg.n_snapshots} snapshot(s) -> {outdir}")
    return EXIT_OK


def cmd_closed_loop(cfg: RunConfig, outdir: str, plots: bool) -> int:
    outputs, seeds = [], {}
    if cfg.bypass_ce:
        res = cancellation_run(cfg)
        path = os.path.join(outdir, "cancellation_report.csv")
        with open(path, "w") as f:
            f.write("snapshot,peak_to_residual_db,residual_rms_delay_spread_ns\n")
            for s, m in enumerate(res.per_snapshot):
                f.write(f"{s},{m.peak_to_residual_db:.6g},"
                        f"{m.residual_rms_delay_spread * 1e9:.6g}\n")
            f.write(f"mean,{res.mean_peak_to_residual_db:.6g},\n")
        outputs.append(path)
        first = res.per_snapshot[0]
        if first.residual_pdp is not None:
            path = os.path.join(outdir, "residual_pdp_s000.csv")
            export_pdp_csv(first.residual_pdp, path)
            outputs.append(path)
        print(f"closed-loop (CE bypassed, stirred={res.stirred}): "
              f"mean peak-to-residual {res.mean_peak_to_residual_db:.2f} dB")
    else:
        res = closed_loop_run(cfg)
        path = os.path.join(outdir, "synthesized_pdp.csv")
        export_pdp_csv(res.pdp, path)
        outputs.append(path)
        path = os.path.join(outdir, "detected_taps.csv")
        with open(path, "w") as f:
            f.write("delay_ns,power_db\n")
            for d, p in res.detected:
                f.write(f"{d * 1e9:.6g},{p:.6g}\n")
        outputs.append(path)
        path = os.path.join(outdir, "tap_match.txt")
        with open(path, "w") as f:
            f.write(res.report.to_text() + "\n")
        outputs.append(path)
        path = os.path.join(outdir, "tap_match.csv")
        with open(path, "w") as f:
            f.write("target_ns,detected_ns,delay_error_ns,target_db,detected_db,power_error_db\n")
            for m in res.report.matches:
                if m.detected_delay is None:
                    f.write(f"{m.target_delay * 1e9:.6g},missed,,{m.target_power_db:.6g},,\n")
                else:
                    f.write(f"{m.target_delay * 1e9:.6g},{m.detected_delay * 1e9:.6g},"
                            f"{m.delay_error * 1e9:.6g},{m.target_power_db:.6g},"
                            f"{m.detected_power_db:.6g},{m.power_error_db:.6g}\n")
        outputs.append(path)
        if plots:
            def draw(ax):
                ax.plot(res.pdp.delays * 1e9, res.pdp.power_db, lw=0.8)
                for m in res.report.matches:
                    ax.axvline(m.target_delay * 1e9, color="r", alpha=0.3, lw=0.6)
                ax.set_xlabel("delay [ns]"); ax.set_ylabel("power [dB]")
                ax.set_ylim(-60, 3)
                ax.set_title(f"synthesized {res.model.name} "
                             f"({res.n_realizations} realizations)")
            outputs += _maybe_plot(outdir, "synthesized_pdp.png", draw)
        n_missed = len(res.report.missed_taps)
        print(f"closed-loop {res.model.name}: {len(res.report.matches) - n_missed}"
              f"/{len(res.report.matches)} taps matched, "
              f"{len(res.report.spurious_taps)} spurious, "
              f"max |power err| {res.report.max_abs_power_error_db():.2f} dB")
    outputs.append(_write_manifest(outdir, cfg, "closed-loop", outputs, seeds))
    return EXIT_OK


def cmd_baseline(cfg: RunConfig, outdir: str, plots: bool, fine: bool) -> int:
    outputs = []
    rows = baseline_sweep_run(cfg)
    path = os.path.join(outdir, "baseline_sweep.csv")
    with open(path, "w") as f:
        f.write("dt_ns,mean_residual_db,mean_selfcorr\n")
        for r in rows:
            f.write(f"{r['dt_ns']:.6g},{r['mean_residual_db']:.6g},{r['mean_selfcorr']:.6g}\n")
    outputs.append(path)
    if fine:
        frows = baseline_sweep_run(cfg, sample_rate=cfg.fine_sample_rate_hz,
                                   dts_ns=cfg.fine_dts_ns)
        path = os.path.join(outdir, "baseline_fine.csv")
        with open(path, "w") as f:
            f.write("dt_ns,mean_residual_db,mean_selfcorr\n")
            for r in frows:
                f.write(f"{r['dt_ns']:.6g},{r['mean_residual_db']:.6g},{r['mean_selfcorr']:.6g}\n")
        outputs.append(path)
    if plots:
        def draw(ax):
            ax.plot([r["dt_ns"] for r in rows], [r["mean_selfcorr"] for r in rows], "o-")
            ax.set_xlabel("dt [ns]"); ax.set_ylabel("|mean self-correlation|")
        outputs += _maybe_plot(outdir, "baseline_selfcorr.png", draw)
    outputs.append(_write_manifest(outdir, cfg, "baseline", outputs, {}))
    print(f"baseline sweep over {len(rows)} offsets -> {outdir}")
    return EXIT_OK


def cmd_emulate(cfg: RunConfig, outdir: str, plots: bool) -> int:
    outputs = []
    model = prepare_model(cfg)
    path = os.path.join(outdir, "coerced_model.csv")
    with open(path, "w") as f:
        f.write("delay_ns,power_db,fading\n")
        for t in model.taps:
            f.write(f"{t.delay * 1e9:.6g},{t.power_db:.6g},{t.fading}\n")
        for t in model.dropped:
            f.write(f"# dropped: {t.delay * 1e9:.6g},{t.power_db:.6g},{t.fading}\n")
    outputs.append(path)
    dop = DopplerConfig(max_doppler_hz=cfg.doppler_hz, spectrum=cfg.doppler_spectrum)
    fading_rate = max(cfg.doppler_hz * 8.0, 1.0)
    n = max(cfg.n_eval_realizations, 4096)
    fading = generate_fading(model, dop, n, fading_rate, seed=cfg.master_seed)
    path = os.path.join(outdir, "fading_stats.csv")
    with open(path, "w") as f:
        f.write("tap,delay_ns,power_db,mean_sq_gain_db\n")
        for k, t in enumerate(model.taps):
            msq = float(np.mean(np.abs(fading.gains[k]) ** 2))
            f.write(f"{k},{t.delay * 1e9:.6g},{t.power_db:.6g},{10 * np.log10(msq):.6g}\n")
    outputs.append(path)
    cir = model_to_cir(model, np.array([10 ** (t.power_db / 20) for t in model.taps]))
    path = os.path.join(outdir, "model_cir.csv")
    export_cir_csv(cir, path)
    outputs.append(path)
    outputs.append(_write_manifest(outdir, cfg, "emulate", outputs, {}))
    print(f"emulate: {model.name}, {len(model.taps)} taps "
          f"({len(model.dropped)} dropped) -> {outdir}")
    return EXIT_OK


def cmd_report(outdir: str) -> int:
    manifest_path = os.path.join(outdir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ConfigError(f"no manifest.json in {outdir}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    print(f"run: {manifest['command']}")
    print(f"model: {manifest['config'].get('model')}  "
          f"seed: {manifest['config'].get('master_seed')}")
    print("outputs:")
    for p in manifest["outputs"]:
        print(f"  {p}")
    match_path = os.path.join(outdir, "tap_match.txt")
    if os.path.exists(match_path):
        print("\ntap match:")
        with open(match_path) as f:
            print(f.read().rstrip())
    canc_path = os.path.join(outdir, "cancellation_report.csv")
    if os.path.exists(canc_path):
        print("\ncancellation report:")
        with open(canc_path) as f:
            print(f.read().rstrip())
    sweep_path = os.path.join(outdir, "baseline_sweep.csv")
    if os.path.exists(sweep_path):
        print("\nbaseline sweep:")
        with open(sweep_path) as f:
            print(f.read().rstrip())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcemu",
        description="Closed-loop synthesis of standard tapped-delay-line channel "
                    "models inside a reverberation-chamber-like channel.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="key=value config file or a previous manifest.json")
        p.add_argument("--seed", type=int, help="master seed override")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--model", help="pedestrian_b | tdl_b | path to a model file")
        p.add_argument("--ds-ns", type=float, dest="ds_ns",
                       help="delay-spread scaling for normalized models [ns]")
        p.add_argument("--epsilon", type=float, help="equalizer regularization (relative)")
        p.add_argument("--snapshots", type=int, help="number of stirrer snapshots")
        p.add_argument("--realizations", type=int, help="number of fading realizations")
        p.add_argument("--plots", action="store_true", help="also write PNG plots")

    p = sub.add_parser("sound", help="channel measuring step")
    common(p)
    p = sub.add_parser("closed-loop", help="two-step synthesis and scoring")
    common(p)
    p.add_argument("--bypass-ce", action="store_true", dest="bypass_ce",
                   help="skip the emulator: pure cancellation experiment")
    p.add_argument("--stir-between", action="store_true", dest="stir_between",
                   help="move the stirrer between measuring and synthesis")
    p = sub.add_parser("baseline", help="artificial-path sweep")
    common(p)
    p.add_argument("--fine", action="store_true",
                   help="also run the fine-offset auxiliary-grid sweep")
    p = sub.add_parser("emulate", help="stand-alone emulator run")
    common(p)
    p = sub.add_parser("report", help="summarize an output directory")
    p.add_argument("--out", required=True, help="output directory to summarize")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.out)
        cfg = _apply_flags(load_config(args.config), args)
        try:
            os.makedirs(args.out, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"cannot create output directory {args.out}: {e}")
        if args.command == "sound":
            return cmd_sound(cfg, args.out, args.plots)
        if args.command == "closed-loop":
            return cmd_closed_loop(cfg, args.out, args.plots)
        if args.command == "baseline":
            return cmd_baseline(cfg, args.out, args.plots, args.fine)
        if args.command == "emulate":
            return cmd_emulate(cfg, args.out, args.plots)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

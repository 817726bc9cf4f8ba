"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import build_delay_histogram, compute_car, peak_metrics, rate_report
from .config import AnalysisSettings, ConfigError, load_mapping, to_dict
from .oracle import amplitude_oracle
from .pipeline import (measure_point, oracle_check, pulses_for, rate_points_csv, simulate_scenario,
                       sweep_phase, sweep_power)
from .qkd import distribute_and_detect, qkd_report, sift, write_bits
from .scenarios import PRESETS, UnknownScenario, load_scenario, resolve_config_path, scenario_from_mapping
from .tagio import TagFileError, TagStream, read_many, write_tags


class UsageError(Exception):
    pass


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _floats(text: str | None):
    if text is None:
        return None
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _scenario(args):
    """Preset / config file / manifest -> (scenario, seed)."""
    name, config = args.scenario, args.config
    if config is not None:
        data = load_mapping(resolve_config_path(config))
        if isinstance(data, dict) and "scenario" in data and "seed" in data:  # a manifest
            sc = scenario_from_mapping(data["scenario"])
            seed = data["seed"]
            if name is not None:
                raise UsageError("--scenario cannot be combined with a manifest")
            return sc, (args.seed if args.seed is not None else seed)
    sc = load_scenario(name, config)
    seed = sc.run.seed if args.seed is None else args.seed
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", "must be a 64-bit unsigned integer")
    return replace(sc, run=replace(sc.run, seed=seed)), seed


def _with_duration(sc, duration_s):
    if duration_s is None:
        return sc
    if not duration_s > 0:
        raise ConfigError("duration", "must be > 0")
    return replace(sc, run=replace(sc.run, pulse_count=pulses_for(sc.run, duration_s)))


def _manifest(command, sc, seed, files, extra=None) -> dict:
    m = {"command": command, "version": __version__, "seed": seed,
         "scenario": to_dict(sc), "files": sorted(files)}
    if sc.topology != "two_receiver":
        m["detector_path_loss_dB"] = sc.detector_path_loss_dB
    if extra:
        m.update(extra)
    return m


def analyze_streams(streams: dict, settings: AnalysisSettings, tick_ps: float,
                    bin_period_ps: float, duration_s: float | None = None):
    """Histogram + summary for the two lowest channels of ``streams``.

    Without ``duration_s`` the duration is the span of all tags.
    """
    chans = sorted(streams)
    if len(chans) < 2:
        raise ValueError("need tags from at least two channels")
    if duration_s is None:
        ends = [(int(t[0]), int(t[-1])) for t in streams.values() if len(t)]
        span = (max(e for _, e in ends) - min(s for s, _ in ends) + 1) if ends else 0
        duration_s = span * tick_ps * 1e-12
    a, b = streams[chans[0]], streams[chans[1]]
    pm = measure_point(a, b, settings, bin_period_ps, tick_ps)
    hist = pm.histogram
    summary = {
        "channels": chans[:2],
        "duration_s": duration_s,
        "center_counts": pm.center,
        "side_minus_counts": pm.side_minus,
        "side_plus_counts": pm.side_plus,
        "accidentals_per_window": pm.accidentals,
        "peaks": {name: vars(peak_metrics(hist, pos, bin_period_ps / 2, settings.window_ps))
                  for name, pos in (("side_minus", -bin_period_ps), ("center", 0.0),
                                    ("side_plus", bin_period_ps))},
    }
    car = compute_car(hist, settings.window_ps, 0.0, settings.accidental_offsets_ps)
    summary["car"] = {"value": car.car, "err": car.car_err, "lower_bound": car.lower_bound,
                      "infinite": car.infinite, "peak_counts": car.peak_counts,
                      "mean_accidentals": car.mean_accidentals}
    if duration_s > 0:
        summary["rates"] = rate_report(streams, duration_s, pair=(chans[0], chans[1]),
                                       window_ps=settings.window_ps,
                                       accidental_offsets=settings.accidental_offsets_ps,
                                       tick_ps=tick_ps, bin_width_ps=settings.bin_width_ps).to_dict()
    return hist, summary


def _write_analysis(out: Path, hist, summary, fmt: str) -> list[str]:
    if fmt == "csv":
        (out / "histogram.csv").write_text(hist.to_csv(), encoding="utf-8")
        files = ["histogram.csv"]
    else:
        _dump(out / "histogram.json", {"delay_ps": hist.delays, "count": hist.counts,
                                       "bin_width_ps": hist.bin_width})
        files = ["histogram.json"]
    _dump(out / "analysis.json", summary)
    return files + ["analysis.json"]


# --- commands --------------------------------------------------------------------

def cmd_simulate(args) -> int:
    sc, seed = _scenario(args)
    sc = _with_duration(sc, args.duration)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".csv" if args.tags == "csv" else ".ttg"
    files = []
    if sc.topology == "two_receiver":
        streams = distribute_and_detect(sc.run, sc.alice, sc.bob)
        for party, st in zip(("alice", "bob"), streams):
            name = f"{party}{suffix}"
            write_tags(out / name, st)
            files.append(name)
    else:
        res = simulate_scenario(sc)
        for ch, ticks in sorted(res.tags.items()):
            name = f"ch{ch}{suffix}"
            write_tags(out / name, TagStream.merge({ch: ticks}, res.tick_ps, len(res.tags)))
            files.append(name)
        hist, summary = analyze_streams(res.tags, sc.analysis, res.tick_ps, sc.run.units.bin_period_ps)
        files += _write_analysis(out, hist, summary, args.format)
    _dump(out / "manifest.json", _manifest("simulate", sc, seed, files,
                                           {"duration_s": sc.run.duration_ps * 1e-12}))
    print(f"wrote {len(files)} files to {out}")
    return 0


def cmd_analyze(args) -> int:
    if not args.files:
        raise UsageError("analyze needs at least one tag file")
    stream = read_many(args.files, tick_ps=args.tick_ps)
    if args.scenario is not None or args.config is not None:
        sc, _ = _scenario(args)
        settings, period = sc.analysis, sc.run.units.bin_period_ps
    else:
        settings, period = AnalysisSettings(), 1000.0
    streams = {c: stream.channel_ticks(c) for c in stream.channels()}
    hist, summary = analyze_streams(streams, settings, stream.tick_ps, period, args.duration)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = _write_analysis(out, hist, summary, args.format)
    print(f"wrote {', '.join(files)} to {out}")
    return 0


def cmd_sweep_phase(args) -> int:
    sc, seed = _scenario(args)
    if sc.topology == "two_receiver":
        raise UsageError("sweep-phase runs single-receiver scenarios")
    grid = _floats(args.grid)
    if grid is not None and len(grid) < 5:
        raise UsageError("a phase sweep needs at least 5 grid points")
    sw = sweep_phase(sc, seed=seed, heater_grid_mW=grid, duration_s=args.duration, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = sw.summary()
    if args.format == "csv":
        (out / "fringe.csv").write_text(sw.to_csv(), encoding="utf-8")
        files = ["fringe.csv", "fringe.json"]
    else:
        summary["table"] = {"heater_mW": sw.heater_mW, "phase_rad": sw.phase_rad,
                            "center_counts": sw.center, "side_counts": sw.side}
        files = ["fringe.json"]
    _dump(out / "fringe.json", summary)
    _dump(out / "manifest.json", _manifest("sweep-phase", sc, seed, files + ["manifest.json"]))
    a = sw.analysis
    if not a.fit.ok:
        print(f"fringe fit failed: {a.fit.message}", file=sys.stderr)
    else:
        print(f"raw visibility {a.raw_visibility:.4f}, corrected {a.corrected_visibility:.4f}")
    return 0


def cmd_sweep_power(args) -> int:
    sc, seed = _scenario(args)
    grid = _floats(args.grid)
    if grid is not None and any(p <= 0 for p in grid):
        raise UsageError("pump powers must be > 0")
    pts = sweep_power(sc, grid, seed=seed, duration_s=args.duration, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "csv":
        (out / "power.csv").write_text(rate_points_csv(pts), encoding="utf-8")
        files = ["power.csv"]
    else:
        _dump(out / "power.json", [vars(p) for p in pts])
        files = ["power.json"]
    _dump(out / "manifest.json", _manifest("sweep-power", sc, seed, files + ["manifest.json"]))
    print(f"wrote {files[0]} ({len(pts)} points)")
    return 0


def cmd_oracle_check(args) -> int:
    deltas = _floats(args.deltas) or [0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4]
    if args.pulses > 20:
        raise UsageError("oracle check is limited to 20 pulses")
    seed = 0 if args.seed is None else args.seed
    res = oracle_check(args.pulses, deltas, args.samples, seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {"n_pulses": args.pulses, "samples": args.samples, "seed": seed,
              "passed": all(r.passed for r in res), "settings": [vars(r) for r in res]}
    _dump(out / "oracle.json", report)
    if args.format == "csv":
        for i, d in enumerate(deltas):
            (out / f"oracle_{i}.csv").write_text(amplitude_oracle(args.pulses, d).to_csv(), encoding="utf-8")
    for r in res:
        print(f"delta={r.delta:.4f} chi2={r.chi2:.1f}/{r.dof} p={r.p_value:.3f} "
              f"{'pass' if r.passed else 'FAIL'}")
    return 0 if report["passed"] else 1


def cmd_report(args) -> int:
    sc, seed = _scenario(args)
    sc = _with_duration(sc, args.duration)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if sc.topology == "two_receiver":
        a, b = distribute_and_detect(sc.run, sc.alice, sc.bob)
        blocks = sift(a, b, sc.analysis.window_ps, sc.run.units.bin_period_ps,
                      alice_channels=[d.id for d in sc.alice.detectors],
                      bob_channels=[d.id for d in sc.bob.detectors])
        files = []
        for blk in blocks:
            for party, bits in (("alice", blk.alice_bits), ("bob", blk.bob_bits)):
                name = f"{party}_{blk.basis}.bits"
                write_bits(out / name, bits)
                files.append(name)
        rep = qkd_report(blocks)
        _dump(out / "qkd.json", rep)
        files.append("qkd.json")
        print(f"qber_time={rep['qber_time']} qber_phase={rep['qber_phase']} "
              f"key_fraction={rep['key_fraction']}")
    else:
        res = simulate_scenario(sc)
        hist, summary = analyze_streams(res.tags, sc.analysis, res.tick_ps, sc.run.units.bin_period_ps)
        files = _write_analysis(out, hist, summary, args.format)
        print(json.dumps(_clean(summary.get("rates", {})), sort_keys=True))
    _dump(out / "manifest.json", _manifest("report", sc, seed, files + ["manifest.json"]))
    return 0


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help=f"preset name ({', '.join(sorted(PRESETS))}) or a "
                        "config name in $TIMEBIN_CONFIG_DIR")
    common.add_argument("--config", help="YAML/JSON config file or a manifest.json to replay")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")

    p = argparse.ArgumentParser(prog="timebin", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a scenario into tag files")
    s.add_argument("--duration", type=float, help="simulated time in seconds")
    s.add_argument("--tags", choices=("ttg1", "csv"), default="ttg1", help="tag file encoding")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("analyze", parents=[common], help="analyze TTG1 or CSV tag files")
    s.add_argument("files", nargs="*")
    s.add_argument("--tick-ps", type=float, default=1.0, help="tick resolution of CSV inputs")
    s.add_argument("--duration", type=float, help="measurement time in seconds (default: tag span)")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("sweep-phase", parents=[common], help="fringe sweep over heater power")
    s.add_argument("--grid", help="comma-separated heater powers in mW")
    s.add_argument("--duration", type=float, help="seconds per point")
    s.set_defaults(func=cmd_sweep_phase)

    s = sub.add_parser("sweep-power", parents=[common], help="rates and CAR versus pump power")
    s.add_argument("--grid", help="comma-separated pump powers in mW")
    s.add_argument("--duration", type=float, help="seconds per point")
    s.set_defaults(func=cmd_sweep_power)

    s = sub.add_parser("oracle-check", parents=[common], help="Monte Carlo vs exact amplitudes")
    s.add_argument("--pulses", type=int, default=10)
    s.add_argument("--deltas", help="comma-separated MZI phases in rad")
    s.add_argument("--samples", type=int, default=1_000_000)
    s.set_defaults(func=cmd_oracle_check)

    s = sub.add_parser("report", parents=[common], help="run a scenario and write its summary "
                       "(sifted keys and QBER for two_receiver)")
    s.add_argument("--duration", type=float, help="simulated time in seconds")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (ConfigError, UnknownScenario, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TagFileError, OSError, ValueError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

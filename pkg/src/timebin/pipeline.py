"""End-to-end single-receiver runs, sweeps and the Monte Carlo / oracle comparison.

A single-receiver run follows the bench layout: source -> fiber link -> MZI
(modeled output port only) -> balanced or polarizing splitter -> two
detectors. Work is split in pulse blocks, each with its own RNG substream, so
a run is reproducible from ``(config, seed)`` alone.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .analysis import (DelayHistogram, FringeAnalysis, analyze_fringe, build_delay_histogram,
                       compute_car, rate_report, window_counts)
from .channel import apply_link, inject_background
from .config import AnalysisSettings, MziConfig, RunConfig, Scenario
from .detector import detect
from .optics import DISCARDED, splitter_route, transform_pairs
from .oracle import DETECTORS, amplitude_oracle
from .source import PairBatch, emit_pairs, sample_spectrum
from .tagio import TagStream
from .units import db_to_linear, mu_from_power, rng_substream

# detector substreams live far above any pulse-block index
DETECT_STREAM = 1 << 40
_POINT_KEY = 0x5EED


def block_pulses(mu: float) -> int:
    """Pulses per work block: about 1e6 expected pairs, within [2**20, 2**44]."""
    target = 1e6 / mu if mu > 0 else float(1 << 44)
    return int(min(max(target, 1 << 20), 1 << 44))


def point_seed(seed: int, index: int) -> int:
    """Seed of sweep point ``index``, derived from the master seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(_POINT_KEY, int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


def pulses_for(run: RunConfig, duration_s: float) -> int:
    return int(round(duration_s * run.units.rep_rate_Hz))


@dataclass
class SimulationResult:
    tags: dict  # channel -> sorted uint64 ticks
    duration_ps: float
    tick_ps: float
    stats: dict = field(default_factory=dict)

    @property
    def duration_s(self) -> float:
        return self.duration_ps * 1e-12

    def stream(self, channel_count: int | None = None) -> TagStream:
        return TagStream.merge(self.tags, self.tick_ps, channel_count)


def photon_keep(run: RunConfig, mzi_in_path: bool = True) -> float:
    """Survival of one photon through coupling, link (with DCM) and MZI insertion."""
    loss = run.source.coupling_loss_dB + run.link.total_loss_dB
    if mzi_in_path:
        loss += run.mzi.insertion_loss_dB
    return float(db_to_linear(loss))


def simulate_single(run: RunConfig, *, splitter: str = "balanced_50_50", mzi_in_path: bool = True,
                    delta: float | None = None) -> SimulationResult:
    """Simulate ``run.pulse_count`` pump pulses into the first two detectors."""
    if len(run.detectors) < 2:
        raise ValueError("a single-receiver run needs two detectors")
    T = run.units.bin_period_ps
    N = run.pulse_count
    duration = N * T
    det_a, det_b = run.detectors[0].id, run.detectors[1].id
    keep = photon_keep(run, mzi_in_path)
    arrivals: dict[int, list] = {det_a: [], det_b: []}
    n_pairs = 0

    step = block_pulses(run.mu)
    for b, lo in enumerate(range(0, N, step)):
        rng = rng_substream(run.seed, b)
        batch = emit_pairs((lo, min(lo + step, N)), run.mu, rng, bin_period_ps=T,
                           pulse_width_ps=run.source.pulse_width_ps,
                           pump_phase_step=run.pump_phase_step, keep=(keep, keep))
        if len(batch) == 0:
            continue
        n_pairs += len(batch)
        batch = sample_spectrum(batch, run.source.spectrum, rng)
        batch = apply_link(batch, run.link, rng, apply_loss=False)
        if mzi_in_path:
            paths = transform_pairs(batch, run.mzi, rng, pump_phase_step=run.pump_phase_step,
                                    train=(0, N), apply_loss=False, delta=delta)
            ts, ti = paths.signal_time, paths.idler_time
            ok_s = paths.signal_alive & (paths.signal_port == 0)
            ok_i = paths.idler_alive & (paths.idler_port == 0)
        else:
            ts, ti = batch.time_signal, batch.time_idler
            ok_s, ok_i = batch.alive_signal, batch.alive_idler
        t = np.concatenate([ts[ok_s], ti[ok_i]])
        is_signal = np.concatenate([np.ones(int(ok_s.sum()), bool), np.zeros(int(ok_i.sum()), bool)])
        dest = splitter_route(is_signal, splitter, rng, (det_a, det_b))
        for ch in (det_a, det_b):
            arrivals[ch].append(t[dest == ch])

    tags = {}
    photons = {}
    for ch in (det_a, det_b):
        rng = rng_substream(run.seed, DETECT_STREAM + ch)
        bg = inject_background(duration, run.link.background_rate_Hz, rng)
        t = np.sort(np.concatenate(arrivals[ch] + [bg]))
        photons[ch] = int(t.size)
        tags[ch] = detect(t, run.detector(ch), rng, tick_ps=run.units.tick_ps, duration_ps=duration)
    return SimulationResult(tags, duration, run.units.tick_ps,
                            {"pairs_with_a_surviving_photon": n_pairs, "photons_at_detector": photons})


def simulate_scenario(scenario: Scenario, *, seed: int | None = None, delta: float | None = None,
                      pulse_count: int | None = None) -> SimulationResult:
    """Single-receiver run of a scenario (``two_receiver`` lives in :mod:`timebin.qkd`)."""
    if scenario.topology == "two_receiver":
        raise ValueError("use timebin.qkd.distribute_and_detect for two_receiver scenarios")
    run = scenario.run
    if seed is not None:
        run = replace(run, seed=seed)
    if pulse_count is not None:
        run = replace(run, pulse_count=pulse_count)
    return simulate_single(run, splitter=scenario.splitter, mzi_in_path=scenario.mzi_in_path,
                           delta=delta)


# --- per-point measurement -----------------------------------------------------

@dataclass
class PointMetrics:
    center: int
    side_minus: int
    side_plus: int
    accidentals: float  # mean counts per window
    accidental_counts: list
    car: float
    histogram: DelayHistogram

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("histogram")
        return d


def measure_point(tags_a, tags_b, settings: AnalysisSettings, bin_period_ps: float,
                  tick_ps: float = 1.0) -> PointMetrics:
    """Center / side peak areas and accidentals from two tag streams."""
    w = settings.window_ps
    reach = max(settings.max_delay_ps,
                max((abs(o) for o in settings.accidental_offsets_ps), default=0.0) + w,
                bin_period_ps + w)
    hist = build_delay_histogram(tags_a, tags_b, settings.bin_width_ps, reach, tick_ps=tick_ps)
    car = compute_car(hist, w, 0.0, settings.accidental_offsets_ps)
    return PointMetrics(car.peak_counts, window_counts(hist, -bin_period_ps, w),
                        window_counts(hist, bin_period_ps, w), car.mean_accidentals,
                        car.accidental_counts, car.car, hist)


def measure_result(result: SimulationResult, settings: AnalysisSettings,
                   bin_period_ps: float) -> PointMetrics:
    a, b = sorted(result.tags)[:2]
    return measure_point(result.tags[a], result.tags[b], settings, bin_period_ps, result.tick_ps)


# --- phase sweep ---------------------------------------------------------------

@dataclass
class FringeSweep:
    heater_mW: np.ndarray
    phase_rad: np.ndarray
    points: list  # PointMetrics per grid point
    analysis: FringeAnalysis
    duration_s: float

    @property
    def center(self) -> np.ndarray:
        return np.array([p.center for p in self.points], dtype=float)

    @property
    def side(self) -> np.ndarray:
        return np.array([(p.side_minus + p.side_plus) / 2 for p in self.points], dtype=float)

    def to_csv(self) -> str:
        rows = ["heater_mW,phase_rad,center_counts,side_counts"]
        for h, ph, p in zip(self.heater_mW, self.phase_rad, self.points):
            rows.append(f"{h:.6g},{ph:.9g},{p.center},{(p.side_minus + p.side_plus) / 2:.6g}")
        return "\n".join(rows) + "\n"

    def summary(self) -> dict:
        return {
            "point_duration_s": self.duration_s,
            "points": [dict(heater_mW=float(h), phase_rad=float(ph), **p.to_dict())
                       for h, ph, p in zip(self.heater_mW, self.phase_rad, self.points)],
            **self.analysis.to_dict(),
        }


def _point_job(args):
    scenario, seed, delta, n_pulses = args
    res = simulate_scenario(scenario, seed=seed, delta=delta, pulse_count=n_pulses)
    return measure_result(res, scenario.analysis, scenario.run.units.bin_period_ps)


def _map(jobs, threads: int):
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_point_job, jobs))
    return [_point_job(j) for j in jobs]


def sweep_phase(scenario: Scenario, *, seed: int | None = None, heater_grid_mW=None,
                duration_s: float | None = None, threads: int = 1) -> FringeSweep:
    """One simulation per heater setting, then a fringe fit of the center peak.

    With ``analysis.fixed_frequency`` the fit frequency in heater units is
    ``2 * phase_per_heater_mW`` (the center peak follows cos 2 delta).
    """
    settings = scenario.analysis
    grid = np.asarray(settings.heater_grid_mW if heater_grid_mW is None else heater_grid_mW, float)
    if grid.size < 5:
        raise ValueError("a phase sweep needs at least 5 grid points")
    duration_s = settings.point_duration_s if duration_s is None else duration_s
    seed = scenario.run.seed if seed is None else seed
    mzi = scenario.run.mzi
    phases = mzi.phase_from_heater(grid)
    n_pulses = pulses_for(scenario.run, duration_s)
    jobs = [(scenario, point_seed(seed, i), float(ph), n_pulses) for i, ph in enumerate(phases)]
    points = _map(jobs, threads)
    freq = 2.0 * mzi.phase_per_heater_mW if settings.fixed_frequency else None
    fa = analyze_fringe(grid, [p.center for p in points], [p.side_minus for p in points],
                        [p.side_plus for p in points], [p.accidentals for p in points],
                        fixed_frequency=freq)
    return FringeSweep(grid, phases, points, fa, duration_s)


# --- power / mu sweep ----------------------------------------------------------

@dataclass
class RatePoint:
    power_mW: float | None
    mu: float
    singles_Hz: list
    coincidences_Hz: float
    accidentals_Hz: float
    car: float
    car_err: float
    car_lower_bound: float
    coincidence_counts: int
    accidental_counts: list


def _rate_job(args):
    scenario, seed, mu, power, n_pulses = args
    run = replace(scenario.run, mu=mu, seed=seed, pulse_count=n_pulses)
    res = simulate_single(run, splitter=scenario.splitter, mzi_in_path=scenario.mzi_in_path)
    s = scenario.analysis
    a, b = sorted(res.tags)[:2]
    rep = rate_report(res.tags, res.duration_s, pair=(a, b), window_ps=s.window_ps,
                      accidental_offsets=s.accidental_offsets_ps, tick_ps=res.tick_ps,
                      bin_width_ps=s.bin_width_ps)
    pm = measure_result(res, s, run.units.bin_period_ps)
    car = compute_car(pm.histogram, s.window_ps, 0.0, s.accidental_offsets_ps)
    return RatePoint(power, mu, [rep.singles_Hz[a], rep.singles_Hz[b]], rep.coincidences_Hz,
                     rep.accidentals_Hz, car.car, car.car_err, car.lower_bound,
                     car.peak_counts, car.accidental_counts)


def sweep_mu(scenario: Scenario, mu_grid, *, seed: int | None = None,
             duration_s=None, powers=None, threads: int = 1) -> list[RatePoint]:
    """Rates and CAR for each mean pair number. ``duration_s`` may be per point."""
    seed = scenario.run.seed if seed is None else seed
    mu_grid = list(mu_grid)
    if duration_s is None:
        duration_s = scenario.analysis.point_duration_s
    durations = np.broadcast_to(np.asarray(duration_s, dtype=float), (len(mu_grid),))
    powers = [None] * len(mu_grid) if powers is None else list(powers)
    jobs = [(scenario, point_seed(seed, i), float(mu), p, pulses_for(scenario.run, d))
            for i, (mu, p, d) in enumerate(zip(mu_grid, powers, durations))]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_rate_job, jobs))
    return [_rate_job(j) for j in jobs]


def sweep_power(scenario: Scenario, power_grid_mW=None, *, seed: int | None = None,
                duration_s=None, threads: int = 1) -> list[RatePoint]:
    """Pump power sweep; mu per point from :func:`mu_from_power`."""
    s = scenario.analysis
    powers = list(s.power_grid_mW if power_grid_mW is None else power_grid_mW)
    if any(not p > 0 for p in powers):
        raise ValueError("pump powers must be > 0")
    rep = scenario.run.units.rep_rate_Hz
    mus = [mu_from_power(p, rep, s.brightness_Hz_per_mW, s.mu_calibration) for p in powers]
    return sweep_mu(scenario, mus, seed=seed, duration_s=duration_s, powers=powers, threads=threads)


def rate_points_csv(points: list[RatePoint]) -> str:
    rows = ["power_mW,mu,singles_A_Hz,singles_B_Hz,coincidences_Hz,accidentals_Hz,car,car_err"]
    for p in points:
        pw = "" if p.power_mW is None else f"{p.power_mW:.6g}"
        rows.append(f"{pw},{p.mu:.6g},{p.singles_Hz[0]:.6g},{p.singles_Hz[1]:.6g},"
                    f"{p.coincidences_Hz:.6g},{p.accidentals_Hz:.6g},{p.car:.6g},{p.car_err:.6g}")
    return "\n".join(rows) + "\n"


def loglog_slope(x, y) -> tuple[float, float]:
    """Least-squares slope (and its standard error) of log y against log x."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    res = stats.linregress(lx, ly)
    return float(res.slope), float(res.stderr)


def car_plateau(mu, car, *, flat_slope: float = -0.5) -> bool:
    """True when CAR stops following 1/mu at the low-mu end.

    The log-log slope between the two lowest-mu points is compared with
    ``flat_slope``; a pure 1/mu law gives -1.
    """
    order = np.argsort(mu)
    m = np.asarray(mu, float)[order][:2]
    c = np.asarray(car, float)[order][:2]
    if np.any(~np.isfinite(c)) or np.any(c <= 0):
        return False
    return float(np.log(c[1] / c[0]) / np.log(m[1] / m[0])) > flat_slope


# --- Monte Carlo vs amplitude oracle -------------------------------------------

@dataclass
class OracleComparison:
    n_pulses: int
    delta: float
    samples: int
    chi2: float
    dof: int
    p_value: float
    forbidden_hits: int  # samples in cells the oracle gives zero probability
    passed: bool


def sample_postselected(n_pulses: int, delta: float, samples: int, rng: np.random.Generator, *,
                        visibility: float = 1.0) -> dict:
    """Monte Carlo counts per (signal_bin, idler_bin, det_s, det_i) after post-selection.

    Pairs come from a uniformly chosen pulse of the train, pass the MZI and
    are kept when both photons leave on the modeled port; each photon then
    goes to detector A or B at random.
    """
    mzi = MziConfig(intrinsic_visibility=visibility)
    counts: dict = {}
    got = 0
    while got < samples:
        n = max(2 * (samples - got), 1024) * 4
        pulse = rng.integers(0, n_pulses, size=n, dtype=np.int64)
        z = np.zeros(n)
        batch = PairBatch(pulse, pulse * 1000.0, z, z.copy(), z.copy(), np.ones(n, bool), np.ones(n, bool))
        paths = transform_pairs(batch, mzi, rng, train=(0, n_pulses), apply_loss=False, delta=delta)
        sel = np.flatnonzero(paths.kind != DISCARDED)[: samples - got]
        got += sel.size
        ds = rng.integers(0, 2, size=sel.size)
        di = rng.integers(0, 2, size=sel.size)
        key = ((paths.signal_bin[sel] * (n_pulses + 1) + paths.idler_bin[sel]) * 4 + ds * 2 + di)
        u, c = np.unique(key, return_counts=True)
        for k, v in zip(u.tolist(), c.tolist()):
            counts[k] = counts.get(k, 0) + v
    out = {}
    for k, v in counts.items():
        bins, dets = divmod(k, 4)
        s, i = divmod(bins, n_pulses + 1)
        out[(s, i, DETECTORS[dets // 2], DETECTORS[dets % 2])] = v
    return out


def oracle_check(n_pulses: int, deltas, samples: int = 1_000_000, *, seed: int = 0,
                 alpha: float = 0.01) -> list[OracleComparison]:
    """Chi-square comparison of Monte Carlo outcome counts with the amplitude oracle."""
    results = []
    for idx, delta in enumerate(deltas):
        probs = amplitude_oracle(n_pulses, delta).probabilities()
        mc = sample_postselected(n_pulses, delta, samples, rng_substream(seed, idx))
        keys = [k for k, p in probs.items() if p > 1e-15]
        forbidden = sum(v for k, v in mc.items() if probs.get(k, 0.0) <= 1e-15)
        obs = np.array([mc.get(k, 0) for k in keys], dtype=float)
        exp = np.array([probs[k] for k in keys]) * samples
        exp *= obs.sum() / exp.sum()
        chi2, p = stats.chisquare(obs, exp)
        results.append(OracleComparison(n_pulses, float(delta), samples, float(chi2), len(keys) - 1,
                                        float(p), int(forbidden), bool(p > alpha and forbidden == 0)))
    return results


def center_side_ratio(n_pulses: int, delta: float = 0.0, samples: int = 200_000, *,
                      seed: int = 0, bins: str = "interior") -> float:
    """Monte Carlo mean counts per center bin over mean counts per side bin.

    ``bins`` selects the interior center bins or the two boundary ones (first
    and last output bin). Side bins ``(j, j+1)`` hold one per pulse.
    """
    if bins not in ("interior", "boundary"):
        raise ValueError("bins must be 'interior' or 'boundary'")
    mc = sample_postselected(n_pulses, delta, samples, rng_substream(seed, 0))
    center = side = 0
    for (s, i, _, _), v in mc.items():
        if s == i and (s in (0, n_pulses)) == (bins == "boundary"):
            center += v
        elif i == s + 1:
            side += v
    n_center = 2 if bins == "boundary" else n_pulses - 1
    if side == 0 or n_center <= 0:
        return math.nan
    return (center / n_center) / (side / n_pulses)

"""Single-photon detector model: efficiency, dark counts, jitter, ticks, dead time."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .channel import inject_background
from .config import DetectorConfig

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class TimeTag:
    ticks: int
    channel: int


@nb.njit(cache=True)
def _dead_time_filter(ticks, dead_ticks):
    keep = np.zeros(ticks.shape[0], dtype=np.bool_)
    if ticks.shape[0] == 0:
        return keep
    keep[0] = True
    free_at = ticks[0] + dead_ticks
    for k in range(1, ticks.shape[0]):
        if ticks[k] >= free_at:
            keep[k] = True
            free_at = ticks[k] + dead_ticks
    return keep


def dead_time_filter(ticks: np.ndarray, dead_ticks: int) -> np.ndarray:
    """Non-paralyzable dead time on sorted ticks: a kept tag blocks the next
    ``dead_ticks`` ticks; blocked events are dropped and do not extend it."""
    ticks = np.ascontiguousarray(ticks, dtype=np.uint64)
    if dead_ticks <= 0:
        return ticks
    return ticks[_dead_time_filter(ticks, np.uint64(dead_ticks))]


def detect(arrivals_ps, cfg: DetectorConfig, rng: np.random.Generator, *,
           tick_ps: float = 1.0, duration_ps: float | None = None,
           start_ps: float = 0.0) -> np.ndarray:
    """Turn sorted photon arrival times (ps) into sorted tagger ticks.

    Order of operations: efficiency thinning, dark counts merged over
    ``[start_ps, start_ps + duration_ps)``, Gaussian jitter, quantization to
    ticks, non-paralyzable dead time.
    """
    t = np.asarray(arrivals_ps, dtype=float)
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise ValueError("photon arrivals must be sorted in time")
    if cfg.efficiency < 1.0:
        t = t[rng.random(t.size) < cfg.efficiency]
    if cfg.dark_rate_Hz > 0:
        if duration_ps is None:
            duration_ps = float(t[-1] - start_ps) if t.size else 0.0
        t = np.concatenate([t, inject_background(duration_ps, cfg.dark_rate_Hz, rng, start_ps)])
    if cfg.jitter_fwhm_ps > 0:
        t = t + rng.normal(0.0, cfg.jitter_fwhm_ps / FWHM_PER_SIGMA, size=t.size)
    ticks = np.floor(t / tick_ps + 0.5)
    ticks = np.sort(np.clip(ticks, 0, None)).astype(np.uint64)
    dead_ticks = int(round(cfg.dead_time_ns * 1000.0 / tick_ps))
    return dead_time_filter(ticks, dead_ticks)


def expected_observed_rate(input_rate_Hz, cfg: DetectorConfig):
    """Closed-form non-paralyzable count rate for a Poisson input."""
    r_eff = cfg.efficiency * np.asarray(input_rate_Hz, dtype=float)
    tau = cfg.dead_time_ns * 1e-9
    return r_eff / (1.0 + r_eff * tau)


def saturation_curve(input_rates_Hz, cfg: DetectorConfig, rng: np.random.Generator, *,
                     duration_s: float = 1.0) -> list[dict]:
    """Simulated detected rate for a sweep of Poisson photon rates.

    Dark counts are left out so the table isolates the dead-time response.
    """
    quiet = DetectorConfig(id=cfg.id, efficiency=cfg.efficiency, jitter_fwhm_ps=cfg.jitter_fwhm_ps,
                           dead_time_ns=cfg.dead_time_ns, dark_rate_Hz=0.0)
    duration_ps = duration_s * 1e12
    rows = []
    for rate in input_rates_Hz:
        arrivals = inject_background(duration_ps, rate, rng)
        tags = detect(arrivals, quiet, rng, duration_ps=duration_ps)
        observed = tags.size / duration_s
        rows.append({
            "input_rate_Hz": float(rate),
            "linear_rate_Hz": float(cfg.efficiency * rate),
            "observed_rate_Hz": observed,
            "observed_err_Hz": math.sqrt(tags.size) / duration_s,
            "model_rate_Hz": float(expected_observed_rate(rate, cfg)),
        })
    return rows

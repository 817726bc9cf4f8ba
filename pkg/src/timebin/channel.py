"""Fiber link: attenuation, chromatic dispersion, DCM, background light."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .config import LinkConfig
from .units import db_to_linear


def broadening_estimate(D_ps_per_nm_km: float, bandwidth_nm: float, length_km: float) -> float:
    """Temporal spread (ps) of a pulse with the given optical bandwidth."""
    for name, v in (("D", D_ps_per_nm_km), ("bandwidth_nm", bandwidth_nm), ("length_km", length_km)):
        if v < 0:
            raise ValueError(f"{name} must be >= 0")
    return D_ps_per_nm_km * bandwidth_nm * length_km


def link_survival(link: LinkConfig) -> float:
    return float(db_to_linear(link.total_loss_dB))


def dispersion_shift(dlambda_nm, link: LinkConfig):
    """Arrival-time shift (ps) for a wavelength offset, after DCM compensation."""
    return link.residual_dispersion_ps_per_nm * np.asarray(dlambda_nm, dtype=float)


def apply_link(batch, link: LinkConfig, rng: np.random.Generator, *, apply_loss: bool = True,
               photons: str = "both"):
    """Propagate the photons of ``batch`` through ``link``.

    ``photons`` selects which photons travel the link ("both", "signal" or
    "idler"); the other ones are left untouched. Lost photons are flagged
    dead, pairs keep their pulse index and wavelength labels. Pair order is
    unchanged; photon streams are time-sorted when they are merged for
    detection.
    """
    if photons not in ("both", "signal", "idler"):
        raise ValueError(f"photons must be both, signal or idler, got {photons!r}")
    n = len(batch)
    surv = link_survival(link)
    changes = {}
    if photons in ("both", "signal"):
        alive = batch.alive_signal
        if apply_loss:
            alive = alive & (rng.random(n) < surv)
        changes["alive_signal"] = alive
        changes["time_signal"] = batch.time_signal + dispersion_shift(batch.dlambda_signal, link)
    if photons in ("both", "idler"):
        alive = batch.alive_idler
        if apply_loss:
            alive = alive & (rng.random(n) < surv)
        changes["alive_idler"] = alive
        changes["time_idler"] = batch.time_idler + dispersion_shift(batch.dlambda_idler, link)
    return replace(batch, **changes)


def inject_background(duration_ps: float, rate_Hz: float, rng: np.random.Generator,
                      start_ps: float = 0.0) -> np.ndarray:
    """Sorted arrival times (ps) of a homogeneous Poisson background."""
    if rate_Hz < 0:
        raise ValueError("rate_Hz must be >= 0")
    lam = rate_Hz * duration_ps * 1e-12
    k = int(rng.poisson(lam)) if lam > 0 else 0
    return np.sort(start_ps + rng.uniform(0.0, duration_ps, size=k))

"""Pulsed SPDC pair emission: Poisson pair numbers and correlated spectra."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from .config import SpectrumConfig, check_mu


@dataclass(frozen=True)
class PairEvent:
    """A single signal/idler pair, mostly for inspection and tests."""

    origin_pulse: int
    emission_time: float  # ps
    dlambda_signal: float  # nm, offset from the spectrum center
    dlambda_idler: float
    pump_phase: float  # rad


@dataclass
class PairBatch:
    """Struct-of-arrays container for many pairs.

    ``alive_signal`` / ``alive_idler`` flag photons that survived every
    pure-loss stage folded in at emission (see ``emit_pairs(keep=...)``).
    """

    pulse: np.ndarray
    emission_time: np.ndarray
    dlambda_signal: np.ndarray
    dlambda_idler: np.ndarray
    pump_phase: np.ndarray
    alive_signal: np.ndarray
    alive_idler: np.ndarray
    # per-photon times (ps); start at emission_time, shifted by the channel
    time_signal: np.ndarray | None = None
    time_idler: np.ndarray | None = None

    def __post_init__(self):
        if self.time_signal is None:
            self.time_signal = self.emission_time.copy()
        if self.time_idler is None:
            self.time_idler = self.emission_time.copy()

    def __len__(self):
        return len(self.pulse)

    def __getitem__(self, idx) -> PairEvent:
        return PairEvent(int(self.pulse[idx]), float(self.emission_time[idx]),
                         float(self.dlambda_signal[idx]), float(self.dlambda_idler[idx]),
                         float(self.pump_phase[idx]))

    def events(self) -> list[PairEvent]:
        return [self[i] for i in range(len(self))]

    def select(self, mask) -> "PairBatch":
        return PairBatch(*(getattr(self, f)[mask] for f in _FIELDS))

    @classmethod
    def from_events(cls, events) -> "PairBatch":
        events = list(events)
        n = len(events)
        return cls(
            np.array([e.origin_pulse for e in events], dtype=np.int64),
            np.array([e.emission_time for e in events], dtype=float),
            np.array([e.dlambda_signal for e in events], dtype=float),
            np.array([e.dlambda_idler for e in events], dtype=float),
            np.array([e.pump_phase for e in events], dtype=float),
            np.ones(n, dtype=bool),
            np.ones(n, dtype=bool),
        )


_FIELDS = ("pulse", "emission_time", "dlambda_signal", "dlambda_idler", "pump_phase",
           "alive_signal", "alive_idler", "time_signal", "time_idler")


def emit_pairs(pulse_range, mu: float, rng: np.random.Generator, *,
               bin_period_ps: float = 1000.0, pulse_width_ps: float = 150.0,
               pump_phase_step: float = 0.0, keep: tuple[float, float] = (1.0, 1.0)) -> PairBatch:
    """Draw the pairs emitted by pump pulses ``pulse_range``.

    Each pulse emits Poisson(mu) pairs. Emission times are uniform over the
    pump pulse width and the pump phase of pulse j is ``j * pump_phase_step``.

    ``keep = (p_signal, p_idler)`` folds independent per-photon survival into
    the draw: pairs in which both photons would be lost are never created.
    Per-pulse counts of each survival class are independent Poisson variables
    (Poisson thinning), so the output has exactly the distribution of
    emitting everything and discarding losses afterwards.
    """
    check_mu(mu)
    start, stop = (pulse_range.start, pulse_range.stop) if isinstance(pulse_range, range) else pulse_range
    n_pulses = max(int(stop) - int(start), 0)
    ps, pi = keep
    classes = ((ps * pi, True, True), (ps * (1 - pi), True, False), ((1 - ps) * pi, False, True))
    pulses, a_s, a_i = [], [], []
    for q, s, i in classes:
        lam = mu * q * n_pulses
        k = int(rng.poisson(lam)) if lam > 0 else 0
        pulses.append(rng.integers(start, stop, size=k, dtype=np.int64) if k else np.empty(0, np.int64))
        a_s.append(np.full(k, s))
        a_i.append(np.full(k, i))
    pulse = np.concatenate(pulses)
    order = np.argsort(pulse, kind="stable")
    pulse = pulse[order]
    n = len(pulse)
    t = pulse * float(bin_period_ps) + rng.uniform(0.0, pulse_width_ps, size=n)
    zeros = np.zeros(n)
    return PairBatch(pulse, t, zeros, zeros.copy(), pulse * pump_phase_step,
                     np.concatenate(a_s)[order], np.concatenate(a_i)[order])


def sample_spectrum(batch: PairBatch, spectrum: SpectrumConfig, rng: np.random.Generator) -> PairBatch:
    """Attach Gaussian wavelength offsets with the configured correlation.

    Both marginals are N(0, sigma) whatever the correlation; correlation -1
    gives ``dlambda_idler == -dlambda_signal`` exactly.
    """
    n = len(batch)
    sigma = spectrum.sigma_nm
    c = spectrum.correlation
    dl_s = sigma * rng.standard_normal(n)
    dl_i = c * dl_s
    if c > -1.0:
        dl_i = dl_i + np.sqrt(1.0 - c * c) * sigma * rng.standard_normal(n)
    return replace(batch, dlambda_signal=dl_s, dlambda_idler=dl_i)


@dataclass
class SpectrumHistogram:
    lambda_nm: np.ndarray  # bin centers
    counts: np.ndarray
    bin_width_nm: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda_nm", "count"])
        for lam, c in zip(self.lambda_nm, self.counts):
            w.writerow([f"{lam:.6f}", int(c)])
        return buf.getvalue()

    def fwhm(self) -> float:
        from .analysis import half_max_width
        return half_max_width(self.lambda_nm, self.counts)


def spectrum_histogram(events, bin_width_nm: float, center_nm: float = 1554.0) -> SpectrumHistogram:
    """Histogram of signal wavelengths, bins centered on ``center_nm``.

    ``events`` is a PairBatch, a list of PairEvent, or an array of offsets (nm).
    """
    if not bin_width_nm > 0:
        raise ValueError("bin_width_nm must be > 0")
    if isinstance(events, PairBatch):
        dl = events.dlambda_signal
    elif len(events) and isinstance(events[0], PairEvent):
        dl = np.array([e.dlambda_signal for e in events])
    else:
        dl = np.asarray(events, dtype=float)
    if dl.size == 0:
        return SpectrumHistogram(np.empty(0), np.empty(0, dtype=np.int64), bin_width_nm)
    idx = np.floor(dl / bin_width_nm + 0.5).astype(np.int64)
    lo, hi = idx.min(), idx.max()
    counts = np.bincount(idx - lo, minlength=hi - lo + 1)
    centers = center_nm + np.arange(lo, hi + 1) * bin_width_nm
    return SpectrumHistogram(centers, counts, bin_width_nm)

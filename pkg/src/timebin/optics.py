"""Unbalanced (delay-line) MZI and beamsplitter models.

Path labels: 0 = short arm, 1 = long arm. A photon from pulse j taking path
p leaves in output time bin ``j + p``. The modeled detection port of the
single-receiver MZI is port 0; port 1 is the unused output.

Two-photon interference happens only for same-path pairs landing in an
interior output bin k, where the short/short amplitude of pulse k and the
long/long amplitude of pulse k-1 are indistinguishable. Their relative
phase is ``2*delta + (phi_{k-1} - phi_k)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import MziConfig
from .units import db_to_linear

SIDE_MINUS, SIDE_PLUS, CENTER, DISCARDED = 0, 1, 2, 3
OUTCOME_NAMES = ("side_minus", "side_plus", "center", "discarded")


def pair_outcome_distribution(pump_phase_diff: float, delta: float, V0: float) -> dict[str, float]:
    """Outcome probabilities for a pair seen at the modeled MZI port.

    ``pump_phase_diff`` is the pump phase of the earlier pulse minus the
    later one (``phi_{k-1} - phi_k``).
    """
    if not 0.0 <= V0 <= 1.0:
        raise ValueError(f"V0 must lie in [0, 1], got {V0}")
    center = (1.0 + V0 * np.cos(2.0 * delta + pump_phase_diff)) / 4.0
    center = float(min(max(center, 0.0), 0.5))
    return {"side_minus": 0.25, "side_plus": 0.25, "center": center,
            "discarded": 0.5 - center}


@dataclass
class PhotonPaths:
    """Per-pair result of an MZI passage, arrays aligned with the input batch."""

    kind: np.ndarray  # outcome code per pair
    signal_bin: np.ndarray
    idler_bin: np.ndarray
    signal_time: np.ndarray  # ps, after the arm delay
    idler_time: np.ndarray
    signal_port: np.ndarray  # 0 = modeled output
    idler_port: np.ndarray
    signal_alive: np.ndarray
    idler_alive: np.ndarray


@dataclass(frozen=True)
class PathOutcome:
    kind: str
    signal_bin: int
    idler_bin: int


def _interior(bins, train):
    if train is None:
        return np.ones(len(bins), dtype=bool)
    start, stop = train
    return (bins >= start + 1) & (bins <= stop - 1)


def sample_paths(pulse, rng):
    path_s = rng.integers(0, 2, size=len(pulse), dtype=np.int64)
    path_i = rng.integers(0, 2, size=len(pulse), dtype=np.int64)
    return path_s, path_i


def same_path_phase(delta, pump_phase_step):
    """Interference phase of an interior center bin for a linear pump phase."""
    return 2.0 * delta - pump_phase_step


def transform_pairs(batch, mzi: MziConfig, rng: np.random.Generator, *,
                    pump_phase_step: float = 0.0, train=None, apply_loss: bool = True,
                    delta: float | None = None) -> PhotonPaths:
    """Send every pair of ``batch`` through one MZI (both photons, same device).

    Same-path pairs pick their output-port pattern with
    P(00) = P(11) = (1 + V cos theta) / 8 and P(01) = P(10) = (3 - V cos theta) / 8,
    split pairs pick ports independently. Each photon then sees port 0 with
    probability 1/2 whatever the phase, while the pairs with both photons on
    port 0 follow :func:`pair_outcome_distribution`. ``train = (start, stop)``
    marks the first and last output bins of a finite pulse train; there a
    same-path pair has no interference partner and its ports are independent.
    """
    delta = mzi.phase_delta if delta is None else delta
    n = len(batch)
    pulse = batch.pulse
    path_s, path_i = sample_paths(pulse, rng)
    bin_s = pulse + path_s
    bin_i = pulse + path_i
    same = path_s == path_i

    # no interference partner in the first/last output bin: ports independent
    same_int = same & _interior(bin_s, train)
    vc = mzi.intrinsic_visibility * np.cos(same_path_phase(delta, pump_phase_step))
    p00 = (1.0 + vc) / 8.0
    p01 = (3.0 - vc) / 8.0
    u = rng.random(n)
    # same-path: 00 | 01 | 10 | 11 laid out on [0, 1)
    port_s_same = np.where(u < p00 + p01, 0, 1)
    port_i_same = np.where((u < p00) | ((u >= p00 + p01) & (u < p00 + 2 * p01)), 0, 1)
    v = rng.integers(0, 2, size=(2, n))
    port_s = np.where(same_int, port_s_same, v[0])
    port_i = np.where(same_int, port_i_same, v[1])

    alive_s = batch.alive_signal.copy()
    alive_i = batch.alive_idler.copy()
    if apply_loss:
        t = float(db_to_linear(mzi.insertion_loss_dB))
        alive_s &= rng.random(n) < t
        alive_i &= rng.random(n) < t

    both = (port_s == 0) & (port_i == 0)
    kind = np.full(n, DISCARDED, dtype=np.int8)
    kind[both & same] = CENTER
    kind[both & (bin_s < bin_i)] = SIDE_MINUS
    kind[both & (bin_s > bin_i)] = SIDE_PLUS

    return PhotonPaths(
        kind=kind, signal_bin=bin_s, idler_bin=bin_i,
        signal_time=batch.time_signal + path_s * mzi.delay_ps,
        idler_time=batch.time_idler + path_i * mzi.delay_ps,
        signal_port=port_s, idler_port=port_i,
        signal_alive=alive_s, idler_alive=alive_i,
    )


def transform_pair(event, mzi: MziConfig, rng: np.random.Generator, *,
                   pump_phase_step: float = 0.0, apply_loss: bool = False) -> PathOutcome:
    """Single-pair convenience wrapper around :func:`transform_pairs`."""
    from .source import PairBatch

    out = transform_pairs(PairBatch.from_events([event]), mzi, rng,
                          pump_phase_step=pump_phase_step, apply_loss=apply_loss)
    alive = out.signal_alive[0] and out.idler_alive[0]
    kind = OUTCOME_NAMES[out.kind[0]] if alive else "discarded"
    return PathOutcome(kind, int(out.signal_bin[0]), int(out.idler_bin[0]))


def splitter_route(is_signal, kind: str, rng: np.random.Generator,
                   detectors: tuple[int, int] = (0, 1)) -> np.ndarray:
    """Detector id for each photon after the analysis beamsplitter.

    ``balanced_50_50`` sends each photon to either detector with probability
    1/2; ``polarizing`` sends signal photons to ``detectors[0]`` and idlers to
    ``detectors[1]``.
    """
    is_signal = np.asarray(is_signal, dtype=bool)
    a, b = detectors
    if kind == "balanced_50_50":
        return np.where(rng.random(is_signal.shape) < 0.5, a, b).astype(np.uint8)
    if kind == "polarizing":
        return np.where(is_signal, a, b).astype(np.uint8)
    raise ValueError(f"unknown splitter kind {kind!r}")


def classical_interference(sweep, visibility: float, I0: float = 1.0, *,
                           mzi: MziConfig | None = None) -> np.ndarray:
    """Single-arm classical fringe I0 * (1 + V cos delta) / 2.

    With ``mzi`` given, ``sweep`` is heater power in mW and is mapped to a
    phase through the MZI's thermal actuation map; otherwise it is delta (rad).
    """
    x = np.asarray(sweep, dtype=float)
    delta = mzi.phase_from_heater(x) if mzi is not None else x
    return I0 * (1.0 + visibility * np.cos(delta)) / 2.0

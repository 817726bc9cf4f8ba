"""Exact enumeration of post-selected two-photon amplitudes for short trains.

The train of ``n`` pulses carries one pair in an equal-weight superposition
over pulses (amplitude ``exp(i phi_j) / sqrt(n)``). Each photon takes the
short or long MZI arm with amplitude 1/sqrt(2) (long arm picks up
``exp(i delta)``), leaves on the modeled port, and is sent to detector A or B
with amplitude 1/sqrt(2). Amplitudes of indistinguishable outcomes (same output
bins and detectors) are added. An interior center bin receives two
contributions, short/short from pulse k and long/long from pulse k-1; they are
combined as the normalized two-term superposition ``(a_l + a_e) / sqrt(2)``,
so each interior center bin carries on average the weight of one same-path
term and the center/side peak ratio swings between 0 and 2. The first and last
output bins only ever hold one term.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass

import numpy as np

MAX_ORACLE_PULSES = 20
DETECTORS = ("A", "B")


@dataclass
class AmplitudeTable:
    n_pulses: int
    amplitudes: dict  # (signal_bin, idler_bin, det_signal, det_idler) -> complex

    def probabilities(self) -> dict:
        weights = {k: abs(a) ** 2 for k, a in self.amplitudes.items()}
        total = sum(weights.values())
        return {k: (w / total if total > 0 else 0.0) for k, w in weights.items()}

    def total_weight(self) -> float:
        return float(sum(abs(a) ** 2 for a in self.amplitudes.values()))

    def peak_probabilities(self) -> dict:
        """Probability summed over detectors, keyed by (signal_bin, idler_bin)."""
        out: dict = {}
        for (s, i, _, _), p in self.probabilities().items():
            out[(s, i)] = out.get((s, i), 0.0) + p
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["signal_bin", "idler_bin", "detA", "detB", "probability"])
        for (s, i, ds, di), p in sorted(self.probabilities().items()):
            w.writerow([s, i, ds, di, f"{p:.12g}"])
        return buf.getvalue()


def amplitude_oracle(n_pulses: int, delta: float, pump_phases=None,
                     include_boundary: bool = True) -> AmplitudeTable:
    """Amplitude table for an ``n_pulses`` train; see the module docstring.

    ``pump_phases`` defaults to all zeros. With ``include_boundary=False`` the
    outcomes in the first and last output bins are dropped.
    """
    if n_pulses > MAX_ORACLE_PULSES:
        raise MemoryError(f"exact enumeration limited to {MAX_ORACLE_PULSES} pulses, got {n_pulses}")
    if n_pulses < 1:
        raise ValueError("n_pulses must be >= 1")
    phases = np.zeros(n_pulses) if pump_phases is None else np.asarray(pump_phases, dtype=float)
    if len(phases) != n_pulses:
        raise ValueError("need one pump phase per pulse")

    c = 1.0 / math.sqrt(n_pulses)
    arm = (1.0 / math.sqrt(2.0), np.exp(1j * delta) / math.sqrt(2.0))
    det = 1.0 / math.sqrt(2.0)

    # per output (bins, detectors): list of contributing amplitudes
    terms: dict = {}
    for j in range(n_pulses):
        for ps, pi in itertools.product((0, 1), repeat=2):
            a_path = c * np.exp(1j * phases[j]) * arm[ps] * arm[pi]
            for ds, di in itertools.product(DETECTORS, repeat=2):
                key = (j + ps, j + pi, ds, di)
                terms.setdefault(key, []).append(a_path * det * det)

    amplitudes = {}
    for key, contribs in terms.items():
        if len(contribs) == 1:
            amp = contribs[0]
        else:
            amp = sum(contribs) / math.sqrt(len(contribs))
        if not include_boundary and (key[0] in (0, n_pulses) or key[1] in (0, n_pulses)):
            continue
        amplitudes[key] = complex(amp)
    return AmplitudeTable(n_pulses, amplitudes)

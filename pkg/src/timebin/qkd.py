"""Two-receiver time-bin QKD: distribution, sifting, QBER and key fraction.

Pairs are split deterministically at the source (type-II, polarizing
splitter): signal photons go to Alice, idlers to Bob. Each party has a link,
an MZI matched to the pulse period and one detector per MZI output
(detector index = bit value).

Sifting pairs Alice's and Bob's tags one-to-one and classifies each
coincidence by its delay in units of the bin period ``T``:

* ``d = 0`` (center peak) is the phase basis; the bit is the detector index.
* ``d = +-1`` (side peaks) is the time basis; Alice's bit is the parity of
  her output bin ``round(t / T)``, Bob's bit the parity of his bin plus one.
  A genuine pair always lands one bin apart, so the parities agree; only
  accidentals straddling a bin boundary produce errors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numba as nb
import numpy as np

from .channel import apply_link, inject_background
from .config import ConfigError, ReceiverConfig, RunConfig
from .detector import detect
from .optics import _interior, sample_paths, same_path_phase
from .source import emit_pairs, sample_spectrum
from .tagio import TagStream
from .units import db_to_linear, rng_substream

BASES = ("time", "phase")
_PARTY_STREAM = (1 << 40, (1 << 40) + 256)


def _check_receiver(run: RunConfig, rx: ReceiverConfig, who: str) -> None:
    if not math.isclose(rx.mzi.delay_ps, run.units.bin_period_ps):
        raise ConfigError(f"{who}.mzi.delay_ps", "must equal units.bin_period_ps")


def pair_visibility(run: RunConfig, alice: ReceiverConfig, bob: ReceiverConfig) -> float:
    """Two-photon visibility: the source-level V0 times both receivers' MZI factors."""
    return run.mzi.intrinsic_visibility * alice.mzi.intrinsic_visibility * bob.mzi.intrinsic_visibility


def distribute_and_detect(run: RunConfig, alice: ReceiverConfig, bob: ReceiverConfig, *,
                          delta_a: float | None = None, delta_b: float | None = None
                          ) -> tuple[TagStream, TagStream]:
    """Simulate the two-receiver layout; returns Alice's and Bob's tag streams.

    Same-path pairs in interior bins leave on equal MZI ports with
    probability ``(1 + V cos theta) / 2``, ``theta = delta_a + delta_b - step``
    where ``step`` is the pump phase increment per pulse. Split-path pairs
    and pairs in the first/last output bin pick ports independently.
    """
    _check_receiver(run, alice, "alice")
    _check_receiver(run, bob, "bob")
    from .pipeline import block_pulses  # local import, pipeline imports this module's siblings

    da = alice.mzi.phase_delta if delta_a is None else delta_a
    db = bob.mzi.phase_delta if delta_b is None else delta_b
    theta = same_path_phase((da + db) / 2.0, run.pump_phase_step)
    vis = pair_visibility(run, alice, bob)
    p_equal = (1.0 + vis * math.cos(theta)) / 2.0

    T = run.units.bin_period_ps
    N = run.pulse_count
    duration = N * T
    c = run.source.coupling_loss_dB
    keep = (float(db_to_linear(c + alice.link.total_loss_dB + alice.mzi.insertion_loss_dB)),
            float(db_to_linear(c + bob.link.total_loss_dB + bob.mzi.insertion_loss_dB)))
    ids = ([d.id for d in alice.detectors], [d.id for d in bob.detectors])
    arrivals = [{ch: [] for ch in ids[0]}, {ch: [] for ch in ids[1]}]

    step = block_pulses(run.mu)
    for b, lo in enumerate(range(0, N, step)):
        rng = rng_substream(run.seed, b)
        batch = emit_pairs((lo, min(lo + step, N)), run.mu, rng, bin_period_ps=T,
                           pulse_width_ps=run.source.pulse_width_ps,
                           pump_phase_step=run.pump_phase_step, keep=keep)
        n = len(batch)
        if n == 0:
            continue
        batch = sample_spectrum(batch, run.source.spectrum, rng)
        batch = apply_link(batch, alice.link, rng, apply_loss=False, photons="signal")
        batch = apply_link(batch, bob.link, rng, apply_loss=False, photons="idler")
        path_s, path_i = sample_paths(batch.pulse, rng)
        interfering = (path_s == path_i) & _interior(batch.pulse + path_s, (0, N))
        port_s = rng.integers(0, 2, size=n)
        indep = rng.integers(0, 2, size=n)
        equal = rng.random(n) < p_equal
        port_i = np.where(interfering, np.where(equal, port_s, 1 - port_s), indep)
        t_s = batch.time_signal + path_s * alice.mzi.delay_ps
        t_i = batch.time_idler + path_i * bob.mzi.delay_ps
        for party, (t, port, alive) in enumerate(((t_s, port_s, batch.alive_signal),
                                                  (t_i, port_i, batch.alive_idler))):
            for bit, ch in enumerate(ids[party]):
                arrivals[party][ch].append(t[alive & (port == bit)])

    streams = []
    for party, rx in enumerate((alice, bob)):
        tags = {}
        for det in rx.detectors:
            rng = rng_substream(run.seed, _PARTY_STREAM[party] + det.id)
            bg = inject_background(duration, rx.link.background_rate_Hz, rng)
            t = np.sort(np.concatenate(arrivals[party][det.id] + [bg]))
            tags[det.id] = detect(t, det, rng, tick_ps=run.units.tick_ps, duration_ps=duration)
        streams.append(TagStream.merge(tags, run.units.tick_ps, len(rx.detectors)))
    return streams[0], streams[1]


# --- sifting -------------------------------------------------------------------

@dataclass
class SiftedBlock:
    basis: str
    alice_bits: np.ndarray  # uint8, one bit per element
    bob_bits: np.ndarray
    qber: float
    pair_count: int

    @property
    def errors(self) -> int:
        return int(np.count_nonzero(self.alice_bits != self.bob_bits))

    def qber_err(self) -> float:
        """Binomial standard error of the QBER."""
        if self.pair_count == 0:
            return math.nan
        return math.sqrt(max(self.qber * (1 - self.qber), 1.0 / self.pair_count) / self.pair_count)


@nb.njit(cache=True)
def _match(ta, tb, w, T):
    na, nb_ = ta.shape[0], tb.shape[0]
    used = np.zeros(nb_, dtype=np.bool_)
    ia = np.empty(min(na, nb_), dtype=np.int64)
    ib = np.empty(min(na, nb_), dtype=np.int64)
    dd = np.empty(min(na, nb_), dtype=np.int64)
    m = 0
    lo = 0
    reach = T + w
    for i in range(na):
        a = ta[i]
        while lo < nb_ and tb[lo] < a - reach:
            lo += 1
        best = -1
        best_abs = 0
        best_d = 0
        j = lo
        while j < nb_ and tb[j] <= a + reach:
            if not used[j]:
                diff = tb[j] - a
                d = int(np.floor(diff / T + 0.5))
                res = diff - d * T
                if -1 <= d <= 1 and -w <= res <= w:
                    ad = abs(diff)
                    if best < 0 or ad < best_abs:
                        best, best_abs, best_d = j, ad, d
            j += 1
        if best >= 0:
            used[best] = True
            ia[m] = i
            ib[m] = best
            dd[m] = best_d
            m += 1
    return ia[:m], ib[:m], dd[:m]


def match_coincidences(ticks_a, ticks_b, window_ticks: float, period_ticks: float):
    """Greedy one-to-one matching, Alice's tags in time order.

    Each Alice tag takes the unused Bob tag with the smallest absolute time
    difference among those within ``window/2`` of delay 0 or +-T (equal
    differences go to the earlier Bob tag). Returns index arrays into both
    streams and the delay class ``d`` in {-1, 0, 1}.
    """
    ta = np.ascontiguousarray(ticks_a, dtype=np.int64)
    tb = np.ascontiguousarray(ticks_b, dtype=np.int64)
    for t, name in ((ta, "alice"), (tb, "bob")):
        if t.size > 1 and np.any(np.diff(t) < 0):
            raise ValueError(f"{name} tags must be sorted")
    return _match(ta, tb, float(window_ticks) / 2.0, float(period_ticks))


def sift(alice: TagStream, bob: TagStream, coincidence_window_ps: float, bin_period_ps: float, *,
         alice_channels=None, bob_channels=None) -> list[SiftedBlock]:
    """Sift both parties' tags into a time-basis and a phase-basis block.

    ``coincidence_window_ps`` is the full window width; it must be shorter
    than half a bin period. ``*_channels`` give the detector ids for bit 0
    and bit 1 (default: the two lowest channel ids present).
    """
    if coincidence_window_ps >= bin_period_ps / 2:
        raise ValueError("coincidence window must be shorter than half the bin period")
    if not coincidence_window_ps > 0:
        raise ValueError("coincidence window must be > 0")
    tick = alice.tick_ps
    if not math.isclose(tick, bob.tick_ps):
        raise ValueError("both parties need the same tick resolution")
    ca = _bit_map(alice, alice_channels)
    cb = _bit_map(bob, bob_channels)
    keep_a = np.isin(alice.channel, list(ca))
    keep_b = np.isin(bob.channel, list(cb))
    ta, cha = alice.ticks[keep_a], alice.channel[keep_a]
    tb, chb = bob.ticks[keep_b], bob.channel[keep_b]
    ia, ib, d = match_coincidences(ta, tb, coincidence_window_ps / tick, bin_period_ps / tick)

    blocks = []
    for basis in BASES:
        sel = d == 0 if basis == "phase" else d != 0
        xa, xb = ia[sel], ib[sel]
        if basis == "phase":
            bits_a = np.array([ca[int(c)] for c in cha[xa]], dtype=np.uint8)
            bits_b = np.array([cb[int(c)] for c in chb[xb]], dtype=np.uint8)
        else:
            ka = np.floor(ta[xa].astype(float) * tick / bin_period_ps + 0.5).astype(np.int64)
            kb = np.floor(tb[xb].astype(float) * tick / bin_period_ps + 0.5).astype(np.int64)
            bits_a = (ka % 2).astype(np.uint8)
            bits_b = ((kb + 1) % 2).astype(np.uint8)
        n = int(bits_a.size)
        q = float(np.count_nonzero(bits_a != bits_b) / n) if n else math.nan
        blocks.append(SiftedBlock(basis, bits_a, bits_b, q, n))
    return blocks


def _bit_map(stream: TagStream, channels) -> dict:
    if channels is None:
        chans = stream.channels()
        if len(chans) < 2:
            chans = sorted(set(chans) | set(range(2)))[:2]
        channels = chans[:2]
    if len(channels) != 2:
        raise ValueError("need exactly two detector channels per party")
    return {int(channels[0]): 0, int(channels[1]): 1}


def background_pair_fraction(singles_a_Hz: float, singles_b_Hz: float,
                             background_a_Hz: float, background_b_Hz: float) -> float:
    """Share of the continuous accidentals made of two background tags.

    Accidental windows off the pulse grid collect every pair of tags except
    signal-signal ones, so their rate is proportional to
    ``S_a S_b - s_a s_b`` with ``s = S - b`` the signal singles.
    """
    sa, sb = singles_a_Hz - background_a_Hz, singles_b_Hz - background_b_Hz
    denom = singles_a_Hz * singles_b_Hz - sa * sb
    return background_a_Hz * background_b_Hz / denom if denom > 0 else 0.0


def expected_time_errors(accidentals_per_window: float, background_fraction: float,
                         window_ps: float, bin_period_ps: float) -> float:
    """Expected time-basis bit errors from background-background coincidences.

    Both side windows (d = +-1) collect ``accidentals_per_window`` each. A
    background tag sits uniformly within its bin, so a coincidence whose
    residual delay is uniform over the window crosses a bin boundary, and
    flips the parity, with probability E|residual| / T = window / (4 T).
    Pair photons sit near bin centers and never cross.
    """
    return 2.0 * accidentals_per_window * background_fraction * window_ps / (4.0 * bin_period_ps)


# --- key rate ------------------------------------------------------------------

def h2(p: float) -> float:
    """Binary entropy in bits."""
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def key_fraction(qber_time: float, qber_phase: float) -> float:
    """Asymptotic secret fraction max(0, 1 - h2(e_time) - h2(e_phase))."""
    for name, q in (("qber_time", qber_time), ("qber_phase", qber_phase)):
        if not 0.0 <= q <= 0.5:
            raise ValueError(f"{name} must lie in [0, 0.5], got {q}")
    return max(0.0, 1.0 - h2(qber_time) - h2(qber_phase))


CHSH_VISIBILITY = 1.0 / math.sqrt(2.0)


def visibility_threshold_check(visibility: float) -> dict:
    """Entanglement (CHSH) and positive-key verdicts for a fringe visibility."""
    q = (1.0 - visibility) / 2.0
    q = min(max(q, 0.0), 0.5)
    return {"entangled": bool(visibility > CHSH_VISIBILITY),
            "key_positive": bool(key_fraction(q, q) > 0.0)}


# --- outputs -------------------------------------------------------------------

def write_bits(path, bits) -> None:
    """One byte per bit (0x00 or 0x01), in sifting order."""
    Path(path).write_bytes(np.asarray(bits, dtype=np.uint8).tobytes())


def read_bits(path) -> np.ndarray:
    return np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)


def qkd_report(blocks: list[SiftedBlock]) -> dict:
    by = {b.basis: b for b in blocks}
    out = {}
    for basis in BASES:
        b = by.get(basis)
        n = b.pair_count if b else 0
        out[f"{basis}_bits"] = n
        out[f"qber_{basis}"] = None if not n else b.qber
        out[f"qber_{basis}_err"] = None if not n else b.qber_err()
    qt, qp = out["qber_time"], out["qber_phase"]
    if qt is not None and qp is not None:
        out["key_fraction"] = key_fraction(min(qt, 0.5), min(qp, 0.5))
        out["phase_visibility"] = 1.0 - 2.0 * qp
        out.update(visibility_threshold_check(max(0.0, 1.0 - 2.0 * qp)))
    else:
        out["key_fraction"] = None
    return out


def write_report(path, blocks: list[SiftedBlock], extra: dict | None = None) -> dict:
    rep = qkd_report(blocks)
    if extra:
        rep.update(extra)
    Path(path).write_text(json.dumps(rep, indent=2) + "\n", encoding="utf-8")
    return rep


def with_phases(rx: ReceiverConfig, delta: float) -> ReceiverConfig:
    return replace(rx, mzi=replace(rx.mzi, phase_delta=delta))

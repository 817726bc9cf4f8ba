import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from timebin.channel import apply_link, broadening_estimate, dispersion_shift, inject_background
from timebin.config import DcmConfig, LinkConfig
from timebin.source import PairBatch
from timebin.units import rng_substream


def _batch(n, dl=0.0):
    z = np.zeros(n)
    p = np.arange(n, dtype=np.int64)
    return PairBatch(p, p * 1000.0, np.full(n, dl), np.full(n, -dl), z, np.ones(n, bool), np.ones(n, bool))


def test_broadening_reference_values():
    assert broadening_estimate(18, 3.5, 30) == 1890.0
    assert broadening_estimate(18, 3.5, 28.6) == pytest.approx(1801.8, abs=1e-9)
    assert broadening_estimate(0, 3.5, 28.6) == 0.0


def test_broadening_rejects_negative():
    with pytest.raises(ValueError):
        broadening_estimate(-1, 3.5, 1)


def test_link_loss_survival():
    n = 200_000
    out = apply_link(_batch(n), LinkConfig(loss_dB=9.5), rng_substream(0, 0))
    p = 10 ** -0.95
    assert p == pytest.approx(0.1122, abs=1e-4)
    for alive in (out.alive_signal, out.alive_idler):
        assert abs(alive.mean() - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_dispersion_shift_uncompensated():
    link = LinkConfig(length_km=28.6, dispersion_ps_per_nm_km=18.0)
    assert float(dispersion_shift(1.0, link)) == pytest.approx(514.8, abs=1e-9)
    out = apply_link(_batch(3, dl=1.0), link, rng_substream(0, 0))
    np.testing.assert_allclose(out.time_signal - out.emission_time, 514.8)
    np.testing.assert_allclose(out.time_idler - out.emission_time, -514.8)


def test_full_compensation_only_loss():
    link = LinkConfig(length_km=28.6, loss_dB=9.5, dcm=DcmConfig(enabled=True, compensated_km=28.6))
    out = apply_link(_batch(1000, dl=1.3), link, rng_substream(1, 0))
    np.testing.assert_allclose(out.time_signal, out.emission_time, atol=1e-9)
    assert link.total_loss_dB == pytest.approx(12.4)


def test_one_sided_link():
    link = LinkConfig(length_km=10, loss_dB=3)
    out = apply_link(_batch(1000, dl=1.0), link, rng_substream(2, 0), photons="signal")
    np.testing.assert_array_equal(out.time_idler, out.emission_time)
    assert out.alive_idler.all()
    with pytest.raises(ValueError):
        apply_link(_batch(1), link, rng_substream(2, 0), photons="pump")


def test_background_zero_rate():
    assert inject_background(1e12, 0.0, rng_substream(0, 0)).size == 0


def test_background_count_and_interarrival():
    t = inject_background(10e12, 15_000.0, rng_substream(3, 0))
    assert abs(t.size - 150_000) < 3 * math.sqrt(150_000)
    gaps = np.diff(t) * 1e-12
    assert gaps.mean() == pytest.approx(1 / 15_000, rel=0.01)
    assert np.all(np.diff(t) >= 0)


@given(st.floats(0, 50), st.floats(0, 50), st.floats(0, 50))
def test_residual_dispersion_linear(length, comp, d):
    link = LinkConfig(length_km=length, dispersion_ps_per_nm_km=d,
                      dcm=DcmConfig(enabled=True, compensated_km=comp))
    assert link.residual_dispersion_ps_per_nm == pytest.approx(d * (length - comp), abs=1e-9)

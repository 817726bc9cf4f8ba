"""Unit conversions, the pump power to pair-number map, and RNG substreams."""

from __future__ import annotations

import numpy as np


def db_to_linear(loss_dB):
    """Survival probability (power transmission) of a loss given in dB."""
    return 10.0 ** (-np.asarray(loss_dB, dtype=float) / 10.0)


def linear_to_db(transmission):
    return -10.0 * np.log10(transmission)


def mu_from_power(power_mW: float, rep_rate_Hz: float, brightness_Hz_per_mW: float,
                  calibration: float = 0.5) -> float:
    """Mean number of pairs per pump pulse.

    ``brightness_Hz_per_mW`` is the measured pair rate per mW of pump power and
    ``calibration`` in (0, 1] scales it to the per-pulse pair number actually
    produced in the collected mode.

    >>> round(mu_from_power(0.5, 1e9, 7.2e6, 1.0), 10)
    0.0036
    """
    for name, val in (("power_mW", power_mW), ("rep_rate_Hz", rep_rate_Hz),
                      ("brightness_Hz_per_mW", brightness_Hz_per_mW), ("calibration", calibration)):
        if not val > 0:
            raise ValueError(f"{name} must be > 0, got {val}")
    if calibration > 1:
        raise ValueError(f"calibration must lie in (0, 1], got {calibration}")
    return calibration * brightness_Hz_per_mW * power_mW / rep_rate_Hz


def rng_substream(seed: int, block_index: int) -> np.random.Generator:
    """Independent, reproducible generator for one block of work.

    Streams are keyed by ``(seed, block_index)`` through ``SeedSequence``
    spawn keys, so they never overlap and do not depend on how many other
    blocks were drawn or in which order.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(block_index),))
    return np.random.Generator(np.random.PCG64(ss))

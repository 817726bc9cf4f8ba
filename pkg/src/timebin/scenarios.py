"""Named scenario presets and scenario loading from config files.

Presets:

``back_to_back``
    Source, MZI and balanced splitter next to the detectors, no fiber.
``vienna_link``
    Same source and MZI behind the 28.6 km deployed fiber with DCM,
    SNSPDs and broadband background.
``vienna_uncompensated``
    ``vienna_link`` with the DCM removed.
``spad_bench``
    Source characterization with InGaAs SPADs behind a polarizing splitter,
    no MZI (pump power sweeps, CAR, saturation).
``car_bench``
    ``spad_bench`` layout with noise-free SNSPD-like detectors.
``two_receiver``
    Pairs split at the source, one MZI and two detectors per party.
"""

from __future__ import annotations

import math
import os
from dataclasses import replace
from pathlib import Path

from .config import (AnalysisSettings, ConfigError, DcmConfig, DetectorConfig, LinkConfig,
                     MziConfig, ReceiverConfig, RunConfig, Scenario, SourceConfig, from_dict,
                     load_mapping, snspd, spad)

CONFIG_DIR_ENV = "TIMEBIN_CONFIG_DIR"

# 175 ps SNSPD jitter combined in quadrature with 175 ps of timing electronics
# per channel; two channels give a 350 ps coincidence peak
DETECTION_UNIT_JITTER_PS = math.hypot(175.0, 175.0)

VIENNA_LENGTH_KM = 28.6
# leaves 28.5 ps/nm of residual dispersion (about 1 ps/(nm km) over the link)
VIENNA_COMPENSATED_KM = VIENNA_LENGTH_KM - 28.5 / 18.0

# pairs per pulse giving ~20 kc/s of pair photons per SNSPD over the Vienna link
SOURCE_MU = 2.5e-3
SOURCE_V0 = 0.95

# integer multiples of the bin period, clear of the +-T side peaks
PULSED_OFFSETS_PS = (-5000.0, -4000.0, -3000.0, -2000.0, 2000.0, 3000.0, 4000.0, 5000.0)
# many such windows, for low-count SPAD data
SPAD_OFFSETS_PS = tuple(float(s * k * 1000) for k in range(2, 41) for s in (-1, 1))

# SPAD bench: pump power at which efficiency * photon rate * dead time = 0.05
SPAD_KNEE_mW = 0.7
_knee_rate = 0.05 / (0.08 * 25e-6)  # photons/s at one SPAD
_knee_pairs = 0.5 * 7.2e6 * SPAD_KNEE_mW  # mu_from_power(...) * rep rate
SPAD_COUPLING_DB = 10.0 * math.log10(_knee_pairs / _knee_rate)


def _snspd_unit(id: int) -> DetectorConfig:
    return replace(snspd(id), jitter_fwhm_ps=DETECTION_UNIT_JITTER_PS)


def back_to_back() -> Scenario:
    run = RunConfig(
        pulse_count=1_000_000_000, seed=1, mu=SOURCE_MU,
        mzi=MziConfig(intrinsic_visibility=SOURCE_V0),
        detectors=(_snspd_unit(0), _snspd_unit(1)),
    )
    return Scenario(name="back_to_back", topology="single_receiver_bs", run=run,
                    analysis=AnalysisSettings(point_duration_s=1.0))


def vienna_link() -> Scenario:
    link = LinkConfig(length_km=VIENNA_LENGTH_KM, loss_dB=9.5, dispersion_ps_per_nm_km=18.0,
                      dcm=DcmConfig(enabled=True, compensated_km=VIENNA_COMPENSATED_KM,
                                    insertion_loss_dB=2.9),
                      # 15 kc/s detected at 80 % efficiency
                      background_rate_Hz=15_000.0 / 0.8)
    base = back_to_back()
    run = replace(base.run, link=link)
    return Scenario(name="vienna_link", topology="single_receiver_bs", run=run,
                    analysis=AnalysisSettings(point_duration_s=60.0))


def vienna_uncompensated() -> Scenario:
    sc = vienna_link()
    link = replace(sc.run.link, dcm=replace(sc.run.link.dcm, enabled=False))
    return replace(sc, name="vienna_uncompensated", run=replace(sc.run, link=link),
                   analysis=replace(sc.analysis, max_delay_ps=8000.0))


def spad_bench() -> Scenario:
    run = RunConfig(
        pulse_count=1_000_000_000, seed=1, mu=1.8e-3,
        # fiber coupling and filtering losses in front of the SPADs
        source=SourceConfig(coupling_loss_dB=SPAD_COUPLING_DB),
        detectors=(spad(0), spad(1)),
    )
    analysis = AnalysisSettings(
        accidental_offsets_ps=SPAD_OFFSETS_PS, max_delay_ps=41000.0, point_duration_s=10.0,
        power_grid_mW=(0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0, 1.5, 2.0, 3.0, 5.0),
    )
    return Scenario(name="spad_bench", topology="single_receiver_pbs", mzi_in_path=False,
                    run=run, analysis=analysis)


def car_bench() -> Scenario:
    quiet = DetectorConfig(efficiency=0.8, jitter_fwhm_ps=175.0, dead_time_ns=30.0, dark_rate_Hz=0.0)
    sc = spad_bench()
    run = replace(sc.run, source=SourceConfig(coupling_loss_dB=3.0),
                  detectors=(replace(quiet, id=0), replace(quiet, id=1)))
    return replace(sc, name="car_bench", run=run,
                   analysis=replace(sc.analysis, accidental_offsets_ps=PULSED_OFFSETS_PS,
                                    max_delay_ps=6000.0, point_duration_s=0.2))


def two_receiver() -> Scenario:
    rx = ReceiverConfig(mzi=MziConfig(), link=LinkConfig(), detectors=(snspd(0), snspd(1)))
    run = RunConfig(pulse_count=1_000_000_000, seed=1, mu=1e-3,
                    mzi=MziConfig(intrinsic_visibility=0.93))
    return Scenario(name="two_receiver", topology="two_receiver", run=run,
                    analysis=AnalysisSettings(point_duration_s=1.0), alice=rx, bob=rx)


PRESETS = {
    "back_to_back": back_to_back,
    "vienna_link": vienna_link,
    "vienna_uncompensated": vienna_uncompensated,
    "spad_bench": spad_bench,
    "car_bench": car_bench,
    "two_receiver": two_receiver,
}


class UnknownScenario(KeyError):
    def __str__(self):
        return f"unknown scenario {self.args[0]!r}; available presets: {', '.join(sorted(PRESETS))}"


def get_scenario(name: str) -> Scenario:
    try:
        return PRESETS[name]()
    except KeyError:
        raise UnknownScenario(name) from None


def config_dir() -> Path | None:
    d = os.environ.get(CONFIG_DIR_ENV)
    return Path(d) if d else None


def resolve_config_path(path: str | Path) -> Path:
    """Return ``path`` itself if it exists, else the same name in the config directory."""
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    d = config_dir()
    if d is not None:
        for cand in (d / p, d / f"{p}.yaml", d / f"{p}.yml"):
            if cand.exists():
                return cand
    return p


def scenario_from_mapping(data: dict, base: Scenario | None = None) -> Scenario:
    """Build a scenario from a mapping of :class:`Scenario` fields.

    A top-level ``preset`` key starts from that preset; all other keys
    override it field by field.
    """
    if not isinstance(data, dict):
        raise ConfigError("", "config file must hold a mapping")
    data = dict(data)
    preset = data.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}; available: {', '.join(sorted(PRESETS))}")
        base = get_scenario(preset)
    return from_dict(Scenario, data, base=base)


def load_scenario(name: str | None = None, config: str | Path | None = None) -> Scenario:
    """Resolve a preset name and/or a config file into a validated scenario.

    Names that are not presets are looked up as ``<name>.yaml`` in the
    directory given by the ``TIMEBIN_CONFIG_DIR`` environment variable.
    """
    base = None
    if name is not None:
        if name in PRESETS:
            base = get_scenario(name)
        else:
            p = resolve_config_path(name)
            if not p.exists():
                raise UnknownScenario(name)
            base = scenario_from_mapping(load_mapping(p))
    if config is None:
        if base is None:
            raise ConfigError("scenario", "give a scenario name or a config file")
        return base
    return scenario_from_mapping(load_mapping(resolve_config_path(config)), base=base)

"""Configuration schema shared by every simulation stage.

All configs are frozen dataclasses. They load from nested mappings (YAML or
JSON files) through :func:`from_dict`, which rejects unknown keys and reports
the offending key path, e.g. ``run.link.dcm.compensated_km``.
"""

from __future__ import annotations

import dataclasses
import math
import types
import typing
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

SPLITTER_KINDS = ("balanced_50_50", "polarizing")
TOPOLOGIES = ("single_receiver_bs", "single_receiver_pbs", "two_receiver")

# multi-pair contribution is considered negligible below this mean pair number
MU_WARN = 0.1


class ConfigError(ValueError):
    """Invalid configuration. ``path`` is the dotted key path at fault."""

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class Units:
    tick_ps: float = 1.0
    bin_period_ps: float = 1000.0

    def __post_init__(self):
        if not self.tick_ps > 0:
            raise ConfigError("tick_ps", "must be > 0")
        if not self.bin_period_ps > 0:
            raise ConfigError("bin_period_ps", "must be > 0")

    @property
    def rep_rate_Hz(self) -> float:
        return 1e12 / self.bin_period_ps


@dataclass(frozen=True)
class SpectrumConfig:
    center_nm: float = 1554.0
    fwhm_nm: float = 3.4
    correlation: float = -1.0

    def __post_init__(self):
        if not self.fwhm_nm > 0:
            raise ConfigError("fwhm_nm", "must be > 0")
        if not -1.0 <= self.correlation <= 0.0:
            raise ConfigError("correlation", "must lie in [-1, 0]")

    @property
    def sigma_nm(self) -> float:
        return self.fwhm_nm / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class SourceConfig:
    spectrum: SpectrumConfig = field(default_factory=SpectrumConfig)
    pulse_width_ps: float = 150.0
    # fiber-pigtail output coupling of the waveguide, per photon
    coupling_loss_dB: float = 3.0

    def __post_init__(self):
        if self.pulse_width_ps < 0:
            raise ConfigError("pulse_width_ps", "must be >= 0")
        if self.coupling_loss_dB < 0:
            raise ConfigError("coupling_loss_dB", "must be >= 0")


@dataclass(frozen=True)
class MziConfig:
    delay_ps: float = 1000.0
    phase_delta: float = 0.0
    insertion_loss_dB: float = 1.6
    intrinsic_visibility: float = 1.0
    phase_per_heater_mW: float = math.pi / 20.0
    phase_offset: float = 0.0

    def __post_init__(self):
        if not self.delay_ps > 0:
            raise ConfigError("delay_ps", "must be > 0")
        if not 0.0 <= self.intrinsic_visibility <= 1.0:
            raise ConfigError("intrinsic_visibility", "must lie in [0, 1]")
        if self.insertion_loss_dB < 0:
            raise ConfigError("insertion_loss_dB", "must be >= 0")

    def phase_from_heater(self, heater_mW):
        """Affine thermal actuation map, heater power (mW) -> delta (rad)."""
        return self.phase_offset + self.phase_per_heater_mW * heater_mW


@dataclass(frozen=True)
class DcmConfig:
    enabled: bool = False
    compensated_km: float = 0.0
    insertion_loss_dB: float = 2.9

    def __post_init__(self):
        if self.compensated_km < 0:
            raise ConfigError("compensated_km", "must be >= 0")
        if self.insertion_loss_dB < 0:
            raise ConfigError("insertion_loss_dB", "must be >= 0")


@dataclass(frozen=True)
class LinkConfig:
    length_km: float = 0.0
    loss_dB: float = 0.0
    dispersion_ps_per_nm_km: float = 18.0
    dcm: DcmConfig = field(default_factory=DcmConfig)
    background_rate_Hz: float = 0.0

    def __post_init__(self):
        if self.length_km < 0:
            raise ConfigError("length_km", "must be >= 0")
        if self.loss_dB < 0:
            raise ConfigError("loss_dB", "must be >= 0")
        if self.background_rate_Hz < 0:
            raise ConfigError("background_rate_Hz", "must be >= 0")

    @property
    def total_loss_dB(self) -> float:
        return self.loss_dB + (self.dcm.insertion_loss_dB if self.dcm.enabled else 0.0)

    @property
    def residual_dispersion_ps_per_nm(self) -> float:
        D = self.dispersion_ps_per_nm_km
        comp = self.dcm.compensated_km if self.dcm.enabled else 0.0
        return D * self.length_km - D * comp


@dataclass(frozen=True)
class DetectorConfig:
    id: int = 0
    efficiency: float = 0.8
    jitter_fwhm_ps: float = 175.0
    dead_time_ns: float = 30.0
    dark_rate_Hz: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ConfigError("efficiency", "must lie in [0, 1]")
        for name in ("jitter_fwhm_ps", "dead_time_ns", "dark_rate_Hz"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")
        if not 0 <= self.id < 256:
            raise ConfigError("id", "must fit in an unsigned byte")


def spad(id: int) -> DetectorConfig:
    """InGaAs SPAD as used for the bench characterization."""
    return DetectorConfig(id=id, efficiency=0.08, jitter_fwhm_ps=150.0,
                          dead_time_ns=25_000.0, dark_rate_Hz=850.0)


def snspd(id: int) -> DetectorConfig:
    # jitter quoted as 150-200 ps; midpoint
    return DetectorConfig(id=id, efficiency=0.8, jitter_fwhm_ps=175.0,
                          dead_time_ns=30.0, dark_rate_Hz=0.0)


@dataclass(frozen=True)
class RunConfig:
    pulse_count: int = 1_000_000_000
    seed: int = 0
    mu: float = 0.0018
    pump_phase_step: float = 0.0
    units: Units = field(default_factory=Units)
    source: SourceConfig = field(default_factory=SourceConfig)
    mzi: MziConfig = field(default_factory=MziConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    detectors: tuple[DetectorConfig, ...] = (snspd(0), snspd(1))

    def __post_init__(self):
        if self.pulse_count < 0:
            raise ConfigError("pulse_count", "must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        check_mu(self.mu, "mu")
        if not math.isclose(self.mzi.delay_ps, self.units.bin_period_ps):
            raise ConfigError("mzi.delay_ps", "must equal units.bin_period_ps (FSR matching)")
        ids = [d.id for d in self.detectors]
        if len(set(ids)) != len(ids):
            raise ConfigError("detectors", "detector ids must be unique")

    @property
    def duration_ps(self) -> float:
        return self.pulse_count * self.units.bin_period_ps

    def detector(self, channel: int) -> DetectorConfig:
        for d in self.detectors:
            if d.id == channel:
                return d
        raise KeyError(channel)


@dataclass(frozen=True)
class ReceiverConfig:
    """One party of the two-receiver layout: link, MZI and a detector per MZI output."""

    mzi: MziConfig = field(default_factory=MziConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    detectors: tuple[DetectorConfig, ...] = (snspd(0), snspd(1))

    def __post_init__(self):
        if len(self.detectors) != 2:
            raise ConfigError("detectors", "a receiver needs exactly two detectors (bit 0, bit 1)")


@dataclass(frozen=True)
class AnalysisSettings:
    bin_width_ps: float = 10.0
    max_delay_ps: float = 4000.0
    window_ps: float = 400.0
    accidental_offsets_ps: tuple[float, ...] = (-3500.0, -2500.0, 2500.0, 3500.0)
    # fringe sweep grid, heater power in mW
    heater_grid_mW: tuple[float, ...] = tuple(float(x) for x in range(0, 21, 2))
    point_duration_s: float = 1.0
    fixed_frequency: bool = True
    # pump power sweep
    power_grid_mW: tuple[float, ...] = (0.05, 0.1, 0.2, 0.3, 0.5)
    brightness_Hz_per_mW: float = 7.2e6
    mu_calibration: float = 0.5

    def __post_init__(self):
        if not self.bin_width_ps > 0:
            raise ConfigError("bin_width_ps", "must be > 0")
        if not self.max_delay_ps > 0:
            raise ConfigError("max_delay_ps", "must be > 0")
        if not self.window_ps > 0:
            raise ConfigError("window_ps", "must be > 0")
        if not self.point_duration_s > 0:
            raise ConfigError("point_duration_s", "must be > 0")
        if any(not p > 0 for p in self.power_grid_mW):
            raise ConfigError("power_grid_mW", "powers must be > 0")
        if not 0.0 < self.mu_calibration <= 1.0:
            raise ConfigError("mu_calibration", "must lie in (0, 1]")


@dataclass(frozen=True)
class Scenario:
    name: str = "custom"
    topology: str = "single_receiver_bs"
    # False sends the photons straight to the splitter (source characterization)
    mzi_in_path: bool = True
    run: RunConfig = field(default_factory=RunConfig)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    # two_receiver only
    alice: ReceiverConfig | None = None
    bob: ReceiverConfig | None = None

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ConfigError("topology", f"must be one of {', '.join(TOPOLOGIES)}")
        if self.topology == "two_receiver" and (self.alice is None or self.bob is None):
            raise ConfigError("alice", "two_receiver topology needs alice and bob receivers")

    @property
    def splitter(self) -> str:
        return "polarizing" if self.topology == "single_receiver_pbs" else "balanced_50_50"

    @property
    def detector_path_loss_dB(self) -> float:
        """Link + DCM + splitter loss seen by one detector (single receiver)."""
        split = 10.0 * math.log10(2.0) if self.splitter == "balanced_50_50" else 0.0
        return self.run.link.total_loss_dB + split


def check_mu(mu: float, path: str = "mu") -> None:
    if not 0.0 <= mu < 1.0:
        raise ConfigError(path, f"mean pairs per pulse must lie in [0, 1), got {mu}")
    if mu >= MU_WARN:
        warnings.warn(f"{path}={mu} exceeds the {MU_WARN} multi-pair bound", stacklevel=3)


# --- loading -----------------------------------------------------------------

def _unwrap_optional(tp):
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0], True
    return tp, False


def _convert(tp, value, path: str):
    tp, optional = _unwrap_optional(tp)
    if value is None:
        if optional:
            return None
        raise ConfigError(path, "must not be null")
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value, path)
    origin = typing.get_origin(tp)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, "expected a list")
        (item_tp, _) = typing.get_args(tp)
        return tuple(_convert(item_tp, v, f"{path}[{i}]") for i, v in enumerate(value))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, "expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(path, "expected an integer")
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, "expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, "expected a string")
        return value
    return value


def from_dict(cls, data: Any, path: str = "", base=None):
    """Build dataclass ``cls`` from a nested mapping.

    Keys missing from ``data`` take their value from ``base`` (an existing
    instance) or the dataclass default. Unknown keys raise :class:`ConfigError`.
    """
    if not isinstance(data, dict):
        raise ConfigError(path, "expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(_join(path, key), "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        sub = _join(path, f.name)
        value = data[f.name]
        current = getattr(base, f.name) if base is not None else None
        tp, _ = _unwrap_optional(hints[f.name])
        if dataclasses.is_dataclass(tp) and isinstance(value, dict):
            kwargs[f.name] = from_dict(tp, value, sub, base=current)
        else:
            kwargs[f.name] = _convert(hints[f.name], value, sub)
    try:
        if base is not None:
            return dataclasses.replace(base, **kwargs)
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(_join(path, exc.path), exc.message) from None


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def to_dict(obj) -> dict:
    return dataclasses.asdict(obj)


def load_mapping(path: str | Path) -> dict:
    """Read a YAML (or JSON, a YAML subset) config file."""
    text = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(text)
    return {} if data is None else data

"""Run configuration: nested dataclasses loaded from JSON.

Every field has a default, so ``{}`` is a valid configuration.  Unknown
keys are rejected with their dotted path.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


@dataclass
class DdpSection:
    n_x: int = 4
    eta: float = 0.8


@dataclass
class PlannerSection:
    N: int = 96
    t_init: int = 12
    T: int = 960
    e_g: float = 0.01
    n_scen: int = 300
    library_size: int | None = None   # defaults to 2 * n_scen
    W_base: float = 0.0
    W_energy: float | None = None     # defaults to tariff / c_bid
    W_ess: float | None = None        # defaults to tariff * (1 - efficiency) / c_bid
    gamma_max: float | None = None


@dataclass
class ControllerSection:
    N: int = 12
    t_init: int = 12
    T: int = 480
    e_g: float = 0.01
    W_u: float = 1.0
    W_P: float = 1.0
    W_SoC: float = 10.0
    w_radius: list = field(default_factory=lambda: [0.2, 0.05])
    a_radius: float = 0.2
    forecast_window: int = 4
    forecast_decay: float = 0.7


@dataclass
class BoundsSection:
    y: list = field(default_factory=lambda: [22.0, 26.0])
    u: list = field(default_factory=lambda: [2.4, 8.4])
    soc: list = field(default_factory=lambda: [0.25, 5.0])
    p_ess: list = field(default_factory=lambda: [-5.0, 5.0])
    rho_slack: float = 1e4


@dataclass
class PlantSection:
    """Three-node RC building (capacities kWh/K, resistances K/kW)."""

    C_air: float = 1.0
    C_mass: float = 20.0
    C_env: float = 6.0
    R_am: float = 1.0
    R_ae: float = 1.0
    R_ao: float = 3.0
    R_eo: float = 1.0
    hp_gain: float = 1.0
    solar_air: float = 2.0
    solar_mass: float = 1.0
    q_int: float = 1.0
    u_ref: float = 2.4
    drift_rate: float = 0.0
    sigma_y: float = 0.05
    sigma_u: float = 0.05


@dataclass
class EssSection:
    capacity: float = 5.0
    soc0: float = 2.625
    efficiency: float = 0.95


@dataclass
class MarketSection:
    tariff: float = 0.20
    c_bid: float = 0.80
    penalty: float = 1.00
    battery_price: float = 813.0
    battery_life_years: float = 10.0


@dataclass
class WeatherSection:
    t_mean: float = 24.0
    t_amp: float = 5.0
    t_peak_hour: float = 15.0
    t_day_sigma: float = 1.5
    t_noise: float = 0.3
    solar_peak: float = 0.7
    sunrise: float = 6.0
    sunset: float = 20.0
    cloud_sigma: float = 0.15
    winter_offset: float = -14.0


@dataclass
class AgcSection:
    tau_s: float = 2400.0
    sigma: float = 0.45
    fast_sigma: float = 0.08


@dataclass
class ThermostatSection:
    setpoint: float = 24.0
    hysteresis: float = 0.5


@dataclass
class ModeSection:
    scheduler: bool = False
    threshold: float = 16.0
    delay_steps: int = 5


@dataclass
class SweepSection:
    e_g: list = field(default_factory=lambda: [1e-3, 1e-2, 1e-1, 1.0, 10.0])
    T: list = field(default_factory=lambda: [480])
    t_init: list = field(default_factory=lambda: [12])
    N: list = field(default_factory=lambda: [12])
    days: int = 30
    drift_rate: float = 0.0


@dataclass
class RunConfig:
    seed: int = 0
    days: int = 20
    warmup_days: int = 10
    scenarios: list = field(default_factory=lambda: ["A", "B", "C"])
    fine_log: bool = False
    ddp: DdpSection = field(default_factory=DdpSection)
    planner: PlannerSection = field(default_factory=PlannerSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    bounds: BoundsSection = field(default_factory=BoundsSection)
    plant: PlantSection = field(default_factory=PlantSection)
    ess: EssSection = field(default_factory=EssSection)
    market: MarketSection = field(default_factory=MarketSection)
    weather: WeatherSection = field(default_factory=WeatherSection)
    agc: AgcSection = field(default_factory=AgcSection)
    thermostat: ThermostatSection = field(default_factory=ThermostatSection)
    mode: ModeSection = field(default_factory=ModeSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def __post_init__(self):
        bad = [s for s in self.scenarios if s not in ("A", "B", "C")]
        if bad:
            raise ConfigError(f"unknown scenario(s) {bad}; choose from A, B, C")
        if self.days < 1 or self.warmup_days < 1:
            raise ConfigError("days and warmup_days must be positive")
        for name in ("y", "u", "soc", "p_ess"):
            lo, hi = getattr(self.bounds, name)
            if lo > hi:
                raise ConfigError(f"bounds.{name}: lower bound exceeds upper bound")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:12]


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        return _from_dict(tp, value, path)
    if origin is typing.Union or str(origin) == "<class 'types.UnionType'>":
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(inner, value, path)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false")
        return value
    if tp is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return list(value)
    return value


def _from_dict(cls, data: dict, path: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown config key(s): {', '.join(where + k for k in unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    return _from_dict(RunConfig, data)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data)

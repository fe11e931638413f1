"""Default BMS rule: bang-bang with hysteresis around a setpoint, plus the
outdoor-temperature mode scheduler."""

from __future__ import annotations

from dataclasses import dataclass

from ..data import Mode
from .plant import HP_LIMITS


def default_thermostat(y_measured: float, mode: Mode | str = Mode.COOLING,
                       setpoint: float = 24.0, hysteresis: float = 0.5,
                       was_on: bool = False) -> tuple[float, bool]:
    """Return ``(u, on)``.

    The HP runs at full power once the temperature leaves the band on the
    wrong side and keeps running until it crosses the band on the other
    side; otherwise only the fan runs.
    """
    mode = Mode.parse(mode)
    lo, hi = HP_LIMITS[mode]
    err = y_measured - setpoint if mode is Mode.COOLING else setpoint - y_measured
    if err > hysteresis:
        on = True
    elif err < -hysteresis:
        on = False
    else:
        on = was_on
    return (hi if on else lo), on


class Thermostat:
    def __init__(self, setpoint: float = 24.0, hysteresis: float = 0.5):
        self.setpoint = setpoint
        self.hysteresis = hysteresis
        self.on = False

    def __call__(self, y_measured: float, mode: Mode | str = Mode.COOLING) -> float:
        u, self.on = default_thermostat(y_measured, mode, self.setpoint,
                                        self.hysteresis, self.on)
        return u


@dataclass
class ModeScheduler:
    """Switches to heating below ``threshold`` and back to cooling above it,
    only after the condition has held for ``delay_steps`` samples."""

    threshold: float = 16.0
    delay_steps: int = 5
    enabled: bool = True
    mode: Mode = Mode.COOLING
    _count: int = 0

    def __call__(self, t_out: float) -> Mode:
        if not self.enabled:
            return self.mode
        want = Mode.HEATING if t_out < self.threshold else Mode.COOLING
        if want is self.mode:
            self._count = 0
        else:
            self._count += 1
            if self._count >= self.delay_steps:
                self.mode = want
                self._count = 0
        return self.mode

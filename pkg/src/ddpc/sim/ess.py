"""Battery emulator with asymmetric charge/discharge efficiency."""

from __future__ import annotations

from dataclasses import dataclass

FINE_DT_S = 4.0


@dataclass(frozen=True)
class EssParams:
    capacity: float = 5.0       # kWh
    soc_min: float = 0.25       # kWh
    soc_max: float = 5.0        # kWh
    p_min: float = -5.0         # kW
    p_max: float = 5.0          # kW
    efficiency: float = 0.95

    def __post_init__(self):
        if not (0.0 <= self.soc_min < self.soc_max <= self.capacity):
            raise ValueError("need 0 <= soc_min < soc_max <= capacity")
        if not self.p_min <= 0.0 <= self.p_max:
            raise ValueError("power bounds must bracket zero")
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in (0, 1]")

    @property
    def soc_ref(self) -> float:
        return 0.5 * (self.soc_min + self.soc_max)


@dataclass(frozen=True)
class EssState:
    soc: float


def step_ess(state: EssState, p_e: float, params: EssParams = EssParams(),
             dt_s: float = FINE_DT_S) -> tuple[EssState, float]:
    """Apply battery power ``p_e`` [kW] (positive = charging) for ``dt_s``.

    ``SoC' = SoC + eff*(P)_+*dt - (P)_-*dt/eff``.  The power is first clipped
    to the rating, then reduced so that ``SoC'`` stays within
    ``[soc_min, soc_max]``.  Returns the new state and the delivered power.
    """
    dt = dt_s / 3600.0
    eff = params.efficiency
    p = min(max(float(p_e), params.p_min), params.p_max)
    soc = state.soc
    if p > 0.0:
        room = max(params.soc_max - soc, 0.0)
        p = min(p, room / (eff * dt))
        soc = min(soc + eff * p * dt, max(params.soc_max, state.soc))
    elif p < 0.0:
        avail = max(soc - params.soc_min, 0.0)
        p = max(p, -avail * eff / dt)
        soc = max(soc + p * dt / eff, min(params.soc_min, state.soc))
    return EssState(soc), p

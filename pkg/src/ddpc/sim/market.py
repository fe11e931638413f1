"""Per-day economic accounting of the SFC service."""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class MarketPrices:
    tariff: float = 0.20          # CHF/kWh of consumed energy
    c_bid: float = 0.80           # CHF per kW of flexibility per day
    penalty: float = 1.00         # CHF per kWh of absolute tracking error
    battery_price: float = 813.0  # CHF/kWh of capacity
    battery_life_years: float = 10.0

    def amortization(self, capacity_kwh: float) -> float:
        """Daily battery amortization [CHF/day]."""
        return self.battery_price * capacity_kwh / (self.battery_life_years * 365.0)


@dataclass
class MarketLedger:
    """Accrues one day's cost components; ``total`` is derived on demand."""

    day: int = 0
    prices: MarketPrices = field(default_factory=MarketPrices)
    _energy_kwh: list = field(default_factory=list, repr=False)
    _error_kwh: list = field(default_factory=list, repr=False)
    gamma: float = 0.0
    has_battery: bool = False
    capacity_kwh: float = 0.0
    market: bool = False

    def add_energy(self, kwh: float) -> None:
        self._energy_kwh.append(float(kwh))

    def add_tracking_error(self, kwh: float) -> None:
        self._error_kwh.append(abs(float(kwh)))

    @property
    def energy_kwh(self) -> float:
        return math.fsum(self._energy_kwh)

    @property
    def tracking_error_kwh(self) -> float:
        return math.fsum(self._error_kwh)

    @property
    def energy(self) -> float:
        return self.prices.tariff * self.energy_kwh

    @property
    def reward(self) -> float:
        return self.prices.c_bid * self.gamma if self.market else 0.0

    @property
    def penalty(self) -> float:
        return self.prices.penalty * self.tracking_error_kwh if self.market else 0.0

    @property
    def amortization(self) -> float:
        return self.prices.amortization(self.capacity_kwh) if self.has_battery else 0.0

    @property
    def total(self) -> float:
        return math.fsum([self.energy, -self.reward, self.penalty, self.amortization])

    def row(self) -> dict:
        return {"day": self.day, "energy_kwh": self.energy_kwh, "energy_chf": self.energy,
                "reward_chf": self.reward, "penalty_chf": self.penalty,
                "amortization_chf": self.amortization, "total_chf": self.total,
                "gamma_kw": self.gamma if self.market else 0.0,
                "tracking_error_kwh": self.tracking_error_kwh}

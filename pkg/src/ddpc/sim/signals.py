"""Synthetic exogenous signals: AGC regulation signal and weather.

Every generator is a pure function of ``(seed, day)`` so any day can be
regenerated independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

FINE_PER_STEP = 225           # 15 min / 4 s
STEPS_PER_DAY = 96
FINE_PER_DAY = FINE_PER_STEP * STEPS_PER_DAY


def day_rng(seed: int, day: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(day) + 1_000_000, stream])


@dataclass(frozen=True)
class AgcParams:
    tau_s: float = 2400.0      # mean-reversion time constant
    sigma: float = 0.45        # stationary std of the slow component
    fast_sigma: float = 0.08   # white jitter on the 4-s grid


@dataclass(frozen=True)
class AgcDay:
    fine: np.ndarray           # (FINE_PER_DAY,) values on the 4-s grid
    steps: np.ndarray          # (96,) 15-min block means


def gen_agc(seed: int, day: int, params: AgcParams = AgcParams()) -> AgcDay:
    """Mean-reverting (Ornstein-Uhlenbeck) AGC trace clipped to [-1, 1].

    The slow component starts from its stationary law, so days are
    statistically identical and the long-run mean is zero.
    """
    rng = day_rng(seed, day, 1)
    dt = 4.0
    a = np.exp(-dt / params.tau_s)
    s = params.sigma * np.sqrt(1 - a * a)
    e = rng.standard_normal(FINE_PER_DAY)
    prev = params.sigma * rng.standard_normal()
    # exact OU discretization: x_k = a x_{k-1} + s e_k
    x, _ = lfilter([s], [1.0, -a], e, zi=[a * prev])
    x = x + params.fast_sigma * rng.standard_normal(FINE_PER_DAY)
    fine = np.clip(x, -1.0, 1.0)
    steps = fine.reshape(STEPS_PER_DAY, FINE_PER_STEP).mean(axis=1)
    return AgcDay(fine, steps)


def agc_scenarios(seed: int, n_scen: int, params: AgcParams = AgcParams()) -> np.ndarray:
    """``(n_scen, 96)`` library of historical daily AGC block means."""
    return np.vstack([gen_agc(seed, 100_000 + j, params).steps for j in range(n_scen)])


class AgcForecaster:
    """Persistence of the mean of the last ``window`` block averages,
    decaying geometrically to zero over the horizon."""

    def __init__(self, window: int = 4, decay: float = 0.7):
        self.window = window
        self.decay = decay

    def __call__(self, history, N: int) -> np.ndarray:
        h = np.asarray(history, float)[-self.window:]
        level = float(h.mean()) if h.size else 0.0
        return level * self.decay ** np.arange(1, N + 1)


@dataclass(frozen=True)
class WeatherParams:
    t_mean: float = 24.0       # degC
    t_amp: float = 5.0         # daily half-swing, degC
    t_peak_hour: float = 15.0
    t_day_sigma: float = 1.5   # day-to-day mean variation
    t_noise: float = 0.3       # AR(1) noise std
    solar_peak: float = 0.7    # kW/m^2
    sunrise: float = 6.0
    sunset: float = 20.0
    cloud_sigma: float = 0.15
    err_temp: float = 0.2      # forecast error bound
    err_solar: float = 0.05


@dataclass(frozen=True)
class WeatherDay:
    truth: np.ndarray          # (96, 2): outdoor temperature, solar radiation
    forecast: np.ndarray       # (96, 2)


def gen_weather(seed: int, day: int, params: WeatherParams = WeatherParams()) -> WeatherDay:
    """Sinusoidal temperature plus AR noise and a half-sine solar profile.

    The forecast differs from the truth by a smooth error whose magnitude
    never exceeds ``(err_temp, err_solar)``.
    """
    rng = day_rng(seed, day, 2)
    hours = (np.arange(STEPS_PER_DAY) + 0.5) * 0.25
    b0, b1 = (params.t_mean + params.t_day_sigma * day_rng(seed, d, 3).standard_normal()
              for d in (day, day + 1))
    base = b0 + (b1 - b0) * hours / 24.0
    temp = base + params.t_amp * np.cos(2 * np.pi * (hours - params.t_peak_hour) / 24.0)
    ar = np.empty(STEPS_PER_DAY)
    prev = 0.0
    for k in range(STEPS_PER_DAY):
        prev = 0.9 * prev + params.t_noise * np.sqrt(1 - 0.81) * rng.standard_normal()
        ar[k] = prev
    temp = temp + ar
    daylen = params.sunset - params.sunrise
    phase = np.clip((hours - params.sunrise) / daylen, 0.0, 1.0)
    clear = np.where((hours > params.sunrise) & (hours < params.sunset),
                     np.sin(np.pi * phase), 0.0)
    clouds = np.clip(1.0 - np.abs(params.cloud_sigma * rng.standard_normal(STEPS_PER_DAY)
                                  + 0.1 * rng.standard_normal()), 0.2, 1.0)
    solar = params.solar_peak * clear * clouds
    truth = np.column_stack([temp, solar])

    # bounded smooth forecast error: scaled tanh of an AR(1) path
    err = np.zeros((STEPS_PER_DAY, 2))
    z = np.zeros(2)
    for k in range(STEPS_PER_DAY):
        z = 0.85 * z + 0.5 * rng.standard_normal(2)
        err[k] = np.tanh(z)
    bound = np.array([params.err_temp, params.err_solar]) * 0.95
    forecast = truth + err * bound
    forecast[:, 1] = np.where(clear > 0, np.maximum(forecast[:, 1], 0.0), 0.0)
    return WeatherDay(truth, forecast)


class WeatherSource:
    """Cached per-day weather with slicing across midnight."""

    def __init__(self, seed: int, params: WeatherParams = WeatherParams()):
        self.seed = seed
        self.params = params
        self._cache: dict[int, WeatherDay] = {}

    def day(self, d: int) -> WeatherDay:
        if d not in self._cache:
            self._cache[d] = gen_weather(self.seed, d, self.params)
        return self._cache[d]

    def _slice(self, attr: str, start: int, n: int) -> np.ndarray:
        out = np.empty((n, 2))
        for i in range(n):
            d, k = divmod(start + i, STEPS_PER_DAY)
            out[i] = getattr(self.day(d), attr)[k]
        return out

    def truth(self, start: int, n: int = 1) -> np.ndarray:
        return self._slice("truth", start, n)

    def forecast(self, start: int, n: int) -> np.ndarray:
        return self._slice("forecast", start, n)

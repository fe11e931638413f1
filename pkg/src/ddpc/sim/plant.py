"""Ground-truth building plant on the 15-minute grid.

A discrete-time linear thermal model with an optional constant heat input
(internal gains, ventilation offset) and a slow multiplicative drift of the
HP gain.  The mode sets the sign of the HP effect: cooling lowers the indoor
temperature, heating raises it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from ..data import Mode

DT_H = 0.25

#: HP electrical power limits by mode [kW]; the fan alone draws the minimum
HP_LIMITS = {Mode.COOLING: (2.4, 7.0), Mode.HEATING: (2.4, 8.4)}


@dataclass(frozen=True)
class PlantModel:
    """``x' = A x + s*g(d)*B_u (u - u_ref) + B_w w + offset``, ``y = C x``.

    ``s`` is -1 in cooling and +1 in heating, ``g(d) = 1 + drift_rate*d`` on
    simulated day ``d``.  ``B_u`` is the heating-direction input column.
    """

    A: np.ndarray
    B_u: np.ndarray
    B_w: np.ndarray
    C: np.ndarray
    offset: np.ndarray | None = None
    u_ref: float = 0.0
    drift_rate: float = 0.0
    sigma_y: float = 0.0
    sigma_u: float = 0.0
    clamp: bool = True

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, float))
        n = A.shape[0]
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B_u", np.asarray(self.B_u, float).reshape(n))
        object.__setattr__(self, "B_w", np.asarray(self.B_w, float).reshape(n, -1))
        object.__setattr__(self, "C", np.asarray(self.C, float).reshape(n))
        off = np.zeros(n) if self.offset is None else np.asarray(self.offset, float).reshape(n)
        object.__setattr__(self, "offset", off)
        if max(abs(np.linalg.eigvals(A))) >= 1.0:
            raise ValueError("plant A must be Schur stable")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    def gain_factor(self, day: float) -> float:
        return 1.0 + self.drift_rate * day

    def input_column(self, mode: Mode, day: float = 0.0) -> np.ndarray:
        s = -1.0 if Mode.parse(mode) is Mode.COOLING else 1.0
        return s * self.gain_factor(day) * self.B_u

    def dc_gain(self, mode: Mode = Mode.COOLING, day: float = 0.0) -> float:
        """Steady-state ``dy/du`` [degC/kW]."""
        n = self.n_x
        return float(self.C @ np.linalg.solve(np.eye(n) - self.A, self.input_column(mode, day)))

    def dc_gain_w(self) -> np.ndarray:
        n = self.n_x
        return self.C @ np.linalg.solve(np.eye(n) - self.A, self.B_w)

    def steady_state(self, u: float, w, mode: Mode = Mode.COOLING, day: float = 0.0) -> np.ndarray:
        n = self.n_x
        rhs = (self.input_column(mode, day) * (u - self.u_ref)
               + self.B_w @ np.asarray(w, float) + self.offset)
        return np.linalg.solve(np.eye(n) - self.A, rhs)

    @classmethod
    def thermal(cls, *, C_air=1.0, C_mass=20.0, C_env=6.0, R_am=1.0, R_ae=1.0,
                R_ao=3.0, R_eo=1.0, hp_gain=1.0, solar_air=2.0, solar_mass=1.0,
                q_int=1.0, u_ref=2.4, **kw) -> "PlantModel":
        """Three-node RC model (air, internal mass, envelope) discretized by ZOH.

        Capacities in kWh/K, resistances in K/kW, ``hp_gain`` is thermal kW
        per electrical kW above ``u_ref``, solar gains in kW per kW/m^2.
        """
        Ac = np.array([
            [-(1 / R_am + 1 / R_ae + 1 / R_ao) / C_air, 1 / (R_am * C_air), 1 / (R_ae * C_air)],
            [1 / (R_am * C_mass), -1 / (R_am * C_mass), 0.0],
            [1 / (R_ae * C_env), 0.0, -(1 / R_ae + 1 / R_eo) / C_env],
        ])
        Bc = np.column_stack([
            [hp_gain / C_air, 0.0, 0.0],                                   # u
            [1 / (R_ao * C_air), 0.0, 1 / (R_eo * C_env)],                 # T_out
            [solar_air / C_air, solar_mass / C_mass, 0.0],                 # solar
            [q_int / C_air, 0.0, 0.0],                                     # constant
        ])
        n, m = Bc.shape
        M = np.zeros((n + m, n + m))
        M[:n, :n] = Ac * DT_H
        M[:n, n:] = Bc * DT_H
        E = sla.expm(M)
        Ad, Bd = E[:n, :n], E[:n, n:]
        return cls(A=Ad, B_u=Bd[:, 0], B_w=Bd[:, 1:3], C=np.array([1.0, 0.0, 0.0]),
                   offset=Bd[:, 3], u_ref=u_ref, **kw)

    def noiseless(self) -> "PlantModel":
        return replace(self, sigma_y=0.0, sigma_u=0.0)


@dataclass
class PlantState:
    x: np.ndarray
    day: float = 0.0
    mode: Mode = Mode.COOLING
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


def step_plant(model: PlantModel, state: PlantState, u_applied: float, w_true,
               ) -> tuple[PlantState, float, float]:
    """Advance one 15-min interval.

    Returns the new state, the indoor temperature measured at the end of the
    interval (with sensor noise) and the HP power actually drawn ``P_H``.
    """
    p_h = float(u_applied)
    if model.sigma_u > 0:
        p_h += model.sigma_u * state.rng.standard_normal()
    if model.clamp:
        lo, hi = HP_LIMITS[state.mode]
        p_h = min(max(p_h, lo), hi)
    w = np.asarray(w_true, float).reshape(-1)
    x = (model.A @ state.x
         + model.input_column(state.mode, state.day) * (p_h - model.u_ref)
         + model.B_w @ w + model.offset)
    y = float(model.C @ x)
    if model.sigma_y > 0:
        y += model.sigma_y * state.rng.standard_normal()
    return PlantState(x, state.day, state.mode, state.rng), y, p_h


def simulate(model: PlantModel, x0, u, w, mode: Mode = Mode.COOLING, day0: float = 0.0,
             rng: np.random.Generator | None = None, steps_per_day: int = 96):
    """Open-loop rollout; returns ``(y, p_h, x_final)`` with drift advancing daily."""
    u = np.asarray(u, float).reshape(-1)
    w = np.asarray(w, float).reshape(len(u), -1)
    st = PlantState(np.asarray(x0, float).copy(), day0, Mode.parse(mode),
                    rng if rng is not None else np.random.default_rng(0))
    ys = np.empty(len(u))
    ph = np.empty(len(u))
    for k in range(len(u)):
        st.day = day0 + k // steps_per_day
        st, ys[k], ph[k] = step_plant(model, st, u[k], w[k])
    return ys, ph, st.x

"""Shared fixtures: small LTI systems, hand-built predictors, acceptance log."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ddpc.data import DdpHyper, Mode, OperationalSegment
from ddpc.ddp import DdpPredictor
from ddpc.sim.plant import PlantModel

settings.register_profile(
    "ddpc", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("ddpc")


@dataclass(frozen=True)
class Lti:
    """``x' = A x + B u + E w``, ``y = C x'`` (output read after the step)."""

    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    C: np.ndarray

    def run(self, u, w, x0=None):
        u = np.asarray(u, float).reshape(-1)
        w = np.asarray(w, float).reshape(len(u), -1)
        x = np.zeros(self.A.shape[0]) if x0 is None else np.asarray(x0, float)
        y = np.empty(len(u))
        for k in range(len(u)):
            x = self.A @ x + self.B * u[k] + self.E @ w[k]
            y[k] = self.C @ x
        return y

    @property
    def dc_gain(self) -> float:
        n = self.A.shape[0]
        return float(self.C @ np.linalg.solve(np.eye(n) - self.A, self.B))


def random_lti(seed: int, n_x: int = 3, n_w: int = 2) -> Lti:
    """Random Schur-stable system with spectral radius at most 0.9."""
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n_x, n_x)))
    A = Q @ np.diag(rng.uniform(0.3, 0.9, n_x)) @ Q.T
    return Lti(A, rng.standard_normal(n_x), rng.standard_normal((n_x, n_w)),
               rng.standard_normal(n_x))


def thermal_lti(sign: float = -1.0) -> Lti:
    """Linear part of the default thermal plant (no offset, no clamp).

    ``sign=-1`` is cooling: every impulse-response coefficient is negative.
    """
    m = PlantModel.thermal()
    return Lti(m.A, sign * m.B_u, m.B_w, m.C)


def segment(system: Lti, T: int, seed: int, start: int = 0, mode=Mode.COOLING,
            u_scale: float = 1.0, u=None) -> OperationalSegment:
    rng = np.random.default_rng(seed)
    n_w = system.E.shape[1]
    u = u_scale * rng.standard_normal(T) if u is None else np.asarray(u, float)
    w = rng.standard_normal((T, n_w))
    return OperationalSegment(start, u, w, system.run(u, w), mode)


def impulse_predictor(N: int, gain: float = -0.3, n_w: int = 1, pole: float = 0.7,
                      t_init: int = 1, w_gain: float = 0.1) -> DdpPredictor:
    """Predictor of a first-order lag built by hand (no data involved)."""
    h = gain * (1 - pole) * pole ** np.arange(N)
    P_u = np.zeros((N, N))
    for k in range(N):
        P_u[k, :k + 1] = h[:k + 1][::-1]
    P_w = np.kron(P_u / gain * w_gain, np.ones((1, n_w)))
    hyper = DdpHyper(T=t_init + N, t_init=t_init, N=N, e_g=1.0)
    return DdpPredictor(np.zeros((N, t_init)), np.zeros((N, t_init)),
                        np.zeros((N, t_init * n_w)), P_u, P_w, hyper, "hand", Mode.COOLING)


@pytest.fixture(scope="session")
def linear_thermal():
    return thermal_lti(-1.0)


@pytest.fixture(scope="session")
def plant_model():
    return replace(PlantModel.thermal(), clamp=False)


# --- acceptance reporting ----------------------------------------------------

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """``record(k, passed, detail)`` stores and prints one verdict line."""
    def record(k: int, passed: bool, detail: str):
        _ACCEPTANCE[k] = (bool(passed), detail)
        print(f"ACCEPTANCE {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"{k:2d} {'PASS' if ok else 'FAIL'}  {detail}")

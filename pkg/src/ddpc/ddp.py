"""Data-driven prediction (DDP) from Hankel data.

Two routes to the same prediction are provided:

* :func:`solve_ddp_qp` solves the regularized least-squares problem over the
  Hankel weights ``g`` directly (null-space elimination of the equality
  constraints, or a generic QP solver);
* :func:`build_predictor` factorizes the KKT matrix once and extracts the
  five coefficient blocks, after which every prediction is a matrix-vector
  product.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .data import (DataError, DdpHyper, HankelSet, Mode, OperationalSegment,
                   check_pe, stack_segments)

log = logging.getLogger(__name__)

#: refuse predictors whose KKT matrix has a larger 1-norm condition estimate
MAX_CONDITION = 1e14


class DegenerateDataError(DataError):
    """KKT matrix is numerically singular."""


class SolverError(RuntimeError):
    """An optimization backend failed to return a usable solution."""


def _vec(x, n: int, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float).reshape(-1)
    if a.size != n:
        raise ValueError(f"{name} has {a.size} entries, expected {n}")
    return a


@dataclass(frozen=True)
class DdpPredictor:
    """Linear map ``(y_init, u_init, w_init, u_pred, w_pred) -> y_pred``."""

    P_y_init: np.ndarray
    P_u_init: np.ndarray
    P_w_init: np.ndarray
    P_u_pred: np.ndarray
    P_w_pred: np.ndarray
    hyper: DdpHyper
    fingerprint: str
    mode: Mode = Mode.COOLING
    condition: float = float("nan")

    @property
    def N(self) -> int:
        return self.hyper.N

    @property
    def t_init(self) -> int:
        return self.hyper.t_init

    def free_response(self, y_init, u_init, w_init) -> np.ndarray:
        """Contribution of the initialization windows only."""
        return (self.P_y_init @ _vec(y_init, self.P_y_init.shape[1], "y_init")
                + self.P_u_init @ _vec(u_init, self.P_u_init.shape[1], "u_init")
                + self.P_w_init @ _vec(w_init, self.P_w_init.shape[1], "w_init"))

    def __call__(self, y_init, u_init, w_init, u_pred, w_pred) -> np.ndarray:
        return predict(self, y_init, u_init, w_init, u_pred, w_pred)


def _dims(H: HankelSet) -> tuple[int, int, int, int, int]:
    return (H.t_init * H.n_y, H.t_init * H.n_u, H.t_init * H.n_w,
            H.N * H.n_u, H.N * H.n_w)


def solve_ddp_qp(H: HankelSet, hyper: DdpHyper, y_init, u_init, w_init,
                 u_pred, w_pred, method: str = "nullspace") -> np.ndarray:
    """Predict ``y_pred`` by solving the regularized DDP problem for ``g``.

    minimize ``0.5*|H_y_init g - y_init|^2 + 0.5*e_g*|g|^2`` subject to the
    ``u_init, w_init, u_pred, w_pred`` block equalities.

    ``method="nullspace"`` eliminates the equalities with an orthonormal
    null-space basis and solves the reduced normal equations;
    ``method="cvxpy"`` hands the QP to a conic solver.
    """
    ny, nu, nw, nup, nwp = _dims(H)
    y_init = _vec(y_init, ny, "y_init")
    b = np.concatenate([_vec(u_init, nu, "u_init"), _vec(w_init, nw, "w_init"),
                        _vec(u_pred, nup, "u_pred"), _vec(w_pred, nwp, "w_pred")])
    A = H.H_constraints
    Hy = H.H_y_init
    n = H.n_cols
    if method == "nullspace":
        g0, *_ = np.linalg.lstsq(A, b, rcond=None)
        resid = np.linalg.norm(A @ g0 - b)
        if resid > 1e-8 * max(1.0, np.linalg.norm(b)):
            raise SolverError(f"DDP constraints infeasible (residual {resid:.3e})")
        Z = sla.null_space(A)
        if Z.shape[1] == 0:
            g = g0
        else:
            Q = Hy.T @ Hy + hyper.e_g * np.eye(n)
            rhs = Z.T @ (Hy.T @ y_init - Q @ g0)
            z = np.linalg.solve(Z.T @ Q @ Z, rhs)
            g = g0 + Z @ z
    elif method == "cvxpy":
        import cvxpy as cp
        gv = cp.Variable(n)
        obj = 0.5 * cp.sum_squares(Hy @ gv - y_init) + 0.5 * hyper.e_g * cp.sum_squares(gv)
        prob = cp.Problem(cp.Minimize(obj), [A @ gv == b])
        prob.solve(solver=cp.CLARABEL)
        if gv.value is None or prob.status not in ("optimal", "optimal_inaccurate"):
            raise SolverError(f"DDP QP failed: {prob.status}")
        g = gv.value
    else:
        raise ValueError(f"unknown method {method!r}")
    return H.H_y_pred @ g


def build_predictor(H: HankelSet, hyper: DdpHyper) -> DdpPredictor:
    """Extract the linear predictor from the KKT system of the DDP problem.

    ``G = [[H_yi' H_yi + e_g I, A'], [A, 0]]`` is factorized once with a
    symmetric-indefinite (Bunch-Kaufman) decomposition.  Solving
    ``G X = [H_yp'; 0]`` yields ``X' = H_yp G^-1[:n, :]``, whose column blocks
    are the coefficient matrices.
    """
    if H.t_init != hyper.t_init or H.N != hyper.N:
        raise ValueError("HankelSet depth does not match hyperparameters")
    A = H.H_constraints
    m, n = A.shape
    Hy = H.H_y_init
    G = np.zeros((n + m, n + m))
    G[:n, :n] = Hy.T @ Hy + hyper.e_g * np.eye(n)
    G[:n, n:] = A.T
    G[n:, :n] = A

    lu, ipiv, info = lapack.dsytrf(G, lower=1)
    if info > 0:
        raise DegenerateDataError("degenerate Hankel data; refuse predictor (singular KKT)")
    anorm = np.abs(G).sum(axis=0).max()
    rcond, info = lapack.dsycon(lu, ipiv, anorm, lower=1)
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if not cond <= MAX_CONDITION:
        raise DegenerateDataError(
            f"degenerate Hankel data; refuse predictor (condition {cond:.2e})")
    rhs = np.zeros((n + m, H.H_y_pred.shape[0]))
    rhs[:n] = H.H_y_pred.T
    X, info = lapack.dsytrs(lu, ipiv, rhs, lower=1)
    if info != 0:
        raise DegenerateDataError("KKT solve failed")
    K = X.T  # (N*n_y, n + m)

    _, nu, nw, nup, nwp = _dims(H)
    P_y_init = K[:, :n] @ Hy.T
    o = n
    P_u_init = K[:, o:o + nu]; o += nu
    P_w_init = K[:, o:o + nw]; o += nw
    P_u_pred = K[:, o:o + nup]; o += nup
    P_w_pred = K[:, o:o + nwp]
    mats = [np.ascontiguousarray(p) for p in
            (P_y_init, P_u_init, P_w_init, P_u_pred, P_w_pred)]
    for p in mats:
        p.setflags(write=False)
    return DdpPredictor(*mats, hyper=hyper, fingerprint=H.fingerprint(),
                        mode=H.mode, condition=float(cond))


def predict(pred: DdpPredictor, y_init, u_init, w_init, u_pred, w_pred) -> np.ndarray:
    """``y_pred`` as the sum of the five coefficient blocks times their inputs."""
    return (pred.free_response(y_init, u_init, w_init)
            + pred.P_u_pred @ _vec(u_pred, pred.P_u_pred.shape[1], "u_pred")
            + pred.P_w_pred @ _vec(w_pred, pred.P_w_pred.shape[1], "w_pred"))


@dataclass(frozen=True)
class ConsistencyReport:
    gamma: np.ndarray
    passed: bool
    fraction: float
    column_sums: np.ndarray = field(repr=False, default=None)

    def __bool__(self) -> bool:
        return self.passed


def check_consistency(pred: DdpPredictor, mode: Mode | str | None = None,
                      eta: float | None = None, atol: float = 1e-6) -> ConsistencyReport:
    """Sign test on the columns of ``P_u_pred``.

    In cooling mode a future power increase must lower the summed predicted
    temperature (column sum ``< -atol``); in heating mode it must raise it
    (``> atol``).  Passes when at least ``eta * n_u * N`` columns comply.
    """
    mode = Mode.parse(mode) if mode is not None else pred.mode
    eta = pred.hyper.eta if eta is None else eta
    sums = pred.P_u_pred.sum(axis=0)
    if mode is Mode.COOLING:
        gamma = (sums < -atol).astype(int)
    else:
        gamma = (sums > atol).astype(int)
    n = gamma.size
    passed = bool(gamma.sum() >= eta * n)
    return ConsistencyReport(gamma, passed, float(gamma.sum()) / n, sums)


@dataclass
class UpdateResult:
    predictor: DdpPredictor
    hankel: HankelSet
    accepted: bool
    reasons: list[str]


def _newer_than(segments, last_index: int) -> list[OperationalSegment]:
    out = []
    for s in segments:
        if s.end_index <= last_index:
            continue
        out.append(s.slice(max(s.start_index, last_index)))
    return out


def adaptive_update(current: DdpPredictor, hankel_set: HankelSet,
                    new_segments, hyper: DdpHyper | None = None) -> UpdateResult:
    """Refresh the Hankel data with newer segments and validate the result.

    Only samples newer than the current set are taken from ``new_segments``.
    The candidate keeps the fixed column budget; it is accepted when the PE
    test and the physical-consistency test both pass, otherwise the current
    predictor is returned unchanged.
    """
    hyper = hyper or current.hyper
    mode = hankel_set.mode
    fresh = [s for s in _newer_than(new_segments, hankel_set.last_index) if s.mode is mode]
    if not fresh:
        return UpdateResult(current, hankel_set, False, ["no_new_data"])
    try:
        cand = stack_segments(list(hankel_set.sources) + fresh, hyper, mode)
    except DataError:
        return UpdateResult(current, hankel_set, False, ["no_new_data"])
    if cand.fingerprint() == hankel_set.fingerprint():
        return UpdateResult(current, hankel_set, False, ["no_new_data"])

    reasons: list[str] = []
    pe = check_pe(cand, hyper.n_x)
    if not pe.ok:
        reasons.append("PE_fail")
        log.info("hankel update rejected: PE rank %d/%d", pe.rank, pe.required)
        return UpdateResult(current, hankel_set, False, reasons)
    try:
        new_pred = build_predictor(cand, hyper)
    except DegenerateDataError:
        reasons.append("PE_fail")
        return UpdateResult(current, hankel_set, False, reasons)
    cons = check_consistency(new_pred, mode, hyper.eta)
    if not cons.passed:
        reasons.append("consistency_fail")
        log.info("hankel update rejected: consistency fraction %.2f", cons.fraction)
        return UpdateResult(current, hankel_set, False, reasons)
    log.debug("hankel update accepted: %s -> %s", current.fingerprint, new_pred.fingerprint)
    return UpdateResult(new_pred, cand, True, reasons)


def initial_predictor(segments, hyper: DdpHyper, mode: Mode | str,
                      validate: bool = True) -> tuple[DdpPredictor, HankelSet]:
    """Build the first predictor for ``mode`` from historical segments."""
    H = stack_segments(segments, hyper, mode)
    if validate:
        pe = check_pe(H, hyper.n_x)
        if not pe.ok:
            raise DataError(
                f"initial data not persistently exciting (rank {pe.rank}/{pe.required})")
    return build_predictor(H, hyper), H

"""Affine disturbance-feedback policies and box-robust constraints.

All uncertain quantities are written in one disturbance basis: the
per-step deviations of the forecast disturbances, ``N*n_w`` weather
coordinates (time-major, channels contiguous) followed by ``N`` AGC
coordinates.  A decision or derived quantity is an
:class:`AffineExpression` ``nominal + gain @ delta``; fields may be numpy
arrays or cvxpy expressions, so the same algebra serves problem building
and a-posteriori checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np
import scipy.sparse as sp


def _is_expr(x) -> bool:
    return isinstance(x, cp.Expression)


def _shape(x) -> tuple:
    return tuple(x.shape)


@dataclass(frozen=True)
class BoxSet:
    """``{center + delta : |delta_k| <= half_width_k}``."""

    center: np.ndarray
    half_width: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, float).reshape(-1)
        r = np.asarray(self.half_width, float).reshape(-1)
        if c.shape != r.shape:
            raise ValueError("center and half_width differ in length")
        if np.any(r < 0):
            raise ValueError("negative radius in box")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_width", r)

    @property
    def dim(self) -> int:
        return self.center.size

    @classmethod
    def deviation(cls, N: int, w_radius, a_radius: float) -> "BoxSet":
        """Zero-centred box over ``N`` steps of weather and AGC deviations."""
        w_r = np.tile(np.asarray(w_radius, float).reshape(-1), N)
        r = np.concatenate([w_r, np.full(N, float(a_radius))])
        return cls(np.zeros_like(r), r)

    def vertices(self) -> np.ndarray:
        """All ``2^d`` vertices as rows (only sensible for small ``d``)."""
        d = self.dim
        signs = ((np.arange(2 ** d)[:, None] >> np.arange(d)) & 1) * 2 - 1
        return self.center + signs * self.half_width

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.center + rng.uniform(-1, 1, (n, self.dim)) * self.half_width


@dataclass(frozen=True)
class AffineExpression:
    """``nominal + gain @ delta`` with ``nominal`` (r,) and ``gain`` (r, d)."""

    nominal: object
    gain: object

    __array_ufunc__ = None  # let numpy defer ``M @ expr`` to __rmatmul__

    def __post_init__(self):
        n, g = _shape(self.nominal), _shape(self.gain)
        if len(n) != 1 or len(g) != 2 or n[0] != g[0]:
            raise ValueError(f"nominal {n} and gain {g} do not conform")

    @property
    def rows(self) -> int:
        return _shape(self.nominal)[0]

    @property
    def dim(self) -> int:
        return _shape(self.gain)[1]

    @classmethod
    def constant(cls, value, dim: int) -> "AffineExpression":
        v = np.asarray(value, float).reshape(-1)
        return cls(v, np.zeros((v.size, dim)))

    def _check(self, other: "AffineExpression"):
        if self.rows != other.rows or self.dim != other.dim:
            raise ValueError("affine expressions do not conform")

    def __add__(self, other):
        if isinstance(other, AffineExpression):
            self._check(other)
            out = AffineExpression(self.nominal + other.nominal, self.gain + other.gain)
            return with_pattern(out, _pattern(self) | _pattern(other))
        return with_pattern(AffineExpression(self.nominal + other, self.gain), _pattern(self))

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self):
        return with_pattern(AffineExpression(-self.nominal, -self.gain), _pattern(self))

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        return with_pattern(AffineExpression(self.nominal * scalar, self.gain * scalar),
                            _pattern(self))

    __rmul__ = __mul__

    def __rmatmul__(self, M):
        """Left multiplication by a constant matrix."""
        Ms = _shape(M)
        if Ms[-1] != self.rows:
            raise ValueError(f"map with {Ms[-1]} columns applied to {self.rows} rows")
        out = AffineExpression(M @ self.nominal, M @ self.gain)
        if _is_expr(M):
            return out
        absM = abs(M) if sp.issparse(M) else np.abs(np.asarray(M))
        return with_pattern(out, (absM @ _pattern(self).astype(float)) > 0)

    def __getitem__(self, idx):
        if isinstance(idx, int):
            idx = slice(idx, idx + 1)
        return with_pattern(AffineExpression(self.nominal[idx], self.gain[idx]),
                            _pattern(self)[idx])

    def value(self) -> "AffineExpression":
        """Numeric copy after a solve."""
        def num(x):
            if _is_expr(x):
                if x.value is None:
                    raise ValueError("expression has no value; solve first")
                return np.asarray(x.value, float).reshape(_shape(x))
            return np.asarray(x, float)
        return AffineExpression(num(self.nominal), num(self.gain))

    def evaluate(self, delta) -> np.ndarray:
        """Realized value for the disturbance deviation(s) ``delta``."""
        e = self.value()
        d = np.asarray(delta, float)
        return e.nominal + d @ e.gain.T if d.ndim == 2 else e.nominal + e.gain @ d


def causal_mask(rows: int, N: int, n_w: int, lag_w: int = 0, lag_a: int = 0,
                zero_rows: int = 0) -> np.ndarray:
    """Sparsity pattern of a causal gain over the deviation basis.

    Row ``k`` may see disturbance step ``j`` iff ``j <= k - 1 - lag``; ``lag=0``
    is strictly causal and ``lag=-1`` adds the same step.  The first
    ``zero_rows`` rows get no feedback at all.
    """
    k = np.arange(rows)[:, None]
    j = np.arange(N)[None, :]
    mw = np.repeat(j <= k - 1 - lag_w, n_w, axis=1)
    ma = j <= k - 1 - lag_a
    mask = np.hstack([mw, ma])
    mask[:zero_rows] = False
    return mask


@dataclass
class AffinePolicy:
    """Decision rule ``v + [M_w, M_a] @ delta`` over ``N`` steps.

    ``mask`` fixes the admissible gain entries; ``n_pinned`` leading entries
    of ``v`` are fixed to ``pinned`` (numbers or a cvxpy parameter).
    """

    nominal: object
    gain: object
    N: int
    n_w: int
    mask: np.ndarray
    n_pinned: int = 0

    @classmethod
    def variable(cls, N: int, n_w: int, lag_w: int = 0, lag_a: int = 0,
                 zero_rows: int = 0, pinned=None, name: str = "") -> "AffinePolicy":
        mask = causal_mask(N, N, n_w, lag_w, lag_a, zero_rows)
        rows, d = mask.shape
        idx = np.flatnonzero(mask.ravel())
        if idx.size:
            theta = cp.Variable(idx.size, name=f"{name}_gain")
            S = sp.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))),
                              shape=(rows * d, idx.size))
            gain = cp.reshape(S @ theta, (rows, d), order="C")
        else:
            gain = np.zeros((rows, d))
        n_pin = 0
        if pinned is None:
            nominal = cp.Variable(rows, name=f"{name}_nominal")
        else:
            n_pin = _shape(pinned)[0]
            free = cp.Variable(rows - n_pin, name=f"{name}_nominal")
            E_pin = sp.csr_matrix(np.eye(rows, n_pin))
            E_free = sp.csr_matrix(np.eye(rows, rows - n_pin, -n_pin))
            nominal = E_pin @ pinned + E_free @ free
        return cls(nominal, gain, N, n_w, mask, n_pin)

    @classmethod
    def fixed(cls, v, M_w=None, M_a=None, n_w: int = 1) -> "AffinePolicy":
        v = np.asarray(v, float).reshape(-1)
        N = v.size
        M_w = np.zeros((N, N * n_w)) if M_w is None else np.asarray(M_w, float)
        M_a = np.zeros((N, N)) if M_a is None else np.asarray(M_a, float)
        G = np.hstack([M_w, M_a])
        return cls(v, G, N, n_w, G != 0)

    @property
    def expression(self) -> AffineExpression:
        return with_pattern(AffineExpression(self.nominal, self.gain), self.mask)

    @property
    def M_w(self) -> np.ndarray:
        return self.expression.value().gain[:, :self.N * self.n_w]

    @property
    def M_a(self) -> np.ndarray:
        return self.expression.value().gain[:, self.N * self.n_w:]

    @property
    def v(self) -> np.ndarray:
        return self.expression.value().nominal

    def decide(self, delta) -> np.ndarray:
        return self.expression.evaluate(delta)


def _as_expression(x) -> AffineExpression:
    if isinstance(x, AffinePolicy):
        return x.expression
    if isinstance(x, AffineExpression):
        return x
    raise TypeError(f"expected an affine policy or expression, got {type(x).__name__}")


def compose_affine(policy, linear_map, offset_map=None) -> AffineExpression:
    """``linear_map @ policy + offset_map``, exactly, in the deviation basis.

    ``offset_map`` carries the part that does not pass through the policy:
    a constant, an :class:`AffineExpression` (e.g. the direct weather
    coefficients of a predictor) or ``None``.
    """
    expr = _as_expression(policy)
    M = linear_map if _is_expr(linear_map) or sp.issparse(linear_map) \
        else np.asarray(linear_map, float)
    out = M @ expr
    if offset_map is None:
        return out
    if isinstance(offset_map, AffineExpression):
        if offset_map.dim != out.dim or offset_map.rows != out.rows:
            raise ValueError("offset map does not conform")
        return out + offset_map
    off = offset_map
    if not _is_expr(off):
        off = np.asarray(off, float)
        if off.ndim and off.shape != (out.rows,):
            raise ValueError("offset map does not conform")
    return out + off


@dataclass
class RobustBlock:
    """Constraints and auxiliaries emitted by :func:`robustify_leq`."""

    constraints: list
    margin: object           # sum_k r_k t_k, shape (rows,)
    aux: object = None


def _pattern(expr: AffineExpression) -> np.ndarray:
    """Structurally nonzero gain entries (all entries when unknown)."""
    p = getattr(expr, "_pattern", None)
    if p is not None:
        return p
    if not _is_expr(expr.gain):
        return np.asarray(expr.gain) != 0
    return np.ones((expr.rows, expr.dim), bool)


def with_pattern(expr: AffineExpression, pattern) -> AffineExpression:
    """Attach a sparsity pattern used to size the robust auxiliaries."""
    object.__setattr__(expr, "_pattern", np.asarray(pattern, bool))
    return expr


def worst_case_margin(expr: AffineExpression, box: BoxSet) -> RobustBlock:
    """Epigraph of ``|gain| @ half_width`` restricted to nonzero radii.

    Returns the aux bounds ``t >= +-gain`` and the margin ``t @ r``; the
    margin is shared by upper and lower bounds on the same expression.
    Auxiliaries are created only for structurally nonzero gain entries.
    """
    if expr.dim != box.dim:
        raise ValueError("expression and box dimensions differ")
    active = box.half_width > 0
    G = expr.gain
    if not _is_expr(G):
        G = np.asarray(G)
        return RobustBlock([], np.abs(G[:, active]) @ box.half_width[active])
    pat = _pattern(expr) & active[None, :]
    idx = np.flatnonzero(pat.ravel())
    if idx.size == 0:
        return RobustBlock([], np.zeros(expr.rows))
    g = cp.vec(G, order="C")[idx]
    t = cp.Variable(idx.size, name="robust_aux")
    rows = idx // expr.dim
    R = sp.csr_matrix((box.half_width[idx % expr.dim], (rows, np.arange(idx.size))),
                      shape=(expr.rows, idx.size))
    return RobustBlock([t >= g, t >= -g], R @ t, t)


def _centered(expr: AffineExpression, box: BoxSet):
    if np.any(box.center != 0):
        return expr.nominal + expr.gain @ box.center
    return expr.nominal


def robustify_leq(expr: AffineExpression, bound, box: BoxSet, slack=None) -> list:
    """Deterministic counterpart of ``expr <= bound`` for every box point.

    ``nominal + sum_k r_k t_k <= bound`` with ``t_k >= +-gain_k``, which is
    the exact worst case of an affine function over a box.  An optional
    nonnegative ``slack`` is added to the bound.
    """
    blk = worst_case_margin(expr, box)
    rhs = bound if slack is None else bound + slack
    return blk.constraints + [_centered(expr, box) + blk.margin <= rhs]


def robustify_interval(expr: AffineExpression, lower, upper, box: BoxSet,
                       slack_lo=None, slack_hi=None) -> list:
    """``lower <= expr <= upper`` for every box point, sharing one aux set."""
    blk = worst_case_margin(expr, box)
    nom = _centered(expr, box)
    cons = list(blk.constraints)
    if upper is not None:
        cons.append(nom + blk.margin <= (upper if slack_hi is None else upper + slack_hi))
    if lower is not None:
        cons.append(nom - blk.margin >= (lower if slack_lo is None else lower - slack_lo))
    return cons


def enforce_equality_for_all(expr_lhs, expr_rhs) -> list:
    """Coefficient matching: equal nominal parts and equal gains."""
    lhs, rhs = _as_expression(expr_lhs), _as_expression(expr_rhs)
    lhs._check(rhs)
    return [lhs.nominal == rhs.nominal, lhs.gain == rhs.gain]

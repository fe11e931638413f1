"""Operational data handling: mode-tagged segments, Hankel matrices and the
persistent-excitation rank test.

Sample convention used throughout the package: row ``k`` of a segment holds
the input ``u_k`` applied during interval ``k``, the disturbance ``w_k``
acting during that interval and the indoor temperature ``y_k`` measured at
the *end* of the interval.  With this convention the most recent
measurement is always part of the initialization window.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SAMPLE_PERIOD_S = 900.0
#: inter-sample gap (in periods) above which a segment is split
GAP_TOLERANCE = 1.5
#: relative singular-value threshold for numerical rank (scaled by max dim)
RANK_RTOL = 1e-10


class DataError(ValueError):
    """Raised for malformed or insufficient operational data."""


class Mode(str, Enum):
    HEATING = "heating"
    COOLING = "cooling"

    @classmethod
    def parse(cls, value: "str | Mode") -> "Mode":
        if isinstance(value, Mode):
            return value
        v = str(value).strip().lower()
        if v in ("h", "heating"):
            return cls.HEATING
        if v in ("c", "cooling"):
            return cls.COOLING
        raise ValueError(f"unknown mode {value!r}")

    @property
    def code(self) -> str:
        return "H" if self is Mode.HEATING else "C"


def _as_2d(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class OperationalSegment:
    """Contiguous, single-mode chunk of operational data on the 15-min grid.

    ``u``, ``w`` and ``y`` are stored as ``(length, n)`` arrays.
    """

    start_index: int
    u: np.ndarray
    w: np.ndarray
    y: np.ndarray
    mode: Mode = Mode.COOLING

    def __post_init__(self):
        u, w, y = _as_2d(self.u, "u"), _as_2d(self.w, "w"), _as_2d(self.y, "y")
        if not (len(u) == len(w) == len(y)):
            raise ValueError(
                f"u, w, y lengths differ: {len(u)}, {len(w)}, {len(y)}")
        if len(u) < 1:
            raise ValueError("segment must hold at least one sample")
        for name, arr in (("u", u), ("w", w), ("y", y)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        object.__setattr__(self, "start_index", int(self.start_index))

    def __len__(self) -> int:
        return self.u.shape[0]

    @property
    def end_index(self) -> int:
        """Index one past the last sample."""
        return self.start_index + len(self)

    def slice(self, start: int, stop: int | None = None) -> "OperationalSegment":
        """Sub-segment by absolute sample index ``[start, stop)``."""
        stop = self.end_index if stop is None else stop
        a = max(start, self.start_index) - self.start_index
        b = min(stop, self.end_index) - self.start_index
        if b <= a:
            raise ValueError("empty slice")
        return OperationalSegment(self.start_index + a, self.u[a:b],
                                  self.w[a:b], self.y[a:b], self.mode)


@dataclass
class OperationalDataset:
    segments: list[OperationalSegment] = field(default_factory=list)

    def __iter__(self):
        return iter(self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    def for_mode(self, mode: Mode) -> list[OperationalSegment]:
        mode = Mode.parse(mode)
        return [s for s in self.segments if s.mode is mode]

    def window(self, start: int, stop: int) -> list[OperationalSegment]:
        """Segments clipped to the absolute index range ``[start, stop)``."""
        out = []
        for s in self.segments:
            if s.end_index <= start or s.start_index >= stop:
                continue
            out.append(s.slice(start, stop))
        return out

    @property
    def n_samples(self) -> int:
        return sum(len(s) for s in self.segments)


@dataclass(frozen=True)
class DdpHyper:
    """Hyperparameters of the data-driven predictor.

    ``T`` is the operational-data length per Hankel set; the number of
    Hankel columns kept is ``T - L + 1``.
    """

    T: int
    t_init: int
    N: int
    e_g: float = 0.01
    n_x: int = 4
    eta: float = 0.8

    def __post_init__(self):
        if self.t_init < 1 or self.N < 1:
            raise ValueError("t_init and N must be positive")
        if self.T < self.L:
            raise ValueError(f"T={self.T} must be at least L={self.L}")
        if not self.e_g > 0:
            raise ValueError("e_g must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.n_x < 0:
            raise ValueError("n_x must be non-negative")

    @property
    def L(self) -> int:
        return self.t_init + self.N

    @property
    def L_pe(self) -> int:
        return self.t_init + self.N + self.n_x

    @property
    def n_cols(self) -> int:
        """Column budget of a Hankel set."""
        return self.T - self.L + 1


def hankel(x, L: int) -> np.ndarray:
    """Block-Hankel matrix of depth ``L`` for a ``(T,)`` or ``(T, n)`` series.

    Column ``j`` stacks samples ``j .. j+L-1`` (each sample's ``n`` channels
    contiguous), giving an ``(L*n, T-L+1)`` matrix.
    """
    a = _as_2d(x, "x")
    T, n = a.shape
    if L < 1:
        raise ValueError("depth must be positive")
    if T < L:
        raise DataError(f"insufficient data: length {T} < depth {L}")
    win = sliding_window_view(a, L, axis=0)  # (T-L+1, n, L)
    return np.ascontiguousarray(win.transpose(0, 2, 1).reshape(T - L + 1, L * n).T)


def build_hankel(segment: OperationalSegment, L: int) -> dict[str, np.ndarray]:
    """Hankel matrices of depth ``L`` for the ``u``, ``w`` and ``y`` channels."""
    if len(segment) < L:
        raise DataError(
            f"insufficient data: segment of length {len(segment)} < depth {L}")
    return {"u": hankel(segment.u, L), "w": hankel(segment.w, L),
            "y": hankel(segment.y, L)}


@dataclass(frozen=True)
class HankelSet:
    """Init/pred Hankel blocks for ``u``, ``w`` and ``y``.

    ``sources`` holds exactly the data the columns were drawn from (the
    oldest segment is trimmed when columns were dropped), so deeper Hankel
    matrices for the PE test can be rebuilt from it.
    """

    H_u_init: np.ndarray
    H_u_pred: np.ndarray
    H_w_init: np.ndarray
    H_w_pred: np.ndarray
    H_y_init: np.ndarray
    H_y_pred: np.ndarray
    t_init: int
    N: int
    n_u: int = 1
    n_w: int = 2
    n_y: int = 1
    mode: Mode = Mode.COOLING
    sources: tuple[OperationalSegment, ...] = ()

    def __post_init__(self):
        n = self.H_u_init.shape[1]
        expect = {
            "H_u_init": self.t_init * self.n_u, "H_u_pred": self.N * self.n_u,
            "H_w_init": self.t_init * self.n_w, "H_w_pred": self.N * self.n_w,
            "H_y_init": self.t_init * self.n_y, "H_y_pred": self.N * self.n_y,
        }
        for name, rows in expect.items():
            m = getattr(self, name)
            if m.shape != (rows, n):
                raise ValueError(f"{name} has shape {m.shape}, expected {(rows, n)}")

    @property
    def n_cols(self) -> int:
        return self.H_u_init.shape[1]

    @property
    def L(self) -> int:
        return self.t_init + self.N

    @property
    def H_constraints(self) -> np.ndarray:
        """Stacked ``[u_init; w_init; u_pred; w_pred]`` blocks."""
        return np.vstack([self.H_u_init, self.H_w_init, self.H_u_pred, self.H_w_pred])

    def fingerprint(self) -> str:
        h = hashlib.sha1()
        for m in (self.H_u_init, self.H_u_pred, self.H_w_init, self.H_w_pred,
                  self.H_y_init, self.H_y_pred):
            h.update(np.ascontiguousarray(m).tobytes())
        h.update(f"{self.t_init},{self.N},{self.mode.value}".encode())
        return h.hexdigest()[:16]

    @property
    def last_index(self) -> int:
        """One past the newest sample used (or -1 when empty)."""
        return max((s.end_index for s in self.sources), default=-1)


def _split(H: np.ndarray, t_init: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    return H[: t_init * n], H[t_init * n:]


def stack_segments(segments: Iterable[OperationalSegment], hyper: DdpHyper,
                   mode: Mode | str) -> HankelSet:
    """Assemble a :class:`HankelSet` from the segments matching ``mode``.

    Segments shorter than ``L`` are skipped.  Columns are ordered oldest to
    newest; when more than ``hyper.n_cols`` are available the oldest ones are
    dropped.
    """
    mode = Mode.parse(mode)
    L = hyper.L
    usable = sorted((s for s in segments if s.mode is mode and len(s) >= L),
                    key=lambda s: s.start_index)
    if not usable:
        raise DataError(f"no data for mode {mode.value}")

    budget = hyper.n_cols
    # walk newest -> oldest and keep whole or trimmed segments until the budget
    kept: list[OperationalSegment] = []
    remaining = budget
    for seg in reversed(usable):
        if remaining <= 0:
            break
        cols = len(seg) - L + 1
        if cols > remaining:
            seg = seg.slice(seg.end_index - (remaining + L - 1))
            cols = remaining
        kept.append(seg)
        remaining -= cols
    kept.reverse()

    blocks = [build_hankel(s, L) for s in kept]
    Hu = np.hstack([b["u"] for b in blocks])
    Hw = np.hstack([b["w"] for b in blocks])
    Hy = np.hstack([b["y"] for b in blocks])
    n_u, n_w, n_y = kept[0].u.shape[1], kept[0].w.shape[1], kept[0].y.shape[1]
    Hu_i, Hu_p = _split(Hu, hyper.t_init, n_u)
    Hw_i, Hw_p = _split(Hw, hyper.t_init, n_w)
    Hy_i, Hy_p = _split(Hy, hyper.t_init, n_y)
    return HankelSet(Hu_i, Hu_p, Hw_i, Hw_p, Hy_i, Hy_p, hyper.t_init, hyper.N,
                     n_u, n_w, n_y, mode, tuple(kept))


@dataclass(frozen=True)
class PEResult:
    ok: bool
    rank: int
    required: int
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def numerical_rank(M: np.ndarray) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    tol = s[0] * RANK_RTOL * max(M.shape)
    return int(np.count_nonzero(s > tol))


def check_pe(H_set: HankelSet, n_x: int) -> PEResult:
    """Persistent-excitation test of order ``L_PE = t_init + N + n_x``.

    Depth-``L_PE`` Hankel matrices of ``u`` and ``w`` are rebuilt from the
    set's source segments and stacked; the test passes iff the stack has
    full row rank ``L_PE * (n_u + n_w)``.
    """
    L_pe = H_set.L + n_x
    required = L_pe * (H_set.n_u + H_set.n_w)
    blocks = [np.vstack([hankel(s.u, L_pe), hankel(s.w, L_pe)])
              for s in H_set.sources if len(s) >= L_pe]
    if not blocks:
        return PEResult(False, 0, required, "not enough columns")
    M = np.hstack(blocks)
    if M.shape[1] < required:
        return PEResult(False, numerical_rank(M), required, "not enough columns")
    r = numerical_rank(M)
    return PEResult(r == required, r, required, None if r == required else "rank deficient")


class DataLog:
    """Append-only operational log on the 15-minute grid.

    Index ``k`` of the log is the global sample index.  Segments are cut at
    mode changes.
    """

    def __init__(self, n_w: int = 2, capacity: int = 4096):
        self.n_w = n_w
        self._u = np.empty(capacity)
        self._w = np.empty((capacity, n_w))
        self._y = np.empty(capacity)
        self._mode: list[Mode] = []

    def __len__(self) -> int:
        return len(self._mode)

    def append(self, u: float, w, y: float, mode: Mode) -> None:
        k = len(self._mode)
        if k == self._u.size:
            grow = max(k, 1)
            self._u = np.concatenate([self._u, np.empty(grow)])
            self._w = np.vstack([self._w, np.empty((grow, self.n_w))])
            self._y = np.concatenate([self._y, np.empty(grow)])
        self._u[k] = u
        self._w[k] = np.asarray(w, float).reshape(self.n_w)
        self._y[k] = y
        self._mode.append(Mode.parse(mode))

    @property
    def u(self) -> np.ndarray:
        return self._u[:len(self)]

    @property
    def w(self) -> np.ndarray:
        return self._w[:len(self)]

    @property
    def y(self) -> np.ndarray:
        return self._y[:len(self)]

    @property
    def modes(self) -> list[Mode]:
        return list(self._mode)

    def init_windows(self, t_init: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(y_init, u_init, w_init)`` over the newest ``t_init`` samples."""
        n = len(self)
        if n < t_init:
            raise DataError(f"insufficient data: {n} samples < t_init={t_init}")
        return (self._y[n - t_init:n].copy(), self._u[n - t_init:n].copy(),
                self._w[n - t_init:n].reshape(-1).copy())

    def segments(self, start: int = 0, stop: int | None = None) -> list[OperationalSegment]:
        stop = len(self) if stop is None else min(stop, len(self))
        out = []
        a = max(start, 0)
        while a < stop:
            b = a + 1
            while b < stop and self._mode[b] is self._mode[a]:
                b += 1
            out.append(OperationalSegment(a, self._u[a:b].copy(), self._w[a:b].copy(),
                                          self._y[a:b].copy(), self._mode[a]))
            a = b
        return out


# --- CSV I/O -------------------------------------------------------------

CSV_HEADER = ("t", "u", "w1", "w2", "y", "mode")


def _parse_time(raw: str) -> float:
    """Return the sample position in periods."""
    raw = raw.strip()
    try:
        return float(int(raw))
    except ValueError:
        pass
    ts = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    return ts.timestamp() / SAMPLE_PERIOD_S


def read_dataset(path: str | Path) -> OperationalDataset:
    """Read a ``t,u,w1,w2,y,mode`` CSV into mode-tagged segments.

    ``t`` is either an integer sample index or an ISO-8601 timestamp.  A new
    segment starts at every gap longer than 1.5 periods and at every mode
    change.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such data file: {path}")
    rows: list[tuple[float, float, float, float, float, Mode]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(CSV_HEADER):
                raise DataError(f"{path}:{lineno}: expected 6 fields, got {len(rec)}")
            try:
                t = _parse_time(rec[0])
                vals = [float(c) for c in rec[1:5]]
                mode = Mode.parse(rec[5])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: malformed row ({exc})") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}:{lineno}: non-finite value")
            if rows and t <= rows[-1][0]:
                raise DataError(f"{path}:{lineno}: unsorted data")
            rows.append((t, *vals, mode))
    if not rows:
        raise DataError(f"{path}: no data rows")

    t0 = rows[0][0]
    segments: list[OperationalSegment] = []
    chunk: list[tuple] = []

    def flush():
        if chunk:
            arr = np.array([r[1:5] for r in chunk])
            start = int(round(chunk[0][0] - t0))
            segments.append(OperationalSegment(start, arr[:, 0], arr[:, 1:3],
                                               arr[:, 3], chunk[0][5]))

    for r in rows:
        if chunk and (r[0] - chunk[-1][0] > GAP_TOLERANCE or r[5] is not chunk[-1][5]):
            flush()
            chunk = []
        chunk.append(r)
    flush()
    return OperationalDataset(segments)


def write_dataset(dataset: OperationalDataset | Sequence[OperationalSegment],
                  path: str | Path) -> None:
    """Write segments as integer-indexed CSV (inverse of :func:`read_dataset`)."""
    segs = sorted(dataset, key=lambda s: s.start_index)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for s in segs:
            for k in range(len(s)):
                w.writerow([s.start_index + k, repr(float(s.u[k, 0])),
                            repr(float(s.w[k, 0])), repr(float(s.w[k, 1])),
                            repr(float(s.y[k, 0])), s.mode.code])

"""Fanger PMV/PPD thermal-comfort indices."""

from __future__ import annotations

import math

import numpy as np

#: fixed conditions of the comparison: air speed [m/s], RH [%], clo, met, work [met]
DEFAULTS = dict(vel=0.1, rh=50.0, clo=0.5, met=1.2, wme=0.0)


def pmv(ta: float, tr: float | None = None, vel: float = 0.1, rh: float = 50.0,
        clo: float = 0.5, met: float = 1.2, wme: float = 0.0, tol: float = 1e-6,
        max_iter: int = 500) -> float:
    """Predicted Mean Vote from the Fanger heat balance.

    ``tr`` defaults to the air temperature.  The clothing surface temperature
    is found by fixed-point iteration to ``tol`` (in units of 100 K).
    """
    tr = ta if tr is None else tr
    pa = rh * 10.0 * math.exp(16.6536 - 4030.183 / (ta + 235.0))
    icl = 0.155 * clo
    m = met * 58.15
    w = wme * 58.15
    mw = m - w
    fcl = 1.0 + 1.29 * icl if icl <= 0.078 else 1.05 + 0.645 * icl
    hcf = 12.1 * math.sqrt(vel)
    taa = ta + 273.0
    tra = tr + 273.0
    tcla = taa + (35.5 - ta) / (3.5 * icl + 0.1)

    p1 = icl * fcl
    p2 = p1 * 3.96
    p3 = p1 * 100.0
    p4 = p1 * taa
    p5 = 308.7 - 0.028 * mw + p2 * (tra / 100.0) ** 4
    xn = tcla / 100.0
    xf = tcla / 50.0
    hc = hcf
    for _ in range(max_iter):
        if abs(xn - xf) <= tol:
            break
        xf = (xf + xn) / 2.0
        hcn = 2.38 * abs(100.0 * xf - taa) ** 0.25
        hc = max(hcf, hcn)
        xn = (p5 + p4 * hc - p2 * xf ** 4) / (100.0 + p3 * hc)
    else:
        raise RuntimeError("PMV clothing temperature iteration did not converge")
    tcl = 100.0 * xn - 273.0

    hl1 = 3.05e-3 * (5733.0 - 6.99 * mw - pa)          # skin diffusion
    hl2 = 0.42 * (mw - 58.15) if mw > 58.15 else 0.0   # sweating
    hl3 = 1.7e-5 * m * (5867.0 - pa)                   # latent respiration
    hl4 = 0.0014 * m * (34.0 - ta)                     # dry respiration
    hl5 = 3.96 * fcl * (xn ** 4 - (tra / 100.0) ** 4)  # radiation
    hl6 = fcl * hc * (tcl - ta)                        # convection
    ts = 0.303 * math.exp(-0.036 * m) + 0.028
    return ts * (mw - hl1 - hl2 - hl3 - hl4 - hl5 - hl6)


def ppd(pmv_value):
    """Predicted Percentage Dissatisfied [%] as a function of PMV."""
    p = np.asarray(pmv_value, float)
    out = 100.0 - 95.0 * np.exp(-0.03353 * p ** 4 - 0.2179 * p ** 2)
    return float(out) if out.ndim == 0 else out


def comfort_metrics(y_trace, steps_per_day: int = 96, **conditions):
    """PMV and PPD per sample plus the daily mean PPD.

    Returns ``(pmv_series, ppd_series, daily_mean_ppd)``; a trailing partial
    day is averaged over the samples it has.
    """
    kw = {**DEFAULTS, **conditions}
    y = np.asarray(y_trace, float).reshape(-1)
    pm = np.array([pmv(t, **kw) for t in y])
    pp = ppd(pm) if pm.size else np.empty(0)
    pp = np.atleast_1d(pp)
    n_days = int(np.ceil(len(y) / steps_per_day))
    daily = np.array([pp[d * steps_per_day:(d + 1) * steps_per_day].mean()
                      for d in range(n_days)])
    return pm, pp, daily

"""Weighted log-log power-law fits."""
from __future__ import annotations

import numpy as np


def fit_loglog(points):
    """Fit log y = slope log x + intercept.

    ``points`` is a sequence of (x, y, stderr); stderr may be None or 0 for an
    unweighted fit.  Weights are 1/(stderr/y)^2 and the slope error comes from
    the weighted normal equations.  Returns (slope, intercept, slope_stderr).
    """
    pts = [tuple(p) + (None,) * (3 - len(p)) for p in points]
    if len(pts) < 3:
        raise ValueError("fit_loglog needs at least 3 points")
    x = np.array([p[0] for p in pts], dtype=float)
    y = np.array([p[1] for p in pts], dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("fit_loglog needs positive x and y")
    se = np.array([np.nan if p[2] is None else p[2] for p in pts], dtype=float)
    lx, ly = np.log(x), np.log(y)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    weighted = np.all(np.isfinite(se)) and np.all(se > 0)
    w = (y / se) ** 2 if weighted else np.ones_like(lx)
    AtW = A.T * w
    cov = np.linalg.inv(AtW @ A)
    slope, icpt = cov @ (AtW @ ly)
    if not weighted:
        resid = ly - A @ np.array([slope, icpt])
        dof = max(len(lx) - 2, 1)
        cov = cov * float(resid @ resid) / dof
    return float(slope), float(icpt), float(np.sqrt(cov[0, 0]))

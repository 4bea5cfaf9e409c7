"""Log-log slope fits for convergence scans."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    ci: float
    monotone: bool

    @property
    def reliable(self) -> bool:
        return self.monotone and np.isfinite(self.slope)


def fit_loglog(h, r, level: float = 0.95) -> SlopeFit:
    """Least-squares slope of ``log r`` against ``log h`` with a ``level`` confidence half-width."""
    return fit_semilog(np.log(np.asarray(h, dtype=float)), r, level, _mono_x=np.asarray(h, dtype=float))


def fit_semilog(x, r, level: float = 0.95, _mono_x=None) -> SlopeFit:
    """Least-squares slope of ``log r`` against ``x``."""
    x = np.asarray(x, dtype=float)
    r = np.asarray(r, dtype=float)
    y = np.log(r)
    if x.size < 2:
        return SlopeFit(float("nan"), float("nan"), float("nan"), False)
    res = stats.linregress(x, y)
    if x.size > 2:
        ci = float(stats.t.ppf(0.5 + level / 2, x.size - 2) * res.stderr)
    else:
        ci = float("nan")
    order = np.argsort(x if _mono_x is None else _mono_x)
    d = np.diff(r[order])
    monotone = bool(np.all(d > 0) or np.all(d < 0))
    return SlopeFit(float(res.slope), float(res.intercept), ci, monotone)

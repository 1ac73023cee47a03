"""Welch's unequal-variance two-sample t-test."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

ALPHA = 0.05


@dataclass(frozen=True)
class WelchResult:
    t: float
    p: float
    df: float
    significant: bool
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"t": self.t, "p": self.p, "df": self.df, "significant": self.significant,
                "degenerate": self.degenerate}


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) via the regularized incomplete beta."""
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def welch_ttest(a, b, alpha: float = ALPHA) -> WelchResult:
    """Welch's t with Welch-Satterthwaite degrees of freedom.

    When both samples have zero variance the statistic is undefined: equal
    means give ``t = 0, p = 1`` and different means give ``t = +-inf, p = 0``,
    both flagged ``degenerate``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two values")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    se2 = va + vb
    df_naive = float(len(a) + len(b) - 2)
    if se2 == 0.0:
        if ma == mb:
            return WelchResult(0.0, 1.0, df_naive, False, True)
        return WelchResult(math.copysign(math.inf, ma - mb), 0.0, df_naive, True, True)
    t = float((ma - mb) / math.sqrt(se2))
    df = float(se2 ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1)))
    p = student_t_sf2(t, df)
    return WelchResult(t, p, df, p < alpha)

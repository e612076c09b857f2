"""Two-sample t-tests for TD vs ASD group comparisons.

The two-sided p-value uses the identity ``P(|T| > t) = I_x(df/2, 1/2)`` with
``x = df / (df + t^2)``, where ``I`` is the regularized incomplete beta
function, evaluated with the modified Lentz continued fraction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

_EPS = 1e-16
_TINY = 1e-300


def _beta_cf(a: float, b: float, x: float, max_iter: int = 500) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)`` for ``a, b > 0`` and ``0 <= x <= 1``."""
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    if math.isnan(t):
        return float("nan")
    if math.isinf(t):
        return 0.0
    return betainc_regularized(df / 2.0, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class GroupStats:
    variable: str
    td_mean: float
    asd_mean: float
    t_value: float
    p_value: float
    df: float
    n_td: int
    n_asd: int


def _mean_var(xs: Sequence[float]) -> tuple[float, float]:
    n = len(xs)
    m = math.fsum(xs) / n
    return m, math.fsum((x - m) ** 2 for x in xs) / (n - 1)


def group_ttest(td_samples: Sequence[float], asd_samples: Sequence[float], variable: str = "", equal_var: bool = False) -> GroupStats:
    """Two-sample t-test of TD minus ASD; Welch's unequal-variance form by default."""
    td, asd = list(td_samples), list(asd_samples)
    if len(td) < 2 or len(asd) < 2:
        raise ValueError("each group needs at least 2 samples")
    n1, n2 = len(td), len(asd)
    m1, v1 = _mean_var(td)
    m2, v2 = _mean_var(asd)
    if equal_var:
        df = n1 + n2 - 2.0
        sp2 = ((n1 - 1) * v1 + (n2 - 1) * v2) / df
        se2 = sp2 * (1.0 / n1 + 1.0 / n2)
    else:
        a, b = v1 / n1, v2 / n2
        se2 = a + b
        df = se2 * se2 / (a * a / (n1 - 1) + b * b / (n2 - 1)) if se2 > 0 else float(n1 + n2 - 2)
    diff = m1 - m2
    if se2 == 0:
        if diff == 0:
            return GroupStats(variable, m1, m2, 0.0, 1.0, df, n1, n2)
        t = math.copysign(math.inf, diff)
    else:
        t = diff / math.sqrt(se2)
    p = t_two_sided_p(t, df)
    return GroupStats(variable, m1, m2, t, min(max(p, 0.0), 1.0), df, n1, n2)

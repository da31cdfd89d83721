"""
Student's t tail probabilities via the regularized incomplete beta function.

The incomplete beta is evaluated with the modified Lentz continued fraction;
the two-sided p-value of t with nu degrees of freedom is
I_{nu/(nu+t^2)}(nu/2, 1/2).
"""

import math
from typing import Optional, Sequence, Tuple

import numpy as np

from ..utils.errors import ContractError, DegreesOfFreedomError, NumericFailure

CF_EPS = 1e-15
CF_TINY = 1e-300
CF_MAX_ITER = 10000


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Continued fraction part of I_x(a, b) (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < CF_TINY:
        d = CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < CF_TINY:
            d = CF_TINY
        c = 1.0 + aa / c
        if abs(c) < CF_TINY:
            c = CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < CF_TINY:
            d = CF_TINY
        c = 1.0 + aa / c
        if abs(c) < CF_TINY:
            c = CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < CF_EPS:
            return h
    raise NumericFailure(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float, one_minus_x: Optional[float] = None) -> float:
    """
    I_x(a, b) for a, b > 0 and 0 <= x <= 1.

    ``one_minus_x`` may be passed when 1 - x is known more precisely than the
    subtraction would give.
    """
    if a <= 0 or b <= 0:
        raise ContractError(f"beta parameters must be positive, got a={a}, b={b}")
    y = 1.0 - x if one_minus_x is None else one_minus_x
    if x <= 0.0:
        return 0.0
    if y <= 0.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log(y))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, y) / b


def t_pvalue(t: float, dof: int) -> float:
    """Two-sided p-value P(|T| >= |t|) for Student's t with ``dof`` degrees of freedom."""
    if dof < 1:
        raise DegreesOfFreedomError(f"degrees of freedom must be >= 1, got {dof}")
    if math.isnan(t):
        raise ContractError("t statistic is NaN")
    if math.isinf(t):
        return 0.0
    t_sq = t * t
    if t_sq == 0.0:
        return 1.0
    denom = dof + t_sq
    p = regularized_incomplete_beta(dof / 2.0, 0.5, dof / denom, one_minus_x=t_sq / denom)
    return min(1.0, max(0.0, p))


def two_sample_t_test(a: Sequence[float], b: Sequence[float]) -> Tuple[float, float, int]:
    """
    Pooled-variance two-sample t-test.

    Returns:
        (t, two-sided p, degrees of freedom); t > 0 when mean(b) > mean(a).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dof = len(a) + len(b) - 2
    if len(a) < 1 or len(b) < 1 or dof < 1:
        raise DegreesOfFreedomError(f"two-sample t-test needs n1 + n2 >= 3, got {len(a)} and {len(b)}")
    diff = float(b.mean() - a.mean())
    pooled = (np.sum((a - a.mean()) ** 2) + np.sum((b - b.mean()) ** 2)) / dof
    se = math.sqrt(pooled * (1.0 / len(a) + 1.0 / len(b)))
    if se == 0.0:
        if diff == 0.0:
            return 0.0, 1.0, dof
        return math.copysign(math.inf, diff), 0.0, dof
    t = diff / se
    return t, t_pvalue(t, dof), dof

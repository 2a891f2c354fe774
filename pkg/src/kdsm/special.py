"""Scalar special functions used by the tail-statistics layer.

Everything here works on plain Python floats in double precision.
Quantiles are found by bisection, which always converges; accuracy is
limited by the accuracy of the CDF being inverted.
"""

import math
from dataclasses import dataclass

from .errors import DomainError, NumericError

SQRT2 = math.sqrt(2.0)
_TINY = 1e-300
_EPS = 1e-16
_CF_TOL = 1e-15
_MAX_ITER = 10_000


@dataclass(frozen=True)
class TailQuery:
    """A tail level ``tau`` and coverage level ``alpha``, both in (0, 1)."""

    tau: float
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise DomainError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")


def ln_gamma(x):
    """Natural log of the gamma function for ``x > 0``."""
    if not x > 0.0 or not math.isfinite(x):
        raise DomainError(f"ln_gamma requires a finite x > 0, got {x}")
    return math.lgamma(x)


def std_normal_cdf(x):
    """Standard normal CDF, computed through ``erfc`` to keep tails accurate."""
    return 0.5 * math.erfc(-x / SQRT2)


def std_normal_sf(x):
    """Standard normal survival function ``1 - cdf(x)``."""
    return 0.5 * math.erfc(x / SQRT2)


def std_normal_pdf(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


# Acklam's rational approximation; refined below by one Halley step.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def std_normal_quantile(p):
    """Inverse of the standard normal CDF on (0, 1)."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    # Halley refinement. The residual is taken on whichever tail is smaller so
    # that p close to 1 does not lose digits to cancellation.
    if x > 0.0:
        e = (1.0 - p) - std_normal_sf(x)
    else:
        e = std_normal_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def _lower_gamma_series(a, x):
    # P(a, x) by its power series; converges quickly for x < a + 1.
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise NumericError(f"incomplete gamma series did not converge (a={a}, x={x})")


def _upper_gamma_cf(a, x):
    # Q(a, x) by Lentz's continued fraction; converges for x >= a + 1.
    log_front = -x + a * math.log(x) - math.lgamma(a)
    if log_front < -745.0:
        return 0.0
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_TOL:
            return math.exp(log_front) * h
    raise NumericError(f"incomplete gamma continued fraction did not converge (a={a}, x={x})")


def reg_upper_inc_gamma(a, x):
    """Regularized upper incomplete gamma ``Q(a, x) = Gamma(a, x) / Gamma(a)``."""
    if not a > 0.0:
        raise DomainError(f"a must be > 0, got {a}")
    if not x >= 0.0:
        raise DomainError(f"x must be >= 0, got {x}")
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _lower_gamma_series(a, x))
    return min(1.0, _upper_gamma_cf(a, x))


def _beta_cf(a, b, x):
    # Continued fraction for the incomplete beta function (modified Lentz).
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER):
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
        if abs(delta - 1.0) < _CF_TOL:
            return h
    raise NumericError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def reg_inc_beta(a, b, x):
    """Regularized incomplete beta ``I_x(a, b)`` for ``a, b > 0``, ``0 <= x <= 1``."""
    if not (a > 0.0 and b > 0.0):
        raise DomainError(f"a and b must be > 0, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def _bisect_decreasing(f, target, lo, hi, rel_tol=1e-13, max_iter=400):
    """Solve f(x) = target for a decreasing f bracketed by [lo, hi]."""
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if f(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rel_tol * hi:
            return 0.5 * (lo + hi)
    raise NumericError(f"bisection did not converge on [{lo}, {hi}]")


def _check_tail(tau):
    if not 0.0 < tau < 0.5:
        raise DomainError(f"tail probability must lie in (0, 0.5), got {tau}")


def ggd_survival(x, beta):
    """Survival function of the unit-scale density proportional to exp(-|x|^beta), x >= 0."""
    return 0.5 * reg_upper_inc_gamma(1.0 / beta, x ** beta)


def ggd_quantile(beta, tau):
    """Upper ``1 - tau/2`` quantile of the unit-scale generalised Gaussian.

    The density is proportional to ``exp(-|x|**beta)``; its survival
    function is ``Q(1/beta, x**beta) / 2``.
    """
    if not 0.2 <= beta <= 200.0:
        raise DomainError(f"beta must lie in [0.2, 200], got {beta}")
    _check_tail(tau)
    a = 1.0 / beta
    hi = 4.0 * math.log(2.0 / tau) ** a
    # the asymptotic bracket is too tight for very small beta; widen until it holds
    while reg_upper_inc_gamma(a, hi ** beta) > tau:
        hi *= 2.0
        if not math.isfinite(hi):
            raise NumericError(f"could not bracket GGD quantile (beta={beta}, tau={tau})")
    return _bisect_decreasing(lambda q: reg_upper_inc_gamma(a, q ** beta), tau, 0.0, hi)


def student_t_sf(t, nu):
    """Survival function of the raw Student-t with ``nu`` degrees of freedom, t >= 0."""
    return 0.5 * reg_inc_beta(0.5 * nu, 0.5, nu / (nu + t * t))


def student_t_quantile(nu, tau):
    """Upper ``1 - tau/2`` quantile of the raw (unit-scale) Student-t."""
    if not nu > 4.0:
        raise DomainError(f"nu must be > 4, got {nu}")
    _check_tail(tau)
    half = 0.5 * tau
    hi = max(1.0, std_normal_quantile(1.0 - half))
    while student_t_sf(hi, nu) > half:
        hi *= 2.0
        if not math.isfinite(hi):
            raise NumericError(f"could not bracket t quantile (nu={nu}, tau={tau})")
    return _bisect_decreasing(lambda t: student_t_sf(t, nu), half, 0.0, hi)

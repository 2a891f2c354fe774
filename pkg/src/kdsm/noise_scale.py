"""Per-feature noise scales from marginal tail statistics.

Four rules are available:

``cf``
    affine rule ``sigma_base * (1 + c * (kappa - 3))``.
``ggd``
    exact generalised-Gaussian tail radius ratio
    ``sigma_base * R_tau(beta_j) / R_tau(2)`` with ``beta_j`` matched to
    the feature kurtosis.
``iqr``
    ``sigma_base * 1.349 / IQR_j``; a Gaussian feature maps to ``sigma_base``.
``global``
    ``sigma_base`` for every feature.

All sigmas are in standardised-feature units and clipped to ``clip``.
"""

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import special
from .errors import DomainError, InvalidInputError, NumericError

RULES = ("cf", "ggd", "iqr", "global")
GAUSSIAN_IQR = 2.0 * special.std_normal_quantile(0.75)  # 1.3489...
# tau below which the CF slope is positive: 2 * (1 - Phi(sqrt(3)))
CF_POSITIVE_TAU = 2.0 * special.std_normal_sf(math.sqrt(3.0))
GGD_MONOTONE_TAU = 0.028
STUDENT_T_MONOTONE_TAU = 0.031
GGD_KAPPA_RANGE = (1.9, 50.0)

DEFAULT_SIGMA_BASE = 0.5
DEFAULT_C = 0.33
DEFAULT_CLIP = (0.1, 2.0)
DEFAULT_TAU = 1e-3


def _check_clip(clip):
    lo, hi = clip
    if not (lo > 0.0 and lo <= hi):
        raise InvalidInputError(f"clip range must satisfy 0 < min <= max, got {clip}")
    return float(lo), float(hi)


def _check_tau(tau):
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")


def z_tau(tau):
    """Two-sided Gaussian critical value ``Phi^-1(1 - tau/2)``."""
    _check_tau(tau)
    # lower quantile avoids the rounding in 1 - tau/2
    return -special.std_normal_quantile(0.5 * tau)


def cf_sigma(kappa, sigma_base, c, clip=DEFAULT_CLIP):
    lo, hi = _check_clip(clip)
    if not sigma_base > 0.0:
        raise InvalidInputError(f"sigma_base must be > 0, got {sigma_base}")
    raw = sigma_base * (1.0 + c * (kappa - 3.0))
    return min(max(raw, lo), hi)


def cf_slope(tau):
    """First-order optimal slope ``(z_tau**2 - 3) / 24``."""
    z = z_tau(tau)
    return (z * z - 3.0) / 24.0


def cf_tail_radius(kappa, tau):
    """Cornish-Fisher approximation ``z + (kappa - 3) (z**3 - 3 z) / 24``."""
    if tau >= CF_POSITIVE_TAU:
        warnings.warn(f"tau={tau} is outside the positive-slope regime (< {CF_POSITIVE_TAU:.4f})",
                      stacklevel=2)
    z = z_tau(tau)
    return z + (kappa - 3.0) * (z ** 3 - 3.0 * z) / 24.0


def cf_radius_slope(tau):
    """d R_tau / d kappa under the Cornish-Fisher approximation."""
    z = z_tau(tau)
    return (z ** 3 - 3.0 * z) / 24.0


def ggd_kurtosis(beta):
    """Kurtosis ``Gamma(5/b) Gamma(1/b) / Gamma(3/b)**2`` of the GGD family."""
    if not beta > 0.0:
        raise DomainError(f"beta must be > 0, got {beta}")
    return math.exp(special.ln_gamma(5.0 / beta) + special.ln_gamma(1.0 / beta)
                    - 2.0 * special.ln_gamma(3.0 / beta))


def ggd_variance(beta):
    """Variance ``Gamma(3/b) / Gamma(1/b)`` of the unit-scale GGD."""
    return math.exp(special.ln_gamma(3.0 / beta) - special.ln_gamma(1.0 / beta))


def ggd_shape_from_kurtosis(kappa):
    """Shape ``beta`` whose GGD kurtosis equals ``kappa``.

    ``kappa`` is clipped to [1.9, 50] first (the family only reaches
    kurtosis above 1.8). Kurtosis is strictly decreasing in ``beta``, so
    bisection on ``log(beta)`` is safe.
    """
    lo_k, hi_k = GGD_KAPPA_RANGE
    if kappa < lo_k or kappa > hi_k:
        if kappa <= 1.8:
            warnings.warn(f"kurtosis {kappa} is not attainable by a GGD; clipped to {lo_k}",
                          stacklevel=2)
        kappa = min(max(kappa, lo_k), hi_k)
    lo, hi = math.log(0.2), math.log(200.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ggd_kurtosis(math.exp(mid)) > kappa:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            return math.exp(0.5 * (lo + hi))
    raise NumericError(f"GGD shape inversion did not converge for kappa={kappa}")


def ggd_tail_radius(beta, tau):
    """Unit-variance GGD tail radius ``q(beta, tau) / sqrt(v(beta))``."""
    if tau > GGD_MONOTONE_TAU:
        warnings.warn(f"tau={tau} exceeds the GGD monotone regime (~{GGD_MONOTONE_TAU})",
                      stacklevel=2)
    return special.ggd_quantile(beta, tau) / math.sqrt(ggd_variance(beta))


def student_t_kurtosis(nu):
    if not nu > 4.0:
        raise DomainError(f"nu must be > 4, got {nu}")
    return 3.0 + 6.0 / (nu - 4.0)


def student_t_nu_from_kurtosis(kappa):
    if not kappa > 3.0:
        raise DomainError(f"Student-t kurtosis must exceed 3, got {kappa}")
    return 4.0 + 6.0 / (kappa - 3.0)


def student_t_tail_radius(nu, tau):
    """Unit-variance Student-t tail radius: raw quantile times sqrt((nu-2)/nu)."""
    if tau > STUDENT_T_MONOTONE_TAU:
        warnings.warn(f"tau={tau} exceeds the Student-t monotone regime (~{STUDENT_T_MONOTONE_TAU})",
                      stacklevel=2)
    return special.student_t_quantile(nu, tau) * math.sqrt((nu - 2.0) / nu)


def min_noise_sigma(radius, alpha):
    """Smallest Gaussian sigma with ``P(|eps| >= radius) >= alpha``."""
    if not radius > 0.0:
        raise DomainError(f"tail radius must be > 0, got {radius}")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    return radius / -special.std_normal_quantile(0.5 * alpha)


@dataclass
class NoisePlan:
    sigmas: np.ndarray
    rule: str
    sigma_base: float
    c: float
    clip: tuple
    tau: float | None
    kurtoses: np.ndarray
    iqrs: np.ndarray = field(default=None)
    bins: int | None = None

    @property
    def dim(self):
        return len(self.sigmas)

    def to_dict(self):
        d = {
            "rule": self.rule,
            "sigma_base": self.sigma_base,
            "c": self.c,
            "clip": [self.clip[0], self.clip[1]],
            "tau": self.tau,
            "sigmas": [float(s) for s in self.sigmas],
            "kurtoses": [float(k) for k in self.kurtoses],
        }
        if self.iqrs is not None:
            d["iqrs"] = [float(v) for v in self.iqrs]
        if self.bins is not None:
            d["bins"] = int(self.bins)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(sigmas=np.asarray(d["sigmas"], dtype=np.float64), rule=d["rule"],
                   sigma_base=float(d["sigma_base"]), c=float(d["c"]),
                   clip=(float(d["clip"][0]), float(d["clip"][1])), tau=d.get("tau"),
                   kurtoses=np.asarray(d["kurtoses"], dtype=np.float64),
                   iqrs=None if d.get("iqrs") is None else np.asarray(d["iqrs"]),
                   bins=d.get("bins"))


def make_noise_plan(stats, rule="cf", sigma_base=DEFAULT_SIGMA_BASE, c=DEFAULT_C,
                    clip=DEFAULT_CLIP, tau=DEFAULT_TAU, bins=None):
    """Build the per-feature noise vector for a list of FeatureStats.

    Degenerate features get ``sigma_base`` under every rule. ``bins`` is
    only recorded, for auditing how the kurtoses were obtained.
    """
    if not stats:
        raise InvalidInputError("need statistics for at least one feature")
    if rule not in RULES:
        raise InvalidInputError(f"unknown rule {rule!r}; expected one of {RULES}")
    lo, hi = _check_clip(clip)
    if not sigma_base > 0.0:
        raise InvalidInputError(f"sigma_base must be > 0, got {sigma_base}")
    kurtoses = np.array([s.kurtosis_rearranged for s in stats], dtype=np.float64)
    iqrs = np.array([s.iqr for s in stats], dtype=np.float64)
    degenerate = np.array([s.degenerate for s in stats])

    if rule == "cf":
        raw = sigma_base * (1.0 + c * (kurtoses - 3.0))
    elif rule == "ggd":
        _check_tau(tau)
        reference = ggd_tail_radius(2.0, tau)
        raw = np.array([sigma_base * ggd_tail_radius(ggd_shape_from_kurtosis(k), tau) / reference
                        for k in kurtoses])
    elif rule == "iqr":
        with np.errstate(divide="ignore"):
            raw = np.where(iqrs > 0.0, sigma_base * GAUSSIAN_IQR / iqrs, np.inf)
    else:
        raw = np.full(len(stats), sigma_base)
    raw = np.where(degenerate, sigma_base, raw)
    sigmas = np.clip(raw, lo, hi)
    return NoisePlan(sigmas=sigmas, rule=rule, sigma_base=float(sigma_base), c=float(c),
                     clip=(lo, hi), tau=None if rule in ("cf", "global") else float(tau),
                     kurtoses=kurtoses, iqrs=iqrs if rule == "iqr" else None, bins=bins)

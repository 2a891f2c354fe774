"""Numerical checks of the tail-statistics results behind the noise rule.

Each check returns a dict with ``name``, ``passed`` and the numbers it was
judged on, so that a report can be audited without rerunning anything.
"""

import math
import time
import warnings

import numpy as np

from . import noise_scale as ns
from . import special

SLOPE_TABLE = {
    1e-5: 0.875, 5e-5: 0.560, 1e-4: 0.506, 1e-3: 0.326,
    5e-3: 0.203, 1e-2: 0.151, 0.05: 0.035, 0.07: 0.012,
}
SLOPE_TOL = 1e-3
DEFAULT_TAU_GRID = (0.001, 0.01, 0.02)
DEFAULT_KAPPA_GRID = tuple(np.linspace(2.0, 30.0, 50))
DEFAULT_NU_GRID = tuple(np.linspace(4.5, 100.0, 50))
DEFAULT_ALPHA_GRID = (0.1, 0.3, 0.5)
CF_ORDER_DELTAS = (0.4, 0.2, 0.1)
CF_ORDER_TAU = 0.01
CF_ORDER_RANGE = (3.0, 5.0)


def check_slope_table():
    rows = []
    for tau, expected in SLOPE_TABLE.items():
        got = ns.cf_slope(tau)
        rows.append({"tau": tau, "slope": got, "expected": expected,
                     "ok": abs(got - expected) <= SLOPE_TOL})
    return {"name": "slope_table", "passed": all(r["ok"] for r in rows), "rows": rows,
            "tolerance": SLOPE_TOL}


def check_slope_sign_flip():
    """The CF slope changes sign at tau = 2 (1 - Phi(sqrt 3)) ~ 0.083."""
    boundary = ns.CF_POSITIVE_TAU
    below = ns.cf_slope(boundary - 1e-3)
    above = ns.cf_slope(boundary + 1e-3)
    return {"name": "slope_sign_flip", "passed": below > 0.0 > above,
            "boundary": boundary, "slope_below": below, "slope_above": above}


def check_kurtosis_anchors():
    laplace = ns.ggd_kurtosis(1.0)
    gauss = ns.ggd_kurtosis(2.0)
    flat = ns.ggd_kurtosis(200.0)
    nus = [4.5, 5.0, 6.0, 10.0, 100.0]
    round_trip = [ns.student_t_nu_from_kurtosis(ns.student_t_kurtosis(nu)) for nu in nus]
    rt_err = max(abs(a - b) / b for a, b in zip(round_trip, nus))
    passed = (abs(laplace - 6.0) <= 1e-9 and abs(gauss - 3.0) <= 1e-9
              and abs(flat - 1.8) <= 0.05 and rt_err <= 1e-12)
    return {"name": "kurtosis_anchors", "passed": passed, "ggd_beta1": laplace,
            "ggd_beta2": gauss, "ggd_beta200": flat, "student_t_round_trip_rel_err": rt_err}


def _quiet(fn, *args):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return fn(*args)


def check_ggd_monotone(tau_grid, kappa_grid):
    kappas = sorted(kappa_grid)
    sweeps = []
    for tau in tau_grid:
        radii = [_quiet(ns.ggd_tail_radius, ns.ggd_shape_from_kurtosis(k), tau) for k in kappas]
        diffs = np.diff(radii)
        sweeps.append({"tau": tau, "violations": int(np.sum(diffs <= 0.0)),
                       "min_increment": float(diffs.min()) if len(diffs) else None})
    return {"name": "ggd_radius_increasing_in_kappa",
            "passed": all(s["violations"] == 0 for s in sweeps),
            "kappa_range": [kappas[0], kappas[-1]], "n_points": len(kappas), "sweeps": sweeps}


def check_student_t_monotone(tau_grid, nu_grid):
    nus = sorted(nu_grid)
    sweeps = []
    for tau in tau_grid:
        radii = [_quiet(ns.student_t_tail_radius, nu, tau) for nu in nus]
        diffs = np.diff(radii)
        sweeps.append({"tau": tau, "violations": int(np.sum(diffs >= 0.0)),
                       "max_increment": float(diffs.max()) if len(diffs) else None})
    return {"name": "student_t_radius_decreasing_in_nu",
            "passed": all(s["violations"] == 0 for s in sweeps),
            "nu_range": [nus[0], nus[-1]], "n_points": len(nus), "sweeps": sweeps}


def _order_ratios(exact_radius, tau=CF_ORDER_TAU, deltas=CF_ORDER_DELTAS):
    errors = []
    for delta in deltas:
        cf = _quiet(ns.cf_tail_radius, 3.0 + delta, tau)
        errors.append(abs(exact_radius(3.0 + delta, tau) - cf))
    ratios = [errors[i] / errors[i + 1] for i in range(len(errors) - 1)]
    lo, hi = CF_ORDER_RANGE
    return errors, ratios, all(lo <= r <= hi for r in ratios)


def ggd_exact_radius(kappa, tau):
    return _quiet(ns.ggd_tail_radius, ns.ggd_shape_from_kurtosis(kappa), tau)


def student_t_exact_radius(kappa, tau):
    return _quiet(ns.student_t_tail_radius, ns.student_t_nu_from_kurtosis(kappa), tau)


def check_cf_order(family):
    """|R_exact - R_CF| should shrink by ~4x each time kappa - 3 halves."""
    exact = {"ggd": ggd_exact_radius, "student_t": student_t_exact_radius}[family]
    errors, ratios, passed = _order_ratios(exact)
    return {"name": f"cf_remainder_order_{family}", "passed": passed, "tau": CF_ORDER_TAU,
            "deltas": list(CF_ORDER_DELTAS), "abs_errors": errors, "halving_ratios": ratios,
            "accepted_range": list(CF_ORDER_RANGE)}


def check_cf_derivative():
    value = ns.cf_radius_slope(0.05)
    return {"name": "cf_radius_slope_tau_0.05", "passed": abs(value - 0.0687) <= 5e-4,
            "value": value, "expected": 0.0687, "tolerance": 5e-4}


def check_min_noise(alpha_grid, seed=0, n_random=200):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for r, alpha in zip(rng.uniform(0.1, 10.0, n_random), rng.uniform(0.01, 0.99, n_random)):
        sigma = ns.min_noise_sigma(r, alpha)
        worst = max(worst, abs(2.0 * special.std_normal_sf(r / sigma) - alpha))
    # ratio sigma*(kappa)/sigma*(3) must not depend on alpha
    ratios = {}
    for tau in (0.01, 0.05):
        base = ns.cf_tail_radius(3.0, tau)
        for kappa in (2.0, 3.5, 6.0):
            radius = ns.cf_tail_radius(kappa, tau)
            vals = [ns.min_noise_sigma(radius, a) / ns.min_noise_sigma(base, a) for a in alpha_grid]
            ratios[f"tau={tau},kappa={kappa}"] = max(vals) - min(vals)
    spread = max(ratios.values())
    return {"name": "min_noise_coverage", "passed": worst <= 1e-10 and spread <= 1e-10,
            "max_coverage_error": worst, "max_alpha_spread_of_ratio": spread,
            "alpha_grid": list(alpha_grid)}


def run_theory_checks(tau_grid=DEFAULT_TAU_GRID, kappa_grid=DEFAULT_KAPPA_GRID,
                      alpha_grid=DEFAULT_ALPHA_GRID, nu_grid=DEFAULT_NU_GRID):
    checks = []
    timings = {}
    for fn, args in [
        (check_slope_table, ()),
        (check_slope_sign_flip, ()),
        (check_kurtosis_anchors, ()),
        (check_ggd_monotone, (tau_grid, kappa_grid)),
        (check_student_t_monotone, (tau_grid, nu_grid)),
        (check_cf_order, ("ggd",)),
        (check_cf_order, ("student_t",)),
        (check_cf_derivative, ()),
        (check_min_noise, (alpha_grid,)),
    ]:
        start = time.perf_counter()
        result = fn(*args)
        timings[result["name"]] = time.perf_counter() - start
        checks.append(result)
    return {"passed": all(c["passed"] for c in checks), "checks": checks}, timings


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def report_to_jsonable(report):
    return _finite(report)

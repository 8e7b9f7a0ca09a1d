"""Parametric lifetime models for excess lifetimes above a threshold age.

Each family is specified by a name and a dict of named parameters. All
evaluators accept scalars or arrays of times t measured in years above the
model origin (t = 0 at the threshold age). Families:

``exponential``        sigma
``gompertz``           sigma, beta          (beta = 0 recovers exponential)
``gompertz_makeham``   sigma, beta, lam     (adds constant background rate)
``logistic_beard``     lam, A, B, gamma     (hazard plateau lam + A/B)
``gen_pareto``         sigma, xi            (xi = 0 recovers exponential)
``ext_gp``             sigma, beta, xi      (Gompertz-like start, GP-like tail)
``weibull_gp``         sigma, beta, xi      (Weibull-like start, GP-like tail)
``piecewise_gp``       thresholds, sigma1, xi  (generalized Pareto pieces with
                       continuous scale across thresholds)
``gev``                loc, scale, shape    (block-maxima family; support may
                       extend below zero, so survivor(0) < 1 is possible)

Hazard h, survivor S, density f satisfy f = h * S on the support. Quantiles
use closed forms where available and monotone root finding otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .util import rng_stream

__all__ = [
    "FAMILIES",
    "ModelSpec",
    "ParamError",
    "DomainError",
    "validate_params",
    "param_names",
    "hazard",
    "survivor",
    "density",
    "log_density",
    "log_survivor",
    "cumulative_hazard",
    "cdf",
    "quantile",
    "sample",
    "support",
    "penultimate_shape",
    "gp_endpoint",
    "gp_threshold_rescale",
    "gev_rescale",
    "model_to_json",
    "model_from_json",
]

FAMILIES = (
    "exponential",
    "gompertz",
    "gompertz_makeham",
    "logistic_beard",
    "gen_pareto",
    "ext_gp",
    "weibull_gp",
    "piecewise_gp",
    "gev",
)

_PARAM_NAMES = {
    "exponential": ("sigma",),
    "gompertz": ("sigma", "beta"),
    "gompertz_makeham": ("sigma", "beta", "lam"),
    "logistic_beard": ("lam", "A", "B", "gamma"),
    "gen_pareto": ("sigma", "xi"),
    "ext_gp": ("sigma", "beta", "xi"),
    "weibull_gp": ("sigma", "beta", "xi"),
    "piecewise_gp": ("thresholds", "sigma1", "xi"),
    "gev": ("loc", "scale", "shape"),
}


class ParamError(ValueError):
    """Invalid parameter vector for a model family."""


class DomainError(ValueError):
    """Evaluation point outside the domain of an operation."""


@dataclass(frozen=True)
class ModelSpec:
    """A model family together with the threshold age its origin refers to.

    ``threshold`` is recorded in years of age and is metadata only: all
    evaluators work on excess time above it.
    """

    family: str
    threshold: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParamError(f"unknown family {self.family!r}")


def param_names(family):
    if family not in _PARAM_NAMES:
        raise ParamError(f"unknown family {family!r}")
    return _PARAM_NAMES[family]


def _family_of(spec):
    return spec.family if isinstance(spec, ModelSpec) else str(spec)


def validate_params(spec, params):
    """Check a parameter dict against its family's constraint set.

    Returns a normalized copy (plain floats, tuples for vector-valued
    entries). Raises ParamError on violation.
    """
    family = _family_of(spec)
    names = param_names(family)
    missing = [n for n in names if n not in params]
    extra = [n for n in params if n not in names]
    if missing or extra:
        raise ParamError(f"{family}: missing {missing}, unexpected {extra}")

    if family == "piecewise_gp":
        thresholds = tuple(float(u) for u in params["thresholds"])
        sigma1 = float(params["sigma1"])
        xi = tuple(float(x) for x in params["xi"])
        if len(thresholds) < 1 or any(
            b <= a for a, b in zip(thresholds, thresholds[1:])
        ):
            raise ParamError("piecewise_gp: thresholds must be strictly increasing")
        if thresholds[0] < 0:
            raise ParamError("piecewise_gp: thresholds must be nonnegative")
        if len(xi) != len(thresholds):
            raise ParamError("piecewise_gp: need one shape per threshold")
        if sigma1 <= 0:
            raise ParamError("piecewise_gp: sigma1 must be positive")
        for s in _piecewise_scales(thresholds, sigma1, xi):
            if s <= 0:
                raise ParamError(
                    "piecewise_gp: scale continuity gives a nonpositive scale"
                )
        return {"thresholds": thresholds, "sigma1": sigma1, "xi": xi}

    out = {n: float(params[n]) for n in names}
    positive = {
        "exponential": ("sigma",),
        "gompertz": ("sigma",),
        "gompertz_makeham": ("sigma",),
        "logistic_beard": ("A", "gamma"),
        "gen_pareto": ("sigma",),
        "ext_gp": ("sigma",),
        "weibull_gp": ("sigma", "beta"),
        "gev": ("scale",),
    }[family]
    nonneg = {
        "exponential": (),
        "gompertz": ("beta",),
        "gompertz_makeham": ("beta", "lam"),
        "logistic_beard": ("lam", "B"),
        "gen_pareto": (),
        "ext_gp": ("beta",),
        "weibull_gp": (),
        "gev": (),
    }[family]
    for n in positive:
        if not out[n] > 0:
            raise ParamError(f"{family}: {n} must be positive, got {out[n]}")
    for n in nonneg:
        if out[n] < 0:
            raise ParamError(f"{family}: {n} must be nonnegative, got {out[n]}")
    for n in names:
        if not math.isfinite(out[n]):
            raise ParamError(f"{family}: {n} must be finite")
    return out


def _piecewise_scales(thresholds, sigma1, xi):
    """Scales per piece under the continuity recursion."""
    scales = [sigma1]
    for k in range(len(thresholds) - 1):
        gap = thresholds[k + 1] - thresholds[k]
        scales.append(scales[k] + xi[k] * gap)
    return scales


def _piecewise_log_masses(thresholds, scales, xi):
    """log of the probability of surviving past each threshold (log p_k).

    Computed in log space so that many pieces cannot underflow.
    """
    logp = [0.0]
    for k in range(len(thresholds) - 1):
        gap = thresholds[k + 1] - thresholds[k]
        logp.append(logp[k] + _gp_logsf(np.float64(gap), scales[k], xi[k]))
    return np.asarray(logp)


# ----------------------------------------------------------------------
# stable scalar kernels (vectorized over t; parameters are floats)

def _gp_logsf(t, sigma, xi):
    t = np.asarray(t, dtype=float)
    if xi == 0.0:
        return -t / sigma
    y = xi * t / sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(1.0 + y > 0.0, -np.log1p(np.maximum(y, -1.0)) / xi, -np.inf)
    return out


def _gp_isf_logs(log_s, sigma, xi):
    """Inverse survivor from log survival probability."""
    log_s = np.asarray(log_s, dtype=float)
    if xi == 0.0:
        return -sigma * log_s
    return sigma * np.expm1(-xi * log_s) / xi


def _exp_logsf(t, sigma):
    return -np.asarray(t, dtype=float) / sigma


def _gompertz_cumhaz(t, sigma, beta):
    t = np.asarray(t, dtype=float)
    if beta == 0.0:
        return t / sigma
    # clamp keeps expm1(z)/beta below the double range; a cumulative
    # hazard of 8e307 already forces S(t) = 0 exactly
    zmax = 709.0 + (math.log(beta) if beta < 1.0 else 0.0)
    return np.expm1(np.minimum(beta * t / sigma, zmax)) / beta


def _log1p_b_exp(z, B):
    """log(1 + B*exp(z)) for z >= 0, stable for large z. Requires B > 0."""
    z = np.asarray(z, dtype=float)
    big = z > 40.0
    safe = np.where(big, 0.0, z)
    out = np.log1p(B * np.exp(safe))
    return np.where(big, z + math.log(B) + np.log1p(np.exp(-z) / B), out)


def _logistic_cumhaz(t, lam, A, B, gamma):
    t = np.asarray(t, dtype=float)
    z = gamma * t
    if B == 0.0:
        with np.errstate(over="ignore"):
            return lam * t + (A / gamma) * np.expm1(np.minimum(z, 709.0))
    return lam * t + (A / (B * gamma)) * (_log1p_b_exp(z, B) - math.log1p(B))


def _logistic_loghaz(t, lam, A, B, gamma):
    t = np.asarray(t, dtype=float)
    z = gamma * t
    # A e^z / (1 + B e^z) = A / (e^-z + B)
    log_term = math.log(A) - np.logaddexp(-z, math.log(B) if B > 0 else -np.inf)
    if lam == 0.0:
        return log_term
    return np.logaddexp(math.log(lam), log_term)


def _weibull_gp_logsf(t, sigma, beta, xi):
    t = np.asarray(t, dtype=float)
    w = (t / sigma) ** beta
    if xi == 0.0:
        return -w
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(1.0 + xi * w > 0.0, -np.log1p(np.maximum(xi * w, -1.0)) / xi, -np.inf)


def _ext_gp_D(t, sigma, beta, xi):
    t = np.asarray(t, dtype=float)
    if beta == 0.0:
        return 1.0 + xi * t / sigma
    # an overflowing exponential makes D infinite, which downstream
    # branches map to the correct degenerate survivor values
    with np.errstate(over="ignore"):
        return 1.0 + xi * np.expm1(np.minimum(beta * t / sigma, 709.0)) / beta


# ----------------------------------------------------------------------
# per-family log survivor / log hazard

def _logsf(family, p, t):
    t = np.asarray(t, dtype=float)
    if family == "exponential":
        return _exp_logsf(t, p["sigma"])
    if family == "gompertz":
        return -_gompertz_cumhaz(t, p["sigma"], p["beta"])
    if family == "gompertz_makeham":
        return -p["lam"] * t - _gompertz_cumhaz(t, p["sigma"], p["beta"])
    if family == "logistic_beard":
        return -_logistic_cumhaz(t, p["lam"], p["A"], p["B"], p["gamma"])
    if family == "gen_pareto":
        return _gp_logsf(t, p["sigma"], p["xi"])
    if family == "ext_gp":
        xi = p["xi"]
        D = _ext_gp_D(t, p["sigma"], p["beta"], xi)
        if xi == 0.0:
            return -_gompertz_cumhaz(t, p["sigma"], p["beta"])
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(D > 0.0, -np.log(np.maximum(D, 0.0)) / xi, -np.inf)
    if family == "weibull_gp":
        return _weibull_gp_logsf(t, p["sigma"], p["beta"], p["xi"])
    if family == "piecewise_gp":
        return _piecewise_logsf(t, p)
    if family == "gev":
        return _gev_logsf(t, p)
    raise ParamError(f"unknown family {family!r}")


def _piecewise_pieces(p):
    thresholds = p["thresholds"]
    scales = _piecewise_scales(thresholds, p["sigma1"], p["xi"])
    logp = _piecewise_log_masses(thresholds, scales, p["xi"])
    return np.asarray(thresholds), np.asarray(scales), np.asarray(p["xi"]), logp


def _piecewise_logsf(t, p):
    t = np.asarray(t, dtype=float)
    U, S, X, logp = _piecewise_pieces(p)
    k = np.clip(np.searchsorted(U, t, side="right") - 1, 0, len(U) - 1)
    e = t - U[k]
    out = np.empty_like(t)
    for j in range(len(U)):
        m = k == j
        if np.any(m):
            out[m] = logp[j] + _gp_logsf(e[m], S[j], X[j])
    out = np.where(t < U[0], 0.0, out)
    return out


def _piecewise_loghaz(t, p):
    t = np.asarray(t, dtype=float)
    U, S, X, _ = _piecewise_pieces(p)
    k = np.clip(np.searchsorted(U, t, side="right") - 1, 0, len(U) - 1)
    denom = S[k] + X[k] * (t - U[k])
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(denom > 0.0, -np.log(np.maximum(denom, 0.0)), np.inf)
    return np.where(t < U[0], -np.inf, out)


def _gev_core(t, p):
    loc, scale, shape = p["loc"], p["scale"], p["shape"]
    t = np.asarray(t, dtype=float)
    s = (t - loc) / scale
    if shape == 0.0:
        return -np.exp(-s), s  # logF, standardized coordinate
    w = 1.0 + shape * s
    with np.errstate(divide="ignore", invalid="ignore"):
        logw = np.log(np.maximum(w, 0.0))
        logF = -np.exp(-logw / shape)
    if shape > 0:
        logF = np.where(w > 0.0, logF, -np.inf)
    else:
        logF = np.where(w > 0.0, logF, 0.0)
    return logF, logw


def _gev_logsf(t, p):
    logF, _ = _gev_core(t, p)
    with np.errstate(divide="ignore"):
        out = np.log(-np.expm1(np.minimum(logF, -1e-310)))
    # logF == 0 marks points at or past a finite upper endpoint
    return np.where(logF == 0.0, -np.inf, out)


def _gev_logpdf(t, p):
    loc, scale, shape = p["loc"], p["scale"], p["shape"]
    t = np.asarray(t, dtype=float)
    logF, aux = _gev_core(t, p)
    if shape == 0.0:
        s = aux
        return -math.log(scale) - s + logF
    logw = aux
    with np.errstate(invalid="ignore"):
        out = -math.log(scale) - (1.0 + 1.0 / shape) * logw + logF
    return np.where(np.isfinite(logw) & (logF > -np.inf) & (logF < 0.0), out, -np.inf)


def _loghaz(family, p, t):
    t = np.asarray(t, dtype=float)
    if family == "exponential":
        return np.full_like(t, -math.log(p["sigma"]))
    if family == "gompertz":
        return p["beta"] * t / p["sigma"] - math.log(p["sigma"])
    if family == "gompertz_makeham":
        z = p["beta"] * t / p["sigma"] - math.log(p["sigma"])
        if p["lam"] == 0.0:
            return z
        return np.logaddexp(math.log(p["lam"]), z)
    if family == "logistic_beard":
        return _logistic_loghaz(t, p["lam"], p["A"], p["B"], p["gamma"])
    if family == "gen_pareto":
        denom = p["sigma"] + p["xi"] * t
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(denom > 0.0, -np.log(np.maximum(denom, 0.0)), np.inf)
    if family == "ext_gp":
        D = _ext_gp_D(t, p["sigma"], p["beta"], p["xi"])
        z = p["beta"] * t / p["sigma"]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(
                D > 0.0, z - math.log(p["sigma"]) - np.log(np.maximum(D, 0.0)), np.inf
            )
    if family == "weibull_gp":
        sigma, beta, xi = p["sigma"], p["beta"], p["xi"]
        with np.errstate(divide="ignore", invalid="ignore"):
            logt = np.log(np.maximum(t / sigma, 0.0))
            D = 1.0 + xi * (t / sigma) ** beta
            out = math.log(beta / sigma) + (beta - 1.0) * logt - np.log(
                np.maximum(D, 0.0)
            )
        return np.where(D > 0.0, out, np.inf)
    if family == "piecewise_gp":
        return _piecewise_loghaz(t, p)
    if family == "gev":
        return _gev_logpdf(t, p) - _gev_logsf(t, p)
    raise ParamError(f"unknown family {family!r}")


def _logpdf(family, p, t):
    # single-pass forms for the families whose hazard is finite on all of
    # t >= 0; the generic hazard+survivor route evaluates the shared
    # exponential term twice
    if family == "exponential":
        sigma = p["sigma"]
        return -np.asarray(t, dtype=float) / sigma - math.log(sigma)
    if family == "gompertz":
        sigma, beta = p["sigma"], p["beta"]
        t = np.asarray(t, dtype=float)
        if beta == 0.0:
            return -t / sigma - math.log(sigma)
        z = beta * t / sigma
        zmax = 709.0 + (math.log(beta) if beta < 1.0 else 0.0)
        return z - math.log(sigma) - np.expm1(np.minimum(z, zmax)) / beta
    if family == "gev":
        return _gev_logpdf(t, p)
    lh = _loghaz(family, p, t)
    ls = _logsf(family, p, t)
    with np.errstate(invalid="ignore"):
        out = lh + ls
    # beyond a finite endpoint the density is zero, not infinite
    return np.where(np.isfinite(lh) & (ls > -np.inf), out, -np.inf)


# ----------------------------------------------------------------------
# public evaluators

def _check_t(family, t, op):
    t = np.asarray(t, dtype=float)
    if family != "gev" and np.any(t < 0):
        raise DomainError(f"{op}: t must be nonnegative for {family}")
    return t


def _scalar_like(ref, values):
    values = np.asarray(values)
    if np.ndim(ref) == 0:
        return float(values)
    return values


def survivor(spec, params, t):
    """S(t) = Pr(T > t). Defined for all t in the family's domain."""
    family = _family_of(spec)
    p = validate_params(family, params)
    tt = _check_t(family, t, "survivor")
    return _scalar_like(t, np.exp(_logsf(family, p, tt)))


def log_survivor(spec, params, t):
    family = _family_of(spec)
    p = validate_params(family, params)
    tt = _check_t(family, t, "log_survivor")
    return _scalar_like(t, _logsf(family, p, tt))


def cumulative_hazard(spec, params, t):
    family = _family_of(spec)
    p = validate_params(family, params)
    tt = _check_t(family, t, "cumulative_hazard")
    return _scalar_like(t, -_logsf(family, p, tt))


def cdf(spec, params, t):
    family = _family_of(spec)
    p = validate_params(family, params)
    tt = _check_t(family, t, "cdf")
    return _scalar_like(t, -np.expm1(_logsf(family, p, tt)))


def hazard(spec, params, t):
    """Hazard rate per year. Raises DomainError outside the support."""
    family = _family_of(spec)
    p = validate_params(family, params)
    tt = _check_t(family, t, "hazard")
    lo, hi = support(family, p)
    if np.any(tt < lo) or np.any(tt >= hi):
        raise DomainError("hazard: t outside the support")
    return _scalar_like(t, np.exp(_loghaz(family, p, tt)))


def density(spec, params, t):
    """Density f(t) = h(t) S(t). Raises DomainError outside the support."""
    family = _family_of(spec)
    p = validate_params(family, params)
    tt = _check_t(family, t, "density")
    lo, hi = support(family, p)
    if np.any(tt < lo) or np.any(tt >= hi):
        raise DomainError("density: t outside the support")
    return _scalar_like(t, np.exp(_logpdf(family, p, tt)))


def log_density(spec, params, t):
    """log f(t); -inf outside the support (no error), for likelihood work."""
    family = _family_of(spec)
    p = validate_params(family, params)
    tt = np.asarray(t, dtype=float)
    out = np.where(tt >= 0, _logpdf(family, p, np.maximum(tt, 0.0)), -np.inf)
    if family == "gev":
        out = _logpdf(family, p, tt)
    return _scalar_like(t, out)


def support(spec, params):
    """Return (lo, hi) with S(lo)=1 and S(t)=0 for t >= hi."""
    family = _family_of(spec)
    p = validate_params(family, params)
    if family == "gen_pareto":
        xi = p["xi"]
        return (0.0, np.inf if xi >= 0 else -p["sigma"] / xi)
    if family == "ext_gp":
        xi, sigma, beta = p["xi"], p["sigma"], p["beta"]
        if xi >= 0:
            return (0.0, np.inf)
        if beta == 0.0:
            return (0.0, -sigma / xi)
        return (0.0, sigma * math.log1p(-beta / xi) / beta)
    if family == "weibull_gp":
        xi = p["xi"]
        if xi >= 0:
            return (0.0, np.inf)
        return (0.0, p["sigma"] * (-1.0 / xi) ** (1.0 / p["beta"]))
    if family == "piecewise_gp":
        U, S, X, _ = _piecewise_pieces(p)
        if X[-1] >= 0:
            return (float(U[0]), np.inf)
        return (float(U[0]), float(U[-1] - S[-1] / X[-1]))
    if family == "gev":
        loc, scale, shape = p["loc"], p["scale"], p["shape"]
        if shape == 0.0:
            return (-np.inf, np.inf)
        edge = loc - scale / shape
        return (edge, np.inf) if shape > 0 else (-np.inf, edge)
    return (0.0, np.inf)


def _isf_logs(family, p, log_s):
    """Inverse survivor from log s. log_s < 0 (strictly inside (0,1))."""
    log_s = np.asarray(log_s, dtype=float)
    if family == "exponential":
        return -p["sigma"] * log_s
    if family == "gompertz":
        sigma, beta = p["sigma"], p["beta"]
        if beta == 0.0:
            return -sigma * log_s
        return sigma * np.log1p(-beta * log_s) / beta
    if family == "gen_pareto":
        return _gp_isf_logs(log_s, p["sigma"], p["xi"])
    if family == "weibull_gp":
        sigma, beta, xi = p["sigma"], p["beta"], p["xi"]
        if xi == 0.0:
            w = -log_s
        else:
            w = np.expm1(-xi * log_s) / xi
        return sigma * w ** (1.0 / beta)
    if family == "ext_gp":
        sigma, beta, xi = p["sigma"], p["beta"], p["xi"]
        if beta == 0.0:
            return _gp_isf_logs(log_s, sigma, xi)
        if xi == 0.0:
            return sigma * np.log1p(-beta * log_s) / beta
        return sigma * np.log1p(beta * np.expm1(-xi * log_s) / xi) / beta
    if family == "gev":
        loc, scale, shape = p["loc"], p["scale"], p["shape"]
        # F = 1 - s, logF computed stably from log s
        logF = np.log(-np.expm1(log_s))
        if shape == 0.0:
            return loc - scale * np.log(-logF)
        return loc + scale * np.expm1(-shape * np.log(-logF)) / shape
    if family == "piecewise_gp":
        U, S, X, logp = _piecewise_pieces(p)
        log_s = np.atleast_1d(log_s)
        # piece k holds survival probabilities in (logp[k+1], logp[k]]
        edges = np.concatenate([logp[1:], [-np.inf]])
        k = np.searchsorted(-edges, -log_s, side="left")
        k = np.clip(k, 0, len(U) - 1)
        out = np.empty_like(log_s)
        for j in range(len(U)):
            m = k == j
            if np.any(m):
                out[m] = U[j] + _gp_isf_logs(log_s[m] - logp[j], S[j], X[j])
        return out
    # monotone families without a closed inverse
    return None


def quantile(spec, params, prob):
    """Smallest t with F(t) >= prob, for prob strictly inside (0, 1)."""
    family = _family_of(spec)
    p = validate_params(family, params)
    pr = np.asarray(prob, dtype=float)
    if np.any(pr <= 0.0) or np.any(pr >= 1.0):
        raise DomainError("quantile: prob must lie strictly inside (0, 1)")
    log_s = np.log1p(-pr)
    out = _isf_logs(family, p, log_s)
    if out is None:
        out = _quantile_root(family, p, np.atleast_1d(log_s))
        out = out if np.ndim(prob) else out[0]
    return _scalar_like(prob, out)


def _quantile_root(family, p, log_s):
    """Bracketed root finding for families without a closed-form inverse."""
    out = np.empty_like(log_s)
    for i, ls in enumerate(log_s):
        target = -ls  # cumulative hazard at the quantile

        def g(t):
            return -_logsf(family, p, np.float64(t)) - target

        hi = 1.0
        while g(hi) < 0:
            hi *= 2.0
            if hi > 1e12:
                raise DomainError("quantile: failed to bracket")
        out[i] = optimize.brentq(g, 0.0, hi, xtol=1e-12, rtol=1e-14)
    return out


def sample(spec, params, n, seed=None, truncation=None, rng=None):
    """Draw n values by inversion, optionally truncated to a set of intervals.

    ``truncation`` is a sequence of disjoint (a, b) intervals (b may be inf);
    draws are conditioned on landing in their union. Raises ParamError when
    that union carries probability below 1e-12. For piecewise_gp this
    reduces to choosing a piece by its mass and inverting a truncated
    generalized Pareto within it.
    """
    family = _family_of(spec)
    p = validate_params(family, params)
    n = int(n)
    if n < 0:
        raise ParamError("sample: n must be nonnegative")
    if rng is None:
        rng = rng_stream(seed)
    if n == 0:
        return np.empty(0)

    if truncation is None:
        u = rng.uniform(0.0, 1.0, size=n)
        lo = np.nextafter(0.0, 1.0)
        u = np.clip(u, lo, 1.0 - 1e-16)
        return _inverse_cdf(family, p, u)

    pieces = [(float(a), float(b)) for a, b in truncation]
    if any(b <= a for a, b in pieces):
        raise ParamError("sample: truncation intervals must have a < b")
    sf_a = np.array([np.exp(_logsf(family, p, np.float64(a))) for a, _ in pieces])
    sf_b = np.array(
        [
            0.0 if np.isinf(b) else np.exp(_logsf(family, p, np.float64(b)))
            for _, b in pieces
        ]
    )
    w = sf_a - sf_b
    w = np.maximum(w, 0.0)
    total = w.sum()
    if total < 1e-12:
        raise ParamError("sample: truncation set has probability below 1e-12")
    idx = rng.choice(len(pieces), size=n, p=w / total)
    u = rng.uniform(0.0, 1.0, size=n)
    s = sf_a[idx] - u * w[idx]  # survivor value inside the chosen piece
    s = np.clip(s, 1e-300, 1.0 - 1e-16)
    return _inverse_sf(family, p, s)


def _inverse_cdf(family, p, u):
    s = 1.0 - u
    return _inverse_sf(family, p, s, log_s=np.log1p(-u))


def _inverse_sf(family, p, s, log_s=None):
    if log_s is None:
        log_s = np.log(s)
    out = _isf_logs(family, p, log_s)
    if out is None:
        out = _quantile_root(family, p, np.atleast_1d(np.asarray(log_s, float)))
    return out


def penultimate_shape(spec, params, u):
    """Local shape xi_u = d(1/h)/dt at t = u.

    Closed form where the hazard has one; a centered finite difference with
    step 1e-5 * max(1, u) for logistic_beard and gev.
    """
    family = _family_of(spec)
    p = validate_params(family, params)
    lo, hi = support(family, p)
    u = float(u)
    if not (lo < u < hi):
        raise DomainError("penultimate_shape: u must lie inside the support")
    if family == "exponential":
        return 0.0
    if family in ("gompertz", "gompertz_makeham"):
        sigma, beta = p["sigma"], p["beta"]
        lam = p.get("lam", 0.0)
        if beta == 0.0:
            return 0.0
        e = math.exp(-beta * u / sigma)
        return -beta * e / (1.0 + lam * sigma * e) ** 2
    if family == "gen_pareto":
        return p["xi"]
    if family == "ext_gp":
        return (p["xi"] - p["beta"]) * math.exp(-p["beta"] * u / p["sigma"])
    if family == "weibull_gp":
        sigma, beta, xi = p["sigma"], p["beta"], p["xi"]
        w = (u / sigma) ** beta
        return (xi * w - beta + 1.0) / (beta * w)
    if family == "piecewise_gp":
        U = np.asarray(p["thresholds"])
        k = int(np.clip(np.searchsorted(U, u, side="right") - 1, 0, len(U) - 1))
        return p["xi"][k]
    # finite difference on the reciprocal hazard
    h = 1e-5 * max(1.0, abs(u))
    if not (lo < u - h and u + h < hi):
        raise DomainError("penultimate_shape: u too close to the support edge")
    r_hi = 1.0 / float(np.exp(_loghaz(family, p, np.float64(u + h))))
    r_lo = 1.0 / float(np.exp(_loghaz(family, p, np.float64(u - h))))
    return (r_hi - r_lo) / (2.0 * h)


def gp_endpoint(u, sigma, xi):
    """Upper endpoint u - sigma/xi of a generalized Pareto fitted above u.

    Returns +inf for xi >= 0.
    """
    if sigma <= 0:
        raise ParamError("gp_endpoint: sigma must be positive")
    if xi >= 0:
        return math.inf
    return u - sigma / xi


def gp_threshold_rescale(sigma, xi, v):
    """Scale of the same generalized Pareto re-expressed above u + v."""
    if sigma <= 0:
        raise ParamError("gp_threshold_rescale: sigma must be positive")
    out = sigma + xi * v
    if out <= 0:
        raise DomainError("gp_threshold_rescale: v at or beyond the upper endpoint")
    return out


def gev_rescale(loc, scale, shape, n):
    """Parameters of the maximum of n independent copies of a GEV variable.

    The shape is unchanged; location and scale move by the max-stability
    relations (the log-n form when shape = 0).
    """
    if scale <= 0:
        raise ParamError("gev_rescale: scale must be positive")
    if n <= 0:
        raise ParamError("gev_rescale: n must be positive")
    n = float(n)
    if shape == 0.0:
        return loc + scale * math.log(n), scale, 0.0
    return (
        loc + scale * math.expm1(shape * math.log(n)) / shape,
        scale * n**shape,
        shape,
    )


def model_to_json(spec, params):
    family = _family_of(spec)
    p = validate_params(family, params)
    threshold = spec.threshold if isinstance(spec, ModelSpec) else 0.0
    out = {"family": family, "threshold": threshold, "params": {}}
    for k, v in p.items():
        out["params"][k] = list(v) if isinstance(v, tuple) else v
    return out


def model_from_json(obj):
    spec = ModelSpec(obj["family"], float(obj.get("threshold", 0.0)))
    params = validate_params(spec.family, obj["params"])
    return spec, params

"""Likelihood assembly and maximum-likelihood inference for truncated,
censored excess lifetimes.

A record's likelihood contribution is Num / Pr(T in Ts), where Ts is the
union of its truncation intervals and Num is the density at an observed
death, the survivor value at a right-censoring time, or the probability of
an interval-censoring interval. Under the ``ltrc`` scheme the denominator
conditions on survival past the entry bound only; the interval upper bound
is a censoring horizon.

Fitting maximizes the log likelihood on an unconstrained transformed scale
(log for positive parameters, log(1 + xi) for shapes bounded below by -1),
with a deterministic multistart simplex search and a derivative-based
polish. Observed information comes from a central finite-difference Hessian
on the transformed scale, mapped back by the delta method.

Thresholds are in years above the records' own origin. Records in days are
converted at 365.25 days per year; exceedance is strict, and records at or
below the threshold are dropped and counted.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from . import models
from .models import ModelSpec, ParamError
from .util import DAYS_PER_YEAR, jsonable, rng_stream

__all__ = [
    "FitError",
    "NumericError",
    "FitResult",
    "ProfileTrace",
    "TestResult",
    "prepare",
    "loglik",
    "fit_mle",
    "profile_endpoint",
    "threshold_scan",
    "lrt_nested",
    "bootstrap_lrt",
    "nc_fit_and_shape_test",
    "group_comparison",
    "wald_compare_scale",
]

_PENALTY = 1e15
_BOUNDARY_PHI = -16.0


class FitError(ValueError):
    """Unusable input for a fitting operation."""


class NumericError(RuntimeError):
    """A numerical procedure failed beyond its declared tolerance."""


# ----------------------------------------------------------------------
# data preparation


@dataclass
class PreparedData:
    """Arrays for fast likelihood evaluation, all in years above threshold.

    Truncation pieces of interval-truncated records live in (tr_a, tr_b,
    tr_row), where tr_row indexes the record's denominator slot. Interval
    censoring numerators live in (icp_lo, icp_hi, icp_row), already clipped
    to the record's observable set. ``sim`` keeps one tuple per used record
    so bootstrap replicates can be drawn under identical observation rules.
    """

    t_obs: np.ndarray
    c_cens: np.ndarray
    lt_a: np.ndarray
    tr_a: np.ndarray
    tr_b: np.ndarray
    tr_row: np.ndarray
    n_tr: int
    icp_lo: np.ndarray
    icp_hi: np.ndarray
    icp_row: np.ndarray
    n_ic: int
    n_rows: int
    n_events: int
    dropped: dict
    sim: list = field(default_factory=list, repr=False)

    def stats(self):
        mid = []
        if self.t_obs.size:
            mid.append(self.t_obs)
        if self.n_ic:
            hi = np.where(np.isfinite(self.icp_hi), self.icp_hi, self.icp_lo + 1.0)
            mid.append(0.5 * (self.icp_lo + hi))
        if self.c_cens.size:
            mid.append(self.c_cens)
        if not mid:
            return {"m": 1.0, "s2": 1.0, "tmax": 1.0}
        x = np.concatenate(mid)
        m = float(np.mean(x))
        s2 = float(np.var(x)) if x.size > 1 else m * m
        return {
            "m": m if m > 0 else 1.0,
            "s2": s2 if s2 > 0 else max(m * m, 1.0),
            "tmax": float(np.max(x)),
        }


def _to_years(value, unit):
    if unit == "years":
        return value
    return value / DAYS_PER_YEAR


def prepare(records, threshold=0.0):
    """Shift records to excess years above ``threshold`` and pack arrays.

    Drops (and counts) records at or below the threshold, interval-censored
    records straddling it, and records whose truncation set vanishes above
    it.
    """
    v = float(threshold)
    t_obs, c_cens, lt_a = [], [], []
    tr_a, tr_b, tr_row = [], [], []
    icp_lo, icp_hi, icp_row = [], [], []
    sim = []
    n_tr = n_ic = n_rows = n_events = 0
    dropped = {"below_threshold": 0, "straddling_threshold": 0, "unobservable": 0}

    for rec in records:
        conv = lambda x: _to_years(float(x), rec.unit) - v
        pieces = []
        for a, b in rec.truncation:
            a2 = max(conv(a), 0.0)
            b2 = conv(b) if math.isfinite(b) else math.inf
            if b2 > 0 and b2 > a2:
                pieces.append((a2, b2))
        if not pieces:
            dropped["unobservable"] += 1
            continue

        if rec.censoring == "interval_censored":
            l, r = rec.interval()
            l2 = conv(l)
            r2 = conv(r) if math.isfinite(r) else math.inf
            if r2 <= 0:
                dropped["below_threshold"] += 1
                continue
            if l2 < 0:
                dropped["straddling_threshold"] += 1
                continue
            clips = [
                (max(l2, a), min(r2, b))
                for a, b in pieces
                if min(r2, b) > max(l2, a)
            ]
            if not clips:
                dropped["unobservable"] += 1
                continue
            for lo, hi in clips:
                icp_lo.append(lo)
                icp_hi.append(hi)
                icp_row.append(n_ic)
            row_sim = ("ic", tuple(pieces), rec.scheme, (l2, r2 - l2))
            n_ic += 1
        else:
            t2 = conv(rec.excess_lifetime)
            if t2 <= 0:
                dropped["below_threshold"] += 1
                continue
            if rec.censoring == "right_censored":
                c_cens.append(t2)
                row_sim = ("cens", tuple(pieces), rec.scheme, None)
            else:
                t_obs.append(t2)
                n_events += 1
                row_sim = ("obs", tuple(pieces), rec.scheme, None)

        if rec.scheme == "ltrc":
            if len(pieces) != 1:
                raise FitError("ltrc records carry exactly one truncation interval")
            lt_a.append(pieces[0][0])
        else:
            if rec.censoring == "right_censored":
                raise FitError("right-censored record under interval truncation")
            for a, b in pieces:
                tr_a.append(a)
                tr_b.append(b)
                tr_row.append(n_tr)
            n_tr += 1
        sim.append(row_sim)
        n_rows += 1

    return PreparedData(
        t_obs=np.asarray(t_obs, float),
        c_cens=np.asarray(c_cens, float),
        lt_a=np.asarray(lt_a, float),
        tr_a=np.asarray(tr_a, float),
        tr_b=np.asarray(tr_b, float),
        tr_row=np.asarray(tr_row, dtype=np.intp),
        n_tr=n_tr,
        icp_lo=np.asarray(icp_lo, float),
        icp_hi=np.asarray(icp_hi, float),
        icp_row=np.asarray(icp_row, dtype=np.intp),
        n_ic=n_ic,
        n_rows=n_rows,
        n_events=n_events,
        dropped=dropped,
        sim=sim,
    )


def _tr_identity(prep):
    """True when every truncation set is a single interval, row-aligned."""
    v = getattr(prep, "_tr_ident", None)
    if v is None:
        v = prep.n_tr == prep.tr_row.size and bool(
            np.array_equal(prep.tr_row, np.arange(prep.n_tr))
        )
        prep._tr_ident = v
    return v


def _cached_concat(prep, attr, lo, hi):
    v = getattr(prep, attr, None)
    if v is None:
        v = np.concatenate((lo, hi))
        setattr(prep, attr, v)
    return v


def _loglik_prepared(family, p, prep):
    """Log likelihood for a prepared dataset; -inf where impossible."""
    total = 0.0
    if prep.t_obs.size:
        lp = models._logpdf(family, p, prep.t_obs)
        s = lp.sum()
        if not s > -np.inf:
            return -np.inf
        total += s
    if prep.c_cens.size:
        total += models._logsf(family, p, prep.c_cens).sum()
    if prep.lt_a.size:
        d = models._logsf(family, p, prep.lt_a).sum()
        if not d > -np.inf:
            return -np.inf
        total -= d
    if prep.n_tr:
        k = prep.tr_a.size
        ab = _cached_concat(prep, "_tr_ab", prep.tr_a, prep.tr_b)
        sf = np.exp(models._logsf(family, p, ab))
        mass = sf[:k] - sf[k:]
        if _tr_identity(prep):
            denom = mass
        else:
            denom = np.bincount(prep.tr_row, weights=mass, minlength=prep.n_tr)
        if denom.min() <= 0.0:
            return -np.inf
        total -= np.log(denom).sum()
    if prep.n_ic:
        k = prep.icp_lo.size
        ab = _cached_concat(prep, "_ic_ab", prep.icp_lo, prep.icp_hi)
        sf = np.exp(models._logsf(family, p, ab))
        num = np.bincount(
            prep.icp_row, weights=sf[:k] - sf[k:], minlength=prep.n_ic
        )
        if num.min() <= 0.0:
            return -np.inf
        total += np.log(num).sum()
    if np.isnan(total):
        return -np.inf
    return float(total)


def loglik(spec, params, records, threshold=0.0):
    """Sum of per-record log-likelihood contributions.

    Returns -inf (with a warning listing offending record positions) when
    some record's truncation set has zero probability under the model.
    """
    family = spec.family if isinstance(spec, ModelSpec) else str(spec)
    p = models.validate_params(family, params)
    prep = prepare(records, threshold)
    value = _loglik_prepared(family, p, prep)
    if value == -np.inf:
        bad = _zero_probability_rows(family, p, prep)
        if bad:
            warnings.warn(
                f"zero-probability truncation set under {family} for record(s) {bad}",
                RuntimeWarning,
                stacklevel=2,
            )
    return value


def _zero_probability_rows(family, p, prep):
    bad = []
    if prep.n_tr:
        sf_a = np.exp(models._logsf(family, p, prep.tr_a))
        sf_b = np.exp(models._logsf(family, p, prep.tr_b))
        denom = np.bincount(prep.tr_row, weights=sf_a - sf_b, minlength=prep.n_tr)
        bad.extend(np.nonzero(denom <= 0.0)[0].tolist())
    if prep.lt_a.size:
        ls = models._logsf(family, p, prep.lt_a)
        bad.extend(np.nonzero(ls == -np.inf)[0].tolist())
    return bad


# ----------------------------------------------------------------------
# parameter transforms


def _transform_kinds(family, knots=None):
    """Names and transform kinds of the free parameters, in order."""
    if family == "piecewise_gp":
        if knots is None:
            raise FitError("piecewise_gp needs knots (model-time thresholds)")
        names = ["sigma1"] + [f"xi{k + 1}" for k in range(len(knots))]
        kinds = ["log"] + ["shiftlog"] * len(knots)
        return names, kinds
    table = {
        "exponential": (("sigma",), ("log",)),
        "gompertz": (("sigma", "beta"), ("log", "log")),
        "gompertz_makeham": (("sigma", "beta", "lam"), ("log", "log", "log")),
        "logistic_beard": (("lam", "A", "B", "gamma"), ("log", "log", "log", "log")),
        "gen_pareto": (("sigma", "xi"), ("log", "shiftlog")),
        "ext_gp": (("sigma", "beta", "xi"), ("log", "log", "shiftlog")),
        "weibull_gp": (("sigma", "beta", "xi"), ("log", "log", "shiftlog")),
        "gev": (("loc", "scale", "shape"), ("id", "log", "shiftlog")),
    }
    names, kinds = table[family]
    return list(names), list(kinds)


def _phi_from_params(family, params, knots=None):
    names, kinds = _transform_kinds(family, knots)
    vals = _flatten_params(family, params)
    phi = np.empty(len(vals))
    for i, (v, kind) in enumerate(zip(vals, kinds)):
        if kind == "log":
            if v <= 0:
                raise ParamError(f"{names[i]} must be positive to transform")
            phi[i] = math.log(v)
        elif kind == "shiftlog":
            if v <= -1:
                raise ParamError(f"{names[i]} must exceed -1 to transform")
            phi[i] = math.log1p(v)
        else:
            phi[i] = v
    return phi


def _flatten_params(family, params):
    if family == "piecewise_gp":
        return [params["sigma1"], *params["xi"]]
    return [params[n] for n in models.param_names(family)]


def _params_from_phi(family, phi, knots=None):
    """Natural parameters from the transformed vector; None when invalid."""
    _, kinds = _transform_kinds(family, knots)
    vals = []
    for v, kind in zip(phi, kinds):
        v = float(v)
        if not -45.0 <= v <= 45.0:
            return None
        if kind == "log":
            vals.append(math.exp(v))
        elif kind == "shiftlog":
            vals.append(math.expm1(v))
        else:
            vals.append(v)
    if family == "piecewise_gp":
        p = {"thresholds": tuple(knots), "sigma1": vals[0], "xi": tuple(vals[1:])}
        for s in models._piecewise_scales(p["thresholds"], p["sigma1"], p["xi"]):
            if s <= 0:
                return None
        return p
    return dict(zip(models.param_names(family), vals))


def _jacobian_diag(family, phi, knots=None):
    _, kinds = _transform_kinds(family, knots)
    out = np.empty(len(phi))
    for i, kind in enumerate(kinds):
        if kind == "log":
            out[i] = math.exp(phi[i])
        elif kind == "shiftlog":
            out[i] = math.exp(phi[i])
        else:
            out[i] = 1.0
    return out


# ----------------------------------------------------------------------
# starting points


def _default_starts(family, prep, knots=None):
    s = prep.stats()
    m, s2, tmax = s["m"], s["s2"], s["tmax"]
    if family == "exponential":
        raw = [(m,), (m / 2,), (2 * m,), (max(tmax, 1e-6) / 3,), (m / 5,)]
        return [{"sigma": x[0]} for x in raw]
    if family == "gompertz":
        raw = [(m, 1e-3), (m, 0.5), (m, 1.5), (m / 2, 1.0), (2 * m, 0.3)]
        return [{"sigma": a, "beta": b} for a, b in raw]
    if family == "gompertz_makeham":
        raw = [
            (m, 1.0, 1e-3 / m),
            (m, 0.5, 0.1 / m),
            (m / 2, 1.0, 1e-2 / m),
            (2 * m, 0.3, 1e-3 / m),
            (m, 1e-3, 0.5 / m),
        ]
        return [{"sigma": a, "beta": b, "lam": c} for a, b, c in raw]
    if family == "logistic_beard":
        raw = [
            (1e-3 / m, 1.0 / m, 0.5, 1.0 / m),
            (1e-2 / m, 1.0 / m, 0.1, 0.5 / m),
            (1e-3 / m, 0.5 / m, 1.0, 2.0 / m),
            (0.1 / m, 2.0 / m, 0.3, 1.0 / m),
            (1e-4 / m, 1.0 / m, 1.0, 1.5 / m),
        ]
        return [{"lam": a, "A": b, "B": c, "gamma": d} for a, b, c, d in raw]
    if family == "gen_pareto":
        xi0 = float(np.clip(0.5 * (1.0 - m * m / s2), -0.9, 0.9))
        sg0 = max(m * (1.0 - xi0), 1e-8)
        raw = [(sg0, xi0), (m, 0.0), (m, -0.2), (m / 2, 0.2), (1.5 * m, -0.4)]
        return [{"sigma": a, "xi": b} for a, b in raw]
    if family == "ext_gp":
        xi0 = float(np.clip(0.5 * (1.0 - m * m / s2), -0.9, 0.9))
        raw = [
            (m, 1e-3, xi0),
            (m, 0.5, 0.0),
            (m, 1.0, -0.2),
            (m / 2, 0.5, 0.2),
            (2 * m, 0.2, -0.1),
        ]
        return [{"sigma": a, "beta": b, "xi": c} for a, b, c in raw]
    if family == "weibull_gp":
        xi0 = float(np.clip(0.5 * (1.0 - m * m / s2), -0.9, 0.9))
        raw = [
            (m, 1.0, xi0),
            (m, 1.0, 0.0),
            (m, 1.3, -0.2),
            (m / 2, 0.8, 0.1),
            (2 * m, 1.0, -0.3),
        ]
        return [{"sigma": a, "beta": b, "xi": c} for a, b, c in raw]
    if family == "gev":
        sd = math.sqrt(s2)
        sc0 = sd * math.sqrt(6.0) / math.pi
        loc0 = m - 0.5772 * sc0
        raw = [
            (loc0, sc0, 0.0),
            (loc0, sc0, -0.15),
            (loc0, sc0, 0.15),
            (m, sd, 0.0),
            (loc0, 0.5 * sc0, -0.3),
        ]
        return [{"loc": a, "scale": b, "shape": c} for a, b, c in raw]
    if family == "piecewise_gp":
        K = len(knots)
        raw = [
            (m, (-0.1,) * K),
            (m, (0.0,) * K),
            (m / 2, (0.1,) * K),
            (1.5 * m, (-0.25,) * K),
            (m, (-0.4,) * K),
        ]
        return [
            {"thresholds": tuple(knots), "sigma1": a, "xi": x} for a, x in raw
        ]
    raise FitError(f"no starting points for family {family!r}")


# ----------------------------------------------------------------------
# optimization core


def _make_objective(family, prep, knots=None):
    def nll(phi):
        p = _params_from_phi(family, phi, knots)
        if p is None:
            return _PENALTY
        ll = _loglik_prepared(family, p, prep)
        if not np.isfinite(ll):
            return _PENALTY
        return -ll

    return nll


def _minimize_1d(nll, phi0):
    best_x, best_f = phi0, nll(np.array([phi0]))

    def f(x):
        return nll(np.array([x]))

    try:
        res = optimize.minimize_scalar(
            f, bracket=(phi0 - 1.0, phi0, phi0 + 1.0), method="brent",
            options={"xtol": 1e-12, "maxiter": 400},
        )
        if res.fun < best_f:
            best_x, best_f = float(res.x), float(res.fun)
    except (ValueError, RuntimeError):
        res = optimize.minimize_scalar(
            f, bounds=(phi0 - 25.0, phi0 + 25.0), method="bounded",
            options={"xatol": 1e-12},
        )
        if res.fun < best_f:
            best_x, best_f = float(res.x), float(res.fun)
    return np.array([best_x]), best_f


def _nm(nll, phi0, step, fatol, maxiter, xatol=1e-9):
    d = len(phi0)
    simplex = np.vstack([phi0] + [phi0 + step * e for e in np.eye(d)])
    res = optimize.minimize(
        nll,
        phi0,
        method="Nelder-Mead",
        options={
            "initial_simplex": simplex,
            "xatol": xatol,
            "fatol": fatol,
            "maxiter": maxiter,
            "maxfev": maxiter,
        },
    )
    return res.x, float(res.fun)


def _newton_polish_1d(nll, x, fx):
    # a function-value-only line search stalls sqrt(eps) from the optimum;
    # two guarded Newton steps on a central-difference score land ~1e-10
    for _ in range(2):
        h = 1e-6 * max(1.0, abs(float(x[0])))
        fp = nll(x + h)
        fm = nll(x - h)
        g = (fp - fm) / (2.0 * h)
        curv = (fp + fm - 2.0 * fx) / (h * h)
        if not (np.isfinite(g) and curv > 0.0):
            break
        step = -g / curv
        if not abs(step) < 0.05:
            break
        xn = x + step
        fn = nll(xn)
        if not fn <= fx + 1e-9:
            break
        x, fx = xn, fn
    return x, fx


def _bfgs(nll, x0, f0):
    try:
        res = optimize.minimize(
            nll, x0, method="BFGS",
            options={"gtol": 1e-8, "maxiter": 200},
        )
    except (ValueError, RuntimeError, OverflowError):
        return x0, f0, False
    if not (np.isfinite(res.fun) and res.fun <= f0):
        return x0, f0, False
    # scipy flags line-search precision loss as failure even at a
    # stationary point; trust a small final gradient instead
    clean = bool(res.success) or float(
        np.abs(res.jac).max()
    ) < 1e-6 * max(1.0, abs(float(res.fun)))
    return res.x, float(res.fun), clean


def _optimize(family, prep, starts, knots=None, quick=False):
    # quick mode serves warm-started resampling fits: later starts get a
    # basin search only when their raw objective already beats the search
    # from the best start, instead of unconditionally
    nll = _make_objective(family, prep, knots)
    cand = []
    for p0 in starts:
        try:
            phi0 = _phi_from_params(family, p0, knots)
        except (ParamError, KeyError):
            continue
        f0 = nll(phi0)
        if f0 < _PENALTY:
            cand.append((f0, phi0))
    if not cand:
        raise FitError("no valid starting point for the optimizer")
    cand.sort(key=lambda c: c[0])

    d = len(cand[0][1])
    if d == 1:
        best_x, best_f = None, np.inf
        for f0, phi0 in cand[:5]:
            x, fval = _minimize_1d(nll, float(phi0[0]))
            if fval < best_f:
                best_x, best_f = x, fval
            if quick:
                break
        best_x, best_f = _newton_polish_1d(nll, best_x, best_f)
        return best_x, best_f, nll

    # coarse basin search from each start, a derivative polish from the
    # winner, and a tight simplex rescue only when the polish stalls
    best_x, best_f = None, np.inf
    for f0, phi0 in cand[:5]:
        if quick and best_x is not None and f0 >= best_f - 1e-9:
            continue
        x, fval = _nm(nll, phi0, 0.25, 1e-5, 60 * d, xatol=1e-4)
        if fval < best_f:
            best_x, best_f = x, fval

    names, kinds = _transform_kinds(family, knots)
    ridge = [
        i for i in range(d)
        if kinds[i] != "id" and best_x[i] <= _BOUNDARY_PHI
    ]
    if ridge:
        # a collapsed scale coordinate: the likelihood rises toward the
        # parameter-space edge with vanishing slope, so derivative steps
        # stall; freeze the ridge coordinates and polish the rest
        free = [i for i in range(d) if i not in ridge]
        if free:
            base = best_x.copy()

            def sub(z):
                y = base.copy()
                y[free] = np.atleast_1d(z)
                return nll(y)

            if len(free) == 1:
                z, fz = _minimize_1d(sub, float(best_x[free[0]]))
            else:
                z, fz = _nm(sub, best_x[free], 0.02, 1e-13, 200 * len(free))
                z, fz, _ = _bfgs(sub, z, fz)
            if fz < best_f:
                best_x = base
                best_x[free] = z
                best_f = fz
        return best_x, best_f, nll

    best_x, best_f, clean = _bfgs(nll, best_x, best_f)
    if not clean:
        x, fval = _nm(nll, best_x, 0.02, 1e-13, 400 * d)
        if fval < best_f:
            best_x, best_f = x, fval
        best_x, best_f, _ = _bfgs(nll, best_x, best_f)
    return best_x, best_f, nll


def _fd_gradient(f, x, h=1e-6):
    g = np.empty(len(x))
    for i in range(len(x)):
        hi = h * max(1.0, abs(x[i]))
        e = np.zeros(len(x))
        e[i] = hi
        g[i] = (f(x + e) - f(x - e)) / (2 * hi)
    return g


def _fd_hessian(f, x, h=1e-4):
    d = len(x)
    H = np.empty((d, d))
    hs = np.array([h * max(1.0, abs(xi)) for xi in x])
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = hs[i]
        H[i, i] = (f(x + ei) + f(x - ei) - 2 * f0) / hs[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = hs[j]
            fpp = f(x + ei + ej)
            fpm = f(x + ei - ej)
            fmp = f(x - ei + ej)
            fmm = f(x - ei - ej)
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4 * hs[i] * hs[j])
    return H


# ----------------------------------------------------------------------
# results


@dataclass
class FitResult:
    """Maximum-likelihood fit of one family on one prepared dataset."""

    spec: ModelSpec
    mle: dict
    loglik: float
    observed_information: np.ndarray
    converged: bool
    n_used: int
    threshold: float
    se: dict
    param_names: tuple
    flags: tuple = ()
    n_dropped: dict = field(default_factory=dict)
    gradient_sup: float = float("nan")

    def to_json(self):
        return jsonable(
            {
                "family": self.spec.family,
                "threshold": self.threshold,
                "mle": self.mle,
                "se": self.se,
                "loglik": self.loglik,
                "observed_information": np.asarray(self.observed_information),
                "param_names": list(self.param_names),
                "converged": self.converged,
                "n_used": self.n_used,
                "n_dropped": self.n_dropped,
                "flags": list(self.flags),
                "gradient_sup": self.gradient_sup,
            }
        )


@dataclass
class ProfileTrace:
    """Profile log likelihood of the upper endpoint age."""

    name: str
    grid: np.ndarray
    values: np.ndarray
    loglik_max: float
    psi_hat: float | None
    ci: dict
    flags: tuple = ()

    def to_json(self):
        return jsonable(
            {
                "name": self.name,
                "grid": self.grid,
                "values": self.values,
                "loglik_max": self.loglik_max,
                "psi_hat": self.psi_hat,
                "ci": {str(k): list(v) for k, v in self.ci.items()},
                "flags": list(self.flags),
            }
        )

    def to_csv(self, path):
        arr = np.column_stack([self.grid, self.values])
        header = f"{self.name},profile_loglik"
        np.savetxt(path, arr, delimiter=",", header=header, comments="")


@dataclass
class TestResult:
    """A likelihood-ratio (or Wald) test with its calibration."""

    statistic: float
    p_asymptotic: float | None
    calibration: str
    df: float | None = None
    p_bootstrap: float | None = None
    B: int | None = None
    seed: int | None = None
    n_boot_failed: int = 0
    flags: tuple = ()
    details: dict = field(default_factory=dict)

    def to_json(self):
        return jsonable(
            {
                "statistic": self.statistic,
                "p_asymptotic": self.p_asymptotic,
                "p_bootstrap": self.p_bootstrap,
                "calibration": self.calibration,
                "df": self.df,
                "B": self.B,
                "seed": self.seed,
                "n_boot_failed": self.n_boot_failed,
                "flags": list(self.flags),
                "details": self.details,
            }
        )


# ----------------------------------------------------------------------
# fitting


def fit_mle(spec, records, threshold=0.0, knots=None, starts=None):
    """Maximum-likelihood fit of ``spec.family`` above ``threshold`` years.

    ``knots`` gives the model-time thresholds for piecewise_gp (first
    usually 0). ``starts`` optionally prepends parameter dicts to the five
    deterministic default starting points.
    """
    family = spec.family if isinstance(spec, ModelSpec) else str(spec)
    prep = prepare(records, threshold)
    return _fit_prepared(family, prep, threshold, knots=knots, starts=starts)


def _fit_prepared(family, prep, threshold, knots=None, starts=None,
                  _starts_only=False, _light=False):
    # _starts_only trusts the caller's warm starts and skips the default
    # ladder; _light skips the observed-information matrix. Both are for
    # the inner loop of resampling procedures where only the likelihood
    # value and convergence flag feed the downstream statistic.
    if prep.n_rows < 3:
        raise FitError(f"need at least 3 usable records, have {prep.n_rows}")
    if family == "piecewise_gp" and knots is None:
        raise FitError("piecewise_gp needs knots (model-time thresholds)")
    start_list = list(starts) if starts else []
    if not (_starts_only and start_list):
        start_list += _default_starts(family, prep, knots)
    phi_hat, nll_hat, nll = _optimize(
        family, prep, start_list, knots, quick=_starts_only and bool(starts)
    )
    params = _params_from_phi(family, phi_hat, knots)
    if params is None:
        raise NumericError("optimizer returned an invalid parameter vector")

    names, kinds = _transform_kinds(family, knots)
    boundary = tuple(
        names[i]
        for i in range(len(phi_hat))
        if kinds[i] != "id" and phi_hat[i] < _BOUNDARY_PHI
    )
    grad = _fd_gradient(nll, phi_hat)
    interior = [i for i in range(len(phi_hat)) if names[i] not in boundary]
    gsup = float(np.max(np.abs(grad[interior]))) if interior else 0.0
    tol = 1e-4 * max(1.0, abs(nll_hat))
    converged = gsup < tol

    flags = tuple(f"boundary:{n}" for n in boundary)
    se = {}
    if _light:
        info = np.full((len(phi_hat), len(phi_hat)), np.nan)
    else:
        H_phi = _fd_hessian(nll, phi_hat)
        J = _jacobian_diag(family, phi_hat, knots)
        with np.errstate(divide="ignore", invalid="ignore"):
            info = H_phi / np.outer(J, J)
        try:
            cov = np.linalg.inv(info)
            diag = np.diag(cov)
            if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
                raise np.linalg.LinAlgError
            for i, n in enumerate(names):
                se[n] = float(math.sqrt(diag[i]))
        except np.linalg.LinAlgError:
            flags += ("information_not_invertible",)
            cov = np.linalg.pinv(np.where(np.isfinite(info), info, 0.0))
            for i, n in enumerate(names):
                d = cov[i, i]
                se[n] = float(math.sqrt(d)) if d > 0 else float("nan")

    return FitResult(
        spec=ModelSpec(family, threshold),
        mle=params,
        loglik=-nll_hat,
        observed_information=info,
        converged=converged,
        n_used=prep.n_rows,
        threshold=float(threshold),
        se=se,
        param_names=tuple(names),
        flags=flags,
        n_dropped=dict(prep.dropped),
        gradient_sup=gsup,
    )


def threshold_scan(records, thresholds, family="gen_pareto"):
    """fit_mle at each threshold; returns {threshold: FitResult}."""
    out = {}
    for v in thresholds:
        out[float(v)] = fit_mle(ModelSpec(family), records, threshold=float(v))
    return out


# ----------------------------------------------------------------------
# profile likelihood for the endpoint


def profile_endpoint(
    records, threshold=0.0, grid=None, levels=(0.95,), age_origin=0.0
):
    """Profile log likelihood of the finite upper endpoint psi.

    Under a generalized Pareto model above the threshold, psi ties the
    shape to the scale via xi = -sigma / (psi - u). The trace reports psi
    on the ``age_origin + threshold`` axis (pass the threshold age to read
    endpoints as ages). Confidence limits per level are where the profile
    drops by half the chi-square(1) quantile; an upper limit beyond the
    grid is reported as unbounded (None).
    """
    prep = prepare(records, threshold)
    base = _fit_prepared("gen_pareto", prep, threshold)
    ll_max = base.loglik
    xi_hat = base.mle["xi"]
    tmax = prep.stats()["tmax"]
    origin = float(age_origin) + float(threshold)

    if grid is None:
        grid_e = np.geomspace(tmax + 0.01, 80.0, 200)
    else:
        grid_e = np.asarray(grid, float) - origin
    keep = grid_e > tmax
    flags = ()
    if not np.all(keep):
        flags += ("grid_truncated_at_sample_max",)
        grid_e = grid_e[keep]
    if grid_e.size == 0:
        raise FitError("no grid point exceeds the largest observed excess")

    psi_hat = None
    if xi_hat < 0:
        psi_e = -base.mle["sigma"] / xi_hat
        if psi_e > tmax:
            psi_hat = origin + psi_e
            if grid is None or (grid_e.min() < psi_e < grid_e.max()):
                grid_e = np.sort(np.append(grid_e, psi_e))

    nll = _make_objective("gen_pareto", prep)
    values = np.empty(grid_e.size)
    sig0 = base.mle["sigma"]
    for i, pe in enumerate(grid_e):

        def f(logsig, pe=pe):
            sig = math.exp(logsig)
            return nll(np.array([logsig, math.log1p(-sig / pe)]))

        hi_edge = math.log(pe) - 1e-12
        lo_edge = min(math.log(sig0), hi_edge) - 14.0
        res = optimize.minimize_scalar(
            f, bounds=(lo_edge, hi_edge), method="bounded",
            options={"xatol": 1e-11},
        )
        values[i] = -res.fun

    # unimodality audit (tolerance 1e-6)
    k_top = int(np.argmax(values))
    rising = np.diff(values[: k_top + 1])
    falling = np.diff(values[k_top:])
    if (rising.size and rising.min() < -1e-6) or (
        falling.size and falling.max() > 1e-6
    ):
        flags += ("profile_not_unimodal",)

    if xi_hat >= 0:
        flags += ("shape_nonnegative_upper_unbounded",)

    top = max(ll_max, float(values.max()))
    ci = {}
    for level in levels:
        cut = top - 0.5 * stats.chi2.ppf(level, 1)
        above = values >= cut
        if not above.any():
            ci[level] = (None, None)
            continue
        idx = np.nonzero(above)[0]
        lo = _cross(grid_e, values, idx[0] - 1, idx[0], cut) if idx[0] > 0 else float(
            grid_e[0]
        )
        if idx[-1] == grid_e.size - 1:
            hi = None
        else:
            hi = _cross(grid_e, values, idx[-1], idx[-1] + 1, cut)
        ci[level] = (
            origin + lo if lo is not None else None,
            origin + hi if hi is not None else None,
        )

    return ProfileTrace(
        name="endpoint_age",
        grid=origin + grid_e,
        values=values,
        loglik_max=top,
        psi_hat=psi_hat,
        ci=ci,
        flags=flags,
    )


def _cross(x, y, i, j, cut):
    """Linear interpolation of the level crossing between grid nodes i, j."""
    if y[j] == y[i]:
        return float(x[j])
    w = (cut - y[i]) / (y[j] - y[i])
    return float(x[i] + w * (x[j] - x[i]))


# ----------------------------------------------------------------------
# nested tests


_NESTED = {
    ("exponential", "gompertz"),
    ("exponential", "gompertz_makeham"),
    ("exponential", "gen_pareto"),
    ("exponential", "ext_gp"),
    ("exponential", "weibull_gp"),
    ("gompertz", "gompertz_makeham"),
    ("gompertz", "ext_gp"),
    ("gen_pareto", "ext_gp"),
}


def _embed_start(family0, mle0, family1):
    """A valid alternative-family start sitting on the null fit."""
    eps = 1e-6
    if family0 == "exponential":
        s = mle0["sigma"]
        return {
            "gompertz": {"sigma": s, "beta": eps},
            "gompertz_makeham": {"sigma": s, "beta": eps, "lam": eps / s},
            "gen_pareto": {"sigma": s, "xi": 0.0},
            "ext_gp": {"sigma": s, "beta": eps, "xi": 0.0},
            "weibull_gp": {"sigma": s, "beta": 1.0, "xi": 0.0},
        }[family1]
    if family0 == "gompertz":
        s, b = mle0["sigma"], mle0["beta"]
        return {
            "gompertz_makeham": {"sigma": s, "beta": b, "lam": eps / s},
            "ext_gp": {"sigma": s, "beta": max(b, eps), "xi": 0.0},
        }[family1]
    if family0 == "gen_pareto":
        return {"sigma": mle0["sigma"], "beta": eps, "xi": mle0["xi"]}
    raise FitError(f"no embedding from {family0} into {family1}")


def _dim(family, knots=None):
    if family == "piecewise_gp":
        return 1 + len(knots)
    return len(models.param_names(family))


def _p_from_w(w, family0, family1, df, calibration):
    if calibration is None:
        calibration = (
            "half_chi2" if (family0, family1) == ("exponential", "gompertz") else "chi2"
        )
    if calibration == "half_chi2":
        p = 1.0 if w <= 0.0 else 0.5 * float(stats.chi2.sf(w, 1))
    else:
        p = float(stats.chi2.sf(w, df)) if w > 0.0 else 1.0
    return p, calibration


def lrt_nested(spec0, spec1, records, threshold=0.0, calibration=None):
    """Likelihood-ratio test of spec0 (null) inside spec1 (alternative).

    The default calibration is one-half chi-square(1) for the
    exponential-vs-gompertz boundary pair and chi-square with the
    dimension difference otherwise; pass ``calibration`` to override.
    """
    f0 = spec0.family if isinstance(spec0, ModelSpec) else str(spec0)
    f1 = spec1.family if isinstance(spec1, ModelSpec) else str(spec1)
    if (f0, f1) not in _NESTED:
        raise FitError(f"{f0} is not registered as nested inside {f1}")
    prep = prepare(records, threshold)
    fit0 = _fit_prepared(f0, prep, threshold)
    fit1 = _fit_prepared(
        f1, prep, threshold, starts=[_embed_start(f0, fit0.mle, f1)]
    )
    return _lrt_from_fits(fit0, fit1, calibration)


def _lrt_from_fits(fit0, fit1, calibration=None):
    f0, f1 = fit0.spec.family, fit1.spec.family
    w = 2.0 * (fit1.loglik - fit0.loglik)
    # boundary optima leave w a rounding error above zero; snap those to 0
    w = max(w, 0.0)
    if w <= 1e-8:
        w = 0.0
    df = _dim(f1, _knots_of(fit1)) - _dim(f0, _knots_of(fit0))
    p, cal = _p_from_w(w, f0, f1, df, calibration)
    return TestResult(
        statistic=w,
        p_asymptotic=p,
        calibration=cal,
        df=df,
        details={"null": f0, "alternative": f1, "loglik0": fit0.loglik,
                 "loglik1": fit1.loglik},
    )


def _knots_of(fit):
    if fit.spec.family == "piecewise_gp":
        return fit.mle["thresholds"]
    return None


# ----------------------------------------------------------------------
# parametric bootstrap


def _simulate_prepared(family, p, prep, rng):
    """A replicate PreparedData drawn from ``p`` under the parent's rules."""
    fast = _simulate_single_piece(family, p, prep, rng)
    if fast is not None:
        return fast

    t_obs, c_cens, lt_a = [], [], []
    tr_a, tr_b, tr_row = [], [], []
    icp_lo, icp_hi, icp_row = [], [], []
    n_tr = n_ic = n_events = 0

    for kind, pieces, scheme, extra in prep.sim:
        if scheme == "ltrc":
            # draw T | T > a, censor at the record's own horizon b
            a, b = pieces[0]
            t = _draw_conditional(family, p, ((a, math.inf),), rng)
            lt_a.append(a)
            if t >= b:
                c_cens.append(b)
            elif kind == "ic":
                anchor, width = extra
                lo = anchor + width * math.floor((t - anchor) / width)
                hi = lo + width
                icp_lo.append(max(lo, a))
                icp_hi.append(min(hi, b))
                icp_row.append(n_ic)
                n_ic += 1
            else:
                t_obs.append(t)
                n_events += 1
            continue

        t = _draw_conditional(family, p, pieces, rng)
        for a, b in pieces:
            tr_a.append(a)
            tr_b.append(b)
            tr_row.append(n_tr)
        n_tr += 1
        if kind == "obs":
            t_obs.append(t)
            n_events += 1
        else:
            anchor, width = extra
            lo = anchor + width * math.floor((t - anchor) / width)
            hi = lo + width
            for a, b in pieces:
                if a <= t <= b:
                    lo, hi = max(lo, a), min(hi, b)
                    break
            icp_lo.append(lo)
            icp_hi.append(hi)
            icp_row.append(n_ic)
            n_ic += 1

    return PreparedData(
        t_obs=np.asarray(t_obs, float),
        c_cens=np.asarray(c_cens, float),
        lt_a=np.asarray(lt_a, float),
        tr_a=np.asarray(tr_a, float),
        tr_b=np.asarray(tr_b, float),
        tr_row=np.asarray(tr_row, dtype=np.intp),
        n_tr=n_tr,
        icp_lo=np.asarray(icp_lo, float),
        icp_hi=np.asarray(icp_hi, float),
        icp_row=np.asarray(icp_row, dtype=np.intp),
        n_ic=n_ic,
        n_rows=prep.n_rows,
        n_events=n_events,
        dropped=dict(prep.dropped),
        sim=prep.sim,
    )


def _simulate_single_piece(family, p, prep, rng):
    """Vectorized replicate for all-observed, single-piece truncation data.

    The bootstrap's hot path. Returns None when any record needs the
    general per-record loop (censoring, binning, multi-piece sets).
    """
    if not prep.sim:
        return None
    for kind, pieces, scheme, extra in prep.sim:
        if kind != "obs" or scheme != "interval_truncated" or len(pieces) != 1:
            return None
    a = np.array([s[1][0][0] for s in prep.sim])
    b = np.array([s[1][0][1] for s in prep.sim])
    sf_a = np.exp(models._logsf(family, p, a))
    sf_b = np.where(np.isinf(b), 0.0, np.exp(models._logsf(family, p, b)))
    w = sf_a - sf_b
    if np.any(w <= 0.0):
        raise NumericError("simulation piece has zero probability")
    s = sf_a - rng.uniform(size=a.size) * w
    t = models._inverse_sf(family, p, np.clip(s, 1e-300, 1.0 - 1e-16))
    n = a.size
    return PreparedData(
        t_obs=np.asarray(t, float),
        c_cens=np.empty(0),
        lt_a=np.empty(0),
        tr_a=a,
        tr_b=b,
        tr_row=np.arange(n, dtype=np.intp),
        n_tr=n,
        icp_lo=np.empty(0),
        icp_hi=np.empty(0),
        icp_row=np.empty(0, dtype=np.intp),
        n_ic=0,
        n_rows=prep.n_rows,
        n_events=n,
        dropped=dict(prep.dropped),
        sim=prep.sim,
    )


def _draw_conditional(family, p, pieces, rng):
    """One draw of T conditioned on landing in the union of pieces."""
    logsf = models._logsf
    sf = [math.exp(float(logsf(family, p, np.float64(a)))) for a, _ in pieces]
    sb = [
        0.0 if math.isinf(b) else math.exp(float(logsf(family, p, np.float64(b))))
        for _, b in pieces
    ]
    w = [max(x - y, 0.0) for x, y in zip(sf, sb)]
    total = sum(w)
    if total <= 0.0:
        raise NumericError("simulation piece has zero probability")
    j = 0
    if len(pieces) > 1:
        u = rng.uniform() * total
        acc = 0.0
        for j, wj in enumerate(w):
            acc += wj
            if u <= acc:
                break
    s = sf[j] - rng.uniform() * w[j]
    s = min(max(s, 1e-300), 1.0 - 1e-16)
    t = models._inverse_sf(family, p, np.array([s]))
    return float(t[0])


def bootstrap_lrt(spec0, spec1, records, B, seed, threshold=0.0, calibration=None):
    """Parametric-bootstrap calibration of the nested likelihood-ratio test.

    Simulates B datasets from the fitted null, each record keeping its own
    truncation, censoring horizon, and binning rules; replicate b uses the
    dedicated stream (seed, b). p_b = (1 + #{w* >= w}) / (B_ok + 1).
    Aborts when more than 2% of replicate fits fail.
    """
    f0 = spec0.family if isinstance(spec0, ModelSpec) else str(spec0)
    f1 = spec1.family if isinstance(spec1, ModelSpec) else str(spec1)
    if (f0, f1) not in _NESTED:
        raise FitError(f"{f0} is not registered as nested inside {f1}")
    prep = prepare(records, threshold)
    fit0 = _fit_prepared(f0, prep, threshold)
    if not fit0.converged:
        raise FitError("null fit did not converge; bootstrap needs a null model")
    fit1 = _fit_prepared(f1, prep, threshold, starts=[_embed_start(f0, fit0.mle, f1)])
    base = _lrt_from_fits(fit0, fit1, calibration)
    w_obs = base.statistic

    B = int(B)
    if B <= 0:
        return TestResult(
            statistic=w_obs,
            p_asymptotic=base.p_asymptotic,
            calibration="bootstrap",
            df=base.df,
            p_bootstrap=1.0,
            B=0,
            seed=seed,
            flags=("degenerate_B0",),
            details=base.details,
        )

    w_star = np.full(B, np.nan)
    failed = 0
    for b in range(B):
        rng = rng_stream(seed, b)
        rep = _simulate_prepared(f0, fit0.mle, prep, rng)
        try:
            r0 = _fit_prepared(
                f0, rep, threshold, starts=[fit0.mle],
                _starts_only=True, _light=True,
            )
            r1 = _fit_prepared(
                f1, rep, threshold,
                starts=[_embed_start(f0, r0.mle, f1), fit1.mle],
                _starts_only=True, _light=True,
            )
        except (FitError, NumericError):
            failed += 1
            continue
        if not (r0.converged and r1.converged):
            failed += 1
            continue
        w_star[b] = max(2.0 * (r1.loglik - r0.loglik), 0.0)

    if failed > 0.02 * B:
        raise NumericError(
            f"bootstrap aborted: {failed} of {B} replicate fits failed"
        )
    ok = ~np.isnan(w_star)
    n_ok = int(ok.sum())
    p_b = (1.0 + float(np.sum(w_star[ok] >= w_obs))) / (n_ok + 1.0)

    return TestResult(
        statistic=w_obs,
        p_asymptotic=base.p_asymptotic,
        calibration="bootstrap",
        df=base.df,
        p_bootstrap=p_b,
        B=B,
        seed=seed,
        n_boot_failed=failed,
        details=base.details,
    )


# ----------------------------------------------------------------------
# piecewise shape tests and group comparisons


def nc_fit_and_shape_test(records, thresholds, threshold_origin=0.0):
    """Piecewise generalized Pareto fit plus equal-shape tests.

    ``thresholds`` are in years on the records' own excess axis (after the
    optional ``threshold_origin`` shift). Fits the full piecewise model
    with one shape per threshold, then for each k tests the null that the
    shapes from k on are equal, via chi-square with K - k degrees of
    freedom. Requires at least 5 observed deaths strictly between
    consecutive thresholds.
    """
    thresholds = [float(u) for u in thresholds]
    if len(thresholds) < 1:
        raise FitError("need at least one threshold")
    v = float(threshold_origin) + thresholds[0]
    knots = tuple(u - thresholds[0] for u in thresholds)
    prep = prepare(records, v)

    pts = prep.t_obs
    if prep.n_ic:
        hi = np.where(np.isfinite(prep.icp_hi), prep.icp_hi, prep.icp_lo)
        mids = np.asarray(
            np.bincount(prep.icp_row, weights=0.5 * (prep.icp_lo + hi))
            / np.maximum(np.bincount(prep.icp_row), 1)
        )
        pts = np.concatenate([pts, mids])
    edges = list(knots) + [math.inf]
    for k in range(len(knots)):
        n_k = int(np.sum((pts > edges[k]) & (pts <= edges[k + 1])))
        if k < len(knots) - 1 and n_k < 5:
            raise FitError(
                f"interval ({edges[k]}, {edges[k + 1]}] holds {n_k} deaths, need 5"
            )

    full = _fit_prepared("piecewise_gp", prep, v, knots=knots)
    K = len(knots)
    tests = []
    for k in range(1, K):
        null_knots = knots[:k]
        emb = {
            "thresholds": tuple(knots),
            "sigma1": full.mle["sigma1"],
            "xi": full.mle["xi"],
        }
        null_start = {
            "thresholds": tuple(null_knots),
            "sigma1": full.mle["sigma1"],
            "xi": tuple(full.mle["xi"][:k]),
        }
        nul = _fit_prepared(
            "piecewise_gp", prep, v, knots=null_knots, starts=[null_start]
        )
        w = max(2.0 * (full.loglik - nul.loglik), 0.0)
        df = K - k
        tests.append(
            TestResult(
                statistic=w,
                p_asymptotic=float(stats.chi2.sf(w, df)) if w > 0 else 1.0,
                calibration="chi2",
                df=df,
                details={"equal_shapes_from": k, "null_loglik": nul.loglik},
            )
        )
    return full, tests


def group_comparison(records, grouping, family="gen_pareto", threshold=0.0):
    """LRT of separate per-group fits against one pooled fit.

    ``grouping`` is a covariate name or a callable record -> label. With m
    groups and a k-parameter family the statistic is chi-square with
    (m - 1) k degrees of freedom under the shared-model null.
    """
    if callable(grouping):
        key = grouping
    else:
        name = str(grouping)
        key = lambda rec: rec.covariates.get(name)
    groups = {}
    for rec in records:
        groups.setdefault(key(rec), []).append(rec)
    groups = {g: rs for g, rs in groups.items() if g is not None}
    if len(groups) < 2:
        raise FitError("grouping must induce at least 2 nonempty groups")

    fam = family.family if isinstance(family, ModelSpec) else str(family)
    pooled = fit_mle(ModelSpec(fam), records, threshold=threshold)
    ll_split = 0.0
    sizes = {}
    for g, rs in sorted(groups.items(), key=lambda kv: str(kv[0])):
        f = fit_mle(ModelSpec(fam), rs, threshold=threshold, starts=[pooled.mle])
        if not f.converged:
            raise FitError(f"group {g!r} fit did not converge")
        ll_split += f.loglik
        sizes[str(g)] = f.n_used
    k = _dim(fam)
    m = len(groups)
    w = max(2.0 * (ll_split - pooled.loglik), 0.0)
    df = (m - 1) * k
    return TestResult(
        statistic=w,
        p_asymptotic=float(stats.chi2.sf(w, df)) if w > 0 else 1.0,
        calibration="chi2",
        df=df,
        details={"groups": sizes, "pooled_loglik": pooled.loglik,
                 "split_loglik": ll_split},
    )


def wald_compare_scale(fit_a, fit_b, param="sigma"):
    """Two-sided Wald test that one parameter is equal across two fits."""
    za = fit_a.mle[param]
    zb = fit_b.mle[param]
    va = fit_a.se[param] ** 2
    vb = fit_b.se[param] ** 2
    z = (za - zb) / math.sqrt(va + vb)
    p = 2.0 * float(stats.norm.sf(abs(z)))
    return TestResult(
        statistic=z * z,
        p_asymptotic=p,
        calibration="chi2",
        df=1,
        details={"z": z, param + "_a": za, param + "_b": zb},
    )

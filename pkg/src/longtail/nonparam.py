"""Nonparametric lifetime estimation under truncation and censoring.

Two estimators share one result type. The product-limit (Kaplan-Meier)
path handles left-truncated, right-censored data: discrete hazards
h_j = d_j / r_j at the distinct death times, survivor by the product of
(1 - h_j), Greenwood-form pointwise variance. The Turnbull path handles
general interval censoring combined with interval truncation by an EM
whose E-step imputes both the atom membership of each censored lifetime
and the "ghost" individuals that truncation hid, and whose M-step
renormalizes the summed weights.

When the data are censored beyond the last support atom (or truncated so
that mass escapes to infinity), the escaping probability is reported as
``mass_deficit`` rather than being forced onto a finite atom; masses plus
deficit sum to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .util import DAYS_PER_YEAR, jsonable

__all__ = ["NPEstimate", "kaplan_meier", "turnbull_em"]

_INTERIOR_MASS = 1e-8


@dataclass
class NPEstimate:
    """A discrete distribution estimate on ordered support atoms.

    ``survivor[j]`` is P(T > support[j]); ``variance[j]`` estimates its
    pointwise variance (nan where unavailable). ``support_intervals``
    records, for the Turnbull path, the maximal-intersection interval each
    atom represents; exact atoms have zero-width intervals.
    """

    support: np.ndarray
    mass: np.ndarray
    survivor: np.ndarray
    cum_hazard: np.ndarray
    variance: np.ndarray
    mass_deficit: float
    loglik: float
    iterations: int
    method: str
    unit: str
    flags: tuple = ()
    support_intervals: list = field(default_factory=list)

    def survivor_at(self, t):
        """Step-function value of P(T > t); right-continuous."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.support, t, side="right")
        s = np.concatenate([[1.0], self.survivor])
        out = s[idx]
        return float(out) if np.ndim(t) == 0 else out

    def cdf_at(self, t):
        return 1.0 - self.survivor_at(t)

    def to_json(self):
        return jsonable(
            {
                "method": self.method,
                "unit": self.unit,
                "support": self.support,
                "mass": self.mass,
                "survivor": self.survivor,
                "cum_hazard": self.cum_hazard,
                "variance": self.variance,
                "mass_deficit": self.mass_deficit,
                "loglik": self.loglik,
                "iterations": self.iterations,
                "flags": list(self.flags),
                "support_intervals": [list(iv) for iv in self.support_intervals],
            }
        )

    def to_csv(self, path):
        arr = np.column_stack([self.support, self.mass, self.survivor, self.variance])
        np.savetxt(
            path,
            arr,
            delimiter=",",
            header="support,mass,survivor,variance",
            comments="",
        )


def _common_unit(records):
    units = {rec.unit for rec in records}
    if len(units) == 1:
        only = units.pop()
        return only, {only: 1.0}
    return "years", {"days": 1.0 / DAYS_PER_YEAR, "years": 1.0}


def _scale_for(rec, unit, factors):
    if len(factors) == 1:
        return 1.0
    return factors[rec.unit]


# ----------------------------------------------------------------------
# product-limit estimator


def kaplan_meier(records):
    """Product-limit estimate for left-truncated, right-censored records.

    Each record must carry a single truncation interval whose lower bound
    acts as the entry time; the upper bound must be +inf or, under the
    ltrc scheme, the censoring horizon. Interval censoring and genuine
    right truncation are outside this estimator.
    """
    records = list(records)
    if not records:
        raise ValueError("kaplan_meier needs at least one record")
    unit, factors = _common_unit(records)

    entries, times, died = [], [], []
    for i, rec in enumerate(records):
        c = _scale_for(rec, unit, factors)
        if rec.censoring == "interval_censored":
            raise ValueError(f"record {i} is interval censored; use turnbull_em")
        if len(rec.truncation) != 1:
            raise ValueError(f"record {i} has a multi-interval truncation set")
        a, b = rec.truncation[0]
        if rec.scheme != "ltrc" and math.isfinite(b):
            raise ValueError(
                f"record {i} is right-truncated; the product limit cannot use it"
            )
        entries.append(a * c)
        times.append(float(rec.excess_lifetime) * c)
        died.append(rec.censoring == "observed")

    entries = np.asarray(entries)
    times = np.asarray(times)
    died = np.asarray(died)

    death_times = np.unique(times[died])
    support, mass, surv, cumh, var = [], [], [], [], []
    flags = ()
    s_prev = 1.0
    green = 0.0
    loglik = 0.0
    for tj in death_times:
        dj = int(np.sum(died & (times == tj)))
        rj = int(np.sum((entries < tj) & (tj <= times)))
        if rj == 0:
            flags += ("risk_set_empty",)
            break
        hj = dj / rj
        support.append(tj)
        mass.append(s_prev * hj)
        s_here = s_prev * (1.0 - hj)
        surv.append(s_here)
        cumh.append((cumh[-1] if cumh else 0.0) + hj)
        if hj < 1.0:
            green += hj / (rj * (1.0 - hj))
            var.append(s_here * s_here * green)
        else:
            var.append(0.0)
        loglik += dj * math.log(hj)
        if rj > dj:
            loglik += (rj - dj) * math.log1p(-hj)
        s_prev = s_here

    support = np.asarray(support)
    mass = np.asarray(mass)
    deficit = float(1.0 - mass.sum())
    if deficit > 1e-12:
        flags += ("mass_deficit",)
    else:
        deficit = 0.0

    return NPEstimate(
        support=support,
        mass=mass,
        survivor=np.asarray(surv),
        cum_hazard=np.asarray(cumh),
        variance=np.asarray(var),
        mass_deficit=deficit,
        loglik=loglik,
        iterations=0,
        method="kaplan_meier",
        unit=unit,
        flags=flags,
        support_intervals=[(float(t), float(t)) for t in support],
    )


# ----------------------------------------------------------------------
# Turnbull EM

# Endpoints live in a position space (value, tier) with tier -1 meaning
# "just before value", 0 "at value", +1 "just after value"; lexicographic
# order then encodes open and closed endpoints exactly.


def _record_sets(rec, scale):
    """(censoring interval, truncation intervals) in position space."""
    if rec.censoring == "observed":
        t = float(rec.excess_lifetime) * scale
        cset = ((t, 0), (t, 0))
    elif rec.censoring == "right_censored":
        t = float(rec.excess_lifetime) * scale
        cset = ((t, 1), (math.inf, 0))
    else:
        l, r = rec.interval()
        cset = ((l * scale, 0), (r * scale if math.isfinite(r) else math.inf, -1))

    if rec.scheme == "ltrc":
        # closed at the entry time so window-clipped bins [a, r) pass the
        # subset check; immaterial for continuous laws
        a = rec.truncation[0][0] * scale
        tsets = (((a, 0), (math.inf, 0)),)
    else:
        tsets = tuple(
            ((a * scale, 0), (b * scale if math.isfinite(b) else math.inf, 0))
            for a, b in rec.truncation
        )
    return cset, tsets


def _subset_of_union(cset, tsets):
    lo, hi = cset
    for a, b in tsets:
        if a <= lo and hi <= b:
            return True
    return False


def _maximal_intersections(csets):
    """Turnbull support: the maximal intersections of the censoring sets."""
    lefts = sorted({c[0] for c in csets})
    rights = sorted({c[1] for c in csets})
    out = []
    for i, l in enumerate(lefts):
        nxt = lefts[i + 1] if i + 1 < len(lefts) else (math.inf, 2)
        r = None
        for cand in rights:
            if cand >= l:
                r = cand
                break
        if r is None:
            continue
        if nxt > r:
            out.append((l, r))
    return out


def _representative(l, r):
    if l[1] == 0:
        return l[0]
    if r[1] == 0:
        return r[0]
    return 0.5 * (l[0] + r[0])


def _contains(interval, value):
    l, r = interval
    pos = (value, 0)
    return l <= pos <= r


def turnbull_em(records, support=None, tol=1e-9, max_iter=100000, track=False):
    """Self-consistent nonparametric MLE for interval-censored,
    interval-truncated lifetimes.

    With ``support=None`` the atoms are the maximal intersections of the
    censoring sets (exact deaths give their own atoms). Masses start
    uniform; the E-step computes atom memberships and truncation ghosts,
    the M-step renormalizes; convergence is declared when no mass moves
    by more than ``tol``. A decreasing log likelihood (beyond 1e-8) is an
    internal error. ``track=True`` records the log-likelihood path.
    """
    records = list(records)
    if not records:
        raise ValueError("turnbull_em needs at least one record")
    unit, factors = _common_unit(records)

    csets, tsets_all = [], []
    for i, rec in enumerate(records):
        cset, tsets = _record_sets(rec, _scale_for(rec, unit, factors))
        if not _subset_of_union(cset, tsets):
            raise ValueError(
                f"record {i}: censoring set {cset} not inside truncation set"
            )
        csets.append(cset)
        tsets_all.append(tsets)

    if support is None:
        pairs = _maximal_intersections(csets)
        atoms = [_representative(l, r) for l, r in pairs]
        intervals = [(l[0], r[0]) for l, r in pairs]
    else:
        atoms = sorted(float(s) for s in set(support))
        pairs = [((s, 0), (s, 0)) for s in atoms]
        intervals = [(s, s) for s in atoms]

    atoms = np.asarray(atoms, float)
    J = atoms.size
    if J == 0:
        raise ValueError("empty support")

    n = len(records)
    A = np.zeros((n, J))
    T = np.zeros((n, J))
    for i in range(n):
        for j in range(J):
            if _contains(csets[i], atoms[j]):
                A[i, j] = 1.0
            if any(_contains(ts, atoms[j]) for ts in tsets_all[i]):
                T[i, j] = 1.0
        if not A[i].any():
            raise ValueError(f"record {i}: no support atom in its censoring set")
        if not T[i].any():
            raise ValueError(f"record {i}: no support atom in its truncation set")

    f = np.full(J, 1.0 / J)
    ll_old = -np.inf
    path = []
    iterations = 0
    for iterations in range(1, int(max_iter) + 1):
        af = A @ f
        tf = np.maximum(T @ f, 1e-300)
        ll = float(np.sum(np.log(np.maximum(af, 1e-300))) - np.sum(np.log(tf)))
        if ll < ll_old - 1e-8:
            raise RuntimeError(
                f"internal error: EM log-likelihood decreased ({ll_old} -> {ll})"
            )
        if track:
            path.append(ll)
        ll_old = ll
        I = A * (f / af[:, None]) + (1.0 - T) * (f / tf[:, None])
        newf = I.sum(axis=0)
        newf /= newf.sum()
        delta = float(np.max(np.abs(newf - f)))
        f = newf
        if delta < tol:
            break

    af = A @ f
    tf = np.maximum(T @ f, 1e-300)
    loglik = float(np.sum(np.log(np.maximum(af, 1e-300))) - np.sum(np.log(tf)))

    flags = ()
    if iterations >= int(max_iter):
        flags += ("max_iter_reached",)

    variance = _em_variance(A, T, f)

    # an atom at infinity holds escaped mass; report it as a deficit
    deficit = 0.0
    keep = np.ones(J, dtype=bool)
    if np.isinf(atoms[-1]):
        deficit = float(f[-1])
        keep[-1] = False
        if deficit > 0:
            flags += ("mass_beyond_support",)
    if np.any(f[keep] < 0):
        f = np.maximum(f, 0.0)

    atoms_out = atoms[keep]
    f_out = f[keep]
    surv = 1.0 - np.cumsum(f_out)
    surv = np.maximum(surv, 0.0)
    s_prev = np.concatenate([[1.0], surv[:-1]])
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(s_prev > 0, f_out / s_prev, 0.0)
    cumh = np.cumsum(h)

    if np.any(f_out <= _INTERIOR_MASS):
        flags += ("boundary_mass_variance_omitted",)

    est = NPEstimate(
        support=atoms_out,
        mass=f_out,
        survivor=surv,
        cum_hazard=cumh,
        variance=variance[keep] if variance is not None else np.full(keep.sum(), np.nan),
        mass_deficit=deficit,
        loglik=loglik,
        iterations=iterations,
        method="turnbull_em",
        unit=unit,
        flags=flags,
        support_intervals=[iv for iv, k in zip(intervals, keep) if k],
    )
    if track:
        est.loglik_path = np.asarray(path)
    return est


def _em_variance(A, T, f):
    """Pointwise variance of the survivor steps from the observed
    information of the atom-mass likelihood.

    The constraint sum(f)=1 is removed by treating the last interior atom
    as slack. Variances are reported only where the mass is interior
    (above 1e-8); boundary atoms get nan.
    """
    J = f.size
    interior = np.nonzero(f > _INTERIOR_MASS)[0]
    var_s = np.full(J, np.nan)
    if interior.size < 2:
        return var_s
    free = interior[:-1]
    slack = interior[-1]
    af = A @ f
    tf = np.maximum(T @ f, 1e-300)

    dA = A[:, free] - A[:, [slack]]
    dT = T[:, free] - T[:, [slack]]
    H = -(dA / af[:, None]).T @ (dA / af[:, None]) + (dT / tf[:, None]).T @ (
        dT / tf[:, None]
    )
    info = -H
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)

    # S_j = sum of masses strictly after atom j; gradient wrt free masses
    for j in range(J):
        g = np.where(free > j, 1.0, 0.0) - (1.0 if slack > j else 0.0)
        v = float(g @ cov @ g)
        var_s[j] = v if v >= 0 else np.nan
    return var_s

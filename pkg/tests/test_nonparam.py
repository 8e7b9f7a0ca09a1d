# Nonparametric estimators. The product-limit table is worked by hand; the
# EM solution is checked against a brute-force search over the mass simplex.

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from longtail.lexis import LifetimeRecord
from longtail.models import sample
from longtail.nonparam import kaplan_meier, turnbull_em

INF = math.inf


def _obs(t, a=0.0, b=INF, scheme="interval_truncated", unit="years"):
    if scheme == "ltrc" and not math.isfinite(b):
        b = max(10.0, t + 1.0)
    return LifetimeRecord(
        excess_lifetime=float(t),
        censoring="observed",
        truncation=((float(a), float(b)),),
        scheme=scheme,
        unit=unit,
    )


def _cens(t, a=0.0):
    return LifetimeRecord(
        excess_lifetime=float(t),
        censoring="right_censored",
        truncation=((float(a), float(t)),),
        scheme="ltrc",
        unit="years",
    )


def _ic(l, r, trunc=((0.0, INF),)):
    return LifetimeRecord(
        excess_lifetime=(float(l), float(r)),
        censoring="interval_censored",
        truncation=tuple(trunc),
        unit="years",
    )


class TestKaplanMeier:
    def test_hand_worked_table(self):
        """Entries (0,0,1,2,0,4), exits (3,5+,6,7.5,7.5,9+). Deaths at
        3, 6 and 7.5 face risk sets of 5, 4 and 3 (entry < t <= exit), so
        the hazards are 1/5, 1/4 and 2/3:

            S: 0.8, 0.6, 0.2     mass: 0.2, 0.2, 0.4
            Greenwood: 0.64*.05 = .032, 0.36*(.05+1/12) = .048,
                       0.04*(.05+1/12+2/3) = .032
            loglik: log(1/5 (4/5)^4) + log(1/4 (3/4)^3) + log((2/3)^2 1/3)
                  = -6.660895201050611
        """
        recs = [
            _obs(3.0, a=0.0, scheme="ltrc"),
            _cens(5.0, a=0.0),
            _obs(6.0, a=1.0, scheme="ltrc"),
            _obs(7.5, a=2.0, scheme="ltrc"),
            _obs(7.5, a=0.0, scheme="ltrc"),
            _cens(9.0, a=4.0),
        ]
        est = kaplan_meier(recs)
        assert_allclose(est.support, [3.0, 6.0, 7.5])
        assert_allclose(est.survivor, [0.8, 0.6, 0.2], rtol=1e-12)
        assert_allclose(est.mass, [0.2, 0.2, 0.4], rtol=1e-12)
        assert_allclose(est.cum_hazard, [0.2, 0.45, 1.1166666666666667], rtol=1e-12)
        assert_allclose(est.variance, [0.032, 0.048, 0.032], rtol=1e-12)
        assert_allclose(est.loglik, -6.660895201050611, rtol=1e-12)
        # a censored record survives past the last death: mass is missing
        assert est.mass_deficit == pytest.approx(0.2)
        assert "mass_deficit" in est.flags
        assert est.method == "kaplan_meier"

    def test_survivor_at_steps(self):
        recs = [_obs(t) for t in (1.0, 2.0, 4.0)]
        est = kaplan_meier(recs)
        assert est.survivor_at(0.5) == 1.0
        assert est.survivor_at(1.0) == pytest.approx(2.0 / 3.0)
        assert est.survivor_at(3.9) == pytest.approx(1.0 / 3.0)
        assert est.survivor_at(4.0) == 0.0

    def test_rejects_interval_censoring(self):
        with pytest.raises(ValueError):
            kaplan_meier([_ic(0.5, 1.5)])

    def test_rejects_right_truncation(self):
        bad = _obs(1.0, a=0.0, b=5.0)  # finite window, not a censoring horizon
        with pytest.raises(ValueError):
            kaplan_meier([bad])

    def test_rejects_multi_interval_truncation(self):
        rec = LifetimeRecord(
            excess_lifetime=1.0,
            censoring="observed",
            truncation=((0.0, 2.0), (3.0, INF)),
            unit="years",
        )
        with pytest.raises(ValueError):
            kaplan_meier([rec])


class TestTurnbull:
    def test_exact_data_is_the_ecdf(self):
        pts = [0.7, 1.1, 2.4, 3.0, 5.2]
        est = turnbull_em([_obs(t) for t in pts])
        assert_allclose(est.support, sorted(pts))
        assert_allclose(est.mass, np.full(5, 0.2), atol=1e-9)
        assert_allclose(est.survivor, [0.8, 0.6, 0.4, 0.2, 0.0], atol=1e-9)
        assert_allclose(est.loglik, 5 * math.log(0.2), rtol=1e-9)
        assert est.mass_deficit == 0.0

    def test_matches_product_limit_on_censored_data(self):
        """With right censoring and no truncation the self-consistent
        estimator and the product limit coincide (both are the NPMLE)."""
        rng = np.random.default_rng(4)
        t = rng.exponential(1.5, 40)
        c = rng.uniform(0.5, 3.0, 40)
        recs = []
        for ti, ci in zip(t, c):
            if ti <= ci:
                recs.append(_obs(ti, scheme="ltrc"))
            else:
                recs.append(_cens(ci))
        km = kaplan_meier(recs)
        tb = turnbull_em(recs)
        for tj in km.support:
            assert abs(tb.survivor_at(tj) - km.survivor_at(tj)) < 1e-6
        assert tb.mass_deficit == pytest.approx(km.mass_deficit, abs=1e-6)

    def test_simplex_grid_oracle(self):
        """Three support atoms, one truncated record. The EM mass vector
        must dominate every point of a 0.0025-step sweep of the simplex
        under the atom-mass log likelihood
            sum_i log(sum_{j in C_i} f_j) - sum_i log(sum_{j in T_i} f_j).
        """
        recs = [
            _ic(0.5, 1.5),            # atom 1 only
            _ic(0.5, 2.5),            # atoms 1, 2
            _ic(1.5, 3.5),            # atoms 2, 3
            _obs(3.0),                # atom 3 exactly
            _ic(1.5, 2.5),            # atom 2
            _ic(2.5, 3.5, trunc=((1.5, INF),)),  # atom 3, truncated to {2, 3}
        ]
        est = turnbull_em(recs, support=[1.0, 2.0, 3.0], tol=1e-12)
        A = np.array(
            [
                [1, 0, 0],
                [1, 1, 0],
                [0, 1, 1],
                [0, 0, 1],
                [0, 1, 0],
                [0, 0, 1],
            ],
            dtype=float,
        )
        T = np.ones((6, 3))
        T[5] = [0.0, 1.0, 1.0]

        def ll(f):
            return float(np.sum(np.log(A @ f)) - np.sum(np.log(T @ f)))

        best, best_f = -np.inf, None
        grid = np.arange(0.0025, 1.0, 0.0025)
        for f1 in grid:
            for f2 in grid:
                f3 = 1.0 - f1 - f2
                if f3 <= 0:
                    continue
                v = ll(np.array([f1, f2, f3]))
                if v > best:
                    best, best_f = v, (f1, f2, f3)
        assert est.loglik >= best - 1e-6
        assert_allclose(est.mass, best_f, atol=0.005)

    def test_censoring_outside_truncation_raises(self):
        with pytest.raises(ValueError):
            turnbull_em([_ic(0.5, 2.5, trunc=((1.0, INF),))])

    def test_loglik_path_monotone(self):
        recs = [_ic(0.0, 1.0), _ic(0.5, 2.0), _ic(1.5, 3.0), _obs(2.5), _ic(0.2, 2.6)]
        est = turnbull_em(recs, track=True)
        path = est.loglik_path
        assert path.size == est.iterations
        assert np.all(np.diff(path) >= -1e-10)

    def test_right_censored_tail_reported_as_deficit(self):
        recs = [_obs(1.0, scheme="ltrc"), _obs(2.0, scheme="ltrc"), _cens(3.0)]
        est = turnbull_em(recs)
        assert est.mass_deficit > 0.0
        assert "mass_beyond_support" in est.flags
        assert est.survivor_at(2.5) == pytest.approx(est.mass_deficit, abs=1e-9)

    def test_variance_matches_multinomial(self):
        # distinct exact deaths: var S(t_j) = S(1 - S)/n exactly
        pts = np.linspace(0.5, 6.0, 20)
        est = turnbull_em([_obs(t) for t in pts], tol=1e-13)
        n = pts.size
        expect = est.survivor * (1.0 - est.survivor) / n
        assert_allclose(est.variance[:-1], expect[:-1], rtol=1e-4)

    def test_mixed_units_normalize_to_years(self):
        recs = [
            _obs(365.25, unit="days"),
            _obs(1.5, unit="years"),
        ]
        est = turnbull_em(recs)
        assert est.unit == "years"
        assert_allclose(est.support, [1.0, 1.5])


def test_truncation_correction_moves_mass():
    """Two identical exact deaths, one only observable late: the truncated
    record's ghost copies push mass toward the unobservable early region."""
    plain = turnbull_em([_obs(1.0), _obs(3.0)])
    trunc = turnbull_em([_obs(1.0), _obs(3.0, a=2.0)])
    # untruncated: equal masses; truncated: the late death stands for
    # fewer individuals, so the early atom gains
    assert_allclose(plain.mass, [0.5, 0.5], atol=1e-9)
    assert trunc.mass[0] > 0.5


def test_turnbull_ltrc_conditions_on_entry():
    """Under ltrc the upper bound is a censoring horizon, not a truncation
    bound, so only the entry side conditions the denominator."""
    recs = [
        _obs(1.0, scheme="ltrc"),
        _obs(2.5, a=2.0, scheme="ltrc"),
        _obs(4.0, a=2.0, scheme="ltrc"),
    ]
    est = turnbull_em(recs)
    assert_allclose(est.mass.sum(), 1.0, atol=1e-9)
    # the late entries are conditioned on surviving past 2, which inflates
    # the early atom relative to the naive 1/3 split
    assert est.mass[0] > 1.0 / 3.0

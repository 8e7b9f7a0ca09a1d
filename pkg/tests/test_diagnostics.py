# Q-Q machinery. Without truncation both strategies must reduce to the
# classical plotting positions, which pins the whole transform chain.

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from longtail.diagnostics import qq_bootstrap_band, qq_positions_truncated
from longtail.fit import fit_mle
from longtail.lexis import LifetimeRecord
from longtail.models import ModelSpec, quantile, sample

INF = math.inf


def _obs(t, trunc=((0.0, INF),)):
    return LifetimeRecord(
        excess_lifetime=float(t),
        censoring="observed",
        truncation=tuple(trunc),
        unit="years",
    )


PARAMS = {"sigma": 1.4}
F0 = (ModelSpec("exponential"), PARAMS)


def test_classical_positions_without_truncation():
    """Untruncated exact data: the transformed value is the observation
    itself and the position is Q0(rank/(n+1))."""
    pts = [0.3, 1.9, 0.8, 2.6, 1.2]
    qq = qq_positions_truncated([_obs(t) for t in pts], F0, strategy="A")
    assert_allclose(qq.value, pts, rtol=1e-10)
    ranks = np.argsort(np.argsort(pts)) + 1
    expect = [quantile("exponential", PARAMS, r / 6.0) for r in ranks]
    assert_allclose(qq.position, expect, rtol=1e-10)
    assert qq.record_id == [0, 1, 2, 3, 4]
    assert qq.skipped == []


def test_strategies_agree_without_truncation():
    t = sample("exponential", PARAMS, 60, seed=14)
    recs = [_obs(v) for v in t]
    a = qq_positions_truncated(recs, F0, strategy="A")
    b = qq_positions_truncated(recs, F0, strategy="B")
    assert_allclose(a.value, b.value, rtol=1e-9)
    assert_allclose(a.position, b.position, rtol=1e-9)


def test_truncated_record_transforms_through_window():
    """One record observable only on (1, 2): its transformed value under
    strategy A is Q0 of the conditional cdf, mapped by construction to the
    window's probability share."""
    rec = _obs(1.5, trunc=((1.0, 2.0),))
    qq = qq_positions_truncated([rec, _obs(0.5), _obs(2.5), _obs(1.1)], F0,
                                strategy="A")
    S = lambda x: math.exp(-x / 1.4)
    u = (S(1.0) - S(1.5)) / (S(1.0) - S(2.0))
    expect = quantile("exponential", PARAMS, u)
    assert_allclose(qq.value[0], expect, rtol=1e-10)


def test_zero_probability_window_skipped():
    gp = (ModelSpec("gen_pareto"), {"sigma": 1.0, "xi": -0.5})
    recs = [_obs(0.5), _obs(1.0), _obs(1.5), _obs(2.7, trunc=((2.5, 3.0),))]
    qq = qq_positions_truncated(recs, gp, strategy="A")
    assert len(qq.skipped) == 1
    assert qq.skipped[0][0] == 3
    assert "window probability" in qq.skipped[0][1]
    assert qq.position.size == 3


def test_strategy_validation_and_empty():
    with pytest.raises(ValueError):
        qq_positions_truncated([_obs(1.0)], F0, strategy="C")
    cens = LifetimeRecord(
        excess_lifetime=1.0,
        censoring="right_censored",
        truncation=((0.0, 1.0),),
        scheme="ltrc",
        unit="years",
    )
    with pytest.raises(ValueError):
        qq_positions_truncated([cens, cens, cens], F0)


def test_csv_layout(tmp_path):
    t = sample("exponential", PARAMS, 12, seed=15)
    qq = qq_positions_truncated([_obs(v) for v in t], F0)
    path = tmp_path / "qq.csv"
    qq.to_csv(str(path))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "position,value,lo,hi,record_id"
    assert len(lines) == 13
    first = lines[1].split(",")
    assert float(first[0]) == pytest.approx(qq.position[0])
    assert first[4] == "0"


class TestBootstrapBand:
    def _fit_and_records(self):
        t = sample("exponential", PARAMS, 50, seed=16)
        recs = [_obs(v, trunc=((0.0, 6.0),)) for v in t if v < 6.0]
        return fit_mle(ModelSpec("exponential"), recs), recs

    def test_band_attaches_and_brackets(self):
        fit, recs = self._fit_and_records()
        qq = qq_bootstrap_band(fit, recs, B=39, level=0.9, seed=20)
        assert qq.lo.shape == qq.position.shape
        assert np.all(qq.lo <= qq.hi)
        assert qq.level == 0.9
        assert "pointwise_band" in qq.flags
        assert qq.meta["B"] == 39
        assert qq.meta["failed"] <= 0.02 * 39
        # a well-specified model keeps most points inside its own band
        inside = np.mean((qq.value >= qq.lo) & (qq.value <= qq.hi))
        assert inside > 0.6

    def test_level_zero_collapses(self):
        fit, recs = self._fit_and_records()
        qq = qq_bootstrap_band(fit, recs, B=19, level=0.0, seed=21)
        assert_allclose(qq.lo, qq.median, rtol=1e-12)
        assert_allclose(qq.hi, qq.median, rtol=1e-12)

    def test_deterministic_in_seed(self):
        fit, recs = self._fit_and_records()
        q1 = qq_bootstrap_band(fit, recs, B=19, seed=22)
        q2 = qq_bootstrap_band(fit, recs, B=19, seed=22)
        assert np.array_equal(q1.lo, q2.lo)
        assert np.array_equal(q1.hi, q2.hi)

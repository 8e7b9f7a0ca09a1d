# Calendar geometry and CSV ingestion. The observability sets are checked
# against a literal day-by-day scan of the frame definitions.

import json

import pytest

from longtail.lexis import (
    CalendarDate,
    FrameError,
    LifetimeRecord,
    SamplingFrame,
    excess_interval,
    idl_observable_set,
    ingest_csv,
    load_frames,
    record_from_json,
    record_to_json,
    validate_record,
)
from longtail.util import DAYS_PER_YEAR


def test_calendar_date_basics():
    d = CalendarDate.from_iso("1990-01-01")
    assert d.to_iso() == "1990-01-01"
    assert CalendarDate.from_iso("1800-01-01").days_since_epoch == 0
    assert CalendarDate.from_ymd(1800, 1, 2) - CalendarDate.from_ymd(1800, 1, 1) == 1
    assert d.add_days(31).to_iso() == "1990-02-01"
    # 1990-01-01 minus 1989-06-15 spans 200 days
    assert d - CalendarDate.from_iso("1989-06-15") == 200


def test_add_years_clamps_leap_day():
    feb29 = CalendarDate.from_iso("2000-02-29")
    assert feb29.add_years(1).to_iso() == "2001-02-28"
    assert feb29.add_years(4).to_iso() == "2004-02-29"
    assert CalendarDate.from_iso("1885-03-10").add_years(105).to_iso() == "1990-03-10"


def test_frame_validation():
    c1 = CalendarDate.from_iso("1990-01-01")
    c2 = CalendarDate.from_iso("2000-12-31")
    with pytest.raises(FrameError):
        SamplingFrame(kind="poisson", c1=c1, c2=c2)
    with pytest.raises(FrameError):
        SamplingFrame(kind="interval_truncated", c1=c2, c2=c1)
    with pytest.raises(FrameError):
        SamplingFrame(kind="idl_dual", c1=c1, c2=c2)  # missing d1, d2
    f = SamplingFrame(
        kind="idl_dual",
        c1=CalendarDate.from_iso("1995-01-01"),
        c2=CalendarDate.from_iso("2005-12-31"),
        d1=c1,
        d2=c2,
    )
    assert f.u0_years == 105.0


def test_excess_interval_geometry():
    frame = SamplingFrame(
        kind="interval_truncated",
        c1=CalendarDate.from_iso("1990-01-01"),
        c2=CalendarDate.from_iso("2000-12-31"),
        u0_years=105.0,
    )
    # threshold reached before the window opens: wait 200 days
    a, b = excess_interval(CalendarDate.from_iso("1989-06-15"), frame)
    assert (a, b) == (200.0, float(frame.c2 - CalendarDate.from_iso("1989-06-15")))
    # threshold reached inside the window: observable from day 0
    a, b = excess_interval(CalendarDate.from_iso("1995-05-01"), frame)
    assert a == 0.0
    assert b == float(frame.c2 - CalendarDate.from_iso("1995-05-01"))
    with pytest.raises(FrameError):
        excess_interval(CalendarDate.from_iso("2001-01-01"), frame)


def _scan_observable_days(x105, frame, horizon):
    """Literal restatement of the dual-frame rule, one day at a time."""
    x110 = x105.add_years(5)
    seen = set()
    for t in range(horizon):
        d = x105.add_days(t)
        if d < x110:
            if frame.d1 <= d <= frame.d2:
                seen.add(t)
        elif frame.c1 <= d <= frame.c2:
            seen.add(t)
    return seen


IDL_FRAME = SamplingFrame(
    kind="idl_dual",
    c1=CalendarDate.from_iso("1995-01-01"),
    c2=CalendarDate.from_iso("2005-12-31"),
    d1=CalendarDate.from_iso("1990-01-01"),
    d2=CalendarDate.from_iso("2000-12-31"),
)


@pytest.mark.parametrize(
    "x105_iso,n_pieces",
    [
        ("1992-01-01", 1),  # windows aligned across the 110th birthday: merge
        ("2000-06-15", 2),  # semi-supercentenarian window closes first: gap
        ("1988-01-01", 2),  # observable late in the first window, then again
    ],
)
def test_idl_observable_set_matches_day_scan(x105_iso, n_pieces):
    x105 = CalendarDate.from_iso(x105_iso)
    pieces = idl_observable_set(x105, IDL_FRAME)
    assert len(pieces) == n_pieces
    horizon = (IDL_FRAME.c2 - x105) + 400
    scanned = _scan_observable_days(x105, IDL_FRAME, horizon)
    from_pieces = {
        t for t in range(horizon) if any(a <= t <= b for a, b in pieces)
    }
    assert from_pieces == scanned


def test_idl_observable_set_can_be_empty():
    # reaches 105 after d2 and 110 after c2: no death is ever recorded
    assert idl_observable_set(CalendarDate.from_iso("2002-01-01"), IDL_FRAME) == ()


def test_validate_record_rules():
    ok = LifetimeRecord(
        excess_lifetime=120.0, censoring="observed", truncation=((0.0, 400.0),)
    )
    assert validate_record(ok) is ok
    with pytest.raises(ValueError):
        validate_record(
            LifetimeRecord(excess_lifetime=120.0, censoring="lost", truncation=((0.0, 400.0),))
        )
    with pytest.raises(ValueError):
        validate_record(
            LifetimeRecord(excess_lifetime=500.0, censoring="observed", truncation=((0.0, 400.0),))
        )
    with pytest.raises(ValueError):  # overlapping truncation intervals
        validate_record(
            LifetimeRecord(
                excess_lifetime=10.0,
                censoring="observed",
                truncation=((0.0, 50.0), (40.0, 90.0)),
            )
        )
    with pytest.raises(ValueError):  # right censoring outside the ltrc scheme
        validate_record(
            LifetimeRecord(
                excess_lifetime=400.0, censoring="right_censored", truncation=((0.0, 400.0),)
            )
        )
    with pytest.raises(ValueError):  # censoring time must close the window
        validate_record(
            LifetimeRecord(
                excess_lifetime=120.0,
                censoring="right_censored",
                truncation=((0.0, 400.0),),
                scheme="ltrc",
            )
        )
    with pytest.raises(ValueError):
        validate_record(
            LifetimeRecord(excess_lifetime=1.0, censoring="observed", truncation=())
        )
    with pytest.raises(ValueError):
        validate_record(
            LifetimeRecord(
                excess_lifetime=1.0, censoring="observed", truncation=((0.0, 5.0),), unit="weeks"
            )
        )


def test_record_json_round_trip():
    rec = validate_record(
        LifetimeRecord(
            excess_lifetime=(365.0, 731.0),
            censoring="interval_censored",
            truncation=((0.0, 900.0), (1000.0, 2000.0)),
            entry_date=CalendarDate.from_iso("1990-03-10"),
            covariates={"sex": "f"},
        )
    )
    back = record_from_json(json.loads(json.dumps(record_to_json(rec))))
    assert back == rec


class TestIngest:
    FRAMES = {
        "it": SamplingFrame(
            kind="interval_truncated",
            c1=CalendarDate.from_iso("1990-01-01"),
            c2=CalendarDate.from_iso("2000-12-31"),
            u0_years=105.0,
        ),
        "lt": SamplingFrame(
            kind="left_trunc_right_cens",
            c1=CalendarDate.from_iso("1990-01-01"),
            c2=CalendarDate.from_iso("2000-12-31"),
            u0_years=105.0,
        ),
        "idl": IDL_FRAME,
    }

    def _write(self, tmp_path, rows):
        path = tmp_path / "lives.csv"
        header = "id,entry_date,birth_date,event_age_days,event_age_years,event_type,frame_id,sex\n"
        path.write_text(header + "".join(rows))
        return str(path)

    def test_good_rows(self, tmp_path):
        age_days = 105 * DAYS_PER_YEAR + 300  # excess 300 days
        rows = [
            f"a,1989-06-15,,{age_days},,death,it,f\n",
            "b,,1885-03-10,,106,death,it,m\n",
            "c,1995-05-01,,,106.5,death,it,\n",
            f"d,1999-01-01,,{105 * DAYS_PER_YEAR + 100},,alive,lt,f\n",
        ]
        out = ingest_csv(self._write(tmp_path, rows), self.FRAMES)
        assert len(out) == 4
        assert out.rejected == []

        a, b, c, d = out.records
        # entry 200 days before the window opens: truncation starts at 200
        assert a.censoring == "observed"
        assert a.excess_lifetime == 300.0
        assert a.truncation[0][0] == 200.0
        assert a.covariates == {"sex": "f"}

        # integer age-in-years death becomes a one-year censoring interval
        # bounded by the calendar: [1991-03-10, 1992-03-10) minus entry
        assert b.censoring == "interval_censored"
        assert b.interval() == (365.0, 731.0)

        assert c.censoring == "observed"
        assert c.excess_lifetime == pytest.approx(1.5 * DAYS_PER_YEAR)

        assert d.censoring == "right_censored"
        assert d.scheme == "ltrc"
        assert d.truncation == ((0.0, 100.0),)

    def test_bad_rows_collected_with_row_numbers(self, tmp_path):
        rows = [
            "a,1995-01-01,,,106.5,death,it,\n",  # fine
            "b,1995-01-01,,,106.5,death,nosuch,\n",  # unknown frame
            "c,1995-01-01,,,106.5,emigrated,it,\n",  # unknown event type
            "d,1995-01-01,,,104.5,death,it,\n",  # below the threshold age
            "e,2001-06-01,,,106.5,death,it,\n",  # entered after the window
            "f,1995-01-01,,,106.5,alive,it,\n",  # alive needs the ltrc frame
            "g,2002-01-01,,,111.0,death,idl,\n",  # empty observable set
        ]
        out = ingest_csv(self._write(tmp_path, rows), self.FRAMES)
        assert len(out) == 1
        assert [rownum for rownum, _ in out.rejected] == [3, 4, 5, 6, 7, 8]
        messages = dict(out.rejected)
        assert "frame" in messages[3]
        assert "empty observable set" in messages[8]

    def test_idl_route_gets_dual_truncation(self, tmp_path):
        # reaches 105 on 2000-06-15: recorded if dead before 2001 or in 2005+
        rows = ["a,2000-06-15,,,105.25,death,idl,\n"]
        out = ingest_csv(self._write(tmp_path, rows), self.FRAMES)
        assert len(out) == 1
        rec = out.records[0]
        assert len(rec.truncation) == 2
        assert rec.scheme == "interval_truncated"
        lo, hi = rec.truncation[0]
        assert lo == 0.0
        assert rec.truncation[1][0] > hi

    def test_missing_columns_raise(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,entry_date\n1,1990-01-01\n")
        with pytest.raises(ValueError):
            ingest_csv(str(path), self.FRAMES)

    def test_load_frames_json(self, tmp_path):
        blob = {
            "idl": {
                "kind": "idl_dual",
                "c1": "1995-01-01",
                "c2": "2005-12-31",
                "d1": "1990-01-01",
                "d2": "2000-12-31",
            },
            "it": {
                "kind": "interval_truncated",
                "c1": "1990-01-01",
                "c2": "2000-12-31",
                "u0_years": 105,
            },
        }
        path = tmp_path / "frames.json"
        path.write_text(json.dumps(blob))
        frames = load_frames(str(path))
        assert frames["idl"] == IDL_FRAME
        assert frames["it"].u0_years == 105

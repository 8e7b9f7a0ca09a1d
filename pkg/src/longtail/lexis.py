"""Calendar arithmetic and observability windows on the Lexis diagram.

A cohort member is born, reaches a threshold age u0, and dies (or is last
seen alive) some days later. Observation schemes restrict which deaths can
enter a dataset: a death register covering calendar window [c1, c2] yields
interval truncation; a register of living persons yields left truncation
with right censoring; the IDL-style dual register records deaths between
ages 105 and 110 over one calendar window and deaths above 110 over
another, which makes the observable age set a union of up to two disjoint
intervals.

Everything here works in integer days. Excess lifetimes are days above u0.
Year-to-day conversion, where unavoidable, uses 365.25 days per year;
entry dates computed from birth dates use exact calendar arithmetic.
"""

from __future__ import annotations

import csv
import datetime
import json
from dataclasses import dataclass, field

from .util import DAYS_PER_YEAR

__all__ = [
    "CalendarDate",
    "SamplingFrame",
    "LifetimeRecord",
    "FrameError",
    "excess_interval",
    "idl_observable_set",
    "validate_record",
    "ingest_csv",
    "IngestResult",
    "record_to_json",
    "record_from_json",
]

_EPOCH_ORDINAL = datetime.date(1800, 1, 1).toordinal()


class FrameError(ValueError):
    """Inconsistent sampling frame or trajectory outside its reach."""


@dataclass(frozen=True, order=True)
class CalendarDate:
    """A calendar day, counted in days since 1800-01-01 (proleptic Gregorian)."""

    days_since_epoch: int

    @classmethod
    def from_iso(cls, text):
        d = datetime.date.fromisoformat(text)
        return cls(d.toordinal() - _EPOCH_ORDINAL)

    @classmethod
    def from_ymd(cls, year, month, day):
        return cls(datetime.date(year, month, day).toordinal() - _EPOCH_ORDINAL)

    def to_date(self):
        return datetime.date.fromordinal(self.days_since_epoch + _EPOCH_ORDINAL)

    def to_iso(self):
        return self.to_date().isoformat()

    def add_days(self, n):
        return CalendarDate(self.days_since_epoch + int(n))

    def add_years(self, n):
        """Same month and day, n calendar years later; Feb 29 clamps to Feb 28."""
        d = self.to_date()
        try:
            shifted = d.replace(year=d.year + int(n))
        except ValueError:
            shifted = d.replace(year=d.year + int(n), day=28)
        return CalendarDate(shifted.toordinal() - _EPOCH_ORDINAL)

    def __sub__(self, other):
        return self.days_since_epoch - other.days_since_epoch

    def __repr__(self):
        return f"CalendarDate({self.to_iso()})"


_FRAME_KINDS = ("interval_truncated", "left_trunc_right_cens", "idl_dual")


@dataclass(frozen=True)
class SamplingFrame:
    """Calendar observation window(s) attached to a dataset.

    ``interval_truncated``: deaths enter iff the death date lies in [c1, c2].
    ``left_trunc_right_cens``: persons alive at some point in [c1, c2] enter;
    those still alive at c2 are right censored there.
    ``idl_dual``: deaths at ages [105, 110) enter iff the death date lies in
    [d1, d2]; deaths at 110+ enter iff it lies in [c1, c2].

    ``u0_years`` is the threshold age the frame's records are measured above;
    it defaults to 105 for idl_dual and must be supplied otherwise when entry
    dates have to be derived from birth dates.
    """

    kind: str
    c1: CalendarDate
    c2: CalendarDate
    d1: CalendarDate | None = None
    d2: CalendarDate | None = None
    u0_years: float | None = None

    def __post_init__(self):
        if self.kind not in _FRAME_KINDS:
            raise FrameError(f"unknown frame kind {self.kind!r}")
        if not self.c1 < self.c2:
            raise FrameError("frame requires c1 < c2")
        if self.kind == "idl_dual":
            if self.d1 is None or self.d2 is None:
                raise FrameError("idl_dual frame requires d1 and d2")
            if not self.d1 < self.d2:
                raise FrameError("idl_dual frame requires d1 < d2")
            if not self.c2 > self.d1:
                raise FrameError("idl_dual frame requires c2 > d1")
            if self.u0_years is None:
                object.__setattr__(self, "u0_years", 105.0)


_CENSORING = ("observed", "right_censored", "interval_censored")


@dataclass(frozen=True)
class LifetimeRecord:
    """One lifetime above the threshold age, with its observability window.

    ``excess_lifetime`` is a point value for observed deaths, the censoring
    time for right-censored records, and an (l, r) pair for interval
    censoring (r may be inf). ``truncation`` is a tuple of disjoint (a, b)
    intervals; the lifetime could only have been recorded inside their
    union. Under ``scheme="ltrc"`` the upper bounds are censoring horizons
    rather than truncation bounds, so the likelihood conditions on survival
    past a only. ``unit`` says what one time unit means; frame-derived data
    uses days.
    """

    excess_lifetime: object
    censoring: str
    truncation: tuple
    entry_date: CalendarDate | None = None
    covariates: dict = field(default_factory=dict)
    scheme: str = "interval_truncated"
    unit: str = "days"

    def interval(self):
        """The (l, r) pair for interval-censored records."""
        l, r = self.excess_lifetime
        return float(l), float(r)


def validate_record(rec):
    """Raise ValueError when a record violates its construction invariants."""
    if rec.censoring not in _CENSORING:
        raise ValueError(f"unknown censoring {rec.censoring!r}")
    if rec.scheme not in ("interval_truncated", "ltrc"):
        raise ValueError(f"unknown scheme {rec.scheme!r}")
    if rec.unit not in ("days", "years"):
        raise ValueError(f"unknown unit {rec.unit!r}")
    if not rec.truncation:
        raise ValueError("record has an empty truncation set")
    prev_b = None
    for a, b in rec.truncation:
        if not (0 <= a < b):
            raise ValueError(f"bad truncation interval ({a}, {b})")
        if prev_b is not None and a < prev_b:
            raise ValueError("truncation intervals overlap or are unordered")
        prev_b = b
    a_first = rec.truncation[0][0]
    b_last = rec.truncation[-1][1]
    if rec.censoring == "interval_censored":
        l, r = rec.interval()
        if not (0 <= l < r):
            raise ValueError(f"interval-censored bounds need 0 <= l < r, got ({l}, {r})")
    else:
        t = float(rec.excess_lifetime)
        if not (t >= 0 and t < float("inf")):
            raise ValueError(f"excess lifetime must be finite and nonnegative, got {t}")
        if rec.censoring == "observed":
            inside = any(a <= t <= b for a, b in rec.truncation)
            if not inside:
                raise ValueError(
                    f"observed lifetime {t} outside truncation set {rec.truncation}"
                )
        if rec.censoring == "right_censored" and t != b_last:
            raise ValueError(
                f"right-censoring time {t} must equal the last upper bound {b_last}"
            )
    if rec.censoring == "right_censored" and rec.scheme != "ltrc":
        raise ValueError("right censoring requires the ltrc scheme")
    return rec


def excess_interval(x, frame):
    """Days above u0 during which a death would be recorded.

    ``x`` is the calendar date the individual reached u0. Returns (a, b)
    with a = max(0, c1 - x) and b = c2 - x, both in days. For a
    left_trunc_right_cens frame, b is the censoring horizon. Raises
    FrameError when x >= c2 (the life line cannot meet the window).
    """
    if frame.kind not in ("interval_truncated", "left_trunc_right_cens"):
        raise FrameError(f"excess_interval does not apply to kind {frame.kind!r}")
    if not x < frame.c2:
        raise FrameError("trajectory cannot intersect observation region")
    a = max(0, frame.c1 - x)
    b = frame.c2 - x
    return float(a), float(b)


def idl_observable_set(x105, frame):
    """Observable excess ages (days above 105) under an IDL-style dual frame.

    ``x105`` is the date of the 105th birthday; the 110th birthday is five
    calendar years later. Deaths before age 110 are recorded iff the death
    date falls in [d1, d2]; later deaths iff it falls in [c1, c2]. Returns
    a tuple of zero, one, or two disjoint (a, b) day intervals; adjacent
    day ranges are merged, so aligned windows collapse to the single
    interval of ``excess_interval``.
    """
    if frame.kind != "idl_dual":
        raise FrameError("idl_observable_set requires an idl_dual frame")
    x110 = x105.add_years(5)
    d5 = x110 - x105
    pieces = []
    lo = max(0, frame.d1 - x105)
    hi = min(frame.d2 - x105, d5 - 1)
    if lo <= hi:
        pieces.append([lo, hi])
    lo = max(d5, frame.c1 - x105)
    hi = frame.c2 - x105
    if lo <= hi:
        pieces.append([lo, hi])
    if len(pieces) == 2 and pieces[0][1] + 1 >= pieces[1][0]:
        pieces = [[pieces[0][0], pieces[1][1]]]
    return tuple((float(a), float(b)) for a, b in pieces)


# ----------------------------------------------------------------------
# CSV ingestion


class IngestResult:
    """Sequence of accepted records plus per-row rejection diagnostics."""

    def __init__(self, records, rejected):
        self.records = list(records)
        self.rejected = list(rejected)  # (row_number, message) pairs

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


def load_frames(source):
    """Read a frame_id -> SamplingFrame mapping from JSON (path or dict)."""
    if isinstance(source, (str, bytes)):
        with open(source) as fh:
            source = json.load(fh)
    frames = {}
    for fid, obj in source.items():
        frames[fid] = SamplingFrame(
            kind=obj["kind"],
            c1=CalendarDate.from_iso(obj["c1"]),
            c2=CalendarDate.from_iso(obj["c2"]),
            d1=CalendarDate.from_iso(obj["d1"]) if "d1" in obj else None,
            d2=CalendarDate.from_iso(obj["d2"]) if "d2" in obj else None,
            u0_years=obj.get("u0_years"),
        )
    return frames


_CORE_COLUMNS = {
    "id",
    "entry_date",
    "birth_date",
    "event_age_days",
    "event_age_years",
    "event_type",
    "frame_id",
}


def ingest_csv(path, frames):
    """Read lifetime rows from CSV, resolving observability per frame.

    ``frames`` maps frame_id to SamplingFrame (or is a path to the JSON
    companion file). Each row carries either an entry_date (date of
    reaching u0) or a birth_date, and an event age in days or in years.
    Integer-valued event_age_years is treated as age last birthday and
    becomes an interval-censored record one year wide. Rows violating
    frame or record invariants are collected with their row numbers, not
    raised; only an unreadable file raises.
    """
    if not isinstance(frames, dict):
        frames = load_frames(frames)
    records, rejected = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file, header required")
        cols = set(reader.fieldnames)
        if "frame_id" not in cols or "event_type" not in cols:
            raise ValueError(f"{path}: header must name frame_id and event_type")
        for rownum, row in enumerate(reader, start=2):
            try:
                rec = _row_to_record(row, frames)
            except (ValueError, KeyError) as err:
                rejected.append((rownum, str(err)))
                continue
            if rec is not None:
                records.append(rec)
            else:
                rejected.append((rownum, "empty observable set for this trajectory"))
    return IngestResult(records, rejected)


def _get(row, key):
    v = row.get(key)
    if v is None:
        return None
    v = v.strip()
    return v or None


def _row_to_record(row, frames):
    fid = _get(row, "frame_id")
    if fid not in frames:
        raise ValueError(f"unknown frame_id {fid!r}")
    frame = frames[fid]
    event_type = _get(row, "event_type")
    if event_type not in ("death", "alive"):
        raise ValueError(f"event_type must be death or alive, got {event_type!r}")

    entry_text = _get(row, "entry_date")
    birth_text = _get(row, "birth_date")
    age_days_text = _get(row, "event_age_days")
    age_years_text = _get(row, "event_age_years")
    if entry_text is None and birth_text is None:
        raise ValueError("row needs entry_date or birth_date")
    if age_days_text is None and age_years_text is None:
        raise ValueError("row needs event_age_days or event_age_years")

    u0 = frame.u0_years
    if u0 is None:
        raise ValueError("frame lacks u0_years, cannot place ages above the threshold")

    # Resolve the entry date (reaching u0) and the excess at the event.
    ic_bounds = None
    if birth_text is not None:
        birth = CalendarDate.from_iso(birth_text)
        if u0 != int(u0):
            raise ValueError("birth_date route needs an integer u0_years")
        entry = birth.add_years(int(u0))
        if age_days_text is not None:
            excess = birth.add_days(int(float(age_days_text))) - entry
        else:
            age_years = float(age_years_text)
            if age_years == int(age_years) and event_type == "death":
                lo = birth.add_years(int(age_years)) - entry
                hi = birth.add_years(int(age_years) + 1) - entry
                ic_bounds = (float(lo), float(hi))
                excess = None
            else:
                excess = float(round(age_years * DAYS_PER_YEAR)) - (
                    entry - birth
                )
    else:
        birth = None
        entry = CalendarDate.from_iso(entry_text)
        if age_days_text is not None:
            excess = float(age_days_text) - u0 * DAYS_PER_YEAR
        else:
            age_years = float(age_years_text)
            if age_years == int(age_years) and event_type == "death":
                lo = (age_years - u0) * DAYS_PER_YEAR
                ic_bounds = (lo, lo + DAYS_PER_YEAR)
                excess = None
            else:
                excess = (age_years - u0) * DAYS_PER_YEAR

    if excess is not None and excess < 0:
        raise ValueError(f"event age below the threshold age {u0}")

    covariates = {
        k: v.strip()
        for k, v in row.items()
        if k not in _CORE_COLUMNS and v is not None and v.strip() != ""
    }

    # Observability set for this trajectory.
    if frame.kind == "idl_dual":
        trunc = idl_observable_set(entry, frame)
        if not trunc:
            return None
        scheme = "interval_truncated"
    else:
        a, b = excess_interval(entry, frame)
        trunc = ((a, b),)
        scheme = "ltrc" if frame.kind == "left_trunc_right_cens" else "interval_truncated"

    if event_type == "alive":
        if frame.kind != "left_trunc_right_cens":
            raise ValueError("alive rows require a left_trunc_right_cens frame")
        if excess is None:
            raise ValueError("alive rows need a point age, not a yearly interval")
        a, b = trunc[0]
        if excess > b:
            raise ValueError(f"alive at {excess} days, after the window end {b}")
        rec = LifetimeRecord(
            excess_lifetime=float(excess),
            censoring="right_censored",
            truncation=((a, float(excess)),),
            entry_date=entry,
            covariates=covariates,
            scheme="ltrc",
        )
        return validate_record(rec)

    if ic_bounds is not None:
        clipped = _clip_interval_to_set(ic_bounds, trunc)
        if clipped is None:
            raise ValueError(
                f"death interval {ic_bounds} lies outside the observable set {trunc}"
            )
        rec = LifetimeRecord(
            excess_lifetime=clipped,
            censoring="interval_censored",
            truncation=trunc,
            entry_date=entry,
            covariates=covariates,
            scheme=scheme,
        )
        return validate_record(rec)

    inside = any(a <= excess <= b for a, b in trunc)
    if not inside:
        raise ValueError(
            f"death at {excess} days above u0 falls outside the observable set {trunc}"
        )
    rec = LifetimeRecord(
        excess_lifetime=float(excess),
        censoring="observed",
        truncation=trunc,
        entry_date=entry,
        covariates=covariates,
        scheme=scheme,
    )
    return validate_record(rec)


def _clip_interval_to_set(bounds, trunc):
    """Intersect an interval-censoring interval with the observable set.

    Returns clipped (l, r) using the piece holding most of the overlap, or
    None when the interval misses the set entirely.
    """
    l, r = bounds
    best, best_len = None, 0.0
    for a, b in trunc:
        lo, hi = max(l, a), min(r, b)
        if hi > lo and hi - lo > best_len:
            best, best_len = (lo, hi), hi - lo
    return best


# ----------------------------------------------------------------------
# JSON round-trip for records


def record_to_json(rec):
    out = {
        "censoring": rec.censoring,
        "truncation": [[a, b] for a, b in rec.truncation],
        "scheme": rec.scheme,
        "unit": rec.unit,
    }
    if rec.censoring == "interval_censored":
        out["excess_lifetime"] = list(rec.interval())
    else:
        out["excess_lifetime"] = float(rec.excess_lifetime)
    if rec.entry_date is not None:
        out["entry_date"] = rec.entry_date.to_iso()
    if rec.covariates:
        out["covariates"] = dict(rec.covariates)
    return out


def record_from_json(obj):
    excess = obj["excess_lifetime"]
    if isinstance(excess, list):
        excess = tuple(float(v) for v in excess)
    else:
        excess = float(excess)
    rec = LifetimeRecord(
        excess_lifetime=excess,
        censoring=obj["censoring"],
        truncation=tuple((float(a), float(b)) for a, b in obj["truncation"]),
        entry_date=(
            CalendarDate.from_iso(obj["entry_date"]) if "entry_date" in obj else None
        ),
        covariates=dict(obj.get("covariates", {})),
        scheme=obj.get("scheme", "interval_truncated"),
        unit=obj.get("unit", "days"),
    )
    return validate_record(rec)

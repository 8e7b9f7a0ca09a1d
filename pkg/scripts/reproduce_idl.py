"""Reproduce reference estimates from user-supplied mortality extracts.

The individual-level datasets (IDL supercentenarian extracts, national
semi-supercentenarian registers) are distributed under research
agreements and cannot be bundled, so this script is not part of the test
run. Given a records CSV and a frames JSON in the package's ingest
format it fits the exponential excess-lifetime model above a threshold
age and compares the scale estimate, and optionally its Wald 95%
interval, against reference values.

Typical use:

    python3 scripts/reproduce_idl.py --data idl2021.csv \
        --frames idl_frames.json
    python3 scripts/reproduce_idl.py --data country.csv \
        --frames country_frames.json --threshold-age 105 \
        --expect-sigma 1.53 --expect-ci ""

Exit status is 0 when every supplied expectation holds within --tol.
"""

import argparse
import sys

from longtail import fit, lexis
from longtail.cli import _excess_threshold
from longtail.models import ModelSpec


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", required=True, help="records CSV")
    ap.add_argument("--frames", required=True, help="frames JSON")
    ap.add_argument("--threshold-age", type=float, default=110.0)
    ap.add_argument("--expect-sigma", type=float, default=1.38)
    ap.add_argument("--expect-ci", default="1.29,1.48",
                    help="lo,hi of the reference 95%% interval; empty skips")
    ap.add_argument("--tol", type=float, default=0.01)
    args = ap.parse_args(argv)

    frames = lexis.load_frames(args.frames)
    result = lexis.ingest_csv(args.data, frames)
    if result.rejected:
        print(f"rejected {len(result.rejected)} rows", file=sys.stderr)
    v, u0 = _excess_threshold(frames, args.threshold_age)
    res = fit.fit_mle(ModelSpec("exponential"), result.records, threshold=v)
    se = res.se["sigma"]
    sigma = res.mle["sigma"]
    lo, hi = sigma - 1.96 * se, sigma + 1.96 * se

    print(f"records used   {res.n_used} (dropped {sum(res.n_dropped.values())})")
    print(f"threshold      age {args.threshold_age} (excess {v}, u0 {u0})")
    print(f"sigma          {sigma:.4f} (se {se:.4f})")
    print(f"95% interval   ({lo:.4f}, {hi:.4f})")

    failures = []
    if abs(sigma - args.expect_sigma) > args.tol:
        failures.append(
            f"sigma {sigma:.4f} vs reference {args.expect_sigma} "
            f"(tol {args.tol})"
        )
    if args.expect_ci:
        ref_lo, ref_hi = (float(x) for x in args.expect_ci.split(","))
        if abs(lo - ref_lo) > args.tol or abs(hi - ref_hi) > args.tol:
            failures.append(
                f"interval ({lo:.4f}, {hi:.4f}) vs reference "
                f"({ref_lo}, {ref_hi}) (tol {args.tol})"
            )
    for msg in failures:
        print(f"MISMATCH: {msg}", file=sys.stderr)
    if not failures:
        print("all reference values reproduced")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())

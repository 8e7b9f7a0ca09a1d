"""Standalone AC7 probe: boundary LRT calibration at full scale."""
import sys
import time

import numpy as np

sys.path.insert(0, "/root/pkg/src")
from longtail import fit
from longtail.lexis import LifetimeRecord
from longtail.models import ModelSpec
from longtail.util import rng_stream

N = 200
SIGMA = 1.4
OUTER = 500
B = 199

t0 = time.monotonic()
rej = 0
ge = 0
used = 0
for r in range(OUTER):
    rng = rng_stream(20230501, r)
    b = rng.uniform(2.0, 8.0, N)
    u = rng.uniform(size=N)
    s = 1.0 - u * (1.0 - np.exp(-b / SIGMA))
    t = -SIGMA * np.log(s)
    recs = [
        LifetimeRecord(float(ti), "observed", ((0.0, float(bi)),),
                       scheme="interval_truncated", unit="years")
        for ti, bi in zip(t, b)
    ]
    res = fit.bootstrap_lrt(
        ModelSpec("exponential"), ModelSpec("gompertz"), recs, B=B, seed=r
    )
    used += 1
    if res.p_bootstrap <= 0.05:
        rej += 1
    if res.p_bootstrap >= res.p_asymptotic - 1e-12:
        ge += 1
    if (r + 1) % 50 == 0:
        el = time.monotonic() - t0
        print(f"{r+1}/{OUTER} rej={rej/used:.4f} ge={ge/used:.4f} "
              f"elapsed={el/60:.1f}min eta={el/(r+1)*OUTER/60:.1f}min",
              flush=True)

el = time.monotonic() - t0
print(f"FINAL outer={used} rejection@0.05={rej/used:.4f} "
      f"p_b>=p_a fraction={ge/used:.4f} wall={el/60:.2f} min")

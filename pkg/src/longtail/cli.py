"""Batch command line interface.

One command wraps one library operation, emits machine-readable JSON, a
short aligned table on stdout, CSV files where plot data exists, and a
run manifest (inputs hashed, resolved options, seed, version, wall time)
so any run can be reproduced exactly.

Exit codes: 0 ok, 2 input error, 3 numeric failure, 4 invariant trap.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import secrets
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__, bayes, diagnostics, fit, lexis, models
from . import nonparam, simlab
from .models import ModelSpec
from .util import jsonable, sha256_file, write_json

__all__ = ["main", "RunManifest"]


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    inputs: dict
    seed: int | None
    version: str
    wall_time_s: float = 0.0
    outputs: list = field(default_factory=list)

    def write(self, out_dir):
        path = os.path.join(out_dir, "manifest.json")
        write_json(path, jsonable(self.__dict__))
        return path


def _threads(args):
    n = args.threads or os.environ.get("LONGTAIL_THREADS")
    if n:
        n = str(int(n))
        os.environ["LONGTAIL_THREADS"] = n
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def _seed_of(args, needed):
    seed = getattr(args, "seed", None)
    if seed is None and needed:
        seed = secrets.randbelow(2**31)
        print(f"seed: {seed} (generated; pass --seed to reproduce)")
    return seed


def _load_records(args, manifest):
    if not args.frames:
        raise lexis.FrameError(
            "frame metadata is required: pass --frames <json> describing "
            "each sampling frame's kind and calendar window"
        )
    manifest.inputs[args.data] = sha256_file(args.data)
    manifest.inputs[args.frames] = sha256_file(args.frames)
    frames = lexis.load_frames(args.frames)
    result = lexis.ingest_csv(args.data, frames)
    if result.rejected:
        print(f"rejected {len(result.rejected)} rows:", file=sys.stderr)
        for rownum, msg in result.rejected[:20]:
            print(f"  row {rownum}: {msg}", file=sys.stderr)
    if not result.records:
        raise ValueError("no usable records after ingestion")
    return result.records, frames


def _excess_threshold(frames, value):
    """Translate an age-scale threshold to the records' excess scale.

    Record values are excess lifetimes above each frame's threshold age
    u0, so a CLI threshold at or above a common u0 is read as an age in
    years; anything else passes through as an excess in years.
    """
    u0s = {f.u0_years for f in frames.values() if f.u0_years is not None}
    if len(u0s) == 1:
        u0 = u0s.pop()
        if value >= u0:
            return value - u0, u0
    return value, None


def _knots(text):
    return tuple(float(v) for v in text.split(",")) if text else None


def _write(out_dir, name, payload, manifest):
    path = os.path.join(out_dir, name)
    write_json(path, jsonable(payload))
    manifest.outputs.append(path)
    return path


def _print_fit(res):
    print(f"family      {res.spec.family}")
    print(f"threshold   {res.threshold}")
    print(f"n_used      {res.n_used}")
    print(f"loglik      {res.loglik:.6f}")
    print(f"converged   {res.converged}")
    print(f"  {'param':<12}{'estimate':>14}{'se':>14}")
    for name in res.param_names:
        se = res.se.get(name)
        se_txt = f"{se:>14.6g}" if se is not None else f"{'':>14}"
        val = res.mle[name]
        if isinstance(val, tuple):
            val = ",".join(f"{v:.6g}" for v in val)
            print(f"  {name:<12}{val:>14}{se_txt}")
        else:
            print(f"  {name:<12}{val:>14.6g}{se_txt}")
    if res.flags:
        print(f"flags: {', '.join(res.flags)}")


def cmd_fit(args, out_dir, manifest):
    records, frames = _load_records(args, manifest)
    if args.threshold_scan:
        parts = args.threshold_scan.split(":")
        lo, hi = float(parts[0]), float(parts[1])
        step = float(parts[2]) if len(parts) > 2 else 1.0
        ages = np.arange(lo, hi + 1e-9, step)
        excess = [_excess_threshold(frames, u)[0] for u in ages]
        scan = fit.threshold_scan(records, excess, family=args.family)
        print(f"  {'u':>8}{'n_u':>6}{'sigma':>12}{'xi':>10}{'loglik':>14}")
        rows = []
        for u, (v, res) in zip(ages, scan.items()):
            sig = res.mle.get("sigma", float("nan"))
            xi = res.mle.get("xi", float("nan"))
            print(f"  {u:>8.2f}{res.n_used:>6}{sig:>12.4f}{xi:>10.4f}"
                  f"{res.loglik:>14.4f}")
            rows.append({"threshold_age": u, **res.to_json()})
        _write(out_dir, "scan.json", rows, manifest)
        csv_path = os.path.join(out_dir, "scan.csv")
        with open(csv_path, "w") as fh:
            fh.write("threshold,n_used,sigma,xi,loglik\n")
            for u, (v, res) in zip(ages, scan.items()):
                fh.write(
                    f"{float(u)!r},{res.n_used},"
                    f"{float(res.mle.get('sigma', math.nan))!r},"
                    f"{float(res.mle.get('xi', math.nan))!r},"
                    f"{float(res.loglik)!r}\n"
                )
        manifest.outputs.append(csv_path)
        return
    v, u0 = _excess_threshold(frames, args.threshold)
    res = fit.fit_mle(
        ModelSpec(args.family), records,
        threshold=v, knots=_knots(args.knots),
    )
    if not res.converged:
        _print_fit(res)
        raise fit.NumericError("fit did not converge")
    if u0 is not None:
        print(f"threshold   age {args.threshold} = excess {v} over u0={u0}")
    _print_fit(res)
    _write(out_dir, "fit.json", res.to_json(), manifest)


def cmd_profile(args, out_dir, manifest):
    records, frames = _load_records(args, manifest)
    v, u0 = _excess_threshold(frames, args.threshold)
    origin = args.age_origin
    if origin is None:
        origin = u0 if u0 is not None else 0.0
    grid = None
    if args.grid:
        lo, hi, n = args.grid.split(":")
        grid = np.linspace(float(lo), float(hi), int(n))
    levels = tuple(float(x) for x in args.levels.split(","))
    trace = fit.profile_endpoint(
        records, threshold=v, grid=grid, levels=levels,
        age_origin=origin,
    )
    if trace.psi_hat is not None:
        print(f"endpoint estimate  {trace.psi_hat:.4f}")
    else:
        print("endpoint estimate  unbounded (nonnegative fitted shape)")
    for lvl, (lo, hi) in sorted(trace.ci.items()):
        lo_txt = f"{lo:.4f}" if lo is not None else "-"
        hi_txt = f"{hi:.4f}" if hi is not None else "unbounded"
        print(f"  {int(lvl * 100):>3}% CI  [{lo_txt}, {hi_txt}]")
    if trace.flags:
        print(f"flags: {', '.join(trace.flags)}")
    _write(out_dir, "profile.json", trace.to_json(), manifest)
    csv_path = os.path.join(out_dir, "profile.csv")
    trace.to_csv(csv_path)
    manifest.outputs.append(csv_path)


def cmd_test(args, out_dir, manifest):
    records, frames = _load_records(args, manifest)
    v, _ = _excess_threshold(frames, args.threshold)
    spec0, spec1 = ModelSpec(args.null), ModelSpec(args.alt)
    if args.bootstrap:
        seed = _seed_of(args, True)
        manifest.seed = seed
        res = fit.bootstrap_lrt(
            spec0, spec1, records, B=args.bootstrap, seed=seed,
            threshold=v, calibration=args.calibration,
        )
    else:
        res = fit.lrt_nested(
            spec0, spec1, records, threshold=v,
            calibration=args.calibration,
        )
    print(f"statistic      {res.statistic:.6f}")
    print(f"calibration    {res.calibration} (df={res.df})")
    print(f"p_asymptotic   {res.p_asymptotic:.6f}")
    if res.p_bootstrap is not None:
        print(f"p_bootstrap    {res.p_bootstrap:.6f}  (B={res.B})")
    if res.flags:
        print(f"flags: {', '.join(res.flags)}")
    _write(out_dir, "test.json", res.to_json(), manifest)


def cmd_np(args, out_dir, manifest):
    records, _ = _load_records(args, manifest)
    if args.method == "km":
        est = nonparam.kaplan_meier(records)
    elif args.method == "turnbull":
        est = nonparam.turnbull_em(records)
    else:
        try:
            est = nonparam.kaplan_meier(records)
        except ValueError:
            est = nonparam.turnbull_em(records)
    print(f"method        {est.method}")
    print(f"support atoms {est.support.size}")
    print(f"mass deficit  {est.mass_deficit:.6g}")
    print(f"loglik        {est.loglik:.6f}")
    if est.flags:
        print(f"flags: {', '.join(est.flags)}")
    _write(out_dir, "np.json", est.to_json(), manifest)
    csv_path = os.path.join(out_dir, "np.csv")
    est.to_csv(csv_path)
    manifest.outputs.append(csv_path)


def cmd_bayes(args, out_dir, manifest):
    records, frames = _load_records(args, manifest)
    v, _ = _excess_threshold(frames, args.threshold)
    seed = _seed_of(args, True)
    manifest.seed = seed
    sample = bayes.posterior_sample(
        ModelSpec(args.family), records, threshold=v,
        n=args.n, seed=seed,
    )
    print(f"family        {sample.family}")
    print(f"draws         {sample.draws.shape[0]}")
    print(f"accept rate   {sample.accept_rate:.4f}")
    summ = sample.to_json()["summary"]
    print(f"  {'param':<12}{'5%':>12}{'50%':>12}{'95%':>12}")
    for name, s in summ.items():
        qs = s["quantiles"]
        print(f"  {name:<12}{qs['0.05']:>12.6g}{qs['0.5']:>12.6g}"
              f"{qs['0.95']:>12.6g}")
    _write(out_dir, "bayes.json", sample.to_json(), manifest)
    csv_path = os.path.join(out_dir, "bayes.csv")
    sample.to_csv(csv_path)
    manifest.outputs.append(csv_path)


def cmd_qq(args, out_dir, manifest):
    records, frames = _load_records(args, manifest)
    v, _ = _excess_threshold(frames, args.threshold)
    res = fit.fit_mle(
        ModelSpec(args.family), records, threshold=v
    )
    if not res.converged:
        raise fit.NumericError("fit did not converge")
    if args.band:
        seed = _seed_of(args, True)
        manifest.seed = seed
        qq = diagnostics.qq_bootstrap_band(
            res, records, B=args.band, level=args.level, seed=seed,
            strategy=args.strategy,
        )
    else:
        qq = diagnostics.qq_positions_truncated(
            records, res, strategy=args.strategy
        )
    print(f"strategy      {qq.strategy}")
    print(f"points        {qq.position.size}")
    if qq.skipped:
        print(f"skipped       {len(qq.skipped)}")
    if qq.flags:
        print(f"flags: {', '.join(qq.flags)}")
    _write(out_dir, "qq.json", qq.to_json(), manifest)
    csv_path = os.path.join(out_dir, "qq.csv")
    qq.to_csv(csv_path)
    manifest.outputs.append(csv_path)


def cmd_simulate(args, out_dir, manifest):
    name = args.config
    if os.path.exists(name):
        manifest.inputs[name] = sha256_file(name)
        with open(name) as fh:
            config = json.load(fh)
    else:
        config = simlab.bundled_config(name)
    if args.replicates:
        config["replicates"] = args.replicates
    if args.seed is not None:
        config["seed"] = args.seed
    manifest.seed = config.get("seed")
    manifest.config["resolved_experiment"] = config

    kind = config.get("experiment")
    if kind == "extinct_cohort":
        sim_config = simlab.CohortSimConfig(
            years=config["years"],
            mean_annual=config["mean_annual"],
            spec=ModelSpec(config["family"]),
            params=config["params"],
            seed=config["seed"],
            replicates=config["replicates"],
        )
        res = simlab.extinct_cohort_experiment(sim_config)
        print(f"replicates    {config['replicates']} (dropped {res.dropped})")
        print(f"truth         {res.truth:.6f}")
        print(f"  {'estimator':<16}{'mean':>10}{'bias':>10}{'variance':>12}")
        for nm, s in res.summary.items():
            print(f"  {nm:<16}{s['mean']:>10.5f}{s['bias']:>10.5f}"
                  f"{s['variance']:>12.6f}")
    elif kind == "tabulation":
        res = simlab.tabulation_experiment(
            n=config["n"], sigma=config["sigma"], xi=config["xi"],
            u=config["u"], replicates=config["replicates"],
            bin_width=config.get("bin_width", 1.0), seed=config["seed"],
            trunc_lo=config.get("trunc_lo", 6.0),
            trunc_hi=config.get("trunc_hi", 15.0),
        )
        print(f"replicates    {config['replicates']} "
              f"(failures {res.failures})")
        print(f"endpoint      {res.truth:.4f}")
        for nm, s in res.summary.items():
            print(f"  {nm:<8} median {s['median']:>9.4f}   "
                  f"q95 {s['q95']:>9.4f}   >150y {s['frac_above_150']:.4f}")
    else:
        raise ValueError(f"unknown experiment kind: {kind!r}")
    _write(out_dir, "simulate.json", res.to_json(), manifest)
    csv_path = os.path.join(out_dir, "simulate.csv")
    res.to_csv(csv_path)
    manifest.outputs.append(csv_path)


def _add_data_opts(p):
    p.add_argument("--data", required=True, help="records CSV")
    p.add_argument("--frames", required=True,
                   help="sampling-frame metadata JSON")


def build_parser():
    top = argparse.ArgumentParser(
        prog="longtail",
        description="Lifetime-tail inference under truncation and censoring",
    )
    top.add_argument("--version", action="version", version=__version__)
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="maximum likelihood fit")
    _add_data_opts(p)
    p.add_argument("--family", default="gen_pareto",
                   choices=models.FAMILIES)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--knots", default=None,
                   help="comma-separated piecewise thresholds")
    p.add_argument("--threshold-scan", default=None, metavar="LO:HI[:STEP]")
    p.set_defaults(handler=cmd_fit, needs_seed=False)

    p = sub.add_parser("profile", help="profile likelihood for the endpoint")
    _add_data_opts(p)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--levels", default="0.95")
    p.add_argument("--grid", default=None, metavar="LO:HI:N")
    p.add_argument("--age-origin", type=float, default=None,
                   help="age the excess scale starts at (default: the "
                        "frame threshold age when one exists)")
    p.set_defaults(handler=cmd_profile, needs_seed=False)

    p = sub.add_parser("test", help="nested likelihood ratio test")
    _add_data_opts(p)
    p.add_argument("--null", required=True, choices=models.FAMILIES)
    p.add_argument("--alt", required=True, choices=models.FAMILIES)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--calibration", default=None,
                   choices=("chi2", "half_chi2"))
    p.add_argument("--bootstrap", type=int, default=None, metavar="B")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_test, needs_seed=False)

    p = sub.add_parser("np", help="nonparametric survivor estimate")
    _add_data_opts(p)
    p.add_argument("--method", default="auto",
                   choices=("auto", "km", "turnbull"))
    p.set_defaults(handler=cmd_np, needs_seed=False)

    p = sub.add_parser("bayes", help="posterior sampling (ratio of uniforms)")
    _add_data_opts(p)
    p.add_argument("--family", default="gen_pareto",
                   choices=("exponential", "gompertz", "gen_pareto"))
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_bayes, needs_seed=True)

    p = sub.add_parser("qq", help="truncation-aware Q-Q data")
    _add_data_opts(p)
    p.add_argument("--family", default="gen_pareto",
                   choices=models.FAMILIES)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--strategy", default="B", choices=("A", "B"))
    p.add_argument("--band", type=int, default=None, metavar="B")
    p.add_argument("--level", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_qq, needs_seed=False)

    p = sub.add_parser("simulate", help="named simulation experiment")
    p.add_argument("--config", required=True,
                   help="bundled name (appendix_b, japan_tabulation) "
                        "or a JSON path")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_simulate, needs_seed=False)

    for name, sp in sub.choices.items():
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=None)
    return top


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    _threads(args)
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    config = {
        k: v for k, v in vars(args).items()
        if k not in ("handler", "needs_seed") and not callable(v)
    }
    manifest = RunManifest(
        command=args.command,
        argv=argv,
        config=config,
        inputs={},
        seed=getattr(args, "seed", None),
        version=__version__,
    )
    t0 = time.monotonic()
    try:
        args.handler(args, out_dir, manifest)
    except (fit.NumericError, bayes.RoUError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, TypeError, OSError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return 2
    except RuntimeError as err:
        print(f"invariant trap: {err}", file=sys.stderr)
        return 4
    manifest.wall_time_s = time.monotonic() - t0
    path = manifest.write(out_dir)
    print(f"manifest: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface: recover / fit / predict / eval / crps-check.

Exit codes: 0 success, 1 usage (bad flags, missing files), 2 data
(malformed CSV/JSON, invalid configuration), 3 numeric failure (oracle or
training divergence, tolerance breach). All randomized commands are
deterministic under --seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import List, Optional, Sequence

import numpy as np

from . import forecaster as fc
from . import metrics as mx
from . import synth
from .crps import OracleError, crps, crps_quadrature_oracle
from .curves import QuantileKnots, eval_cdf, eval_quantile, iqf_curve
from .head import (
    DivergenceError,
    HeadConfig,
    SgdConfig,
    decode,
    fit as fit_head,
    init_head_params,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the contract wants 1
    def error(self, message):
        raise UsageError(message)


def _float_list(text: str) -> List[float]:
    try:
        out = [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers, got %r" % text)
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _levels_list(text: str) -> List[float]:
    out = _float_list(text)
    if any(not 0.0 < v < 1.0 for v in out):
        raise argparse.ArgumentTypeError("levels must lie in (0, 1)")
    return out


def _build_parser() -> _Parser:
    p = _Parser(prog="isqf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("recover", help="fit a quantile function to i.i.d. samples")
    r.add_argument("--dist", default="gaussian-mixture",
                   choices=["gaussian-mixture", "cauchy", "exponential"])
    r.add_argument("--weights", type=_float_list)
    r.add_argument("--means", type=_float_list)
    r.add_argument("--stds", type=_float_list)
    r.add_argument("--loc", type=float, default=0.0)
    r.add_argument("--scale", type=float, default=1.0)
    r.add_argument("--rate", type=float, default=1.0)
    r.add_argument("--samples", type=int, default=20000)
    r.add_argument("--knots", type=int, required=True)
    r.add_argument("--spline", type=int, default=0,
                   help="spline pieces per knot interval; 0 = plain linear interpolation")
    r.add_argument("--tail", default="exp", choices=["exp", "gpd"])
    r.add_argument("--epochs", type=int, default=40)
    r.add_argument("--batch", type=int, default=256)
    r.add_argument("--step", type=float, default=0.05)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True, help="output directory for CSV artifacts")
    r.set_defaults(func=cmd_recover)

    f = sub.add_parser("fit", help="train a forecaster on a panel CSV")
    f.add_argument("--data", required=True)
    f.add_argument("--horizon", type=int)
    f.add_argument("--mode", default="seq2seq", choices=["seq2seq", "ar"])
    f.add_argument("--head", default="isqf", choices=["iqf", "isqf"])
    f.add_argument("--levels", type=_levels_list, default=[0.1, 0.5, 0.9])
    f.add_argument("--spline", type=int, default=3)
    f.add_argument("--tail", default="exp", choices=["exp", "gpd"])
    f.add_argument("--context", type=int)
    f.add_argument("--epochs", type=int, default=60)
    f.add_argument("--batch", type=int, default=32)
    f.add_argument("--step", type=float, default=0.01)
    f.add_argument("--extra-windows", type=int, default=0)
    f.add_argument("--stride", type=int, default=1)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True, help="checkpoint JSON path")
    f.set_defaults(func=cmd_fit)

    q = sub.add_parser("predict", help="quantiles (and sample paths) from a checkpoint")
    q.add_argument("--model", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--levels", type=_levels_list, required=True,
                   help="any levels in (0,1); output columns follow this order")
    q.add_argument("--paths", type=int, default=0)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True, help="output directory")
    q.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="score a checkpoint on the last horizon of a panel")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--levels", type=_levels_list,
                   help="wQL levels; defaults to the training levels")
    e.add_argument("--zeta", type=_float_list, default=[0.1])
    e.add_argument("--seasonality", type=int,
                   help="seasonal lag for MSIS scaling; defaults to the horizon")
    e.add_argument("--out", help="write the report JSON here instead of stdout")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("crps-check", help="analytic CRPS vs quadrature oracle")
    c.add_argument("--trials", type=int, default=1000)
    c.add_argument("--tol", type=float, default=1e-6)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_crps_check)
    return p


def _make_spec(args) -> synth.SynthSpec:
    kw = dict(n=args.samples, seed=args.seed)
    if args.dist == "gaussian-mixture":
        base = synth.default_mixture_spec()
        kw["weights"] = tuple(args.weights) if args.weights else base.weights
        kw["means"] = tuple(args.means) if args.means else base.means
        kw["stds"] = tuple(args.stds) if args.stds else base.stds
    elif args.dist == "cauchy":
        kw["loc"], kw["scale"] = args.loc, args.scale
    else:
        kw["rate"] = args.rate
    return synth.SynthSpec(args.dist, **kw)


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (int, float, np.floating)) else v
                        for v in row])


def fit_samples_curve(samples, knots: int, spline: int, tail: str,
                      epochs: int, batch: int, step: float, seed: int):
    """Fit a K-knot quantile function to i.i.d. samples by CRPS descent.

    A constant-input head reduces the decoder to free knot parameters.
    Returns (curve, levels).
    """
    levels = (np.arange(knots) + 1.0) / (knots + 1.0)
    mode = "isqf" if spline > 0 else "iqf"
    config = HeadConfig(levels=tuple(levels), in_dim=1, mode=mode,
                        spline_pieces=max(spline, 1), tail=tail if mode == "isqf" else "exp")
    params = init_head_params(config, seed=seed)
    z = np.asarray(samples, dtype=float)
    # center/scale once so the default init brackets the data
    mu, sd = float(z.mean()), float(z.std() + 1e-12)
    zs = (z - mu) / sd
    H = np.ones((z.size, 1))
    opt = SgdConfig(step=step, batch_size=batch, epochs=epochs)
    params, _ = fit_head(params, H, zs, config, opt=opt, seed=seed)
    curve_std = decode(params, np.ones(1), config)
    kv = mu + sd * curve_std.knots.values
    if mode == "iqf":
        curve = iqf_curve(QuantileKnots(levels, kv))
    else:
        # rescale the whole decoded curve, tails included
        from .curves import ExponentialTail, GpdTail, IsqfCurve, SplineSegment

        segs = tuple(
            SplineSegment(s.d, mu + sd * np.asarray(s.p)) for s in curve_std.segments
        )
        lt, rt = curve_std.left_tail, curve_std.right_tail
        if isinstance(lt, ExponentialTail):
            left = ExponentialTail("left", lt.beta / sd, lt.anchor_level, kv[0])
            right = ExponentialTail("right", rt.beta / sd, rt.anchor_level, kv[-1])
        else:
            left = GpdTail("left", lt.eta, sd * lt.mu, lt.anchor_level, kv[0])
            right = GpdTail("right", rt.eta, sd * rt.mu, rt.anchor_level, kv[-1])
        curve = IsqfCurve(QuantileKnots(levels, kv), segs, left, right)
    return curve, levels


def grid_l1_distance(curve, spec: synth.SynthSpec, grid=None) -> float:
    """Trapezoid L1 between fitted and true quantile functions on an alpha
    grid (default 0.001..0.999 step 0.001; heavy tails are clipped there)."""
    if grid is None:
        grid = np.linspace(0.001, 0.999, 999)
    diff = np.abs(eval_quantile(curve, grid) - synth.true_quantile(spec, grid))
    return float(np.trapezoid(diff, grid))


def cmd_recover(args) -> int:
    if args.knots < 2:
        raise UsageError("--knots must be at least 2")
    os.makedirs(args.out, exist_ok=True)
    spec = _make_spec(args)
    samples = synth.generate(spec)
    curve, levels = fit_samples_curve(
        samples, args.knots, args.spline, args.tail,
        args.epochs, args.batch, args.step, args.seed,
    )

    grid = np.linspace(0.001, 0.999, 999)
    fit_q = eval_quantile(curve, grid)
    true_q = synth.true_quantile(spec, grid)
    _write_csv(os.path.join(args.out, "curves.csv"),
               ["alpha", "true_q", "fitted_q"], zip(grid, true_q, fit_q))

    true_kq = synth.true_quantile(spec, levels)
    _write_csv(os.path.join(args.out, "knots.csv"),
               ["level", "fitted_value", "true_value"],
               zip(levels, curve.knots.values, true_kq))

    lo, hi = np.quantile(samples, [0.001, 0.999])
    pad = 0.05 * (hi - lo)
    xs = np.linspace(lo - pad, hi + pad, 400)
    hist, edges = np.histogram(samples, bins=80, range=(xs[0], xs[-1]), density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    emp = np.interp(xs, centers, hist)
    h = 1e-5 * max(1.0, hi - lo)
    fit_pdf = (eval_cdf(curve, xs + h) - eval_cdf(curve, xs - h)) / (2.0 * h)
    _write_csv(os.path.join(args.out, "pdf.csv"),
               ["x", "true_pdf", "fitted_pdf", "empirical_pdf"],
               zip(xs, synth.true_pdf(spec, xs), fit_pdf, emp))

    summary = {
        "dist": args.dist,
        "knots": args.knots,
        "spline": args.spline,
        "seed": args.seed,
        "l1_alpha_grid": grid_l1_distance(curve, spec, grid),
        "knot_max_abs_err": float(np.max(np.abs(curve.knots.values - true_kq))),
        "out": args.out,
    }
    print(json.dumps(summary))
    return EXIT_OK


def cmd_fit(args) -> int:
    panel = synth.load_panel(args.data, horizon=args.horizon, context=args.context)
    cfg = fc.ForecastConfig(
        horizon=panel.horizon,
        levels=tuple(args.levels),
        context=panel.context,
        mode=args.mode,
        head_mode=args.head,
        spline_pieces=args.spline,
        tail=args.tail,
        n_cov=panel.n_cov,
    )
    model = fc.new_model(cfg, seed=args.seed)
    opt = SgdConfig(step=args.step, batch_size=args.batch, epochs=args.epochs)
    model, losses = fc.train(model, panel, opt=opt, seed=args.seed,
                             extra_windows=args.extra_windows, stride=args.stride)
    fc.save_model(model, args.out)
    print(json.dumps({
        "out": args.out, "mode": args.mode, "head": args.head,
        "epochs": args.epochs, "first_loss": losses[0], "final_loss": losses[-1],
    }))
    return EXIT_OK


def _inference_slices(model, panel):
    C, tau = model.config.context, model.config.horizon
    if panel.length < C:
        raise ValueError("panel is shorter than the model context %d" % C)
    ctxs = panel.targets[:, panel.length - C:]
    covs = None
    if model.config.n_cov:
        if panel.covariates is None:
            raise ValueError("model expects %d covariates, panel has none" % model.config.n_cov)
        covs = panel.covariates[:, panel.length - C: panel.length + tau]
    if not np.all(np.isfinite(ctxs)):
        raise ValueError("context windows contain non-finite targets")
    return ctxs, covs


def cmd_predict(args) -> int:
    model = fc.load_model(args.model)
    panel = synth.load_panel(args.data, horizon=model.config.horizon)
    os.makedirs(args.out, exist_ok=True)
    ctxs, covs = _inference_slices(model, panel)
    tau = model.config.horizon
    header = ["series_id", "step"] + ["q_%g" % lv for lv in args.levels]
    rows = []
    for i in range(panel.m):
        cov_i = covs[i] if covs is not None else None
        q = fc.predict_quantiles(model, ctxs[i], args.levels, covariates=cov_i)
        for t in range(tau):
            rows.append([str(i), str(t + 1)] + list(q[t]))
    _write_csv(os.path.join(args.out, "quantiles.csv"), header, rows)
    artifacts = {"quantiles": os.path.join(args.out, "quantiles.csv")}

    if args.paths > 0:
        prows = []
        for i in range(panel.m):
            cov_i = covs[i] if covs is not None else None
            paths = fc.sample_paths(model, ctxs[i], args.paths,
                                    seed=args.seed + i, covariates=cov_i)
            for j in range(args.paths):
                for t in range(tau):
                    prows.append([str(i), str(j), str(t + 1), paths[j, t]])
        _write_csv(os.path.join(args.out, "paths.csv"),
                   ["series_id", "path", "step", "value"], prows)
        artifacts["paths"] = os.path.join(args.out, "paths.csv")
    print(json.dumps(artifacts))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = fc.load_model(args.model)
    panel = synth.load_panel(args.data, horizon=model.config.horizon)
    C, tau = model.config.context, model.config.horizon
    T = panel.length
    if T < C + tau:
        raise ValueError("panel too short to hold out one horizon after the context")
    ctx = panel.targets[:, T - tau - C: T - tau]
    actuals = panel.targets[:, T - tau:]
    history = panel.targets[:, : T - tau]
    covs = None
    if model.config.n_cov:
        covs = panel.covariates[:, T - tau - C: T]
    if not (np.all(np.isfinite(ctx)) and np.all(np.isfinite(actuals))):
        raise ValueError("evaluation windows contain non-finite targets")

    # crossing_percent reads adjacent pairs, so the wQL grid is kept sorted
    levels = sorted(args.levels) if args.levels else sorted(model.config.levels)

    def batch_quantiles(lvs):
        out = np.empty((panel.m, tau, len(lvs)))
        for i in range(panel.m):
            cov_i = covs[i] if covs is not None else None
            out[i] = fc.predict_quantiles(model, ctx[i], lvs, covariates=cov_i)
        return out

    preds = batch_quantiles(levels)

    def interval(a_lo, a_up):
        q = batch_quantiles([a_lo, a_up])
        return q[:, :, 0], q[:, :, 1]

    seasonality = args.seasonality if args.seasonality else tau
    report = mx.build_report(
        preds, levels, actuals,
        history=history, seasonality=seasonality,
        zetas=args.zeta, interval_quantiles=interval,
    )
    text = report.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _random_curve(rng: np.random.Generator):
    k = int(rng.integers(2, 9))
    levels = np.sort(rng.uniform(0.02, 0.98, size=k))
    while np.min(np.diff(levels)) < 0.01:
        levels = np.sort(rng.uniform(0.02, 0.98, size=k))
    values = np.cumsum(rng.exponential(1.0, size=k)) * rng.uniform(0.2, 3.0)
    values += rng.normal(0.0, 5.0)
    return iqf_curve(QuantileKnots(levels, values))


def cmd_crps_check(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    worst_case = None
    for trial in range(args.trials):
        curve = _random_curve(rng)
        if rng.uniform() < 0.8:
            z = float(eval_quantile(curve, rng.uniform(0.002, 0.998)))
        else:
            lo, hi = curve.knots.values[0], curve.knots.values[-1]
            z = float(rng.uniform(lo - 2 * (hi - lo + 1.0), hi + 2 * (hi - lo + 1.0)))
        analytic = crps(curve, z).total
        oracle = crps_quadrature_oracle(curve, z, tol=1e-10)
        rel = float(abs(analytic - oracle) / max(abs(oracle), 1e-12))
        if rel > worst:
            worst, worst_case = rel, trial
    passed = bool(worst <= args.tol)
    print(json.dumps({"trials": args.trials, "max_rel_err": worst,
                      "tol": args.tol, "worst_trial": worst_case, "pass": passed}))
    return EXIT_OK if passed else EXIT_NUMERIC


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print("usage error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print("usage error: missing file: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except (synth.PanelFormatError, json.JSONDecodeError) as exc:
        print("data error: %s" % exc, file=sys.stderr)
        return EXIT_DATA
    except (OracleError, DivergenceError) as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print("data error: %s" % exc, file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Every output file carries the full run configuration: CSV files as leading
``# key = value`` comment lines, JSON files under a ``run_config`` key.
Outputs contain no timestamps, so identical config and seed give
byte-identical files.  On any error the files written so far are removed and
the command exits with status 1 and a one-line cause.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import market_data, rationality, synthesis, training
from .baselines.calibration import calibrate, model_prices
from .baselines.levy import PARAM_NAMES, VARIANTS, LevyModelParams
from .baselines.pricing import fft_price_curve
from .config import ConfigError, RunConfig, format_value, load_config, parse_config_text
from .gated_net import Checkpoint

log = logging.getLogger("gatedpricer")


class CommandError(RuntimeError):
    pass


class Outputs:
    """Tracks files written by a command so a failure can remove them."""

    def __init__(self, out_dir, cfg: RunConfig):
        self.dir = Path(out_dir)
        self.cfg = cfg
        self.written: list[Path] = []

    def path(self, name) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        self.written.append(p)
        return p

    def csv(self, name, rows, columns) -> Path:
        buf = io.StringIO()
        for line in self.cfg.header_lines():
            buf.write(f"# {line}\n")
        writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
        p = self.path(name)
        p.write_text(buf.getvalue())
        return p

    def json(self, name, doc: dict) -> Path:
        doc = {**doc, "run_config": self.cfg.to_dict()}
        p = self.path(name)
        p.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n")
        return p

    def records(self, name, records) -> Path:
        p = self.path(name)
        market_data.write_records(p, records, header=self.cfg.header_lines())
        return p

    def cleanup(self) -> None:
        for p in self.written:
            if p.exists():
                p.unlink()


def _fmt(x) -> str:
    return repr(float(x))


def _levy_from_args(args, spot: float = 1.0, r: float | None = None) -> LevyModelParams:
    values = {n: getattr(args, n) for n in PARAM_NAMES[args.variant]}
    missing = [n for n, v in values.items() if v is None]
    if missing:
        raise CommandError(f"{args.variant} needs --{' --'.join(m.replace('_', '-') for m in missing)}")
    return LevyModelParams(args.variant, S=spot, r=args.rate if r is None else r, **values)


def _load_model(path):
    return Checkpoint.load(path).model


# --------------------------------------------------------------------------
# commands


def cmd_ingest(args, cfg: RunConfig, out: Outputs) -> None:
    schema = json.loads(Path(args.schema).read_text()) if args.schema else None
    quotes = market_data.ingest_chain(args.chain, schema, args.max_bad_fraction)
    curve = market_data.RateCurve.from_csv(args.rates) if args.rates else None
    records = market_data.normalize_chain(quotes, curve)
    out.records("records.csv", records)
    print(f"{len(quotes)} quotes -> {len(records)} call records")


def cmd_synth(args, cfg: RunConfig, out: Outputs) -> None:
    model = _levy_from_args(args)
    spec = synthesis.SyntheticSurfaceSpec(
        model,
        n_dates=args.n_dates,
        strikes_per_date=args.strikes_per_date,
        tau_days=tuple(args.tau_days),
        S0=args.spot,
        min_price=args.min_price,
        start=args.start,
    )
    records = synthesis.generate_synthetic_market(spec, cfg.seed)
    out.records("records.csv", records)
    print(f"{len(records)} synthetic {args.variant} records over {args.n_dates} dates")


def _records_from(paths) -> list:
    if not paths:
        raise CommandError("no input records given (use --records)")
    records = []
    for p in paths:
        records.extend(market_data.read_records(p))
    if not records:
        raise CommandError("input records are empty")
    return records


def cmd_train(args, cfg: RunConfig, out: Outputs) -> None:
    records = _records_from(cfg.inputs)
    tcfg = cfg.train_config()
    spec = cfg.model_spec()
    rng = np.random.default_rng(cfg.seed)
    virtuals = training.build_virtuals(records, tcfg, rng)
    hints = []
    if spec.model_type == "multi":
        taus = sorted({r.tau_years for r in records})
        hints = synthesis.make_hint_grid(taus, tcfg.hint_points, (tcfg.hint_m_min, tcfg.hint_m_max), tcfg.hint_delta)
    ckpt = training.train(records, virtuals, hints, spec, tcfg, cfg.seed)
    ckpt.metadata["run_config"] = cfg.to_dict()
    ckpt.save(out.path("checkpoint.json"))
    trace = ckpt.metadata["loss_trace"]
    out.csv("loss_trace.csv", ({"epoch": i, "loss": _fmt(v)} for i, v in enumerate(trace)), ("epoch", "loss"))
    mse, mape = training.price_metrics([r.c for r in records], training.nn_prices(ckpt.model, records))
    print(f"trained {spec.model_type}: final loss {trace[-1]:.6g}, train MSE {mse:.6g}, MAPE {mape:.4g}%")


def cmd_eval(args, cfg: RunConfig, out: Outputs) -> None:
    records = _records_from(cfg.inputs)
    unknown = set(cfg.methods) - set(training.NN_METHODS) - set(training.BASELINE_METHODS)
    if unknown:
        raise CommandError(f"unknown methods {sorted(unknown)}")
    specs = {m: cfg.model_spec(m) for m in cfg.methods if m in training.NN_METHODS}
    results, preds = training.rolling_evaluate(
        records, tuple(cfg.methods), cfg.train_days, cfg.train_config(), cfg.seed, specs,
        {"n_starts": cfg.calib_starts, "objective": cfg.calib_objective}, cfg.max_windows,
    )
    rows = [r.as_row() for r in results]
    out.csv("windows.csv", rows, WINDOW_COLUMNS)
    out.csv("predictions.csv", (_prediction_row(p) for p in preds), PREDICTION_COLUMNS)
    for method in cfg.methods:
        vals = [r.test_mape for r in results if r.method == method]
        if vals:
            print(f"{method:>6}: mean test MAPE {np.mean(vals):.4g}% over {len(vals)} windows")


WINDOW_COLUMNS = ("method", "window", "train_start", "train_end", "date", "train_mse", "train_mape",
                  "test_mse", "test_mape", "n_train", "n_contracts")
PREDICTION_COLUMNS = ("method", "window", "split", "date", "tau_days", "K", "S_t", "r", "c", "c_hat")


def _prediction_row(p) -> dict:
    r = p.record
    return {"method": p.method, "window": p.window, "split": p.split, "date": r.date.isoformat(),
            "tau_days": r.tau_days, "K": _fmt(r.K), "S_t": _fmt(r.S), "r": _fmt(r.r), "c": _fmt(r.c),
            "c_hat": _fmt(p.c_hat)}


def cmd_density(args, cfg: RunConfig, out: Outputs) -> None:
    model = _load_model(args.checkpoint)
    S_T = args.spot * np.linspace(args.m_min, args.m_max, args.points)
    curve = rationality.extract_density(model, args.spot, args.tau_days / market_data.DAYS_PER_YEAR, args.rate,
                                        S_T, h=args.step, method=args.method)
    out.csv("density.csv", ({"S_T": _fmt(x), "f": _fmt(f)} for x, f in zip(curve.S_T, curve.f)), ("S_T", "f"))
    mom = rationality.density_moments(curve)
    out.json("density_summary.json", {**curve.summary(), "moments": mom._asdict()})
    print(f"integral {curve.integral:.6f}, min f {curve.min_value:.3g}, valid={curve.valid}")


def cmd_check(args, cfg: RunConfig, out: Outputs) -> None:
    if args.checkpoint:
        model = _load_model(args.checkpoint)
    elif args.bs_sigma is not None:
        from .baselines.black_scholes import BlackScholesSurface
        model = BlackScholesSurface(args.bs_sigma, args.rate)
    else:
        raise CommandError("check needs --checkpoint or --bs-sigma")
    grid = rationality.CheckGrid(
        m=np.linspace(args.m_min, args.m_max, args.m_points),
        tau=np.linspace(2, args.tau_max_days, args.tau_points) / market_data.DAYS_PER_YEAR,
        m_large=args.m_large, r=args.rate,
    )
    report = rationality.check_conditions(model, grid)
    out.json("rationality.json", report.to_dict())
    for name, c in report.conditions.items():
        print(f"{name}: {c.status} ({c.detail} = {c.worst:.3g})")


def cmd_calibrate(args, cfg: RunConfig, out: Outputs) -> None:
    records = _records_from(cfg.inputs)
    by_date = market_data.group_by_date(records)
    date = market_data._parse_date(args.date) if args.date else max(by_date)
    if date not in by_date:
        raise CommandError(f"no records on {date}")
    result = calibrate(by_date[date], args.variant, n_starts=args.starts, seed=cfg.seed, objective=cfg.calib_objective)
    out.json("calibration.json", {"date": date.isoformat(), "variant": args.variant, **result.to_dict(),
                                  "starts": result.starts})
    print(f"{args.variant} on {date}: MSE {result.mse:.6g}, MAPE {result.mape:.4g}%")


def cmd_price_curve(args, cfg: RunConfig, out: Outputs) -> None:
    params = _levy_from_args(args, spot=args.spot)
    strikes = np.asarray(args.strikes if args.strikes else args.spot * np.linspace(0.7, 1.3, 61), float)
    tau = args.tau_days / market_data.DAYS_PER_YEAR
    if args.engine == "closed":
        if args.variant != "bs":
            raise CommandError("the closed-form engine only prices bs")
        prices = model_prices(params, tau, strikes)
    else:
        prices = fft_price_curve(params, tau, strikes)
    out.csv("price_curve.csv", ({"K": _fmt(k), "c": _fmt(c)} for k, c in zip(strikes, prices)), ("K", "c"))
    print(f"{len(strikes)} {args.variant} prices at tau={args.tau_days}d")


def _read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def summarize_windows(rows) -> tuple[list[dict], list[dict]]:
    """Per-method mean/std table and a per-window test-metric series."""
    methods = list(dict.fromkeys(r["method"] for r in rows))
    table = []
    for m in methods:
        sel = [r for r in rows if r["method"] == m]
        row = {"method": m, "n_windows": len(sel)}
        for key in ("train_mse", "train_mape", "test_mse", "test_mape"):
            vals = np.array([float(r[key]) for r in sel])
            row[f"{key}_mean"] = _fmt(vals.mean())
            row[f"{key}_std"] = _fmt(vals.std(ddof=1) if len(vals) > 1 else 0.0)
        table.append(row)
    series = {}
    for r in rows:
        key = (int(r["window"]), r["date"])
        series.setdefault(key, {"window": key[0], "date": key[1]})
        series[key][f"{r['method']}_test_mse"] = r["test_mse"]
        series[key][f"{r['method']}_test_mape"] = r["test_mape"]
    return table, [series[k] for k in sorted(series)]


def cmd_report(args, cfg: RunConfig, out: Outputs) -> None:
    rows = []
    for p in args.windows:
        rows.extend(_read_csv(p))
    if not rows:
        raise CommandError("no window results to report")
    table, series = summarize_windows(rows)
    cols = ["method", "n_windows"] + [f"{k}_{s}" for k in ("train_mse", "train_mape", "test_mse", "test_mape")
                                      for s in ("mean", "std")]
    out.csv("comparison.csv", table, cols)
    methods = list(dict.fromkeys(r["method"] for r in rows))
    scols = ["window", "date"] + [f"{m}_{k}" for m in methods for k in ("test_mse", "test_mape")]
    out.csv("series.csv", series, scols)
    for row in table:
        print(f"{row['method']:>6}: test MAPE {float(row['test_mape_mean']):.4g}% "
              f"(sd {float(row['test_mape_std']):.3g}) over {row['n_windows']} windows")


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "density": cmd_density,
    "check": cmd_check,
    "calibrate": cmd_calibrate,
    "price-curve": cmd_price_curve,
    "report": cmd_report,
}


# --------------------------------------------------------------------------
# argument parsing


def _add_levy_args(p, required_variant: bool = True):
    p.add_argument("--variant", choices=VARIANTS, required=required_variant)
    p.add_argument("--sigma", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--p-up", dest="p_up", type=float)
    p.add_argument("--eta1", type=float)
    p.add_argument("--eta2", type=float)
    p.add_argument("--rate", type=float, default=0.0, help="risk-free rate")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gatedpricer", description="Gated neural option pricing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="option chain CSV -> call records")
    p.add_argument("--chain", required=True)
    p.add_argument("--rates", help="rate curve CSV with columns days, rate")
    p.add_argument("--schema", help="JSON column map")
    p.add_argument("--max-bad-fraction", type=float, default=0.1)

    p = sub.add_parser("synth", parents=[common], help="synthetic call records from a BS/VG/Kou generator")
    _add_levy_args(p)
    p.add_argument("--n-dates", type=int, default=20)
    p.add_argument("--strikes-per-date", type=int, default=200)
    p.add_argument("--tau-days", type=int, nargs="+", default=[7, 14, 30, 60, 90, 180])
    p.add_argument("--spot", type=float, default=100.0)
    p.add_argument("--min-price", type=float, default=0.01)
    p.add_argument("--start", default="2020-01-02")

    for name, text in (("train", "train one gated network on all records"),
                       ("eval", "rolling train/test evaluation")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--records", nargs="+", help="call record CSV files")
        p.add_argument("--model", choices=training.NN_METHODS, help="model type (train)")
        p.add_argument("--methods", nargs="+", help="methods to evaluate (eval)")
        p.add_argument("--epochs", type=int)
        p.add_argument("--max-windows", type=int)

    p = sub.add_parser("density", parents=[common], help="risk-neutral density from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--spot", type=float, default=100.0)
    p.add_argument("--tau-days", type=float, default=7.0)
    p.add_argument("--rate", type=float, default=0.0)
    p.add_argument("--m-min", type=float, default=0.01)
    p.add_argument("--m-max", type=float, default=4.0)
    p.add_argument("--points", type=int, default=400)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--method", choices=("auto", "analytic", "fd"), default="auto")

    p = sub.add_parser("check", parents=[common], help="grid checks of C1-C6")
    p.add_argument("--checkpoint")
    p.add_argument("--bs-sigma", type=float, help="check a Black-Scholes surface instead")
    p.add_argument("--rate", type=float, default=0.0)
    p.add_argument("--m-min", type=float, default=0.01)
    p.add_argument("--m-max", type=float, default=4.0)
    p.add_argument("--m-points", type=int, default=400)
    p.add_argument("--tau-max-days", type=float, default=365.0)
    p.add_argument("--tau-points", type=int, default=30)
    p.add_argument("--m-large", type=float, default=50.0)

    p = sub.add_parser("calibrate", parents=[common], help="calibrate a baseline to one day")
    p.add_argument("--records", nargs="+", required=True)
    p.add_argument("--variant", "--model", dest="variant", choices=VARIANTS, required=True)
    p.add_argument("--date", help="quote date (default: latest)")
    p.add_argument("--starts", type=int, default=10)

    p = sub.add_parser("price-curve", parents=[common], help="price a strike curve with a baseline model")
    _add_levy_args(p)
    p.add_argument("--spot", type=float, default=100.0)
    p.add_argument("--tau-days", type=float, default=30.0)
    p.add_argument("--strikes", type=float, nargs="+")
    p.add_argument("--engine", choices=("frft", "closed"), default="frft")

    p = sub.add_parser("report", parents=[common], help="aggregate windows.csv files")
    p.add_argument("--windows", nargs="+", required=True)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.set:
        overrides.update(parse_config_text("\n".join(args.set)))
    overrides["command"] = args.command
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if getattr(args, "records", None):
        overrides["inputs"] = tuple(args.records)
    if getattr(args, "model", None):
        overrides["model_type"] = args.model
    if getattr(args, "methods", None):
        overrides["methods"] = tuple(args.methods)
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    if getattr(args, "max_windows", None) is not None:
        overrides["max_windows"] = args.max_windows
    cfg = cfg.updated(**overrides)
    # command-specific flags are part of the run's identity too
    skip = {"config", "seed", "out", "set", "verbose", "command", "records", "model", "methods", "epochs",
            "max_windows"}
    flags = {f"flag.{k}": v for k, v in sorted(vars(args).items()) if k not in skip}
    return cfg.updated(**flags)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Outputs(cfg.out, cfg)
    try:
        COMMANDS[args.command](args, cfg, out)
    except Exception as exc:  # any module error becomes a one-line cause
        out.cleanup()
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {args.command}: {msg}", file=sys.stderr)
        if args.verbose:
            raise
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""
Command-line entry point.

    exchgp fit       --input panel.csv --treated CA --t0 1988 --model ou-time-cov
    exchgp predict   --input panel.csv --treated CA --theta out/report.json
    exchgp validate  --input panel.csv --fake-time 1981 --models ou-time,rbf-time
    exchgp staggered --input panel.csv --controls 20 --mode estimate
    exchgp simulate  --units 30 --times 50 --seed 7 --out sim/

Every subcommand writes its tables and a ``manifest.json`` into ``--out``.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import reports
from .errors import ConfigError, ExchGPError, NumericalError, PanelDataError, PipelineError
from .harness import (
    StaggeredConfig,
    UnitRun,
    build_report,
    choose_fake_time,
    fit_predict_unit,
    leave_one_out_validation,
    split_design,
    staggered_pipeline,
)
from .hyperopt import FitOptions
from .model import PRESETS, HyperParams, preset
from .panel import PanelDataset, load_panel, make_split, restrict_window, write_panel
from .predict import effect_summary, posterior_predictive
from .simulate import SimLayout, sample_prior

log = logging.getLogger("exchgp")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# --------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", type=Path, help="JSON file supplying any flag; flags override it")
    p.add_argument("--out", "-o", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-level", default="INFO")
    if not data:
        return
    p.add_argument("--input", "-i", type=Path, help="panel CSV")
    p.add_argument("--schema", help="column remap, e.g. unit=state,time=year,outcome=sales; or a JSON file")
    p.add_argument("--shared-cov", default="", help="comma-separated covariate columns for the shared process")
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--record-timings", action="store_true", help="add optimization times to report tables")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="exchgp", description="Exchangeable GP counterfactuals for panel data")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    models = ", ".join(sorted(PRESETS))

    for name, help_ in (("fit", "fit hyperparameters and estimate effects"),
                        ("predict", "predict with given hyperparameters (fits when none are given)")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--model", default="ou-time", help=f"one of: {models}")
        p.add_argument("--treated", help="treated unit id (default: the only treated unit)")
        p.add_argument("--t0", type=int, help="last untreated time (default: the unit's treatment_time)")
        p.add_argument("--horizon", type=int)
        p.add_argument("--dump-trajectories", action="store_true")
        if name == "predict":
            p.add_argument("--theta", type=Path, help="report.json from an earlier fit")

    p = sub.add_parser("validate", help="leave-one-unit-out placebo validation")
    _common(p)
    p.add_argument("--models", help=f"comma-separated presets ({models})")
    p.add_argument("--fake-time", type=int)
    p.add_argument("--fraction", type=float, help="post share of the window to hold out")
    p.add_argument("--window-end", type=int, help="last time of the untreated window")
    p.add_argument("--dump-trajectories", action="store_true")

    p = sub.add_parser("staggered", help="one-unit-at-a-time pipeline for staggered adoption")
    _common(p)
    p.add_argument("--model", default="rbf-time-cov")
    p.add_argument("--controls", type=int, default=20, dest="controls", help="M controls per run")
    p.add_argument("--horizon-frac", type=float, default=0.5)
    p.add_argument("--validation-frac", type=float, default=1.0 / 3.0)
    p.add_argument("--unit-sample", type=int)
    p.add_argument("--mode", choices=["validate", "estimate"], default="estimate")
    p.add_argument("--dump-trajectories", action="store_true")

    p = sub.add_parser("simulate", help="draw a panel from the exchangeable GP prior")
    _common(p, data=False)
    p.add_argument("--units", type=int, default=30)
    p.add_argument("--times", type=int, default=50)
    p.add_argument("--covariates", type=int, default=0, help="number of covariate columns")
    p.add_argument("--model", default="ou-time")
    p.add_argument("--treated-units", type=int, default=1)
    p.add_argument("--treat-at", type=int, help="T0 for treated units (default: 60%% of the grid)")
    p.add_argument("--effect", type=float, default=0.0, help="additive post-treatment shift")
    p.add_argument("--sigma-mu2", type=float, default=4.0)
    p.add_argument("--sigma-g2", type=float, default=1.0)
    p.add_argument("--sigma-cov2", type=float, default=0.5)
    p.add_argument("--ell-time", type=float, default=5.0)
    p.add_argument("--ell-x", type=float, default=1.0)
    p.add_argument("--omega2", type=float, default=0.25)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise ConfigError("a subcommand is required: fit, predict, validate, staggered, simulate")
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = set(cfg) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for a in sub._actions:
            if a.dest in cfg and a.type is not None and cfg[a.dest] is not None:
                cfg[a.dest] = a.type(cfg[a.dest])
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def _schema(text: str | None) -> dict | None:
    if not text:
        return None
    path = Path(text)
    if path.suffix == ".json" and path.exists():
        return json.loads(path.read_text())
    out = {}
    for part in text.split(","):
        if "=" not in part:
            raise ConfigError(f"bad schema entry {part!r}; expected key=column")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _load(args) -> PanelDataset:
    if args.input is None:
        raise ConfigError("--input is required")
    try:
        return load_panel(args.input, _schema(args.schema))
    except OSError as exc:
        raise PanelDataError(f"cannot read {args.input}: {exc}") from None


def _shared_dims(args, data: PanelDataset) -> list[int]:
    names = [s.strip() for s in (args.shared_cov or "").split(",") if s.strip()]
    dims = []
    for name in names:
        if name not in data.covariate_names:
            raise ConfigError(f"--shared-cov column {name!r} is not a covariate")
        dims.append(data.covariate_names.index(name))
    return dims


def _fit_options(args) -> FitOptions:
    if args.restarts < 1 or args.max_iters < 1 or not args.tol > 0:
        raise ConfigError("restarts and max-iters must be >= 1 and tol > 0")
    return FitOptions(restarts=args.restarts, max_iters=args.max_iters, tol=args.tol, seed=args.seed)


def _spec(name: str, args, data: PanelDataset):
    spec = preset(name, _shared_dims(args, data))
    spec.check(data.p)
    return spec


def _trajectory_rows(data: PanelDataset, runs, pre_end=None) -> list[dict]:
    rows = []
    for run in runs:
        unit = data.unit(run.unit_id)
        for t, y in zip(unit.times, unit.outcomes):
            if t <= run.t0:
                rows.append({"unit": run.unit_id, "time": int(t), "segment": "train", "observed": float(y)})
        lo, hi = run.predictive.interval()
        for k, t in enumerate(run.predictive.times):
            rows.append({
                "unit": run.unit_id, "time": int(t), "segment": "pred",
                "observed": float(run.observed[k]), "mean": float(run.predictive.mean[k]),
                "lo": float(lo[k]), "hi": float(hi[k]),
            })
    return rows


# --------------------------------------------------------------------------
# subcommands


def _resolve_treated(args, data: PanelDataset):
    uid = args.treated
    if uid is None:
        treated = data.treated()
        if len(treated) != 1:
            raise ConfigError("--treated is required unless the panel has exactly one treated unit")
        uid = treated[0].unit_id
    unit = data.unit(uid)
    t0 = args.t0 if args.t0 is not None else unit.treatment_time
    if t0 is None:
        raise ConfigError(f"unit {uid!r} has no treatment_time; pass --t0")
    return uid, int(t0)


def cmd_fit(args, out: Path, timings: dict) -> list[Path]:
    data = _load(args)
    spec = _spec(args.model, args, data)
    uid, t0 = _resolve_treated(args, data)
    theta = None
    if args.command == "predict" and args.theta is not None:
        try:
            blob = json.loads(Path(args.theta).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read hyperparameters from {args.theta}: {exc}") from None
        theta = HyperParams.from_dict(blob.get("fit", blob).get("theta_hat", blob))

    start = time.perf_counter()
    if theta is None:
        run = fit_predict_unit(data, uid, t0, args.horizon, spec, _fit_options(args))
    else:
        split = make_split(data, uid, t0, args.horizon)
        train, y, pred, y_obs = split_design(data, split)
        gp = posterior_predictive(spec, theta, train, y, pred)
        run = UnitRun(uid, t0, gp, y_obs, effect_summary(gp, y_obs), None, split.n_train)
    timings["fit_predict_s"] = time.perf_counter() - start
    if run.fit is not None:
        timings["opt_time_s"] = run.fit.wall_time_s

    row = reports.aggregate_row(args.model, run)
    files = [
        reports.write_csv(out / "report.csv", [row], reports.AGGREGATE_COLUMNS),
        reports.write_csv(
            out / "effects.csv",
            reports.effect_rows(run.predictive, run.observed, run.effects),
            reports.EFFECT_COLUMNS,
        ),
    ]
    blob = {
        "model": args.model,
        "unit": uid,
        "t0": t0,
        "n_train": run.n_train,
        "aggregate": {"average": run.effects.average, "cumulative": run.effects.cumulative},
        "per_time": run.effects.per_time,
    }
    if run.fit is not None:
        fit_blob = run.fit.to_dict()
        if not args.record_timings:
            fit_blob.pop("wall_time_s", None)
        else:
            fit_blob["wall_time_s"] = run.fit.wall_time_s
        blob["fit"] = fit_blob
    else:
        blob["fit"] = {"theta_hat": theta.to_dict()}
    files.append(reports.write_json(out / "report.json", blob))
    if args.dump_trajectories:
        files.append(reports.write_csv(out / "trajectories.csv", _trajectory_rows(data, [run]),
                                       reports.TRAJECTORY_COLUMNS))
    return files


def _default_models(data: PanelDataset) -> list[str]:
    if data.p:
        return ["ou-time", "ou-time-cov", "rbf-time", "rbf-time-cov"]
    return ["ou-time", "rbf-time"]


def cmd_validate(args, out: Path, timings: dict) -> list[Path]:
    data = _load(args)
    treated = data.treated()
    window_end = args.window_end
    if window_end is None and treated:
        window_end = min(u.treatment_time for u in treated)
    window = restrict_window(data, None, window_end)
    times = np.unique(np.concatenate([u.times for u in window.units]))

    if args.fake_time is not None and args.fraction is not None:
        raise ConfigError("give --fake-time or --fraction, not both")
    if args.fake_time is not None:
        t1 = choose_fake_time(times, fixed=args.fake_time)
    else:
        fraction = args.fraction
        if fraction is None:
            if len(treated) != 1:
                raise ConfigError("pass --fake-time or --fraction")
            u = treated[0]
            fraction = float(np.mean(u.times > u.treatment_time))
        t1 = choose_fake_time(times, fraction=fraction)
    log.info("window_end=%s fake_time=%d units=%d", window_end, t1, window.m)

    names = [s.strip() for s in args.models.split(",")] if args.models else _default_models(data)
    opts = _fit_options(args)
    summary, horizon, per_time, traj = [], [], [], []
    report_blob = {"fake_time": t1, "window_end": window_end, "models": {}}
    for name in names:
        spec = _spec(name, args, data)
        start = time.perf_counter()
        report, runs = leave_one_out_validation(window, t1, spec, opts, model_name=name, jobs=args.jobs)
        timings[f"validate[{name}]_s"] = time.perf_counter() - start
        timings[f"opt_time[{name}]_s"] = report.summary.opt_time_s
        summary.append(reports.validation_row(report, args.record_timings))
        horizon += reports.slice_rows(name, report.per_horizon, "horizon")
        per_time += reports.slice_rows(name, report.per_time, "time")
        report_blob["models"][name] = {
            "summary": reports.validation_row(report, args.record_timings),
            "failures": report.failures,
        }
        if args.dump_trajectories:
            traj += [dict(r, model=name) for r in _trajectory_rows(window, runs)]

    cols = reports.VALIDATION_COLUMNS + (["opt_time_s"] if args.record_timings else [])
    files = [
        reports.write_csv(out / "report.csv", summary, cols),
        reports.write_csv(out / "horizon.csv", horizon, ["model", "horizon", "n", "rmse", "bias", "coverage"]),
        reports.write_csv(out / "time.csv", per_time, ["model", "time", "n", "rmse", "bias", "coverage"]),
        reports.write_json(out / "report.json", report_blob),
    ]
    if args.dump_trajectories:
        files.append(reports.write_csv(out / "trajectories.csv", traj, ["model"] + reports.TRAJECTORY_COLUMNS))
    return files


def cmd_staggered(args, out: Path, timings: dict) -> list[Path]:
    data = _load(args)
    spec = _spec(args.model, args, data)
    cfg = StaggeredConfig(
        M=args.controls, horizon_fraction=args.horizon_frac,
        validation_fraction=args.validation_frac, unit_sample=args.unit_sample, seed=args.seed,
    )
    start = time.perf_counter()
    res = staggered_pipeline(data, cfg, spec, _fit_options(args), mode=args.mode,
                             model_name=args.model, jobs=args.jobs)
    timings["pipeline_s"] = time.perf_counter() - start
    if res.report is not None:
        timings["opt_time_s"] = res.report.summary.opt_time_s

    experiment = "validation" if args.mode == "validate" else "final"
    total = reports.att_total_row(experiment, args.model, res.att, len(res.runs), len(res.failures))
    effects = []
    for r in res.runs:
        effects += reports.effect_rows(r.predictive, r.observed, r.effects)
    files = [
        reports.write_csv(out / "report.csv", [total], reports.ATT_TOTAL_COLUMNS),
        reports.write_csv(out / "att.csv", reports.att_rows(res.att), reports.ATT_COLUMNS),
        reports.write_csv(out / "effects.csv", effects, reports.EFFECT_COLUMNS),
    ]
    blob = {
        "mode": args.mode, "model": args.model, "config": cfg,
        "att": {"total_cumulative": res.att.total_cumulative,
                "average_weekly": res.att.average_weekly, "notes": res.att.notes},
        "failures": res.failures,
    }
    if res.report is not None:
        rep = res.report
        cols = reports.VALIDATION_COLUMNS + (["opt_time_s"] if args.record_timings else [])
        files += [
            reports.write_csv(out / "validation.csv", [reports.validation_row(rep, args.record_timings)], cols),
            reports.write_csv(out / "horizon.csv", reports.slice_rows(args.model, rep.per_horizon, "horizon"),
                              ["model", "horizon", "n", "rmse", "bias", "coverage"]),
            reports.write_csv(out / "time.csv", reports.slice_rows(args.model, rep.per_time, "time"),
                              ["model", "time", "n", "rmse", "bias", "coverage"]),
        ]
        blob["validation"] = reports.validation_row(rep, args.record_timings)
    files.append(reports.write_json(out / "report.json", blob))
    if args.dump_trajectories:
        files.append(reports.write_csv(out / "trajectories.csv", _trajectory_rows(data, res.runs),
                                       reports.TRAJECTORY_COLUMNS))
    return files


def cmd_simulate(args, out: Path, timings: dict) -> list[Path]:
    if args.units < 2 or args.times < 3:
        raise ConfigError("need at least 2 units and 3 times")
    if not 0 <= args.treated_units < args.units:
        raise ConfigError("treated-units must leave at least one control")
    spec = preset(args.model)
    p = args.covariates
    if spec.use_unit_covariates and p == 0:
        raise ConfigError(f"model {args.model!r} needs --covariates > 0")
    layout0 = SimLayout(args.units, np.arange(1, args.times + 1), HyperParams(1, 1), spec, p)
    ids = layout0.unit_ids()
    n_ell = spec.n_ell_x(p)
    theta = HyperParams(
        sigma_mu2=args.sigma_mu2, sigma_g1_2=args.sigma_g2,
        sigma_g2_2=args.sigma_cov2 if spec.use_unit_covariates else 0.0,
        ell_time=args.ell_time, ell_x=(args.ell_x,) * n_ell,
        omega2={u: args.omega2 for u in ids},
    )
    t0 = args.treat_at if args.treat_at is not None else int(round(0.6 * args.times))
    treated = ids[: args.treated_units]
    effect = float(args.effect)
    layout = SimLayout(
        args.units, np.arange(1, args.times + 1), theta, spec, p,
        treatment_times={u: t0 for u in treated},
        effects={u: (lambda t, e=effect: np.full(len(t), e)) for u in treated} if effect else {},
    )
    data = sample_prior(layout, args.seed)
    path = out / "panel.csv"
    with path.open("w", encoding="utf-8", newline="") as fh:
        write_panel(data, fh)
    return [path, reports.write_json(out / "truth.json", {"theta": theta.to_dict(), "treated": treated, "t0": t0,
                                                          "effect": effect, "model": args.model})]


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_fit,
    "validate": cmd_validate,
    "staggered": cmd_staggered,
    "simulate": cmd_simulate,
}


def _config_record(args) -> dict:
    rec = {}
    for k, v in sorted(vars(args).items()):
        rec[k] = str(v) if isinstance(v, Path) else v
    return rec


def run(argv=None) -> int:
    """Execute one CLI invocation and return its exit status."""
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s level=%(levelname)s logger=%(name)s %(message)s",
        stream=sys.stderr,
    )
    start = time.perf_counter()
    timings: dict = {}
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](args, out, timings)
        timings["total_s"] = time.perf_counter() - start
        reports.write_manifest(out, files, _config_record(args), timings)
    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG)
    except PanelDataError as exc:
        return _fail(exc, EXIT_DATA)
    except (NumericalError, PipelineError, np.linalg.LinAlgError) as exc:
        return _fail(exc, EXIT_NUMERIC)
    except ExchGPError as exc:
        return _fail(exc, EXIT_CONFIG)
    log.info("command=%s status=ok files=%d elapsed_s=%.2f", args.command, len(files), timings["total_s"])
    return 0


def _fail(exc: Exception, code: int) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(err), file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

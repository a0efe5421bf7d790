"""
Placebo validation, the staggered one-unit-at-a-time pipeline and accuracy
metrics.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ExchGPError, PanelDataError, PipelineError
from .hyperopt import FitOptions, FitResult, fit
from .model import Inputs, ModelSpec
from .panel import (
    PanelDataset,
    TrainPredSplit,
    design_rows,
    make_split,
    subsample_controls,
    unit_seed,
)
from .predict import (
    Z95,
    ATTSeries,
    EffectSummary,
    GaussianPredictive,
    att_by_time,
    effect_summary,
    posterior_predictive,
)

__all__ = [
    "Metrics",
    "SliceRow",
    "ModelMetrics",
    "ValidationReport",
    "StaggeredConfig",
    "UnitRun",
    "StaggeredResult",
    "choose_fake_time",
    "horizon_cap",
    "training_size",
    "split_design",
    "fit_predict_unit",
    "score",
    "build_report",
    "leave_one_out_validation",
    "staggered_pipeline",
]

log = logging.getLogger(__name__)

FAILURE_LIMIT = 0.2


@dataclass(frozen=True)
class Metrics:
    mape: float
    rmse: float
    bias: float
    coverage: float
    pi_width: float
    n: int
    mape_excluded: int = 0


@dataclass(frozen=True)
class SliceRow:
    key: int
    n: int
    rmse: float
    bias: float
    coverage: float


@dataclass(frozen=True)
class ModelMetrics:
    model: str
    rho: float
    rho_time: float
    mape: float
    rmse: float
    bias: float
    coverage: float
    pi_width: float
    opt_time_s: float
    n_units: int
    n_predictions: int
    n_failures: int
    mape_excluded: int


@dataclass(frozen=True)
class ValidationReport:
    summary: ModelMetrics
    per_horizon: tuple[SliceRow, ...]
    per_time: tuple[SliceRow, ...]
    failures: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class StaggeredConfig:
    M: int = 20
    horizon_fraction: float = 0.5
    validation_fraction: float = 1.0 / 3.0
    unit_sample: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if not 0 < self.horizon_fraction <= 1:
            raise ConfigError("horizon_fraction must lie in (0, 1]")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if self.unit_sample is not None and self.unit_sample < 1:
            raise ConfigError("unit_sample must be >= 1")


@dataclass(frozen=True, eq=False)
class UnitRun:
    """Outcome of one fit-and-predict task for a (pseudo-)treated unit."""

    unit_id: str
    t0: int
    predictive: GaussianPredictive
    observed: np.ndarray
    effects: EffectSummary
    fit: FitResult | None
    n_train: int


@dataclass(frozen=True)
class StaggeredResult:
    runs: tuple[UnitRun, ...]
    att: ATTSeries | None
    report: ValidationReport | None
    failures: tuple[tuple[str, str], ...] = ()
    mode: str = "estimate"


# --------------------------------------------------------------------------
# protocol helpers


def choose_fake_time(pre_times, fraction: float | None = None, fixed: int | None = None) -> int:
    """Placebo treatment time inside an untreated window.

    With ``fraction`` the largest ``t1`` is returned whose post-``t1`` share of
    the window is at least ``fraction``.  With ``fixed`` the value is range
    checked and returned.
    """
    times = np.unique(np.asarray(pre_times, dtype=int))
    if len(times) < 3:
        raise PanelDataError("need at least 3 pre-period time points")
    if (fraction is None) == (fixed is None):
        raise ConfigError("give exactly one of fraction or fixed")
    if fixed is not None:
        t1 = int(fixed)
        if not times[0] <= t1 < times[-1]:
            raise PanelDataError(
                f"fake time {t1} leaves an empty pre or post window in [{times[0]}, {times[-1]}]"
            )
        return t1
    if not 0 < fraction < 1:
        raise ConfigError("fraction must lie in (0, 1)")
    n = len(times)
    for t1 in times[:-1][::-1]:
        if np.sum(times > t1) / n >= fraction - 1e-12:
            return int(t1)
    raise PanelDataError(f"no fake time leaves a post share of {fraction:g} with a pre window")


def horizon_cap(n_pre: int, fraction: float) -> int:
    """Maximum prediction horizon: floor(fraction * n_pre), at least 1."""
    return max(1, int(math.floor(fraction * n_pre + 1e-9)))


def training_size(T0: int, M: int, T: int) -> int:
    """Rows in one subsampled fit: treated pre-period plus M full control series."""
    return int(T0) + int(M) * int(T)


def split_design(data: PanelDataset, split: TrainPredSplit):
    """Inputs and outcomes for the training and prediction rows of a split."""
    u, t, X, y = design_rows(data, split.train_rows)
    up, tp, Xp, yp = design_rows(data, split.pred_rows)
    return Inputs(u, t, X), y, Inputs(up, tp, Xp), yp


def fit_predict_unit(
    data: PanelDataset,
    unit_id: str,
    t0: int,
    horizon: int | None,
    spec: ModelSpec,
    opts: FitOptions,
) -> UnitRun:
    """Fit on the split's training rows and predict the held-out rows."""
    split = make_split(data, unit_id, t0, horizon)
    train, y, pred, y_obs = split_design(data, split)
    res = fit(spec, train, y, opts)
    gp = posterior_predictive(spec, res.theta_hat, train, y, pred)
    return UnitRun(unit_id, int(t0), gp, y_obs, effect_summary(gp, y_obs), res, split.n_train)


# --------------------------------------------------------------------------
# metrics


def score(predictions: Sequence[GaussianPredictive], observed: Sequence) -> Metrics:
    """Accuracy of predictive distributions against observed outcomes.

    MAPE, RMSE and bias are computed per prediction (unit) and averaged;
    coverage and interval width pool every predicted point.  Points with a
    zero observation are left out of MAPE and counted in ``mape_excluded``.
    """
    if len(predictions) != len(observed):
        raise ValueError("predictions and observed vectors must align")
    if not predictions:
        raise ValueError("nothing to score")
    mapes, rmses, biases = [], [], []
    hits = widths = 0.0
    n = excluded = 0
    for gp, y in zip(predictions, observed):
        y = np.asarray(y, dtype=float)
        if y.shape != gp.mean.shape:
            raise ValueError(f"observed vector for {gp.unit_id!r} is misaligned")
        err = gp.mean - y
        rmses.append(float(np.sqrt(np.mean(err**2))))
        biases.append(float(np.mean(err)))
        nz = y != 0
        excluded += int(np.sum(~nz))
        if nz.any():
            mapes.append(float(np.mean(np.abs(err[nz] / y[nz]))))
        half = Z95 * gp.sd
        hits += float(np.sum(np.abs(err) <= half))
        widths += float(np.sum(2 * half))
        n += len(y)
    return Metrics(
        mape=float(np.mean(mapes)) if mapes else float("nan"),
        rmse=float(np.mean(rmses)),
        bias=float(np.mean(biases)),
        coverage=hits / n,
        pi_width=widths / n,
        n=n,
        mape_excluded=excluded,
    )


def _slices(runs: Sequence[UnitRun], key: Callable[[UnitRun, int], int]) -> tuple[SliceRow, ...]:
    groups: dict[int, list[tuple[float, bool]]] = {}
    for r in runs:
        gp = r.predictive
        err = gp.mean - r.observed
        inside = np.abs(err) <= Z95 * gp.sd
        for k in range(len(err)):
            groups.setdefault(key(r, k), []).append((float(err[k]), bool(inside[k])))
    rows = []
    for k in sorted(groups):
        e = np.array([g[0] for g in groups[k]])
        c = np.array([g[1] for g in groups[k]])
        rows.append(SliceRow(int(k), len(e), float(np.sqrt(np.mean(e**2))), float(np.mean(e)), float(np.mean(c))))
    return tuple(rows)


def build_report(
    model: str, runs: Sequence[UnitRun], failures: Sequence[tuple[str, str]] = ()
) -> ValidationReport:
    if not runs:
        raise PipelineError(f"model {model!r}: no successful runs to report")
    m = score([r.predictive for r in runs], [r.observed for r in runs])
    fits = [r.fit for r in runs if r.fit is not None]
    rho = float(np.mean([f.rho for f in fits])) if fits else float("nan")
    rho_t = float(np.mean([f.rho_time for f in fits])) if fits else float("nan")
    t_opt = float(np.mean([f.wall_time_s for f in fits])) if fits else 0.0
    summary = ModelMetrics(
        model, rho, rho_t, m.mape, m.rmse, m.bias, m.coverage, m.pi_width, t_opt,
        len(runs), m.n, len(failures), m.mape_excluded,
    )
    per_h = _slices(runs, lambda r, k: int(r.predictive.times[k]) - r.t0)
    per_t = _slices(runs, lambda r, k: int(r.predictive.times[k]))
    return ValidationReport(summary, per_h, per_t, tuple(failures))


# --------------------------------------------------------------------------
# batch execution


def _execute(tasks, fn, jobs: int):
    """Run ``fn`` over ``tasks``; returns results in task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _guarded(task):
    runner, args = task[0], task[1:]
    try:
        return runner(*args), None
    except (ExchGPError, np.linalg.LinAlgError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _collect(unit_ids, outcomes, limit_check: bool = True):
    runs, failures = [], []
    for uid, (run, err) in zip(unit_ids, outcomes):
        if err is not None:
            log.warning("unit=%s status=failed error=%s", uid, err)
            failures.append((uid, err))
        else:
            runs.append(run)
    if limit_check and unit_ids and len(failures) > FAILURE_LIMIT * len(unit_ids):
        raise PipelineError(
            f"{len(failures)} of {len(unit_ids)} unit runs failed (limit {FAILURE_LIMIT:.0%})"
        )
    return runs, failures


def leave_one_out_validation(
    data: PanelDataset,
    t1: int,
    spec: ModelSpec,
    opts: FitOptions | None = None,
    model_name: str = "model",
    runner: Callable[..., UnitRun] = fit_predict_unit,
    jobs: int = 1,
) -> tuple[ValidationReport, list[UnitRun]]:
    """Treat each unit in turn as pseudo-treated at ``t1`` and score its predictions.

    ``data`` must be restricted to an untreated window.  Failed units are
    skipped and listed in the report.
    """
    opts = opts or FitOptions()
    if data.treated():
        raise PanelDataError("validation window contains treated rows")
    ids = sorted(data.unit_ids)
    tasks = [(runner, data, uid, t1, None, spec, opts) for uid in ids]
    outcomes = _execute(tasks, _guarded, jobs)
    runs, failures = _collect(ids, outcomes, limit_check=False)
    return build_report(model_name, runs, failures), runs


def _staggered_task(task):
    runner, data, uid, cfg, spec, opts, mode = task
    sub = subsample_controls(data, uid, cfg.M, unit_seed(cfg.seed, uid))
    unit = sub.unit(uid)
    T0 = unit.treatment_time
    pre = unit.times <= T0
    if mode == "validate":
        t1 = choose_fake_time(unit.times[pre], fraction=cfg.validation_fraction)
        trimmed = replace(unit.select(pre), treatment_time=None)
        sub = sub.replace_units([trimmed if u.unit_id == uid else u for u in sub.units])
        return runner(sub, uid, t1, None, spec, opts)
    cap = horizon_cap(int(np.sum(pre)), cfg.horizon_fraction)
    return runner(sub, uid, T0, cap, spec, opts)


def staggered_pipeline(
    data: PanelDataset,
    cfg: StaggeredConfig,
    spec: ModelSpec,
    opts: FitOptions | None = None,
    mode: str = "estimate",
    model_name: str = "model",
    runner: Callable[..., UnitRun] = fit_predict_unit,
    jobs: int = 1,
) -> StaggeredResult:
    """One-unit-at-a-time fits for every treated unit with subsampled controls.

    ``mode="validate"`` keeps only each treated unit's pre-period, places a
    placebo time so that ``validation_fraction`` of it is held out, and scores
    the predictions.  ``mode="estimate"`` predicts the real post-period up to
    the horizon cap.  Control draws are seeded per unit, so they do not depend
    on which other units are processed.
    """
    if mode not in ("validate", "estimate"):
        raise ConfigError(f"unknown mode {mode!r}")
    opts = opts or FitOptions()
    pool = [u for u in data.units if u.is_control]
    if len(pool) < cfg.M:
        raise ConfigError(f"M={cfg.M} exceeds the {len(pool)} never-treated units")
    treated = sorted(u.unit_id for u in data.treated())
    if not treated:
        raise PanelDataError("panel has no treated units")
    if cfg.unit_sample is not None and cfg.unit_sample < len(treated):
        rng = np.random.default_rng(cfg.seed)
        treated = sorted(treated[i] for i in rng.choice(len(treated), cfg.unit_sample, replace=False))

    start = time.perf_counter()
    tasks = [(_staggered_task, (runner, data, uid, cfg, spec, opts, mode)) for uid in treated]
    outcomes = _execute(tasks, _guarded, jobs)
    runs, failures = _collect(treated, outcomes)
    log.info(
        "mode=%s units=%d failed=%d elapsed_s=%.2f", mode, len(treated), len(failures),
        time.perf_counter() - start,
    )
    att = att_by_time([r.effects for r in runs]) if runs else None
    report = build_report(model_name, runs, failures) if mode == "validate" else None
    return StaggeredResult(tuple(runs), att, report, tuple(failures), mode)

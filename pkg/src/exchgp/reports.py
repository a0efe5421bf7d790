"""
Tabular (CSV) and JSON renderings of fits, effects, validation and ATT
results, plus the run manifest.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .harness import UnitRun, ValidationReport
from .predict import ATTSeries, EffectSummary, GaussianPredictive

FLOAT_FORMAT = ".10g"


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else format(float(v), FLOAT_FORMAT)
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def write_csv(path: Path, rows: Sequence[Mapping], columns: Sequence[str]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])
    return path


def jsonable(obj):
    """Recursively convert dataclasses, arrays and non-finite floats for JSON."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(asdict(obj))
    if isinstance(obj, Mapping):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path: Path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# --------------------------------------------------------------------------
# row builders


EFFECT_COLUMNS = [
    "unit", "time", "observed", "counterfactual_mean", "counterfactual_sd",
    "effect", "effect_sd", "effect_lo", "effect_hi",
]


def effect_rows(pred: GaussianPredictive, observed, effects: EffectSummary) -> list[dict]:
    sd = pred.sd
    return [
        {
            "unit": pred.unit_id, "time": int(e.time), "observed": float(observed[k]),
            "counterfactual_mean": float(pred.mean[k]), "counterfactual_sd": float(sd[k]),
            "effect": e.mean, "effect_sd": e.sd, "effect_lo": e.lo, "effect_hi": e.hi,
        }
        for k, e in enumerate(effects.per_time)
    ]


AGGREGATE_COLUMNS = [
    "model", "unit", "t0", "n_post", "tau", "tau_lo", "tau_hi",
    "cumulative", "cumulative_lo", "cumulative_hi", "rho", "rho_time", "lml",
]


def aggregate_row(model: str, run: UnitRun) -> dict:
    e = run.effects
    row = {
        "model": model, "unit": run.unit_id, "t0": run.t0, "n_post": len(e.per_time),
        "tau": e.average.estimate, "tau_lo": e.average.lo, "tau_hi": e.average.hi,
        "cumulative": e.cumulative.estimate, "cumulative_lo": e.cumulative.lo,
        "cumulative_hi": e.cumulative.hi,
    }
    if run.fit is not None:
        row.update(rho=run.fit.rho, rho_time=run.fit.rho_time, lml=run.fit.lml)
    return row


VALIDATION_COLUMNS = [
    "model", "rho", "rho_time", "mape", "rmse", "bias", "coverage", "pi_width",
    "n_units", "n_predictions", "n_failures", "mape_excluded",
]


def validation_row(report: ValidationReport, timings: bool = False) -> dict:
    row = asdict(report.summary)
    if not timings:
        row.pop("opt_time_s")
    return row


def slice_rows(model: str, rows, key_name: str) -> list[dict]:
    return [
        {"model": model, key_name: r.key, "n": r.n, "rmse": r.rmse, "bias": r.bias, "coverage": r.coverage}
        for r in rows
    ]


ATT_COLUMNS = ["time", "n", "att", "sd", "lo", "hi"]


def att_rows(att: ATTSeries) -> list[dict]:
    return [
        {"time": w.time, "n": w.n, "att": w.mean, "sd": w.sd, "lo": w.lo, "hi": w.hi}
        for w in att.per_week
    ]


ATT_TOTAL_COLUMNS = [
    "experiment", "model", "total_cumulative", "total_lo", "total_hi",
    "average_weekly", "average_lo", "average_hi", "n_units", "n_weeks", "n_failed",
]


def att_total_row(experiment: str, model: str, att: ATTSeries, n_units: int, n_failed: int) -> dict:
    return {
        "experiment": experiment, "model": model,
        "total_cumulative": att.total_cumulative.estimate,
        "total_lo": att.total_cumulative.lo, "total_hi": att.total_cumulative.hi,
        "average_weekly": att.average_weekly.estimate,
        "average_lo": att.average_weekly.lo, "average_hi": att.average_weekly.hi,
        "n_units": n_units, "n_weeks": len(att.per_week), "n_failed": n_failed,
    }


TRAJECTORY_COLUMNS = ["unit", "time", "segment", "observed", "mean", "lo", "hi"]


# --------------------------------------------------------------------------
# manifest


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    import scipy

    from . import __version__

    return {
        "exchgp": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def write_manifest(out_dir: Path, files: Iterable[Path], config: Mapping, timings: Mapping) -> Path:
    out_dir = Path(out_dir)
    entries = [
        {"name": Path(f).name, "sha256": sha256(f), "bytes": Path(f).stat().st_size}
        for f in sorted(files, key=lambda f: Path(f).name)
    ]
    manifest = {
        "config": config,
        "seed": config.get("seed"),
        "versions": versions(),
        "timings": timings,
        "files": entries,
    }
    return write_json(out_dir / "manifest.json", manifest)

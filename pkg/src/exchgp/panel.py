"""
Panel datasets: ingestion, validation, train/prediction splits and control
subsampling.

A panel is stored in long format, one record per unit holding its own time
grid, outcomes, covariates and (optional) treatment time.  Treatment at
``treatment_time = T0`` means rows with ``t > T0`` are treated.
"""

from __future__ import annotations

import csv
import io
import zlib
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .errors import PanelDataError

__all__ = [
    "UnitRecord",
    "PanelDataset",
    "TrainPredSplit",
    "load_panel",
    "write_panel",
    "make_split",
    "subsample_controls",
    "restrict_window",
    "stable_hash",
    "unit_seed",
    "design_rows",
]

DEFAULT_SCHEMA = {
    "unit": "unit",
    "time": "time",
    "outcome": "outcome",
    "treatment_time": "treatment_time",
}


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class UnitRecord:
    """Time series of one unit.

    Parameters
    ----------
    unit_id : str
    times : array of int, shape (T_i,)
        Strictly increasing time indices.
    outcomes : array of float, shape (T_i,)
    covariates : array of float, shape (T_i, p)
    treatment_time : int or None
        Last untreated time ``T0``; ``None`` for never-treated units.
    """

    unit_id: str
    times: np.ndarray
    outcomes: np.ndarray
    covariates: np.ndarray
    treatment_time: int | None = None

    def __post_init__(self):
        times = _frozen(self.times, np.int64).reshape(-1)
        outcomes = _frozen(self.outcomes, float).reshape(-1)
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1 and cov.size == 0:
            cov = cov.reshape(len(times), 0)
        cov = _frozen(cov, float)
        object.__setattr__(self, "unit_id", str(self.unit_id))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "covariates", cov)

        if len(times) == 0:
            raise PanelDataError(f"unit {self.unit_id!r} has no rows")
        if outcomes.shape != times.shape or cov.ndim != 2 or cov.shape[0] != len(times):
            raise PanelDataError(f"unit {self.unit_id!r}: misaligned times/outcomes/covariates")
        if np.any(np.diff(times) <= 0):
            raise PanelDataError(
                f"unit {self.unit_id!r}: times must be strictly increasing without duplicates"
            )
        if not (np.all(np.isfinite(outcomes)) and np.all(np.isfinite(cov))):
            raise PanelDataError(f"unit {self.unit_id!r}: non-finite outcome or covariate")
        t0 = self.treatment_time
        if t0 is not None:
            t0 = int(t0)
            object.__setattr__(self, "treatment_time", t0)
            if not (times[0] <= t0 < times[-1] + 1):
                raise PanelDataError(
                    f"unit {self.unit_id!r}: treatment_time {t0} outside observed range "
                    f"[{times[0]}, {times[-1]}]"
                )

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def treated_mask(self) -> np.ndarray:
        """w_it: True where the row is post-treatment."""
        if self.treatment_time is None:
            return np.zeros(len(self.times), dtype=bool)
        return self.times > self.treatment_time

    @property
    def is_control(self) -> bool:
        """True when no observed row is treated."""
        return not self.treated_mask.any()

    def select(self, mask) -> "UnitRecord":
        mask = np.asarray(mask, dtype=bool)
        t0 = self.treatment_time
        times = self.times[mask]
        if t0 is not None and len(times) and t0 >= times[-1] + 1:
            t0 = int(times[-1])
        return UnitRecord(self.unit_id, times, self.outcomes[mask], self.covariates[mask], t0)

    def __eq__(self, other):
        if not isinstance(other, UnitRecord):
            return NotImplemented
        return (
            self.unit_id == other.unit_id
            and self.treatment_time == other.treatment_time
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.outcomes, other.outcomes)
            and np.array_equal(self.covariates, other.covariates)
        )

    __hash__ = None


@dataclass(frozen=True)
class PanelDataset:
    """Collection of unit records sharing one covariate layout."""

    units: tuple[UnitRecord, ...]
    covariate_names: tuple[str, ...] = ()
    metadata: Mapping[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        units = tuple(self.units)
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        if not units:
            raise PanelDataError("panel has no units")
        ids = [u.unit_id for u in units]
        if len(set(ids)) != len(ids):
            raise PanelDataError("duplicate unit ids")
        p = len(self.covariate_names)
        for u in units:
            if u.p != p:
                raise PanelDataError(
                    f"unit {u.unit_id!r} has {u.p} covariates, expected {p}"
                )

    @property
    def m(self) -> int:
        return len(self.units)

    @property
    def p(self) -> int:
        return len(self.covariate_names)

    @property
    def unit_ids(self) -> list[str]:
        return [u.unit_id for u in self.units]

    def unit(self, unit_id: str) -> UnitRecord:
        for u in self.units:
            if u.unit_id == unit_id:
                return u
        raise PanelDataError(f"unknown unit {unit_id!r}")

    def controls(self) -> list[UnitRecord]:
        return [u for u in self.units if u.is_control]

    def treated(self) -> list[UnitRecord]:
        return [u for u in self.units if not u.is_control]

    def replace_units(self, units: Iterable[UnitRecord]) -> "PanelDataset":
        return PanelDataset(tuple(units), self.covariate_names, dict(self.metadata))

    def row_count(self) -> int:
        return sum(len(u.times) for u in self.units)


@dataclass(frozen=True)
class TrainPredSplit:
    """Row-index sets for fitting and for counterfactual prediction."""

    treated_unit: str
    t0: int
    train_rows: tuple[tuple[str, int], ...]
    pred_rows: tuple[tuple[str, int], ...]

    @property
    def n_train(self) -> int:
        return len(self.train_rows)

    @property
    def n_pred(self) -> int:
        return len(self.pred_rows)


# --------------------------------------------------------------------------
# CSV ingestion


def _parse_schema(schema: Mapping[str, object] | None) -> dict:
    out = dict(DEFAULT_SCHEMA)
    out["covariates"] = None
    if schema:
        unknown = set(schema) - set(out)
        if unknown:
            raise PanelDataError(f"unknown schema keys: {sorted(unknown)}")
        out.update(schema)
    return out


def _number(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise PanelDataError(f"row {row}, column {column!r}: non-numeric value {text!r}") from None
    if not np.isfinite(value):
        raise PanelDataError(f"row {row}, column {column!r}: non-finite value {text!r}")
    return value


def _integer(text: str, row: int, column: str) -> int:
    value = _number(text, row, column)
    if value != int(value):
        raise PanelDataError(f"row {row}, column {column!r}: expected an integer, got {text!r}")
    return int(value)


def load_panel(source, schema: Mapping[str, object] | None = None) -> PanelDataset:
    """Read a long-format panel CSV.

    Parameters
    ----------
    source : bytes, str path, or binary/text stream
        UTF-8 CSV with a header row.
    schema : mapping, optional
        Maps canonical names (``unit``, ``time``, ``outcome``,
        ``treatment_time``) to column names in the file.  ``covariates`` may
        list covariate columns explicitly; by default every remaining column
        is a covariate.

    Returns
    -------
    PanelDataset
        Units in order of first appearance, rows sorted by time.
    """
    sch = _parse_schema(schema)
    text = _read_text(source)
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise PanelDataError("empty CSV") from None

    for key in ("unit", "time", "outcome"):
        if sch[key] not in header:
            raise PanelDataError(f"missing required column {sch[key]!r}")
    col = {name: i for i, name in enumerate(header)}
    tt_name = sch["treatment_time"]
    has_tt = tt_name in col
    reserved = {sch["unit"], sch["time"], sch["outcome"], tt_name}
    if sch["covariates"] is None:
        cov_names = [h for h in header if h not in reserved]
    else:
        cov_names = list(sch["covariates"])
        for name in cov_names:
            if name not in col:
                raise PanelDataError(f"missing covariate column {name!r}")

    rows: dict[str, list] = {}
    t0s: dict[str, int | None] = {}
    for lineno, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != len(header):
            raise PanelDataError(f"row {lineno}: expected {len(header)} fields, got {len(rec)}")
        uid = rec[col[sch["unit"]]].strip()
        if not uid:
            raise PanelDataError(f"row {lineno}, column {sch['unit']!r}: empty unit id")
        t = _integer(rec[col[sch["time"]]].strip(), lineno, sch["time"])
        y_text = rec[col[sch["outcome"]]].strip()
        if not y_text:
            raise PanelDataError(f"row {lineno}, column {sch['outcome']!r}: missing outcome")
        y = _number(y_text, lineno, sch["outcome"])
        x = [_number(rec[col[c]].strip(), lineno, c) for c in cov_names]
        t0 = None
        if has_tt:
            raw = rec[col[tt_name]].strip()
            t0 = _integer(raw, lineno, tt_name) if raw else None
        if uid in t0s and t0s[uid] != t0:
            raise PanelDataError(f"row {lineno}: inconsistent treatment_time for unit {uid!r}")
        t0s[uid] = t0
        rows.setdefault(uid, []).append((t, y, x))

    units = []
    for uid, recs in rows.items():
        recs.sort(key=lambda r: r[0])
        times = [r[0] for r in recs]
        if len(set(times)) != len(times):
            dup = next(t for t in times if times.count(t) > 1)
            raise PanelDataError(f"duplicate (unit, time) pair ({uid!r}, {dup})")
        cov = np.array([r[2] for r in recs], dtype=float).reshape(len(recs), len(cov_names))
        units.append(UnitRecord(uid, times, [r[1] for r in recs], cov, t0s[uid]))
    if not units:
        raise PanelDataError("CSV has no data rows")
    return PanelDataset(tuple(units), tuple(cov_names))


def _read_text(source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8-sig")
    if isinstance(source, str):
        with open(source, encoding="utf-8-sig", newline="") as fh:
            return fh.read()
    if hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8-sig", newline="") as fh:
            return fh.read()
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8-sig")
    return data


def write_panel(data: PanelDataset, sink: IO[str] | None = None) -> str:
    """Write ``data`` in the canonical CSV layout; returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["unit", "time", "outcome", *data.covariate_names, "treatment_time"])
    for u in data.units:
        t0 = "" if u.treatment_time is None else str(u.treatment_time)
        for k in range(len(u.times)):
            w.writerow(
                [u.unit_id, int(u.times[k]), repr(float(u.outcomes[k])),
                 *(repr(float(v)) for v in u.covariates[k]), t0]
            )
    text = buf.getvalue()
    if sink is not None:
        sink.write(text)
    return text


# --------------------------------------------------------------------------
# splits and subsampling


def make_split(
    data: PanelDataset, treated_unit: str, t0: int, horizon: int | None = None
) -> TrainPredSplit:
    """Training rows (controls + treated pre-period) and prediction rows.

    Prediction rows are the treated unit's rows with ``t0 < t <= t0 + horizon``
    (all remaining rows when ``horizon`` is None).  Other units with treated
    rows are left out entirely.
    """
    unit = data.unit(treated_unit)
    t0 = int(t0)
    if not (unit.times[0] <= t0 <= unit.times[-1]):
        raise PanelDataError(f"t0={t0} outside the observed times of unit {treated_unit!r}")
    pre = unit.times <= t0
    post = unit.times > t0
    if horizon is not None:
        if horizon < 1:
            raise PanelDataError("horizon must be >= 1")
        post &= unit.times <= t0 + horizon
    if not pre.any():
        raise PanelDataError(f"unit {treated_unit!r} has no pre-period rows")
    if not post.any():
        raise PanelDataError(f"empty prediction window for unit {treated_unit!r}")

    train = []
    for u in data.units:
        if u.unit_id == treated_unit or not u.is_control:
            continue
        train.extend((u.unit_id, int(t)) for t in u.times)
    train.extend((treated_unit, int(t)) for t in unit.times[pre])
    pred = tuple((treated_unit, int(t)) for t in unit.times[post])
    return TrainPredSplit(treated_unit, t0, tuple(train), pred)


def stable_hash(unit_id: str) -> int:
    """Platform-independent 32-bit hash of a unit id."""
    return zlib.crc32(str(unit_id).encode("utf-8"))


def unit_seed(seed: int, unit_id: str) -> int:
    return (int(seed) ^ stable_hash(unit_id)) & 0xFFFFFFFFFFFFFFFF


def subsample_controls(data: PanelDataset, treated_unit: str, M: int, seed: int) -> PanelDataset:
    """Keep ``treated_unit`` plus ``M`` never-treated units drawn without replacement."""
    data.unit(treated_unit)
    pool = sorted(u.unit_id for u in data.units if u.is_control and u.unit_id != treated_unit)
    if M < 1:
        raise PanelDataError("M must be >= 1")
    if M > len(pool):
        raise PanelDataError(f"M={M} exceeds the pool of {len(pool)} never-treated units")
    rng = np.random.default_rng(seed)
    chosen = set(pool[i] for i in rng.choice(len(pool), size=M, replace=False))
    chosen.add(treated_unit)
    keep = sorted((u for u in data.units if u.unit_id in chosen), key=lambda u: u.unit_id)
    return data.replace_units(keep)


def restrict_window(data: PanelDataset, t_min: int | None = None, t_max: int | None = None) -> PanelDataset:
    """Drop rows outside ``[t_min, t_max]``; units left without rows are removed.

    Treatment times past the window's end are clipped, which marks such units
    as untreated inside the window.
    """
    out = []
    for u in data.units:
        mask = np.ones(len(u.times), dtype=bool)
        if t_min is not None:
            mask &= u.times >= t_min
        if t_max is not None:
            mask &= u.times <= t_max
        if not mask.any():
            continue
        if u.treatment_time is not None and u.treatment_time < u.times[mask][0]:
            # treated before the window starts: nothing untreated left
            continue
        out.append(u.select(mask))
    return data.replace_units(out)


def design_rows(data: PanelDataset, rows: Sequence[tuple[str, int]]):
    """Gather (unit ids, times, covariates, outcomes) for a list of rows."""
    lookup = {}
    for u in data.units:
        index = {int(t): k for k, t in enumerate(u.times)}
        lookup[u.unit_id] = (u, index)
    ids, times, X, y = [], [], [], []
    for uid, t in rows:
        u, index = lookup[uid]
        k = index[int(t)]
        ids.append(uid)
        times.append(float(t))
        X.append(u.covariates[k])
        y.append(u.outcomes[k])
    X = np.array(X, dtype=float).reshape(len(rows), data.p)
    return ids, np.array(times, dtype=float), X, np.array(y, dtype=float)

"""
Type-II maximum likelihood for exchangeable GP hyperparameters.

Outcomes and covariates are z-scored on the training rows before
optimization.  The fitted parameters are mapped back so that they act on the
raw data directly: variances are rescaled, the outcome mean becomes the prior
mean and the covariate standard deviations become ``x_scale``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize as so

from .errors import FitError, NumericalError
from .model import (
    VARIANCE_FLOOR,
    HyperParams,
    Inputs,
    ModelSpec,
    ParamLayout,
    lml_and_gradient,
    log_marginal_likelihood,
)

__all__ = ["FitOptions", "FitResult", "fit", "intraclass_rho", "initial_params"]

log = logging.getLogger(__name__)

_LOG_FLOOR = np.log(VARIANCE_FLOOR)
_LOG_VAR_MAX = np.log(1e4)
_LOG_ELL_MIN = np.log(1e-3)
_LOG_ELL_MAX = np.log(1e5)


@dataclass(frozen=True)
class FitOptions:
    restarts: int = 3
    max_iters: int = 1000
    tol: float = 1e-6
    seed: int = 0
    perturb_sd: float = 0.5


@dataclass(frozen=True)
class FitResult:
    theta_hat: HyperParams
    lml: float
    iterations: int
    converged: bool
    wall_time_s: float
    rho: float
    rho_time: float
    restart_lml: tuple[float, ...] = ()
    n_failed_restarts: int = 0
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.to_dict(),
            "lml": self.lml,
            "iterations": self.iterations,
            "converged": self.converged,
            "rho": self.rho,
            "rho_time": self.rho_time,
            "restart_lml": list(self.restart_lml),
            "n_failed_restarts": self.n_failed_restarts,
            "notes": dict(self.notes),
        }


def intraclass_rho(theta: HyperParams, part: str = "total") -> float:
    """Share of latent variance that is unit specific.

    ``part="total"`` counts both deviation components in the numerator,
    ``part="time"`` only the time deviation.
    """
    if part == "total":
        sg = theta.sigma_g1_2 + theta.sigma_g2_2
    elif part == "time":
        sg = theta.sigma_g1_2
    else:
        raise ValueError(f"unknown part {part!r}")
    denom = theta.sigma_mu2 + sg
    if not denom > 0:
        raise ValueError("intraclass correlation undefined: zero total variance")
    return float(sg / denom)


@dataclass(frozen=True)
class _Scaling:
    y_mean: float
    y_scale: float
    x_mean: np.ndarray
    x_scale: np.ndarray


def _scaling(rows: Inputs, y: np.ndarray) -> _Scaling:
    ys = float(np.std(y))
    xs = np.std(rows.X, axis=0) if rows.p else np.zeros(0)
    xs = np.where(xs > 0, xs, 1.0)
    return _Scaling(
        float(np.mean(y)), ys if ys > 0 else 1.0,
        np.mean(rows.X, axis=0) if rows.p else np.zeros(0), xs,
    )


def initial_params(spec: ModelSpec, rows: Inputs, y) -> HyperParams:
    """Conventional starting point on standardized data."""
    y = np.asarray(y, dtype=float)
    var_y = float(np.var(y)) if len(y) > 1 else 1.0
    var_y = max(var_y, VARIANCE_FLOOR)
    omega = {}
    for u in sorted(set(rows.units)):
        yu = y[rows.units == u]
        vu = float(np.var(yu)) if len(yu) > 1 else 0.0
        omega[u] = max(0.1 * (vu if vu > 0 else var_y), VARIANCE_FLOOR)
    trange = float(np.ptp(rows.times)) if len(rows.times) else 0.0
    p = rows.p
    unit_dims = spec.unit_dims(p)
    sd = np.std(rows.X, axis=0) if p else np.zeros(0)
    sd = np.where(sd > 0, sd, 1.0)
    n_ell = spec.n_ell_x(p)
    if n_ell == 0:
        ell_x = ()
    elif n_ell == len(unit_dims) and n_ell > 1:
        ell_x = tuple(sd[unit_dims])
    else:
        ell_x = (float(np.mean(sd[unit_dims])),)
    shared = sorted(spec.shared_covariate_dims)
    return HyperParams(
        sigma_mu2=0.5 * var_y,
        sigma_g1_2=0.5 * var_y,
        sigma_g2_2=0.5 * var_y if spec.use_unit_covariates else 0.0,
        ell_time=trange / 4 if trange > 0 else 1.0,
        ell_x=ell_x,
        omega2=omega,
        ell_shared=float(np.mean(sd[shared])) if shared else None,
    )


def _bounds(layout: ParamLayout):
    out = []
    for name in layout.names:
        if name.startswith(("sigma", "omega")):
            out.append((_LOG_FLOOR, _LOG_VAR_MAX))
        else:
            out.append((_LOG_ELL_MIN, _LOG_ELL_MAX))
    return out


def _to_raw(theta: HyperParams, sc: _Scaling, spec: ModelSpec, p: int) -> HyperParams:
    s2 = sc.y_scale ** 2
    return replace(
        theta,
        sigma_mu2=theta.sigma_mu2 * s2,
        sigma_g1_2=theta.sigma_g1_2 * s2,
        sigma_g2_2=theta.sigma_g2_2 * s2,
        omega2={u: w * s2 for u, w in theta.omega2.items()},
        mean=sc.y_mean,
        x_scale=tuple(float(v) for v in sc.x_scale) if p else None,
    )


def fit(spec: ModelSpec, rows: Inputs, y, opts: FitOptions | None = None) -> FitResult:
    """Maximize the log marginal likelihood over the hyperparameters.

    Parameters
    ----------
    spec : ModelSpec
    rows : Inputs
        Training rows.
    y : array, shape (n,)
        Training outcomes in raw units.
    opts : FitOptions

    Returns
    -------
    FitResult
        Best of ``opts.restarts`` L-BFGS-B runs; ties go to the earlier restart.
        ``theta_hat`` acts on raw outcomes and covariates.
    """
    opts = opts or FitOptions()
    y = np.asarray(y, dtype=float)
    if len(rows) < 2:
        raise FitError("need at least 2 training rows")
    if y.shape != (len(rows),):
        raise ValueError("y must align with rows")
    spec.check(rows.p)
    start = time.perf_counter()

    sc = _scaling(rows, y)
    z = (y - sc.y_mean) / sc.y_scale
    Xz = (rows.X - sc.x_mean) / sc.x_scale if rows.p else rows.X
    zrows = Inputs(rows.units, rows.times, Xz)
    layout = ParamLayout(spec, rows.p, rows.units)
    theta0 = initial_params(spec, zrows, z)
    bounds = _bounds(layout)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    v0 = np.clip(layout.to_vector(theta0), lo, hi)

    rng = np.random.default_rng(opts.seed)
    starts = [v0]
    for _ in range(max(opts.restarts, 1) - 1):
        starts.append(np.clip(v0 + rng.normal(0.0, opts.perturb_sd, size=len(v0)), lo, hi))

    def objective(v):
        theta = layout.from_vector(v, theta0)
        f, g = lml_and_gradient(spec, theta, zrows, z, layout)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            raise NumericalError(f"non-finite objective at {theta}")
        return -f, -g

    best = None
    restart_lml = []
    failures = 0
    last_error = None
    for k, vs in enumerate(starts):
        try:
            res = so.minimize(
                objective, vs, jac=True, method="L-BFGS-B", bounds=bounds,
                options={"maxiter": opts.max_iters, "ftol": opts.tol, "gtol": opts.tol},
            )
            f0 = -objective(vs)[0]
        except NumericalError as exc:
            failures += 1
            last_error = exc
            log.warning("restart=%d status=failed error=%s", k, exc)
            restart_lml.append(float("nan"))
            continue
        val = -float(res.fun)
        x = res.x
        if f0 > val:
            # never accept a result worse than its own starting point
            val, x = f0, vs
        # report on the raw scale: log N(y) = log N(z) - n log(s)
        restart_lml.append(val - len(y) * np.log(sc.y_scale))
        log.debug("restart=%d lml=%.6f nit=%d success=%s", k, val, res.nit, res.success)
        if best is None or val > best[0]:
            best = (val, x, int(res.nit), bool(res.success))

    if best is None:
        raise FitError(f"all {len(starts)} restarts failed; last error: {last_error}")

    _, x, nit, ok = best
    theta_z = layout.from_vector(x, theta0)
    theta_hat = _to_raw(theta_z, sc, spec, rows.p)
    lml = log_marginal_likelihood(spec, theta_hat, rows, y)
    wall = time.perf_counter() - start
    notes = {}
    if spec.use_unit_covariates:
        notes["rho_definition"] = (
            "rho counts both deviation variances; rho_time counts only the time deviation"
        )
    return FitResult(
        theta_hat=theta_hat,
        lml=lml,
        iterations=nit,
        converged=ok,
        wall_time_s=wall,
        rho=intraclass_rho(theta_hat, "total"),
        rho_time=intraclass_rho(theta_hat, "time"),
        restart_lml=tuple(restart_lml),
        n_failed_restarts=failures,
        notes=notes,
    )

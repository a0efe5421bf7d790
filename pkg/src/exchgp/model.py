"""
Exchangeable multi-task GP covariance, marginal likelihood and gradient.

Every unit's latent path is a shared mean process plus its own deviation::

    Cov(f_i(t), f_j(s)) = s_mu2 * [k_time(t, s) + k_shared(x_t, x_s)]
                        + 1{i = j} * [s_g1 * k_time(t, s) + s_g2 * k_x(x_it, x_js)]

and y_it = mean + f_i(t) + eps_it with eps_it ~ N(0, omega2_i).  The shared
covariate term is only present when the ModelSpec flags shared covariate columns.

The likelihood is evaluated exactly through the low-rank-plus-block-diagonal
structure of Sigma = D + U C U^T, where D holds the per-unit deviation and
noise blocks and C the shared process on its distinct inputs.  A plain dense
Cholesky route is kept (``method="dense"``) for checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as sl

from . import kernels
from .errors import ConfigError, NumericalError
from .kernels import KernelKind, KernelSpec

__all__ = [
    "TimeKernel",
    "CovariateKernel",
    "ModelSpec",
    "HyperParams",
    "Inputs",
    "PRESETS",
    "preset",
    "ParamLayout",
    "assemble_cov",
    "cross_cov",
    "noise_diag",
    "factorize",
    "log_marginal_likelihood",
    "lml_gradient",
    "lml_and_gradient",
    "VARIANCE_FLOOR",
]

VARIANCE_FLOOR = 1e-6
_JITTER_START = 1e-8
_JITTER_MAX = 1e-4
_LOG2PI = math.log(2.0 * math.pi)


class TimeKernel(str, Enum):
    OU = "OU"
    RBF = "RBF"


class CovariateKernel(str, Enum):
    RBF = "RBF"
    RBF_ARD = "RBF_ARD"


@dataclass(frozen=True)
class ModelSpec:
    """Kernel configuration of an exchangeable GP.

    ``shared_covariate_dims`` are 0-based covariate columns fed to the shared
    mean process.  The unit-level covariate kernel sees the remaining columns.
    """

    time_kernel: TimeKernel = TimeKernel.OU
    use_unit_covariates: bool = False
    covariate_kernel: CovariateKernel = CovariateKernel.RBF
    shared_covariate_dims: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "time_kernel", TimeKernel(self.time_kernel))
        object.__setattr__(self, "covariate_kernel", CovariateKernel(self.covariate_kernel))
        object.__setattr__(
            self, "shared_covariate_dims", frozenset(int(d) for d in self.shared_covariate_dims)
        )

    def unit_dims(self, p: int) -> list[int]:
        return [d for d in range(p) if d not in self.shared_covariate_dims]

    @property
    def has_shared(self) -> bool:
        return bool(self.shared_covariate_dims)

    def check(self, p: int) -> None:
        bad = [d for d in self.shared_covariate_dims if not 0 <= d < p]
        if bad:
            raise ConfigError(f"shared covariate dims {bad} out of range for p={p}")
        if self.use_unit_covariates and not self.unit_dims(p):
            raise ConfigError("unit covariates requested but no non-shared covariate columns")

    def n_ell_x(self, p: int) -> int:
        if not self.use_unit_covariates:
            return 0
        return len(self.unit_dims(p)) if self.covariate_kernel == CovariateKernel.RBF_ARD else 1

    def with_shared(self, dims) -> "ModelSpec":
        return replace(self, shared_covariate_dims=frozenset(dims))


PRESETS: dict[str, ModelSpec] = {
    "ou-time": ModelSpec(TimeKernel.OU),
    "rbf-time": ModelSpec(TimeKernel.RBF),
    "ou-time-cov": ModelSpec(TimeKernel.OU, True, CovariateKernel.RBF),
    "rbf-time-cov": ModelSpec(TimeKernel.RBF, True, CovariateKernel.RBF),
    "ou-time-rbf-cov-ard": ModelSpec(TimeKernel.OU, True, CovariateKernel.RBF_ARD),
    "rbf-time-cov-ard": ModelSpec(TimeKernel.RBF, True, CovariateKernel.RBF_ARD),
}


def preset(name: str, shared_dims: Sequence[int] = ()) -> ModelSpec:
    try:
        spec = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}") from None
    return spec.with_shared(shared_dims)


@dataclass(frozen=True)
class HyperParams:
    """Hyperparameters of an exchangeable GP.

    ``mean`` is a constant prior mean and ``x_scale`` divides covariate
    columns before any covariate kernel is applied; both are fixed during
    optimization.  ``ell_shared`` is the lengthscale of the shared covariate
    kernel and is only used when shared dims are configured.
    """

    sigma_mu2: float
    sigma_g1_2: float
    sigma_g2_2: float = 0.0
    ell_time: float = 1.0
    ell_x: tuple[float, ...] = ()
    omega2: Mapping[str, float] = field(default_factory=dict)
    ell_shared: float | None = None
    mean: float = 0.0
    x_scale: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "ell_x", tuple(float(v) for v in np.atleast_1d(self.ell_x)))
        object.__setattr__(self, "omega2", {str(k): float(v) for k, v in self.omega2.items()})
        if self.x_scale is not None:
            object.__setattr__(self, "x_scale", tuple(float(v) for v in self.x_scale))
        for name in ("sigma_mu2", "sigma_g1_2", "sigma_g2_2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be a finite non-negative number, got {v}")
        if not self.ell_time > 0 or not all(v > 0 for v in self.ell_x):
            raise ValueError("lengthscales must be positive")
        if self.ell_shared is not None and not self.ell_shared > 0:
            raise ValueError("ell_shared must be positive")
        if not all(v > 0 for v in self.omega2.values()):
            raise ValueError("noise variances must be positive")

    def omega_for(self, unit_id: str) -> float:
        try:
            return self.omega2[unit_id]
        except KeyError:
            raise ConfigError(f"no noise variance for unit {unit_id!r}") from None

    def to_dict(self) -> dict:
        return {
            "sigma_mu2": self.sigma_mu2,
            "sigma_g1_2": self.sigma_g1_2,
            "sigma_g2_2": self.sigma_g2_2,
            "ell_time": self.ell_time,
            "ell_x": list(self.ell_x),
            "ell_shared": self.ell_shared,
            "omega2": dict(sorted(self.omega2.items())),
            "mean": self.mean,
            "x_scale": None if self.x_scale is None else list(self.x_scale),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "HyperParams":
        return cls(
            sigma_mu2=d["sigma_mu2"],
            sigma_g1_2=d["sigma_g1_2"],
            sigma_g2_2=d.get("sigma_g2_2", 0.0),
            ell_time=d["ell_time"],
            ell_x=tuple(d.get("ell_x", ())),
            omega2=d.get("omega2", {}),
            ell_shared=d.get("ell_shared"),
            mean=d.get("mean", 0.0),
            x_scale=d.get("x_scale"),
        )


@dataclass(frozen=True, eq=False)
class Inputs:
    """Stacked rows: unit id, time and covariates per observation."""

    units: np.ndarray
    times: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        units = np.asarray([str(u) for u in self.units], dtype=object)
        times = np.asarray(self.times, dtype=float).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(len(times), -1) if X.size else np.zeros((len(times), 0))
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "X", X)
        if not (len(units) == len(times) == X.shape[0]):
            raise ValueError("units, times and X must have the same number of rows")

    def __len__(self):
        return len(self.times)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def take(self, idx) -> "Inputs":
        idx = np.asarray(idx)
        return Inputs(self.units[idx], self.times[idx], self.X[idx])

    @classmethod
    def concat(cls, a: "Inputs", b: "Inputs") -> "Inputs":
        return cls(
            np.concatenate([a.units, b.units]),
            np.concatenate([a.times, b.times]),
            np.vstack([a.X, b.X]),
        )


# --------------------------------------------------------------------------
# kernels of the model


def _time_kspec(spec: ModelSpec, theta: HyperParams) -> KernelSpec:
    kind = KernelKind.OU_TIME if spec.time_kernel == TimeKernel.OU else KernelKind.RBF_TIME
    return KernelSpec(kind, (theta.ell_time,))


def _unit_kspec(spec: ModelSpec, theta: HyperParams, p: int) -> KernelSpec:
    expected = spec.n_ell_x(p)
    if len(theta.ell_x) != expected:
        raise ConfigError(f"ell_x has {len(theta.ell_x)} entries, model needs {expected}")
    kind = KernelKind.RBF_COV_ARD if spec.covariate_kernel == CovariateKernel.RBF_ARD else KernelKind.RBF_COV
    return KernelSpec(kind, theta.ell_x)


def _shared_kspec(theta: HyperParams) -> KernelSpec:
    if theta.ell_shared is None:
        raise ConfigError("shared covariate dims configured but ell_shared is missing")
    return KernelSpec(KernelKind.RBF_COV, (theta.ell_shared,))


def _scaled_X(theta: HyperParams, X: np.ndarray) -> np.ndarray:
    if theta.x_scale is None:
        return X
    if len(theta.x_scale) != X.shape[1]:
        raise ConfigError("x_scale length does not match the covariate dimension")
    return X / np.asarray(theta.x_scale)


def _split_X(spec: ModelSpec, theta: HyperParams, X: np.ndarray):
    Xs = _scaled_X(theta, X)
    p = X.shape[1]
    shared = sorted(spec.shared_covariate_dims)
    return Xs[:, spec.unit_dims(p)], Xs[:, shared]


def _mu_kernel(spec, theta, tA, sA, tB, sB) -> np.ndarray:
    K = kernels.gram(_time_kspec(spec, theta), tA, tB)
    if spec.has_shared:
        K = K + kernels.gram(_shared_kspec(theta), sA, sB)
    return K


def _cov_between(spec: ModelSpec, theta: HyperParams, A: Inputs, B: Inputs) -> np.ndarray:
    spec.check(A.p)
    uA, sA = _split_X(spec, theta, A.X)
    uB, sB = _split_X(spec, theta, B.X)
    Kt = kernels.gram(_time_kspec(spec, theta), A.times, B.times)
    same = A.units[:, None] == B.units[None, :]
    K = theta.sigma_mu2 * Kt
    if spec.has_shared:
        K = K + theta.sigma_mu2 * kernels.gram(_shared_kspec(theta), sA, sB)
    dev = theta.sigma_g1_2 * Kt
    if spec.use_unit_covariates:
        dev = dev + theta.sigma_g2_2 * kernels.gram(_unit_kspec(spec, theta, A.p), uA, uB)
    return K + np.where(same, dev, 0.0)


def assemble_cov(spec: ModelSpec, theta: HyperParams, rows: Inputs) -> np.ndarray:
    """Latent covariance Cov(f) over the stacked rows (no noise)."""
    if len(rows) == 0:
        raise ValueError("rows must be non-empty")
    K = _cov_between(spec, theta, rows, rows)
    return 0.5 * (K + K.T)


def cross_cov(spec: ModelSpec, theta: HyperParams, train: Inputs, pred: Inputs) -> np.ndarray:
    """Latent covariance between training rows and prediction rows."""
    if len(set(pred.units)) > 1:
        raise ValueError("prediction rows must all belong to one unit")
    return _cov_between(spec, theta, train, pred)


def noise_diag(theta: HyperParams, rows: Inputs) -> np.ndarray:
    return np.array([theta.omega_for(u) for u in rows.units], dtype=float)


# --------------------------------------------------------------------------
# factorization


def _cholesky(A: np.ndarray, what: str = "covariance") -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, escalating diagonal jitter on failure."""
    try:
        return sl.cholesky(A, lower=True, check_finite=True), 0.0
    except (sl.LinAlgError, ValueError) as exc:
        if not np.all(np.isfinite(A)):
            raise NumericalError(f"{what} matrix has non-finite entries") from exc
    scale = float(np.mean(np.diag(A)))
    if not scale > 0:
        scale = 1.0
    jitter = _JITTER_START
    while jitter <= _JITTER_MAX * (1 + 1e-12):
        try:
            return sl.cholesky(A + jitter * scale * np.eye(len(A)), lower=True), jitter * scale
        except sl.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        f"{what} matrix ({len(A)}x{len(A)}) is not positive definite even with "
        f"jitter {_JITTER_MAX:g} x mean diagonal"
    )


class ExchangeableFactor:
    """Exact factorization of Sigma = D + U C U^T for a set of training rows.

    D is block diagonal over units (deviation kernels plus noise) and C is
    the shared-process covariance on the distinct shared inputs; U maps rows
    to those inputs.
    """

    def __init__(self, spec: ModelSpec, theta: HyperParams, rows: Inputs):
        if len(rows) == 0:
            raise ValueError("rows must be non-empty")
        spec.check(rows.p)
        self.spec, self.theta, self.rows = spec, theta, rows
        n = len(rows)
        self.n = n
        Xu, Xs = _split_X(spec, theta, rows.X)
        self._Xu = Xu

        # distinct inputs of the shared process
        key = np.column_stack([rows.times, Xs])
        self.Z_mu, self.mu_idx = np.unique(key, axis=0, return_inverse=True)
        self.mu_idx = np.asarray(self.mu_idx).reshape(-1)
        self.G = len(self.Z_mu)
        t_mu, s_mu = self.Z_mu[:, 0], self.Z_mu[:, 1:]
        self.K_mu = _mu_kernel(spec, theta, t_mu, s_mu, t_mu, s_mu)
        self.C = theta.sigma_mu2 * self.K_mu

        # per-unit blocks
        self.unit_ids = sorted(set(rows.units))
        self.blocks = []
        tk = _time_kspec(spec, theta)
        uk = _unit_kspec(spec, theta, rows.p) if spec.use_unit_covariates else None
        W = np.zeros((self.G, self.G))
        logdet = 0.0
        for uid in self.unit_ids:
            idx = np.flatnonzero(rows.units == uid)
            Kt = kernels.gram(tk, rows.times[idx], rows.times[idx])
            A = theta.sigma_g1_2 * Kt
            Kx = None
            if uk is not None:
                Kx = kernels.gram(uk, Xu[idx], Xu[idx])
                A = A + theta.sigma_g2_2 * Kx
            w2 = theta.omega_for(uid)
            A = A + w2 * np.eye(len(idx))
            L, _ = _cholesky(A, f"unit {uid!r} block")
            Ainv = sl.cho_solve((L, True), np.eye(len(idx)))
            Ainv = 0.5 * (Ainv + Ainv.T)
            mi = self.mu_idx[idx]
            W[np.ix_(mi, mi)] += Ainv
            logdet += 2.0 * np.sum(np.log(np.diag(L)))
            self.blocks.append(_Block(uid, idx, mi, Kt, Kx, w2, L, Ainv))

        self.W = W
        if theta.sigma_mu2 > 0:
            LW, _ = _cholesky(W, "shared precision")
            E = LW.T @ self.C
            B = np.eye(self.G) + E @ LW
            LB, _ = _cholesky(0.5 * (B + B.T), "capacitance")
            logdet += 2.0 * np.sum(np.log(np.diag(LB)))
            H = self.C - E.T @ sl.cho_solve((LB, True), E)
            self.H = 0.5 * (H + H.T)
        else:
            self.H = np.zeros((self.G, self.G))
        self.logdet = float(logdet)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Sigma^{-1} b for a vector or matrix ``b``."""
        b = np.asarray(b, dtype=float)
        vec = b.ndim == 1
        B = b[:, None] if vec else b
        z = np.empty_like(B)
        for blk in self.blocks:
            z[blk.idx] = sl.cho_solve((blk.L, True), B[blk.idx])
        u = np.zeros((self.G, B.shape[1]))
        np.add.at(u, self.mu_idx, z)
        v = (self.H @ u)[self.mu_idx]
        out = z.copy()
        for blk in self.blocks:
            out[blk.idx] -= sl.cho_solve((blk.L, True), v[blk.idx])
        return out[:, 0] if vec else out

    def inv_diag_block(self, blk: "_Block") -> np.ndarray:
        """Diagonal block of Sigma^{-1} belonging to one unit."""
        Hb = self.H[np.ix_(blk.mu, blk.mu)]
        S = blk.Ainv - blk.Ainv @ Hb @ blk.Ainv
        return 0.5 * (S + S.T)

    def shared_precision(self) -> np.ndarray:
        """U^T Sigma^{-1} U."""
        P = self.W - self.W @ self.H @ self.W
        return 0.5 * (P + P.T)

    def lml(self, r: np.ndarray) -> float:
        alpha = self.solve(r)
        return float(-0.5 * r @ alpha - 0.5 * self.logdet - 0.5 * self.n * _LOG2PI)


@dataclass
class _Block:
    uid: str
    idx: np.ndarray
    mu: np.ndarray
    Kt: np.ndarray
    Kx: np.ndarray | None
    omega2: float
    L: np.ndarray
    Ainv: np.ndarray


def factorize(spec: ModelSpec, theta: HyperParams, rows: Inputs) -> ExchangeableFactor:
    return ExchangeableFactor(spec, theta, rows)


# --------------------------------------------------------------------------
# parameter vector


class ParamLayout:
    """Log-space parameter vector used by the optimizer and the gradient.

    Order: sigma_mu2, sigma_g1_2, [sigma_g2_2], ell_time, [ell_x...],
    [ell_shared], omega2[u] for each unit (sorted by id).
    """

    def __init__(self, spec: ModelSpec, p: int, units: Sequence[str]):
        self.spec = spec
        self.p = p
        self.units = sorted(set(str(u) for u in units))
        names = ["sigma_mu2", "sigma_g1_2"]
        if spec.use_unit_covariates:
            names.append("sigma_g2_2")
        names.append("ell_time")
        names += [f"ell_x[{j}]" for j in range(spec.n_ell_x(p))]
        if spec.has_shared:
            names.append("ell_shared")
        names += [f"omega2[{u}]" for u in self.units]
        self.names = names

    def __len__(self):
        return len(self.names)

    @property
    def variance_mask(self) -> np.ndarray:
        return np.array([n.startswith(("sigma", "omega")) for n in self.names])

    def to_vector(self, theta: HyperParams) -> np.ndarray:
        vals = [theta.sigma_mu2, theta.sigma_g1_2]
        if self.spec.use_unit_covariates:
            vals.append(theta.sigma_g2_2)
        vals.append(theta.ell_time)
        vals += list(theta.ell_x)
        if self.spec.has_shared:
            vals.append(theta.ell_shared)
        vals += [theta.omega_for(u) for u in self.units]
        vals = np.asarray(vals, dtype=float)
        if np.any(vals <= 0):
            bad = [n for n, v in zip(self.names, vals) if v <= 0]
            raise ValueError(f"log parameterization needs positive values: {bad}")
        return np.log(vals)

    def from_vector(self, v: np.ndarray, template: HyperParams) -> HyperParams:
        e = np.exp(np.asarray(v, dtype=float))
        k = 0
        kw = {"sigma_mu2": e[0], "sigma_g1_2": e[1]}
        k = 2
        if self.spec.use_unit_covariates:
            kw["sigma_g2_2"] = e[k]
            k += 1
        else:
            kw["sigma_g2_2"] = 0.0
        kw["ell_time"] = e[k]
        k += 1
        nx = self.spec.n_ell_x(self.p)
        kw["ell_x"] = tuple(e[k:k + nx])
        k += nx
        if self.spec.has_shared:
            kw["ell_shared"] = e[k]
            k += 1
        omega = dict(template.omega2)
        omega.update({u: float(x) for u, x in zip(self.units, e[k:])})
        kw["omega2"] = omega
        return replace(template, **{key: (float(val) if np.isscalar(val) else val) for key, val in kw.items()})


# --------------------------------------------------------------------------
# likelihood


def _dense_lml(spec, theta, rows, y) -> float:
    Sigma = assemble_cov(spec, theta, rows) + np.diag(noise_diag(theta, rows))
    L, _ = _cholesky(Sigma)
    r = y - theta.mean
    a = sl.solve_triangular(L, r, lower=True)
    return float(-0.5 * a @ a - np.sum(np.log(np.diag(L))) - 0.5 * len(r) * _LOG2PI)


def log_marginal_likelihood(
    spec: ModelSpec, theta: HyperParams, rows: Inputs, y, method: str = "structured"
) -> float:
    """log N(y | mean, K_f + Omega).

    ``method="dense"`` factorizes the full n x n matrix; the default exploits
    the shared-plus-block structure and gives the same value.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (len(rows),):
        raise ValueError(f"y has shape {y.shape}, expected ({len(rows)},)")
    if method == "dense":
        value = _dense_lml(spec, theta, rows, y)
    elif method == "structured":
        value = factorize(spec, theta, rows).lml(y - theta.mean)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.isfinite(value):
        raise NumericalError(f"non-finite log marginal likelihood at {theta}")
    return value


def lml_and_gradient(
    spec: ModelSpec, theta: HyperParams, rows: Inputs, y, layout: ParamLayout | None = None
) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient over ``layout`` (log space)."""
    y = np.asarray(y, dtype=float)
    if layout is None:
        layout = ParamLayout(spec, rows.p, rows.units)
    F = factorize(spec, theta, rows)
    r = y - theta.mean
    alpha = F.solve(r)
    lml = float(-0.5 * r @ alpha - 0.5 * F.logdet - 0.5 * F.n * _LOG2PI)
    if not np.isfinite(lml):
        raise NumericalError(f"non-finite log marginal likelihood at {theta}")

    a_mu = np.zeros(F.G)
    np.add.at(a_mu, F.mu_idx, alpha)
    Q_mu = np.outer(a_mu, a_mu) - F.shared_precision()
    Q_blocks = []
    for blk in F.blocks:
        a = alpha[blk.idx]
        Q_blocks.append(np.outer(a, a) - F.inv_diag_block(blk))

    def mu_term(dC):
        return 0.5 * np.sum(Q_mu * dC)

    def block_term(dA_fn):
        return sum(0.5 * np.sum(Q * dA_fn(blk)) for blk, Q in zip(F.blocks, Q_blocks))

    grads = {}
    grads["sigma_mu2"] = mu_term(F.C)
    grads["sigma_g1_2"] = block_term(lambda b: theta.sigma_g1_2 * b.Kt)
    if spec.use_unit_covariates:
        grads["sigma_g2_2"] = block_term(lambda b: theta.sigma_g2_2 * b.Kx)

    tk = _time_kspec(spec, theta)
    t_mu = F.Z_mu[:, 0]
    dKt_mu = kernels.gram_grad_log_ell(tk, t_mu, t_mu)[0]
    g = mu_term(theta.sigma_mu2 * dKt_mu)
    g += block_term(
        lambda b: theta.sigma_g1_2
        * kernels.gram_grad_log_ell(tk, rows.times[b.idx], rows.times[b.idx])[0]
    )
    grads["ell_time"] = g

    if spec.use_unit_covariates:
        uk = _unit_kspec(spec, theta, rows.p)
        per_block = [kernels.gram_grad_log_ell(uk, F._Xu[b.idx], F._Xu[b.idx]) for b in F.blocks]
        for j in range(spec.n_ell_x(rows.p)):
            grads[f"ell_x[{j}]"] = sum(
                0.5 * np.sum(Q * theta.sigma_g2_2 * dK[j]) for Q, dK in zip(Q_blocks, per_block)
            )
    if spec.has_shared:
        s_mu = F.Z_mu[:, 1:]
        dKs = kernels.gram_grad_log_ell(_shared_kspec(theta), s_mu, s_mu)[0]
        grads["ell_shared"] = mu_term(theta.sigma_mu2 * dKs)
    for blk, Q in zip(F.blocks, Q_blocks):
        grads[f"omega2[{blk.uid}]"] = 0.5 * blk.omega2 * np.trace(Q)

    out = np.array([grads.get(name, 0.0) for name in layout.names], dtype=float)
    return lml, out


def lml_gradient(
    spec: ModelSpec, theta: HyperParams, rows: Inputs, y, layout: ParamLayout | None = None
) -> np.ndarray:
    """Gradient of the log marginal likelihood in log-parameter space."""
    return lml_and_gradient(spec, theta, rows, y, layout)[1]

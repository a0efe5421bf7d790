"""
Exact draws from the exchangeable GP prior and brute-force Gaussian
conditioning.  Both serve as ground truth for the production code paths, so
they avoid its machinery: latent processes are drawn component by component
and joint covariances are filled entry by entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels
from .errors import NumericalError
from .kernels import KernelKind, KernelSpec
from .model import CovariateKernel, HyperParams, Inputs, ModelSpec, TimeKernel
from .panel import PanelDataset, UnitRecord

__all__ = ["SimLayout", "sample_prior", "joint_covariance", "brute_force_condition"]


@dataclass(frozen=True)
class SimLayout:
    """What to simulate.

    ``times`` is either one grid shared by every unit or a list of per-unit
    grids.  Shared covariate dims get one value per time, replicated across
    units; the remaining dims are drawn per row.  ``effects`` maps unit ids to
    a function of the post-treatment times returning additive shifts.
    """

    m: int
    times: Sequence | np.ndarray
    theta: HyperParams
    spec: ModelSpec = field(default_factory=ModelSpec)
    p: int = 0
    covariates: Mapping[str, np.ndarray] | None = None
    treatment_times: Mapping[str, int] = field(default_factory=dict)
    effects: Mapping[str, Callable[[np.ndarray], np.ndarray]] = field(default_factory=dict)
    unit_prefix: str = "u"

    def unit_ids(self) -> list[str]:
        width = max(3, len(str(self.m - 1)))
        return [f"{self.unit_prefix}{i:0{width}d}" for i in range(self.m)]

    def grid(self, i: int) -> np.ndarray:
        t = self.times
        if len(t) and np.ndim(t[0]) > 0:
            return np.asarray(t[i], dtype=int)
        return np.asarray(t, dtype=int)


def _draw(rng: np.random.Generator, cov: np.ndarray) -> np.ndarray:
    """Zero-mean normal draw via a symmetric eigendecomposition (PSD safe)."""
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    if w.min() < -1e-8 * max(1.0, abs(w.max())):
        raise NumericalError("prior covariance is not positive semidefinite")
    return V @ (np.sqrt(np.clip(w, 0.0, None)) * rng.standard_normal(len(w)))


def _time_k(spec: ModelSpec, theta: HyperParams) -> KernelSpec:
    kind = KernelKind.OU_TIME if spec.time_kernel == TimeKernel.OU else KernelKind.RBF_TIME
    return KernelSpec(kind, (theta.ell_time,))


def _unit_k(spec: ModelSpec, theta: HyperParams) -> KernelSpec:
    kind = KernelKind.RBF_COV_ARD if spec.covariate_kernel == CovariateKernel.RBF_ARD else KernelKind.RBF_COV
    return KernelSpec(kind, theta.ell_x)


def _scale(theta: HyperParams, X: np.ndarray) -> np.ndarray:
    return X if theta.x_scale is None else X / np.asarray(theta.x_scale)


def sample_prior(layout: SimLayout, seed: int) -> PanelDataset:
    """Draw a panel from the prior implied by ``layout.theta``."""
    rng = np.random.default_rng(seed)
    spec, theta, p = layout.spec, layout.theta, layout.p
    ids = layout.unit_ids()
    shared = sorted(spec.shared_covariate_dims)
    unit_dims = spec.unit_dims(p)

    grids = [layout.grid(i) for i in range(layout.m)]
    all_times = np.unique(np.concatenate(grids))
    global_x = rng.standard_normal((len(all_times), len(shared)))

    Xs = []
    for i, uid in enumerate(ids):
        g = grids[i]
        if layout.covariates is not None and uid in layout.covariates:
            X = np.asarray(layout.covariates[uid], dtype=float).reshape(len(g), p)
        else:
            X = np.zeros((len(g), p))
            X[:, unit_dims] = rng.standard_normal((len(g), len(unit_dims)))
            if shared:
                X[:, shared] = global_x[np.searchsorted(all_times, g)]
        Xs.append(X)

    # shared process on the distinct (time, shared covariate) inputs
    keys = np.vstack([np.column_stack([g, _scale(theta, X)[:, shared]]) for g, X in zip(grids, Xs)])
    Z, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = np.asarray(inv).reshape(-1)
    C = kernels.gram(_time_k(spec, theta), Z[:, 0], Z[:, 0])
    if shared:
        C = C + kernels.gram(KernelSpec(KernelKind.RBF_COV, (theta.ell_shared,)), Z[:, 1:], Z[:, 1:])
    mu = _draw(rng, theta.sigma_mu2 * C)

    units = []
    offset = 0
    for i, uid in enumerate(ids):
        g, X = grids[i], Xs[i]
        n = len(g)
        A = theta.sigma_g1_2 * kernels.gram(_time_k(spec, theta), g, g)
        if spec.use_unit_covariates and theta.sigma_g2_2 > 0:
            Xu = _scale(theta, X)[:, unit_dims]
            A = A + theta.sigma_g2_2 * kernels.gram(_unit_k(spec, theta), Xu, Xu)
        dev = _draw(rng, A)
        noise = rng.standard_normal(n) * np.sqrt(theta.omega_for(uid))
        y = theta.mean + mu[inv[offset:offset + n]] + dev + noise
        offset += n
        t0 = layout.treatment_times.get(uid)
        if t0 is not None and uid in layout.effects:
            post = g > t0
            y = y.copy()
            y[post] += np.asarray(layout.effects[uid](g[post]), dtype=float)
        units.append(UnitRecord(uid, g, y, X, t0))
    names = tuple(f"x{j + 1}" for j in range(p))
    return PanelDataset(tuple(units), names)


def joint_covariance(
    spec: ModelSpec, theta: HyperParams, rows: Inputs, noise: bool = True
) -> np.ndarray:
    """Covariance of the stacked observations, filled entry by entry."""
    n = len(rows)
    p = rows.p
    tk = _time_k(spec, theta)
    X = _scale(theta, rows.X)
    shared = sorted(spec.shared_covariate_dims)
    unit_dims = spec.unit_dims(p)
    sk = KernelSpec(KernelKind.RBF_COV, (theta.ell_shared,)) if shared else None
    uk = _unit_k(spec, theta) if spec.use_unit_covariates else None
    out = np.empty((n, n))
    for a in range(n):
        for b in range(a, n):
            kt = kernels.eval(tk, rows.times[a], rows.times[b])
            v = theta.sigma_mu2 * kt
            if sk is not None:
                v += theta.sigma_mu2 * kernels.eval(sk, X[a, shared], X[b, shared])
            if rows.units[a] == rows.units[b]:
                v += theta.sigma_g1_2 * kt
                if uk is not None:
                    v += theta.sigma_g2_2 * kernels.eval(uk, X[a, unit_dims], X[b, unit_dims])
                if noise and a == b:
                    v += theta.omega2[rows.units[a]]
            out[a, b] = out[b, a] = v
    return out


def brute_force_condition(joint_cov, obs_idx, target_idx, y_obs, mean: float = 0.0):
    """Gaussian conditional of the target block given the observed block.

    Returns ``(mean, cov)`` computed with direct dense solves.
    """
    S = np.asarray(joint_cov, dtype=float)
    o = np.asarray(obs_idx, dtype=int)
    t = np.asarray(target_idx, dtype=int)
    if np.intersect1d(o, t).size:
        raise ValueError("observed and target index sets overlap")
    Soo = S[np.ix_(o, o)]
    Sto = S[np.ix_(t, o)]
    Stt = S[np.ix_(t, t)]
    try:
        w = np.linalg.solve(Soo, np.asarray(y_obs, dtype=float) - mean)
        M = np.linalg.solve(Soo, Sto.T)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("observed block is singular") from exc
    return mean + Sto @ w, Stt - Sto @ M

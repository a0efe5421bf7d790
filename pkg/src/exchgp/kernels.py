"""
Unit-variance stationary kernels on time and on covariates.

Amplitudes are not part of the kernels; the model scales them.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = ["KernelKind", "KernelSpec", "eval", "gram", "gram_grad_log_ell"]


class KernelKind(str, Enum):
    OU_TIME = "OU_time"
    RBF_TIME = "RBF_time"
    RBF_COV = "RBF_cov"
    RBF_COV_ARD = "RBF_cov_ARD"


_TIME_KINDS = (KernelKind.OU_TIME, KernelKind.RBF_TIME)


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind
    lengthscales: tuple[float, ...]

    def __post_init__(self):
        kind = KernelKind(self.kind)
        ells = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "lengthscales", ells)
        if not ells or not all(v > 0 for v in ells):
            raise ValueError(f"lengthscales must be strictly positive, got {ells}")
        if kind != KernelKind.RBF_COV_ARD and len(ells) != 1:
            raise ValueError(f"{kind.value} takes a single lengthscale")

    @property
    def is_time(self) -> bool:
        return self.kind in _TIME_KINDS

    @property
    def dim(self) -> int | None:
        """Required input dimension, or None when any dimension is accepted."""
        if self.is_time:
            return 1
        if self.kind == KernelKind.RBF_COV_ARD:
            return len(self.lengthscales)
        return None


def _as_points(spec: KernelSpec, A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if spec.is_time:
        if A.ndim == 2 and A.shape[1] == 1:
            A = A[:, 0]
        if A.ndim != 1:
            raise ValueError(f"time kernel expects scalar inputs, got shape {A.shape}")
        return A[:, None]
    if A.ndim == 1:
        A = A[:, None] if spec.dim == 1 else A[None, :]
    if A.ndim != 2:
        raise ValueError(f"covariate kernel expects a 2-d point array, got shape {A.shape}")
    if spec.dim is not None and A.shape[1] != spec.dim:
        raise ValueError(f"expected {spec.dim}-dimensional inputs, got {A.shape[1]}")
    return A


def _scaled_sqdist(spec: KernelSpec, A: np.ndarray, B: np.ndarray):
    """Per-dimension squared differences divided by squared lengthscales."""
    ell = np.asarray(spec.lengthscales)
    D = (A[:, None, :] - B[None, :, :]) / ell
    return D * D


def gram(spec: KernelSpec, A, B) -> np.ndarray:
    """Matrix of k(A_i, B_j)."""
    A = _as_points(spec, A)
    B = _as_points(spec, B)
    if A.shape[1] != B.shape[1]:
        raise ValueError("input dimension mismatch between A and B")
    if spec.kind == KernelKind.OU_TIME:
        return np.exp(-np.abs(A[:, 0][:, None] - B[:, 0][None, :]) / spec.lengthscales[0])
    S = _scaled_sqdist(spec, A, B).sum(axis=2)
    return np.exp(-0.5 * S)


def gram_grad_log_ell(spec: KernelSpec, A, B) -> list[np.ndarray]:
    """Derivatives of ``gram`` with respect to each log-lengthscale."""
    A = _as_points(spec, A)
    B = _as_points(spec, B)
    if spec.kind == KernelKind.OU_TIME:
        r = np.abs(A[:, 0][:, None] - B[:, 0][None, :]) / spec.lengthscales[0]
        return [np.exp(-r) * r]
    D2 = _scaled_sqdist(spec, A, B)
    K = np.exp(-0.5 * D2.sum(axis=2))
    if spec.kind == KernelKind.RBF_COV_ARD:
        return [K * D2[:, :, j] for j in range(D2.shape[2])]
    return [K * D2.sum(axis=2)]


def eval(spec: KernelSpec, a, b) -> float:  # noqa: A001 - mirrors the math name
    """k(a, b) for a single pair of points."""
    if spec.is_time:
        a = np.atleast_1d(np.asarray(a, dtype=float)).reshape(-1)
        b = np.atleast_1d(np.asarray(b, dtype=float)).reshape(-1)
        if a.size != 1 or b.size != 1:
            raise ValueError("time kernels take scalar inputs")
    else:
        a = np.atleast_1d(np.asarray(a, dtype=float)).reshape(1, -1)
        b = np.atleast_1d(np.asarray(b, dtype=float)).reshape(1, -1)
    return float(gram(spec, a, b)[0, 0])

import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from conftest import PRESET_NAMES, random_instance
from exchgp import kernels
from exchgp.errors import ConfigError, NumericalError
from exchgp.kernels import KernelKind, KernelSpec
from exchgp.model import (
    HyperParams,
    Inputs,
    ModelSpec,
    ParamLayout,
    TimeKernel,
    _cholesky,
    assemble_cov,
    cross_cov,
    lml_and_gradient,
    lml_gradient,
    log_marginal_likelihood,
    noise_diag,
    preset,
)
from exchgp.simulate import joint_covariance

TIME_ONLY = ModelSpec(TimeKernel.OU)


def _one_point(units, times=None):
    times = [0] * len(units) if times is None else times
    return Inputs(units, times, np.zeros((len(units), 0)))


def test_two_units_one_time():
    theta = HyperParams(1.0, 1.0, omega2={"a": 1.0, "b": 1.0})
    np.testing.assert_array_equal(assemble_cov(TIME_ONLY, theta, _one_point(["a", "b"])), [[2, 1], [1, 2]])


def test_single_unit_ou():
    theta = HyperParams(0.5, 0.5, ell_time=1.0)
    K = assemble_cov(TIME_ONLY, theta, _one_point(["a", "a"], [0, 1]))
    np.testing.assert_allclose(K, [[1, np.exp(-1)], [np.exp(-1), 1]], rtol=0, atol=1e-15)


@pytest.mark.parametrize("tk", [TimeKernel.OU, TimeKernel.RBF])
def test_kronecker_identity(tk):
    m, T = 3, 4
    theta = HyperParams(1.7, 0.6, ell_time=2.3)
    rows = _one_point(np.repeat([f"u{i}" for i in range(m)], T), np.tile(np.arange(T), m))
    kind = KernelKind.OU_TIME if tk == TimeKernel.OU else KernelKind.RBF_TIME
    Kt = kernels.gram(KernelSpec(kind, (2.3,)), np.arange(T), np.arange(T))
    expected = np.kron(np.ones((m, m)), 1.7 * Kt) + np.kron(np.eye(m), 0.6 * Kt)
    got = assemble_cov(ModelSpec(tk), theta, rows)
    assert np.max(np.abs(got - expected)) <= 1e-14


def test_cross_cov_branches():
    theta = HyperParams(2.0, 0.5, sigma_g2_2=0.3, ell_time=1.5, ell_x=(1.0,))
    spec = preset("ou-time-cov")
    train = Inputs(["a", "b"], [1, 3], [[0.2], [1.0]])
    pred = Inputs(["b"], [3], [[1.0]])
    k = cross_cov(spec, theta, train, pred)
    assert k[0, 0] == pytest.approx(2.0 * np.exp(-2 / 1.5))
    assert k[1, 0] == pytest.approx(2.0 + 0.5 + 0.3)
    other = cross_cov(spec, theta, Inputs(["a"], [1], [[0.2]]), Inputs(["c"], [2], [[5.0]]))
    assert other[0, 0] == pytest.approx(2.0 * np.exp(-1 / 1.5))


def test_cross_cov_manual_example():
    theta = HyperParams(1.0, 1.0, omega2={"a": 1.0})
    assert cross_cov(TIME_ONLY, theta, _one_point(["a"]), _one_point(["b"])).tolist() == [[1.0]]


def test_univariate_lml():
    theta = HyperParams(1.0, 1.0, omega2={"a": 1.0})
    v = log_marginal_likelihood(TIME_ONLY, theta, _one_point(["a"]), [0.0])
    assert v == pytest.approx(-1.4682453, abs=1e-6)
    assert v == pytest.approx(-0.5 * np.log(2 * np.pi * 3), abs=1e-14)


@pytest.mark.parametrize("name", PRESET_NAMES)
@pytest.mark.parametrize("shared", [False, True])
def test_lml_matches_scipy(name, shared):
    rng = np.random.default_rng(zlib.crc32(f"{name}{shared}".encode()))
    for _ in range(5):
        spec, theta, rows, y, _ = random_instance(rng, name, shared)
        S = joint_covariance(spec, theta, rows)
        ref = multivariate_normal(np.full(len(y), theta.mean), S).logpdf(y)
        for method in ("structured", "dense"):
            assert log_marginal_likelihood(spec, theta, rows, y, method) == pytest.approx(ref, abs=1e-8)


def test_lml_zero_vector_has_no_quadratic_term():
    rng = np.random.default_rng(5)
    spec, theta, rows, _, _ = random_instance(rng, "rbf-time")
    theta = HyperParams(**{**theta.__dict__, "mean": 0.0})
    S = joint_covariance(spec, theta, rows)
    expected = -0.5 * np.linalg.slogdet(S)[1] - 0.5 * len(rows) * np.log(2 * np.pi)
    assert log_marginal_likelihood(spec, theta, rows, np.zeros(len(rows))) == pytest.approx(expected, abs=1e-10)


def test_assemble_matches_entrywise_oracle():
    rng = np.random.default_rng(8)
    for name in PRESET_NAMES:
        spec, theta, rows, _, _ = random_instance(rng, name, shared=True)
        K = assemble_cov(spec, theta, rows) + np.diag(noise_diag(theta, rows))
        np.testing.assert_allclose(K, joint_covariance(spec, theta, rows), rtol=0, atol=1e-12)


def _fd_grad(spec, theta, rows, y, h=1e-5):
    layout = ParamLayout(spec, rows.p, rows.units)
    v = layout.to_vector(theta)
    out = np.empty(len(v))
    for k in range(len(v)):
        up, dn = v.copy(), v.copy()
        up[k] += h
        dn[k] -= h
        out[k] = (log_marginal_likelihood(spec, layout.from_vector(up, theta), rows, y)
                  - log_marginal_likelihood(spec, layout.from_vector(dn, theta), rows, y)) / (2 * h)
    return out


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_gradient_finite_difference(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for shared in (False, True):
        spec, theta, rows, y, _ = random_instance(rng, name, shared)
        g = lml_gradient(spec, theta, rows, y)
        fd = _fd_grad(spec, theta, rows, y)
        assert np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd))) < 1e-5


def test_gradient_symmetric_units():
    theta = HyperParams(1.3, 0.7, ell_time=2.0, omega2={"a": 0.4, "b": 0.4})
    rows = _one_point(["a", "a", "a", "b", "b", "b"], [1, 2, 3, 1, 2, 3])
    y = np.array([0.3, -1.0, 0.8] * 2)
    layout = ParamLayout(TIME_ONLY, 0, rows.units)
    g = lml_gradient(TIME_ONLY, theta, rows, y, layout)
    names = list(layout.names)
    assert g[names.index("omega2[a]")] == pytest.approx(g[names.index("omega2[b]")], abs=1e-12)


def test_gradient_zero_vector_is_trace_term():
    rng = np.random.default_rng(2)
    spec, theta, rows, _, _ = random_instance(rng, "ou-time")
    theta = HyperParams(**{**theta.__dict__, "mean": 0.0})
    g = lml_gradient(spec, theta, rows, np.zeros(len(rows)))
    S = joint_covariance(spec, theta, rows)
    Sinv = np.linalg.inv(S)
    # d/d log(sigma_mu2) of Sigma is the shared part of the covariance
    shared = joint_covariance(spec, HyperParams(theta.sigma_mu2, 0.0, ell_time=theta.ell_time,
                                                omega2=theta.omega2), rows, noise=False)
    assert g[0] == pytest.approx(-0.5 * np.trace(Sinv @ shared), abs=1e-10)


def test_lml_and_gradient_consistent():
    rng = np.random.default_rng(11)
    spec, theta, rows, y, _ = random_instance(rng, "rbf-time-cov-ard", shared=True)
    lml, g = lml_and_gradient(spec, theta, rows, y)
    assert lml == pytest.approx(log_marginal_likelihood(spec, theta, rows, y), abs=1e-12)
    np.testing.assert_allclose(g, lml_gradient(spec, theta, rows, y), atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["ou-time", "rbf-time"]))
def test_permutation_invariance(seed, name):
    rng = np.random.default_rng(seed)
    m, T = int(rng.integers(2, 5)), int(rng.integers(2, 6))
    units = [f"u{i}" for i in range(m)]
    theta = HyperParams(float(rng.uniform(0.1, 3)), float(rng.uniform(0.1, 3)),
                        ell_time=float(rng.uniform(0.3, 4)), omega2={u: 0.3 for u in units})
    Y = rng.normal(size=(m, T))
    spec = preset(name)

    def lml(order):
        rows = _one_point(np.repeat([units[i] for i in order], T), np.tile(np.arange(T), m))
        return log_marginal_likelihood(spec, theta, rows, Y[order].reshape(-1))

    assert abs(lml(np.arange(m)) - lml(rng.permutation(m))) <= 1e-10


def test_layout_round_trip():
    rng = np.random.default_rng(4)
    spec, theta, rows, _, _ = random_instance(rng, "ou-time-rbf-cov-ard", shared=True)
    layout = ParamLayout(spec, rows.p, rows.units)
    back = layout.from_vector(layout.to_vector(theta), theta)
    for key in ("sigma_mu2", "sigma_g1_2", "sigma_g2_2", "ell_time", "ell_shared"):
        assert getattr(back, key) == pytest.approx(getattr(theta, key), rel=1e-14)
    np.testing.assert_allclose(back.ell_x, theta.ell_x, rtol=1e-14)


def test_hyperparams_validation_and_dict():
    with pytest.raises(ValueError):
        HyperParams(-1.0, 1.0)
    with pytest.raises(ValueError):
        HyperParams(1.0, 1.0, ell_time=0.0)
    theta = HyperParams(1.0, 2.0, ell_x=(1.5,), omega2={"a": 0.2}, mean=3.0)
    assert HyperParams.from_dict(theta.to_dict()) == theta
    with pytest.raises(ConfigError):
        theta.omega_for("zz")


def test_spec_checks():
    with pytest.raises(ConfigError):
        preset("nope")
    with pytest.raises(ConfigError):
        preset("ou-time-cov").check(0)
    with pytest.raises(ConfigError):
        preset("ou-time", [3]).check(2)


def test_cholesky_jitter_policy():
    A = np.ones((3, 3))  # rank one, needs jitter
    L, jitter = _cholesky(A)
    assert 0 < jitter <= 1e-4
    np.testing.assert_allclose(L @ L.T, A + jitter * np.eye(3), atol=1e-12)
    _, none = _cholesky(np.eye(2))
    assert none == 0.0
    with pytest.raises(NumericalError):
        _cholesky(-np.eye(2))

from dataclasses import replace

import numpy as np
import pytest

from exchgp.errors import ConfigError, NumericalError, PanelDataError, PipelineError
from exchgp.harness import (
    StaggeredConfig,
    UnitRun,
    choose_fake_time,
    fit_predict_unit,
    horizon_cap,
    leave_one_out_validation,
    score,
    split_design,
    staggered_pipeline,
    training_size,
)
from exchgp.hyperopt import FitOptions
from exchgp.model import HyperParams, preset
from exchgp.panel import PanelDataset, UnitRecord, make_split
from exchgp.predict import GaussianPredictive, effect_summary
from exchgp.simulate import SimLayout, sample_prior

SPEC = preset("ou-time")
FAST = FitOptions(restarts=1, max_iters=200)


def _gp(mean, sd):
    mean = np.asarray(mean, float)
    return GaussianPredictive("u", np.arange(len(mean)), mean, np.diag(np.asarray(sd, float) ** 2))


# -- protocol helpers --------------------------------------------------------


def test_fake_time_prop99():
    assert choose_fake_time(np.arange(1970, 1989), fraction=11 / 30) == 1981


def test_fake_time_weeks():
    assert choose_fake_time(np.arange(1, 31), fraction=1 / 3) == 20


def test_fake_time_small_fraction_keeps_one_post_point():
    assert choose_fake_time(np.arange(1, 11), fraction=1e-9) == 9


def test_fake_time_fixed_and_errors():
    assert choose_fake_time(np.arange(10), fixed=4) == 4
    with pytest.raises(PanelDataError):
        choose_fake_time(np.arange(10), fixed=9)
    with pytest.raises(PanelDataError):
        choose_fake_time([1, 2], fraction=0.5)
    with pytest.raises(ConfigError):
        choose_fake_time(np.arange(10), fraction=0.5, fixed=3)


def test_horizon_cap_and_training_size():
    assert horizon_cap(20, 0.5) == 10
    assert horizon_cap(21, 0.5) == 10
    assert horizon_cap(1, 0.5) == 1
    assert training_size(20, 20, 52) == 1060


# -- scoring -----------------------------------------------------------------


def test_score_exact():
    m = score([_gp([1, 2], [0.1, 0.1])], [[1, 2]])
    assert (m.mape, m.rmse, m.bias, m.coverage) == (0, 0, 0, 1)


def test_score_hand_example():
    m = score([_gp([2, 2], [1, 1])], [[1, 4]])
    assert m.bias == pytest.approx(-0.5)
    assert m.rmse == pytest.approx(np.sqrt(2.5))
    assert m.mape == pytest.approx(0.75)


def test_score_zero_width():
    m = score([_gp([2, 2], [0, 0])], [[2, 3]])
    assert m.coverage == 0.5
    m = score([_gp([2, 2], [0, 0])], [[1, 3]])
    assert m.coverage == 0.0


def test_score_zero_observation_excluded_from_mape():
    m = score([_gp([1, 1], [1, 1])], [[0, 2]])
    assert m.mape_excluded == 1
    assert m.mape == pytest.approx(0.5)


def test_score_averages_over_units():
    m = score([_gp([1], [1]), _gp([0, 0, 0], [1, 1, 1])], [[3], [0, 0, 0]])
    assert m.rmse == pytest.approx(1.0)
    assert m.bias == pytest.approx(-1.0)


# -- validation --------------------------------------------------------------


def _panel(m, T, treated=(), seed=0, theta=None, effect=0.0):
    ids = [f"u{i:03d}" for i in range(m)]
    theta = theta or HyperParams(1.0, 0.5, ell_time=4.0, omega2={u: 0.2 for u in ids})
    tt = dict(treated)
    layout = SimLayout(m, np.arange(1, T + 1), theta, SPEC, treatment_times=tt,
                       effects={u: (lambda t: np.full(len(t), effect)) for u in tt} if effect else {})
    return sample_prior(layout, seed)


def perfect_runner(data, unit_id, t0, horizon, spec, opts):
    split = make_split(data, unit_id, t0, horizon)
    _, _, pred, y_obs = split_design(data, split)
    gp = GaussianPredictive(unit_id, pred.times.astype(int), y_obs.copy(), np.eye(len(y_obs)) * 1e-6)
    return UnitRun(unit_id, t0, gp, y_obs, effect_summary(gp, y_obs), None, split.n_train)


def failing_runner(data, unit_id, t0, horizon, spec, opts):
    if unit_id in ("u000", "u001", "u002"):
        raise NumericalError("synthetic failure")
    return perfect_runner(data, unit_id, t0, horizon, spec, opts)


def test_loo_counts():
    data = _panel(2, 6)
    report, runs = leave_one_out_validation(data, 4, SPEC, FAST)
    assert len(runs) == 2
    assert all(len(r.predictive.mean) == 2 for r in runs)
    assert report.summary.n_predictions == 4


def test_loo_perfect_predictor():
    data = _panel(5, 8)
    report, _ = leave_one_out_validation(data, 5, SPEC, runner=perfect_runner)
    s = report.summary
    assert s.mape == 0 and s.rmse == 0 and s.bias == 0 and s.coverage == 1
    assert sum(r.n for r in report.per_time) == s.n_predictions
    assert sum(r.n for r in report.per_horizon) == s.n_predictions
    assert [r.key for r in report.per_horizon] == [1, 2, 3]


def test_loo_rejects_treated_window():
    data = _panel(3, 8, treated={"u000": 5})
    with pytest.raises(PanelDataError):
        leave_one_out_validation(data, 4, SPEC, runner=perfect_runner)


def test_loo_records_failures():
    data = _panel(6, 8)
    report, runs = leave_one_out_validation(data, 5, SPEC, runner=failing_runner)
    assert len(runs) == 3
    assert report.summary.n_failures == 3
    assert [f[0] for f in report.failures] == ["u000", "u001", "u002"]


# -- staggered ---------------------------------------------------------------


def _staggered_panel(seed=0):
    treated = {"u000": 20, "u001": 15, "u002": 25}
    return _panel(14, 40, treated=treated, seed=seed)


def test_staggered_estimate_horizon_cap():
    data = _staggered_panel()
    res = staggered_pipeline(data, StaggeredConfig(M=5), SPEC, mode="estimate", runner=perfect_runner)
    by_unit = {r.unit_id: r for r in res.runs}
    assert by_unit["u000"].predictive.times.tolist() == list(range(21, 31))
    assert by_unit["u001"].predictive.times.tolist() == list(range(16, 23))
    assert by_unit["u000"].n_train == training_size(20, 5, 40)
    assert res.report is None
    assert res.att.per_week[0].time == 16


def test_staggered_validate_uses_pre_period_only():
    data = _staggered_panel()
    res = staggered_pipeline(data, StaggeredConfig(M=5), SPEC, mode="validate", runner=perfect_runner)
    by_unit = {r.unit_id: r for r in res.runs}
    # pre-period 1..20 with a third held out: placebo at 13, predictions 14..20
    assert by_unit["u000"].t0 == choose_fake_time(np.arange(1, 21), fraction=1 / 3)
    assert by_unit["u000"].predictive.times[-1] == 20
    assert res.report.summary.coverage == 1.0


def test_staggered_unit_sample():
    data = _staggered_panel()
    res = staggered_pipeline(data, StaggeredConfig(M=5, unit_sample=2, seed=3), SPEC, runner=perfect_runner)
    assert len(res.runs) == 2


def test_staggered_failure_circuit_breaker():
    data = _panel(10, 12, treated={"u000": 6, "u001": 6, "u002": 6, "u003": 6})
    with pytest.raises(PipelineError):
        staggered_pipeline(data, StaggeredConfig(M=3), SPEC, runner=failing_runner)


def test_staggered_config_validation():
    with pytest.raises(ConfigError):
        StaggeredConfig(M=0)
    with pytest.raises(ConfigError):
        StaggeredConfig(horizon_fraction=1.5)
    with pytest.raises(ConfigError):
        staggered_pipeline(_staggered_panel(), StaggeredConfig(M=50), SPEC, runner=perfect_runner)


def test_staggered_parallel_matches_serial():
    data = _staggered_panel(seed=4)
    cfg = StaggeredConfig(M=3)
    a = staggered_pipeline(data, cfg, SPEC, FAST, mode="validate", jobs=1)
    b = staggered_pipeline(data, cfg, SPEC, FAST, mode="validate", jobs=2)
    assert replace(a.report.summary, opt_time_s=0) == replace(b.report.summary, opt_time_s=0)
    for x, y in zip(a.runs, b.runs):
        np.testing.assert_array_equal(x.predictive.mean, y.predictive.mean)
        np.testing.assert_array_equal(x.predictive.cov, y.predictive.cov)


def test_fit_predict_unit_real():
    data = _panel(4, 12, treated={"u000": 8}, effect=5.0)
    run = fit_predict_unit(data, "u000", 8, None, SPEC, FAST)
    assert run.predictive.times.tolist() == [9, 10, 11, 12]
    assert run.effects.average.estimate > 2
    assert isinstance(data, PanelDataset) and isinstance(data.units[0], UnitRecord)

"""
Tests for Birkhoff sums, path norms and the Monte Carlo statistics
"""
import math

import numpy as np
import pandas as pd
import pytest

from dynamics import MapSpec
from errors import ConfigError, DegenerateDesignError, DomainError, StatisticalPowerError
from montecarlo import (CRITICAL_EXPONENT_RANGE, CRITICAL_RATIO_SPREAD, RESULT_COLUMNS, EmpiricalResult, SimConfig,
                        birkhoff_stats, bound_level, canonical_json, config_digest, critical_growth, default_bandwidth,
                        donsker_path, empirical_moment, empirical_tail, holder_norm, holder_quantile, ks_normal,
                        scaling_fit, sigma2_estimate, simulate, with_estimated_center)
from observables import Observable, ObservableKind
from replica_pool import replica_pool

INDICATOR = Observable(ObservableKind.INDICATOR, interval=(0.5, 1.0))


def oracle(source='mdep', **kwargs):
    fields = {'map': MapSpec.lsv(0.25), 'observable': INDICATOR, 'n_grid': (16, 64), 'seed': 7, 'source': source}
    fields.update(kwargs)
    return SimConfig(**fields)


def test_birkhoff_stats_example():
    f = INDICATOR.with_center(0.5, 0.0)
    stats = birkhoff_stats([0.1, 0.7, 0.8, 0.2], f)
    assert stats.S.tolist() == [-0.5, 0.0, 0.5, 0.0]
    assert stats.max_abs == 0.5


def test_donsker_path_examples():
    S, X = [1.0, 3.0, 6.0], [1.0, 2.0, 3.0]
    assert donsker_path(S, X, 0.0) == 0.0
    assert donsker_path(S, X, 1.0) == pytest.approx(6.0 / math.sqrt(3.0))
    assert donsker_path(S, X, 0.5) == pytest.approx(2.0 / math.sqrt(3.0))
    with pytest.raises(DomainError):
        donsker_path(S, X, 1.5)


def test_holder_norm_example():
    norm = holder_norm([0.0, 0.25, 1.0], [0.0, 0.5, 1.0], 0.5)
    assert norm.seminorm == pytest.approx(1.0)
    assert norm.norm == pytest.approx(1.0)
    assert not norm.approximate


def test_holder_seminorm_of_square_root_on_dense_grid():
    t = np.linspace(0.0, 1.0, 1001)
    norm = holder_norm(t, np.sqrt(t) + 2.0, 0.5)
    assert norm.seminorm == pytest.approx(1.0, rel=1e-12)
    assert norm.norm == pytest.approx(3.0, rel=1e-12)


def test_holder_seminorm_above_exact_limit_is_flagged():
    t = np.linspace(0.0, 1.0, 5001)
    norm = holder_norm(t, t, 0.5)
    assert norm.approximate
    assert 0.0 < norm.seminorm <= 1.0 + 1e-12


def test_holder_norm_validation():
    with pytest.raises(DomainError):
        holder_norm([0.0, 1.0], [0.0, 1.0], 1.0)
    with pytest.raises(DomainError):
        holder_norm([0.0, 0.5, 0.5], [0.0, 1.0, 2.0], 0.3)


def test_sim_config_validation():
    with pytest.raises(ConfigError):
        oracle(n_grid=(64, 16))
    with pytest.raises(ConfigError):
        oracle(holder_beta=0.5)
    with pytest.raises(ConfigError):
        oracle(source='brownian')
    with pytest.raises(ConfigError):
        oracle(replicas=0)
    with pytest.raises(ConfigError):
        SimConfig(map=MapSpec.lsv(0.5), observable=Observable(ObservableKind.NEUTRAL_SINGULARITY, s=0.6),
                  n_grid=(10,))


def test_config_hash_is_canonical():
    assert canonical_json({'b': 1, 'a': [1, 2]}) == '{"a":[1,2],"b":1}'
    assert oracle().config_hash == oracle().config_hash
    assert oracle().config_hash != oracle(seed=8).config_hash
    assert oracle().config_hash == config_digest(oracle().to_dict())


def test_simulate_map_shapes_and_ordering():
    cfg = SimConfig(map=MapSpec.lsv(0.25), observable=INDICATOR.with_center(0.5, 0.0), n_grid=(10, 100),
                    replicas=10, burn_in=100, seed=3)
    stats = simulate(cfg)
    assert stats.max_abs.shape == (10, 2)
    assert np.all(stats.max_abs[:, 1] >= stats.max_abs[:, 0])
    assert np.all(np.abs(stats.final_sum) <= stats.max_abs)
    with pytest.raises(ConfigError):
        stats.column(50)


def test_simulation_does_not_depend_on_worker_count():
    cfg = oracle(replicas=300)
    workers = replica_pool.workers
    try:
        replica_pool.set_workers(1)
        serial = simulate(cfg, holder=True)
        replica_pool.set_workers(4)
        threaded = simulate(cfg, holder=True)
    finally:
        replica_pool.set_workers(workers)
    assert np.array_equal(serial.max_abs, threaded.max_abs)
    assert np.array_equal(serial.final_sum, threaded.final_sum)
    assert np.array_equal(serial.holder, threaded.holder)


def test_oracle_center_is_not_estimated():
    cfg = oracle()
    assert with_estimated_center(cfg) is cfg


def test_rademacher_second_moment_lies_between_doob_brackets():
    cfg = oracle('rademacher', replicas=400)
    for row in empirical_moment(cfg, 2.0).rows:
        n = row['n']
        assert n - 3.0 * row['stderr'] <= row['estimate'] <= 4.0 * n + 3.0 * row['stderr']
        assert row['replicas'] == 400


def test_empirical_moment_requires_enough_replicas():
    with pytest.raises(StatisticalPowerError):
        empirical_moment(oracle(replicas=10), 2.0)


def test_tail_identities():
    cfg = oracle('rademacher', replicas=200)
    stats = simulate(cfg)
    assert empirical_tail(cfg, 0.0, 64, stats).rows[0]['estimate'] == 1.0
    far = empirical_tail(cfg, 2.0, 64, stats).rows[0]
    assert far['estimate'] == 0.0
    assert far['stderr'] == 0.0
    assert far['flags'] == 'low-power'
    middle = empirical_tail(cfg, 0.2, 16, stats).rows[0]
    assert 0.0 < middle['estimate'] < 1.0
    assert middle['stderr'] == pytest.approx(math.sqrt(middle['estimate'] * (1.0 - middle['estimate']) / 200))


def test_rademacher_two_step_tail_is_one_half():
    # max(|e1|, |e1 + e2|) >= 2 exactly when both steps agree
    row = empirical_tail(oracle('rademacher', replicas=4000, n_grid=(2,)), 1.0, 2).rows[0]
    assert abs(row['estimate'] - 0.5) <= 3.0 * row['stderr']
    assert row['flags'] == ''


def test_tail_off_grid_runs_its_own_simulation():
    row = empirical_tail(oracle('rademacher', replicas=50), 0.0, 30).rows[0]
    assert row['n'] == 30 and row['estimate'] == 1.0


def test_bound_level():
    assert bound_level(oracle(source='map'), 1.0) == 0.5
    assert bound_level(oracle(), 1.0) == 1.0


def test_holder_quantile_rows():
    result = holder_quantile(oracle('rademacher', replicas=100))
    rows = result.select('holder_quantile', 0.2)
    assert [row['n'] for row in rows] == [16, 64]
    assert all(row['estimate'] > 0.0 and row['stderr'] >= 0.0 and row['flags'] == '' for row in rows)
    with pytest.raises(ConfigError):
        holder_quantile(oracle('rademacher', replicas=100), beta=0.5)


@pytest.mark.slow
@pytest.mark.parametrize("weights,expected", [
    ((1.0,), 1.0),
    ((1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0)), 2.0),
    ((1.0, -1.0), 0.0),
])
def test_sigma2_oracles(weights, expected):
    row = sigma2_estimate(oracle(weights=weights, orbit_length=1_000_000)).rows[0]
    assert row['p_or_x_or_beta'] == 100.0
    assert abs(row['estimate'] - expected) <= 3.0 * row['stderr']


def test_sigma2_orbit_length_checks():
    with pytest.raises(ConfigError):
        sigma2_estimate(oracle(orbit_length=1000), bandwidth=50)
    with pytest.raises(StatisticalPowerError):
        sigma2_estimate(oracle(orbit_length=1000), bandwidth=10)


def test_scaling_fit_recovers_exact_power_law():
    n = np.array([10.0, 20.0, 40.0, 80.0, 160.0])
    y = 7.0 * n ** 1.5
    fit = scaling_fit(list(zip(n, y, 0.01 * y)))
    assert fit.exponent == pytest.approx(1.5, abs=1e-9)
    assert fit.intercept == pytest.approx(math.log(7.0), abs=1e-9)
    assert fit.stderr == pytest.approx(0.0, abs=1e-6)
    assert fit.log_coefficient is None and fit.points == 5


def test_scaling_fit_with_log_factor():
    n = np.array([10.0, 30.0, 100.0, 300.0, 1000.0])
    y = n * np.log(n)
    fit = scaling_fit(list(zip(n, y, 0.01 * y)), with_log=True)
    assert fit.exponent == pytest.approx(1.0, abs=1e-8)
    assert fit.log_coefficient == pytest.approx(1.0, abs=1e-7)


def test_scaling_fit_on_noisy_moments():
    rng = np.random.default_rng(2)
    n = np.geomspace(10.0, 10000.0, 8)
    y = 3.0 * n ** 1.2 * (1.0 + 0.01 * rng.standard_normal(n.size))
    fit = scaling_fit(list(zip(n, y, 0.01 * y)))
    assert fit.exponent == pytest.approx(1.2, abs=0.02)
    assert 0.0 < fit.stderr < 0.02


@pytest.mark.parametrize("points,with_log", [
    ([(10.0, 1.0, 0.1), (40.0, 2.0, 0.1)], False),
    ([(10.0, 1.0, 0.1), (12.0, 2.0, 0.1), (14.0, 3.0, 0.1)], False),
    ([(10.0, 1.0, 0.1), (40.0, -2.0, 0.1), (160.0, 3.0, 0.1)], False),
    ([(10.0, 1.0, 0.1), (40.0, 2.0, 0.1), (160.0, 3.0, 0.1)], True),
])
def test_scaling_fit_rejects_degenerate_designs(points, with_log):
    with pytest.raises(DegenerateDesignError):
        scaling_fit(points, with_log=with_log)


def test_scaling_fit_with_log_needs_four_points():
    n = np.array([16.0, 64.0, 256.0, 1024.0])
    y = n * np.log(n)
    fit = scaling_fit(list(zip(n, y, 0.01 * y)), with_log=True)
    assert fit.points == 4
    assert fit.log_coefficient == pytest.approx(1.0, abs=1e-7)
    with pytest.raises(DegenerateDesignError, match='degrees of freedom'):
        scaling_fit(list(zip(n[:3], y[:3], 0.01 * y[:3])), with_log=True)


def test_critical_growth_accepts_noisy_n_log_n():
    rng = np.random.default_rng(5)
    n = 2.0 ** np.arange(11, 16)
    y = n * np.log(n) * (1.0 + 0.05 * rng.standard_normal(n.size))
    check = critical_growth(list(zip(n, y, 0.05 * y)))
    assert check.passed
    assert check.ratio_spread < CRITICAL_RATIO_SPREAD
    assert CRITICAL_EXPONENT_RANGE[0] <= check.exponent <= CRITICAL_EXPONENT_RANGE[1]


@pytest.mark.parametrize("power", [1.5, 0.9])
def test_critical_growth_rejects_other_powers(power):
    n = 2.0 ** np.arange(11, 16)
    y = n ** power
    check = critical_growth(list(zip(n, y, 0.01 * y)))
    assert not check.passed
    assert check.exponent == pytest.approx(power, abs=1e-9)


def test_ks_normal():
    assert ks_normal(np.zeros(200), 1.0) == pytest.approx(0.5)
    draws = np.random.default_rng(0).normal(0.0, 2.0, 20000)
    assert ks_normal(draws, 2.0) < 0.02
    with pytest.raises(DomainError):
        ks_normal(draws, 0.0)
    with pytest.raises(StatisticalPowerError):
        ks_normal(draws[:50], 2.0)


def test_empirical_result_frame(tmp_path):
    result = EmpiricalResult(config_hash='abc', seed=4)
    result.add(10, 'moment', 2.0, 3.5, 0.1, 100)
    result.add(10, 'tail', 0.5, 0.0, 0.0, 100, ['low-power'])
    path = tmp_path / 'rows.csv'
    result.to_csv(str(path))
    frame = pd.read_csv(path, keep_default_na=False)
    assert list(frame.columns) == RESULT_COLUMNS
    assert frame['flags'].tolist() == ['', 'low-power']
    assert result.select('moment') == result.rows[:1]


@pytest.mark.parametrize("N,expected", [(1_000_000, 100), (999_999, 99), (100_000, 46), (1, 1)])
def test_default_bandwidth_is_integer_cube_root(N, expected):
    assert default_bandwidth(N) == expected

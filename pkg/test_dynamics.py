"""
Tests for map iteration, orbit generation and oracle sequences
"""
import math

import numpy as np
import pytest

from dynamics import (REINJECTION_POINT, AffineBranch, MapKind, MapSpec, OrbitConfig, generate_orbit,
                      initial_points, iterate_block, map_step, map_step_array, mdep_block, mdep_sequence,
                      rademacher_sequence)
from errors import ConfigError, DomainError


@pytest.fixture
def lsv():
    return MapSpec.lsv(0.5)


def test_map_step_second_branch(lsv):
    assert map_step(0.5, lsv) == 0.0
    assert map_step(0.75, lsv) == 0.5


def test_map_step_neutral_branch(lsv):
    assert map_step(0.25, lsv) == pytest.approx(0.25 * (1.0 + math.sqrt(2.0) * math.sqrt(0.25)))
    assert map_step(0.25, lsv) == pytest.approx(0.42677669, abs=1e-8)


def test_map_step_fixed_point_and_clamping(lsv):
    assert map_step(0.0, lsv) == 0.0
    assert map_step(1.0 + np.spacing(1.0), lsv) == 1.0
    assert map_step(-np.spacing(1.0), lsv) == 0.0


@pytest.mark.parametrize("x", [-0.01, 1.01, float('nan')])
def test_map_step_rejects_points_outside_domain(lsv, x):
    with pytest.raises(DomainError):
        map_step(x, lsv)


@pytest.mark.parametrize("gamma", [0.0, 1.0, -0.2, 1.5])
def test_map_spec_rejects_gamma_outside_open_interval(gamma):
    with pytest.raises(ConfigError):
        MapSpec.lsv(gamma)


def test_lsv_spec_cannot_carry_extra_branches():
    with pytest.raises(ConfigError):
        MapSpec(gamma=0.3, breakpoints=(0.0, 0.3, 1.0))


def test_piecewise_gpm_with_lsv_layout_matches_lsv():
    gpm = MapSpec(gamma=0.4, kind=MapKind.PIECEWISE_GPM)
    x = np.linspace(0.0, 1.0, 101)
    np.testing.assert_allclose(map_step_array(x, gpm), map_step_array(x, MapSpec.lsv(0.4)), rtol=1e-12, atol=1e-300)


def test_piecewise_gpm_validation():
    with pytest.raises(ConfigError):
        MapSpec(gamma=0.4, kind=MapKind.PIECEWISE_GPM, breakpoints=(0.0, 0.6, 0.5, 1.0),
                branches=(AffineBranch(), AffineBranch()))
    with pytest.raises(ConfigError):
        # slope 0.5 / 0.5 = 1 is not expanding
        MapSpec(gamma=0.4, kind=MapKind.PIECEWISE_GPM, branches=(AffineBranch(0.5, 1.0),))


def test_piecewise_gpm_decreasing_branch():
    spec = MapSpec(gamma=0.3, kind=MapKind.PIECEWISE_GPM, breakpoints=(0.0, 0.4, 0.7, 1.0),
                   branches=(AffineBranch(0.0, 1.0, True), AffineBranch(0.0, 1.0, False)))
    assert map_step(0.4, spec) == pytest.approx(0.0)
    assert map_step(0.7, spec) == pytest.approx(1.0)
    assert map_step(0.85, spec) == pytest.approx(0.5)
    assert map_step(0.2, spec) == pytest.approx(0.2 + 0.6 * 0.5 ** 1.3)


def test_map_spec_round_trip():
    spec = MapSpec(gamma=0.3, kind=MapKind.PIECEWISE_GPM, breakpoints=(0.0, 0.4, 0.7, 1.0),
                   branches=(AffineBranch(0.0, 1.0, True), AffineBranch(0.0, 1.0, False)), neutral_top=0.9)
    assert MapSpec.from_dict(spec.to_dict()) == spec


def test_orbit_from_half_reinjects_at_fixed_point(lsv):
    orbit = generate_orbit(OrbitConfig(length=2, burn_in=0, initial_point=0.5), lsv)
    assert orbit.tolist() == [REINJECTION_POINT, REINJECTION_POINT]
    assert orbit == pytest.approx([0.0, 0.0], abs=1e-300)


def test_orbit_is_deterministic_and_in_range(lsv):
    cfg = OrbitConfig(length=500, seed=42, replica_index=3, burn_in=100)
    first = generate_orbit(cfg, lsv)
    second = generate_orbit(cfg, lsv)
    assert first.shape == (500,)
    assert np.array_equal(first, second)
    assert np.all((first >= 0.0) & (first <= 1.0))


def test_block_rows_follow_their_own_substreams(lsv):
    block = iterate_block(initial_points(7, [0, 1, 2]), lsv, 50, 200)
    again = iterate_block(initial_points(7, [0, 1, 2]), lsv, 50, 200)
    assert block.shape == (3, 200)
    assert np.array_equal(block, again)
    assert not np.array_equal(block[0], block[1])


def test_distinct_replicas_are_uncorrelated():
    spec = MapSpec.lsv(0.25)
    length = 20000
    a = generate_orbit(OrbitConfig(length=length, seed=1, replica_index=0), spec) >= 0.5
    b = generate_orbit(OrbitConfig(length=length, seed=1, replica_index=1), spec) >= 0.5
    rho = np.corrcoef(a.astype(float), b.astype(float))[0, 1]
    assert abs(rho) < 3.0 / math.sqrt(length) * 3.0


@pytest.mark.parametrize("kwargs", [
    {'length': 0},
    {'length': 10, 'burn_in': -1},
    {'length': 10, 'seed': -1},
    {'length': 10, 'seed': 2 ** 64},
    {'length': 10, 'replica_index': -1},
    {'length': 10, 'initial_point': 1.5},
    {'length': 10, 'initial_point': 'stationary'},
    {'length': 2 ** 62, 'burn_in': 2 ** 62},
])
def test_orbit_config_validation(kwargs):
    with pytest.raises(ConfigError):
        OrbitConfig(**kwargs)


def test_iid_oracle_has_no_lag_one_covariance():
    x = mdep_sequence(OrbitConfig(length=100000, seed=5), [1.0])
    assert abs(np.mean(x[1:] * x[:-1])) < 0.02


def test_moving_average_lag_one_covariance():
    w = 1.0 / math.sqrt(2.0)
    x = mdep_sequence(OrbitConfig(length=100000, seed=5), [w, w])
    assert np.mean(x[1:] * x[:-1]) == pytest.approx(0.5, abs=0.02)
    assert abs(np.mean(x[2:] * x[:-2])) < 0.02


def test_differenced_noise_partial_sums_stay_bounded():
    x = mdep_sequence(OrbitConfig(length=10000, seed=9, burn_in=0), [1.0, -1.0])
    S = np.cumsum(x)
    # S_n = eps_n - eps_0 telescopes
    assert np.var(S) < 3.0


def test_mdep_rejects_empty_weights():
    with pytest.raises(ConfigError):
        mdep_sequence(OrbitConfig(length=10), [])


def test_rademacher_values_and_block_layout():
    x = rademacher_sequence(OrbitConfig(length=1000, seed=3, replica_index=2, burn_in=0))
    assert set(np.unique(x)) <= {-1.0, 1.0}
    block = mdep_block(3, [1, 2], [1.0], 1000, rademacher=True)
    assert np.array_equal(block[1], x)

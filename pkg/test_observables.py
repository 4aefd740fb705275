"""
Tests for tail functions, quantile models and observables
"""
import math

import numpy as np
import pytest

from dynamics import MapSpec
from errors import ConfigError, DomainError, SingularityError, StatisticalPowerError
from observables import (MonotoneBranch, Observable, ObservableKind, QuantileModel, TailFunction, VanishingFactor,
                         empirical_tail_function, estimate_center, fit_quantile_scale, observable_eval,
                         observable_quantile_params, quantile_from_tail, sample_observable)


def test_bounded_tail_quantile():
    H = TailFunction.bounded(3.0)
    assert quantile_from_tail(H, 0.3) == 3.0
    assert quantile_from_tail(H, 1.0) == 0.0


def test_power_law_tail_quantile():
    H = TailFunction.power_law(2.0)
    assert quantile_from_tail(H, 0.25) == pytest.approx(2.0)
    assert quantile_from_tail(H, 0.0) == math.inf


@pytest.mark.parametrize("u", [-0.1, 1.5, float('nan')])
def test_quantile_level_outside_unit_interval(u):
    with pytest.raises(DomainError):
        quantile_from_tail(TailFunction.bounded(1.0), u)


def test_galois_pair_on_random_tabulated_tails():
    rng = np.random.default_rng(11)
    for _ in range(20):
        points = np.concatenate(([0.0], np.sort(rng.uniform(0.1, 5.0, 6))))
        heights = np.concatenate((np.sort(rng.uniform(0.0, 1.0, 6))[::-1], [0.0]))
        H = TailFunction.tabulated(points, heights)
        for u in rng.uniform(0.0, 1.0, 10):
            q = quantile_from_tail(H, u)
            for t in rng.uniform(0.0, 6.0, 10):
                if H(t) <= u:
                    assert q <= t
                if q <= t:
                    assert H(t + 1e-9) <= u


def test_quantile_is_non_increasing():
    H = TailFunction.power_law(1.5, scale=2.0, threshold=1.0)
    values = [quantile_from_tail(H, u) for u in np.linspace(0.01, 1.0, 50)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_tabulated_tail_validation():
    with pytest.raises(ConfigError):
        TailFunction.tabulated([0.0, 1.0], [1.0, 0.5])
    with pytest.raises(ConfigError):
        TailFunction.tabulated([0.0, 1.0, 2.0], [0.5, 0.7, 0.0])


def test_empirical_tail_function():
    H = empirical_tail_function([-2.0, 1.0, 1.0, 3.0])
    assert H(0.0) == 1.0
    assert H(1.0) == 0.5
    assert H(2.5) == 0.25
    assert H(3.0) == 0.0
    with pytest.raises(StatisticalPowerError):
        empirical_tail_function([])


def test_observable_eval_examples():
    assert observable_eval(Observable(ObservableKind.NEUTRAL_SINGULARITY, s=0.25), 0.0625) == pytest.approx(2.0)
    assert observable_eval(Observable(ObservableKind.BOUNDARY_SINGULARITY, s=0.5), 0.75) == pytest.approx(2.0)
    assert observable_eval(Observable(ObservableKind.INDICATOR, interval=(0.5, 1.0)), 0.3) == 0.0
    assert observable_eval(Observable(ObservableKind.INDICATOR, interval=(0.5, 1.0)), 0.5) == 1.0


def test_observable_eval_at_poles():
    with pytest.raises(SingularityError):
        observable_eval(Observable(ObservableKind.NEUTRAL_SINGULARITY, s=0.25), 0.0)
    with pytest.raises(SingularityError):
        observable_eval(Observable(ObservableKind.BOUNDARY_SINGULARITY, s=0.5), 1.0)


def test_bv_representative_is_bounded_by_m1():
    f = Observable(ObservableKind.BV, m1=1.0, m2=5.0)
    values = f.evaluate(np.linspace(0.0, 1.0, 11))
    assert np.max(np.abs(values)) <= 1.0
    assert values[0] - values[-1] == pytest.approx(2.0)


def test_piecewise_monotone_branches():
    f = Observable(ObservableKind.PIECEWISE_MONOTONE, branches=(
        MonotoneBranch(0.0, 0.5, coefficient=1.0, exponent=0.5, side='left'),
        MonotoneBranch(0.5, 1.0, coefficient=2.0, exponent=0.0),
    ), tail=TailFunction.power_law(2.5))
    assert observable_eval(f, 0.25) == pytest.approx(2.0)
    assert observable_eval(f, 0.75) == 2.0
    assert observable_eval(f, 1.0) == 2.0
    with pytest.raises(SingularityError):
        observable_eval(f, 0.0)


def test_quantile_params_examples():
    neutral = observable_quantile_params(Observable(ObservableKind.NEUTRAL_SINGULARITY, s=0.25), 0.25)
    assert neutral.b == pytest.approx(1.0 / 3.0)
    boundary = observable_quantile_params(Observable(ObservableKind.BOUNDARY_SINGULARITY, s=0.3), 0.7)
    assert boundary.b == pytest.approx(0.3)
    bv = observable_quantile_params(Observable(ObservableKind.BV, m1=1.0, m2=2.0), 0.4)
    assert bv.b == 0.0
    assert bv(np.array([0.01, 0.9])) == pytest.approx([5.0, 5.0])


def test_quantile_params_rejects_strong_neutral_singularity():
    with pytest.raises(ConfigError):
        observable_quantile_params(Observable(ObservableKind.NEUTRAL_SINGULARITY, s=0.8), 0.25)


def test_piecewise_monotone_tabulated_tail_scales_with_branch_count():
    tail = TailFunction.tabulated([0.0, 1.0, 2.0], [1.0, 0.4, 0.0])
    f = Observable(ObservableKind.PIECEWISE_MONOTONE, branches=(
        MonotoneBranch(0.0, 0.5), MonotoneBranch(0.5, 1.0)), tail=tail)
    Q = observable_quantile_params(f, 0.3)
    assert Q.is_tabulated
    assert Q(0.1) == pytest.approx(2.0 * tail.quantile(0.1))
    assert Q(0.5) == pytest.approx(2.0 * tail.quantile(0.5))


def test_quantile_model_validation():
    with pytest.raises(ConfigError):
        QuantileModel(K=1.0, b=1.0)
    with pytest.raises(ConfigError):
        QuantileModel(K=-1.0, b=0.1)
    with pytest.raises(ConfigError):
        QuantileModel(K=1.0, b=0.2, eps=VanishingFactor(0.5))
    with pytest.raises(ConfigError):
        QuantileModel(table_u=(0.0, 0.5, 1.0), table_q=(1.0, 2.0))


def test_vanishing_factor_is_bounded_and_vanishes():
    eps = VanishingFactor(0.5)
    assert eps(1.0) == 1.0
    assert eps(1e-300) < 0.04


@pytest.mark.parametrize("m,b", [(1.0, 0.0), (2.0, 0.2), (1.5, 0.5), (2.0, 1.0 / 3.0)])
def test_power_integral_closed_form_matches_quadrature(m, b):
    Q = QuantileModel(K=1.7, b=b)
    for lo, hi in [(0.0, 1.0), (0.0, 1e-3), (0.01, 0.4)]:
        closed = Q.power_integral(m, lo, hi, method='closed').value
        quad = Q.power_integral(m, lo, hi, method='quad').value
        assert quad == pytest.approx(closed, rel=1e-6)


def test_power_integral_with_vanishing_factor_uses_quadrature():
    Q = QuantileModel(K=1.0, b=0.4, eps=VanishingFactor(0.3))
    value = Q.power_integral(2.0, 0.0, 1.0).value
    assert 0.0 < value < QuantileModel(K=1.0, b=0.4).power_integral(2.0, 0.0, 1.0).value


def test_tabulated_power_integral():
    Q = QuantileModel(table_u=(0.0, 0.25, 1.0), table_q=(4.0, 1.0))
    assert Q.power_integral(1.0, 0.0, 1.0).value == pytest.approx(0.25 * 4.0 + 0.75)
    assert Q.power_integral(2.0, 0.1, 0.5).value == pytest.approx(0.15 * 16.0 + 0.25)


def test_quantile_model_round_trip():
    for Q in (QuantileModel(K=2.0, b=0.3), QuantileModel(K=1.0, b=0.4, eps=VanishingFactor(0.2)),
              QuantileModel(table_u=(0.0, 0.5, 1.0), table_q=(2.0, 1.0))):
        assert QuantileModel.from_dict(Q.to_dict()) == Q


def test_estimate_center_of_constants_is_exact():
    spec = MapSpec.lsv(0.25)
    assert estimate_center(Observable(ObservableKind.BV, m1=3.0, m2=0.0), spec, 100_000, 1) == (3.0, 0.0)
    indicator = Observable(ObservableKind.INDICATOR, interval=(0.0, 1.0))
    assert estimate_center(indicator, spec, 100_000, 1) == (1.0, 0.0)


def test_estimate_center_budget_floor():
    with pytest.raises(StatisticalPowerError):
        estimate_center(Observable(ObservableKind.INDICATOR), MapSpec.lsv(0.25), 1000, 1)


def test_estimate_center_seeds_agree():
    spec = MapSpec.lsv(0.25)
    f = Observable(ObservableKind.INDICATOR, interval=(0.5, 1.0))
    m1, s1 = estimate_center(f, spec, 400_000, 1)
    m2, s2 = estimate_center(f, spec, 400_000, 2)
    assert 0.0 < m1 < 1.0
    assert abs(m1 - m2) <= 3.0 * math.hypot(s1, s2) + 1e-12


def test_fit_quantile_scale_dominates_samples():
    spec = MapSpec.lsv(0.25)
    f = Observable(ObservableKind.NEUTRAL_SINGULARITY, s=0.25)
    levels = np.geomspace(1e-4, 0.5, 25)
    Q = fit_quantile_scale(f, spec, 200_000, 3, levels)
    assert Q.b == pytest.approx(1.0 / 3.0)
    samples = np.abs(sample_observable(f, spec, 200_000, 3)).ravel()
    empirical = np.quantile(samples, 1.0 - levels, method='inverted_cdf')
    assert np.all(Q(levels) >= empirical * (1.0 - 1e-12))
    # tight at some level
    assert np.max(empirical / Q(levels)) == pytest.approx(1.0)


def test_neutral_singularity_tail_exponent():
    spec = MapSpec.lsv(0.25)
    f = Observable(ObservableKind.NEUTRAL_SINGULARITY, s=0.25)
    samples = np.abs(sample_observable(f, spec, 1_000_000, 11)).ravel()
    levels = np.geomspace(2e-4, 1e-2, 8)
    t = np.quantile(samples, 1.0 - levels, method='inverted_cdf')
    survival = np.array([np.mean(samples > level) for level in t])
    slope = np.polyfit(np.log(t), np.log(survival), 1)[0]
    assert slope == pytest.approx(-(1.0 - 0.25) / 0.25, abs=0.2)

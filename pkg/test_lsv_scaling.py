"""
Long scaling runs on the LSV map (gamma = 1/4)
"""
import json
import math
import os

import pytest
from click.testing import CliRunner

from cli import cli
from dynamics import MapSpec
from montecarlo import (SimConfig, critical_growth, empirical_moment, empirical_tail, holder_quantile, ks_normal,
                        scaling_fit, sigma2_estimate, simulate, with_estimated_center)
from observables import Observable, ObservableKind
from replica_pool import replica_pool

pytestmark = pytest.mark.slow

GAMMA = 0.25
INDICATOR = Observable(ObservableKind.INDICATOR, interval=(0.5, 1.0))
SINGULAR = Observable(ObservableKind.NEUTRAL_SINGULARITY, s=0.25)


def lsv_config(observable=INDICATOR, exponents=range(10, 16), **kwargs):
    fields = {'map': MapSpec.lsv(GAMMA), 'observable': observable,
              'n_grid': tuple(2 ** k for k in exponents), 'replicas': 2000, 'seed': 20240101}
    fields.update(kwargs)
    return with_estimated_center(SimConfig(**fields))


def moment_points(cfg, p=2.0):
    return [(r['n'], r['estimate'], r['stderr']) for r in empirical_moment(cfg, p).rows]


@pytest.fixture
def restore_workers():
    workers = replica_pool.workers
    yield
    replica_pool.set_workers(workers)


def test_bounded_observable_grows_linearly():
    fit = scaling_fit(moment_points(lsv_config()))
    assert fit.exponent == pytest.approx(1.0, abs=0.15)


def test_critical_observable_grows_like_n_log_n():
    check = critical_growth(moment_points(lsv_config(SINGULAR, range(11, 16))))
    assert check.ratio_spread < 2.0
    assert 1.0 <= check.exponent <= 1.25


def test_normalized_sum_is_close_to_normal():
    cfg = lsv_config(exponents=(15,), replicas=4000, orbit_length=1_000_000)
    sigma2 = sigma2_estimate(cfg).rows[0]['estimate']
    assert sigma2 > 0.0
    n = cfg.max_n
    stats = simulate(cfg)
    assert ks_normal(stats.final_sum[:, 0] / math.sqrt(n), math.sqrt(sigma2)) <= 0.03


def test_holder_quantile_is_stable_in_n():
    cfg = lsv_config(exponents=(12, 14), holder_beta=0.2)
    estimates = [r['estimate'] for r in holder_quantile(cfg).rows]
    assert max(estimates) / min(estimates) <= 1.5


def test_tail_decays_faster_than_predicted_order():
    cfg = lsv_config(exponents=range(8, 12), replicas=100_000)
    stats = simulate(cfg)
    chosen = None
    for x in (0.05, 0.075, 0.1, 0.15, 0.2):
        rows = [empirical_tail(cfg, x, n, stats).rows[0] for n in cfg.n_grid]
        if all(1e-4 <= r['estimate'] <= 1e-1 and not r['flags'] for r in rows):
            chosen = rows
            break
    assert chosen is not None, "no level keeps every tail probability in [1e-4, 1e-1]"
    slope = scaling_fit([(r['n'], r['estimate'], r['stderr']) for r in chosen]).exponent
    assert slope <= -2.5


def test_outputs_do_not_depend_on_worker_count(tmp_path, restore_workers):
    config = tmp_path / 'lsv.json'
    config.write_text(json.dumps({
        'map': {'gamma': GAMMA},
        'observable': {'kind': 'Indicator', 'interval': [0.5, 1.0]},
        'sim': {'n_grid': [2 ** k for k in range(10, 16)], 'replicas': 2000, 'seed': 20240101},
    }))
    runner = CliRunner()
    outputs = []
    for workers in (1, 2, 8):
        out = str(tmp_path / f'workers{workers}')
        result = runner.invoke(cli, ['--workers', str(workers), 'simulate', '--config', str(config), '--out', out])
        assert result.exit_code == 0, result.output
        outputs.append([open(os.path.join(out, name), 'rb').read() for name in ('birkhoff.csv', 'replicas.csv')])
    assert outputs[0] == outputs[1] == outputs[2]

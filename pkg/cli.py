"""
Command line front end

    python cli.py regimes --gamma 0.25 --b 0 --p 2
    python cli.py bounds --config experiment.json --out results/bounds
    python cli.py verify moments --config experiment.json --set sim.replicas=2000
    python cli.py runs --out results/bounds --config-hash <hash>

Every command validates its inputs before writing anything, then writes CSV and
JSON outputs, a manifest.json and a row in the run registry. Exit codes: 0 on
success, 2 on configuration errors, 3 on quadrature or statistical-power failures.
"""
import json
import logging
import math
import os
import sys
import time
from logging.config import dictConfig
from typing import Any, Dict, Optional, Sequence

import click
import numpy as np
import pandas as pd
from pythonjsonlogger import jsonlogger

from bounds import (BoundInputs, check_conditions, deviation_bound, large_deviation_bound, regime_predict,
                    rosenthal_bound)
from coefficients import AlphaModel
from config import ARTIFACT_VERSION, DEBUG_MODE, LOG_FORMAT, LOG_LEVEL, RESULTS_DIR, RUN_REGISTRY_DB
from errors import ConfigError, IntermittencyError, KeyMismatchError
from experiment_config import ExperimentConfig, load_config
from montecarlo import (CRITICAL_EXPONENT_RANGE, CRITICAL_RATIO_SPREAD, EmpiricalResult, bound_level, critical_growth,
                        empirical_moment, empirical_tail, holder_quantile, ks_normal, scaling_fit, sigma2_estimate,
                        simulate, with_estimated_center)
from observables import QuantileModel
from replica_pool import replica_pool
from run_registry import RunManifest, RunRegistry

logger = logging.getLogger(__name__)

REPORT_KEYS = ('gamma', 'b', 'observable', 'p')
DEFAULT_TOLERANCE = 0.15
KS_TOLERANCE = 0.03
HOLDER_RATIO = 1.5


def setup_logging(level: str = LOG_LEVEL, fmt: str = LOG_FORMAT):
    """JSON (or plain) log lines on stderr"""
    formatter: Dict[str, Any] = {'format': '%(asctime)s %(levelname)s %(name)s %(message)s'}
    if fmt == 'json':
        formatter = {'()': jsonlogger.JsonFormatter, 'fmt': '%(asctime)s %(levelname)s %(name)s %(message)s'}
    dictConfig({
        'version': 1,
        'disable_existing_loggers': False,
        'formatters': {'default': formatter},
        'handlers': {
            'console': {
                'class': 'logging.StreamHandler',
                'formatter': 'default',
                'stream': sys.stderr,
            }
        },
        'root': {
            'level': level.upper(),
            'handlers': ['console']
        }
    })


class IntermittencyGroup(click.Group):
    """Click group that turns library errors into exit codes"""

    def invoke(self, ctx: click.Context):
        try:
            return super().invoke(ctx)
        except IntermittencyError as e:
            logger.error(f"{type(e).__name__}: {e}")
            click.echo(f"Error: {e}", err=True)
            ctx.exit(e.exit_code)


def _key(row: Dict[str, Any]) -> tuple:
    return tuple(round(float(row[k]), 12) if k != 'observable' else str(row[k]) for k in REPORT_KEYS)


def _is_true(value: Any) -> bool:
    return str(value).strip().lower() == 'true'


def write_report(empirical: Sequence[Dict[str, Any]], predicted: Sequence[Dict[str, Any]],
                 tolerance: float = DEFAULT_TOLERANCE) -> Dict[str, Any]:
    """Verdict rows per (gamma, b, observable, p) key.

    Rows predicted with a log factor pass on the n log n criterion: ratio spread
    below CRITICAL_RATIO_SPREAD and plain exponent in CRITICAL_EXPONENT_RANGE.
    Other rows pass when the fitted exponent is within tolerance of the prediction.
    """
    empirical, predicted = list(empirical), list(predicted)
    if not empirical:
        raise KeyMismatchError("empirical input is empty")
    fitted = {_key(row): row for row in empirical}
    expected = {_key(row): row for row in predicted}
    if set(fitted) != set(expected):
        missing = sorted(set(fitted) ^ set(expected))
        raise KeyMismatchError(f"empirical and predicted keys differ: {missing}")

    rows = []
    for key in sorted(fitted):
        got = float(fitted[key]['fitted_exponent'])
        want = float(expected[key]['moment_exponent'])
        difference = abs(got - want)
        row = {
            **dict(zip(REPORT_KEYS, key)),
            'fitted_exponent': got,
            'predicted_exponent': want,
            'difference': difference,
        }
        if _is_true(expected[key].get('log_factor')):
            spread = float(fitted[key].get('ratio_spread', math.nan))
            low, high = CRITICAL_EXPONENT_RANGE
            passed = spread < CRITICAL_RATIO_SPREAD and low <= got <= high
            row.update(criterion='n log n', ratio_spread=spread)
        else:
            passed = difference <= tolerance
            row['criterion'] = 'exponent'
        row['verdict'] = 'pass' if passed else 'fail'
        rows.append(row)
    return {'tolerance': tolerance, 'rows': rows, 'passed': all(r['verdict'] == 'pass' for r in rows)}


class RunOutput:
    """Collects outputs in memory and writes them together once a command has succeeded"""

    def __init__(self, command: str, out_dir: str, config: Optional[ExperimentConfig] = None):
        self.command = command
        self.out_dir = out_dir
        self.config = config
        self.started = time.perf_counter()
        self.files: Dict[str, Any] = {}
        self.details: Dict[str, Any] = {}

    def frame(self, name: str, frame: pd.DataFrame):
        self.files[name] = frame

    def document(self, name: str, data: Any):
        self.files[name] = data

    def note(self, key: str, value: Any):
        """Extra provenance recorded under the manifest's details"""
        self.details[key] = value

    def result(self, stem: str, result: EmpiricalResult):
        self.files[f'{stem}.csv'] = result.to_frame()
        self.files[f'{stem}.json'] = result.to_dict()

    def commit(self) -> RunManifest:
        os.makedirs(self.out_dir, exist_ok=True)
        written = []
        for name, content in self.files.items():
            path = os.path.join(self.out_dir, name)
            if isinstance(content, pd.DataFrame):
                content.to_csv(path, index=False)
            else:
                with open(path, 'w', encoding='utf-8') as fh:
                    json.dump(content, fh, indent=2, sort_keys=True)
            written.append(path)

        manifest = RunManifest(
            command=self.command,
            config_path=self.config.source_path if self.config else '',
            config_hash=self.config.config_hash if self.config else '',
            artifact_version=ARTIFACT_VERSION,
            wall_clock=time.perf_counter() - self.started,
            outputs=written,
            details={**self.details, 'pool': replica_pool.get_status()},
        )
        manifest.write(os.path.join(self.out_dir, 'manifest.json'))
        registry_path = RUN_REGISTRY_DB if os.path.isabs(RUN_REGISTRY_DB) \
            else os.path.join(self.out_dir, RUN_REGISTRY_DB)
        registry = RunRegistry(registry_path)
        registry.record_run(manifest)
        registry.close()
        logger.info(f"{self.command}: wrote {len(written)} files to {self.out_dir}")
        return manifest


def config_options(fn):
    fn = click.option('--out', 'out_dir', default=RESULTS_DIR, show_default=True,
                      help='Output directory')(fn)
    fn = click.option('--set', 'overrides', multiple=True, metavar='PATH=VALUE',
                      help='Override one config leaf, e.g. sim.replicas=2000')(fn)
    fn = click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
                      help='JSON experiment file')(fn)
    return fn


@click.group(cls=IntermittencyGroup)
@click.option('--log-level', default='DEBUG' if DEBUG_MODE else LOG_LEVEL, show_default=True)
@click.option('--workers', type=click.IntRange(min=1), default=None, help='Worker threads (overrides INTERMITTENCY_WORKERS)')
def cli(log_level: str, workers: Optional[int]):
    """Moment, deviation and invariance-principle bounds for intermittent maps"""
    setup_logging(log_level)
    replica_pool.set_workers(workers)


def _regime_row(gamma: float, b: float, p: float) -> Dict[str, Any]:
    row = regime_predict(gamma, b, p).to_dict()
    alpha = AlphaModel.power_law(gamma)
    quantile = QuantileModel(K=1.0, b=b)
    for which in ('WM', 'WM0', 'SM', 'DMR'):
        row[which] = check_conditions(alpha, quantile, p, which).holds
    return row


@cli.command()
@click.option('--gamma', type=float, multiple=True, required=True)
@click.option('--b', 'bs', type=float, multiple=True, required=True)
@click.option('--p', 'ps', type=float, multiple=True, required=True)
@click.option('--out', 'out_dir', default=RESULTS_DIR, show_default=True)
def regimes(gamma, bs, ps, out_dir):
    """Predicted moment growth, Hölder exponent and condition table"""
    rows = [_regime_row(g, b, p) for g in gamma for b in bs for p in ps]
    frame = pd.DataFrame(rows)
    click.echo(frame.to_string(index=False))
    output = RunOutput('regimes', out_dir)
    output.frame('regimes.csv', frame)
    output.document('regimes.json', rows)
    output.commit()


@cli.command()
@config_options
def bounds(config_path, overrides, out_dir):
    """Evaluate the deviation, Rosenthal and large-deviation bounds over the configured grids"""
    config = load_config(config_path, overrides)
    config.require('bounds')
    section = config.bounds
    reports = []
    for n in section.n_grid:
        inputs = config.bound_inputs(n)
        for x in section.x_grid:
            reports.append(deviation_bound(inputs, x, majorant=section.majorant, method=section.method))
            reports.extend(large_deviation_bound(inputs, x, v) for v in section.variants)
        if inputs.p >= 2.0:
            reports.extend(rosenthal_bound(inputs, form, section.method) for form in section.rosenthal_forms)
        else:
            logger.info(f"Skipping Rosenthal bounds for p={inputs.p} < 2")

    quantile = config.quantile_model()
    rows = []
    for report in reports:
        for term, value in report.terms.items():
            rows.append({
                'n': report.parameters['n'],
                'x': report.parameters.get('x', math.nan),
                'K': math.nan if quantile.is_tabulated else quantile.K,
                'bound': report.bound,
                'term': term,
                'value': value,
                'quadrature_error': report.quadrature_errors.get(term, 0.0),
            })
    output = RunOutput('bounds', out_dir, config)
    output.note('quantile', {**quantile.to_dict(), 'source': config.quantile_source})
    output.frame('bounds.csv', pd.DataFrame(rows))
    output.document('bounds.json', [r.to_dict() for r in reports])
    output.commit()


@cli.command(name='simulate')
@config_options
@click.option('--holder/--no-holder', default=False, help='Also compute Hölder norms of the Donsker paths')
def simulate_command(config_path, overrides, out_dir, holder):
    """Simulate replicas and tabulate Birkhoff-sum statistics"""
    config = load_config(config_path, overrides)
    cfg = with_estimated_center(config.sim_config())
    stats = simulate(cfg, holder=holder)

    result = EmpiricalResult(config_hash=cfg.config_hash, seed=cfg.seed)
    for p in cfg.p_list:
        result.extend(empirical_moment(cfg, p, stats))
    for x in cfg.x_grid:
        for n in cfg.n_grid:
            result.extend(empirical_tail(cfg, x, n, stats))
    if holder:
        result.extend(holder_quantile(cfg, replica_stats=stats))

    per_replica = pd.DataFrame({
        'replica': np.repeat(np.arange(stats.replicas), len(stats.n_grid)),
        'n': np.tile(stats.n_grid, stats.replicas),
        'max_abs': stats.max_abs.ravel(),
        'final_sum': stats.final_sum.ravel(),
    })
    output = RunOutput('simulate', out_dir, config)
    output.result('birkhoff', result)
    output.frame('replicas.csv', per_replica)
    output.document('center.json', {'center': cfg.observable.center, 'stderr': cfg.observable.center_stderr})
    output.commit()


@cli.group(cls=IntermittencyGroup)
def verify():
    """Compare empirical statistics with predicted behaviour"""


def _observable_label(config: ExperimentConfig, source: str) -> str:
    return config.observable.kind.value if source == 'map' else source


@verify.command()
@config_options
@click.option('--tolerance', type=float, default=None, help='Exponent tolerance (default bounds.tolerance or 0.15)')
def moments(config_path, overrides, out_dir, tolerance):
    """Fit moment growth exponents and compare them with the predicted regime"""
    config = load_config(config_path, overrides)
    cfg = with_estimated_center(config.sim_config())
    if tolerance is None:
        tolerance = config.bounds.tolerance if config.bounds else DEFAULT_TOLERANCE
    gamma, b = cfg.map.gamma, config.quantile_exponent()
    label = _observable_label(config, cfg.source)
    stats = simulate(cfg)

    result = EmpiricalResult(config_hash=cfg.config_hash, seed=cfg.seed)
    fits, predictions = [], []
    for p in cfg.p_list:
        moment = empirical_moment(cfg, p, stats)
        result.extend(moment)
        if cfg.source == 'map':
            prediction = regime_predict(gamma, b, p)
            expected, log_factor = prediction.moment_exponent, prediction.log_factor
        else:
            expected, log_factor = p / 2.0, False
        points = [(r['n'], r['estimate'], r['stderr']) for r in moment.rows]
        fit = scaling_fit(points)
        key = {'gamma': gamma, 'b': b, 'observable': label, 'p': p}
        row = {**key, 'fitted_exponent': fit.exponent, 'stderr': fit.stderr, 'log_coefficient': None,
               'ratio_spread': math.nan}
        if log_factor:
            # log-corrected fit is a diagnostic only
            if len(points) >= 4:
                row['log_coefficient'] = scaling_fit(points, with_log=True).log_coefficient
            row['ratio_spread'] = critical_growth(points).ratio_spread
        fits.append(row)
        predictions.append({**key, 'moment_exponent': expected, 'log_factor': log_factor})

    output = RunOutput('verify moments', out_dir, config)
    output.result('moments', result)
    output.frame('fits.csv', pd.DataFrame(fits))
    output.frame('predictions.csv', pd.DataFrame(predictions))
    output.document('comparison.json', write_report(fits, predictions, tolerance))
    output.commit()


@verify.command()
@config_options
def tails(config_path, overrides, out_dir):
    """Tail probabilities over n, their decay slope and the matching large-deviation bound.

    Oracle sources get the empirical slope only; the map-based prediction and
    bound do not apply to them.
    """
    config = load_config(config_path, overrides)
    cfg = with_estimated_center(config.sim_config())
    if not cfg.x_grid:
        raise ConfigError("verify tails needs sim.x_grid")
    on_map = cfg.source == 'map'
    if on_map:
        prediction = regime_predict(cfg.map.gamma, config.quantile_exponent(), 2.0)
        p = 2.0 if prediction.ld_variant == 'WB2' else prediction.ld_p
        quantile = config.quantile_model()
    stats = simulate(cfg)

    result = EmpiricalResult(config_hash=cfg.config_hash, seed=cfg.seed)
    verdicts = []
    for x in cfg.x_grid:
        rows = []
        for n in cfg.n_grid:
            tail = empirical_tail(cfg, x, n, stats)
            result.extend(tail)
            rows.append(tail.rows[0])
        low_power = any('low-power' in r['flags'] for r in rows)
        positive = [(r['n'], r['estimate'], r['stderr']) for r in rows if r['estimate'] > 0.0]
        slope = scaling_fit(positive).exponent if len(positive) >= 3 else math.nan
        verdict = {'x': x, 'slope': slope, 'low_power': low_power}
        if not on_map:
            verdict.update(slope_limit=math.nan, bound_variant='', bound_level=math.nan, bound_total=math.nan,
                           verdict='not-applicable')
            verdicts.append(verdict)
            continue
        limit = -(prediction.ld_p - 1.0) + 0.5
        level = bound_level(cfg, x)
        inputs = BoundInputs(alpha=config.alpha_pair(), Q=quantile, n=cfg.max_n, p=p)
        bound = large_deviation_bound(inputs, level, prediction.ld_variant)
        verdict.update(
            slope_limit=limit,
            bound_variant=prediction.ld_variant,
            bound_level=level,
            bound_total=bound.total,
            verdict='low-power' if low_power or math.isnan(slope) else ('pass' if slope <= limit else 'fail'),
        )
        verdicts.append(verdict)

    output = RunOutput('verify tails', out_dir, config)
    if on_map:
        output.note('quantile', {**quantile.to_dict(), 'source': config.quantile_source})
    output.result('tails', result)
    output.frame('tail_verdicts.csv', pd.DataFrame(verdicts))
    output.document('tail_verdicts.json', verdicts)
    output.commit()


@verify.command()
@config_options
@click.option('--ks-tolerance', type=float, default=KS_TOLERANCE, show_default=True)
def clt(config_path, overrides, out_dir, ks_tolerance):
    """KS distance of S_n / (sigma sqrt(n)) to the standard normal at the largest n"""
    config = load_config(config_path, overrides)
    cfg = with_estimated_center(config.sim_config())
    variance = sigma2_estimate(cfg, config.bandwidth)
    sigma2 = variance.rows[0]['estimate']
    if not sigma2 > 0.0:
        raise ConfigError(f"estimated long-run variance {sigma2} is not positive; the CLT check does not apply")
    n = cfg.max_n
    stats = simulate(cfg)
    normalized = stats.final_sum[:, stats.column(n)] / math.sqrt(n)
    distance = ks_normal(normalized, math.sqrt(sigma2))
    verdict = {'n': n, 'sigma2': sigma2, 'ks_distance': distance, 'tolerance': ks_tolerance,
               'verdict': 'pass' if distance <= ks_tolerance else 'fail'}
    logger.info(f"KS distance at n={n}: {distance:.4f}")

    output = RunOutput('verify clt', out_dir, config)
    output.result('sigma2', variance)
    output.document('clt.json', verdict)
    output.commit()


@verify.command()
@config_options
@click.option('--max-ratio', type=float, default=HOLDER_RATIO, show_default=True)
def hip(config_path, overrides, out_dir, max_ratio):
    """Stability of the Hölder-norm quantile of the Donsker path across n"""
    config = load_config(config_path, overrides)
    cfg = with_estimated_center(config.sim_config())
    result = holder_quantile(cfg)
    estimates = [r['estimate'] for r in result.rows]
    ratio = max(estimates) / min(estimates) if min(estimates) > 0.0 else math.inf
    verdict = {'beta': cfg.holder_beta, 'level': cfg.holder_level, 'ratio': ratio, 'max_ratio': max_ratio,
               'approximate': any(r['flags'] for r in result.rows),
               'verdict': 'pass' if ratio <= max_ratio else 'fail'}

    output = RunOutput('verify hip', out_dir, config)
    output.result('holder', result)
    output.document('hip.json', verdict)
    output.commit()


@cli.command()
@click.option('--empirical', 'empirical_path', required=True, type=click.Path(dir_okay=False))
@click.option('--predicted', 'predicted_path', required=True, type=click.Path(dir_okay=False))
@click.option('--tolerance', type=float, default=DEFAULT_TOLERANCE, show_default=True)
@click.option('--out', 'out_dir', default=RESULTS_DIR, show_default=True)
def report(empirical_path, predicted_path, tolerance, out_dir):
    """Merge fitted and predicted exponent tables into a comparison document"""
    frames = []
    for path in (empirical_path, predicted_path):
        try:
            frames.append(pd.read_csv(path))
        except FileNotFoundError as e:
            raise ConfigError(f"report input not found: {path}") from e
        except pd.errors.EmptyDataError:
            frames.append(pd.DataFrame())
    for frame, needed in zip(frames, ('fitted_exponent', 'moment_exponent')):
        if not frame.empty and needed not in frame.columns:
            raise KeyMismatchError(f"report input lacks the '{needed}' column")
    document = write_report(frames[0].to_dict('records'), frames[1].to_dict('records'), tolerance)

    output = RunOutput('report', out_dir)
    output.document('comparison.json', document)
    output.commit()


@cli.command()
@click.option('--db', 'database', default=None,
              help='Registry database (default RUN_REGISTRY_DB under --out)')
@click.option('--out', 'out_dir', default=RESULTS_DIR, show_default=True)
@click.option('--config-hash', default=None, help='List the runs of one configuration')
@click.option('--run-id', type=int, default=None, help='Show one run with its outputs')
def runs(database, out_dir, config_hash, run_id):
    """Query the run registry"""
    if database is None:
        database = RUN_REGISTRY_DB if os.path.isabs(RUN_REGISTRY_DB) else os.path.join(out_dir, RUN_REGISTRY_DB)
    if not os.path.exists(database):
        raise ConfigError(f"run registry not found: {database}")
    registry = RunRegistry(database)
    try:
        document: Dict[str, Any] = {'stats': registry.get_run_stats()}
        if config_hash is not None:
            document['runs'] = registry.find_runs(config_hash)
        if run_id is not None:
            run = registry.get_run(run_id)
            if run is None:
                raise ConfigError(f"no run with id {run_id} in {database}")
            document['run'] = run
    finally:
        registry.close()
    click.echo(json.dumps(document, indent=2, sort_keys=True, default=str))


def run_command(argv: Sequence[str]) -> int:
    """Run the CLI with argv and return its exit code"""
    try:
        code = cli.main(args=list(argv), prog_name='intermittency', standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        return 1
    return code if isinstance(code, int) else 0


if __name__ == '__main__':
    sys.exit(run_command(sys.argv[1:]))

"""
Empirical side: Birkhoff sums over replica orbits and their statistics

Replicas are simulated in fixed blocks by the replica pool. Every statistic is a
pure function of the per-replica arrays, which are reduced in replica order.
"""
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from bounds import regime_predict
from config import DEFAULT_BURN_IN, DEFAULT_CENTER_BUDGET, HOLDER_EXACT_LIMIT, MIN_STAT_REPLICAS
from dynamics import MapSpec, initial_points, iterate_block, mdep_block
from errors import ConfigError, DegenerateDesignError, DomainError, StatisticalPowerError
from observables import Observable, estimate_center, observable_quantile_params
from replica_pool import replica_pool

logger = logging.getLogger(__name__)

SOURCES = ('map', 'mdep', 'rademacher')
RESULT_COLUMNS = ['n', 'statistic', 'p_or_x_or_beta', 'estimate', 'stderr', 'replicas', 'seed', 'flags']
LOW_POWER_COUNT = 5
MIN_KS_SAMPLES = 100
SIGMA2_BATCHES = 20
CRITICAL_RATIO_SPREAD = 2.0
CRITICAL_EXPONENT_RANGE = (1.0, 1.25)


def canonical_json(data: Any) -> str:
    """Key-sorted compact JSON; the input to every config hash"""
    return json.dumps(data, sort_keys=True, separators=(',', ':'))


def config_digest(data: Any) -> str:
    return hashlib.sha256(canonical_json(data).encode('utf-8')).hexdigest()


@dataclass(frozen=True)
class SimConfig:
    """One Monte Carlo experiment.

    source='map' iterates the map and evaluates the observable along the orbit;
    'mdep' and 'rademacher' replace the orbit by synthetic oracle sequences with
    known long-run variance.
    """

    map: MapSpec
    observable: Observable
    n_grid: Tuple[int, ...]
    replicas: int = MIN_STAT_REPLICAS
    seed: int = 0
    burn_in: int = DEFAULT_BURN_IN
    p_list: Tuple[float, ...] = (2.0,)
    x_grid: Tuple[float, ...] = ()
    holder_beta: float = 0.2
    holder_level: float = 0.95
    source: str = 'map'
    weights: Tuple[float, ...] = (1.0,)
    orbit_length: int = 1_000_000
    center_budget: int = DEFAULT_CENTER_BUDGET
    config_hash: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'n_grid', tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, 'p_list', tuple(float(p) for p in self.p_list))
        object.__setattr__(self, 'x_grid', tuple(float(x) for x in self.x_grid))
        object.__setattr__(self, 'weights', tuple(float(w) for w in self.weights))
        grid = np.asarray(self.n_grid)
        if grid.size == 0 or np.any(grid < 1) or np.any(np.diff(grid) <= 0):
            raise ConfigError(f"n_grid must be a strictly increasing list of positive integers: {self.n_grid}")
        if self.replicas < 1:
            raise ConfigError(f"replicas must be positive, got {self.replicas}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.burn_in < 0:
            raise ConfigError(f"burn_in must be non-negative, got {self.burn_in}")
        if any(p <= 0 for p in self.p_list):
            raise ConfigError(f"moment orders must be positive: {self.p_list}")
        if not 0.0 < self.holder_beta < 0.5:
            raise ConfigError(f"holder_beta must lie in (0, 1/2), got {self.holder_beta}")
        if not 0.0 < self.holder_level < 1.0:
            raise ConfigError(f"holder_level must lie in (0, 1), got {self.holder_level}")
        if self.source not in SOURCES:
            raise ConfigError(f"unknown source '{self.source}', expected one of {SOURCES}")
        if not self.weights:
            raise ConfigError("mdep weights must be a non-empty list")
        if self.orbit_length < 1:
            raise ConfigError(f"orbit_length must be positive, got {self.orbit_length}")
        if self.source == 'map':
            self.observable.validate_for(self.map.gamma)
        if not self.config_hash:
            object.__setattr__(self, 'config_hash', config_digest(self.to_dict()))

    @property
    def max_n(self) -> int:
        return self.n_grid[-1]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n_grid': list(self.n_grid),
            'replicas': self.replicas,
            'seed': self.seed,
            'burn_in': self.burn_in,
            'p_list': list(self.p_list),
            'x_grid': list(self.x_grid),
            'holder_beta': self.holder_beta,
            'holder_level': self.holder_level,
            'source': self.source,
            'weights': list(self.weights),
            'orbit_length': self.orbit_length,
            'center_budget': self.center_budget,
            'map': self.map.to_dict(),
            'observable': self.observable.to_dict(),
        }


@dataclass
class EmpiricalResult:
    """Rows of (n, statistic, parameter) estimates from one configuration"""

    rows: List[Dict[str, Any]] = field(default_factory=list)
    config_hash: str = ''
    seed: int = 0

    def add(self, n: int, statistic: str, param: float, estimate: float, stderr: float,
            replicas: int, flags: Sequence[str] = ()):
        self.rows.append({
            'n': int(n),
            'statistic': statistic,
            'p_or_x_or_beta': float(param),
            'estimate': float(estimate),
            'stderr': float(stderr),
            'replicas': int(replicas),
            'seed': int(self.seed),
            'flags': ';'.join(flags),
        })

    def extend(self, other: 'EmpiricalResult') -> 'EmpiricalResult':
        self.rows.extend(other.rows)
        return self

    def select(self, statistic: str, param: Optional[float] = None) -> List[Dict[str, Any]]:
        return [row for row in self.rows if row['statistic'] == statistic
                and (param is None or row['p_or_x_or_beta'] == param)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=RESULT_COLUMNS)

    def to_csv(self, path: str):
        self.to_frame().to_csv(path, index=False)

    def to_dict(self) -> Dict[str, Any]:
        return {'config_hash': self.config_hash, 'seed': self.seed, 'rows': list(self.rows)}

    def to_json(self, path: str):
        with open(path, 'w', encoding='utf-8') as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


@dataclass
class ReplicaStatistics:
    """Per-replica statistics at each n of the grid; arrays have shape (replicas, len(n_grid))"""

    n_grid: Tuple[int, ...]
    max_abs: np.ndarray
    final_sum: np.ndarray
    holder: Optional[np.ndarray] = None
    holder_approximate: bool = False

    @property
    def replicas(self) -> int:
        return self.max_abs.shape[0]

    def column(self, n: int) -> int:
        try:
            return self.n_grid.index(int(n))
        except ValueError:
            raise ConfigError(f"n={n} is not on the simulated grid {self.n_grid}") from None


@dataclass(frozen=True)
class BirkhoffStats:
    S: np.ndarray
    max_abs: float


@dataclass(frozen=True)
class HolderNorm:
    seminorm: float
    norm: float
    approximate: bool = False


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    stderr: float
    log_coefficient: Optional[float]
    intercept: float
    points: int

    def to_dict(self) -> Dict[str, Any]:
        return {'exponent': self.exponent, 'stderr': self.stderr, 'log_coefficient': self.log_coefficient,
                'intercept': self.intercept, 'points': self.points}


@dataclass(frozen=True)
class CriticalGrowth:
    ratio_spread: float
    exponent: float
    passed: bool

    def to_dict(self) -> Dict[str, Any]:
        return {'ratio_spread': self.ratio_spread, 'exponent': self.exponent, 'passed': self.passed}


def birkhoff_stats(orbit, f: Observable) -> BirkhoffStats:
    """Centered partial sums S_k = sum_{i<=k} (f(x_i) - center) and max_k |S_k|"""
    S = np.cumsum(f.evaluate(np.asarray(orbit, dtype=np.float64)) - f.center)
    return BirkhoffStats(S, float(np.max(np.abs(S))) if S.size else 0.0)


def donsker_path(S, X, t: float) -> float:
    """W_n(t) = (S_[nt] + (nt - [nt]) X_{[nt]+1}) / sqrt(n), with S_0 = 0"""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"Donsker time must lie in [0, 1], got {t}")
    S, X = np.asarray(S, dtype=np.float64), np.asarray(X, dtype=np.float64)
    n = S.size
    k = min(int(math.floor(n * t)), n)
    value = S[k - 1] if k > 0 else 0.0
    if k < n:
        value += (n * t - k) * X[k]
    return float(value / math.sqrt(n))


def _holder_seminorm(t: np.ndarray, values: np.ndarray, beta: float, offsets) -> np.ndarray:
    best = np.zeros(values.shape[:-1])
    for d in offsets:
        dt = (t[d:] - t[:-d]) ** beta
        ratio = np.abs(values[..., d:] - values[..., :-d]) / dt
        np.maximum(best, ratio.max(axis=-1), out=best)
    return best


def holder_seminorms(t, values, beta: float) -> Tuple[np.ndarray, bool]:
    """Hölder seminorms of piecewise-linear paths sharing the breakpoints t.

    values has shape (..., len(t)). For piecewise-linear paths the supremum is
    attained at a pair of breakpoints; above HOLDER_EXACT_LIMIT segments only
    index offsets that are powers of two are scanned, which gives a lower bound.
    """
    if not 0.0 < beta < 1.0:
        raise DomainError(f"Hölder exponent must lie in (0, 1), got {beta}")
    t = np.asarray(t, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if t.size < 2:
        return np.zeros(values.shape[:-1]), False
    if np.any(np.diff(t) <= 0):
        raise DomainError("path breakpoints must be strictly increasing")
    segments = t.size - 1
    if segments <= HOLDER_EXACT_LIMIT:
        return _holder_seminorm(t, values, beta, range(1, segments + 1)), False
    offsets = 2 ** np.arange(int(math.log2(segments)) + 1)
    return _holder_seminorm(t, values, beta, offsets), True


def holder_norm(t, values, beta: float) -> HolderNorm:
    """w_beta(f) and |f|_beta = |f(t_0)| + w_beta(f) for one piecewise-linear path"""
    seminorm, approximate = holder_seminorms(t, values, beta)
    if approximate:
        logger.warning(f"Hölder seminorm over {len(t)} breakpoints restricted to dyadic offsets")
    first = abs(float(np.asarray(values)[0]))
    return HolderNorm(float(seminorm), first + float(seminorm), approximate)


def _increments(cfg: SimConfig, block: np.ndarray, length: int) -> np.ndarray:
    if cfg.source == 'map':
        orbits = iterate_block(initial_points(cfg.seed, block), cfg.map, cfg.burn_in, length)
        return cfg.observable.evaluate(orbits) - cfg.observable.center
    return mdep_block(cfg.seed, block, cfg.weights, length, rademacher=cfg.source == 'rademacher')


def with_estimated_center(cfg: SimConfig) -> SimConfig:
    """Attach an estimated nu(f) to the observable of a map experiment"""
    if cfg.source != 'map':
        return cfg
    center, stderr = estimate_center(cfg.observable, cfg.map, cfg.center_budget, cfg.seed, cfg.burn_in)
    return replace(cfg, observable=cfg.observable.with_center(center, stderr), config_hash=cfg.config_hash)


def simulate(cfg: SimConfig, holder: bool = False) -> ReplicaStatistics:
    """max_k<=n |S_k| and S_n for every replica and every n of the grid"""
    grid = np.asarray(cfg.n_grid)
    length = cfg.max_n

    def run(block: np.ndarray):
        S = np.cumsum(_increments(cfg, block, length), axis=1)
        running = np.maximum.accumulate(np.abs(S), axis=1)
        max_abs = running[:, grid - 1]
        final = S[:, grid - 1]
        if not holder:
            return max_abs, final, None, False
        norms = np.empty(max_abs.shape)
        approximate = False
        for j, n in enumerate(grid):
            path = np.concatenate((np.zeros((S.shape[0], 1)), S[:, :n]), axis=1) / math.sqrt(n)
            norms[:, j], approx = holder_seminorms(np.arange(n + 1) / n, path, cfg.holder_beta)
            approximate = approximate or approx
        return max_abs, final, norms, approximate

    logger.info(f"Simulating {cfg.replicas} replicas of {cfg.source} up to n={length}")
    parts = replica_pool.map_blocks(run, range(cfg.replicas))
    norms = np.vstack([p[2] for p in parts]) if holder else None
    approximate = any(p[3] for p in parts)
    if approximate:
        logger.warning("Hölder norms above the exact breakpoint limit are dyadic lower bounds")
    return ReplicaStatistics(
        n_grid=cfg.n_grid,
        max_abs=np.vstack([p[0] for p in parts]),
        final_sum=np.vstack([p[1] for p in parts]),
        holder=norms,
        holder_approximate=approximate,
    )


def _require_replicas(count: int, what: str):
    if count < MIN_STAT_REPLICAS:
        raise StatisticalPowerError(f"{what} needs at least {MIN_STAT_REPLICAS} replicas, got {count}")


def _new_result(cfg: SimConfig) -> EmpiricalResult:
    return EmpiricalResult(config_hash=cfg.config_hash, seed=cfg.seed)


def empirical_moment(cfg: SimConfig, p: float, replica_stats: Optional[ReplicaStatistics] = None) -> EmpiricalResult:
    """E max_k |S_k|^p per n with a jackknife standard error.

    The error also carries p * n * (center stderr) * moment^((p-1)/p), the
    first-order effect of the estimated centering constant.
    """
    replica_stats = replica_stats or simulate(cfg)
    R = replica_stats.replicas
    _require_replicas(R, "empirical_moment")
    values = replica_stats.max_abs ** p
    total = values.sum(axis=0)
    leave_one_out = (total - values) / (R - 1)
    moment = total / R
    jackknife = np.sqrt((R - 1) / R * np.sum((leave_one_out - leave_one_out.mean(axis=0)) ** 2, axis=0))

    result = _new_result(cfg)
    center_se = cfg.observable.center_stderr if cfg.source == 'map' else 0.0
    for j, n in enumerate(replica_stats.n_grid):
        bias = p * n * center_se * moment[j] ** ((p - 1.0) / p)
        result.add(n, 'moment', p, moment[j], math.hypot(jackknife[j], bias), R)
    return result


def empirical_tail(cfg: SimConfig, x: float, n: int,
                   replica_stats: Optional[ReplicaStatistics] = None) -> EmpiricalResult:
    """P(max_k<=n |S_k| >= n x) with a binomial standard error; low-power when fewer than 5 hits are expected"""
    if replica_stats is None or int(n) not in replica_stats.n_grid:
        replica_stats = simulate(replace(cfg, n_grid=(int(n),), config_hash=cfg.config_hash))
    R = replica_stats.replicas
    hits = int(np.count_nonzero(replica_stats.max_abs[:, replica_stats.column(n)] >= n * x))
    prob = hits / R
    flags = []
    if R * prob < LOW_POWER_COUNT:
        flags.append('low-power')
        logger.warning(f"Tail at n={n} x={x} has {hits} hits in {R} replicas")
    result = _new_result(cfg)
    result.add(n, 'tail', x, prob, math.sqrt(prob * (1.0 - prob) / R), R, flags)
    return result


def bound_level(cfg: SimConfig, x: float) -> float:
    """Level at which a chain bound is compared with map tails: x/2 for maps, x for oracles"""
    return x / 2.0 if cfg.source == 'map' else x


def holder_quantile(cfg: SimConfig, beta: Optional[float] = None, level: Optional[float] = None,
                    replica_stats: Optional[ReplicaStatistics] = None) -> EmpiricalResult:
    """Quantile across replicas of the Hölder norm |W_n|_beta of the Donsker path, per n.

    The standard error is half the spread of the order statistics at
    level -/+ sqrt(level (1 - level) / R).
    """
    beta = cfg.holder_beta if beta is None else beta
    level = cfg.holder_level if level is None else level
    if not 0.0 < beta < 0.5:
        raise ConfigError(f"Hölder exponent must lie in (0, 1/2), got {beta}")
    if cfg.source == 'map':
        b = observable_quantile_params(cfg.observable, cfg.map.gamma).b
        delta = regime_predict(cfg.map.gamma, b, 2.0).holder_delta
        if delta is None or beta >= delta:
            logger.warning(f"Hölder exponent {beta} is not below the predicted delta {delta}")
    if replica_stats is None or replica_stats.holder is None or beta != cfg.holder_beta:
        replica_stats = simulate(replace(cfg, holder_beta=beta, config_hash=cfg.config_hash), holder=True)
    R = replica_stats.replicas
    _require_replicas(R, "holder_quantile")
    spread = math.sqrt(level * (1.0 - level) / R)
    lo, hi = max(level - spread, 0.0), min(level + spread, 1.0)
    flags = ['approximate'] if replica_stats.holder_approximate else []

    result = _new_result(cfg)
    for j, n in enumerate(replica_stats.n_grid):
        column = replica_stats.holder[:, j]
        estimate, q_lo, q_hi = np.quantile(column, [level, lo, hi])
        result.add(n, 'holder_quantile', beta, estimate, (q_hi - q_lo) / 2.0, R, flags)
    return result


def _autocovariances(x: np.ndarray, lags: int) -> np.ndarray:
    size = 1 << int(2 * x.size - 1).bit_length()
    spectrum = np.fft.rfft(x, size)
    return np.fft.irfft(spectrum * np.conj(spectrum), size)[:lags + 1] / x.size


def _bartlett(x: np.ndarray, bandwidth: int) -> Tuple[float, float]:
    x = x - x.mean()
    acov = _autocovariances(x, bandwidth)
    k = np.arange(1, bandwidth + 1)
    estimate = acov[0] + 2.0 * np.sum((1.0 - k / (bandwidth + 1.0)) * acov[1:])
    taper_bias = abs(2.0 * np.sum(k / (bandwidth + 1.0) * acov[1:]))
    return float(estimate), float(taper_bias)


def long_orbit(cfg: SimConfig, length: int) -> np.ndarray:
    """Observable values (or oracle values) along the orbit of replica 0"""
    return _increments(cfg, np.array([0]), length)[0]


def default_bandwidth(N: int) -> int:
    """Integer cube root floor(N^(1/3))"""
    h = int(round(N ** (1.0 / 3.0)))
    while h ** 3 > N:
        h -= 1
    while (h + 1) ** 3 <= N:
        h += 1
    return h


def sigma2_estimate(cfg: SimConfig, bandwidth: Optional[int] = None) -> EmpiricalResult:
    """Bartlett-tapered long-run variance over one long orbit.

    The reported error combines the batch-means spread of per-batch estimates
    with the taper bias bound |2 sum_k (k/(h+1)) gamma(k)|.
    """
    N = cfg.orbit_length
    h = int(bandwidth) if bandwidth is not None else default_bandwidth(N)
    if h < 1:
        raise ConfigError(f"bandwidth must be positive, got {h}")
    if N < 100 * h:
        raise ConfigError(f"orbit length {N} is too short for bandwidth {h} (needs {100 * h})")
    x = long_orbit(cfg, N)
    estimate, taper_bias = _bartlett(x, h)

    batches = min(SIGMA2_BATCHES, N // (100 * h))
    if batches < 2:
        raise StatisticalPowerError(f"orbit length {N} gives fewer than two batches at bandwidth {h}")
    size = N // batches
    per_batch = np.array([_bartlett(x[i * size:(i + 1) * size], h)[0] for i in range(batches)])
    batch_se = float(np.std(per_batch, ddof=1) / math.sqrt(batches))
    stderr = math.hypot(batch_se, taper_bias)
    logger.info(f"sigma^2 = {estimate:.5g} +/- {stderr:.2g} (bandwidth {h}, {batches} batches)")

    result = _new_result(cfg)
    result.add(N, 'sigma2', h, estimate, stderr, 1)
    return result


def scaling_fit(points: Sequence[Tuple[float, float, float]], with_log: bool = False) -> ScalingFit:
    """Weighted least squares of log(moment) on log(n) (and log log n).

    Weights are (moment / stderr)**2 from the delta method; when no standard
    error is positive all points weigh the same. The slope error is scaled by
    the weighted residual variance. The log log n column costs one degree of
    freedom, so with_log needs at least four points.
    """
    data = np.asarray(points, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 3 or data.shape[1] != 3:
        raise DegenerateDesignError("scaling fit needs at least three (n, estimate, stderr) points")
    n, y, se = data[:, 0], data[:, 1], data[:, 2]
    if np.any(n <= 1.0) or np.any(y <= 0.0):
        raise DegenerateDesignError("scaling fit needs n > 1 and positive estimates")
    if n.max() / n.min() < 4.0:
        raise DegenerateDesignError("n values must span at least two octaves")

    columns = [np.ones_like(n), np.log(n)]
    if with_log:
        columns.append(np.log(np.log(n)))
    X = np.column_stack(columns)
    relative = se / y
    weights = 1.0 / relative ** 2 if np.all(relative > 0.0) else np.ones_like(n)
    dof = n.size - X.shape[1]
    if dof < 1:
        raise DegenerateDesignError(f"{n.size} points leave no residual degrees of freedom")

    sw = np.sqrt(weights)
    coef, _, rank, _ = np.linalg.lstsq(X * sw[:, None], np.log(y) * sw, rcond=None)
    if rank < X.shape[1]:
        raise DegenerateDesignError("scaling design matrix is rank deficient")
    residual = (np.log(y) - X @ coef) * sw
    scale = float(residual @ residual) / dof
    covariance = scale * np.linalg.inv((X * weights[:, None]).T @ X)
    return ScalingFit(
        exponent=float(coef[1]),
        stderr=float(math.sqrt(max(covariance[1, 1], 0.0))),
        log_coefficient=float(coef[2]) if with_log else None,
        intercept=float(coef[0]),
        points=int(n.size),
    )


def critical_growth(points: Sequence[Tuple[float, float, float]]) -> CriticalGrowth:
    """n log n growth check for moments at the critical order.

    Passes when moment / (n log n) varies by less than a factor of
    CRITICAL_RATIO_SPREAD across the points and the plain power-law exponent
    lies in CRITICAL_EXPONENT_RANGE.
    """
    fit = scaling_fit(points)
    data = np.asarray(points, dtype=np.float64)
    ratio = data[:, 1] / (data[:, 0] * np.log(data[:, 0]))
    spread = float(ratio.max() / ratio.min())
    low, high = CRITICAL_EXPONENT_RANGE
    passed = spread < CRITICAL_RATIO_SPREAD and low <= fit.exponent <= high
    logger.info(f"Critical growth: ratio spread {spread:.3f}, exponent {fit.exponent:.3f}")
    return CriticalGrowth(ratio_spread=spread, exponent=fit.exponent, passed=passed)


def ks_normal(samples, sigma: float) -> float:
    """Kolmogorov-Smirnov distance to N(0, sigma^2)"""
    samples = np.asarray(samples, dtype=np.float64)
    if not sigma > 0.0 or not math.isfinite(sigma):
        raise DomainError(f"sigma must be positive and finite, got {sigma}")
    if samples.size < MIN_KS_SAMPLES:
        raise StatisticalPowerError(f"KS distance needs at least {MIN_KS_SAMPLES} samples, got {samples.size}")
    return float(stats.kstest(samples, 'norm', args=(0.0, sigma)).statistic)

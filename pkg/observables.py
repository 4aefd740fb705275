"""
Test functions, tail functions and quantile models
"""
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from config import DEFAULT_BURN_IN, MIN_CENTER_BUDGET
from dynamics import STREAM_CENTERING, MapSpec, iterate_block, substream
from errors import ConfigError, DomainError, SingularityError, StatisticalPowerError
from quadrature import QuadResult, integrate_singular
from replica_pool import replica_pool

logger = logging.getLogger(__name__)

CENTER_CHUNKS = 8


class TailKind(str, Enum):
    POWER_LAW = 'PowerLaw'
    BOUNDED = 'Bounded'
    TABULATED = 'Tabulated'


@dataclass(frozen=True)
class TailFunction:
    """Non-increasing, right-continuous tail H: [0, inf) -> [0, 1] vanishing at infinity.

    PowerLaw: H(t) = 1 for t < threshold, min(1, (t / scale) ** -exponent) otherwise.
    Bounded: H(t) = 1 for t < bound, 0 otherwise.
    Tabulated: step function, H(t) = heights[i] on [points[i], points[i+1]),
    with points[0] = 0 and heights[-1] = 0.
    """

    kind: TailKind
    exponent: float = 1.0
    scale: float = 1.0
    threshold: float = 0.0
    bound: float = 1.0
    points: Tuple[float, ...] = ()
    heights: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'kind', TailKind(self.kind))
        object.__setattr__(self, 'points', tuple(float(t) for t in self.points))
        object.__setattr__(self, 'heights', tuple(float(h) for h in self.heights))
        if self.kind is TailKind.POWER_LAW:
            if self.exponent <= 0 or self.scale <= 0 or self.threshold < 0:
                raise ConfigError("power-law tail needs exponent > 0, scale > 0, threshold >= 0")
        elif self.kind is TailKind.BOUNDED:
            if self.bound < 0:
                raise ConfigError(f"bounded tail needs M >= 0, got {self.bound}")
        else:
            t, h = np.asarray(self.points), np.asarray(self.heights)
            if t.size == 0 or t.size != h.size or t[0] != 0.0:
                raise ConfigError("tabulated tail needs matching grids starting at t = 0")
            if np.any(np.diff(t) <= 0):
                raise ConfigError("tabulated tail points must be strictly increasing")
            if np.any(np.diff(h) > 0) or np.any(h < 0) or np.any(h > 1):
                raise ConfigError("tabulated tail heights must be non-increasing values in [0, 1]")
            if h[-1] != 0.0:
                raise ConfigError("tabulated tail must reach 0")

    @classmethod
    def power_law(cls, exponent: float, scale: float = 1.0, threshold: float = 0.0) -> 'TailFunction':
        return cls(TailKind.POWER_LAW, exponent=exponent, scale=scale, threshold=threshold)

    @classmethod
    def bounded(cls, bound: float) -> 'TailFunction':
        return cls(TailKind.BOUNDED, bound=bound)

    @classmethod
    def tabulated(cls, points: Sequence[float], heights: Sequence[float]) -> 'TailFunction':
        return cls(TailKind.TABULATED, points=tuple(points), heights=tuple(heights))

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind is TailKind.POWER_LAW:
            with np.errstate(divide='ignore'):
                power = np.minimum(1.0, (t / self.scale) ** -self.exponent)
            return np.where(t < self.threshold, 1.0, power)
        if self.kind is TailKind.BOUNDED:
            return np.where(t < self.bound, 1.0, 0.0)
        idx = np.searchsorted(np.asarray(self.points), t, side='right') - 1
        return np.asarray(self.heights)[np.clip(idx, 0, None)]

    def quantile(self, u: float) -> float:
        """Generalized inverse inf{t >= 0 : H(t) <= u}; inf when the set is empty"""
        if self.kind is TailKind.POWER_LAW:
            if u >= 1.0:
                return 0.0
            if u <= 0.0:
                return math.inf
            return max(self.threshold, self.scale * u ** (-1.0 / self.exponent))
        if self.kind is TailKind.BOUNDED:
            return 0.0 if u >= 1.0 else self.bound
        heights = np.asarray(self.heights)
        j = int(np.argmax(heights <= u))
        return self.points[j]

    def to_dict(self) -> Dict[str, Any]:
        if self.kind is TailKind.POWER_LAW:
            return {'kind': self.kind.value, 'exponent': self.exponent, 'scale': self.scale,
                    'threshold': self.threshold}
        if self.kind is TailKind.BOUNDED:
            return {'kind': self.kind.value, 'bound': self.bound}
        return {'kind': self.kind.value, 'points': list(self.points), 'heights': list(self.heights)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TailFunction':
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"invalid tail function: {e}") from e


def quantile_from_tail(H: TailFunction, u: float) -> float:
    """Q(u) = inf{t >= 0 : H(t) <= u}"""
    if not 0.0 <= u <= 1.0 or math.isnan(u):
        raise DomainError(f"quantile level must lie in [0, 1], got {u}")
    return H.quantile(u)


def empirical_tail_function(samples) -> TailFunction:
    """Tabulated tail of |samples|: H(t) = fraction of |samples| > t"""
    values = np.sort(np.abs(np.asarray(samples, dtype=np.float64)))
    if values.size == 0:
        raise StatisticalPowerError("cannot tabulate the tail of an empty sample")
    distinct = np.unique(values)
    points = np.concatenate(([0.0], distinct[distinct > 0.0]))
    above = values.size - np.searchsorted(values, points, side='right')
    return TailFunction.tabulated(points, above / values.size)


@dataclass(frozen=True)
class VanishingFactor:
    """eps(u) = min(1, log(e / u) ** -q), bounded and vanishing as u -> 0"""

    q: float

    def __post_init__(self):
        if self.q <= 0:
            raise ConfigError(f"vanishing factor exponent must be positive, got {self.q}")

    def __call__(self, u):
        u = np.asarray(u, dtype=np.float64)
        with np.errstate(divide='ignore'):
            return np.minimum(1.0, np.log(math.e / u) ** -self.q)


@dataclass(frozen=True)
class QuantileModel:
    """Quantile function Q(u) = K * u**-b * eps(u), or a right-continuous step table.

    A table holds breakpoints 0 = u_0 < ... < u_m = 1 and the value on each
    [u_i, u_{i+1}).
    """

    K: float = 1.0
    b: float = 0.0
    eps: Optional[VanishingFactor] = None
    table_u: Optional[Tuple[float, ...]] = None
    table_q: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.table_u is not None or self.table_q is not None:
            u, q = np.asarray(self.table_u, dtype=float), np.asarray(self.table_q, dtype=float)
            if u.size < 2 or q.size != u.size - 1 or u[0] != 0.0 or u[-1] != 1.0:
                raise ConfigError("quantile table needs breakpoints from 0 to 1 and one value per cell")
            if np.any(np.diff(u) <= 0) or np.any(np.diff(q) > 0) or np.any(q < 0):
                raise ConfigError("quantile table must be a non-negative, non-increasing step function")
            object.__setattr__(self, 'table_u', tuple(u))
            object.__setattr__(self, 'table_q', tuple(q))
            return
        if self.K < 0:
            raise ConfigError(f"quantile scale K must be non-negative, got {self.K}")
        if not 0.0 <= self.b < 1.0:
            raise ConfigError(f"quantile exponent b must lie in [0, 1), got {self.b}")
        if self.eps is not None:
            if isinstance(self.eps, dict):
                object.__setattr__(self, 'eps', VanishingFactor(**self.eps))
            if self.eps.q > self.b:
                raise ConfigError("K u^-b eps(u) is non-increasing only when eps exponent q <= b")

    @property
    def is_tabulated(self) -> bool:
        return self.table_u is not None

    @property
    def is_power_law(self) -> bool:
        return not self.is_tabulated and self.eps is None

    @property
    def sup(self) -> float:
        """Q(0+)"""
        if self.is_tabulated:
            return self.table_q[0]
        if self.K == 0.0:
            return 0.0
        return math.inf if self.b > 0.0 else self.K

    def __call__(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.is_tabulated:
            idx = np.searchsorted(np.asarray(self.table_u), u, side='right') - 1
            idx = np.clip(idx, 0, len(self.table_q) - 1)
            return np.asarray(self.table_q)[idx]
        with np.errstate(divide='ignore'):
            value = self.K * u ** -self.b
        if self.eps is not None:
            value = value * self.eps(u)
        return value

    def in_lp(self, p: float) -> bool:
        """Whether the integral of Q**p over (0, 1) is finite"""
        return self.is_tabulated or self.K == 0.0 or self.b * p < 1.0

    def power_integral(self, m: float, lo: float, hi: float, method: str = 'auto') -> QuadResult:
        """Integral of Q(u)**m over [lo, hi]; closed form when available, quadrature otherwise"""
        if hi <= lo:
            return QuadResult(0.0, 0.0, 0)
        if self.is_tabulated:
            return self._table_integral(m, lo, hi)
        if self.K == 0.0:
            return QuadResult(0.0, 0.0, 0)
        if method == 'closed' or (method == 'auto' and self.is_power_law):
            if not self.is_power_law:
                raise ValueError("closed form requires a pure power-law quantile model")
            return QuadResult(self._closed_integral(m, lo, hi), 0.0, 0)
        return integrate_singular(lambda u: self(u) ** m, lo, hi, singular_exponent=m * self.b)

    def power_integrals(self, m: float, lo, hi, method: str = 'auto') -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized power_integral over arrays of intervals: (values, error estimates)"""
        lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
        if method != 'quad' and self.is_power_law and self.K > 0.0:
            return np.asarray(self._closed_integral(m, lo, hi), dtype=float), np.zeros(lo.shape)
        values, errors = np.zeros(lo.shape), np.zeros(lo.shape)
        for i in np.ndindex(lo.shape):
            res = self.power_integral(m, float(lo[i]), float(hi[i]), method)
            values[i], errors[i] = res.value, res.error
        return values, errors

    def _closed_integral(self, m, lo, hi):
        kappa = 1.0 - m * self.b
        scale = self.K ** m
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        hi = np.maximum(hi, lo)
        with np.errstate(divide='ignore', invalid='ignore'):
            if kappa == 0.0:
                out = scale * (np.log(hi) - np.log(lo))
            else:
                out = scale * (hi ** kappa - lo ** kappa) / kappa
        out = np.where(hi <= lo, 0.0, out)
        if kappa <= 0.0:
            out = np.where((lo == 0.0) & (hi > 0.0), np.inf, out)
        return float(out) if out.ndim == 0 else out

    def _table_integral(self, m, lo, hi) -> QuadResult:
        u = np.asarray(self.table_u)
        left = np.clip(u[:-1], lo, hi)
        right = np.clip(u[1:], lo, hi)
        total = float(np.sum((right - left) * np.asarray(self.table_q) ** m))
        return QuadResult(total, 0.0, 0)

    def to_dict(self) -> Dict[str, Any]:
        if self.is_tabulated:
            return {'table_u': list(self.table_u), 'table_q': list(self.table_q)}
        data: Dict[str, Any] = {'K': self.K, 'b': self.b}
        if self.eps is not None:
            data['eps_q'] = self.eps.q
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'QuantileModel':
        try:
            if 'table_u' in data:
                return cls(table_u=tuple(data['table_u']), table_q=tuple(data['table_q']))
            eps = VanishingFactor(float(data['eps_q'])) if data.get('eps_q') is not None else None
            return cls(K=float(data.get('K', 1.0)), b=float(data.get('b', 0.0)), eps=eps)
        except (KeyError, TypeError) as e:
            raise ConfigError(f"invalid quantile section: {e}") from e


class ObservableKind(str, Enum):
    NEUTRAL_SINGULARITY = 'NeutralSingularity'
    BOUNDARY_SINGULARITY = 'BoundarySingularity'
    INDICATOR = 'Indicator'
    BV = 'BV'
    PIECEWISE_MONOTONE = 'PiecewiseMonotone'


@dataclass(frozen=True)
class MonotoneBranch:
    """coefficient * dist**-exponent on [lo, hi), dist measured from the chosen side"""

    lo: float
    hi: float
    coefficient: float = 1.0
    exponent: float = 0.0
    side: str = 'left'

    def __post_init__(self):
        if not 0.0 <= self.lo < self.hi <= 1.0:
            raise ConfigError(f"branch interval [{self.lo}, {self.hi}) must lie in [0, 1]")
        if self.side not in ('left', 'right'):
            raise ConfigError(f"branch side must be 'left' or 'right', got {self.side}")
        if not 0.0 <= self.exponent < 1.0:
            raise ConfigError(f"branch exponent must lie in [0, 1), got {self.exponent}")


@dataclass(frozen=True)
class Observable:
    """A test function on [0, 1] with its estimated centering constant"""

    kind: ObservableKind
    s: float = 0.0
    coefficient: float = 1.0
    interval: Tuple[float, float] = (0.0, 1.0)
    m1: float = 1.0
    m2: float = 0.0
    branches: Tuple[MonotoneBranch, ...] = ()
    tail: Optional[TailFunction] = None
    center: float = 0.0
    center_stderr: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'kind', ObservableKind(self.kind))
        object.__setattr__(self, 'interval', tuple(float(v) for v in self.interval))
        object.__setattr__(self, 'branches', tuple(
            b if isinstance(b, MonotoneBranch) else MonotoneBranch(**b) for b in self.branches))
        if isinstance(self.tail, dict):
            object.__setattr__(self, 'tail', TailFunction.from_dict(self.tail))
        if self.kind is ObservableKind.BOUNDARY_SINGULARITY and not 0.0 <= self.s < 1.0:
            raise ConfigError(f"boundary singularity exponent must lie in [0, 1), got {self.s}")
        if self.kind is ObservableKind.NEUTRAL_SINGULARITY and not 0.0 <= self.s < 1.0:
            raise ConfigError(f"neutral singularity exponent must lie in [0, 1), got {self.s}")
        if self.kind is ObservableKind.INDICATOR and not 0.0 <= self.interval[0] <= self.interval[1] <= 1.0:
            raise ConfigError(f"indicator interval must lie in [0, 1]: {self.interval}")
        if self.kind is ObservableKind.BV and (self.m1 < 0 or self.m2 < 0):
            raise ConfigError("BV bounds M1, M2 must be non-negative")
        if self.kind is ObservableKind.PIECEWISE_MONOTONE and not self.branches:
            raise ConfigError("piecewise monotone observable needs at least one branch")
        if self.center_stderr < 0:
            raise ConfigError("center standard error must be non-negative")

    @property
    def is_singular(self) -> bool:
        if self.kind in (ObservableKind.NEUTRAL_SINGULARITY, ObservableKind.BOUNDARY_SINGULARITY):
            return self.s > 0.0
        if self.kind is ObservableKind.PIECEWISE_MONOTONE:
            return any(b.exponent > 0.0 for b in self.branches)
        return False

    def validate_for(self, gamma: float):
        if self.kind is ObservableKind.NEUTRAL_SINGULARITY and self.s >= 1.0 - gamma:
            raise ConfigError(
                f"neutral singularity exponent s={self.s} must be below 1 - gamma = {1.0 - gamma}")

    def with_center(self, center: float, stderr: float) -> 'Observable':
        return replace(self, center=float(center), center_stderr=float(stderr))

    def evaluate(self, x) -> np.ndarray:
        """Uncentered values at the points x (vectorized)"""
        x = np.asarray(x, dtype=np.float64)
        kind = self.kind
        if kind is ObservableKind.NEUTRAL_SINGULARITY:
            if self.s > 0.0 and np.any(x <= 0.0):
                raise SingularityError("neutral singularity evaluated at x = 0")
            return self.coefficient * x ** -self.s
        if kind is ObservableKind.BOUNDARY_SINGULARITY:
            if self.s > 0.0 and np.any(x >= 1.0):
                raise SingularityError("boundary singularity evaluated at x = 1")
            return self.coefficient * (1.0 - x) ** -self.s
        if kind is ObservableKind.INDICATOR:
            lo, hi = self.interval
            return ((x >= lo) & (x <= hi)).astype(np.float64)
        if kind is ObservableKind.BV:
            return self.m1 - min(self.m2, 2.0 * self.m1) * x
        out = np.zeros_like(x)
        for k, branch in enumerate(self.branches):
            last = k == len(self.branches) - 1 and branch.hi == 1.0
            inside = (x >= branch.lo) & ((x <= branch.hi) if last else (x < branch.hi))
            if not np.any(inside):
                continue
            dist = x[inside] - branch.lo if branch.side == 'left' else branch.hi - x[inside]
            if branch.exponent > 0.0 and np.any(dist <= 0.0):
                raise SingularityError(f"branch {k} evaluated at its pole")
            out[inside] = branch.coefficient * dist ** -branch.exponent
        return out

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {'kind': self.kind.value, 'center': self.center,
                                'center_stderr': self.center_stderr}
        if self.kind in (ObservableKind.NEUTRAL_SINGULARITY, ObservableKind.BOUNDARY_SINGULARITY):
            data.update(s=self.s, coefficient=self.coefficient)
        elif self.kind is ObservableKind.INDICATOR:
            data['interval'] = list(self.interval)
        elif self.kind is ObservableKind.BV:
            data.update(m1=self.m1, m2=self.m2)
        else:
            data['branches'] = [
                {'lo': b.lo, 'hi': b.hi, 'coefficient': b.coefficient, 'exponent': b.exponent, 'side': b.side}
                for b in self.branches
            ]
            if self.tail is not None:
                data['tail'] = self.tail.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Observable':
        try:
            fields = dict(data)
            if 'interval' in fields:
                fields['interval'] = tuple(fields['interval'])
            if 'branches' in fields:
                fields['branches'] = tuple(MonotoneBranch(**b) for b in fields['branches'])
            if fields.get('tail') is not None:
                fields['tail'] = TailFunction.from_dict(fields['tail'])
            return cls(**fields)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"invalid observable section: {e}") from e


def observable_eval(f: Observable, x: float) -> float:
    """Pointwise value of the uncentered observable"""
    return float(f.evaluate(np.array([x]))[0])


def observable_quantile_params(f: Observable, gamma: float) -> QuantileModel:
    """Quantile model dominating the tail of |f| under the invariant measure of a map with parameter gamma"""
    kind = f.kind
    if kind is ObservableKind.NEUTRAL_SINGULARITY:
        f.validate_for(gamma)
        return QuantileModel(K=abs(f.coefficient), b=f.s / (1.0 - gamma))
    if kind is ObservableKind.BOUNDARY_SINGULARITY:
        return QuantileModel(K=abs(f.coefficient), b=f.s)
    if kind is ObservableKind.INDICATOR:
        return QuantileModel(K=1.0, b=0.0)
    if kind is ObservableKind.BV:
        return QuantileModel(K=f.m1 + 2.0 * f.m2, b=0.0)

    if f.tail is None:
        raise ConfigError("piecewise monotone observable needs a bounding tail function")
    n_branches = len(f.branches)
    tail = f.tail
    if tail.kind is TailKind.POWER_LAW:
        b = 1.0 / tail.exponent
        if b >= 1.0:
            raise ConfigError(f"tail exponent {tail.exponent} gives a non-integrable quantile")
        return QuantileModel(K=n_branches * max(tail.threshold, tail.scale), b=b)
    if tail.kind is TailKind.BOUNDED:
        return QuantileModel(K=n_branches * tail.bound, b=0.0)
    # H(t) = H0(t / N) has quantile N * Q0
    levels = np.unique(np.concatenate(([0.0, 1.0], np.asarray(tail.heights))))
    values = [n_branches * tail.quantile(float(u)) for u in levels[:-1]]
    return QuantileModel(table_u=tuple(levels), table_q=tuple(values))


def sample_observable(f: Observable, spec: MapSpec, budget: int, seed: int,
                      burn_in: int = DEFAULT_BURN_IN, chunks: int = CENTER_CHUNKS) -> np.ndarray:
    """Observable values along `chunks` independent orbits, shape (chunks, budget // chunks)"""
    length = budget // chunks

    def run(block: np.ndarray) -> np.ndarray:
        x0 = np.array([substream(seed, int(r), STREAM_CENTERING).random() for r in block])
        return f.evaluate(iterate_block(x0, spec, burn_in, length))

    return np.vstack(replica_pool.map_blocks(run, range(chunks)))


def estimate_center(f: Observable, spec: MapSpec, budget: int, seed: int,
                    burn_in: int = DEFAULT_BURN_IN) -> Tuple[float, float]:
    """Time-average estimate of nu(f) with a batch-means standard error"""
    if budget < MIN_CENTER_BUDGET:
        raise StatisticalPowerError(f"centering budget {budget} below the minimum {MIN_CENTER_BUDGET}")
    f.validate_for(spec.gamma)
    values = sample_observable(f, spec, budget, seed, burn_in)
    if values.min() == values.max():
        return float(values.flat[0]), 0.0

    batch = int(math.isqrt(values.shape[1]))
    usable = (values.shape[1] // batch) * batch
    batch_means = values[:, :usable].reshape(values.shape[0], -1, batch).mean(axis=2).ravel()
    mean = float(np.mean(values.mean(axis=1)))
    stderr = float(np.std(batch_means, ddof=1) / math.sqrt(batch_means.size))
    logger.info(f"Estimated center of {f.kind.value}: {mean:.6g} +/- {stderr:.2g} ({budget} iterations)")
    return mean, stderr


def fit_quantile_scale(f: Observable, spec: MapSpec, budget: int, seed: int,
                       levels: Optional[Sequence[float]] = None) -> QuantileModel:
    """Smallest K such that K * u**-b * eps(u) dominates the empirical quantile of |f| on the levels"""
    model = observable_quantile_params(f, spec.gamma)
    if model.is_tabulated:
        return model
    samples = np.abs(sample_observable(f, spec, budget, seed)).ravel()
    if levels is None:
        levels = np.geomspace(max(10.0 / samples.size, 1e-5), 0.5, 40)
    levels = np.asarray(levels, dtype=float)
    empirical = np.quantile(samples, 1.0 - levels, method='inverted_cdf')
    shape = QuantileModel(K=1.0, b=model.b, eps=model.eps)(levels)
    fitted = float(np.max(empirical / shape))
    logger.info(f"Fitted quantile scale K={fitted:.4g} for b={model.b:.4g}")
    return QuantileModel(K=fitted, b=model.b, eps=model.eps)

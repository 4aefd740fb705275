"""
Intermittent interval maps and synthetic oracle processes

Orbits are produced in lockstep for a block of replicas so that the Monte Carlo
layer can vectorize over replicas while every replica keeps its own random
substream.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

from config import DEFAULT_BURN_IN
from errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

# Smallest positive normal double; an iterate rounded to 0.0 is moved here
REINJECTION_POINT = float(np.finfo(np.float64).tiny)
ROUNDING_UNIT = float(np.spacing(1.0))
MAX_ITERATIONS = 2 ** 63 - 1

# spawn_key purposes inside one replica substream
STREAM_INITIAL_POINT = 0
STREAM_INNOVATIONS = 1
STREAM_CENTERING = 2


class MapKind(str, Enum):
    LSV = 'LSV'
    PIECEWISE_GPM = 'PiecewiseGPM'


@dataclass(frozen=True)
class AffineBranch:
    """Expanding affine branch mapping its interval onto [image_lo, image_hi]"""

    image_lo: float = 0.0
    image_hi: float = 1.0
    increasing: bool = True


@dataclass(frozen=True)
class MapSpec:
    """Parameters of an LSV map or of a parametric generalized Pomeau-Manneville map.

    For PiecewiseGPM, branch 0 is the neutral branch
    x + (neutral_top - y1) * (x / y1) ** (1 + gamma) on [0, y1), and every
    later branch k is affine on [y_k, y_{k+1}).
    """

    gamma: float
    kind: MapKind = MapKind.LSV
    breakpoints: Tuple[float, ...] = (0.0, 0.5, 1.0)
    branches: Tuple[AffineBranch, ...] = (AffineBranch(),)
    neutral_top: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'kind', MapKind(self.kind))
        object.__setattr__(self, 'breakpoints', tuple(float(y) for y in self.breakpoints))
        object.__setattr__(self, 'branches', tuple(
            b if isinstance(b, AffineBranch) else AffineBranch(**b) for b in self.branches))
        self.validate()

    def validate(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie strictly inside (0, 1), got {self.gamma}")
        if self.kind is MapKind.LSV:
            if self.breakpoints != (0.0, 0.5, 1.0) or self.branches != (AffineBranch(),) \
                    or self.neutral_top != 1.0:
                raise ConfigError("LSV maps have exactly two implicit branches split at 1/2")
            return

        edges = np.asarray(self.breakpoints)
        if edges.size < 3 or edges[0] != 0.0 or edges[-1] != 1.0:
            raise ConfigError("breakpoints must start at 0, end at 1 and define at least two branches")
        if np.any(np.diff(edges) <= 0):
            raise ConfigError(f"breakpoints must be strictly increasing: {self.breakpoints}")
        if len(self.branches) != edges.size - 2:
            raise ConfigError(
                f"expected {edges.size - 2} affine branches after the neutral one, got {len(self.branches)}")
        if not edges[1] < self.neutral_top <= 1.0:
            raise ConfigError("neutral branch must expand: y1 < neutral_top <= 1")
        for k, branch in enumerate(self.branches, start=1):
            if not 0.0 <= branch.image_lo < branch.image_hi <= 1.0:
                raise ConfigError(f"branch {k} image must satisfy 0 <= lo < hi <= 1")
            slope = (branch.image_hi - branch.image_lo) / (edges[k + 1] - edges[k])
            if slope <= 1.0:
                raise ConfigError(f"branch {k} is not expanding (|slope| = {slope:.4g})")

    @classmethod
    def lsv(cls, gamma: float) -> 'MapSpec':
        return cls(gamma=gamma)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {'gamma': self.gamma, 'kind': self.kind.value}
        if self.kind is MapKind.PIECEWISE_GPM:
            data['breakpoints'] = list(self.breakpoints)
            data['neutral_top'] = self.neutral_top
            data['branches'] = [
                {'image_lo': b.image_lo, 'image_hi': b.image_hi, 'increasing': b.increasing}
                for b in self.branches
            ]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MapSpec':
        try:
            kind = MapKind(data.get('kind', 'LSV'))
            if kind is MapKind.LSV:
                return cls(gamma=float(data['gamma']))
            return cls(
                gamma=float(data['gamma']),
                kind=kind,
                breakpoints=tuple(data['breakpoints']),
                branches=tuple(AffineBranch(**b) for b in data.get('branches', [])),
                neutral_top=float(data.get('neutral_top', 1.0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"invalid map section: {e}") from e


@dataclass(frozen=True)
class OrbitConfig:
    """Orbit sampling plan; (seed, replica_index) pins the random substream"""

    length: int
    seed: int = 0
    replica_index: int = 0
    burn_in: int = DEFAULT_BURN_IN
    initial_point: Union[float, str] = 'uniform-random'

    def __post_init__(self):
        if int(self.length) != self.length or self.length < 1:
            raise ConfigError(f"orbit length must be a positive integer, got {self.length}")
        if int(self.burn_in) != self.burn_in or self.burn_in < 0:
            raise ConfigError(f"burn_in must be a non-negative integer, got {self.burn_in}")
        if self.burn_in + self.length > MAX_ITERATIONS:
            raise ConfigError("burn_in + length overflows the iteration counter")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.replica_index < 0:
            raise ConfigError(f"replica_index must be non-negative, got {self.replica_index}")
        if isinstance(self.initial_point, str):
            if self.initial_point != 'uniform-random':
                raise ConfigError(f"unknown initial point '{self.initial_point}'")
        elif not 0.0 <= float(self.initial_point) <= 1.0:
            raise ConfigError(f"initial point must lie in [0, 1], got {self.initial_point}")


def substream(seed: int, replica_index: int, purpose: int = STREAM_INITIAL_POINT) -> np.random.Generator:
    """Counter-based generator for one replica; independent of scheduling"""
    sequence = np.random.SeedSequence(seed, spawn_key=(replica_index, purpose))
    return np.random.Generator(np.random.Philox(sequence))


def initial_points(seed: int, replica_indices: Sequence[int]) -> np.ndarray:
    """Uniform starting points, one per replica, drawn from each replica's own substream"""
    return np.array([substream(seed, int(r)).random() for r in replica_indices], dtype=np.float64)


def _advance(x: np.ndarray, spec: MapSpec) -> np.ndarray:
    if spec.kind is MapKind.LSV:
        y = np.where(x < 0.5, x + x * (2.0 * x) ** spec.gamma, 2.0 * x - 1.0)
    else:
        y = _gpm_values(x, spec)
    np.clip(y, 0.0, 1.0, out=y)
    y[y == 0.0] = REINJECTION_POINT
    return y


def _gpm_values(x: np.ndarray, spec: MapSpec) -> np.ndarray:
    edges = np.asarray(spec.breakpoints)
    idx = np.clip(np.searchsorted(edges, x, side='right') - 1, 0, edges.size - 2)

    y1 = edges[1]
    neutral = x + (spec.neutral_top - y1) * (x / y1) ** (1.0 + spec.gamma)

    # index 0 is a placeholder so that branch k reads row k
    img_lo = np.array([0.0] + [b.image_lo for b in spec.branches])
    img_hi = np.array([1.0] + [b.image_hi for b in spec.branches])
    inc = np.array([True] + [b.increasing for b in spec.branches])

    t = (x - edges[idx]) / (edges[idx + 1] - edges[idx])
    span = img_hi[idx] - img_lo[idx]
    affine = np.where(inc[idx], img_lo[idx] + span * t, img_hi[idx] - span * t)
    return np.where(idx == 0, neutral, affine)


def map_step_array(x, spec: MapSpec) -> np.ndarray:
    """Apply the map elementwise; points within one rounding unit of [0,1] are clamped"""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(np.isnan(arr)) or np.any(arr < -ROUNDING_UNIT) or np.any(arr > 1.0 + ROUNDING_UNIT):
        raise DomainError(f"map argument outside [0, 1]: {arr[(arr < 0) | (arr > 1) | np.isnan(arr)][:5]}")
    arr = np.clip(arr, 0.0, 1.0)
    if spec.kind is MapKind.LSV:
        y = np.where(arr < 0.5, arr + arr * (2.0 * arr) ** spec.gamma, 2.0 * arr - 1.0)
    else:
        y = _gpm_values(arr, spec)
    return np.clip(y, 0.0, 1.0)


def map_step(x: float, spec: MapSpec) -> float:
    """One application of the map to a scalar point"""
    return float(map_step_array(np.array([x]), spec)[0])


def iterate_block(x0, spec: MapSpec, burn_in: int, length: int) -> np.ndarray:
    """Iterate a block of starting points in lockstep.

    Returns an array of shape (replicas, length) holding x_{burn_in+1} ... x_{burn_in+length}
    for each starting point.
    """
    x = np.array(x0, dtype=np.float64, ndmin=1)
    x[x == 0.0] = REINJECTION_POINT
    for _ in range(burn_in):
        x = _advance(x, spec)

    out = np.empty((length, x.size), dtype=np.float64)
    for i in range(length):
        x = _advance(x, spec)
        out[i] = x
    return np.ascontiguousarray(out.T)


def generate_orbit(cfg: OrbitConfig, spec: MapSpec) -> np.ndarray:
    """Burn-in'd orbit of one replica"""
    if cfg.initial_point == 'uniform-random':
        x0 = initial_points(cfg.seed, [cfg.replica_index])
    else:
        x0 = np.array([float(cfg.initial_point)])
    logger.debug(f"orbit replica={cfg.replica_index} seed={cfg.seed} burn_in={cfg.burn_in} length={cfg.length}")
    return iterate_block(x0, spec, cfg.burn_in, cfg.length)[0]


def mdep_sequence(cfg: OrbitConfig, weights: Sequence[float]) -> np.ndarray:
    """Moving average X_i = sum_j weights[j] * eps_{i-j} of i.i.d. standard normals.

    The sequence is exactly (len(weights) - 1)-dependent.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ConfigError("mdep weights must be a non-empty list")
    rng = substream(cfg.seed, cfg.replica_index, STREAM_INNOVATIONS)
    innovations = rng.standard_normal(cfg.burn_in + cfg.length + w.size - 1)
    return np.convolve(innovations, w, mode='valid')[cfg.burn_in:]


def rademacher_sequence(cfg: OrbitConfig) -> np.ndarray:
    """Sign-mapped i.i.d. oracle taking values +1 and -1 with equal probability"""
    return np.where(mdep_sequence(cfg, [1.0]) >= 0.0, 1.0, -1.0)


def mdep_block(seed: int, replica_indices: Sequence[int], weights: Sequence[float],
               length: int, rademacher: bool = False) -> np.ndarray:
    """Oracle sequences for a block of replicas, shape (replicas, length)"""
    rows: List[np.ndarray] = []
    for r in replica_indices:
        cfg = OrbitConfig(length=length, seed=seed, replica_index=int(r), burn_in=0)
        rows.append(rademacher_sequence(cfg) if rademacher else mdep_sequence(cfg, weights))
    return np.vstack(rows)

"""
Experiment configuration files

One JSON document per experiment with the sections map, observable, alpha,
quantile, sim and bounds. Every section is optional; commands ask for the
sections they need. The config hash is the SHA-256 of the canonical JSON of
the parsed (normalized) document, so equivalent files hash identically.
"""
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Dict, Optional, Sequence, Tuple

from bounds import LD_VARIANTS, BoundInputs
from coefficients import AlphaModel, AlphaPair
from config import DEFAULT_CENTER_BUDGET
from errors import ConfigError
from dynamics import MapSpec
from montecarlo import SimConfig, canonical_json, config_digest
from observables import Observable, QuantileModel, fit_quantile_scale, observable_quantile_params

logger = logging.getLogger(__name__)

SECTIONS = ('map', 'observable', 'alpha', 'quantile', 'sim', 'bounds')
SIM_KEYS = {'n_grid', 'replicas', 'seed', 'burn_in', 'p_list', 'x_grid', 'holder_beta', 'holder_level',
            'source', 'weights', 'orbit_length', 'center_budget', 'bandwidth'}
BOUNDS_KEYS = {'n_grid', 'x_grid', 'p', 'r', 'beta', 'a', 'c', 'variants', 'majorant', 'rosenthal_forms',
               'method', 'tolerance'}


@dataclass(frozen=True)
class BoundsSection:
    n_grid: Tuple[int, ...] = (1000,)
    x_grid: Tuple[float, ...] = (1.0,)
    p: float = 2.0
    r: Optional[float] = None
    beta: Optional[float] = None
    a: Optional[float] = None
    c: float = 0.5
    variants: Tuple[str, ...] = ()
    majorant: bool = False
    rosenthal_forms: Tuple[str, ...] = ('sum', 'integral')
    method: str = 'auto'
    tolerance: float = 0.15

    def __post_init__(self):
        object.__setattr__(self, 'n_grid', tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, 'x_grid', tuple(float(x) for x in self.x_grid))
        object.__setattr__(self, 'variants', tuple(self.variants))
        object.__setattr__(self, 'rosenthal_forms', tuple(self.rosenthal_forms))
        if not self.n_grid or any(n < 1 for n in self.n_grid):
            raise ConfigError(f"bounds.n_grid must hold positive integers: {self.n_grid}")
        if not self.x_grid or any(x <= 0 for x in self.x_grid):
            raise ConfigError(f"bounds.x_grid must hold positive levels: {self.x_grid}")
        unknown = set(self.variants) - set(LD_VARIANTS)
        if unknown:
            raise ConfigError(f"unknown large-deviation variants {sorted(unknown)}")
        if set(self.rosenthal_forms) - {'sum', 'integral'}:
            raise ConfigError(f"unknown Rosenthal forms {self.rosenthal_forms}")
        if self.method not in ('auto', 'quad'):
            raise ConfigError(f"bounds.method must be 'auto' or 'quad', got {self.method}")
        if self.tolerance <= 0:
            raise ConfigError(f"bounds.tolerance must be positive, got {self.tolerance}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n_grid': list(self.n_grid), 'x_grid': list(self.x_grid), 'p': self.p,
            'r': self.r, 'beta': self.beta, 'a': self.a, 'c': self.c,
            'variants': list(self.variants), 'majorant': self.majorant,
            'rosenthal_forms': list(self.rosenthal_forms), 'method': self.method,
            'tolerance': self.tolerance,
        }


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed experiment document"""

    map: Optional[MapSpec] = None
    observable: Optional[Observable] = None
    alpha: Optional[AlphaPair] = None
    quantile: Optional[QuantileModel] = None
    sim: Optional[Dict[str, Any]] = None
    bounds: Optional[BoundsSection] = None
    source_path: str = ''

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {}
        if self.map is not None:
            data['map'] = self.map.to_dict()
        if self.observable is not None:
            data['observable'] = self.observable.to_dict()
        if self.alpha is not None:
            data['alpha'] = self.alpha.to_dict()
        if self.quantile is not None:
            data['quantile'] = self.quantile.to_dict()
        if self.sim is not None:
            data['sim'] = dict(self.sim)
        if self.bounds is not None:
            data['bounds'] = self.bounds.to_dict()
        return data

    def canonical(self) -> str:
        return canonical_json(self.to_dict())

    @property
    def config_hash(self) -> str:
        return config_digest(self.to_dict())

    def require(self, *sections: str):
        missing = [s for s in sections if getattr(self, s) is None]
        if missing:
            raise ConfigError(f"config is missing required sections: {', '.join(missing)}")

    @property
    def quantile_source(self) -> str:
        return 'config' if self.quantile is not None else 'fitted'

    def quantile_exponent(self) -> float:
        """Tail exponent b of the quantile model, without fitting K (0 for tabulated models)"""
        if self.quantile is not None:
            model = self.quantile
        else:
            self.require('map', 'observable')
            model = observable_quantile_params(self.observable, self.map.gamma)
        return 0.0 if model.is_tabulated else model.b

    def quantile_model(self) -> QuantileModel:
        """Configured quantile model, or one with K fitted to the observable along the map"""
        if self.quantile is not None:
            return self.quantile
        self.require('map', 'observable')
        return self._fitted_quantile

    @cached_property
    def _fitted_quantile(self) -> QuantileModel:
        sim = self.sim or {}
        budget = int(sim.get('center_budget', DEFAULT_CENTER_BUDGET))
        return fit_quantile_scale(self.observable, self.map, budget, int(sim.get('seed', 0)))

    def alpha_pair(self) -> AlphaPair:
        """Configured coefficients, or the power law with the map's gamma and scale 1"""
        if self.alpha is not None:
            return self.alpha
        self.require('map')
        return AlphaPair.same(AlphaModel.power_law(self.map.gamma))

    def sim_config(self) -> SimConfig:
        self.require('map', 'observable', 'sim')
        fields = {k: v for k, v in self.sim.items() if k != 'bandwidth'}
        try:
            return SimConfig(map=self.map, observable=self.observable, config_hash=self.config_hash, **fields)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"invalid sim section: {e}") from e

    @property
    def bandwidth(self) -> Optional[int]:
        return None if self.sim is None else self.sim.get('bandwidth')

    def bound_inputs(self, n: int) -> BoundInputs:
        self.require('bounds')
        b = self.bounds
        return BoundInputs(alpha=self.alpha_pair(), Q=self.quantile_model(), n=n, p=b.p,
                           r=b.r, beta=b.beta, a=b.a, c=b.c)


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(data: Dict[str, Any], assignment: str) -> Dict[str, Any]:
    """Set one leaf from 'section.key=value'; the value is read as JSON when it parses"""
    if '=' not in assignment:
        raise ConfigError(f"override '{assignment}' is not of the form path=value")
    path, raw = assignment.split('=', 1)
    keys = path.strip().split('.')
    if len(keys) < 2 or keys[0] not in SECTIONS:
        raise ConfigError(f"override path '{path}' must start with one of {SECTIONS}")
    node = data.setdefault(keys[0], {})
    for key in keys[1:-1]:
        if not isinstance(node.get(key), dict):
            raise ConfigError(f"override path '{path}' does not exist")
        node = node[key]
    node[keys[-1]] = _parse_value(raw)
    logger.debug(f"Override {path} = {raw}")
    return data


def _check_keys(section: str, data: Dict[str, Any], allowed):
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in section '{section}': {sorted(unknown)}")


def _sim_section(data: Dict[str, Any]) -> Dict[str, Any]:
    _check_keys('sim', data, SIM_KEYS)
    if 'n_grid' not in data:
        raise ConfigError("sim.n_grid is required")
    bandwidth = data.get('bandwidth')
    if bandwidth is not None and (not isinstance(bandwidth, int) or bandwidth < 1):
        raise ConfigError(f"sim.bandwidth must be a positive integer, got {bandwidth}")
    return dict(data)


def parse_config(data: Dict[str, Any], source_path: str = '') -> ExperimentConfig:
    """Validate a config document and build the typed sections"""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys('root', data, SECTIONS)
    for name in SECTIONS:
        if name in data and not isinstance(data[name], dict):
            raise ConfigError(f"section '{name}' must be a JSON object")

    map_spec = MapSpec.from_dict(data['map']) if 'map' in data else None
    observable = Observable.from_dict(data['observable']) if 'observable' in data else None
    alpha = AlphaPair.from_dict(data['alpha']) if 'alpha' in data else None
    quantile = QuantileModel.from_dict(data['quantile']) if 'quantile' in data else None
    sim = _sim_section(data['sim']) if 'sim' in data else None
    bounds = None
    if 'bounds' in data:
        _check_keys('bounds', data['bounds'], BOUNDS_KEYS)
        try:
            bounds = BoundsSection(**data['bounds'])
        except TypeError as e:
            raise ConfigError(f"invalid bounds section: {e}") from e

    config = ExperimentConfig(map=map_spec, observable=observable, alpha=alpha, quantile=quantile,
                              sim=sim, bounds=bounds, source_path=source_path)
    if sim is not None and map_spec is not None and observable is not None:
        config.sim_config()
    return config


def load_config(path: str, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Read, override and validate a JSON experiment file"""
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            data = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}: {e}") from e
    for assignment in overrides:
        apply_override(data, assignment)
    config = parse_config(data, source_path=path)
    logger.info(f"Loaded config {path} (hash {config.config_hash[:12]})")
    return config

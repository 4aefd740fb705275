"""
Dependence coefficient sequences alpha(n) and their generalized inverses
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np

from errors import ConfigError, DomainError

logger = logging.getLogger(__name__)

ALPHA_ZERO = 0.5
COUNT_CHUNK = 4096
COUNT_LIMIT = 10 ** 9


class AlphaKind(str, Enum):
    EXPLICIT = 'Explicit'
    POWER_LAW = 'PowerLaw'


class TailRule(str, Enum):
    ZERO = 'zero'
    POWER_LAW = 'power'


@dataclass(frozen=True)
class AlphaModel:
    """Non-increasing coefficient sequence with alpha(0) = 1/2.

    PowerLaw: alpha(n) = min(1/2, C * n ** -((1 - gamma) / gamma)) for n >= 1.
    Explicit: stored prefix alpha(0), ..., alpha(len - 1); beyond it either 0
    or min(prefix[-1], C * n ** -((1 - gamma) / gamma)).
    """

    kind: AlphaKind = AlphaKind.POWER_LAW
    C: float = 1.0
    gamma: float = 0.5
    prefix: Tuple[float, ...] = (ALPHA_ZERO,)
    tail: TailRule = TailRule.ZERO

    def __post_init__(self):
        object.__setattr__(self, 'kind', AlphaKind(self.kind))
        object.__setattr__(self, 'tail', TailRule(self.tail))
        object.__setattr__(self, 'prefix', tuple(float(a) for a in self.prefix))
        uses_power = self.kind is AlphaKind.POWER_LAW or self.tail is TailRule.POWER_LAW
        if uses_power:
            if self.C <= 0:
                raise ConfigError(f"alpha scale C must be positive, got {self.C}")
            if not 0.0 < self.gamma < 1.0:
                raise ConfigError(f"alpha gamma must lie in (0, 1), got {self.gamma}")
        if self.kind is AlphaKind.EXPLICIT:
            prefix = np.asarray(self.prefix)
            if prefix.size == 0 or prefix[0] != ALPHA_ZERO:
                raise ConfigError("explicit alpha sequence must start with alpha(0) = 1/2")
            if np.any(np.diff(prefix) > 0) or np.any(prefix < 0) or np.any(prefix > ALPHA_ZERO):
                raise ConfigError("explicit alpha sequence must be non-increasing in [0, 1/2]")

    @property
    def exponent(self) -> float:
        """Decay exponent (1 - gamma) / gamma of the power-law part"""
        return (1.0 - self.gamma) / self.gamma

    @property
    def effective_gamma(self) -> float:
        """gamma of the power-law tail; 0 for sequences vanishing after a finite lag"""
        if self.kind is AlphaKind.EXPLICIT and self.tail is TailRule.ZERO:
            return 0.0
        return self.gamma

    @classmethod
    def power_law(cls, gamma: float, C: float = 1.0) -> 'AlphaModel':
        return cls(AlphaKind.POWER_LAW, C=C, gamma=gamma)

    @classmethod
    def explicit(cls, prefix, tail: str = 'zero', C: float = 1.0, gamma: float = 0.5) -> 'AlphaModel':
        return cls(AlphaKind.EXPLICIT, C=C, gamma=gamma, prefix=tuple(prefix), tail=tail)

    @classmethod
    def m_dependent(cls, m: int) -> 'AlphaModel':
        """Coefficients of an m-dependent sequence: 1/2 up to lag m, 0 afterwards"""
        return cls.explicit([ALPHA_ZERO] * (m + 1))

    def values(self, n) -> np.ndarray:
        """alpha(n) for an integer array n"""
        n = np.asarray(n, dtype=np.int64)
        nf = np.maximum(n, 1).astype(np.float64)
        if self.kind is AlphaKind.POWER_LAW:
            out = np.minimum(ALPHA_ZERO, self.C / nf ** self.exponent)
            return np.where(n == 0, ALPHA_ZERO, out)

        prefix = np.asarray(self.prefix)
        inside = n < prefix.size
        head = prefix[np.clip(n, 0, prefix.size - 1)]
        if self.tail is TailRule.ZERO:
            rest = np.zeros(n.shape)
        else:
            rest = np.minimum(prefix[-1], self.C / nf ** self.exponent)
        return np.where(inside, head, rest)

    def to_dict(self) -> Dict[str, Any]:
        if self.kind is AlphaKind.POWER_LAW:
            return {'kind': self.kind.value, 'C': self.C, 'gamma': self.gamma}
        data = {'kind': self.kind.value, 'prefix': list(self.prefix), 'tail': self.tail.value}
        if self.tail is TailRule.POWER_LAW:
            data.update(C=self.C, gamma=self.gamma)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AlphaModel':
        try:
            fields = dict(data)
            if 'prefix' in fields:
                fields['prefix'] = tuple(fields['prefix'])
            return cls(**fields)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"invalid alpha section: {e}") from e


@dataclass(frozen=True)
class AlphaPair:
    """alpha_1 and alpha_2 carried together; alpha_1 <= alpha_2 is checked on a prefix"""

    alpha1: AlphaModel
    alpha2: AlphaModel

    CHECK_LAGS = 1024

    def __post_init__(self):
        lags = np.arange(self.CHECK_LAGS)
        if np.any(self.alpha1.values(lags) > self.alpha2.values(lags)):
            raise ConfigError("alpha_1(n) must not exceed alpha_2(n)")

    @classmethod
    def same(cls, model: AlphaModel) -> 'AlphaPair':
        return cls(model, model)

    def to_dict(self) -> Dict[str, Any]:
        return {'alpha1': self.alpha1.to_dict(), 'alpha2': self.alpha2.to_dict()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AlphaPair':
        if 'alpha1' in data or 'alpha2' in data:
            first = AlphaModel.from_dict(data.get('alpha1', data.get('alpha2')))
            second = AlphaModel.from_dict(data.get('alpha2', data.get('alpha1')))
            return cls(first, second)
        return cls.same(AlphaModel.from_dict(data))


def alpha_eval(m: AlphaModel, n: int) -> float:
    """alpha(n), clamped to [0, 1/2]"""
    if n < 0:
        raise DomainError(f"lag must be non-negative, got {n}")
    return float(m.values(np.array([n]))[0])


def _power_inverse(m: AlphaModel, u: float, start: int, cap: Optional[int]) -> int:
    # smallest q >= start with C * q**-e <= u
    log_q = (math.log(m.C) - math.log(u)) / m.exponent
    if cap is not None and log_q > math.log(cap) + 1.0:
        return cap
    if log_q > 700.0:
        raise DomainError(f"alpha inverse at u={u} exceeds the representable range")
    q = max(start, int(math.ceil(math.exp(log_q))))

    def ok(k: int) -> bool:
        return alpha_eval(m, k) <= u

    if ok(q) and (q == start or not ok(q - 1)):
        return q

    # tie or rounding at a breakpoint: binary search on [lo, hi]
    lo, hi = start, max(q, start + 1)
    while not ok(hi):
        hi *= 2
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


def alpha_inverse(m: AlphaModel, u: float, cap: Optional[int] = None) -> int:
    """min{q >= 0 : alpha(q) <= u}, optionally capped at cap"""
    if not u > 0.0:
        raise DomainError(f"alpha inverse requires u > 0, got {u}")
    if cap is not None and cap < 1:
        raise DomainError(f"cap must be a positive integer, got {cap}")
    if u >= ALPHA_ZERO:
        return 0

    if m.kind is AlphaKind.POWER_LAW:
        q = _power_inverse(m, u, 1, cap)
    else:
        prefix = np.asarray(m.prefix)
        below = np.nonzero(prefix <= u)[0]
        if below.size:
            q = int(below[0])
        elif m.tail is TailRule.ZERO:
            q = prefix.size
        else:
            q = _power_inverse(m, u, prefix.size, cap)
    return q if cap is None else min(q, cap)


def alpha_inverse_by_count(m: AlphaModel, u: float) -> int:
    """Indicator-sum form: number of lags n with u < alpha(n)"""
    if not u > 0.0:
        raise DomainError(f"alpha inverse requires u > 0, got {u}")
    count, start = 0, 0
    while start < COUNT_LIMIT:
        vals = m.values(np.arange(start, start + COUNT_CHUNK))
        count += int(np.count_nonzero(u < vals))
        if vals[-1] <= u:
            return count
        start += COUNT_CHUNK
    raise DomainError(f"indicator sum at u={u} did not terminate within {COUNT_LIMIT} lags")


def alpha_breakpoints(m: AlphaModel, n: int) -> np.ndarray:
    """alpha(0), ..., alpha(n): the jump points of u -> alpha^{-1}(u) ^ n"""
    return m.values(np.arange(n + 1))

"""
Right-hand sides of the deviation, moment and large-deviation bounds

Every bound is reported without the universal constant hidden in "<<": the
numbers are shapes in (n, x), not calibrated probabilities.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from coefficients import AlphaModel, AlphaPair, alpha_breakpoints, alpha_inverse
from config import BISECTION_TOL, QUAD_REL_TOL
from errors import ConfigError, DomainError, QuadratureError, UndecidableConditionError
from observables import QuantileModel
from quadrature import QuadResult

logger = logging.getLogger(__name__)

CONSTANTS_NOTE = "universal constants hidden in << are omitted"
LD_VARIANTS = ('WB', 'WB2', 'WBeasy', 'SB', 'SBeasy')
CONDITIONS = ('WM', 'WM0', 'SM', 'DMR')


@dataclass(frozen=True)
class BoundInputs:
    """Parameter set shared by all bounds.

    Free parameters default to r = 2p - 1, beta = 2p - 2.5 and a = p - 1/2
    (r = 3, beta = 2 when p < 2), which satisfy r - 2 < beta < r and a in (p - 1, p).
    """

    alpha: AlphaPair
    Q: QuantileModel
    n: int
    p: float = 2.0
    r: Optional[float] = None
    beta: Optional[float] = None
    a: Optional[float] = None
    c: float = 0.5

    def __post_init__(self):
        if isinstance(self.alpha, AlphaModel):
            object.__setattr__(self, 'alpha', AlphaPair.same(self.alpha))
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n}")
        object.__setattr__(self, 'n', int(self.n))
        if not self.p > 1.0:
            raise ConfigError(f"p must exceed 1, got {self.p}")
        if self.r is None:
            object.__setattr__(self, 'r', 2.0 * self.p - 1.0 if self.p >= 2.0 else 3.0)
        if self.beta is None:
            object.__setattr__(self, 'beta', 2.0 * self.p - 2.5 if self.p >= 2.0 else 2.0)
        if self.a is None:
            object.__setattr__(self, 'a', self.p - 0.5)
        if not self.r > 2.0:
            raise ConfigError(f"r must exceed 2, got {self.r}")
        if not self.r - 2.0 < self.beta < self.r:
            raise ConfigError(f"beta must lie in (r - 2, r) = ({self.r - 2.0}, {self.r}), got {self.beta}")
        if not 0.0 < self.c < 1.0:
            raise ConfigError(f"c must lie in (0, 1), got {self.c}")

    @property
    def q1(self) -> AlphaModel:
        return self.alpha.alpha1

    @property
    def q2(self) -> AlphaModel:
        return self.alpha.alpha2

    def parameters(self) -> Dict[str, Any]:
        return {'n': self.n, 'p': self.p, 'r': self.r, 'beta': self.beta, 'a': self.a, 'c': self.c,
                'alpha': self.alpha.to_dict(), 'quantile': self.Q.to_dict()}


@dataclass
class BoundReport:
    """Named additive terms of one bound, with provenance"""

    bound: str
    terms: Dict[str, float]
    parameters: Dict[str, Any]
    quadrature_errors: Dict[str, float] = field(default_factory=dict)
    diagnostics: Dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(sum(self.terms.values()))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'bound': self.bound,
            'terms': dict(self.terms),
            'total': self.total,
            'diagnostics': dict(self.diagnostics),
            'quadrature_error': dict(self.quadrature_errors),
            'parameters': self.parameters,
            'constants': CONSTANTS_NOTE,
        }


def _check_quadrature(name: str, result: QuadResult) -> float:
    if result.relative_error > QUAD_REL_TOL and math.isfinite(result.value):
        raise QuadratureError(f"{name}: relative error {result.relative_error:.2e} exceeds {QUAD_REL_TOL}")
    return result.relative_error


def capped_inverse_pieces(model: AlphaModel, n: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Constancy intervals [lo, hi) of u -> alpha^{-1}(u) ^ n with their positive values"""
    a = alpha_breakpoints(model, n)
    values = np.arange(1, n + 1, dtype=np.float64)
    lows = np.concatenate((a[1:n], [0.0]))
    highs = a[:n]
    keep = highs > lows
    return lows[keep], highs[keep], values[keep]


def weighted_integral(model: AlphaModel, n: int, Q: QuantileModel, kappa: float, m: float,
                      lo: float, hi: float, method: str = 'auto') -> QuadResult:
    """Integral over [lo, hi] of (alpha^{-1}(u) ^ n)**kappa * Q(u)**m, summed exactly over constancy intervals"""
    lows, highs, values = capped_inverse_pieces(model, n)
    left, right = np.clip(lows, lo, hi), np.clip(highs, lo, hi)
    keep = right > left
    if not np.any(keep):
        return QuadResult(0.0, 0.0, 0)
    ints, errs = Q.power_integrals(m, left[keep], right[keep], method)
    weights = values[keep] ** kappa
    with np.errstate(invalid='ignore'):
        total = float(np.sum(weights * ints))
        error = float(np.sum(weights * errs))
    return QuadResult(total, error, int(np.count_nonzero(keep)))


def cumulative_power_integral(Q: QuantileModel, m: float, points: Sequence[float],
                              method: str = 'auto') -> Tuple[np.ndarray, np.ndarray]:
    """F(a) = integral of Q**m over [0, a] at each point, built from consecutive pieces"""
    points = np.asarray(points, dtype=np.float64)
    grid, inverse = np.unique(points, return_inverse=True)
    starts = np.concatenate(([0.0], grid[:-1]))
    ints, errs = Q.power_integrals(m, starts, grid, method)
    return np.cumsum(ints)[inverse], np.cumsum(errs)[inverse]


def r_function_eval(inputs: BoundInputs, u: float, capped: bool = True) -> float:
    """R(u) = alpha_2^{-1}(u) Q(u), or R_n(u) = (alpha_2^{-1}(u) ^ n) Q(u) when capped"""
    if not 0.0 < u <= 1.0:
        raise DomainError(f"R is defined for u in (0, 1], got {u}")
    inverse = alpha_inverse(inputs.q2, u, cap=inputs.n if capped else None)
    if inverse == 0:
        return 0.0
    return inverse * float(inputs.Q(u))


def ln_eval(inputs: BoundInputs, x: float, capped: bool = True, tol: float = BISECTION_TOL) -> float:
    """L_n(x) = inf{u in [0, 1] : R_n(u) <= x}, by bisection on the non-increasing R_n.

    The returned point always satisfies R_n(L_n(x)) <= x.
    """
    if not x >= 0.0:
        raise DomainError(f"L_n is defined for x >= 0, got {x}")
    if capped and inputs.n * inputs.Q.sup <= x:
        return 0.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if r_function_eval(inputs, mid, capped) <= x:
            hi = mid
        else:
            lo = mid
    return hi


def deviation_bound(inputs: BoundInputs, x: float, majorant: bool = False,
                    method: str = 'auto') -> BoundReport:
    """Four-term maximal deviation bound for P(max_k |S_k| >= x).

    With majorant=True, s_n^2(x) is replaced by the x-free
    n * sum_k integral_0^{alpha_1(k)} Q^2.
    """
    if not x > 0.0:
        raise DomainError(f"deviation level must be positive, got {x}")
    n, Q, r, beta = inputs.n, inputs.Q, inputs.r, inputs.beta
    L = ln_eval(inputs, x)
    errors: Dict[str, float] = {}

    if majorant:
        prim, perr = cumulative_power_integral(Q, 2.0, alpha_breakpoints(inputs.q1, n - 1), method)
        s2_int = QuadResult(float(np.sum(prim)), float(np.sum(perr)), n)
    else:
        s2_int = weighted_integral(inputs.q1, n, Q, 1.0, 2.0, L, 1.0, method)
    errors['deviation.s2'] = _check_quadrature('s_n^2', s2_int)
    s2 = n * s2_int.value

    head = Q.power_integral(1.0, 0.0, L, 'quad' if method == 'quad' else 'auto')
    errors['deviation.term2'] = _check_quadrature('integral of Q on [0, L_n]', head)

    low = weighted_integral(inputs.q2, n, Q, beta / 2.0, 1.0 + beta / 2.0, 0.0, L, method)
    errors['deviation.term3'] = _check_quadrature('integral of R_n^(beta/2) Q on [0, L_n]', low)

    high = weighted_integral(inputs.q2, n, Q, r / 2.0, 1.0 + r / 2.0, L, 1.0, method)
    errors['deviation.term4'] = _check_quadrature('integral of R_n^(r/2) Q on [L_n, 1]', high)

    terms = {
        'deviation.term1': (s2 / x ** 2) ** (r / 2.0) if s2 > 0.0 else 0.0,
        'deviation.term2': n / x * head.value,
        'deviation.term3': n / x ** (1.0 + beta / 2.0) * low.value,
        'deviation.term4': n / x ** (1.0 + r / 2.0) * high.value,
    }
    errors['deviation.term1'] = errors['deviation.s2']
    logger.debug(f"deviation bound n={n} x={x} L_n={L:.6g} s2={s2:.6g}")
    return BoundReport(
        bound='deviation',
        terms=terms,
        parameters={**inputs.parameters(), 'x': x, 'majorant': majorant},
        quadrature_errors=errors,
        diagnostics={'deviation.s2': s2, 'deviation.L_n': L},
    )


def rosenthal_bound(inputs: BoundInputs, form: str = 'sum', method: str = 'auto') -> BoundReport:
    """Rosenthal-type bound on E max_k |S_k|^p for p >= 2.

    form='sum':      n^{p/2} (sum_k int_0^{a1(k)} Q^2)^{p/2} + n sum_k (k+1)^{p-2} int_0^{a2(k)} Q^p
    form='integral': n^{p/2} (int (a1^{-1} ^ n) Q^2)^{p/2} + n int (a2^{-1} ^ n)^{p-1} Q^p
    """
    n, p, Q = inputs.n, inputs.p, inputs.Q
    if p < 2.0:
        raise ConfigError(f"Rosenthal bound requires p >= 2, got {p}")
    if not Q.in_lp(p):
        raise ConfigError(f"quantile function is not in L^{p} (p * b = {p * Q.b:.4g} >= 1)")
    errors: Dict[str, float] = {}

    if form == 'sum':
        lags = np.arange(n)
        f2, e2 = cumulative_power_integral(Q, 2.0, inputs.q1.values(lags), method)
        fp, ep = cumulative_power_integral(Q, p, inputs.q2.values(lags), method)
        weights = (lags + 1.0) ** (p - 2.0)
        variance = QuadResult(float(np.sum(f2)), float(np.sum(e2)), n)
        moment = QuadResult(float(np.sum(weights * fp)), float(np.sum(weights * ep)), n)
        prefix = 'rosenthal'
    elif form == 'integral':
        variance = weighted_integral(inputs.q1, n, Q, 1.0, 2.0, 0.0, 1.0, method)
        moment = weighted_integral(inputs.q2, n, Q, p - 1.0, p, 0.0, 1.0, method)
        prefix = 'rosenthal_integral'
    else:
        raise ConfigError(f"unknown Rosenthal form '{form}'")

    errors[f'{prefix}.term1'] = _check_quadrature('variance integral', variance)
    errors[f'{prefix}.term2'] = _check_quadrature('moment integral', moment)
    terms = {
        f'{prefix}.term1': n ** (p / 2.0) * variance.value ** (p / 2.0),
        f'{prefix}.term2': n * moment.value,
    }
    return BoundReport(bound=prefix, terms=terms, parameters=inputs.parameters(),
                       quadrature_errors=errors)


def large_deviation_bound(inputs: BoundInputs, x: float, variant: str) -> BoundReport:
    """Algebraic large-deviation bounds for P(max_k |S_k| >= n x) and their summed versions"""
    if not x > 0.0:
        raise DomainError(f"deviation level must be positive, got {x}")
    n, p, a, c = inputs.n, inputs.p, inputs.a, inputs.c
    key = f'large_deviation.{variant}'

    if variant == 'WB':
        if not p > 2.0 or not p - 1.0 < a < p:
            raise ConfigError("WB needs p > 2 and a in (p - 1, p)")
        terms = {f'{key}.term1': 1.0 / (n ** a * x ** (2.0 * a)),
                 f'{key}.term2': 1.0 / (n ** (p - 1.0) * x ** p)}
        exponents = {'term1': a, 'term2': p - 1.0}
    elif variant == 'WB2':
        if p != 2.0 or not 1.0 < a < 2.0:
            raise ConfigError("WB2 needs p = 2, a in (1, 2) and c in (0, 1)")
        terms = {f'{key}.term1': 1.0 / (n ** (a * c) * x ** (a * (1.0 + c))),
                 f'{key}.term2': 1.0 / (n * x ** 2)}
        exponents = {'term1': a * c, 'term2': 1.0}
    elif variant == 'WBeasy':
        if not 1.0 < p < 2.0:
            raise ConfigError("WBeasy needs p in (1, 2)")
        terms = {f'{key}.term1': 1.0 / (n ** (p - 1.0) * x ** p)}
        exponents = {'term1': p - 1.0}
    elif variant == 'SB':
        if not p >= 2.0 or not p - 1.0 < a < p:
            raise ConfigError("SB needs p >= 2 and a in (p - 1, p)")
        terms = {f'{key}.term1': 1.0 / x ** (2.0 * a), f'{key}.term2': 1.0 / x ** p}
        exponents = {}
    elif variant == 'SBeasy':
        if not 1.0 < p < 2.0:
            raise ConfigError("SBeasy needs p in (1, 2)")
        terms = {f'{key}.term1': 1.0 / x ** p}
        exponents = {}
    else:
        raise ConfigError(f"unknown large-deviation variant '{variant}', expected one of {LD_VARIANTS}")

    diagnostics = {'n_decay_exponent': p - 1.0}
    diagnostics.update({f'{key}.{name}.n_exponent': value for name, value in exponents.items()})
    return BoundReport(bound=key, terms=terms, parameters={**inputs.parameters(), 'x': x},
                       diagnostics=diagnostics)


def critical_moment(gamma: float, b: float) -> float:
    """p = 1 / (gamma + b (1 - gamma)); infinite when the denominator vanishes"""
    denominator = gamma + b * (1.0 - gamma)
    return math.inf if denominator <= 0.0 else 1.0 / denominator


@dataclass(frozen=True)
class ConditionResult:
    condition: str
    holds: bool
    margin: float
    critical_p: float

    def to_dict(self) -> Dict[str, Any]:
        return {'condition': self.condition, 'holds': self.holds, 'margin': self.margin,
                'critical_p': self.critical_p}


def check_conditions(q2: AlphaModel, Q: QuantileModel, p: float, which: str) -> ConditionResult:
    """Decide the weak/strong moment conditions for power-law inputs.

    With Q = K u^-b (times an optional eps(u) = log(e/u)^-q) and alpha_2^{-1}(u)
    of order u^{-gamma/(1-gamma)}, every condition reduces to comparing p with
    p_max = 1 / (gamma + b (1 - gamma)).
    """
    if which not in CONDITIONS:
        raise ConfigError(f"unknown condition '{which}', expected one of {CONDITIONS}")
    if Q.is_tabulated:
        if which in ('WM', 'WM0'):
            raise UndecidableConditionError(f"{which} is not decidable for a tabulated quantile function")
        b = 0.0
    else:
        b = 0.0 if Q.K == 0.0 else Q.b
    eps_q = Q.eps.q if Q.eps is not None else None

    p_max = critical_moment(q2.effective_gamma, b)
    at_boundary = math.isfinite(p_max) and math.isclose(p, p_max, rel_tol=1e-12, abs_tol=1e-12)

    if which == 'WM':
        holds = p <= p_max or at_boundary
        margin = p_max - p
    elif which == 'WM0':
        holds = (p < p_max and not at_boundary) or (at_boundary and eps_q is not None)
        margin = p_max - p
    elif which == 'SM':
        holds = (p < p_max and not at_boundary) or (at_boundary and eps_q is not None and p * eps_q > 1.0)
        margin = p_max - p
    else:
        dmr_boundary = math.isclose(p_max, 2.0, rel_tol=1e-12)
        holds = (p_max > 2.0 and not dmr_boundary) or (dmr_boundary and eps_q is not None and 2.0 * eps_q > 1.0)
        margin = p_max - 2.0
    return ConditionResult(which, bool(holds), margin, p_max)


def weak_moment_profile(inputs: BoundInputs, p: float, xs: Sequence[float]) -> np.ndarray:
    """x^{p-1} * integral of Q over {R > x} for each x, using the uncapped R"""
    out = np.empty(len(xs))
    for i, x in enumerate(xs):
        L = ln_eval(inputs, float(x), capped=False)
        out[i] = float(x) ** (p - 1.0) * inputs.Q.power_integral(1.0, 0.0, L).value
    return out


@dataclass(frozen=True)
class RegimePrediction:
    gamma: float
    b: float
    p: float
    moment_exponent: float
    log_factor: bool
    holder_delta: Optional[float]
    ld_p: float
    threshold: float
    regime: str
    ld_variant: str
    q_in_lp: bool

    @property
    def tail_decay_exponent(self) -> float:
        return self.ld_p - 1.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'gamma': self.gamma, 'b': self.b, 'p': self.p,
            'moment_exponent': self.moment_exponent, 'log_factor': self.log_factor,
            'holder_delta': 'none' if self.holder_delta is None else self.holder_delta,
            'ld_p': self.ld_p, 'threshold': self.threshold, 'regime': self.regime,
            'ld_variant': self.ld_variant, 'q_in_lp': self.q_in_lp,
            'tail_decay_exponent': self.tail_decay_exponent,
        }


def regime_predict(gamma: float, b: float, p: float) -> RegimePrediction:
    """Predicted growth of ||max_k |S_k|||_p^p, Hölder exponent and large-deviation order"""
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")
    if not 0.0 <= b < 1.0:
        raise ConfigError(f"b must lie in [0, 1), got {b}")
    if not p > 1.0:
        raise ConfigError(f"p must exceed 1, got {p}")

    anomalous = (p * gamma + (gamma - 1.0) * (1.0 - p * b)) / gamma
    if p > 2.0:
        threshold = (2.0 - gamma * (p + 2.0)) / (2.0 * p * (1.0 - gamma))
        base = p / 2.0
    elif p == 2.0:
        threshold = (1.0 - 2.0 * gamma) / (2.0 * (1.0 - gamma))
        base = 1.0
    else:
        threshold = (1.0 - p * gamma) / (p * (1.0 - gamma))
        base = 1.0
    critical = math.isclose(b, threshold, rel_tol=1e-12, abs_tol=1e-12)

    if p > 2.0:
        # the boundary case belongs to the diffusive branch, without a log factor
        if b <= threshold or critical:
            exponent, log_factor, regime = base, False, 'diffusive'
        else:
            exponent, log_factor, regime = anomalous, False, 'anomalous'
    elif critical:
        exponent, log_factor, regime = base, True, 'critical'
    elif b < threshold:
        exponent, log_factor, regime = base, False, 'diffusive'
    else:
        exponent, log_factor, regime = anomalous, False, 'anomalous'

    q_in_lp = p * b < 1.0
    if not q_in_lp:
        exponent = math.inf

    level = gamma + b * (1.0 - gamma)
    if math.isclose(level, 0.5, rel_tol=1e-12):
        ld_variant = 'WB2'
    elif level < 0.5:
        ld_variant = 'WB'
    else:
        ld_variant = 'WBeasy'

    delta = 0.5 - level
    return RegimePrediction(
        gamma=gamma, b=b, p=p,
        moment_exponent=exponent,
        log_factor=log_factor,
        holder_delta=delta if delta > 0.0 and ld_variant == 'WB' else None,
        ld_p=critical_moment(gamma, b),
        threshold=threshold,
        regime=regime,
        ld_variant=ld_variant,
        q_in_lp=q_in_lp,
    )

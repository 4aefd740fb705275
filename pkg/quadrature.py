"""
Panel quadrature for integrands with an integrable power singularity at u = 0
"""
import heapq
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from config import QUAD_MAX_PANELS, QUAD_REL_TOL
from errors import QuadratureError

logger = logging.getLogger(__name__)

# log-spaced panels cover [v_hi * 2**-INITIAL_DEPTH, v_hi], one panel below that
INITIAL_DEPTH = 48
PANEL_LIMIT = 100


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float
    panels: int

    @property
    def relative_error(self) -> float:
        if self.value == 0.0:
            return 0.0 if self.error == 0.0 else math.inf
        return self.error / abs(self.value)


def _panel(g: Callable[[float], float], a: float, b: float, rel_tol: float):
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', integrate.IntegrationWarning)
        value, error = integrate.quad(g, a, b, epsabs=0.0, epsrel=rel_tol * 0.1, limit=PANEL_LIMIT)
    return value, error


def integrate_singular(func: Callable[[np.ndarray], np.ndarray], lo: float, hi: float,
                       singular_exponent: float = 0.0, rel_tol: float = QUAD_REL_TOL,
                       max_panels: int = QUAD_MAX_PANELS) -> QuadResult:
    """Integrate func over [lo, hi] where func(u) behaves like u**(-singular_exponent) near 0.

    The substitution u = v**(1/k), k = 1 - singular_exponent, flattens the
    singularity; the transformed integrand is then integrated on log-spaced
    panels, splitting the worst panel until the summed error estimate meets
    rel_tol. Raises QuadratureError when max_panels is reached first.
    """
    if hi <= lo:
        return QuadResult(0.0, 0.0, 0)
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"integration range [{lo}, {hi}] outside [0, 1]")
    if singular_exponent >= 1.0 and lo == 0.0:
        return QuadResult(math.inf, 0.0, 0)

    # away from u = 0 a non-integrable exponent needs no substitution
    kappa = 1.0 - singular_exponent if 0.0 < singular_exponent < 1.0 else 1.0

    def g(v: float) -> float:
        if v <= 0.0:
            return 0.0
        u = v ** (1.0 / kappa)
        return float(func(np.array([u]))[0]) * (u / v) / kappa

    v_lo, v_hi = lo ** kappa, hi ** kappa
    if v_lo > 0.0:
        depth = max(1, min(INITIAL_DEPTH, int(math.ceil(math.log2(v_hi / v_lo)))))
        edges = np.geomspace(v_lo, v_hi, depth + 1)
    else:
        edges = np.concatenate(([0.0], v_hi * np.exp2(-np.arange(INITIAL_DEPTH, -1, -1.0))))

    heap = []
    total, total_err = 0.0, 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        value, error = _panel(g, a, b, rel_tol)
        total += value
        total_err += error
        heapq.heappush(heap, (-error, a, b, value))

    panels = len(heap)
    while total_err > rel_tol * abs(total) and total_err > 0.0:
        if panels >= max_panels:
            raise QuadratureError(
                f"quadrature on [{lo:.3g}, {hi:.3g}] stalled at relative error "
                f"{total_err / max(abs(total), 1e-300):.2e} after {panels} panels")
        neg_err, a, b, value = heapq.heappop(heap)
        mid = 0.5 * (a + b)
        left = _panel(g, a, mid, rel_tol)
        right = _panel(g, mid, b, rel_tol)
        total += left[0] + right[0] - value
        total_err += left[1] + right[1] + neg_err
        heapq.heappush(heap, (-left[1], a, mid, left[0]))
        heapq.heappush(heap, (-right[1], mid, b, right[0]))
        panels += 1

    logger.debug(f"quadrature [{lo:.3g}, {hi:.3g}] value={total:.6g} err={total_err:.2e} panels={panels}")
    return QuadResult(total, total_err, panels)

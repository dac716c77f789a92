"""Standard normal quantile via a rational approximation.

Uses the Hastings form (Abramowitz & Stegun 26.2.23), whose absolute error in
the returned quantile is below 4.5e-4 on the open unit interval.
"""

from __future__ import annotations

import math

# numerator / denominator coefficients, A&S 26.2.23
C0, C1, C2 = 2.515517, 0.802853, 0.010328
D1, D2, D3 = 1.432788, 0.189269, 0.001308

MAX_ABS_ERROR = 4.5e-4


def norm_ppf(q: float) -> float:
    """Return z such that Phi(z) ~= q.

    ``q = 0`` and ``q = 1`` map to -inf and +inf.
    """
    if not 0.0 <= q <= 1.0 or math.isnan(q):
        raise ValueError(f"probability must lie in [0, 1], got {q!r}")
    if q == 0.0:
        return -math.inf
    if q == 1.0:
        return math.inf
    p = q if q < 0.5 else 1.0 - q
    t = math.sqrt(-2.0 * math.log(p))
    x = t - (C0 + t * (C1 + t * C2)) / (1.0 + t * (D1 + t * (D2 + t * D3)))
    return -x if q < 0.5 else x

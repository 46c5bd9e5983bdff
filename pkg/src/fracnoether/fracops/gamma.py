"""Euler gamma function on the positive real axis (Lanczos, g=7, 9 terms)."""

from __future__ import annotations

import math

from fracnoether.errors import InputError

_G = 7.0
_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def gamma(x: float) -> float:
    x = float(x)
    if not x > 0 or not math.isfinite(x):
        raise InputError(f"gamma is only provided for positive finite arguments, got {x}")
    if x < 1.0:
        # shift into the well-conditioned range instead of reflecting
        return gamma(x + 1.0) / x
    z = x - 1.0
    s = _COEF[0]
    for k in range(1, 9):
        s += _COEF[k] / (z + k)
    tt = z + _G + 0.5
    return _SQRT_2PI * tt ** (z + 0.5) * math.exp(-tt) * s


def rgamma(x: float) -> float:
    """``1 / gamma(x)`` extended by zero at ``x == 0``."""
    if x == 0.0:
        return 0.0
    return 1.0 / gamma(x)

"""Reference values of the continuous operators by direct quadrature.

Independent of the discrete schemes: each defining integral
``int_0^L s**mu g(s) ds`` is computed with the composite midpoint rule on
a mesh graded toward the kernel singularity at ``s = 0``
(``s_j = L (j/M)**r`` with ``r = 2 / (mu + 1)``), doubling ``M`` until
successive estimates agree to ``tol``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from fracnoether.errors import EvalDomainError, InputError, OracleConvergenceError
from fracnoether.exprdsl import Expr, as_expr, diff, evaluate, evaluate_array
from fracnoether.fracops.gamma import gamma, rgamma
from fracnoether.fracops.operators import OperatorKind, check_order

MAX_LEVELS = 22
_START_PANELS = 4


@lru_cache(maxsize=256)
def _unit_rule(mu: float, panels: int) -> tuple[np.ndarray, np.ndarray]:
    """Midpoints and weights ``ds * s_mid**mu`` of the graded rule on [0, 1]."""
    r = 2.0 / (mu + 1.0)
    s = (np.arange(panels + 1) / panels) ** r
    mid = 0.5 * (s[1:] + s[:-1])
    w = np.diff(s) * mid ** mu
    mid.setflags(write=False)
    w.setflags(write=False)
    return mid, w


def _graded_midpoint(g, length: float, mu: float, panels: int) -> float:
    mid, w = _unit_rule(mu, panels)
    return float(length ** (mu + 1.0) * np.dot(w, g(length * mid)))


def singular_integral(g, length: float, mu: float, tol: float,
                      max_levels: int = MAX_LEVELS) -> float:
    """``int_0^length s**mu g(s) ds`` for ``mu > -1`` and smooth ``g``."""
    if length <= 0:
        return 0.0
    panels = _START_PANELS
    prev = prev_prev = _graded_midpoint(g, length, mu, panels)
    for _ in range(max_levels - 1):
        panels *= 2
        cur = _graded_midpoint(g, length, mu, panels)
        if abs(cur - prev) < tol:
            return cur
        prev_prev, prev = prev, cur
    raise OracleConvergenceError(
        f"quadrature did not reach tol={tol} after {max_levels} levels", (prev_prev, prev)
    )


def _fn(e: Expr):
    def f(s):
        s = np.asarray(s, dtype=float)
        return evaluate_array(e, {"t": s}, s.shape)
    return f


@lru_cache(maxsize=8192)
def _quadrature(what: str, left: bool, alpha: float, e: Expr, t: float,
                a: float, b: float, tol: float) -> float:
    # one-sided building blocks, shared by the Riesz and RL-derivative kinds
    if what == "integral":
        f, mu, scale = _fn(e), alpha - 1.0, rgamma(alpha)
    else:
        f, mu, scale = _fn(diff(e, "t")), -alpha, rgamma(1.0 - alpha)
    if left:
        return scale * singular_integral(lambda s: f(t - s), t - a, mu, tol)
    sign = 1.0 if what == "integral" else -1.0
    return scale * singular_integral(lambda s: sign * f(t + s), b - t, mu, tol)


def apply_oracle(kind: OperatorKind, alpha: float, fexpr: Expr | str, t: float, *,
                 a: float = 0.0, b: float = 1.0, tol: float = 1e-8) -> float:
    """Continuous operator of order ``alpha`` applied to ``fexpr(t)`` at ``t``.

    Riemann-Liouville derivatives use ``Caputo + f(a) (t-a)**(-alpha) /
    Gamma(1-alpha)`` (and its mirror), which holds for ``0 < alpha < 1``.
    """
    alpha = check_order(alpha)
    e = as_expr(fexpr, {"t"})
    if not a <= t <= b:
        raise InputError(f"t={t} outside [{a}, {b}]")
    K = OperatorKind

    if kind is K.RieszIntegral:
        return 0.5 * (apply_oracle(K.LeftRLIntegral, alpha, e, t, a=a, b=b, tol=tol)
                      + apply_oracle(K.RightRLIntegral, alpha, e, t, a=a, b=b, tol=tol))
    if kind is K.RieszDerivative:
        return 0.5 * (apply_oracle(K.LeftRLDerivative, alpha, e, t, a=a, b=b, tol=tol)
                      - apply_oracle(K.RightRLDerivative, alpha, e, t, a=a, b=b, tol=tol))
    if kind is K.RieszCaputo:
        return 0.5 * (apply_oracle(K.LeftCaputo, alpha, e, t, a=a, b=b, tol=tol)
                      - apply_oracle(K.RightCaputo, alpha, e, t, a=a, b=b, tol=tol))

    if kind is K.LeftRLIntegral:
        return _quadrature("integral", True, alpha, e, t, a, b, tol)
    if kind is K.RightRLIntegral:
        return _quadrature("integral", False, alpha, e, t, a, b, tol)

    left = kind in (K.LeftCaputo, K.LeftRLDerivative)
    if alpha == 1.0:
        slope = evaluate(diff(e, "t"), {"t": t})
        return slope if left else -slope
    value = _quadrature("caputo", left, alpha, e, t, a, b, tol)
    if kind in (K.LeftCaputo, K.RightCaputo):
        return value

    end = a if left else b
    f_end = evaluate(e, {"t": end})
    dist = abs(t - end)
    if f_end == 0.0:
        return value
    if dist == 0.0:
        raise EvalDomainError(f"Riemann-Liouville derivative is singular at t={t}")
    return value + f_end * dist ** (-alpha) / gamma(1 - alpha)


def closed_form_power(kind: OperatorKind, alpha: float, beta: float, t: float,
                      a: float = 0.0) -> float:
    """Left operators of ``(t-a)**beta``; handy for frozen test values."""
    s = t - a
    K = OperatorKind
    if kind is K.LeftRLIntegral:
        return gamma(beta + 1) / gamma(beta + 1 + alpha) * s ** (beta + alpha)
    if kind in (K.LeftCaputo, K.LeftRLDerivative):
        if beta == 0:
            return 0.0 if kind is K.LeftCaputo else s ** (-alpha) * rgamma(1 - alpha)
        return gamma(beta + 1) / gamma(beta + 1 - alpha) * s ** (beta - alpha)
    raise InputError(f"no closed form coded for {kind}")


"""Discrete fractional integrals and derivatives on a uniform grid.

Every one-sided operator is a dense ``N x N`` matrix; right-sided
operators are the mirror images ``J @ M @ J`` of the left-sided ones
(``J`` reverses node order), and the Riesz kinds are half-sums or
half-differences of the one-sided results.  Matrices are cached per
``(grid, alpha)`` and read-only.

Schemes, for ``0 < alpha < 1``:

* Caputo: L1 scheme, weights ``(j+1)**(1-alpha) - j**(1-alpha)``.
* Riemann-Liouville derivative: Caputo plus the exact boundary term
  ``f(a) (t-a)**(-alpha) / Gamma(1-alpha)``.  The term is singular at
  ``t = a``; that row repeats its inner neighbour and the node is flagged
  whenever ``f(a) != 0``.
* Riemann-Liouville integral: product trapezoid (piecewise-linear ``f``
  integrated exactly against the kernel).

At ``alpha == 1`` every derivative kind is the second-order central
difference (one-sided second order at the ends), with a sign flip for
the right-sided kinds, and the integrals reduce to the running
trapezoid rule.
"""

from __future__ import annotations

import enum
from functools import lru_cache

import numpy as np

from fracnoether.errors import InputError
from fracnoether.fracops.gamma import gamma, rgamma
from fracnoether.fracops.grid import Grid, GridFunction, same_grid


class OperatorKind(enum.Enum):
    LeftRLIntegral = "left-rl-integral"
    RightRLIntegral = "right-rl-integral"
    RieszIntegral = "riesz-integral"
    LeftRLDerivative = "left-rl"
    RightRLDerivative = "right-rl"
    LeftCaputo = "left-caputo"
    RightCaputo = "right-caputo"
    RieszDerivative = "riesz"
    RieszCaputo = "riesz-caputo"

    @classmethod
    def from_name(cls, name: str) -> "OperatorKind":
        for kind in cls:
            if name in (kind.value, kind.name):
                return kind
        choices = ", ".join(k.value for k in cls)
        raise InputError(f"unknown operator kind {name!r}; choose one of {choices}")

    @property
    def is_integral(self) -> bool:
        return self in (OperatorKind.LeftRLIntegral, OperatorKind.RightRLIntegral,
                        OperatorKind.RieszIntegral)


def check_order(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha <= 1.0:
        raise InputError(f"fractional order must satisfy 0 < alpha <= 1, got {alpha}")
    return alpha


def _readonly(m: np.ndarray) -> np.ndarray:
    m.setflags(write=False)
    return m


def _mirror(m: np.ndarray) -> np.ndarray:
    return _readonly(np.ascontiguousarray(m[::-1, ::-1]))


@lru_cache(maxsize=64)
def central_difference_matrix(grid: Grid) -> np.ndarray:
    N, h = grid.N, grid.h
    D = np.zeros((N, N))
    i = np.arange(1, N - 1)
    D[i, i + 1] = 0.5 / h
    D[i, i - 1] = -0.5 / h
    D[0, :3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    D[-1, -3:] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return _readonly(D)


@lru_cache(maxsize=64)
def left_caputo_matrix(grid: Grid, alpha: float) -> np.ndarray:
    if alpha == 1.0:
        return central_difference_matrix(grid)
    N = grid.N
    j = np.arange(N, dtype=float)
    b = (j + 1) ** (1 - alpha) - j ** (1 - alpha)
    c = rgamma(2 - alpha) / grid.h ** alpha
    k = np.arange(N)[:, None]
    m = np.arange(N)[None, :]
    d = k - m
    # coefficient of f_m at node k: b_{k-m} [m >= 1] - b_{k-m-1} [m <= k-1]
    plus = np.where((d >= 0) & (m >= 1), b[np.clip(d, 0, N - 1)], 0.0)
    minus = np.where(d >= 1, b[np.clip(d - 1, 0, N - 1)], 0.0)
    return _readonly(c * (plus - minus))


@lru_cache(maxsize=64)
def l1_increment_matrix(grid: Grid, alpha: float) -> np.ndarray:
    """L1 weights acting on increments ``f[j+1] - f[j]``; shape ``(N, N-1)``.

    Applying the scheme this way annihilates constants exactly.
    """
    N = grid.N
    j = np.arange(N, dtype=float)
    b = (j + 1) ** (1 - alpha) - j ** (1 - alpha)
    d = np.arange(N)[:, None] - 1 - np.arange(N - 1)[None, :]
    W = np.where(d >= 0, b[np.clip(d, 0, N - 1)], 0.0)
    return _readonly(W * (rgamma(2 - alpha) / grid.h ** alpha))


@lru_cache(maxsize=64)
def right_caputo_matrix(grid: Grid, alpha: float) -> np.ndarray:
    return _mirror(left_caputo_matrix(grid, alpha))


@lru_cache(maxsize=64)
def left_rl_derivative_matrix(grid: Grid, alpha: float) -> np.ndarray:
    if alpha == 1.0:
        return central_difference_matrix(grid)
    M = np.array(left_caputo_matrix(grid, alpha))
    s = grid.t[1:] - grid.a
    M[1:, 0] += s ** (-alpha) * rgamma(1 - alpha)
    M[0] = M[1]
    return _readonly(M)


@lru_cache(maxsize=64)
def right_rl_derivative_matrix(grid: Grid, alpha: float) -> np.ndarray:
    return _mirror(left_rl_derivative_matrix(grid, alpha))


@lru_cache(maxsize=64)
def left_integral_matrix(grid: Grid, alpha: float) -> np.ndarray:
    N = grid.N
    k = np.arange(N, dtype=float)[:, None]
    j = np.arange(N, dtype=float)[None, :]
    d = k - j
    with np.errstate(invalid="ignore"):
        dp = np.clip(d, 0, None)
        inner = ((dp + 1) ** (alpha + 1) - 2 * dp ** (alpha + 1)
                 + np.clip(d - 1, 0, None) ** (alpha + 1))
    W = np.where((d >= 1) & (j >= 1), inner, 0.0)
    kk = np.arange(1, N, dtype=float)
    W[1:, 0] = (kk - 1) ** (alpha + 1) - (kk - alpha - 1) * kk ** alpha
    W[np.arange(1, N), np.arange(1, N)] = 1.0
    return _readonly(W * grid.h ** alpha / gamma(alpha + 2))


@lru_cache(maxsize=64)
def right_integral_matrix(grid: Grid, alpha: float) -> np.ndarray:
    return _mirror(left_integral_matrix(grid, alpha))


_ONE_SIDED = {
    OperatorKind.LeftRLIntegral: left_integral_matrix,
    OperatorKind.RightRLIntegral: right_integral_matrix,
    OperatorKind.LeftRLDerivative: left_rl_derivative_matrix,
    OperatorKind.RightRLDerivative: right_rl_derivative_matrix,
    OperatorKind.LeftCaputo: left_caputo_matrix,
    OperatorKind.RightCaputo: right_caputo_matrix,
}

# Riesz kind -> (left kind, right kind, sign of the right part)
_RIESZ = {
    OperatorKind.RieszIntegral: (OperatorKind.LeftRLIntegral, OperatorKind.RightRLIntegral, 1.0),
    OperatorKind.RieszDerivative: (OperatorKind.LeftRLDerivative, OperatorKind.RightRLDerivative, -1.0),
    OperatorKind.RieszCaputo: (OperatorKind.LeftCaputo, OperatorKind.RightCaputo, -1.0),
}


def operator_matrix(kind: OperatorKind, alpha: float, grid: Grid) -> np.ndarray:
    """Dense matrix of the discrete operator (Riesz kinds as half-sums)."""
    alpha = check_order(alpha)
    if kind in _ONE_SIDED:
        return _ONE_SIDED[kind](grid, alpha)
    left, right, sign = _RIESZ[kind]
    return 0.5 * (operator_matrix(left, alpha, grid) + sign * operator_matrix(right, alpha, grid))


def _singular_flags(kind: OperatorKind, alpha: float, f: GridFunction) -> np.ndarray:
    flags = np.zeros(f.grid.N, bool)
    if alpha == 1.0:
        return flags
    rows = f.as_rows()
    if kind in (OperatorKind.LeftRLDerivative, OperatorKind.RieszDerivative):
        flags[0] = bool(np.any(rows[:, 0] != 0))
    if kind in (OperatorKind.RightRLDerivative, OperatorKind.RieszDerivative):
        flags[-1] = bool(np.any(rows[:, -1] != 0))
    return flags


_RIGHT = (OperatorKind.RightCaputo, OperatorKind.RightRLDerivative)
_RL = (OperatorKind.LeftRLDerivative, OperatorKind.RightRLDerivative)


def _one_sided(kind: OperatorKind, alpha: float, grid: Grid, values: np.ndarray) -> np.ndarray:
    if kind.is_integral or alpha == 1.0:
        return values @ _ONE_SIDED[kind](grid, alpha).T
    # same numbers as the matrices, but through increments (exact on constants)
    right = kind in _RIGHT
    v = values[..., ::-1] if right else values
    out = np.diff(v, axis=-1) @ l1_increment_matrix(grid, alpha).T
    if kind in _RL:
        s = grid.t[1:] - grid.a
        out[..., 1:] += v[..., :1] * (s ** (-alpha) * rgamma(1 - alpha))
        out[..., 0] = out[..., 1]
    return out[..., ::-1] if right else out


def apply(kind: OperatorKind, alpha: float, f: GridFunction) -> GridFunction:
    """Apply a discrete operator node-wise (component-wise for vectors)."""
    alpha = check_order(alpha)
    if kind in _RIESZ:
        left, right, sign = _RIESZ[kind]
        fl = apply(left, alpha, f).values
        fr = apply(right, alpha, f).values
        values = 0.5 * (fl + sign * fr)
    else:
        values = _one_sided(kind, alpha, f.grid, f.values)
    return GridFunction(f.grid, values, _singular_flags(kind, alpha, f))


def riesz_caputo(alpha: float, f: GridFunction) -> GridFunction:
    return apply(OperatorKind.RieszCaputo, alpha, f)


def riesz_derivative(alpha: float, f: GridFunction) -> GridFunction:
    return apply(OperatorKind.RieszDerivative, alpha, f)


def dt_gamma(f: GridFunction, g: GridFunction, gamma_: float) -> GridFunction:
    """Fractional product-derivative ``g * RD f + f * RCD g``.

    For vector-valued arguments the components are paired and summed
    (a dot product), which is how the conservation laws use it.
    """
    same_grid(f, g)
    if f.ncomp != g.ncomp:
        raise InputError(f"component mismatch: {f.ncomp} vs {g.ncomp}")
    rd = riesz_derivative(gamma_, f)
    rc = riesz_caputo(gamma_, g)
    values = g.as_rows() * rd.as_rows() + f.as_rows() * rc.as_rows()
    return GridFunction(f.grid, values.sum(axis=0), rd.flagged | rc.flagged)

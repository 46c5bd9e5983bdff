from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from fracnoether.errors import GridMismatchError, GridTooLargeError, InputError

DEFAULT_MAX_N = 4097


def max_nodes() -> int:
    """Node cap for dense assemblies; ``FRAC_NOETHER_MAX_N`` overrides it."""
    raw = os.environ.get("FRAC_NOETHER_MAX_N")
    if raw is None:
        return DEFAULT_MAX_N
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"FRAC_NOETHER_MAX_N must be an integer, got {raw!r}") from None


@dataclass(frozen=True)
class Grid:
    """Uniform partition of ``[a, b]`` into ``N`` nodes."""

    a: float
    b: float
    N: int

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)) or not self.a < self.b:
            raise InputError(f"need a < b, got a={self.a}, b={self.b}")
        if int(self.N) != self.N or self.N < 3:
            raise InputError(f"need an integer N >= 3, got {self.N}")
        if self.N > max_nodes():
            raise GridTooLargeError(
                f"N={self.N} exceeds the cap of {max_nodes()} nodes "
                "(set FRAC_NOETHER_MAX_N to raise it)"
            )
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "N", int(self.N))

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.N - 1)

    @cached_property
    def t(self) -> np.ndarray:
        t = self.a + self.h * np.arange(self.N)
        t[-1] = self.b
        t.setflags(write=False)
        return t

    def reflect(self, values: np.ndarray) -> np.ndarray:
        """Samples of ``f(a + b - t)`` given samples of ``f``."""
        return values[..., ::-1]

    def layer(self) -> int:
        """Boundary-layer width excluded from interior norms."""
        return max(2, int(np.ceil(0.05 * self.N)))

    def interior(self) -> slice:
        k = self.layer()
        return slice(k, self.N - k)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples on a grid; ``values`` has shape ``(N,)`` or ``(ncomp, N)``.

    ``flagged`` marks nodes whose value is a stand-in (singular endpoint
    of a Riemann-Liouville derivative); norms never read them.
    """

    grid: Grid
    values: np.ndarray
    flagged: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim not in (1, 2) or values.shape[-1] != self.grid.N:
            raise InputError(
                f"values must have trailing length {self.grid.N}, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InputError("grid function values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        flagged = np.zeros(self.grid.N, bool) if self.flagged is None else np.array(self.flagged, bool)
        flagged.setflags(write=False)
        object.__setattr__(self, "flagged", flagged)

    @classmethod
    def sample(cls, grid: Grid, fn) -> "GridFunction":
        return cls(grid, fn(grid.t))

    @property
    def ncomp(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[0]

    def component(self, i: int) -> "GridFunction":
        if self.values.ndim == 1:
            if i != 0:
                raise IndexError(i)
            return self
        return GridFunction(self.grid, self.values[i], self.flagged)

    def as_rows(self) -> np.ndarray:
        """Values as a 2-D ``(ncomp, N)`` array."""
        return np.atleast_2d(self.values)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        same_grid(self, other)
        return GridFunction(self.grid, self.values + other.values, self.flagged | other.flagged)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        same_grid(self, other)
        return GridFunction(self.grid, self.values - other.values, self.flagged | other.flagged)

    def scale(self, c: float) -> "GridFunction":
        return GridFunction(self.grid, c * self.values, self.flagged)

    def interior_values(self) -> np.ndarray:
        """Interior slice with flagged nodes dropped."""
        sl = self.grid.interior()
        keep = ~self.flagged[sl]
        return self.as_rows()[:, sl][:, keep]

    def interior_norm(self) -> float:
        """Discrete L2 norm over the interior (boundary layer excluded)."""
        v = self.interior_values()
        return float(np.sqrt(self.grid.h * np.sum(v * v)))

    def interior_max(self) -> float:
        v = self.interior_values()
        return float(np.max(np.abs(v))) if v.size else 0.0


def same_grid(*fns: GridFunction) -> Grid:
    grid = fns[0].grid
    for f in fns[1:]:
        if f.grid != grid:
            raise GridMismatchError(f"grid mismatch: {grid} vs {f.grid}")
    return grid


def functional_weights(grid: Grid, alpha: float) -> np.ndarray:
    """Quadrature weights for integrals of the Lagrangian over the grid.

    Trapezoid for ``alpha < 1``.  At ``alpha == 1`` the derivative is the
    central-difference operator and plain trapezoid weights would make the
    straight line non-stationary for ``v^2``; the weights
    ``h * [1/4, 5/4, 1, ..., 1, 5/4, 1/4]`` satisfy ``w @ D == e_N - e_0``
    (summation by parts) and are still second order.
    """
    h = grid.h
    w = np.full(grid.N, h)
    if alpha == 1.0 and grid.N >= 5:
        w[[0, -1]] = h / 4
        w[[1, -2]] = 5 * h / 4
    else:
        w[[0, -1]] = h / 2
    w.setflags(write=False)
    return w

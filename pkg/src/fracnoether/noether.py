"""Variational invariance and fractional conservation laws along extremals.

Conservation is checked as a residual: the fractional product-derivative
``dt_gamma`` of the conserved pair should vanish along an extremal.  The
discrete operators only approximate the continuous theorems, so a
:class:`ConservationReport` carries interior norms (boundary layer of
``max(2, ceil(0.05 N))`` nodes excluded) that are meant to be compared
across grid refinements.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from fracnoether import exprdsl
from fracnoether.errors import InputError, UnsupportedTransformationError
from fracnoether.exprdsl import Expr
from fracnoether.fracops import (
    Grid,
    GridFunction,
    dt_gamma,
    functional_weights,
    riesz_caputo,
)
from fracnoether.variational import (
    Extremal,
    VariationalProblem,
    _rows,
    _shape,
    el_residual,
    evaluate_functional,
    trajectory_env,
)


@dataclass(frozen=True)
class SymmetryGenerators:
    """Infinitesimal generators ``t -> t + eps*tau``, ``q -> q + eps*xi``."""

    tau: Expr
    xi: tuple[Expr, ...]

    @classmethod
    def create(cls, tau: str | Expr = "0", xi: Sequence[str | Expr] | str | Expr = ("0",),
               n: int = 1) -> "SymmetryGenerators":
        names = exprdsl.variable_names(n)
        if isinstance(xi, (str, exprdsl.Const, exprdsl.Var, exprdsl.Unary, exprdsl.Binary)):
            xi = (xi,)
        xi = tuple(exprdsl.as_expr(x, names) for x in xi)
        if len(xi) != n:
            raise InputError(f"need {n} xi generators, got {len(xi)}")
        return cls(exprdsl.as_expr(tau, names), xi)

    def scaled(self, c: float) -> "SymmetryGenerators":
        k = exprdsl.Const(c)
        return SymmetryGenerators(self.tau, tuple(exprdsl.mul(k, x) for x in self.xi))


@dataclass(frozen=True)
class ConservationReport:
    residual: GridFunction
    interior_norm: float
    interior_max: float
    grid_refinement_trace: tuple[tuple[int, float], ...] = field(default=())

    @classmethod
    def of(cls, residual: GridFunction) -> "ConservationReport":
        norm = residual.interior_norm()
        return cls(residual, norm, residual.interior_max(), ((residual.grid.N, norm),))

    def ratios(self) -> list[float]:
        """Successive norm ratios ``norm(N_k) / norm(N_{k+1})`` of the trace."""
        norms = [n for _, n in self.grid_refinement_trace]
        return [a / b if b > 0 else float("inf") for a, b in zip(norms, norms[1:])]


def refinement_study(build: Callable[[int], ConservationReport],
                     N_list: Iterable[int]) -> ConservationReport:
    """Run ``build`` on every grid size; return the finest report with the full trace."""
    reports = [build(int(N)) for N in sorted(N_list)]
    if not reports:
        raise InputError("empty refinement list")
    trace = tuple((r.residual.grid.N, r.interior_norm) for r in reports)
    last = reports[-1]
    return ConservationReport(last.residual, last.interior_norm, last.interior_max, trace)


def _check_generators(prob: VariationalProblem, gen: SymmetryGenerators) -> None:
    if len(gen.xi) != prob.n_components:
        raise InputError(f"need {prob.n_components} xi generators, got {len(gen.xi)}")
    allowed = exprdsl.variable_names(prob.n_components)
    for e in (gen.tau,) + gen.xi:
        extra = exprdsl.free_vars(e) - allowed
        if extra:
            raise InputError(f"generators may only use t and q*, found {sorted(extra)}")


def _trajectory(prob: VariationalProblem, q) -> tuple[np.ndarray, dict]:
    if isinstance(q, Extremal):
        q = q.q
    rows = _rows(prob, q)
    return rows, trajectory_env(prob, rows)


def _warn_if_not_extremal(prob: VariationalProblem, q) -> None:
    if not isinstance(q, Extremal):
        return
    norm = el_residual(prob, q.q).interior_norm()
    if norm > 10 * q.el_norm + 1e-14:
        warnings.warn(
            f"trajectory is far from stationary: EL residual {norm:.3e} "
            f"vs solver-reported {q.el_norm:.3e}",
            stacklevel=3,
        )


def _sample(e: Expr, env: dict, N: int) -> np.ndarray:
    return exprdsl.evaluate_array(e, env, (N,))


def _gf(prob: VariationalProblem, rows: np.ndarray) -> GridFunction:
    return GridFunction(prob.grid, _shape(rows, prob.n_components))


def invariance_residual(prob: VariationalProblem, gen: SymmetryGenerators,
                        q: GridFunction | Extremal) -> GridFunction:
    """``dL/dq . xi + dL/dv . RCD(xi)`` with ``xi`` sampled along ``q`` (``tau`` ignored)."""
    _check_generators(prob, gen)
    rows, env = _trajectory(prob, q)
    N = prob.grid.N
    xi = np.array([_sample(x, env, N) for x in gen.xi])
    dq = np.array([_sample(e, env, N) for e in prob.dL_dq])
    dv = np.array([_sample(e, env, N) for e in prob.dL_dv])
    rc_xi = riesz_caputo(prob.alpha, _gf(prob, xi)).as_rows()
    return GridFunction(prob.grid, np.sum(dq * xi + dv * rc_xi, axis=0))


def _momentum_term(prob: VariationalProblem, gen: SymmetryGenerators, env: dict) -> GridFunction:
    N = prob.grid.N
    dv = np.array([_sample(e, env, N) for e in prob.dL_dv])
    xi = np.array([_sample(x, env, N) for x in gen.xi])
    return dt_gamma(_gf(prob, dv), _gf(prob, xi), prob.alpha)


def momentum_law_residual(prob: VariationalProblem, gen: SymmetryGenerators,
                          q: GridFunction | Extremal) -> ConservationReport:
    """Residual of the conservation of momentum ``dt_gamma[dL/dv, xi] = 0``."""
    _check_generators(prob, gen)
    _warn_if_not_extremal(prob, q)
    _, env = _trajectory(prob, q)
    return ConservationReport.of(_momentum_term(prob, gen, env))


def noether_residual(prob: VariationalProblem, gen: SymmetryGenerators,
                     q: GridFunction | Extremal) -> ConservationReport:
    """Residual of the general law, with the time generator ``tau``:

    ``dt_gamma[dL/dv, xi] + dt_gamma[L - alpha * dL/dv . RCD q, tau]``.
    """
    _check_generators(prob, gen)
    _warn_if_not_extremal(prob, q)
    rows, env = _trajectory(prob, q)
    N = prob.grid.N
    momentum = _momentum_term(prob, gen, env)
    L = _sample(prob.lagrangian, env, N)
    dv = np.array([_sample(e, env, N) for e in prob.dL_dv])
    v = np.array([env[f"v{i}"] for i in range(prob.n_components)])
    energy = L - prob.alpha * np.sum(dv * v, axis=0)
    tau = _sample(gen.tau, env, N)
    time_term = dt_gamma(GridFunction(prob.grid, energy), GridFunction(prob.grid, tau), prob.alpha)
    return ConservationReport.of(momentum + time_term)


# --------------------------------------------------------------------------
# direct invariance check


@dataclass(frozen=True)
class InvarianceReport:
    eps: tuple[float, ...]
    base_value: float
    transformed_values: tuple[float, ...]
    invariant: bool
    # only for tau == 0:
    slope: float | None = None
    residual_integral: float | None = None
    slope_matches: bool | None = None


SLOPE_TOL = 1e-8
MATCH_RTOL = 1e-4
VALUE_RTOL = 1e-6


def _is_zero(e: Expr, names) -> bool:
    return exprdsl.is_identically_zero(e, names)


def check_invariance_numeric(prob: VariationalProblem, gen: SymmetryGenerators,
                             q: GridFunction | Extremal,
                             eps_list: Sequence[float] = (-1e-3, -5e-4, 5e-4, 1e-3)
                             ) -> InvarianceReport:
    """Compare the action before and after the transformation for small ``eps``.

    Without a time generator the slope ``d/d eps I[q + eps xi]`` is fitted
    at ``eps = 0`` and checked against the integral of
    :func:`invariance_residual`.  With a time generator only ``tau`` affine
    in ``t`` and independent of ``q`` is supported: the transformed interval
    is then again a uniform grid and both action values are compared.
    """
    _check_generators(prob, gen)
    eps = tuple(float(e) for e in eps_list)
    if not eps or any(e == 0 for e in eps):
        raise InputError("eps_list must contain non-zero values")
    rows, env = _trajectory(prob, q)
    N = prob.grid.N
    names = exprdsl.variable_names(prob.n_components)
    base = evaluate_functional(prob, _gf(prob, rows))
    xi = np.array([_sample(x, env, N) for x in gen.xi])
    scale = max(1.0, abs(base))

    if _is_zero(gen.tau, names):
        values = tuple(evaluate_functional(prob, _gf(prob, rows + e * xi)) for e in eps)
        dI = np.array(values) - base
        E = np.array(eps)
        if len(set(eps)) >= 2:
            coef, *_ = np.linalg.lstsq(np.column_stack([E, E * E]), dI, rcond=None)
            slope = float(coef[0])
        else:
            slope = float(dI[0] / E[0])
        w = functional_weights(prob.grid, prob.alpha)
        integral = float(w @ invariance_residual(prob, gen, _gf(prob, rows)).values)
        gap = abs(slope - integral)
        matches = gap <= MATCH_RTOL * max(abs(slope), abs(integral)) or gap <= 1e-10 * scale
        return InvarianceReport(eps, base, values, abs(slope) <= SLOPE_TOL * scale,
                                slope, integral, matches)

    for i in range(prob.n_components):
        if not _is_zero(exprdsl.diff(gen.tau, f"q{i}"), names):
            raise UnsupportedTransformationError(
                "time generator depends on q; only tau affine in t is supported")
    if not _is_zero(exprdsl.diff(exprdsl.diff(gen.tau, "t"), "t"), names):
        raise UnsupportedTransformationError(
            "time generator is not affine in t; only tau = c0 + c1*t is supported")

    tau = _sample(gen.tau, env, N)
    values = []
    for e in eps:
        t_new = prob.grid.t + e * tau
        if not t_new[-1] > t_new[0]:
            raise InputError(f"eps={e} folds the time interval")
        moved = prob.with_grid(Grid(t_new[0], t_new[-1], N))
        values.append(evaluate_functional(moved, GridFunction(moved.grid,
                                                              _shape(rows + e * xi, prob.n_components))))
    values = tuple(values)
    worst = max(abs(v - base) for v in values)
    return InvarianceReport(eps, base, values, worst <= VALUE_RTOL * scale)

"""Fractional problem of the calculus of variations (Riesz-Caputo sense).

The action ``I[q] = int_a^b L(t, q, RCD q) dt`` is discretised with the
same grid as the operators; ``RCD`` is the discrete Riesz-Caputo matrix,
so the discrete action is an ordinary function of the nodal values and
its exact gradient is ``W dL/dq + RC^T (W dL/dv)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from fracnoether import exprdsl
from fracnoether.errors import ConvergenceError, EvalDomainError, InputError
from fracnoether.exprdsl import Expr
from fracnoether.fracops import (
    Grid,
    GridFunction,
    OperatorKind,
    check_order,
    functional_weights,
    operator_matrix,
    riesz_caputo,
    riesz_derivative,
)

log = logging.getLogger(__name__)

GRAD_TOL = 1e-9
MAX_ITER = 5000
ARMIJO = 1e-4
ROUNDOFF = 1e-14


@dataclass(frozen=True)
class VariationalProblem:
    """``L(t, q0.., v0..)`` where ``v`` stands for the Riesz-Caputo derivative of ``q``."""

    grid: Grid
    alpha: float
    n_components: int
    lagrangian: Expr
    qa: tuple[float, ...]
    qb: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "alpha", check_order(self.alpha))
        if self.n_components < 1:
            raise InputError("n_components must be >= 1")
        object.__setattr__(self, "lagrangian", exprdsl.as_expr(self.lagrangian, self.variables))
        qa = tuple(float(x) for x in np.atleast_1d(self.qa))
        if len(qa) != self.n_components:
            raise InputError(f"qa has {len(qa)} entries, expected {self.n_components}")
        object.__setattr__(self, "qa", qa)
        if self.qb is not None:
            qb = tuple(float(x) for x in np.atleast_1d(self.qb))
            if len(qb) != self.n_components:
                raise InputError(f"qb has {len(qb)} entries, expected {self.n_components}")
            object.__setattr__(self, "qb", qb)

    @classmethod
    def create(cls, lagrangian: str | Expr, *, a: float = 0.0, b: float = 1.0, N: int = 129,
               alpha: float = 1.0, qa: Sequence[float] | float = 0.0,
               qb: Sequence[float] | float | None = None, n: int = 1) -> "VariationalProblem":
        return cls(Grid(a, b, N), alpha, n, lagrangian, qa, qb)

    def with_grid(self, grid: Grid) -> "VariationalProblem":
        return VariationalProblem(grid, self.alpha, self.n_components, self.lagrangian,
                                  self.qa, self.qb)

    @property
    def variables(self) -> frozenset[str]:
        return exprdsl.variable_names(self.n_components, velocities=True)

    @cached_property
    def dL_dq(self) -> tuple[Expr, ...]:
        return tuple(exprdsl.diff(self.lagrangian, f"q{i}") for i in range(self.n_components))

    @cached_property
    def dL_dv(self) -> tuple[Expr, ...]:
        return tuple(exprdsl.diff(self.lagrangian, f"v{i}") for i in range(self.n_components))

    @property
    def rc_matrix(self) -> np.ndarray:
        return operator_matrix(OperatorKind.RieszCaputo, self.alpha, self.grid)

    def linear_guess(self) -> GridFunction:
        if self.qb is None:
            raise InputError("the linear initial guess needs both boundary values")
        s = (self.grid.t - self.grid.a) / (self.grid.b - self.grid.a)
        qa, qb = np.array(self.qa)[:, None], np.array(self.qb)[:, None]
        return GridFunction(self.grid, _shape(qa + (qb - qa) * s, self.n_components))


@dataclass(frozen=True)
class Extremal:
    q: GridFunction
    objective: float
    iterations: int
    grad_norm: float
    converged: bool
    el_norm: float


def _shape(values: np.ndarray, n: int) -> np.ndarray:
    values = np.atleast_2d(values)
    return values[0] if n == 1 else values


def _rows(prob: VariationalProblem, q: GridFunction | np.ndarray) -> np.ndarray:
    values = q.values if isinstance(q, GridFunction) else np.asarray(q, dtype=float)
    if isinstance(q, GridFunction) and q.grid != prob.grid:
        raise InputError("trajectory is not sampled on the problem grid")
    rows = np.atleast_2d(values)
    if rows.shape != (prob.n_components, prob.grid.N):
        raise InputError(f"trajectory shape {rows.shape} does not match "
                         f"({prob.n_components}, {prob.grid.N})")
    return rows


def trajectory_env(prob: VariationalProblem, q_rows: np.ndarray,
                   v_rows: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Variable bindings ``t, q*, v*`` along a sampled trajectory."""
    if v_rows is None:
        v_rows = riesz_caputo(prob.alpha, GridFunction(prob.grid, q_rows)).as_rows()
    env = {"t": prob.grid.t}
    for i in range(prob.n_components):
        env[f"q{i}"] = q_rows[i]
        env[f"v{i}"] = v_rows[i]
    return env


def _eval(e: Expr, env, N: int) -> np.ndarray:
    return exprdsl.evaluate_array(e, env, (N,))


def evaluate_functional(prob: VariationalProblem, q: GridFunction) -> float:
    """Quadrature of ``L(t, q, RCD q)`` over the grid."""
    return _objective(prob, _rows(prob, q))


def el_residual(prob: VariationalProblem, q: GridFunction) -> GridFunction:
    """Node-wise ``dL/dq - RD(dL/dv)`` along ``q``; RD is the Riesz derivative."""
    rows = _rows(prob, q)
    env = trajectory_env(prob, rows)
    N = prob.grid.N
    dq = np.array([_eval(e, env, N) for e in prob.dL_dq])
    dv = GridFunction(prob.grid, _shape(np.array([_eval(e, env, N) for e in prob.dL_dv]),
                                        prob.n_components))
    rd = riesz_derivative(prob.alpha, dv)
    return GridFunction(prob.grid, _shape(dq, prob.n_components) - rd.values, rd.flagged)


def functional_gradient(prob: VariationalProblem, q: GridFunction | np.ndarray) -> np.ndarray:
    """Exact gradient of the discrete action with respect to every nodal value.

    Shape ``(n_components, N)``; boundary entries included.
    """
    rows = _rows(prob, q)
    env = trajectory_env(prob, rows)
    N = prob.grid.N
    w = functional_weights(prob.grid, prob.alpha)
    dq = np.array([_eval(e, env, N) for e in prob.dL_dq])
    dv = np.array([_eval(e, env, N) for e in prob.dL_dv])
    return w * dq + (w * dv) @ prob.rc_matrix


def _objective(prob: VariationalProblem, rows: np.ndarray) -> float:
    env = trajectory_env(prob, rows)
    L = _eval(prob.lagrangian, env, prob.grid.N)
    return float(functional_weights(prob.grid, prob.alpha) @ L)


def solve_ritz(prob: VariationalProblem, init: GridFunction | str = "linear", *,
               grad_tol: float = GRAD_TOL, max_iter: int = MAX_ITER,
               callback=None) -> Extremal:
    """Minimise the discrete action over interior nodal values (BFGS).

    Boundary values of ``init`` are overwritten with the problem's data
    before iterating.  Raises :class:`ConvergenceError` (with the last
    iterate attached as ``result``) if the gradient max-norm stays above
    ``grad_tol`` after ``max_iter`` iterations.  ``callback(iteration,
    objective)`` is called after every accepted step.
    """
    if prob.qb is None:
        raise InputError("solve_ritz handles the fixed-endpoint problem only; give qb")
    n, N = prob.n_components, prob.grid.N
    if isinstance(init, str):
        if init != "linear":
            raise InputError(f"unknown initial guess {init!r}")
        init = prob.linear_guess()
    rows = _rows(prob, init).copy()
    rows[:, 0] = prob.qa
    rows[:, -1] = prob.qb

    def unpack(x):
        full = rows.copy()
        full[:, 1:-1] = x.reshape(n, N - 2)
        return full

    def fg(x):
        full = unpack(x)
        return _objective(prob, full), functional_gradient(prob, full)[:, 1:-1].ravel()

    x = rows[:, 1:-1].ravel().copy()
    f, g = fg(x)
    H = np.eye(x.size)
    scaled = False
    it = 0
    while np.max(np.abs(g), initial=0.0) > grad_tol and it < max_iter:
        d = -H @ g
        slope = g @ d
        if slope >= 0:
            H = np.eye(x.size)
            d, slope = -g, -(g @ g)
        step = 1.0
        while True:
            try:
                f_new, g_new = fg(x + step * d)
                if f_new <= f + ARMIJO * step * slope:
                    break
                # below rounding level of f: accept if f did not grow beyond
                # a few ulps and the slope along d has not overshot
                if (f_new <= f + ROUNDOFF * abs(f)
                        and g_new @ d <= (2 * ARMIJO - 1) * slope):
                    break
            except EvalDomainError:
                pass
            step *= 0.5
            if step < 1e-20:
                break
        if step < 1e-20:
            if np.allclose(H, np.eye(x.size)):
                log.warning("line search failed at iteration %d", it)
                break
            H = np.eye(x.size)
            continue
        s = step * d
        y = g_new - g
        x, f, g = x + s, f_new, g_new
        it += 1
        if callback is not None:
            callback(it, f)
        sy = s @ y
        if sy > 1e-300:
            if not scaled:
                H *= sy / (y @ y)
                scaled = True
            rho = 1.0 / sy
            Hy = H @ y
            H += (rho * rho * (y @ Hy) + rho) * np.outer(s, s) - rho * (np.outer(Hy, s) + np.outer(s, Hy))

    q = GridFunction(prob.grid, _shape(unpack(x), n))
    gnorm = float(np.max(np.abs(g), initial=0.0))
    result = Extremal(q, f, it, gnorm, gnorm <= grad_tol, el_residual(prob, q).interior_norm())
    if not result.converged:
        raise ConvergenceError(
            f"Ritz descent stopped after {it} iterations with gradient max-norm {gnorm:.3e}",
            result,
        )
    return result

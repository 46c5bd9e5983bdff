"""Fractional optimal control in the Riesz-Caputo sense.

Problem: minimise ``int_a^b L(t, q, u) dt`` subject to ``RCD q = phi(t, q, u)``
and ``q(a) = q_a``.  With ``H = L + p . phi`` a Pontryagin extremal
satisfies

* ``RCD q = dH/dp``  (state),
* ``RD p = -dH/dq``  (costate),
* ``dH/du = 0``      (stationarity).

Linear-quadratic instances are solved directly by one dense linear
system; anything else supports residual evaluation only.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg

from fracnoether import exprdsl
from fracnoether.errors import (
    InputError,
    NotAutonomousError,
    NotLinearQuadraticError,
    SingularSystemError,
)
from fracnoether.exprdsl import Expr
from fracnoether.fracops import (
    Grid,
    GridFunction,
    OperatorKind,
    check_order,
    dt_gamma,
    operator_matrix,
    riesz_caputo,
    riesz_derivative,
    same_grid,
)
from fracnoether.noether import ConservationReport
from fracnoether.variational import VariationalProblem

log = logging.getLogger(__name__)

RCOND_MIN = 1e-14


def _vec(values: np.ndarray, k: int) -> np.ndarray:
    values = np.atleast_2d(values)
    return values[0] if k == 1 else values


def _tuple(x, k: int, what: str) -> tuple[float, ...]:
    out = tuple(float(v) for v in np.atleast_1d(x))
    if len(out) != k:
        raise InputError(f"{what} has {len(out)} entries, expected {k}")
    return out


@dataclass(frozen=True)
class ControlProblem:
    grid: Grid
    alpha: float
    n: int
    m: int
    lagrangian: Expr
    dynamics: tuple[Expr, ...]
    qa: tuple[float, ...]
    qb: tuple[float, ...] | None = None  # fixed terminal state replaces p(b) = 0

    def __post_init__(self):
        object.__setattr__(self, "alpha", check_order(self.alpha))
        if self.n < 1 or self.m < 1:
            raise InputError(f"bad dimensions n={self.n}, m={self.m}")
        names = self.variables
        object.__setattr__(self, "lagrangian", exprdsl.as_expr(self.lagrangian, names))
        dyn = self.dynamics
        if isinstance(dyn, (str, exprdsl.Const, exprdsl.Var, exprdsl.Unary, exprdsl.Binary)):
            dyn = (dyn,)
        dyn = tuple(exprdsl.as_expr(d, names) for d in dyn)
        if len(dyn) != self.n:
            raise InputError(f"need {self.n} dynamics expressions, got {len(dyn)}")
        object.__setattr__(self, "dynamics", dyn)
        object.__setattr__(self, "qa", _tuple(self.qa, self.n, "qa"))
        if self.qb is not None:
            object.__setattr__(self, "qb", _tuple(self.qb, self.n, "qb"))

    @classmethod
    def create(cls, lagrangian: str | Expr, dynamics: Sequence[str | Expr] | str, *,
               a: float = 0.0, b: float = 1.0, N: int = 129, alpha: float = 1.0,
               qa: Sequence[float] | float = 0.0, qb=None, n: int = 1,
               m: int = 1) -> "ControlProblem":
        return cls(Grid(a, b, N), alpha, n, m, lagrangian, dynamics, qa, qb)

    def with_grid(self, grid: Grid) -> "ControlProblem":
        return ControlProblem(grid, self.alpha, self.n, self.m, self.lagrangian,
                              self.dynamics, self.qa, self.qb)

    @property
    def variables(self) -> frozenset[str]:
        return exprdsl.variable_names(self.n, self.m)

    @property
    def hamiltonian_variables(self) -> frozenset[str]:
        return exprdsl.variable_names(self.n, self.m, costates=True)

    @property
    def state_names(self) -> list[str]:
        return [f"q{i}" for i in range(self.n)]

    @property
    def control_names(self) -> list[str]:
        return [f"u{k}" for k in range(self.m)]

    @property
    def costate_names(self) -> list[str]:
        return [f"p{i}" for i in range(self.n)]

    @cached_property
    def H(self) -> Expr:
        return hamiltonian(self)

    @cached_property
    def dH_dq(self) -> tuple[Expr, ...]:
        return tuple(exprdsl.diff(self.H, q) for q in self.state_names)

    @cached_property
    def dH_du(self) -> tuple[Expr, ...]:
        return tuple(exprdsl.diff(self.H, u) for u in self.control_names)


@dataclass(frozen=True)
class PontryaginTriple:
    q: GridFunction
    u: GridFunction
    p: GridFunction

    def __post_init__(self):
        same_grid(self.q, self.u, self.p)

    @property
    def grid(self) -> Grid:
        return self.q.grid


@dataclass(frozen=True)
class ControlGenerators:
    """Generators of ``t, q, u, p``; only ``tau`` and ``xi`` enter the conservation law."""

    tau: Expr
    xi: tuple[Expr, ...]
    rho: tuple[Expr, ...] = ()
    sigma: tuple[Expr, ...] = ()

    @classmethod
    def create(cls, prob: ControlProblem, tau="0", xi=None, rho=None,
               sigma=None) -> "ControlGenerators":
        names = prob.hamiltonian_variables

        def many(xs, k):
            xs = ["0"] * k if xs is None else ([xs] if isinstance(xs, str) else list(xs))
            if len(xs) != k:
                raise InputError(f"expected {k} generator expressions, got {len(xs)}")
            return tuple(exprdsl.as_expr(x, names) for x in xs)

        return cls(exprdsl.as_expr(tau, names), many(xi, prob.n), many(rho, prob.m),
                   many(sigma, prob.n))


def hamiltonian(prob: ControlProblem) -> Expr:
    """``H = L + sum_i p_i phi_i``."""
    terms = [prob.lagrangian]
    terms += [exprdsl.mul(exprdsl.Var(p), phi) for p, phi in zip(prob.costate_names, prob.dynamics)]
    return exprdsl.total(terms)


def eliminate_control(prob: ControlProblem, expr: Expr | None = None) -> Expr:
    """Substitute ``u`` solved from ``dH/du = 0`` into ``expr`` (default ``H``).

    Only controls that enter ``dH/du_k`` as ``c * u_k + rest`` with a
    constant ``c`` and ``rest`` free of every ``u`` are handled.
    """
    expr = prob.H if expr is None else expr
    mapping = {}
    for u, g in zip(prob.control_names, prob.dH_du):
        c = exprdsl.fold_constants(exprdsl.diff(g, u))
        if not isinstance(c, exprdsl.Const) or c.value == 0:
            raise NotLinearQuadraticError(f"cannot solve dH/d{u} = 0 for {u} symbolically")
        rest = exprdsl.fold_constants(exprdsl.substitute(g, {u: exprdsl.ZERO}))
        if any(v in exprdsl.free_vars(rest) for v in prob.control_names):
            raise NotLinearQuadraticError("stationarity couples the controls")
        mapping[u] = exprdsl.fold_constants(exprdsl.neg(exprdsl.div(rest, c)))
    return exprdsl.fold_constants(exprdsl.substitute(expr, mapping))


# --------------------------------------------------------------------------
# residuals


def _rows(f: GridFunction, k: int, what: str) -> np.ndarray:
    rows = f.as_rows()
    if rows.shape[0] != k:
        raise InputError(f"{what} has {rows.shape[0]} components, expected {k}")
    return rows


def _env(prob: ControlProblem, trip: PontryaginTriple) -> dict[str, np.ndarray]:
    if trip.grid != prob.grid:
        raise InputError("triple is not sampled on the problem grid")
    env = {"t": prob.grid.t}
    for name, row in zip(prob.state_names, _rows(trip.q, prob.n, "q")):
        env[name] = row
    for name, row in zip(prob.control_names, _rows(trip.u, prob.m, "u")):
        env[name] = row
    for name, row in zip(prob.costate_names, _rows(trip.p, prob.n, "p")):
        env[name] = row
    return env


def _eval(e: Expr, env, N: int) -> np.ndarray:
    return exprdsl.evaluate_array(e, env, (N,))


def pontryagin_residual(prob: ControlProblem, trip: PontryaginTriple
                        ) -> tuple[GridFunction, GridFunction, GridFunction]:
    """Node-wise ``(RCD q - phi, RD p + dH/dq, dH/du)``."""
    env = _env(prob, trip)
    N, g = prob.grid.N, prob.grid
    phi = np.array([_eval(e, env, N) for e in prob.dynamics])
    rc = riesz_caputo(prob.alpha, trip.q)
    state = GridFunction(g, _vec(rc.as_rows() - phi, prob.n), rc.flagged)
    dq = np.array([_eval(e, env, N) for e in prob.dH_dq])
    rd = riesz_derivative(prob.alpha, trip.p)
    costate = GridFunction(g, _vec(rd.as_rows() + dq, prob.n), rd.flagged)
    du = np.array([_eval(e, env, N) for e in prob.dH_du])
    stat = GridFunction(g, _vec(du, prob.m))
    return state, costate, stat


def augmented_functional(prob: ControlProblem, trip: PontryaginTriple) -> float:
    """Trapezoid quadrature of ``H - p . RCD q``."""
    env = _env(prob, trip)
    N = prob.grid.N
    H = _eval(prob.H, env, N)
    rc = riesz_caputo(prob.alpha, trip.q).as_rows()
    integrand = H - np.sum(trip.p.as_rows() * rc, axis=0)
    return float(np.trapezoid(integrand, prob.grid.t))


def cost(prob: ControlProblem, trip: PontryaginTriple) -> float:
    """Trapezoid quadrature of ``L`` along the triple."""
    env = _env(prob, trip)
    return float(np.trapezoid(_eval(prob.lagrangian, env, prob.grid.N), prob.grid.t))


# --------------------------------------------------------------------------
# linear-quadratic solve


def _check_lq(prob: ControlProblem) -> None:
    names = prob.hamiltonian_variables
    z = prob.state_names + prob.control_names
    for i, phi in enumerate(prob.dynamics):
        for a in z:
            for b in z:
                if not exprdsl.is_identically_zero(exprdsl.diff(exprdsl.diff(phi, a), b), names):
                    raise NotLinearQuadraticError(f"dynamics {i} is not affine in (q, u)")
    L = prob.lagrangian
    for a in z:
        La = exprdsl.diff(L, a)
        for b in z:
            Lab = exprdsl.diff(La, b)
            for c in z:
                if not exprdsl.is_identically_zero(exprdsl.diff(Lab, c), names):
                    raise NotLinearQuadraticError("lagrangian is not quadratic in (q, u)")


def _affine(e: Expr, unknowns: list[str], env0: dict, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Constant part and per-unknown coefficients of an affine expression."""
    const = _eval(e, env0, N)
    coef = np.array([_eval(exprdsl.diff(e, z), env0, N) for z in unknowns])
    return const, coef


def solve_lq(prob: ControlProblem) -> PontryaginTriple:
    """Solve the discrete Pontryagin system of a linear-quadratic problem.

    Unknowns are all nodal values of ``q, u, p``.  Rows: the state
    equation at every node, ``q(a) = q_a``, the costate equation at the
    interior nodes, ``p(b) = 0`` (or ``q(b) = q_b`` when the problem
    fixes it) and stationarity at every node.  The state equation holding
    at every node makes the returned triple exactly feasible.
    """
    _check_lq(prob)
    g, n, m, N = prob.grid, prob.n, prob.m, prob.grid.N
    unknowns = prob.state_names + prob.control_names + prob.costate_names
    k = len(unknowns)
    env0 = {"t": g.t, **{z: np.zeros(N) for z in unknowns}}
    RC = operator_matrix(OperatorKind.RieszCaputo, prob.alpha, g)
    RD = operator_matrix(OperatorKind.RieszDerivative, prob.alpha, g)
    nodes = np.arange(N)

    A = np.zeros((k * N, k * N))
    r = np.zeros(k * N)

    def block(z: int) -> slice:
        return slice(z * N, (z + 1) * N)

    def put(rows: np.ndarray, e: Expr, sign: float, at: np.ndarray):
        # add sign * (linear part of e) to the given rows; constants go right
        const, coef = _affine(e, unknowns, env0, N)
        for z in range(k):
            A[rows, z * N + at] += sign * coef[z][at]
        r[rows] -= sign * const[at]

    row = 0
    for i in range(n):  # state: RC q_i - phi_i = 0 at every node
        rows = row + nodes
        A[rows, block(i)] += RC
        put(rows, prob.dynamics[i], -1.0, nodes)
        row += N
    for i in range(n):  # initial state
        A[row, i * N] = 1.0
        r[row] = prob.qa[i]
        row += 1
    inner = nodes[1:-1]
    for i in range(n):  # costate: RD p_i + dH/dq_i = 0 at interior nodes
        rows = row + np.arange(N - 2)
        A[rows, block(n + m + i)] += RD[1:-1]
        put(rows, prob.dH_dq[i], 1.0, inner)
        row += N - 2
    for i in range(n):  # terminal closure
        if prob.qb is None:
            A[row, (n + m + i) * N + N - 1] = 1.0
        else:
            A[row, i * N + N - 1] = 1.0
            r[row] = prob.qb[i]
        row += 1
    for j in range(m):  # stationarity at every node
        rows = row + nodes
        put(rows, prob.dH_du[j], 1.0, nodes)
        row += N
    assert row == k * N

    anorm = np.abs(A).sum(axis=0).max()
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
        except (scipy.linalg.LinAlgWarning, np.linalg.LinAlgError, ValueError):
            raise SingularSystemError("Pontryagin system is singular", 0.0) from None
    rcond = float(scipy.linalg.lapack.dgecon(lu, anorm, norm="1")[0]) if anorm > 0 else 0.0
    if not rcond > RCOND_MIN:
        raise SingularSystemError(
            f"Pontryagin system is singular (reciprocal condition estimate {rcond:.3e})", rcond)
    x = scipy.linalg.lu_solve((lu, piv), r)
    log.debug("LQ solve N=%d rcond=%.3e", N, rcond)
    x = x.reshape(k, N)
    return PontryaginTriple(GridFunction(g, _vec(x[:n], n)),
                            GridFunction(g, _vec(x[n:n + m], m)),
                            GridFunction(g, _vec(x[n + m:], n)))


# --------------------------------------------------------------------------
# conservation in Hamiltonian form


def _warn_if_not_extremal(prob: ControlProblem, trip: PontryaginTriple) -> None:
    worst = max(r.interior_max() for r in pontryagin_residual(prob, trip))
    scale = 1.0 + float(np.max(np.abs(trip.q.values)))
    if worst > 1e-6 * scale:
        warnings.warn(f"triple is not a Pontryagin extremal (residual {worst:.3e})", stacklevel=3)


def _modified_hamiltonian(prob: ControlProblem, trip: PontryaginTriple, weight: float
                          ) -> np.ndarray:
    env = _env(prob, trip)
    H = _eval(prob.H, env, prob.grid.N)
    rc = riesz_caputo(prob.alpha, trip.q).as_rows()
    return H + weight * np.sum(trip.p.as_rows() * rc, axis=0)


def hamiltonian_noether_residual(prob: ControlProblem, gen: ControlGenerators,
                                 trip: PontryaginTriple) -> ConservationReport:
    """``dt_gamma[H - (1-alpha) p . RCD q, tau] - dt_gamma[p, xi]`` along the triple."""
    if len(gen.xi) != prob.n:
        raise InputError(f"need {prob.n} xi generators, got {len(gen.xi)}")
    allowed = prob.hamiltonian_variables
    for e in (gen.tau,) + gen.xi + gen.rho + gen.sigma:
        extra = exprdsl.free_vars(e) - allowed
        if extra:
            raise InputError(f"generator uses undeclared names {sorted(extra)}")
    _warn_if_not_extremal(prob, trip)
    env = _env(prob, trip)
    g, N = prob.grid, prob.grid.N
    h_mod = GridFunction(g, _modified_hamiltonian(prob, trip, prob.alpha - 1.0))
    tau = GridFunction(g, _eval(gen.tau, env, N))
    xi = GridFunction(g, _vec(np.array([_eval(x, env, N) for x in gen.xi]), prob.n))
    residual = dt_gamma(h_mod, tau, prob.alpha) - dt_gamma(trip.p, xi, prob.alpha)
    return ConservationReport.of(residual)


def _check_autonomous(prob: ControlProblem) -> None:
    names = prob.hamiltonian_variables
    for e in (prob.lagrangian,) + prob.dynamics:
        if not exprdsl.is_identically_zero(exprdsl.diff(e, "t"), names):
            raise NotAutonomousError("lagrangian or dynamics depend explicitly on t")


def autonomous_invariant(prob: ControlProblem, trip: PontryaginTriple) -> GridFunction:
    """``H + (alpha-1) p . RCD q`` node-wise; its Riesz derivative is the conservation residual."""
    _check_autonomous(prob)
    return GridFunction(prob.grid, _modified_hamiltonian(prob, trip, prob.alpha - 1.0))


def autonomous_invariant_expr(prob: ControlProblem, eliminate: bool = False) -> Expr:
    """Symbolic ``H + (alpha-1) p . phi`` (``RCD q`` replaced by the dynamics).

    With ``eliminate`` the controls are removed through stationarity.
    """
    _check_autonomous(prob)
    c = exprdsl.Const(prob.alpha - 1.0)
    terms = [prob.H] + [exprdsl.mul(c, exprdsl.mul(exprdsl.Var(p), phi))
                        for p, phi in zip(prob.costate_names, prob.dynamics)]
    e = exprdsl.fold_constants(exprdsl.total(terms))
    return eliminate_control(prob, e) if eliminate else e


# --------------------------------------------------------------------------
# link to the calculus of variations


def from_variational(vp: VariationalProblem) -> ControlProblem:
    """Control form with ``phi = u``: ``L(t, q, v)`` becomes ``L(t, q, u)``."""
    n = vp.n_components
    mapping = {f"v{i}": exprdsl.Var(f"u{i}") for i in range(n)}
    L = exprdsl.substitute(vp.lagrangian, mapping)
    dyn = tuple(exprdsl.Var(f"u{i}") for i in range(n))
    return ControlProblem(vp.grid, vp.alpha, n, n, L, dyn, vp.qa, vp.qb)


def lift_trajectory(vp: VariationalProblem, q: GridFunction) -> PontryaginTriple:
    """``(q, u = RCD q, p = -dL/dv)``: the triple a variational extremal induces."""
    rows = np.atleast_2d(q.values)
    v = riesz_caputo(vp.alpha, GridFunction(vp.grid, rows)).as_rows()
    env = {"t": vp.grid.t}
    for i in range(vp.n_components):
        env[f"q{i}"] = rows[i]
        env[f"v{i}"] = v[i]
    p = -np.array([_eval(e, env, vp.grid.N) for e in vp.dL_dv])
    n = vp.n_components
    return PontryaginTriple(q, GridFunction(vp.grid, _vec(v, n)), GridFunction(vp.grid, _vec(p, n)))

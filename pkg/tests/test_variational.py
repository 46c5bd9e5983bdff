import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exprgen import fd4
from fracnoether.errors import ConvergenceError, EvalDomainError, InputError, UnknownNameError
from fracnoether.fracops import GridFunction
from fracnoether.variational import (
    ROUNDOFF,
    VariationalProblem,
    el_residual,
    evaluate_functional,
    functional_gradient,
    solve_ritz,
)

# (1 + pi/4) / (2 pi): integral of (1/2) RCD(t)^2 at alpha = 1/2, where
# RCD(t) = [t^(1/2) + (1-t)^(1/2)] / (2 Gamma(3/2)); cross-checked by adaptive quadrature
HALF_ORDER_ACTION = 0.2841549430918953


def line(prob):
    return GridFunction(prob.grid, prob.grid.t.copy())


class TestFunctional:
    def test_straight_line_classical(self):
        prob = VariationalProblem.create("v0^2/2", alpha=1.0, N=65, qa=0, qb=1)
        assert evaluate_functional(prob, line(prob)) == pytest.approx(0.5, abs=1e-14)

    @pytest.mark.parametrize("alpha", [0.3, 0.5, 1.0])
    def test_constant_has_zero_action(self, alpha):
        prob = VariationalProblem.create("v0^2/2", alpha=alpha, N=65, qa=2, qb=2)
        q = GridFunction(prob.grid, np.full(65, 2.0))
        assert evaluate_functional(prob, q) == 0.0

    def test_half_order_line(self):
        errs = []
        for N in (65, 257):
            prob = VariationalProblem.create("v0^2/2", alpha=0.5, N=N, qa=0, qb=1)
            errs.append(abs(evaluate_functional(prob, line(prob)) - HALF_ORDER_ACTION))
        assert errs[1] <= 1e-4
        assert errs[1] < errs[0]

    def test_domain_error_names_node(self):
        prob = VariationalProblem.create("ln(q0)", alpha=0.5, N=9, qa=1, qb=-1)
        q = GridFunction(prob.grid, np.linspace(1, -1, 9))
        with pytest.raises(EvalDomainError) as info:
            evaluate_functional(prob, q)
        assert info.value.index == 4

    def test_wrong_grid(self):
        prob = VariationalProblem.create("v0^2/2", alpha=0.5, N=9, qa=0, qb=1)
        other = VariationalProblem.create("v0^2/2", alpha=0.5, N=11, qa=0, qb=1)
        with pytest.raises(InputError):
            evaluate_functional(prob, line(other))


class TestProblem:
    def test_undeclared_variable(self):
        with pytest.raises(UnknownNameError):
            VariationalProblem.create("u0^2", qa=0, qb=1)

    def test_boundary_size(self):
        with pytest.raises(InputError):
            VariationalProblem.create("v0^2", qa=[0, 1], qb=1)

    def test_partials(self):
        prob = VariationalProblem.create("q0^2 * v0", qa=0, qb=1)
        from fracnoether.exprdsl import evaluate
        assert evaluate(prob.dL_dq[0], {"q0": 3.0, "v0": 2.0}) == 12.0
        assert evaluate(prob.dL_dv[0], {"q0": 3.0, "v0": 2.0}) == 9.0


class TestResidual:
    def test_free_particle(self):
        prob = VariationalProblem.create("v0^2/2", alpha=1.0, N=33, qa=0, qb=1)
        assert el_residual(prob, line(prob)).interior_max() <= 1e-8

    def test_classical_with_force(self):
        prob = VariationalProblem.create("v0^2/2 - q0", alpha=1.0, N=33, qa=0, qb=1)
        q = GridFunction(prob.grid, prob.grid.t ** 2)
        r = el_residual(prob, q).values
        np.testing.assert_allclose(r[1:-1], -3.0, atol=1e-10)

    @pytest.mark.parametrize("alpha", [0.25, 0.75, 1.0])
    def test_constant(self, alpha):
        prob = VariationalProblem.create("v0^2/2", alpha=alpha, N=33, qa=1, qb=1)
        r = el_residual(prob, GridFunction(prob.grid, np.ones(33)))
        assert np.all(r.values == 0.0)


class TestRitz:
    def test_classical_straight_line(self):
        prob = VariationalProblem.create("v0^2/2", alpha=1.0, N=65, qa=0, qb=1)
        ext = solve_ritz(prob)
        assert ext.converged and ext.grad_norm <= 1e-9
        np.testing.assert_allclose(ext.q.values, prob.grid.t, atol=1e-6)

    def test_fractional_residual_drops(self):
        prob = VariationalProblem.create("v0^2/2", alpha=0.75, N=129, qa=0, qb=1)
        before = el_residual(prob, prob.linear_guess()).interior_max()
        ext = solve_ritz(prob)
        after = el_residual(prob, ext.q).interior_max()
        assert before >= 10 * after

    def test_boundary_values_overwritten(self):
        prob = VariationalProblem.create("v0^2/2", alpha=0.5, N=33, qa=0, qb=1)
        init = GridFunction(prob.grid, np.full(33, 7.0))
        ext = solve_ritz(prob, init)
        assert ext.q.values[0] == 0.0 and ext.q.values[-1] == 1.0

    def test_descent_is_monotone(self):
        prob = VariationalProblem.create("v0^2/2 + q0^4/4", alpha=0.6, N=65, qa=0, qb=1)
        seen = []
        solve_ritz(prob, callback=lambda it, f: seen.append(f))
        f0 = evaluate_functional(prob, prob.linear_guess())
        values = [f0] + seen
        for a, b in zip(values, values[1:]):
            assert b <= a + ROUNDOFF * abs(a)

    def test_refinement_does_not_increase_residual(self):
        norms = []
        for N in (65, 129, 257):
            prob = VariationalProblem.create("v0^2/2", alpha=0.75, N=N, qa=0, qb=1)
            norms.append(el_residual(prob, solve_ritz(prob).q).interior_norm())
        assert norms[0] >= norms[1] >= norms[2]

    def test_vector_problem(self):
        prob = VariationalProblem.create("(v0^2 + v1^2)/2", alpha=1.0, N=33,
                                         qa=[0, 1], qb=[1, -1], n=2)
        ext = solve_ritz(prob)
        np.testing.assert_allclose(ext.q.values[0], prob.grid.t, atol=1e-6)
        np.testing.assert_allclose(ext.q.values[1], 1 - 2 * prob.grid.t, atol=1e-6)

    def test_needs_right_boundary(self):
        prob = VariationalProblem.create("v0^2/2", alpha=0.5, N=33, qa=0)
        with pytest.raises(InputError):
            solve_ritz(prob)

    def test_non_convergence_carries_result(self):
        prob = VariationalProblem.create("v0^2/2", alpha=0.75, N=65, qa=0, qb=1)
        with pytest.raises(ConvergenceError) as info:
            solve_ritz(prob, max_iter=2)
        assert info.value.result.iterations == 2
        assert not info.value.result.converged


LAGRANGIAN = "v0^2/2 + q0^2*v0/3 + sin(q0) + t*v0"


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0.5, 1.0]))
def test_gradient_matches_finite_differences(seed, alpha):
    rng = np.random.default_rng(seed)
    prob = VariationalProblem.create(LAGRANGIAN, alpha=alpha, N=33, qa=0, qb=1)
    q = rng.uniform(-1, 1, 33)
    grad = functional_gradient(prob, q)[0]
    for i in range(33):
        def f(x, i=i):
            y = q.copy()
            y[i] = x
            return evaluate_functional(prob, GridFunction(prob.grid, y))
        fd = fd4(f, q[i])
        assert abs(fd - grad[i]) <= 1e-6 * abs(grad[i]) + 1e-12

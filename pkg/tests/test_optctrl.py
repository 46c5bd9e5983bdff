import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracnoether import exprdsl
from fracnoether.errors import (
    InputError,
    NotAutonomousError,
    NotLinearQuadraticError,
    SingularSystemError,
    UnknownNameError,
)
from fracnoether.exprdsl import evaluate, is_identically_zero, parse
from fracnoether.fracops import Grid, GridFunction, riesz_derivative
from fracnoether.optctrl import (
    ControlGenerators,
    ControlProblem,
    PontryaginTriple,
    augmented_functional,
    autonomous_invariant,
    autonomous_invariant_expr,
    cost,
    eliminate_control,
    from_variational,
    hamiltonian,
    hamiltonian_noether_residual,
    lift_trajectory,
    pontryagin_residual,
    solve_lq,
)
from fracnoether.variational import VariationalProblem, el_residual, solve_ritz

EX2_L, EX2_PHI = "(q0^2 + u0^2)/2", ["-q0 + u0"]
HAM_NAMES = exprdsl.variable_names(1, 1, costates=True)


def example2(alpha, N=129):
    return ControlProblem.create(EX2_L, EX2_PHI, N=N, alpha=alpha, qa=1.0)


def same(e1, e2, names=HAM_NAMES):
    return is_identically_zero(exprdsl.sub(e1, e2), names)


def triple(grid, q, u, p):
    return PontryaginTriple(GridFunction(grid, q), GridFunction(grid, u), GridFunction(grid, p))


class TestHamiltonian:
    def test_example_two(self):
        H = hamiltonian(example2(0.6))
        assert same(H, parse("(q0^2+u0^2)/2 + p0*(-q0+u0)"))

    def test_example_one_eliminated(self):
        prob = ControlProblem.create("u0^2/2", ["u0"], alpha=0.5)
        assert same(hamiltonian(prob), parse("u0^2/2 + p0*u0"))
        assert same(eliminate_control(prob), parse("-p0^2/2"))

    def test_general_lagrangian_with_identity_dynamics(self):
        prob = ControlProblem.create("sin(q0)*u0^2 + t", ["u0"])
        assert same(hamiltonian(prob), parse("sin(q0)*u0^2 + t + p0*u0"))

    def test_elimination_needs_linear_stationarity(self):
        prob = ControlProblem.create("u0^4", ["u0"])
        with pytest.raises(NotLinearQuadraticError):
            eliminate_control(prob)


class TestProblem:
    def test_scope(self):
        with pytest.raises(UnknownNameError):
            ControlProblem.create("v0^2", ["u0"])
        with pytest.raises(UnknownNameError):
            ControlProblem.create("u0^2", ["p0"])

    def test_dimensions(self):
        with pytest.raises(InputError):
            ControlProblem.create("u0^2", ["u0", "u0"])
        with pytest.raises(InputError):
            ControlProblem.create("u0^2", ["u0"], qa=[0, 1])
        with pytest.raises(InputError):
            ControlProblem.create("u0^2", ["u0"], m=0)

    def test_triple_shares_grid(self):
        g1, g2 = Grid(0, 1, 9), Grid(0, 1, 11)
        with pytest.raises(InputError):
            PontryaginTriple(GridFunction(g1, np.zeros(9)), GridFunction(g2, np.zeros(11)),
                             GridFunction(g1, np.zeros(9)))


class TestResidual:
    def test_classical_free_particle(self):
        prob = ControlProblem.create("u0^2/2", ["u0"], alpha=1.0, N=33)
        g = prob.grid
        s, c, st_ = pontryagin_residual(prob, triple(g, g.t, np.ones(33), -np.ones(33)))
        for r in (s, c, st_):
            assert r.interior_max() <= 1e-12

    def test_control_shift(self):
        prob = ControlProblem.create("u0^2/2", ["u0"], alpha=1.0, N=33)
        g = prob.grid
        base = pontryagin_residual(prob, triple(g, g.t, np.ones(33), -np.ones(33)))[2]
        moved = pontryagin_residual(prob, triple(g, g.t, 2 * np.ones(33), -np.ones(33)))[2]
        np.testing.assert_array_equal(moved.values - base.values, 1.0)

    @pytest.mark.parametrize("alpha", [0.6, 0.8, 1.0])
    def test_example_two_solution(self, alpha):
        prob = example2(alpha)
        trip = solve_lq(prob)
        assert trip.q.values[0] == pytest.approx(1.0, abs=1e-14)
        for r in pontryagin_residual(prob, trip):
            assert r.interior_max() <= 1e-8


class TestSolve:
    def test_classical_hamiltonian_constant(self):
        prob = example2(1.0)
        trip = solve_lq(prob)
        env = {"t": prob.grid.t, "q0": trip.q.values, "u0": trip.u.values, "p0": trip.p.values}
        H = exprdsl.evaluate_array(prob.H, env, (prob.grid.N,))
        assert np.ptp(H) <= 1e-4 * (1 + abs(H).max())

    def test_classical_against_riccati(self):
        # q' = -q + u, u = -p, p' = -dH/dq = p - q, p(1) = 0; with p = P q the
        # Riccati equation is P' = 2P + P^2 - 1, P(1) = 0, so u = -P q
        prob = example2(1.0, N=513)
        trip = solve_lq(prob)
        s = np.sqrt(2.0)
        tt = prob.grid.t
        # closed form of the Riccati solution
        k = (1 - s) / (1 + s)
        P = (-1 + s * (1 + k * np.exp(2 * s * (tt - 1))) / (1 - k * np.exp(2 * s * (tt - 1))))
        P1 = -1 + s * (1 + k) / (1 - k)
        assert P1 == pytest.approx(0.0, abs=1e-14)
        np.testing.assert_allclose(trip.u.values, -P * trip.q.values, atol=1e-4)

    def test_fixed_end_minimum_energy(self):
        prob = ControlProblem.create("u0^2/2", ["u0"], alpha=1.0, N=65, qa=0.0, qb=1.0)
        trip = solve_lq(prob)
        np.testing.assert_allclose(trip.u.values, 1.0, atol=1e-10)
        np.testing.assert_allclose(trip.q.values, prob.grid.t, atol=1e-10)

    def test_zero_cost_is_singular(self):
        prob = ControlProblem.create("0", ["u0"], N=33)
        with pytest.raises(SingularSystemError) as info:
            solve_lq(prob)
        assert info.value.rcond <= 1e-14

    @pytest.mark.parametrize("L,phi", [("u0^4", ["u0"]), ("u0^2", ["sin(q0) + u0"]),
                                       ("q0*u0^2", ["u0"])])
    def test_rejects_non_lq(self, L, phi):
        with pytest.raises(NotLinearQuadraticError):
            solve_lq(ControlProblem.create(L, phi, N=17))

    def test_time_varying_coefficients(self):
        prob = ControlProblem.create("(q0^2 + (1+t)*u0^2)/2", ["t*q0 + u0 + 1"], alpha=0.7,
                                     N=65, qa=0.5)
        trip = solve_lq(prob)
        for r in pontryagin_residual(prob, trip):
            assert r.interior_max() <= 1e-8

    def test_two_states(self):
        prob = ControlProblem.create("(q0^2 + q1^2 + u0^2)/2", ["q1", "u0 - q0"], alpha=0.8,
                                     N=65, qa=[1, 0], n=2, m=1)
        trip = solve_lq(prob)
        for r in pontryagin_residual(prob, trip):
            assert r.interior_max() <= 1e-8


class TestAugmented:
    @pytest.mark.parametrize("alpha", [0.6, 1.0])
    def test_feasible_triple(self, alpha):
        prob = example2(alpha)
        trip = solve_lq(prob)
        J, C = augmented_functional(prob, trip), cost(prob, trip)
        assert J == pytest.approx(C, rel=1e-6)

    def test_zero_costate(self):
        prob = example2(0.6, N=65)
        g = prob.grid
        trip = triple(g, np.cos(g.t), np.sin(g.t), np.zeros(65))
        assert augmented_functional(prob, trip) == pytest.approx(cost(prob, trip), rel=1e-14)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0.4, 0.9, 1.0]))
    def test_feasibility_identity(self, seed, alpha):
        # with u chosen so that the state equation holds exactly, J equals the cost
        rng = np.random.default_rng(seed)
        prob = ControlProblem.create(EX2_L, ["u0"], N=33, alpha=alpha, qa=0.0)
        g = prob.grid
        q = GridFunction(g, rng.uniform(-1, 1, 33))
        from fracnoether.fracops import riesz_caputo
        u = riesz_caputo(alpha, q).values
        p = rng.uniform(-1, 1, 33)
        trip = triple(g, q.values, u, p)
        assert augmented_functional(prob, trip) == pytest.approx(cost(prob, trip), rel=1e-12,
                                                                 abs=1e-13)


class TestHamiltonianNoether:
    def test_classical_energy(self):
        prob = example2(1.0)
        trip = solve_lq(prob)
        rep = hamiltonian_noether_residual(prob, ControlGenerators.create(prob, tau="1"), trip)
        assert rep.interior_max <= 1e-4

    def test_matches_riesz_derivative_of_invariant(self):
        prob = example2(0.6)
        trip = solve_lq(prob)
        rep = hamiltonian_noether_residual(prob, ControlGenerators.create(prob, tau="1"), trip)
        expected = riesz_derivative(0.6, autonomous_invariant(prob, trip))
        np.testing.assert_allclose(rep.residual.values, expected.values, rtol=1e-12, atol=1e-12)

    @pytest.mark.xfail(strict=True, reason=(
        "the fractional Hamiltonian-form law does not hold for the discrete extremal at "
        "alpha = 0.6: the residual interior norm stays near 0.021 under refinement"))
    def test_example_two_refinement(self):
        norms = []
        for N in (129, 257):
            prob = example2(0.6, N)
            gen = ControlGenerators.create(prob, tau="1")
            norms.append(hamiltonian_noether_residual(prob, gen, solve_lq(prob)).interior_norm)
        assert norms[0] >= 2 * norms[1]

    def test_zero_generators(self):
        prob = example2(0.6, 65)
        rep = hamiltonian_noether_residual(prob, ControlGenerators.create(prob), solve_lq(prob))
        assert np.all(rep.residual.values == 0.0)

    @settings(max_examples=10, deadline=None)
    @given(st.floats(-4, 4).filter(lambda c: abs(c) > 1e-3))
    def test_bilinear_in_xi(self, c):
        prob = example2(0.7, 65)
        trip = solve_lq(prob)
        base = hamiltonian_noether_residual(prob, ControlGenerators.create(prob, xi=["1 + q0"]),
                                            trip).residual.values
        scaled = hamiltonian_noether_residual(
            prob, ControlGenerators.create(prob, xi=[f"{c!r} * (1 + q0)"]), trip).residual.values
        np.testing.assert_allclose(scaled, c * base, rtol=1e-12, atol=1e-12)

    def test_warns_off_extremal(self):
        prob = example2(0.6, 33)
        g = prob.grid
        trip = triple(g, np.ones(33), np.zeros(33), np.zeros(33))
        with pytest.warns(UserWarning, match="not a Pontryagin extremal"):
            hamiltonian_noether_residual(prob, ControlGenerators.create(prob, tau="1"), trip)

    def test_generator_scope(self):
        prob = example2(0.6, 33)
        with pytest.raises(InputError):
            ControlGenerators.create(prob, tau="v0")


class TestAutonomousInvariant:
    def test_example_one_symbolic(self):
        for alpha in (0.3, 0.5, 0.75, 1.0):
            prob = ControlProblem.create("u0^2/2", ["u0"], alpha=alpha)
            e = autonomous_invariant_expr(prob, eliminate=True)
            target = parse(f"(1 - 2*{alpha!r}) * p0^2 / 2")
            assert same(e, target)

    def test_example_one_vanishes_at_half(self):
        prob = ControlProblem.create("u0^2/2", ["u0"], alpha=0.5)
        assert same(autonomous_invariant_expr(prob, eliminate=True), exprdsl.ZERO)

    def test_example_two_symbolic(self):
        for alpha in (0.6, 0.8):
            e = autonomous_invariant_expr(example2(alpha))
            target = parse(f"(q0^2 + u0^2)/2 + {alpha!r} * p0 * (-q0 + u0)")
            assert same(e, target)

    def test_classical_reduces_to_hamiltonian(self):
        prob = example2(1.0)
        assert same(autonomous_invariant_expr(prob), prob.H)
        trip = solve_lq(prob)
        env = {"t": prob.grid.t, "q0": trip.q.values, "u0": trip.u.values, "p0": trip.p.values}
        H = exprdsl.evaluate_array(prob.H, env, (prob.grid.N,))
        np.testing.assert_allclose(autonomous_invariant(prob, trip).values, H, atol=1e-12)

    def test_grid_form_matches_symbolic_on_feasible_triple(self):
        prob = example2(0.6)
        trip = solve_lq(prob)
        e = autonomous_invariant_expr(prob)
        env = {"t": prob.grid.t, "q0": trip.q.values, "u0": trip.u.values, "p0": trip.p.values}
        np.testing.assert_allclose(autonomous_invariant(prob, trip).values,
                                   exprdsl.evaluate_array(e, env, (prob.grid.N,)), atol=1e-12)

    def test_rejects_time_dependence(self):
        prob = ControlProblem.create("t*u0^2", ["u0"])
        with pytest.raises(NotAutonomousError):
            autonomous_invariant_expr(prob)


@pytest.mark.parametrize("L", ["v0^2/2", "v0^2/2 + q0^2/2 - sin(t)*q0", "exp(q0)*v0^2"])
@pytest.mark.parametrize("alpha", [0.5, 0.8, 1.0])
def test_reduction_to_calculus_of_variations(L, alpha):
    vp = VariationalProblem.create(L, alpha=alpha, N=65, qa=0.2, qb=0.9)
    q = GridFunction(vp.grid, 0.2 + 0.7 * vp.grid.t + 0.1 * np.sin(5 * vp.grid.t))
    cp = from_variational(vp)
    trip = lift_trajectory(vp, q)
    state, costate, stat = pontryagin_residual(cp, trip)
    el = el_residual(vp, q)
    assert np.max(np.abs(stat.values)) <= 1e-10
    assert np.max(np.abs(state.values)) <= 1e-10
    assert np.max(np.abs(costate.values - el.values)) <= 1e-10


def test_reduction_on_ritz_extremal():
    vp = VariationalProblem.create("v0^2/2", alpha=0.75, N=129, qa=0, qb=1)
    ext = solve_ritz(vp)
    cp = from_variational(vp)
    assert same(cp.H, parse("u0^2/2 + p0*u0"))
    _, costate, stat = pontryagin_residual(cp, lift_trajectory(vp, ext.q))
    np.testing.assert_allclose(costate.values, el_residual(vp, ext.q).values, atol=1e-10)
    assert evaluate(cp.dH_du[0], {"u0": 1.0, "p0": -1.0}) == 0.0

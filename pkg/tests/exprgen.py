"""Random expression trees for property and acceptance tests."""

import numpy as np
from hypothesis import strategies as st

from fracnoether.exprdsl import Binary, Const, Unary, Var

NAMES = ("t", "q0", "v0")


def random_expr(rng: np.random.Generator, depth: int = 4, names=NAMES, smooth: bool = False):
    """Random tree; with ``smooth`` only everywhere-differentiable, domain-safe ops."""
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.6:
            return Var(str(rng.choice(names)))
        return Const(float(np.round(rng.uniform(-3, 3), 3)))
    r = rng.random()
    if r < 0.25:
        ops = ("neg", "sin", "cos", "exp") if smooth else ("neg", "sin", "cos", "exp", "ln",
                                                          "sqrt", "abs")
        op = str(rng.choice(ops))
        arg = random_expr(rng, depth - 1, names, smooth)
        if op == "exp":
            arg = Unary("sin", arg)  # keep magnitudes moderate
        return Unary(op, arg)
    if r < 0.4:
        base = random_expr(rng, depth - 1, names, smooth)
        return Binary("pow", base, Const(float(rng.integers(0, 4))))
    op = str(rng.choice(("add", "sub", "mul", "div")))
    left = random_expr(rng, depth - 1, names, smooth)
    right = random_expr(rng, depth - 1, names, smooth)
    if op == "div" and smooth:
        # denominator bounded away from zero
        right = Binary("add", Const(2.5), Unary("sin", right))
    return Binary(op, left, right)


def random_polynomial(rng: np.random.Generator, names=NAMES, terms: int = 4):
    expr = Const(float(np.round(rng.uniform(-2, 2), 3)))
    for _ in range(terms):
        term = Const(float(np.round(rng.uniform(-2, 2), 3)))
        for name in names:
            k = int(rng.integers(0, 3))
            if k:
                term = Binary("mul", term, Binary("pow", Var(name), Const(float(k))))
        expr = Binary("add", expr, term)
    return expr


def exprs(names=NAMES, max_leaves: int = 12):
    """Hypothesis strategy over unrestricted trees."""
    leaf = st.one_of(
        st.sampled_from(names).map(Var),
        st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False).map(Const),
    )

    def extend(children):
        return st.one_of(
            st.tuples(st.sampled_from(("neg", "sin", "cos", "exp", "ln", "sqrt", "abs")),
                      children).map(lambda a: Unary(*a)),
            st.tuples(st.sampled_from(("add", "sub", "mul", "div", "pow")), children,
                      children).map(lambda a: Binary(*a)),
        )

    return st.recursive(leaf, extend, max_leaves=max_leaves)


def fd4(fn, x: float, h: float = 1e-3) -> float:
    """Fourth-order central difference."""
    return (-fn(x + 2 * h) + 8 * fn(x + h) - 8 * fn(x - h) + fn(x - 2 * h)) / (12 * h)

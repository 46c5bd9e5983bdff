"""Fractional integrals and derivatives: discrete schemes and quadrature oracle."""

from fracnoether.fracops.gamma import gamma
from fracnoether.fracops.grid import Grid, GridFunction, functional_weights, max_nodes, same_grid
from fracnoether.fracops.operators import (
    OperatorKind,
    apply,
    check_order,
    dt_gamma,
    operator_matrix,
    riesz_caputo,
    riesz_derivative,
)
from fracnoether.fracops.oracle import apply_oracle

__all__ = [
    "Grid",
    "GridFunction",
    "OperatorKind",
    "apply",
    "apply_oracle",
    "check_order",
    "dt_gamma",
    "functional_weights",
    "gamma",
    "max_nodes",
    "operator_matrix",
    "riesz_caputo",
    "riesz_derivative",
    "same_grid",
]

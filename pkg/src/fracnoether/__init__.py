"""Fractional variational calculus in the Riesz-Caputo sense.

Discrete fractional operators, Ritz extremals, Pontryagin systems for
linear-quadratic control, and residual checks of fractional
conservation laws along computed extremals.
"""

__version__ = "0.1.0"

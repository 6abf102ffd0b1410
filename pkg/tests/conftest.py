import random

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from kvnlab.algebra import Expr
from kvnlab.deconjugation import build_theory

settings.register_profile("kvnlab", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("kvnlab")


def random_poly(rng: random.Random, symbols, degree=3, terms=3, coeffs=(-3, 3)) -> Expr:
    """Sum of ``terms`` random words of length <= ``degree`` with integer weights."""
    out = Expr.zero()
    for _ in range(terms):
        w = Expr.const(rng.randint(*coeffs))
        for _ in range(rng.randint(0, degree)):
            w = w * Expr.sym(rng.choice(symbols))
        out = out + w
    return out


def polys(symbols, degree=3, terms=3):
    """Hypothesis strategy of written-order polynomials over ``symbols``."""
    word = st.tuples(st.integers(-4, 4), st.fractions(-2, 2, max_denominator=3),
                     st.lists(st.sampled_from(symbols), max_size=degree))

    def build(ws):
        out = Expr.zero()
        for re_, im, syms in ws:
            from kvnlab.algebra import Coeff

            w = Expr.const(Coeff(re_, im))
            for s in syms:
                w = w * Expr.sym(s)
            out = out + w
        return out

    return st.lists(word, min_size=1, max_size=terms).map(build)


@pytest.fixture(scope="session")
def kvn1():
    return build_theory(1, subset=(1,), parameters=("m", "k", "a"))


@pytest.fixture(scope="session")
def canon1():
    return build_theory(1, parameters=("m", "k", "eps"))


@pytest.fixture(scope="session")
def partial2():
    return build_theory(2, subset=(1,), parameters=("m_1", "m_2", "lam"))

"""Shared geometric fixtures: so(3) data, random polynomial coefficients."""

import numpy as np
import pytest

from algforge.algebroid import (
    LieAlgebroid,
    Section,
    VectorFieldN,
    action_algebroid,
    base_space,
)
from algforge.exprcore import Const, Expr, VarSpace, ZERO, add, mul, power


def levi_civita() -> np.ndarray:
    eps = np.zeros((3, 3, 3))
    for i, j, k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
        eps[i, j, k] = 1.0
        eps[i, k, j] = -1.0
    return eps


LEVI = levi_civita()


def so3_action_fields(sign: float = -1.0) -> list[VectorFieldN]:
    """gamma_a = sign * eps_{a b al} x^b d_al; sign=-1 is the homomorphism."""
    sp = base_space(3)
    fields = []
    for a in range(3):
        coeffs = []
        for al in range(3):
            acc = ZERO
            for b in range(3):
                if LEVI[a, b, al] != 0.0:
                    acc = add(acc, mul(Const(sign * LEVI[a, b, al]), sp.var(f"x{b + 1}")))
            coeffs.append(acc)
        fields.append(VectorFieldN(tuple(coeffs)))
    return fields


@pytest.fixture(scope="session")
def so3() -> LieAlgebroid:
    return action_algebroid(LEVI, so3_action_fields())


def rand_poly(space: VarSpace, rng: np.random.Generator, deg: int = 2, terms: int = 3) -> Expr:
    """Random small polynomial over the space, coefficients in [-1, 1]."""
    acc = Const(rng.uniform(-1, 1))
    for _ in range(terms):
        term = Const(rng.uniform(-1, 1))
        for _ in range(rng.integers(1, deg + 1)):
            v = space.var(space.names[rng.integers(0, space.dim)])
            term = mul(term, v)
        acc = add(acc, term)
    return acc


def rand_section(rank: int, space: VarSpace, rng: np.random.Generator, deg: int = 2) -> Section:
    return Section(tuple(rand_poly(space, rng, deg) for _ in range(rank)))


def rand_vector_field(space: VarSpace, rng: np.random.Generator, deg: int = 2) -> VectorFieldN:
    return VectorFieldN(tuple(rand_poly(space, rng, deg) for _ in range(space.dim)))


def max_abs_at(exprs, pts: np.ndarray) -> float:
    from algforge.exprcore import eval_batch

    worst = 0.0
    for e in exprs:
        worst = max(worst, float(np.max(np.abs(eval_batch(e, pts.T)))))
    return worst

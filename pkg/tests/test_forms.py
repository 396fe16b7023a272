"""Graded extension, the two pullbacks, and the exterior derivative."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from algforge.algebroid import base_space
from algforge.exprcore import Const, ONE, ZERO, eval_batch, mul, sample_points, simplify
from algforge.forms import (
    MultiTensor,
    SmoothMap,
    VForm,
    exterior_derivative,
    form_pullback,
    pullback_tensor,
    wedge_extend,
    zero_form,
)

from conftest import LEVI, max_abs_at, rand_poly

SPN = base_space(3)
SPM = base_space(2)
# spacetime chart named u1, u2 to keep the two sides distinct
from algforge.exprcore import VarSpace  # noqa: E402

SPU = VarSpace.of("u1", "u2")
PTSN = sample_points(3, 50)
PTSU = sample_points(2, 50)


def rand_vform(space, degree, target, tdim, rng, deg=1) -> VForm:
    coeffs = {}
    for idx in itertools.combinations(range(space.dim), degree):
        coeffs[idx] = tuple(rand_poly(space, rng, deg) for _ in range(tdim))
    return VForm(space, degree, target, tdim, coeffs)


def so3_bracket_tensor() -> MultiTensor:
    table = np.empty((3, 3, 3), dtype=object)
    for a in range(3):
        for b in range(3):
            for c in range(3):
                table[a, b, c] = Const(LEVI[a, b, c])
    return MultiTensor(SPN, ("E", "E"), (3, 3), "E", 3, table)


def forms_equal(A: VForm, B: VForm, pts, tol=1e-10) -> bool:
    assert A.space == B.space and A.degree == B.degree and A.target_dim == B.target_dim
    keys = set(A.coeffs) | set(B.coeffs)
    exprs = []
    for k in keys:
        for t in range(A.target_dim):
            exprs.append(simplify(A.component(k, t) - B.component(k, t)))
    return max_abs_at(exprs, pts) <= tol if exprs else True


# --- wedge_extend --------------------------------------------------------


def test_wedge_extend_degree_zero_is_pointwise_application():
    rng = np.random.default_rng(1)
    F = so3_bracket_tensor()
    A = rand_vform(SPN, 0, "E", 3, rng)
    B = rand_vform(SPN, 0, "E", 3, rng)
    out = wedge_extend(F, A, B)
    assert out.degree == 0
    a = np.array([eval_batch(A.coeffs[()][i], PTSN.T) for i in range(3)])
    b = np.array([eval_batch(B.coeffs[()][i], PTSN.T) for i in range(3)])
    want = np.cross(a.T, b.T).T  # eps_{abc} u^b v^c is the cross product
    got = np.array([eval_batch(out.component((), i), PTSN.T) for i in range(3)])
    assert np.max(np.abs(got - want)) <= 1e-12


def test_wedge_extend_single_pair_annihilates():
    # C(A ^, A) with A having a single nonzero component: needs two
    # distinct frame legs, so antisymmetry kills it
    F = so3_bracket_tensor()
    A = VForm(SPN, 1, "E", 3, {(0,): (ONE, ZERO, ZERO)})
    out = wedge_extend(F, A, A)
    assert not out.coeffs


def test_wedge_extend_sign_rule():
    # F(A ^, B) = -(-1)^{km} F(B ^, A) for antisymmetric F
    rng = np.random.default_rng(3)
    F = so3_bracket_tensor()
    for k in (0, 1, 2):
        for m in (0, 1, 2):
            if k + m > 3:
                continue
            A = rand_vform(SPN, k, "E", 3, rng)
            B = rand_vform(SPN, m, "E", 3, rng)
            lhs = wedge_extend(F, A, B)
            rhs = wedge_extend(F, B, A)
            sign = -((-1.0) ** (k * m))
            keys = set(lhs.coeffs) | set(rhs.coeffs)
            resid = [
                simplify(lhs.component(key, t) - mul(Const(sign), rhs.component(key, t)))
                for key in keys
                for t in range(3)
            ]
            assert max_abs_at(resid, PTSN) <= 1e-10, (k, m)


def test_wedge_extend_multilinear():
    rng = np.random.default_rng(5)
    F = so3_bracket_tensor()
    A = rand_vform(SPN, 1, "E", 3, rng)
    B = rand_vform(SPN, 1, "E", 3, rng)
    f = rand_poly(SPN, rng)
    fA = A.map_coeffs(lambda e: simplify(mul(f, e)))
    lhs = wedge_extend(F, fA, B)
    rhs = wedge_extend(F, A, B).map_coeffs(lambda e: simplify(mul(f, e)))
    assert forms_equal(lhs, rhs, PTSN)


def test_wedge_extend_overflow_flagged():
    rng = np.random.default_rng(7)
    sp = base_space(2)
    table = np.empty((1, 2, 2), dtype=object)
    for idx in np.ndindex(*table.shape):
        table[idx] = rand_poly(sp, rng)
    F = MultiTensor(sp, ("E", "E"), (2, 2), "scalar", 1, table)
    A = rand_vform(sp, 2, "E", 2, rng)
    B = rand_vform(sp, 1, "E", 2, rng)
    with pytest.warns(UserWarning, match="zero form"):
        out = wedge_extend(F, A, B)
    assert not out.coeffs


def test_wedge_extend_rejects_tag_mismatch():
    F = so3_bracket_tensor()
    rng = np.random.default_rng(9)
    A = rand_vform(SPN, 1, "TN", 3, rng)
    B = rand_vform(SPN, 1, "E", 3, rng)
    with pytest.raises(ValueError, match="target"):
        wedge_extend(F, A, B)


# --- pullbacks -----------------------------------------------------------


def phi_example() -> SmoothMap:
    u1, u2 = SPU.var("u1"), SPU.var("u2")
    return SmoothMap(SPU, SPN, (u1 * u2, u1 + Const(0.5) * u2**2, u2))


def test_form_pullback_degree_zero_is_composition():
    rng = np.random.default_rng(11)
    phi = phi_example()
    v = rand_vform(SPN, 0, "E", 3, rng)
    out = form_pullback(phi, v)
    for t in range(3):
        want = phi.pull_scalar(v.coeffs[()][t])
        assert max_abs_at([simplify(out.component((), t) - want)], PTSU) <= 1e-12


def test_form_pullback_identity_map():
    rng = np.random.default_rng(13)
    ident = SmoothMap(SPN, SPN, SPN.vars())
    w = rand_vform(SPN, 2, "scalar", 1, rng)
    out = form_pullback(ident, w)
    assert forms_equal(out, w, PTSN)


def test_pullback_identity_vs_graded_extension():
    # Phi^! F = (1/l!) (Phi* F)(DPhi ^, ..., ^ DPhi) for a 2-form F:
    # the left side contracts slots with the Jacobian directly, the right
    # side goes through the graded extension machinery.
    rng = np.random.default_rng(17)
    phi = phi_example()
    F2 = rand_vform(SPN, 2, "scalar", 1, rng)  # 2-form on N
    lhs = form_pullback(phi, F2)

    # F as a multitensor with two TN inputs (full antisymmetric table)
    table = np.empty((1, 3, 3), dtype=object)
    for a in range(3):
        for b in range(3):
            table[0, a, b] = F2.component((a, b), 0)
    F_tensor = MultiTensor(SPN, ("TN", "TN"), (3, 3), "scalar", 1, table)
    F_pulled = pullback_tensor(phi, F_tensor)
    J = phi.jacobian()
    dphi = VForm(
        SPU,
        1,
        "TN",
        3,
        {
            (mu,): tuple(J[al, mu] for al in range(3))
            for mu in range(2)
        },
    )
    rhs = wedge_extend(F_pulled, dphi, dphi).map_coeffs(
        lambda e: simplify(mul(Const(0.5), e))
    )
    assert forms_equal(lhs, rhs, PTSU, tol=1e-10)


def test_form_pullback_commutes_with_wedge_extend():
    # Phi^!(F(A ^, B)) = (Phi* F)(Phi^! A ^, Phi^! B)
    rng = np.random.default_rng(19)
    phi = phi_example()
    F = so3_bracket_tensor()
    A = rand_vform(SPN, 1, "E", 3, rng)
    B = rand_vform(SPN, 1, "E", 3, rng)
    lhs = form_pullback(phi, wedge_extend(F, A, B))
    rhs = wedge_extend(pullback_tensor(phi, F), form_pullback(phi, A), form_pullback(phi, B))
    assert forms_equal(lhs, rhs, PTSU, tol=1e-10)


# --- exterior derivative -------------------------------------------------


def test_d_of_constant_is_zero():
    w = VForm(SPN, 0, "scalar", 1, {(): (Const(4.25),)})
    assert not exterior_derivative(w).coeffs


def test_d_of_x1_dx2():
    w = VForm(SPN, 1, "scalar", 1, {(1,): (SPN.var("x1"),)})
    dw = exterior_derivative(w)
    assert set(dw.coeffs) == {(0, 1)}
    assert max_abs_at([dw.component((0, 1), 0) - 1], PTSN) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_dd_is_zero(seed):
    rng = np.random.default_rng(seed)
    f = VForm(SPN, 0, "scalar", 1, {(): (rand_poly(SPN, rng, deg=3),)})
    ddf = exterior_derivative(exterior_derivative(f))
    assert max_abs_at(ddf.all_exprs(), PTSN) <= 1e-12 if ddf.coeffs else True


def test_d_needs_flat_frame_assertion():
    rng = np.random.default_rng(23)
    w = rand_vform(SPN, 1, "E", 3, rng)
    with pytest.raises(ValueError, match="flat-frame"):
        exterior_derivative(w)
    exterior_derivative(w, assume_flat_frame=True)


def test_degree_cap_enforced():
    sp4 = base_space(4)
    with pytest.raises(ValueError, match="cap"):
        VForm(sp4, 4, "scalar", 1, {})
    rng = np.random.default_rng(29)
    w = rand_vform(sp4, 3, "scalar", 1, rng)
    with pytest.raises(ValueError, match="cap"):
        exterior_derivative(w)


def test_antisymmetric_access():
    w = VForm(SPN, 2, "scalar", 1, {(0, 2): (SPN.var("x2"),)})
    assert w.component((2, 0), 0) == simplify(-SPN.var("x2"))
    assert w.component((2, 2), 0).is_zero()
    with pytest.raises(ValueError, match="increasing"):
        VForm(SPN, 2, "scalar", 1, {(2, 0): (ONE,)})

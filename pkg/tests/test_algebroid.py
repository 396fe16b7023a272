"""Brackets, anchors, axiom checks, and the action-algebroid constructor."""

import numpy as np
import pytest

from algforge.algebroid import (
    LieAlgebroid,
    Section,
    VectorFieldN,
    action_algebroid,
    algebroid_from_json,
    anchor_apply,
    base_space,
    bracket_sections,
    check_anchor_morphism,
    check_jacobi,
    tangent_algebroid,
    vf_bracket,
)
from algforge.exprcore import (
    Const,
    ZERO,
    eval_batch,
    mul,
    parse_expr,
    sample_points,
    simplify,
)

from conftest import LEVI, max_abs_at, rand_poly, rand_section, so3_action_fields

SP3 = base_space(3)
PTS3 = sample_points(3, 100)


def section_values(s, pts):
    return np.stack([eval_batch(c, pts.T) for c in s.coeffs])


# --- bracket -------------------------------------------------------------


def test_so3_constant_sections_give_lie_algebra_bracket(so3):
    # cross-product oracle: [e_a, e_b] components equal eps_{abc}
    for a in range(3):
        for b in range(3):
            mu = so3.frame_section(a)
            nu = so3.frame_section(b)
            br = bracket_sections(so3, mu, nu)
            want = np.cross(np.eye(3)[a], np.eye(3)[b])
            got = section_values(br, PTS3[:5])
            assert np.max(np.abs(got - want[:, None])) <= 1e-14


def test_bracket_self_is_zero(so3):
    rng = np.random.default_rng(7)
    mu = rand_section(3, SP3, rng)
    br = bracket_sections(so3, mu, mu)
    assert max_abs_at(br.coeffs, PTS3) <= 1e-12


def test_so3_leibniz_example(so3):
    # [e1, x2*e2] = x2*e3 + x3*e2, from the Leibniz rule by hand:
    # x2*[e1,e2] + (gamma_1 x2)*e2, and gamma_1 = x3 d_2 - x2 d_3.
    mu = so3.frame_section(0)
    nu = Section((ZERO, SP3.var("x2"), ZERO))
    br = bracket_sections(so3, mu, nu)
    pts = sample_points(3, 20)
    want = [ZERO, SP3.var("x3"), SP3.var("x2")]
    for got, exp in zip(br.coeffs, want):
        assert max_abs_at([got - exp], pts) <= 1e-14


def test_bracket_antisymmetric(so3):
    rng = np.random.default_rng(11)
    mu, nu = rand_section(3, SP3, rng), rand_section(3, SP3, rng)
    ab = bracket_sections(so3, mu, nu)
    ba = bracket_sections(so3, nu, mu)
    resid = [a + b for a, b in zip(ab.coeffs, ba.coeffs)]
    assert max_abs_at(resid, PTS3) <= 1e-12


def test_bracket_leibniz_random(so3):
    # [mu, f nu] - f [mu, nu] - (rho(mu) f) nu  =  0
    rng = np.random.default_rng(13)
    for _ in range(3):
        mu, nu = rand_section(3, SP3, rng), rand_section(3, SP3, rng)
        f = rand_poly(SP3, rng)
        fnu = Section(tuple(simplify(mul(f, c)) for c in nu.coeffs))
        lhs = bracket_sections(so3, mu, fnu)
        base = bracket_sections(so3, mu, nu)
        X = anchor_apply(so3, mu)
        from algforge.exprcore import add, diff

        rho_mu_f = ZERO
        for al in range(3):
            rho_mu_f = add(rho_mu_f, mul(X.coeffs[al], diff(f, al)))
        resid = [
            lhs.coeffs[a] - mul(f, base.coeffs[a]) - mul(rho_mu_f, nu.coeffs[a])
            for a in range(3)
        ]
        assert max_abs_at(resid, PTS3) <= 1e-10


def test_anchor_intertwines_brackets(so3):
    rng = np.random.default_rng(17)
    mu, nu = rand_section(3, SP3, rng), rand_section(3, SP3, rng)
    lhs = anchor_apply(so3, bracket_sections(so3, mu, nu))
    rhs = vf_bracket(anchor_apply(so3, mu), anchor_apply(so3, nu))
    resid = [a - b for a, b in zip(lhs.coeffs, rhs.coeffs)]
    assert max_abs_at(resid, PTS3) <= 1e-9


def test_jacobiator_vanishes_on_random_sections(so3):
    rng = np.random.default_rng(19)
    mu, nu, et = (rand_section(3, SP3, rng, deg=1) for _ in range(3))
    j = [ZERO] * 3
    for x, y, z in ((mu, nu, et), (nu, et, mu), (et, mu, nu)):
        term = bracket_sections(so3, x, bracket_sections(so3, y, z))
        j = [a + b for a, b in zip(j, term.coeffs)]
    assert max_abs_at(j, PTS3) <= 1e-9


def test_bracket_rank_mismatch(so3):
    with pytest.raises(ValueError):
        bracket_sections(so3, Section((ZERO, ZERO)), so3.frame_section(0))


# --- anchor --------------------------------------------------------------


def test_zero_anchor_gives_zero_field():
    rho = np.array([[ZERO] * 3] * 3, dtype=object)
    L = LieAlgebroid(space=SP3, rank=3, rho=rho, C_upper={})
    rng = np.random.default_rng(3)
    X = anchor_apply(L, rand_section(3, SP3, rng))
    assert all(c.is_zero() for c in X.coeffs)


def test_tangent_anchor_is_identity():
    L = tangent_algebroid(3)
    rng = np.random.default_rng(5)
    mu = rand_section(3, SP3, rng)
    X = anchor_apply(L, mu)
    resid = [a - b for a, b in zip(X.coeffs, mu.coeffs)]
    assert max_abs_at(resid, PTS3) <= 1e-14


def test_so3_anchor_at_point(so3):
    # rho^al_3 = -eps_{3 be al} x^be; at x = (1,0,0) this is (0,-1,0).
    # Cross-checked against the rotation flow exp(t gamma_3) in test_gauge.
    X = anchor_apply(so3, so3.frame_section(2))
    vals = [float(eval_batch(c, np.array([[1.0, 0.0, 0.0]]).T)[0]) for c in X.coeffs]
    assert vals == pytest.approx([0.0, -1.0, 0.0], abs=1e-15)


# --- axiom checks --------------------------------------------------------


def test_tangent_residuals_are_zero():
    L = tangent_algebroid(3)
    assert check_anchor_morphism(L, PTS3, 1e-15).passed
    assert check_jacobi(L, PTS3, 1e-15).passed


def test_so3_passes_axioms(so3):
    res_a = check_anchor_morphism(so3, PTS3, 1e-12)
    res_j = check_jacobi(so3, PTS3, 1e-12)
    assert res_a.passed and res_a.max_residual <= 1e-12
    assert res_j.passed and res_j.max_residual <= 1e-12


def test_corrupted_so3_fails_anchor_check(so3):
    # C^3_12 := 2 shifts the residual by |rho^be_3| which reaches ~1 on the box
    C_upper = {k: v.copy() for k, v in so3.C_upper.items()}
    col = C_upper[(0, 1)].copy()
    col[2] = Const(2.0)
    C_upper[(0, 1)] = col
    bad = LieAlgebroid(space=so3.space, rank=3, rho=so3.rho, C_upper=C_upper)
    res = check_anchor_morphism(bad, PTS3, 1e-9)
    assert not res.passed
    assert res.max_residual >= 0.5


def test_abelian_jacobi_zero():
    rng = np.random.default_rng(23)
    rho = np.array(
        [[rand_poly(SP3, rng) for _ in range(3)] for _ in range(3)], dtype=object
    )
    L = LieAlgebroid(space=SP3, rank=3, rho=rho, C_upper={})
    assert check_jacobi(L, PTS3, 1e-15).max_residual == 0.0


def test_rank2_has_no_jacobi_triple_but_storage_is_enforced():
    sp2 = base_space(2)
    rho = np.array([[ZERO] * 2] * 2, dtype=object)
    col = np.array([sp2.var("x1"), ZERO], dtype=object)
    L = LieAlgebroid(space=sp2, rank=2, rho=rho, C_upper={(0, 1): col})
    assert check_jacobi(L, sample_points(2, 10), 1e-15).max_residual == 0.0
    assert L.C(0, 1, 0) == -col[0]  # derived by antisymmetry
    with pytest.raises(ValueError):
        LieAlgebroid(space=sp2, rank=2, rho=rho, C_upper={(1, 0): col})


# --- constructors --------------------------------------------------------


def test_action_algebroid_abelian_zero():
    gamma = [VectorFieldN((ZERO, ZERO, ZERO)) for _ in range(2)]
    L = action_algebroid(np.zeros((2, 2, 2)), gamma)
    assert check_anchor_morphism(L, PTS3, 1e-15).max_residual == 0.0
    assert check_jacobi(L, PTS3, 1e-15).max_residual == 0.0


def test_action_algebroid_so3_accepted(so3):
    assert check_anchor_morphism(so3, PTS3, 1e-12).passed
    assert check_jacobi(so3, PTS3, 1e-12).passed


def test_action_algebroid_antihomomorphism_rejected():
    with pytest.raises(ValueError, match="not a homomorphism"):
        action_algebroid(LEVI, so3_action_fields(sign=+1.0))


def test_action_algebroid_requires_antisymmetric_constants():
    f = np.zeros((2, 2, 2))
    f[0, 0, 1] = 1.0  # no compensating -1 at (0,1,0)
    with pytest.raises(ValueError, match="antisymmetric"):
        action_algebroid(f, [VectorFieldN((ZERO,)), VectorFieldN((ZERO,))])


def test_tangent_algebroid_n1():
    L = tangent_algebroid(1)
    assert L.rank == 1 and L.rho[0, 0] == Const(1)
    assert not L.C_upper


def test_tangent_algebroid_bracket_matches_vector_field_bracket():
    # [x1 e_1, e_1] = -e_1: classical Lie bracket oracle
    L = tangent_algebroid(2)
    sp = L.space
    mu = Section((sp.var("x1"), ZERO))
    nu = Section((Const(1), ZERO))
    br = bracket_sections(L, mu, nu)
    pts = sample_points(2, 20)
    assert max_abs_at([br.coeffs[0] + 1, br.coeffs[1]], pts) <= 1e-14
    # general random cross-check against vf_bracket
    rng = np.random.default_rng(29)
    a, b = rand_section(2, sp, rng), rand_section(2, sp, rng)
    lhs = bracket_sections(L, a, b)
    rhs = vf_bracket(VectorFieldN(a.coeffs), VectorFieldN(b.coeffs))
    assert max_abs_at([x - y for x, y in zip(lhs.coeffs, rhs.coeffs)], pts) <= 1e-12


# --- JSON ----------------------------------------------------------------


def test_algebroid_from_json_round_trip(so3):
    doc = {
        "base_dim": 3,
        "rank": 3,
        "rho": [["0", "x3", "-x2"], ["-x3", "0", "x1"], ["x2", "-x1", "0"]],
        "C": [
            {"a": 3, "b": 1, "c": 2, "expr": "1"},
            {"a": 1, "b": 2, "c": 3, "expr": "1"},
            {"a": 2, "b": 1, "c": 3, "expr": "-1"},
        ],
    }
    L = algebroid_from_json(doc)
    for a in range(3):
        for al in range(3):
            resid = L.rho[a, al] - so3.rho[a, al]
            assert max_abs_at([resid], PTS3) <= 1e-15
    for a in range(3):
        for b in range(3):
            for c in range(3):
                resid = L.C(a, b, c) - so3.C(a, b, c)
                assert max_abs_at([resid], PTS3) <= 1e-15


def test_algebroid_from_json_rejects_bad_storage():
    doc = {"base_dim": 1, "rank": 2, "rho": [["0"], ["0"]], "C": [{"a": 1, "b": 2, "c": 1, "expr": "1"}]}
    with pytest.raises(ValueError):
        algebroid_from_json(doc)

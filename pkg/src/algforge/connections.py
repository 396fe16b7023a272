"""Linear and Lie-algebroid connections, curvatures, and the basic curvature.

Coefficient conventions (0-based):

* ``omega[a, b, al]``   linear connection on E:  nabla_{d_al} e_b = omega^a_{b al} e_a
* ``B[a, b, c]``        E-connection on E:       (nabla^E_{e_b} e_c)^a = B^a_{bc}
* ``G[al, a, be]``      E-connection on TN:      (nabla^E_{e_a} d_be)^al = G^al_{a be}
* ``S[a, b, c, be]``    basic curvature:         (R^bas(e_b, e_c) d_be)^a

Derived connections are materialized as Expr tables (never closures) so
they can be differentiated again exactly; the basic curvature needs
second derivatives of the input tables.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .algebroid import LieAlgebroid, Section, VectorFieldN, bracket_sections
from .exprcore import (
    DEFAULT_SEED,
    Expr,
    ZERO,
    add,
    diff,
    eval_batch,
    mul,
    neg,
    parse_expr,
    simplify,
)
from .result import CheckResult, make_result

__all__ = [
    "LinearConnection",
    "EConnOnE",
    "EConnOnTN",
    "BasicCurvature",
    "CurvatureTable",
    "flat_connection",
    "connection_from_json",
    "nabla_rho",
    "basic_connection_E",
    "basic_connection_TN",
    "apply_Econn",
    "apply_Econn_dual",
    "apply_linear",
    "torsion",
    "curvature_Econn",
    "curvature_linear",
    "basic_curvature",
    "nabla_torsion",
    "check_basic_relations",
    "first_bianchi_residuals",
    "holonomy_curvature_estimate",
]


@dataclass(frozen=True)
class LinearConnection:
    omega: np.ndarray  # object array (r, r, n)

    @property
    def rank(self) -> int:
        return self.omega.shape[0]

    @property
    def base_dim(self) -> int:
        return self.omega.shape[2]


@dataclass(frozen=True)
class EConnOnE:
    B: np.ndarray  # object array (r, r, r)


@dataclass(frozen=True)
class EConnOnTN:
    G: np.ndarray  # object array (n, r, n)


@dataclass(frozen=True)
class BasicCurvature:
    S: np.ndarray  # object array (r, r, r, n); antisymmetric in (b, c)


@dataclass(frozen=True)
class CurvatureTable:
    """R(slot_i, slot_j) as a matrix on the target frame, stored for i < j."""

    slots: str  # "E" (E-connection) or "TN" (linear connection)
    target: str  # "E" or "TN"
    comps: dict = field(default_factory=dict)  # (i, j) i<j -> object array (t, t)

    def entry(self, i: int, j: int, tdim: int) -> np.ndarray:
        if i == j:
            return np.full((tdim, tdim), ZERO, dtype=object)
        if i < j:
            return self.comps.get((i, j), np.full((tdim, tdim), ZERO, dtype=object))
        m = self.entry(j, i, tdim)
        out = np.empty_like(m)
        for p in range(tdim):
            for q in range(tdim):
                out[p, q] = neg(m[p, q])
        return out


def flat_connection(L: LieAlgebroid) -> LinearConnection:
    """omega = 0; the canonical flat connection of the global trivialisation."""
    r, n = L.rank, L.base_dim
    return LinearConnection(omega=np.full((r, r, n), ZERO, dtype=object))


def connection_from_json(L: LieAlgebroid, doc: dict) -> LinearConnection:
    """Sparse document { "omega": [{"a","b","alpha","expr"}] }, 1-based, absent = 0."""
    r, n = L.rank, L.base_dim
    omega = np.full((r, r, n), ZERO, dtype=object)
    for entry in doc.get("omega", []):
        a, b = int(entry["a"]) - 1, int(entry["b"]) - 1
        al = int(entry["alpha"]) - 1
        if not (0 <= a < r and 0 <= b < r and 0 <= al < n):
            raise ValueError(f"omega entry out of range: {entry}")
        omega[a, b, al] = add(omega[a, b, al], parse_expr(str(entry["expr"]), L.space))
    return LinearConnection(omega=omega)


def _check_shapes(L: LieAlgebroid, nabla: LinearConnection):
    if nabla.omega.shape != (L.rank, L.rank, L.base_dim):
        raise ValueError(
            f"connection shape {nabla.omega.shape} does not match algebroid "
            f"(rank {L.rank}, base dim {L.base_dim})"
        )


def nabla_rho(L: LieAlgebroid, nabla: LinearConnection) -> EConnOnE:
    """Canonical E-connection nabla_{rho(.)}:  B^a_bc = rho^al_b omega^a_{c al}."""
    _check_shapes(L, nabla)
    r, n = L.rank, L.base_dim
    B = np.empty((r, r, r), dtype=object)
    for a in range(r):
        for b in range(r):
            for c in range(r):
                acc = ZERO
                for al in range(n):
                    acc = add(acc, mul(L.rho[b, al], nabla.omega[a, c, al]))
                B[a, b, c] = simplify(acc)
    return EConnOnE(B=B)


def basic_connection_E(L: LieAlgebroid, nabla: LinearConnection) -> EConnOnE:
    """B^a_bc = C^a_bc + rho^al_c omega^a_{b al}   (bracket plus conjugate term)."""
    _check_shapes(L, nabla)
    r, n = L.rank, L.base_dim
    B = np.empty((r, r, r), dtype=object)
    for a in range(r):
        for b in range(r):
            for c in range(r):
                acc = L.C(a, b, c)
                for al in range(n):
                    acc = add(acc, mul(L.rho[c, al], nabla.omega[a, b, al]))
                B[a, b, c] = simplify(acc)
    return EConnOnE(B=B)


def basic_connection_TN(L: LieAlgebroid, nabla: LinearConnection) -> EConnOnTN:
    """G^al_{a be} = -d_be rho^al_a + rho^al_c omega^c_{a be}."""
    _check_shapes(L, nabla)
    r, n = L.rank, L.base_dim
    G = np.empty((n, r, n), dtype=object)
    for al in range(n):
        for a in range(r):
            for be in range(n):
                acc = neg(diff(L.rho[a, al], be))
                for c in range(r):
                    acc = add(acc, mul(L.rho[c, al], nabla.omega[c, a, be]))
                G[al, a, be] = simplify(acc)
    return EConnOnTN(G=G)


def _conn_table(conn) -> tuple[np.ndarray, int]:
    if isinstance(conn, EConnOnE):
        return conn.B, conn.B.shape[2]
    if isinstance(conn, EConnOnTN):
        return conn.G, conn.G.shape[2]
    raise TypeError("expected an E-connection table")


def apply_Econn(L: LieAlgebroid, conn, mu: Section, target):
    """(nabla^E_mu v)^i = mu^b T^i_{b j} v^j + rho^al_b mu^b d_al v^i.

    target is a Section when conn lives on E, a VectorFieldN when it
    lives on TN; the result has the same type as the target.
    """
    T, tdim = _conn_table(conn)
    coeffs = target.coeffs
    if len(coeffs) != tdim:
        raise ValueError("target has the wrong number of components for this connection")
    if mu.rank != L.rank:
        raise ValueError("direction section does not match the algebroid rank")
    r, n = L.rank, L.base_dim
    out = []
    for i in range(tdim):
        acc = ZERO
        for b in range(r):
            if mu.coeffs[b].is_zero():
                continue
            for j in range(tdim):
                acc = add(acc, mul(mu.coeffs[b], mul(T[i, b, j], coeffs[j])))
        for al in range(n):
            dv = diff(coeffs[i], al)
            if dv.is_zero():
                continue
            for b in range(r):
                acc = add(acc, mul(mul(L.rho[b, al], mu.coeffs[b]), dv))
        out.append(simplify(acc))
    return type(target)(tuple(out))


def apply_Econn_dual(L: LieAlgebroid, conn: EConnOnE, mu: Section, cov: tuple) -> tuple:
    """Dual-bundle rule (needed for scalar contractions only):

    (nabla^{E,*}_mu T)_c = rho^al_b mu^b d_al T_c - mu^b B^a_{bc} T_a
    """
    B, r = conn.B, L.rank
    if len(cov) != r:
        raise ValueError("covector has the wrong number of components")
    n = L.base_dim
    out = []
    for c in range(r):
        acc = ZERO
        for al in range(n):
            dT = diff(cov[c], al)
            for b in range(r):
                acc = add(acc, mul(mul(L.rho[b, al], mu.coeffs[b]), dT))
        for b in range(r):
            for a in range(r):
                acc = add(acc, neg(mul(mu.coeffs[b], mul(B[a, b, c], cov[a]))))
        out.append(simplify(acc))
    return tuple(out)


def apply_linear(L: LieAlgebroid, nabla: LinearConnection, X: VectorFieldN, mu: Section) -> Section:
    """(nabla_X mu)^a = X^al (d_al mu^a + omega^a_{b al} mu^b)."""
    r, n = L.rank, L.base_dim
    out = []
    for a in range(r):
        acc = ZERO
        for al in range(n):
            if X.coeffs[al].is_zero():
                continue
            term = diff(mu.coeffs[a], al)
            for b in range(r):
                term = add(term, mul(nabla.omega[a, b, al], mu.coeffs[b]))
            acc = add(acc, mul(X.coeffs[al], term))
        out.append(simplify(acc))
    return Section(tuple(out))


def torsion(L: LieAlgebroid, conn: EConnOnE) -> np.ndarray:
    """t^a_bc = B^a_bc - B^a_cb - C^a_bc; antisymmetric in (b, c)."""
    r = L.rank
    if conn.B.shape != (r, r, r):
        raise ValueError("connection table does not match the algebroid rank")
    t = np.empty((r, r, r), dtype=object)
    for a in range(r):
        for b in range(r):
            for c in range(r):
                t[a, b, c] = simplify(
                    add(add(conn.B[a, b, c], neg(conn.B[a, c, b])), neg(L.C(a, b, c)))
                )
    return t


def curvature_Econn(L: LieAlgebroid, conn, target_bundle: str) -> CurvatureTable:
    """R(e_a, e_b) w_j computed compositionally:

    apply(e_a, apply(e_b, w_j)) - apply(e_b, apply(e_a, w_j)) - C^c_ab apply(e_c, w_j)
    """
    T, tdim = _conn_table(conn)
    if target_bundle not in ("E", "TN"):
        raise ValueError("target bundle must be 'E' or 'TN'")
    r = L.rank
    mk = Section if isinstance(conn, EConnOnE) else VectorFieldN
    frame = [mk(tuple(ZERO if i != j else parse_expr("1", L.space) for i in range(tdim))) for j in range(tdim)]
    frames_E = [L.frame_section(a) for a in range(r)]
    comps = {}
    for a in range(r):
        for b in range(a + 1, r):
            mat = np.empty((tdim, tdim), dtype=object)
            for j in range(tdim):
                f1 = apply_Econn(L, conn, frames_E[b], frame[j])
                f1 = apply_Econn(L, conn, frames_E[a], f1)
                f2 = apply_Econn(L, conn, frames_E[a], frame[j])
                f2 = apply_Econn(L, conn, frames_E[b], f2)
                corr = [ZERO] * tdim
                for c in range(r):
                    Cc = L.C(c, a, b)
                    if Cc.is_zero():
                        continue
                    fc = apply_Econn(L, conn, frames_E[c], frame[j])
                    corr = [add(x, mul(Cc, y)) for x, y in zip(corr, fc.coeffs)]
                for i in range(tdim):
                    mat[i, j] = simplify(add(add(f1.coeffs[i], neg(f2.coeffs[i])), neg(corr[i])))
            comps[(a, b)] = mat
    return CurvatureTable(slots="E", target=target_bundle, comps=comps)


def curvature_linear(L: LieAlgebroid, nabla: LinearConnection) -> CurvatureTable:
    """R(d_al, d_be) e_b from omega and its first derivatives."""
    _check_shapes(L, nabla)
    r, n = L.rank, L.base_dim
    om = nabla.omega
    comps = {}
    for al in range(n):
        for be in range(al + 1, n):
            mat = np.empty((r, r), dtype=object)
            for a in range(r):
                for b in range(r):
                    acc = add(diff(om[a, b, be], al), neg(diff(om[a, b, al], be)))
                    for c in range(r):
                        acc = add(acc, mul(om[c, b, be], om[a, c, al]))
                        acc = add(acc, neg(mul(om[c, b, al], om[a, c, be])))
                    mat[a, b] = simplify(acc)
            comps[(al, be)] = mat
    return CurvatureTable(slots="TN", target="E", comps=comps)


def basic_curvature(L: LieAlgebroid, nabla: LinearConnection) -> BasicCurvature:
    """S^a_{bc be} assembled from brackets and connection applications.

    R^bas(e_b, e_c) d_be = nabla_be [e_b, e_c] - [nabla_be e_b, e_c]
        - [e_b, nabla_be e_c] - nabla_{G(., c, be)} e_b + nabla_{G(., b, be)} e_c
    """
    _check_shapes(L, nabla)
    r, n = L.rank, L.base_dim
    Gtn = basic_connection_TN(L, nabla).G
    S = np.full((r, r, r, n), ZERO, dtype=object)
    coord = [
        VectorFieldN(tuple(parse_expr("1", L.space) if i == al else ZERO for i in range(n)))
        for al in range(n)
    ]
    frames = [L.frame_section(a) for a in range(r)]
    for b in range(r):
        for c in range(b + 1, r):
            br = Section(L.C_column(b, c))
            for be in range(n):
                t1 = apply_linear(L, nabla, coord[be], br)
                t2 = bracket_sections(L, apply_linear(L, nabla, coord[be], frames[b]), frames[c])
                t3 = bracket_sections(L, frames[b], apply_linear(L, nabla, coord[be], frames[c]))
                Xc = VectorFieldN(tuple(Gtn[al, c, be] for al in range(n)))
                Xb = VectorFieldN(tuple(Gtn[al, b, be] for al in range(n)))
                t4 = apply_linear(L, nabla, Xc, frames[b])
                t5 = apply_linear(L, nabla, Xb, frames[c])
                for a in range(r):
                    val = simplify(
                        add(
                            add(add(t1.coeffs[a], neg(t2.coeffs[a])), neg(t3.coeffs[a])),
                            add(neg(t4.coeffs[a]), t5.coeffs[a]),
                        )
                    )
                    S[a, b, c, be] = val
                    S[a, c, b, be] = neg(val)
    return BasicCurvature(S=S)


def nabla_torsion(L: LieAlgebroid, nabla: LinearConnection, t: np.ndarray) -> np.ndarray:
    """Coordinate covariant derivative of an E-valued (2,0)-tensor on E:

    (nabla_be t)^a_bc = d_be t^a_bc + om^a_{d be} t^d_bc
                        - om^d_{b be} t^a_dc - om^d_{c be} t^a_bd
    """
    r, n = L.rank, L.base_dim
    om = nabla.omega
    out = np.empty((n, r, r, r), dtype=object)
    for be in range(n):
        for a in range(r):
            for b in range(r):
                for c in range(r):
                    acc = diff(t[a, b, c], be)
                    for d in range(r):
                        acc = add(acc, mul(om[a, d, be], t[d, b, c]))
                        acc = add(acc, neg(mul(om[d, b, be], t[a, d, c])))
                        acc = add(acc, neg(mul(om[d, c, be], t[a, b, d])))
                    out[be, a, b, c] = simplify(acc)
    return out


def check_basic_relations(
    L: LieAlgebroid,
    nabla: LinearConnection,
    points: np.ndarray,
    tol: float = 1e-8,
    seed: int = DEFAULT_SEED,
) -> CheckResult:
    """Three identities tying the basic connection pair to S, each side
    computed from its own defining formula:

    (i)   curvature of nabla^bas on E   = -S contracted with rho in the X slot
    (ii)  curvature of nabla^bas on TN  = -rho composed with S
    (iii) S = coordinate derivative of the basic torsion minus the two
          anchored curvature terms of the linear connection
    """
    if len(points) == 0:
        raise ValueError("need at least one sample point")
    t0 = time.perf_counter()
    r, n = L.rank, L.base_dim
    Bbas = basic_connection_E(L, nabla)
    Gbas = basic_connection_TN(L, nabla)
    S = basic_curvature(L, nabla).S
    RE = curvature_Econn(L, Bbas, "E")
    RTN = curvature_Econn(L, Gbas, "TN")
    Rlin = curvature_linear(L, nabla)
    tb = torsion(L, Bbas)
    dt = nabla_torsion(L, nabla, tb)

    residuals = []
    for b in range(r):
        for c in range(b + 1, r):
            mE = RE.entry(b, c, r)
            mTN = RTN.entry(b, c, n)
            for a in range(r):
                for d in range(r):
                    acc = mE[a, d]
                    for be in range(n):
                        acc = add(acc, mul(S[a, b, c, be], L.rho[d, be]))
                    residuals.append(simplify(acc))
            for al in range(n):
                for be in range(n):
                    acc = mTN[al, be]
                    for a in range(r):
                        acc = add(acc, mul(L.rho[a, al], S[a, b, c, be]))
                    residuals.append(simplify(acc))
    for b in range(r):
        for c in range(r):
            for a in range(r):
                for be in range(n):
                    acc = add(S[a, b, c, be], neg(dt[be, a, b, c]))
                    for al in range(n):
                        m = Rlin.entry(al, be, r)
                        acc = add(acc, mul(L.rho[b, al], m[a, c]))
                        acc = add(acc, neg(mul(L.rho[c, al], m[a, b])))
                    residuals.append(simplify(acc))

    worst = 0.0
    mag = 0.0
    cols = points.T
    for e in residuals:
        vals = eval_batch(e, cols)
        m = float(np.max(np.abs(vals))) if vals.size else 0.0
        if not np.isfinite(m):
            worst = float("nan")
            break
        worst = max(worst, m)
        mag = max(mag, m)
    ms = (time.perf_counter() - t0) * 1e3
    return make_result(
        "basic_relations", worst, tol, seed=seed, points=len(points), ms=ms, largest_magnitude=mag
    )


def first_bianchi_residuals(L: LieAlgebroid, conn: EConnOnE) -> list:
    """Residual expressions of the first Bianchi identity with torsion:

    sum_cyc R(mu, nu) eta  -  sum_cyc t(t(mu, nu), eta)
                           -  sum_cyc (nabla^E_mu t)(nu, eta)
    on all frame triples.
    """
    r = L.rank
    t = torsion(L, conn)
    table = curvature_Econn(L, conn, "E")
    frames = [L.frame_section(a) for a in range(r)]
    res = []
    for a in range(r):
        for b in range(r):
            for c in range(r):
                for e in range(r):
                    acc = ZERO
                    for (i, j, k) in ((a, b, c), (b, c, a), (c, a, b)):
                        acc = add(acc, table.entry(i, j, r)[e, k])
                        for d in range(r):
                            acc = add(acc, neg(mul(t[d, i, j], t[e, d, k])))
                        # (nabla^E_{e_i} t)(e_j, e_k)
                        covt = apply_Econn(L, conn, frames[i], Section(t[:, j, k].copy()))
                        acc = add(acc, neg(covt.coeffs[e]))
                        for d in range(r):
                            acc = add(acc, mul(conn.B[d, i, j], t[e, d, k]))
                            acc = add(acc, mul(conn.B[d, i, k], t[e, j, d]))
                    res.append(simplify(acc))
    return res


def holonomy_curvature_estimate(
    mat_fn,
    point: np.ndarray,
    i: int,
    j: int,
    h: float = 1e-3,
    substeps: int = 4,
    richardson: bool = True,
) -> np.ndarray:
    """Finite-difference curvature oracle via parallel transport.

    mat_fn(direction, x) returns the connection matrix in that coordinate
    direction (transport obeys v' = -mat v along the curve).  The square
    loop of side h is traversed counterclockwise in the (i, j)-plane and
    centred at the point; (I - P_loop)/h^2 approaches R(d_i, d_j) with an
    O(h) error whose leading term is removed by one Richardson step.
    """
    if richardson:
        e1 = holonomy_curvature_estimate(mat_fn, point, i, j, h, substeps, richardson=False)
        e2 = holonomy_curvature_estimate(mat_fn, point, i, j, h / 2, substeps, richardson=False)
        return 2.0 * e2 - e1
    dim = mat_fn(i, point).shape[0]
    v = np.eye(dim)

    def transport(start, direction, sign, v):
        x = start.copy()
        ds = sign * h / substeps
        for _ in range(substeps):
            def rhs(xloc, vloc):
                return -mat_fn(direction, xloc) @ vloc

            # RK4 along the straight edge; x advances linearly
            def at(s):
                xs = x.copy()
                xs[direction] += s
                return xs

            k1 = rhs(at(0.0), v)
            k2 = rhs(at(ds / 2), v + ds / 2 * k1)
            k3 = rhs(at(ds / 2), v + ds / 2 * k2)
            k4 = rhs(at(ds), v + ds * k3)
            v = v + ds / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            x[direction] += ds
        return x, v

    q = point.astype(float).copy()
    q[i] -= h / 2
    q[j] -= h / 2
    x, v = transport(q, i, +1, v)
    x, v = transport(x, j, +1, v)
    x, v = transport(x, i, -1, v)
    x, v = transport(x, j, -1, v)
    return (np.eye(dim) - v) / h**2

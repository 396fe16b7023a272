"""Field configurations and the gauge derivation on jet-symbol functionals.

A functional is stored with coefficients over the jet symbols

    u^mu  (spacetime),  x^al  (target chart),
    G^al_mu  (first derivatives of the physical field),
    A^a_mu   (gauge-boson components),

so that applying the gauge derivation twice stays exact: the derivation
acts on the symbols by

    delta x^al  = -rho^al_a(x) eps^a(u, x)
    delta G^al_mu = D_mu(delta x^al),   D_mu = d_{u^mu} + G^be_mu d_{x^be}
    delta A^a_mu  = C^a_bc eps^b A^c_mu + om^a_{b al} rho^al_c eps^b A^c_mu
                    - D_mu eps^a - eps^b om^a_{b al} G^al_mu

and E- or TN-valued functionals pick up the frame correction of the
lifting connection (the basic connection unless another table is given).

Gauge parameters carry spacetime and target-chart dependence only; the
flow integrator advances the prolonged per-point state (x, G, A) by the
same symbol action, which makes finite differences along the flow an
independent oracle for the derivation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .algebroid import LieAlgebroid, Section
from .connections import (
    EConnOnE,
    EConnOnTN,
    LinearConnection,
    basic_connection_E,
    basic_connection_TN,
    torsion,
)
from .exprcore import (
    Expr,
    VarSpace,
    ZERO,
    add,
    compile_batch,
    diff,
    eval_batch,
    mul,
    neg,
    parse_expr,
    simplify,
    substitute,
)
from .forms import VForm

__all__ = [
    "JetSpace",
    "FieldConfig",
    "GaugeParameter",
    "JetFunctional",
    "FlowState",
    "FlowError",
    "ClassViolation",
    "param_space",
    "config_from_json",
    "parameter_from_exprs",
    "parameter_from_section",
    "D_functional",
    "varpi2",
    "anchor_of_A",
    "pullback_scalar",
    "pullback_section_functional",
    "pullback_one_form",
    "minimal_coupling",
    "substitute_config",
    "functional_values",
    "gauge_symbol_action",
    "delta_functional",
    "gauge_higgs",
    "gauge_A",
    "pre_bracket",
    "r_delta",
    "flow_init",
    "flow",
    "flow_from_state",
    "flow_analytic",
    "fd_delta_oracle",
]


class FlowError(Exception):
    pass


class ClassViolation(Exception):
    """A computation left the supported gauge-parameter class."""


def spacetime_space(d: int) -> VarSpace:
    return VarSpace(tuple(f"u{i + 1}" for i in range(d)))


def param_space(d: int, n: int) -> VarSpace:
    return VarSpace(tuple(f"u{i + 1}" for i in range(d)) + tuple(f"x{i + 1}" for i in range(n)))


@dataclass(frozen=True)
class JetSpace:
    d: int
    n: int
    r: int

    def __post_init__(self):
        names = [f"u{m + 1}" for m in range(self.d)]
        names += [f"x{a + 1}" for a in range(self.n)]
        names += [f"G{al + 1}_{mu + 1}" for al in range(self.n) for mu in range(self.d)]
        names += [f"A{a + 1}_{mu + 1}" for a in range(self.r) for mu in range(self.d)]
        object.__setattr__(self, "space", VarSpace(tuple(names)))

    def iu(self, mu: int) -> int:
        return mu

    def ix(self, al: int) -> int:
        return self.d + al

    def iG(self, al: int, mu: int) -> int:
        return self.d + self.n + al * self.d + mu

    def iA(self, a: int, mu: int) -> int:
        return self.d + self.n + self.n * self.d + a * self.d + mu

    def embed(self, e: Expr) -> Expr:
        """Re-home an expression over u-, x-, or (u,x)-space by name."""
        if e.space is None or e.space == self.space:
            return e
        mapping = {i: self.space.var(name) for i, name in enumerate(e.space.names)}
        return substitute(e, mapping, self.space)


@dataclass(frozen=True)
class FieldConfig:
    """Physical field components Phi^al(u) and boson components A^a_mu(u)."""

    space: VarSpace  # u1..ud
    phi: tuple  # n expressions
    A: np.ndarray  # object array (r, d)

    @property
    def d(self) -> int:
        return self.space.dim

    @property
    def n(self) -> int:
        return len(self.phi)

    @property
    def r(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class GaugeParameter:
    """eps^a(u, x): spacetime- and Higgs-dependent components, nothing else."""

    d: int
    n: int
    components: tuple

    def __post_init__(self):
        sp = param_space(self.d, self.n)
        for c in self.components:
            if c.space is not None and c.space != sp:
                raise ClassViolation("gauge parameter components must live over (u, x)")

    @property
    def space(self) -> VarSpace:
        return param_space(self.d, self.n)

    @property
    def rank(self) -> int:
        return len(self.components)


@dataclass(frozen=True)
class JetFunctional:
    """Degree-k form on spacetime with jet-symbol coefficients."""

    jet: JetSpace
    degree: int
    target: str  # "scalar" | "E" | "TN"
    coeffs: dict  # increasing mu-tuple -> tuple[Expr] of target dimension

    @property
    def target_dim(self) -> int:
        return {"scalar": 1, "E": self.jet.r, "TN": self.jet.n}[self.target]

    def component(self, idx: tuple, t: int) -> Expr:
        col = self.coeffs.get(tuple(idx))
        return col[t] if col is not None else ZERO

    def map_coeffs(self, fn) -> "JetFunctional":
        out = {idx: tuple(fn(e) for e in col) for idx, col in self.coeffs.items()}
        return JetFunctional(self.jet, self.degree, self.target, out)


def config_from_json(L: LieAlgebroid, doc: dict) -> FieldConfig:
    """{ "spacetime_dim": d, "phi": [expr over u], "A": [{"a","mu","expr"}] }"""
    d = int(doc["spacetime_dim"])
    sp = spacetime_space(d)
    phi_rows = doc["phi"]
    if len(phi_rows) != L.base_dim:
        raise ValueError("phi needs one component per target coordinate")
    phi = tuple(parse_expr(str(s), sp) for s in phi_rows)
    A = np.full((L.rank, d), ZERO, dtype=object)
    for entry in doc.get("A", []):
        a, mu = int(entry["a"]) - 1, int(entry["mu"]) - 1
        if not (0 <= a < L.rank and 0 <= mu < d):
            raise ValueError(f"A entry out of range: {entry}")
        A[a, mu] = add(A[a, mu], parse_expr(str(entry["expr"]), sp))
    return FieldConfig(space=sp, phi=phi, A=A)


def parameter_from_exprs(L: LieAlgebroid, d: int, texts) -> GaugeParameter:
    sp = param_space(d, L.base_dim)
    comps = tuple(parse_expr(str(s), sp) for s in texts)
    if len(comps) != L.rank:
        raise ValueError("parameter needs one component per frame index")
    return GaugeParameter(d=d, n=L.base_dim, components=comps)


def parameter_from_section(L: LieAlgebroid, d: int, mu: Section) -> GaugeParameter:
    """Pullback of a section: components depend on x only."""
    sp = param_space(d, L.base_dim)
    comps = []
    for c in mu.coeffs:
        if c.space is None:
            comps.append(c)
        else:
            mapping = {i: sp.var(name) for i, name in enumerate(c.space.names)}
            comps.append(substitute(c, mapping, sp))
    return GaugeParameter(d=d, n=L.base_dim, components=tuple(comps))


# ---------------------------------------------------------------------------
# generator functionals
# ---------------------------------------------------------------------------


def D_functional(jet: JetSpace) -> JetFunctional:
    coeffs = {}
    for mu in range(jet.d):
        coeffs[(mu,)] = tuple(jet.space.var(f"G{al + 1}_{mu + 1}") for al in range(jet.n))
    return JetFunctional(jet, 1, "TN", coeffs)


def varpi2(jet: JetSpace) -> JetFunctional:
    coeffs = {}
    for mu in range(jet.d):
        coeffs[(mu,)] = tuple(jet.space.var(f"A{a + 1}_{mu + 1}") for a in range(jet.r))
    return JetFunctional(jet, 1, "E", coeffs)


def anchor_of_A(L: LieAlgebroid, jet: JetSpace) -> JetFunctional:
    coeffs = {}
    for mu in range(jet.d):
        col = []
        for al in range(jet.n):
            acc = ZERO
            for a in range(jet.r):
                acc = add(acc, mul(jet.embed(L.rho[a, al]), jet.space.var(f"A{a + 1}_{mu + 1}")))
            col.append(simplify(acc))
        coeffs[(mu,)] = tuple(col)
    return JetFunctional(jet, 1, "TN", coeffs)


def pullback_scalar(jet: JetSpace, f: Expr) -> JetFunctional:
    """*f for f a function on the target chart."""
    return JetFunctional(jet, 0, "scalar", {(): (jet.embed(f),)})


def pullback_section_functional(jet: JetSpace, v: Section) -> JetFunctional:
    return JetFunctional(jet, 0, "E", {(): tuple(jet.embed(c) for c in v.coeffs)})


def pullback_one_form(jet: JetSpace, omega: VForm) -> JetFunctional:
    """!omega for a 1-form on the target chart: contract the slot with G."""
    if omega.degree != 1:
        raise ValueError("only 1-forms are needed here")
    coeffs = {}
    tdim = omega.target_dim
    for mu in range(jet.d):
        col = []
        for t in range(tdim):
            acc = ZERO
            for al in range(jet.n):
                comp = omega.component((al,), t)
                if comp.is_zero():
                    continue
                acc = add(acc, mul(jet.embed(comp), jet.space.var(f"G{al + 1}_{mu + 1}")))
            col.append(simplify(acc))
        coeffs[(mu,)] = tuple(col)
    return JetFunctional(jet, 1, omega.target, coeffs)


def minimal_coupling(L: LieAlgebroid, config: FieldConfig) -> JetFunctional:
    """D - (*rho)(A): coefficients G^al_mu - rho^al_a(x) A^a_mu."""
    if config.n != L.base_dim or config.r != L.rank:
        raise ValueError("configuration shapes do not match the algebroid")
    jet = JetSpace(config.d, L.base_dim, L.rank)
    D = D_functional(jet)
    rhoA = anchor_of_A(L, jet)
    coeffs = {}
    for mu in range(jet.d):
        coeffs[(mu,)] = tuple(
            simplify(add(D.coeffs[(mu,)][al], neg(rhoA.coeffs[(mu,)][al])))
            for al in range(jet.n)
        )
    return JetFunctional(jet, 1, "TN", coeffs)


def substitute_config(F: JetFunctional, config: FieldConfig) -> VForm:
    """Evaluate the functional at a field configuration; result is a form
    over spacetime with the same target tag."""
    jet = F.jet
    if config.d != jet.d or config.n != jet.n or config.r != jet.r:
        raise ValueError("configuration shapes do not match the functional")
    sp = config.space
    mapping = {}
    for mu in range(jet.d):
        mapping[jet.iu(mu)] = sp.var(f"u{mu + 1}")
    for al in range(jet.n):
        mapping[jet.ix(al)] = config.phi[al]
        for mu in range(jet.d):
            mapping[jet.iG(al, mu)] = diff(config.phi[al], mu)
    for a in range(jet.r):
        for mu in range(jet.d):
            mapping[jet.iA(a, mu)] = config.A[a, mu]
    coeffs = {}
    for idx, col in F.coeffs.items():
        scol = tuple(simplify(substitute(e, mapping, sp)) for e in col)
        if any(not e.is_zero() for e in scol):
            coeffs[idx] = scol
    return VForm(sp, F.degree, F.target, F.target_dim, coeffs)


def functional_values(F: JetFunctional, jet_points: np.ndarray) -> dict:
    """Numeric coefficients at raw jet points, index tuple -> (P, tdim)."""
    cols = jet_points.T
    out = {}
    for idx in itertools.combinations(range(F.jet.d), F.degree):
        vals = np.stack(
            [eval_batch(F.component(idx, t), cols) for t in range(F.target_dim)], axis=1
        )
        out[idx] = vals
    return out


# ---------------------------------------------------------------------------
# the derivation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SymbolAction:
    """delta applied to the jet symbols; everything lives over jet.space."""

    jet: JetSpace
    dx: tuple  # (n,)
    dG: np.ndarray  # object (n, d)
    dA: np.ndarray  # object (r, d)


def _embed_param(jet: JetSpace, eps: GaugeParameter):
    if eps.d != jet.d or eps.n != jet.n:
        raise ValueError("parameter does not match the jet space shapes")
    return [jet.embed(c) for c in eps.components]


def gauge_symbol_action(
    L: LieAlgebroid,
    nabla: LinearConnection,
    eps: GaugeParameter,
    jet: JetSpace,
) -> SymbolAction:
    if L.rank != jet.r or L.base_dim != jet.n:
        raise ValueError("algebroid does not match the jet space shapes")
    r, n, d = jet.r, jet.n, jet.d
    eps_c = _embed_param(jet, eps)
    rho = np.array([[jet.embed(L.rho[a, al]) for al in range(n)] for a in range(r)], dtype=object)
    om = np.empty((r, r, n), dtype=object)
    for a in range(r):
        for b in range(r):
            for al in range(n):
                om[a, b, al] = jet.embed(nabla.omega[a, b, al])

    dx = []
    for al in range(n):
        acc = ZERO
        for a in range(r):
            acc = add(acc, neg(mul(rho[a, al], eps_c[a])))
        dx.append(simplify(acc))

    def total_D(e: Expr, mu: int) -> Expr:
        # D_mu = d_u^mu + G^be_mu d_x^be on (u, x)-dependent expressions
        acc = diff(e, jet.iu(mu))
        for be in range(n):
            acc = add(acc, mul(jet.space.var(f"G{be + 1}_{mu + 1}"), diff(e, jet.ix(be))))
        return simplify(acc)

    dG = np.empty((n, d), dtype=object)
    for al in range(n):
        for mu in range(d):
            dG[al, mu] = total_D(dx[al], mu)

    dA = np.empty((r, d), dtype=object)
    for a in range(r):
        for mu in range(d):
            acc = ZERO
            for b in range(r):
                for c in range(r):
                    term = mul(jet.embed(L.C(a, b, c)), mul(eps_c[b], jet.space.var(f"A{c + 1}_{mu + 1}")))
                    acc = add(acc, term)
                    for al in range(n):
                        acc = add(
                            acc,
                            mul(
                                mul(om[a, b, al], rho[c, al]),
                                mul(eps_c[b], jet.space.var(f"A{c + 1}_{mu + 1}")),
                            ),
                        )
            acc = add(acc, neg(total_D(eps_c[a], mu)))
            for b in range(r):
                for al in range(n):
                    acc = add(
                        acc,
                        neg(mul(mul(eps_c[b], om[a, b, al]), jet.space.var(f"G{al + 1}_{mu + 1}"))),
                    )
            dA[a, mu] = simplify(acc)
    return SymbolAction(jet=jet, dx=tuple(dx), dG=dG, dA=dA)


def _derive_scalar(sym: SymbolAction, e: Expr) -> Expr:
    """Chain rule through the moving symbols (u is not moved)."""
    jet = sym.jet
    acc = ZERO
    for al in range(jet.n):
        p = diff(e, jet.ix(al))
        if not p.is_zero():
            acc = add(acc, mul(p, sym.dx[al]))
        for mu in range(jet.d):
            p = diff(e, jet.iG(al, mu))
            if not p.is_zero():
                acc = add(acc, mul(p, sym.dG[al, mu]))
    for a in range(jet.r):
        for mu in range(jet.d):
            p = diff(e, jet.iA(a, mu))
            if not p.is_zero():
                acc = add(acc, mul(p, sym.dA[a, mu]))
    return simplify(acc)


def _correction_table(L, nabla, target, econn, jet):
    if target == "scalar":
        return None
    if target == "E":
        conn = econn if econn is not None else basic_connection_E(L, nabla)
        if not isinstance(conn, EConnOnE):
            raise TypeError("E-valued functionals need an E-connection on E")
        T = conn.B
    else:
        conn = econn if econn is not None else basic_connection_TN(L, nabla)
        if not isinstance(conn, EConnOnTN):
            raise TypeError("TN-valued functionals need an E-connection on TN")
        T = conn.G
    out = np.empty(T.shape, dtype=object)
    for idx in np.ndindex(*T.shape):
        out[idx] = jet.embed(T[idx])
    return out


def delta_functional(
    L: LieAlgebroid,
    nabla: LinearConnection,
    eps: GaugeParameter,
    F: JetFunctional,
    econn=None,
) -> JetFunctional:
    """Gauge derivation of a functional: symbol chain rule plus the frame
    correction of the lifting connection (basic connection by default)."""
    jet = F.jet
    sym = gauge_symbol_action(L, nabla, eps, jet)
    eps_c = _embed_param(jet, eps)
    T = _correction_table(L, nabla, F.target, econn, jet)
    tdim = F.target_dim
    out = {}
    for idx in itertools.combinations(range(jet.d), F.degree):
        col = [F.component(idx, t) for t in range(tdim)]
        dcol = [_derive_scalar(sym, e) for e in col]
        if T is not None:
            for i in range(tdim):
                corr = ZERO
                for b in range(jet.r):
                    for j in range(tdim):
                        corr = add(corr, mul(mul(eps_c[b], T[i, b, j]), col[j]))
                dcol[i] = simplify(add(dcol[i], neg(corr)))
        if any(not e.is_zero() for e in dcol):
            out[idx] = tuple(dcol)
    return JetFunctional(jet, F.degree, F.target, out)


def gauge_higgs(L: LieAlgebroid, config: FieldConfig, eps: GaugeParameter) -> tuple:
    """delta Phi^al(u) = -rho^al_a(Phi(u)) eps^a(u, Phi(u))."""
    if config.n != L.base_dim or eps.rank != L.rank:
        raise ValueError("shapes do not match")
    sp = config.space
    psp = eps.space
    mapping = {psp.index(f"u{m + 1}"): sp.var(f"u{m + 1}") for m in range(config.d)}
    for al in range(config.n):
        mapping[psp.index(f"x{al + 1}")] = config.phi[al]
    out = []
    for al in range(config.n):
        acc = ZERO
        for a in range(L.rank):
            rho_at = _pull_base(L.rho[a, al], config)
            eps_at = substitute(eps.components[a], mapping, sp)
            acc = add(acc, neg(mul(rho_at, eps_at)))
        out.append(simplify(acc))
    return tuple(out)


def _pull_base(e: Expr, config: FieldConfig) -> Expr:
    """Compose a base-chart expression with Phi."""
    if e.space is None:
        return e
    mapping = {i: config.phi[i] for i in range(len(config.phi))}
    return substitute(e, mapping, config.space)


def gauge_A(
    L: LieAlgebroid,
    nabla: LinearConnection,
    config: FieldConfig,
    eps: GaugeParameter,
) -> np.ndarray:
    """Component formula of the boson transformation, as expressions over u."""
    jet = JetSpace(config.d, L.base_dim, L.rank)
    sym = gauge_symbol_action(L, nabla, eps, jet)
    sp = config.space
    mapping = {}
    for mu in range(jet.d):
        mapping[jet.iu(mu)] = sp.var(f"u{mu + 1}")
    for al in range(jet.n):
        mapping[jet.ix(al)] = config.phi[al]
        for mu in range(jet.d):
            mapping[jet.iG(al, mu)] = diff(config.phi[al], mu)
    for a in range(jet.r):
        for mu in range(jet.d):
            mapping[jet.iA(a, mu)] = config.A[a, mu]
    out = np.empty((jet.r, jet.d), dtype=object)
    for a in range(jet.r):
        for mu in range(jet.d):
            out[a, mu] = simplify(substitute(sym.dA[a, mu], mapping, sp))
    return out


def pre_bracket(
    L: LieAlgebroid,
    nabla: LinearConnection,
    theta: GaugeParameter,
    eps: GaugeParameter,
) -> GaugeParameter:
    """[[theta, eps]] = delta_eps theta - delta_theta eps - (*t_bas)(theta, eps).

    Computed from the definition (the connection terms cancel), then
    projected back to the (u, x) class; leaving the class is an error.
    """
    if theta.d != eps.d or theta.n != eps.n or theta.rank != eps.rank:
        raise ValueError("parameters live on different shapes")
    jet = JetSpace(eps.d, L.base_dim, L.rank)
    th_f = JetFunctional(jet, 0, "E", {(): tuple(jet.embed(c) for c in theta.components)})
    ep_f = JetFunctional(jet, 0, "E", {(): tuple(jet.embed(c) for c in eps.components)})
    d_eps_th = delta_functional(L, nabla, eps, th_f)
    d_th_eps = delta_functional(L, nabla, theta, ep_f)
    t = torsion(L, basic_connection_E(L, nabla))
    th_c = _embed_param(jet, theta)
    ep_c = _embed_param(jet, eps)
    comps = []
    psp = param_space(eps.d, eps.n)
    back = {}
    for mu in range(jet.d):
        back[jet.iu(mu)] = psp.var(f"u{mu + 1}")
    for al in range(jet.n):
        back[jet.ix(al)] = psp.var(f"x{al + 1}")
    for a in range(jet.r):
        acc = add(d_eps_th.component((), a), neg(d_th_eps.component((), a)))
        for b in range(jet.r):
            for c in range(jet.r):
                acc = add(acc, neg(mul(jet.embed(t[a, b, c]), mul(th_c[b], ep_c[c]))))
        acc = simplify(acc)
        try:
            comps.append(simplify(substitute(acc, back, psp)))
        except KeyError:
            raise ClassViolation(
                "pre-bracket left the (u, x) parameter class"
            ) from None
    return GaugeParameter(d=eps.d, n=eps.n, components=tuple(comps))


def r_delta(
    L: LieAlgebroid,
    nabla: LinearConnection,
    theta: GaugeParameter,
    eps: GaugeParameter,
    F: JetFunctional,
    econn=None,
) -> JetFunctional:
    """Commutator defect of the derivation:

    R(theta, eps) F = delta_theta delta_eps F - delta_eps delta_theta F
                      + delta_[[theta, eps]] F
    """
    d1 = delta_functional(L, nabla, theta, delta_functional(L, nabla, eps, F, econn), econn)
    d2 = delta_functional(L, nabla, eps, delta_functional(L, nabla, theta, F, econn), econn)
    d3 = delta_functional(L, nabla, pre_bracket(L, nabla, theta, eps), F, econn)
    jet = F.jet
    out = {}
    for idx in itertools.combinations(range(jet.d), F.degree):
        col = tuple(
            simplify(add(add(d1.component(idx, t), neg(d2.component(idx, t))), d3.component(idx, t)))
            for t in range(F.target_dim)
        )
        if any(not e.is_zero() for e in col):
            out[idx] = col
    return JetFunctional(jet, F.degree, F.target, out)


# ---------------------------------------------------------------------------
# flow: the finite-difference oracle
# ---------------------------------------------------------------------------


@dataclass
class FlowState:
    """Prolonged per-point state: x = Phi(p), G = dPhi(p), A = A(p)."""

    t: float
    u: np.ndarray  # (P, d)
    x: np.ndarray  # (P, n)
    G: np.ndarray  # (P, n, d)
    A: np.ndarray  # (P, r, d)

    def copy(self) -> "FlowState":
        return FlowState(self.t, self.u.copy(), self.x.copy(), self.G.copy(), self.A.copy())


def flow_init(L: LieAlgebroid, config: FieldConfig, u_points: np.ndarray) -> FlowState:
    d, n, r = config.d, config.n, config.r
    pts = np.asarray(u_points, dtype=float)
    cols = pts.T
    x = np.stack([eval_batch(config.phi[al], cols) for al in range(n)], axis=1)
    G = np.empty((len(pts), n, d))
    for al in range(n):
        for mu in range(d):
            G[:, al, mu] = eval_batch(diff(config.phi[al], mu), cols)
    A = np.empty((len(pts), r, d))
    for a in range(r):
        for mu in range(d):
            A[:, a, mu] = eval_batch(config.A[a, mu], cols)
    return FlowState(t=0.0, u=pts, x=x, G=G, A=A)


def _state_cols(state: FlowState, jet: JetSpace, x, G, A) -> np.ndarray:
    P = state.u.shape[0]
    cols = np.empty((jet.space.dim, P))
    cols[: jet.d] = state.u.T
    cols[jet.d : jet.d + jet.n] = x.T
    cols[jet.d + jet.n : jet.d + jet.n + jet.n * jet.d] = G.reshape(P, -1).T
    cols[jet.d + jet.n + jet.n * jet.d :] = A.reshape(P, -1).T
    return cols


def _compiled_rhs(L: LieAlgebroid, nabla: LinearConnection, eps: GaugeParameter, jet: JetSpace):
    sym = gauge_symbol_action(L, nabla, eps, jet)
    exprs = list(sym.dx) + list(sym.dG.reshape(-1)) + list(sym.dA.reshape(-1))
    return compile_batch(exprs, jet.space)


def flow_step(
    L: LieAlgebroid,
    nabla: LinearConnection,
    state: FlowState,
    eps: GaugeParameter,
    h: float,
    _rhs=None,
) -> FlowState:
    """One RK4 step of the prolonged gauge flow."""
    if h <= 0:
        raise ValueError("step size must be positive")
    jet = JetSpace(state.u.shape[1], state.x.shape[1], state.A.shape[1])
    rhs = _rhs if _rhs is not None else _compiled_rhs(L, nabla, eps, jet)
    n, d, r = jet.n, jet.d, jet.r
    P = state.u.shape[0]

    def f(x, G, A):
        vals = rhs(_state_cols(state, jet, x, G, A))
        dx = vals[:n].T
        dG = vals[n : n + n * d].T.reshape(P, n, d)
        dA = vals[n + n * d :].T.reshape(P, r, d)
        return dx, dG, dA

    k1 = f(state.x, state.G, state.A)
    k2 = f(state.x + h / 2 * k1[0], state.G + h / 2 * k1[1], state.A + h / 2 * k1[2])
    k3 = f(state.x + h / 2 * k2[0], state.G + h / 2 * k2[1], state.A + h / 2 * k2[2])
    k4 = f(state.x + h * k3[0], state.G + h * k3[1], state.A + h * k3[2])
    new = FlowState(
        t=state.t + h,
        u=state.u,
        x=state.x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        G=state.G + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        A=state.A + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
    )
    if not (
        np.all(np.isfinite(new.x)) and np.all(np.isfinite(new.G)) and np.all(np.isfinite(new.A))
    ):
        raise FlowError(f"non-finite state at t = {new.t}")
    return new


def flow_from_state(
    L: LieAlgebroid,
    nabla: LinearConnection,
    state: FlowState,
    eps: GaugeParameter,
    T: float,
    steps: int = 1000,
) -> FlowState:
    jet = JetSpace(state.u.shape[1], state.x.shape[1], state.A.shape[1])
    rhs = _compiled_rhs(L, nabla, eps, jet)
    h = T / steps
    out = state.copy()
    if T == 0.0:
        return out
    if h <= 0:  # negative horizon: integrate the reversed field
        return flow_from_state(L, nabla, state, _scaled_param(eps, -1.0), -T, steps)
    for _ in range(steps):
        out = flow_step(L, nabla, out, eps, h, _rhs=rhs)
    return out


def _scaled_param(eps: GaugeParameter, s: float) -> GaugeParameter:
    from .exprcore import Const

    return GaugeParameter(
        d=eps.d, n=eps.n, components=tuple(simplify(mul(Const(s), c)) for c in eps.components)
    )


def flow(
    L: LieAlgebroid,
    nabla: LinearConnection,
    config: FieldConfig,
    eps: GaugeParameter,
    T: float,
    steps: int = 1000,
    u_points: np.ndarray | None = None,
) -> FlowState:
    if u_points is None:
        from .exprcore import sample_points

        u_points = sample_points(config.d, 20)
    state = flow_init(L, config, u_points)
    return flow_from_state(L, nabla, state, eps, T, steps)


def flow_analytic(
    L: LieAlgebroid,
    nabla: LinearConnection,
    config: FieldConfig,
    eps: GaugeParameter,
    T: float,
    steps: int = 4,
) -> FieldConfig:
    """Reference path: the fields stay symbolic in u and spatial derivatives
    are recomputed by differentiation at every stage.  Exponential tree
    growth limits this to a handful of steps; it exists to cross-check the
    prolonged per-point flow."""
    if steps > 16:
        raise ValueError("the analytic path is limited to 16 steps")
    h = T / steps
    sp = config.space
    d, n, r = config.d, config.n, config.r
    psp = eps.space

    def rhs(phi, A):
        mapping = {psp.index(f"u{m + 1}"): sp.var(f"u{m + 1}") for m in range(d)}
        for al in range(n):
            mapping[psp.index(f"x{al + 1}")] = phi[al]
        eps_at = [simplify(substitute(c, mapping, sp)) for c in eps.components]
        dphi = []
        for al in range(n):
            acc = ZERO
            for a in range(r):
                acc = add(acc, neg(mul(_pull(L.rho[a, al], phi, sp), eps_at[a])))
            dphi.append(simplify(acc))
        dA = np.empty((r, d), dtype=object)
        for a in range(r):
            for mu in range(d):
                acc = ZERO
                for b in range(r):
                    ea = eps_at[b]
                    for c in range(r):
                        acc = add(acc, mul(_pull(L.C(a, b, c), phi, sp), mul(ea, A[c, mu])))
                        for al in range(n):
                            acc = add(
                                acc,
                                mul(
                                    mul(_pull(nabla.omega[a, b, al], phi, sp), _pull(L.rho[c, al], phi, sp)),
                                    mul(ea, A[c, mu]),
                                ),
                            )
                acc = add(acc, neg(diff(eps_at[a], mu)))
                for b in range(r):
                    for al in range(n):
                        acc = add(
                            acc,
                            neg(
                                mul(
                                    mul(eps_at[b], _pull(nabla.omega[a, b, al], phi, sp)),
                                    diff(phi[al], mu),
                                )
                            ),
                        )
                dA[a, mu] = simplify(acc)
        return tuple(dphi), dA

    def lin(phi, A, c, kphi, kA):
        nphi = tuple(simplify(add(p, mul(c, k))) for p, k in zip(phi, kphi))
        nA = np.empty_like(A)
        for idx in np.ndindex(*A.shape):
            nA[idx] = simplify(add(A[idx], mul(c, kA[idx])))
        return nphi, nA

    from .exprcore import Const

    phi, A = config.phi, config.A
    for _ in range(steps):
        k1 = rhs(phi, A)
        s2 = lin(phi, A, Const(h / 2), *k1)
        k2 = rhs(*s2)
        s3 = lin(phi, A, Const(h / 2), *k2)
        k3 = rhs(*s3)
        s4 = lin(phi, A, Const(h), *k3)
        k4 = rhs(*s4)
        nphi = []
        for al in range(n):
            inc = add(add(k1[0][al], mul(Const(2), k2[0][al])), add(mul(Const(2), k3[0][al]), k4[0][al]))
            nphi.append(simplify(add(phi[al], mul(Const(h / 6), inc))))
        nA = np.empty_like(A)
        for idx in np.ndindex(*A.shape):
            inc = add(add(k1[1][idx], mul(Const(2), k2[1][idx])), add(mul(Const(2), k3[1][idx]), k4[1][idx]))
            nA[idx] = simplify(add(A[idx], mul(Const(h / 6), inc)))
        phi, A = tuple(nphi), nA
    return FieldConfig(space=sp, phi=phi, A=A)


def _pull(e: Expr, phi: tuple, sp: VarSpace) -> Expr:
    if e.space is None:
        return e
    mapping = {i: phi[i] for i in range(len(phi))}
    return simplify(substitute(e, mapping, sp))


def fd_delta_oracle(
    L: LieAlgebroid,
    nabla: LinearConnection,
    config: FieldConfig,
    eps: GaugeParameter,
    F: JetFunctional,
    h: float = 1e-3,
    steps: int = 8,
    u_points: np.ndarray | None = None,
    econn=None,
) -> dict:
    """Independent estimate of the derivation's coefficients:

    central difference of F's coefficients along the gauge flow, plus the
    explicit frame-correction term at t = 0.  Agrees with the jet-symbol
    derivation to O(h^2).
    """
    jet = F.jet
    if u_points is None:
        from .exprcore import sample_points

        u_points = sample_points(config.d, 20)
    state0 = flow_init(L, config, u_points)
    plus = flow_from_state(L, nabla, state0, eps, h, steps)
    minus = flow_from_state(L, nabla, state0, _scaled_param(eps, -1.0), h, steps)
    cols0 = _state_cols(state0, jet, state0.x, state0.G, state0.A)
    colsp = _state_cols(plus, jet, plus.x, plus.G, plus.A)
    colsm = _state_cols(minus, jet, minus.x, minus.G, minus.A)
    eps_c = _embed_param(jet, eps)
    T = _correction_table(L, nabla, F.target, econn, jet)
    tdim = F.target_dim
    out = {}
    for idx in itertools.combinations(range(jet.d), F.degree):
        col = [F.component(idx, t) for t in range(tdim)]
        vals = np.empty((len(u_points), tdim))
        for t in range(tdim):
            vp = eval_batch(col[t], colsp)
            vm = eval_batch(col[t], colsm)
            vals[:, t] = (vp - vm) / (2 * h)
        if T is not None:
            for i in range(tdim):
                corr = ZERO
                for b in range(jet.r):
                    for j in range(tdim):
                        corr = add(corr, mul(mul(eps_c[b], T[i, b, j]), col[j]))
                vals[:, i] -= eval_batch(simplify(corr), cols0)
        out[idx] = vals
    return out

"""Lie algebroid data model and section calculus on a single global chart.

Index conventions (all 0-based in code, 1-based in JSON documents and
coordinate names):

* ``rho[a, alpha]``  is the anchor component of frame section a along
  the coordinate direction alpha,
* ``C(a, b, c)``     is the a-component of the bracket of frame sections
  b and c; only entries with b < c are stored, the rest follow by
  antisymmetry.

The base is a coordinate box in R^n with chart coordinates x1..xn; the
frame (e_a) is global.  Axiom checks are numeric at seeded sample
points, not symbolic proofs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .exprcore import (
    DEFAULT_SEED,
    Expr,
    Const,
    VarSpace,
    ZERO,
    add,
    diff,
    eval_batch,
    mul,
    neg,
    parse_expr,
    sample_points,
    simplify,
)
from .result import CheckResult, make_result

__all__ = [
    "LieAlgebroid",
    "Section",
    "VectorFieldN",
    "base_space",
    "bracket_sections",
    "anchor_apply",
    "vf_bracket",
    "check_anchor_morphism",
    "check_jacobi",
    "action_algebroid",
    "tangent_algebroid",
    "algebroid_from_json",
]


def base_space(n: int) -> VarSpace:
    return VarSpace(tuple(f"x{i + 1}" for i in range(n)))


@dataclass(frozen=True)
class LieAlgebroid:
    space: VarSpace
    rank: int
    rho: np.ndarray  # object array (rank, base_dim)
    C_upper: dict = field(default_factory=dict)  # (b, c) with b < c -> (rank,) array

    def __post_init__(self):
        n = self.space.dim
        if self.rho.shape != (self.rank, n):
            raise ValueError(f"anchor table has shape {self.rho.shape}, expected {(self.rank, n)}")
        for (b, c), col in self.C_upper.items():
            if not 0 <= b < c < self.rank:
                raise ValueError(f"C entry ({b},{c}) violates b < c storage")
            if len(col) != self.rank:
                raise ValueError("C column length must equal the rank")

    @property
    def base_dim(self) -> int:
        return self.space.dim

    def C(self, a: int, b: int, c: int) -> Expr:
        if b == c:
            return ZERO
        if b < c:
            col = self.C_upper.get((b, c))
            return col[a] if col is not None else ZERO
        col = self.C_upper.get((c, b))
        return neg(col[a]) if col is not None else ZERO

    def C_column(self, b: int, c: int) -> np.ndarray:
        return np.array([self.C(a, b, c) for a in range(self.rank)], dtype=object)

    def frame_section(self, a: int) -> "Section":
        coeffs = [ZERO] * self.rank
        coeffs[a] = Const(1)
        return Section(tuple(coeffs))


@dataclass(frozen=True)
class Section:
    """mu = mu^a e_a in the global frame; one Expr per frame index."""

    coeffs: tuple

    @property
    def rank(self) -> int:
        return len(self.coeffs)


@dataclass(frozen=True)
class VectorFieldN:
    """X = X^alpha d/dx^alpha on the base chart."""

    coeffs: tuple

    @property
    def dim(self) -> int:
        return len(self.coeffs)


def _check_rank(L: LieAlgebroid, *sections: Section):
    for s in sections:
        if s.rank != L.rank:
            raise ValueError(f"section has {s.rank} components, algebroid rank is {L.rank}")


def bracket_sections(L: LieAlgebroid, mu: Section, nu: Section) -> Section:
    """[mu, nu]^a = mu^b nu^c C^a_bc + rho^al_b mu^b d_al nu^a - rho^al_c nu^c d_al mu^a."""
    _check_rank(L, mu, nu)
    r, n = L.rank, L.base_dim
    out = []
    for a in range(r):
        acc = ZERO
        for b in range(r):
            if mu.coeffs[b].is_zero():
                continue
            for c in range(r):
                acc = add(acc, mul(mul(mu.coeffs[b], nu.coeffs[c]), L.C(a, b, c)))
        for al in range(n):
            dnu = diff(nu.coeffs[a], al)
            dmu = diff(mu.coeffs[a], al)
            for b in range(r):
                acc = add(acc, mul(mul(L.rho[b, al], mu.coeffs[b]), dnu))
                acc = add(acc, neg(mul(mul(L.rho[b, al], nu.coeffs[b]), dmu)))
        out.append(simplify(acc))
    return Section(tuple(out))


def anchor_apply(L: LieAlgebroid, mu: Section) -> VectorFieldN:
    _check_rank(L, mu)
    out = []
    for al in range(L.base_dim):
        acc = ZERO
        for a in range(L.rank):
            acc = add(acc, mul(L.rho[a, al], mu.coeffs[a]))
        out.append(simplify(acc))
    return VectorFieldN(tuple(out))


def vf_bracket(X: VectorFieldN, Y: VectorFieldN) -> VectorFieldN:
    """Coordinate vector-field commutator [X, Y]^al = X^be d_be Y^al - Y^be d_be X^al."""
    n = X.dim
    if Y.dim != n:
        raise ValueError("vector fields live on different charts")
    out = []
    for al in range(n):
        acc = ZERO
        for be in range(n):
            acc = add(acc, mul(X.coeffs[be], diff(Y.coeffs[al], be)))
            acc = add(acc, neg(mul(Y.coeffs[be], diff(X.coeffs[al], be))))
        out.append(simplify(acc))
    return VectorFieldN(tuple(out))


def _max_abs(exprs, pts: np.ndarray) -> tuple[float, float]:
    """(max |expr|, largest magnitude met) over expressions and points."""
    worst = 0.0
    cols = pts.T
    for e in exprs:
        vals = eval_batch(e, cols)
        m = float(np.max(np.abs(vals))) if vals.size else 0.0
        worst = max(worst, m) if np.isfinite(m) else float("nan")
        if not np.all(np.isfinite(vals)):
            return float("nan"), worst
    return worst, worst


def check_anchor_morphism(
    L: LieAlgebroid,
    points: np.ndarray,
    tol: float = 1e-9,
    seed: int = DEFAULT_SEED,
) -> CheckResult:
    """Residual of rho being a bracket homomorphism.

    R^be_ab = rho^al_a d_al rho^be_b - rho^al_b d_al rho^be_a - rho^be_c C^c_ab
    """
    if len(points) == 0:
        raise ValueError("need at least one sample point")
    t0 = time.perf_counter()
    r, n = L.rank, L.base_dim
    residuals = []
    for a in range(r):
        for b in range(a + 1, r):
            for be in range(n):
                acc = ZERO
                for al in range(n):
                    acc = add(acc, mul(L.rho[a, al], diff(L.rho[b, be], al)))
                    acc = add(acc, neg(mul(L.rho[b, al], diff(L.rho[a, be], al))))
                for c in range(r):
                    acc = add(acc, neg(mul(L.rho[c, be], L.C(c, a, b))))
                residuals.append(simplify(acc))
    worst, mag = _max_abs(residuals, points)
    ms = (time.perf_counter() - t0) * 1e3
    return make_result(
        "anchor_morphism", worst, tol, seed=seed, points=len(points), ms=ms, largest_magnitude=mag
    )


def check_jacobi(
    L: LieAlgebroid,
    points: np.ndarray,
    tol: float = 1e-9,
    seed: int = DEFAULT_SEED,
) -> CheckResult:
    """Frame Jacobiator residual, cyclic over (a, b, c):

    J^e_abc = sum_cyc [ C^d_bc C^e_ad + rho^al_a d_al C^e_bc ]
    """
    if len(points) == 0:
        raise ValueError("need at least one sample point")
    t0 = time.perf_counter()
    r, n = L.rank, L.base_dim
    residuals = []
    for a in range(r):
        for b in range(a + 1, r):
            for c in range(b + 1, r):
                for e in range(r):
                    acc = ZERO
                    for (i, j, k) in ((a, b, c), (b, c, a), (c, a, b)):
                        for d in range(r):
                            acc = add(acc, mul(L.C(d, j, k), L.C(e, i, d)))
                        for al in range(n):
                            acc = add(acc, mul(L.rho[i, al], diff(L.C(e, j, k), al)))
                    residuals.append(simplify(acc))
    worst, mag = _max_abs(residuals, points)
    ms = (time.perf_counter() - t0) * 1e3
    return make_result(
        "jacobi", worst, tol, seed=seed, points=len(points), ms=ms, largest_magnitude=mag
    )


def action_algebroid(
    f: np.ndarray,
    gamma: list[VectorFieldN],
    *,
    tol: float = 1e-9,
    seed: int = DEFAULT_SEED,
    points: np.ndarray | None = None,
) -> LieAlgebroid:
    """Algebroid of a Lie algebra action: rho^al_a = gamma_a^al, C^a_bc = f^a_bc.

    The action convention is checked at seeded sample points:
    [gamma_a, gamma_b] = f^c_ab gamma_c.  An anti-homomorphism (or any
    violation above tol) is rejected with the offending residual.
    """
    r = len(gamma)
    f = np.asarray(f, dtype=float)
    if f.shape != (r, r, r):
        raise ValueError(f"structure constants have shape {f.shape}, expected {(r, r, r)}")
    if np.max(np.abs(f + np.swapaxes(f, 1, 2))) != 0.0:
        raise ValueError("structure constants must be antisymmetric in the lower indices")
    n = gamma[0].dim
    for g in gamma:
        if g.dim != n:
            raise ValueError("action vector fields live on different charts")
    if points is None:
        points = sample_points(n, 50, seed=seed)

    residuals = []
    for a in range(r):
        for b in range(a + 1, r):
            lie = vf_bracket(gamma[a], gamma[b])
            for al in range(n):
                acc = lie.coeffs[al]
                for c in range(r):
                    acc = add(acc, neg(mul(Const(f[c, a, b]), gamma[c].coeffs[al])))
                residuals.append(simplify(acc))
    worst, _ = _max_abs(residuals, points)
    if not worst <= tol:
        raise ValueError(
            f"gamma is not a homomorphism for the given constants: max residual {worst:.3e}"
        )

    rho = np.empty((r, n), dtype=object)
    for a in range(r):
        for al in range(n):
            rho[a, al] = gamma[a].coeffs[al]
    C_upper = {}
    for b in range(r):
        for c in range(b + 1, r):
            col = np.array([Const(f[a, b, c]) for a in range(r)], dtype=object)
            if any(not x.is_zero() for x in col):
                C_upper[(b, c)] = col
    return LieAlgebroid(space=base_space(n), rank=r, rho=rho, C_upper=C_upper)


def tangent_algebroid(n: int) -> LieAlgebroid:
    """rho = identity, C = 0: the tangent bundle of the chart."""
    if n < 1:
        raise ValueError("base dimension must be positive")
    rho = np.empty((n, n), dtype=object)
    for a in range(n):
        for al in range(n):
            rho[a, al] = Const(1.0 if a == al else 0.0)
    return LieAlgebroid(space=base_space(n), rank=n, rho=rho, C_upper={})


def algebroid_from_json(doc: dict) -> LieAlgebroid:
    """Algebroid spec document:

    { "base_dim": n, "rank": r,
      "rho": [[expr, ...] per section a, each row length n],
      "C":   [{"a": i, "b": j, "c": k, "expr": s}, ...]  with b < c, 1-based }
    """
    n = int(doc["base_dim"])
    r = int(doc["rank"])
    space = base_space(n)
    rows = doc["rho"]
    if len(rows) != r or any(len(row) != n for row in rows):
        raise ValueError("rho table must be rank x base_dim")
    rho = np.empty((r, n), dtype=object)
    for a in range(r):
        for al in range(n):
            rho[a, al] = parse_expr(str(rows[a][al]), space)
    C_upper: dict = {}
    for entry in doc.get("C", []):
        a, b, c = int(entry["a"]) - 1, int(entry["b"]) - 1, int(entry["c"]) - 1
        if not 0 <= b < c < r:
            raise ValueError(f"C entry must have 1 <= b < c <= rank, got b={b + 1}, c={c + 1}")
        if not 0 <= a < r:
            raise ValueError(f"C entry has a={a + 1} out of range")
        col = C_upper.setdefault((b, c), np.array([ZERO] * r, dtype=object))
        col[a] = add(col[a], parse_expr(str(entry["expr"]), space))
    return LieAlgebroid(space=space, rank=r, rho=rho, C_upper=C_upper)

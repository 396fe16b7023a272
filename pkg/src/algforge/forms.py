"""Vector-bundle-valued differential forms and the graded tensor extension.

Antisymmetric storage: only strictly increasing multi-indices are kept;
other index orders are resolved by permutation sign at access time.
Degrees are capped at 3 (desk scale); a wedge whose degree exceeds the
base dimension returns the zero form and flags it with a warning.

Two pullback notions live here:

* ``pullback_tensor``  substitutes the map into a tensor's coefficients
  (the slot bundles become pulled-back bundles, components unchanged),
* ``form_pullback``    additionally contracts every form slot with the
  tangent map of Phi.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .exprcore import (
    Expr,
    VarSpace,
    ZERO,
    add,
    diff,
    mul,
    neg,
    simplify,
    substitute,
)

__all__ = [
    "MAX_DEGREE",
    "VForm",
    "MultiTensor",
    "SmoothMap",
    "zero_form",
    "wedge_extend",
    "pullback_tensor",
    "form_pullback",
    "exterior_derivative",
]

MAX_DEGREE = 3


def _merge_sign(left: tuple, right: tuple) -> tuple[int, tuple] | None:
    """Sign of sorting left+right into increasing order; None if repeated."""
    seq = list(left) + list(right)
    if len(set(seq)) != len(seq):
        return None
    sign = 1
    # insertion count of inversions; degree <= 3 keeps this tiny
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign, tuple(sorted(seq))


def _sort_index(idx: tuple) -> tuple[int, tuple] | None:
    return _merge_sign(idx, ())


@dataclass(frozen=True)
class SmoothMap:
    """Phi: chart(src) -> chart(dst), one Expr component per dst coordinate."""

    src: VarSpace
    dst: VarSpace
    components: tuple

    def __post_init__(self):
        if len(self.components) != self.dst.dim:
            raise ValueError("map needs one component per target coordinate")

    def pull_scalar(self, e: Expr) -> Expr:
        mapping = {i: self.components[i] for i in range(self.dst.dim)}
        return simplify(substitute(e, mapping, self.src))

    def jacobian(self) -> np.ndarray:
        J = np.empty((self.dst.dim, self.src.dim), dtype=object)
        for al in range(self.dst.dim):
            for mu in range(self.src.dim):
                J[al, mu] = diff(self.components[al], mu)
        return J


@dataclass(frozen=True)
class VForm:
    space: VarSpace
    degree: int
    target: str  # "scalar" | "E" | "TN"
    target_dim: int
    coeffs: dict  # increasing index tuple -> tuple[Expr] (length target_dim)

    def __post_init__(self):
        if self.degree > MAX_DEGREE:
            raise ValueError(f"form degree {self.degree} exceeds the cap {MAX_DEGREE}")
        if self.degree > self.space.dim:
            raise ValueError("form degree exceeds the base dimension")
        for idx, col in self.coeffs.items():
            if len(idx) != self.degree or list(idx) != sorted(set(idx)):
                raise ValueError(f"coefficient index {idx} is not strictly increasing")
            if len(col) != self.target_dim:
                raise ValueError("coefficient column has the wrong target dimension")

    def component(self, idx: tuple, t: int) -> Expr:
        sorted_ = _sort_index(tuple(idx))
        if sorted_ is None:
            return ZERO
        sign, key = sorted_
        col = self.coeffs.get(key)
        if col is None:
            return ZERO
        return col[t] if sign > 0 else neg(col[t])

    def all_exprs(self) -> list:
        return [e for col in self.coeffs.values() for e in col]

    def map_coeffs(self, fn) -> "VForm":
        out = {idx: tuple(fn(e) for e in col) for idx, col in self.coeffs.items()}
        return VForm(self.space, self.degree, self.target, self.target_dim, out)


def zero_form(space: VarSpace, degree: int, target: str, target_dim: int) -> VForm:
    return VForm(space, degree, target, target_dim, {})


@dataclass(frozen=True)
class MultiTensor:
    """F with l inputs and one output; table shape (out_dim, *in_dims)."""

    space: VarSpace
    in_tags: tuple
    in_dims: tuple
    out_tag: str
    out_dim: int
    table: np.ndarray

    def __post_init__(self):
        if self.table.shape != (self.out_dim, *self.in_dims):
            raise ValueError(
                f"tensor table shape {self.table.shape} does not match "
                f"{(self.out_dim, *self.in_dims)}"
            )


def _wedge_scalar(c1: dict, c2: dict, dim: int) -> dict:
    out: dict = {}
    for i1, e1 in c1.items():
        if e1.is_zero():
            continue
        for i2, e2 in c2.items():
            if e2.is_zero():
                continue
            merged = _merge_sign(i1, i2)
            if merged is None:
                continue
            sign, key = merged
            term = mul(e1, e2) if sign > 0 else neg(mul(e1, e2))
            out[key] = add(out.get(key, ZERO), term)
    return out


def wedge_extend(F: MultiTensor, *forms_in: VForm) -> VForm:
    """Graded extension: componentwise F(e_{a_1},...,e_{a_l}) times the
    scalar wedge A_1^{a_1} ^ ... ^ A_l^{a_l}."""
    if len(forms_in) != len(F.in_dims):
        raise ValueError(f"tensor takes {len(F.in_dims)} forms, got {len(forms_in)}")
    for A, tag, d in zip(forms_in, F.in_tags, F.in_dims):
        if A.space != F.space:
            raise ValueError("tensor and forms live over different charts")
        if A.target != tag or A.target_dim != d:
            raise ValueError(
                f"form target ({A.target}, {A.target_dim}) does not match "
                f"tensor input ({tag}, {d})"
            )
    k = sum(A.degree for A in forms_in)
    if k > MAX_DEGREE:
        raise ValueError(f"wedge degree {k} exceeds the cap {MAX_DEGREE}")
    dim = F.space.dim
    if k > dim:
        warnings.warn("wedge degree exceeds the base dimension; returning the zero form")
        return zero_form(F.space, dim, F.out_tag, F.out_dim)

    acc: dict = {}
    for combo in itertools.product(*(range(d) for d in F.in_dims)):
        # scalar wedge of the chosen coefficient forms, built left to right
        current = {(): _one_expr()}
        for A, a in zip(forms_in, combo):
            comp = {idx: col[a] for idx, col in A.coeffs.items()}
            current = _wedge_scalar(current, comp, dim)
            if not current:
                break
        if not current:
            continue
        for o in range(F.out_dim):
            f_entry = F.table[(o, *combo)]
            if isinstance(f_entry, Expr) and f_entry.is_zero():
                continue
            col = acc.setdefault(o, {})
            for idx, e in current.items():
                col[idx] = add(col.get(idx, ZERO), mul(f_entry, e))

    coeffs: dict = {}
    for o, col in acc.items():
        for idx, e in col.items():
            se = simplify(e)
            if se.is_zero():
                continue
            entry = coeffs.setdefault(idx, [ZERO] * F.out_dim)
            entry[o] = se
    return VForm(F.space, k, F.out_tag, F.out_dim, {i: tuple(c) for i, c in coeffs.items()})


def _one_expr() -> Expr:
    from .exprcore import ONE

    return ONE


def pullback_tensor(phi: SmoothMap, F: MultiTensor) -> MultiTensor:
    """Phi*F: same components, composed with the map."""
    table = np.empty(F.table.shape, dtype=object)
    for idx in np.ndindex(*F.table.shape):
        table[idx] = phi.pull_scalar(F.table[idx])
    return MultiTensor(phi.src, F.in_tags, F.in_dims, F.out_tag, F.out_dim, table)


def form_pullback(phi: SmoothMap, omega: VForm) -> VForm:
    """Phi^! omega: compose coefficients with Phi and contract every form
    slot with the tangent map."""
    if omega.space != phi.dst:
        raise ValueError("form does not live over the map's target chart")
    k = omega.degree
    if k > phi.src.dim:
        warnings.warn("pullback degree exceeds the source dimension; returning zero")
        return zero_form(phi.src, min(k, phi.src.dim), omega.target, omega.target_dim)
    J = phi.jacobian()
    n = phi.dst.dim
    out: dict = {}
    for mu_idx in itertools.combinations(range(phi.src.dim), k):
        col = []
        for t in range(omega.target_dim):
            acc = ZERO
            for al_idx in itertools.product(range(n), repeat=k):
                comp = omega.component(al_idx, t)
                if comp.is_zero():
                    continue
                term = phi.pull_scalar(comp)
                for al, mu in zip(al_idx, mu_idx):
                    term = mul(term, J[al, mu])
                acc = add(acc, term)
            col.append(simplify(acc))
        if any(not e.is_zero() for e in col):
            out[mu_idx] = tuple(col)
    return VForm(phi.src, k, omega.target, omega.target_dim, out)


def exterior_derivative(omega: VForm, assume_flat_frame: bool = False) -> VForm:
    """d omega, componentwise; valid for scalar targets, or for vector
    targets when the caller asserts the canonical flat frame."""
    if omega.target != "scalar" and not assume_flat_frame:
        raise ValueError(
            "exterior derivative of a vector-valued form needs the flat-frame assertion"
        )
    k = omega.degree
    if k + 1 > MAX_DEGREE:
        raise ValueError("derivative degree exceeds the cap")
    if k + 1 > omega.space.dim:
        return zero_form(omega.space, min(k + 1, omega.space.dim), omega.target, omega.target_dim)
    out: dict = {}
    for idx, col in omega.coeffs.items():
        for j in range(omega.space.dim):
            merged = _merge_sign((j,), idx)
            if merged is None:
                continue
            sign, key = merged
            entry = out.setdefault(key, [ZERO] * omega.target_dim)
            for t in range(omega.target_dim):
                d = diff(col[t], j)
                entry[t] = add(entry[t], d if sign > 0 else neg(d))
    coeffs = {}
    for key, col in out.items():
        scol = [simplify(e) for e in col]
        if any(not e.is_zero() for e in scol):
            coeffs[key] = tuple(scol)
    return VForm(omega.space, k + 1, omega.target, omega.target_dim, coeffs)

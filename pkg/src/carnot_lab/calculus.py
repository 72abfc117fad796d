"""Homogeneous polynomial algebra, invariant vector fields and intrinsic
Taylor expansion on a compiled group.

Polynomials on the group are stored in the global coordinate chart; the
homogeneous degree of a monomial eta^I is d(I) = sum_j s_j i_j.  Invariant
fields are first-order operators X_j = sum_k P_{j,k} d/d eta_k whose
coefficient polynomials come straight out of the compiled C_j^{I,J} table.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .group import GroupLaw
from .polynomials import (
    Poly,
    poly_add,
    poly_diff,
    poly_eval,
    poly_mul,
    poly_scale,
    poly_str,
    poly_sub,
    poly_subs,
    poly_var,
)


class CalculusError(ValueError):
    pass


class SingularSystem(CalculusError):
    pass


class StepTooSmall(CalculusError):
    pass


class DegenerateFit(CalculusError):
    pass


# ---------------------------------------------------------------------------
# Multi-indices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MultiIndex:
    exponents: tuple[int, ...]

    def __iter__(self):
        return iter(self.exponents)

    def __len__(self):
        return len(self.exponents)

    @property
    def order(self) -> int:
        """Isotropic length |I|."""
        return sum(self.exponents)

    def hom_degree(self, law: GroupLaw) -> Fraction:
        return sum((w * e for w, e in zip(law.weights, self.exponents)), Fraction(0))


def hom_degree(I: Sequence[int], law: GroupLaw) -> Fraction:
    return sum((w * e for w, e in zip(law.weights, I)), Fraction(0))


def multi_indices_below(law: GroupLaw, a) -> list[tuple[int, ...]]:
    """All I with d(I) < a, sorted by (d(I), I)."""
    a = Fraction(a) if not isinstance(a, float) else a
    d = law.dim
    out: list[tuple[int, ...]] = []

    def rec(pos: int, prefix: tuple[int, ...], deg: Fraction):
        if pos == d:
            out.append(prefix)
            return
        e = 0
        while deg + law.weights[pos] * e < a:
            rec(pos + 1, prefix + (e,), deg + law.weights[pos] * e)
            e += 1

    rec(0, (), Fraction(0))
    out.sort(key=lambda I: (hom_degree(I, law), I))
    return out


def degree_set(law: GroupLaw, cap=6) -> list[Fraction]:
    """The set of homogeneous degrees d(I) up to the cap, sorted."""
    degs = {hom_degree(I, law) for I in multi_indices_below(law, Fraction(cap) + 1)}
    return sorted(dg for dg in degs if dg <= cap)


def next_degree(law: GroupLaw, a, cap=8) -> Fraction:
    """min{d(I) in the degree set : d(I) >= a}."""
    for dg in degree_set(law, cap):
        if dg >= a:
            return dg
    raise CalculusError(f"no degree >= {a} below cap {cap}")


# ---------------------------------------------------------------------------
# Homogeneous polynomials on the group
# ---------------------------------------------------------------------------


class HomPolynomial:
    """Polynomial on the group in the global chart, with exact coefficients."""

    __slots__ = ("terms", "law")

    def __init__(self, terms: Poly, law: GroupLaw):
        self.terms = {m: c for m, c in terms.items() if c != 0}
        self.law = law

    @classmethod
    def zero(cls, law: GroupLaw) -> "HomPolynomial":
        return cls({}, law)

    @classmethod
    def constant(cls, c, law: GroupLaw) -> "HomPolynomial":
        return cls({(0,) * law.dim: c} if c != 0 else {}, law)

    @classmethod
    def coordinate(cls, j: int, law: GroupLaw) -> "HomPolynomial":
        return cls(poly_var(j, law.dim), law)

    @classmethod
    def monomial(cls, I: Sequence[int], law: GroupLaw, coeff=Fraction(1)) -> "HomPolynomial":
        return cls({tuple(I): coeff}, law)

    def __add__(self, other: "HomPolynomial") -> "HomPolynomial":
        return HomPolynomial(poly_add(self.terms, other.terms), self.law)

    def __sub__(self, other: "HomPolynomial") -> "HomPolynomial":
        return HomPolynomial(poly_sub(self.terms, other.terms), self.law)

    def __mul__(self, other):
        if isinstance(other, HomPolynomial):
            return HomPolynomial(poly_mul(self.terms, other.terms), self.law)
        return HomPolynomial(poly_scale(self.terms, other), self.law)

    __rmul__ = __mul__

    def __neg__(self):
        return HomPolynomial(poly_scale(self.terms, -1), self.law)

    def __eq__(self, other):
        return isinstance(other, HomPolynomial) and self.terms == other.terms

    def __bool__(self):
        return bool(self.terms)

    def diff(self, k: int) -> "HomPolynomial":
        return HomPolynomial(poly_diff(self.terms, k), self.law)

    def __call__(self, point):
        return poly_eval(self.terms, point)

    def eval_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, float)
        out = np.zeros(pts.shape[:-1])
        for mono, c in self.terms.items():
            term = np.full(pts.shape[:-1], float(c))
            for i, e in enumerate(mono):
                if e:
                    term = term * pts[..., i] ** e
            out += term
        return out

    def hom_degree(self):
        """Max d(I) over nonzero terms (None for the zero polynomial)."""
        if not self.terms:
            return None
        return max(hom_degree(m, self.law) for m in self.terms)

    def in_P(self, a) -> bool:
        """Membership in P_a: all terms of homogeneous degree < a."""
        return all(hom_degree(m, self.law) < a for m in self.terms)

    def truncate_below(self, a) -> "HomPolynomial":
        """Projection onto P_a (keep d(I) < a)."""
        return HomPolynomial(
            {m: c for m, c in self.terms.items() if hom_degree(m, self.law) < a}, self.law
        )

    def constant_term(self):
        return self.terms.get((0,) * self.law.dim, 0)

    def canonical_str(self) -> str:
        names = [f"eta{j}" for j in range(self.law.dim)]
        return poly_str(self.terms, names)

    def __repr__(self):
        return f"HomPolynomial({self.canonical_str()})"


# ---------------------------------------------------------------------------
# Invariant vector fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InvariantField:
    """First-order operator sum_k P_k d/d eta_k, left- or right-invariant."""

    side: str  # 'left' | 'right'
    index: int
    coeff_polys: tuple  # tuple of Poly (d vars)
    law: GroupLaw

    def apply_poly(self, p: HomPolynomial) -> HomPolynomial:
        out: Poly = {}
        for k, coeff in enumerate(self.coeff_polys):
            if coeff:
                out = poly_add(out, poly_mul(coeff, poly_diff(p.terms, k)))
        return HomPolynomial(out, self.law)


def left_field(j: int, law: GroupLaw) -> InvariantField:
    """X_j, differentiating y -> f(xy) in the j-th direction at y = e."""
    d = law.dim
    polys = []
    for k in range(d):
        p: Poly = {}
        if k == j:
            p = {(0,) * d: Fraction(1)}
        ej = tuple(1 if i == j else 0 for i in range(d))
        for (I, J), c in law.cij.get(k, {}).items():
            if J == ej:
                p = poly_add(p, {I: c})
        polys.append(p)
    return InvariantField("left", j, tuple(polys), law)


def right_field(j: int, law: GroupLaw) -> InvariantField:
    """Y_j, differentiating y -> f(yx) in the j-th direction at y = e."""
    d = law.dim
    polys = []
    for k in range(d):
        p: Poly = {}
        if k == j:
            p = {(0,) * d: Fraction(1)}
        ej = tuple(1 if i == j else 0 for i in range(d))
        for (I, J), c in law.cij.get(k, {}).items():
            if I == ej:
                p = poly_add(p, {J: c})
        polys.append(p)
    return InvariantField("right", j, tuple(polys), law)


@dataclass(frozen=True)
class FieldWord:
    """Composition of first-order invariant fields, outermost first.

    X^I = X_1^{i_1} ... X_d^{i_d} acts with the rightmost factor first; the
    right-invariant convention reverses the composition (Y^I = Y_d^{i_d} ... Y_1^{i_1}).
    """

    word: tuple[int, ...]
    side: str = "left"

    @classmethod
    def from_multiindex(cls, I: Sequence[int], side: str = "left") -> "FieldWord":
        seq: list[int] = []
        for j, e in enumerate(I):
            seq.extend([j] * e)
        if side == "right":
            seq = seq[::-1]
        return cls(tuple(seq), side)

    @property
    def order(self) -> int:
        return len(self.word)

    def hom_degree(self, law: GroupLaw) -> Fraction:
        return sum((law.weights[j] for j in self.word), Fraction(0))


def apply_field(w: FieldWord, p: HomPolynomial) -> HomPolynomial:
    """Exact symbolic application of the field word to a polynomial."""
    law = p.law
    fields = {j: (left_field(j, law) if w.side == "left" else right_field(j, law))
              for j in set(w.word)}
    out = p
    for j in reversed(w.word):
        out = fields[j].apply_poly(out)
    return out


def field_on_function(
    w: FieldWord,
    f: "SmoothFn",
    x,
    h: float = 1e-3,
    richardson: bool = False,
) -> float:
    """Nested central differences along the exponential flows.

    Order-2 accurate in h per differentiation; the derivative oracle for
    non-polynomial functions.
    """
    if h <= 0:
        raise StepTooSmall("step must be positive")
    law = f.law
    d = law.dim
    scale_seen = [0.0]

    def ev(word: tuple[int, ...], pt: np.ndarray) -> float:
        if not word:
            v = f(pt)
            scale_seen[0] = max(scale_seen[0], abs(v))
            return v
        j, rest = word[0], word[1:]
        step = np.zeros(d)
        step[j] = h
        plus = ev(rest, law.mul_many(pt, step))
        step[j] = -h
        minus = ev(rest, law.mul_many(pt, step))
        return (plus - minus) / (2 * h)

    pt = np.asarray(x, float)

    def full(hh: float) -> float:
        nonlocal h
        old, h = h, hh
        try:
            return ev(w.word, pt)
        finally:
            h = old

    val = full(h) if not richardson else (4 * full(h / 2) - full(h)) / 3
    # cancellation guard: machine noise amplified through the difference stack
    noise = scale_seen[0] * np.finfo(float).eps / (2 * h) ** len(w.word)
    if noise > 0.5 * max(abs(val), 1e-8):
        raise StepTooSmall(
            f"cancellation dominates: noise {noise:.2e} vs value {val:.2e} at h={h}"
        )
    return val


# ---------------------------------------------------------------------------
# Smooth functions
# ---------------------------------------------------------------------------


@dataclass
class SmoothFn:
    """A function on the group: a float evaluator plus an optional exact payload."""

    evaluator: Callable
    law: GroupLaw
    poly: Optional[HomPolynomial] = None

    @classmethod
    def from_poly(cls, p: HomPolynomial) -> "SmoothFn":
        return cls(evaluator=lambda pt: float(p.eval_many(np.asarray(pt, float)[None])[0]),
                   law=p.law, poly=p)

    @classmethod
    def from_callable(cls, fn: Callable, law: GroupLaw) -> "SmoothFn":
        return cls(evaluator=fn, law=law)

    def __call__(self, pt) -> float:
        return float(self.evaluator(np.asarray(pt, float)))

    def derivative(self, I: Sequence[int], x, h: float = 1e-3) -> float:
        """X^I f(x): exact for polynomial payloads, finite differences otherwise."""
        if self.poly is not None:
            q = apply_field(FieldWord.from_multiindex(I), self.poly)
            return float(q.eval_many(np.asarray(x, float)[None])[0])
        order = sum(I)
        if order == 0:
            return self(x)
        hh = h if h is not None else (1e-4) ** (1.0 / (order + 1))
        return field_on_function(FieldWord.from_multiindex(I), self, x, hh, richardson=True)


# ---------------------------------------------------------------------------
# Intrinsic Taylor expansion
# ---------------------------------------------------------------------------


def _exact_solve(M: list[list[Fraction]], rhs: list):
    """Gaussian elimination over exact scalars; raises SingularSystem."""
    n = len(M)
    A = [row[:] + [rhs[i]] for i, row in enumerate(M)]
    for col in range(n):
        piv = next((r for r in range(col, n) if A[r][col] != 0), None)
        if piv is None:
            raise SingularSystem(f"Taylor matrix singular at column {col}")
        A[col], A[piv] = A[piv], A[col]
        pc = A[col][col]
        for r in range(n):
            if r != col and A[r][col] != 0:
                f = A[r][col] / pc
                A[r] = [a - f * b for a, b in zip(A[r], A[col])]
    return [A[i][n] / A[i][i] for i in range(n)]


def taylor_matrix(law: GroupLaw, a) -> tuple[list[tuple[int, ...]], list[list[Fraction]]]:
    """Indices {d(I) < a} and the exact matrix M[I][J] = X^I eta^J(e)."""
    idx = multi_indices_below(law, a)
    M = []
    for I in idx:
        wI = FieldWord.from_multiindex(I)
        row = []
        for J in idx:
            q = apply_field(wI, HomPolynomial.monomial(J, law))
            row.append(Fraction(q.constant_term()))
        M.append(row)
    return idx, M
_taylor_matrix_cache: dict = {}


def taylor_poly(f: SmoothFn, x, a, h: float = 1e-3) -> HomPolynomial:
    """The unique P in P_a with X^I P(e) = X^I f(x) for all d(I) < a."""
    law = f.law
    key = (id(law), Fraction(a) if not isinstance(a, float) else a)
    if key not in _taylor_matrix_cache:
        _taylor_matrix_cache[key] = taylor_matrix(law, a)
    idx, M = _taylor_matrix_cache[key]

    exact = f.poly is not None and _is_exact_point(x)
    if exact:
        rhs = []
        for I in idx:
            q = apply_field(FieldWord.from_multiindex(I), f.poly)
            rhs.append(Fraction(poly_eval(q.terms, tuple(x))))
        coeffs = _exact_solve(M, rhs)
        return HomPolynomial({J: c for J, c in zip(idx, coeffs) if c != 0}, law)

    rhs_f = np.array([f.derivative(I, x, h=h) for I in idx])
    Mf = np.array([[float(c) for c in row] for row in M])
    try:
        coeffs = np.linalg.solve(Mf, rhs_f)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded by compile checks
        raise SingularSystem(str(exc)) from exc
    return HomPolynomial({J: c for J, c in zip(idx, coeffs) if c != 0.0}, law)


def _is_exact_point(x) -> bool:
    return isinstance(x, (tuple, list)) and all(isinstance(c, (int, Fraction)) for c in x)


def remainder_rate(
    f: SmoothFn,
    x,
    a,
    scales: Sequence[float],
    n_directions: int = 24,
    seed: int = 3,
    h: float = 1e-3,
) -> dict:
    """Fit the decay exponent of the Taylor remainder along shrinking dilations.

    R(lambda) = max over unit directions y0 of |f(x . (lambda . y0)) - P^a_x[f](lambda . y0)|;
    returns the fitted slope of log R vs log lambda together with the data.
    """
    law = f.law
    scales = list(scales)
    if len(scales) < 2 or any(s2 >= s1 for s1, s2 in zip(scales, scales[1:])):
        raise CalculusError("scales must be a decreasing ladder of at least 2 entries")
    P = taylor_poly(f, x, a, h=h)
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_directions, law.dim))
    norms = law.hom_norm_many(dirs)
    dirs = np.stack([law.dilate_many(1.0 / n, v) for v, n in zip(dirs, norms)])
    xs = np.asarray(x, float)

    maxima = []
    for lam in scales:
        ys = law.dilate_many(lam, dirs)
        pts = law.mul_many(xs[None, :], ys)
        fv = np.array([f(p) for p in pts])
        pv = P.eval_many(ys)
        maxima.append(float(np.max(np.abs(fv - pv))))
    maxima_arr = np.array(maxima)
    if np.all(maxima_arr < 1e-14):
        raise DegenerateFit("remainder underflows at every scale; it vanishes identically")
    lo = np.log(np.maximum(maxima_arr, 1e-300))
    slope = float(np.polyfit(np.log(scales), lo, 1)[0])
    return {"slope": slope, "scales": scales, "maxima": maxima, "exact_zero": False}


# ---------------------------------------------------------------------------
# Phi coordinates and the first-order mean-value decomposition
# ---------------------------------------------------------------------------


def phi_coords(t, law: GroupLaw):
    """Phi(t) = exp(t_1 X_1) ... exp(t_d X_d), exact on exact input."""
    d = law.dim
    exact = _is_exact_point(t)
    g = tuple(Fraction(0) for _ in range(d)) if exact else np.zeros(d)
    for i in range(d):
        step = (
            tuple(t[i] if j == i else Fraction(0) for j in range(d))
            if exact
            else np.eye(d)[i] * float(t[i])
        )
        g = law.mul(g, step)
    return g


def phi_inverse(y, law: GroupLaw):
    """Solve Phi(t) = y by weight-ordered sweeps; exact on exact input."""
    d = law.dim
    exact = _is_exact_point(y)
    t = [Fraction(0)] * d if exact else [0.0] * d
    levels = sorted(set(law.weights))
    for lv in levels:
        z = phi_coords(tuple(t) if exact else np.array(t, float), law)
        for j in range(d):
            if law.weights[j] == lv:
                t[j] = y[j] - z[j]
    return tuple(t) if exact else np.array(t, float)


def mean_value_check(f: SmoothFn, x, y, h: float = 1e-4) -> float:
    """Residual of f(xy) - f(x) = sum_i int_0^{t_i} (X_i f)(x y_1...y_{i-1} exp(s X_i)) ds."""
    from scipy.integrate import quad

    law = f.law
    d = law.dim
    t = phi_inverse(np.asarray(y, float), law)
    xs = np.asarray(x, float)
    lhs = f(law.mul_many(xs, np.asarray(y, float))) - f(xs)

    total = 0.0
    prefix = xs.copy()
    for i in range(d):
        ti = float(t[i])
        if ti != 0.0:
            if f.poly is not None:
                Xi = apply_field(FieldWord.from_multiindex(
                    tuple(1 if j == i else 0 for j in range(d))), f.poly)

                def integrand(s, i=i, base=prefix.copy(), Xi=Xi):
                    step = np.zeros(d)
                    step[i] = s
                    return float(Xi.eval_many(law.mul_many(base, step)[None])[0])
            else:
                def integrand(s, i=i, base=prefix.copy()):
                    step = np.zeros(d)
                    step[i] = s
                    pt = law.mul_many(base, step)
                    w = FieldWord.from_multiindex(tuple(1 if j == i else 0 for j in range(d)))
                    return field_on_function(w, f, pt, h=h)

            val, _ = quad(integrand, 0.0, ti, limit=100, epsabs=1e-12, epsrel=1e-12)
            total += val
        step = np.zeros(d)
        step[i] = ti
        prefix = law.mul_many(prefix, step)
    return abs(lhs - total)


# ---------------------------------------------------------------------------
# Translation of polynomials (polynomial-sector structure group)
# ---------------------------------------------------------------------------


def translate_poly(p: HomPolynomial, g, side: str = "left") -> HomPolynomial:
    """Exact substitution of the group law: left gives p(g . y), right p(y . g).

    Preserves P_a; the left version realizes the polynomial-sector structure
    group action.  Composition order: translate(translate(p, h), g) ==
    translate(p, mul(h, g)) for the left action.
    """
    law = p.law
    d = law.dim
    exact = _is_exact_point(g)
    gc = list(g) if exact else [float(c) for c in np.asarray(g, float)]
    subs = {}
    for j in range(d):
        if side == "left":
            # eta_j(g y): x-slot frozen at g
            repl = poly_subs(
                law.mul_polys[j],
                {**{i: {(0,) * d: gc[i]} if gc[i] != 0 else {} for i in range(d)},
                 **{d + i: poly_var(i, d) for i in range(d)}},
                d,
            )
        elif side == "right":
            repl = poly_subs(
                law.mul_polys[j],
                {**{i: poly_var(i, d) for i in range(d)},
                 **{d + i: {(0,) * d: gc[i]} if gc[i] != 0 else {} for i in range(d)}},
                d,
            )
        else:
            raise CalculusError("side must be 'left' or 'right'")
        subs[j] = repl
    return HomPolynomial(poly_subs(p.terms, subs, d), law)

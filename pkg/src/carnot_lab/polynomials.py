"""Sparse multivariate polynomials with exact (Fraction) or float coefficients.

This is the workhorse behind the compiled group laws: monomials are exponent
tuples, coefficients live in whatever ring the caller feeds in.  Everything the
group-law compiler does (BCH expansion, monomial matching, substitution of the
law into itself for associativity checks) happens on these dictionaries, so the
algebra layer stays exact end to end.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Mapping

Monomial = tuple[int, ...]
Poly = dict  # Monomial -> coefficient


def poly_zero() -> Poly:
    return {}


def poly_const(c, nvars: int) -> Poly:
    if c == 0:
        return {}
    return {(0,) * nvars: c}


def poly_var(i: int, nvars: int, coeff=Fraction(1)) -> Poly:
    mono = tuple(1 if j == i else 0 for j in range(nvars))
    return {mono: coeff}


def poly_add(p: Poly, q: Poly) -> Poly:
    out = dict(p)
    for m, c in q.items():
        s = out.get(m, 0) + c
        if s == 0:
            out.pop(m, None)
        else:
            out[m] = s
    return out


def poly_scale(p: Poly, c) -> Poly:
    if c == 0:
        return {}
    return {m: v * c for m, v in p.items()}


def poly_sub(p: Poly, q: Poly) -> Poly:
    return poly_add(p, poly_scale(q, -1))


def poly_mul(p: Poly, q: Poly) -> Poly:
    out: Poly = {}
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            m = tuple(a + b for a, b in zip(m1, m2))
            s = out.get(m, 0) + c1 * c2
            if s == 0:
                out.pop(m, None)
            else:
                out[m] = s
    return out


def poly_eval(p: Poly, point) -> object:
    """Evaluate at a point (sequence of numbers); exact if inputs are exact."""
    total = 0
    for mono, coeff in p.items():
        term = coeff
        for x, e in zip(point, mono):
            if e:
                term = term * x**e
        total = total + term
    return total


def poly_subs(p: Poly, replacements: Mapping[int, Poly], nvars_out: int) -> Poly:
    """Substitute polynomials for variables.

    Every variable with a nonzero exponent anywhere in `p` must appear in
    `replacements`; output polynomials live in `nvars_out` variables.
    """
    out = poly_zero()
    pow_cache: dict[tuple[int, int], Poly] = {}

    def power(i: int, e: int) -> Poly:
        key = (i, e)
        if key not in pow_cache:
            base = replacements[i]
            acc = poly_const(Fraction(1), nvars_out)
            for _ in range(e):
                acc = poly_mul(acc, base)
            pow_cache[key] = acc
        return pow_cache[key]

    for mono, coeff in p.items():
        term = poly_const(coeff, nvars_out)
        for i, e in enumerate(mono):
            if e:
                term = poly_mul(term, power(i, e))
        out = poly_add(out, term)
    return out


def poly_diff(p: Poly, i: int) -> Poly:
    out: Poly = {}
    for mono, coeff in p.items():
        e = mono[i]
        if e == 0:
            continue
        m = tuple(v - 1 if j == i else v for j, v in enumerate(mono))
        out[m] = out.get(m, 0) + coeff * e
    return out


def poly_to_float(p: Poly) -> Poly:
    return {m: float(c) for m, c in p.items()}


def poly_str(p: Poly, names: list[str]) -> str:
    """Canonical sorted-monomial text form (used for golden files)."""
    if not p:
        return "0"
    parts = []
    for mono in sorted(p.keys()):
        c = p[mono]
        factors = [str(c)]
        for name, e in zip(names, mono):
            if e == 1:
                factors.append(name)
            elif e > 1:
                factors.append(f"{name}^{e}")
        parts.append("*".join(factors))
    return " + ".join(parts)


def make_evaluator(p: Poly, nvars: int):
    """Compile a polynomial into a vectorized numpy-friendly callable.

    The returned function accepts an (..., nvars) array-like and broadcasts.
    """
    items = [(mono, float(c)) for mono, c in p.items()]

    def ev(pts):
        import numpy as np

        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1])
        for mono, c in items:
            term = np.full(pts.shape[:-1], c)
            for i, e in enumerate(mono):
                if e:
                    term = term * pts[..., i] ** e
            out += term
        return out

    return ev

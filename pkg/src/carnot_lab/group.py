"""Compiled homogeneous group laws.

compile_group_law turns a validated algebra into explicit multiplication and
inversion polynomials with the factorization constants C_j^{I,J} extracted by
monomial matching.  Compilation is exact (Fraction coefficients); float
evaluators are generated for vectorized numerics.  Associativity, identity,
inverse, dilation homogeneity and the vanishing pattern of the constants are
all verified symbolically at compile time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .algebra import GradedLieAlgebra, bch_symbolic
from .polynomials import (
    Poly,
    poly_add,
    poly_eval,
    poly_scale,
    poly_str,
    poly_sub,
    poly_subs,
    poly_var,
)


class GroupError(ValueError):
    pass


class DimensionMismatch(GroupError):
    pass


class NonPositiveScale(GroupError):
    pass


class QuadratureDivergence(GroupError):
    pass


class LawCompilationError(GroupError):
    pass


def _exact_evaluator(p: Poly):
    """Precompile a polynomial for fast exact evaluation (ints/Fractions)."""
    items = [
        (c, [(i, e) for i, e in enumerate(m) if e])
        for m, c in p.items()
    ]

    def ev(pt):
        tot = 0
        for c, factors in items:
            term = c
            for i, e in factors:
                term = term * pt[i] ** e
            tot = tot + term
        return tot

    return ev


def _float_evaluator(p: Poly):
    items = [(float(c), [(i, e) for i, e in enumerate(m) if e]) for m, c in p.items()]

    def ev(pts: np.ndarray) -> np.ndarray:
        out = np.zeros(pts.shape[:-1])
        for c, factors in items:
            term = np.full(pts.shape[:-1], c)
            for i, e in factors:
                term = term * pts[..., i] ** e
            out += term
        return out

    return ev


@dataclass
class GroupLaw:
    """A compiled homogeneous group law in a fixed polynomial chart."""

    alg: GradedLieAlgebra
    mul_polys: tuple  # Poly in 2d vars
    inv_polys: tuple  # Poly in d vars
    cij: dict  # j -> {(I, J): Fraction}, I, J multi-index tuples
    hom_dim: Fraction
    norm_M: int
    norm_exponents: tuple[int, ...]
    _mul_eval: list = field(default_factory=list, repr=False)
    _mul_items: list = field(default_factory=list, repr=False)
    _inv_eval: list = field(default_factory=list, repr=False)
    _mul_exact: list = field(default_factory=list, repr=False)
    _inv_exact: list = field(default_factory=list, repr=False)
    _haar_cache: Optional[float] = field(default=None, repr=False)
    _mu_cache: Optional[float] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.alg.dim

    @property
    def weights(self) -> tuple[Fraction, ...]:
        return self.alg.weights

    @property
    def weights_f(self) -> np.ndarray:
        return np.array([float(w) for w in self.alg.weights])

    @property
    def name(self) -> str:
        return self.alg.name

    # -- core operations ---------------------------------------------------

    def identity(self):
        return np.zeros(self.dim)

    def mul(self, x, y):
        """Group product; exact when both inputs hold exact scalars."""
        x, y = _as_point(x, self.dim), _as_point(y, self.dim)
        if _is_exact(x) and _is_exact(y):
            pt = tuple(x) + tuple(y)
            return tuple(ev(pt) for ev in self._mul_exact)
        return self.mul_many(np.asarray(x, float), np.asarray(y, float))

    def mul_many(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Vectorized product; xs and ys broadcast against each other."""
        xs, ys = np.asarray(xs, float), np.asarray(ys, float)
        if xs.shape[-1] != self.dim or ys.shape[-1] != self.dim:
            raise DimensionMismatch(
                f"points must have {self.dim} coordinates, got {xs.shape[-1]} and {ys.shape[-1]}"
            )
        shape = np.broadcast_shapes(xs.shape[:-1], ys.shape[:-1])
        cols = []
        for items in self._mul_items:
            acc = np.zeros(shape)
            for c, xf, yf in items:
                term = np.full(shape, c) if not (xf or yf) else None
                for i, e in xf:
                    p = xs[..., i] ** e if e > 1 else xs[..., i]
                    term = p if term is None else term * p
                for k, e in yf:
                    p = ys[..., k] ** e if e > 1 else ys[..., k]
                    term = p if term is None else term * p
                if xf or yf:
                    acc = acc + (term if c == 1.0 else c * term)
                else:
                    acc = acc + term
            cols.append(np.broadcast_to(acc, shape) if acc.shape != shape else acc)
        return np.stack(cols, axis=-1)

    def inv(self, x):
        x = _as_point(x, self.dim)
        if _is_exact(x):
            return tuple(ev(tuple(x)) for ev in self._inv_exact)
        return self.inv_many(np.asarray(x, float))

    def inv_many(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, float)
        if xs.shape[-1] != self.dim:
            raise DimensionMismatch(f"points must have {self.dim} coordinates")
        return np.stack([ev(xs) for ev in self._inv_eval], axis=-1)

    def dilate(self, lam, x):
        if not lam > 0:
            raise NonPositiveScale(f"dilation scale must be positive, got {lam}")
        x = _as_point(x, self.dim)
        if _is_exact(x) and isinstance(lam, (int, Fraction)):
            return tuple(c * lam ** w for c, w in zip(x, self.weights))
        xs = np.asarray(x, float)
        return xs * float(lam) ** self.weights_f

    def dilate_many(self, lam: float, xs: np.ndarray) -> np.ndarray:
        if not lam > 0:
            raise NonPositiveScale(f"dilation scale must be positive, got {lam}")
        return np.asarray(xs, float) * float(lam) ** self.weights_f

    def hom_norm(self, x) -> float:
        xs = np.asarray(_as_point(x, self.dim), float)
        return float(self.hom_norm_many(xs[None])[0])

    def hom_norm_many(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, float)
        acc = np.zeros(xs.shape[:-1])
        for i, a in enumerate(self.norm_exponents):
            acc = acc + np.abs(xs[..., i]) ** a
        return acc ** (1.0 / (2 * self.norm_M))

    def dist(self, x, y) -> float:
        return self.hom_norm(self.mul(self.inv(x), y))

    def dist_many(self, xs, ys) -> np.ndarray:
        return self.hom_norm_many(self.mul_many(self.inv_many(xs), ys))

    # -- measured constants --------------------------------------------------

    def haar_normalization(self, rtol: float = 1e-3) -> float:
        """c with c * Leb{|x| <= 1} = 1, so that the unit ball has Haar measure 1."""
        if self._haar_cache is None:
            vol_q = unit_ball_volume_quadrature(self)
            vol_mc = unit_ball_volume_montecarlo(self)
            rel = abs(vol_q - vol_mc) / vol_q
            if rel > 1e-2:
                raise QuadratureDivergence(
                    f"ball volume estimates disagree: quadrature {vol_q}, MC {vol_mc}"
                )
            self._haar_cache = 1.0 / vol_q
        return self._haar_cache

    @property
    def ball_volume_scale(self) -> float:
        return self.haar_normalization()

    def quasi_triangle_mu(self, n_samples: int = 10**6, seed: int = 7) -> float:
        """Monte-Carlo estimate of mu with |xy| <= mu(|x| + |y|)."""
        if self._mu_cache is None:
            rng = np.random.default_rng(seed)
            best = 1.0
            chunk = 10**5
            done = 0
            while done < n_samples:
                m = min(chunk, n_samples - done)
                xs = rng.uniform(-1.5, 1.5, size=(m, self.dim))
                ys = rng.uniform(-1.5, 1.5, size=(m, self.dim))
                num = self.hom_norm_many(self.mul_many(xs, ys))
                den = self.hom_norm_many(xs) + self.hom_norm_many(ys)
                ratio = num / np.where(den == 0, np.inf, den)
                best = max(best, float(ratio.max()))
                done += m
            self._mu_cache = best
        return self._mu_cache

    # -- text form -----------------------------------------------------------

    def golden_text(self) -> str:
        d = self.dim
        names = [f"x{i}" for i in range(d)] + [f"y{i}" for i in range(d)]
        lines = [f"group {self.name or '?'} dim {d} homdim {self.hom_dim}"]
        lines.append("weights " + " ".join(str(w) for w in self.weights))
        for j in range(d):
            lines.append(f"eta_{j}(xy) = {poly_str(self.mul_polys[j], names)}")
        for j in range(d):
            for (I, J) in sorted(self.cij.get(j, {})):
                c = self.cij[j][(I, J)]
                lines.append(
                    f"C {j} {','.join(map(str, I))} {','.join(map(str, J))} {c}"
                )
        return "\n".join(lines) + "\n"


def _as_point(x, dim):
    if isinstance(x, (tuple, list)):
        if len(x) != dim:
            raise DimensionMismatch(f"expected {dim} coordinates, got {len(x)}")
        return x
    arr = np.asarray(x)
    if arr.shape != (dim,):
        raise DimensionMismatch(f"expected shape ({dim},), got {arr.shape}")
    return arr


def _is_exact(x) -> bool:
    return isinstance(x, (tuple, list)) and all(
        isinstance(c, (int, Fraction)) for c in x
    )


def _weight_of_multiindex(I: tuple, weights) -> Fraction:
    return sum((w * e for w, e in zip(weights, I)), Fraction(0))


def compile_group_law(alg: GradedLieAlgebra) -> GroupLaw:
    """Compile multiplication/inversion polynomials and the C_j^{I,J} table.

    Uses the attached explicit chart when the algebra carries one, otherwise
    evaluates BCH symbolically on coordinate indeterminates (exponential
    coordinates).
    """
    d = alg.dim
    nv = 2 * d
    if alg.chart_polys is not None:
        mul_polys = [dict(p) for p in alg.chart_polys]
    else:
        X = [poly_var(i, nv) for i in range(d)]
        Y = [poly_var(d + i, nv) for i in range(d)]
        mul_polys = bch_symbolic(X, Y, alg)

    w = alg.weights
    cij: dict = {j: {} for j in range(d)}
    for j in range(d):
        linear_x = poly_var(j, nv)
        linear_y = poly_var(d + j, nv)
        rest = poly_sub(poly_sub(mul_polys[j], linear_x), linear_y)
        for mono, coeff in rest.items():
            I, J = mono[:d], mono[d:]
            dI = _weight_of_multiindex(I, w)
            dJ = _weight_of_multiindex(J, w)
            if dI == 0 or dJ == 0:
                raise LawCompilationError(
                    f"law term with I=0 or J=0 survives in eta_{j}: {mono} -> {coeff}"
                )
            if dI + dJ != w[j]:
                raise LawCompilationError(
                    f"degree mismatch in eta_{j}: d(I)+d(J) = {dI + dJ} != s_j = {w[j]}"
                )
            cij[j][(I, J)] = coeff

    _verify_law(mul_polys, alg)

    inv_polys = _solve_inverse(mul_polys, alg)

    # homogeneous norm exponents: a_i = 2M/s_i with M = lcm of weight numerators
    M = 1
    for s in w:
        M = M * s.numerator // math.gcd(M, s.numerator)
    exponents = []
    for s in w:
        a = Fraction(2 * M, 1) / s
        assert a.denominator == 1 and a.numerator % 2 == 0
        exponents.append(int(a))

    law = GroupLaw(
        alg=alg,
        mul_polys=tuple(mul_polys),
        inv_polys=tuple(inv_polys),
        cij=cij,
        hom_dim=alg.hom_dim,
        norm_M=M,
        norm_exponents=tuple(exponents),
    )
    law._mul_eval = [_float_evaluator(p) for p in mul_polys]
    law._inv_eval = [_float_evaluator(p) for p in inv_polys]
    law._mul_exact = [_exact_evaluator(p) for p in mul_polys]
    law._inv_exact = [_exact_evaluator(p) for p in inv_polys]
    law._mul_items = [
        [
            (
                float(c),
                [(i, e) for i, e in enumerate(m[:d]) if e],
                [(k, e) for k, e in enumerate(m[d:]) if e],
            )
            for m, c in p.items()
        ]
        for p in mul_polys
    ]
    return law


def _verify_law(mul_polys, alg: GradedLieAlgebra) -> None:
    """Symbolic checks: identity, associativity, coordinate subgroups, dilation."""
    d = alg.dim
    nv = 2 * d
    zero = {i: {} for i in range(nv)}

    # identity at 0 in either slot
    for j in range(d):
        left = poly_subs(mul_polys[j], {**{i: poly_var(i, d) for i in range(d)},
                                        **{d + i: {} for i in range(d)}}, d)
        right = poly_subs(mul_polys[j], {**{i: {} for i in range(d)},
                                         **{d + i: poly_var(i, d) for i in range(d)}}, d)
        if left != poly_var(j, d) or right != poly_var(j, d):
            raise LawCompilationError(f"identity fails in coordinate {j}")

    # associativity in 3d indeterminates: P(P(x,y),z) == P(x,P(y,z))
    n3 = 3 * d
    x3 = {i: poly_var(i, n3) for i in range(d)}
    y3 = {i: poly_var(d + i, n3) for i in range(d)}
    z3 = {i: poly_var(2 * d + i, n3) for i in range(d)}
    xy = [poly_subs(mul_polys[j], {**x3, **{d + i: y3[i] for i in range(d)}}, n3) for j in range(d)]
    yz = [poly_subs(mul_polys[j], {**y3, **{d + i: z3[i] for i in range(d)}}, n3) for j in range(d)]
    for j in range(d):
        lhs = poly_subs(mul_polys[j], {**{i: xy[i] for i in range(d)},
                                       **{d + i: z3[i] for i in range(d)}}, n3)
        rhs = poly_subs(mul_polys[j], {**{i: x3[i] for i in range(d)},
                                       **{d + i: yz[i] for i in range(d)}}, n3)
        if lhs != rhs:
            raise LawCompilationError(f"associativity fails symbolically in coordinate {j}")

    # coordinate lines are one-parameter subgroups: (a e_j)(b e_j) = (a+b) e_j
    for j in range(d):
        for k in range(d):
            sub = {i: {} for i in range(nv)}
            sub[j] = poly_var(0, 2)
            sub[d + j] = poly_var(1, 2)
            p = poly_subs(mul_polys[k], sub, 2)
            expect = poly_add(poly_var(0, 2), poly_var(1, 2)) if k == j else {}
            if p != expect:
                raise LawCompilationError(
                    f"coordinate line {j} is not a one-parameter subgroup (coordinate {k})"
                )


def _solve_inverse(mul_polys, alg: GradedLieAlgebra):
    """Triangular back-substitution for inversion polynomials, exact."""
    d = alg.dim
    nv = 2 * d
    w = alg.weights
    inv_polys: list = [None] * d
    order = sorted(range(d), key=lambda j: w[j])
    for j in order:
        # eta_j(x * y) with y = inv(x): 0 = x_j + y_j + sum C x^I y^J
        # => y_j = -x_j - sum C x^I (inv)^J, J only involves weights < s_j
        p = poly_sub(mul_polys[j], poly_var(d + j, nv))
        for mono in p:
            for k in range(d):
                if mono[d + k] and w[k] >= w[j]:
                    raise LawCompilationError(
                        f"inverse solve: eta_{j} depends on y_{k} of weight >= s_j"
                    )
        q = poly_subs(
            p,
            {**{i: poly_var(i, d) for i in range(d)},
             **{d + k: (inv_polys[k] if w[k] < w[j] else {}) for k in range(d)}},
            d,
        )
        inv_polys[j] = poly_scale(q, Fraction(-1))
    # verify: mul(x, inv(x)) == 0 symbolically
    for j in range(d):
        chk = poly_subs(
            mul_polys[j],
            {**{i: poly_var(i, d) for i in range(d)},
             **{d + k: inv_polys[k] for k in range(d)}},
            d,
        )
        if chk != {}:
            raise LawCompilationError(f"inverse verification failed in coordinate {j}")
    return inv_polys


# -- ball volume -----------------------------------------------------------


def unit_ball_volume_quadrature(law: GroupLaw, n_nodes: int = 4001) -> float:
    """Lebesgue volume of {hom_norm <= 1} by iterated 1-D quadrature.

    Peeling one coordinate at a time: with a_i the norm exponents and
    sigma_k = sum_{i<=k} 1/a_i, homogeneity gives
    W_k(1) = 2 W_{k-1}(1) * int_0^1 (1 - u^{a_k})^{sigma_{k-1}} du.
    """
    from scipy.integrate import quad

    vol = 1.0
    sigma = 0.0
    for a in law.norm_exponents:
        integrand = lambda u, s=sigma, aa=a: (1.0 - u**aa) ** s
        val, _ = quad(integrand, 0.0, 1.0, limit=200)
        vol *= 2.0 * val
        sigma += 1.0 / a
    return vol


def unit_ball_volume_montecarlo(law: GroupLaw, n: int = 400_000, seed: int = 11) -> float:
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(n, law.dim))
    inside = law.hom_norm_many(pts) <= 1.0
    return float(2.0**law.dim * inside.mean())


# -- module-level functional API (matches the op names) ----------------------


def mul(x, y, law: GroupLaw):
    return law.mul(x, y)


def inv(x, law: GroupLaw):
    return law.inv(x)


def identity(law: GroupLaw):
    return law.identity()


def dilate(lam, x, law: GroupLaw):
    return law.dilate(lam, x)


def hom_norm(x, law: GroupLaw) -> float:
    return law.hom_norm(x)


def dist(x, y, law: GroupLaw) -> float:
    return law.dist(x, y)


def haar_normalization(law: GroupLaw) -> float:
    return law.haar_normalization()


@lru_cache(maxsize=None)
def builtin_law(name: str, arg: int = 0) -> GroupLaw:
    """Compiled law for a builtin group; cached per (name, arg)."""
    from . import algebra as _alg

    if name == "heisenberg":
        return compile_group_law(_alg.heisenberg(arg or 1))
    if name == "abelian":
        return compile_group_law(_alg.abelian(arg or 1))
    if name == "kinetic":
        return compile_group_law(_alg.kinetic())
    raise GroupError(f"unknown builtin law {name!r}")

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carnot_lab.algebra import heisenberg, kinetic
from carnot_lab.group import (
    DimensionMismatch,
    NonPositiveScale,
    builtin_law,
    compile_group_law,
    unit_ball_volume_montecarlo,
    unit_ball_volume_quadrature,
)

H1 = builtin_law("heisenberg", 1)
KIN = builtin_law("kinetic")
AB3 = builtin_law("abelian", 3)
LAWS = [H1, KIN, AB3]


def rational_point(rng, dim, denom=8):
    return tuple(Fraction(int(rng.integers(-24, 25)), denom) for _ in range(dim))


def test_heisenberg_law_matches_paper_chart():
    # (x,y,z)(x',y',z') = (x+x', y+y', z+z'+x'y-xy')
    x = (Fraction(1), Fraction(2), Fraction(3))
    y = (Fraction(-2), Fraction(5), Fraction(1, 2))
    out = H1.mul(x, y)
    assert out == (Fraction(-1), Fraction(7), Fraction(3) + Fraction(1, 2)
                   + Fraction(-2) * Fraction(2) - Fraction(1) * Fraction(5))


def test_heisenberg_c_constants():
    cz = H1.cij[2]
    assert cz[((0, 1, 0), (1, 0, 0))] == 1
    assert cz[((1, 0, 0), (0, 1, 0))] == -1
    assert len(cz) == 2
    assert H1.cij[0] == {} and H1.cij[1] == {}


def test_kinetic_c_constants_match_paper_chart():
    # (t,v,x)(s,w,y) = (t+s, v+w, x+y+sv)
    cx = KIN.cij[2]
    assert cx == {((0, 1, 0), (1, 0, 0)): 1}
    p = (Fraction(1), Fraction(2), Fraction(3))
    q = (Fraction(4), Fraction(-1), Fraction(0))
    assert KIN.mul(p, q) == (Fraction(5), Fraction(1), Fraction(3) + Fraction(4) * Fraction(2))


def test_spec_mul_examples():
    assert H1.mul((1, 0, 0), (0, 1, 0)) == (1, 1, -1)
    assert H1.inv((Fraction(2), Fraction(-3), Fraction(7))) == (-2, 3, -7)
    # kinetic inverse: (t,v,x)^{-1} = (-t,-v,-x+tv)
    assert KIN.inv((Fraction(1), Fraction(2), Fraction(3))) == (-1, -2, -1)


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.name)
def test_group_axioms_exact(law):
    rng = np.random.default_rng(7)
    for _ in range(200):
        x = rational_point(rng, law.dim)
        y = rational_point(rng, law.dim)
        z = rational_point(rng, law.dim)
        assert law.mul(law.mul(x, y), z) == law.mul(x, law.mul(y, z))
        assert law.mul(x, law.inv(x)) == tuple(Fraction(0) for _ in range(law.dim))
        assert law.inv(law.inv(x)) == x


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.name)
def test_dilation_is_automorphism_exact(law):
    rng = np.random.default_rng(11)
    lam = Fraction(3, 2)
    for _ in range(200):
        x = rational_point(rng, law.dim)
        y = rational_point(rng, law.dim)
        lhs = law.dilate(lam, law.mul(x, y))
        rhs = law.mul(law.dilate(lam, x), law.dilate(lam, y))
        assert lhs == rhs


def test_dilate_basics():
    assert H1.dilate(2, (1, 1, 1)) == (2, 2, 4)
    x = (Fraction(1), Fraction(2), Fraction(-3))
    assert H1.dilate(1, x) == x
    with pytest.raises(NonPositiveScale):
        H1.dilate(0, x)


def test_weight_one_coordinates_add():
    # eta_j(xy) = eta_j(x) + eta_j(y) exactly for s_j < 2
    rng = np.random.default_rng(3)
    for law in LAWS:
        for _ in range(50):
            x = rational_point(rng, law.dim)
            y = rational_point(rng, law.dim)
            out = law.mul(x, y)
            for j, w in enumerate(law.weights):
                if w < 2:
                    assert out[j] == x[j] + y[j]


def test_c_vanishing_pattern():
    for law in LAWS:
        for j, table in law.cij.items():
            for (I, J), c in table.items():
                assert sum(I) > 0 and sum(J) > 0
                dI = sum(w * e for w, e in zip(law.weights, I))
                dJ = sum(w * e for w, e in zip(law.weights, J))
                assert dI + dJ == law.weights[j]


@given(st.floats(0.2, 4.0))
@settings(max_examples=30, deadline=None)
def test_norm_homogeneity(lam):
    rng = np.random.default_rng(5)
    pts = rng.uniform(-2, 2, size=(50, 3))
    lhs = H1.hom_norm_many(H1.dilate_many(lam, pts))
    rhs = lam * H1.hom_norm_many(pts)
    assert np.allclose(lhs, rhs, rtol=1e-12)


def test_norm_identity_and_inverse_symmetry():
    assert H1.hom_norm(np.zeros(3)) == 0.0
    rng = np.random.default_rng(6)
    pts = rng.uniform(-2, 2, size=(100, 3))
    a = H1.hom_norm_many(pts)
    b = H1.hom_norm_many(H1.inv_many(pts))
    assert np.allclose(a, b, rtol=1e-12)


def test_quasi_triangle_constant_finite():
    mu = H1.quasi_triangle_mu(n_samples=10**5)
    assert 1.0 <= mu < 10.0


def test_haar_normalization_against_gamma_formula():
    # Lebesgue volume of {sum |u_i|^{a_i} <= 1} = 2^d prod Gamma(1+1/a_i) / Gamma(1+sum 1/a_i)
    for law in LAWS:
        vol_q = unit_ball_volume_quadrature(law)
        prod = 1.0
        sigma = 0.0
        for a in law.norm_exponents:
            prod *= math.gamma(1.0 + 1.0 / a)
            sigma += 1.0 / a
        vol_gamma = 2.0**law.dim * prod / math.gamma(1.0 + sigma)
        assert abs(vol_q - vol_gamma) / vol_gamma < 1e-8
        c = law.haar_normalization()
        assert abs(c * vol_gamma - 1.0) < 1e-3


def test_ball_measure_scales_like_homdim():
    # |B_r| = r^{|s|} |B_1| under the normalized Haar measure
    law = H1
    rng = np.random.default_rng(12)
    c = law.haar_normalization()
    for r in (0.5, 2.0):
        box = np.array([r ** float(w) for w in law.weights])
        pts = rng.uniform(-1, 1, size=(400_000, 3)) * box
        frac = (law.hom_norm_many(pts) <= r).mean()
        vol = c * frac * np.prod(2 * box)
        assert abs(vol - r ** float(law.hom_dim)) < 2e-2 * r ** float(law.hom_dim)


def test_r1_haar_normalization_is_half():
    law = builtin_law("abelian", 1)
    assert abs(law.haar_normalization() - 0.5) < 1e-10


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        H1.mul((1, 2), (1, 2, 3))


def test_golden_text_stable():
    text = H1.golden_text()
    assert "eta_2(xy) = 1*y2 + 1*x2 + 1*x1*y0 + -1*x0*y1" in text
    assert "C 2 0,1,0 1,0,0 1" in text
    ktext = KIN.golden_text()
    assert "eta_2(xy) = 1*y2 + 1*x2 + 1*x1*y0" in ktext


def test_bch_chart_matches_explicit_chart_for_heisenberg():
    # the Heisenberg chart IS exponential coordinates; compiling via BCH must
    # reproduce the paper's explicit law
    h1 = heisenberg(1)
    assert h1.chart_polys is None
    law = compile_group_law(h1)
    assert law.mul_polys == H1.mul_polys


def test_montecarlo_ball_volume_agrees():
    v1 = unit_ball_volume_quadrature(KIN)
    v2 = unit_ball_volume_montecarlo(KIN)
    assert abs(v1 - v2) / v1 < 1e-2

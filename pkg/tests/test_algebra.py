from fractions import Fraction

import pytest

from carnot_lab.algebra import (
    AntisymmetryViolation,
    GradingViolation,
    InvalidBlockStructure,
    JacobiViolation,
    abelian,
    algebra_from_text,
    algebra_to_text,
    bch,
    builtin,
    heisenberg,
    kinetic,
    matrix_exp,
    validate_algebra,
)


def test_abelian_is_step_one():
    alg = abelian(2)
    assert alg.step == 1
    assert alg.hom_dim == 2


def test_heisenberg_valid_step_two():
    h1 = heisenberg(1)
    assert h1.step == 2
    assert h1.weights == (Fraction(1), Fraction(1), Fraction(2))
    assert h1.hom_dim == 4
    # [A, B] = -2C per the chart convention
    assert h1.brackets[(0, 1)] == {2: Fraction(-2)}


def test_heisenberg2_dimensions():
    h2 = heisenberg(2)
    assert h2.dim == 5
    assert h2.hom_dim == 6


def test_grading_violation_names_triple():
    with pytest.raises(GradingViolation, match=r"c\[0\]\[1\]\[2\]"):
        validate_algebra(3, [1, 1, 3], {(0, 1): {2: -2}})


def test_antisymmetry_violation():
    with pytest.raises(AntisymmetryViolation):
        validate_algebra(3, [1, 1, 2], {(0, 0): {2: 1}})


def test_jacobi_violation():
    # grading-compatible but Jacobi(0,1,2) = [X0,[X1,X2]] + [X1,[X2,X0]]
    # + [X2,[X0,X1]] = [X0,X3] - [X1,X3] + 0 = X4 != 0 since [X1,X3] = 0
    brackets = {(0, 1): {2: 1}, (0, 2): {3: 1}, (1, 2): {3: 1}, (0, 3): {4: 1}}
    with pytest.raises(JacobiViolation):
        validate_algebra(5, [1, 1, 2, 3, 4], brackets)


def test_weight_normalization_enforced():
    with pytest.raises(Exception, match="smallest"):
        validate_algebra(2, [2, 2], {})


def test_bch_commuting_is_additive():
    alg = abelian(3)
    X, Y = [1, 2, 3], [4, 5, 6]
    assert bch(X, Y, alg) == [5, 7, 9]


def test_bch_heisenberg_one_term():
    h1 = heisenberg(1)
    # X = A, Y = B: H = A + B + 1/2 [A,B] = A + B - C
    out = bch([Fraction(1), 0, 0], [0, Fraction(1), 0], h1)
    assert out == [Fraction(1), Fraction(1), Fraction(-1)]


def test_bch_step2_symmetric_part_cancels():
    h1 = heisenberg(1)
    X = [Fraction(1), Fraction(2), Fraction(-1)]
    Y = [Fraction(-3), Fraction(1, 2), Fraction(5)]
    fwd = bch(X, Y, h1)
    bwd = bch(Y, X, h1)
    assert [a + b for a, b in zip(fwd, bwd)] == [2 * (x + y) for x, y in zip(X, Y)]


def test_bch_step3_known_coefficients():
    # filiform algebra [Z1,T] = Z2, [Z2,T] = Z3 via matrix_exp of a 3x3 band
    alg = matrix_exp([[0, 1, 0], [0, 0, 1], [0, 0, 0]])
    assert alg.step == 3
    # dim 4 basis (T, Z1, Z2, Z3); check H(X,Y) against the explicit Dynkin
    # order-3 formula H = X+Y+[X,Y]/2+[X,[X,Y]]/12+[Y,[Y,X]]/12
    X = [Fraction(1), Fraction(2), Fraction(0), Fraction(0)]
    Y = [Fraction(-1), Fraction(1), Fraction(3), Fraction(0)]
    lie = alg.bracket_vectors
    XY = lie(X, Y)
    expect = [x + y for x, y in zip(X, Y)]
    expect = [e + Fraction(1, 2) * b for e, b in zip(expect, XY)]
    expect = [e + Fraction(1, 12) * b for e, b in zip(expect, lie(X, XY))]
    YX = [-b for b in XY]
    expect = [e + Fraction(1, 12) * b for e, b in zip(expect, lie(Y, YX))]
    assert bch(X, Y, alg) == expect


def test_kinetic_weights_and_step():
    kin = kinetic()
    assert kin.weights == (Fraction(2), Fraction(1), Fraction(3))
    assert kin.step == 2
    assert kin.hom_dim == 6


def test_matrix_exp_block_validation():
    with pytest.raises(InvalidBlockStructure):
        matrix_exp([[0, 0], [1, 0]])  # not strictly upper
    with pytest.raises(InvalidBlockStructure):
        matrix_exp([[1, 0], [0, 0]])  # diagonal entry
    # rank-deficient band: blocks (2,1) need the 2x1 band to have rank 1
    assert matrix_exp([[0, 0, 1], [0, 0, 1], [0, 0, 0]]).dim == 4


def test_builtin_dispatch():
    assert builtin("heisenberg", 2).dim == 5
    assert builtin("abelian", 3).dim == 3
    assert builtin("kinetic").name == "kinetic"
    with pytest.raises(Exception, match="unknown builtin"):
        builtin("so3")


def test_text_roundtrip():
    for alg in (heisenberg(1), heisenberg(2), kinetic(), abelian(3)):
        text = algebra_to_text(alg)
        back = algebra_from_text(text)
        assert back.dim == alg.dim
        assert back.weights == alg.weights
        assert back.brackets == alg.brackets

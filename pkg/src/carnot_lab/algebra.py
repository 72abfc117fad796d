"""Graded nilpotent Lie algebras with dilations, validated over the rationals.

An algebra is given by its dimension, rational dilation weights and rational
structure constants c[i][j][k] meaning [X_i, X_j] = sum_k c_ijk X_k.  All
checks (antisymmetry, Jacobi, grading compatibility, nilpotency step) are
exact.  Baker-Campbell-Hausdorff is evaluated by the Dynkin commutator series,
which terminates at the nilpotency step.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .polynomials import Poly


class AlgebraError(ValueError):
    pass


class AntisymmetryViolation(AlgebraError):
    pass


class JacobiViolation(AlgebraError):
    pass


class GradingViolation(AlgebraError):
    pass


class InvalidBlockStructure(AlgebraError):
    pass


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


@dataclass(frozen=True)
class GradedLieAlgebra:
    """A graded nilpotent Lie algebra with dilation weights.

    brackets maps (i, j) with i < j to a dict {k: c_ijk}; entries for i >= j
    are implied by antisymmetry.  An optional explicit chart (multiplication
    polynomials in 2d variables) may be attached for groups whose preferred
    global coordinates are not exponential coordinates (the matrix-exponential
    family); compile_group_law uses it when present.
    """

    dim: int
    weights: tuple[Fraction, ...]
    brackets: dict = field(default_factory=dict)
    step: int = 1
    name: str = ""
    chart_polys: Optional[tuple] = None  # tuple of Poly in 2*dim vars

    def bracket_vectors(self, u: Sequence, v: Sequence) -> list:
        """[u, v] for coefficient vectors; entries may be Fractions or floats."""
        out = [0] * self.dim
        for (i, j), comps in self.brackets.items():
            uij = u[i] * v[j] - u[j] * v[i]
            if uij == 0:
                continue
            for k, c in comps.items():
                out[k] = out[k] + c * uij
        return out

    def bracket_polys(self, u: Sequence[Poly], v: Sequence[Poly]) -> list:
        """Same bracket with polynomial-valued coefficient vectors."""
        from .polynomials import poly_add, poly_mul, poly_scale, poly_sub

        out = [dict() for _ in range(self.dim)]
        for (i, j), comps in self.brackets.items():
            uij = poly_sub(poly_mul(u[i], v[j]), poly_mul(u[j], v[i]))
            if not uij:
                continue
            for k, c in comps.items():
                out[k] = poly_add(out[k], poly_scale(uij, c))
        return out

    @property
    def hom_dim(self) -> Fraction:
        return sum(self.weights, Fraction(0))


def _structure_tensor(dim, entries) -> dict:
    """Normalize sparse {(i,j): {k: c}} input, checking antisymmetry."""
    table: dict = {}
    for (i, j), comps in entries.items():
        comps = {k: _frac(c) for k, c in comps.items() if c != 0}
        if not comps:
            continue
        if i == j:
            raise AntisymmetryViolation(f"[X_{i}, X_{i}] must vanish, got {comps}")
        if i < j:
            table[(i, j)] = comps
        else:
            prev = table.setdefault((j, i), {})
            for k, c in comps.items():
                if k in prev and prev[k] != -c:
                    raise AntisymmetryViolation(
                        f"c[{i}][{j}][{k}] = {c} inconsistent with c[{j}][{i}][{k}] = {prev[k]}"
                    )
                prev[k] = -c
    return table


def _bracket_basis(alg_table, dim, i, j):
    """[X_i, X_j] as a dense Fraction vector from the sparse table."""
    out = [Fraction(0)] * dim
    if i == j:
        return out
    sign = 1
    key = (i, j)
    if i > j:
        key, sign = (j, i), -1
    for k, c in alg_table.get(key, {}).items():
        out[k] += sign * c
    return out


def _nilpotency_step(table, dim) -> int:
    """Length of the lower central series, computed exactly over Q."""
    basis = [[Fraction(1) if k == i else Fraction(0) for k in range(dim)] for i in range(dim)]
    layer = basis
    step = 0
    while layer:
        step += 1
        if step > dim + 1:
            raise AlgebraError("lower central series fails to terminate")
        new: list[list[Fraction]] = []
        for v in layer:
            for i in range(dim):
                w = [Fraction(0)] * dim
                any_nz = False
                for j in range(dim):
                    if v[j] == 0:
                        continue
                    bij = _bracket_basis(table, dim, i, j)
                    for k in range(dim):
                        if bij[k]:
                            w[k] += v[j] * bij[k]
                            any_nz = True
                if any_nz:
                    new.append(w)
        layer = _independent_rows(new)
    return step


def _independent_rows(rows):
    """Row reduce over Q, returning a basis of the span."""
    basis: list[list[Fraction]] = []
    for row in rows:
        r = list(row)
        for b in basis:
            piv = next(i for i, x in enumerate(b) if x != 0)
            if r[piv] != 0:
                f = r[piv] / b[piv]
                r = [x - f * y for x, y in zip(r, b)]
        if any(x != 0 for x in r):
            basis.append(r)
    return basis


def validate_algebra(
    dim: int,
    weights: Sequence,
    brackets: dict,
    name: str = "",
    chart_polys=None,
) -> GradedLieAlgebra:
    """Check all structural invariants and return the validated algebra.

    brackets: {(i, j): {k: c_ijk}} sparse rational structure constants.
    Raises AntisymmetryViolation / JacobiViolation / GradingViolation naming
    the offending index triple.
    """
    if dim < 1:
        raise AlgebraError("dimension must be >= 1")
    w = tuple(_frac(x) for x in weights)
    if len(w) != dim:
        raise AlgebraError("need one weight per basis vector")
    if any(x <= 0 for x in w):
        raise AlgebraError("weights must be positive")
    if min(w) != 1:
        raise AlgebraError("smallest dilation weight must equal 1")

    table = _structure_tensor(dim, brackets)

    # grading compatibility: c_ijk = 0 unless s_k = s_i + s_j
    for (i, j), comps in table.items():
        for k, c in comps.items():
            if w[k] != w[i] + w[j]:
                raise GradingViolation(
                    f"c[{i}][{j}][{k}] = {c} but s_{k} = {w[k]} != {w[i]} + {w[j]}"
                )

    # Jacobi identity, exact
    for i, j, k in itertools.combinations(range(dim), 3):
        acc = [Fraction(0)] * dim
        for (a, b, c) in ((i, j, k), (j, k, i), (k, i, j)):
            inner = _bracket_basis(table, dim, b, c)
            for m in range(dim):
                if inner[m] == 0:
                    continue
                outer = _bracket_basis(table, dim, a, m)
                for n in range(dim):
                    acc[n] += inner[m] * outer[n]
        if any(x != 0 for x in acc):
            raise JacobiViolation(f"Jacobi identity fails on (X_{i}, X_{j}, X_{k})")

    step = _nilpotency_step(table, dim)
    return GradedLieAlgebra(
        dim=dim, weights=w, brackets=table, step=step, name=name, chart_polys=chart_polys
    )


# ---------------------------------------------------------------------------
# Baker-Campbell-Hausdorff via the Dynkin series
# ---------------------------------------------------------------------------


def _dynkin_terms(max_len: int):
    """Yield (coefficient, word) pairs of the Dynkin series up to word length max_len.

    Words are tuples over {0, 1} (0 = X, 1 = Y); the associated bracket is the
    right-nested commutator [w_1, [w_2, [..., [w_{m-1}, w_m]...]]].
    """
    for n in range(1, max_len + 1):
        # compositions into n blocks (p_i, q_i), p_i + q_i >= 1
        def blocks(remaining, count):
            if count == 0:
                if remaining == 0:
                    yield ()
                return
            for p in range(remaining + 1):
                for q in range(remaining - p + 1):
                    if p + q == 0 or p + q > remaining - (count - 1):
                        continue
                    for rest in blocks(remaining - p - q, count - 1):
                        yield ((p, q),) + rest

        for total in range(n, max_len + 1):
            for blk in blocks(total, n):
                denom = total
                fact = 1
                word: list[int] = []
                for p, q in blk:
                    fact *= math.factorial(p) * math.factorial(q)
                    word.extend([0] * p + [1] * q)
                coeff = Fraction((-1) ** (n - 1), n * denom * fact)
                yield coeff, tuple(word)


def _nested_bracket(word, X, Y, alg: GradedLieAlgebra, sym: bool):
    """Right-nested commutator of the word, acting on vectors or Poly vectors."""
    vecs = [X if b == 0 else Y for b in word]
    acc = vecs[-1]
    if sym:
        for v in reversed(vecs[:-1]):
            acc = alg.bracket_polys(v, acc)
    else:
        for v in reversed(vecs[:-1]):
            acc = alg.bracket_vectors(v, acc)
    return acc


def bch(X: Sequence, Y: Sequence, alg: GradedLieAlgebra):
    """H(X, Y) with exp(X)exp(Y) = exp(H(X,Y)); exact on rational input.

    The Dynkin series is truncated at the nilpotency step, beyond which all
    brackets vanish.
    """
    if len(X) != alg.dim or len(Y) != alg.dim:
        raise AlgebraError("coefficient vectors must match the algebra dimension")
    out = [X[i] + Y[i] for i in range(alg.dim)]
    for coeff, word in _dynkin_terms(alg.step):
        if len(word) < 2:
            continue
        if word[-1] == word[-2]:
            continue  # innermost bracket [a, a] = 0
        term = _nested_bracket(word, list(X), list(Y), alg, sym=False)
        for i in range(alg.dim):
            if term[i] != 0:
                out[i] = out[i] + coeff * term[i]
    return out


def bch_symbolic(X: Sequence[Poly], Y: Sequence[Poly], alg: GradedLieAlgebra) -> list:
    """BCH on polynomial-valued coefficient vectors (used by the law compiler)."""
    from .polynomials import poly_add, poly_scale

    out = [poly_add(x, y) for x, y in zip(X, Y)]
    for coeff, word in _dynkin_terms(alg.step):
        if len(word) < 2 or word[-1] == word[-2]:
            continue
        term = _nested_bracket(word, list(X), list(Y), alg, sym=True)
        for i in range(alg.dim):
            if term[i]:
                out[i] = poly_add(out[i], poly_scale(term[i], coeff))
    return out


# ---------------------------------------------------------------------------
# Builtin algebras
# ---------------------------------------------------------------------------


def heisenberg(n: int = 1) -> GradedLieAlgebra:
    """The Heisenberg algebra h^n: basis (A_1..A_n, B_1..B_n, C), [A_i,B_i] = -2C.

    Coordinates follow the (x, y, z) chart with dilation (λx, λy, λ²z).
    """
    if n < 1:
        raise AlgebraError("heisenberg(n) needs n >= 1")
    dim = 2 * n + 1
    weights = [1] * (2 * n) + [2]
    brackets = {(i, n + i): {2 * n: Fraction(-2)} for i in range(n)}
    return validate_algebra(dim, weights, brackets, name=f"heisenberg({n})")


def abelian(d: int) -> GradedLieAlgebra:
    if d < 1:
        raise AlgebraError("abelian(d) needs d >= 1")
    return validate_algebra(d, [1] * d, {}, name=f"abelian({d})")


def _check_block_structure(B) -> list[int]:
    """Validate the strictly-upper block band structure of B; return block sizes."""
    Bf = [[_frac(x) for x in row] for row in B]
    n = len(Bf)
    if any(len(row) != n for row in Bf):
        raise InvalidBlockStructure("B must be square")
    if any(Bf[i][j] != 0 for i in range(n) for j in range(i + 1)):
        raise InvalidBlockStructure("B must be strictly upper triangular")
    # Blocks are contiguous index ranges; band block B_b occupies rows of block
    # b-1 and columns of block b.  Block 0 = leading identically-zero columns.
    sizes: list[int] = []
    i0 = 0
    while i0 < n:
        if i0 == 0:
            j = 0
            while j < n and all(Bf[i][j] == 0 for i in range(n)):
                j += 1
            if j == 0:
                raise InvalidBlockStructure("first block (kernel columns) is empty")
            sizes.append(j)
            i0 = j
        else:
            prev_lo, prev_hi = sum(sizes[:-1]), sum(sizes)
            k = i0
            while k < n and any(Bf[i][k] != 0 for i in range(prev_lo, prev_hi)):
                k += 1
            if k == i0:
                raise InvalidBlockStructure(
                    f"column {i0} is not reached from the previous block; rank condition fails"
                )
            sizes.append(k - i0)
            i0 = k
    if sizes != sorted(sizes, reverse=True):
        raise InvalidBlockStructure(f"block sizes {sizes} must be non-increasing")
    # band support and full column rank of each band block
    for bi in range(1, len(sizes)):
        rows = range(sum(sizes[: bi - 1]), sum(sizes[:bi]))
        cols = range(sum(sizes[:bi]), sum(sizes[: bi + 1]))
        for i in range(n):
            for j in cols:
                if Bf[i][j] != 0 and i not in rows:
                    raise InvalidBlockStructure(
                        f"entry B[{i}][{j}] lies outside the superdiagonal band"
                    )
        block = [[Bf[i][j] for j in cols] for i in rows]
        rank = len(_independent_rows([list(r) for r in zip(*block)]))
        if rank != sizes[bi]:
            raise InvalidBlockStructure(f"band block {bi} has rank {rank} != p_{bi} = {sizes[bi]}")
    return sizes


def matrix_exp(B) -> GradedLieAlgebra:
    """Matrix-exponential group of a strictly-upper rational block matrix B.

    Coordinates (t, z_1..z_n) with the paper's chart (t,z)(s,z') =
    (t+s, z' + exp(sB^T) z); weights (2, 1 on block 0, 3 on block 1, ...).
    The chart is attached to the algebra so the compiled law matches it.
    """
    from .polynomials import poly_add, poly_scale, poly_var

    Bf = [[_frac(x) for x in row] for row in B]
    sizes = _check_block_structure(Bf)
    n = len(Bf)
    dim = n + 1
    weights: list[Fraction] = [Fraction(2)]
    for b, p in enumerate(sizes):
        weights.extend([Fraction(2 * b + 1)] * p)

    # structure constants: basis (T, Z_1..Z_n); [Z_i, T] = sum_k B[i][k] Z_k
    brackets: dict = {}
    for i in range(n):
        comps = {1 + k: Bf[i][k] for k in range(n) if Bf[i][k] != 0}
        if comps:
            brackets[(1 + i, 0)] = comps

    # explicit chart polynomials in 2*dim vars (x-slot 0..dim-1, y-slot dim..2dim-1)
    nv = 2 * dim
    # exp(s B^T) = sum_k s^k (B^T)^k / k!, nilpotent so the series is finite
    Bt = [[Bf[j][i] for j in range(n)] for i in range(n)]
    powers = [[[Fraction(1) if i == j else Fraction(0) for j in range(n)] for i in range(n)]]
    while True:
        prev = powers[-1]
        nxt = [
            [sum((prev[i][m] * Bt[m][j] for m in range(n)), Fraction(0)) for j in range(n)]
            for i in range(n)
        ]
        if all(x == 0 for row in nxt for x in row):
            break
        powers.append(nxt)
    from .polynomials import poly_const, poly_mul

    s_var = poly_var(dim, nv)  # eta_t of the right factor
    polys: list[Poly] = []
    polys.append(poly_add(poly_var(0, nv), poly_var(dim, nv)))  # t + s
    s_powers = [poly_const(Fraction(1), nv)]
    for _ in range(len(powers) - 1):
        s_powers.append(poly_mul(s_powers[-1], s_var))
    for i in range(n):
        p = poly_var(dim + 1 + i, nv)  # z'_i
        for k, mat in enumerate(powers):
            fact = Fraction(1, math.factorial(k))
            for j in range(n):
                if mat[i][j] != 0:
                    p = poly_add(p, poly_scale(poly_mul(s_powers[k], poly_var(1 + j, nv)), mat[i][j] * fact))
        polys.append(p)

    return validate_algebra(
        dim, weights, brackets, name=f"matrix_exp({sizes})", chart_polys=tuple(polys)
    )


def kinetic() -> GradedLieAlgebra:
    """The (t, v, x) kinetic group: matrix_exp([[0, 1], [0, 0]])."""
    alg = matrix_exp([[0, 1], [0, 0]])
    return GradedLieAlgebra(
        dim=alg.dim,
        weights=alg.weights,
        brackets=alg.brackets,
        step=alg.step,
        name="kinetic",
        chart_polys=alg.chart_polys,
    )


_BUILTINS = {
    "heisenberg": heisenberg,
    "abelian": abelian,
    "matrix_exp": matrix_exp,
    "kinetic": kinetic,
}


def builtin(name: str, *args) -> GradedLieAlgebra:
    """builtin('heisenberg', n) | builtin('abelian', d) | builtin('matrix_exp', B) | builtin('kinetic')."""
    if name not in _BUILTINS:
        raise AlgebraError(f"unknown builtin algebra {name!r}; try one of {sorted(_BUILTINS)}")
    return _BUILTINS[name](*args)


# ---------------------------------------------------------------------------
# Plain-text serialization (dimension, weights, sparse brackets as fractions)
# ---------------------------------------------------------------------------


def algebra_to_text(alg: GradedLieAlgebra) -> str:
    lines = [f"dim {alg.dim}"]
    lines.append("weights " + " ".join(str(w) for w in alg.weights))
    if alg.name:
        lines.append(f"name {alg.name}")
    for (i, j) in sorted(alg.brackets):
        for k in sorted(alg.brackets[(i, j)]):
            lines.append(f"bracket {i} {j} {k} {alg.brackets[(i, j)][k]}")
    return "\n".join(lines) + "\n"


def algebra_from_text(text: str) -> GradedLieAlgebra:
    dim = None
    weights: list[Fraction] = []
    name = ""
    brackets: dict = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "dim":
            dim = int(parts[1])
        elif parts[0] == "weights":
            weights = [Fraction(p) for p in parts[1:]]
        elif parts[0] == "name":
            name = " ".join(parts[1:])
        elif parts[0] == "bracket":
            i, j, k = int(parts[1]), int(parts[2]), int(parts[3])
            brackets.setdefault((i, j), {})[k] = Fraction(parts[4])
        else:
            raise AlgebraError(f"unrecognized line in algebra spec: {raw!r}")
    if dim is None:
        raise AlgebraError("algebra spec missing 'dim'")
    return validate_algebra(dim, weights, brackets, name=name)

"""Homogeneous singular kernels: Kolmogorov-family fundamental solutions, the
G = K + K_{-1} splitting, dyadic decomposition with moment killing, kernel
certificates, and semigroup-based heat/Green operators on quotients.

Space-time convention: kernels live on a compiled law whose coordinate 0 is
the time direction (weight 2 for all kernels here).  For heat-type operators
the space-time law is the direct product R x P built by spacetime_law; the
kinetic family is already a space-time group.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .algebra import GradedLieAlgebra, _check_block_structure, validate_algebra
from .calculus import hom_degree, multi_indices_below
from .grids import GridFn, gridfn_field_apply, gridfn_from_callable
from .group import GroupLaw, compile_group_law
from .mollifiers import moment_indices
from .quotient import LatticeSpec, PeriodicField


class KernelError(ValueError):
    pass


class SingularCovariance(KernelError):
    pass


class MomentCorrectionOverflow(KernelError):
    pass


class CFLViolation(KernelError):
    pass


class NonFiniteField(KernelError):
    pass


# ---------------------------------------------------------------------------
# Space-time product group
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def spacetime_law(name: str, arg: int = 0, time_weight: int = 2) -> GroupLaw:
    """Compiled law on R x P with a central weight-2 time coordinate first.

    For 'kinetic' the group itself is space-time and is returned as-is.
    """
    from . import algebra as _alg

    if name == "kinetic":
        return compile_group_law(_alg.kinetic())
    if name == "heisenberg":
        spatial = _alg.heisenberg(arg or 1)
    elif name == "abelian":
        spatial = _alg.abelian(arg or 1)
    else:
        raise KernelError(f"no space-time construction for {name!r}")
    d = spatial.dim + 1
    weights = [Fraction(time_weight)] + list(spatial.weights)
    brackets = {
        (i + 1, j + 1): {k + 1: c for k, c in comps.items()}
        for (i, j), comps in spatial.brackets.items()
    }
    alg = validate_algebra(d, weights, brackets, name=f"time_x_{spatial.name}")
    return compile_group_law(alg)


def spatial_weight_sum(law_st: GroupLaw) -> float:
    """|s-bar| = |s| - s_time for a space-time law (time = coordinate 0)."""
    return float(law_st.hom_dim - law_st.weights[0])


# ---------------------------------------------------------------------------
# Homogeneous kernels
# ---------------------------------------------------------------------------


@dataclass
class HomogeneousKernel:
    """A kernel on a space-time law, homogeneous of order sigma under dilations."""

    law: GroupLaw
    sigma: float
    evaluator: Callable[[np.ndarray], np.ndarray]  # (..., d) -> (...)
    non_anticipative: bool = True
    name: str = ""

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return self.evaluator(np.asarray(pts, float))

    def check_homogeneity(self, n_samples: int = 1000, seed: int = 5,
                          rtol: float = 1e-8) -> float:
        """Max relative error of G(lambda . z) = lambda^sigma G(z) on random rays."""
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-1, 1, size=(n_samples, self.law.dim))
        pts[:, 0] = np.abs(pts[:, 0]) + 0.05  # positive times
        lams = rng.uniform(0.3, 2.0, size=n_samples)
        v1 = self(np.stack([law_dilate(self.law, l, p) for l, p in zip(lams, pts)]))
        v0 = self(pts)
        ref = np.abs(v0) + 1e-300
        rel = np.abs(v1 - lams**self.sigma * v0) / ref
        mask = np.abs(v0) > 1e-12 * np.abs(v0).max()
        worst = float(rel[mask].max())
        if worst > rtol:
            raise KernelError(f"homogeneity violated: max rel err {worst:.2e}")
        return worst


def law_dilate(law: GroupLaw, lam: float, p: np.ndarray) -> np.ndarray:
    return np.asarray(p, float) * lam ** law.weights_f


# ---------------------------------------------------------------------------
# Kolmogorov-type kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KolmogorovSpec:
    """Operator d_t - div(A grad) + <Bz, grad> on R x R^n (rational blocks)."""

    A: tuple
    B: tuple

    @classmethod
    def kinetic(cls, d: int = 1) -> "KolmogorovSpec":
        A = [[Fraction(1) if (i == j and i < d) else Fraction(0) for j in range(2 * d)]
             for i in range(2 * d)]
        B = [[Fraction(1) if j == i + d else Fraction(0) for j in range(2 * d)]
             for i in range(2 * d)]
        return cls(tuple(map(tuple, A)), tuple(map(tuple, B)))

    def block_sizes(self) -> list[int]:
        return _check_block_structure([list(r) for r in self.B])

    @property
    def n(self) -> int:
        return len(self.B)

    def spatial_weight_sum(self) -> int:
        """|s-bar| = sum (2i+1) p_i."""
        return sum((2 * i + 1) * p for i, p in enumerate(self.block_sizes()))

    def validate(self) -> None:
        sizes = self.block_sizes()
        q = sizes[0]
        A = [[Fraction(x) for x in row] for row in self.A]
        n = self.n
        if len(A) != n or any(len(r) != n for r in A):
            raise KernelError("A must be n x n")
        for i in range(n):
            for j in range(n):
                if (i >= q or j >= q) and A[i][j] != 0:
                    raise KernelError("A must vanish outside the leading block")
                if A[i][j] != A[j][i]:
                    raise KernelError("A must be symmetric")
        evals = np.linalg.eigvalsh(np.array([[float(A[i][j]) for j in range(q)]
                                             for i in range(q)]))
        if np.any(evals <= 0):
            raise SingularCovariance("leading block of A must be positive definite")

    def covariance_polynomial(self) -> list[np.ndarray]:
        """C(t) = sum_k M_k t^k with M_k = N_k/(k+1), exact coefficients as floats.

        N_k = sum_{i+j=k} (-1)^k / (i! j!) (B^T)^i A B^j (finite: B nilpotent).
        """
        n = self.n
        A = [[Fraction(x) for x in row] for row in self.A]
        B = [[Fraction(x) for x in row] for row in self.B]
        Bt = [[B[j][i] for j in range(n)] for i in range(n)]

        def matmul(X, Y):
            return [[sum((X[i][m] * Y[m][j] for m in range(n)), Fraction(0))
                     for j in range(n)] for i in range(n)]

        eye = [[Fraction(1) if i == j else Fraction(0) for j in range(n)] for i in range(n)]
        Bt_pows, B_pows = [eye], [eye]
        while any(x != 0 for row in Bt_pows[-1] for x in row):
            Bt_pows.append(matmul(Bt_pows[-1], Bt))
        while any(x != 0 for row in B_pows[-1] for x in row):
            B_pows.append(matmul(B_pows[-1], B))
        kmax = len(Bt_pows) + len(B_pows) - 4
        out = []
        for k in range(kmax + 1):
            Nk = [[Fraction(0)] * n for _ in range(n)]
            for i in range(min(k, len(Bt_pows) - 2) + 1):
                j = k - i
                if j > len(B_pows) - 2:
                    continue
                coef = Fraction((-1) ** k, math.factorial(i) * math.factorial(j))
                M = matmul(matmul(Bt_pows[i], A), B_pows[j])
                for a in range(n):
                    for b in range(n):
                        Nk[a][b] += coef * M[a][b]
            out.append(np.array([[float(Nk[a][b] / (k + 1)) for b in range(n)]
                                 for a in range(n)]))
        return out

    def covariance(self, t: float) -> np.ndarray:
        """C(t) = (1/t) int_0^t exp(-sB^T) A exp(-sB) ds, exact polynomial in t."""
        poly = self.covariance_polynomial()
        C = np.zeros((self.n, self.n))
        for k, M in enumerate(poly):
            C = C + M * float(t) ** k
        return C

    def covariance_exact(self, t: Fraction) -> list[list[Fraction]]:
        n = self.n
        A = [[Fraction(x) for x in row] for row in self.A]
        B = [[Fraction(x) for x in row] for row in self.B]
        Bt = [[B[j][i] for j in range(n)] for i in range(n)]

        def matmul(X, Y):
            return [[sum((X[i][m] * Y[m][j] for m in range(n)), Fraction(0))
                     for j in range(n)] for i in range(n)]

        eye = [[Fraction(1) if i == j else Fraction(0) for j in range(n)] for i in range(n)]
        out = [[Fraction(0)] * n for _ in range(n)]
        Bt_p, B_p = [eye], [eye]
        while any(x != 0 for row in Bt_p[-1] for x in row):
            Bt_p.append(matmul(Bt_p[-1], Bt))
        while any(x != 0 for row in B_p[-1] for x in row):
            B_p.append(matmul(B_p[-1], B))
        for i in range(len(Bt_p) - 1):
            for j in range(len(B_p) - 1):
                k = i + j
                coef = Fraction((-1) ** k, math.factorial(i) * math.factorial(j) * (k + 1))
                M = matmul(matmul(Bt_p[i], A), B_p[j])
                for a in range(n):
                    for b in range(n):
                        out[a][b] += coef * M[a][b] * t**k
        return out


def kolmogorov_kernel(spec: KolmogorovSpec) -> Callable:
    """Pointwise fundamental solution K(t, z); 0 for t <= 0 (non-anticipative).

    K(t, z) = ((4 pi)^n det(t C(t)))^{-1/2} exp(-C(t)^{-1} z . z / (4t)), the
    Gaussian with covariance 2 t C(t); integrates to 1 in z for every t > 0.
    """
    spec.validate()
    n = spec.n
    poly = spec.covariance_polynomial()

    def K(t: float, z) -> float:
        if t <= 0:
            return 0.0
        C = np.zeros((n, n))
        for k, M in enumerate(poly):
            C = C + M * t**k
        det = np.linalg.det(C)
        if det <= 0:
            raise SingularCovariance(f"det C({t}) = {det} <= 0: rank conditions violated")
        zv = np.asarray(z, float)
        quad = float(zv @ np.linalg.solve(C, zv)) / (4.0 * t)
        norm = ((4.0 * math.pi) ** n * t**n * det) ** -0.5
        return norm * math.exp(-quad)

    return K


def kfp_kernel(d: int = 1) -> Callable:
    """Explicit kinetic Fokker-Planck fundamental solution on R x R^{2d}.

    K(t, v, x) = (sqrt(3)/(2 pi t^2))^d exp(-|v|^2/(4t) - 3|x + vt/2|^2/t^3),
    normalized to unit mass (the probability-normalized form of the displayed
    closed formula; see the ledger note on the prefactor).
    """

    def K(t: float, v, x) -> float:
        if t <= 0:
            return 0.0
        v = np.atleast_1d(np.asarray(v, float))
        x = np.atleast_1d(np.asarray(x, float))
        quad = float(v @ v) / (4.0 * t) + 3.0 * float((x + 0.5 * v * t) @ (x + 0.5 * v * t)) / t**3
        return (math.sqrt(3.0) / (2.0 * math.pi * t**2)) ** d * math.exp(-quad)

    return K


def kfp_homogeneous_kernel(d: int = 1) -> HomogeneousKernel:
    """The kFP kernel wrapped on the kinetic space-time law (d = 1 only)."""
    if d != 1:
        raise KernelError("the kinetic space-time law is compiled for d = 1")
    law = spacetime_law("kinetic")
    K = kfp_kernel(1)

    def ev(pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, float)
        flat = pts.reshape(-1, 3)
        out = np.zeros(len(flat))
        pos = flat[:, 0] > 0
        t = flat[pos, 0]
        v = flat[pos, 1]
        x = flat[pos, 2]
        quad = v**2 / (4 * t) + 3 * (x + 0.5 * v * t) ** 2 / t**3
        out[pos] = (math.sqrt(3.0) / (2 * math.pi * t**2)) * np.exp(-quad)
        return out.reshape(pts.shape[:-1])

    return HomogeneousKernel(law=law, sigma=-4.0, evaluator=ev,
                             non_anticipative=True, name="kinetic_fokker_planck")


def gaussian_heat_homogeneous(d: int) -> HomogeneousKernel:
    """The classical heat kernel on R x R^d wrapped on the product law."""
    law = spacetime_law("abelian", d)

    def ev(pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, float)
        flat = pts.reshape(-1, d + 1)
        out = np.zeros(len(flat))
        pos = flat[:, 0] > 0
        t = flat[pos, 0]
        x = flat[pos, 1:]
        out[pos] = (4 * math.pi * t) ** (-d / 2) * np.exp(-(x**2).sum(axis=1) / (4 * t))
        return out.reshape(pts.shape[:-1])

    return HomogeneousKernel(law=law, sigma=-float(d), evaluator=ev,
                             non_anticipative=True, name=f"heat_R{d}")


def heat_kernel_homogeneous(spatial_name: str, arg: int, slice_fn: GridFn) -> HomogeneousKernel:
    """Extend a tabulated t=1 slice G-hat to all t > 0 by the scaling identity
    G(t, x) = t^{-|s-bar|/s_1} G-hat(t^{-1/s_1} . x)."""
    law_st = spacetime_law(spatial_name, arg)
    s1 = float(law_st.weights[0])
    sbar = spatial_weight_sum(law_st)
    spatial_weights = law_st.weights_f[1:]

    def ev(pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, float)
        flat = pts.reshape(-1, law_st.dim)
        out = np.zeros(len(flat))
        pos = flat[:, 0] > 0
        t = flat[pos, 0]
        x = flat[pos, 1:]
        scaled = x * (t[:, None] ** (-spatial_weights / s1))
        out[pos] = t ** (-sbar / s1) * slice_fn.evaluate(scaled)
        return out.reshape(pts.shape[:-1])

    return HomogeneousKernel(law=law_st, sigma=-sbar, evaluator=ev,
                             non_anticipative=True, name=f"heat_{spatial_name}({arg})")


# ---------------------------------------------------------------------------
# Dyadic decomposition with moment killing
# ---------------------------------------------------------------------------


def _chi_profile(s: np.ndarray) -> np.ndarray:
    """Smooth cutoff: 1 for s <= 1, 0 for s >= 2 (C-infinity transition)."""
    from .quotient import smooth_cut

    return smooth_cut(np.asarray(s, float) / 2.0)


def _psi_profile(s: np.ndarray) -> np.ndarray:
    """Littlewood-Paley bump: psi(s) = chi(s) - chi(2s), supported in [1/2, 2],
    with sum_n psi(2^n s) = 1 for s > 0."""
    return _chi_profile(s) - _chi_profile(2.0 * np.asarray(s, float))


@dataclass
class DyadicKernel:
    """K = sum_n K_n with supp K_n in B_{2^{-n}}, plus the smooth remainder."""

    law: GroupLaw  # space-time law
    pieces: list  # list of (n, GridFn)
    beta: float
    moments_killed_to: int
    remainder: Optional[Callable] = None  # K_{-1} evaluator (smooth part)
    name: str = ""
    raw_piece_fns: Optional[list] = None  # uncorrected piece callables

    @property
    def n_levels(self) -> list[int]:
        return [n for n, _ in self.pieces]

    def evaluate_sum(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, float)
        out = np.zeros(pts.shape[:-1])
        for _, piece in self.pieces:
            out = out + piece.evaluate(pts)
        return out

    def total_moment(self, I: Sequence[int]) -> float:
        return sum(piece.moment(I) for _, piece in self.pieces)

    def time_integrated_nodes(self, prune: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes of the spatial kernel k(x) = int K(s, x) ds.

        Collapses the time axis of every piece: node positions are the spatial
        grid points, weights are time-column sums times the space-time cell
        volume divided by the spatial Haar normalization adjustment.
        """
        nodes_list, w_list = [], []
        for _, piece in self.pieces:
            pts = piece.grid_points()
            wts = piece.samples.ravel() * piece.cell_volume
            keep = np.abs(wts) > prune * np.abs(wts).max() if wts.size else []
            nodes_list.append(pts[keep][:, 1:])
            w_list.append(wts[keep])
        nodes = np.concatenate(nodes_list)
        wts = np.concatenate(w_list)
        return nodes, wts


def dual_bump_family(law_st: GroupLaw, r: int, points_per_axis: int = 17,
                     one_sided_time: bool = True) -> dict:
    """Biorthogonal bumps {omega_I}: int eta^J omega_I = delta_{IJ} for d(J) <= r.

    Built as weight * polynomial via a Gram solve; the weight is supported in
    {t > 0} (so corrections preserve non-anticipativity) and inside B_1.
    """
    d = law_st.dim
    wf = law_st.weights_f
    exps = law_st.norm_exponents

    if one_sided_time:
        a_t = exps[0]
        mu_t, rho_t = 0.4, 0.35
        budget = 1.0 - 0.75 ** a_t
        extents = [(budget ** (1.0 / exps[i])) for i in range(d)]

        def weight_fn(pts: np.ndarray) -> np.ndarray:
            pts = np.asarray(pts, float)
            u = ((pts[..., 0] - mu_t) / rho_t) ** a_t
            for i in range(1, d):
                u = u + (pts[..., i] / extents[i]) ** exps[i]
            out = np.zeros_like(u)
            inside = u < 1.0
            out[inside] = np.exp(-1.0 / (1.0 - u[inside]))
            return out
    else:
        from .mollifiers import bump_profile

        weight_fn = bump_profile(law_st, 1.0)

    w = gridfn_from_callable(law_st, weight_fn, 1.0, points_per_axis)
    idx = moment_indices(law_st, r)
    m = len(idx)
    G = np.empty((m, m))
    for i, I in enumerate(idx):
        for j, J in enumerate(idx):
            G[i, j] = w.moment(tuple(a + b for a, b in zip(I, J)))
    pts = w.grid_points().reshape(w.samples.shape + (d,))
    out = {}
    for target, I in enumerate(idx):
        rhs = np.zeros(m)
        rhs[target] = 1.0
        coeffs = np.linalg.solve(G, rhs)
        qv = np.zeros(w.samples.shape)
        for c, J in zip(coeffs, idx):
            term = np.full(w.samples.shape, c)
            for i, e in enumerate(J):
                if e:
                    term = term * pts[..., i] ** e
            qv += term
        out[I] = GridFn(law=law_st, support_radius=1.0, spacings=w.spacings,
                        samples=w.samples * qv)
    return out


def split_homogeneous(
    G: HomogeneousKernel,
    r: int,
    law: GroupLaw,
    n_max: int = 5,
    n_min: int = 0,
    points_per_axis: int = 17,
    kill_moments: bool = True,
) -> DyadicKernel:
    """Dyadic decomposition of a homogeneous kernel with moment killing.

    Raw pieces K_n(z) = G(z) psi(2^{n+1}|z|) are supported in B_{2^{-n}};
    levels below n_min fold into the smooth remainder.  A biorthogonal
    correction c_{I,n} omega_I^{(n)} is subtracted so that the finite family's
    cumulative moments vanish exactly for d(I) <= r while the scaling bounds
    survive (corrections decay like 2^{-n(d(I)+beta)}).
    """
    beta = float(law.weights[0])
    pieces: list[tuple[int, GridFn]] = []
    raw_fns = []
    for n in range(n_min, n_max + 1):
        radius = 2.0**-n

        def raw(pts, n=n):
            return G(pts) * _psi_profile(2.0 ** (n + 1) * law.hom_norm_many(np.asarray(pts, float)))

        raw_fns.append(raw)
        piece = gridfn_from_callable(law, raw, radius, points_per_axis)
        pieces.append((n, piece))

    if kill_moments:
        raw_sup0 = max(p.sup_norm() for _, p in pieces[:1])
        duals = dual_bump_family(law, r, points_per_axis)
        idx = moment_indices(law, r)
        n_levels = [n for n, _ in pieces]
        for I in idx:
            dI = float(hom_degree(I, law))
            raw_moments = {n: piece.moment(I) for n, piece in pieces}
            total = sum(raw_moments.values())
            q = 2.0 ** -(dI + beta)
            weights = np.array([q ** (n - n_min) for n in n_levels])
            weights = weights / weights.sum()
            for (n, piece), wgt in zip(pieces, weights):
                c_n = total * wgt
                omega_n = duals[I].rescale(n, 2.0) * (2.0 ** (n * dI))
                if omega_n.samples.shape != piece.samples.shape:
                    raise KernelError("dual bump grid mismatch")
                piece.samples -= c_n * omega_n.samples
        # corrections scale exactly like the pieces (2^{(|s|-beta)n}); verify the
        # growth constant survived with margin
        sups = np.array([p.sup_norm() for n, p in pieces])
        scale = 2.0 ** ((float(law.hom_dim) - beta) * (np.array(n_levels) - n_min))
        constants = sups / scale
        if constants.max() > 100.0 * max(raw_sup0, 1e-300):
            raise MomentCorrectionOverflow(
                "moment corrections inflated the dyadic scaling constant by more "
                "than 100x; raise n_max or lower r"
            )

    chi_floor = 2.0 ** (n_min + 1)

    def remainder(pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, float)
        return G(pts) * (1.0 - _chi_profile(chi_floor * law.hom_norm_many(pts)))

    dk = DyadicKernel(
        law=law,
        pieces=pieces,
        beta=beta,
        moments_killed_to=r if kill_moments else -1,
        remainder=remainder,
        name=f"dyadic[{G.name}]",
    )
    dk.raw_piece_fns = raw_fns  # uncorrected callables, for partition-of-unity checks
    return dk


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------


@dataclass
class CertificateReport:
    kernel_name: str
    beta: float
    r: int
    sup_bounds: dict
    piece_moments: dict
    total_moments: dict
    remainder_l1: Optional[float]
    failures: list

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_text(self) -> str:
        lines = [f"kernel certificate: {self.kernel_name}",
                 f"beta {self.beta}  moments killed to r = {self.r}",
                 f"verdict {'PASS' if self.passed else 'FAIL'}"]
        for I, rec in sorted(self.sup_bounds.items()):
            lines.append(
                "sup-bound I=%s target_slope %.3f fitted %.3f constant %.4e"
                % (I, rec["target"], rec["slope"], rec["constant"])
            )
        for I, rec in sorted(self.piece_moments.items()):
            lines.append(
                "piece-moment I=%s decay_constant %.4e (bound C 2^{-beta n})" % (I, rec)
            )
        for I, v in sorted(self.total_moments.items()):
            lines.append("total-moment I=%s %.4e" % (I, v))
        if self.remainder_l1 is not None:
            lines.append("remainder sup_t int |K_-1(t,.)| = %.6f" % self.remainder_l1)
        for f in self.failures:
            lines.append("FAILURE %s" % f)
        return "\n".join(lines) + "\n"


def check_assumption(
    k: DyadicKernel,
    r: Optional[int] = None,
    slope_tol: float = 0.1,
    moment_tol: float = 1e-8,
    tracked_extra: int = 2,
) -> CertificateReport:
    """Re-measure the three kernel-decomposition bullets from the stored pieces.

    (1) sup |X^I K_n| grows like 2^{(|s| - beta + d(I)) n} for tracked I,
    (2) |int eta^I K_n| <= C 2^{-beta n},
    (3) cumulative moments vanish for d(I) <= r.

    r defaults to the degree the kernel claims; pass it explicitly to audit a
    kernel built without corrections (the negative control).
    """
    law = k.law
    failures = []
    hd = float(law.hom_dim)
    ns = np.array(k.n_levels, float)
    if r is None:
        r = k.moments_killed_to

    tracked = [I for I in multi_indices_below(law, r + tracked_extra + 0.5)
               if sum(I) <= 2]
    sup_bounds = {}
    for I in tracked:
        word = []
        for j, e in enumerate(I):
            word.extend([j] * e)
        sups = np.array([gridfn_field_apply(p, word).sup_norm() for _, p in k.pieces])
        if np.any(sups <= 0):
            failures.append(f"vanishing piece under X^{I}")
            continue
        target = hd - k.beta + float(hom_degree(I, law))
        slope = float(np.polyfit(ns, np.log2(sups), 1)[0]) if len(ns) > 1 else target
        constant = float(np.max(sups * 2.0 ** (-target * ns)))
        sup_bounds[tuple(I)] = {"target": target, "slope": slope, "constant": constant}
        if sum(I) == 0 and abs(slope - target) > slope_tol:
            failures.append(
                f"sup-bound growth for I={I}: fitted {slope:.3f} vs {target:.3f} (tol {slope_tol})"
            )

    moment_idx = moment_indices(law, r)
    piece_moments = {}
    total_moments = {}
    for I in moment_idx:
        vals = np.array([p.moment(I) for _, p in k.pieces])
        piece_moments[tuple(I)] = float(np.max(np.abs(vals) * 2.0 ** (k.beta * ns)))
        tot = float(vals.sum())
        total_moments[tuple(I)] = tot
        scale = max(np.abs(vals).max(), 1.0)
        if abs(tot) > moment_tol * scale:
            failures.append(f"cumulative moment eta^{I} = {tot:.3e} not killed")

    remainder_l1 = None
    if k.remainder is not None:
        remainder_l1 = _remainder_sup_l1(k)

    return CertificateReport(
        kernel_name=k.name,
        beta=k.beta,
        r=r,
        sup_bounds=sup_bounds,
        piece_moments=piece_moments,
        total_moments=total_moments,
        remainder_l1=remainder_l1,
        failures=failures,
    )


def _remainder_sup_l1(k: DyadicKernel, t_samples: int = 8, box: float = 3.0,
                      pts_per_axis: int = 33) -> float:
    """sup over t in (0, 1] of int |K_{-1}(t, .)| over the spatial slice."""
    law = k.law
    d = law.dim
    wf = law.weights_f
    worst = 0.0
    for t in np.linspace(0.1, 1.0, t_samples):
        axes = [np.linspace(-(box ** w), box ** w, pts_per_axis) for w in wf[1:]]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([np.full(mesh[0].size, t)] + [m.ravel() for m in mesh], axis=-1)
        cell = float(np.prod([a[1] - a[0] for a in axes])) * law.haar_normalization()
        worst = max(worst, float(np.abs(k.remainder(pts)).sum() * cell))
    return worst


# ---------------------------------------------------------------------------
# Heat semigroup on quotients
# ---------------------------------------------------------------------------


def heat_step(u: PeriodicField, dt: float, splu_cache: Optional[dict] = None) -> PeriodicField:
    """One implicit Euler step of d_t u = sum X_i^2 u on the quotient.

    Unconditionally stable; the sparse factorization is cached per (lattice, dt).
    """
    from scipy.sparse.linalg import splu
    import scipy.sparse as sp

    lat = u.lattice
    if not np.all(np.isfinite(u.values)):
        raise NonFiniteField("input field contains non-finite values")
    key = ("heat", id(lat), float(dt))
    cache = splu_cache if splu_cache is not None else lat._matrices
    if key not in cache:
        L = lat.sub_laplacian_matrix()
        A = (sp.identity(lat.n_cells, format="csc") - dt * L).tocsc()
        cache[key] = splu(A)
    sol = cache[key].solve(u.values.ravel())
    return PeriodicField(lat, sol.reshape(lat.grid_shape))


def heat_step_explicit(u: PeriodicField, dt: float) -> PeriodicField:
    """One explicit step; raises CFLViolation when dt exceeds the reported bound."""
    lat = u.lattice
    rep = lat.cfl_report()
    if dt > rep["dt_max_explicit"]:
        raise CFLViolation(
            f"dt = {dt} exceeds the explicit stability bound {rep['dt_max_explicit']:.3e}"
        )
    L = lat.sub_laplacian_matrix()
    return PeriodicField(lat, (u.values.ravel() + dt * (L @ u.values.ravel())).reshape(lat.grid_shape))


def green_apply(
    xi: PeriodicField,
    law: GroupLaw,
    cutoff: Callable[[np.ndarray], np.ndarray] = None,
    s_max: float = 1.0,
    n_steps: int = 64,
) -> PeriodicField:
    """(K xi)(x) = int_0^inf chi(s) (e^{sL} xi)(x) ds by stepping the semigroup.

    chi is a smooth cutoff supported in [0, 1], identically 1 on [0, 1/2]
    (localizing the Green operator to the singular scales).
    """
    from .quotient import smooth_cut

    chi = cutoff if cutoff is not None else smooth_cut
    dt = s_max / n_steps
    acc = xi * (0.5 * dt * float(chi(np.zeros(1))[0]))
    cur = xi
    for k in range(1, n_steps + 1):
        cur = heat_step(cur, dt)
        w = float(chi(np.array([k * dt]))[0])
        factor = dt if k < n_steps else 0.5 * dt
        if w != 0.0:
            acc = acc + cur * (w * factor)
    if not np.all(np.isfinite(acc.values)):
        raise NonFiniteField("green_apply produced non-finite values")
    return acc

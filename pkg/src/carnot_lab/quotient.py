"""Compact quotients G/Lattice, periodic fields, quotient convolution and the
colored Gaussian noise with its mollification.

Lattices here are generated by coordinate translations L_i e_i (the integer
vectors of the paper's Heisenberg example, and their abelian/kinetic
analogues).  Reduction into the fundamental box [0, L_1) x ... x [0, L_d)
happens in increasing weight order: translating along a weight-s axis never
moves lower-weight coordinates, so a single sweep lands every point in the
box.  Crossing a box face twists the higher-weight coordinates by the group
law; all periodic wraparound (interpolation, stencils) carries that twist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .grids import GridFn
from .group import GroupLaw
from .polynomials import Poly, poly_eval, poly_sub, poly_subs, poly_var


class QuotientError(ValueError):
    pass


class ReductionDiverged(QuotientError):
    pass


class SupportTooLarge(QuotientError):
    pass


class ProfileNotIntegrable(QuotientError):
    pass


@dataclass
class LatticeSpec:
    """A lattice generated by coordinate translations L_i e_i with a grid on
    the fundamental box [0, L_i)^d (cell-centered samples)."""

    law: GroupLaw
    periods: tuple
    grid_shape: tuple[int, ...]
    _twists: dict = field(default_factory=dict, repr=False)
    _matrices: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        d = self.law.dim
        if len(self.periods) != d or len(self.grid_shape) != d:
            raise QuotientError("periods and grid_shape must match the group dimension")
        if any(float(L) <= 0 for L in self.periods):
            raise QuotientError("periods must be positive")

    @property
    def dim(self) -> int:
        return self.law.dim

    @property
    def periods_f(self) -> np.ndarray:
        return np.array([float(L) for L in self.periods])

    @property
    def spacings(self) -> np.ndarray:
        return self.periods_f / np.array(self.grid_shape)

    @property
    def cell_volume(self) -> float:
        """Haar volume of one grid cell."""
        return float(np.prod(self.spacings)) * self.law.haar_normalization()

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.grid_shape))

    def generators(self) -> list[tuple]:
        gens = []
        for a in range(self.dim):
            g = [Fraction(0)] * self.dim
            g[a] = Fraction(self.periods[a])
            gens.append(tuple(g))
        return gens

    # -- reduction ----------------------------------------------------------

    def reduce_points(self, pts: np.ndarray) -> np.ndarray:
        """Map points into the fundamental box (vectorized, float)."""
        pts = np.array(pts, float, copy=True)
        single = pts.ndim == 1
        if single:
            pts = pts[None]
        order = sorted(range(self.dim), key=lambda a: self.law.weights[a])
        for a in order:
            L = float(self.periods[a])
            k = np.floor(pts[..., a] / L)
            if not np.any(k):
                continue
            shift = np.zeros_like(pts)
            shift[..., a] = -k * L
            pts = self.law.mul_many(shift, pts)
        if np.any(pts < -1e-9) or np.any(pts >= self.periods_f + 1e-9):
            raise ReductionDiverged("reduction sweep failed to land in the box")
        return pts[0] if single else pts

    def reduce_exact(self, x: Sequence) -> tuple:
        """Exact reduction of a rational point."""
        x = tuple(Fraction(c) if not isinstance(c, (int, Fraction)) else c for c in x)
        order = sorted(range(self.dim), key=lambda a: self.law.weights[a])
        for a in order:
            L = Fraction(self.periods[a])
            k = math.floor(x[a] / L)
            if k:
                shift = tuple(-k * L if i == a else Fraction(0) for i in range(self.dim))
                x = self.law.mul(shift, x)
        for a in range(self.dim):
            if not (0 <= x[a] < Fraction(self.periods[a])):
                raise ReductionDiverged(f"coordinate {a} = {x[a]} escaped the box")
        return x

    # -- face twists ----------------------------------------------------------

    def face_twists(self, axis: int, direction: int) -> list[tuple[int, Poly]]:
        """Coordinate twists when crossing the given face.

        Crossing face `axis` in `direction` replaces a point q by n.q with
        n = -direction * L_axis e_axis.  Returns [(k, T_k)] where the new
        k-coordinate is q_k + T_k(q); axis' own coordinate shifts purely.
        """
        key = (axis, direction)
        if key not in self._twists:
            d = self.dim
            n = [Fraction(0)] * d
            n[axis] = -direction * Fraction(self.periods[axis])
            twists = []
            for k in range(d):
                p = poly_subs(
                    self.law.mul_polys[k],
                    {**{i: ({(0,) * d: n[i]} if n[i] else {}) for i in range(d)},
                     **{d + i: poly_var(i, d) for i in range(d)}},
                    d,
                )
                p = poly_sub(p, poly_var(k, d))
                if k == axis:
                    expected = {(0,) * d: n[axis]}
                    if dict(p) != expected:
                        raise QuotientError("crossed axis must shift purely")
                    continue
                if p:
                    twists.append((k, p))
            for k, _ in twists:
                # wrapped interpolation along k is modular, which needs k's own
                # translations to be twist-free
                if self.face_twists_pure(k) is False:
                    raise QuotientError(
                        f"axis {k} is a twist target but is itself twisted; "
                        "this lattice/grid combination is not supported"
                    )
            self._twists[key] = twists
        return self._twists[key]

    def face_twists_pure(self, axis: int) -> bool:
        d = self.dim
        n = [Fraction(0)] * d
        n[axis] = Fraction(self.periods[axis])
        for k in range(d):
            if k == axis:
                continue
            p = poly_subs(
                self.law.mul_polys[k],
                {**{i: ({(0,) * d: n[i]} if n[i] else {}) for i in range(d)},
                 **{d + i: poly_var(i, d) for i in range(d)}},
                d,
            )
            if poly_sub(p, poly_var(k, d)):
                return False
        return True

    @property
    def is_abelian_unit(self) -> bool:
        """FFT-eligible: no structure constants at all."""
        return all(not c for c in self.law.cij.values())

    # -- sparse shift operators -------------------------------------------------

    def shift_matrix(self, axis: int, direction: int) -> sp.csr_matrix:
        """Sparse operator mapping cell values to values at the +/- h_axis
        group-translated points, with twisted periodic wraparound."""
        key = ("S", axis, direction)
        if key not in self._matrices:
            self._matrices[key] = self._build_shift(axis, direction)
        return self._matrices[key]

    def _build_shift(self, axis: int, direction: int) -> sp.csr_matrix:
        shape = self.grid_shape
        ntot = self.n_cells
        h = self.spacings
        idx = np.arange(ntot).reshape(shape)
        multi = np.stack(np.meshgrid(*[np.arange(n) for n in shape], indexing="ij"),
                         axis=-1).reshape(-1, self.dim)

        target = multi.copy()
        target[:, axis] += direction
        inside = (target[:, axis] >= 0) & (target[:, axis] < shape[axis])

        rows = [np.nonzero(inside)[0]]
        cols = [np.ravel_multi_index(tuple(target[inside].T), shape)]
        vals = [np.ones(inside.sum())]

        bnd = np.nonzero(~inside)[0]
        if len(bnd):
            centers = (multi[bnd] + 0.5) * h
            q = centers.copy()
            q[:, axis] += direction * h[axis]
            # wrapped own coordinate: index 0 (direction +1) or N-1 (direction -1)
            wrapped = multi[bnd].copy()
            wrapped[:, axis] = 0 if direction > 0 else shape[axis] - 1
            entries = [(wrapped, np.ones(len(bnd)))]
            for k, T in self.face_twists(axis, direction):
                shiftv = np.array([float(poly_eval(T, pt)) for pt in q])
                new_entries = []
                for grid_idx, w in entries:
                    ck = (grid_idx[:, k] + 0.5) * h[k] + shiftv
                    pos = np.mod(ck, float(self.periods[k])) / h[k] - 0.5
                    i0 = np.floor(pos).astype(int)
                    frac = pos - i0
                    for ioff, wt in ((0, 1.0 - frac), (1, frac)):
                        gi = grid_idx.copy()
                        gi[:, k] = np.mod(i0 + ioff, shape[k])
                        new_entries.append((gi, w * wt))
                entries = new_entries
            for grid_idx, w in entries:
                rows.append(bnd)
                cols.append(np.ravel_multi_index(tuple(grid_idx.T), shape))
                vals.append(w)

        rows_a = np.concatenate(rows)
        cols_a = np.concatenate(cols)
        vals_a = np.concatenate(vals)
        return sp.csr_matrix((vals_a, (rows_a, cols_a)), shape=(ntot, ntot))

    def derivative_matrix(self, axis: int) -> sp.csr_matrix:
        key = ("D", axis)
        if key not in self._matrices:
            h = self.spacings[axis]
            self._matrices[key] = (
                self.shift_matrix(axis, +1) - self.shift_matrix(axis, -1)
            ) * (0.5 / h)
        return self._matrices[key]

    def field_matrix(self, j: int) -> sp.csr_matrix:
        """Discrete left-invariant field X_j = sum_k P_{j,k}(x) D_k."""
        key = ("X", j)
        if key not in self._matrices:
            from .calculus import left_field

            fld = left_field(j, self.law)
            pts = self.cell_centers().reshape(-1, self.dim)
            acc = None
            for k, coeff in enumerate(fld.coeff_polys):
                if not coeff:
                    continue
                cvals = np.zeros(len(pts))
                for mono, c in coeff.items():
                    term = np.full(len(pts), float(c))
                    for i, e in enumerate(mono):
                        if e:
                            term = term * pts[:, i] ** e
                    cvals += term
                m = sp.diags(cvals) @ self.derivative_matrix(k)
                acc = m if acc is None else acc + m
            self._matrices[key] = acc.tocsr() if acc is not None else sp.csr_matrix(
                (self.n_cells, self.n_cells)
            )
        return self._matrices[key]

    def sub_laplacian_matrix(self) -> sp.csr_matrix:
        """L = sum over weight-1 directions of X_j^2 (sparse)."""
        key = ("L",)
        if key not in self._matrices:
            acc = None
            for j in range(self.dim):
                if self.law.weights[j] == 1:
                    Xj = self.field_matrix(j)
                    m = Xj @ Xj
                    acc = m if acc is None else acc + m
            self._matrices[key] = acc.tocsr()
        return self._matrices[key]

    def cell_centers(self) -> np.ndarray:
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.grid_shape, self.spacings)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def cfl_report(self) -> dict:
        """Explicit-step stability bound dt <= 0.2 min_i h_eff_i^2 / sup|coeff|."""
        from .calculus import left_field

        pts = self.cell_centers().reshape(-1, self.dim)
        worst = 0.0
        for j in range(self.dim):
            if self.law.weights[j] != 1:
                continue
            fld = left_field(j, self.law)
            for k, coeff in enumerate(fld.coeff_polys):
                if not coeff:
                    continue
                cvals = np.zeros(len(pts))
                for mono, c in coeff.items():
                    term = np.full(len(pts), float(c))
                    for i, e in enumerate(mono):
                        if e:
                            term = term * pts[:, i] ** e
                    cvals += term
                worst = max(worst, float(np.max(cvals**2)) / self.spacings[k] ** 2)
        dt_max = 0.2 / worst if worst > 0 else np.inf
        return {"dt_max_explicit": dt_max, "coefficient_sup": worst}


def reduce(x, lattice: LatticeSpec):
    """Reduce a point into the fundamental box; exact on rational input."""
    if isinstance(x, (tuple, list)) and all(isinstance(c, (int, Fraction)) for c in x):
        return lattice.reduce_exact(x)
    return lattice.reduce_points(np.asarray(x, float))


# ---------------------------------------------------------------------------
# Periodic fields
# ---------------------------------------------------------------------------


@dataclass
class PeriodicField:
    lattice: LatticeSpec
    values: np.ndarray

    def __post_init__(self):
        if tuple(self.values.shape) != tuple(self.lattice.grid_shape):
            raise QuotientError(
                f"values shape {self.values.shape} != grid {self.lattice.grid_shape}"
            )

    @property
    def cell_volume(self) -> float:
        return self.lattice.cell_volume

    def copy(self) -> "PeriodicField":
        return PeriodicField(self.lattice, self.values.copy())

    def __add__(self, other):
        if isinstance(other, PeriodicField):
            return PeriodicField(self.lattice, self.values + other.values)
        return PeriodicField(self.lattice, self.values + other)

    def __sub__(self, other):
        if isinstance(other, PeriodicField):
            return PeriodicField(self.lattice, self.values - other.values)
        return PeriodicField(self.lattice, self.values - other)

    def __mul__(self, other):
        if isinstance(other, PeriodicField):
            return PeriodicField(self.lattice, self.values * other.values)
        return PeriodicField(self.lattice, self.values * float(other))

    __rmul__ = __mul__

    def integrate(self) -> float:
        return float(self.values.sum()) * self.cell_volume

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    def l2_norm(self) -> float:
        return float(np.sqrt((self.values**2).sum() * self.cell_volume))

    # -- evaluation with twisted wraparound ------------------------------------

    def padded(self) -> np.ndarray:
        """Values with one twisted ghost layer on each side of every axis.

        Axes are padded in decreasing weight order so that twist-target axes
        (always of higher weight) are already ghost-extended when needed.
        """
        cache = getattr(self, "_pad_cache", None)
        if cache is not None and cache[0] is self.values:
            return cache[1]
        lat = self.lattice
        arr = self.values
        order = sorted(range(lat.dim), key=lambda a: -float(lat.law.weights[a]))
        pad_done: set[int] = set()
        for a in order:
            bottom = self._ghost_slab(arr, a, -1, pad_done)
            top = self._ghost_slab(arr, a, +1, pad_done)
            arr = np.concatenate([bottom, arr, top], axis=a)
            pad_done.add(a)
        object.__setattr__(self, "_pad_cache", (self.values, arr))
        return arr

    def _ghost_slab(self, arr: np.ndarray, axis: int, side: int, pad_done: set):
        """Ghost layer for `axis` from the (partially padded) array."""
        lat = self.lattice
        h = lat.spacings
        shape = lat.grid_shape
        # coordinates of the slab points (unreduced), per remaining axis;
        # padded axes carry ghost coordinates outside the box
        coords_axes = []
        for i in range(lat.dim):
            n = shape[i]
            if i in pad_done:
                c = (np.arange(-1, n + 1) + 0.5) * h[i]
            else:
                c = (np.arange(n) + 0.5) * h[i]
            coords_axes.append(c)
        qa = float(lat.periods[axis]) + 0.5 * h[axis] if side > 0 else -0.5 * h[axis]
        coords_axes[axis] = np.array([qa])
        mesh = np.meshgrid(*coords_axes, indexing="ij")
        q = np.stack(mesh, axis=-1)

        # wrapped core slice along `axis` (arr not yet padded along axis)
        core_index = 0 if side > 0 else shape[axis] - 1
        slab = np.take(arr, [core_index], axis=axis).astype(float).copy()

        for k, T in lat.face_twists(axis, side):
            shiftv = np.zeros(q.shape[:-1])
            for mono, c in T.items():
                term = np.full(q.shape[:-1], float(c))
                for i, e in enumerate(mono):
                    if e:
                        term = term * q[..., i] ** e
                shiftv += term
            ck = q[..., k] + shiftv
            pos = np.mod(ck, float(lat.periods[k])) / h[k] - 0.5
            i0 = np.floor(pos).astype(int)
            frac = pos - i0
            if k in pad_done:
                idx0 = i0 + 1  # ghost offset
                idx1 = idx0 + 1
            else:
                idx0 = np.mod(i0, shape[k])
                idx1 = np.mod(i0 + 1, shape[k])
            slab = (1.0 - frac) * np.take_along_axis(slab, idx0, axis=k) + frac * np.take_along_axis(slab, idx1, axis=k)
        return slab

    def evaluate(self, pts: np.ndarray) -> np.ndarray:
        """Periodic evaluation: reduce, then multilinear interp on the padded array."""
        lat = self.lattice
        pts = np.asarray(pts, float)
        single = pts.ndim == 1
        if single:
            pts = pts[None]
        flat = lat.reduce_points(pts.reshape(-1, lat.dim))
        padded = self.padded()
        h = lat.spacings
        pos = flat / h - 0.5  # fractional index in core coordinates
        i0 = np.floor(pos).astype(int)
        frac = pos - i0
        out = np.zeros(len(flat))
        d = lat.dim
        for corner in range(1 << d):
            w = np.ones(len(flat))
            idx = []
            for i in range(d):
                bit = (corner >> i) & 1
                w = w * (frac[:, i] if bit else 1.0 - frac[:, i])
                idx.append(i0[:, i] + bit + 1)  # +1 ghost offset
            out += w * padded[tuple(idx)]
        out = out.reshape(pts.shape[:-1])
        return out[0] if single else out

    __call__ = evaluate


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------


def white_noise(lattice: LatticeSpec, seed: int) -> PeriodicField:
    """Cell-discretized white noise: iid N(0, 1/cell_volume) per cell, so that
    <xi, phi> approximates a centered Gaussian with variance ||phi||_{L^2}^2."""
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal(lattice.grid_shape) / math.sqrt(lattice.cell_volume)
    return PeriodicField(lattice, vals)


def smooth_cut(u: np.ndarray) -> np.ndarray:
    """C-infinity transition: 1 for u <= 1/2, 0 for u >= 1."""
    u = np.asarray(u, float)
    out = np.zeros_like(u)
    out[u <= 0.5] = 1.0
    mid = (u > 0.5) & (u < 1.0)
    s = (u[mid] - 0.5) / 0.5

    def f(v):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(v > 0, np.exp(-1.0 / np.maximum(v, 1e-300)), 0.0)

    out[mid] = f(1.0 - s) / (f(1.0 - s) + f(s))
    return out


@dataclass(frozen=True)
class NoiseSpec:
    """Colored-noise recipe: xi = white *_S c_profile with
    c(x) = |x|^{-|s| + (|s|/2 + alpha_bar)} * cut(|x|/R)."""

    alpha_bar: float
    support_radius: float = 0.4
    seed: int = 0

    def validate(self, law: GroupLaw) -> None:
        hd = float(law.hom_dim)
        if not (-hd / 2 < self.alpha_bar < 0):
            raise ProfileNotIntegrable(
                f"alpha_bar must lie in (-{hd / 2}, 0), got {self.alpha_bar}"
            )

    def profile(self, law: GroupLaw) -> Callable[[np.ndarray], np.ndarray]:
        self.validate(law)
        hd = float(law.hom_dim)
        expo = -hd + (hd / 2 + self.alpha_bar)
        R = self.support_radius

        def c(pts: np.ndarray) -> np.ndarray:
            r = law.hom_norm_many(np.asarray(pts, float))
            out = np.zeros_like(r)
            pos = r > 0
            out[pos] = r[pos] ** expo * smooth_cut(r[pos] / R)
            return out

        return c


# ---------------------------------------------------------------------------
# Profile quadrature nodes (dyadic shells, collapsed below grid resolution)
# ---------------------------------------------------------------------------


def profile_nodes(
    fn: Callable[[np.ndarray], np.ndarray],
    law: GroupLaw,
    radius: float,
    lattice: Optional[LatticeSpec] = None,
    points_per_axis: int = 13,
    n_shells: Optional[int] = None,
    inversion_symmetric: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes/weights for a (possibly singular, integrable) profile.

    Dyadic shells around e are gridded at shell-proportional anisotropic
    resolution; shells below the lattice resolution are collapsed onto a
    single node at e carrying their total mass (a lattice field cannot see
    sub-cell structure anyway).
    """
    wf = law.weights_f
    haar = law.haar_normalization()
    if n_shells is None:
        if lattice is not None:
            hmin = min(
                lattice.spacings[i] ** (1.0 / wf[i]) for i in range(law.dim)
            )
            n_shells = max(1, int(np.ceil(np.log2(radius / hmin))) + 1)
        else:
            n_shells = 6
    nodes_list, w_list = [], []
    core_mass = 0.0
    for m in range(n_shells + 4):
        R_out = radius * 2.0**-m
        R_in = radius * 2.0 ** -(m + 1)
        extents = [R_out**w for w in wf]
        npts = points_per_axis if points_per_axis % 2 == 1 else points_per_axis + 1
        axes = [np.linspace(-e, e, npts) for e in extents]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in mesh], axis=-1)
        cell = float(np.prod([a[1] - a[0] for a in axes])) * haar
        r = law.hom_norm_many(pts)
        keep = (r >= R_in) & (r < R_out) if m < n_shells + 3 else (r < R_out)
        vals = fn(pts[keep])
        wts = vals * cell
        if m < n_shells:
            nz = np.abs(wts) > 0
            nodes_list.append(pts[keep][nz])
            w_list.append(wts[nz])
        else:
            core_mass += float(wts.sum())
    nodes = np.concatenate(nodes_list) if nodes_list else np.zeros((0, law.dim))
    wts = np.concatenate(w_list) if w_list else np.zeros(0)
    if core_mass != 0.0:
        nodes = np.concatenate([nodes, np.zeros((1, law.dim))])
        wts = np.concatenate([wts, [core_mass]])
    if inversion_symmetric:
        inv_nodes = law.inv_many(nodes)
        nodes = np.concatenate([nodes, inv_nodes])
        wts = np.concatenate([wts, wts]) * 0.5
    return nodes, wts


def gridfn_nodes(g: GridFn, prune: float = 1e-13) -> tuple[np.ndarray, np.ndarray]:
    pts = g.grid_points()
    wts = g.samples.ravel() * g.cell_volume
    keep = np.abs(wts) > prune * np.abs(wts).max() if wts.size else np.zeros(0, bool)
    return pts[keep], wts[keep]


def collapse_nodes(
    nodes: np.ndarray, weights: np.ndarray, lattice: LatticeSpec, factor: float = 0.5
) -> tuple[np.ndarray, np.ndarray]:
    """Merge quadrature nodes into bins of size factor*lattice spacing.

    Returns mass-preserving, weighted-centroid nodes; harmless for kernels
    below grid resolution and a large speedup for small mollification scales.
    """
    if len(nodes) == 0:
        return nodes, weights
    h = lattice.spacings * factor
    keys = np.round(nodes / h).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    nbins = inverse.max() + 1
    wsum = np.zeros(nbins)
    np.add.at(wsum, inverse, weights)
    cent = np.zeros((nbins, nodes.shape[1]))
    absw = np.abs(weights) + 1e-300
    norm = np.zeros(nbins)
    np.add.at(norm, inverse, absw)
    for i in range(nodes.shape[1]):
        acc = np.zeros(nbins)
        np.add.at(acc, inverse, nodes[:, i] * absw)
        cent[:, i] = acc / norm
    keep = np.abs(wsum) > 1e-300
    return cent[keep], wsum[keep]


# ---------------------------------------------------------------------------
# Quotient convolution
# ---------------------------------------------------------------------------


class CellKernel:
    """A convolution stencil bound to one lattice, with a cached FFT transform
    on abelian unit lattices and the blocked node loop otherwise.

    CIC binning is the transpose of multilinear interpolation, so the FFT path
    equals the direct node loop exactly (up to float summation order).
    """

    def __init__(self, lattice: LatticeSpec, nodes: np.ndarray, weights: np.ndarray,
                 collapse: bool = True):
        self.lattice = lattice
        if collapse:
            nodes, weights = collapse_nodes(nodes, weights, lattice)
        self.nodes = nodes
        self.weights = weights
        self._hat = None
        self._inv_nodes = None

    def _kernel_hat(self) -> np.ndarray:
        if self._hat is None:
            lat = self.lattice
            shape = lat.grid_shape
            kern = np.zeros(shape)
            pos = self.nodes / lat.spacings  # offset in index units
            i0 = np.floor(pos).astype(int)
            frac = pos - i0
            d = lat.dim
            for corner in range(1 << d):
                w = self.weights.copy()
                idx = []
                for i in range(d):
                    bit = (corner >> i) & 1
                    w = w * (frac[:, i] if bit else 1.0 - frac[:, i])
                    idx.append(np.mod(i0[:, i] + bit, shape[i]))
                np.add.at(kern, tuple(idx), w)
            self._hat = np.fft.rfftn(kern)
        return self._hat

    def apply(self, f: PeriodicField, adjoint: bool = False) -> PeriodicField:
        lat = self.lattice
        if lat is not f.lattice and lat.grid_shape != f.lattice.grid_shape:
            raise QuotientError("field lives on a different lattice")
        if lat.is_abelian_unit:
            hat = self._kernel_hat()
            hat = np.conj(hat) if adjoint else hat
            out = np.fft.irfftn(np.fft.rfftn(f.values) * hat, s=lat.grid_shape)
            return PeriodicField(f.lattice, out)
        law = lat.law
        if self._inv_nodes is None:
            self._inv_nodes = law.inv_many(self.nodes)
        nodes = self.nodes if adjoint else self._inv_nodes
        X = lat.cell_centers().reshape(-1, lat.dim)
        out = np.zeros(len(X))
        blk = max(4, 2_000_000 // max(len(X), 1))
        for lo in range(0, len(nodes), blk):
            ib = nodes[lo : lo + blk]
            wb = self.weights[lo : lo + blk]
            pts = law.mul_many(X[None, :, :], ib[:, None, :])
            vals = f.evaluate(pts.reshape(-1, lat.dim)).reshape(len(wb), -1)
            out += wb @ vals
        return PeriodicField(f.lattice, out.reshape(lat.grid_shape))


def quotient_convolve_nodes(
    f: PeriodicField,
    nodes: np.ndarray,
    weights: np.ndarray,
    max_support: Optional[float] = None,
) -> PeriodicField:
    """(f *_S phi)(x) = sum_k w_k f(reduce(x . y_k^{-1})) on the lattice grid."""
    lat = f.lattice
    if max_support is not None:
        ext = np.abs(nodes).max(axis=0) if len(nodes) else np.zeros(lat.dim)
        if np.any(ext > 0.5 * lat.periods_f * max_support):
            raise SupportTooLarge(
                f"kernel coordinate extents {ext} exceed half the box {0.5 * lat.periods_f}"
            )
    return CellKernel(lat, nodes, weights, collapse=False).apply(f)


def quotient_convolve(
    f: PeriodicField,
    phi: GridFn,
    check_support: bool = True,
) -> PeriodicField:
    nodes, wts = gridfn_nodes(phi)
    nodes, wts = collapse_nodes(nodes, wts, f.lattice)
    return quotient_convolve_nodes(
        f, nodes, wts, max_support=1.0 if check_support else None
    )


def color(xi_tilde: PeriodicField, noise: NoiseSpec) -> PeriodicField:
    """xi = xi_tilde *_S c_alpha with the profile quadratured on dyadic shells."""
    lat = xi_tilde.lattice
    noise.validate(lat.law)
    nodes, wts = profile_nodes(
        noise.profile(lat.law), lat.law, noise.support_radius, lattice=lat,
        inversion_symmetric=True,
    )
    nodes, wts = collapse_nodes(nodes, wts, lat)
    return quotient_convolve_nodes(xi_tilde, nodes, wts, max_support=1.0)


def mollify(xi: PeriodicField, rho: GridFn, eps: float) -> PeriodicField:
    """xi_eps = xi *_S rho^eps with rho^eps(x) = eps^{-|s|} rho(eps^{-1} . x).

    rho must be supported in B_1 and is symmetrized (rho(z) = rho(z^{-1}))
    before use.
    """
    law = xi.lattice.law
    rho_sym = 0.5 * (rho + rho.inverted())
    scaled = rho_sym.dilate_argument(eps, mass_preserving=True)
    nodes, wts = gridfn_nodes(scaled)
    nodes, wts = collapse_nodes(nodes, wts, xi.lattice)
    return quotient_convolve_nodes(xi, nodes, wts, max_support=1.0)


def quotient_correlate_nodes(
    f: PeriodicField, nodes: np.ndarray, weights: np.ndarray
) -> PeriodicField:
    """Adjoint of quotient_convolve_nodes w.r.t. the L^2(S) inner product.

    <f * phi, g> = <f, corr(g, phi)>; equals convolution with the inverted
    node set on unimodular groups.
    """
    law = f.lattice.law
    return quotient_convolve_nodes(f, law.inv_many(nodes), weights)

"""Vanishing-moment mollifiers, the cascade rho^{(n,m)} -> phi^{(n)}, group
convolution on grids, test-function batteries and Holder-norm estimation.

The base profile is the compactly supported bump exp(-1/(1-u)) where u is the
polynomial sum_i (x_i/R_i)^{a_i} built from the even norm exponents, so the
bump is smooth everywhere and supported exactly in the ball of the requested
radius.  Killing the moments int eta^I rho = delta_{I,0} for d(I) <= N is a
Gram solve against that weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .calculus import hom_degree, multi_indices_below
from .grids import GridFn, GridResolutionTooCoarse, gridfn_field_apply, gridfn_from_callable
from .group import GroupLaw


class MollifierError(ValueError):
    pass


class IllConditionedGram(MollifierError):
    pass


class NoContraction(MollifierError):
    pass


class SupportTooLarge(MollifierError):
    pass


def bump_profile(law: GroupLaw, radius: float = 1.0):
    """Smooth bump supported exactly in B_radius: exp(-1/(1-u)), u the even gauge."""
    wf = law.weights_f
    exps = law.norm_exponents
    extents = [float(radius) ** w for w in wf]

    def fn(pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, float)
        u = np.zeros(pts.shape[:-1])
        for i, (a, R) in enumerate(zip(exps, extents)):
            u = u + (pts[..., i] / R) ** a
        out = np.zeros_like(u)
        inside = u < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - u[inside]))
        return out

    return fn


@dataclass(frozen=True)
class MollifierSpec:
    """Recipe for a vanishing-moment mollifier.

    n_moments: kill int eta^I rho = delta_{I,0} for all d(I) <= n_moments.
    r_scale: the cascade scale factor (must exceed the L1 norm of the built rho).
    """

    n_moments: int = 2
    r_scale: float = 3.0
    radius: float = 1.0
    points_per_axis: int = 25


def moment_indices(law: GroupLaw, N) -> list[tuple[int, ...]]:
    """Multi-indices with d(I) <= N (the killed-moment set)."""
    idx = multi_indices_below(law, Fraction(N) + Fraction(1, 2))
    return [I for I in idx if hom_degree(I, law) <= N]


def build_mollifier(spec: MollifierSpec, law: GroupLaw) -> GridFn:
    """rho = bump * q with q solving the moment system; supported in B_radius."""
    bump = gridfn_from_callable(law, bump_profile(law, spec.radius), spec.radius,
                                spec.points_per_axis)
    idx = moment_indices(law, spec.n_moments)
    m = len(idx)
    G = np.empty((m, m))
    for i, I in enumerate(idx):
        for j, J in enumerate(idx):
            IJ = tuple(a + b for a, b in zip(I, J))
            G[i, j] = bump.moment(IJ)
    cond = np.linalg.cond(G)
    if cond > 1e12:
        raise IllConditionedGram(
            f"Gram condition number {cond:.2e}; refine the quadrature grid or change the bump"
        )
    rhs = np.zeros(m)
    rhs[idx.index((0,) * law.dim)] = 1.0
    coeffs = np.linalg.solve(G, rhs)

    q_on_grid = np.zeros(bump.samples.shape)
    pts = bump.grid_points().reshape(bump.samples.shape + (law.dim,))
    for c, I in zip(coeffs, idx):
        term = np.full(bump.samples.shape, c)
        for i, e in enumerate(I):
            if e:
                term = term * pts[..., i] ** e
        q_on_grid += term
    rho = replace(bump, samples=bump.samples * q_on_grid)

    for I in idx:
        target = 1.0 if sum(I) == 0 else 0.0
        got = rho.moment(I)
        if abs(got - target) > 1e-8:
            raise MollifierError(
                f"moment eta^{I} = {got} fails the 1e-8 re-quadrature check"
            )
    return rho


def rescale(rho: GridFn, n: int, r_scale: float) -> GridFn:
    """rho^{(n)}(x) = r^{n|s|} rho(r^n . x); mass preserved, support radius r^-n."""
    return rho.rescale(n, r_scale)


def group_convolve(
    f: GridFn,
    g: GridFn,
    law: GroupLaw,
    tol: Optional[float] = None,
    prune: float = 1e-13,
    block: Optional[int] = None,
) -> GridFn:
    """(f * g)(x) = int f(y) g(y^{-1} x) dy by direct quadrature.

    The quadrature loops (in blocks) over the grid with fewer points and
    evaluates the other factor by multilinear interpolation at group-shifted
    output points.  The output lives on the coarser of the two grids: the
    convolution has the wide factor's smoothness, so nothing is lost.
    """
    if f.law is not law or g.law is not law:
        if f.law.name != law.name or g.law.name != law.name:
            raise MollifierError("operands compiled for a different group law")

    out_extent = _convolution_extents(f, g, law)
    spac = tuple(max(hf, hg) for hf, hg in zip(f.spacings, g.spacings))
    shape = tuple(int(2 * np.ceil(e / h)) + 1 for e, h in zip(out_extent, spac))
    axes = [(np.arange(n) - (n - 1) // 2) * h for n, h in zip(shape, spac)]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([m.ravel() for m in mesh], axis=-1)
    out = np.zeros(X.shape[0])

    if tol is not None:
        err = f.estimate_interp_error() * g.l1_norm() + g.estimate_interp_error() * f.l1_norm()
        if err > tol:
            raise GridResolutionTooCoarse(
                f"estimated interpolation error {err:.2e} exceeds tolerance {tol:.2e}"
            )

    blk = block if block is not None else max(4, 1_000_000 // max(len(X), 1))

    def accumulate(nodes, weights, left_slot: bool, other: GridFn, order: int):
        nonlocal out
        keep = np.abs(weights) > prune * np.abs(weights).max()
        nodes, weights = nodes[keep], weights[keep]
        inv_nodes = law.inv_many(nodes)
        for lo in range(0, len(nodes), blk):
            ib = inv_nodes[lo : lo + blk]
            wb = weights[lo : lo + blk]
            if left_slot:  # out(x) += f(y) cell * g(y^{-1} x)
                pts = law.mul_many(ib[:, None, :], X[None, :, :])
            else:  # out(x) += g(z) cell * f(x z^{-1})
                pts = law.mul_many(X[None, :, :], ib[:, None, :])
            vals = other.evaluate(pts.reshape(-1, law.dim), order=order).reshape(len(wb), -1)
            out += wb @ vals

    # quadrature runs over the narrow factor's grid (it needs the resolution);
    # the wide smooth factor is evaluated by cubic interpolation.
    if f.support_radius <= g.support_radius:
        accumulate(f.grid_points(), f.samples.ravel() * f.cell_volume, True, g, order=3)
    else:
        accumulate(g.grid_points(), g.samples.ravel() * g.cell_volume, False, f, order=3)

    mu = law.quasi_triangle_mu(n_samples=10**5)
    return GridFn(
        law=law,
        support_radius=mu * (f.support_radius + g.support_radius),
        spacings=spac,
        samples=out.reshape(shape),
    )


def _convolution_extents(f: GridFn, g: GridFn, law: GroupLaw) -> np.ndarray:
    """Coordinate box bound for supp(f*g) from interval bounds on the law."""
    Rf, Rg = f.extents, g.extents
    d = law.dim
    ext = np.zeros(d)
    for j in range(d):
        bound = 0.0
        for mono, c in law.mul_polys[j].items():
            term = abs(float(c))
            for i, e in enumerate(mono[:d]):
                term *= Rf[i] ** e
            for i, e in enumerate(mono[d:]):
                term *= Rg[i] ** e
            bound += term
        ext[j] = bound
    return ext


def cascade(rho: GridFn, n: int, m: int, r_scale: float, law: GroupLaw) -> GridFn:
    """rho^{(n,m)} = rho^{(n)} * rho^{(n+1)} * ... * rho^{(m)}."""
    if m < n:
        raise MollifierError("cascade needs m >= n")
    acc = rho.rescale(n, r_scale)
    for k in range(n + 1, m + 1):
        acc = group_convolve(acc, rho.rescale(k, r_scale), law)
    return acc


def phi_limit(
    rho: GridFn,
    n: int,
    tol: float,
    r_scale: float,
    law: GroupLaw,
    max_iters: int = 12,
) -> dict:
    """Iterate the cascade until the sup-distance between steps drops below tol.

    Returns the limit iterate phi^{(n)} together with the recorded sup-distance
    ladder (for contraction-ratio certificates).  Raises NoContraction when the
    distances fail to decay geometrically, which signals ||rho||_L1 >= r_scale.
    """
    ratio_bound = rho.l1_norm() / r_scale
    acc = rho.rescale(n, r_scale)
    dists: list[float] = []
    m = n
    while True:
        m += 1
        if m - n > max_iters:
            raise NoContraction(
                f"cascade failed to reach tol {tol} within {max_iters} factors"
            )
        nxt = group_convolve(acc, rho.rescale(m, r_scale), law)
        d = nxt.sup_distance(acc)
        dists.append(d)
        if len(dists) >= 3:
            r1 = dists[-1] / max(dists[-2], 1e-300)
            r2 = dists[-2] / max(dists[-3], 1e-300)
            if r1 > 1.0 and r2 > 1.0:
                raise NoContraction(
                    f"successive sup-distances grow ({dists[-3:]}); need r_scale > ||rho||_L1 = {rho.l1_norm():.3f}"
                )
        acc = nxt
        if d < tol:
            return {"phi": acc, "distances": dists, "ratio_bound": ratio_bound, "last_m": m}


def test_battery(r: int, law: GroupLaw, points_per_axis: int = 21) -> list[GridFn]:
    """A fixed battery of test functions in B_r (unit scale, centered at e).

    Bumps, odd/even coordinate modulations and shifted bumps, normalized so
    that sup |X^I phi| <= 1 for all d(I) <= r.
    """
    members: list[GridFn] = []
    base = gridfn_from_callable(law, bump_profile(law, 0.9), 0.9, points_per_axis)
    members.append(base)
    members.append(gridfn_from_callable(law, bump_profile(law, 0.5), 0.5, points_per_axis))

    pts_shape = base.samples.shape + (law.dim,)
    pts = base.grid_points().reshape(pts_shape)
    weight1 = [i for i, w in enumerate(law.weights) if w == 1]
    for i in weight1[:2]:
        members.append(replace(base, samples=base.samples * pts[..., i]))  # odd
        members.append(replace(base, samples=base.samples * (pts[..., i] ** 2 - 0.05)))  # even
    if len(weight1) >= 2:
        i, j = weight1[0], weight1[1]
        members.append(replace(base, samples=base.samples * pts[..., i] * pts[..., j]))
    # top-weight coordinate modulation
    top = int(np.argmax(law.weights_f))
    members.append(replace(base, samples=base.samples * pts[..., top]))
    # shifted bumps, kept inside B_1 (verified below)
    small = gridfn_from_callable(law, bump_profile(law, 0.45), 0.45, points_per_axis)
    for i in weight1[:2]:
        shift = np.zeros(law.dim)
        shift[i] = 0.3
        spts = small.grid_points().reshape(small.samples.shape + (law.dim,))
        flat = spts.reshape(-1, law.dim)
        shifted_arg = law.mul_many(law.inv_many(shift[None]), flat)
        vals = small.evaluate(shifted_arg).reshape(small.samples.shape)
        cand = GridFn(law=law, support_radius=1.0,
                      spacings=small.spacings, samples=vals)
        cand = _recentered_support(cand)
        members.append(cand)

    out = []
    for g in members:
        norms = [1.0]
        for I in moment_indices(law, r):
            if sum(I) == 0:
                continue
            dg = gridfn_field_apply(g, _word_of(I))
            norms.append(dg.sup_norm())
        scale = 1.0 / (max(norms) * (1.0 + 1e-9))
        g = g * scale
        # support certificate: nonzero samples must sit in the closed unit ball
        support_pts = g.grid_points()[np.abs(g.samples.ravel()) > 1e-300]
        if len(support_pts) and law.hom_norm_many(support_pts).max() > 1.0 + 1e-9:
            raise MollifierError("battery member leaks outside B_1")
        out.append(g)
    return out


def _word_of(I: Sequence[int]) -> list[int]:
    w: list[int] = []
    for j, e in enumerate(I):
        w.extend([j] * e)
    return w


def _recentered_support(g: GridFn) -> GridFn:
    """Re-grid a shifted function onto an origin-centered box covering B_1."""
    target = gridfn_from_callable(g.law, lambda pts: g.evaluate(pts), 1.0,
                                  max(g.samples.shape))
    inside = g.law.hom_norm_many(target.grid_points()) <= 1.0
    target.samples.ravel()[~inside.ravel()] = 0.0
    return target


def pair_with_rescaled(field_obj, phi: GridFn, x, lam: float, law: GroupLaw) -> float:
    """<xi, phi^lambda_x> evaluated at the finer of the two resolutions.

    When the dilated test-function grid is coarser than the field's lattice
    (large lambda against a PeriodicField), the pairing is quadratured on the
    lattice cells: sum_c xi_c phi^lambda_x(center_c) cell_vol.  Otherwise the
    change of variables <xi, phi^lambda_x> = int xi(x . (lambda . w)) phi(w) dw
    runs over phi's own grid.  Sampling the coarse side instead would alias
    cell-scale noise and inflate second moments.
    """
    from .quotient import PeriodicField

    xs = np.asarray(x, float)
    wf = law.weights_f
    if isinstance(field_obj, PeriodicField):
        lat = field_obj.lattice
        dil_spacings = np.array(phi.spacings) * lam**wf
        if np.any(dil_spacings > lat.spacings):
            # lattice-side quadrature over cell centers and their periodic
            # images: <xi, phi^lam_x> = sum_c xi_c cell_vol sum_n phi^lam_x(n . c)
            centers = lat.cell_centers().reshape(-1, lat.dim)
            ext = phi.extents * lam**wf
            inv_x = law.inv_many(xs[None])
            vals = np.zeros(len(centers))
            pad = np.array(phi.spacings) * lam**wf
            abelian = all(not c for c in law.cij.values())
            for img in _periodic_images(lat, ext, xs):
                # cheap coordinate pre-filter before the exact group arithmetic
                slack = ext + pad + _translation_twist_bound(lat, img, xs)
                cand = np.all(np.abs(centers + img - xs) <= slack, axis=-1)
                if not np.any(cand):
                    continue
                sel = centers[cand]
                if abelian:
                    scaled = (sel + img - xs) * (1.0 / lam) ** wf
                else:
                    pts = law.mul_many(img[None], sel)
                    scaled = law.mul_many(inv_x, pts) * (1.0 / lam) ** wf
                mask = np.all(np.abs(scaled) <= phi.extents + pad, axis=-1)
                if np.any(mask):
                    idx = np.nonzero(cand)[0][mask]
                    vals[idx] += phi.evaluate(scaled[mask])
            w = float(lam) ** (-float(law.hom_dim)) * lat.cell_volume
            return float(np.dot(field_obj.values.ravel(), vals) * w)
    pts = phi.grid_points()
    wts = phi.samples.ravel() * phi.cell_volume
    keep = np.abs(wts) > 0
    args = law.mul_many(xs[None], law.dilate_many(lam, pts[keep]))
    vals = field_obj.evaluate(args)
    return float(np.dot(wts[keep], vals))


def _translation_twist_bound(lat, img: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Coordinate-wise bound on |eta_k(x^{-1} . img . c) - (c + img - x)_k| over
    the box, by interval arithmetic on the law's bilinear terms."""
    law = lat.law
    d = law.dim
    box = lat.periods_f + np.abs(img) + np.abs(x) + 1.0
    bound = np.zeros(d)
    for j in range(d):
        acc = 0.0
        for (I, J), c in law.cij.get(j, {}).items():
            term = abs(float(c))
            for i, e in enumerate(I):
                term *= box[i] ** e
            for i, e in enumerate(J):
                term *= box[i] ** e
            acc += term
        bound[j] = acc
    return bound


def _periodic_images(lat, extents, x) -> list[np.ndarray]:
    """Lattice translations that can move a cell of [0, L)^d into the support
    box x . [-ext, ext] (coordinate bound, widened on twisted target axes)."""
    import itertools as _it

    widen = [0] * lat.dim
    for a in range(lat.dim):
        for side in (-1, 1):
            for k, _ in lat.face_twists(a, side):
                widen[k] = 1
    ranges = []
    for i in range(lat.dim):
        L = float(lat.periods[i])
        lo = math.floor((x[i] - extents[i]) / L) - widen[i]
        hi = math.floor((x[i] + extents[i]) / L) + widen[i]
        ranges.append(range(lo, hi + 1))
    out = []
    for combo in _it.product(*ranges):
        img = np.array([c * float(L) for c, L in zip(combo, lat.periods)])
        out.append(img)
    return out


def holder_estimate(
    xi,
    alpha: float,
    points: Sequence,
    scales: Sequence[float],
    law: GroupLaw,
    battery: Optional[list[GridFn]] = None,
    r: Optional[int] = None,
) -> float:
    """Battery-relative Holder norm: sup over battery, points and scales of
    lambda^{-alpha} |<xi, phi^lambda_x>| (alpha <= 0 branch)."""
    if alpha > 0:
        raise MollifierError("positive-regularity branch is out of scope")
    if battery is None:
        battery = test_battery(r if r is not None else int(np.ceil(-alpha)), law)
    best = 0.0
    for phi in battery:
        for x in points:
            for lam in scales:
                v = abs(pair_with_rescaled(xi, phi, x, lam, law)) * lam ** (-alpha)
                best = max(best, v)
    return best

"""Bifurcation measures on parameter grids and equilibrium-measure samples."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import njit, prange, use_numba
from .errors import DegenerateParameter, NoConvergence, ZeroMassVector
from .family import MarkedPoint, RationalFamily, SpherePoint, spherical_derivative_lift
from .green import DEFAULT_TOL, bif_potential_grid, potential_at
from .grid import Grid, Window
from .numerics.forms import chordal, form_roots_batch, form_roots_nb, pick_ranked_nb, pick_ranked_np
from .numerics.laplacian import laplacian_grid

log = logging.getLogger(__name__)

MASS_FLOOR = 1e-12
REL_FLOOR = 1e-3
BURN_IN = 30
AMBIGUITY = 0.5
SAME_ROOT = 1e-6


# ---------------------------------------------------------------------------
# grid measures


@dataclass(eq=False)
class GridMeasure:
    """Cell masses on a node grid (the boundary ring is masked to zero).

    ``cell_mass[i, j]`` is the mass of the cell centred on node ``(i, j)``.
    """

    grid: Grid
    cell_mass: np.ndarray
    negative_clip_report: float
    signed_total: float
    support: np.ndarray
    flagged_cells: int = 0
    stencil: int = 9
    potential: np.ndarray | None = field(default=None, repr=False)

    @property
    def window(self):
        return self.grid.window

    @property
    def resolution(self):
        return self.grid.nx

    @property
    def total_mass(self):
        return float(self.cell_mass.sum())

    @property
    def clipped_fraction(self):
        t = self.total_mass
        return self.negative_clip_report / t if t > 0 else math.inf

    def stats(self):
        return {
            "total_mass": self.total_mass,
            "signed_total": self.signed_total,
            "negative_clip": self.negative_clip_report,
            "clipped_fraction": self.clipped_fraction if self.total_mass > 0 else None,
            "support_fraction": support_fraction(self),
            "flagged_cells": self.flagged_cells,
            "max_cell_mass": float(self.cell_mass.max()),
            "stencil": self.stencil,
        }


def measure_from_potential(g, grid: Grid, stencil=9, mass_floor=MASS_FLOOR, rel_floor=REL_FLOOR):
    """Clip and package the discrete Laplacian of a node potential."""
    raw = laplacian_grid(g, stencil)
    flagged = ~np.isfinite(raw)
    raw = np.where(flagged, 0.0, raw)
    mass = np.zeros(g.shape)
    mass[1:-1, 1:-1] = raw
    # masked ring: one layer of interior cells next to the grid edge
    mass[1, :] = mass[-2, :] = 0.0
    mass[:, 1] = mass[:, -2] = 0.0
    signed = float(mass.sum())
    clipped = float(-mass[mass < 0].sum())
    mass = np.maximum(mass, 0.0)
    floor = max(mass_floor, rel_floor * float(mass.max()))
    return GridMeasure(grid, mass, clipped, signed, mass > floor, int(flagged.sum()), stencil, g)


def bif_measure(fam: RationalFamily, marked: MarkedPoint, window: Window, resolution: int,
                tol=DEFAULT_TOL, stencil=9, mass_floor=MASS_FLOOR, rel_floor=REL_FLOOR,
                backend=None) -> GridMeasure:
    """Bifurcation measure of the pair as clipped cell masses of ``dd^c g``.

    The support estimate keeps cells above ``max(mass_floor, rel_floor *
    max cell mass)``: the absolute floor alone sits below the discretisation
    error of harmonic potentials.
    """
    g, grid = bif_potential_grid(fam, marked, window, resolution, tol, backend)
    return measure_from_potential(g, grid, stencil, mass_floor, rel_floor)


def flux_oracle(fam, marked, window: Window, n_side=2000, delta=None, tol=1e-11, backend=None):
    """Mass of ``window`` from the outward normal derivative of ``g`` on its edge.

    Midpoint rule along each side with a central difference across it; this
    uses fresh potential evaluations and no grid Laplacian.
    """
    w = window
    delta = delta or 1e-5 * max(w.re_max - w.re_min, w.im_max - w.im_min)
    t = (np.arange(n_side) + 0.5) / n_side
    total = 0.0
    sides = [
        (w.re_min + t * (w.re_max - w.re_min) + 1j * w.im_min, -1j, w.re_max - w.re_min),
        (w.re_min + t * (w.re_max - w.re_min) + 1j * w.im_max, 1j, w.re_max - w.re_min),
        (w.re_min + 1j * (w.im_min + t * (w.im_max - w.im_min)), -1.0, w.im_max - w.im_min),
        (w.re_max + 1j * (w.im_min + t * (w.im_max - w.im_min)), 1.0, w.im_max - w.im_min),
    ]
    for pts, normal, length in sides:
        gp = potential_at(fam, marked, pts + delta * normal, tol, backend)
        gm = potential_at(fam, marked, pts - delta * normal, tol, backend)
        total += np.sum((gp - gm) / (2 * delta)) * length / n_side
    return float(total / (2 * math.pi))


def support_fraction(m: GridMeasure):
    """Fraction of unmasked cells in the support estimate."""
    inner = m.support[2:-2, 2:-2]
    return float(inner.mean()) if inner.size else 0.0


# ---------------------------------------------------------------------------
# equilibrium measure samples


@dataclass(eq=False)
class MeasureSample:
    """Equal-weight points of the sphere (max-normalised homogeneous pairs)."""

    Z: np.ndarray
    W: np.ndarray
    lam: complex
    seed: int
    burn_in: int
    per_chain: int = 1
    retries: int = 0

    def __len__(self):
        return self.Z.size

    @property
    def points(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.W != 0, self.Z / np.where(self.W == 0, 1, self.W), complex(math.inf, 0))

    def sphere_points(self):
        return [SpherePoint(z, w) for z, w in zip(self.Z, self.W)]


def fixed_point_form(p, q):
    """Coefficients of ``Z Q(Z, W) - W P(Z, W)`` (degree d+1)."""
    d = p.shape[-1] - 1
    c = np.zeros(p.shape[:-1] + (d + 2,), complex)
    c[..., 1:] += q
    c[..., :-1] -= p
    return c


def repelling_start(fam: RationalFamily, lam, backend=None):
    """Most repelling fixed point of ``f_lam`` (a point of the Julia set if |rho| > 1)."""
    p, q = fam.coeffs(complex(lam))
    A, B, _, ok = form_roots_batch(fixed_point_form(p, q)[None, :], backend)
    if not ok[0]:
        raise NoConvergence("fixed points not found", partial=None)
    rho = spherical_derivative_lift(p, q, A[0], B[0])
    k = int(np.argmax(rho))
    return complex(A[0, k]), complex(B[0, k]), float(rho[k])


@njit(parallel=True)
def _sample_nb(p, q, Z0, W0, u, burn_in, outZ, outW, retries):
    chains, steps = u.shape
    d = p.size - 1
    for i in prange(chains):
        c = np.empty(d + 1, np.complex128)
        poly = np.empty(d + 1, np.complex128)
        roots = np.empty(d, np.complex128)
        A = np.empty(d, np.complex128)
        B = np.empty(d, np.complex128)
        Z = Z0
        W = W0
        for t in range(steps):
            ok = False
            for attempt in range(8):
                if attempt >= 4:
                    # nudge the target point off a root-solver trap
                    Z = Z * (1.0 + 1e-12 * attempt)
                for k in range(d + 1):
                    c[k] = W * p[k] - Z * q[k]
                ok = form_roots_nb(c, d, A, B, poly, roots, 0.37 * attempt)
                if ok:
                    break
                retries[i] += 1
            if not ok:
                for k in range(t - burn_in, steps - burn_in):
                    if k >= 0:
                        outZ[i, k] = np.nan
                        outW[i, k] = np.nan
                break
            r = min(int(u[i, t] * d), d - 1)
            j = pick_ranked_nb(A, B, d, r)
            Z = A[j]
            W = B[j]
            if t >= burn_in:
                outZ[i, t - burn_in] = Z
                outW[i, t - burn_in] = W


def _sample_np(p, q, Z0, W0, u, burn_in, outZ, outW, retries):
    chains, steps = u.shape
    d = p.size - 1
    Z = np.full(chains, Z0, complex)
    W = np.full(chains, W0, complex)
    dead = np.zeros(chains, bool)
    for t in range(steps):
        c = W[:, None] * p[None, :] - Z[:, None] * q[None, :]
        A, B, _, ok = form_roots_batch(c, "numpy")
        for attempt in range(1, 8):
            bad = ~ok & ~dead
            if not bad.any():
                break
            retries[bad] += 1
            if attempt >= 4:
                Z[bad] *= 1.0 + 1e-12 * attempt
                c[bad] = W[bad, None] * p[None, :] - Z[bad, None] * q[None, :]
            A2, B2, _, ok2 = form_roots_batch(c[bad], "numpy", rotation=0.37 * attempt)
            A[bad], B[bad], ok[bad] = A2, B2, ok2
        dead |= ~ok
        r = np.minimum((u[:, t] * d).astype(np.int64), d - 1)
        j = pick_ranked_np(A, B, r)
        Z = A[np.arange(chains), j]
        W = B[np.arange(chains), j]
        if t >= burn_in:
            outZ[:, t - burn_in] = np.where(dead, np.nan, Z)
            outW[:, t - burn_in] = np.where(dead, np.nan, W)


@njit
def chordal_nb(a, b, c, e):
    return abs(a * e - b * c) / np.sqrt((abs(a) ** 2 + abs(b) ** 2) * (abs(c) ** 2 + abs(e) ** 2))


@njit(parallel=True)
def _track_nb(p, q, Z0, W0, u, refZ, refW, outZ, outW, retries, ambiguous):
    """Backward orbits whose branch at each step is the preimage nearest to
    the same step of a reference run (rank order when no reference)."""
    chains, steps = u.shape
    d = p.size - 1
    has_ref = refZ.shape[0] > 0
    for i in prange(chains):
        c = np.empty(d + 1, np.complex128)
        poly = np.empty(d + 1, np.complex128)
        roots = np.empty(d, np.complex128)
        A = np.empty(d, np.complex128)
        B = np.empty(d, np.complex128)
        Z = Z0
        W = W0
        for t in range(steps):
            ok = False
            for attempt in range(8):
                if attempt >= 4:
                    Z = Z * (1.0 + 1e-12 * attempt)
                for k in range(d + 1):
                    c[k] = W * p[k] - Z * q[k]
                ok = form_roots_nb(c, d, A, B, poly, roots, 0.37 * attempt)
                if ok:
                    break
                retries[i] += 1
            if not ok:
                for k in range(t, steps):
                    outZ[i, k] = np.nan
                    outW[i, k] = np.nan
                break
            if has_ref and not np.isnan(refZ[i, t].real):
                j = 0
                j2 = 0
                best = np.inf
                second = np.inf
                rz = refZ[i, t]
                rw = refW[i, t]
                for k in range(d):
                    dist = chordal_nb(A[k], B[k], rz, rw)
                    if dist < best:
                        second = best
                        j2 = j
                        best = dist
                        j = k
                    elif dist < second:
                        second = dist
                        j2 = k
                if best > AMBIGUITY * second and chordal_nb(A[j], B[j], A[j2], B[j2]) > SAME_ROOT:
                    ambiguous[i] += 1
            else:
                r = min(int(u[i, t] * d), d - 1)
                j = pick_ranked_nb(A, B, d, r)
            Z = A[j]
            W = B[j]
            outZ[i, t] = Z
            outW[i, t] = W


def _track_np(p, q, Z0, W0, u, refZ, refW, outZ, outW, retries, ambiguous):
    chains, steps = u.shape
    d = p.size - 1
    Z = np.full(chains, Z0, complex)
    W = np.full(chains, W0, complex)
    dead = np.zeros(chains, bool)
    idx = np.arange(chains)
    for t in range(steps):
        c = W[:, None] * p[None, :] - Z[:, None] * q[None, :]
        A, B, _, ok = form_roots_batch(c, "numpy")
        for attempt in range(1, 8):
            bad = ~ok & ~dead
            if not bad.any():
                break
            retries[bad] += 1
            if attempt >= 4:
                Z[bad] *= 1.0 + 1e-12 * attempt
                c[bad] = W[bad, None] * p[None, :] - Z[bad, None] * q[None, :]
            A2, B2, _, ok2 = form_roots_batch(c[bad], "numpy", rotation=0.37 * attempt)
            A[bad], B[bad], ok[bad] = A2, B2, ok2
        dead |= ~ok
        if refZ.shape[0] > 0:
            rz, rw = refZ[:, t, None], refW[:, t, None]
            nr = np.abs(rz) ** 2 + np.abs(rw) ** 2
            dist = np.abs(A * rw - B * rz) / np.sqrt((np.abs(A) ** 2 + np.abs(B) ** 2) * nr)
            dist = np.where(np.isnan(dist), np.inf, dist)
            order = np.argsort(dist, axis=1)
            j, j2 = order[:, 0], order[:, 1]
            two = np.take_along_axis(dist, order[:, :2], axis=1)
            gap = chordal(A[idx, j], B[idx, j], A[idx, j2], B[idx, j2])
            ambiguous += (two[:, 0] > AMBIGUITY * two[:, 1]) & (gap > SAME_ROOT) & ~dead
        else:
            r = np.minimum((u[:, t] * d).astype(np.int64), d - 1)
            j = pick_ranked_np(A, B, r)
        Z = A[idx, j]
        W = B[idx, j]
        outZ[:, t] = np.where(dead, np.nan, Z)
        outW[:, t] = np.where(dead, np.nan, W)


def tracked_paths(fam: RationalFamily, lam, u, start, ref=None, backend=None):
    """Full backward-orbit paths at ``lam`` driven by uniforms ``u`` (chains, steps).

    With ``ref = (refZ, refW)`` from a nearby parameter each step takes the
    preimage closest to the reference path: a bijection between preimage
    sets, so branch choices stay uniform while the paths move continuously
    (holomorphically where the family is J-stable).  Returns the paths, the
    solver retry count and the number of ambiguous matches (nearest and
    second nearest preimage within a factor ``AMBIGUITY``, coincident
    roots excepted); bisect the
    parameter step when that count is nonzero.
    """
    p, q = fam.coeffs(complex(lam))
    chains, steps = u.shape
    outZ = np.empty((chains, steps), complex)
    outW = np.empty((chains, steps), complex)
    retries = np.zeros(chains, np.int64)
    ambiguous = np.zeros(chains, np.int64)
    if ref is None:
        refZ = refW = np.zeros((0, steps), complex)
    else:
        refZ, refW = ref
    Z0, W0 = complex(start[0]), complex(start[1])
    if use_numba(backend):
        _track_nb(p, q, Z0, W0, u, refZ, refW, outZ, outW, retries, ambiguous)
    else:
        _track_np(p, q, Z0, W0, u, refZ, refW, outZ, outW, retries, ambiguous)
    return outZ, outW, int(retries.sum()), int(ambiguous.sum())


def mes_sample(fam: RationalFamily, lam, count: int, burn_in=BURN_IN, seed=0, per_chain=1,
               start=None, backend=None) -> MeasureSample:
    """Random backward orbits sampling the equilibrium measure of ``f_lam``.

    ``count`` samples come from ``ceil(count/per_chain)`` independent chains,
    each started at a repelling fixed point, run ``burn_in`` steps and then
    recorded for ``per_chain`` steps.  Each step picks one of the ``d``
    preimages (with multiplicity) uniformly, using a Philox stream whose row
    ``i`` belongs to chain ``i``: results do not depend on thread count.
    """
    lam = complex(lam)
    if count < 1:
        raise ValueError("count must be >= 1")
    if fam.is_degenerate(lam):
        raise DegenerateParameter(f"lift degenerates at lambda={lam}")
    p, q = fam.coeffs(lam)
    if start is None:
        Z0, W0, _ = repelling_start(fam, lam, backend)
    else:
        Z0, W0 = complex(start.Z), complex(start.W)
    chains = -(-count // per_chain)
    steps = burn_in + per_chain
    u = np.random.Generator(np.random.Philox(seed)).random((chains, steps))
    outZ = np.empty((chains, per_chain), complex)
    outW = np.empty((chains, per_chain), complex)
    retries = np.zeros(chains, np.int64)
    if use_numba(backend):
        _sample_nb(p, q, Z0, W0, u, burn_in, outZ, outW, retries)
    else:
        _sample_np(p, q, Z0, W0, u, burn_in, outZ, outW, retries)
    n_retry = int(retries.sum())
    if n_retry:
        log.info("root solver retried %d times while sampling at lambda=%s", n_retry, lam)
    Z = outZ.ravel()[:count]
    W = outW.ravel()[:count]
    good = np.isfinite(Z) & np.isfinite(W)
    if not good.all():
        log.warning("%d sample chains abandoned after repeated solver failures", int((~good).sum()))
        Z, W = Z[good], W[good]
    return MeasureSample(Z, W, lam, seed, burn_in, per_chain, n_retry)


def push_forward(fam: RationalFamily, sample: MeasureSample) -> MeasureSample:
    """Image of every sample point under ``f_lam``."""
    from .family import lift_apply, normalize

    p, q = fam.coeffs(sample.lam)
    Z, W = normalize(*lift_apply(p, q, sample.Z, sample.W))
    return MeasureSample(Z, W, sample.lam, sample.seed, sample.burn_in + 1, sample.per_chain)


# ---------------------------------------------------------------------------
# comparisons


def _box_tuple(b):
    if isinstance(b, Window):
        return b.re_min, b.re_max, b.im_min, b.im_max
    return tuple(float(x) for x in b)


def box_masses(m, boxes):
    """Mass of each half-open box ``[re0, re1) x [im0, im1)``.

    Grid measures sum the cells whose centre node lies in the box; samples
    give empirical frequencies.  Half-open boxes make the result additive.
    """
    out = []
    if isinstance(m, GridMeasure):
        nodes = m.grid.nodes()
        for b in boxes:
            r0, r1, i0, i1 = _box_tuple(b)
            # shift by a fraction of a cell so nodes on an edge fall on one side
            eps = 1e-9 * m.grid.h
            inside = ((nodes.real >= r0 - eps) & (nodes.real < r1 - eps)
                      & (nodes.imag >= i0 - eps) & (nodes.imag < i1 - eps))
            out.append(float(m.cell_mass[inside].sum()))
        return out
    pts = m.points if isinstance(m, MeasureSample) else np.asarray(m, complex)
    n = pts.size
    for b in boxes:
        r0, r1, i0, i1 = _box_tuple(b)
        inside = (pts.real >= r0) & (pts.real < r1) & (pts.imag >= i0) & (pts.imag < i1)
        out.append(float(inside.sum()) / n)
    return out


def box_tiling(window: Window, nx, ny=None):
    ny = ny or nx
    re = np.linspace(window.re_min, window.re_max, nx + 1)
    im = np.linspace(window.im_min, window.im_max, ny + 1)
    return [(re[j], re[j + 1], im[i], im[i + 1]) for i in range(ny) for j in range(nx)]


def compare_measures(a, b):
    """Pearson correlation and total-variation distance of normalised vectors."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != b.shape:
        raise ValueError("vectors must have equal length")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("masses must be nonnegative")
    sa, sb = a.sum(), b.sum()
    if not (sa > 0 and sb > 0):
        raise ZeroMassVector("cannot normalise a zero-mass vector")
    a = a / sa
    b = b / sb
    da, db = a - a.mean(), b - b.mean()
    den = math.sqrt(float((da * da).sum() * (db * db).sum()))
    corr = float((da * db).sum() / den) if den > 0 else (1.0 if np.array_equal(a, b) else 0.0)
    return {"correlation": corr, "total_variation": float(0.5 * np.abs(a - b).sum())}


def mass_area_slope(m: GridMeasure, n_centres=400, max_level=5, seed=0):
    """Slope of log box mass against log box area.

    Box centres are drawn with probability proportional to cell mass; boxes
    have side ``2**k`` cells.  A measure with bounded positive density gives
    a slope near 1, a measure living on a curve a slope near 1/2.
    """
    mass = m.cell_mass
    total = mass.sum()
    if total <= 0:
        raise ZeroMassVector("measure has no mass")
    rng = np.random.Generator(np.random.Philox(seed))
    flat = rng.choice(mass.size, size=n_centres, p=(mass / total).ravel())
    ci, cj = np.unravel_index(flat, mass.shape)
    cs = np.pad(mass, ((1, 0), (1, 0))).cumsum(0).cumsum(1)
    ny, nx = mass.shape
    xs, ys = [], []
    for k in range(max_level + 1):
        half = 2 ** k // 2
        side = 2 ** k
        i0 = np.clip(ci - half, 0, ny - side)
        j0 = np.clip(cj - half, 0, nx - side)
        box = cs[i0 + side, j0 + side] - cs[i0, j0 + side] - cs[i0 + side, j0] + cs[i0, j0]
        box = box[box > 0]
        if box.size == 0:
            continue
        xs.append(math.log(side * side * m.grid.h ** 2))
        ys.append(float(np.mean(np.log(box))))
    if len(xs) < 2:
        return math.nan
    return float(np.polyfit(xs, ys, 1)[0])

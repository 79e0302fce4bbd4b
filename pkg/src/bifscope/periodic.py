"""Repelling cycles, prerepelling parameters and Koenigs coordinates."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (AttractingLanding, DegenerateParameter, MultiplierDegeneration,
                     NewtonDivergence, NoConvergence, NotRepelling, OutsideLinearizationDomain,
                     PathNewtonFailure, TangentIntersection)
from .family import (MarkedPoint, RationalFamily, SpherePoint, chart_value_mixed, hom_eval,
                     iterate_jets, iterate_points, normalize, normalize_jets, point_jets)
from .grid import Grid, Window
from .numerics.forms import chordal, form_roots_batch
from .numerics.jet import Jet
from .numerics.roots import roots_aberth, strip
from .numerics.series import Series

log = logging.getLogger(__name__)

CYCLE_RTOL = 1e-10
SAME_POINT = 1e-8
DEDUP_DIST = 1e-8
TANGENT_TOL = 1e-8
KOENIGS_ORDER = 24


def divisors(n):
    return [k for k in range(1, n + 1) if n % k == 0]


def _to_chart0(Z, W):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(W != 0, Z / np.where(W == 0, 1, W), complex(math.inf, 0))


def _chart_of(Z, W):
    """Chart index (0 or 1) in which the point has coordinate of modulus <= 1."""
    return np.where(np.abs(Z) <= np.abs(W), 0, 1)


def _chart_coord(Z, W, chart):
    return np.where(chart == 0, Z / np.where(chart == 0, W, 1), W / np.where(chart == 0, 1, Z))


def _as_sphere(z):
    if isinstance(z, SpherePoint):
        return z
    return SpherePoint.from_complex(z)


# ---------------------------------------------------------------------------
# cycles


@dataclass(frozen=True)
class PeriodicOrbit:
    lam: complex
    z: complex
    period: int
    multiplier: complex
    points: tuple = field(default=(), compare=False)

    @property
    def is_repelling(self):
        return abs(self.multiplier) > 1.0

    @property
    def point(self):
        return SpherePoint.from_complex(self.z)

    def to_dict(self):
        return {"lambda": [self.lam.real, self.lam.imag], "z": _pair(self.z), "period": self.period,
                "multiplier": [self.multiplier.real, self.multiplier.imag]}


def _pair(z):
    z = complex(z)
    if not math.isfinite(abs(z)):
        return None
    return [z.real, z.imag]


def cycle_jets(fam, lam, x, chart, p, coef_jets=None):
    """Chart-valued jet of ``f^p`` at chart coordinate ``x`` (d_z = multiplier)."""
    Zj, Wj = point_jets(x, chart)
    Zj, Wj = iterate_jets(fam, lam, Zj, Wj, p, coef_jets)
    return chart_value_mixed(Zj, Wj, chart)


def _newton_cycles(fam, lam, x, chart, p, maxiter=40):
    """Polish chart coordinates ``x`` of period-``p`` points (vectorised)."""
    x = np.array(x, complex)
    chart = np.array(chart)
    cj = fam.coeff_jets(lam)
    for _ in range(maxiter):
        y = cycle_jets(fam, lam, x, chart, p, cj)
        E = y.value - x
        dE = y.d_z - 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(dE != 0, E / dE, 0)
        step = np.where(np.isfinite(step), step, 0)
        x = x - step
        flip = np.abs(x) > 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.where(flip, 1.0 / x, x)
        chart = np.where(flip, 1 - chart, chart)
        if np.all(np.abs(step) <= 1e-15 * (1 + np.abs(x))):
            break
    y = cycle_jets(fam, lam, x, chart, p, cj)
    return x, chart, np.abs(y.value - x), y.d_z


def _iterate_forms(p, q, n):
    """Forms of the lift of ``f^n`` as coefficient arrays (exact composition)."""
    P, Q = p.copy(), q.copy()
    d = p.size - 1
    for _ in range(n - 1):
        Ppow = [np.ones(1, complex)]
        Qpow = [np.ones(1, complex)]
        for _ in range(d):
            Ppow.append(np.convolve(Ppow[-1], P))
            Qpow.append(np.convolve(Qpow[-1], Q))
        terms = [np.convolve(Ppow[j], Qpow[d - j]) for j in range(d + 1)]
        P = sum(p[j] * terms[j] for j in range(d + 1))
        Q = sum(q[j] * terms[j] for j in range(d + 1))
    return P, Q


def _fixed_ratio(fam, lam, z, p, coef_jets):
    """``N/N'`` for ``N(z) = z Q_p(z, 1) - P_p(z, 1)`` evaluated by iteration.

    The lift is renormalised by a holomorphic factor each step; the
    logarithmic derivative of the accumulated factor is tracked so that the
    ratio is that of the unnormalised numerator.
    """
    pj, qj = coef_jets
    d = fam.degree
    zj = Jet(z, np.zeros_like(z), np.ones_like(z))
    Zj, Wj = zj, Jet(np.ones_like(z), np.zeros_like(z), np.zeros_like(z))
    D = np.zeros_like(z)
    with np.errstate(all="ignore"):
        for _ in range(p):
            Pn = hom_eval(pj, Zj, Wj)
            Qn = hom_eval(qj, Zj, Wj)
            sc = Pn.select(np.abs(Pn.value) >= np.abs(Qn.value), Qn)
            D = d * D + sc.d_z / sc.value
            Zj, Wj = Pn / sc, Qn / sc
        N = zj * Wj - Zj
        return N.value / (N.d_z + N.value * D)


def _implicit_aberth(fam, lam, w, p, maxiter=200):
    """Aberth iteration for the period-``p`` numerator started from ``w``."""
    w = np.array(w, complex)
    n = w.size
    cj = fam.coeff_jets(np.array(lam, complex) * np.ones(n))
    done = np.zeros(n, bool)
    eye = np.eye(n, dtype=bool)
    for _ in range(maxiter):
        r = _fixed_ratio(fam, lam, w, p, cj)
        diff = w[:, None] - w[None, :]
        with np.errstate(all="ignore"):
            inv = np.where(eye | (diff == 0), 0, 1.0 / np.where(diff == 0, 1, diff))
            step = r / (1.0 - r * inv.sum(axis=1))
        step = np.where(np.isfinite(step) & ~done, step, 0)
        w = w - step
        done |= np.abs(step) <= 1e-15 * (1 + np.abs(w))
        if done.all():
            return w, True
    return w, False


def periodic_points(fam, lam, p, backend=None):
    """Homogeneous points with ``f^p(v) = v`` and their period-``p`` multipliers.

    Start values come from the expanded numerator of ``f^p(z) - z``, whose
    monomial coefficients are badly conditioned for large ``p``; the roots
    are then refined by Aberth steps that evaluate the numerator through the
    iterated map.  Fixed points at infinity are those missing from the
    finite degree.
    """
    lam = complex(lam)
    pc, qc = fam.coeffs(lam)
    P, Q = _iterate_forms(pc, qc, p)
    c = np.zeros(P.size + 1, complex)
    c[1:] += Q
    c[:-1] -= P
    cs = strip(c)
    n_fin = cs.size - 1
    n_inf = c.size - 1 - n_fin
    Zs, Ws = [], []
    ok = True
    if n_fin >= 1:
        try:
            start = roots_aberth(cs, backend=backend)
        except NoConvergence as exc:
            start = exc.partial
        w, ok = _implicit_aberth(fam, lam, start, p)
        if not ok:
            log.warning("periodic points of period %d at lambda=%s: refinement incomplete", p, lam)
        Z, W = normalize(w, np.ones_like(w))
        Zs.append(Z)
        Ws.append(W)
    if n_inf:
        Zs.append(np.ones(n_inf, complex))
        Ws.append(np.zeros(n_inf, complex))
    Z = np.concatenate(Zs)
    W = np.concatenate(Ws)
    chart = _chart_of(Z, W)
    x = _chart_coord(Z, W, chart)
    y = cycle_jets(fam, lam, x, chart, p)
    res = np.abs(y.value - x)
    good = res <= CYCLE_RTOL * (1 + np.abs(x))
    return Z[good], W[good], y.d_z[good], ok


def _minimal_period(fam, lam, Z, W, p):
    """Least ``q | p`` with ``f^q(v) = v`` (chordal tolerance), elementwise."""
    out = np.full(Z.shape, p)
    for q in reversed(divisors(p)[:-1]):
        Zq, Wq = iterate_points(fam, lam, Z, W, q)
        out = np.where(chordal(Zq, Wq, Z, W) < SAME_POINT, q, out)
    return out


def find_cycles(fam: RationalFamily, lam, p_max: int, periods=None, backend=None):
    """All cycles of exact period ``<= p_max`` (or only those in ``periods``)."""
    lam = complex(lam)
    if fam.is_degenerate(lam):
        raise DegenerateParameter(f"lift degenerates at lambda={lam}")
    out = []
    for p in periods or range(1, p_max + 1):
        Z, W, rho, _ = periodic_points(fam, lam, p, backend)
        exact = _minimal_period(fam, lam, Z, W, p) == p
        Z, W, rho = Z[exact], W[exact], rho[exact]
        used = np.zeros(Z.size, bool)
        for i in range(Z.size):
            if used[i]:
                continue
            if used.any() and chordal(Z[used], W[used], Z[i], W[i]).min() < 1e-6:
                used[i] = True  # repeated root of a multiple cycle
                continue
            # walk the orbit and absorb its other roots
            members = [i]
            Zk, Wk = Z[i], W[i]
            for _ in range(p - 1):
                Zk, Wk = iterate_points(fam, lam, np.array(Zk), np.array(Wk), 1)
                dist = chordal(Z, W, Zk, Wk)
                j = int(np.argmin(np.where(used | np.isin(np.arange(Z.size), members), np.inf, dist)))
                if dist[j] < 1e-6:
                    members.append(j)
            used[members] = True
            pts = tuple(complex(v) for v in _to_chart0(Z[members], W[members]))
            out.append(PeriodicOrbit(lam, pts[0], p, complex(rho[i]), pts))
    return out


# ---------------------------------------------------------------------------
# continuation


def _orbit_state(orbit):
    pt = orbit.point
    chart = 0 if abs(pt.Z) <= abs(pt.W) else 1
    x = pt.Z / pt.W if chart == 0 else pt.W / pt.Z
    return complex(x), chart


def _complete_orbit(fam, lam, x, chart, p):
    y = cycle_jets(fam, lam, np.array(x), np.array(chart), p)
    Z, W = (x, 1.0) if chart == 0 else (1.0, x)
    Z, W = normalize(np.array(Z, complex), np.array(W, complex))
    pts = [complex(_to_chart0(Z, W))]
    for _ in range(p - 1):
        Z, W = iterate_points(fam, lam, Z, W, 1)
        pts.append(complex(_to_chart0(Z, W)))
    return PeriodicOrbit(complex(lam), pts[0], p, complex(y.d_z), tuple(pts))


def cycle_path(fam: RationalFamily, orbit: PeriodicOrbit, lam_target, steps=32, newton_tol=1e-13):
    """Yield the continued cycle at each point of a straight parameter path."""
    lam0 = complex(orbit.lam)
    lam_target = complex(lam_target)
    p = orbit.period
    x, chart = _orbit_state(orbit)
    lam = lam0
    rho_prev = orbit.multiplier
    yield orbit
    t, dt = 0.0, 1.0 / max(steps, 1)
    while t < 1.0 - 1e-15:
        dt = min(dt, 1.0 - t)
        lam_new = lam0 + (t + dt) * (lam_target - lam0)
        if fam.is_degenerate(lam_new):
            raise DegenerateParameter(f"path crosses a degenerate parameter near {lam_new}")
        cj = fam.coeff_jets(np.array(lam))
        y = cycle_jets(fam, lam, np.array(x), np.array(chart), p, cj)
        den = 1.0 - complex(y.d_z)
        if abs(den) < 1e-8:
            raise MultiplierDegeneration(f"multiplier reached 1 near lambda={lam}")
        xp = x + complex(y.d_lambda) / den * (lam_new - lam)
        cj_new = fam.coeff_jets(np.array(lam_new))
        ok = False
        for _ in range(25):
            y = cycle_jets(fam, lam_new, np.array(xp), np.array(chart), p, cj_new)
            E = complex(y.value) - xp
            dE = complex(y.d_z) - 1.0
            if abs(dE) < 1e-8:
                raise MultiplierDegeneration(f"multiplier reached 1 near lambda={lam_new}")
            step = E / dE
            xp -= step
            if abs(step) <= newton_tol * (1 + abs(xp)) and abs(E) <= 1e-10 * (1 + abs(xp)):
                ok = True
                break
            if not math.isfinite(abs(xp)):
                break
        if not ok or abs(xp - x) > 0.25:
            if dt < 1e-6:
                raise PathNewtonFailure(f"corrector failed near lambda={lam_new}")
            dt /= 2
            continue
        rho = complex(cycle_jets(fam, lam_new, np.array(xp), np.array(chart), p, cj_new).d_z)
        if (abs(rho_prev) - 1.0) * (abs(rho) - 1.0) <= 0 and abs(rho_prev) != 1.0:
            raise MultiplierDegeneration(f"|multiplier| crossed 1 between {lam} and {lam_new}")
        rho_prev = rho
        if abs(xp) > 1.0:
            xp, chart = 1.0 / xp, 1 - chart
        x, lam, t = xp, lam_new, t + dt
        dt = min(2 * dt, 1.0 / max(steps, 1))
        yield _complete_orbit(fam, lam, x, chart, p)


def continue_cycle(fam, orbit: PeriodicOrbit, lam_target, steps=32) -> PeriodicOrbit:
    """Holomorphic continuation of ``orbit`` to ``lam_target`` along a segment."""
    last = orbit
    for last in cycle_path(fam, orbit, lam_target, steps):
        pass
    return last


# ---------------------------------------------------------------------------
# prerepelling parameters


@dataclass(frozen=True)
class MisiurewiczParam:
    lam0: complex
    n: int
    orbit: PeriodicOrbit
    transversality: complex
    residual: float
    landing: complex = complex(math.nan)

    @property
    def p(self):
        return self.orbit.period

    def to_dict(self):
        return {
            "lambda": [self.lam0.real, self.lam0.imag],
            "n": self.n,
            "p": self.orbit.period,
            "z": _pair(self.landing),
            "multiplier": [self.orbit.multiplier.real, self.orbit.multiplier.imag],
            "transversality": [self.transversality.real, self.transversality.imag],
            "residual": self.residual,
        }


def _landing_jets(fam, marked, lam, n, coef_jets=None):
    Aj, Bj = marked.lift_jets(lam)
    Zj, Wj = normalize_jets(Aj, Bj)
    return iterate_jets(fam, lam, Zj, Wj, n, coef_jets)


def misiurewicz_newton(fam, marked, lam, x, chart, n, p, maxiter=60):
    """Batched 2x2 Newton for ``f^p(x) = x``, ``f^n(a(lam)) = x``.

    Returns ``(lam, x, chart, converged)`` arrays.
    """
    lam = np.array(lam, complex).ravel()
    x = np.array(x, complex).ravel()
    chart = np.array(chart).ravel() * np.ones(lam.shape, int)
    alive = np.ones(lam.shape, bool)
    conv = np.zeros(lam.shape, bool)
    for _ in range(maxiter):
        idx = np.nonzero(alive & ~conv)[0]
        if idx.size == 0:
            break
        L, X, C = lam[idx], x[idx], chart[idx]
        cj = fam.coeff_jets(L)
        y = cycle_jets(fam, L, X, C, p, cj)
        Za, Wa = _landing_jets(fam, marked, L, n, cj)
        with np.errstate(all="ignore"):
            b = chart_value_mixed(Za, Wa, C)
            E1 = y.value - X
            E2 = b.value - X
            a11, a12 = y.d_lambda, y.d_z - 1.0
            a21 = b.d_lambda
            det = -a11 - a12 * a21
            dl = (-E1 - a12 * E2) / det
            dx = (a11 * E2 - a21 * E1) / det
            size = np.abs(dl)
            cap = np.where(size > 0.25, 0.25 / size, 1.0)
            dl, dx = dl * cap, dx * cap
            L = L - dl
            X = X - dx
        bad = ~np.isfinite(L) | ~np.isfinite(X) | (np.abs(L) > 1e6)
        flip = np.abs(X) > 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            X = np.where(flip, 1.0 / X, X)
        C = np.where(flip, 1 - C, C)
        small = (np.abs(dl) <= 1e-14 * (1 + np.abs(L))) & (np.abs(dx) <= 1e-14 * (1 + np.abs(X)))
        small &= (np.abs(E1) < 1e-11) & (np.abs(E2) < 1e-11)
        lam[idx], x[idx], chart[idx] = L, X, C
        alive[idx] = ~bad
        conv[idx] = small & ~bad
    return lam, x, chart, conv & alive


def _iter_to(fam, lam, Z, W, k):
    return iterate_points(fam, lam, np.array(Z, complex), np.array(W, complex), k)


def certify_misiurewicz(fam, marked, lam0, x, chart, n, p) -> MisiurewiczParam:
    """Certificate for a converged solution: period, multiplier, landing, transversality."""
    lam0 = complex(lam0)
    Z, W = (x, 1.0) if chart == 0 else (1.0, x)
    Z, W = normalize(np.array(Z, complex), np.array(W, complex))
    p_min = int(_minimal_period(fam, lam0, Z, W, p))
    # cycle points
    cyc = [(Z, W)]
    for _ in range(p_min - 1):
        cyc.append(_iter_to(fam, lam0, *cyc[-1], 1))
    a, b = marked.lift(lam0)
    Za, Wa = normalize(np.array(a, complex), np.array(b, complex))
    m, k_land = None, None
    for step in range(n + 1):
        if step:
            Za, Wa = _iter_to(fam, lam0, Za, Wa, 1)
        for k, (Zc, Wc) in enumerate(cyc):
            if chordal(Za, Wa, Zc, Wc) < SAME_POINT:
                m, k_land = step, k
                break
        if m is not None:
            break
    if m is None:
        raise NewtonDivergence("marked orbit does not land on the cycle")
    Zl, Wl = cyc[k_land]
    c = 0 if Wl != 0 and abs(Zl / Wl) < 1e8 else 1
    xl = complex(Zl / Wl) if c == 0 else complex(Wl / Zl)
    cj = fam.coeff_jets(np.array(lam0))
    y = cycle_jets(fam, lam0, np.array(xl), np.array(c), p_min, cj)
    rho = complex(y.d_z)
    land = chart_value_mixed(*_landing_jets(fam, marked, lam0, m, cj), np.array(c))
    residual = max(abs(complex(y.value) - xl), abs(complex(land.value) - xl)) / (1 + abs(xl))
    orbit = _complete_orbit(fam, lam0, xl, c, p_min)
    if residual >= 1e-10:
        raise NewtonDivergence(f"residual {residual:.2e} fails re-verification")
    if abs(rho) <= 1.0:
        raise AttractingLanding(f"landing cycle has |multiplier| = {abs(rho):.6g}")
    den = 1.0 - rho
    zprime = complex(y.d_lambda) / den
    T = complex(land.d_lambda) - zprime
    if abs(T) < TANGENT_TOL:
        raise TangentIntersection(f"transversality {abs(T):.2e} below {TANGENT_TOL}")
    zl = complex(_to_chart0(Zl, Wl))
    return MisiurewiczParam(lam0, m, orbit, T, float(residual), zl)


def solve_misiurewicz(fam, marked, seed_lam, n: int, p: int, z_seed=None, maxiter=60) -> MisiurewiczParam:
    """Solve for a parameter where ``f^n(a)`` lands on a period-``p`` cycle.

    Without ``z_seed`` the start point is the period-``p`` point at the seed
    parameter closest to ``f^n(a(seed))``.
    """
    seed_lam = complex(seed_lam)
    if z_seed is None:
        a, b = marked.lift(seed_lam)
        Za, Wa = _iter_to(fam, seed_lam, *normalize(np.array(a, complex), np.array(b, complex)), n)
        try:
            Z, W, _, _ = periodic_points(fam, seed_lam, p)
        except NoConvergence:
            Z = np.zeros(0)
        if Z.size:
            k = int(np.argmin(chordal(Z, W, Za, Wa)))
            start = SpherePoint(complex(Z[k]), complex(W[k]))
        else:
            start = SpherePoint(complex(Za), complex(Wa))
    else:
        start = _as_sphere(z_seed)
    chart = 0 if abs(start.Z) <= abs(start.W) else 1
    x = start.Z / start.W if chart == 0 else start.W / start.Z
    lam, x, chart, conv = misiurewicz_newton(fam, marked, [seed_lam], [x], [chart], n, p, maxiter)
    if not conv[0]:
        raise NewtonDivergence(f"Newton did not converge from seed {seed_lam}")
    return certify_misiurewicz(fam, marked, lam[0], x[0], int(chart[0]), n, p)


def misiurewicz_scan(fam, marked, window: Window, n_max=6, p_max=3, grid=20, backend=None):
    """Certified prerepelling parameters found from a ``grid x grid`` seed lattice.

    Returns ``(params, stats)``; ``params`` are deduplicated at distance
    ``1e-8`` and sorted, ``stats`` counts seeds, candidates and failures.
    """
    re = window.re_min + (np.arange(grid) + 0.5) * (window.re_max - window.re_min) / grid
    im = window.im_min + (np.arange(grid) + 0.5) * (window.im_max - window.im_min) / grid
    seeds = (re[None, :] + 1j * im[:, None]).ravel()
    stats = {"seeds": int(seeds.size), "candidates": 0, "converged": 0, "rejected": {}}
    per_p = {p: ([], [], []) for p in range(1, p_max + 1)}
    for s in seeds:
        if fam.is_degenerate(s):
            continue
        for p in range(1, p_max + 1):
            try:
                Z, W, _, _ = periodic_points(fam, s, p, backend)
            except NoConvergence:
                continue
            ch = _chart_of(Z, W)
            per_p[p][0].extend([s] * Z.size)
            per_p[p][1].extend(_chart_coord(Z, W, ch))
            per_p[p][2].extend(ch)
    found = []
    for p, (L, X, C) in per_p.items():
        if not L:
            continue
        for n in range(1, n_max + 1):
            stats["candidates"] += len(L)
            lam, x, ch, conv = misiurewicz_newton(fam, marked, L, X, C, n, p)
            keep = conv & window.contains(lam)
            stats["converged"] += int(conv.sum())
            lam, x, ch = lam[keep], x[keep], ch[keep]
            # cheap dedupe before certification
            order = np.lexsort((lam.imag, lam.real))
            last = None
            for k in order:
                if last is not None and abs(lam[k] - last) <= DEDUP_DIST:
                    continue
                last = lam[k]
                if any(abs(lam[k] - f.lam0) <= DEDUP_DIST for f in found):
                    continue
                try:
                    found.append(certify_misiurewicz(fam, marked, lam[k], x[k], int(ch[k]), n, p))
                except (NewtonDivergence, AttractingLanding, TangentIntersection) as exc:
                    name = type(exc).__name__
                    stats["rejected"][name] = stats["rejected"].get(name, 0) + 1
    found.sort(key=lambda f: (round(f.lam0.real, 9), round(f.lam0.imag, 9)))
    return found, stats


# ---------------------------------------------------------------------------
# Koenigs coordinates


def _series_iterate(p, q, base, chart, k_iter, order):
    """Taylor series (in the base chart) of ``f^k`` at a point, minus its value.

    ``p, q`` have shape (B, d+1) or (d+1,); ``base`` matching (B,) or scalar.
    """
    y = Series.variable(base, order)
    Zs, Ws = (y, Series(y._lift(1.0))) if chart == 0 else (Series(y._lift(1.0)), y)
    pl = [p[..., k] for k in range(p.shape[-1])]
    ql = [q[..., k] for k in range(q.shape[-1])]
    for _ in range(k_iter):
        Pn = hom_eval(pl, Zs, Ws)
        Qn = hom_eval(ql, Zs, Ws)
        zbig = np.abs(Pn.constant()) >= np.abs(Qn.constant())
        # re-chart each step on the dominant constant term
        a = Pn / Series(np.where(zbig[..., None], Pn.c, Qn.c))
        b = Qn / Series(np.where(zbig[..., None], Pn.c, Qn.c))
        Zs, Ws = a, b
    out = Zs / Ws if chart == 0 else Ws / Zs
    c = out.c.copy()
    c[..., 0] = 0.0
    return c


def koenigs_coefficients(g):
    """Koenigs series ``h`` (``h'(0) = 1``) with ``g(h(t)) = h(rho t)`` from ``g``'s coefficients."""
    g = np.asarray(g, complex)
    K = g.shape[-1] - 1
    rho = g[..., 1]
    h = np.zeros_like(g)
    h[..., 1] = 1.0
    for k in range(2, K + 1):
        hs = Series(h[..., : k + 1])
        acc = np.zeros(rho.shape, complex)
        power = hs
        for m in range(2, k + 1):
            power = power * hs
            acc = acc + g[..., m] * power.c[..., k]
        h[..., k] = acc / (rho ** k - rho)
    return h


def _series_radius(h):
    K = h.shape[-1] - 1
    ks = np.arange(K // 2, K + 1)
    mags = np.abs(h[..., ks])
    with np.errstate(divide="ignore"):
        r = np.where(mags > 0, mags ** (-1.0 / (ks - 1)), np.inf)
    return r.min(axis=-1)


def _y_max(h):
    K = h.shape[-1] - 1
    cK = np.abs(h[..., K])
    with np.errstate(divide="ignore"):
        tail = np.where(cK > 0, (1e-16 / cK) ** (1.0 / (K - 1)), np.inf)
    return np.minimum(np.minimum(0.25 * _series_radius(h), tail), 1.0)


@dataclass(eq=False)
class KoenigsChart:
    """Linearising coordinate ``phi`` of ``f^p`` at a repelling periodic point.

    ``phi(0) = z``, ``phi'(0) = 1`` and ``f^p(phi(x)) = phi(rho x)``.
    ``phi`` is evaluated by pushing a truncated Koenigs series forward:
    ``phi(x) = f^(pN)(psi(s x rho^-N))`` with ``N`` large enough to land in
    the series' accurate range.
    """

    fam: RationalFamily
    orbit: PeriodicOrbit
    rho: complex
    coeffs: np.ndarray
    chart: int
    base: complex
    scale: complex
    y_max: float
    r_lin: float = 0.0
    depth: int = 0
    image_radius: float = 0.0
    defect: float = math.inf

    @property
    def out_chart(self):
        """0 normally; 1 (values in ``u = 1/z``) when the point is at infinity."""
        return 1 if self.chart == 1 and self.base == 0 else 0

    @property
    def z(self):
        """Centre of the chart in output coordinates."""
        return 0j if self.out_chart else self.orbit.z

    def depth_for(self, rmax):
        rmax = float(rmax) * abs(self.scale)
        if rmax <= self.y_max:
            return 0
        return int(math.ceil(math.log(rmax / self.y_max) / math.log(abs(self.rho))))

    def jet(self, x, depth=None):
        """Jet of ``phi`` at ``x`` (array): ``d_z`` slot holds ``phi'(x)``."""
        x = np.asarray(x, complex)
        N = self.depth_for(np.max(np.abs(x), initial=0.0)) if depth is None else depth
        f = self.scale * self.rho ** (-N)
        t = Jet(x * f, np.zeros_like(x), np.full(x.shape, f))
        acc = Jet(np.full(x.shape, self.coeffs[-1]), np.zeros_like(x), np.zeros_like(x))
        for c in self.coeffs[-2::-1]:
            acc = acc * t + c
        u = acc + self.base
        one = Jet(np.ones_like(x), np.zeros_like(x), np.zeros_like(x))
        Zj, Wj = (u, one) if self.chart == 0 else (one, u)
        Zj, Wj = normalize_jets(Zj, Wj)
        Zj, Wj = iterate_jets(self.fam, self.orbit.lam, Zj, Wj, self.orbit.period * N, self._cj)
        return Wj / Zj if self.out_chart else Zj / Wj

    def __call__(self, x, depth=None):
        return self.jet(x, depth).value

    def __post_init__(self):
        self._cj = self.fam.coeff_jets(np.array(self.orbit.lam))

    def functional_defect(self, x):
        """``|f^p(phi(x)) - phi(rho x)| / max(1, |phi(rho x)|)`` at points ``x``."""
        x = np.asarray(x, complex)
        N = self.depth_for(np.max(np.abs(self.rho * x), initial=0.0))
        a = self(x, N)
        b = self(self.rho * x, N)
        fin = np.isfinite(a)
        one = np.ones_like(a)
        a = np.where(fin, a, 1.0)
        Z, W = (one, a) if self.out_chart else (a, one)
        Z, W = normalize(np.where(fin, Z, 1.0), np.where(fin, W, 0.0))
        Z, W = iterate_points(self.fam, self.orbit.lam, Z, W, self.orbit.period)
        fa = _to_chart0(W, Z) if self.out_chart else _to_chart0(Z, W)
        return np.abs(fa - b) / np.maximum(1.0, np.abs(b))


def _disk_mesh(r, n_r=16, n_t=64):
    rad = r * np.arange(1, n_r + 1) / n_r
    th = 2 * np.pi * np.arange(n_t) / n_t
    return (rad[:, None] * np.exp(1j * th)[None, :]).ravel()


def koenigs_build(fam: RationalFamily, orbit: PeriodicOrbit, tol=1e-10, order=KOENIGS_ORDER,
                  r_max=8.0) -> KoenigsChart:
    """Koenigs chart at a repelling periodic point with certified radius ``r_lin``.

    ``r_lin`` is the largest tried radius on which ``Re phi' > 0`` on a polar
    mesh (univalence on the disc) and the functional-equation defect stays
    below ``tol`` on ``|x| <= r_lin / |rho|``.
    """
    if not orbit.is_repelling:
        raise NotRepelling(f"|multiplier| = {abs(orbit.multiplier):.6g} <= 1")
    lam = complex(orbit.lam)
    x, chart = _orbit_state(orbit)
    p, q = fam.coeffs(lam)
    g = _series_iterate(p, q, x, chart, orbit.period, order)
    rho = complex(g[1])
    h = koenigs_coefficients(g)
    if chart == 0:
        scale = 1.0
    elif x != 0:
        scale = -x * x
    else:
        scale = 1.0  # point at infinity: normalised in the u chart
    kc = KoenigsChart(fam, orbit, rho, h, chart, complex(x), complex(scale), float(_y_max(h)))
    r = r_max
    while r > 1e-6:
        mesh = _disk_mesh(r)
        with np.errstate(all="ignore"):
            dphi = kc.jet(mesh).d_z
            ok = np.all(np.isfinite(dphi)) and np.all(dphi.real > 0)
            if ok:
                defect = float(np.max(kc.functional_defect(_disk_mesh(r / abs(rho), 8, 48))))
                ok = defect < tol
        if ok:
            break
        r *= 0.8
    else:
        raise NotRepelling("no linearisation radius found")
    kc.r_lin = r
    kc.defect = defect
    kc.depth = kc.depth_for(r)
    circle = r * np.exp(2j * np.pi * np.arange(256) / 256)
    kc.image_radius = float(np.min(np.abs(kc(circle) - kc.z))) * 0.95
    return kc


def koenigs_invert(chart: KoenigsChart, w, tol=1e-12, strict=None):
    """``x`` with ``phi(x) = w`` on the branch through ``x = 0``.

    ``w`` is in the chart's output coordinates (``1/z`` for a point at
    infinity).  Continuation from ``w = z`` along the segment to ``w`` with Newton
    corrections.  Scalars raise ``OutsideLinearizationDomain`` when ``w`` is
    outside the certified image disc; arrays get NaN there unless ``strict``.
    """
    scalar = np.ndim(w) == 0
    strict = scalar if strict is None else strict
    w = np.atleast_1d(np.asarray(w, complex))
    z = chart.z
    outside = ~(np.abs(w - z) < chart.image_radius)
    if strict and outside.any():
        raise OutsideLinearizationDomain(
            f"|w - z| >= certified image radius {chart.image_radius:.6g}")
    x = np.zeros(w.shape, complex)
    N = chart.depth
    for t in np.linspace(0.1, 1.0, 10):
        target = z + t * (w - z)
        for _ in range(40):
            j = chart.jet(x, N)
            with np.errstate(all="ignore"):
                step = (j.value - target) / j.d_z
            step = np.where(np.isfinite(step), step, 0)
            x = x - step
            if np.all(np.abs(step) <= 1e-16 * (1 + np.abs(x))):
                break
    res = np.abs(chart(x, N) - w)
    bad = outside | (np.abs(x) > chart.r_lin) | ~(res < 1e-10 * max(1.0, abs(z)))
    if strict and bad.any():
        raise OutsideLinearizationDomain("inversion left the linearisation disc")
    x = np.where(bad, np.nan, x)
    return complex(x[0]) if scalar else x


# ---------------------------------------------------------------------------
# renormalisation


class _KoenigsFamily:
    """Koenigs coordinates of the continued cycle for arrays of parameters."""

    def __init__(self, fam, mp: MisiurewiczParam, order=12):
        self.fam = fam
        self.p = mp.orbit.period
        self.order = order
        base_orbit = PeriodicOrbit(mp.lam0, mp.landing, self.p, mp.orbit.multiplier)
        self.x0, self.chart = _orbit_state(base_orbit)
        cj = fam.coeff_jets(np.array(mp.lam0))
        y = cycle_jets(fam, mp.lam0, np.array(self.x0), np.array(self.chart), self.p, cj)
        self.dx0 = complex(y.d_lambda) / (1 - complex(y.d_z))
        self.lam0 = mp.lam0
        self.rho0 = complex(y.d_z)

    def cycle_point(self, lam):
        x = self.x0 + self.dx0 * (lam - self.lam0)
        ch = np.full(lam.shape, self.chart)
        for _ in range(30):
            y = cycle_jets(self.fam, lam, x, ch, self.p)
            step = (y.value - x) / (y.d_z - 1.0)
            x = x - step
            if np.all(np.abs(step) <= 1e-15 * (1 + np.abs(x))):
                break
        return x

    def phi(self, lam, y):
        """``phi_lam(y)`` (chart 0) for parameter and point arrays of equal shape."""
        lam = np.asarray(lam, complex)
        x = self.cycle_point(lam)
        p, q = self.fam.coeffs(lam)
        g = _series_iterate(p, q, x, self.chart, self.p, self.order)
        h = koenigs_coefficients(g)
        rho = g[..., 1]
        scale = 1.0 if self.chart == 0 else -x * x
        ymax = _y_max(h)
        need = np.abs(scale * y)
        with np.errstate(divide="ignore"):
            N = int(np.max(np.ceil(np.log(np.maximum(need / ymax, 1.0)) / np.log(np.abs(rho)))))
        t = scale * y * rho ** (-N)
        acc = h[..., -1]
        for k in range(self.order - 1, -1, -1):
            acc = acc * t + h[..., k]
        u = acc + x
        Z, W = (u, np.ones_like(u)) if self.chart == 0 else (np.ones_like(u), u)
        Z, W = normalize(Z, W)
        pc, qc = p, q
        for _ in range(self.p * N):
            Z, W = normalize(hom_eval([pc[..., k] for k in range(pc.shape[-1])], Z, W),
                             hom_eval([qc[..., k] for k in range(qc.shape[-1])], Z, W))
        return _to_chart0(Z, W)


def _landing_value(fam, marked, lam, n):
    a, b = marked.lift(lam)
    Z, W = normalize(a, b)
    Z, W = iterate_points(fam, lam, Z, W, n)
    return _to_chart0(Z, W)


def renorm_parameters(fam, marked, mp: MisiurewiczParam, y, kf=None, maxiter=40):
    """Parameters ``r(y)`` solving ``f^n(a(lam)) = phi_lam(y)`` (secant method).

    Elements are frozen once converged; raises ``OutsideLinearizationDomain``
    if any element fails.
    """
    kf = kf or _KoenigsFamily(fam, mp)
    shape = np.shape(y)
    y = np.asarray(y, complex).ravel()
    n = mp.n

    def H(lam, yy):
        with np.errstate(all="ignore"):
            return _landing_value(fam, marked, lam, n) - kf.phi(lam, yy)

    l0 = mp.lam0 + y / mp.transversality
    l1 = l0 * (1 + 1e-7) + 1e-9
    h0, h1 = H(l0, y), H(l1, y)
    done = np.abs(h1) <= 1e-14 * (1 + np.abs(y))
    for _ in range(maxiter):
        act = np.nonzero(~done)[0]
        if act.size == 0:
            break
        with np.errstate(all="ignore"):
            step = h1[act] * (l1[act] - l0[act]) / (h1[act] - h0[act])
        step = np.where(np.isfinite(step), step, 0)
        l0[act], h0[act] = l1[act], h1[act]
        l1[act] = l1[act] - step
        h1[act] = H(l1[act], y[act])
        done[act] = (np.abs(h1[act]) <= 1e-14 * (1 + np.abs(y[act]))) | (
            np.abs(step) <= 1e-15 * (1 + np.abs(l1[act])))
    if not np.all(np.abs(h1) < 1e-10 * (1 + np.abs(y))):
        raise OutsideLinearizationDomain("renormalising parameter map did not converge")
    return l1.reshape(shape)


def renorm_sequence(fam, marked, mp: MisiurewiczParam, depth: int, omega: Window, resolution=64,
                    tol=1e-12, backend=None):
    """Rescaled pullbacks ``nu_j = d^(n + j p) (r_j)^* mu`` on the grid of ``omega``.

    ``r_j(x) = r(rho^-j x)`` where ``r`` inverts ``lam -> phi_lam^-1(f^n_lam(a(lam)))``.
    Returns a list of GridMeasures (index ``j = 0..depth``); the list is cut
    short when the pulled-back grid leaves the linearisation domain.
    """
    from .green import potential_at
    from .measure import measure_from_potential

    if abs(mp.transversality) < TANGENT_TOL:
        raise TangentIntersection("renormalisation needs a transverse parameter")
    grid = Grid.over(omega, resolution)
    xs = grid.nodes()
    kf = _KoenigsFamily(fam, mp)
    d = fam.degree
    base = PeriodicOrbit(mp.lam0, mp.landing, mp.orbit.period, kf.rho0)
    kc = koenigs_build(fam, base)
    out = []
    for j in range(depth + 1):
        y = xs * kf.rho0 ** (-j)
        if np.max(np.abs(y)) > kc.r_lin:
            log.warning("depth %d leaves the linearisation disc; sequence capped", j)
            break
        try:
            lam = renorm_parameters(fam, marked, mp, y, kf)
        except OutsideLinearizationDomain:
            log.warning("depth %d: parameter map failed; sequence capped", j)
            break
        k = mp.n + j * mp.orbit.period
        g = potential_at(fam, marked, lam, tol * float(d) ** -k, backend)
        gm = measure_from_potential(g * float(d) ** k, grid)
        out.append(gm)
    return out


def pullback_sample_masses(kc: KoenigsChart, sample, grid: Grid):
    """Node-centred box masses of ``phi^* mu`` from equilibrium-measure samples.

    Sample points inside the certified image disc are pulled back through
    the chart; the masked boundary ring of the grid gets no mass.
    """
    pts = sample.points
    near = np.abs(pts - kc.z) < kc.image_radius
    x = koenigs_invert(kc, pts[near])
    x = x[np.isfinite(x)]
    j = np.rint((x.real - grid.window.re_min) / grid.h).astype(int)
    i = np.rint((x.imag - grid.window.im_min) / grid.h).astype(int)
    keep = (i >= 2) & (i < grid.ny - 2) & (j >= 2) & (j < grid.nx - 2)
    counts = np.zeros(grid.shape)
    np.add.at(counts, (i[keep], j[keep]), 1.0)
    return counts / len(sample)


def similarity_study(fam, marked, mp: MisiurewiczParam, depth: int, omega: Window, resolution=64,
                     samples=100_000, seed=0, backend=None):
    """Renormalised measures against the pulled-back equilibrium-measure oracle.

    Returns ``(sequence, report)`` where the report holds rescaled masses,
    consecutive-depth correlations and correlations with the oracle.
    """
    from .measure import compare_measures, mes_sample

    seq = renorm_sequence(fam, marked, mp, depth, omega, resolution, backend=backend)
    report = {"depths": len(seq), "masses": [m.total_mass for m in seq], "consecutive": [],
              "oracle": [], "oracle_mass": math.nan}
    for a, b in zip(seq, seq[1:]):
        report["consecutive"].append(compare_measures(a.cell_mass.ravel(), b.cell_mass.ravel()))
    if seq:
        kf = _KoenigsFamily(fam, mp)
        kc = koenigs_build(fam, PeriodicOrbit(mp.lam0, mp.landing, mp.orbit.period, kf.rho0))
        sample = mes_sample(fam, mp.lam0, samples, seed=seed, backend=backend)
        oracle = pullback_sample_masses(kc, sample, seq[0].grid)
        report["oracle_mass"] = float(oracle.sum())
        for m in seq:
            report["oracle"].append(compare_measures(m.cell_mass.ravel(), oracle.ravel()))
    return seq, report

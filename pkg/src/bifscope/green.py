"""Escape-rate Green functions of lifts and the bifurcation potential."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateParameter
from .family import MarkedPoint, RationalFamily, SpherePoint
from .grid import Grid, Window
from .numerics.forms import green_iterate, tail_constant

DEFAULT_TOL = 1e-9
MAX_ITER = 200
CHUNK = 1 << 16


@dataclass(frozen=True)
class GreenValue:
    value: float
    truncation_bound: float
    iterations_used: int
    tail_constant: float = math.nan


def iterations_for(C, d, tol, cap=MAX_ITER):
    """Smallest ``n`` with ``C * d**-n < tol`` (clipped to ``[1, cap]``)."""
    C = np.asarray(C, float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        n = np.ceil(np.log(np.maximum(C, 1e-300) / tol) / math.log(d))
    n = np.where(np.isfinite(n), n, cap)
    return np.clip(n, 1, cap).astype(np.int64)


def _as_pair(v):
    if isinstance(v, SpherePoint):
        return complex(v.Z), complex(v.W)
    Z, W = v
    return complex(Z), complex(W)


def green_lift(fam: RationalFamily, lam, v, tol=DEFAULT_TOL, n=None, backend=None) -> GreenValue:
    """``G_lam(v) = lim d^-n log |F^n(v)|`` with a rigorous tail bound.

    ``v`` is any nonzero lift (a pair or a SpherePoint); ``G(s v) = G(v) +
    log|s|``.  Pass ``n`` to force the number of iterations.
    """
    lam = complex(lam)
    if fam.is_degenerate(lam):
        raise DegenerateParameter(f"lift degenerates at lambda={lam}")
    Z, W = _as_pair(v)
    norm = max(abs(Z), abs(W))
    if norm == 0:
        raise ValueError("zero vector is not a lift of a point")
    p, q = fam.coeffs(np.array([lam]))
    C, _ = tail_constant(p, q, backend)
    d = fam.degree
    steps = int(iterations_for(C, d, tol)[0]) if n is None else int(n)
    g = green_iterate(p, q, np.array([Z / norm]), np.array([W / norm]), np.array([steps]), backend)
    return GreenValue(float(g[0] + math.log(norm)), float(C[0] * d ** -float(steps)), steps, float(C[0]))


def potential_at(fam: RationalFamily, marked: MarkedPoint, lam, tol=DEFAULT_TOL, backend=None,
                 return_info=False):
    """Bifurcation potential ``g(lam) = G_lam(a~(lam))`` on an array of parameters.

    Degenerate parameters (and lifts of the marked point that vanish) give
    NaN.  With ``return_info`` also returns the iteration counts and bounds.
    """
    lam = np.asarray(lam, complex)
    shape = lam.shape
    flat = lam.ravel()
    g = np.full(flat.size, np.nan)
    nsteps = np.zeros(flat.size, np.int64)
    bound = np.full(flat.size, np.inf)
    d = fam.degree
    for s in range(0, flat.size, CHUNK):
        sl = slice(s, min(s + CHUNK, flat.size))
        lc = flat[sl]
        p, q = fam.coeffs(lc)
        a, b = marked.lift(lc)
        norm = np.maximum(np.abs(a), np.abs(b))
        good = ~fam.is_degenerate(lc) & (norm > 0)
        C, _ = tail_constant(p, q, backend)
        good &= np.isfinite(C)
        n = iterations_for(C, d, tol)
        with np.errstate(divide="ignore", invalid="ignore"):
            Z0 = np.where(good, a / norm, 1.0)
            W0 = np.where(good, b / norm, 0.0)
        n = np.where(good, n, 0)
        vals = green_iterate(p, q, Z0, W0, n, backend)
        with np.errstate(divide="ignore"):
            vals = vals + np.log(norm)
        g[sl] = np.where(good, vals, np.nan)
        nsteps[sl] = n
        bound[sl] = np.where(good, C * float(d) ** -n.astype(float), np.inf)
    if return_info:
        return g.reshape(shape), nsteps.reshape(shape), bound.reshape(shape)
    return g.reshape(shape)


def bif_potential_grid(fam, marked, window: Window, resolution: int, tol=DEFAULT_TOL, backend=None):
    """Potential on the node grid of ``window``; returns ``(g, grid)``.

    Non-finite entries flag degenerate nodes.
    """
    grid = Grid.over(window, resolution)
    return potential_at(fam, marked, grid.nodes(), tol, backend), grid

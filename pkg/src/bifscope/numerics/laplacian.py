"""Discrete dd^c of grid potentials.

Normalisation: a cell mass is ``h^2 * Laplacian(g) / 2pi``, which is the raw
stencil sum divided by 2pi (no division by ``h^2``).  The masses of
``log|lambda - lambda0|`` therefore sum to 1 over any box around ``lambda0``.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import NonFinitePotential

TWO_PI = 2.0 * math.pi


def laplacian_cell_mass(g, i, j, h=None):
    """Five-point mass of interior cell ``(i, j)`` (row, column).

    ``h`` is accepted for interface symmetry; the normalised mass is
    independent of the spacing.
    """
    g = np.asarray(g)
    if not (0 < i < g.shape[0] - 1 and 0 < j < g.shape[1] - 1):
        raise IndexError("cell must be interior")
    vals = (g[i + 1, j], g[i - 1, j], g[i, j + 1], g[i, j - 1], g[i, j])
    if not all(math.isfinite(v) for v in vals):
        raise NonFinitePotential(f"non-finite potential around cell ({i}, {j})")
    return (vals[0] + vals[1] + vals[2] + vals[3] - 4.0 * vals[4]) / TWO_PI


def laplacian_grid(g, stencil=9):
    """Masses of all interior cells; result has shape ``(ny-2, nx-2)``.

    ``stencil=9`` is the compact (Mehrstellen) stencil, whose truncation
    error on harmonic potentials is O(h^6) instead of O(h^4).  Cells whose
    stencil touches a non-finite node come out as NaN.
    """
    g = np.asarray(g, dtype=float)
    c = g[1:-1, 1:-1]
    edge = g[2:, 1:-1] + g[:-2, 1:-1] + g[1:-1, 2:] + g[1:-1, :-2]
    if stencil == 5:
        m = edge - 4.0 * c
    elif stencil == 9:
        corner = g[2:, 2:] + g[:-2, :-2] + g[2:, :-2] + g[:-2, 2:]
        m = (4.0 * edge + corner - 20.0 * c) / 6.0
    else:
        raise ValueError("stencil must be 5 or 9")
    return m / TWO_PI


def boundary_flux(g, stencil=9):
    """Discrete outward flux (/2pi) through the ring one cell inside the grid.

    Equals ``laplacian_grid(g).sum()`` up to rounding (summation by parts);
    used as a consistency check, not as an oracle.
    """
    return float(np.nansum(laplacian_grid(g, stencil)))

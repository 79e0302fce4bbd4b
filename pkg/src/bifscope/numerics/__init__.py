"""Shared numeric kernels: jets, polynomial roots, Laplacian stencils."""
from .jet import Jet, jet_finite_diff_check
from .laplacian import laplacian_cell_mass, laplacian_grid
from .roots import PolyC, aberth_batch, horner, root_clusters, roots_aberth

__all__ = [
    "Jet",
    "PolyC",
    "aberth_batch",
    "horner",
    "jet_finite_diff_check",
    "laplacian_cell_mass",
    "laplacian_grid",
    "root_clusters",
    "roots_aberth",
]

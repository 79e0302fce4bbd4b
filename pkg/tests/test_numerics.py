import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bifscope.errors import NonFinitePotential
from bifscope.family import build_family, orbit_jet
from bifscope.numerics.jet import Jet, jet_finite_diff_check
from bifscope.numerics.laplacian import boundary_flux, laplacian_cell_mass, laplacian_grid
from bifscope.numerics.roots import PolyC, aberth_batch, horner, root_clusters, roots_aberth
from bifscope.numerics.series import Series


def _sorted(r):
    return np.array(sorted(r, key=lambda w: (round(w.real, 8), round(w.imag, 8))))


# roots ----------------------------------------------------------------------


def test_roots_examples(backend):
    assert np.allclose(_sorted(roots_aberth([-1, 0, 1], backend=backend)), [-1, 1])
    assert np.allclose(_sorted(roots_aberth([0, -2, 1], backend=backend)), [0, 2], atol=1e-12)
    r = roots_aberth([-1, 0, 0, 1], backend=backend)
    d = np.abs(r[:, None] - r[None, :])
    assert np.allclose(d[~np.eye(3, dtype=bool)], math.sqrt(3), atol=1e-10)


def test_polyc_strips_tiny_leading():
    p = PolyC([1, 2, 1e-20])
    assert p.degree == 1


def test_multiple_root_cluster():
    r = roots_aberth(np.poly([0.5, 0.5, 0.5, -1])[::-1])
    centres, mult = root_clusters(r, 1e-4)
    assert sorted(mult.tolist()) == [1, 3]
    assert np.min(np.abs(centres - 0.5)) < 1e-4


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_aberth_reconstructs(n, seed):
    rng = np.random.default_rng(seed)
    rho = np.sqrt(rng.random(n)) * np.exp(2j * np.pi * rng.random(n))
    coef = np.poly(rho)[::-1]
    r = roots_aberth(coef)
    rebuilt = np.poly(r)[::-1]
    assert np.max(np.abs(rebuilt - coef)) <= 1e-8 * np.max(np.abs(coef))


def test_backends_agree():
    rng = np.random.default_rng(3)
    coef = rng.normal(size=(50, 7)) + 1j * rng.normal(size=(50, 7))
    deg = np.full(50, 6)
    a, ia = aberth_batch(coef, deg, backend="numba")
    b, ib = aberth_batch(coef, deg, backend="numpy")
    assert (ia >= 0).all() and (ib >= 0).all()
    for ra, rb in zip(a, b):
        assert np.allclose(_sorted(ra), _sorted(rb), atol=1e-10)


def test_horner():
    assert horner(np.array([1, 2, 3], complex), 2.0) == 1 + 4 + 12


# laplacian --------------------------------------------------------------------


def _grid(n=41, half=1.0):
    x = np.linspace(-half, half, n)
    return x[None, :] + 1j * x[:, None], x[1] - x[0]


def test_harmonic_gives_zero():
    lam, _ = _grid()
    g = (lam ** 2).real
    assert abs(laplacian_cell_mass(g, 10, 12)) < 1e-12 * np.abs(g).max()
    assert np.max(np.abs(laplacian_grid(g, 5))) < 1e-12 * np.abs(g).max()
    assert np.max(np.abs(laplacian_grid(g, 9))) < 1e-12 * np.abs(g).max()


def test_quadratic_mass():
    lam, h = _grid()
    g = np.abs(lam) ** 2
    assert laplacian_cell_mass(g, 5, 7, h) == pytest.approx(4 * h * h / (2 * math.pi), rel=1e-9)


@pytest.mark.parametrize("stencil", [5, 9])
def test_log_total_mass(stencil):
    lam, _ = _grid(64)  # even size: 0 is not a node
    g = np.log(np.abs(lam - 0.01j))
    m = laplacian_grid(g, stencil)
    for k in (5, 15, 25):
        assert m[k:-k, k:-k].sum() == pytest.approx(1.0, abs=0.01)
    assert boundary_flux(g, stencil) == pytest.approx(1.0, abs=0.01)


def test_linearity_under_harmonic_addition():
    lam, _ = _grid()
    g = np.log(np.abs(lam - 0.3)) + np.abs(lam) ** 2
    p = (3 * lam ** 3 - lam + 2j).imag
    diff = laplacian_grid(g + p, 5) - laplacian_grid(g, 5)
    assert np.max(np.abs(diff)) < 1e-10 * np.abs(p).max()


def test_nonfinite_cell():
    g = np.zeros((3, 3))
    g[0, 1] = np.nan
    with pytest.raises(NonFinitePotential):
        laplacian_cell_mass(g, 1, 1)
    assert np.isnan(laplacian_grid(g)[0, 0])


# jets -----------------------------------------------------------------------------


def test_jet_square():
    assert jet_finite_diff_check(lambda x: x * x, 1 + 1j) < 1e-8


def test_jet_constant():
    assert jet_finite_diff_check(lambda x: Jet.constant(3.0), 0.2) == 0


def test_jet_quadratic_orbit():
    fam, marked = build_family("z^2+c", "c")

    def f3(lam):
        z = lam
        for _ in range(3):
            z = z * z + lam
        return z

    assert jet_finite_diff_check(f3, 0.1) < 1e-6
    j = orbit_jet(fam, marked, 0.1, 3)
    want = f3(Jet.variable_lambda(0.1))
    assert abs(j.value - want.value) < 1e-12
    assert abs(j.d_lambda - want.d_lambda) < 1e-12


def test_jet_rules():
    a = Jet(2.0 + 1j, 1.0, 0.5)
    b = Jet(-1.0, 0.25j, 2.0)
    q = a / b
    assert q.d_lambda == pytest.approx((a.d_lambda * b.value - a.value * b.d_lambda) / b.value ** 2)
    p = a ** 3
    assert p.d_z == pytest.approx(3 * a.value ** 2 * a.d_z)


@pytest.mark.parametrize("h", [1e-2, 1e-3])
def test_jet_central_difference_rate(h):
    f = lambda x: x ** 3 / (1 + x)  # noqa: E731
    err = jet_finite_diff_check(f, 0.7 + 0.2j, h=h)
    assert err < 10 * h * h


# series ---------------------------------------------------------------------------


def test_series_division_and_power():
    x = Series.variable(0.0, 8)
    geo = 1 / (1 - x)
    assert np.allclose(geo.c, np.ones(9))
    sq = (1 + x) ** 2
    assert np.allclose(sq.c[:3], [1, 2, 1]) and np.allclose(sq.c[3:], 0)
    assert geo(0.1) == pytest.approx(sum(0.1 ** k for k in range(9)))

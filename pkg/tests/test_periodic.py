import math

import numpy as np
import pytest

from bifscope.errors import NewtonDivergence, NotRepelling, OutsideLinearizationDomain
from bifscope.grid import Window
from bifscope.periodic import (continue_cycle, cycle_jets, cycle_path, find_cycles, koenigs_build,
                               koenigs_invert, misiurewicz_scan, renorm_sequence, solve_misiurewicz,
                               _orbit_state)


def _fixed(fam, lam, z):
    return next(o for o in find_cycles(fam, lam, 1) if abs(o.z - z) < 1e-9)


def test_fixed_points_of_square(square):
    cycles = find_cycles(square[0], 0, 1)
    got = {(complex(o.z), complex(o.multiplier)) for o in cycles}
    assert len(cycles) == 3
    assert any(abs(z - 1) < 1e-12 and abs(r - 2) < 1e-12 for z, r in got)
    assert any(z == 0 and r == 0 for z, r in got)
    assert any(math.isinf(abs(z)) for z, _ in got)


def test_fixed_points_of_chebyshev(cheb):
    cycles = find_cycles(cheb[0], 0, 1)
    m = {round(o.z.real, 9): o.multiplier for o in cycles if math.isfinite(abs(o.z))}
    assert m[2.0] == pytest.approx(4) and m[-1.0] == pytest.approx(-2)


def test_two_cycle_of_square(square):
    c2 = [o for o in find_cycles(square[0], 0, 2) if o.period == 2]
    assert len(c2) == 1
    assert sorted(np.angle(c2[0].points)) == pytest.approx([-2 * math.pi / 3, 2 * math.pi / 3])
    assert c2[0].multiplier == pytest.approx(4)


def test_cycle_counts(quad):
    # exact-period cycle counts of a quadratic map, infinity included
    cycles = find_cycles(quad[0], 0.1 + 0.2j, 6)
    counts = [sum(o.period == p for o in cycles) for p in range(1, 7)]
    assert counts == [3, 1, 2, 3, 6, 9]


def test_continue_beta(quad):
    fam, _ = quad
    beta = _fixed(fam, 0, 1)
    o = continue_cycle(fam, beta, -2)
    assert o.z == pytest.approx(2, abs=1e-12) and o.multiplier == pytest.approx(4, abs=1e-9)
    assert continue_cycle(fam, beta, 0).z == beta.z
    for lam in (0.2 + 0.3j, -1.1 - 0.4j):
        o = continue_cycle(fam, beta, lam)
        assert o.z == pytest.approx((1 + np.sqrt(1 - 4 * lam)) / 2, abs=1e-12)


def test_multiplier_along_path(lattes):
    fam, _ = lattes
    start = max(find_cycles(fam, 0.3 + 0.1j, 2, periods=[2]), key=lambda o: abs(o.multiplier))
    for o in cycle_path(fam, start, 0.4 + 0.25j, steps=8):
        x, chart = _orbit_state(o)
        rho = complex(cycle_jets(fam, o.lam, np.array(x), np.array(chart), 2).d_z)
        assert abs(rho - o.multiplier) < 1e-9 * max(1, abs(rho))


def test_misiurewicz_at_minus_two(quad):
    fam, marked = quad
    mp = solve_misiurewicz(fam, marked, -1.8, 1, 1)
    assert mp.lam0 == pytest.approx(-2, abs=1e-12)
    assert mp.landing == pytest.approx(2, abs=1e-12)
    assert mp.orbit.multiplier == pytest.approx(4, abs=1e-9)
    assert mp.transversality == pytest.approx(-8 / 3, abs=1e-9)


def test_transversality_finite_difference(quad):
    # d/dlam of f_lam(a(lam)) - beta(lam) at -2
    beta = lambda lam: (1 + np.sqrt(1 - 4 * lam + 0j)) / 2
    T = lambda lam: lam * lam + lam - beta(lam)
    h = 1e-6
    assert (T(-2 + h) - T(-2 - h)) / (2 * h) == pytest.approx(-8 / 3, abs=1e-7)


def test_misiurewicz_far_seed(quad):
    fam, marked = quad
    try:
        mp = solve_misiurewicz(fam, marked, 0.1, 1, 1)
    except NewtonDivergence:
        return
    # convergence is only acceptable with a full certificate
    assert abs(mp.orbit.multiplier) > 1 and abs(mp.transversality) > 0 and mp.residual < 1e-10


def test_scan_finds_minus_two_and_i(quad):
    fam, marked = quad
    params, stats = misiurewicz_scan(fam, marked, Window(-2.5, 1.5, -2, 2), 6, 3, 20)
    lams = np.array([p.lam0 for p in params])
    assert np.min(np.abs(lams + 2)) < 1e-9
    assert np.min(np.abs(lams - 1j)) < 1e-9
    k = int(np.argmin(np.abs(lams - 1j)))
    assert params[k].p == 2 and abs(params[k].orbit.multiplier) == pytest.approx(4 * math.sqrt(2))
    assert stats["seeds"] == 400


def test_two_cycle_of_c_equals_i():
    c = 1j
    a, b = c - 1, -1j
    assert a * a + c == pytest.approx(b) and b * b + c == pytest.approx(a)
    assert abs(4 * a * b) == pytest.approx(4 * math.sqrt(2))


def test_scan_empty_in_stable_interior(quad):
    params, _ = misiurewicz_scan(quad[0], quad[1], Window(-0.3, 0.1, -0.2, 0.2), 4, 2, 5)
    assert params == []


def test_koenigs_square(square):
    fam, _ = square
    kc = koenigs_build(fam, _fixed(fam, 0, 1))
    x = 0.5 * np.exp(2j * np.pi * np.arange(32) / 32) * np.linspace(0.1, 1, 32)
    assert np.max(np.abs(kc(x) - np.exp(x))) < 1e-10
    assert np.max(kc.functional_defect(x)) < 1e-10
    assert kc(np.array([0.0]))[0] == pytest.approx(1)
    h = 1e-6
    assert (kc(np.array([h]))[0] - 1) / h == pytest.approx(1, abs=1e-5)
    assert koenigs_invert(kc, math.exp(0.3)) == pytest.approx(0.3, abs=1e-9)
    assert koenigs_invert(kc, 1.0) == pytest.approx(0, abs=1e-12)


def test_koenigs_lattes_round_trip(lattes):
    fam, _ = lattes
    rng = np.random.default_rng(0)
    for o in find_cycles(fam, 0.3 + 0.1j, 1):
        if not o.is_repelling:
            continue
        kc = koenigs_build(fam, o)
        assert kc.defect < 1e-8
        # keep only x whose image lies in the certified inversion disc
        x = 0.5 * kc.r_lin * np.sqrt(rng.random(400)) * np.exp(2j * np.pi * rng.random(400))
        w = kc(x)
        x = x[np.abs(w - kc.z) < kc.image_radius][:100]
        assert x.size >= 50
        back = koenigs_invert(kc, kc(x))
        assert np.max(np.abs(back - x)) < 1e-9


def test_koenigs_errors(square):
    fam, _ = square
    zero = next(o for o in find_cycles(fam, 0, 1) if o.z == 0)
    with pytest.raises(NotRepelling):
        koenigs_build(fam, zero)
    kc = koenigs_build(fam, _fixed(fam, 0, 1))
    with pytest.raises(OutsideLinearizationDomain):
        koenigs_invert(kc, 1e6)


def test_renorm_masses_bounded(quad):
    fam, marked = quad
    mp = solve_misiurewicz(fam, marked, -1.8, 1, 1)
    h = 1.25 / 31
    omega = Window(-1, 0.25, -16 * h, 15 * h)
    seq = renorm_sequence(fam, marked, mp, 3, omega, resolution=32)
    masses = [m.total_mass for m in seq]
    assert len(seq) == 4
    assert max(masses) / min(masses) < 2

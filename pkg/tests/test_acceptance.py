"""Exit criteria.  Each test records a pass/fail line printed at the end of the run."""
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from bifscope.exponents import jstability_scan, lattes_test, lyapunov, noise_floor
from bifscope.expr import parse
from bifscope.errors import ExprSyntaxError
from bifscope.family import build_family
from bifscope.grid import Window
from bifscope.measure import (bif_measure, box_masses, box_tiling, flux_oracle, mass_area_slope,
                              mes_sample, push_forward, support_fraction)
from bifscope.periodic import (find_cycles, koenigs_build, koenigs_invert, misiurewicz_scan,
                               similarity_study, solve_misiurewicz)

from conftest import LATTES

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

LOG2 = math.log(2)
QUAD_WINDOW = Window(-2.5, 1.5, -2.0, 2.0)
LATTES_WINDOW = Window(0.2, 0.45, 0.05, 0.3)

_estimates = []


def _lyap(fam, lam, **kw):
    est = lyapunov(fam, lam, **kw)
    _estimates.append((fam.degree, est))
    return est


@pytest.fixture(scope="module")
def quad_measure_512(quad):
    return bif_measure(*quad, QUAD_WINDOW, 512)


# 1 ------------------------------------------------------------------------


def test_c1_lyapunov_values(square, cheb, criterion):
    e2 = _lyap(square[0], 0, samples=100_000, seed=0)
    ok_sq = abs(e2.L - LOG2) <= 3 * e2.std_err + 1e-12 and e2.std_err < 2e-3
    ec = _lyap(cheb[0], 0, samples=100_000, seed=0)
    ok_ch = abs(ec.L - LOG2) <= 1e-2
    criterion(1, ok_sq and ok_ch,
              f"L(z^2)-log2={e2.L - LOG2:.2e} se={e2.std_err:.1e}; L(z^2-2)-log2={ec.L - LOG2:.2e}")
    assert ok_sq and ok_ch


# 2 ------------------------------------------------------------------------


def test_c2_lattes_equivalence(lattes, criterion):
    fam, marked = lattes
    rng = np.random.Generator(np.random.Philox(2))
    lams = LATTES_WINDOW.re_min + rng.random(5) * 0.25 + 1j * (LATTES_WINDOW.im_min + rng.random(5) * 0.25)
    tests = [lattes_test(fam, lam, estimate=_lyap(fam, lam, samples=400_000, seed=0, per_chain=100))
             for lam in lams]
    gaps = [abs(t["gap"]) for t in tests]
    m = bif_measure(fam, marked, LATTES_WINDOW, 256)
    sf = support_fraction(m)
    slope = mass_area_slope(m)
    ok = all(t["is_lattes_consistent"] and abs(t["gap"]) < 5e-3 for t in tests) and sf > 0.95 and 0.8 <= slope <= 1.2
    criterion(2, ok, f"Lattes max|gap|={max(gaps):.1e} support={sf:.3f} slope={slope:.3f}")
    assert ok


def test_c2_quadratic_control(quad, quad_measure_512, criterion):
    fam, _ = quad
    t = lattes_test(fam, 0.3, estimate=_lyap(fam, 0.3, samples=100_000, seed=0))
    t_cheb = lattes_test(fam, -2, estimate=_lyap(fam, -2, samples=100_000, seed=0))
    sf = support_fraction(quad_measure_512)
    slope = mass_area_slope(quad_measure_512)
    ok = (not t["is_lattes_consistent"] and not t_cheb["is_lattes_consistent"]
          and abs(t_cheb["gap"] - 0.5 * LOG2) < 1e-2 and sf < 0.2 and not 0.8 <= slope <= 1.2)
    criterion(2, ok, f"control gap={t_cheb['gap']:.4f} support={sf:.4f} slope={slope:.3f}")
    assert ok


# 3 ------------------------------------------------------------------------


def test_c3_normalization(quad, criterion):
    fam, marked = quad
    t0 = time.perf_counter()
    m = bif_measure(fam, marked, QUAD_WINDOW, 1024)
    elapsed = time.perf_counter() - t0
    flux = flux_oracle(fam, marked, QUAD_WINDOW)
    ok = abs(m.total_mass - 1) <= 0.05 and abs(m.total_mass - flux) <= 0.02 and m.clipped_fraction < 0.01
    criterion(3, ok, f"mass={m.total_mass:.4f} flux={flux:.5f} clipped={m.clipped_fraction:.2%} "
                     f"time={elapsed:.1f}s")
    assert ok


# 4 ------------------------------------------------------------------------


def test_c4_misiurewicz(quad, quad_measure_512, criterion):
    fam, marked = quad
    mp = solve_misiurewicz(fam, marked, -1.8, 1, 1)
    ok1 = (abs(mp.lam0 + 2) < 1e-10 and mp.residual < 1e-10 and mp.p == 1
           and abs(mp.orbit.multiplier - 4) < 1e-9 and abs(mp.transversality + 8 / 3) < 1e-6)
    params, _ = misiurewicz_scan(fam, marked, QUAD_WINDOW, n_max=6, p_max=3, grid=20)
    m = quad_measure_512
    sup = m.cell_mass > 0
    i, j = m.grid.locate(np.array([p.lam0 for p in params]))
    near = [sup[max(a - 2, 0):a + 3, max(b - 2, 0):b + 3].any() for a, b in zip(i, j)]
    ok2 = len(params) >= 10 and all(near)
    criterion(4, ok1 and ok2, f"lam0={mp.lam0:.12f} T={mp.transversality:.9f} scan={len(params)} "
                              f"near-support={sum(near)}/{len(near)}")
    assert ok1 and ok2


# 5 ------------------------------------------------------------------------


def _charts(square, cheb, lattes, quad):
    charts = []
    for (fam, _), lam, z in [(square, 0, 1), (cheb, 0, 2), (quad, -2, 2)]:
        orbit = [o for o in find_cycles(fam, lam, 1) if abs(o.z - z) < 1e-9][0]
        charts.append(koenigs_build(fam, orbit))
    for o in find_cycles(lattes[0], 0.3 + 0.1j, 1):
        if o.is_repelling:
            charts.append(koenigs_build(lattes[0], o))
    return charts


def test_c5_koenigs(square, cheb, lattes, quad, criterion):
    charts = _charts(square, cheb, lattes, quad)
    r = 0.5 * np.exp(2j * np.pi * np.arange(64) / 64)
    x = np.concatenate([r, 0.5 * r, 0.1 * r])
    exp_err = float(np.max(np.abs(charts[0](x) - np.exp(x))))
    defect = max(c.defect for c in charts)
    trip = 0.0
    for c in charts:
        xs = 0.5 * c.r_lin * np.exp(2j * np.pi * np.arange(32) / 32)
        trip = max(trip, float(np.max(np.abs(koenigs_invert(c, c(xs)) - xs))))
    ok = exp_err < 1e-8 and defect < 1e-8 and trip < 1e-9
    criterion(5, ok, f"|phi-exp|={exp_err:.1e} defect={defect:.1e} roundtrip={trip:.1e} charts={len(charts)}")
    assert ok


# 6 ------------------------------------------------------------------------


def test_c6_similarity(quad, criterion):
    fam, marked = quad
    mp = solve_misiurewicz(fam, marked, -1.8, 1, 1)
    res = 64
    h = 1.25 / (res - 1)
    omega = Window(-1.0, 0.25, -32 * h, 31 * h)
    seq, rep = similarity_study(fam, marked, mp, 4, omega, res, samples=100_000, seed=0)
    cons = [c["correlation"] for c in rep["consecutive"]]
    orc = [c["correlation"] for c in rep["oracle"]]
    masses = rep["masses"]
    ok = (len(seq) == 5 and min(cons) >= 0.8 and all(b >= a for a, b in zip(orc, orc[1:]))
          and max(masses) <= 2 * min(masses))
    criterion(6, ok, "consecutive=" + ",".join(f"{c:.3f}" for c in cons)
              + " oracle=" + ",".join(f"{c:.3f}" for c in orc)
              + f" masses={min(masses):.3f}..{max(masses):.3f}")
    assert ok


# 7 ------------------------------------------------------------------------


def _segment_distance(z):
    x = np.clip(z.real, -2, 2)
    return np.hypot(z.real - x, z.imag)


def test_c7_isotrivial(cheb, criterion):
    fam, marked = cheb
    m = bif_measure(fam, marked, Window(-2.5, 2.5, -2.5, 2.5), 512)
    nodes = m.grid.nodes()
    dist = _segment_distance(nodes)
    sup = m.support
    support_cells = float(dist[sup].max() / m.grid.h)
    outside = m.cell_mass[dist > 0.05]
    ok = support_cells <= 2 and outside.sum() < 1e-8
    criterion(7, ok, f"support within {support_cells:.2f} cells; mass outside={outside.sum():.1e} "
                     f"(max cell {outside.max():.1e})")
    assert ok


# 8 ------------------------------------------------------------------------


_scans = {}


def _scan_pair(fam, window, res, samples=2000):
    key = (fam.source, window, res, samples)
    if key not in _scans:
        _scans[key] = _scan_pair_uncached(fam, window, res, samples)
    return _scans[key]


def _scan_pair_uncached(fam, window, res, samples):
    a = jstability_scan(fam, window, res, samples, seed=0)
    b = jstability_scan(fam, window, res, samples, seed=1)
    return a, noise_floor(a, b)


def _in_main_cardioid(lam, margin=0.02):
    # cardioid interior: |1 - sqrt(1 - 4c)| < 1
    w = np.sqrt(1 - 4 * lam)
    return np.abs(1 - w) < 1 - margin


def test_c8_cardioid_harmonic(quad, criterion):
    a, floor = _scan_pair(quad[0], Window(-1.0, -0.5, -0.25, 0.25), 21)
    inner = a.grid.interior_nodes()
    h = a.grid.h
    # a cell is inside when its whole 5-point stencil is
    inside = np.ones(inner.shape, bool)
    for s in (0, h, -h, 1j * h, -1j * h):
        inside &= _in_main_cardioid(inner + s)
    ratio = float(a.defect[inside].max() / floor)
    ok = ratio <= 3
    criterion(8, ok, f"cardioid max defect/floor={ratio:.2f} over {int(inside.sum())} cells")
    assert ok


def test_c8_tangency_row(quad, criterion):
    a, floor = _scan_pair(quad[0], Window(-1.0, -0.5, -0.25, 0.25), 21)
    i, j = a.grid.locate(-0.75)
    row = a.defect[i - 1]
    k = j - 1
    ok = row[k] >= row[k - 1] and row[k] >= row[k + 1]
    criterion(8, ok, f"row at Im=0: defect/floor near -0.75 = "
                     + ",".join(f"{v / floor:.3f}" for v in row[k - 2:k + 3]))
    assert ok


def test_c8_lattes_flat(lattes, criterion):
    a, floor = _scan_pair(lattes[0], LATTES_WINDOW, 11)
    ratio = float(np.nanmax(a.defect) / floor)
    spread = float(np.nanmax(a.L) - np.nanmin(a.L))
    ok = ratio <= 3
    criterion(8, ok, f"Lattes max defect/floor={ratio:.2f}, L spread={spread:.1e}")
    assert ok


# 9 ------------------------------------------------------------------------


@pytest.mark.parametrize("name,window", [
    ("z^2", Window(-1.2, 1.2, -1.2, 1.2)),
    # box edges kept off the real segment carrying the whole measure
    ("z^2-2", Window(-2.2, 2.2, -0.3, 0.5)),
    (LATTES, Window(-2.0, 2.0, -2.0, 2.0)),
])
def test_c9_invariance(name, window, criterion):
    fam, _ = build_family(name, "2" if name == LATTES else "c")
    lam = 0.3 + 0.1j if name == LATTES else 0
    s = mes_sample(fam, lam, 100_000, seed=0)
    t = push_forward(fam, s)
    boxes = box_tiling(window, 4, 4)
    a = np.array(box_masses(s, boxes))
    b = np.array(box_masses(t, boxes))
    # standard error of the difference of the two empirical frequencies
    sigma = np.sqrt(np.maximum(a * (1 - a) + b * (1 - b), 1e-12) / len(s))
    z = float(np.max(np.abs(a - b) / sigma))
    ok = z <= 3
    criterion(9, ok, f"{name[:10]}: max |dm|/sigma={z:.2f}")
    assert ok


# 10 -----------------------------------------------------------------------


def test_c10_cli_determinism(tmp_path, criterion):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        cmd = [sys.executable, "-m", "bifscope.cli", "bifmeasure", "--map", "z^2+c", "--marked", "c",
               "--window", "-2.5,1.5,-2,2", "--res", "96", "--threads", "1", "--out", "run"]
        d.mkdir()
        subprocess.run(cmd, cwd=d, check=True)
        cmd = [sys.executable, "-m", "bifscope.cli", "julia", "--map", "z^2-1", "--marked", "c",
               "--lam", "0", "--samples", "3000", "--res", "32", "--threads", "1", "--out", "run"]
        subprocess.run(cmd, cwd=d, check=True)
        outs.append({p.name: p.read_bytes() for p in sorted((d / "run").iterdir())})
    ok = outs[0] == outs[1] and len(outs[0]) >= 8
    criterion(10, ok, f"{len(outs[0])} files byte-identical")
    assert ok


def test_c10_golden_formats(tmp_path, criterion):
    from test_io import GOLDEN, golden_payloads

    same = []
    for name, write in golden_payloads():
        write(tmp_path / name)
        same.append((tmp_path / name).read_bytes() == (GOLDEN / name).read_bytes())
    ok = all(same) and len(same) >= 4
    criterion(10, ok, f"golden files matched {sum(same)}/{len(same)}")
    assert ok


def test_c10_parser_fuzz(criterion):
    rng = np.random.Generator(np.random.Philox(10))
    alphabet = list("zc0123456789.+-*/^()i ") + ["lambda", "2i", "z^2", "q"]
    crashes = 0
    positioned = 0
    for _ in range(10_000):
        n = int(rng.integers(1, 16))
        s = "".join(alphabet[k] for k in rng.integers(0, len(alphabet), n))
        try:
            parse(s)
        except ExprSyntaxError as exc:
            if isinstance(exc.offset, int) and 0 <= exc.offset <= len(s):
                positioned += 1
            else:
                crashes += 1
        except Exception:  # noqa: BLE001
            crashes += 1
    ok = crashes == 0
    criterion(10, ok, f"fuzz crashes={crashes}, positioned errors={positioned}")
    assert ok


def test_c1_briend_duval_floor(criterion):
    bad = [(d, e.L, e.std_err) for d, e in _estimates if e.L < 0.5 * math.log(d) - 3 * e.std_err]
    ok = bool(_estimates) and not bad
    criterion(1, ok, f"Briend-Duval floor holds for {len(_estimates)} estimates")
    assert ok

"""Lyapunov exponents, Lattès tests, J-stability scans and family diagnostics."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .family import MarkedPoint, RationalFamily, spherical_derivative_lift
from .grid import Grid, Window
from .measure import BURN_IN, bif_measure, mes_sample, repelling_start, support_fraction, tracked_paths
from .numerics.laplacian import laplacian_grid

log = logging.getLogger(__name__)

CRITICAL_FLOOR = 1e-300
LATTES_GAP = 5e-3
LATTES_SIGMAS = 4.0
SUPPORT_THRESHOLD = 0.95
STABLE_MASS = 1e-6
RESAMPLE_OFFSET = 1 << 40
MAX_BISECT = 3

VERDICTS = ("LATTES_FAMILY", "ISOTRIVIAL_SUSPECT", "GENERIC_UNSTABLE", "STABLE_ON_WINDOW")


@dataclass(frozen=True)
class LyapunovEstimate:
    lam: complex
    L: float
    std_err: float
    count: int
    seed: int
    critical_hits: int = 0
    per_chain: int = 1

    def to_dict(self):
        return {"lambda": [self.lam.real, self.lam.imag], "L": self.L, "std_err": self.std_err,
                "count": self.count, "seed": self.seed, "critical_hits": self.critical_hits,
                "per_chain": self.per_chain}


def _log_derivative(fam, sample):
    p, q = fam.coeffs(sample.lam)
    with np.errstate(divide="ignore"):
        return np.log(spherical_derivative_lift(p, q, sample.Z, sample.W))


def _std_err(x, per_chain):
    n = x.size
    if n < 2:
        return math.inf
    if per_chain <= 1:
        return float(x.std(ddof=1) / math.sqrt(n))
    # batch means: one batch per chain, the chains are independent
    nb = n // per_chain
    if nb < 2:
        return math.inf
    means = x[: nb * per_chain].reshape(nb, per_chain).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(nb))


def lyapunov(fam: RationalFamily, lam, samples=100_000, seed=0, per_chain=1, burn_in=BURN_IN,
             backend=None) -> LyapunovEstimate:
    """Monte Carlo ``L = integral of log |f'|_sigma d mu_f``.

    Samples landing on a critical point (derivative below 1e-300) are
    replaced by fresh ones from an independent stream and counted.
    """
    lam = complex(lam)
    fam.check_parameter(lam)
    s = mes_sample(fam, lam, samples, burn_in, seed, per_chain, backend=backend)
    x = _log_derivative(fam, s)
    hits = 0
    for attempt in range(1, 6):
        bad = ~(x > math.log(CRITICAL_FLOOR))
        nbad = int(bad.sum())
        if not nbad:
            break
        hits += nbad
        extra = mes_sample(fam, lam, nbad, burn_in, seed + attempt * RESAMPLE_OFFSET, 1, backend=backend)
        x[np.flatnonzero(bad)[: extra.Z.size]] = _log_derivative(fam, extra)
    x = x[np.isfinite(x)]
    if hits:
        log.info("%d critical hits resampled at lambda=%s", hits, lam)
    return LyapunovEstimate(lam, float(x.mean()), _std_err(x, per_chain), int(x.size), seed, hits, per_chain)


def lattes_test(fam: RationalFamily, lam, samples=100_000, seed=0, per_chain=1, backend=None,
                estimate=None):
    """Compare ``L`` against the Lattès value ``log(d)/2``."""
    est = estimate if estimate is not None else lyapunov(fam, lam, samples, seed, per_chain, backend=backend)
    gap = est.L - 0.5 * math.log(fam.degree)
    ok = abs(gap) < max(LATTES_GAP, LATTES_SIGMAS * est.std_err)
    return {"is_lattes_consistent": bool(ok), "gap": float(gap), "L": est.L, "std_err": est.std_err,
            "lambda": [est.lam.real, est.lam.imag]}


@dataclass(eq=False)
class JStabilityScan:
    """Lyapunov exponents on a node grid and their harmonicity defect.

    ``defect`` has the interior shape ``(ny-2, nx-2)``; ``flags`` marks
    nodes where the estimate could not be produced.
    """

    grid: Grid
    L: np.ndarray
    defect: np.ndarray
    flags: np.ndarray
    samples: int
    seed: int

    def to_dict(self):
        return {"grid": self.grid.to_dict(), "L": self.L.tolist(), "defect": self.defect.tolist(),
                "flags": self.flags.astype(int).tolist(), "samples": self.samples, "seed": self.seed}


def _serpentine(ny, nx):
    for i in range(ny):
        cols = range(nx) if i % 2 == 0 else range(nx - 1, -1, -1)
        for j in cols:
            yield i, j


def _track_step(fam, lam0, lam1, u, start, ref, backend, depth=0):
    """Paths at ``lam1`` continued from ``ref`` at ``lam0``, bisecting the
    parameter step while any preimage match is ambiguous."""
    Z, W, _, amb = tracked_paths(fam, lam1, u, start, ref, backend)
    if amb == 0 or depth >= MAX_BISECT:
        if amb:
            log.debug("%d ambiguous matches left at lambda=%s", amb, lam1)
        return Z, W
    mid = 0.5 * (lam0 + lam1)
    ref = _track_step(fam, lam0, mid, u, start, ref, backend, depth + 1)
    return _track_step(fam, mid, lam1, u, start, ref, backend, depth + 1)


def jstability_scan(fam: RationalFamily, window: Window, resolution: int, samples=2000, seed=0,
                    per_chain=50, burn_in=BURN_IN, backend=None) -> JStabilityScan:
    """Grid of ``L(lam)`` with common random numbers.

    Every node reuses the same uniforms, and each backward orbit follows the
    preimage nearest to the orbit at the previously visited (adjacent) node,
    so on J-stable regions the estimate varies harmonically in ``lam`` and
    the Monte Carlo noise largely cancels in the Laplacian.  Averaging along
    chains of ``per_chain`` steps makes the non-harmonic chart correction of
    the spherical derivative telescope.
    """
    grid = Grid.over(window, resolution)
    lam = grid.nodes()
    L = np.full(lam.shape, np.nan)
    flags = np.zeros(lam.shape, bool)
    chains = -(-samples // per_chain)
    u = np.random.Generator(np.random.Philox(seed)).random((chains, burn_in + per_chain))
    ref = None
    start = None
    prev = None
    for i, j in _serpentine(*lam.shape):
        lc = complex(lam[i, j])
        if fam.is_degenerate(lc):
            flags[i, j] = True
            ref = None
            continue
        p, q = fam.coeffs(lc)
        try:
            if start is None or ref is None:
                Z0, W0, _ = repelling_start(fam, lc, backend)
            else:
                Z0, W0 = start
            if ref is None:
                Z, W, _, _ = tracked_paths(fam, lc, u, (Z0, W0), None, backend)
            else:
                Z, W = _track_step(fam, prev, lc, u, (Z0, W0), ref, backend)
        except Exception as exc:  # noqa: BLE001 - recorded per cell
            log.warning("jstability cell %s failed: %s", lc, exc)
            flags[i, j] = True
            ref = None
            continue
        zl, wl = Z[:, burn_in:], W[:, burn_in:]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.log(spherical_derivative_lift(p, q, zl, wl))
        good = np.isfinite(x)
        if good.sum() < good.size // 2:
            flags[i, j] = True
        L[i, j] = x[good].mean() if good.any() else np.nan
        ref = (Z, W)
        prev = lc
        start = (Z0, W0)
    defect = np.abs(laplacian_grid(L, stencil=5))
    return JStabilityScan(grid, L, defect, flags, samples, seed)


def noise_floor(a: JStabilityScan, b: JStabilityScan):
    """RMS Laplacian of the difference of two scans with different seeds."""
    diff = laplacian_grid((a.L - b.L) / math.sqrt(2.0), stencil=5)
    diff = diff[np.isfinite(diff)]
    return float(np.sqrt(np.mean(diff ** 2))) if diff.size else math.nan


@dataclass
class FamilyDiagnosis:
    verdict: str
    evidence: dict
    thresholds: dict
    seeds: dict
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


DEFAULT_BUDGET = {
    "resolution": 256,
    "lambda_samples": 5,
    "lyapunov_samples": 200_000,
    "per_chain": 100,
    "scan_resolution": 12,
    "scan_samples": 1000,
}


def _sample_parameters(fam, window, k, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    out = []
    for _ in range(50 * k):
        if len(out) == k:
            break
        lam = complex(rng.uniform(window.re_min, window.re_max), rng.uniform(window.im_min, window.im_max))
        if not fam.is_degenerate(lam):
            out.append(lam)
    return out


def diagnose_family(fam: RationalFamily, marked: MarkedPoint, window: Window, budget=None, seed=0,
                    backend=None) -> FamilyDiagnosis:
    """Classify a pair on a window: Lattès, isotrivial suspect, generic, or stable."""
    b = dict(DEFAULT_BUDGET)
    b.update(budget or {})
    notes = []
    thresholds = {"support_fraction": SUPPORT_THRESHOLD, "lattes_gap": LATTES_GAP,
                  "lattes_sigmas": LATTES_SIGMAS, "stable_mass": STABLE_MASS}
    seeds = {"lambda_sample": seed, "lyapunov": seed, "scan": seed, "scan_reseed": seed + 1}

    m = bif_measure(fam, marked, window, b["resolution"], backend=backend)
    total = m.total_mass
    sf = support_fraction(m)
    evidence = {"total_mass": total, "support_fraction": sf, "clipped_fraction": m.clipped_fraction}

    lams = _sample_parameters(fam, window, b["lambda_samples"], seed)
    tests = []
    for lam in lams:
        try:
            est = lyapunov(fam, lam, b["lyapunov_samples"], seed, b["per_chain"], backend=backend)
        except Exception as exc:  # noqa: BLE001 - partial failures become notes
            notes.append(f"lyapunov failed at {lam}: {exc}")
            continue
        tests.append(lattes_test(fam, lam, estimate=est))
    evidence["lattes_tests"] = tests
    evidence["L"] = [t["L"] for t in tests]
    evidence["L_std_err"] = [t["std_err"] for t in tests]

    scans = []
    for s in (seed, seed + 1):
        try:
            scans.append(jstability_scan(fam, window, b["scan_resolution"], b["scan_samples"], s,
                                         backend=backend))
        except Exception as exc:  # noqa: BLE001
            notes.append(f"jstability scan failed: {exc}")
    if len(scans) == 2:
        floor = noise_floor(*scans)
        d = scans[0].defect
        evidence["harmonicity_defect_max"] = float(np.nanmax(d)) if np.isfinite(d).any() else math.nan
        evidence["harmonicity_noise_floor"] = floor
        evidence["harmonicity_defect"] = np.where(np.isfinite(d), d, -1.0).tolist()

    all_pass = bool(tests) and all(t["is_lattes_consistent"] for t in tests)
    L = np.array(evidence["L"])
    se = np.array(evidence["L_std_err"])
    if L.size >= 2:
        spread = np.abs(L[:, None] - L[None, :])
        allowed = LATTES_SIGMAS * (se[:, None] + se[None, :])
        constant = bool(np.all(spread <= allowed + 1e-12))
    else:
        constant = False
        notes.append("too few Lyapunov samples to test constancy")
    evidence["L_constant"] = constant

    if total < STABLE_MASS:
        verdict = "STABLE_ON_WINDOW"
    elif sf > SUPPORT_THRESHOLD and all_pass:
        verdict = "LATTES_FAMILY"
    elif constant and not all_pass:
        verdict = "ISOTRIVIAL_SUSPECT"
    else:
        verdict = "GENERIC_UNSTABLE"
    return FamilyDiagnosis(verdict, evidence, thresholds, seeds, notes)

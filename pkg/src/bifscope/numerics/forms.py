"""Binary forms ``sum_k c[k] Z^k W^(d-k)``: roots, evaluation, iteration.

Roots are returned as homogeneous pairs normalised to max-norm 1, so roots
at infinity are ``(1, 0)``.  The chart is chosen per form: the ``z`` chart
when ``|c[d]| >= |c[0]|`` and the ``u = W/Z`` chart otherwise, which keeps the
leading coefficient of the solved polynomial large.
"""
from __future__ import annotations

import math

import numpy as np

from .._backend import njit, prange, use_numba
from .roots import STRIP_RTOL, _aberth_kernel, aberth_batch

STRIP_RTOL_NB = STRIP_RTOL
ORDER_TOL = 1e-9


def _chart_polys(c):
    """Chart polynomial, its degree and the chart flag for each row of ``c``."""
    d = c.shape[1] - 1
    use_z = np.abs(c[:, d]) >= np.abs(c[:, 0])
    poly = np.where(use_z[:, None], c, c[:, ::-1])
    a = np.abs(poly)
    big = a > STRIP_RTOL * a.max(axis=1, keepdims=True)
    idx = np.arange(d + 1)
    deg = np.where(big, idx, -1).max(axis=1)
    return poly, deg, use_z


def form_roots_batch(c, backend=None, rotation=0.0):
    """Roots of each binary form in ``c`` (shape (N, d+1)).

    Returns ``(A, B, log_kappa, ok)``: root pairs of shape (N, d), the log of
    the scalar ``kappa`` with ``form(v) = kappa * prod det(alpha_i, v)`` for
    the max-normalised roots ``alpha_i``, and a flag that is False for
    identically vanishing forms or solver failures.
    """
    c = np.asarray(c, dtype=complex)
    N, d1 = c.shape
    d = d1 - 1
    poly, deg, use_z = _chart_polys(c)
    A = np.full((N, d), np.nan + 0j)
    B = np.full((N, d), np.nan + 0j)
    log_kappa = np.full(N, -np.inf)
    ok = deg >= 0
    lead = poly[np.arange(N), np.maximum(deg, 0)]
    # exact zeros at the bottom are roots at the chart origin; factor them out
    # (Aberth converges only linearly on multiple roots)
    idx = np.arange(d + 1)
    low = np.where(poly != 0, idx, d + 1).min(axis=1)
    low = np.minimum(low, np.maximum(deg, 0))
    solve = deg - low >= 1
    r = np.zeros((N, max(d, 1)), complex)
    if solve.any():
        rows = np.nonzero(solve)[0]
        shifted = np.zeros((rows.size, d + 1), complex)
        for k in np.unique(low[rows]):
            sel = low[rows] == k
            shifted[sel, : d + 1 - k] = poly[rows[sel], k:]
        rs, iters = aberth_batch(shifted, deg[rows] - low[rows], backend=backend, rotation=rotation)
        # roots go after the `low` zero roots
        for k in np.unique(low[rows]):
            sel = low[rows] == k
            r[rows[sel], k:k + rs.shape[1]] = rs[sel, : d - k]
        bad = np.zeros(N, bool)
        bad[solve] = iters < 0
        ok &= ~bad
    kcol = np.arange(d)[None, :]
    finite = kcol < deg[:, None]
    s = np.maximum(np.abs(r), 1.0)
    # finite chart roots w become (w, 1) in the z chart and (1, w) in the u chart
    rn = r / s
    one = 1.0 / s
    A_fin = np.where(use_z[:, None], rn, one)
    B_fin = np.where(use_z[:, None], one, rn)
    A_inf = np.where(use_z, 1.0, 0.0)[:, None] + 0j
    B_inf = np.where(use_z, 0.0, 1.0)[:, None] + 0j
    A = np.where(finite, A_fin, A_inf)
    B = np.where(finite, B_fin, B_inf)
    with np.errstate(divide="ignore"):
        log_kappa = np.log(np.abs(lead)) + np.where(finite, np.log(s), 0.0).sum(axis=1)
    A[~ok] = np.nan
    B[~ok] = np.nan
    return A, B, np.where(ok, log_kappa, -np.inf), ok


def chordal(a1, b1, a2, b2):
    """Chordal distance between homogeneous points (in [0, 1])."""
    n1 = np.sqrt(np.abs(a1) ** 2 + np.abs(b1) ** 2)
    n2 = np.sqrt(np.abs(a2) ** 2 + np.abs(b2) ** 2)
    return np.abs(a1 * b2 - b1 * a2) / (n1 * n2)


def tail_constant(p, q, backend=None):
    """Bound ``C`` on ``|log max(|P(v)|, |Q(v)|)|`` over max-normalised ``v``.

    Upper side: coefficient 1-norms.  Lower side: every ``v`` lies at chordal
    distance at least ``s/2`` from all roots of ``P`` or from all roots of
    ``Q``, where ``s`` is the smallest distance between a root of ``P`` and a
    root of ``Q``; the product formula for each form then bounds it below.
    Returns ``(C, s)``; ``C`` is ``inf`` when the forms share a root.
    """
    p = np.atleast_2d(np.asarray(p, complex))
    q = np.atleast_2d(np.asarray(q, complex))
    d = p.shape[1] - 1
    upper = np.log(np.maximum(np.abs(p).sum(axis=1), np.abs(q).sum(axis=1)))
    Ap, Bp, kp, okp = form_roots_batch(p, backend)
    Aq, Bq, kq, okq = form_roots_batch(q, backend)
    s = chordal(Ap[:, :, None], Bp[:, :, None], Aq[:, None, :], Bq[:, None, :]).min(axis=(1, 2))
    log_np = 0.5 * np.log(np.abs(Ap) ** 2 + np.abs(Bp) ** 2).sum(axis=1)
    log_nq = 0.5 * np.log(np.abs(Aq) ** 2 + np.abs(Bq) ** 2).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lower = np.minimum(kp + log_np, kq + log_nq) + d * np.log(s / 2.0)
    C = np.maximum(np.abs(upper), np.abs(lower))
    C = np.where(okp & okq & np.isfinite(C), C, np.inf)
    return C, s


# ---------------------------------------------------------------------------
# evaluation kernels


@njit
def hom_eval_nb(c, d, Z, W):
    """Binary form at a max-normalised point, Horner in the dominant chart."""
    if abs(W) >= abs(Z):
        t = Z / W
        acc = c[d]
        for k in range(d - 1, -1, -1):
            acc = acc * t + c[k]
        wp = 1.0 + 0j
        for _ in range(d):
            wp *= W
        return acc * wp
    t = W / Z
    acc = c[0]
    for k in range(1, d + 1):
        acc = acc * t + c[k]
    zp = 1.0 + 0j
    for _ in range(d):
        zp *= Z
    return acc * zp


@njit(parallel=True)
def _green_iter_nb(p, q, Z0, W0, nsteps, out):
    N = p.shape[0]
    d = p.shape[1] - 1
    for i in prange(N):
        Z = Z0[i]
        W = W0[i]
        acc = 0.0
        w = 1.0
        for k in range(nsteps[i]):
            P = hom_eval_nb(p[i], d, Z, W)
            Q = hom_eval_nb(q[i], d, Z, W)
            m = max(abs(P), abs(Q))
            if m == 0.0 or not math.isfinite(m):
                acc = math.nan
                break
            w /= d
            acc += w * math.log(m)
            Z = P / m
            W = Q / m
        out[i] = acc


def hom_eval_np(c, Z, W):
    d = c.shape[-1] - 1
    zdom = np.abs(W) >= np.abs(Z)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(zdom, Z / np.where(zdom, W, 1), W / np.where(zdom, 1, Z))
    acc = np.where(zdom, c[..., d], c[..., 0])
    for k in range(1, d + 1):
        acc = acc * t + np.where(zdom, c[..., d - k], c[..., k])
    return acc * np.where(zdom, W, Z) ** d


def _green_iter_np(p, q, Z0, W0, nsteps, out):
    d = p.shape[1] - 1
    Z, W = Z0.copy(), W0.copy()
    acc = np.zeros(p.shape[0])
    w = 1.0
    for k in range(int(nsteps.max(initial=0))):
        live = k < nsteps
        P = hom_eval_np(p, Z, W)
        Q = hom_eval_np(q, Z, W)
        m = np.maximum(np.abs(P), np.abs(Q))
        w /= d
        with np.errstate(divide="ignore", invalid="ignore"):
            acc = np.where(live, acc + w * np.log(m), acc)
            acc = np.where(live & ((m == 0) | ~np.isfinite(m)), np.nan, acc)
            Z = np.where(live, P / m, Z)
            W = np.where(live, Q / m, W)
    out[:] = acc


def green_iterate(p, q, Z0, W0, nsteps, backend=None):
    """``sum_{k<n} d^-(k+1) log |F(v_k)|`` for max-normalised starts (batched)."""
    p = np.ascontiguousarray(p, complex)
    q = np.ascontiguousarray(q, complex)
    Z0 = np.ascontiguousarray(Z0, complex)
    W0 = np.ascontiguousarray(W0, complex)
    nsteps = np.ascontiguousarray(nsteps, np.int64)
    out = np.empty(p.shape[0])
    if use_numba(backend):
        _green_iter_nb(p, q, Z0, W0, nsteps, out)
    else:
        _green_iter_np(p, q, Z0, W0, nsteps, out)
    return out


@njit
def form_roots_nb(c, d, outA, outB, poly, roots, rotation):
    """Scalar version of ``form_roots_batch`` for use inside kernels.

    ``poly`` and ``roots`` are scratch arrays of length ``d+1`` and ``d``.
    Returns False when the form vanishes or the solver fails.
    """
    use_z = abs(c[d]) >= abs(c[0])
    scale = 0.0
    for k in range(d + 1):
        poly[k] = c[k] if use_z else c[d - k]
        scale = max(scale, abs(poly[k]))
    if scale == 0.0:
        return False
    deg = d
    while deg > 0 and abs(poly[deg]) <= STRIP_RTOL_NB * scale:
        deg -= 1
    low = 0
    while low < deg and poly[low] == 0:
        low += 1
    for k in range(low):
        roots[k] = 0j
    m = deg - low
    if m >= 1:
        it = _aberth_kernel(poly[low:deg + 1], m, 1e-14, 1000, rotation, roots[low:deg])
        if it < 0:
            return False
    for k in range(d):
        if k < deg:
            w = roots[k]
            s = max(abs(w), 1.0)
            if use_z:
                outA[k] = w / s
                outB[k] = 1.0 / s
            else:
                outA[k] = 1.0 / s
                outB[k] = w / s
        elif use_z:
            outA[k] = 1.0
            outB[k] = 0.0
        else:
            outA[k] = 0.0
            outB[k] = 1.0
    return True


@njit
def sphere_coords_nb(Z, W):
    n = abs(Z) ** 2 + abs(W) ** 2
    x = 2.0 * Z * np.conj(W) / n
    return (abs(Z) ** 2 - abs(W) ** 2) / n, x.real, x.imag


@njit
def sphere_less_nb(Z1, W1, Z2, W2):
    """Tolerant lexicographic order on sphere coordinates (height first)."""
    h1, x1, y1 = sphere_coords_nb(Z1, W1)
    h2, x2, y2 = sphere_coords_nb(Z2, W2)
    if abs(h1 - h2) > ORDER_TOL:
        return h1 < h2
    if abs(x1 - x2) > ORDER_TOL:
        return x1 < x2
    return y2 - y1 > ORDER_TOL


@njit
def pick_ranked_nb(A, B, d, r):
    """Index of the root with rank ``r`` in the tolerant sphere order."""
    best = 0
    best_gap = d + 1
    for i in range(d):
        rank = 0
        for j in range(d):
            if j == i:
                continue
            if sphere_less_nb(A[j], B[j], A[i], B[i]):
                rank += 1
            elif j < i and not sphere_less_nb(A[i], B[i], A[j], B[j]):
                rank += 1
        gap = abs(rank - r)
        if gap < best_gap:
            best_gap = gap
            best = i
    return best


def sphere_coords_np(Z, W):
    n = np.abs(Z) ** 2 + np.abs(W) ** 2
    x = 2.0 * Z * np.conj(W) / n
    return (np.abs(Z) ** 2 - np.abs(W) ** 2) / n, x.real, x.imag


def _sphere_less_np(c1, c2):
    h1, x1, y1 = c1
    h2, x2, y2 = c2
    return np.where(np.abs(h1 - h2) > ORDER_TOL, h1 < h2,
                    np.where(np.abs(x1 - x2) > ORDER_TOL, x1 < x2, y2 - y1 > ORDER_TOL))


def pick_ranked_np(A, B, r):
    """Vectorised ``pick_ranked_nb`` over rows of ``A, B`` (shape (N, d))."""
    N, d = A.shape
    coords = [sphere_coords_np(A[:, i], B[:, i]) for i in range(d)]
    best = np.zeros(N, np.int64)
    best_gap = np.full(N, d + 1)
    for i in range(d):
        rank = np.zeros(N, np.int64)
        for j in range(d):
            if j == i:
                continue
            lt = _sphere_less_np(coords[j], coords[i])
            rank += lt
            if j < i:
                rank += ~lt & ~_sphere_less_np(coords[i], coords[j])
        gap = np.abs(rank - r)
        better = gap < best_gap
        best = np.where(better, i, best)
        best_gap = np.where(better, gap, best_gap)
    return best

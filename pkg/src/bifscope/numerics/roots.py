"""Aberth-Ehrlich simultaneous root finding.

Coefficients are stored in ascending order: ``c[k]`` multiplies ``w**k``.
"""
from __future__ import annotations

import math

import numpy as np

from .._backend import njit, prange, use_numba
from ..errors import NoConvergence

MAX_ITER = 1000
STRIP_RTOL = 1e-14


class PolyC:
    """Complex polynomial with trailing (high-order) near-zeros stripped."""

    def __init__(self, coefficients):
        c = np.asarray(coefficients, dtype=complex).ravel()
        if c.size == 0:
            raise ValueError("empty coefficient list")
        self.coefficients = strip(c)

    @property
    def degree(self):
        return self.coefficients.size - 1

    def __call__(self, w):
        return horner(self.coefficients, w)

    def __repr__(self):
        return f"PolyC({self.coefficients.tolist()!r})"


def strip(c, rtol=STRIP_RTOL):
    c = np.asarray(c, dtype=complex)
    scale = np.max(np.abs(c)) if c.size else 0.0
    if scale == 0.0:
        return c[:1].copy()
    thr = rtol * scale
    k = c.size
    while k > 1 and abs(c[k - 1]) <= thr:
        k -= 1
    return c[:k].copy()


def horner(c, w):
    acc = 0j * np.asarray(w)
    for coef in c[::-1]:
        acc = acc * w + coef
    return acc


# ---------------------------------------------------------------------------
# scalar kernel (numba)


@njit
def _aberth_kernel(c, n, tol, maxiter, rotation, out):
    """Roots of ``c[:n+1]`` (leading coefficient nonzero) into ``out[:n]``.

    Allocation free.  Returns the sweep count, or -1 when the cap is hit.
    A root is frozen one correction after its residual passes the
    running-error test, which buys the last quadratic step.
    """
    lead = c[n]
    if n == 1:
        out[0] = -c[0] / lead
        return 0
    centre = -c[n - 1] / (n * lead)
    radius = 1.0
    for k in range(n):
        if c[k] != 0:
            radius = (abs(c[k]) / abs(lead)) ** (1.0 / (n - k))
            break
    radius = max(radius, 1e-3)
    for k in range(n):
        ang = 2.0 * math.pi * k / n + 0.4 + rotation
        out[k] = centre + radius * complex(math.cos(ang), math.sin(ang))
    done = 0  # bitmask for n <= 62, otherwise tracked by count only
    frozen = np.zeros(n if n > 62 else 1, dtype=np.bool_)
    for it in range(maxiter):
        n_done = 0
        for i in range(n):
            if n > 62:
                if frozen[i]:
                    n_done += 1
                    continue
            elif (done >> i) & 1:
                n_done += 1
                continue
            zi = out[i]
            p = lead
            dp = 0j
            # L1 norms: cheap upper bounds for the running error estimate
            bound = abs(lead.real) + abs(lead.imag)
            azi = abs(zi.real) + abs(zi.imag)
            for k in range(n - 1, -1, -1):
                dp = dp * zi + p
                p = p * zi + c[k]
                bound = bound * azi + abs(c[k].real) + abs(c[k].imag)
            converged = abs(p.real) + abs(p.imag) <= tol * bound
            s = 0j
            for j in range(n):
                if j != i:
                    diff = zi - out[j]
                    if diff != 0:
                        s += 1.0 / diff
            if dp != 0:
                ratio = p / dp
            else:
                ratio = p / (tol + 0j)
            denom = 1.0 - ratio * s
            step = ratio / denom if denom != 0 else ratio
            out[i] = zi - step
            zn = out[i]
            if converged or abs(step.real) + abs(step.imag) <= 4e-16 * (abs(zn.real) + abs(zn.imag)):
                if n > 62:
                    frozen[i] = True
                else:
                    done |= 1 << i
        if n_done == n:
            return it
    return -1


@njit(parallel=True)
def _aberth_batch_numba(coef, deg, tol, maxiter, rotation, out, iters):
    for b in prange(coef.shape[0]):
        iters[b] = _aberth_kernel(coef[b], deg[b], tol, maxiter, rotation, out[b])


# ---------------------------------------------------------------------------
# batched numpy fallback


def _aberth_batch_numpy(coef, deg, tol, maxiter, rotation, out, iters):
    """Jacobi-style Aberth iteration vectorised over a batch of equal degree."""
    for n in np.unique(deg):
        n = int(n)
        sel = np.nonzero(deg == n)[0]
        c = coef[sel, : n + 1]
        lead = c[:, n]
        if n == 1:
            out[sel, 0] = -c[:, 0] / lead
            iters[sel] = 0
            continue
        centre = -c[:, n - 1] / (n * lead)
        absc = np.abs(c)
        radius = np.ones(len(sel))
        for k in range(n - 1, -1, -1):
            nz = absc[:, k] != 0
            radius = np.where(nz, (absc[:, k] / np.abs(lead)) ** (1.0 / (n - k)), radius)
        radius = np.maximum(radius, 1e-3)
        ang = 2.0 * np.pi * np.arange(n) / n + 0.4 + rotation
        w = centre[:, None] + radius[:, None] * np.exp(1j * ang)[None, :]
        done = np.zeros(w.shape, dtype=bool)
        it_out = np.full(len(sel), -1)
        for it in range(maxiter):
            p = np.broadcast_to(c[:, n:n + 1], w.shape).copy()
            dp = np.zeros_like(w)
            bound = np.broadcast_to(absc[:, n:n + 1], w.shape).copy()
            aw = np.abs(w)
            for k in range(n - 1, -1, -1):
                dp = dp * w + p
                p = p * w + c[:, k:k + 1]
                bound = bound * aw + absc[:, k:k + 1]
            converged = np.abs(p) <= tol * bound
            all_done = done.all(axis=1)
            newly = all_done & (it_out < 0)
            it_out[newly] = it
            if all_done.all():
                break
            diff = w[:, :, None] - w[:, None, :]
            eye = np.eye(n, dtype=bool)[None]
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = np.where(eye | (diff == 0), 0, 1.0 / np.where(diff == 0, 1, diff))
                s = inv.sum(axis=2)
                ratio = np.where(dp != 0, p / np.where(dp == 0, 1, dp), p / tol)
                denom = 1.0 - ratio * s
                step = np.where(denom != 0, ratio / np.where(denom == 0, 1, denom), ratio)
            step = np.where(done, 0, step)
            w = w - step
            done |= converged | (np.abs(step) <= 4e-16 * np.abs(w))
        out[sel, :n] = w
        iters[sel] = it_out


def aberth_batch(coef, deg, tol=1e-14, maxiter=MAX_ITER, rotation=0.0, backend=None):
    """Roots for a batch of polynomials.

    ``coef`` has shape (B, m+1) (ascending, zero padded); ``deg[b]`` is the
    degree of row b with ``coef[b, deg[b]] != 0``.  Returns ``(roots, iters)``
    where ``roots[b, :deg[b]]`` are valid and ``iters[b] == -1`` flags
    non-convergence.
    """
    coef = np.ascontiguousarray(coef, dtype=complex)
    deg = np.ascontiguousarray(deg, dtype=np.int64)
    B, m1 = coef.shape
    out = np.zeros((B, max(m1 - 1, 1)), dtype=complex)
    iters = np.zeros(B, dtype=np.int64)
    if B == 0:
        return out, iters
    if use_numba(backend):
        _aberth_batch_numba(coef, deg, float(tol), int(maxiter), float(rotation), out, iters)
    else:
        _aberth_batch_numpy(coef, deg, float(tol), int(maxiter), float(rotation), out, iters)
    return out, iters


def roots_aberth(p, tol=1e-14, rotation=0.0, backend=None):
    """All ``degree`` roots of ``p`` (a ``PolyC`` or coefficient sequence).

    Raises ``NoConvergence`` after ``MAX_ITER`` sweeps; callers may retry
    with a different ``rotation`` of the initial circle.
    """
    if not isinstance(p, PolyC):
        p = PolyC(p)
    c = p.coefficients
    n = c.size - 1
    if n < 1:
        raise ValueError("polynomial must have degree >= 1")
    roots, iters = aberth_batch(c[None, :], np.array([n]), tol, MAX_ITER, rotation, backend)
    if iters[0] < 0:
        raise NoConvergence(f"Aberth iteration did not converge (degree {n})",
                            partial=roots[0, :n].copy())
    return roots[0, :n].copy()


def root_clusters(roots, radius=1e-6):
    """Group nearby roots; returns ``(centres, multiplicities)``."""
    roots = np.asarray(roots, dtype=complex)
    used = np.zeros(roots.size, dtype=bool)
    centres, mult = [], []
    for i in range(roots.size):
        if used[i]:
            continue
        members = np.nonzero(~used & (np.abs(roots - roots[i]) <= radius * (1 + abs(roots[i]))))[0]
        used[members] = True
        centres.append(roots[members].mean())
        mult.append(members.size)
    return np.array(centres), np.array(mult)

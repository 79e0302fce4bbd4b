"""Algebraic families of rational maps with a marked point.

A family is stored through a homogeneous lift ``F = (P, Q)`` of degree ``d``:
``P[k, j]`` is the coefficient of ``Z**k * W**(d-k) * lambda**j``.  Points of
the sphere are homogeneous pairs normalised to max-norm 1; chart 0 is
``z = Z/W`` and chart 1 is ``u = W/Z``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import expr as _expr
from .errors import DegenerateEverywhere, DegenerateParameter, FamilyError
from .grid import Grid, Window
from .numerics.jet import Jet

DEGENERACY_RTOL = 1e-10
SCAN_RES = 64
DEFAULT_DOMAIN = Window(-2.5, 1.5, -2.0, 2.0)


# ---------------------------------------------------------------------------
# polynomial helpers in lambda


def poly_lambda(c, lam):
    """Evaluate ``sum_j c[..., j] * lam**j`` with broadcasting over ``lam``."""
    lam = np.asarray(lam, dtype=complex)
    acc = np.zeros(lam.shape + c.shape[:-1], dtype=complex)
    lam_b = lam[(...,) + (None,) * (c.ndim - 1)]
    for j in range(c.shape[-1] - 1, -1, -1):
        acc = acc * lam_b + c[..., j]
    return acc


def poly_lambda_deriv(c, lam):
    m = c.shape[-1]
    if m == 1:
        return poly_lambda(np.zeros_like(c), lam)
    dc = c[..., 1:] * np.arange(1, m)
    return poly_lambda(dc, lam)


def sylvester_resultant(p, q):
    """Resultant of two binary forms of degree ``d`` (batched over leading axes).

    ``p[..., k]`` multiplies ``Z**k W**(d-k)``.
    """
    p = np.asarray(p, dtype=complex)
    q = np.asarray(q, dtype=complex)
    d = p.shape[-1] - 1
    M = np.zeros(p.shape[:-1] + (2 * d, 2 * d), dtype=complex)
    pd = p[..., ::-1]
    qd = q[..., ::-1]
    for r in range(d):
        M[..., r, r:r + d + 1] = pd
        M[..., d + r, r:r + d + 1] = qd
    return np.linalg.det(M)


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class SpherePoint:
    Z: complex
    W: complex

    def __post_init__(self):
        s = max(abs(self.Z), abs(self.W))
        if s == 0 or not math.isfinite(s):
            raise ValueError("(0, 0) is not a point of the sphere")
        if s != 1.0:
            object.__setattr__(self, "Z", complex(self.Z) / s)
            object.__setattr__(self, "W", complex(self.W) / s)

    @classmethod
    def from_complex(cls, z):
        z = complex(z)
        if not math.isfinite(abs(z)):
            return cls(1.0, 0.0)
        return cls(z, 1.0)

    def to_complex(self):
        if self.W == 0:
            return complex(math.inf, 0.0)
        return self.Z / self.W

    @property
    def is_infinity(self):
        return self.W == 0


@dataclass(frozen=True, eq=False)
class RationalFamily:
    degree: int
    P: np.ndarray
    Q: np.ndarray
    domain: Window = DEFAULT_DOMAIN
    excluded: np.ndarray = field(default_factory=lambda: np.zeros((SCAN_RES, SCAN_RES), bool))
    source: str = ""
    label: str = ""

    @property
    def lambda_degree(self):
        return self.P.shape[1] - 1

    @property
    def is_polynomial(self):
        """True when infinity is a totally invariant point (Q = c W^d, deg_z P = d)."""
        return bool(np.all(self.Q[1:] == 0) and np.any(self.P[self.degree] != 0))

    @property
    def is_constant(self):
        return bool(np.all(self.P[:, 1:] == 0) and np.all(self.Q[:, 1:] == 0))

    def coeffs(self, lam):
        """Return ``(p, q)`` of shape ``lam.shape + (d+1,)``."""
        return poly_lambda(self.P, lam), poly_lambda(self.Q, lam)

    def coeff_derivs(self, lam):
        return poly_lambda_deriv(self.P, lam), poly_lambda_deriv(self.Q, lam)

    def coeff_jets(self, lam):
        lam = np.asarray(lam, dtype=complex)
        p, q = self.coeffs(lam)
        dp, dq = self.coeff_derivs(lam)
        zero = np.zeros_like(p[..., 0])
        pj = [Jet(p[..., k], dp[..., k], zero) for k in range(self.degree + 1)]
        qj = [Jet(q[..., k], dq[..., k], zero) for k in range(self.degree + 1)]
        return pj, qj

    def resultant(self, lam):
        p, q = self.coeffs(lam)
        return sylvester_resultant(p, q)

    def degeneracy_ratio(self, lam):
        """``|Res| / scale`` with scale = max|p|^d max|q|^d."""
        p, q = self.coeffs(lam)
        d = self.degree
        scale = (np.abs(p).max(axis=-1) ** d) * (np.abs(q).max(axis=-1) ** d)
        res = np.abs(sylvester_resultant(p, q))
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(scale > 0, res / scale, 0.0)

    def is_degenerate(self, lam):
        return self.degeneracy_ratio(lam) <= DEGENERACY_RTOL

    def check_parameter(self, lam):
        if np.any(self.is_degenerate(lam)):
            raise DegenerateParameter(f"lift degenerates at lambda={lam}")


@dataclass(frozen=True, eq=False)
class MarkedPoint:
    """Lift ``(A(lambda), B(lambda))`` of the marked point (ascending coefficients)."""

    A: np.ndarray
    B: np.ndarray
    source: str = ""

    def lift(self, lam):
        lam = np.asarray(lam, dtype=complex)
        return poly_lambda(self.A, lam), poly_lambda(self.B, lam)

    def lift_jets(self, lam):
        lam = np.asarray(lam, dtype=complex)
        a, b = self.lift(lam)
        da = poly_lambda_deriv(self.A, lam)
        db = poly_lambda_deriv(self.B, lam)
        zero = np.zeros_like(a)
        return Jet(a, da, zero), Jet(b, db, zero)

    def __call__(self, lam):
        a, b = self.lift(lam)
        return a / b


# ---------------------------------------------------------------------------
# construction


def _as_expr(e):
    return _expr.parse(e) if isinstance(e, str) else e


def build_family(map_expr, marked_expr, domain: Window | None = None, label: str = ""):
    """Build ``(RationalFamily, MarkedPoint)`` from expressions or source strings."""
    m_ast = _as_expr(map_expr)
    a_ast = _as_expr(marked_expr)
    domain = domain or DEFAULT_DOMAIN
    rf = _expr.to_rational(m_ast)
    num, den = rf.num, rf.den

    def zdeg(c):
        nz = np.nonzero(np.any(c != 0, axis=1))[0]
        return int(nz[-1]) if nz.size else -1

    d = max(zdeg(num), zdeg(den))
    if d < 2:
        raise FamilyError(f"map has degree {d} in z; need d >= 2")
    m = max(num.shape[1], den.shape[1])
    P = np.zeros((d + 1, m), complex)
    Q = np.zeros((d + 1, m), complex)
    P[: num.shape[0], : num.shape[1]] = num
    Q[: den.shape[0], : den.shape[1]] = den

    if _expr.depends_on(a_ast, "z"):
        raise FamilyError("marked point must depend on lambda only")
    ra = _expr.to_rational(a_ast)
    A = ra.num[0].copy()
    B = ra.den[0].copy()

    src = map_expr if isinstance(map_expr, str) else _expr.to_source(m_ast)
    fam = RationalFamily(d, P, Q, domain, np.zeros((SCAN_RES, SCAN_RES), bool), src, label)
    grid = Grid(domain, SCAN_RES, SCAN_RES,
                (domain.re_max - domain.re_min) / (SCAN_RES - 1))
    re = np.linspace(domain.re_min, domain.re_max, SCAN_RES)
    im = np.linspace(domain.im_min, domain.im_max, SCAN_RES)
    lam = re[None, :] + 1j * im[:, None]
    excluded = fam.is_degenerate(lam)
    if excluded.mean() > 0.5:
        raise DegenerateEverywhere(
            f"lift degenerate on {excluded.mean():.0%} of the domain scan")
    object.__setattr__(fam, "excluded", excluded)

    a, b = MarkedPoint(A, B).lift(lam)
    if np.any((a == 0) & (b == 0)):
        raise FamilyError("marked point lift vanishes on the domain")
    del grid
    src_a = marked_expr if isinstance(marked_expr, str) else _expr.to_source(a_ast)
    return fam, MarkedPoint(A, B, src_a)


# ---------------------------------------------------------------------------
# homogeneous evaluation


def hom_eval(c, Z, W):
    """Binary form ``sum_k c[k] Z^k W^(d-k)``; ``c`` is a list (Jets) or array."""
    d = len(c) - 1
    zp = [None] * (d + 1)
    wp = [None] * (d + 1)
    zp[0] = 1.0
    wp[0] = 1.0
    for k in range(1, d + 1):
        zp[k] = Z if k == 1 else zp[k - 1] * Z
        wp[k] = W if k == 1 else wp[k - 1] * W
    acc = c[0] * wp[d]
    for k in range(1, d + 1):
        acc = acc + c[k] * (zp[k] * wp[d - k])
    return acc


def _coef_list(p):
    return [p[..., k] for k in range(p.shape[-1])]


def lift_apply(p, q, Z, W):
    """``F(Z, W)`` for coefficient arrays ``p, q`` of shape (..., d+1)."""
    return hom_eval(_coef_list(p), Z, W), hom_eval(_coef_list(q), Z, W)


def lift_partials(p, q, Z, W):
    """``P, Q`` and their partial derivatives in ``Z`` and ``W``."""
    d = p.shape[-1] - 1
    k = np.arange(d + 1)
    P, Q = lift_apply(p, q, Z, W)
    # d/dZ: coefficient k -> k c_k Z^(k-1) W^(d-k), a form of degree d-1
    pz = (p * k)[..., 1:]
    qz = (q * k)[..., 1:]
    pw = (p * (d - k))[..., :-1]
    qw = (q * (d - k))[..., :-1]
    PZ, QZ = lift_apply(pz, qz, Z, W)
    PW, QW = lift_apply(pw, qw, Z, W)
    return P, Q, PZ, PW, QZ, QW


def normalize(Z, W):
    s = np.maximum(np.abs(Z), np.abs(W))
    return Z / s, W / s


def normalize_jets(Zj, Wj):
    """Divide by the larger component: holomorphic re-charting of a jet pair."""
    big_z = np.abs(Zj.value) >= np.abs(Wj.value)
    s = Zj.select(big_z, Wj)
    return Zj / s, Wj / s


def apply(fam: RationalFamily, lam, pt: SpherePoint) -> SpherePoint:
    fam.check_parameter(lam)
    p, q = fam.coeffs(complex(lam))
    P, Q = lift_apply(p, q, pt.Z, pt.W)
    if P == 0 and Q == 0:
        raise DegenerateParameter("lift vanishes at the point")
    return SpherePoint(complex(P), complex(Q))


def iterate_points(fam, lam, Z, W, n):
    """``n``-fold normalised lift iteration on arrays (no derivatives)."""
    p, q = fam.coeffs(lam)
    for _ in range(n):
        Z, W = lift_apply(p, q, Z, W)
        Z, W = normalize(Z, W)
    return Z, W


def iterate_jets(fam, lam, Zj, Wj, n, coef_jets=None):
    """Iterate jet pairs ``n`` times with lambda-dependent coefficients."""
    pj, qj = coef_jets if coef_jets is not None else fam.coeff_jets(lam)
    for _ in range(n):
        Pn = hom_eval(pj, Zj, Wj)
        Qn = hom_eval(qj, Zj, Wj)
        Zj, Wj = normalize_jets(Pn, Qn)
    return Zj, Wj


def chart_value(Zj, Wj, chart):
    """Chart coordinate (``Z/W`` for chart 0, ``W/Z`` for chart 1)."""
    return Zj / Wj if chart == 0 else Wj / Zj


def point_jets(x, chart, seed_z=True):
    """Homogeneous jet pair for chart coordinate ``x`` (derivative seeded in d_z)."""
    x = np.asarray(x, dtype=complex)
    xj = Jet(x, np.zeros_like(x), np.ones_like(x) if seed_z else np.zeros_like(x))
    one = Jet(np.ones_like(x), np.zeros_like(x), np.zeros_like(x))
    if np.ndim(chart) == 0:
        return (xj, one) if chart == 0 else (one, xj)
    c0 = np.asarray(chart) == 0
    return xj.select(c0, one), one.select(c0, xj)


def chart_value_mixed(Zj, Wj, chart):
    c0 = np.asarray(chart) == 0
    num = Zj.select(c0, Wj)
    den = Wj.select(c0, Zj)
    return num / den


def orbit_jet(fam: RationalFamily, marked: MarkedPoint, lam, n: int) -> Jet:
    """Jet of ``f_lam^n(a(lam))`` in chart 0 with its lambda-derivative.

    The orbit is iterated on normalised lifts, so it may pass through
    infinity; only the final point has to be finite.
    """
    lam = complex(lam)
    fam.check_parameter(lam)
    Aj, Bj = marked.lift_jets(lam)
    Zj, Wj = normalize_jets(Aj, Bj)
    Zj, Wj = iterate_jets(fam, lam, Zj, Wj, n)
    if Wj.value == 0:
        return Jet(complex(math.inf, 0), complex(math.nan, 0), 0j)
    out = Zj / Wj
    return Jet(complex(out.value), complex(out.d_lambda), 0j)


def spherical_derivative_lift(p, q, Z, W):
    """``|f'|_sigma`` at homogeneous points (arrays).

    Uses ``|det DF| * |v|^2 / (d |F(v)|^2)`` with Euclidean norms, which is
    chart free and equals ``|f'(z)| (1+|z|^2) / (1+|f(z)|^2)``.
    """
    d = p.shape[-1] - 1
    P, Q, PZ, PW, QZ, QW = lift_partials(p, q, Z, W)
    det = PZ * QW - PW * QZ
    nv = np.abs(Z) ** 2 + np.abs(W) ** 2
    nf = np.abs(P) ** 2 + np.abs(Q) ** 2
    return np.abs(det) * nv / (d * nf)


def spherical_derivative(fam: RationalFamily, lam, z) -> float:
    fam.check_parameter(lam)
    pt = SpherePoint.from_complex(z)
    p, q = fam.coeffs(complex(lam))
    return float(spherical_derivative_lift(p, q, pt.Z, pt.W))


def chart_eval(fam: RationalFamily, lam, z):
    """Direct chart evaluation ``P(z)/Q(z)`` (inhomogeneous, for cross-checks)."""
    p, q = fam.coeffs(complex(lam))
    z = np.asarray(z, dtype=complex)
    num = sum(p[k] * z ** k for k in range(fam.degree + 1))
    den = sum(q[k] * z ** k for k in range(fam.degree + 1))
    return num / den


def preimage_form(p, q, Y0, Y1):
    """Coefficients of ``Y1 P - Y0 Q``: its roots are the preimages of ``(Y0:Y1)``."""
    return Y1[..., None] * p - Y0[..., None] * q


def preimages(fam: RationalFamily, lam, pt: SpherePoint, backend=None):
    """All ``d`` preimages of ``pt`` (with multiplicity) as SpherePoints."""
    from .numerics.roots import roots_aberth, strip

    p, q = fam.coeffs(complex(lam))
    c = preimage_form(p, q, np.asarray(pt.Z), np.asarray(pt.W))
    d = fam.degree
    use_w = abs(c[d]) >= abs(c[0])
    poly = c if use_w else c[::-1]
    s = strip(poly)
    n_inf = d - (s.size - 1)
    out = []
    if s.size > 1:
        for r in roots_aberth(s, backend=backend):
            out.append(SpherePoint(r, 1.0) if use_w else SpherePoint(1.0, r))
    out.extend([SpherePoint(1.0, 0.0) if use_w else SpherePoint(0.0, 1.0)] * n_inf)
    return out

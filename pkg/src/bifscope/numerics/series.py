"""Truncated power series with batched complex coefficients.

``Series.c`` has shape ``(..., K+1)``; ``c[..., k]`` multiplies ``y**k``.
Plain numbers and arrays broadcast against the leading axes.
"""
from __future__ import annotations

import numpy as np


class Series:
    __slots__ = ("c",)
    __array_ufunc__ = None  # ndarray operands defer to the reflected methods

    def __init__(self, c):
        self.c = np.asarray(c, dtype=complex)

    @property
    def order(self):
        return self.c.shape[-1] - 1

    @classmethod
    def variable(cls, centre, order):
        centre = np.asarray(centre, dtype=complex)
        c = np.zeros(centre.shape + (order + 1,), complex)
        c[..., 0] = centre
        if order >= 1:
            c[..., 1] = 1.0
        return cls(c)

    def _lift(self, o):
        if isinstance(o, Series):
            return o.c
        o = np.asarray(o, dtype=complex)
        c = np.zeros(np.broadcast_shapes(o.shape, self.c.shape[:-1]) + (self.c.shape[-1],), complex)
        c[..., 0] = o
        return c

    def __add__(self, o):
        return Series(self.c + self._lift(o))

    __radd__ = __add__

    def __sub__(self, o):
        return Series(self.c - self._lift(o))

    def __rsub__(self, o):
        return Series(self._lift(o) - self.c)

    def __neg__(self):
        return Series(-self.c)

    def __mul__(self, o):
        if not isinstance(o, Series):
            return Series(self.c * np.asarray(o, dtype=complex)[..., None])
        a, b = np.broadcast_arrays(self.c, o.c)
        out = np.zeros_like(a)
        K = a.shape[-1]
        for i in range(K):
            out[..., i:] += a[..., i:i + 1] * b[..., : K - i]
        return Series(out)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if not isinstance(o, Series):
            return Series(self.c / np.asarray(o, dtype=complex)[..., None])
        a, b = np.broadcast_arrays(self.c, o.c)
        out = np.zeros_like(a)
        K = a.shape[-1]
        for k in range(K):
            acc = a[..., k].copy()
            for i in range(1, k + 1):
                acc -= b[..., i] * out[..., k - i]
            out[..., k] = acc / b[..., 0]
        return Series(out)

    def __rtruediv__(self, o):
        return Series(self._lift(o)) / self

    def __pow__(self, k):
        out = Series(self._lift(1.0))
        for _ in range(k):
            out = out * self
        return out

    def constant(self):
        return self.c[..., 0]

    def __call__(self, y):
        """Horner evaluation at ``y`` (broadcast against leading axes)."""
        acc = self.c[..., -1]
        for k in range(self.order - 1, -1, -1):
            acc = acc * y + self.c[..., k]
        return acc

"""First-order complex jets.

A ``Jet`` carries a value and its derivatives with respect to the parameter
(``d_lambda``) and the dynamical variable (``d_z``).  Fields may be Python
complex numbers or numpy arrays of a common shape, so the same arithmetic
drives scalar Newton solves and batched grid computations.
"""
from __future__ import annotations

import numpy as np


class Jet:
    __slots__ = ("value", "d_lambda", "d_z")
    __array_priority__ = 100  # make ndarray defer to our reflected operators

    def __init__(self, value, d_lambda=0j, d_z=0j):
        self.value = value
        self.d_lambda = d_lambda
        self.d_z = d_z

    @classmethod
    def constant(cls, value):
        return cls(value, 0j * value, 0j * value)

    @classmethod
    def variable_lambda(cls, value):
        return cls(value, 1.0 + 0j * value, 0j * value)

    @classmethod
    def variable_z(cls, value):
        return cls(value, 0j * value, 1.0 + 0j * value)

    def __repr__(self):
        return f"Jet({self.value!r}, d_lambda={self.d_lambda!r}, d_z={self.d_z!r})"

    def __add__(self, o):
        if isinstance(o, Jet):
            return Jet(self.value + o.value, self.d_lambda + o.d_lambda, self.d_z + o.d_z)
        return Jet(self.value + o, self.d_lambda, self.d_z)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, Jet):
            return Jet(self.value - o.value, self.d_lambda - o.d_lambda, self.d_z - o.d_z)
        return Jet(self.value - o, self.d_lambda, self.d_z)

    def __rsub__(self, o):
        return Jet(o - self.value, -self.d_lambda, -self.d_z)

    def __neg__(self):
        return Jet(-self.value, -self.d_lambda, -self.d_z)

    def __mul__(self, o):
        if isinstance(o, Jet):
            return Jet(self.value * o.value,
                       self.d_lambda * o.value + self.value * o.d_lambda,
                       self.d_z * o.value + self.value * o.d_z)
        return Jet(self.value * o, self.d_lambda * o, self.d_z * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Jet):
            q = self.value / o.value
            return Jet(q, (self.d_lambda - q * o.d_lambda) / o.value,
                       (self.d_z - q * o.d_z) / o.value)
        return Jet(self.value / o, self.d_lambda / o, self.d_z / o)

    def __rtruediv__(self, o):
        q = o / self.value
        return Jet(q, -q * self.d_lambda / self.value, -q * self.d_z / self.value)

    def __pow__(self, k):
        if not isinstance(k, (int, np.integer)) or k < 0:
            return NotImplemented
        if k == 0:
            return Jet(1.0 + 0j * self.value, 0j * self.value, 0j * self.value)
        vk1 = self.value ** (k - 1)
        return Jet(vk1 * self.value, k * vk1 * self.d_lambda, k * vk1 * self.d_z)

    def select(self, mask, other):
        """Elementwise ``where(mask, self, other)`` for array-valued jets."""
        return Jet(np.where(mask, self.value, other.value),
                   np.where(mask, self.d_lambda, other.d_lambda),
                   np.where(mask, self.d_z, other.d_z))

    def __getitem__(self, idx):
        return Jet(self.value[idx], self.d_lambda[idx], self.d_z[idx])


def jet_finite_diff_check(fun, at, h=1e-5, slot="d_lambda"):
    """Relative error between a jet derivative and a central difference.

    ``fun`` maps a ``Jet`` (seeded in ``slot``) to a ``Jet`` or number.
    Returns ``|jet' - fd| / max(1, |jet'|)``.
    """
    seed = Jet.variable_lambda(complex(at)) if slot == "d_lambda" else Jet.variable_z(complex(at))
    out = fun(seed)
    deriv = getattr(out, slot) if isinstance(out, Jet) else 0j

    def plain(x):
        r = fun(Jet.constant(complex(x)))
        return r.value if isinstance(r, Jet) else r

    fd = (plain(at + h) - plain(at - h)) / (2 * h)
    return abs(deriv - fd) / max(1.0, abs(deriv))

"""Rectangular windows and uniform node grids in the complex plane."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class Window:
    re_min: float
    re_max: float
    im_min: float
    im_max: float

    def __post_init__(self):
        if not (self.re_max > self.re_min and self.im_max > self.im_min):
            raise ValueError(f"empty window {self}")

    @classmethod
    def parse(cls, text):
        parts = [float(x) for x in str(text).split(",")]
        if len(parts) != 4:
            raise ValueError("window must be 're_min,re_max,im_min,im_max'")
        return cls(*parts)

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["re_min"]), float(d["re_max"]), float(d["im_min"]), float(d["im_max"]))

    @classmethod
    def centered(cls, centre, radius):
        c = complex(centre)
        return cls(c.real - radius, c.real + radius, c.imag - radius, c.imag + radius)

    def to_dict(self):
        return asdict(self)

    def contains(self, lam):
        lam = np.asarray(lam)
        return ((lam.real >= self.re_min) & (lam.real <= self.re_max)
                & (lam.imag >= self.im_min) & (lam.imag <= self.im_max))

    def inside(self, other: "Window"):
        return (self.re_min >= other.re_min and self.re_max <= other.re_max
                and self.im_min >= other.im_min and self.im_max <= other.im_max)


@dataclass(frozen=True)
class Grid:
    """Uniform node grid; node ``(i, j)`` sits at ``origin + j*h + 1j*i*h``.

    Rows index the imaginary axis (ascending), columns the real axis.  The
    spacing is set by the real extent and ``nx``; the top edge is snapped to
    a whole number of steps.
    """

    window: Window
    nx: int
    ny: int
    h: float

    @classmethod
    def over(cls, window: Window, res: int):
        if res < 3:
            raise ValueError("resolution must be at least 3")
        h = (window.re_max - window.re_min) / (res - 1)
        ny = max(3, int(round((window.im_max - window.im_min) / h)) + 1)
        snapped = Window(window.re_min, window.re_max, window.im_min, window.im_min + (ny - 1) * h)
        return cls(snapped, int(res), ny, h)

    def to_dict(self):
        return {"window": self.window.to_dict(), "nx": self.nx, "ny": self.ny, "h": self.h}

    @property
    def shape(self):
        return (self.ny, self.nx)

    def nodes(self):
        re = self.window.re_min + self.h * np.arange(self.nx)
        im = self.window.im_min + self.h * np.arange(self.ny)
        return re[None, :] + 1j * im[:, None]

    def interior_nodes(self):
        return self.nodes()[1:-1, 1:-1]

    def locate(self, lam):
        """Nearest node indices ``(i, j)`` (may fall outside the grid)."""
        lam = np.asarray(lam)
        j = np.rint((lam.real - self.window.re_min) / self.h).astype(int)
        i = np.rint((lam.imag - self.window.im_min) / self.h).astype(int)
        return i, j

"""Binary grids, 16-bit PGM images, CSV samples and JSON reports.

Every writer is deterministic: identical arrays give identical bytes.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .grid import Grid, Window

# magic, nx, ny, re_min, re_max, im_min, im_max, pad
HEADER = struct.Struct("<4sII4f4x")
MAGIC_POTENTIAL = b"BIFG"
MAGIC_MEASURE = b"BIFM"


def write_grid(path, values, window: Window, magic=MAGIC_MEASURE):
    """Header then float64 little-endian values, row-major, row 0 = im_min."""
    a = np.ascontiguousarray(values, dtype="<f8")
    ny, nx = a.shape
    head = HEADER.pack(magic, nx, ny, window.re_min, window.re_max, window.im_min, window.im_max)
    with open(path, "wb") as f:
        f.write(head)
        f.write(a.tobytes())


def read_grid(path):
    """Returns ``(values, window, magic)``; the window comes back in float32 precision."""
    data = Path(path).read_bytes()
    magic, nx, ny, a, b, c, d = HEADER.unpack_from(data)
    if magic not in (MAGIC_POTENTIAL, MAGIC_MEASURE):
        raise ValueError(f"not a bifscope grid: magic {magic!r}")
    values = np.frombuffer(data, "<f8", count=nx * ny, offset=HEADER.size).reshape(ny, nx)
    return values.copy(), Window(a, b, c, d), magic


def to_gray16(values, log_scale=True):
    """Map nonnegative values to 0..65535 (0 stays 0, the maximum is white)."""
    v = np.nan_to_num(np.asarray(values, float), nan=0.0, posinf=0.0, neginf=0.0)
    v = np.maximum(v, 0.0)
    top = v.max()
    if top <= 0:
        return np.zeros(v.shape, np.uint16)
    if log_scale:
        pos = v[v > 0]
        lo = max(pos.min(), top * 1e-12)
        span = math.log(top) - math.log(lo)
        if span > 0:
            out = (np.log(np.maximum(v, lo)) - math.log(lo)) / span
        else:
            out = np.ones(v.shape)  # a single positive level is white
        out = np.where(v > 0, 1.0 + out * 65534.0, 0.0)
    else:
        out = v / top * 65535.0
    return np.clip(np.rint(out), 0, 65535).astype(np.uint16)


def write_pgm(path, values, log_scale=True):
    """16-bit binary PGM; the top image row is the largest imaginary part."""
    g = to_gray16(values, log_scale)[::-1]
    ny, nx = g.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{nx} {ny}\n65535\n".encode("ascii"))
        f.write(g.astype(">u2").tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    nx, ny = map(int, parts[1].split())
    maxval = int(parts[2])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(parts[3], dtype, count=nx * ny).reshape(ny, nx).astype(np.uint16)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (complex, np.complexfloating)):
        return [_clean(obj.real), _clean(obj.imag)]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps(obj):
    """Canonical JSON: sorted keys, non-finite floats as strings, complex as pairs."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def write_points_csv(path, points):
    """``re,im`` rows with 17 significant digits; infinity is written as ``inf,0``."""
    pts = np.asarray(points, complex).ravel()
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["re", "im"])
        for z in pts:
            w.writerow([repr(float(z.real)), repr(float(z.imag))])


def read_points_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))[1:]
    return np.array([complex(float(a), float(b)) for a, b in rows])

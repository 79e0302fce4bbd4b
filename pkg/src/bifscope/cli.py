"""Command line front end: ``bifscope <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, io
from ._backend import BACKEND, get_threads, set_threads
from .errors import BifscopeError, CertificationError, NumericalError
from .family import build_family
from .grid import Window

log = logging.getLogger("bifscope")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

EPILOG = """examples:
  bifscope bifmeasure --map "z^2+c" --marked "c" --window -2.5,1.5,-2,2 --res 512 --out run1
  bifscope julia --map "z^2-1" --marked "c" --lam 0 --samples 100000 --out jul
  bifscope lyapunov --map "(z^2-c)^2/(4*z*(z-1)*(z-c))" --marked 2 --lam 0.3,0.1
  bifscope misiurewicz --map "z^2+c" --marked c --window -2.2,0.6,-1.4,1.4 --grid 20
  bifscope similarity --map "z^2+c" --marked c --lam -1.8 --n 1 --p 1 --depth 4
  bifscope jstability --map "z^2+c" --marked c --window -1,-0.5,-0.25,0.25 --res 21
  bifscope classify --family-file lattes.json --window 0.2,0.45,0.05,0.3
"""


class ConfigError(BifscopeError, ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    map: str = ""
    marked: str = ""
    window: dict = field(default_factory=dict)
    res: int = 256
    tol: float = 1e-9
    samples: int = 100_000
    seed: int = 0
    threads: int = 0
    out: str = "."
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["version"] = __version__
        d["backend"] = BACKEND
        return d


def _complex(text):
    text = str(text).strip()
    if "," in text:
        a, b = text.split(",")
        return complex(float(a), float(b))
    return complex(text.replace("i", "j"))


def _common(p, window=True, res=True):
    p.add_argument("--map", help="rational map in z with parameter c (or lambda)")
    p.add_argument("--marked", help="marked point a(c)")
    p.add_argument("--family-file", help="JSON file with keys map, marked and optional domain {re_min, re_max, im_min, im_max}")
    if window:
        p.add_argument("--window", help="re_min,re_max,im_min,im_max")
    if res:
        p.add_argument("--res", type=int, help="grid points along the real axis")
    p.add_argument("--tol", type=float, default=1e-9, help="Green function truncation tolerance")
    p.add_argument("--samples", type=int, default=100_000, help="equilibrium-measure samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=0, help="worker threads (0 = all)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    top = argparse.ArgumentParser(prog="bifscope", description=__doc__.splitlines()[0],
                                  epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    top.add_argument("--version", action="version", version=__version__)
    sub = top.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, help, example, **kw):
        p = sub.add_parser(name, help=help, description=help, epilog="example:\n  " + example,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        _common(p, **kw)
        return p

    add("bifmeasure", "bifurcation measure on a parameter grid (grid binary, PGM, stats JSON)",
        'bifscope bifmeasure --map "z^2+c" --marked c --window -2.5,1.5,-2,2 --res 512')
    p = add("julia", "equilibrium-measure samples of one map (CSV, PGM histogram)",
            'bifscope julia --map "z^2+c" --marked c --lam -1 --samples 100000 --res 256')
    p.add_argument("--lam", required=True, help="parameter, as re,im or a complex literal")
    p.add_argument("--per-chain", type=int, default=1)
    p = add("lyapunov", "Lyapunov exponent and Lattès test at one parameter (JSON)",
            'bifscope lyapunov --map "z^2-2" --marked c --lam 0', window=False, res=False)
    p.add_argument("--lam", required=True)
    p.add_argument("--per-chain", type=int, default=1)
    p = add("misiurewicz", "certified prerepelling parameters in a window (JSON)",
            'bifscope misiurewicz --map "z^2+c" --marked c --window -2.2,0.6,-1.4,1.4', res=False)
    p.add_argument("--grid", type=int, default=20, help="seed lattice size per side")
    p.add_argument("--n-max", type=int, default=6)
    p.add_argument("--p-max", type=int, default=3)
    p = add("similarity", "renormalised bifurcation measures at a prerepelling parameter (JSON, PGM strip)",
            'bifscope similarity --map "z^2+c" --marked c --lam -1.8 --n 1 --p 1 --depth 4')
    p.add_argument("--lam", required=True, help="seed for the prerepelling parameter")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--depth", type=int, default=4)
    p = add("jstability", "Lyapunov exponent grid and harmonicity defect (JSON, PGM)",
            'bifscope jstability --map "z^2+c" --marked c --window -1,-0.5,-0.25,0.25 --res 21')
    p.add_argument("--per-chain", type=int, default=50)
    p = add("classify", "family diagnosis: Lattès, isotrivial, generic or stable (JSON)",
            'bifscope classify --map "z^2+c" --marked c --window -2.5,1.5,-2,2 --res 512')
    p.add_argument("--lambda-samples", type=int, default=5)
    return top


def _fix_negative_values(argv):
    """Let option values start with '-' (``--window -2.5,1.5,-2,2``)."""
    out = []
    it = iter(argv)
    for a in it:
        if a in ("--window", "--lam"):
            nxt = next(it, None)
            if nxt is None:
                out.append(a)
            else:
                out.append(f"{a}={nxt}")
        else:
            out.append(a)
    return out


def _family(args):
    map_expr, marked, window = args.map, args.marked, getattr(args, "window", None)
    if args.family_file:
        try:
            doc = json.loads(Path(args.family_file).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read family file: {exc}") from exc
        map_expr = map_expr or doc.get("map")
        marked = marked or doc.get("marked")
        w = doc.get("window", doc.get("domain"))
        if window is None and w is not None:
            if isinstance(w, dict):
                try:
                    w = [w[k] for k in ("re_min", "re_max", "im_min", "im_max")]
                except KeyError as exc:
                    raise ConfigError(f"family file domain lacks {exc}") from exc
            window = ",".join(map(str, w)) if isinstance(w, list) else w
    if not map_expr:
        raise ConfigError("missing --map (or --family-file)")
    if not marked:
        raise ConfigError("missing --marked (or --family-file)")
    return map_expr, marked, window


def make_config(args):
    map_expr, marked, window = _family(args)
    extra = {}
    for k in ("lam", "per_chain", "grid", "n_max", "p_max", "n", "p", "depth", "lambda_samples"):
        if hasattr(args, k):
            extra[k] = getattr(args, k)
    if "lam" in extra:
        try:
            z = _complex(extra["lam"])
        except ValueError as exc:
            raise ConfigError(f"bad --lam: {exc}") from exc
        extra["lam"] = [z.real, z.imag]
    w = {}
    if window is not None:
        try:
            w = Window.parse(window).to_dict()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    res = getattr(args, "res", None)
    cfg = RunConfig(args.command, map_expr, marked, w, res or 256, args.tol, args.samples, args.seed,
                    args.threads, args.out, extra)
    if cfg.res < 3 or cfg.samples < 1:
        raise ConfigError("--res must be >= 3 and --samples >= 1")
    return cfg


def _need_window(cfg):
    if not cfg.window:
        raise ConfigError(f"{cfg.command} needs --window")
    return Window.from_dict(cfg.window)


class Output:
    """Writes files into the run directory, each with a config sidecar."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = Path(cfg.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []

    def _sidecar(self, name, meta=None):
        io.write_json(self.dir / (name + ".json"), {"config": self.cfg.to_dict(), "file": name, **(meta or {})})

    def json(self, name, payload):
        io.write_json(self.dir / name, {"config": self.cfg.to_dict(), **payload})
        self.files.append(name)

    def grid(self, name, values, window, magic=io.MAGIC_MEASURE, meta=None):
        io.write_grid(self.dir / name, values, window, magic)
        self._sidecar(name, meta)
        self.files.append(name)

    def pgm(self, name, values, meta=None):
        io.write_pgm(self.dir / name, values)
        self._sidecar(name, meta)
        self.files.append(name)

    def csv(self, name, points, meta=None):
        io.write_points_csv(self.dir / name, points)
        self._sidecar(name, meta)
        self.files.append(name)


def cmd_bifmeasure(cfg, fam, marked, out):
    from .measure import bif_measure, mass_area_slope, support_fraction

    window = _need_window(cfg)
    m = bif_measure(fam, marked, window, cfg.res, cfg.tol)
    grid = {"grid": m.grid.to_dict()}
    out.grid("potential.bin", m.potential, m.grid.window, io.MAGIC_POTENTIAL, grid)
    out.grid("measure.bin", m.cell_mass, m.grid.window, io.MAGIC_MEASURE, grid)
    out.pgm("measure.pgm", m.cell_mass, grid)
    stats = m.stats()
    stats["support_fraction"] = support_fraction(m)
    if stats["total_mass"] > 0:
        stats["mass_area_slope"] = mass_area_slope(m, seed=cfg.seed)
    out.json("stats.json", {"stats": stats, **grid})


def cmd_julia(cfg, fam, marked, out):
    from .measure import mes_sample

    lam = complex(*cfg.extra["lam"])
    s = mes_sample(fam, lam, cfg.samples, seed=cfg.seed, per_chain=cfg.extra["per_chain"])
    pts = s.points
    out.csv("samples.csv", pts)
    window = Window.from_dict(cfg.window) if cfg.window else Window(-2, 2, -2, 2)
    res = cfg.res
    finite = pts[np.isfinite(pts)]
    H, _, _ = np.histogram2d(finite.imag, finite.real, bins=(res, res),
                             range=[[window.im_min, window.im_max], [window.re_min, window.re_max]])
    out.pgm("julia.pgm", H / max(len(pts), 1), {"window": window.to_dict(), "bins": res})
    out.json("julia.json", {"count": len(pts), "retries": s.retries, "burn_in": s.burn_in,
                            "per_chain": s.per_chain, "lambda": [lam.real, lam.imag]})


def cmd_lyapunov(cfg, fam, marked, out):
    from .exponents import lattes_test, lyapunov

    lam = complex(*cfg.extra["lam"])
    est = lyapunov(fam, lam, cfg.samples, cfg.seed, cfg.extra["per_chain"])
    test = lattes_test(fam, lam, estimate=est)
    out.json("lyapunov.json", {"estimate": est.to_dict(), "lattes_test": test,
                               "briend_duval_floor": 0.5 * math.log(fam.degree)})


def cmd_misiurewicz(cfg, fam, marked, out):
    from .periodic import misiurewicz_scan

    window = _need_window(cfg)
    params, stats = misiurewicz_scan(fam, marked, window, cfg.extra["n_max"], cfg.extra["p_max"],
                                     cfg.extra["grid"])
    out.json("misiurewicz.json", {"parameters": [p.to_dict() for p in params], "stats": stats})


def cmd_similarity(cfg, fam, marked, out):
    from .periodic import similarity_study, solve_misiurewicz

    seed_lam = complex(*cfg.extra["lam"])
    mp = solve_misiurewicz(fam, marked, seed_lam, cfg.extra["n"], cfg.extra["p"])
    if cfg.window:
        omega = Window.from_dict(cfg.window)
    else:
        h = 1.25 / (cfg.res - 1)
        omega = Window(-1.0, 0.25, -(cfg.res // 2) * h, (cfg.res // 2 - 1) * h)
    seq, report = similarity_study(fam, marked, mp, cfg.extra["depth"], omega, cfg.res, cfg.samples, cfg.seed)
    if seq:
        strip = np.concatenate([m.cell_mass / max(m.cell_mass.max(), 1e-300) for m in seq], axis=1)
        out.pgm("similarity.pgm", strip, {"depths": len(seq), "grid": seq[0].grid.to_dict()})
    out.json("similarity.json", {"parameter": mp.to_dict(), "report": report})


def cmd_jstability(cfg, fam, marked, out):
    from .exponents import jstability_scan, noise_floor

    window = _need_window(cfg)
    a = jstability_scan(fam, window, cfg.res, cfg.samples, cfg.seed, cfg.extra["per_chain"])
    b = jstability_scan(fam, window, cfg.res, cfg.samples, cfg.seed + 1, cfg.extra["per_chain"])
    floor = noise_floor(a, b)
    out.pgm("defect.pgm", a.defect, {"grid": a.grid.to_dict(), "interior": True})
    out.json("jstability.json", {"scan": a.to_dict(), "noise_floor": floor, "reseed": cfg.seed + 1})


def cmd_classify(cfg, fam, marked, out):
    from .exponents import diagnose_family

    window = _need_window(cfg)
    budget = {"resolution": cfg.res, "lambda_samples": cfg.extra["lambda_samples"],
              "lyapunov_samples": cfg.samples}
    diag = diagnose_family(fam, marked, window, budget, cfg.seed)
    out.json("diagnosis.json", {"diagnosis": diag.to_dict()})


COMMANDS = {
    "bifmeasure": cmd_bifmeasure,
    "julia": cmd_julia,
    "lyapunov": cmd_lyapunov,
    "misiurewicz": cmd_misiurewicz,
    "similarity": cmd_similarity,
    "jstability": cmd_jstability,
    "classify": cmd_classify,
}


def main(argv=None):
    parser = build_parser()
    argv = _fix_negative_values(list(sys.argv[1:] if argv is None else argv))
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args)
        set_threads(cfg.threads)
        fam, marked = build_family(cfg.map, cfg.marked)
    except BifscopeError as exc:
        parser.print_usage(sys.stderr)
        print(f"bifscope: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Output(cfg)
    try:
        COMMANDS[cfg.command](cfg, fam, marked, out)
    except (NumericalError, CertificationError) as exc:
        print(f"bifscope: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BifscopeError as exc:
        print(f"bifscope: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("wrote %s with %d threads", ", ".join(out.files), get_threads())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

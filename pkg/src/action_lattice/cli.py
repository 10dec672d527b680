"""Command line interface: ``action-lattice <command> [--config FILE] [--out DIR]``.

Exit codes: 0 when every check passes, 1 when a check fails, 2 on usage
errors (bad options, malformed or unknown config keys).
"""

from __future__ import annotations

import csv
import functools
import json
import logging
import os
import sys

import click
import numpy as np

from . import pipeline as pl

SPECTRA_FIELDS = ["s", "r", "mode", "basepoint", "value", "index", "nullity", "winding",
                  "action_error"]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_json(data, out, name):
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, name)
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
    return path


def write_spectra(rows, out, name="spectra.csv"):
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, name)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SPECTRA_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in SPECTRA_FIELDS})
    return path


def common(f):
    """Shared ``--config`` and ``--out`` options; the config arrives loaded."""

    @click.option("--config", "config_path", type=click.Path(dir_okay=False),
                  help="JSON file merged over the defaults.")
    @click.option("--out", default="out", show_default=True, type=click.Path(file_okay=False),
                  help="Output directory.")
    @functools.wraps(f)
    def wrapper(config_path, out, **kw):
        try:
            cfg = pl.load_config(config_path)
        except pl.ConfigError as exc:
            raise click.UsageError(str(exc)) from exc
        return f(cfg=cfg, out=out, **kw)

    return wrapper


def _instance(cfg):
    try:
        return pl.build_instance(cfg)
    except (pl.ScheduleError, ValueError) as exc:
        raise click.UsageError(f"inconsistent config: {exc}") from exc


def _finish(ok, payload):
    click.echo(json.dumps(_jsonable(payload), sort_keys=True))
    sys.exit(0 if ok else 1)


def _problem_opts(f):
    f = click.option("--s", "s", type=float, help="Family parameter (default: first jump point).")(f)
    f = click.option("--r", "r", type=int, help="Lattice size (default: first level).")(f)
    f = click.option("--mode", type=click.Choice(["closed", "fiber"]), default="fiber",
                     show_default=True)(f)
    f = click.option("--basepoint", type=float, multiple=True,
                     help="Base point coordinates for fiber problems (default 1.0).")(f)
    return f


def _problem(inst, s, r, mode, basepoint):
    r = inst.r0 if r is None else r
    s = inst.jumps[inst.r0] if s is None else s
    bp = None
    if mode == "fiber":
        bp = list(basepoint) or [1.0] * inst.manifold.dim
        if len(bp) != inst.manifold.dim:
            raise click.UsageError("basepoint dimension does not match the manifold")
    return inst.problem(r, s, mode, bp), r, s


def _critical(pr, kmax):
    from .dynamics import analytic_seeds, find_critical
    return find_critical(pr, analytic_seeds(pr, kmax=kmax))


@click.group()
@click.option("-v", "--verbose", count=True, help="Log progress (repeat for debug output).")
def main(verbose):
    """Lattice approximations of the action functional and their window homology."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.group()
def orbits():
    """Periodic orbits as critical points."""


@orbits.command("find")
@common
@_problem_opts
@click.option("--kmax", default=12, show_default=True, help="Largest winding seeded.")
def orbits_find(cfg, out, s, r, mode, basepoint, kmax):
    """Critical points of S_r with their reconstructed orbits."""
    from .dynamics import reconstruct_orbit
    inst = _instance(cfg)
    pr, r, s = _problem(inst, s, r, mode, basepoint)
    rows = []
    for c in _critical(pr, kmax):
        orb = reconstruct_orbit(pr, c.x)
        rows.append({"value": c.value, "index": c.morse_index, "nullity": c.nullity,
                     "winding": list(c.winding), "orbit": orb,
                     "point": json.loads(c.point.to_json())})
    ok = all(x["orbit"]["closure_error"] < cfg["tolerances"]["closure"] for x in rows)
    write_json({"s": s, "r": r, "mode": mode, "critical_points": rows}, out, "orbits.json")
    _finish(ok, {"s": s, "r": r, "mode": mode, "found": len(rows), "ok": ok})


@main.command("action-spectrum")
@common
@click.option("--s", "s_values", type=float, multiple=True,
              help="Parameters (default: the configured orbit grid).")
def action_spectrum(cfg, out, s_values):
    """Closed critical values against the profile's action set."""
    if s_values:
        cfg = pl._merge(cfg, {"orbits": {"s_values": list(s_values)}})
    rep = pl.run_suite("action-set", cfg)
    write_json(rep, out, "action_spectrum.json")
    _finish(rep["ok"], {"rows": [{k: x[k] for k in ("s", "r", "ok")} for x in rep["rows"]],
                        "ok": rep["ok"]})


def _window(cfg, s, r, mode, basepoint, a, b, kmax):
    from .morse import build_window, WindowError
    inst = _instance(cfg)
    pr, r, s = _problem(inst, s, r, mode, basepoint)
    cps = _critical(pr, kmax)
    try:
        return build_window(pr, inst.a if a is None else a, inst.b if b is None else b, cps), r, s
    except (WindowError, ValueError) as exc:
        raise click.UsageError(str(exc)) from exc


def _window_opts(f):
    f = click.option("--a", type=float, help="Lower bound (default: the instance's a).")(f)
    f = click.option("--b", type=float, help="Upper bound (default: the instance's b).")(f)
    f = click.option("--kmax", default=12, show_default=True)(f)
    return _problem_opts(f)


@main.command("morse-homology")
@common
@_window_opts
def morse_homology(cfg, out, s, r, mode, basepoint, a, b, kmax):
    """F_2 Morse complex and homology of a window."""
    from .morse import morse_complex
    w, r, s = _window(cfg, s, r, mode, basepoint, a, b, kmax)
    data = morse_complex(w).to_dict() if w.generators else {
        "field": "F2", "generators": [], "differential": {}, "ranks": {}}
    data.update(s=s, r=r, mode=mode, a=w.a, b=w.b)
    write_json(data, out, "morse_homology.json")
    _finish(True, {"ranks": data["ranks"], "generators": len(data["generators"])})


@main.command("conley-window")
@common
@_window_opts
def conley_window(cfg, out, s, r, mode, basepoint, a, b, kmax):
    """Generators, flow time and bound regularity of a window."""
    w, r, s = _window(cfg, s, r, mode, basepoint, a, b, kmax)
    data = w.to_dict()
    data.update(s=s, r=r, mode=mode)
    write_json(data, out, "window.json")
    _finish(True, {"generators": len(w.generators), "tau": w.tau})


@main.group()
def ss():
    """Spectral sequences of filtered chain complexes."""


@ss.command("compute")
@common
@click.option("--sphere", "k", default=2, show_default=True, help="Fiber sphere dimension.")
@click.option("--circle-vertices", default=1, show_default=True, help="Vertices of the base circle.")
@click.option("--field", type=click.Choice(["F2", "Q", "F3", "F5"]), default="F2",
              show_default=True)
def ss_compute(cfg, out, k, circle_vertices, field):
    """Pages of the degeneracy filtration of sphere x circle over the circle."""
    from .algebra import simplicial_circle, sphere
    from .spectral import abutment_check, check_pages, collapse_page, pages, product_model
    _, fc = product_model(sphere(k), simplicial_circle(circle_vertices), field)
    pl_ = pages(fc, field)
    data = [pg.to_dict() for pg in pl_]
    ab = abutment_check(fc, field, page_list=pl_)
    ok = ab["ok"] and all(x["ok"] for x in check_pages(pl_, field))
    write_json(data, out, "pages.json")
    _finish(ok, {"pages": len(data), "collapse_page": collapse_page(pl_), "abutment": ab["ok"],
                 "ok": ok})


@main.group()
def ez():
    """Shuffle products and chain complexes."""


@ez.command("check")
@common
@click.option("--max-degree", default=5, show_default=True)
@click.option("--complex", "complex_path", type=click.Path(exists=True, dir_okay=False),
              help="Also compute the homology of a chain complex stored as JSON.")
def ez_check(cfg, out, max_degree, complex_path):
    """Exhaustive derivation, commutativity and associativity identities."""
    from .algebra import ChainComplex, ChainError, ez_identities, homology
    rep = ez_identities(max_degree)
    payload = {"ok": rep["ok"], "checked": len(rep["rows"]),
               "derivation_sign": rep["derivation_sign"]}
    if complex_path:
        try:
            with open(complex_path) as fh:
                cc = ChainComplex.from_dict(json.load(fh))
        except (json.JSONDecodeError, KeyError, ChainError, ValueError) as exc:
            raise click.UsageError(f"bad complex file: {exc}") from exc
        payload["homology"] = homology(cc).to_dict()
        rep["homology"] = payload["homology"]
    write_json(rep, out, "ez.json")
    _finish(rep["ok"], payload)


@main.group()
def product():
    """Concatenation products."""


@product.command("check")
@common
def product_check(cfg, out):
    """Additivity, subadditivity and the pairing of window generators."""
    rep = pl.run_report(cfg, ["additivity", "subadditivity", "products"])
    write_json(rep["suites"], out, "product.json")
    _finish(rep["ok"], {s: r["ok"] for s, r in rep["suites"].items()})


@main.command("verify")
@common
@click.argument("suite_id")
def verify(cfg, out, suite_id):
    """Run one verification suite (e.g. lemma-6.4) and print its summary."""
    if suite_id not in pl.SUITES:
        raise click.UsageError(f"unknown suite {suite_id!r}; known: {', '.join(pl.SUITES)}")
    rep = pl.run_suite(suite_id, cfg)
    write_json(rep, out, f"{suite_id}.json")
    keys = ("id", "samples", "violations", "worst_margin", "ok")
    _finish(rep["ok"], {k: rep[k] for k in keys if k in rep})


@main.command("report")
@common
@click.option("--suite", "suites", multiple=True, help="Restrict to these suite ids.")
@click.option("--no-figures", is_flag=True, help="Skip the matplotlib figures.")
def report(cfg, out, suites, no_figures):
    """Run the suites and write report.json, spectra.csv, pages.json and figures."""
    for s in suites:
        if s not in pl.SUITES:
            raise click.UsageError(f"unknown suite {s!r}; known: {', '.join(pl.SUITES)}")
    rep = pl.run_report(cfg, suites or None)
    spectra = rep.pop("spectra")
    page_data = rep.pop("pages")
    write_json(rep, out, "report.json")
    write_spectra(spectra, out)
    write_json(page_data, out, "pages.json")
    if not no_figures:
        from .plotting import render_all
        render_all({**rep, "spectra": spectra, "pages": page_data}, os.path.join(out, "figures"))
    _finish(rep["ok"], {"ok": rep["ok"], "failed": rep["failed"]})


if __name__ == "__main__":
    main()

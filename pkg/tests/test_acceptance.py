"""The twelve acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line; the lines are printed together in
the terminal summary.  Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import pytest

from action_lattice.pipeline import _Context, load_config, run_suite
from conftest import ACCEPTANCE


@pytest.fixture(scope="module")
def ctx():
    return _Context(load_config())


def record(n, title, ok, detail):
    ACCEPTANCE.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})")
    return ok


def test_01_orbit_reconstruction(ctx):
    rep = run_suite("orbits", ctx=ctx)
    ok = (rep["samples"] >= 200 and rep["violations"] == 0
          and rep["worst_closure"] < 1e-6 and rep["worst_action_error"] < 1e-6)
    assert record(1, "orbit reconstruction", ok,
                  f"{rep['samples']} points, closure {rep['worst_closure']:.1e}, "
                  f"action {rep['worst_action_error']:.1e}")


def test_02_action_set(ctx):
    rep = run_suite("action-set", ctx=ctx)
    ok = all(len(x["found"]) == len(x["expected"]) and x["max_error"] <= 1e-5
             for x in rep["rows"])
    worst = max(x["max_error"] for x in rep["rows"])
    assert {x["s"] for x in rep["rows"]} == {6.0, 10.0, 20.0}
    assert record(2, "action-set match", ok,
                  f"s = 6, 10, 20; {sum(len(x['found']) for x in rep['rows'])} values, "
                  f"max error {worst:.1e}")


def test_03_gradient_estimates(ctx):
    rep = run_suite("lemma-2.3", ctx=ctx)
    ok = rep["samples"] >= 10000 and rep["violations"] == 0
    assert record(3, "gradient estimates", ok,
                  f"{rep['samples']} samples, K = {rep['K']:.3g}, {rep['violations']} violations")


def test_04_drift(ctx):
    rep = run_suite("lemma-6.4", ctx=ctx)
    norms = {round(x["F_norm"], 6) for x in rep["rows"] if x["samples"]}
    worst = max(x["worst_margin"] for x in rep["rows"])
    ok = norms == {0.0, 0.3} and rep["violations"] == 0 and worst <= 1e-4
    assert record(4, "drift law", ok, f"|F| in {sorted(norms)}, {rep['samples']} points, "
                  f"max |d/ds + 1| = {worst:.1e}")


def test_05_additivity(ctx):
    rep = run_suite("additivity", ctx=ctx)
    ok = ({x["r"] for x in rep["rows"]} == {2, 4}
          and all(x["samples"] >= 1000 and x["worst"] <= 1e-12 for x in rep["rows"]))
    assert record(5, "exact additivity", ok,
                  f"max error {max(x['worst'] for x in rep['rows']):.1e}")


def test_06_subadditivity(ctx):
    rep = run_suite("subadditivity", ctx=ctx)
    rows = rep["rows"]
    ok = all(x["samples"] >= 1000 and x["violations"] == 0 and x["worst_off_diagonal"] <= 0
             and x["worst_diagonal"] <= 1e-12 and x["max_transverse_eigenvalue"] <= -1e-4
             for x in rows)
    assert record(6, "subadditivity", ok,
                  f"max off-diagonal {max(x['worst_off_diagonal'] for x in rows):.2e}, "
                  f"diagonal {max(x['worst_diagonal'] for x in rows):.1e}, "
                  f"transverse {max(x['max_transverse_eigenvalue'] for x in rows):.2f}")


def test_07_suspension(ctx):
    rep = run_suite("suspension", ctx=ctx)
    rows = rep["rows"]
    by = {m: [x for x in rows if x["manifold"] == m] for m in ("circle", "torus")}
    ok = (all(by.values())
          and all(x["shift"] == 1 for x in by["circle"])
          and all(x["shift"] == 2 for x in by["torus"])
          and all(x["value_difference"] <= 1e-12 for x in rows))
    assert record(7, "suspension shift", ok,
                  f"{len(by['circle'])} circle and {len(by['torus'])} torus points")


def test_08_window_vs_oracle(ctx):
    rep = run_suite("windows", ctx=ctx)
    ok = rep["generator_counts"] == [1, 3, 5] and all(x["ok"] for x in rep["rows"])
    assert record(8, "window homology vs oracle", ok,
                  "; ".join(f"{x['generators']} gens {x['morse_ranks']}" for x in rep["rows"]))


def test_09_ez(ctx):
    from math import comb
    from action_lattice.algebra import ez_identities
    rep = ez_identities(5)
    terms = [x for x in rep["rows"] if x["check"] == "terms"]
    ok = rep["ok"] and all(x["terms"] == comb(x["n"] + x["m"], x["n"]) for x in terms)
    degrees = {(x["n"], x["m"]) for x in terms}
    ok = ok and degrees == {(n, m) for n in range(6) for m in range(6) if n + m <= 5}
    assert record(9, "EZ identities", ok, f"{len(rep['rows'])} checks over n + m <= 5")


def test_10_spectral(ctx):
    rep = run_suite("spectral", ctx=ctx)
    ok = (rep["E2"] == rep["kunneth"] and rep["collapse_page"] <= 2 and rep["abutment"]["ok"]
          and rep["leibniz"]["ok"] and all(p["ok"] for p in rep["leibniz"]["pages"]))
    assert record(10, "spectral engine", ok,
                  f"collapse at page {rep['collapse_page']}, Leibniz on "
                  f"{len(rep['leibniz']['pages'])} pages")


def test_11_hamiltonian_suite(ctx):
    prof = run_suite("profile", ctx=ctx)
    fib = run_suite("lemma-7.1", ctx=ctx)
    ids = {f"f{i}" for i in range(1, 9)} | {f"H{i}" for i in range(1, 5)}
    have = {k for k in prof["reports"]["default"]} | set(prof["reports"]["asymptotic"])
    worst_grad = max(x["worst_margin"] for x in fib["rows"]) + 2.0
    ok = (ids <= have and prof["ok"] and fib["violations"] == 0 and fib["samples"] > 0
          and worst_grad <= 2 + 1e-6)
    assert record(11, "Hamiltonian suite", ok,
                  f"default and perturbed profiles, max fiber gradient {worst_grad:.3g}")


def test_12_continuation(ctx):
    rep = run_suite("continuation", ctx=ctx)
    ok = all(rep["bijective"].values()) and rep["independent"] and rep["ranks_preserved"]
    assert set(rep["maps"]) == {"end", "0.25", "0.75"}
    assert record(12, "continuation coherence", ok,
                  f"[{rep['interval'][0]:.3g}, {rep['interval'][1]:.3g}], map {rep['maps']['end']}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))

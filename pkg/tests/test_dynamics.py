import numpy as np
import pytest

from action_lattice.dynamics import (analytic_seeds, chi, chi_r, find_critical,
                                     hessian_signature, newton, pseudo_gradient,
                                     random_lattice_points, reconstruct_orbit)
from action_lattice.lattice import LatticePoint


def test_chi_cutoffs():
    e = 10.0
    assert chi(np.array(0.0), e) == 1.0
    assert chi(np.array(e / 5 * 0.99), e) == 1.0
    assert chi(np.array(e / 4 * 1.01), e) == 0.0
    mid = float(chi(np.array(0.225 * e), e))
    assert 0 < mid < 1
    # C^1: one-sided difference quotients agree in the transition band
    x, h = 0.22 * e, 1e-6
    d1 = (chi(np.array(x + h), e) - chi(np.array(x), e)) / h
    d2 = (chi(np.array(x), e) - chi(np.array(x - h), e)) / h
    assert abs(d1 - d2) < 1e-4


@pytest.fixture(scope="module")
def fiber_cps(inst):
    pr = inst.problem(8, 6.0, "fiber", [1.0])
    return pr, find_critical(pr, analytic_seeds(pr))


def test_fiber_critical_values_frozen(fiber_cps):
    _, cps = fiber_cps
    vals = sorted(round(c.value, 4) for c in cps)
    assert vals == [-6.0, -6.0, -6.0, -1.5907, -1.5907, 0.0, 0.0305, 0.0305]


def test_window_generators_have_index_r(fiber_cps):
    _, cps = fiber_cps
    for c in cps:
        if c.value > -1.01:
            assert (c.morse_index, c.nullity) == (8, 0)


def test_reconstruction_closes(fiber_cps):
    pr, cps = fiber_cps
    for c in cps:
        orb = reconstruct_orbit(pr, c.x)
        assert orb["closure_error"] < 1e-6
        assert orb["action_error"] < 1e-6


def test_newton_recovers_perturbed_point(fiber_cps):
    pr, cps = fiber_cps
    c = next(c for c in cps if c.value > 0.01)
    x, gn = newton(pr, c.x + 1e-4)
    assert gn < 1e-9 and np.linalg.norm(x - c.x) < 1e-7


def test_pseudo_gradient_is_nonnegative(inst, rng):
    pr = inst.problem(4, 6.0, "closed")
    q, p = random_lattice_points(inst.manifold, rng, 30, 4, pmax=0.6)
    for i in range(30):
        x = pr.pack(LatticePoint(q[i], p[i]))
        g = pr.grad(x)
        assert float(g @ pseudo_gradient(pr, x, "X")) >= -1e-12
        assert 0.0 <= float(chi_r(pr, x)) <= 1.0


def test_hessian_signature_counts(fiber_cps):
    pr, cps = fiber_cps
    c = next(c for c in cps if abs(c.value) < 1e-9)
    idx, nul = hessian_signature(pr, c.x)[:2]
    assert (idx, nul) == (8, 0)

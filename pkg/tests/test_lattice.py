import numpy as np
import pytest

from action_lattice.dynamics import random_lattice_points
from action_lattice.geometry import GeometryError, Manifold
from action_lattice.hamiltonian import RadialHamiltonian
from action_lattice.lattice import (LatticePoint, PreconditionError, Subdivision,
                                    dissect, double, eval_S, grad_S, stabilize, suspend_point)


def test_stabilize_and_double():
    assert stabilize(Subdivision((1.0,))).weights == (1.0, 0.0)
    d = double(Subdivision((0.25, 0.75)))
    assert d.weights == (0.125, 0.375, 0.125, 0.375)
    assert sum(d.weights) == 1.0


def test_subdivision_validation():
    with pytest.raises(ValueError):
        Subdivision((0.5, 0.6))
    with pytest.raises(ValueError):
        Subdivision((1.5, -0.5))


def test_latticepoint_json_roundtrip(inst, rng):
    q, p = random_lattice_points(inst.manifold, rng, 1, 5)
    z = LatticePoint(q[0], p[0])
    z2 = LatticePoint.from_json(z.to_json())
    assert np.array_equal(z.q, z2.q) and np.array_equal(z.p, z2.p)


def test_gap_invariant_enforced(inst):
    m = inst.manifold
    z = LatticePoint(np.array([[0.0], [m.epsilon0 * 1.01]]), np.zeros((2, 1)))
    assert not z.is_valid(m)
    with pytest.raises(GeometryError):
        z.validate(m)


def test_constant_hamiltonian_value():
    m = Manifold.circle(10.0)
    H = RadialHamiltonian.constant(m, 0.7)
    z = LatticePoint(np.array([[1.0], [1.5], [2.0]]), np.zeros((3, 1)))
    assert eval_S(z, Subdivision.uniform(3), H) == pytest.approx(-0.7)


def test_dissected_orbit_is_critical(inst):
    H = inst.H(6.0)
    alpha = Subdivision.uniform(8)
    # the winding-one orbit on the rising branch: slope rho * l at momentum p
    pr = inst.problem(8, 6.0, "closed")
    from action_lattice.dynamics import analytic_seeds, find_critical
    cps = find_critical(pr, analytic_seeds(pr, kmax=1))
    c = next(c for c in cps if c.winding == (1,))
    z = dissect(H, c.point.q[0], c.point.p[0], alpha)
    gq, gp = grad_S(z, alpha, H)
    assert np.sqrt(np.sum(gq ** 2) + np.sum(gp ** 2)) < 1e-8


def test_exact_and_fd_gradients_agree(inst, rng):
    H = inst.H(6.0)
    alpha = Subdivision.random(rng, 4)
    q, p = random_lattice_points(inst.manifold, rng, 5, 4, pmax=0.6)
    for i in range(5):
        z = LatticePoint(q[i], p[i])
        ge = grad_S(z, alpha, H, "exact")
        gf = grad_S(z, alpha, H, "fd")
        assert np.allclose(ge[0], gf[0], atol=1e-7) and np.allclose(ge[1], gf[1], atol=1e-7)


def test_suspension_keeps_value(inst, rng):
    H = inst.H(6.0)
    alpha = Subdivision.random(rng, 3)
    q, p = random_lattice_points(inst.manifold, rng, 4, 3)
    for i in range(4):
        z = LatticePoint(q[i], p[i])
        z1 = suspend_point(z, z.p[0])
        assert eval_S(z1, stabilize(alpha), H) == pytest.approx(eval_S(z, alpha, H), abs=1e-12)


def test_cyclic_rotation_invariance(inst, rng):
    H = inst.H(6.0)
    alpha = Subdivision.random(rng, 5)
    q, p = random_lattice_points(inst.manifold, rng, 3, 5)
    for i in range(3):
        z = LatticePoint(q[i], p[i])
        v0 = eval_S(z, alpha, H)
        for k in (1, 3):
            assert eval_S(z.rotate(k), alpha.rotate(k), H) == pytest.approx(v0, abs=1e-12)


def test_dissect_rejects_large_steps(inst):
    H = inst.H(6.0)
    with pytest.raises(PreconditionError):
        dissect(H, [1.0], [0.1], Subdivision.uniform(1))


def test_fiber_problem_packs_without_base_slot(inst, rng):
    pr = inst.problem(4, 6.0, "fiber", [1.0])
    q, p = random_lattice_points(inst.manifold, rng, 1, 4, q0=np.array([1.0]))
    x = pr.pack(LatticePoint(q[0], p[0]))
    assert x.size == 3 + 4
    assert np.allclose(pr.point(x).q[0], [1.0])

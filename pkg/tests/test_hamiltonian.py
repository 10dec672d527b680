import numpy as np
import pytest

from action_lattice.geometry import Manifold
from action_lattice.hamiltonian import (LagrangianEmbedding,
                                        Profile, RadialHamiltonian, ScaledHamiltonian,
                                        action_set, assemble_Hs, verify_asymptotic,
                                        verify_profile_suite)


def test_profile_values_and_derivatives():
    f = Profile()
    t = np.array([0.25, 0.5, 0.9])
    assert np.allclose(f(t), -(1 - t) ** 3 / t)
    assert np.all(f(np.array([1.0, 1.5])) == 0)
    h = 1e-6
    assert np.allclose((f(t + h) - f(t - h)) / (2 * h), f(t, 1), rtol=1e-6)
    assert np.allclose((f(t + h, 1) - f(t - h, 1)) / (2 * h), f(t, 2), rtol=1e-5)


def test_profile_rejects_low_order():
    with pytest.raises(ValueError):
        Profile(m=2)


def test_embedding_norms():
    m = Manifold.circle(10 * np.pi)
    assert LagrangianEmbedding(m, [0.0]).F_norm == 0.0
    assert LagrangianEmbedding(m, [0.15]).F_norm == pytest.approx(0.3)
    with pytest.raises(ValueError):
        LagrangianEmbedding(m, [2.0])


# frozen: closed-orbit actions at s = 6 and s = 10 for the default instance
@pytest.mark.parametrize("s,expected", [
    (6.0, [-6.0, -1.59074, 0.0]),
    (10.0, [-10.0, -5.59074, -3.04211, -1.03013, 0.0]),
])
def test_action_set_frozen(inst, s, expected):
    vals = action_set(inst.family, inst.embedding.geodesic_lengths(60), window=(-np.inf, 0), s=s)
    assert np.allclose(vals, expected, atol=1e-5)


def test_capped_family_monotone_in_s(inst):
    ts = np.linspace(0.05, 1.2, 200)
    for s in (1.0, 6.0, 20.0):
        assert np.all(inst.family.ds(s, ts) >= -1e-8)


def test_scaled_hamiltonian_flow_is_time_rescaled(inst):
    H = inst.H(6.0)
    H2 = ScaledHamiltonian(H, 2.0)
    q, p = np.array([1.0]), np.array([0.3])
    Q1, P1, A1 = H2.flow(q, p, 0.5)
    Q2, P2, A2 = H.flow(q, p, 1.0)
    assert np.allclose(Q1, Q2) and np.allclose(P1, P2)
    assert A1 == pytest.approx(A2)


def test_constant_hamiltonian_value():
    m = Manifold.circle(10.0)
    H = RadialHamiltonian.constant(m, 2.5)
    assert np.allclose(H(np.zeros((3, 1)), np.ones((3, 1))), 2.5)


def test_assembled_hamiltonian_near_zero_section(inst):
    H = assemble_Hs(inst.embedding, inst.family, inst.hinf, 6.0)
    assert H(np.array([1.0]), np.array([0.0])) == pytest.approx(-6.0 * 0 + inst.family(6.0, 0.0))


def test_profile_suites_pass(inst):
    rep = verify_profile_suite(inst.family, inst.hinf, manifold=inst.manifold)
    assert {"f1", "f8", "H1", "H4"} <= set(rep)
    assert all(v["pass"] for v in rep.values())
    assert all(v["pass"] for v in verify_asymptotic(inst.hinf, inst.manifold).values())

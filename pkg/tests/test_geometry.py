import numpy as np
import pytest

from action_lattice.geometry import GeometryError, Manifold


def test_circle_reduce_and_distance():
    m = Manifold.circle(2 * np.pi)
    assert m.reduce(np.array([2 * np.pi + 0.5]))[0] == pytest.approx(0.5)
    assert m.dist(np.array([0.1]), np.array([2 * np.pi - 0.1])) == pytest.approx(0.2)


def test_log_exp_roundtrip_torus(rng):
    m = Manifold.torus((3.0, 5.0))
    q = m.random_point(rng, 50)
    q2 = m.reduce(q + rng.uniform(-0.9, 0.9, q.shape))
    v = m.log(q, q2)
    assert np.allclose(m.reduce(m.exp(q, v)), m.reduce(q2))
    assert np.all(np.abs(v) <= m.period_array / 2 + 1e-12)


def test_sphere_log_exp_and_transport(rng):
    m = Manifold.sphere()
    q = m.random_point(rng, 20)
    q2 = m.exp(q, m.random_tangent(rng, q, 0.3))
    v = m.log(q, q2)
    assert np.allclose(m.exp(q, v), q2, atol=1e-9)
    w = m.random_tangent(rng, q)
    tw = m.transport(q, q2, w)
    assert np.allclose(np.linalg.norm(tw, axis=-1), np.linalg.norm(w, axis=-1))
    assert np.allclose(np.sum(tw * q2, axis=-1), 0, atol=1e-10)


def test_injectivity_radius():
    assert Manifold.circle(10.0).injectivity_radius == pytest.approx(5.0)
    assert Manifold.sphere().injectivity_radius == pytest.approx(np.pi)


def test_epsilon0_above_injectivity_radius_rejected():
    with pytest.raises((GeometryError, ValueError)):
        Manifold.circle(2.0, epsilon0=1.5)

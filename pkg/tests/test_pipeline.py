import json

import numpy as np
import pytest

from action_lattice.dynamics import random_lattice_points
from action_lattice.geometry import Manifold
from action_lattice.hamiltonian import RadialHamiltonian
from action_lattice.lattice import LatticePoint, Subdivision, eval_S
from action_lattice.pipeline import (ConfigError, ProductError, ScheduleError, check_additivity,
                                     choose_schedule, concat, concat_plus, doubled,
                                     inclusion_constants, load_config, plus_difference,
                                     product_on_windows, transverse_hessian)


def test_config_merge_and_unknown_keys(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"schedule": {"growth": 1.2}}))
    cfg = load_config(str(p))
    assert cfg["schedule"]["growth"] == 1.2 and cfg["schedule"]["r0"] == 8
    p.write_text(json.dumps({"schedule": {"grwoth": 1.2}}))
    with pytest.raises(ConfigError):
        load_config(str(p))
    p.write_text("not json")
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_bounds_zero_section(inst):
    assert inst.b == 1.0 and inst.a == -1.01
    assert inst.a_target == pytest.approx(-0.01) and inst.b_target == 2.0
    js = [inst.jumps[r] for r in sorted(inst.jumps)]
    assert all(s > 5 for s in js) and all(x < y for x, y in zip(js, js[1:]))


def test_bounds_perturbed(inst, inst_perturbed):
    assert inst_perturbed.b == pytest.approx(1.3)
    with pytest.raises(ScheduleError):
        choose_schedule(inst_perturbed.embedding, inst_perturbed.family, inst_perturbed.hinf, -1.5)


def test_jump_points_regular(inst):
    for r, info in inst.checks["regularity"].items():
        assert info["distance_to_actions"] > 1e-6
        assert inst.jumps[r] >= 0.99 * info["nominal"] - 1e-12


def test_concat_constant_hamiltonian():
    m = Manifold.circle(10.0)
    H = RadialHamiltonian.constant(m, 0.4)
    z = LatticePoint(np.array([[1.0], [2.0]]), np.zeros((2, 1)))
    H2, a2 = doubled(H, Subdivision.uniform(2))
    assert eval_S(concat(z, z, m), a2, H2) == pytest.approx(-0.8)


def test_concat_requires_shared_base(inst, rng):
    q, p = random_lattice_points(inst.manifold, rng, 2, 3)
    with pytest.raises(ProductError):
        concat(LatticePoint(q[0], p[0]), LatticePoint(q[1], p[1]), inst.manifold)


def test_additivity_small_sample(inst, rng):
    rep = check_additivity(inst.H(6.0), 3, rng, n=100)
    assert rep["ok"] and rep["worst"] <= 1e-12


def test_plus_difference_zero_on_diagonal(inst, rng):
    H = inst.H(6.0)
    alpha = Subdivision.uniform(2)
    q, p = random_lattice_points(inst.manifold, rng, 2, 2, gap=0.45, pmax=1.5,
                                 q0=np.array([2.0]))
    z1, z2 = LatticePoint(q[0], p[0]), LatticePoint(q[1], p[1])
    pp = concat_plus(z1, z2, H, alpha)
    assert abs(plus_difference(z1, z2, pp.p, H, alpha)) <= 1e-12
    assert np.max(np.linalg.eigvalsh(transverse_hessian(z1, z2, H, alpha, 1.0))) < -1e-4


def test_concat_plus_rejects_far_bases(inst, rng):
    q, p = random_lattice_points(inst.manifold, rng, 2, 2, gap=0.3)
    z1 = LatticePoint(q[0], p[0])
    z2 = LatticePoint(inst.manifold.reduce(q[1] - q[1][0] + q[0][0] + 2.0), p[1])
    with pytest.raises(ProductError):
        concat_plus(z1, z2, inst.H(6.0), Subdivision.uniform(2), beta=1.0)


def test_product_on_windows(inst):
    rep = product_on_windows(inst, 8, inst.jumps[8], [1.0])
    assert rep["ok"]
    crit = [x for x in rep["pairs"] if x["critical"]]
    # k x k concatenations are critical and land on the winding-2k target generator
    assert sorted(tuple(x["winding"]) for x in crit) == [(-2,), (0,), (2,)]
    assert all(x["target"] is not None for x in crit)
    assert rep["collar_max"] < rep["a_target"]


def test_inclusion_of_constants(inst):
    rep = inclusion_constants(inst, 8, inst.jumps[8], [1.0])
    assert rep["ok"]
    assert rep["attempts"][-1]["max_transverse_eigenvalue"] < 0
    assert rep["index_shift"] == 7

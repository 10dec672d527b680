import numpy as np
import pytest

from action_lattice.dynamics import analytic_seeds, find_critical
from action_lattice.morse import (WindowError, build_window, cubical_oracle, suspension_shift_check,
                                  track, window_homology)


def test_cubical_oracle_simple_functions():
    f = lambda x: -np.sum(x ** 2, axis=-1)
    assert cubical_oracle(f, [(-1.5, 1.5)] * 2, -1, 0.5, [11, 11])["ranks"] == {2: 1}
    g = lambda x: -(x[..., 0] ** 2 - 1) ** 2
    # two maxima joined through a saddle at 0
    assert cubical_oracle(g, [(-2, 2)], -0.5, 0.5, [41])["ranks"] == {1: 2}
    assert cubical_oracle(g, [(-2, 2)], -3, 0.5, [41])["ranks"] == {1: 1}


@pytest.fixture(scope="module")
def window(inst):
    pr = inst.problem(8, 6.0, "fiber", [1.0])
    cps = find_critical(pr, analytic_seeds(pr))
    return pr, cps, build_window(pr, inst.a, inst.b, cps)


def test_zero_section_window_prediction(window):
    # one generator per admissible winding (0, +1, -1), all in degree r
    _, _, w = window
    assert sorted(g.winding for g in w.generators) == [(-1,), (0,), (1,)]
    assert window_homology(w) == {8: 3}


def test_window_bound_on_critical_value_rejected(window):
    pr, cps, _ = window
    with pytest.raises(WindowError):
        build_window(pr, -1.5907389, 1.0, cps)
    with pytest.raises(ValueError):
        build_window(pr, 1.0, -1.0, cps)


def test_suspension_shift_on_circle(window):
    pr, _, w = window
    for g in w.generators:
        out = suspension_shift_check(pr, g)
        assert out["shift"] == 1 and out["value_difference"] <= 1e-12


def test_track_follows_generator(inst, window):
    pr, _, w = window
    g = next(g for g in w.generators if g.winding == (1,))
    x = track(lambda s: inst.problem(8, s, "fiber", [1.0]), g.x, 6.0, 6.3, 10)
    pr2 = inst.problem(8, 6.3, "fiber", [1.0])
    assert np.linalg.norm(pr2.grad(x)) < 1e-9
    assert pr2.value(x) < g.value  # window values decrease as the slope grows

import numpy as np
import pytest

from action_lattice.algebra import ChainComplex, simplicial_circle, sphere
from action_lattice.spectral import (FilteredChainComplex, FiltrationError, abutment_check,
                                     check_pages, collapse_page, pages, product_model,
                                     thom_shift_check)


def _two_step():
    # a <- b with a in level 0 and b in level 1: d_1 kills both
    c = ChainComplex({0: ["a"], 1: ["b"]}, {1: np.array([[1]])}, "F2")
    return FilteredChainComplex(c, {0: [0], 1: [1]})


def test_trivial_filtration_collapses_immediately():
    c = ChainComplex({0: ["a", "a2"], 1: ["b"]}, {1: np.array([[1], [1]])}, "F2")
    fc = FilteredChainComplex(c, {0: [0, 0], 1: [0]})
    pl = pages(fc)
    assert pl[1].table() == [[0, 0, 1]]
    assert collapse_page(pl) <= 1
    assert abutment_check(fc, page_list=pl)["ok"]


def test_two_step_nonzero_d1():
    pl = pages(_two_step())
    assert pl[1].table() == [[0, 0, 1], [1, 0, 1]]
    assert pl[2].table() == []
    assert all(x["ok"] for x in check_pages(pl))


def test_filtration_must_be_subcomplex():
    c = ChainComplex({0: ["a"], 1: ["b"]}, {1: np.array([[1]])}, "F2")
    with pytest.raises(FiltrationError):
        FilteredChainComplex(c, {0: [1], 1: [0]})


@pytest.fixture(scope="module")
def sphere_circle():
    P, fc = product_model(sphere(2), simplicial_circle(1))
    return P, fc, pages(fc)


def test_product_model_e2_is_kunneth(sphere_circle):
    _, _, pl = sphere_circle
    assert pl[2].table() == [[0, 0, 1], [0, 2, 1], [1, 0, 1], [1, 2, 1]]


def test_product_model_bidegrees_and_homology(sphere_circle):
    _, fc, pl = sphere_circle
    rep = check_pages(pl)
    assert all(x["bidegree"] and x["next_is_homology"] for x in rep)
    assert abutment_check(fc, page_list=pl)["ok"]


def test_base_dimension_bounds_collapse(sphere_circle):
    _, _, pl = sphere_circle
    assert collapse_page(pl) <= 2


def test_q_coefficients_agree(sphere_circle):
    _, fc, pl = sphere_circle
    assert pages(fc, "Q")[2].table() == pl[2].table()


def test_thom_shift_is_exact():
    assert thom_shift_check(sphere(2), simplicial_circle(1), 1)["shifts"] == [1]
    assert thom_shift_check(sphere(1), simplicial_circle(1), 2)["shifts"] == [2]

import numpy as np
import pytest

from action_lattice.algebra import (ChainComplex, ChainError, Field, Simp, cap, ez, homology,
                                    product, shuffles, simplicial_circle, smith_diagonal,
                                    sphere, standard_simplex, thom_cochain,
                                    thom_isomorphism_check)


def test_smith_diagonal_frozen():
    m = [[2, 4, 4], [-6, 6, 12], [10, -4, -16]]
    assert smith_diagonal(m) == [2, 6, 12]


def test_smith_invariant_under_permutations(rng):
    m = np.array([[2, 4, 4], [-6, 6, 12], [10, -4, -16]])
    for _ in range(5):
        p = m[rng.permutation(3)][:, rng.permutation(3)]
        assert smith_diagonal(p.tolist()) == [2, 6, 12]


def test_torsion_over_z():
    c = ChainComplex({0: ["a"], 1: ["b"]}, {1: np.array([[2]])}, "Z")
    h = homology(c)
    assert h.ranks.get(0, 0) == 0 and h.torsion[0] == [2]
    assert homology(c, "F2").ranks[0] == 1
    assert homology(c, "Q").ranks.get(0, 0) == 0


def test_boundary_square_checked():
    with pytest.raises(ChainError):
        ChainComplex({0: ["a"], 1: ["b"], 2: ["c"]},
                     {1: np.array([[1]]), 2: np.array([[1]])}, "Z")


@pytest.mark.parametrize("model,ranks", [
    (lambda: simplicial_circle(1), {0: 1, 1: 1}),
    (lambda: simplicial_circle(3), {0: 1, 1: 1}),
    (lambda: sphere(2), {0: 1, 2: 1}),
    (lambda: standard_simplex(3), {0: 1}),
])
def test_model_homology(model, ranks):
    S = model()
    for ring in ("Z", "Q", "F2", "F3", "F5"):
        assert {k: v for k, v in homology(S.chain_complex(ring)).ranks.items() if v} == ranks


def test_product_counts():
    P = product(sphere(2), simplicial_circle(1))
    assert {k: len(v) for k, v in P.simplices.items()} == {0: 1, 1: 1, 2: 3, 3: 3}
    assert {k: v for k, v in homology(P.chain_complex("F2")).ranks.items() if v} == \
        {0: 1, 1: 1, 2: 1, 3: 1}


def test_field_inverse_and_solve():
    F = Field(7)
    assert (3 * F.inv(3)) % 7 == 1
    a = F.array([[1, 2], [3, 4]])
    x = F.solve(a, F.array([[1], [0]]))
    assert np.array_equal(F.matmul(a, x) % 7, F.array([[1], [0]]))


def test_shuffle_counts_and_signs():
    from math import comb
    for n in range(4):
        for m in range(4):
            assert len(list(shuffles(n, m))) == comb(n + m, n)
    signs = sorted(s.sign for s in shuffles(1, 1))
    assert signs == [-1, 1]


def test_ez_one_by_one():
    I = standard_simplex(1)
    P = product(I, I)
    chain = ez(P, I.nd(I.simplices[1][0]), I.nd(I.simplices[1][0]))
    assert len(chain) == 2 and sorted(chain.values()) == [-1, 1]


def test_cap_with_counit_is_identity():
    S = standard_simplex(2)
    unit = {v: 1 for v in S.simplices[0]}
    top = S.simplices[2][0]
    assert cap(S, unit, 0, {top: 1}) == {top: 1}


def test_interval_fundamental_cocycle_caps_to_endpoint():
    I = standard_simplex(1)
    edge = I.simplices[1][0]
    assert cap(I, {edge: 1}, 1, {edge: 1}) == {(1,): 1}


def test_thom_cochain_support_and_isomorphism():
    P = product(simplicial_circle(1), standard_simplex(1))
    tau = thom_cochain(P, 1)
    assert tau and all(v == 1 for v in tau.values())
    for k in (0, 1, 2):
        assert thom_isomorphism_check(simplicial_circle(1), k)["ok"]
    assert thom_isomorphism_check(standard_simplex(1), 1)["ok"]


def test_homology_q_matches_fp_on_torsion_free(rng):
    P = product(simplicial_circle(2), simplicial_circle(1))
    ranks = homology(P.chain_complex("Q")).ranks
    for p in (2, 3, 5):
        assert homology(P.chain_complex(f"F{p}")).ranks == ranks


def test_simp_is_namedtuple():
    s = Simp((0, 1), (0, 1))
    assert s.label == (0, 1)

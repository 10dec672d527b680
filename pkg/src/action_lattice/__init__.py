"""Finite-dimensional action functionals on cotangent bundles of flat model manifolds.

Modules, bottom-up: ``geometry`` (flat model manifolds), ``hamiltonian``
(profiles, capped families, assembled Hamiltonians), ``lattice`` (the
broken-flow generating function S_r), ``dynamics`` (critical points,
pseudo-gradients, sampled inequality checks), ``morse`` (windows, Morse
complexes, a cubical oracle), ``algebra`` (chain complexes, simplicial
sets, shuffle products), ``spectral`` (pages of filtered complexes) and
``pipeline`` (instances, products, suites and the report).
"""

__version__ = "0.1.0"

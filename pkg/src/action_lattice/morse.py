"""Window chain complexes, their homology and a brute-force cubical oracle.

A window is a value interval (a, b] of a packed problem together with the
critical points it contains.  Its Morse complex is graded by Hessian index;
differentials count descending flow lines of the pseudo-gradient, found by
sampling unstable spheres.  Generators whose discrete loops wind differently
lie in different components of the lattice domain and are never connected.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.integrate import solve_ivp

from .algebra import matmul_mod2, rank_mod2
from .dynamics import CriticalPoint, hessian_signature, newton, pseudo_gradient
from .lattice import SProblem, stabilize, suspend_point

log = logging.getLogger(__name__)


class WindowError(ValueError):
    """A window bound collides with a critical value."""


class CountingError(RuntimeError):
    """Flow-line counting could not be completed reliably."""


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------

@dataclass
class Window:
    problem: SProblem
    a: float
    b: float
    generators: list
    tau: float
    eps_lower: float
    a_regular: bool
    b_regular: bool
    values: list = dc_field(default_factory=list)

    def to_dict(self):
        return {"a": self.a, "b": self.b, "tau": self.tau, "eps_lower": self.eps_lower,
                "a_regular": self.a_regular, "b_regular": self.b_regular,
                "generators": [{"value": c.value, "index": c.morse_index,
                                "nullity": c.nullity, "winding": list(c.winding),
                                "orbit": {"q0": c.orbit.get("q0"), "p0": c.orbit.get("p0")}}
                               for c in self.generators]}


def build_window(problem: SProblem, a, b, critical_points, eps_lower=1.0,
                 require_regular=True, tol=1e-6, inflate=2.0):
    """Collect the critical points with value in (a, b].

    ``tau = inflate * (b - a) / eps_lower`` is the flow time after which
    the window pair is compact.  With ``require_regular`` a bound within
    ``tol`` of a critical value raises :class:`WindowError`.
    """
    if not a < b:
        raise ValueError("window needs a < b")
    if eps_lower <= 0:
        raise ValueError("eps_lower must be positive")
    values = sorted(c.value for c in critical_points)
    dist_a = min((abs(v - a) for v in values), default=np.inf)
    dist_b = min((abs(v - b) for v in values), default=np.inf)
    a_reg, b_reg = dist_a > tol, dist_b > tol
    if require_regular and not (a_reg and b_reg):
        raise WindowError(f"window bound collides with a critical value "
                          f"(|a - v| = {dist_a:.3g}, |b - v| = {dist_b:.3g})")
    gens = [c for c in critical_points if a < c.value <= b]
    gens.sort(key=lambda c: (c.morse_index, c.value, tuple(c.point.to_flat())))
    return Window(problem, float(a), float(b), gens, inflate * (b - a) / eps_lower,
                  float(eps_lower), a_reg, b_reg, values)


# ---------------------------------------------------------------------------
# flow-line counting
# ---------------------------------------------------------------------------

def _unstable_basis(problem, cp):
    H = problem.hessian(cp.x)
    ev, vec = np.linalg.eigh(H)
    return vec[:, ev < 0], ev


def _descend(problem, x0, a_exit, T, max_step=0.5):
    """Descending pseudo-gradient trajectory until S < a_exit or time T."""
    def rhs(t, x):
        return -pseudo_gradient(problem, x, "X")

    def below(t, x):
        return float(problem.value(x)) - a_exit
    below.terminal = True
    below.direction = -1
    sol = solve_ivp(rhs, (0.0, T), x0, method="RK45", rtol=1e-9, atol=1e-12,
                    events=below, max_step=max_step)
    return sol.y.T


def _pass_label(path, y, e_u, radius, capture):
    """Side of W^s(y) a trajectory passes on: +1, -1, 0 (captured) or None."""
    d = np.linalg.norm(path - y, axis=1)
    i = int(np.argmin(d))
    if d[i] > radius:
        return None, float(d[i])
    if d[i] < capture:
        return 0, float(d[i])
    after = np.flatnonzero(d[i:] > radius)
    j = i + int(after[0]) if after.size else len(path) - 1
    s = float(np.dot(path[j] - y, e_u))
    return (1 if s > 0 else -1), float(d[i])


class FlowCounter:
    """Counts descending flow lines between generators of a window."""

    def __init__(self, window: Window, delta=1e-3, radius=0.05, capture=1e-4, T=None,
                 max_depth=40, probe_depth=4):
        self.w = window
        self.problem = window.problem
        self.delta = delta
        self.radius = radius
        self.capture = capture
        self.T = T if T is not None else max(window.tau, 50.0)
        self.max_depth = max_depth
        self.probe_depth = probe_depth
        self.a_exit = window.a - 0.1 * (window.b - window.a)
        self._cache = {}
        self.trajectories = 0

    def _path(self, x0):
        key = tuple(np.round(x0, 14))
        if key not in self._cache:
            self._cache[key] = _descend(self.problem, x0, self.a_exit, self.T)
            self.trajectories += 1
        return self._cache[key]

    def count(self, x: CriticalPoint, y: CriticalPoint, n_samples=None):
        """Number of flow lines from x to y (index(x) = index(y) + 1)."""
        if x.morse_index != y.morse_index + 1:
            raise ValueError("generators must have adjacent indices")
        if x.winding != y.winding:
            return 0
        if y.value >= x.value:
            return 0
        if x.degenerate or y.degenerate:
            raise CountingError("degenerate generator in the window")
        E, _ = _unstable_basis(self.problem, x)
        if x.morse_index == 1:
            hits = 0
            for sgn in (1.0, -1.0):
                path = self._path(x.x + sgn * self.delta * E[:, 0])
                if np.linalg.norm(path[-1] - y.x) < self.capture or \
                        np.min(np.linalg.norm(path - y.x, axis=1)) < self.capture:
                    hits += 1
            return hits
        if x.morse_index == 2:
            return self._count_circle(x, y, E, n_samples or (2 * 2 + 8))
        raise CountingError(f"flow-line counting from index {x.morse_index} is not supported")

    def _count_circle(self, x, y, E, n):
        Ey, _ = _unstable_basis(self.problem, y)
        e_u = Ey[:, 0]

        def label(theta):
            x0 = x.x + self.delta * (np.cos(theta) * E[:, 0] + np.sin(theta) * E[:, 1])
            return _pass_label(self._path(x0), y.x, e_u, self.radius, self.capture)

        # irrational offset keeps samples off symmetric stable manifolds
        thetas = list(2 * np.pi * (np.arange(n) + 0.3819660112501051) / n)
        labels = [label(t)[0] for t in thetas]
        crossings = 0
        for i in range(n):
            t0, t1 = thetas[i], thetas[i + 1] if i + 1 < n else thetas[0] + 2 * np.pi
            crossings += self._crossings(label, t0, labels[i], t1, labels[(i + 1) % n], 0)
        return crossings

    def _crossings(self, label, t0, l0, t1, l1, depth):
        """Crossings of W^s(y) by the arc (t0, t1) of the unstable circle.

        Opposite labels are bisected until a sample is captured by y.  An
        unlabeled end (trajectory never near y) is bisected to ``probe``
        depth only: a hidden crossing there would show a labeled sample.
        """
        if l0 == 0 or l1 == 0:
            raise CountingError("unstable-sphere sample lies on a stable manifold; "
                                "change the sample count")
        if l0 == l1:
            return 0
        opposite = {l0, l1} == {1, -1}
        limit = self.max_depth if opposite else self.probe_depth
        if depth >= limit:
            if opposite:
                raise CountingError("crossing not resolved within the capture radius")
            return 0
        tm = 0.5 * (t0 + t1)
        lm, _ = label(tm)
        if lm == 0:
            return 1
        return (self._crossings(label, t0, l0, tm, lm, depth + 1)
                + self._crossings(label, tm, lm, t1, l1, depth + 1))


# ---------------------------------------------------------------------------
# complexes and homology
# ---------------------------------------------------------------------------

@dataclass
class MorseComplex:
    generators: list
    degrees: list
    boundary: dict          # k -> (n_{k-1} x n_k) matrix over F_2
    field: str = "F2"
    counts: dict = dc_field(default_factory=dict)

    def by_degree(self, k):
        return [i for i, d in enumerate(self.degrees) if d == k]

    def check_square_zero(self):
        for k, D in self.boundary.items():
            D2 = self.boundary.get(k - 1)
            if D2 is not None and D.size and D2.size and np.any(matmul_mod2(D2, D)):
                return False
        return True

    def ranks(self):
        if not self.degrees:
            return {}
        out = {}
        for k in range(min(self.degrees), max(self.degrees) + 1):
            n = len(self.by_degree(k))
            rk = rank_mod2(self.boundary[k]) if k in self.boundary else 0
            rk1 = rank_mod2(self.boundary[k + 1]) if k + 1 in self.boundary else 0
            h = n - rk - rk1
            if h:
                out[k] = h
        return out

    def to_dict(self):
        return {"field": self.field,
                "generators": [{"value": g.value, "index": g.morse_index,
                                "winding": list(g.winding),
                                "orbit": {"q0": g.orbit.get("q0"), "p0": g.orbit.get("p0")}}
                               for g in self.generators],
                "differential": {str(k): v.tolist() for k, v in self.boundary.items()},
                "ranks": {str(k): v for k, v in self.ranks().items()}}


def differential(counter: FlowCounter, x, y):
    """Entry of the boundary matrix: flow-line count from x to y, mod 2."""
    return counter.count(x, y) % 2


def morse_complex(window: Window, n_samples=None, **counter_kw):
    gens = window.generators
    degs = [g.morse_index for g in gens]
    counter = FlowCounter(window, **counter_kw)
    boundary = {}
    counts = {}
    for k in sorted(set(degs)):
        cols = [i for i, d in enumerate(degs) if d == k]
        rows = [i for i, d in enumerate(degs) if d == k - 1]
        D = np.zeros((len(rows), len(cols)), dtype=np.uint8)
        for jc, j in enumerate(cols):
            for ir, i in enumerate(rows):
                c = counter.count(gens[j], gens[i], n_samples)
                counts[(j, i)] = c
                D[ir, jc] = c % 2
        boundary[k] = D
    mc = MorseComplex(gens, degs, boundary, "F2", counts)
    mc.trajectories = counter.trajectories
    if not mc.check_square_zero():
        raise CountingError("boundary does not square to zero")
    return mc


def window_homology(window: Window, **kw):
    """F_2 ranks per degree of the window's Morse complex."""
    if not window.generators:
        return {}
    return morse_complex(window, **kw).ranks()


# ---------------------------------------------------------------------------
# suspension
# ---------------------------------------------------------------------------

def suspension_shift_check(problem: SProblem, cp: CriticalPoint):
    """Index and value comparison between a critical point and its suspension.

    The suspension appends (q_0, p_0) with a zero-length piece, which keeps
    the point critical and S unchanged.
    """
    z = cp.point
    z1 = suspend_point(z, z.p[0])
    pr1 = SProblem(problem.H, stabilize(problem.alpha), problem.mode, problem.basepoint)
    x1 = pr1.pack(z1)
    idx1, null1, _, _ = hessian_signature(pr1, x1)
    idx0, null0 = cp.morse_index, cp.nullity
    val1 = float(pr1.value(x1))
    d = problem.d
    return {"index": idx0, "index_suspended": idx1, "shift": idx1 - idx0, "d": d,
            "nullity": null0, "nullity_suspended": null1,
            "value_difference": abs(val1 - cp.value),
            "grad_suspended": float(np.linalg.norm(pr1.grad(x1))),
            "degenerate": bool(null0 or null1),
            "ok": (idx1 - idx0 == d) and not (null0 or null1)}


# ---------------------------------------------------------------------------
# continuation across the family parameter
# ---------------------------------------------------------------------------

def track(problem_at, x, s0, s1, steps=20, tol=1e-9):
    """Newton continuation of a nondegenerate critical point from s0 to s1."""
    x = np.array(x, dtype=float)
    if s1 == s0:
        return x
    for s in np.linspace(s0, s1, steps + 1)[1:]:
        x, gn = newton(problem_at(s), x, tol)
        if gn >= tol:
            raise CountingError(f"continuation lost the critical point at s={s:.6g}")
    return x


def continuation(gens, problem_at, s0, s1, targets, steps=20, match_tol=1e-6):
    """Generator correspondence from the window at s0 to the one at s1.

    Returns (mapping, report) with mapping[i] = j when generator i at s0
    continues to target j at s1; unmatched generators map to None.
    """
    pr1 = problem_at(s1)
    mapping = {}
    drift = []
    for i, g in enumerate(gens):
        x1 = track(problem_at, g.x, s0, s1, steps)
        z1 = pr1.point(x1)
        best = [(z1.distance(t.point, pr1.m), j) for j, t in enumerate(targets)]
        dist, j = min(best, default=(np.inf, None))
        mapping[i] = j if dist < match_tol else None
        drift.append(float(pr1.value(x1)) - g.value)
    unmatched = [i for i, j in mapping.items() if j is None]
    return mapping, {"unmatched": unmatched, "drift": drift,
                     "bijective": not unmatched and len(set(mapping.values())) == len(gens)
                     and len(targets) == len(gens)}


# ---------------------------------------------------------------------------
# varying bounds
# ---------------------------------------------------------------------------

class NormalizedFamily:
    """(S^s - a(s)) / (b(s) - a(s)) for a family of packed problems.

    A critical point on the lower level crosses downward iff
    dS/ds < a'(s); equality means the values move with the bound.
    """

    def __init__(self, problem_at, a_fn, b_fn, h=1e-5):
        self.problem_at = problem_at
        self.a_fn, self.b_fn = a_fn, b_fn
        self.h = h

    def bounds(self, s):
        a, b = self.a_fn(s), self.b_fn(s)
        if not a < b:
            raise ValueError(f"bounds not ordered at s={s}")
        return a, b

    def value(self, s, x):
        a, b = self.bounds(s)
        return (float(self.problem_at(s).value(x)) - a) / (b - a)

    def slope_a(self, s):
        h = self.h
        return (self.a_fn(s + h) - self.a_fn(s - h)) / (2 * h)

    def crossing(self, s, x, ds_S=None, tol=1e-6):
        """Classify the motion of a critical value at the lower bound."""
        if ds_S is None:
            h = self.h
            ds_S = (float(self.problem_at(s + h).value(x))
                    - float(self.problem_at(s - h).value(x))) / (2 * h)
        margin = ds_S - self.slope_a(s)
        kind = "down" if margin < -tol else ("parallel" if margin <= tol else "up")
        return {"ds_S": ds_S, "ds_a": self.slope_a(s), "margin": margin, "kind": kind,
                "transport": kind in ("down", "parallel")}


def normalize_window(problem_at, a_fn, b_fn):
    return NormalizedFamily(problem_at, a_fn, b_fn)


# ---------------------------------------------------------------------------
# cubical oracle
# ---------------------------------------------------------------------------

def _lower_star(vals):
    """Cell values for every direction mask: max over the cube's vertices."""
    nd = vals.ndim
    out = {}
    for mask in range(1 << nd):
        v = vals
        for i in range(nd):
            if mask >> i & 1:
                lo = [slice(None)] * nd
                hi = [slice(None)] * nd
                lo[i] = slice(0, -1)
                hi[i] = slice(1, None)
                v = np.maximum(v[tuple(lo)], v[tuple(hi)])
        out[mask] = v
    return out


def relative_cubical_ranks(vals, a, b):
    """F_2 ranks of H(X_b, X_a) for lower-star cubical sublevel complexes.

    X_c holds every cube of the grid whose vertex values are all <= c.
    """
    nd = vals.ndim
    cells = _lower_star(vals)
    dims = {mask: bin(mask).count("1") for mask in cells}
    # positions of relative cells in filtration order within each dimension
    pos = {}
    count = [0] * (nd + 1)
    order_vals = {}
    for k in range(nd + 1):
        masks = [m_ for m_ in cells if dims[m_] == k]
        entries = []
        for m_ in masks:
            v = cells[m_]
            sel = (v > a) & (v <= b)
            idx = np.flatnonzero(sel)
            entries.append((m_, idx, v.ravel()[idx]))
        allv = np.concatenate([e[2] for e in entries]) if entries else np.zeros(0)
        order = np.argsort(allv, kind="stable")
        rank_of = np.empty_like(order)
        rank_of[order] = np.arange(order.size)
        off = 0
        for m_, idx, v in entries:
            p = np.full(cells[m_].size, -1, dtype=np.int64)
            p[idx] = rank_of[off: off + idx.size]
            pos[m_] = p.reshape(cells[m_].shape)
            off += idx.size
        count[k] = int(order.size)
        order_vals[k] = allv[order]

    def columns(k):
        """Boundary columns of the k-cells, listed in filtration order."""
        cols = [None] * count[k]
        for m_ in cells:
            if dims[m_] != k:
                continue
            P = pos[m_]
            faces = []
            for i in range(nd):
                if m_ >> i & 1:
                    F = pos[m_ ^ (1 << i)]
                    lo = [slice(None)] * nd
                    hi = [slice(None)] * nd
                    lo[i] = slice(0, -1)
                    hi[i] = slice(1, None)
                    faces.append(F[tuple(lo)])
                    faces.append(F[tuple(hi)])
            sel = P >= 0
            colpos = P[sel]
            fs = np.stack([f_[sel] for f_ in faces], axis=-1) if faces else None
            for c, row in zip(colpos.tolist(), fs.tolist()):
                bits = 0
                for r in row:
                    if r >= 0:
                        bits ^= 1 << r
                cols[c] = bits
        return cols

    ranks = [0] * (nd + 2)
    cleared = set()
    for k in range(nd, 0, -1):
        cols = columns(k)
        pivots = {}
        newly = set()
        for j, col in enumerate(cols):
            if j in cleared:
                continue
            while col:
                low = col.bit_length() - 1
                other = pivots.get(low)
                if other is None:
                    pivots[low] = col
                    newly.add(low)
                    break
                col ^= other
        ranks[k] = len(pivots)
        cleared = newly
    betti = {}
    for k in range(nd + 1):
        h = count[k] - ranks[k] - ranks[k + 1]
        if h:
            betti[k] = h
    return betti, count


def cubical_oracle(fun, box, a, b, shape, max_halvings=3, stable_runs=1):
    """Relative F_2 homology of the sublevel pair ({S <= b}, {S <= a}) in a box.

    ``fun`` maps points of shape (..., n) to values; ``box`` is a list of
    (lo, hi) per axis; ``shape`` the initial vertex counts.  The grid
    spacing is halved until the ranks agree on ``stable_runs + 1``
    consecutive grids; after ``max_halvings`` without agreement the
    result is reported as inconclusive.
    """
    shape = [int(n) for n in shape]
    history = []
    for level in range(max_halvings + 1):
        axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(box, shape)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        vals = np.asarray(fun(grid.reshape(-1, len(box)))).reshape(grid.shape[:-1])
        betti, count = relative_cubical_ranks(vals, a, b)
        history.append({"shape": list(shape), "ranks": betti, "cells": count})
        if len(history) > stable_runs and all(
                h["ranks"] == betti for h in history[-stable_runs - 1:]):
            return {"ranks": betti, "conclusive": True, "history": history}
        shape = [2 * n - 1 for n in shape]
    return {"ranks": history[-1]["ranks"], "conclusive": False, "history": history}

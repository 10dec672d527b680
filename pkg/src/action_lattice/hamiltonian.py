"""Profiles, capped families and the assembled Hamiltonians H^s.

Every Hamiltonian here lives on a flat model manifold and has a closed-form
time-t flow, action and flow Jacobian.  A generic RK4 integrator is kept as
an independent cross-check and as the fallback for user supplied
Hamiltonians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from .geometry import Manifold

SAFETY = 1.1


# ---------------------------------------------------------------------------
# scalar helpers
# ---------------------------------------------------------------------------

def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.asarray(x, dtype=float)
    a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1 - x, 1.0)), 0.0)
    return a / (a + b)


def quintic_step(x, nu=0):
    """Quintic smoothstep 6x^5 - 15x^4 + 10x^3 clamped to [0, 1], or its derivative."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    if nu == 0:
        return x ** 3 * (10 - 15 * x + 6 * x * x)
    if nu == 1:
        return 30 * x * x * (1 - x) ** 2
    if nu == 2:
        return 60 * x * (1 - x) * (1 - 2 * x)
    raise ValueError("nu must be 0, 1 or 2")


# ---------------------------------------------------------------------------
# profile and the capped family
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Profile:
    """f(t) = -lam (1 - t)^m / t on (0, 1], zero on [1, inf).

    Concave on (0, 1), divergent at 0 and C^(m-1) at t = 1.
    """

    m: int = 3
    lam: float = 1.0

    def __post_init__(self):
        if self.m < 3 or self.lam <= 0:
            raise ValueError("profile needs m >= 3 and lam > 0")

    def __call__(self, t, nu=0):
        t = np.asarray(t, dtype=float)
        tt = np.clip(t, 1e-300, 1.0)
        u = 1.0 - tt
        m, lam = self.m, self.lam
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            v = self._branch(tt, u, m, lam, nu)
        return np.where(t >= 1.0, 0.0, v)

    @staticmethod
    def _branch(tt, u, m, lam, nu):
        if nu == 0:
            v = -lam * u ** m / tt
        elif nu == 1:
            v = lam * (m * u ** (m - 1) / tt + u ** m / tt ** 2)
        elif nu == 2:
            v = -lam * (m * (m - 1) * u ** (m - 2) / tt
                        + 2 * m * u ** (m - 1) / tt ** 2 + 2 * u ** m / tt ** 3)
        else:
            raise ValueError("nu must be 0, 1 or 2")
        return v

    def intercept(self, t):
        """Value-axis intercept f(t) - t f'(t) of the tangent line at t."""
        return self(t) - t * self(t, 1)

    def slope_root(self, slope):
        """The unique t in (0, 1) with f'(t) = slope > 0."""
        if slope <= 0:
            raise ValueError("slope must be positive")
        hi = 1.0 - 1e-15
        lo = 0.5
        while self(lo, 1) < slope:
            lo *= 0.5
            if lo < 1e-300:
                raise RuntimeError("slope root not bracketed")
        return brentq(lambda t: float(self(t, 1)) - slope, lo, hi, xtol=1e-15, rtol=1e-15)

    def to_dict(self):
        return {"m": self.m, "lam": self.lam}


def _profile_tangent_point(f: Profile, s):
    if s <= 0:
        raise ValueError("tangent point needs s > 0")
    g = lambda t: float(f.intercept(t)) + s
    lo = 0.5
    while g(lo) > 0:
        lo *= 0.5
        if lo < 1e-300:
            raise RuntimeError(f"tangent point not bracketed for s={s}")
    hi = 1.0
    # the intercept is 0 at t = 1, so g(1) = s > 0
    return brentq(g, lo, hi, xtol=1e-17, rtol=1e-15, maxiter=500)


@dataclass(frozen=True)
class _Cap:
    s: float
    ts: float
    M: float
    w0: float
    w1: float
    P: float
    bump: CubicHermiteSpline
    area: object  # antiderivative PPoly of bump


class CappedFamily:
    """The smooth family f_s of increasing capped profiles.

    For ``s >= s0`` the member ``h_s`` agrees with ``f + s`` beyond the
    tangent point ``t_s``; on ``[0, t_s]`` its derivative is ``M * B(t/t_s)``
    with ``M = f'(t_s)`` and ``B`` a cubic Hermite bump.  The bump starts
    linearly (so ``h_s = c t^2`` near 0), peaks at height ``P`` and lands on
    ``B(1) = 1`` with the slope of ``f'``.  Matching the two areas is the
    linear condition ``int_0^1 B = 1``, solved exactly for ``P``.

    Below ``s0`` the family is ``(1 - psi) (s/s0) h_{s0} + psi h_s``.

    Parameters
    ----------
    profile : Profile
    min_length : float
        Shortest nonzero closed-geodesic length of L.  ``s0`` is chosen so
        that every slope of f_s with s <= s0 stays below 0.9 of it.
    s0_cap : float
        Upper limit for ``s0``.
    """

    def __init__(self, profile: Profile | None = None, min_length: float = np.inf,
                 s0_cap: float = 4.0):
        self.profile = profile or Profile()
        self.min_length = float(min_length)
        self.s0 = self._choose_s0(s0_cap)
        self._cache = {}

    # -- construction of h_s -------------------------------------------
    def tangent_point(self, s):
        return _profile_tangent_point(self.profile, float(s))

    def _build(self, s):
        key = float(s)
        hit = self._cache.get(key) if hasattr(self, "_cache") else None
        if hit is not None:
            return hit
        f = self.profile
        ts = self.tangent_point(key)
        M = float(f(ts, 1))
        beta = ts * float(f(ts, 2)) / M
        Mt = M * ts
        # peak location: keeps tangent intercepts above -min(1/2, s/8) / P
        w1 = 1.0 / (1.0 / 0.3 + 2.0 * Mt + 8.0 * Mt / key)
        w0 = w1 / 3.0
        # landing piece [x2, 1] is a quadratic from slope sig to beta; the
        # descent [w1, x2] leaves with half its chord slope, so every piece
        # after the peak is monotone and B stays linear in P
        b = abs(beta)
        d2 = 1.0 / (2.0 / (1.0 - w1) + 4.0 * b / w1)
        x2 = 1.0 - d2
        D = x2 - w1

        def spline(P):
            k = P / (2 * w0)
            sig = 0.5 * (1.0 - d2 * beta / 2 - P) / D / (1.0 + d2 / (4 * D))
            v2 = 1.0 - d2 * (sig + beta) / 2.0
            return CubicHermiteSpline([0.0, w0, w1, x2, 1.0], [0.0, P / 2, P, v2, 1.0],
                                      [k, k, 0.0, sig, beta])

        def area(P):
            return float(spline(P).integrate(0.0, 1.0))

        a0, a1 = area(0.0), area(1.0)
        P = (1.0 - a0) / (a1 - a0)
        bump = spline(P)
        cap = _Cap(key, ts, M, w0, w1, P, bump, bump.antiderivative())
        if hasattr(self, "_cache"):
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = cap
        return cap

    def raw(self, s, t, nu=0):
        """The unblended member h_s and its t-derivatives."""
        c = self._build(s)
        t = np.asarray(t, dtype=float)
        x = t / c.ts
        inside = x < 1.0
        xi = np.clip(x, 0.0, 1.0)
        if nu == 0:
            lo = c.M * c.ts * c.area(xi)
        elif nu == 1:
            lo = c.M * c.bump(xi)
        elif nu == 2:
            lo = c.M / c.ts * c.bump(xi, 1)
        else:
            raise ValueError("nu must be 0, 1 or 2")
        hi = self.profile(t, nu) + (c.s if nu == 0 else 0.0)
        return np.where(inside, lo, hi)

    def _choose_s0(self, s0_cap):
        if not np.isfinite(self.min_length):
            return float(s0_cap)
        self._cache = {}
        grid = np.linspace(0.02, s0_cap, 200)
        best = grid[0]
        for s in grid:
            if self.peak_slope(s) < 0.9 * self.min_length:
                best = s
            else:
                break
        return float(best)

    def peak_slope(self, s):
        """max_t h_s'(t)."""
        c = self._build(s)
        return c.M * max(c.P, 1.0)

    def params(self, s):
        c = self._build(s)
        return {"s": c.s, "t_s": c.ts, "M": c.M, "w0": c.w0, "w1": c.w1, "P": c.P}

    # -- the blended family -------------------------------------------
    def __call__(self, s, t, nu=0):
        s = float(s)
        t = np.asarray(t, dtype=float)
        if s < 0:
            raise ValueError("s must be nonnegative")
        if s == 0:
            return np.zeros_like(t)
        if s >= self.s0:
            return self.raw(s, t, nu)
        psi = float(smooth_step((s - self.s0 / 2) / (self.s0 / 2)))
        out = (1 - psi) * (s / self.s0) * self.raw(self.s0, t, nu)
        if psi > 0:
            out = out + psi * self.raw(s, t, nu)
        return out

    def ds(self, s, t, h=1e-4):
        """Central difference of f_s(t) in s."""
        if s - h < 0:
            return (self(s + h, t) - self(s, t)) / h
        return (self(s + h, t) - self(s - h, t)) / (2 * h)

    def intercept(self, s, t):
        t = np.asarray(t, dtype=float)
        return self(s, t) - t * self(s, t, 1)

    def to_dict(self):
        return {"profile": self.profile.to_dict(), "min_length": self.min_length,
                "s0": self.s0}


class CapFunction:
    """f_s for one fixed s, with derivatives."""

    def __init__(self, fam: CappedFamily, s):
        self.fam = fam
        self.s = float(s)

    def __call__(self, t):
        return self.fam(self.s, t)

    def d1(self, t):
        return self.fam(self.s, t, 1)

    def d2(self, t):
        return self.fam(self.s, t, 2)


def tangent_point(fam, s):
    """t_s in (0, 1) where the tangent of f meets the value axis at -s."""
    f = fam.profile if isinstance(fam, CappedFamily) else fam
    return _profile_tangent_point(f, float(s))


def cap(fam: CappedFamily, s):
    if s < 0:
        raise ValueError("s must be nonnegative")
    return CapFunction(fam, s)


def _slope_roots(fun, slope, grid):
    """All roots t of fun(t) = slope on a sampling grid, refined by brentq."""
    vals = fun(grid) - slope
    roots = []
    for i in range(len(grid) - 1):
        a, b = vals[i], vals[i + 1]
        if a == 0:
            roots.append(grid[i])
        elif a * b < 0:
            roots.append(brentq(lambda t: float(fun(t)) - slope, grid[i], grid[i + 1],
                                xtol=1e-15, rtol=1e-15))
    return roots


def action_set(fam, lengths, window=(-np.inf, np.inf), s=None, tol=1e-9):
    """Actions ``t g'(t) - g(t)`` over tangent points with slope in ``lengths``.

    With ``s`` omitted ``g`` is the profile f itself; otherwise ``g = f_s``.
    A zero length contributes the constant loops (action ``-g`` on the flat
    parts).  The returned action is minus the tangent-line intercept.
    """
    a, b = window
    out = []
    if s is None:
        f = fam.profile if isinstance(fam, CappedFamily) else fam
        for ell in lengths:
            if ell < 0:
                raise ValueError("lengths must be nonnegative")
            if ell == 0:
                out.append(0.0)
            else:
                t = f.slope_root(ell)
                out.append(float(t * f(t, 1) - f(t)))
    else:
        s = float(s)
        grid = np.concatenate([np.geomspace(1e-9, 1e-2, 400),
                               np.linspace(1e-2, 1.0, 20001)[1:]])
        d1 = lambda t: fam(s, t, 1)
        for ell in lengths:
            if ell < 0:
                raise ValueError("lengths must be nonnegative")
            if ell == 0:
                out.append(0.0)
                out.append(-s)
                continue
            for t in _slope_roots(d1, ell, grid):
                out.append(float(t * fam(s, t, 1) - fam(s, t)))
    out = sorted(v for v in out if a <= v <= b)
    merged = []
    for v in out:
        if not merged or abs(v - merged[-1]) > tol:
            merged.append(v)
    return merged


# ---------------------------------------------------------------------------
# asymptotic piece and the Lagrangian embedding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AsymptoticPiece:
    """H_inf(q, p) = eps * h(|p|) with h convex, zero on [0, 2/3].

    ``h' = mu * S((t - 2/3) * 3)`` for the quintic smoothstep S, so
    ``h = mu * t + c`` on ``[1, inf)`` with ``c = -5 mu / 6``.
    """

    mu: float = 1.0
    eps: float = 0.05
    delta: float = 1.0

    def h(self, t, nu=0):
        t = np.asarray(t, dtype=float)
        x = np.clip(3 * (t - 2.0 / 3.0), 0.0, 1.0)
        mu = self.mu
        if nu == 0:
            inner = mu / 3 * (x ** 6 - 3 * x ** 5 + 2.5 * x ** 4)
            return np.where(t >= 1.0, mu * t + self.intercept, inner)
        if nu == 1:
            return mu * quintic_step(x)
        if nu == 2:
            return np.where((t > 2 / 3) & (t < 1), 3 * mu * quintic_step(x, 1), 0.0)
        raise ValueError("nu must be 0, 1 or 2")

    @property
    def intercept(self):
        return -5.0 * self.mu / 6.0

    @property
    def slope(self):
        return self.eps * self.mu

    @property
    def h_c1_c2(self):
        # sup h' = mu; Hessian of h(|p|) has eigenvalues h'' and h'/|p|
        ts = np.linspace(0.0, 3.0, 30001)
        tang = np.where(ts > 0, self.h(ts, 1) / np.where(ts > 0, ts, 1), 0)
        return self.mu, float(max(np.max(self.h(ts, 2)), np.max(tang)))

    @property
    def beta(self):
        c1, c2 = self.h_c1_c2
        return self.delta / (SAFETY * (c1 + c2))

    def scaled(self, factor):
        return AsymptoticPiece(self.mu, self.eps * factor, self.delta)

    def value(self, p):
        return self.eps * self.h(np.linalg.norm(p, axis=-1))

    def to_dict(self):
        return {"mu": self.mu, "eps": self.eps, "delta": self.delta,
                "beta": self.beta, "slope": self.slope, "intercept": self.intercept}


class LagrangianEmbedding:
    """Graph of ``dg`` for ``g(q) = sum_i A_i sin(2 pi q_i / l_i)`` scaled by ``rho``.

    ``j(q, p_L) = (q, rho * p_L + dg(q))``.  The induced metric on L makes a
    closed geodesic winding ``k`` times have length ``rho * |sum k_i l_i|``.
    """

    def __init__(self, manifold: Manifold, amplitudes=None, rho=0.35, grid=2001):
        if not manifold.flat:
            raise ValueError("embeddings are built on flat model manifolds")
        self.manifold = manifold
        d = manifold.dim
        amps = np.zeros(d) if amplitudes is None else np.broadcast_to(
            np.asarray(amplitudes, dtype=float), (d,)).copy()
        self.amplitudes = amps
        self.rho = float(rho)
        self._freq = 2 * np.pi / manifold.period_array
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        reach = self.rho + self.max_dg
        if reach > 0.5 + 1e-12:
            raise ValueError(
                f"embedding leaves D_1/2: rho + max|dg| = {reach:.4f} > 1/2")
        self._grid = grid

    @property
    def max_dg(self):
        return float(np.linalg.norm(np.abs(self.amplitudes) * self._freq))

    def g(self, q):
        q = np.asarray(q, dtype=float)
        return np.sum(self.amplitudes * np.sin(self._freq * q), axis=-1)

    def dg(self, q):
        q = np.asarray(q, dtype=float)
        return self.amplitudes * self._freq * np.cos(self._freq * q)

    def hess_g(self, q):
        """Diagonal of D^2 g (the Hessian is diagonal for this family)."""
        q = np.asarray(q, dtype=float)
        return -self.amplitudes * self._freq ** 2 * np.sin(self._freq * q)

    def F(self, q):
        """Primitive normalized to min F = 0."""
        return self.g(q) + float(np.sum(np.abs(self.amplitudes)))

    @property
    def F_norm(self):
        # sup over a grid, checked against the exact value 2 * sum|A_i|
        d = self.manifold.dim
        axes = [np.linspace(0, L, self._grid if d == 1 else 201)
                for L in self.manifold.periods]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        return float(np.max(self.F(mesh)))

    def embed(self, q, pL):
        return np.asarray(q, dtype=float), self.rho * np.asarray(pL, dtype=float) + self.dg(q)

    def unembed(self, q, p):
        return (np.asarray(p, dtype=float) - self.dg(q)) / self.rho

    def norm_L(self, q, p):
        return np.linalg.norm(self.unembed(q, p), axis=-1)

    def geodesic_lengths(self, kmax):
        """Lengths of closed L-geodesics with winding up to kmax (with multiplicity 1)."""
        per = self.manifold.period_array
        d = self.manifold.dim
        ks = np.stack(np.meshgrid(*[np.arange(-kmax, kmax + 1)] * d, indexing="ij"),
                      axis=-1).reshape(-1, d)
        lens = self.rho * np.linalg.norm(ks * per, axis=-1)
        return sorted(set(np.round(lens, 12)))

    @property
    def min_length(self):
        return self.rho * float(np.min(self.manifold.period_array))

    def to_dict(self):
        return {"amplitudes": self.amplitudes.tolist(), "rho": self.rho,
                "F_norm": self.F_norm, "max_dg": self.max_dg}


# ---------------------------------------------------------------------------
# Hamiltonians
# ---------------------------------------------------------------------------

class Hamiltonian:
    """Base class.  Points broadcast over leading axes: q, p of shape (..., d)."""

    closed_form = False

    def __init__(self, manifold: Manifold):
        if not manifold.flat:
            raise ValueError("Hamiltonian flows are implemented on flat models")
        self.manifold = manifold

    def value(self, q, p):
        raise NotImplementedError

    def grad(self, q, p):
        """(dH/dq, dH/dp)."""
        raise NotImplementedError

    def __call__(self, q, p):
        return self.value(q, p)

    # generic integrator, also the cross-check for closed forms
    def rk4(self, q, p, t, steps=None):
        """Integrate the flow and the action density p.dH/dp - H for time t.

        Chart coordinates are not reduced, so windings are visible.
        """
        q = np.array(q, dtype=float)
        p = np.array(p, dtype=float)
        t = np.asarray(t, dtype=float)
        n = steps or 64
        h = t / n
        hh = h[..., None] if h.ndim else h
        a = np.zeros(q.shape[:-1])

        def rhs(q_, p_):
            Hq, Hp = self.grad(q_, p_)
            return Hp, -Hq, np.sum(p_ * Hp, axis=-1) - self.value(q_, p_)

        for _ in range(n):
            k1 = rhs(q, p)
            k2 = rhs(q + hh / 2 * k1[0], p + hh / 2 * k1[1])
            k3 = rhs(q + hh / 2 * k2[0], p + hh / 2 * k2[1])
            k4 = rhs(q + hh * k3[0], p + hh * k3[1])
            q = q + hh / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            p = p + hh / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            a = a + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        return q, p, a

    def flow(self, q, p, t):
        """Time-t flow (Q, P, action) in unreduced chart coordinates."""
        return self.rk4(q, p, t, 256)

    def flow_jacobian(self, q, p, t):
        """(dP/dq, dP/dp) of the time-t flow, or None if not available."""
        return None

    def is_admissible(self, n=400, seed=0):
        """Sampled check of H = mu |p| + c for |p| >= 1 with 0 < mu <= epsilon0."""
        rng = np.random.default_rng(seed)
        m = self.manifold
        q = m.random_point(rng, n)
        dirs = rng.normal(size=(n, m.dim))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        r1 = rng.uniform(1.0, 3.0, n)
        r2 = r1 + rng.uniform(0.1, 2.0, n)
        v1 = self.value(q, dirs * r1[:, None])
        v2 = self.value(q, dirs * r2[:, None])
        mu = (v2 - v1) / (r2 - r1)
        c = v1 - mu * r1
        ok = (np.ptp(mu) < 1e-9 and np.ptp(c) < 1e-9
              and 0 < mu[0] <= m.epsilon0 + 1e-12)
        return bool(ok), float(mu[0]), float(c[0])


class RadialHamiltonian(Hamiltonian):
    """H(q, p) = k(|p|) on a flat manifold, given k, k', k''."""

    closed_form = True

    def __init__(self, manifold, k, dk, d2k):
        super().__init__(manifold)
        self.k, self.dk, self.d2k = k, dk, d2k

    @classmethod
    def constant(cls, manifold, c):
        zero = lambda t: np.zeros_like(np.asarray(t, dtype=float))
        return cls(manifold, lambda t: np.full_like(np.asarray(t, dtype=float), c), zero, zero)

    @classmethod
    def from_piece(cls, manifold, piece: AsymptoticPiece, shift=0.0):
        e = piece.eps
        return cls(manifold, lambda t: e * piece.h(t) + shift,
                   lambda t: e * piece.h(t, 1), lambda t: e * piece.h(t, 2))

    @classmethod
    def wells(cls, manifold, amplitude=1000.0, radii=(0.3, 0.45), mu=25.0, blend=(0.55, 0.65)):
        """k' = A t (t^2 - c1^2)(t^2 - c2^2) near 0, blended to slope ``mu``.

        Critical radii 0, c1, c2 give constant orbits of index pattern
        max / saddle / max in the r = 2 fiber problem; with c2^2 < 3 c1^2
        the value at 0 is the highest.
        """
        A = float(amplitude)
        c1, c2 = (float(c) ** 2 for c in radii)
        t0, t1 = blend
        w = t1 - t0
        nodes, weights = np.polynomial.legendre.leggauss(12)

        def poly(t, nu):
            if nu == 0:
                return A * (t ** 6 / 6 - (c1 + c2) * t ** 4 / 4 + c1 * c2 * t ** 2 / 2)
            if nu == 1:
                return A * t * (t * t - c1) * (t * t - c2)
            return A * (5 * t ** 4 - 3 * (c1 + c2) * t ** 2 + c1 * c2)

        def d1(t):
            t = np.asarray(t, dtype=float)
            x = np.clip((t - t0) / w, 0.0, 1.0)
            sx = quintic_step(x)
            return np.where(t >= t1, mu, (1 - sx) * poly(np.minimum(t, t1), 1) + sx * mu)

        def d2(t):
            t = np.asarray(t, dtype=float)
            x = np.clip((t - t0) / w, 0.0, 1.0)
            sx, dsx = quintic_step(x), quintic_step(x, 1) / w
            tt = np.minimum(t, t1)
            val = (1 - sx) * poly(tt, 2) + dsx * (mu - poly(tt, 1))
            return np.where(t >= t1, 0.0, val)

        def blend_integral(t):
            # Gauss-Legendre on [t0, t], exact for the polynomial integrand
            t = np.asarray(t, dtype=float)
            half = (t - t0) / 2
            pts = t0 + half[..., None] * (nodes + 1)
            return np.sum(weights * d1(pts), axis=-1) * half

        k_t0 = poly(t0, 0)
        k_t1 = k_t0 + float(blend_integral(np.array(t1)))

        def k(t):
            t = np.asarray(t, dtype=float)
            mid = k_t0 + blend_integral(np.clip(t, t0, t1))
            return np.where(t <= t0, poly(np.minimum(t, t0), 0),
                            np.where(t >= t1, k_t1 + mu * (t - t1), mid))

        out = cls(manifold, k, d1, d2)
        out.critical_radii = (0.0,) + tuple(float(c) for c in radii)
        return out

    def value(self, q, p):
        return self.k(np.linalg.norm(p, axis=-1)) + 0 * np.asarray(q, dtype=float)[..., 0]

    def _unit(self, p):
        r = np.linalg.norm(p, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        return r, np.where((r > 0)[..., None], p / safe[..., None], 0.0)

    def grad(self, q, p):
        p = np.asarray(p, dtype=float)
        r, u = self._unit(p)
        return np.zeros_like(p), self.dk(r)[..., None] * u

    def flow(self, q, p, t):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        t = np.asarray(t, dtype=float)
        r, u = self._unit(p)
        dk = self.dk(r)
        Q = q + (t * dk)[..., None] * u
        A = t * (r * dk - self.k(r))
        return Q, p.copy(), A

    def flow_jacobian(self, q, p, t):
        p = np.asarray(p, dtype=float)
        d = p.shape[-1]
        eye = np.broadcast_to(np.eye(d), p.shape[:-1] + (d, d))
        return np.zeros_like(eye), eye.copy()


class AssembledHamiltonian(Hamiltonian):
    """H^s = f_s(|p - dg(q)| / rho) near the embedded Lagrangian, s + H_inf outside.

    The inner region ``|p - dg| < rho`` and its complement are both invariant
    under the flow, which is explicit in each: the fiber translation
    ``p' = p - dg(q)`` turns the inner Hamiltonian into a radial one.
    """

    closed_form = True

    def __init__(self, embedding: LagrangianEmbedding, fam: CappedFamily,
                 hinf: AsymptoticPiece, s):
        super().__init__(embedding.manifold)
        if 2.0 / 3.0 <= embedding.rho + embedding.max_dg:
            raise ValueError("embedding image must lie inside D_2/3 where H_inf vanishes")
        self.L = embedding
        self.fam = fam
        self.hinf = hinf
        self.s = float(s)
        if self.s < 0:
            raise ValueError("s must be nonnegative")

    # radial inner profile K(r) = f_s(r / rho)
    def K(self, r, nu=0):
        rho = self.L.rho
        return self.fam(self.s, np.asarray(r) / rho, nu) / rho ** nu

    def _split(self, q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        pp = p - self.L.dg(q)
        r = np.linalg.norm(pp, axis=-1)
        inner = r < self.L.rho
        safe = np.where(r > 0, r, 1.0)
        u = np.where((r > 0)[..., None], pp / safe[..., None], 0.0)
        return q, p, pp, r, u, inner

    def value(self, q, p):
        q, p, pp, r, u, inner = self._split(q, p)
        outer = self.s + self.hinf.value(p)
        return np.where(inner, self.K(np.minimum(r, self.L.rho)), outer)

    def grad(self, q, p):
        q, p, pp, r, u, inner = self._split(q, p)
        dK = self.K(np.minimum(r, self.L.rho), 1)[..., None] * u
        Gq = self.L.hess_g(q)
        in_q, in_p = -Gq * dK, dK
        rp = np.linalg.norm(p, axis=-1)
        safe = np.where(rp > 0, rp, 1.0)
        up = np.where((rp > 0)[..., None], p / safe[..., None], 0.0)
        out_p = (self.hinf.eps * self.hinf.h(rp, 1))[..., None] * up
        m = inner[..., None]
        return np.where(m, in_q, 0.0), np.where(m, in_p, out_p)

    def _hess_K(self, r, u):
        """Hessian of K(|p'|) in p'."""
        d = u.shape[-1]
        rr = np.minimum(r, self.L.rho)
        d1 = self.K(rr, 1)
        d2 = self.K(rr, 2)
        small = r < 1e-12
        tang = np.where(small, self.K(np.zeros_like(r), 2), d1 / np.where(small, 1.0, r))
        uu = u[..., :, None] * u[..., None, :]
        eye = np.eye(d)
        return np.where(small[..., None, None], tang[..., None, None] * eye,
                        d2[..., None, None] * uu + tang[..., None, None] * (eye - uu))

    def flow(self, q, p, t):
        q, p, pp, r, u, inner = self._split(q, p)
        t = np.asarray(t, dtype=float)
        rr = np.minimum(r, self.L.rho)
        dK = self.K(rr, 1)
        Qi = q + (t * dK)[..., None] * u
        Pi = pp + self.L.dg(Qi)
        Ai = t * (rr * dK - self.K(rr)) + self.L.g(Qi) - self.L.g(q)
        rp = np.linalg.norm(p, axis=-1)
        safe = np.where(rp > 0, rp, 1.0)
        up = np.where((rp > 0)[..., None], p / safe[..., None], 0.0)
        e = self.hinf.eps
        dh = e * self.hinf.h(rp, 1)
        Qo = q + (t * dh)[..., None] * up
        Ao = t * (rp * dh - e * self.hinf.h(rp)) - t * self.s
        m = inner[..., None]
        return (np.where(m, Qi, Qo), np.where(m, Pi, p), np.where(inner, Ai, Ao))

    def flow_jacobian(self, q, p, t):
        q, p, pp, r, u, inner = self._split(q, p)
        t = np.asarray(t, dtype=float)
        d = q.shape[-1]
        eye = np.broadcast_to(np.eye(d), q.shape[:-1] + (d, d))
        Hk = self._hess_K(r, u)
        dK = self.K(np.minimum(r, self.L.rho), 1)
        Q = q + (t * dK)[..., None] * u
        Gq = self.L.hess_g(q)[..., None, :] * np.eye(d)
        GQ = self.L.hess_g(Q)[..., None, :] * np.eye(d)
        tt = t[..., None, None] if t.ndim else t
        dPdp = eye + tt * GQ @ Hk
        dPdq = -Gq + GQ @ (eye - tt * Hk @ Gq)
        m = inner[..., None, None]
        return np.where(m, dPdq, 0.0), np.where(m, dPdp, eye)


class ScaledHamiltonian(Hamiltonian):
    """lam * H: the time-t flow is the time-(lam t) flow of H, with the same action."""

    def __init__(self, H: Hamiltonian, lam):
        super().__init__(H.manifold)
        self.base = H
        self.lam = float(lam)
        self.closed_form = H.closed_form

    def value(self, q, p):
        return self.lam * self.base.value(q, p)

    def grad(self, q, p):
        gq, gp = self.base.grad(q, p)
        return self.lam * gq, self.lam * gp

    def flow(self, q, p, t):
        return self.base.flow(q, p, self.lam * np.asarray(t, dtype=float))

    def flow_jacobian(self, q, p, t):
        return self.base.flow_jacobian(q, p, self.lam * np.asarray(t, dtype=float))


def assemble_Hs(L: LagrangianEmbedding, fam: CappedFamily, hinf: AsymptoticPiece, s):
    """The Hamiltonian H^s built from an embedding, a capped family and H_inf."""
    if L.rho + L.max_dg > 0.5 + 1e-12:
        raise ValueError("embedding violates the D_1/2 containment")
    return AssembledHamiltonian(L, fam, hinf, s)


# ---------------------------------------------------------------------------
# derivative bounds and the property suite
# ---------------------------------------------------------------------------

def _fd_hessian_norm(H: Hamiltonian, q, p, h=1e-5):
    """Spectral norm of the (q, p) Hessian by central differences of grad."""
    d = q.shape[-1]
    n = q.shape[0]
    cols = []
    for k in range(2 * d):
        e = np.zeros(2 * d)
        e[k] = h
        gp = np.concatenate(H.grad(q + e[:d], p + e[d:]), axis=-1)
        gm = np.concatenate(H.grad(q - e[:d], p - e[d:]), axis=-1)
        cols.append((gp - gm) / (2 * h))
    Hs = np.stack(cols, axis=-1).reshape(n, 2 * d, 2 * d)
    Hs = 0.5 * (Hs + np.swapaxes(Hs, -1, -2))
    return np.max(np.abs(np.linalg.eigvalsh(Hs)), axis=-1)


def c1_c2(H: Hamiltonian, density=40, pmax=1.0):
    """Sampled sup of |dH| and |D^2 H| over the disc bundle of radius pmax, times 1.1."""
    m = H.manifold
    d = m.dim
    qaxes = [np.linspace(0, L, density, endpoint=False) for L in m.periods]
    if d == 1:
        paxis = np.linspace(-pmax, pmax, 2 * density + 1)
        Q, P = np.meshgrid(qaxes[0], paxis, indexing="ij")
        q = Q.reshape(-1, 1)
        p = P.reshape(-1, 1)
    else:
        qs = np.stack(np.meshgrid(*qaxes, indexing="ij"), -1).reshape(-1, d)
        radii = np.linspace(0, pmax, density // 2 + 1)
        ang = np.linspace(0, 2 * np.pi, density, endpoint=False)
        ps = np.concatenate([np.stack([r * np.cos(ang), r * np.sin(ang)], -1)
                             for r in radii])
        if d > 2:
            ps = np.concatenate([ps, np.zeros((len(ps), d - 2))], axis=-1)
        q = np.repeat(qs, len(ps), axis=0)
        p = np.tile(ps, (len(qs), 1))
    Hq, Hp = H.grad(q, p)
    c1 = float(np.max(np.sqrt(np.sum(Hq ** 2, -1) + np.sum(Hp ** 2, -1))))
    c2 = float(np.max(_fd_hessian_norm(H, q, p)))
    return SAFETY * c1, SAFETY * c2


def _check(ok, worst, **extra):
    return {"pass": bool(ok), "worst": float(worst), **extra}


def verify_profile_suite(fam: CappedFamily, hinf: AsymptoticPiece,
                         s_grid=(0.05, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 20.0, 40.0),
                         t_points=4001, manifold: Manifold | None = None,
                         lengths=None, seed=0):
    """Sampled checks of f1-f8 and H1-H4; returns a dict keyed by property id."""
    ts = np.linspace(0.0, 1.5, t_points)
    inner_t = ts[(ts > 0) & (ts < 1)]
    rep = {}

    # f1: increasing and smooth in s (second-order convergence of d/ds)
    worst_slope = min(float(np.min(fam(s, ts, 1))) for s in s_grid)
    orders = []
    for s in s_grid:
        if s < 0.4:
            continue
        tt = np.linspace(0.02, 1.2, 37)
        d = [(fam(s + h, tt) - fam(s - h, tt)) / (2 * h) for h in (0.08, 0.04, 0.02)]
        e1 = np.max(np.abs(d[0] - d[1]))
        e2 = np.max(np.abs(d[1] - d[2]))
        if e1 > 1e-9:
            orders.append(e1 / max(e2, 1e-300))
    worst_order = min(orders) if orders else 4.0
    rep["f1"] = _check(worst_slope >= -1e-12 and worst_order > 2.5,
                       min(worst_slope, worst_order), min_slope=worst_slope,
                       min_ratio=worst_order)

    # f2: f_s = c t^2 near 0
    worst = 0.0
    ok = True
    for s in s_grid:
        tt = np.linspace(1e-6, 0.2 * fam.params(max(s, fam.s0))["w0"]
                         * fam.params(max(s, fam.s0))["t_s"], 50)
        c = fam(s, tt) / tt ** 2
        ok &= bool(np.ptp(c) <= 1e-8 * abs(c[0]) and c[0] > 0)
        worst = max(worst, float(np.ptp(c) / abs(c[0])))
    rep["f2"] = _check(ok, worst)

    # f3: f_s = s for t >= 1
    tail = np.linspace(1.0, 3.0, 201)
    worst = max(float(np.max(np.abs(fam(s, tail) - s))) for s in s_grid)
    rep["f3"] = _check(worst < 1e-12, worst)

    # f4: strictly increasing on (0, 1)
    worst = min(float(np.min(fam(s, inner_t, 1))) for s in s_grid)
    rep["f4"] = _check(worst > 0, worst)

    # f5 / f6: s >= 5
    big = [s for s in s_grid if s >= 5]
    w5, w6 = 0.0, 0.0
    lo5 = 0.0
    for s in big:
        t_s = fam.tangent_point(s)
        tt = np.linspace(0, t_s, 4001)
        icpt = fam.intercept(s, tt)
        lo5 = min(lo5, float(np.min(icpt)))
        w5 = max(w5, float(np.max(icpt)))
        tt = np.linspace(t_s, 1.5, 2001)
        w6 = max(w6, float(np.max(np.abs(fam(s, tt) - fam.profile(tt) - s))))
    rep["f5"] = _check(lo5 > -1 and w5 <= 1e-9, lo5, max_intercept=w5)
    rep["f6"] = _check(w6 < 1e-12, w6)

    # f7: intercepts on [0, 1] above -s/4
    margin = np.inf
    for s in s_grid:
        tt = np.linspace(0, 1, 4001)
        margin = min(margin, float(np.min(fam.intercept(s, tt) + s / 4)))
    rep["f7"] = _check(margin > 0, margin)

    # f8: negative closed-orbit actions of f_s are those of f shifted by -s
    if lengths is None:
        lengths = [0.0] + [k * fam.min_length for k in range(1, 40)] \
            if np.isfinite(fam.min_length) else [0.0]
    worst = 0.0
    ok = True
    for s in s_grid:
        got = action_set(fam, lengths, (-np.inf, -1e-9), s=s)
        want = [v - s for v in action_set(fam.profile, lengths)]
        want = sorted(v for v in want if v < -1e-9)
        if len(got) != len(want):
            ok = False
            worst = np.inf
        else:
            worst = max([worst] + [abs(a - b) for a, b in zip(got, want)])
    rep["f8"] = _check(ok and worst < 1e-8, worst)

    rep.update(verify_asymptotic(hinf, manifold, seed=seed))
    return rep


def verify_asymptotic(hinf: AsymptoticPiece, manifold: Manifold | None = None,
                      seed=0, n=1000, check_scaled=True):
    """H1-H4 for H_inf = eps h(|p|) on the given flat manifold."""
    m = manifold or Manifold.circle()
    rng = np.random.default_rng(seed)
    rep = {}
    # H1
    p = rng.normal(size=(n, m.dim))
    p *= (rng.uniform(0, 2 / 3, n) / np.linalg.norm(p, axis=-1))[:, None]
    worst = float(np.max(np.abs(hinf.value(p))))
    shape_ok = abs(hinf.h(1.0) - (hinf.mu + hinf.intercept)) < 1e-12
    rep["H1"] = _check(worst == 0.0 and shape_ok, worst)

    # H3: time-1 fiber flows never return unless stationary
    H = RadialHamiltonian.from_piece(m, hinf)
    q = m.random_point(rng, n)
    p = rng.normal(size=(n, m.dim))
    p *= (rng.uniform(0, 3, n) / np.linalg.norm(p, axis=-1))[:, None]
    Q, P, _ = H.flow(q, p, 1.0)
    speed = np.linalg.norm(H.grad(q, p)[1], axis=-1)
    back = m.dist(q, m.reduce(Q))
    moving = speed > 0
    returned = int(np.sum(moving & (back <= 1e-15)))
    rep["H3"] = _check(returned == 0 and np.all(back[moving] > 0), float(np.min(
        np.where(moving, back / np.where(moving, speed, 1), np.inf))),
        moving=int(moving.sum()), returned=returned)

    # H4: C1 + C2 of H_inf below delta
    c1, c2 = c1_c2(H, density=40, pmax=3.0)
    rep["H4"] = _check(c1 + c2 < hinf.delta and hinf.eps < hinf.beta
                       and 0 < hinf.slope <= m.epsilon0, hinf.delta - c1 - c2,
                       c1=c1, c2=c2, beta=hinf.beta)

    # H2: the scaled pieces pass H1, H3, H4 as well
    if check_scaled:
        sub = [verify_asymptotic(hinf.scaled(f), m, seed + 1, n // 4, False)
               for f in (0.25, 0.5)]
        ok = all(r[k]["pass"] for r in sub for k in ("H1", "H3", "H4"))
        rep["H2"] = _check(ok, min(r["H4"]["worst"] for r in sub))
    return rep

"""Discrete loop lattices and the generating function S_r.

A lattice point is ``r`` cotangent points ``z_j = (q_j, p_j)``.  Piece ``j``
flows ``z_j`` for time ``alpha_j`` and arrives at ``(q_{j+1}^-, p_{j+1}^-)``;
the mismatches with ``z_{j+1}`` are

    eps_q[j+1] = log(q_{j+1}^-, q_{j+1}),   eps_p[j+1] = p_{j+1} - p_{j+1}^-

(transport is the identity on the flat models), and

    S_r = sum_j ( action of piece j + p_{j+1}^- . eps_q[j+1] ).

All array routines take ``q``, ``p`` of shape ``(..., r, d)`` so batches of
lattice points are evaluated in one call.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryError, Manifold
from .hamiltonian import Hamiltonian, c1_c2


class PreconditionError(ValueError):
    """The subdivision is too coarse for the Hamiltonian."""


# ---------------------------------------------------------------------------
# subdivisions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Subdivision:
    """A point of the simplex: nonnegative interval lengths summing to 1."""

    weights: tuple

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if not w or min(w) < 0:
            raise ValueError("weights must be nonnegative and nonempty")
        if abs(sum(w) - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {sum(w)!r}, not 1")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, r):
        w = [1.0 / r] * r
        w[-1] = 1.0 - sum(w[:-1])
        return cls(tuple(w))

    @classmethod
    def random(cls, rng, r, spread=0.5):
        """Random subdivision with weights within a factor (1 +- spread) of 1/r."""
        w = 1.0 + spread * rng.uniform(-1, 1, r)
        w = w / w.sum()
        w[-1] = 1.0 - w[:-1].sum()
        return cls(tuple(w))

    @property
    def r(self):
        return len(self.weights)

    @property
    def array(self):
        return np.asarray(self.weights)

    @property
    def length(self):
        return max(self.weights)

    def times(self):
        """Partial sums: the start time of each piece."""
        return np.concatenate([[0.0], np.cumsum(self.weights)[:-1]])

    def rotate(self, k):
        w = self.weights
        k %= len(w)
        return Subdivision(w[k:] + w[:k])


def stabilize(alpha: Subdivision) -> Subdivision:
    """Top face map: append a zero-length interval."""
    return Subdivision(alpha.weights + (0.0,))


def double(alpha: Subdivision) -> Subdivision:
    """Halve every interval and run through the subdivision twice."""
    half = tuple(w / 2 for w in alpha.weights)
    return Subdivision(half + half)


# ---------------------------------------------------------------------------
# lattice points
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatticePoint:
    """``r`` cotangent points, stored as arrays ``q`` and ``p`` of shape (r, d)."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        p = np.atleast_2d(np.asarray(self.p, dtype=float))
        if q.shape != p.shape:
            raise ValueError("q and p must have the same shape")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("non-finite coordinates")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def r(self):
        return self.q.shape[0]

    @property
    def dim(self):
        return self.q.shape[1]

    def gaps(self, m: Manifold):
        return m.dist(self.q, np.roll(self.q, -1, axis=0))

    def is_valid(self, m: Manifold):
        return bool(np.all(self.gaps(m) < m.epsilon0))

    def validate(self, m: Manifold):
        g = self.gaps(m)
        if not np.all(g < m.epsilon0):
            j = int(np.argmax(g))
            raise GeometryError(
                f"adjacent points {j},{(j + 1) % self.r} are {g[j]:.4g} apart "
                f"(epsilon0 = {m.epsilon0:.4g})")
        return self

    def reduced(self, m: Manifold):
        return LatticePoint(m.reduce(self.q), self.p)

    def rotate(self, k):
        return LatticePoint(np.roll(self.q, -k, axis=0), np.roll(self.p, -k, axis=0))

    def distance(self, other: "LatticePoint", m: Manifold):
        dq = m.dist(self.q, other.q)
        dp = np.linalg.norm(self.p - other.p, axis=-1)
        return float(np.sqrt(np.sum(dq ** 2 + dp ** 2)))

    def to_flat(self):
        return np.concatenate([np.concatenate([q, p]) for q, p in zip(self.q, self.p)])

    @classmethod
    def from_flat(cls, r, flat):
        a = np.asarray(flat, dtype=float).reshape(r, 2, -1)
        return cls(a[:, 0], a[:, 1])

    def to_json(self):
        return json.dumps({"r": self.r, "point": self.to_flat().tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls.from_flat(d["r"], d["point"])


@dataclass(frozen=True)
class FlowData:
    """Derived data of the broken flow through a lattice point (index = arrival slot)."""

    q_minus: np.ndarray
    p_minus: np.ndarray
    p_tilde: np.ndarray
    eps_q: np.ndarray
    eps_q_tilde: np.ndarray
    eps_p: np.ndarray
    actions: np.ndarray
    piece_lengths: np.ndarray
    P: float
    precondition: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# precondition bookkeeping
# ---------------------------------------------------------------------------

def derivative_bounds(H: Hamiltonian, density=40, pmax=1.0):
    """(C1, C2) of H, cached on the Hamiltonian object."""
    key = ("_c12", density, pmax)
    cache = H.__dict__.setdefault("_bounds_cache", {})
    if key not in cache:
        cache[key] = c1_c2(H, density, pmax)
    return cache[key]


def precondition(H: Hamiltonian, alpha: Subdivision, delta=None, density=40):
    """Return (holds, l(alpha)(C1 + C2), delta)."""
    delta = H.manifold.epsilon0 / 5 if delta is None else delta
    c1, c2 = derivative_bounds(H, density)
    val = alpha.length * (c1 + c2)
    return val <= delta, val, delta


# ---------------------------------------------------------------------------
# array kernels
# ---------------------------------------------------------------------------

def _pieces(m: Manifold, H: Hamiltonian, q, p, alpha):
    a = np.asarray(alpha, dtype=float)
    Q, Pm, A = H.flow(q, p, np.broadcast_to(a, q.shape[:-1]))
    qn = np.roll(q, -1, axis=-2)
    eq = m.wrap(qn - Q)  # eps_q of the next slot, tangent at the arrival point
    return Q, Pm, A, eq


def s_value(m: Manifold, H: Hamiltonian, q, p, alpha):
    """S_r on arrays of shape (..., r, d)."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    Q, Pm, A, eq = _pieces(m, H, q, p, alpha)
    return np.sum(A, axis=-1) + np.sum(Pm * eq, axis=(-1, -2))


def s_grad_exact(m: Manifold, H: Hamiltonian, q, p, alpha):
    """Exact (dS/dq, dS/dp) from the flow Jacobians (closed-form flows only).

    Uses dA = P.dQ - p.dq for each piece, which gives

        dS/dq_j = -eps_p[j] + (dP_j/dq_j)^T eps_q[j+1]
        dS/dp_j = (dP_j/dp_j)^T eps_q[j+1].
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    a = np.broadcast_to(np.asarray(alpha, dtype=float), q.shape[:-1])
    jac = H.flow_jacobian(q, p, a)
    if jac is None:
        raise NotImplementedError("no closed-form flow Jacobian for this Hamiltonian")
    Q, Pm, A, eq = _pieces(m, H, q, p, alpha)
    eps_p = p - np.roll(Pm, 1, axis=-2)
    dPdq, dPdp = jac
    gq = -eps_p + np.einsum("...ji,...j->...i", dPdq, eq)
    gp = np.einsum("...ji,...j->...i", dPdp, eq)
    return gq, gp


def richardson_grad(fun, x, h=1e-6):
    """Central differences at steps h and h/2, Richardson-extrapolated.

    ``fun`` maps an array (..., n) to (...); ``x`` has shape (..., n).
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    eye = np.eye(n)

    def central(step):
        xp = x[..., None, :] + step * eye
        xm = x[..., None, :] - step * eye
        return (fun(xp) - fun(xm)) / (2 * step)

    d1 = central(h)
    d2 = central(h / 2)
    return (4 * d2 - d1) / 3


# ---------------------------------------------------------------------------
# point-level operations
# ---------------------------------------------------------------------------

def flow_data(z: LatticePoint, alpha: Subdivision, H: Hamiltonian, strict=False,
              delta=None):
    """Flow pieces, mismatches and momentum bound of a lattice point.

    With ``strict`` the precondition l(alpha)(C1 + C2) <= delta is enforced
    (delta defaults to epsilon0/5); otherwise its status is only recorded.
    """
    m = H.manifold
    if z.r != alpha.r:
        raise ValueError("lattice point and subdivision have different r")
    pre = {}
    if strict:
        ok, val, dl = precondition(H, alpha, delta)
        pre = {"holds": ok, "value": val, "delta": dl}
        if not ok:
            raise PreconditionError(
                f"l(alpha)(C1+C2) = {val:.4g} exceeds delta = {dl:.4g}")
    Q, Pm, A, eq = _pieces(m, H, z.q, z.p, alpha.array)
    if not np.all(np.isfinite(Q)) or not np.all(np.isfinite(Pm)):
        raise FloatingPointError("flow integration produced non-finite values")
    q_minus = np.roll(Q, 1, axis=0)
    p_minus = np.roll(Pm, 1, axis=0)
    eps_q = np.roll(eq, 1, axis=0)
    if np.any(np.linalg.norm(eps_q, axis=-1) >= m.injectivity_radius):
        raise GeometryError("mismatch reaches the injectivity radius")
    eps_p = z.p - p_minus
    lengths = np.linalg.norm(Q - z.q, axis=-1)
    return FlowData(q_minus=m.reduce(q_minus), p_minus=p_minus, p_tilde=p_minus.copy(),
                    eps_q=eps_q, eps_q_tilde=eps_q.copy(), eps_p=eps_p, actions=A,
                    piece_lengths=lengths, P=float(np.max(np.linalg.norm(z.p, axis=-1))),
                    precondition=pre)


def eval_S(z: LatticePoint, alpha: Subdivision, H: Hamiltonian):
    return float(s_value(H.manifold, H, z.q, z.p, alpha.array))


def grad_S(z: LatticePoint, alpha: Subdivision, H: Hamiltonian, method="auto"):
    """(dS/dq, dS/dp), each of shape (r, d).

    ``method`` is "exact" (closed-form flows), "fd" (Richardson central
    differences, step 1e-6) or "auto".
    """
    m = H.manifold
    if method == "auto":
        method = "exact" if H.closed_form else "fd"
    if method == "exact":
        return s_grad_exact(m, H, z.q, z.p, alpha.array)
    if method != "fd":
        raise ValueError(f"unknown gradient method {method!r}")
    r, d = z.q.shape
    x = np.concatenate([z.q.ravel(), z.p.ravel()])

    def fun(x_):
        qq = x_[..., : r * d].reshape(x_.shape[:-1] + (r, d))
        pp = x_[..., r * d:].reshape(x_.shape[:-1] + (r, d))
        return s_value(m, H, qq, pp, alpha.array)

    g = richardson_grad(fun, x)
    return g[: r * d].reshape(r, d), g[r * d:].reshape(r, d)


def dissect(H: Hamiltonian, q0, p0, alpha: Subdivision, check=True):
    """Sample the flow curve from (q0, p0) at the partial sums of alpha."""
    m = H.manifold
    q0 = np.atleast_1d(np.asarray(q0, dtype=float))
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    times = alpha.times()
    qq = np.broadcast_to(q0, (alpha.r, q0.size))
    pp = np.broadcast_to(p0, (alpha.r, p0.size))
    Q, P, _ = H.flow(qq, pp, times)
    if check:
        speed = _max_speed(H, q0, p0)
        if speed * alpha.length >= m.epsilon0:
            raise PreconditionError(
                f"speed {speed:.4g} times l(alpha) {alpha.length:.4g} reaches epsilon0")
    z = LatticePoint(m.reduce(Q), P)
    if check:
        z.validate(m)
    return z


def _max_speed(H, q0, p0, n=65):
    ts = np.linspace(0, 1, n)
    qq = np.broadcast_to(q0, (n, q0.size))
    pp = np.broadcast_to(p0, (n, p0.size))
    Q, P, _ = H.flow(qq, pp, ts)
    gq, gp = H.grad(Q, P)
    return float(np.max(np.sqrt(np.sum(gq ** 2, -1) + np.sum(gp ** 2, -1))))


def suspend_point(z: LatticePoint, v) -> LatticePoint:
    """Append (q_0, v); with the stabilized subdivision S is unchanged."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return LatticePoint(np.vstack([z.q, z.q[:1]]), np.vstack([z.p, v[None, :]]))


# ---------------------------------------------------------------------------
# packed problems: the closed case and the fiber over a base point
# ---------------------------------------------------------------------------

class SProblem:
    """S_r as a function of a flat coordinate vector.

    ``mode="closed"`` varies every q_j and p_j; ``mode="fiber"`` keeps
    ``q_0 = basepoint`` fixed, so the ambient dimension is (2r - 1) d.
    Coordinates are ``[q (or q_1..q_{r-1}), p]`` flattened.
    """

    def __init__(self, H: Hamiltonian, alpha: Subdivision, mode="closed", basepoint=None):
        if mode not in ("closed", "fiber"):
            raise ValueError("mode must be 'closed' or 'fiber'")
        self.H = H
        self.m = H.manifold
        self.alpha = alpha
        self.mode = mode
        self.r = alpha.r
        self.d = self.m.dim
        if mode == "fiber":
            if basepoint is None:
                raise ValueError("fiber problem needs a basepoint")
            self.basepoint = np.atleast_1d(np.asarray(basepoint, dtype=float))
        else:
            self.basepoint = None
        nq = self.r if mode == "closed" else self.r - 1
        self.nq = nq * self.d
        self.n = self.nq + self.r * self.d

    # packing ---------------------------------------------------------
    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        r, d = self.r, self.d
        qv = x[..., : self.nq].reshape(lead + (-1, d))
        if self.mode == "fiber":
            q0 = np.broadcast_to(self.basepoint, lead + (1, d))
            qv = np.concatenate([q0, qv], axis=-2)
        p = x[..., self.nq:].reshape(lead + (r, d))
        return qv, p

    def pack(self, z: LatticePoint):
        q = z.q if self.mode == "closed" else z.q[1:]
        return np.concatenate([np.ravel(q), np.ravel(z.p)])

    def point(self, x) -> LatticePoint:
        q, p = self.unpack(x)
        return LatticePoint(self.m.reduce(q), p)

    # values and derivatives -------------------------------------------
    def value(self, x):
        q, p = self.unpack(x)
        return s_value(self.m, self.H, q, p, self.alpha.array)

    def grad(self, x, method="auto"):
        if method == "auto":
            method = "exact" if self.H.closed_form else "fd"
        if method == "fd":
            return richardson_grad(self.value, x)
        q, p = self.unpack(x)
        gq, gp = s_grad_exact(self.m, self.H, q, p, self.alpha.array)
        if self.mode == "fiber":
            gq = gq[..., 1:, :]
        lead = gq.shape[:-2]
        return np.concatenate([gq.reshape(lead + (-1,)), gp.reshape(lead + (-1,))], axis=-1)

    def hessian(self, x, h=2e-6):
        """Symmetrized central-difference Jacobian of the gradient.

        Steps h and h/2 are Richardson-combined; near p' = 0 the profile is
        stiff enough that a single step blurs the null directions.
        """
        x = np.asarray(x, dtype=float)
        eye = np.eye(self.n)

        def jac(step):
            gp = self.grad(x[None, :] + step * eye)
            gm = self.grad(x[None, :] - step * eye)
            return (gp - gm) / (2 * step)

        J = (4 * jac(h / 2) - jac(h)) / 3
        return 0.5 * (J + J.T)

    def gaps(self, x):
        q, _ = self.unpack(x)
        return np.linalg.norm(self.m.wrap(np.roll(q, -1, axis=-2) - q), axis=-1)

    def flow_data(self, x):
        return flow_data(self.point(x), self.alpha, self.H)

    def describe(self):
        return {"mode": self.mode, "r": self.r, "d": self.d, "n": self.n,
                "basepoint": None if self.basepoint is None else self.basepoint.tolist()}

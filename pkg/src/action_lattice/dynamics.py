"""Pseudo-gradients, their flows, critical points and the quantitative checks.

Everything acts on a packed :class:`~action_lattice.lattice.SProblem`: the
closed problem (all q_j, p_j free) or the fiber problem over a base point
(q_0 frozen).  On the fiber problem the fiberwise pseudo-gradient is the
closed one with its q_0 slot dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .hamiltonian import (AssembledHamiltonian, Hamiltonian, RadialHamiltonian, ScaledHamiltonian,
                          _slope_roots)
from .lattice import (LatticePoint, SProblem, Subdivision, _pieces, dissect)

log = logging.getLogger(__name__)


class FlowError(RuntimeError):
    """A pseudo-gradient trajectory left the lattice domain."""


# ---------------------------------------------------------------------------
# bump and pseudo-gradients
# ---------------------------------------------------------------------------

def chi(x, eps0):
    """1 below eps0/5, 0 above eps0/4, C-infinity in between."""
    lo, hi = eps0 / 5, eps0 / 4
    u = (np.asarray(x, dtype=float) - lo) / (hi - lo)
    uc = np.clip(u, 1e-12, 1 - 1e-12)
    a = np.exp(-1.0 / uc)
    b = np.exp(-1.0 / (1 - uc))
    val = b / (a + b)
    return np.where(u <= 0, 1.0, np.where(u >= 1, 0.0, val))


def mismatch_norms(problem: SProblem, x):
    """|eps_q| per slot, shape (..., r)."""
    q, p = problem.unpack(x)
    _, _, _, eq = _pieces(problem.m, problem.H, q, p, problem.alpha.array)
    return np.linalg.norm(eq, axis=-1)


def chi_r(problem: SProblem, x):
    return np.prod(chi(mismatch_norms(problem, x), problem.m.epsilon0), axis=-1)


def pseudo_gradient(problem: SProblem, x, kind="X"):
    """X = (chi_r grad_q S, grad_p S); Y additionally drops the q_0 slot.

    On a fiber problem q_0 is not a coordinate, so both kinds coincide with
    the fiberwise field.
    """
    x = np.asarray(x, dtype=float)
    g = problem.grad(x)
    c = chi_r(problem, x)
    out = g.copy()
    out[..., : problem.nq] *= np.asarray(c)[..., None]
    if kind == "Y" and problem.mode == "closed":
        out[..., : problem.d] = 0.0
    elif kind not in ("X", "Y"):
        raise ValueError("kind must be 'X' or 'Y'")
    return out


class PseudoGradient:
    """Callable field bound to a problem."""

    def __init__(self, problem: SProblem, kind="X"):
        self.problem = problem
        self.kind = kind

    def __call__(self, x):
        return pseudo_gradient(self.problem, x, self.kind)

    def rate(self, x):
        """The derivative of S along the field, field . grad S."""
        return np.sum(self(x) * self.problem.grad(x), axis=-1)


@dataclass
class Trajectory:
    times: np.ndarray
    points: np.ndarray
    values: np.ndarray
    max_rate: float
    min_gap_margin: float


def p_norms(problem: SProblem, x):
    _, p = problem.unpack(x)
    return np.linalg.norm(p, axis=-1)


def flow(problem: SProblem, x0, field, T, step, sign=-1.0, check=True, keep=50):
    """RK4 trajectory of ``sign * field`` for time T.

    Records the largest per-step rate of change of any |p_j| and aborts
    when adjacent base points reach epsilon0.
    """
    x = np.array(x0, dtype=float)
    n = max(1, int(np.ceil(T / step)))
    h = T / n
    eps0 = problem.m.epsilon0
    f = lambda y: sign * field(y)
    pts, vals, times = [x.copy()], [float(problem.value(x))], [0.0]
    max_rate = 0.0
    margin = np.inf
    every = max(1, n // keep)
    for i in range(n):
        k1 = f(x)
        k2 = f(x + h / 2 * k1)
        k3 = f(x + h / 2 * k2)
        k4 = f(x + h * k3)
        xn = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        rate = float(np.max(np.abs(p_norms(problem, xn) - p_norms(problem, x)))) / h
        max_rate = max(max_rate, rate)
        gaps = problem.gaps(xn)
        margin = min(margin, float(eps0 - np.max(gaps)))
        if check and margin <= 0:
            raise FlowError(f"lattice invariant broken at t={h * (i + 1):.4g}: "
                            f"gap {np.max(gaps):.4g} >= epsilon0 {eps0:.4g}")
        x = xn
        if (i + 1) % every == 0 or i == n - 1:
            pts.append(x.copy())
            vals.append(float(problem.value(x)))
            times.append(h * (i + 1))
    return Trajectory(np.array(times), np.array(pts), np.array(vals), max_rate, margin)


# ---------------------------------------------------------------------------
# critical points
# ---------------------------------------------------------------------------

@dataclass
class CriticalPoint:
    point: LatticePoint
    x: np.ndarray
    value: float
    grad_norm: float
    morse_index: int
    nullity: int
    hessian_spectrum: np.ndarray
    orbit: dict
    mode: str
    basepoint: object = None
    ill_conditioned: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def degenerate(self):
        return self.nullity > 0

    @property
    def winding(self):
        return tuple(self.orbit.get("winding", ()))

    def to_dict(self):
        return {"value": self.value, "index": self.morse_index, "nullity": self.nullity,
                "grad_norm": self.grad_norm, "winding": list(self.winding),
                "mode": self.mode,
                "basepoint": None if self.basepoint is None else list(self.basepoint),
                "closure_error": self.orbit.get("closure_error"),
                "action_error": self.orbit.get("action_error"),
                "point": self.point.to_flat().tolist(), **self.meta}


def hessian_signature(problem: SProblem, x, abs_tol=1e-7, rel_tol=1e-14):
    """(index, nullity, spectrum, ill_conditioned) of the FD Hessian.

    An eigenvalue counts as zero below ``abs_tol + rel_tol * spectral radius``.
    """
    ev = np.linalg.eigvalsh(problem.hessian(x))
    rad = float(np.max(np.abs(ev))) if ev.size else 0.0
    tol = abs_tol + rel_tol * rad
    index = int(np.sum(ev < -tol))
    null = int(np.sum(np.abs(ev) <= tol))
    nz = np.abs(ev[np.abs(ev) > tol])
    ill = bool(nz.size and rad / np.min(nz) > 1e12)
    return index, null, ev, ill


def reconstruct_orbit(problem: SProblem, x):
    """Flow z_0 for time 1 and compare with the lattice point.

    Returns closure error (the time-1 endpoint against z_0, or against the
    fiber over q_0), the distance of the re-dissected curve to the lattice
    point, action and winding.
    """
    H, m = problem.H, problem.m
    q, p = problem.unpack(x)
    q0, p0 = q[0], p[0]
    Q1, P1, A1 = H.flow(q0, p0, 1.0)
    disp = Q1 - q0
    gap_q = float(np.linalg.norm(m.wrap(disp)))
    closure = gap_q if problem.mode == "fiber" else gap_q + float(np.linalg.norm(P1 - p0))
    winding = np.round((disp - m.wrap(disp)) / m.period_array).astype(int)
    zz = dissect(H, q0, p0, problem.alpha, check=False)
    redis = zz.distance(problem.point(x), m)
    val = float(problem.value(x))
    return {"q0": q0.tolist(), "p0": p0.tolist(), "closure_error": closure,
            "redissection_error": float(redis), "action": float(A1),
            "action_error": abs(val - float(A1)), "winding": winding.tolist()}


def rk4_crosscheck(H: Hamiltonian, cps, steps=2000):
    """Integrate every orbit with RK4 in one batch; store the deviation in ``orbit``."""
    if not cps:
        return 0.0
    q0 = np.array([c.orbit["q0"] for c in cps])
    p0 = np.array([c.orbit["p0"] for c in cps])
    Q1, P1, A1 = H.flow(q0, p0, np.ones(len(cps)))
    Qr, Pr, Ar = H.rk4(q0, p0, np.ones(len(cps)), steps)
    err = (np.linalg.norm(Qr - Q1, axis=-1) + np.linalg.norm(Pr - P1, axis=-1)
           + np.abs(Ar - A1))
    for c, e in zip(cps, err):
        c.orbit["rk4_error"] = float(e)
    return float(np.max(err))


def newton(problem: SProblem, x, tol=1e-9, maxit=40):
    """Newton on the gradient with least-squares steps (handles degenerate Hessians)."""
    x = np.array(x, dtype=float)
    g = problem.grad(x)
    gn = float(np.linalg.norm(g))
    for _ in range(maxit):
        if gn < tol:
            break
        Hs = problem.hessian(x)
        dx = np.linalg.lstsq(Hs, -g, rcond=1e-12)[0]
        lam = 1.0
        while lam > 1e-4:
            xn = x + lam * dx
            gnew = problem.grad(xn)
            if np.linalg.norm(gnew) < gn or lam < 2e-4:
                break
            lam /= 2
        x, g = xn, gnew
        gn = float(np.linalg.norm(g))
    return x, gn


def _polish(problem: SProblem, x0, coarse_tol=1e-3):
    res = least_squares(problem.grad, x0, jac=problem.hessian, method="trf",
                        xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=200)
    return res.x


def find_critical(problem: SProblem, seeds, tol=1e-9, merge_tol=1e-6, verify=True,
                  closure_tol=1e-6, rk4_steps=2000):
    """Converge seeds to critical points of the packed problem.

    Least squares on the gradient brings a seed close, Newton polishes to
    ``tol``.  Seeds that fail to converge, leave the lattice domain or fail
    orbit reconstruction are dropped (logged).  Output is sorted by value.
    """
    found = []
    stats = {"seeds": 0, "converged": 0, "out_of_domain": 0, "no_convergence": 0,
             "reconstruction_failed": 0}
    eps0 = problem.m.epsilon0
    for s in seeds:
        stats["seeds"] += 1
        x = np.asarray(s, dtype=float)
        if np.linalg.norm(problem.grad(x)) > 1e-6:
            x = _polish(problem, x)
        x, gn = newton(problem, x, tol)
        if not np.isfinite(gn) or gn >= tol:
            stats["no_convergence"] += 1
            log.debug("seed did not converge: |grad| = %.3g", gn)
            continue
        if np.max(problem.gaps(x)) >= eps0:
            stats["out_of_domain"] += 1
            continue
        z = problem.point(x)
        if any(z.distance(c.point, problem.m) < merge_tol for c in found):
            stats["converged"] += 1
            continue
        idx, null, ev, ill = hessian_signature(problem, x)
        orbit = reconstruct_orbit(problem, x) if verify else {}
        if verify and (orbit["closure_error"] > closure_tol
                       or orbit["action_error"] > closure_tol
                       or orbit["redissection_error"] > closure_tol):
            stats["reconstruction_failed"] += 1
            log.warning("orbit reconstruction failed: %s", orbit)
        stats["converged"] += 1
        found.append(CriticalPoint(
            point=z, x=x, value=float(problem.value(x)), grad_norm=gn, morse_index=idx,
            nullity=null, hessian_spectrum=ev, orbit=orbit, mode=problem.mode,
            basepoint=None if problem.basepoint is None else tuple(problem.basepoint),
            ill_conditioned=ill))
    found.sort(key=lambda c: (c.value, tuple(c.point.to_flat())))
    if verify and rk4_steps:
        rk4_crosscheck(problem.H, found, rk4_steps)
    find_critical.last_stats = stats
    return found


def cluster_families(cps, value_tol=1e-6):
    """Group degenerate critical points by (value, index, nullity, winding)."""
    groups = {}
    for c in cps:
        key = (round(c.value / value_tol) if c.degenerate else id(c), c.morse_index,
               c.nullity, c.winding)
        groups.setdefault(key, []).append(c)
    return [{"representative": g[0], "size": len(g)} for g in groups.values()]


# ---------------------------------------------------------------------------
# seeds
# ---------------------------------------------------------------------------

def _winding_vectors(m, kmax):
    d = m.dim
    ks = np.stack(np.meshgrid(*[np.arange(-kmax, kmax + 1)] * d, indexing="ij"),
                  axis=-1).reshape(-1, d)
    return ks


def orbit_candidates(H: Hamiltonian, q0, kmax=12, zone_points=3):
    """Initial points (q0, p0) of time-1 orbits returning to the fiber over q0.

    Radial root finds on the profile: for a winding vector k the orbit moves
    by ``k * periods`` so the slope of the radial profile must equal its
    length.  For ``lam * H`` the time-1 orbits are the time-lam orbits of H,
    so the slope condition is divided by lam.
    """
    m = H.manifold
    q0 = np.atleast_1d(np.asarray(q0, dtype=float))
    lam = 1.0
    while isinstance(H, ScaledHamiltonian):
        lam *= H.lam
        H = H.base
    out = []
    if isinstance(H, AssembledHamiltonian):
        rho = H.L.rho
        base = H.L.dg(q0)
        fam, s = H.fam, H.s
        grid = np.concatenate([np.geomspace(1e-9, 1e-2, 300),
                               np.linspace(1e-2, 1.0, 6001)[1:]])
        d1 = lambda t: fam(s, t, 1)
        for k in _winding_vectors(m, kmax):
            disp = k * m.period_array
            L = float(np.linalg.norm(disp))
            if L == 0:
                out.append((q0, base.copy(), k))
                continue
            u = disp / L
            for t in _slope_roots(d1, rho * L / lam, grid):
                out.append((q0, base + rho * t * u, k))
        # constants in the zone between the embedded disc bundle and D_2/3
        lo = rho + 1e-3
        hi = 2.0 / 3.0 - float(np.linalg.norm(base)) - 1e-3
        if hi > lo and zone_points:
            for rad in np.linspace(lo, hi, zone_points + 2)[1:-1]:
                v = np.zeros(m.dim)
                v[0] = rad
                out.append((q0, base + v, np.zeros(m.dim, dtype=int)))
    elif isinstance(H, RadialHamiltonian):
        ts = np.linspace(1e-6, 5.0, 20001)
        for k in _winding_vectors(m, kmax):
            disp = k * m.period_array
            L = float(np.linalg.norm(disp))
            if L == 0:
                out.append((q0, np.zeros(m.dim), k))
                # constant orbits on critical spheres of the radial profile
                for t in _slope_roots(H.dk, 0.0, ts):
                    for sgn in (1.0, -1.0):
                        e = np.zeros(m.dim)
                        e[0] = sgn * t
                        out.append((q0, e, k))
                continue
            for t in _slope_roots(H.dk, L / lam, ts):
                out.append((q0, t * disp / L, k))
    return out


def representable(problem: SProblem, k):
    """Whether a winding-k orbit fits the lattice (every step below epsilon0)."""
    disp = np.linalg.norm(np.asarray(k) * problem.m.period_array)
    return disp * problem.alpha.length < 0.98 * problem.m.epsilon0


def analytic_seeds(problem: SProblem, kmax=12, jitter=0.0, rng=None, zone_points=3,
                   basepoints=None):
    """Dissections of candidate orbits, optionally jittered."""
    if problem.mode == "fiber":
        bps = [problem.basepoint]
    else:
        bps = basepoints if basepoints is not None else [np.zeros(problem.d)]
    seeds = []
    for q0 in bps:
        for qq, pp, k in orbit_candidates(problem.H, q0, kmax, zone_points):
            if not representable(problem, k):
                continue
            z = dissect(problem.H, qq, pp, problem.alpha, check=False)
            x = problem.pack(z)
            if jitter and rng is not None:
                x = x + jitter * rng.normal(size=x.shape)
            seeds.append(x)
    return seeds


def random_seeds(problem: SProblem, rng, n, pmax=0.6, gap=0.5):
    """Random lattice points with small adjacent gaps (fraction ``gap`` of epsilon0)."""
    m = problem.m
    r, d = problem.r, problem.d
    seeds = []
    for _ in range(n):
        q0 = problem.basepoint if problem.mode == "fiber" else m.random_point(rng)
        steps = rng.uniform(-1, 1, (r, d)) * gap * m.epsilon0 / np.sqrt(d)
        steps -= steps.mean(axis=0)  # closes up with winding 0
        q = q0 + np.concatenate([np.zeros((1, d)), np.cumsum(steps, axis=0)[:-1]])
        p = rng.uniform(-pmax, pmax, (r, d))
        z = LatticePoint(m.reduce(q), p)
        seeds.append(problem.pack(z))
    return seeds


# ---------------------------------------------------------------------------
# family derivatives, space-like paths and transport
# ---------------------------------------------------------------------------

def ds_value(problem_at, s, x, h=1e-4):
    """Central difference in s of S^s at a fixed packed point.

    ``problem_at(s)`` returns the packed problem for parameter s.
    """
    return float((problem_at(s + h).value(x) - problem_at(s - h).value(x)) / (2 * h))


def spacelike_check(path, problem_at, a, crit_at, n=41, tol=1e-9):
    """Sampled space-like test of a path t -> (q(t), s(t)), t in [0, 1].

    ``problem_at(q, s)`` builds the fiber problem and ``crit_at(q, s)`` its
    fiber-critical points.  At every critical point whose value crosses
    ``a`` between samples, the derivative of S along the path (by the
    envelope identity, the derivative of the critical value) must be < 0.
    Returns (ok, margin, crossings) with margin the largest derivative seen.
    """
    ts = np.linspace(0.0, 1.0, n)
    margin = -np.inf
    crossings = []
    prev = None
    for t in ts:
        q, s = path(t)
        cps = crit_at(q, s)
        vals = sorted(c.value for c in cps)
        if prev is not None and len(prev[1]) == len(vals):
            for v0, v1 in zip(prev[1], vals):
                touches = (v0 - a) * (v1 - a) <= 0 and (abs(v0 - a) < tol or abs(v1 - a) < tol
                                                         or (v0 - a) * (v1 - a) < 0)
                if touches:
                    deriv = (v1 - v0) / (t - prev[0])
                    crossings.append({"t": float(t), "derivative": float(deriv)})
                    margin = max(margin, deriv)
        prev = (t, vals)
    ok = all(c["derivative"] < 0 for c in crossings)
    return ok, float(margin), crossings


def cone_derivative(problem_at, q, s, x, dq, dsdt, h=1e-5):
    """Derivative of S along (dq, ds) at a fiber-critical point x over q.

    Computed from the closed-problem gradient in the q_0 slot plus the
    s-derivative; the fiber coordinates are critical so contribute nothing.
    """
    pr = problem_at(q, s)
    qfull, p = pr.unpack(x)
    m = pr.m
    from .lattice import s_grad_exact
    gq, _ = s_grad_exact(m, pr.H, qfull, p, pr.alpha.array)
    base = float(np.dot(gq[0], dq))
    d_s = (problem_at(q, s + h).value(x) - problem_at(q, s - h).value(x)) / (2 * h)
    return base + d_s * dsdt


def certify_c(problem_at, s_lo, s_hi, level_points, c0=1.0, max_doublings=30, h=1e-4):
    """Smallest doubling of c0 such that Z' = d/ds - c Y decreases S on the samples.

    ``level_points`` is a list of (s, x) samples on a window level set.
    Returns (c, worst value of Z'(S), certificate list).
    """
    rows = []
    for s, x in level_points:
        pr = problem_at(s)
        dS = float((problem_at(s + h).value(x) - problem_at(s - h).value(x)) / (2 * h))
        ys = float(PseudoGradient(pr, "Y").rate(x))
        rows.append((dS, ys))
    c = c0
    for _ in range(max_doublings):
        worst = max((dS - c * ys for dS, ys in rows), default=-np.inf)
        if worst < 0:
            return c, worst, rows
        c *= 2
    raise RuntimeError(f"no c certifies Z' after {max_doublings} doublings (worst {worst:.3g})")


def zprime_transport(problem_at, s, s1, xs, c, step=None, a=None):
    """Flow samples with Z' = d/ds - c Y from parameter s to s1.

    Returns the transported points and their values at s1.  Points that
    drop below ``a`` are flagged as exited and must stay exited.
    """
    xs = [np.array(x, dtype=float) for x in xs]
    if s1 == s:
        return xs, [float(problem_at(s).value(x)) for x in xs], [False] * len(xs)
    n = max(4, int(np.ceil(abs(s1 - s) / (step or 0.02))))
    hs = (s1 - s) / n
    sign = 1.0 if s1 > s else -1.0
    exited = [False] * len(xs)
    for i in range(n):
        si = s + i * hs
        pr = problem_at(si)
        fld = PseudoGradient(pr, "Y")
        for k, x in enumerate(xs):
            # RK2 in the s-parametrization; Y moves x, d/ds moves s
            k1 = -c * sign * fld(x)
            pr2 = problem_at(si + hs / 2)
            k2 = -c * sign * PseudoGradient(pr2, "Y")(x + abs(hs) / 2 * k1)
            xs[k] = x + abs(hs) * k2
            if a is not None:
                v = float(problem_at(si + hs).value(xs[k]))
                if exited[k] and v >= a:
                    raise RuntimeError("an exited sample re-entered the window")
                exited[k] = exited[k] or v < a
    vals = [float(problem_at(s1).value(x)) for x in xs]
    return xs, vals, exited


# ---------------------------------------------------------------------------
# quantitative checks (each returns {id, samples, violations, worst_margin})
# ---------------------------------------------------------------------------

def _report(ident, samples, violations, worst, **extra):
    return {"id": ident, "samples": int(samples), "violations": int(violations),
            "worst_margin": float(worst), "pass": violations == 0 and samples > 0, **extra}


def random_lattice_points(m, rng, n, r, gap=0.9, pmax=2.0, q0=None):
    """Batch of points of the lattice domain with every gap below ``gap * epsilon0``.

    Steps are drawn with zero sum (so the loop closes with winding 0) and
    each sample is rescaled to a random fraction of the allowed gap.
    """
    d = m.dim
    base = m.random_point(rng, n) if q0 is None else np.broadcast_to(q0, (n, d))
    steps = rng.normal(size=(n, r, d))
    steps -= steps.mean(axis=1, keepdims=True)
    biggest = np.max(np.linalg.norm(steps, axis=-1), axis=-1)
    target = gap * m.epsilon0 * rng.uniform(0.05, 1.0, n) ** 0.5
    steps *= (target / np.maximum(biggest, 1e-300))[:, None, None]
    q = base[:, None, :] + np.concatenate([np.zeros((n, 1, d)),
                                           np.cumsum(steps, axis=1)[:, :-1]], axis=1)
    p = rng.normal(size=(n, r, d))
    p *= (rng.uniform(0, pmax, (n, r)) / np.linalg.norm(p, axis=-1))[..., None]
    return m.reduce(q), p


def check_gradient_estimates(H: Hamiltonian, r, rng, n=10000, n_cal=2000, spread=0.5,
                             K=None):
    """Both gradient inequalities on admissible random samples.

    K is calibrated once (1.1 x the largest observed ratio) on an
    independent sample, then frozen and verified on a fresh one.
    """
    from .lattice import precondition, s_grad_exact
    m = H.manifold

    def sample(k):
        out = []
        # admissible subdivisions by rejection
        tries = 0
        while len(out) < k:
            al = Subdivision.random(rng, r, spread)
            tries += 1
            if precondition(H, al)[0]:
                out.append(al.array)
            elif tries > 50 * k:
                raise ValueError("random subdivisions are almost never admissible; raise r")
        al = np.array(out)
        q, p = random_lattice_points(m, rng, k, r)
        return q, p, al

    def parts(q, p, al):
        Q, Pm, A, eq = _pieces(m, H, q, p, al)
        gq, gp = s_grad_exact(m, H, q, p, al)
        eps_p = p - np.roll(Pm, 1, axis=-2)
        e_next = np.linalg.norm(eq, axis=-1)           # |eps_q[j+1]|
        e_here = np.roll(e_next, 1, axis=-1)            # |eps_q[j]|
        lhs1 = np.linalg.norm(gp - eq, axis=-1)
        lhs2 = np.linalg.norm(gq + eps_p, axis=-1)
        P = np.max(np.linalg.norm(p, axis=-1), axis=-1)[:, None]
        return lhs1, e_next, lhs2, np.maximum(1, P) * (e_here + e_next)

    if K is None:
        # sup of |dP_j/dq_j| bounds the ratio for every mismatch direction
        q, p, al = sample(n_cal)
        dPdq, _ = H.flow_jacobian(q, p, al)
        K = 1.1 * float(np.max(np.linalg.norm(dPdq, ord=2, axis=(-2, -1))))
    q, p, al = sample(n)
    lhs1, e1, lhs2, rhs2 = parts(q, p, al)
    v1 = lhs1 - 0.25 * e1
    v2 = lhs2 - K * rhs2
    viol = int(np.sum(np.any(v1 > 1e-12, axis=-1) | np.any(v2 > 1e-12, axis=-1)))
    worst = float(max(np.max(v1), np.max(v2)))
    return _report("lemma-2.3", n, viol, worst, K=K,
                   ratio_p=float(np.max(lhs1 / np.maximum(e1, 1e-300))))


def check_flow_rate(problem: SProblem, rng, n=12, T=10.0, step=0.05, start_gap=0.7):
    """Per-step |d|p_j|/dt| along +-X and +-Y flows stays below 5 epsilon0 / 4."""
    m = problem.m
    bound = 1.25 * m.epsilon0 + 1e-6
    worst = -np.inf
    viol = 0
    runs = 0
    q, p = random_lattice_points(m, rng, n, problem.r, gap=start_gap, pmax=2.0,
                                 q0=problem.basepoint if problem.mode == "fiber" else None)
    for i in range(n):
        x0 = problem.pack(LatticePoint(q[i], p[i]))
        for kind in ("X", "Y"):
            for sign in (1.0, -1.0):
                runs += 1
                try:
                    tr = flow(problem, x0, PseudoGradient(problem, kind), T, step, sign)
                except FlowError:
                    viol += 1
                    continue
                worst = max(worst, tr.max_rate - bound)
                viol += int(tr.max_rate > bound)
    return _report("lemma-3.4", runs, viol, worst, bound=bound)


def check_gradient_lower_bound(problem: SProblem, rng, n=10000):
    """Y(S) > 0 off the compact set {all gaps <= epsilon0/2 and P <= 2}.

    Returns the sampled lower bound as ``eps_lower``.
    """
    m = problem.m
    r = problem.r
    half = n // 2
    # some gap above epsilon0/2
    q1, p1 = random_lattice_points(m, rng, half, r, gap=0.95, pmax=3.0)
    # large momenta with small gaps
    q2, p2 = random_lattice_points(m, rng, n - half, r, gap=0.5, pmax=1.0)
    p2 = p2 + (2.0 + rng.exponential(2.0, (n - half, 1, 1))) * _unit(rng, (n - half, 1, m.dim))
    q = np.concatenate([q1, q2])
    p = np.concatenate([p1, p2])
    gaps = np.linalg.norm(m.wrap(np.roll(q, -1, axis=1) - q), axis=-1)
    P = np.max(np.linalg.norm(p, axis=-1), axis=-1)
    outside = (np.max(gaps, axis=-1) > m.epsilon0 / 2) | (P > 2)
    xs = np.array([problem.pack(LatticePoint(q[i], p[i])) for i in np.flatnonzero(outside)])
    Y = PseudoGradient(problem, "Y")
    X = PseudoGradient(problem, "X")
    ys = Y.rate(xs)
    xr = X.rate(xs)
    viol = int(np.sum(ys <= 0)) + int(np.sum(xr < ys - 1e-9 * np.abs(ys)))
    return _report("lemma-3.5", len(xs), viol, float(-np.min(ys)),
                   eps_lower=float(np.min(ys)))


def _unit(rng, shape):
    v = rng.normal(size=shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def check_momentum(H: Hamiltonian, alpha: Subdivision, rng, n=10000):
    """min_j |p_j| >= P/2 whenever P >= 2 and sum_{j != 0} |eps_p[j]| <= P/2."""
    m = H.manifold
    r = alpha.r
    q, _ = random_lattice_points(m, rng, n, r, gap=0.5)
    d = m.dim
    p = np.zeros((n, r, d))
    p[:, 0] = _unit(rng, (n, d)) * rng.uniform(1.0, 6.0, (n, 1))
    budget = rng.uniform(0, 0.8, (n, 1))
    for j in range(1, r):
        _, Pm, _ = H.flow(q[:, j - 1], p[:, j - 1], np.full(n, alpha.weights[j - 1]))
        kick = _unit(rng, (n, d)) * (budget * np.linalg.norm(p[:, 0], axis=-1,
                                                             keepdims=True)
                                     * rng.uniform(0, 1, (n, 1)) / r)
        p[:, j] = Pm + kick
    Q, Pm, _, _ = _pieces(m, H, q, p, alpha.array)
    eps_p = p - np.roll(Pm, 1, axis=1)
    P = np.max(np.linalg.norm(p, axis=-1), axis=-1)
    s_eps = np.sum(np.linalg.norm(eps_p[:, 1:], axis=-1), axis=-1)
    hyp = (P >= 2) & (s_eps <= P / 2)
    mins = np.min(np.linalg.norm(p, axis=-1), axis=-1)
    margin = (mins - P / 2)[hyp]
    viol = int(np.sum(margin < -1e-12))
    return _report("lemma-3.6", int(hyp.sum()), viol,
                   float(-np.min(margin)) if margin.size else 0.0)


def check_drift(cps, problem_at, s, F_norm, h=1e-4, tol=1e-4):
    """d/ds of S^s at fiber-critical points with value < -|F| equals -1."""
    worst = 0.0
    viol = 0
    k = 0
    for c in cps:
        if c.value >= -F_norm:
            continue
        k += 1
        d = ds_value(problem_at, s, c.x, h)
        worst = max(worst, abs(d + 1))
        viol += int(abs(d + 1) > tol)
    return _report("lemma-6.4", k, viol, worst)


def check_fiber_gradient(cps, closed_problem_for, bound=2.0, tol=1e-6):
    """Full (closed-problem) gradient norm at fiber-critical points is at most 2."""
    worst = -np.inf
    viol = 0
    eps_p0 = []
    for c in cps:
        pr = closed_problem_for(c)
        x = pr.pack(c.point)
        g = float(np.linalg.norm(pr.grad(x)))
        fd = pr.flow_data(x)
        eps_p0.append(float(np.linalg.norm(fd.eps_p[0])))
        worst = max(worst, g - bound)
        viol += int(g > bound + tol)
    return _report("lemma-7.1", len(cps), viol, worst,
                   max_eps_p0=max(eps_p0, default=0.0))


def check_transport_bound(problem_at, s_lo, s_hi, shift, rng, r, n=4000, n_cal=1000,
                          h=1e-4):
    """|d/ds of the normalized S| <= k (P + 1) with k calibrated then frozen.

    ``shift(s)`` is the constant making the asymptotic tangent pass
    through 0; the normalized function is S^s + shift(s).
    """
    pr0 = problem_at(s_lo)
    m = pr0.m

    def ratios(k):
        q, p = random_lattice_points(m, rng, k, r, gap=0.8, pmax=4.0)
        ss = rng.uniform(s_lo + h, s_hi - h, k)
        out = np.empty(k)
        for i in range(k):
            x = np.concatenate([q[i].ravel(), p[i].ravel()])
            dp = problem_at(ss[i] + h).value(x) + shift(ss[i] + h)
            dm = problem_at(ss[i] - h).value(x) + shift(ss[i] - h)
            P = np.max(np.linalg.norm(p[i], axis=-1))
            out[i] = abs(dp - dm) / (2 * h) / (P + 1)
        return out

    kk = 1.1 * float(np.max(ratios(n_cal)))
    rr = ratios(n)
    viol = int(np.sum(rr > kk))
    return _report("lemma-10.5", n, viol, float(np.max(rr) - kk), k=kk)

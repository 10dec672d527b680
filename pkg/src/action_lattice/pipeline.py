"""Assembling a full instance: bounds, jump points, windows and products.

An instance fixes an embedding, a capped family and an asymptotic piece,
the window bounds ``a < b`` and the jump points ``s_r`` at which the lattice
size steps from ``r`` to ``r + 1``.  Products concatenate two lattice
points over the same base point into a point of the doubled lattice, read
with the Hamiltonian ``2 H`` and the doubled subdivision.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field as dc_field

import numpy as np

from .dynamics import (analytic_seeds, check_drift, check_fiber_gradient, check_flow_rate,
                       check_gradient_estimates, check_gradient_lower_bound, check_momentum,
                       check_transport_bound, find_critical, hessian_signature,
                       random_lattice_points, random_seeds, reconstruct_orbit)
from .geometry import Manifold
from .hamiltonian import (AsymptoticPiece, CappedFamily, LagrangianEmbedding, Profile,
                          ScaledHamiltonian, action_set, assemble_Hs)
from .lattice import (LatticePoint, SProblem, Subdivision, double, eval_S, flow_data,
                      stabilize, suspend_point)
from .morse import build_window, track, window_homology

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


class ScheduleError(ValueError):
    """Bounds or jump points cannot be made admissible."""


class ProductError(ValueError):
    """A product precondition fails or a value lands where it cannot."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

DEFAULT_CONFIG = {
    "manifold": {"kind": "circle", "length": 10 * np.pi, "epsilon0_fraction": 0.24},
    "profile": {"m": 3, "lam": 1.0},
    "embedding": {"amplitudes": [0.0], "rho": 0.35},
    "asymptotic": {"mu": 1.0, "eps": 0.05},
    "bounds": {"a": -1.01},
    "schedule": {"s_start": 6.0, "growth": 1.1, "r0": 8, "levels": 2},
    "orbits": {"s_values": [6.0, 10.0, 20.0], "r_values": [4, 8], "fiber_basepoints": 8,
               "random_seeds": 4},
    "product": {"kappa": 1.0, "pairs": 1000, "r_values": [2, 4], "s": 6.0},
    "inclusion": {"epsilon": 1.0, "attempts": 5},
    "tolerances": {"newton": 1e-9, "closure": 1e-6, "merge": 1e-6},
    "seed": 0,
}


def _merge(base, extra, path=""):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path}{k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{path}{k} must be a table")
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=None):
    """Defaults merged with a JSON file and an optional dict of overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, data)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def manifold_from(cfg):
    mc = cfg["manifold"]
    kind = mc.get("kind", "circle")
    if kind == "circle":
        length = float(mc["length"])
        return Manifold.circle(length, mc["epsilon0_fraction"] * length)
    if kind == "torus":
        per = tuple(float(x) for x in mc.get("periods", (mc["length"], mc["length"])))
        return Manifold.torus(per, mc["epsilon0_fraction"] * min(per))
    raise ConfigError(f"unsupported manifold kind {kind!r}")


# ---------------------------------------------------------------------------
# the instance
# ---------------------------------------------------------------------------

@dataclass
class InstanceFL:
    """Bounds, jump points and the Hamiltonian family of one instance.

    ``jumps[r]`` is the parameter at which level ``r`` starts; level ``r``
    uses the uniform subdivision of ``r`` intervals.
    """

    embedding: LagrangianEmbedding
    family: CappedFamily
    hinf: AsymptoticPiece
    a: float
    b: float
    jumps: dict
    r0: int
    checks: dict = dc_field(default_factory=dict)

    @property
    def manifold(self):
        return self.embedding.manifold

    @property
    def a_target(self):
        return self.a + self.b

    @property
    def b_target(self):
        return 2 * self.b

    def H(self, s):
        return assemble_Hs(self.embedding, self.family, self.hinf, s)

    def problem(self, r, s, mode="fiber", basepoint=None, alpha=None):
        alpha = Subdivision.uniform(r) if alpha is None else alpha
        return SProblem(self.H(s), alpha, mode, basepoint)

    def target_problem(self, r, s, mode="fiber", basepoint=None):
        """Doubled lattice read with 2 H^s and the doubled subdivision."""
        return SProblem(ScaledHamiltonian(self.H(s), 2.0), double(Subdivision.uniform(r)),
                        mode, basepoint)

    def to_dict(self):
        return {"a": self.a, "b": self.b, "a_target": self.a_target, "b_target": self.b_target,
                "jumps": {str(k): v for k, v in self.jumps.items()}, "r0": self.r0,
                "F_norm": self.embedding.F_norm, "embedding": self.embedding.to_dict(),
                "asymptotic": self.hinf.to_dict(), "checks": self.checks}


def max_winding(instance_or_family, embedding, s):
    """Largest winding whose orbit exists at parameter s (slope below the peak)."""
    fam = instance_or_family
    peak = fam.peak_slope(s)
    k = 0
    while embedding.rho * (k + 1) * float(np.min(embedding.manifold.period_array)) < peak:
        k += 1
    return k


def min_level(embedding, k, margin=0.98):
    """Smallest lattice size whose steps fit a winding-k orbit."""
    m = embedding.manifold
    disp = k * float(np.max(m.period_array))
    return max(1, int(np.floor(disp / (margin * m.epsilon0))) + 1)


def closed_actions(fam, embedding, s, kmax=60):
    """Closed-orbit action values at parameter s (constants included)."""
    return action_set(fam, embedding.geodesic_lengths(kmax), s=s)


def choose_schedule(embedding, fam, hinf, a, s_start=6.0, growth=1.5, r0=8, levels=2,
                    reg_tol=1e-6, max_shift=0.01):
    """Bounds and jump points of an instance.

    Each jump point ``s_start * growth**(r - r0)`` is lowered in steps of
    0.1% (at most ``max_shift``) until ``a`` sits at least ``reg_tol`` away
    from every closed-orbit action.  The lattice size of each level is
    checked against the windings present up to the next jump point.
    """
    F = embedding.F_norm
    b = F + 1.0
    if not a < -2 * F - 1:
        raise ScheduleError(f"a = {a} must be below -2|F| - 1 = {-2 * F - 1}")
    if growth <= 1:
        raise ScheduleError("jump points must increase")
    jumps, reg = {}, {}
    for r in range(r0, r0 + levels + 1):
        s_nom = s_start * growth ** (r - r0)
        for j in range(int(round(max_shift / 1e-3)) + 1):
            s = s_nom * (1 - 1e-3 * j)
            acts = closed_actions(fam, embedding, s)
            dist = min((abs(v - a) for v in acts), default=np.inf)
            if dist > reg_tol:
                break
        else:
            raise ScheduleError(f"no regular jump point within 1% of {s_nom}")
        if s <= 5:
            raise ScheduleError("jump points must exceed 5")
        jumps[r] = float(s)
        reg[r] = {"nominal": s_nom, "distance_to_actions": float(dist)}
    levels_ok = {}
    for r in range(r0, r0 + levels):
        k = max_winding(fam, embedding, jumps[r + 1])
        need = min_level(embedding, k)
        levels_ok[r] = {"max_winding": k, "min_level": need, "ok": r >= need}
    inst = InstanceFL(embedding, fam, hinf, float(a), float(b), jumps, r0,
                      {"regularity": reg, "levels": levels_ok})
    return inst


def build_instance(cfg):
    m = manifold_from(cfg)
    L = LagrangianEmbedding(m, cfg["embedding"]["amplitudes"], cfg["embedding"]["rho"])
    fam = CappedFamily(Profile(cfg["profile"]["m"], cfg["profile"]["lam"]), L.min_length)
    hinf = AsymptoticPiece(cfg["asymptotic"]["mu"], cfg["asymptotic"]["eps"], m.epsilon0 / 5)
    sc = cfg["schedule"]
    return choose_schedule(L, fam, hinf, cfg["bounds"]["a"], sc["s_start"], sc["growth"],
                           sc["r0"], sc["levels"])


# ---------------------------------------------------------------------------
# concatenation products
# ---------------------------------------------------------------------------

def concat(z1: LatticePoint, z2: LatticePoint, m: Manifold, tol=1e-12):
    """Concatenate two lattice points over the same base point."""
    if z1.r != z2.r:
        raise ProductError("points must have the same lattice size")
    if m.dist(z1.q[0], z2.q[0]) > tol:
        raise ProductError("base points differ")
    return LatticePoint(np.vstack([z1.q, z2.q]), np.vstack([z1.p, z2.p]))


def doubled(H, alpha):
    """Hamiltonian and subdivision that read a concatenated point."""
    return ScaledHamiltonian(H, 2.0), double(alpha)


@dataclass
class ProductPoint:
    """Off-diagonal product: two points, the correction covector and the result."""

    pair: tuple
    p: np.ndarray
    p_diag: np.ndarray
    kappa: float
    point: LatticePoint

    def to_dict(self):
        return {"p": self.p.tolist(), "p_diag": self.p_diag.tolist(), "kappa": self.kappa,
                "point": json.loads(self.point.to_json())}


def _assemble_plus(z1, z2, p):
    q2 = z2.q[0]
    return LatticePoint(np.vstack([z1.q, z2.q, q2[None, :]]),
                        np.vstack([z1.p, z2.p, np.atleast_1d(p)[None, :]]))


def plus_difference(z1, z2, p, H, alpha):
    """``S~_{2r+1}(z1, z2, (q_0^2, p)) - S_r(z1) - S_r(z2)``."""
    H2, a2 = doubled(H, alpha)
    big = eval_S(_assemble_plus(z1, z2, p), stabilize(a2), H2)
    return big - eval_S(z1, alpha, H) - eval_S(z2, alpha, H)


def diagonal_momentum(z1, z2, H, alpha, h=1e-5, iters=4):
    """The covector making the diagonal gradient of the difference vanish.

    ``z1`` is moved onto the base point of ``z2``; the derivative of the
    difference in the direction of its base point is affine in ``p`` and is
    zeroed one coordinate at a time by secant steps.
    """
    m = H.manifold
    d = z1.dim
    q2 = z2.q[0]
    base = LatticePoint(np.vstack([q2[None, :], z1.q[1:]]), z1.p)

    def g(p, i):
        e = np.zeros(d)
        e[i] = h
        up = LatticePoint(np.vstack([m.reduce(q2 + e)[None, :], z1.q[1:]]), z1.p)
        dn = LatticePoint(np.vstack([m.reduce(q2 - e)[None, :], z1.q[1:]]), z1.p)
        return (plus_difference(up, z2, p, H, alpha)
                - plus_difference(dn, z2, p, H, alpha)) / (2 * h)

    p = np.zeros(d)
    for i in range(d):
        x0, x1 = 0.0, 1.0
        p0 = p.copy()
        p1 = p.copy()
        p0[i], p1[i] = x0, x1
        g0, g1 = g(p0, i), g(p1, i)
        for _ in range(iters):
            if g1 == g0:
                break
            x2 = x1 - g1 * (x1 - x0) / (g1 - g0)
            x0, g0 = x1, g1
            x1 = x2
            p1 = p.copy()
            p1[i] = x1
            g1 = g(p1, i)
            if abs(g1) < 1e-12:
                break
        p[i] = x1
    del base
    return p


def concat_plus(z1, z2, H, alpha, kappa=1.0, beta=None):
    """Product of two points over nearby base points.

    The extra slot ``(q_0^2, p)`` uses ``p = p_diag - kappa log_{q_0^2}(q_0^1)``
    so the difference to ``S(z1) + S(z2)`` is nonpositive and vanishes
    exactly on the diagonal.
    """
    m = H.manifold
    dist = float(m.dist(z1.q[0], z2.q[0]))
    if beta is not None and dist > beta + 1e-12:
        raise ProductError(f"base points {dist:.4g} apart exceed beta = {beta:.4g}")
    p_diag = diagonal_momentum(z1, z2, H, alpha)
    v = m.log(z2.q[0], z1.q[0])
    p = p_diag - kappa * v
    return ProductPoint((z1, z2), p, p_diag, kappa, _assemble_plus(z1, z2, p))


def _random_pairs(m, rng, n, r, gap, pmax, beta=0.0):
    """Pairs of lattice points whose base points are at most beta apart."""
    q1, p1 = random_lattice_points(m, rng, n, r, gap=gap, pmax=pmax)
    out = []
    for i in range(n):
        u = np.atleast_1d(m.random_tangent(rng, q1[i, 0], 1.0))
        u = u / max(np.linalg.norm(u), 1e-300) * beta * rng.uniform(0, 1)
        q2, p2 = random_lattice_points(m, rng, 1, r, gap=gap, pmax=pmax,
                                       q0=m.reduce(q1[i, 0] + u))
        out.append((LatticePoint(q1[i], p1[i]), LatticePoint(q2[0], p2[0])))
    return out


def check_additivity(H, r, rng, n=1000, gap=0.45, pmax=1.5, tol=1e-12):
    """Concatenation is exactly additive on random pairs over a shared base point."""
    m = H.manifold
    alpha = Subdivision.uniform(r)
    H2, a2 = doubled(H, alpha)
    worst, bad = 0.0, 0
    for z1, z2 in _random_pairs(m, rng, n, r, gap, pmax):
        err = abs(eval_S(concat(z1, z2, m), a2, H2) - eval_S(z1, alpha, H) - eval_S(z2, alpha, H))
        worst = max(worst, err)
        bad += err > tol
    return {"id": "additivity", "r": r, "samples": n, "violations": int(bad),
            "worst_margin": float(tol - worst), "worst": float(worst), "ok": bad == 0}


def transverse_hessian(z1, z2, H, alpha, kappa, h=1e-3):
    """Hessian of the difference along anti-diagonal moves of the two base points."""
    m = H.manifold
    d = z1.dim
    c = z1.q[0]

    def diff(t):
        q1 = m.reduce(c + t)
        q2 = m.reduce(c - t)
        a = LatticePoint(np.vstack([q1[None, :], z1.q[1:]]), z1.p)
        b = LatticePoint(np.vstack([q2[None, :], z2.q[1:]]), z2.p)
        pp = concat_plus(a, b, H, alpha, kappa)
        return plus_difference(a, b, pp.p, H, alpha)

    f0 = diff(np.zeros(d))
    hess = np.zeros((d, d))
    eye = np.eye(d) * h
    for i in range(d):
        for j in range(i, d):
            if i == j:
                hess[i, i] = (diff(eye[i]) - 2 * f0 + diff(-eye[i])) / h ** 2
            else:
                hess[i, j] = hess[j, i] = (diff(eye[i] + eye[j]) - diff(eye[i] - eye[j])
                                           - diff(-eye[i] + eye[j]) + diff(-eye[i] - eye[j])) \
                    / (4 * h ** 2)
    # unit anti-diagonal direction (e, -e)/sqrt(2) moves each base point by t/sqrt(2)
    return hess / 2.0


def check_subadditivity(H, r, rng, beta, n=1000, kappa=1.0, gap=0.45, pmax=1.5,
                        n_hessian=20, diag_tol=1e-12, hess_bound=-1e-4):
    """Sign of the product difference off the diagonal, zero on it, curvature across it."""
    m = H.manifold
    alpha = Subdivision.uniform(r)
    worst_off, bad_off = -np.inf, 0
    for z1, z2 in _random_pairs(m, rng, n, r, gap, pmax, beta):
        pp = concat_plus(z1, z2, H, alpha, kappa, beta)
        dv = plus_difference(z1, z2, pp.p, H, alpha)
        worst_off = max(worst_off, dv)
        bad_off += dv > 0
    worst_diag, worst_eig = 0.0, -np.inf
    pairs = _random_pairs(m, rng, n_hessian, r, gap, pmax)
    for z1, z2 in pairs:
        z2d = LatticePoint(np.vstack([z1.q[:1], z2.q[1:] - z2.q[:1] + z1.q[:1]]), z2.p)
        z2d = z2d.reduced(m)
        pp = concat_plus(z1, z2d, H, alpha, kappa)
        worst_diag = max(worst_diag, abs(plus_difference(z1, z2d, pp.p, H, alpha)))
        ev = np.linalg.eigvalsh(transverse_hessian(z1, z2d, H, alpha, kappa))
        worst_eig = max(worst_eig, float(ev.max()))
    ok = bad_off == 0 and worst_diag <= diag_tol and worst_eig <= hess_bound
    return {"id": "subadditivity", "r": r, "samples": n, "violations": int(bad_off),
            "worst_off_diagonal": float(worst_off), "worst_diagonal": float(worst_diag),
            "max_transverse_eigenvalue": float(worst_eig), "kappa": kappa, "beta": beta,
            "worst_margin": float(min(-worst_off, diag_tol - worst_diag, hess_bound - worst_eig)),
            "ok": bool(ok)}


def find_beta(points, m: Manifold, lo=0.0, hi=None, iters=40):
    """Largest base-point separation keeping every product slot in the lattice domain.

    Bisection on the worst case: the extra gaps of the product are the
    point's own closing gaps plus the separation.
    """
    hi = m.epsilon0 if hi is None else hi
    gaps = [float(np.max(z.gaps(m))) for z in points] or [0.0]
    closing = [float(m.dist(z.q[-1], z.q[0])) for z in points] or [0.0]

    def fits(beta):
        return max(closing) + beta < m.epsilon0 and max(gaps) < m.epsilon0 and beta < m.epsilon0

    if not fits(lo):
        raise ProductError("window points do not fit the lattice domain")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if fits(mid) else (lo, mid)
    return lo


# ---------------------------------------------------------------------------
# windows and the generator-level product
# ---------------------------------------------------------------------------

def fiber_window(inst: InstanceFL, r, s, basepoint, a=None, b=None, problem=None, **kw):
    pr = problem or inst.problem(r, s, "fiber", basepoint)
    cps = find_critical(pr, analytic_seeds(pr), **kw)
    a = inst.a if a is None else a
    b = inst.b if b is None else b
    return build_window(pr, a, b, cps), cps


def product_on_windows(inst: InstanceFL, r, s, basepoint, kappa=1.0, value_tol=1e-9,
                       grad_tol=1e-8):
    """Pair the fiber-window generators over one base point.

    Each pair is concatenated and checked to be a critical point of the
    doubled problem whose value is the sum of the two values and whose
    winding is the sum of the windings; it is matched to a generator of the
    target window found independently.  Pairs over base points ``beta``
    apart are sent through the correction slot and must land below the
    target lower bound.
    """
    m = inst.manifold
    q = np.atleast_1d(np.asarray(basepoint, dtype=float))
    win, _ = fiber_window(inst, r, s, q)
    H = inst.H(s)
    alpha = Subdivision.uniform(r)
    tgt = inst.target_problem(r, s, "fiber", q)
    tcps = find_critical(tgt, analytic_seeds(tgt))
    twin = build_window(tgt, inst.a_target, inst.b_target, tcps)
    rows = []
    for i, x in enumerate(win.generators):
        for j, y in enumerate(win.generators):
            z = concat(x.point, y.point, m)
            xv = tgt.pack(z)
            val = float(tgt.value(xv))
            gn = float(np.linalg.norm(tgt.grad(xv)))
            # both halves are dissections, so the only mismatch is the momentum
            # jump at the junction, and it is the whole gradient
            jump = float(np.linalg.norm(flow_data(z, tgt.alpha, tgt.H).eps_p[r]))
            critical = jump <= grad_tol
            expect = [int(u + v) for u, v in zip(x.winding, y.winding)]
            row = {"left": i, "right": j, "value": val, "sum": x.value + y.value,
                   "value_error": abs(val - x.value - y.value), "grad": gn,
                   "junction_jump": jump, "critical": bool(critical),
                   "winding_sum": expect, "in_target_window": bool(val > inst.a_target)}
            ok = row["value_error"] <= value_tol and abs(gn - jump) <= 1e-6 * max(1.0, jump)
            if critical:
                orb = reconstruct_orbit(tgt, xv)
                wind = [int(w) for w in np.asarray(orb["winding"]).ravel()]
                dists = [z.distance(c.point, m) for c in twin.generators]
                k = int(np.argmin(dists)) if dists else None
                match = k if k is not None and dists[k] < 1e-6 else None
                row.update(winding=wind, target=match)
                ok = ok and gn <= grad_tol and wind == expect and \
                    (match is not None or not row["in_target_window"])
            row["ok"] = bool(ok)
            rows.append(row)
    # the collar: pairs over base points beta apart
    beta = find_beta([g.point for g in win.generators], m)
    if not inst.hinf.eps < beta / 2:
        raise ProductError(f"asymptotic eps = {inst.hinf.eps} must be below beta/2 = {beta / 2:.4g}")
    q2 = m.reduce(q + beta / np.sqrt(q.size))
    win2, _ = fiber_window(inst, r, s, q2)
    collar = []
    kap = kappa
    for _ in range(30):
        collar = []
        for x in win.generators:
            for y in win2.generators:
                pp = concat_plus(x.point, y.point, H, alpha, kap, beta)
                H2, a2 = doubled(H, alpha)
                val = eval_S(pp.point, stabilize(a2), H2)
                collar.append({"value": val, "sum": x.value + y.value})
        if all(c["value"] < inst.a_target for c in collar):
            break
        kap *= 2
    else:
        raise ProductError("collar values stay above the target lower bound")
    return {"r": r, "s": s, "basepoint": q.tolist(), "generators": len(win.generators),
            "target_generators": len(twin.generators), "pairs": rows, "beta": beta,
            "kappa": kap, "collar_max": max((c["value"] for c in collar), default=None),
            "a_target": inst.a_target, "b_target": inst.b_target,
            "ok": all(rw["ok"] for rw in rows)}


# ---------------------------------------------------------------------------
# inclusion of the constants
# ---------------------------------------------------------------------------

def _alpha_path(a0, a1):
    a0, a1 = np.asarray(a0), np.asarray(a1)

    def at(t):
        w = (1 - t) * a0 + t * a1
        w[-1] = 1.0 - w[:-1].sum()
        return Subdivision(tuple(w))

    return at


def inclusion_constants(inst: InstanceFL, r, s_target, basepoint, eps=1.0, attempts=5):
    """Follow the constant loops on L from a small parameter to a window.

    At parameter ``eps`` the one-point closed function has L as critical
    set with value 0 and negative transverse Hessian, and the outer
    constants sit at ``-eps``; eps is halved until this holds.  The point of
    L over ``basepoint`` is then suspended up to lattice size ``r``, moved to
    the uniform subdivision and continued in the parameter up to
    ``s_target``, recording the Morse index at every stage.
    """
    L = inst.embedding
    q = np.atleast_1d(np.asarray(basepoint, dtype=float))
    d = q.size
    tries = []
    for _ in range(attempts):
        H = inst.H(eps)
        pr = SProblem(H, Subdivision.uniform(1))
        pL = L.dg(q)
        x = np.concatenate([q, pL])
        hess = pr.hessian(x)
        tang = np.vstack([np.eye(d), L.hess_g(q).reshape(d, d)])
        basis, _ = np.linalg.qr(tang, mode="complete")
        normal = basis[:, d:]
        trans = normal.T @ hess @ normal
        top = float(np.linalg.eigvalsh(trans).max())
        zone = pL + np.eye(d)[0] * 0.5 * (L.rho + 2.0 / 3.0 - np.linalg.norm(pL))
        val_L = float(pr.value(x))
        val_zone = float(pr.value(np.concatenate([q, zone])))
        tries.append({"eps": eps, "max_transverse_eigenvalue": top, "value_L": val_L,
                      "value_outer": val_zone})
        if top < 0:
            break
        eps /= 2
    else:
        raise ScheduleError("transverse Hessian at L is not negative definite")
    stages = []
    z = LatticePoint(q[None, :], L.dg(q)[None, :])
    alpha = Subdivision.uniform(1)
    pf = SProblem(H, alpha, "fiber", q)
    idx, nul = hessian_signature(pf, pf.pack(z))[:2]
    stages.append({"stage": "level-1", "index": idx, "nullity": nul})
    for _ in range(r - 1):
        z = suspend_point(z, z.p[0])
        alpha = stabilize(alpha)
    pf = SProblem(H, alpha, "fiber", q)
    x = pf.pack(z)
    idx, nul = hessian_signature(pf, x)[:2]
    stages.append({"stage": "suspended", "index": idx, "nullity": nul,
                   "expected_index": stages[0]["index"] + (r - 1) * d})
    path = _alpha_path(alpha.array, Subdivision.uniform(r).array)
    x = track(lambda t: SProblem(H, path(t), "fiber", q), x, 0.0, 1.0, 20)
    pf = SProblem(H, Subdivision.uniform(r), "fiber", q)
    idx, nul = hessian_signature(pf, x)[:2]
    stages.append({"stage": "uniform", "index": idx, "nullity": nul})
    x = track(lambda s: inst.problem(r, s, "fiber", q), x, eps, s_target, 60)
    pf = inst.problem(r, s_target, "fiber", q)
    idx, nul = hessian_signature(pf, x)[:2]
    val = float(pf.value(x))
    stages.append({"stage": "continued", "index": idx, "nullity": nul, "value": val,
                   "in_window": bool(inst.a < val <= inst.b)})
    win, _ = fiber_window(inst, r, s_target, q)
    zc = pf.point(x)
    hit = [k for k, g in enumerate(win.generators)
           if zc.distance(g.point, inst.manifold) < 1e-6]
    indices = {st["index"] for st in stages[1:]}
    ok = (tries[-1]["max_transverse_eigenvalue"] < 0 and abs(tries[-1]["value_L"]) < 1e-9
          and abs(tries[-1]["value_outer"] + tries[-1]["eps"]) < 1e-9
          and stages[1]["index"] == stages[1]["expected_index"] and len(indices) == 1
          and stages[-1]["in_window"] and bool(hit))
    return {"eps": eps, "attempts": tries, "stages": stages, "window_generator": hit,
            "index_shift": stages[1]["index"] - stages[0]["index"], "ok": bool(ok)}


# ---------------------------------------------------------------------------
# continuation across a jump
# ---------------------------------------------------------------------------

def _jump_map(inst, r, s_lo, s_jump, s_hi, q, gens, steps=20):
    """Continue at size r to ``s_jump``, suspend, move the subdivision, continue to ``s_hi``."""
    out = []
    for g in gens:
        x = track(lambda s: inst.problem(r, s, "fiber", q), g.x, s_lo, s_jump, steps) \
            if s_jump != s_lo else g.x
        z = inst.problem(r, s_jump, "fiber", q).point(x)
        z = suspend_point(z, z.p[0])
        H = inst.H(s_jump)
        path = _alpha_path(stabilize(Subdivision.uniform(r)).array,
                           Subdivision.uniform(r + 1).array)
        pr0 = SProblem(H, path(0.0), "fiber", q)
        x = track(lambda t: SProblem(H, path(t), "fiber", q), pr0.pack(z), 0.0, 1.0, steps)
        if s_hi != s_jump:
            x = track(lambda s: inst.problem(r + 1, s, "fiber", q), x, s_jump, s_hi, steps)
        out.append(x)
    return out


def continuation_coherence(inst: InstanceFL, r, basepoint, fractions=(0.25, 0.75),
                           slices=5, match_tol=1e-6):
    """Generator correspondences across one level, for several jump positions.

    Generators of the window at ``(r, s_r)`` are carried to the window at
    ``(r + 1, s_{r+1})`` with the lattice-size jump placed at ``s_{r+1}``
    and at the intermediate positions ``s_r + f (s_{r+1} - s_r)``.  All
    placements must give the same bijection, and window ranks at regular
    slices along both levels must agree (after the degree shift d).
    """
    q = np.atleast_1d(np.asarray(basepoint, dtype=float))
    d = q.size
    s0, s1 = inst.jumps[r], inst.jumps[r + 1]
    w0, _ = fiber_window(inst, r, s0, q)
    w1, _ = fiber_window(inst, r + 1, s1, q)
    gens, targets = w0.generators, w1.generators
    maps = {}
    for label, sj in [("end", s1)] + [(f"{f:g}", s0 + f * (s1 - s0)) for f in fractions]:
        xs = _jump_map(inst, r, s0, sj, s1, q, gens)
        pr1 = inst.problem(r + 1, s1, "fiber", q)
        mp = []
        for x in xs:
            z = pr1.point(x)
            dist = [z.distance(t.point, inst.manifold) for t in targets]
            j = int(np.argmin(dist)) if dist else None
            mp.append(j if j is not None and dist[j] < match_tol else None)
        maps[label] = mp
    bijective = {k: None not in v and sorted(v) == list(range(len(targets)))
                 and len(gens) == len(targets) for k, v in maps.items()}
    same = len({tuple(v) for v in maps.values()}) == 1
    ranks = []
    for lvl, (lo, hi) in ((r, (s0, s1)), (r + 1, (s0, s1))):
        for s in np.linspace(lo, hi, slices):
            try:
                w, _ = fiber_window(inst, lvl, float(s), q)
            except Exception as exc:  # a bound on a critical value: not a regular slice
                ranks.append({"r": lvl, "s": float(s), "regular": False, "error": str(exc)})
                continue
            hom = window_homology(w)
            shift = (lvl - r) * d
            ranks.append({"r": lvl, "s": float(s), "regular": True,
                          "ranks": {str(k - shift): v for k, v in sorted(hom.items())}})
    reg = [tuple(sorted(x["ranks"].items())) for x in ranks if x["regular"]]
    ranks_ok = len(set(reg)) == 1 and bool(reg)
    return {"r": r, "interval": [s0, s1], "generators": len(gens), "targets": len(targets),
            "maps": maps, "bijective": bijective, "independent": same, "slices": ranks,
            "ranks_preserved": ranks_ok,
            "ok": bool(all(bijective.values()) and same and ranks_ok)}


# ---------------------------------------------------------------------------
# verification suites and the report
# ---------------------------------------------------------------------------

def _passed(rep):
    return bool(rep.get("ok", rep.get("pass", False)))


class _Context:
    """Lazily built shared objects of one report run."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.seed = int(cfg["seed"])
        self._inst = {}
        self.spectra = []

    def rng(self, salt):
        return np.random.default_rng([self.seed, salt])

    def instance(self, perturbed=False):
        if perturbed not in self._inst:
            cfg = self.cfg
            if perturbed:
                cfg = _merge(cfg, {"embedding": {"amplitudes": [0.15]},
                                   "bounds": {"a": min(cfg["bounds"]["a"], -1.61)}})
            self._inst[perturbed] = build_instance(cfg)
        return self._inst[perturbed]

    def strict_problem(self):
        """Closed problem in the small-step regime: the q-dependent embedding, H scaled down."""
        inst = self.instance(perturbed=True)
        H = ScaledHamiltonian(inst.H(self.cfg["schedule"]["s_start"]), 1e-3)
        return H, 16


def _spectrum_rows(ctx, s, r, mode, basepoint, cps, pr):
    for c in cps:
        orb = reconstruct_orbit(pr, c.x)
        ctx.spectra.append({"s": s, "r": r, "mode": mode,
                            "basepoint": "" if basepoint is None else float(basepoint[0]),
                            "value": c.value, "index": c.morse_index, "nullity": c.nullity,
                            "winding": " ".join(str(w) for w in c.winding),
                            "action_error": orb["action_error"]})


def suite_orbits(ctx):
    inst = ctx.instance()
    oc = ctx.cfg["orbits"]
    ell = float(np.min(inst.manifold.period_array))
    bases = [np.array([ell * (j + 0.5) / oc["fiber_basepoints"]])
             for j in range(oc["fiber_basepoints"])]
    total, bad, worst_close, worst_act = 0, 0, 0.0, 0.0
    tol = ctx.cfg["tolerances"]["closure"]
    for s in oc["s_values"]:
        for r in oc["r_values"]:
            for mode, bp in [("closed", None)] + [("fiber", q) for q in bases]:
                pr = inst.problem(r, s, mode, bp)
                seeds = analytic_seeds(pr, kmax=max_winding(inst.family, inst.embedding, s) + 1)
                cps = find_critical(pr, seeds, verify=False)
                _spectrum_rows(ctx, s, r, mode, bp, cps, pr)
                for c in cps:
                    orb = reconstruct_orbit(pr, c.x)
                    total += 1
                    worst_close = max(worst_close, orb["closure_error"])
                    worst_act = max(worst_act, orb["action_error"])
                    bad += orb["closure_error"] >= tol or orb["action_error"] >= tol
    return {"id": "orbits", "samples": total, "violations": int(bad),
            "worst_closure": worst_close, "worst_action_error": worst_act,
            "worst_margin": tol - max(worst_close, worst_act),
            "ok": bad == 0 and total >= 200}


def suite_action_set(ctx, tol=1e-5):
    inst = ctx.instance()
    rows = []
    for s in ctx.cfg["orbits"]["s_values"]:
        k = max_winding(inst.family, inst.embedding, s)
        r = max(8, min_level(inst.embedding, k))
        pr = inst.problem(r, s, "closed")
        cps = find_critical(pr, analytic_seeds(pr, kmax=k + 1), verify=False)
        found = []
        for v in sorted(c.value for c in cps if c.value < -tol):
            if not found or v - found[-1] > tol:
                found.append(v)
        expect = [v for v in closed_actions(inst.family, inst.embedding, s) if v < -tol]
        err = max((abs(a - b) for a, b in zip(found, expect)), default=0.0)
        ok = len(found) == len(expect) and err <= tol
        rows.append({"s": s, "r": r, "found": found, "expected": expect, "max_error": err,
                     "ok": ok})
    return {"id": "action-set", "rows": rows, "ok": all(x["ok"] for x in rows)}


def suite_gradient_estimates(ctx):
    H, r = ctx.strict_problem()
    return check_gradient_estimates(H, r, ctx.rng(23))


def suite_flow_rate(ctx):
    H, r = ctx.strict_problem()
    return check_flow_rate(SProblem(H, Subdivision.uniform(r)), ctx.rng(34))


def suite_gradient_lower_bound(ctx):
    H, r = ctx.strict_problem()
    return check_gradient_lower_bound(SProblem(H, Subdivision.uniform(r)), ctx.rng(35))


def suite_momentum(ctx):
    H, r = ctx.strict_problem()
    return check_momentum(H, Subdivision.uniform(r), ctx.rng(36))


def _fiber_cps(inst, r, s, q, rng):
    pr = inst.problem(r, s, "fiber", q)
    return find_critical(pr, analytic_seeds(pr) + random_seeds(pr, rng, 3)), pr


def suite_drift(ctx):
    rng = ctx.rng(64)
    rows = []
    for perturbed in (False, True):
        inst = ctx.instance(perturbed)
        r = inst.r0
        s_hi = inst.jumps[r]
        for s in (5.5, 0.5 * (5 + s_hi) if s_hi > 5.6 else 5.25, s_hi):
            q = np.array([rng.uniform(0, float(np.min(inst.manifold.period_array)))])
            cps, _ = _fiber_cps(inst, r, s, q, rng)
            rep = check_drift(cps, lambda ss: inst.problem(r, ss, "fiber", q), s,
                              inst.embedding.F_norm)
            rows.append({"F_norm": inst.embedding.F_norm, "s": s, **rep})
    return {"id": "lemma-6.4", "rows": rows,
            "samples": sum(x["samples"] for x in rows),
            "violations": sum(x["violations"] for x in rows),
            "worst_margin": max(x["worst_margin"] for x in rows),
            "ok": all(x["pass"] for x in rows)}


def suite_fiber_gradient(ctx):
    rng = ctx.rng(71)
    rows = []
    for perturbed in (False, True):
        inst = ctx.instance(perturbed)
        r = inst.r0
        for s in (inst.jumps[r], 2 * inst.jumps[r]):
            q = np.array([rng.uniform(0, float(np.min(inst.manifold.period_array)))])
            cps, pr = _fiber_cps(inst, r, s, q, rng)
            rows.append({"F_norm": inst.embedding.F_norm, "s": s,
                         **check_fiber_gradient(cps, lambda c: SProblem(pr.H, pr.alpha))})
    return {"id": "lemma-7.1", "rows": rows,
            "samples": sum(x["samples"] for x in rows),
            "violations": sum(x["violations"] for x in rows),
            "worst_margin": max(x["worst_margin"] for x in rows),
            "ok": all(x["pass"] for x in rows)}


def suite_transport(ctx):
    inst = ctx.instance()
    alpha = Subdivision.uniform(inst.r0)
    shift0 = -inst.hinf.eps * inst.hinf.intercept
    return check_transport_bound(lambda s: SProblem(inst.H(s), alpha), 0.05, 20.0,
                                 lambda s: s - shift0, ctx.rng(105), inst.r0, n=2000, n_cal=500)


def suite_additivity(ctx):
    inst = ctx.instance()
    pc = ctx.cfg["product"]
    H = inst.H(pc["s"])
    rows = [check_additivity(H, r, ctx.rng(110 + r), n=pc["pairs"]) for r in pc["r_values"]]
    return {"id": "additivity", "rows": rows, "ok": all(x["ok"] for x in rows)}


def suite_subadditivity(ctx):
    inst = ctx.instance()
    pc = ctx.cfg["product"]
    H = inst.H(pc["s"])
    beta = 0.5 * inst.manifold.epsilon0
    rows = [check_subadditivity(H, r, ctx.rng(120 + r), beta, n=pc["pairs"], kappa=pc["kappa"])
            for r in pc["r_values"]]
    return {"id": "subadditivity", "rows": rows, "ok": all(x["ok"] for x in rows)}


def suite_suspension(ctx):
    """Index shift by dim N under suspension, on the circle and on the flat 2-torus."""
    from .morse import suspension_shift_check
    inst = ctx.instance()
    rows = []
    s = inst.jumps[inst.r0]
    ell = float(np.min(inst.manifold.period_array))
    torus = Manifold.torus((ell, ell), ctx.cfg["manifold"]["epsilon0_fraction"] * ell)
    Lt = LagrangianEmbedding(torus, [0.0], inst.embedding.rho)
    Ht = assemble_Hs(Lt, CappedFamily(inst.family.profile, Lt.min_length),
                     AsymptoticPiece(inst.hinf.mu, inst.hinf.eps, torus.epsilon0 / 5), s)
    cases = [("circle", inst.H(s), [1.0], 2), ("torus", Ht, [1.0, 2.0], 1)]
    for name, H, q, kmax in cases:
        for mode, bp in (("fiber", q), ("closed", None)):
            pr = SProblem(H, Subdivision.uniform(8), mode, bp)
            for c in find_critical(pr, analytic_seeds(pr, kmax=kmax)):
                out = suspension_shift_check(pr, c)
                if out["degenerate"]:
                    continue
                rows.append({"manifold": name, "mode": mode, "value": c.value, **out})
    bad = [x for x in rows if not (x["ok"] and x["value_difference"] <= 1e-12)]
    dims = {x["manifold"] for x in rows}
    return {"id": "suspension", "samples": len(rows), "violations": len(bad),
            "tested": sorted(dims), "rows": rows,
            "ok": not bad and dims == {"circle", "torus"}}


def suite_windows(ctx):
    """Window homology against the cubical oracle on a fiber problem with three wells."""
    from .hamiltonian import RadialHamiltonian
    from .morse import cubical_oracle, morse_complex
    m = Manifold.circle(10 * np.pi)
    H = RadialHamiltonian.wells(m)
    b0 = 1.0
    pr = SProblem(H, Subdivision.uniform(2), "fiber", [b0])
    cps = find_critical(pr, analytic_seeds(pr, kmax=0) + random_seeds(pr, ctx.rng(8), 20, pmax=0.7))

    def fun(g):
        return pr.value(np.stack([g[..., 0] + b0, g[..., 1], g[..., 2]], -1))

    box = [(-1, 1), (-0.8, 0.8), (-0.8, 0.8)]
    rows = []
    for a in (-0.1, -0.3, -0.5):
        w = build_window(pr, a, 0.1, cps)
        ranks = morse_complex(w).ranks()
        orc = cubical_oracle(fun, box, a, 0.1, [9, 17, 17], max_halvings=2)
        hist = [h["ranks"] for h in orc["history"]]
        agree = len(hist) >= 2 and all(h == ranks for h in hist[-2:])
        rows.append({"a": a, "b": 0.1, "generators": len(w.generators),
                     "morse_ranks": {str(k): v for k, v in ranks.items()},
                     "oracle_ranks": [{str(k): v for k, v in h.items()} for h in hist],
                     "ok": bool(agree and orc["conclusive"])})
    counts = sorted(x["generators"] for x in rows)
    return {"id": "windows", "rows": rows, "generator_counts": counts,
            "ok": all(x["ok"] for x in rows) and counts == [1, 3, 5]}


def suite_ez(ctx):
    from .algebra import ez_identities
    rep = ez_identities(5)
    failed = [x for x in rep["rows"] if not x["ok"]]
    return {"id": "ez-identities", "checked": len(rep["rows"]), "failed": failed,
            "derivation_sign": rep["derivation_sign"], "ok": rep["ok"]}


def spectral_model(field="F2"):
    from .algebra import simplicial_circle, sphere
    from .spectral import product_model
    F, B = sphere(2), simplicial_circle(1)
    P, fc = product_model(F, B, field)
    return F, B, P, fc


def suite_spectral(ctx):
    from .algebra import homology
    from .spectral import (abutment_check, check_pages, collapse_page, ez_pairing,
                           page_product, pages, thom_shift_check, unit_check)
    F, B, P, fc = spectral_model()
    pl = pages(fc)
    hb = homology(B.chain_complex("F2")).ranks
    hf = homology(F.chain_complex("F2")).ranks
    e2 = {(p, q): n for p, q, n in pl[min(2, len(pl) - 1)].table()}
    kun = {(p, q): hb.get(p, 0) * hf.get(q, 0) for p in hb for q in hf
           if hb.get(p, 0) * hf.get(q, 0)}
    col = collapse_page(pl)
    ab = abutment_check(fc, page_list=pl)
    cp = check_pages(pl)
    pair, _ = ez_pairing(P, fc)
    lz = page_product(pair)
    unit = unit_check(P, fc)
    thom = [thom_shift_check(F, B, k) for k in (1, 2)]
    ok = (e2 == kun and col <= 2 and ab["ok"] and all(x["ok"] for x in cp) and lz["ok"]
          and unit["ok"] and all(t["ok"] for t in thom))
    ctx.pages = [pg.to_dict() for pg in pl]
    return {"id": "spectral", "E2": [[p, q, n] for (p, q), n in sorted(e2.items())],
            "kunneth": [[p, q, n] for (p, q), n in sorted(kun.items())], "collapse_page": col,
            "abutment": ab, "pages": cp, "leibniz": lz, "unit": unit, "thom": thom, "ok": ok}


def suite_profile(ctx):
    from .hamiltonian import Profile as _P, verify_asymptotic, verify_profile_suite
    inst = ctx.instance()
    m = inst.manifold
    pc = ctx.cfg["profile"]
    out = {}
    for name, prof in (("default", _P(pc["m"], pc["lam"])), ("perturbed", _P(4, 1.3))):
        fam = CappedFamily(prof, inst.embedding.min_length)
        out[name] = verify_profile_suite(fam, inst.hinf, manifold=m)
    out["asymptotic"] = verify_asymptotic(inst.hinf, m)
    ok = all(v["pass"] for rep in out.values() for v in rep.values())
    return {"id": "profile", "reports": out, "ok": ok}


def suite_products(ctx):
    inst = ctx.instance()
    r = inst.r0
    rep = product_on_windows(inst, r, inst.jumps[r], [1.0], ctx.cfg["product"]["kappa"])
    return {"id": "products", **rep}


def suite_inclusion(ctx):
    inst = ctx.instance()
    ic = ctx.cfg["inclusion"]
    r = inst.r0
    return {"id": "inclusion", **inclusion_constants(inst, r, inst.jumps[r], [1.0],
                                                     ic["epsilon"], ic["attempts"])}


def suite_continuation(ctx):
    inst = ctx.instance()
    return {"id": "continuation", **continuation_coherence(inst, inst.r0, [1.0])}


SUITES = {
    "orbits": suite_orbits,
    "action-set": suite_action_set,
    "lemma-2.3": suite_gradient_estimates,
    "lemma-3.4": suite_flow_rate,
    "lemma-3.5": suite_gradient_lower_bound,
    "lemma-3.6": suite_momentum,
    "lemma-6.4": suite_drift,
    "lemma-7.1": suite_fiber_gradient,
    "lemma-10.5": suite_transport,
    "additivity": suite_additivity,
    "subadditivity": suite_subadditivity,
    "suspension": suite_suspension,
    "windows": suite_windows,
    "ez-identities": suite_ez,
    "spectral": suite_spectral,
    "profile": suite_profile,
    "products": suite_products,
    "inclusion": suite_inclusion,
    "continuation": suite_continuation,
}

REPORT_SCHEMA = 1


def run_suite(suite_id, cfg=None, ctx=None):
    if suite_id not in SUITES:
        raise KeyError(f"unknown suite {suite_id!r}; known: {', '.join(SUITES)}")
    ctx = ctx or _Context(cfg or load_config())
    rep = SUITES[suite_id](ctx)
    rep.setdefault("id", suite_id)
    rep["ok"] = _passed(rep)
    return rep


def run_report(cfg, suites=None):
    """Run the selected suites (all by default) and collect a report dict.

    Suites that raise are recorded as failures with the error text.
    """
    ctx = _Context(cfg)
    ids = list(SUITES) if not suites else list(suites)
    for s in ids:
        if s not in SUITES:
            raise KeyError(f"unknown suite {s!r}")
    results = {}
    for s in ids:
        log.info("suite %s", s)
        try:
            results[s] = run_suite(s, ctx=ctx)
        except Exception as exc:  # a crash is a failure of that suite, not of the report
            log.exception("suite %s raised", s)
            results[s] = {"id": s, "ok": False, "error": f"{type(exc).__name__}: {exc}"}
    inst = ctx.instance()
    return {"schema": REPORT_SCHEMA, "config": cfg, "instance": inst.to_dict(),
            "suites": results, "failed": [s for s, r in results.items() if not r["ok"]],
            "ok": all(r["ok"] for r in results.values()),
            "spectra": ctx.spectra, "pages": getattr(ctx, "pages", [])}

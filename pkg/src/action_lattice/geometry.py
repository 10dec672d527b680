"""Riemannian kernel for the model manifolds.

Circles and flat tori use global periodic chart coordinates, points are
reduced to the fundamental domain ``[0, period)``.  The round sphere uses
unit vectors in R^3 and tangent vectors orthogonal to the base point.

Flat operations broadcast over leading axes: a point array has shape
``(..., d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Raised when a point pair lies outside the allowed neighbourhood."""


@dataclass(frozen=True)
class Manifold:
    """A model manifold: circle, flat torus or round unit sphere.

    Parameters
    ----------
    kind : {"circle", "torus", "sphere"}
    periods : tuple of float
        Circumference (circle) or period vector (torus).  Ignored for the
        sphere.
    epsilon0 : float, optional
        Adjacency radius of the discrete loop spaces.  Defaults to a quarter
        of the injectivity radius and must satisfy
        ``2 * epsilon0 < injectivity_radius``.
    """

    kind: str
    periods: tuple = ()
    epsilon0: float | None = None
    _inj: float = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind == "circle":
            if len(self.periods) != 1:
                raise ValueError("circle needs exactly one circumference")
        elif self.kind == "torus":
            if len(self.periods) < 1:
                raise ValueError("torus needs a period vector")
        elif self.kind != "sphere":
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if self.kind != "sphere" and min(self.periods) <= 0:
            raise ValueError("periods must be positive")
        inj = np.pi if self.kind == "sphere" else 0.5 * min(self.periods)
        object.__setattr__(self, "_inj", float(inj))
        eps = inj / 4 if self.epsilon0 is None else float(self.epsilon0)
        if not 0 < 2 * eps < inj:
            raise ValueError(
                f"epsilon0={eps} violates 0 < 2*epsilon0 < injectivity radius {inj}")
        object.__setattr__(self, "epsilon0", eps)
        object.__setattr__(self, "periods", tuple(float(x) for x in self.periods))

    @classmethod
    def circle(cls, length=2 * np.pi, epsilon0=None):
        return cls("circle", (length,), epsilon0)

    @classmethod
    def torus(cls, periods=(2 * np.pi, 2 * np.pi), epsilon0=None):
        return cls("torus", tuple(periods), epsilon0)

    @classmethod
    def sphere(cls, epsilon0=None):
        return cls("sphere", (), epsilon0)

    @property
    def dim(self):
        return 2 if self.kind == "sphere" else len(self.periods)

    @property
    def flat(self):
        return self.kind != "sphere"

    @property
    def injectivity_radius(self):
        return self._inj

    @property
    def period_array(self):
        return np.asarray(self.periods)

    def to_dict(self):
        out = {"kind": self.kind, "epsilon0": self.epsilon0}
        if self.flat:
            out["periods"] = list(self.periods)
        return out

    # -- flat helpers -------------------------------------------------
    def reduce(self, q):
        """Reduce chart coordinates to the fundamental domain."""
        q = np.asarray(q, dtype=float)
        if not self.flat:
            return q / np.linalg.norm(q, axis=-1, keepdims=True)
        return np.mod(q, self.period_array)

    def wrap(self, v):
        """Shortest representative of a displacement modulo the periods."""
        v = np.asarray(v, dtype=float)
        per = self.period_array
        return v - per * np.round(v / per)

    # -- metric operations -------------------------------------------
    def norm(self, q, v):
        return np.linalg.norm(np.asarray(v, dtype=float), axis=-1)

    def dist(self, q, q2):
        if self.flat:
            return np.linalg.norm(self.wrap(np.asarray(q2) - np.asarray(q)), axis=-1)
        c = np.clip(np.sum(np.asarray(q) * np.asarray(q2), axis=-1), -1.0, 1.0)
        # atan2 form is accurate for nearby and antipodal points alike
        s = np.linalg.norm(np.cross(q, q2), axis=-1)
        return np.arctan2(s, c)

    def exp(self, q, v):
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.flat:
            return self.reduce(q + v)
        n = np.linalg.norm(v, axis=-1, keepdims=True)
        safe = np.where(n > 0, n, 1.0)
        return np.cos(n) * q + np.sin(n) * v / safe

    def log(self, q, q2):
        q = np.asarray(q, dtype=float)
        q2 = np.asarray(q2, dtype=float)
        if self.flat:
            v = self.wrap(q2 - q)
            if np.any(np.linalg.norm(v, axis=-1) >= self._inj * (1 - 1e-12)):
                raise GeometryError("log: points at or beyond the injectivity radius")
            return v
        theta = self.dist(q, q2)
        if np.any(theta >= self._inj * (1 - 1e-9)):
            raise GeometryError("log: antipodal points")
        w = q2 - np.sum(q * q2, axis=-1, keepdims=True) * q
        wn = np.linalg.norm(w, axis=-1, keepdims=True)
        safe = np.where(wn > 0, wn, 1.0)
        return np.where(wn > 0, w / safe * theta[..., None], 0.0)

    def transport(self, q, q2, v):
        """Parallel transport of ``v`` from ``q`` to ``q2`` along the short geodesic."""
        v = np.asarray(v, dtype=float)
        if np.any(self.dist(q, q2) >= 2 * self.epsilon0):
            raise GeometryError("transport: points farther apart than 2*epsilon0")
        if self.flat:
            return v.copy()
        q = np.asarray(q, dtype=float)
        q2 = np.asarray(q2, dtype=float)
        axis = np.cross(q, q2)
        s = np.linalg.norm(axis, axis=-1, keepdims=True)
        c = np.sum(q * q2, axis=-1, keepdims=True)
        k = np.where(s > 0, axis / np.where(s > 0, s, 1.0), 0.0)
        # Rodrigues rotation taking q to q2 about the common normal
        return (v * c + np.cross(k, v) * s
                + k * np.sum(k * v, axis=-1, keepdims=True) * (1 - c))

    def random_point(self, rng, size=None):
        shape = () if size is None else tuple(np.atleast_1d(size))
        if self.flat:
            return rng.uniform(0, 1, size=shape + (self.dim,)) * self.period_array
        x = rng.normal(size=shape + (3,))
        return x / np.linalg.norm(x, axis=-1, keepdims=True)

    def random_tangent(self, rng, q, scale=1.0):
        q = np.asarray(q, dtype=float)
        if self.flat:
            return rng.normal(size=q.shape) * scale
        v = rng.normal(size=q.shape)
        v -= np.sum(v * q, axis=-1, keepdims=True) * q
        return v * scale


@dataclass(frozen=True)
class CotangentPoint:
    """A covector ``p`` at a base point ``q``; the metric identifies it with a tangent vector."""

    q: np.ndarray
    p: np.ndarray

    def norm(self, m: Manifold):
        return float(m.norm(self.q, self.p))

"""Chain-level algebra: linear algebra over F_p, Q and Z, chain complexes,
finite simplicial sets, shuffle products, cap products and Thom cochains.

Simplices of a finite simplicial set are stored in Eilenberg-Zilber normal
form ``Simp(label, surj)``: a nondegenerate simplex ``label`` of dimension k
together with a monotone surjection ``surj: [n] -> [k]`` written as a tuple.
Faces and degeneracies are both instances of precomposition with a monotone
map ``theta: [m] -> [n]`` (see :meth:`SimplicialSet.apply`).
"""

from __future__ import annotations

import itertools
from collections import namedtuple
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from math import comb

import numpy as np


# ---------------------------------------------------------------------------
# F_2 linear algebra on bitsets
# ---------------------------------------------------------------------------

def _rows_as_bits(mat):
    mat = np.asarray(mat) % 2
    weights = [1 << j for j in range(mat.shape[1])]
    return [sum(w for w, v in zip(weights, row) if v) for row in mat]


def rank_mod2(mat):
    """Rank over F_2 of a 0/1 matrix (any integer matrix is reduced mod 2)."""
    mat = np.asarray(mat)
    if mat.size == 0:
        return 0
    pivots = {}
    rank = 0
    for row in _rows_as_bits(mat):
        while row:
            top = row.bit_length() - 1
            if top in pivots:
                row ^= pivots[top]
            else:
                pivots[top] = row
                rank += 1
                break
    return rank


def matmul_mod2(a, b):
    return (np.asarray(a, dtype=np.int64) @ np.asarray(b, dtype=np.int64)) % 2


# ---------------------------------------------------------------------------
# exact fields
# ---------------------------------------------------------------------------

class Field:
    """Exact coefficient field: F_p for prime ``p`` or Q when ``p == 0``.

    Matrices are numpy arrays: int64 reduced mod p, or object arrays of
    ``Fraction`` over Q.
    """

    def __init__(self, p=2):
        p = int(p)
        if p and any(p % d == 0 for d in range(2, int(p ** 0.5) + 1)) or p == 1:
            raise ValueError(f"{p} is not prime")
        self.p = p

    @property
    def tag(self):
        return f"F{self.p}" if self.p else "Q"

    def __repr__(self):
        return f"Field({self.tag})"

    def __eq__(self, other):
        return isinstance(other, Field) and other.p == self.p

    def __hash__(self):
        return hash(self.p)

    def array(self, mat, shape=None):
        """Copy ``mat`` into this field's array representation."""
        if self.p and isinstance(mat, np.ndarray) and mat.dtype.kind in "iu":
            return mat.astype(np.int64) % self.p
        arr = np.array(mat, dtype=object)
        if arr.size == 0:
            return self.zeros(shape if shape is not None else arr.shape)
        if self.p:
            return np.vectorize(lambda v: int(v) % self.p, otypes=[np.int64])(arr)
        return np.vectorize(Fraction, otypes=[object])(arr)

    def zeros(self, shape):
        if self.p:
            return np.zeros(shape, dtype=np.int64)
        out = np.empty(shape, dtype=object)
        out[...] = Fraction(0)
        return out

    def reduce(self, arr):
        return arr % self.p if self.p else arr

    def inv(self, v):
        return pow(int(v), -1, self.p) if self.p else 1 / v

    def rref(self, mat):
        """Reduced row echelon form and pivot columns."""
        a = self.array(mat)
        rows, cols = a.shape
        pivots = []
        r = 0
        for c in range(cols):
            if r >= rows:
                break
            nz = np.nonzero(a[r:, c] != 0)[0]
            if nz.size == 0:
                continue
            i = r + nz[0]
            if i != r:
                a[[r, i]] = a[[i, r]]
            a[r] = self.reduce(a[r] * self.inv(a[r, c]))
            col = a[:, c].copy()
            col[r] = 0
            hit = np.nonzero(col != 0)[0]
            if hit.size:
                a[hit] = self.reduce(a[hit] - np.outer(col[hit], a[r]))
            pivots.append(c)
            r += 1
        return a, pivots

    def rank(self, mat):
        mat = np.asarray(mat)
        if mat.size == 0:
            return 0
        return len(self.rref(mat)[1])

    def nullspace(self, mat):
        """Columns spanning the kernel of ``mat``."""
        mat = np.asarray(mat)
        cols = mat.shape[1]
        if mat.shape[0] == 0 or mat.size == 0:
            basis = self.zeros((cols, cols))
            for j in range(cols):
                basis[j, j] = 1
            return basis
        r, piv = self.rref(mat)
        free = [j for j in range(cols) if j not in piv]
        basis = self.zeros((cols, len(free)))
        for k, j in enumerate(free):
            basis[j, k] = 1
            for i, pc in enumerate(piv):
                basis[pc, k] = self.reduce(-r[i, j])
        return basis

    def solve(self, a, b):
        """A solution x of ``a @ x = b`` (b may be a matrix), or None."""
        a = np.asarray(a)
        b = np.asarray(b)
        vec = b.ndim == 1
        b2 = b.reshape(-1, 1) if vec else b
        n = a.shape[1]
        if a.shape[0] == 0:
            return self.zeros((n,) if vec else (n, b2.shape[1]))
        aug = np.concatenate([self.array(a, a.shape), self.array(b2, b2.shape)], axis=1)
        r, piv = self.rref(aug)
        if any(p >= n for p in piv):
            return None
        x = self.zeros((n, b2.shape[1]))
        for i, pc in enumerate(piv):
            x[pc] = r[i, n:]
        return x[:, 0] if vec else x

    def complement(self, sub, ambient):
        """Columns of ``ambient`` extending a basis of span(sub) to span(sub + ambient).

        Returns the chosen ambient columns as a matrix; their classes form a
        basis of the quotient span(sub + ambient) / span(sub).
        """
        sub = np.asarray(sub)
        ambient = np.asarray(ambient)
        ns = sub.shape[1] if sub.ndim == 2 else 0
        if ambient.shape[1] == 0:
            return ambient
        stacked = np.concatenate([sub, ambient], axis=1) if ns else ambient
        _, piv = self.rref(stacked)
        keep = [p - ns for p in piv if p >= ns]
        return ambient[:, keep]

    def matmul(self, a, b):
        out = np.asarray(a) @ np.asarray(b)
        return self.reduce(out)


def parse_ring(tag):
    """``"Z"`` or a :class:`Field` from tags like ``"F2"``, ``"F3"``, ``"Q"``."""
    if isinstance(tag, Field):
        return tag
    t = str(tag).upper()
    if t == "Z":
        return "Z"
    if t == "Q":
        return Field(0)
    if t.startswith("F"):
        return Field(int(t[1:]))
    raise ValueError(f"unknown coefficient ring {tag!r}")


# ---------------------------------------------------------------------------
# integers: Smith normal form
# ---------------------------------------------------------------------------

def smith_diagonal(mat):
    """Invariant factors of an integer matrix, in divisibility order.

    Only the nonzero diagonal of the Smith normal form is returned; the
    number of entries equals the rank over Q.
    """
    a = [[int(v) for v in row] for row in np.asarray(mat, dtype=object).tolist()]
    m = len(a)
    n = len(a[0]) if m else 0
    diag = []
    t = 0
    while t < min(m, n):
        best = None
        for i in range(t, m):
            for j in range(t, n):
                if a[i][j] and (best is None or abs(a[i][j]) < best[0]):
                    best = (abs(a[i][j]), i, j)
        if best is None:
            break
        _, i, j = best
        a[t], a[i] = a[i], a[t]
        for row in a:
            row[t], row[j] = row[j], row[t]
        while True:
            piv = a[t][t]
            clean = True
            for i in range(t + 1, m):
                if a[i][t]:
                    q = a[i][t] // piv
                    a[i] = [x - q * y for x, y in zip(a[i], a[t])]
                    clean = clean and a[i][t] == 0
            for j in range(t + 1, n):
                if a[t][j]:
                    q = a[t][j] // piv
                    for row in a:
                        row[j] -= q * row[t]
                    clean = clean and a[t][j] == 0
            if not clean:
                # a smaller remainder appeared in row or column t
                cand = [(abs(a[i][t]), i, t) for i in range(t, m) if a[i][t]]
                cand += [(abs(a[t][j]), t, j) for j in range(t, n) if a[t][j]]
                _, i, j = min(cand)
                a[t], a[i] = a[i], a[t]
                for row in a:
                    row[t], row[j] = row[j], row[t]
                continue
            bad = next(((i, j) for i in range(t + 1, m) for j in range(t + 1, n)
                        if a[i][j] % piv), None)
            if bad is None:
                break
            a[t] = [x + y for x, y in zip(a[t], a[bad[0]])]
        diag.append(abs(a[t][t]))
        t += 1
    return diag


# ---------------------------------------------------------------------------
# chain complexes
# ---------------------------------------------------------------------------

class ChainError(ValueError):
    """The boundary does not square to zero or has the wrong shape."""


@dataclass
class Homology:
    ring: str
    ranks: dict
    torsion: dict = dc_field(default_factory=dict)

    def to_dict(self):
        return {"ring": self.ring, "ranks": {str(k): v for k, v in sorted(self.ranks.items())},
                "torsion": {str(k): v for k, v in sorted(self.torsion.items()) if v}}


class ChainComplex:
    """Finitely generated chain complex with integer or field boundary matrices.

    Parameters
    ----------
    generators : dict
        Degree -> list of generator labels.
    boundary : dict
        Degree n -> matrix of shape (len(gens[n-1]), len(gens[n])).  Missing
        degrees are zero.
    ring : str or Field
        ``"Z"``, ``"Q"`` or ``"Fp"``.  Entries are kept as exact integers (or
        Fractions) and reduced on demand.
    """

    def __init__(self, generators, boundary=None, ring="Z", check=True):
        self.ring = parse_ring(ring)
        self.generators = {int(k): list(v) for k, v in generators.items()}
        self.boundary = {}
        for n, mat in (boundary or {}).items():
            n = int(n)
            rows = len(self.generators.get(n - 1, []))
            cols = len(self.generators.get(n, []))
            arr = np.array(mat, dtype=object).reshape(rows, cols) if rows * cols else \
                np.zeros((rows, cols), dtype=object)
            self.boundary[n] = arr
        if check:
            self.check()

    @property
    def ring_tag(self):
        return self.ring if self.ring == "Z" else self.ring.tag

    def degrees(self):
        return sorted(self.generators)

    def dim(self, n):
        return len(self.generators.get(n, []))

    def d(self, n):
        """Boundary matrix out of degree n (zero matrix if absent)."""
        if n in self.boundary:
            return self.boundary[n]
        return np.zeros((self.dim(n - 1), self.dim(n)), dtype=object)

    def check(self):
        for n in self.degrees():
            a, b = self.d(n), self.d(n + 1)
            if a.size == 0 or b.size == 0:
                continue
            prod = a.dot(b)
            if self.ring != "Z" and self.ring.p:
                prod = prod % self.ring.p
            if np.any(prod != 0):
                raise ChainError(f"boundary squares to a nonzero map in degree {n + 1}")

    def with_ring(self, ring):
        return ChainComplex(self.generators, self.boundary, ring, check=False)

    def to_dict(self):
        return {"ring": self.ring_tag,
                "generators": {str(n): [str(g) for g in gs] for n, gs in self.generators.items()},
                "boundary": {str(n): [[str(v) for v in row] for row in m.tolist()]
                             for n, m in self.boundary.items()}}

    @classmethod
    def from_dict(cls, data):
        ring = data.get("ring", "Z")
        conv = int if str(ring).upper() != "Q" else Fraction
        bd = {int(n): [[conv(v) for v in row] for row in m] for n, m in data.get("boundary", {}).items()}
        return cls({int(n): g for n, g in data["generators"].items()}, bd, ring)


def homology(c: ChainComplex, ring=None):
    """Graded homology ranks, plus torsion coefficients over Z.

    Over a field, ranks come from Gaussian elimination.  Over Z, the free rank
    uses the rational rank of each boundary and torsion is read off the
    invariant factors of the incoming boundary.
    """
    ring = c.ring if ring is None else parse_ring(ring)
    ranks, torsion = {}, {}
    if ring == "Z":
        diag = {n: smith_diagonal(c.d(n)) if c.d(n).size else [] for n in
                set(c.degrees()) | {n + 1 for n in c.degrees()}}
        for n in c.degrees():
            r_out = len(diag.get(n, []))
            r_in = len(diag.get(n + 1, []))
            ranks[n] = c.dim(n) - r_out - r_in
            torsion[n] = [f for f in diag.get(n + 1, []) if f > 1]
        return Homology("Z", ranks, torsion)
    for n in c.degrees():
        r_out = ring.rank(ring.array(c.d(n), c.d(n).shape)) if c.d(n).size else 0
        d_in = c.d(n + 1)
        r_in = ring.rank(ring.array(d_in, d_in.shape)) if d_in.size else 0
        ranks[n] = c.dim(n) - r_out - r_in
    return Homology(ring.tag, ranks)


def induced_rank(field: Field, f, d_src_out, d_src_in, d_tgt_in):
    """Rank of the map on homology induced by a chain map component ``f``.

    ``f`` maps degree-n chains of the source to degree-n chains of the
    target; ``d_src_out`` is the source boundary out of degree n,
    ``d_src_in`` / ``d_tgt_in`` the boundaries into degree n.
    """
    f = field.array(f, np.shape(f))
    n_src = f.shape[1]
    z = field.nullspace(field.array(d_src_out, np.shape(d_src_out))) if np.size(d_src_out) \
        else field.nullspace(field.zeros((0, n_src)))
    img = field.matmul(f, z)
    bt = field.array(d_tgt_in, np.shape(d_tgt_in)) if np.size(d_tgt_in) else field.zeros((f.shape[0], 0))
    base = field.rank(bt)
    return field.rank(np.concatenate([bt, img], axis=1)) - base


# ---------------------------------------------------------------------------
# finite simplicial sets
# ---------------------------------------------------------------------------

Simp = namedtuple("Simp", "label surj")
Simp.__doc__ = "Simplex in normal form: nondegenerate ``label`` and surjection ``surj``."


class SimplicialError(ValueError):
    """Face data violating the simplicial identities, or a non-simplicial map."""


def _identity(k):
    return tuple(range(k + 1))


def _add(chain, key, coeff):
    c = chain.get(key, 0) + coeff
    if c:
        chain[key] = c
    else:
        chain.pop(key, None)


def is_degenerate(s: Simp):
    return len(set(s.surj)) < len(s.surj)


class SimplicialSet:
    """Finite simplicial set given by its nondegenerate simplices and faces.

    Parameters
    ----------
    simplices : dict
        Dimension -> list of nondegenerate labels.
    faces : dict
        Label of dimension k >= 1 -> list of its k+1 faces, each a
        :class:`Simp` or a bare label (read as nondegenerate).
    name : str
    check : bool
        Verify ``d_i d_j = d_{j-1} d_i`` for i < j on every simplex.
    """

    def __init__(self, simplices, faces, name="", check=True):
        self.name = name
        self.simplices = {int(k): list(v) for k, v in simplices.items()}
        self.dim_of = {x: k for k, xs in self.simplices.items() for x in xs}
        self.faces = {}
        for x, fs in faces.items():
            k = self.dim_of[x]
            out = []
            for f in fs:
                if not isinstance(f, Simp):
                    f = Simp(f, _identity(self.dim_of[f]))
                if len(f.surj) != k:
                    raise SimplicialError(f"face of {x!r} has the wrong dimension")
                out.append(f)
            if len(out) != k + 1:
                raise SimplicialError(f"{x!r} needs {k + 1} faces")
            self.faces[x] = out
        for x, k in self.dim_of.items():
            if k > 0 and x not in self.faces:
                raise SimplicialError(f"no faces given for {x!r}")
        if check:
            self.check_identities()

    def __repr__(self):
        counts = {k: len(v) for k, v in sorted(self.simplices.items())}
        return f"SimplicialSet({self.name!r}, {counts})"

    @property
    def dimension(self):
        return max((k for k, v in self.simplices.items() if v), default=-1)

    def nd(self, label):
        return Simp(label, _identity(self.dim_of[label]))

    def face(self, s: Simp, i):
        """i-th face of a simplex in normal form."""
        surj = s.surj[:i] + s.surj[i + 1:]
        j = s.surj[i]
        if j in surj:
            return Simp(s.label, surj)
        if self.dim_of[s.label] == 0:
            raise SimplicialError("vertices have no faces")
        tau = tuple(v - (v > j) for v in surj)
        y = self.faces[s.label][j]
        return Simp(y.label, tuple(y.surj[t] for t in tau))

    def apply(self, s: Simp, theta):
        """Precompose ``s`` with the monotone map ``theta: [m] -> [n]``."""
        f = tuple(s.surj[t] for t in theta)
        image = sorted(set(f))
        pos = {v: r for r, v in enumerate(image)}
        k = self.dim_of[s.label]
        cur = self.nd(s.label)
        for j in reversed(range(k + 1)):
            if j not in pos:
                cur = self.face(cur, j)
        return Simp(cur.label, tuple(cur.surj[pos[v]] for v in f))

    def degeneracy(self, s: Simp, i):
        n = len(s.surj) - 1
        return self.apply(s, tuple(t if t <= i else t - 1 for t in range(n + 2)))

    def check_identities(self):
        for x, k in self.dim_of.items():
            if k < 2:
                continue
            s = self.nd(x)
            for j in range(k + 1):
                dj = self.face(s, j)
                for i in range(j):
                    if self.face(dj, i) != self.face(self.face(s, i), j - 1):
                        raise SimplicialError(
                            f"d_{i} d_{j} != d_{j - 1} d_{i} on {x!r}")
        return True

    def boundary_chain(self, chain):
        """Normalized boundary of a chain ``{label: coeff}``."""
        out = {}
        for x, c in chain.items():
            s = self.nd(x)
            if len(s.surj) == 1:
                continue
            for i in range(len(s.surj)):
                f = self.face(s, i)
                if not is_degenerate(f):
                    _add(out, f.label, (-1) ** i * c)
        return out

    def chain_complex(self, ring="Z", subcomplex=()):
        """Normalized chains, optionally relative to a set of labels.

        ``subcomplex`` must be closed under faces; its simplices are dropped
        and faces landing in it vanish.
        """
        drop = set(subcomplex)
        gens = {k: [x for x in v if x not in drop] for k, v in self.simplices.items()}
        idx = {k: {x: i for i, x in enumerate(v)} for k, v in gens.items()}
        bd = {}
        for k in gens:
            if k == 0:
                continue
            mat = np.zeros((len(gens.get(k - 1, [])), len(gens[k])), dtype=object)
            for col, x in enumerate(gens[k]):
                for y, c in self.boundary_chain({x: 1}).items():
                    if y in drop:
                        continue
                    mat[idx[k - 1][y], col] += c
            bd[k] = mat
        return ChainComplex(gens, bd, ring)

    def map_simplex(self, fmap, s: Simp, target):
        """Image of ``s`` under a simplicial map given on nondegenerate simplices."""
        return target.apply(fmap[s.label], s.surj)

    def check_map(self, fmap, target):
        """Raise unless ``fmap`` (label -> Simp of target) commutes with faces."""
        for x, k in self.dim_of.items():
            img = fmap[x]
            if len(img.surj) != k + 1:
                raise SimplicialError(f"image of {x!r} has the wrong dimension")
            for i in range(k + 1 if k else 0):
                lhs = self.map_simplex(fmap, self.face(self.nd(x), i), target)
                if lhs != target.face(img, i):
                    raise SimplicialError(f"map does not commute with d_{i} on {x!r}")
        return True


def _paths(p, q):
    """Jointly injective pairs of surjections onto [p] and [q] (lattice paths)."""
    if p == 0 and q == 0:
        yield (0,), (0,)
        return
    for dp, dq in ((1, 0), (0, 1), (1, 1)):
        if p - dp >= 0 and q - dq >= 0:
            for a, b in _paths(p - dp, q - dq):
                yield a + (p,), b + (q,)


class ProductSet(SimplicialSet):
    """Cartesian product ``A x B``; labels are jointly nondegenerate pairs."""

    def __init__(self, A: SimplicialSet, B: SimplicialSet, check=True):
        self.factors = (A, B)
        simplices = {}
        for p, xs in A.simplices.items():
            for q, ys in B.simplices.items():
                for x in xs:
                    for y in ys:
                        for sa, sb in _paths(p, q):
                            lab = (Simp(x, sa), Simp(y, sb))
                            simplices.setdefault(len(sa) - 1, []).append(lab)
        self.name = f"{A.name}x{B.name}"
        self.simplices = simplices
        self.dim_of = {x: k for k, v in simplices.items() for x in v}
        self.faces = {lab: [self.normalize(A.face(lab[0], i), B.face(lab[1], i))
                            for i in range(k + 1)]
                      for lab, k in self.dim_of.items() if k}
        if check:
            self.check_identities()

    @staticmethod
    def normalize(a: Simp, b: Simp):
        """Normal form of the product simplex with components ``a`` and ``b``."""
        n = len(a.surj) - 1
        rho = [0]
        for t in range(n):
            same = a.surj[t] == a.surj[t + 1] and b.surj[t] == b.surj[t + 1]
            rho.append(rho[-1] + (0 if same else 1))
        first = {}
        for t, r in enumerate(rho):
            first.setdefault(r, t)
        ka = tuple(a.surj[first[r]] for r in sorted(first))
        kb = tuple(b.surj[first[r]] for r in sorted(first))
        return Simp((Simp(a.label, ka), Simp(b.label, kb)), tuple(rho))

    def components(self, s: Simp):
        """Flattened tuple of factor simplices (recursing into nested products)."""
        out = []
        for fac, part in zip(self.factors, s.label):
            comp = Simp(part.label, tuple(part.surj[t] for t in s.surj))
            if isinstance(fac, ProductSet):
                out.extend(fac.components(comp))
            else:
                out.append(comp)
        return tuple(out)

    def projection(self, i):
        """Simplicial map to factor ``i`` as a dict label -> Simp."""
        return {lab: lab[i] for lab in self.dim_of}


def product(A, B, check=True):
    return ProductSet(A, B, check=check)


# model simplicial sets ------------------------------------------------------

def standard_simplex(n):
    """Delta^n; labels are increasing vertex tuples."""
    simp = {k: [c for c in itertools.combinations(range(n + 1), k + 1)] for k in range(n + 1)}
    faces = {c: [c[:i] + c[i + 1:] for i in range(len(c))] for k, cs in simp.items() if k
             for c in cs}
    return SimplicialSet(simp, faces, name=f"D{n}")


def simplicial_circle(vertices=1):
    """Circle with ``vertices`` vertices and as many edges, oriented cyclically."""
    vs = [f"v{i}" for i in range(vertices)]
    es = [f"e{i}" for i in range(vertices)]
    faces = {es[i]: [vs[(i + 1) % vertices], vs[i]] for i in range(vertices)}
    return SimplicialSet({0: vs, 1: es}, faces, name="S1")


def sphere(k):
    """Minimal model of S^k: one vertex and one k-simplex with collapsed faces."""
    if k == 0:
        return SimplicialSet({0: ["*", "o"]}, {}, name="S0")
    pt = Simp("*", (0,) * k)
    return SimplicialSet({0: ["*"], k: ["s"]}, {"s": [pt] * (k + 1)}, name=f"S{k}")


# ---------------------------------------------------------------------------
# shuffles and the Eilenberg-Zilber operator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Shuffle:
    """(n, m)-shuffle: the positions ``subset`` of {1..n+m} where the first
    coordinate of the staircase advances."""

    n: int
    m: int
    subset: tuple

    @property
    def inversions(self):
        rest = [c for c in range(1, self.n + self.m + 1) if c not in self.subset]
        return sum(1 for s in self.subset for c in rest if c < s)

    @property
    def sign(self):
        return -1 if self.inversions % 2 else 1

    def staircase(self):
        """The two monotone maps [n+m] -> [n] and [n+m] -> [m]."""
        first = tuple(sum(1 for s in self.subset if s <= t) for t in range(self.n + self.m + 1))
        second = tuple(t - f for t, f in enumerate(first))
        return first, second


def shuffles(n, m):
    for sub in itertools.combinations(range(1, n + m + 1), n):
        yield Shuffle(n, m, sub)


def ez(P: ProductSet, a: Simp, b: Simp):
    """Eilenberg-Zilber image of ``a (x) b`` as a chain ``{label: coeff}`` on ``P``."""
    A, B = P.factors
    n, m = len(a.surj) - 1, len(b.surj) - 1
    out = {}
    for sh in shuffles(n, m):
        ta, tb = sh.staircase()
        s = P.normalize(A.apply(a, ta), B.apply(b, tb))
        if not is_degenerate(s):
            _add(out, s.label, sh.sign)
    return out


def ez_chain(P: ProductSet, ca, cb):
    """Bilinear extension of :func:`ez` to chains on the factors."""
    A, B = P.factors
    out = {}
    for x, c in ca.items():
        for y, e in cb.items():
            for lab, v in ez(P, A.nd(x), B.nd(y)).items():
                _add(out, lab, c * e * v)
    return out


def _flatten(P: ProductSet, chain):
    out = {}
    for lab, c in chain.items():
        _add(out, P.components(P.nd(lab)), c)
    return out


def multi_shuffle(sets, simplices):
    """Iterated shuffle product of several simplices, keyed by component tuples."""
    dims = [len(s.surj) - 1 for s in simplices]
    total = sum(dims)
    out = {}
    for word in set(itertools.permutations(sum(([i] * d for i, d in enumerate(dims)), []))):
        inv = sum(1 for x in range(total) for y in range(x + 1, total) if word[x] > word[y])
        comps = []
        for i, (S, s) in enumerate(zip(sets, simplices)):
            theta = tuple(sum(1 for w in word[:t] if w == i) for t in range(total + 1))
            comps.append(S.apply(s, theta))
        if _jointly_degenerate(comps):
            continue
        _add(out, tuple(comps), -1 if inv % 2 else 1)
    return out


def _jointly_degenerate(comps):
    n = len(comps[0].surj) - 1
    return any(all(c.surj[t] == c.surj[t + 1] for c in comps) for t in range(n))


def ez_identities(max_degree=5):
    """Exhaustive check of the shuffle-product identities on standard simplices.

    For every bidegree (n, m) with n + m <= ``max_degree`` the top simplices
    of Delta^n and Delta^m are multiplied and compared against

    - the term count binomial(n+m, n);
    - the derivation rule ``d P(a,b) = P(da, b) + e P(a, db)`` where the sign
      ``e`` is found by trying both values;
    - graded commutativity ``T P(a,b) = (-1)^(nm) P(b,a)`` with T the swap;
    - associativity ``P(P(a,b),c) = P(a,P(b,c)) = P3(a,b,c)`` for n+m+k <= max_degree.

    Returns
    -------
    dict
        ``rows`` (one per check), ``ok`` and the observed derivation sign
        rule.
    """
    rows = []
    simplex = {}

    def delta(n):
        if n not in simplex:
            simplex[n] = standard_simplex(n)
        return simplex[n]

    products = {}

    def prod(*sets):
        key = tuple(id(s) for s in sets)
        if key not in products:
            products[key] = product(*sets, check=False)
        return products[key]

    sign_n, sign_nm = True, True
    for total in range(max_degree + 1):
        for n in range(total + 1):
            m = total - n
            A, B = delta(n), delta(m)
            P = prod(A, B)
            a, b = A.nd(_identity(n)), B.nd(_identity(m))
            pab = ez(P, a, b)
            rows.append({"check": "terms", "n": n, "m": m, "terms": len(pab),
                         "expected": comb(n + m, n), "ok": len(pab) == comb(n + m, n)})
            lhs = P.boundary_chain(pab)
            first = ez_chain(P, A.boundary_chain({a.label: 1}), {b.label: 1})
            second = ez_chain(P, {a.label: 1}, B.boundary_chain({b.label: 1}))
            signs = []
            for e in (1, -1):
                rhs = dict(first)
                for k, v in second.items():
                    _add(rhs, k, e * v)
                if rhs == lhs:
                    signs.append(e)
            if signs and (-1) ** n not in signs:
                sign_n = False
            if signs and (-1) ** (n * m) not in signs:
                sign_nm = False
            rows.append({"check": "derivation", "n": n, "m": m, "signs": signs, "ok": bool(signs)})
            Q = prod(B, A)
            swapped = {}
            for lab, c in pab.items():
                _add(swapped, (lab[1], lab[0]), c)
            pba = {k: (-1) ** (n * m) * v for k, v in ez(Q, b, a).items()}
            rows.append({"check": "commutativity", "n": n, "m": m, "ok": swapped == pba})
            for k in range(max_degree - total + 1):
                C = delta(k)
                c = C.nd(_identity(k))
                AB = prod(A, B)
                left_P = prod(AB, C)
                left = {}
                for lab, v in pab.items():
                    for lab2, w in ez(left_P, AB.nd(lab), c).items():
                        _add(left, lab2, v * w)
                BC = prod(B, C)
                right_P = prod(A, BC)
                right = {}
                for lab, v in ez(BC, b, c).items():
                    for lab2, w in ez(right_P, a, BC.nd(lab)).items():
                        _add(right, lab2, v * w)
                triple = multi_shuffle((A, B, C), (a, b, c))
                lf, rf = _flatten(left_P, left), _flatten(right_P, right)
                rows.append({"check": "associativity", "n": n, "m": m, "k": k,
                             "terms": len(triple), "ok": lf == rf == triple})
    return {"rows": rows, "ok": all(r["ok"] for r in rows),
            "derivation_sign": {"(-1)^n": sign_n, "(-1)^(nm)": sign_nm}}


# ---------------------------------------------------------------------------
# cochains, cap products and Thom cochains
# ---------------------------------------------------------------------------

def evaluate(S: SimplicialSet, phi, s: Simp):
    """Value of a cochain ``{label: value}`` on a simplex (zero if degenerate)."""
    if is_degenerate(s):
        return 0
    return phi.get(s.label, 0)


def coboundary(S: SimplicialSet, phi, k):
    """``(d phi)(tau) = phi(d tau)`` on the nondegenerate (k+1)-simplices."""
    out = {}
    for x in S.simplices.get(k + 1, []):
        v = sum(c * phi.get(y, 0) for y, c in S.boundary_chain({x: 1}).items())
        if v:
            out[x] = v
    return out


def cap(S: SimplicialSet, phi, k, chain):
    """Front-face cap product ``phi ∩ sigma = phi(sigma|[0..k]) sigma|[k..n]``."""
    out = {}
    for x, c in chain.items():
        s = S.nd(x)
        n = len(s.surj) - 1
        if n < k:
            raise ValueError("cochain degree exceeds chain degree")
        v = evaluate(S, phi, S.apply(s, tuple(range(k + 1))))
        if not v:
            continue
        back = S.apply(s, tuple(range(k, n + 1)))
        if not is_degenerate(back):
            _add(out, back.label, c * v)
    return out


def cap_chain_map_check(S: SimplicialSet, phi, k):
    """Check ``d(phi ∩ s) = e (phi ∩ ds)`` on every simplex, for a closed ``phi``.

    Returns the list of signs ``e`` that work in every degree (empty on
    failure) keyed by degree.
    """
    if coboundary(S, phi, k):
        raise ValueError("cochain is not closed")
    report = {}
    for n in range(k, S.dimension + 1):
        ok = []
        for e in (1, -1):
            good = True
            for x in S.simplices.get(n, []):
                lhs = S.boundary_chain(cap(S, phi, k, {x: 1})) if n > k else {}
                rhs = {y: e * v for y, v in cap(S, phi, k, S.boundary_chain({x: 1})).items()} \
                    if n > k else {}
                if lhs != rhs:
                    good = False
                    break
            if good:
                ok.append(e)
        report[n] = ok
    return report


def thom_cochain(P: ProductSet, k, disc_factor=1):
    """Thom cochain of the trivial disc bundle ``P = B x Delta^k``.

    The cochain is the pullback of the top cochain of (Delta^k, boundary):
    it equals 1 on the k-simplices whose disc component is the nondegenerate
    top simplex and 0 elsewhere.  It vanishes on degenerate simplices and on
    everything lying over the boundary sphere.
    """
    top = _identity(k)
    out = {}
    for lab in P.simplices.get(k, []):
        part = lab[disc_factor]
        if part.label == top and part.surj == top:
            out[lab] = 1
    return out


def sphere_side(P: ProductSet, k, disc_factor=1):
    """Labels of ``P = B x Delta^k`` lying over the boundary of the disc."""
    full = set(range(k + 1))
    return [lab for lab in P.dim_of
            if set(lab[disc_factor].label) != full]


def thom_isomorphism_check(B: SimplicialSet, k, ring="F2"):
    """Cap with the Thom cochain, then project: H(B x D^k, B x S^{k-1}) -> H(B).

    Returns the relative ranks, base ranks (shifted by k) and the rank of the
    induced map per degree.
    """
    field = parse_ring(ring)
    D = standard_simplex(k)
    P = product(B, D)
    tau = thom_cochain(P, k)
    side = set(sphere_side(P, k))
    rel = P.chain_complex(field, subcomplex=side)
    base = B.chain_complex(field)
    proj = P.projection(0)
    rel_h, base_h = homology(rel), homology(base)
    induced = {}
    for n in rel.degrees():
        m = n - k
        if m < 0 or m not in base.generators:
            continue
        tgt_idx = {x: i for i, x in enumerate(base.generators[m])}
        mat = np.zeros((len(base.generators[m]), rel.dim(n)), dtype=object)
        for col, x in enumerate(rel.generators[n]):
            for y, c in cap(P, tau, k, {x: 1}).items():
                img = P.map_simplex(proj, P.nd(y), B)
                if not is_degenerate(img):
                    mat[tgt_idx[img.label], col] += c
        induced[n] = induced_rank(field, mat, rel.d(n), rel.d(n + 1), base.d(m + 1))
    ok = all(induced.get(n, 0) == rel_h.ranks[n] == base_h.ranks.get(n - k, 0)
             for n in rel.degrees())
    return {"relative": rel_h.ranks, "base": base_h.ranks, "induced": induced, "ok": ok}

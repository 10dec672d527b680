"""Spectral sequences of filtered chain complexes over a field.

Pages are computed directly from the filtration with the cycle/boundary
description

    Z^r_p = F_p ∩ d^{-1}(F_{p-r}),
    E^r_p = Z^r_p / (Z^{r-1}_{p-1} + d Z^{r-1}_{p+r-1}),

one total degree at a time.  Each page stores a basis of representatives,
so products and differentials can be evaluated on actual chains.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .algebra import (ChainComplex, Field, ProductSet, SimplicialSet, cap, ez,
                      homology, is_degenerate, parse_ring, product)


class FiltrationError(ValueError):
    """The boundary raises filtration, or a pairing is not a filtered chain map."""


class FilteredChainComplex:
    """Chain complex with an integer filtration level on every generator.

    Parameters
    ----------
    complex : ChainComplex
    filtration : dict
        Degree -> list of levels aligned with ``complex.generators``.
    """

    def __init__(self, complex: ChainComplex, filtration, check=True):
        self.complex = complex
        self.filtration = {int(n): [int(v) for v in f] for n, f in filtration.items()}
        for n in complex.degrees():
            self.filtration.setdefault(n, [])
            if len(self.filtration[n]) != complex.dim(n):
                raise FiltrationError(f"filtration length mismatch in degree {n}")
        if check:
            self.check()

    @property
    def levels(self):
        vals = [v for f in self.filtration.values() for v in f]
        return (min(vals), max(vals)) if vals else (0, 0)

    def degrees(self):
        return self.complex.degrees()

    def level_of(self, n, label):
        return self.filtration[n][self.complex.generators[n].index(label)]

    def check(self):
        for n in self.degrees():
            d = self.complex.d(n)
            if d.size == 0:
                continue
            rows, cols = np.nonzero(d != 0)
            for i, j in zip(rows, cols):
                if self.filtration[n - 1][i] > self.filtration[n][j]:
                    raise FiltrationError(f"boundary raises filtration in degree {n}")
        return True

    def to_dict(self):
        return {"complex": self.complex.to_dict(),
                "filtration": {str(n): f for n, f in self.filtration.items()}}


def degeneracy_filtration(E: SimplicialSet, B: SimplicialSet, fmap, ring="F2"):
    """Filter the normalized chains of ``E`` by degeneracy over ``B``.

    A simplex of ``E`` sits in level n when its image in ``B`` is a
    degeneracy of an n-simplex.  ``fmap`` sends nondegenerate labels of ``E``
    to simplices of ``B`` in normal form and is checked to be simplicial.
    """
    E.check_map(fmap, B)
    cc = E.chain_complex(ring)
    filt = {n: [len(set(fmap[x].surj)) - 1 for x in gens] for n, gens in cc.generators.items()}
    return FilteredChainComplex(cc, filt)


def product_map(P: ProductSet, Q: ProductSet, f, g):
    """Componentwise map ``P = A x A' -> Q = B x B'`` from maps on the factors."""
    A, A2 = P.factors
    out = {}
    for lab in P.dim_of:
        a, b = lab
        out[lab] = Q.normalize(A.map_simplex(f, a, Q.factors[0]), A2.map_simplex(g, b, Q.factors[1]))
    return out


# ---------------------------------------------------------------------------
# pages
# ---------------------------------------------------------------------------

@dataclass
class Page:
    """One page E^r with bases of representatives and the differential d_r.

    ``groups[(p, q)]`` is the rank of E^r_{p,q}; ``basis[(p, q)]`` holds
    representative chains (columns in total degree p+q); ``d[(p, q)]`` is
    the matrix of d_r : E^r_{p,q} -> E^r_{p-r,q+r-1}.
    """

    r: int
    groups: dict
    basis: dict = dc_field(repr=False, default_factory=dict)
    denominators: dict = dc_field(repr=False, default_factory=dict)
    d: dict = dc_field(repr=False, default_factory=dict)

    def table(self):
        return [[p, q, k] for (p, q), k in sorted(self.groups.items()) if k]

    def total(self, n):
        return sum(k for (p, q), k in self.groups.items() if p + q == n)

    def to_dict(self):
        diffs = []
        for (p, q), m in sorted(self.d.items()):
            if m.size and np.any(m != 0):
                diffs.append({"source": [p, q], "target": [p - self.r, q + self.r - 1],
                              "matrix": [[str(v) for v in row] for row in m.tolist()]})
        return {"r": self.r, "table": self.table(), "differentials": diffs}


class _Engine:
    """Subspace bookkeeping for one filtered complex over one field."""

    def __init__(self, fc: FilteredChainComplex, field: Field):
        self.fc = fc
        self.field = field
        self.cc = fc.complex
        self.d = {n: field.array(self.cc.d(n), self.cc.d(n).shape) for n in range(
            min(self.cc.degrees(), default=0), max(self.cc.degrees(), default=0) + 2)}
        self.f = {n: np.array(fc.filtration.get(n, []), dtype=int) for n in self.d}
        self._z = {}

    def dim(self, n):
        return len(self.f.get(n, []))

    def F(self, p, n):
        idx = np.nonzero(self.f.get(n, np.zeros(0)) <= p)[0]
        m = self.field.zeros((self.dim(n), len(idx)))
        for k, i in enumerate(idx):
            m[i, k] = 1
        return m

    def Z(self, r, p, n):
        """Basis of Z^r_p in degree n (columns); Z^r = F_p for r <= 0."""
        key = (max(r, 0), p, n)
        if key in self._z:
            return self._z[key]
        cols = np.nonzero(self.f.get(n, np.zeros(0)) <= p)[0]
        if r <= 0 or n - 1 not in self.f or self.dim(n - 1) == 0:
            out = self.F(p, n)
        else:
            rows = np.nonzero(self.f[n - 1] > p - r)[0]
            sub = self.d[n][np.ix_(rows, cols)]
            null = self.field.nullspace(sub) if len(cols) else self.field.zeros((0, 0))
            out = self.field.zeros((self.dim(n), null.shape[1]))
            out[cols] = null
        self._z[key] = out
        return out

    def boundary_image(self, vecs, n):
        """d applied to the columns of ``vecs`` living in degree n."""
        if n - 1 not in self.d or self.dim(n - 1) == 0:
            return self.field.zeros((0, vecs.shape[1]))
        return self.field.matmul(self.d[n], vecs)

    def denominator(self, r, p, n):
        num = self.Z(r - 1, p - 1, n)
        up = self.Z(r - 1, p + r - 1, n + 1) if self.dim(n + 1) else self.field.zeros((0, 0))
        img = self.boundary_image(up, n + 1) if up.shape[1] else self.field.zeros((self.dim(n), 0))
        return np.concatenate([num, img], axis=1)

    def coords(self, basis, denom, vecs):
        """Coordinates of ``vecs`` in ``basis`` modulo ``denom`` (None if not in span)."""
        if vecs.shape[1] == 0:
            return self.field.zeros((basis.shape[1], 0))
        if basis.shape[1] == 0 and denom.shape[1] == 0:
            return self.field.zeros((0, vecs.shape[1])) if not np.any(vecs != 0) else None
        stacked = np.concatenate([basis, denom], axis=1)
        sol = self.field.solve(stacked, vecs)
        if sol is None:
            return None
        return sol[:basis.shape[1]]


def pages(fc: FilteredChainComplex, field="F2", up_to=None, start=0):
    """Pages E^start, ..., E^up_to of the spectral sequence of ``fc``.

    With ``up_to=None`` pages are produced until the sequence has certainly
    stabilized: two consecutive pages agree and r exceeds the filtration
    width, after which every differential vanishes for degree reasons.
    """
    field = parse_ring(field)
    if field == "Z":
        raise ValueError("pages are computed over a field")
    eng = _Engine(fc, field)
    lo, hi = fc.levels
    width = hi - lo
    out = []
    r = start
    while True:
        out.append(_page(eng, r, lo, hi))
        if up_to is not None and r >= up_to:
            break
        if up_to is None and len(out) >= 2 and r - 1 > width \
                and out[-1].groups == out[-2].groups:
            break
        r += 1
    return out


def _page(eng: _Engine, r, lo, hi):
    f = eng.field
    groups, basis, denoms, diffs = {}, {}, {}, {}
    degrees = eng.fc.degrees()
    for n in degrees:
        for p in range(lo, hi + 1):
            z = eng.Z(r, p, n)
            den = eng.denominator(r, p, n)
            reps = f.complement(den, z)
            groups[(p, n - p)] = reps.shape[1]
            basis[(p, n - p)] = reps
            denoms[(p, n - p)] = den
    for (p, q), reps in basis.items():
        n = p + q
        tgt = (p - r, q + r - 1)
        if tgt not in basis:
            diffs[(p, q)] = f.zeros((0, reps.shape[1]))
            continue
        img = eng.boundary_image(reps, n)
        if img.shape[0] == 0:
            diffs[(p, q)] = f.zeros((basis[tgt].shape[1], reps.shape[1]))
            continue
        c = eng.coords(basis[tgt], denoms[tgt], img)
        if c is None:
            raise FiltrationError(f"d_{r} representative leaves Z^{r}_{p - r}")
        diffs[(p, q)] = c
    return Page(r, groups, basis, denoms, diffs)


def check_pages(page_list, field="F2"):
    """Independent consistency checks on consecutive pages.

    Checks d_r ∘ d_r = 0, that E^{r+1} has the ranks of the homology of
    (E^r, d_r), and that every nonzero differential has bidegree (-r, r-1).
    """
    field = parse_ring(field)
    report = []
    for cur, nxt in zip(page_list, page_list[1:]):
        sq_ok = True
        for (p, q), m in cur.d.items():
            tgt = (p - cur.r, q + cur.r - 1)
            m2 = cur.d.get(tgt)
            if m2 is None or m.size == 0 or m2.size == 0:
                continue
            if np.any(field.matmul(m2, m) != 0):
                sq_ok = False
        hom_ok = True
        for (p, q), k in cur.groups.items():
            out = cur.d.get((p, q))
            rank_out = field.rank(out) if out is not None and out.size else 0
            src = (p + cur.r, q - cur.r + 1)
            inc = cur.d.get(src)
            rank_in = field.rank(inc) if inc is not None and inc.size else 0
            if nxt.groups.get((p, q), 0) != k - rank_out - rank_in:
                hom_ok = False
        bideg_ok = all((p - cur.r, q + cur.r - 1) in cur.groups or m.size == 0 or not np.any(m != 0)
                       for (p, q), m in cur.d.items())
        report.append({"r": cur.r, "d_squared_zero": sq_ok, "next_is_homology": hom_ok,
                       "bidegree": bideg_ok, "ok": sq_ok and hom_ok and bideg_ok})
    return report


def collapse_page(page_list):
    """Smallest r whose page already has the ranks of the last page."""
    last = page_list[-1].groups
    for pg in page_list:
        if pg.groups == last:
            return pg.r
    return page_list[-1].r


def abutment_check(fc: FilteredChainComplex, field="F2", page_list=None):
    """Compare total E^∞ ranks with the homology of the underlying complex."""
    field = parse_ring(field)
    page_list = page_list or pages(fc, field)
    inf = page_list[-1]
    h = homology(fc.complex, field)
    totals = {n: inf.total(n) for n in fc.degrees()}
    return {"e_infinity": totals, "homology": h.ranks,
            "ok": all(totals[n] == h.ranks.get(n, 0) for n in fc.degrees())}


# ---------------------------------------------------------------------------
# multiplicative structure
# ---------------------------------------------------------------------------

class Pairing:
    """Bilinear chain-level pairing of two filtered complexes into a third.

    Parameters
    ----------
    left, right, target : FilteredChainComplex
    rule : callable
        ``rule(x_label, y_label) -> {target_label: coeff}`` on generators.
    shift : int
        Filtration drop allowed by the pairing: levels must satisfy
        ``level(term) <= level(x) + level(y) - shift``.
    """

    def __init__(self, left, right, target, rule, shift=0):
        self.left, self.right, self.target = left, right, target
        self.rule = rule
        self.shift = shift
        self._cache = {}
        self._tidx = {n: {g: i for i, g in enumerate(gs)}
                      for n, gs in target.complex.generators.items()}

    def on_generators(self, n, i, m, j):
        key = (n, i, m, j)
        if key not in self._cache:
            x = self.left.complex.generators[n][i]
            y = self.right.complex.generators[m][j]
            self._cache[key] = self.rule(x, y)
        return self._cache[key]

    def apply(self, field, u, n, v, m):
        """Pairing of coordinate vectors ``u`` (degree n) and ``v`` (degree m)."""
        dim = self.target.complex.dim(n + m)
        out = field.zeros(dim)
        for i in np.nonzero(u != 0)[0]:
            for j in np.nonzero(v != 0)[0]:
                for lab, c in self.on_generators(n, i, m, j).items():
                    out[self._tidx[n + m][lab]] += u[i] * v[j] * c
        return field.reduce(out)

    def check(self, field):
        """Verify filtration additivity (with shift) and the Leibniz rule on chains."""
        L, R, T = self.left, self.right, self.target
        bad_filt, bad_chain = 0, 0
        for n, xs in L.complex.generators.items():
            for m, ys in R.complex.generators.items():
                if n + m not in T.complex.generators:
                    continue
                for i in range(len(xs)):
                    for j in range(len(ys)):
                        img = self.on_generators(n, i, m, j)
                        lev = L.filtration[n][i] + R.filtration[m][j] - self.shift
                        for lab in img:
                            if T.filtration[n + m][self._tidx[n + m][lab]] > lev:
                                bad_filt += 1
                        ex = np.zeros(len(xs), dtype=np.int64)
                        ex[i] = 1
                        ey = np.zeros(len(ys), dtype=np.int64)
                        ey[j] = 1
                        ex, ey = field.array(ex), field.array(ey)
                        lhs = self._d(field, T, self.apply(field, ex, n, ey, m), n + m)
                        rhs = field.zeros(lhs.shape)
                        if n > 0:
                            rhs = rhs + self.apply(field, self._d(field, L, ex, n), n - 1, ey, m)
                        if m > 0:
                            rhs = rhs + (-1) ** n * self.apply(field, ex, n, self._d(field, R, ey, m), m - 1)
                        if lhs.size and np.any(field.reduce(lhs - rhs) != 0):
                            bad_chain += 1
        return {"filtration_violations": bad_filt, "chain_map_violations": bad_chain,
                "ok": bad_filt == 0 and bad_chain == 0}

    @staticmethod
    def _d(field, fc, vec, n):
        if n == 0:
            return field.zeros(0)
        return field.matmul(field.array(fc.complex.d(n), fc.complex.d(n).shape), vec)


def page_product(pairing: Pairing, field="F2", up_to=None):
    """Leibniz check for the products induced on pages by a filtered pairing.

    For every computed page (from E^0 on) and every pair of basis classes x, y the
    class of the product is pushed through d_r and compared with
    ``d_r(x) y + (-1)^|x| x d_r(y)``, where ``d_r(x)`` is expanded in the
    page basis before multiplying.
    """
    field = parse_ring(field)
    chk = pairing.check(field)
    if not chk["ok"]:
        raise FiltrationError(f"pairing is not a filtered chain map: {chk}")
    L, R, T = pairing.left, pairing.right, pairing.target
    s = pairing.shift
    pl, pr, pt = pages(L, field, up_to), pages(R, field, up_to), pages(T, field, up_to)
    depth = min(len(pl), len(pr), len(pt))
    eng_t = _Engine(T, field)
    rows = []
    for k in range(depth):
        el, er, et = pl[k], pr[k], pt[k]
        r = el.r
        checked, failures = 0, 0
        for (p1, q1), b1 in el.basis.items():
            for (p2, q2), b2 in er.basis.items():
                n1, n2 = p1 + q1, p2 + q2
                tp, tq = p1 + p2 - s, n1 + n2 - (p1 + p2 - s)
                if (tp, tq) not in et.basis or b1.shape[1] == 0 or b2.shape[1] == 0:
                    continue
                tgt = (tp - r, tq + r - 1)
                for a in range(b1.shape[1]):
                    for b in range(b2.shape[1]):
                        x, y = b1[:, a], b2[:, b]
                        prod = pairing.apply(field, x, n1, y, n2).reshape(-1, 1)
                        c = eng_t.coords(et.basis[(tp, tq)], et.denominators[(tp, tq)], prod)
                        if c is None:
                            failures += 1
                            continue
                        lhs = field.matmul(et.d[(tp, tq)], c)[:, 0] if et.d[(tp, tq)].size \
                            else field.zeros(et.d[(tp, tq)].shape[0])
                        rhs = field.zeros(lhs.shape[0])
                        if tgt in et.basis:
                            rhs = rhs + _term(pairing, field, eng_t, et, tgt, el, (p1, q1), a,
                                              y, n2, left=True)
                            rhs = rhs + (-1) ** n1 * _term(pairing, field, eng_t, et, tgt, er,
                                                           (p2, q2), b, x, n1, left=False)
                        checked += 1
                        if lhs.size and np.any(field.reduce(lhs - rhs) != 0):
                            failures += 1
        rows.append({"r": r, "pairs": checked, "failures": failures, "ok": failures == 0})
    return {"pairing": chk, "pages": rows, "ok": all(r["ok"] for r in rows)}


def _term(pairing, field, eng_t, et, tgt, page, src, col, other, n_other, left):
    """Class of d_r(basis element) times ``other`` in the target page."""
    p, q = src
    dmat = page.d.get((p, q))
    dst = (p - page.r, q + page.r - 1)
    out = field.zeros(et.basis[tgt].shape[1])
    if dmat is None or dmat.size == 0 or dst not in page.basis:
        return out
    reps = page.basis[dst]
    n_dst = sum(dst)
    for i in np.nonzero(dmat[:, col] != 0)[0]:
        if left:
            prod = pairing.apply(field, reps[:, i], n_dst, other, n_other)
        else:
            prod = pairing.apply(field, other, n_other, reps[:, i], n_dst)
        c = eng_t.coords(et.basis[tgt], et.denominators[tgt], prod.reshape(-1, 1))
        if c is None:
            raise FiltrationError("product of page representatives left the cycle space")
        out = field.reduce(out + dmat[i, col] * c[:, 0])
    return out


# ---------------------------------------------------------------------------
# model constructions
# ---------------------------------------------------------------------------

def product_model(F: SimplicialSet, B: SimplicialSet, field="F2"):
    """Filtered chains of ``F x B`` by degeneracy over the projection to ``B``."""
    P = product(F, B)
    return P, degeneracy_filtration(P, B, P.projection(1), field)


def ez_pairing(P: ProductSet, fc: FilteredChainComplex, field="F2"):
    """Shuffle-product pairing ``C(P) (x) C(P) -> C(P x P)`` filtered over ``B x B``.

    ``P = F x B``; the target is filtered by degeneracy over ``B x B``.
    """
    F, B = P.factors
    PP = product(P, P)
    BB = product(B, B)
    proj = P.projection(1)
    fmap = product_map(PP, BB, proj, proj)
    target = degeneracy_filtration(PP, BB, fmap, field)

    def rule(x, y):
        return ez(PP, P.nd(x), P.nd(y))

    return Pairing(fc, fc, target, rule), PP


def unit_check(P: ProductSet, fc: FilteredChainComplex, field="F2", r=2):
    """Multiplying by a vertex then projecting away the first factor is the identity on E^r."""
    field = parse_ring(field)
    PP = product(P, P)
    vertex = P.simplices[0][0]
    pl = pages(fc, field, up_to=r)
    page = pl[-1]
    eng = _Engine(fc, field)
    idx = {n: {g: i for i, g in enumerate(gs)} for n, gs in fc.complex.generators.items()}
    ok = True
    for (p, q), reps in page.basis.items():
        n = p + q
        for a in range(reps.shape[1]):
            img = field.zeros(fc.complex.dim(n))
            for i in np.nonzero(reps[:, a] != 0)[0]:
                x = fc.complex.generators[n][i]
                for lab, c in ez(PP, P.nd(vertex), P.nd(x)).items():
                    comp = PP.components(PP.nd(lab))
                    second = _pair_simp(P, comp[-2:])
                    if is_degenerate(second):
                        continue
                    img[idx[n][second.label]] += reps[i, a] * c
            c = eng.coords(reps, page.denominators[(p, q)], field.reduce(img).reshape(-1, 1))
            expect = field.zeros((reps.shape[1], 1))
            expect[a] = 1
            if c is None or np.any(field.reduce(c - expect) != 0):
                ok = False
    return {"r": r, "ok": ok}


def _pair_simp(P: ProductSet, comps):
    return P.normalize(*comps)


def thom_shift_check(F: SimplicialSet, B: SimplicialSet, k, field="F2"):
    """Capping with a disc-bundle Thom cochain lowers the degeneracy level by k.

    The total space is ``F x (B x Delta^k)`` over the base ``B x Delta^k``; the
    disc directions are base directions, as for the normal bundle of a
    diagonal.  The Thom cochain is pulled back from the disc factor.  Every
    basis simplex with nonzero cap is checked individually.
    """
    from .algebra import standard_simplex
    D = standard_simplex(k)
    base = product(B, D)
    E = product(F, base)
    fmap = E.projection(1)
    fc = degeneracy_filtration(E, base, fmap, field)
    tau = {}
    top = tuple(range(k + 1))
    for lab in E.simplices.get(k, []):
        s = E.nd(lab)
        disc = E.components(s)[-1]
        if disc.label == top and disc.surj == top:
            tau[lab] = 1
    shifts = []
    for n, gens in fc.complex.generators.items():
        for i, x in enumerate(gens):
            if n < k:
                continue
            img = cap(E, tau, k, {x: 1})
            if not img:
                continue
            lev_in = fc.filtration[n][i]
            for y in img:
                lev_out = fc.level_of(n - k, y)
                shifts.append(lev_in - lev_out)
    return {"k": k, "capped": len(shifts), "shifts": sorted(set(shifts)),
            "ok": bool(shifts) and all(s == k for s in shifts)}

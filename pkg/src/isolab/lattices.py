"""Lattices and orders inside the endomorphism algebra.

A lattice is presented by element handles together with the exact integer
matrix of pairwise traces Tr(b_i b_j).  All linear algebra is exact
(Fractions / big integers); discriminants are reported as |det|.
"""

import itertools
import math
from fractions import Fraction

import sympy

from .endos import EndoRep
from .errors import (RankDeficient, NotIntegral, NotAnOrder, BoundExceeded,
                     NotDivisible)
from .rand import make_rng

# spec'd aliases
NotRankFour = RankDeficient
NonIntegral = NotIntegral


class DivisionFailed(NotDivisible):
    """Abstract maximalization produced an element the geometric divide
    rejects (bug trap)."""


# -- exact small linear algebra ----------------------------------------------

def _det(M):
    n = len(M)
    M = [[Fraction(x) for x in row] for row in M]
    det = Fraction(1)
    for c in range(n):
        piv = next((r for r in range(c, n) if M[r][c]), None)
        if piv is None:
            return Fraction(0)
        if piv != c:
            M[c], M[piv] = M[piv], M[c]
            det = -det
        det *= M[c][c]
        inv = 1 / M[c][c]
        for r in range(c + 1, n):
            if M[r][c]:
                f = M[r][c] * inv
                M[r] = [a - f * b for a, b in zip(M[r], M[c])]
    return det

def _solve(A, b):
    """Exact solution of A x = b, or None when A is singular."""
    n = len(A)
    M = [[Fraction(x) for x in row] + [Fraction(b[i])]
         for i, row in enumerate(A)]
    for c in range(n):
        piv = next((r for r in range(c, n) if M[r][c]), None)
        if piv is None:
            return None
        M[c], M[piv] = M[piv], M[c]
        inv = 1 / M[c][c]
        M[c] = [a * inv for a in M[c]]
        for r in range(n):
            if r != c and M[r][c]:
                f = M[r][c]
                M[r] = [a - f * bb for a, bb in zip(M[r], M[c])]
    return [row[n] for row in M]


def _norm_pair(x, y):
    """Tr(x * conj(y)): the positive definite pairing polarizing deg."""
    return x.trace() * y.trace() - (x * y).trace()


# -- lattices -----------------------------------------------------------------

class GramLattice:
    """Z-span of endomorphism handles with its exact trace pairing."""

    __slots__ = ('curve', 'elems', 'ref', 'ref_gram', 'basis', 'coords',
                 '_gram', '_disc')

    def __init__(self, curve, elems, ref, ref_gram, basis, coords):
        self.curve = curve
        self.elems = elems          # original handles
        self.ref = ref              # independent frame (EndoReps)
        self.ref_gram = ref_gram    # norm-pairing Gram of the frame
        self.basis = basis          # realized lattice basis (EndoReps)
        self.coords = coords        # basis rows as Fractions wrt the frame
        self._gram = None
        self._disc = None

    @property
    def rank(self):
        return len(self.basis)

    def gram(self):
        """Matrix Tr(b_i b_j) over the lattice basis (exact integers)."""
        if self._gram is None:
            n = len(self.basis)
            G = [[0] * n for _ in range(n)]
            for i in range(n):
                for j in range(i, n):
                    t = (self.basis[i] * self.basis[j]).trace()
                    G[i][j] = G[j][i] = t
            self._gram = G
        return self._gram

    def disc(self):
        if self._disc is None:
            d = _det(self.gram())
            if d.denominator != 1:
                raise NotIntegral("non-integral discriminant (bug)")
            self._disc = abs(int(d))
        return self._disc

    def frame_coords(self, x):
        """Exact coordinates of x in the reference frame, or None when x
        leaves the span."""
        v = [_norm_pair(r, x) for r in self.ref]
        c = _solve(self.ref_gram, v)
        if c is None:
            return None
        # certify membership in the span: the projection residual must have
        # zero norm (the form Tr(x conj(x)) = 2 deg(x) is positive definite)
        nx = Fraction(x.degree())
        quad = sum(c[i] * c[j] * self.ref_gram[i][j]
                   for i in range(len(c)) for j in range(len(c)))
        resid = 2 * nx - 2 * sum(ci * vi for ci, vi in zip(c, v)) + quad
        if resid != 0:
            return None
        return c

    def basis_coords(self, x):
        """Coordinates of x over the lattice basis (Fractions), or None."""
        fc = self.frame_coords(x)
        if fc is None:
            return None
        A = [[self.coords[j][i] for j in range(self.rank)]
             for i in range(len(self.ref))]
        if self.rank == len(self.ref):
            return _solve(A, fc)
        # overdetermined: solve on an invertible square subsystem, check rest
        rows = _independent_rows([[A[i][j] for j in range(self.rank)]
                                  for i in range(len(self.ref))])
        sub = [A[i] for i in rows]
        rhs = [fc[i] for i in rows]
        c = _solve(sub, rhs)
        if c is None:
            return None
        for i in range(len(self.ref)):
            if sum(A[i][j] * c[j] for j in range(self.rank)) != fc[i]:
                return None
        return c

    def contains(self, x):
        c = self.basis_coords(x)
        return c is not None and all(ci.denominator == 1 for ci in c)

    def extend_rows(self, rows):
        """Same-frame lattice additionally spanned by the given frame
        coordinate rows (pure linear algebra; no pairings)."""
        allrows = [list(r) for r in self.coords] \
            + [[Fraction(x) for x in r] for r in rows]
        red = _hnf_frac(allrows)
        out = GramLattice(self.curve, list(self.elems), self.ref,
                          self.ref_gram,
                          [_materialize(self.curve, self.ref, r)
                           for r in red], red)
        if len(self.ref) == 4 and len(red) == 4:
            trp = _frame_data(self)['tr_prod']
            G = [[sum(red[i][a] * red[j][b] * trp[a][b]
                      for a in range(4) for b in range(4))
                  for j in range(4)] for i in range(4)]
            if all(x.denominator == 1 for row in G for x in row):
                out._gram = [[int(x) for x in row] for row in G]
        return out

    def element(self, int_coords):
        """Z-combination of the realized basis as an EndoRep."""
        acc = EndoRep.scalar(self.curve, 0)
        for c, b in zip(int_coords, self.basis):
            if c:
                acc = acc + b * int(c)
        return acc

    def to_json(self):
        return {
            'rank': self.rank,
            'traces': [[int(t) for t in row] for row in self.gram()],
            'disc': int(self.disc()),
            'elements': [
                {'den': b.den,
                 'terms': [[c, [list(s.key()) for s in steps]]
                           for c, steps in b.terms]}
                for b in self.basis],
        }


def _independent_rows(A):
    """Indices of a maximal independent row subset (exact elimination)."""
    out = []
    work = []
    for i, row in enumerate(A):
        cand = work + [[Fraction(x) for x in row]]
        # eliminate
        mat = [r[:] for r in cand]
        rank = 0
        cols = len(row)
        for c in range(cols):
            piv = next((r for r in range(rank, len(mat)) if mat[r][c]), None)
            if piv is None:
                continue
            mat[rank], mat[piv] = mat[piv], mat[rank]
            inv = 1 / mat[rank][c]
            mat[rank] = [a * inv for a in mat[rank]]
            for r in range(len(mat)):
                if r != rank and mat[r][c]:
                    f = mat[r][c]
                    mat[r] = [a - f * b for a, b in zip(mat[r], mat[rank])]
            rank += 1
        if rank == len(cand):
            out.append(i)
            work = cand
    return out


def _hnf_rows(rows):
    """Row-style HNF over Z of (coord_tuple, handle) pairs; returns reduced
    pairs spanning the same Z-module.  Coordinate entries are Fractions with
    a common denominator cleared internally."""
    if not rows:
        return []
    ncols = len(rows[0][0])
    den = 1
    for r, _ in rows:
        for x in r:
            den = den * x.denominator // math.gcd(den, x.denominator)
    work = [([int(x * den) for x in r], h) for r, h in rows
            if any(x for x in r)]
    out = []
    for c in range(ncols):
        pivs = [i for i, (r, _) in enumerate(work) if r[c]]
        if not pivs:
            continue
        while len(pivs) > 1:
            pivs.sort(key=lambda i: abs(work[i][0][c]))
            i0 = pivs[0]
            r0, h0 = work[i0]
            for i in pivs[1:]:
                r, h = work[i]
                q = r[c] // r0[c]
                if q:
                    work[i] = ([a - q * b for a, b in zip(r, r0)],
                               h - h0 * q)
            pivs = [i for i, (r, _) in enumerate(work) if r[c]]
        i0 = pivs[0]
        r0, h0 = work.pop(i0)
        if r0[c] < 0:
            r0 = [-a for a in r0]
            h0 = -h0
        # reduce earlier rows
        out = [([a - (r[c] // r0[c]) * b for a, b in zip(r, r0)],
                h - h0 * (r[c] // r0[c])) for r, h in out]
        out.append((r0, h0))
        work = [(r, h) for r, h in work if any(r)]
    return [([Fraction(x, den) for x in r], h) for r, h in out]


def lattice_from(elems):
    """GramLattice spanned by the given endomorphism handles."""
    elems = list(elems)
    if not elems:
        raise RankDeficient("empty generating set")
    curve = elems[0].curve
    for e in elems:
        if e.curve.key() != curve.key():
            raise NotIntegral("elements on different curves")
    # reference frame: greedy maximal independent subset under the norm form
    ref = []
    ref_gram = []
    for e in elems:
        if e.is_zero():
            continue
        cand = ref + [e]
        G = [[_norm_pair(a, b) for b in cand] for a in cand]
        if _det(G) != 0:
            ref = cand
            ref_gram = G
    if not ref:
        raise RankDeficient("all generators are zero")
    # coordinates of every generator, then HNF
    lat = GramLattice(curve, elems, ref, ref_gram, [], [])
    rows = []
    for e in elems:
        if e.is_zero():
            continue
        c = lat.frame_coords(e)
        if c is None:
            raise RankDeficient("generator outside the frame span (bug)")
        rows.append(([Fraction(x) for x in c], e))
    red = _hnf_rows(rows)
    lat.basis = [h for _, h in red]
    lat.coords = [r for r, _ in red]
    return lat


def lattice_extend(L, new_elems):
    """Smallest lattice containing L and the new handles."""
    return lattice_from(list(L.basis) + list(new_elems))


# -- orders -------------------------------------------------------------------

class OrderHandle:
    """A multiplicatively closed GramLattice containing [1]."""

    __slots__ = ('lattice', 'closure_certificate', '_index')

    def __init__(self, lattice, certificate):
        self.lattice = lattice
        self.closure_certificate = certificate
        self._index = None

    @property
    def curve(self):
        return self.lattice.curve

    @property
    def rank(self):
        return self.lattice.rank

    def disc(self):
        return self.lattice.disc()

    def basis(self):
        return self.lattice.basis

    def to_json(self):
        d = self.lattice.to_json()
        if self.rank == 4:
            d['index'] = int(index_in_maximal(self))
        return d


def _hnf_frac(rows):
    pairs = _hnf_rows([(list(r), _ZeroHandle()) for r in rows])
    return [list(r) for r, _ in pairs]


_frame_cache = {}


def _frame_data(L):
    """Multiplication tensor and trace data of a rank-4 frame, cached per
    frame object identity (frames are shared across derived lattices)."""
    key = (L.curve.key(), tuple(map(id, L.ref)))
    ent = _frame_cache.get(key)
    if ent is None:
        n = len(L.ref)
        ref = L.ref
        T = []
        for i in range(n):
            row = []
            for j in range(n):
                c = L.frame_coords(ref[i] * ref[j])
                if c is None:
                    raise NotAnOrder("frame product leaves the span (bug)")
                row.append([Fraction(x) for x in c])
            T.append(row)
        tr_ref = [r.trace() for r in ref]
        tr_prod = [[sum(T[a][b][k] * tr_ref[k] for k in range(n))
                    for b in range(n)] for a in range(n)]
        ent = {'ref': ref, 'T': T, 'tr_ref': tr_ref, 'tr_prod': tr_prod}
        _frame_cache[key] = ent
    return ent


def _prod_coords(T, u, v, n=4):
    """Frame coordinates of elem(u) * elem(v) through the tensor."""
    nzu = [a for a in range(n) if u[a]]
    nzv = [b for b in range(n) if v[b]]
    return [sum(u[a] * v[b] * T[a][b][k] for a in nzu for b in nzv)
            for k in range(n)]


def _materialize(curve, ref, fr):
    """The EndoRep sum(fr[i] * ref[i]) with Fraction coefficients."""
    D = 1
    for f in fr:
        D = D * f.denominator // math.gcd(D, f.denominator)
    acc = None
    for f, r in zip(fr, ref):
        c = int(f * D)
        if c:
            acc = r * c if acc is None else acc + r * c
    if acc is None:
        return EndoRep.scalar(curve, 0)
    if D == 1:
        return acc
    return EndoRep(curve, acc.terms, den=acc.den * D)


def _ring_closure_coords(L, max_rounds):
    """Closure of a full-rank lattice in coordinates: one round of EndoRep
    products for the frame multiplication tensor, then pure rational
    linear algebra.  Keeps basis handles small (frame combinations)."""
    n = len(L.ref)
    ref, ref_gram, curve = L.ref, L.ref_gram, L.curve
    ent = _frame_data(L)
    T, tr_ref, tr_prod = ent['T'], ent['tr_ref'], ent['tr_prod']
    C = [list(r) for r in L.coords]
    for _ in range(max_rounds):
        prods = [_prod_coords(T, ci, cj, n) for ci in C for cj in C]
        newC = _hnf_frac(C + prods)
        if newC == C:
            break
        C = newC
    else:
        raise NotAnOrder("ring closure did not stabilize")
    # certificate: product coordinates over the final basis
    A = [[C[j][i] for j in range(n)] for i in range(n)]
    cert = {}
    for i, ci in enumerate(C):
        for j, cj in enumerate(C):
            v = _prod_coords(T, ci, cj, n)
            x = _solve(A, v)
            if x is None or any(t.denominator != 1 for t in x):
                raise NotAnOrder("closed module lost closure (bug)")
            cert[(i, j)] = tuple(int(t) for t in x)
    basis = []
    for ci in C:
        b = _materialize(curve, ref, ci)
        tr = sum(f * t for f, t in zip(ci, tr_ref))
        if tr.denominator == 1:
            b._trace = int(tr)
        nrm = sum(ci[a] * ci[b] * ref_gram[a][b]
                  for a in range(n) for b in range(n)) / 2
        if nrm.denominator == 1:
            b._degree = int(nrm)
        basis.append(b)
    out = GramLattice(curve, list(L.elems), ref, ref_gram, basis, C)
    G = [[sum(C[i][a] * C[j][b] * tr_prod[a][b]
              for a in range(n) for b in range(n))
          for j in range(n)] for i in range(n)]
    if all(x.denominator == 1 for row in G for x in row):
        out._gram = [[int(x) for x in row] for row in G]
    return OrderHandle(out, cert)


def ring_closure(L, max_rounds=16):
    """Smallest order containing L (adjoin 1 and all products until the
    module stabilizes)."""
    one = EndoRep.scalar(L.curve, 1)
    if not L.contains(one):
        L = lattice_extend(L, [one])
    if L.rank == 4 and len(L.ref) == 4:
        return _ring_closure_coords(L, max_rounds)
    for _ in range(max_rounds):
        new = []
        cert = {}
        bas = L.basis
        for i in range(len(bas)):
            for j in range(len(bas)):
                prod = bas[i] * bas[j]
                c = L.basis_coords(prod)
                if c is None or any(x.denominator != 1 for x in c):
                    new.append(prod)
                else:
                    cert[(i, j)] = tuple(int(x) for x in c)
        if not new:
            return OrderHandle(L, cert)
        L = lattice_extend(L, new)
        if L.rank == 4 and len(L.ref) == 4:
            return _ring_closure_coords(L, max_rounds)
    raise NotAnOrder("ring closure did not stabilize")


def absorb(R, elems):
    """Smallest order containing the rank-4 order R and the given handles,
    kept on R's frame so the closure stays in coordinates."""
    L = R.lattice
    rows = []
    for e in elems:
        c = L.frame_coords(e)
        if c is None:
            raise RankDeficient("element outside the frame span (bug)")
        rows.append(c)
    newL = L.extend_rows(rows)
    if newL.coords == L.coords:
        return R
    return _ring_closure_coords(newL, 16)


def index_in_maximal(R):
    """[End(E) : R] = sqrt(|disc R|)/p for a rank-4 order."""
    if R.rank != 4:
        raise RankDeficient("index needs a rank-4 order")
    d = R.disc()
    s = math.isqrt(d)
    if s * s != d or s % R.curve.p:
        raise NotAnOrder(f"disc {d} is not (p * integer)^2")
    return s // R.curve.p


def saturate_at(R, ell, k_max=None):
    """Enlarge an order until it is maximal at a prime ell != p: scan the
    index-ell superlattices (x = combination/ell) and adjoin every one the
    geometric divide certifies, re-closing each time."""
    if ell > 50:
        raise BoundExceeded("saturation prime above the small-prime bound")
    if ell == R.curve.p:
        raise NotDivisible("use saturate_at_p at the ramified prime")
    while True:
        L = R.lattice
        bas = L.basis
        n = len(bas)
        coord_mode = n == 4 and len(L.ref) == 4
        mats = [b.action_matrix(ell) for b in bas]
        adjoined = []
        adjoined_rows = []
        for cvec in _proj_space(ell, n):
            a = sum(c * M.a for c, M in zip(cvec, mats)) % ell
            b = sum(c * M.b for c, M in zip(cvec, mats)) % ell
            c2 = sum(c * M.c for c, M in zip(cvec, mats)) % ell
            d = sum(c * M.d for c, M in zip(cvec, mats)) % ell
            if a or b or c2 or d:
                continue
            cand = L.element(cvec)
            half = cand.divide(ell)
            if half is None:
                raise DivisionFailed(
                    "matrix-divisible element fails the geometric divide")
            if coord_mode:
                adjoined_rows.append(
                    [sum(Fraction(c) * L.coords[k][j]
                         for k, c in enumerate(cvec)) / ell
                     for j in range(n)])
            elif not L.contains(half):
                adjoined.append(half)
        if coord_mode:
            if not adjoined_rows:
                break
            newL = L.extend_rows(adjoined_rows)
            if newL.coords == L.coords:
                break
            R = _ring_closure_coords(newL, 16)
            continue
        if not adjoined:
            break
        R = ring_closure(lattice_extend(L, adjoined))
    return R


def _proj_space(ell, n):
    """Representatives of P^{n-1}(F_ell): first nonzero coordinate 1."""
    for lead in range(n):
        for tail in itertools.product(range(ell), repeat=n - lead - 1):
            yield (0,) * lead + (1,) + tail


def saturate_at_p(R):
    """Radical-idealizer maximalization at the ramified prime p: enlarge by
    elements u/p with u*J <= p*J (J the trace radical), certified by the
    geometric divide."""
    if R.rank != 4:
        raise RankDeficient("p-saturation needs a rank-4 order")
    p = R.curve.p
    while True:
        L = R.lattice
        d = L.disc()
        v = 0
        while d % p == 0:
            d //= p
            v += 1
        if v <= 2:
            if v != 2:
                raise NotAnOrder(f"disc has p-valuation {v} (bug)")
            return R
        J = _trace_radical_basis(L, p)
        if len(L.ref) == 4:
            vecs = _idealizer_vecs_coords(L, J, p)
            rows = []
            for vec in vecs:
                u = L.element([int(x) for x in vec])
                if u.is_zero():
                    continue
                q = u.divide(p)
                if q is None:
                    raise DivisionFailed(
                        "radical idealizer element fails the geometric "
                        "divide")
                rows.append([sum(Fraction(int(c)) * L.coords[k][j]
                                 for k, c in enumerate(vec)) / p
                             for j in range(4)])
            newL = L.extend_rows(rows) if rows else L
            if newL.coords == L.coords:
                raise NotAnOrder("p-saturation stalled above valuation 2 "
                                 "(bug)")
            R = _ring_closure_coords(newL, 16)
            continue
        cands = _idealizer_candidates(L, J, p)
        adjoined = []
        for u in cands:
            q = u.divide(p)
            if q is None:
                raise DivisionFailed(
                    "radical idealizer element fails the geometric divide")
            if not L.contains(q):
                adjoined.append(q)
        if not adjoined:
            raise NotAnOrder("p-saturation stalled above valuation 2 (bug)")
        R = ring_closure(lattice_extend(L, adjoined))


def _trace_radical_basis(L, p):
    """Basis (integer coordinate vectors over L.basis) of the radical of
    L/pL under the trace form."""
    G = L.gram()
    ker = _kernel_mod(G, p)
    # J = pL + ker-lifts; coordinate vectors of generators
    n = L.rank
    gens = [[p if i == j else 0 for j in range(n)] for i in range(n)]
    gens += [[int(x) % p for x in row] for row in ker]
    return _z_row_reduce(gens)


def _kernel_mod(M, p):
    n = len(M)
    A = [[int(x) % p for x in row] for row in M]
    piv_cols = []
    r = 0
    for c in range(n):
        piv = next((i for i in range(r, n) if A[i][c] % p), None)
        if piv is None:
            continue
        A[r], A[piv] = A[piv], A[r]
        inv = pow(A[r][c], -1, p)
        A[r] = [a * inv % p for a in A[r]]
        for i in range(n):
            if i != r and A[i][c]:
                f = A[i][c]
                A[i] = [(a - f * b) % p for a, b in zip(A[i], A[r])]
        piv_cols.append(c)
        r += 1
    free = [c for c in range(n) if c not in piv_cols]
    out = []
    for fc in free:
        vec = [0] * n
        vec[fc] = 1
        for i, pc in enumerate(piv_cols):
            vec[pc] = (-A[i][fc]) % p
        out.append(vec)
    return out


def _z_row_reduce(rows):
    """HNF of integer rows (no handles)."""
    pairs = _hnf_rows([([Fraction(x) for x in r], _ZeroHandle())
                       for r in rows])
    return [[int(x) for x in r] for r, _ in pairs]


class _ZeroHandle:
    """Inert handle so _hnf_rows can be reused for plain integer rows."""

    def __sub__(self, other):
        return self

    def __mul__(self, other):
        return self

    def __neg__(self):
        return self


def _idealizer_vecs_coords(L, J_rows, p):
    """Coordinate-space twin of _idealizer_candidates: basis coordinate
    vectors of u with u*J <= p*J and J*u <= p*J, using the frame tensor
    instead of endomorphism products."""
    n = L.rank
    ent = _frame_data(L)
    T = ent['T']
    C = L.coords
    Jf = [[sum(Fraction(r[k]) * C[k][j] for k in range(n))
           for j in range(n)] for r in J_rows]
    A = [[C[j][i] for j in range(n)] for i in range(n)]
    JT = [[Fraction(J_rows[j][i]) for j in range(len(J_rows))]
          for i in range(n)]

    def j_coords(xf):
        c = _solve(A, xf)
        if c is None or any(v.denominator != 1 for v in c):
            raise NotAnOrder("product left the order (bug)")
        y = _solve(JT, c)
        if y is None or any(v.denominator != 1 for v in y):
            raise NotAnOrder("product left the radical (bug)")
        return [int(v) for v in y]

    rowsys = []
    for jf in Jf:
        for side in (0, 1):
            cols = []
            for bf in C:
                prod = _prod_coords(T, bf, jf, n) if side == 0 \
                    else _prod_coords(T, jf, bf, n)
                cols.append(j_coords(prod))
            for comp in range(len(J_rows)):
                rowsys.append([cols[k][comp] % p for k in range(n)])
    return [vec for vec in _kernel_mod_rect(rowsys, n, p) if any(vec)]


def _idealizer_candidates(L, J_rows, p):
    """Elements u of L with u*J <= p*J and J*u <= p*J, so that u/p lies in
    the radical idealizer (hence in the unique p-maximal overorder)."""
    n = L.rank
    bas = L.basis
    J_elems = [L.element(r) for r in J_rows]
    # J-coordinates of x: solve J_rows^T y = coords_L(x); integral since J
    # is a two-sided ideal of L containing pL
    JT = [[Fraction(J_rows[j][i]) for j in range(len(J_rows))]
          for i in range(n)]

    def j_coords(x):
        c = L.basis_coords(x)
        if c is None or any(v.denominator != 1 for v in c):
            raise NotAnOrder("product left the order (bug)")
        y = _solve(JT, c)
        if y is None or any(v.denominator != 1 for v in y):
            raise NotAnOrder("product left the radical (bug)")
        return [int(v) for v in y]

    # u*j in p*J is linear in the coordinates of u: build the F_p system
    rowsys = []
    for j_el in J_elems:
        for side in (0, 1):
            cols = []
            for b in bas:
                prod = b * j_el if side == 0 else j_el * b
                cols.append(j_coords(prod))
            for comp in range(len(J_rows)):
                rowsys.append([cols[k][comp] % p for k in range(n)])
    ker = _kernel_mod_rect(rowsys, n, p)
    out = []
    for vec in ker:
        u = L.element([int(x) for x in vec])
        if not u.is_zero():
            out.append(u)
    return out


def _kernel_mod_rect(rows, ncols, p):
    """Kernel over F_p of a rectangular system rows * x = 0."""
    A = [[x % p for x in r] for r in rows]
    r = 0
    piv_cols = []
    for c in range(ncols):
        piv = next((i for i in range(r, len(A)) if A[i][c] % p), None)
        if piv is None:
            continue
        A[r], A[piv] = A[piv], A[r]
        inv = pow(A[r][c], -1, p)
        A[r] = [a * inv % p for a in A[r]]
        for i in range(len(A)):
            if i != r and A[i][c]:
                f = A[i][c]
                A[i] = [(a - f * b) % p for a, b in zip(A[i], A[r])]
        piv_cols.append(c)
        r += 1
    free = [c for c in range(ncols) if c not in piv_cols]
    out = []
    for fc in free:
        vec = [0] * ncols
        vec[fc] = 1
        for i, pc in enumerate(piv_cols):
            vec[pc] = (-A[i][fc]) % p
        out.append(vec)
    return out


# -- local (mod ell^e) analysis ----------------------------------------------

def level_at(A, ell, e=None):
    """Largest a <= e with A in scalars + ell^a * M_2(Z/ell^e)."""
    from .endos import ActionMatrix
    if isinstance(A, EndoRep):
        if e is None:
            raise ValueError("need the exponent e for an endomorphism input")
        A = A.action_matrix(ell ** e)
    elif isinstance(A, ActionMatrix):
        if e is None:
            e = 0
            m = A.m
            while m % ell == 0:
                m //= ell
                e += 1
            if m != 1:
                raise ValueError("matrix level is not a power of ell")
    mod = ell ** e

    def val(x):
        x %= mod
        if x == 0:
            return e
        v = 0
        while x % ell == 0:
            x //= ell
            v += 1
        return v

    return min(val(A.b), val(A.c), val(A.a - A.d))


def is_N_reduced(alpha, N, k_max=None):
    """True iff alpha is not congruent to a scalar modulo N*End(E)."""
    if math.gcd(N, alpha.curve.p) != 1:
        raise NotDivisible("N must be coprime to p")
    A = alpha.action_matrix(N) if k_max is None \
        else alpha.action_matrix(N, k_max)
    return not (A.b == 0 and A.c == 0 and (A.a - A.d) % N == 0)


# -- conjugacy classes over F_ell ---------------------------------------------

def _is_sq(x, ell):
    x %= ell
    if x == 0:
        return True
    return pow(x, (ell - 1) // 2, ell) == 1


def conj_class(mat, ell):
    """SL_2(F_ell)-conjugacy label of a 2x2 matrix.

    Labels: ('homothety', a); ('split', (e1, e2)); ('nonsplit', (t, d));
    ('nonsemisimple', a, eps) with eps in {1, -1} the square class of the
    unipotent part."""
    a, b, c, d = [x % ell for x in mat]
    if b == 0 and c == 0 and a == d:
        return ('homothety', a)
    t = (a + d) % ell
    det = (a * d - b * c) % ell
    disc = (t * t - 4 * det) % ell
    if disc == 0:
        # non-semisimple: A = (t/2) + N, N nonzero nilpotent; the SL2
        # invariant is the square class of det(v, Nv) for any v with Nv != 0
        half = (t * pow(2, -1, ell)) % ell
        Na, Nb, Nc, Nd = (a - half) % ell, b, c, (d - half) % ell
        for v in ((1, 0), (0, 1)):
            w = ((Na * v[0] + Nb * v[1]) % ell,
                 (Nc * v[0] + Nd * v[1]) % ell)
            if w != (0, 0):
                break
        dd = (v[0] * w[1] - v[1] * w[0]) % ell
        return ('nonsemisimple', half, 1 if _is_sq(dd, ell) else -1)
    if _is_sq(disc, ell):
        s = sympy.sqrt_mod(disc, ell)
        inv2 = pow(2, -1, ell)
        e1 = (t + s) * inv2 % ell
        e2 = (t - s) * inv2 % ell
        return ('split', tuple(sorted((e1, e2))))
    return ('nonsplit', (t, det))


# -- brute-force lemma verifications ------------------------------------------

def _sl2_elements(ell):
    out = []
    for a, b, c, d in itertools.product(range(ell), repeat=4):
        if (a * d - b * c) % ell == 1:
            out.append((a, b, c, d))
    return out


def _conj(g, A, ell):
    a, b, c, d = g
    # g A g^{-1}, det g = 1 so inverse is (d, -b, -c, a)
    x, y, z, w = A
    m1 = (a * x + b * z, a * y + b * w, c * x + d * z, c * y + d * w)
    x, y, z, w = m1
    return ((x * d - y * c) % ell, (-x * b + y * a) % ell,
            (z * d - w * c) % ell, (-z * b + w * a) % ell)


def _proj_quotient(A, ell):
    """Canonical representative of A modulo scalar matrices: subtract
    a*I so the first nonzero of (b, c, a-d) is... simpler: normalize by
    shifting a to 0."""
    a, b, c, d = A
    return (0, b % ell, (c) % ell, (d - a) % ell)


def _orbit(A, ell, gens=None):
    """SL2-conjugation orbit of A modulo scalars."""
    if gens is None:
        gens = [(1, 1, 0, 1), (0, ell - 1, 1, 0)]
    seen = {_proj_quotient(A, ell)}
    frontier = [A]
    reps = [A]
    while frontier:
        B = frontier.pop()
        for g in gens:
            C = _conj(g, B, ell)
            q = _proj_quotient(C, ell)
            if q not in seen:
                seen.add(q)
                frontier.append(C)
                reps.append(C)
    return sorted(seen)


def _class_reps(ell):
    """One representative per SL2-class of non-scalar matrices mod scalars."""
    seen = set()
    reps = []
    for A in itertools.product(range(ell), repeat=4):
        q = _proj_quotient(A, ell)
        if q == (0, 0, 0, 0) or q in seen:
            continue
        orb = _orbit(q, ell)
        if any(x in seen for x in orb):
            seen.update(orb)
            continue
        seen.update(orb)
        reps.append(q)
    return reps


def _subspaces(ell):
    """All proper nonzero subspaces of the 3-dim quotient M2/scalars,
    as lists of F_ell^3 vectors (coordinates (b, c, d-a))."""
    vecs = [v for v in itertools.product(range(ell), repeat=3)
            if v != (0, 0, 0)]
    lines = []
    seen = set()
    for v in vecs:
        if v in seen:
            continue
        line = {tuple((t * x) % ell for x in v) for t in range(1, ell)}
        seen.update(line)
        lines.append(sorted(line | {(0, 0, 0)}))
    planes = []
    seen = set()
    for nrm in vecs:
        if nrm in seen:
            continue
        seen.update(tuple((t * x) % ell for x in nrm) for t in range(1, ell))
        plane = [v for v in itertools.product(range(ell), repeat=3)
                 if (v[0] * nrm[0] + v[1] * nrm[1] + v[2] * nrm[2])
                 % ell == 0]
        planes.append(plane)
    return lines + planes


def _qcoords(A, ell):
    a, b, c, d = A
    return (b % ell, c % ell, (d - a) % ell)


def verify_subspace_lemma(ell, trials=20000, seed=0):
    """Max over non-scalar classes and proper subspaces V of
    P(conjugate lands in V); exhaustive for ell in {3,5,7}, sampled
    against the analytic bound 4*ell/(ell^2-1) for larger ell."""
    if ell in (3, 5, 7):
        reps = _class_reps(ell)
        spaces = [set(s) for s in _subspaces(ell)]
        worst = Fraction(0)
        for A in reps:
            orb = _orbit(A, ell)
            pts = [_qcoords(x, ell) for x in orb]
            for V in spaces:
                hit = sum(1 for q in pts if q in V)
                r = Fraction(hit, len(pts))
                if r > worst:
                    worst = r
        return {'ell': ell, 'mode': 'exhaustive', 'max_ratio': worst,
                'bound': Fraction(1, 2), 'ok': worst <= Fraction(1, 2)}
    rng = make_rng(seed, stream=ell)
    worst = Fraction(0)
    analytic = Fraction(4 * ell, ell * ell - 1)
    for _ in range(max(1, trials // 1000)):
        A = tuple(int(x) for x in rng.integers(0, ell, size=4))
        if _proj_quotient(A, ell) == (0, 0, 0, 0):
            continue
        orb = _orbit(A, ell)
        pts = [_qcoords(x, ell) for x in orb]
        for _ in range(40):
            nrm = tuple(int(x) for x in rng.integers(0, ell, size=3))
            if nrm == (0, 0, 0):
                continue
            hit = sum(1 for q in pts
                      if (q[0] * nrm[0] + q[1] * nrm[1] + q[2] * nrm[2])
                      % ell == 0)
            r = Fraction(hit, len(pts))
            if r > worst:
                worst = r
    return {'ell': ell, 'mode': 'sampled', 'max_ratio': worst,
            'analytic_bound': analytic, 'bound': Fraction(1, 2),
            'ok': worst <= Fraction(1, 2)}


def verify_basis_probability(ell, trials=100000, seed=0):
    """P(three conjugates + 1 give a basis of M2/scalars) under
    SL2-invariant sampling; exhaustive for ell = 3, Monte Carlo above."""

    def is_basis(q1, q2, q3):
        M = [list(q1), list(q2), list(q3)]
        det = (M[0][0] * (M[1][1] * M[2][2] - M[1][2] * M[2][1])
               - M[0][1] * (M[1][0] * M[2][2] - M[1][2] * M[2][0])
               + M[0][2] * (M[1][0] * M[2][1] - M[1][1] * M[2][0]))
        return det % ell != 0

    if ell == 3:
        reps = _class_reps(ell)
        orbits = [[_qcoords(x, ell) for x in _orbit(A, ell)] for A in reps]
        worst = Fraction(1)
        for o1 in orbits:
            for o2 in orbits:
                for o3 in orbits:
                    good = sum(1 for q1 in o1 for q2 in o2 for q3 in o3
                               if is_basis(q1, q2, q3))
                    pr = Fraction(good, len(o1) * len(o2) * len(o3))
                    if pr < worst:
                        worst = pr
        return {'ell': ell, 'mode': 'exhaustive', 'min_probability': worst,
                'bound': Fraction(1, 8), 'ok': worst >= Fraction(1, 8)}
    if ell > 13:
        raise BoundExceeded("basis-probability check capped at ell = 13")
    rng = make_rng(seed, stream=100 + ell)
    reps = _class_reps(ell)
    orbits = [[_qcoords(x, ell) for x in _orbit(A, ell)] for A in reps]
    worst = Fraction(1)
    per = max(1, trials // max(1, len(orbits)))
    for orb in orbits:
        good = 0
        for _ in range(per):
            q1 = orb[int(rng.integers(0, len(orb)))]
            q2 = orb[int(rng.integers(0, len(orb)))]
            q3 = orb[int(rng.integers(0, len(orb)))]
            if is_basis(q1, q2, q3):
                good += 1
        pr = Fraction(good, per)
        if pr < worst:
            worst = pr
    tol = Fraction(3, int(math.isqrt(per)) + 1)
    return {'ell': ell, 'mode': 'montecarlo', 'min_probability': worst,
            'bound': Fraction(1, 8), 'tolerance': tol,
            'ok': worst >= Fraction(1, 8) - tol}

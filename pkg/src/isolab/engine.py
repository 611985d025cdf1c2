"""Ground truth for small p: endomorphism rings of every supersingular
curve by collision search, persisted to a disk table, plus the honest and
adversarial one-endomorphism oracles used to exercise the reduction.

Table entries carry a rank-4 order basis (as EndoReps), its Gram matrix,
the multiplication table certifying closure, and the automorphism count.
An entry is accepted only when the order is maximal: index 1, |disc| = p^2.
"""

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import sympy

from .curves import (DEFAULT_ENUM_BOUND, aut_order, canonical_model,
                     enumerate_supersingular, j_invariant)
from .endos import EndoRep
from .errors import BoundExceeded, Timeout, UnknownCurve
from .fields import build_field
from .isogenies import canonical_steps
from .lattices import (index_in_maximal, is_N_reduced, lattice_from,
                       ring_closure, saturate_at, saturate_at_p)
from .rand import make_rng
from .reduction import collision_endomorphism

CACHE_VERSION = 1
DEFAULT_CACHE_DIR = 'cache'


def _collision_length(p):
    # endpoints must spread over the ~p/12 vertices
    return max(6, math.ceil(math.log2(p)) + 2)


def compute_endring_bruteforce(E, seed=0, max_harvest=60):
    """Full endomorphism order of E: harvest collision endomorphisms until
    the ring they generate is maximal (index 1 after saturation)."""
    k = _collision_length(E.p)
    one = EndoRep.scalar(E, 1)
    alphas = []
    R = None
    for rnd in range(max_harvest):
        alphas.append(collision_endomorphism(E, 2, k, seed=seed + 977 * rnd))
        L = lattice_from([one] + alphas)
        if L.rank < 4:
            continue
        R = ring_closure(L)
        R = saturate_at(R, 2)
        R = saturate_at_p(R)
        idx = index_in_maximal(R)
        for q in sympy.primerange(3, 51):
            while idx % q == 0:
                R = saturate_at(R, q)
                idx = index_in_maximal(R)
        if idx == 1:
            return R
    raise Timeout("brute-force ring is not maximal after harvest budget",
                  partial=R,
                  diagnostics={'harvested': len(alphas),
                               'index': None if R is None
                               else index_in_maximal(R)})


# -- serialization -------------------------------------------------------------

def _step_to_json(s):
    return [list(s.domain.j.coeffs), s.ell, s.index, s.post_aut]


def _step_from_json(ctx, rec):
    jc, ell, index, post_aut = rec
    s = canonical_steps(canonical_model(ctx.elem(jc)), ell)[index]
    return s.with_post_aut(post_aut) if post_aut else s


def _endo_to_json(b):
    return {'den': b.den,
            'terms': [[c, [_step_to_json(s) for s in steps]]
                      for c, steps in b.terms]}


def _endo_from_json(E, ctx, rec):
    terms = [(c, tuple(_step_from_json(ctx, s) for s in st))
             for c, st in rec['terms']]
    return EndoRep(E, terms, den=rec['den'])


class TableEntry:
    __slots__ = ('j', 'curve', 'order', 'gram', 'mult_table', 'aut')

    def __init__(self, j, curve, order, gram, mult_table, aut):
        self.j = j
        self.curve = curve
        self.order = order
        self.gram = gram
        self.mult_table = mult_table
        self.aut = aut

    @property
    def basis(self):
        return self.order.basis()


class CurveTable:
    """End(E) for every supersingular j over F_{p^2}, with disk cache."""

    def __init__(self, p, entries):
        self.p = p
        self.entries = entries
        self._by_j = {e.j.coeffs: e for e in entries}
        self._bij_checked = {}
        mass = sum(Fraction(1, e.aut) for e in entries)
        if mass != Fraction(p - 1, 24):
            raise BoundExceeded(
                f"mass {mass} != (p-1)/24 = {Fraction(p - 1, 24)}")
        for e in entries:
            if abs(e.order.disc()) != p * p:
                raise BoundExceeded(f"entry j={e.j} has disc {e.order.disc()}")

    def entry(self, E):
        jc = E.j.coeffs if hasattr(E, 'j') else E.coeffs
        try:
            return self._by_j[jc]
        except KeyError:
            raise UnknownCurve(f"j with coeffs {jc} not in the p={self.p} "
                               "table") from None


def _entry_to_json(e):
    return {'j': list(e.j.coeffs),
            'A': list(e.curve.A.coeffs),
            'B': list(e.curve.B.coeffs),
            'basis': [_endo_to_json(b) for b in e.basis],
            'gram': [[int(t) for t in row] for row in e.gram],
            'mult_table': [[list(e.mult_table[(i, j)]) for j in range(4)]
                           for i in range(4)],
            'aut': e.aut}


def _entry_from_json(ctx, rec):
    E = canonical_model(ctx.elem(rec['j']))
    if list(E.A.coeffs) != rec['A'] or list(E.B.coeffs) != rec['B']:
        raise BoundExceeded("cached model disagrees with the canonical one")
    basis = [_endo_from_json(E, ctx, b) for b in rec['basis']]
    L = lattice_from(basis)
    cert = {(i, j): tuple(rec['mult_table'][i][j])
            for i in range(4) for j in range(4)}
    from .lattices import OrderHandle
    order = OrderHandle(L, cert)
    gram = [[int(t) for t in row] for row in L.gram()]
    if gram != rec['gram']:
        raise BoundExceeded("cached Gram matrix disagrees on reconstruction")
    return TableEntry(E.j, E, order, gram, cert, rec['aut'])


def _compute_entry(j, seed):
    E = canonical_model(j)
    R = compute_endring_bruteforce(E, seed=seed)
    gram = [[int(t) for t in row] for row in R.lattice.gram()]
    return TableEntry(E.j, E, R, gram, R.closure_certificate, aut_order(E))


def build_table(p, cache_dir=DEFAULT_CACHE_DIR, seed=0, threads=1,
                force=False):
    """CurveTable for p, from the disk cache when a valid one exists."""
    if p > DEFAULT_ENUM_BOUND:
        raise BoundExceeded(f"p={p} above the enumeration bound")
    path = os.path.join(cache_dir, f'endring_p{p}.json')
    ctx = build_field(p, 1)
    if not force and os.path.exists(path):
        with open(path) as fh:
            data = json.load(fh)
        if data.get('p') == p and data.get('version') == CACHE_VERSION:
            return CurveTable(p, [_entry_from_json(ctx, r)
                                  for r in data['entries']])
    js = enumerate_supersingular(p)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            entries = list(ex.map(lambda ij: _compute_entry(ij[1], seed + ij[0]),
                                  enumerate(js)))
    else:
        entries = [_compute_entry(j, seed + i) for i, j in enumerate(js)]
    table = CurveTable(p, entries)
    os.makedirs(cache_dir, exist_ok=True)
    tmp = path + '.tmp'
    with open(tmp, 'w') as fh:
        json.dump({'p': p, 'version': CACHE_VERSION,
                   'entries': [_entry_to_json(e) for e in table.entries]}, fh)
    os.replace(tmp, path)
    return table


# -- oracles -------------------------------------------------------------------

class OneEndOracle:
    """Callable E -> non-scalar EndoRep in End(E).

    kind 'honest': uniform non-scalar c0 + c1 b1 + c2 b2 + c3 b3 with
    coefficients in [-height, height].
    kind ('stuck', M): M * beta + [c]; every output lies in Z + M End(E).
    kind ('leveled', n): 2^e * beta + [c] with beta 2-reduced and
    Pr[e] = 2^(e-n) for e in 0..n-1 (the leftover 2^-n mass lands on e=0).
    """

    def __init__(self, table, kind='honest', seed=0, height=3):
        self.table = table
        self.kind = kind if isinstance(kind, tuple) else (kind,)
        if self.kind[0] not in ('honest', 'stuck', 'leveled'):
            raise ValueError(f"unknown oracle kind {kind!r}")
        self.rng = make_rng(seed, stream=0xface)
        self.height = height

    def _combo(self, entry):
        H = self.height
        while True:
            cs = [int(self.rng.integers(-H, H + 1)) for _ in range(4)]
            acc = EndoRep.scalar(entry.curve, 0)
            for c, b in zip(cs, entry.basis):
                if c:
                    acc = acc + b * c
            if not acc.is_scalar():
                return acc

    def __call__(self, E):
        entry = self.table.entry(E)
        kind = self.kind[0]
        if kind == 'honest':
            return self._combo(entry)
        shift = EndoRep.scalar(entry.curve,
                               int(self.rng.integers(-self.height,
                                                     self.height + 1)))
        if kind == 'stuck':
            M = self.kind[1]
            return self._combo(entry) * M + shift
        n = self.kind[1]
        beta = self._combo(entry)
        while not is_N_reduced(beta, 2):
            beta = self._combo(entry)
        r = int(self.rng.integers(0, 1 << n))
        e = r.bit_length() - 1 if r else 0
        return beta * (1 << e) + shift


def endo_matrix_modN(table, alpha, N):
    """alpha's action matrix on E[N], after checking (once per curve and N)
    that the stored basis spans M_2(Z/N)."""
    if math.gcd(N, table.p) != 1:
        raise BoundExceeded("N must be coprime to p")
    entry = table.entry(alpha.curve)
    key = (entry.j.coeffs, N)
    if key not in table._bij_checked:
        rows = []
        for b in entry.basis:
            A = b.action_matrix(N)
            rows.append([A.a, A.b, A.c, A.d])
        det = _det4_mod(rows, N)
        if math.gcd(det, N) != 1:
            raise BoundExceeded(
                f"basis does not span M_2(Z/{N}) at j={entry.j}")
        table._bij_checked[key] = True
    return alpha.action_matrix(N)


def _det4_mod(M, m):
    d = 0
    import itertools
    for perm in itertools.permutations(range(4)):
        sgn = 1
        for i in range(4):
            for j in range(i + 1, 4):
                if perm[i] > perm[j]:
                    sgn = -sgn
        t = sgn
        for i in range(4):
            t = t * M[i][perm[i]] % m
        d = (d + t) % m
    return d % m

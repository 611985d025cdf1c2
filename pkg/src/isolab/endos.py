"""Evaluable endomorphism representations.

An endomorphism of a canonical supersingular curve E is stored as a formal
Z-combination of compositions of cached prime-degree steps E -> ... -> E,
divided by an integer denominator.  Everything one wants to know about such
an expression (trace, degree, divisibility by an integer, action on E[m])
is recovered from its action on small torsion groups, CRT-combined over a
pool of coprime levels.
"""

import functools
import math

import sympy

from .curves import torsion_field_degree, DEFAULT_K_MAX
from .errors import (NotEndomorphism, NotDivisible, PrecisionExhausted,
                     ScalarInput, DenominatorOrderClash, ExtensionTooLarge)
from .isogenies import dual_step


def modulus_pool(p, bound, k_max=DEFAULT_K_MAX, avoid=()):
    """Primes m (m != 2, p, not in avoid) whose product exceeds bound,
    chosen cheapest-first: all primes below a scan limit with torsion
    half-degree <= 4, then <= 8, and so on up to k_max."""
    bits = max(int(bound), 1).bit_length()
    return list(_pool_cached(p, bits + (-bits) % 8, k_max,
                             tuple(sorted(avoid))))


@functools.lru_cache(maxsize=None)
def _pool_cached(p, bound_bits, k_max, avoid):
    bound = 1 << bound_bits
    out = []
    prod = 1
    seen = set(avoid)
    seen.update((2, p))
    kk = 4
    while prod <= bound:
        for m in sympy.primerange(3, 20000):
            if m in seen:
                continue
            k = torsion_field_degree(p, m)
            # degrees whose extension has no binomial modulus are slow to
            # build; defer them as if four times deeper
            if any((p * p - 1) % r for r in sympy.primefactors(k)):
                k *= 4
            if k <= kk:
                seen.add(m)
                out.append(m)
                prod *= m
                if prod > bound:
                    break
        if prod > bound:
            break
        kk += 4
        if kk > k_max + 448:
            raise PrecisionExhausted(
                f"cannot cover bound 2^{bound_bits}")
    return tuple(out)


class ActionMatrix:
    """2x2 matrix over Z/m: the action of an endomorphism on a fixed basis
    of E[m].  det is the degree mod m, tr the trace mod m."""

    __slots__ = ('m', 'a', 'b', 'c', 'd')

    def __init__(self, m, a, b, c, d):
        self.m = m
        self.a, self.b, self.c, self.d = a % m, b % m, c % m, d % m

    def __mul__(self, other):
        if self.m != other.m:
            raise ValueError("mixed levels")
        m = self.m
        return ActionMatrix(
            m,
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d)

    def __eq__(self, other):
        return (isinstance(other, ActionMatrix) and self.m == other.m
                and (self.a, self.b, self.c, self.d) ==
                    (other.a, other.b, other.c, other.d))

    def __hash__(self):
        return hash((self.m, self.a, self.b, self.c, self.d))

    def det(self):
        return (self.a * self.d - self.b * self.c) % self.m

    def tr(self):
        return (self.a + self.d) % self.m

    def is_zero(self):
        return self.a == self.b == self.c == self.d == 0

    def entries(self):
        return (self.a, self.b, self.c, self.d)

    def __repr__(self):
        return f"[[{self.a},{self.b}],[{self.c},{self.d}]] mod {self.m}"


_step_key_ids = {}
_comp_matrix_cache = {}
_comp_split = {}


def _intern_step(s):
    k = (s.domain.p,) + s.key()
    i = _step_key_ids.get(k)
    if i is None:
        i = _step_key_ids[k] = len(_step_key_ids)
    return i


def _mat_mul(B, A, m):
    """B o A for raw 4-tuples (A applied first)."""
    ba, bb, bc, bd = B
    aa, ab, ac, ad = A
    return ((ba * aa + bb * ac) % m, (ba * ab + bb * ad) % m,
            (bc * aa + bd * ac) % m, (bc * ab + bd * ad) % m)


def _steps_matrix(steps, m):
    """Product of step matrices mod m for a composition (steps applied left
    to right), as a raw 4-tuple.  Compositions are memoized on interned
    step ids; long products reuse cached halves (typical for products of
    already-traced endomorphisms, whose factor runs are already cached)."""
    if not steps:
        return 1 % m, 0, 0, 1 % m
    return _steps_matrix_ids(steps, tuple(_intern_step(s) for s in steps), m)


def _steps_matrix_ids(steps, ids, m):
    key = (m, ids)
    hit = _comp_matrix_cache.get(key)
    if hit is not None:
        return hit
    n = len(ids)
    start = 0
    acc = (1 % m, 0, 0, 1 % m)
    get = _comp_matrix_cache.get
    sp = _comp_split.get(ids)
    if sp:
        a = get((m, ids[:sp]))
        if a is not None:
            b = get((m, ids[sp:]))
            if b is not None:
                out = _mat_mul(b, a, m)
                _comp_matrix_cache[key] = out
                return out
    for i in range(n - 1, 0, -1):
        a = get((m, ids[:i]))
        if a is None:
            continue
        b = get((m, ids[i:]))
        if b is not None:
            out = _mat_mul(b, a, m)
            _comp_matrix_cache[key] = out
            return out
        if not start:
            start, acc = i, a
    for i in range(start, n):
        acc = _mat_mul(steps[i].action_matrix(m), acc, m)
        _comp_matrix_cache[(m, ids[:i + 1])] = acc
    return acc


def _crt_centered(residues, moduli):
    M = 1
    r = 0
    for rm, m in zip(residues, moduli):
        s = pow(M, -1, m)
        r = (r + M * ((s * (rm - r)) % m)) % (M * m)
        M *= m
    if r > M // 2:
        r -= M
    return r


_trace_cache = {}


def _composition_trace(E, steps, k_max=DEFAULT_K_MAX):
    """Exact trace of a composition of steps E -> E via CRT on small
    torsion levels."""
    ids = tuple(_intern_step(s) for s in steps)
    key = (E.p, ids)
    if key in _trace_cache:
        return _trace_cache[key]
    deg = 1
    for s in steps:
        deg *= s.ell
    bound = 4 * (math.isqrt(deg) + 1)
    moduli = modulus_pool(E.p, bound, k_max)
    residues = []
    for m in moduli:
        a, _, _, d = _steps_matrix_ids(steps, ids, m)
        residues.append((a + d) % m)
    t = _crt_centered(residues, moduli)
    if t * t > 4 * deg:
        raise NotEndomorphism("trace exceeds the Weil bound (bug)")
    _trace_cache[key] = t
    return t


def _dual_steps(steps):
    return tuple(dual_step(s) for s in reversed(steps))


class EndoRep:
    """Formal endomorphism (sum of coefficient * step-composition) / den."""

    __slots__ = ('curve', 'terms', 'den', '_trace', '_degree')

    def __init__(self, curve, terms, den=1, trace=None, degree=None):
        if den <= 0:
            raise NotEndomorphism("denominator must be positive")
        merged = {}
        keys = {}
        for c, steps in terms:
            if not c:
                continue
            steps = tuple(steps)
            if steps:
                if steps[0].domain.key() != curve.key() \
                        or steps[-1].codomain.key() != curve.key():
                    raise NotEndomorphism("composition is not a loop on E")
                for s, t in zip(steps, steps[1:]):
                    if s.codomain.key() != t.domain.key():
                        raise NotEndomorphism("steps do not compose")
            k = tuple(s.key() for s in steps)
            merged[k] = merged.get(k, 0) + c
            keys[k] = steps
        terms = tuple((c, keys[k]) for k, c in merged.items() if c)
        g = den
        for c, _ in terms:
            g = math.gcd(g, abs(c))
        if terms and g > 1:
            terms = tuple((c // g, st) for c, st in terms)
            den //= g
        self.curve = curve
        self.terms = terms
        self.den = den
        self._trace = trace
        self._degree = degree

    # -- constructors ---------------------------------------------------------

    @classmethod
    def scalar(cls, curve, n):
        terms = ((n, ()),) if n else ()
        return cls(curve, terms, trace=2 * n, degree=n * n)

    @classmethod
    def from_path(cls, path):
        if path.start.key() != path.end.key():
            raise NotEndomorphism("path does not return to its start")
        d = path.degree
        return cls(path.start, ((1, tuple(path.steps)),), degree=d)

    @classmethod
    def from_steps(cls, curve, steps):
        d = 1
        for s in steps:
            d *= s.ell
        return cls(curve, ((1, tuple(steps)),), degree=d)

    # -- ring operations ------------------------------------------------------

    def _check_curve(self, other):
        if self.curve.key() != other.curve.key():
            raise NotEndomorphism("endomorphisms of different curves")

    def __add__(self, other):
        if isinstance(other, int):
            other = EndoRep.scalar(self.curve, other)
        self._check_curve(other)
        L = self.den * other.den // math.gcd(self.den, other.den)
        u, v = L // self.den, L // other.den
        terms = tuple((u * c, st) for c, st in self.terms) \
            + tuple((v * c, st) for c, st in other.terms)
        tr = None
        if self._trace is not None and other._trace is not None:
            tr = self._trace + other._trace
        return EndoRep(self.curve, terms, L, trace=tr)

    __radd__ = __add__

    def __neg__(self):
        tr = None if self._trace is None else -self._trace
        return EndoRep(self.curve, tuple((-c, st) for c, st in self.terms),
                       self.den, trace=tr, degree=self._degree)

    def __sub__(self, other):
        if isinstance(other, int):
            other = EndoRep.scalar(self.curve, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, int):
            dg = None if self._degree is None \
                else self._degree * other * other
            tr = None if self._trace is None else self._trace * other
            return EndoRep(self.curve,
                           tuple((other * c, st) for c, st in self.terms),
                           self.den, trace=tr, degree=dg)
        self._check_curve(other)
        terms = []
        for c1, st1 in self.terms:
            for c2, st2 in other.terms:
                comp = st2 + st1
                terms.append((c1 * c2, comp))
                if st1 and st2:
                    _comp_split[tuple(_intern_step(s) for s in comp)] \
                        = len(st2)
        dg = None
        if self._degree is not None and other._degree is not None:
            dg = self._degree * other._degree
        return EndoRep(self.curve, tuple(terms), self.den * other.den,
                       degree=dg)

    def __rmul__(self, other):
        if isinstance(other, int):
            return self * other
        return NotImplemented

    def is_zero(self):
        return not self.terms

    # -- invariants -----------------------------------------------------------

    @property
    def degree_bound(self):
        s = 0
        for c, steps in self.terms:
            d = 1
            for st in steps:
                d *= st.ell
            s += abs(c) * (math.isqrt(d) + (0 if math.isqrt(d) ** 2 == d
                                            else 1))
        b, r = divmod(s * s, self.den * self.den)
        return b + (1 if r else 0)

    def trace(self, k_max=DEFAULT_K_MAX):
        if self._trace is None:
            t = 0
            for c, steps in self.terms:
                t += c * _composition_trace(self.curve, steps, k_max)
            q, r = divmod(t, self.den)
            if r:
                raise NotEndomorphism("trace is not an integer")
            self._trace = q
        return self._trace

    def degree(self, k_max=DEFAULT_K_MAX):
        if self._degree is None:
            terms = self.terms
            s = 0
            for i, (ci, sti) in enumerate(terms):
                d = 1
                for st in sti:
                    d *= st.ell
                s += ci * ci * d
                for cj, stj in terms[i + 1:]:
                    dual = _dual_steps(stj)
                    cross = dual + sti
                    if dual and sti:
                        _comp_split[tuple(_intern_step(s) for s in cross)] \
                            = len(dual)
                    s += ci * cj * _composition_trace(self.curve, cross,
                                                      k_max)
            q, r = divmod(s, self.den * self.den)
            if r:
                raise NotEndomorphism("degree is not an integer")
            self._degree = q
        return self._degree

    def discriminant(self):
        t = self.trace()
        return t * t - 4 * self.degree()

    def is_scalar(self):
        if not self.terms:
            return True
        return self.discriminant() == 0

    def dual(self):
        """The conjugate trace(a) - a (same trace and degree)."""
        t = self.trace()
        out = EndoRep.scalar(self.curve, t) * self.den - self
        out._trace = t
        out._degree = self._degree
        return out

    # -- torsion action -------------------------------------------------------

    def _den_split(self, m):
        """den = dm * dc with dm carrying exactly the primes shared with m."""
        dm = 1
        d = self.den
        for ell in sympy.primefactors(math.gcd(d, m)):
            while d % ell == 0:
                d //= ell
                dm *= ell
        return dm, d

    def action_matrix(self, m, k_max=DEFAULT_K_MAX):
        """Action on the stored basis of E[m]; handles denominators sharing
        factors with m by working at level m * (that part of den)."""
        if m <= 1:
            raise NotDivisible("level must be at least 2")
        if math.gcd(m, self.curve.p) != 1:
            raise DenominatorOrderClash("level must be coprime to p")
        dm, dc = self._den_split(m)
        M = m * dm
        try:
            self.curve.torsion_basis(M, k_max)
        except ExtensionTooLarge:
            raise
        a, b, c, d = 0, 0, 0, 0
        for coeff, steps in self.terms:
            sa, sb, sc, sd = _steps_matrix(steps, M)
            a += coeff * sa
            b += coeff * sb
            c += coeff * sc
            d += coeff * sd
        ci = pow(dc, -1, M)
        out = []
        for e in (a, b, c, d):
            e = (e * ci) % M
            if e % dm:
                raise NotEndomorphism(
                    f"expression is not integral at level {m}")
            out.append((e // dm) % m)
        return ActionMatrix(m, *out)

    # -- evaluation -----------------------------------------------------------

    def _num_eval(self, Q):
        acc = self.curve.infinity(Q.ctx)
        for c, steps in self.terms:
            R = Q
            for s in steps:
                R = s(R)
            acc = acc + c * R
        return acc

    def evaluate(self, P, k_max=DEFAULT_K_MAX):
        """Image of a point of finite order coprime to p (its order is
        recovered from the ambient field)."""
        if P.infinity:
            return P
        if P.curve.key() != self.curve.key():
            raise NotEndomorphism("point is not on the curve")
        n = point_order(P)
        g = math.gcd(self.den, n)
        if g == 1:
            u = pow(self.den, -1, n) if self.den > 1 else 1
            return self._num_eval(u * P)
        dm, dc = self._den_split(n)
        M = n * dm
        try:
            basis = self.curve.torsion_basis(M, k_max)
        except ExtensionTooLarge as exc:
            raise DenominatorOrderClash(
                f"cannot invert denominator {self.den} on a point of "
                f"order {n}: {exc}")
        from .fields import embed
        Pb = P
        if Pb.ctx is not basis.ctx:
            Pb = self.curve.point(embed(P.x, basis.ctx),
                                  embed(P.y, basis.ctx), basis.ctx)
        a, b = basis.dlog_pair(Pb)
        if a % dm or b % dm:
            raise DenominatorOrderClash("point is not divisible by the "
                                        "denominator (bug)")
        ic = pow(dc, -1, n)
        x = (a // dm) * ic % n
        y = (b // dm) * ic % n
        Q = x * basis.P + y * basis.Q
        return self._num_eval(Q)

    # -- divisibility ---------------------------------------------------------

    def is_divisible(self, N, k_max=DEFAULT_K_MAX):
        """Whether the endomorphism is N times another endomorphism."""
        if N == 1:
            return True
        if N <= 0:
            raise NotDivisible("divisor must be positive")
        if not self.terms:
            return True
        p = self.curve.p
        for ell, e in sympy.factorint(N).items():
            if ell == p:
                d = self.degree(k_max)
                v = 0
                while d % p == 0:
                    d //= p
                    v += 1
                if v < 2 * e:
                    return False
            else:
                A = self.action_matrix(ell ** e, k_max)
                if not A.is_zero():
                    return False
        return True

    def divide(self, N, k_max=DEFAULT_K_MAX):
        """Efficient representation of self/N, or None when not integral."""
        if not self.is_divisible(N, k_max):
            return None
        tr = None
        if self._trace is not None:
            tr = self._trace // N
        dg = None
        if self._degree is not None:
            dg = self._degree // (N * N)
        return EndoRep(self.curve, self.terms, self.den * N,
                       trace=tr, degree=dg)

    def reduce_at(self, N, k_max=DEFAULT_K_MAX):
        """An N-reduced shift (self - t) / N^e for an odd N >= 3: the result
        lies outside Z + N End(E)."""
        if N < 3 or N % 2 == 0:
            raise NotDivisible("reduction level must be odd and >= 3")
        if self.is_scalar():
            raise ScalarInput("cannot reduce a scalar endomorphism")
        t = self.trace(k_max)
        gamma = self * 2 - t
        gamma._trace = 0
        if self._degree is not None:
            gamma._degree = 4 * self._degree - t * t
        beta = gamma
        while True:
            nxt = beta.divide(N, k_max)
            if nxt is None:
                break
            beta = nxt
        half = beta.divide(2, k_max)
        if half is None:
            half = (beta + 1).divide(2, k_max)
        if half is None:
            raise NotEndomorphism("parity correction failed (bug)")
        return half


def point_order(P):
    """Exact order of a point over F_{p^{2k}} on a canonical model."""
    if P.infinity:
        return 1
    ctx = P.ctx
    n = ctx.p ** ctx.k - (-1) ** ctx.k
    for q in sympy.primefactors(n):
        while n % q == 0 and (n // q * P).infinity:
            n //= q
    return n

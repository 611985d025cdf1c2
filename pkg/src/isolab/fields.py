"""Exact arithmetic in F_p, F_{p^2} and towers F_{p^{2k}}.

A context is built as F_{p^2} = F_p[x]/(x^2 - c) with c = -1 when p = 3 mod 4
and otherwise the smallest positive non-residue, followed by a single extension
F_{p^{2k}} = F_{p^2}[t]/(g(t)) where g is the deterministically-first
irreducible binomial (or, failing that, trinomial) in a fixed enumeration
order.  Elements are dense little-endian coefficient vectors over F_p in the
basis (1, x, t, x t, t^2, x t^2, ...).
"""

from __future__ import annotations

import functools

import numpy as np
import sympy

from .errors import (CompositeModulus, ContextMismatch, DivisionByZero,
                     NoRoot, UnsupportedSize)

DEFAULT_WORD_BITS = 40

# numpy int64 products must not overflow: coefficients < p, convolution sums
# k terms of size p^2.
_NUMPY_P_LIMIT = 1 << 25


def _pair_mul(a, b, c, p):
    # (a0 + a1 x)(b0 + b1 x) with x^2 = c
    a0, a1 = a
    b0, b1 = b
    return ((a0 * b0 + c * a1 * b1) % p, (a0 * b1 + a1 * b0) % p)


def _pair_inv(a, c, p):
    a0, a1 = a
    d = (a0 * a0 - c * a1 * a1) % p
    if d == 0:
        raise DivisionByZero("inverse of zero in F_p^2")
    di = pow(d, p - 2, p)
    return (a0 * di % p, (-a1) * di % p)


class FieldCtx:
    """Immutable context for F_{p^{2k}}."""

    def __init__(self, p, k, word_bits=DEFAULT_WORD_BITS):
        if not sympy.isprime(p):
            raise CompositeModulus(f"p = {p} is not prime")
        if p <= 3:
            raise UnsupportedSize("characteristic 2 and 3 are unsupported")
        if p.bit_length() > word_bits:
            raise UnsupportedSize(
                f"p needs {p.bit_length()} bits, budget is {word_bits}")
        if k < 1:
            raise UnsupportedSize("extension half-degree must be >= 1")
        self.p = p
        self.k = k
        self.n = 2 * k              # degree over F_p
        self.q = p ** (2 * k)
        self.c = self._choose_c(p)
        self.top = None             # None (k=1), ('bin', d) or ('tri', a, b)
        if k > 1:
            self.top = self._choose_top(p, k, self.c)
        self.use_numpy = p < _NUMPY_P_LIMIT and k >= 2
        if self.use_numpy:
            # residues of t^k as an F_{p^2} multiple used in folding
            if self.top[0] == 'bin':
                self._fold_d = self.top[1]
        if k >= 2:
            # slot width for Kronecker-packed convolutions: products of
            # sums (< 2p each) accumulated over up to k terms
            self._kron_bits = 2 * (p.bit_length() + 1) + k.bit_length() + 1
            self._kron_mask = (1 << self._kron_bits) - 1
        self.zero = FieldElem(self, (0,) * self.n)
        self.one = FieldElem(self, (1,) + (0,) * (self.n - 1))
        self._sqrt_data = None
        self._embed_cache = {}

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _choose_c(p):
        if p % 4 == 3:
            return p - 1
        c = 2
        while pow(c, (p - 1) // 2, p) != p - 1:
            c += 1
        return c

    @staticmethod
    def _binomial_irreducible(k, d, c, p, fac_q1):
        # Lidl-Niederreiter 3.75: t^k - d irreducible over F_q iff every
        # prime factor of k divides ord(d), gcd(k, (q-1)/ord(d)) = 1, and
        # q = 1 mod 4 whenever 4 | k.
        q1 = p * p - 1
        e = q1
        for r in fac_q1:
            while e % r == 0 and _fp2_pow(d, e // r, c, p) == (1, 0):
                e //= r
        for r in sympy.primefactors(k):
            if e % r != 0:
                return False
        if sympy.gcd(k, q1 // e) != 1:
            return False
        if k % 4 == 0 and (p * p) % 4 != 1:
            return False
        return True

    def _choose_top(self, p, k, c):
        fac_q1 = sympy.primefactors(p * p - 1)
        for idx in range(1, min(p * p, 20000)):
            d = (idx % p, idx // p)
            if d == (0, 0):
                continue
            if self._binomial_irreducible(k, d, c, p, fac_q1):
                return ('bin', d)
        # no irreducible binomial; fall back to trinomials t^k + a t + b in a
        # fixed enumeration order, checked by a generic irreducibility test
        from . import polys
        base = build_field(p, 1)
        for s in range(1, 4000):
            for na in range(s + 1):
                nb = s - na
                if nb == 0:
                    continue
                a = base.nth_element(na)
                b = base.nth_element(nb)
                f = [b, a] + [base.zero] * (k - 2) + [base.one]
                if polys.is_irreducible(f, base):
                    return ('tri', (a.coeffs[0], a.coeffs[1]),
                            (b.coeffs[0], b.coeffs[1]))
        raise UnsupportedSize(f"no sparse modulus found for k = {k}")

    # -- admin ----------------------------------------------------------------

    @property
    def modulus_chain(self):
        """Little-endian coefficient lists of the defining polynomials."""
        chain = [[(-self.c) % self.p, 0, 1]]
        if self.top is not None:
            if self.top[0] == 'bin':
                d = self.top[1]
                chain.append([((-d[0]) % self.p, (-d[1]) % self.p)]
                             + [(0, 0)] * (self.k - 1) + [(1, 0)])
            else:
                _, a, b = self.top
                chain.append([b, a] + [(0, 0)] * (self.k - 2) + [(1, 0)])
        return chain

    def __repr__(self):
        return f"FieldCtx(p={self.p}, k={self.k})"

    def __reduce__(self):
        return (build_field, (self.p, self.k))

    # -- element constructors -------------------------------------------------

    def elem(self, coeffs):
        coeffs = tuple(int(x) % self.p for x in coeffs)
        if len(coeffs) < self.n:
            coeffs = coeffs + (0,) * (self.n - len(coeffs))
        if len(coeffs) != self.n:
            raise ValueError("coefficient vector too long")
        return FieldElem(self, coeffs)

    def from_int(self, a):
        return self.elem((a,))

    def gen(self):
        """Generator of the top extension step (x for k = 1, else t)."""
        if self.k == 1:
            return self.elem((0, 1))
        return self.elem((0, 0, 1))

    def gen_base(self):
        """The square root of c generating F_{p^2} inside this field."""
        return self.elem((0, 1))

    def nth_element(self, idx):
        """Canonical enumeration: base-p digits of idx, little-endian."""
        coeffs = []
        for _ in range(self.n):
            coeffs.append(idx % self.p)
            idx //= self.p
        if idx:
            raise ValueError("enumeration index out of range")
        return FieldElem(self, tuple(coeffs))

    def elements(self):
        for idx in range(self.q):
            yield self.nth_element(idx)

    # -- arithmetic cores -----------------------------------------------------

    def _mul(self, u, v):
        p, k, c = self.p, self.k, self.c
        if k == 1:
            return ((u[0] * v[0] + c * u[1] * v[1]) % p,
                    (u[0] * v[1] + u[1] * v[0]) % p)
        if k >= 2:
            return self._mul_kron(u, v)
        # schoolbook over F_{p^2}
        prod = [(0, 0)] * (2 * k - 1)
        for i in range(k):
            ai = (u[2 * i], u[2 * i + 1])
            if ai == (0, 0):
                continue
            for j in range(k):
                bj = (v[2 * j], v[2 * j + 1])
                if bj == (0, 0):
                    continue
                m = _pair_mul(ai, bj, c, p)
                cur = prod[i + j]
                prod[i + j] = ((cur[0] + m[0]) % p, (cur[1] + m[1]) % p)
        return self._reduce_pairs(prod)

    def _mul_kron(self, u, v):
        """Schoolbook in F_{p^2}[t] via three integer convolutions, each a
        single big-int product on Kronecker-packed coefficient vectors."""
        p, k, c = self.p, self.k, self.c
        B = self._kron_bits
        mask = self._kron_mask
        a0 = a1 = b0 = b1 = s_a = s_b = 0
        shift = 0
        for i in range(k):
            a0 |= u[2 * i] << shift
            a1 |= u[2 * i + 1] << shift
            b0 |= v[2 * i] << shift
            b1 |= v[2 * i + 1] << shift
            shift += B
        s_a = a0 + a1
        s_b = b0 + b1
        c00 = a0 * b0
        c11 = a1 * b1
        c01 = s_a * s_b - c00 - c11
        e = []
        o = []
        for _ in range(2 * k - 1):
            x00 = c00 & mask
            x11 = c11 & mask
            e.append((x00 + c * x11) % p)
            o.append((c01 & mask) % p)
            c00 >>= B
            c11 >>= B
            c01 >>= B
        if self.top[0] == 'bin':
            d0, d1 = self._fold_d
            for i in range(2 * k - 2, k - 1, -1):
                te, to = e[i], o[i]
                j = i - k
                e[j] = (e[j] + te * d0 + c * to * d1) % p
                o[j] = (o[j] + te * d1 + to * d0) % p
            out = []
            for i in range(k):
                out.append(e[i])
                out.append(o[i])
            return tuple(out)
        return self._reduce_pairs([(e[i], o[i]) for i in range(2 * k - 1)])

    def _mul_numpy(self, u, v):
        p, k, c = self.p, self.k, self.c
        a = np.asarray(u, dtype=np.int64)
        b = np.asarray(v, dtype=np.int64)
        a0, a1 = a[0::2], a[1::2]
        b0, b1 = b[0::2], b[1::2]
        c00 = np.convolve(a0, b0)
        c11 = np.convolve(a1, b1)
        c01 = np.convolve(a0, b1) + np.convolve(a1, b0)
        e = (c00 + c * c11) % p     # coefficient of 1
        o = c01 % p                 # coefficient of x
        # reduce degree-(2k-2) poly in t
        if self.top[0] == 'bin':
            d0, d1 = self._fold_d
            te, to = e[k:], o[k:]
            e[:k - 1] = (e[:k - 1] + te * d0 + c * to * d1) % p
            o[:k - 1] = (o[:k - 1] + te * d1 + to * d0) % p
            e, o = e[:k], o[:k]
            out = np.empty(2 * k, dtype=np.int64)
            out[0::2] = e
            out[1::2] = o
            return tuple(int(x) for x in out)
        pairs = [(int(e[i]), int(o[i])) for i in range(2 * k - 1)]
        return self._reduce_pairs(pairs)

    def _reduce_pairs(self, prod):
        """Reduce a list of F_{p^2} pairs (poly in t) mod the top modulus."""
        p, k, c = self.p, self.k, self.c
        prod = list(prod)
        if self.top[0] == 'bin':
            d = self.top[1]
            for i in range(len(prod) - 1, k - 1, -1):
                hi = prod[i]
                if hi != (0, 0):
                    m = _pair_mul(hi, d, c, p)
                    lo = prod[i - k]
                    prod[i - k] = ((lo[0] + m[0]) % p, (lo[1] + m[1]) % p)
                prod[i] = (0, 0)
        else:
            _, a, b = self.top
            for i in range(len(prod) - 1, k - 1, -1):
                hi = prod[i]
                if hi != (0, 0):
                    # t^i = t^{i-k} (-a t - b)
                    ma = _pair_mul(hi, a, c, p)
                    mb = _pair_mul(hi, b, c, p)
                    j = i - k + 1
                    prod[j] = ((prod[j][0] - ma[0]) % p,
                               (prod[j][1] - ma[1]) % p)
                    prod[j - 1] = ((prod[j - 1][0] - mb[0]) % p,
                                   (prod[j - 1][1] - mb[1]) % p)
                prod[i] = (0, 0)
        out = []
        for i in range(k):
            out.extend(prod[i] if i < len(prod) else (0, 0))
        return tuple(out)

    def _inv(self, u):
        p, c, k = self.p, self.c, self.k
        if k == 1:
            return _pair_inv((u[0], u[1]), c, p)
        # extended Euclid in F_{p^2}[t] against the top modulus
        if self.top[0] == 'bin':
            d = self.top[1]
            mod = [((-d[0]) % p, (-d[1]) % p)] + [(0, 0)] * (k - 1) + [(1, 0)]
        else:
            _, a, b = self.top
            mod = [b, a] + [(0, 0)] * (k - 2) + [(1, 0)]
        a_poly = [(u[2 * i], u[2 * i + 1]) for i in range(k)]
        r0, r1 = mod, _trim(a_poly)
        s0, s1 = [], [(1, 0)]
        if not r1:
            raise DivisionByZero("inverse of zero")
        while True:
            if len(r1) == 1:
                inv_lead = _pair_inv(r1[0], c, p)
                res = [_pair_mul(x, inv_lead, c, p) for x in s1]
                out = []
                for i in range(k):
                    out.extend(res[i] if i < len(res) else (0, 0))
                return tuple(out)
            q, r = _poly_divmod_pairs(r0, r1, c, p)
            r0, r1 = r1, r
            s0, s1 = s1, _poly_sub_pairs(s0, _poly_mul_pairs(q, s1, c, p), p)
            if not r1:
                raise DivisionByZero("element not invertible (bug)")

    # -- square roots ---------------------------------------------------------

    def _sqrt_setup(self):
        if self._sqrt_data is None:
            m = self.q - 1
            s = 0
            while m % 2 == 0:
                m //= 2
                s += 1
            # elements of proper subfields are always squares here, so start
            # the non-residue scan at the top basis element
            idx = self.p ** (self.n - 1) if self.n > 1 else 1
            while True:
                z = self.nth_element(idx)
                if z != self.zero and not z.is_square():
                    break
                idx += 1
            self._sqrt_data = (s, m, z ** m)
        return self._sqrt_data

    def sqrt(self, a):
        """Deterministic square root (lexicographically smaller of the two)."""
        if not isinstance(a, FieldElem) or a.ctx is not self:
            a = coerce(self, a)
        if a == self.zero:
            return a
        if not a.is_square():
            raise NoRoot(f"{a} is not a square")
        s, m, zm = self._sqrt_setup()
        # Tonelli-Shanks
        cc = zm
        t = a ** m
        r = a ** ((m + 1) // 2)
        mm = s
        one = self.one
        while t != one:
            t2 = t
            i = 0
            while t2 != one:
                t2 = t2 * t2
                i += 1
            b = cc
            for _ in range(mm - i - 1):
                b = b * b
            r = r * b
            cc = b * b
            t = t * cc
            mm = i
        r2 = -r
        return r if r.coeffs <= r2.coeffs else r2


class FieldElem:
    __slots__ = ('ctx', 'coeffs')

    def __init__(self, ctx, coeffs):
        self.ctx = ctx
        self.coeffs = coeffs

    # -- plumbing -------------------------------------------------------------

    def _co(self, other):
        if isinstance(other, FieldElem):
            if other.ctx is not self.ctx:
                if other.ctx.p == self.ctx.p and other.ctx.k == self.ctx.k:
                    return other
                raise ContextMismatch(
                    f"mixed contexts {self.ctx} and {other.ctx}")
            return other
        if isinstance(other, int):
            return self.ctx.from_int(other)
        return NotImplemented

    def __eq__(self, other):
        other = self._co(other)
        if other is NotImplemented:
            return NotImplemented
        return self.coeffs == other.coeffs

    def __hash__(self):
        return hash((self.ctx.p, self.ctx.k, self.coeffs))

    def __bool__(self):
        return any(self.coeffs)

    def __repr__(self):
        return f"Fq({self.ctx.p}^{self.ctx.n}; {list(self.coeffs)})"

    # -- ring operations ------------------------------------------------------

    def __add__(self, other):
        other = self._co(other)
        if other is NotImplemented:
            return NotImplemented
        p = self.ctx.p
        return FieldElem(self.ctx, tuple(
            (a + b) % p for a, b in zip(self.coeffs, other.coeffs)))

    __radd__ = __add__

    def __sub__(self, other):
        other = self._co(other)
        if other is NotImplemented:
            return NotImplemented
        p = self.ctx.p
        return FieldElem(self.ctx, tuple(
            (a - b) % p for a, b in zip(self.coeffs, other.coeffs)))

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        p = self.ctx.p
        return FieldElem(self.ctx, tuple((-a) % p for a in self.coeffs))

    def __mul__(self, other):
        other = self._co(other)
        if other is NotImplemented:
            return NotImplemented
        return FieldElem(self.ctx, self.ctx._mul(self.coeffs, other.coeffs))

    __rmul__ = __mul__

    def inv(self):
        if not self:
            raise DivisionByZero("inverse of zero")
        return FieldElem(self.ctx, self.ctx._inv(self.coeffs))

    def __truediv__(self, other):
        other = self._co(other)
        if other is NotImplemented:
            return NotImplemented
        return self * other.inv()

    def __rtruediv__(self, other):
        return self.inv() * other

    def __pow__(self, e):
        if e < 0:
            return self.inv() ** (-e)
        result = self.ctx.one
        base = self
        while e:
            if e & 1:
                result = result * base
            base = base * base
            e >>= 1
        return result

    # -- field-specific operations --------------------------------------------

    def frobenius(self, i=1):
        """x -> x^{p^i}."""
        return self ** (self.ctx.p ** (i % self.ctx.n))

    def is_square(self):
        if not self:
            return True
        return self ** ((self.ctx.q - 1) // 2) == self.ctx.one

    def sqrt(self):
        return self.ctx.sqrt(self)

    def lift_int(self):
        """Inverse of from_int for prime-field elements."""
        if any(self.coeffs[1:]):
            raise ValueError("element not in F_p")
        return self.coeffs[0]

    def in_base(self):
        """True when the element lies in F_{p^2} (no t components)."""
        return not any(self.coeffs[2:])

    def to_base(self):
        """Project to the F_{p^2} subcontext; requires in_base()."""
        if not self.in_base():
            raise ValueError("element not in F_{p^2}")
        base = build_field(self.ctx.p, 1)
        return FieldElem(base, self.coeffs[:2])


def coerce(ctx, a):
    """Bring a into ctx: ints, F_{p^2} elements, or same-shape elements."""
    if isinstance(a, int):
        return ctx.from_int(a)
    if isinstance(a, FieldElem):
        if a.ctx is ctx or (a.ctx.p == ctx.p and a.ctx.k == ctx.k):
            return FieldElem(ctx, a.coeffs)
        if a.ctx.p == ctx.p and a.ctx.k == 1:
            return FieldElem(ctx, a.coeffs + (0,) * (ctx.n - 2))
        raise ContextMismatch(f"cannot coerce {a.ctx} into {ctx}")
    raise TypeError(f"cannot coerce {a!r}")


def embed(a, ctx2):
    """Canonical embedding F_{p^{2k1}} -> F_{p^{2k2}} for k1 | k2.

    The generator of the source tower step is sent to the lexicographically
    smallest root of its minimal polynomial in the target.  Base-field
    (F_{p^2}) elements embed coefficient-wise.
    """
    ctx1 = a.ctx
    if ctx1.p != ctx2.p:
        raise ContextMismatch("different characteristic")
    if ctx2.k % ctx1.k != 0:
        raise ContextMismatch("not a subfield")
    if ctx1.k == ctx2.k:
        return FieldElem(ctx2, a.coeffs)
    if ctx1.k == 1:
        return coerce(ctx2, a)
    key = ctx1.k
    if key not in ctx2._embed_cache:
        from . import polys
        # minimal polynomial of t1 over F_{p^2}, coefficients pushed into ctx2
        chain = ctx1.modulus_chain[1]
        f = [coerce(ctx2, build_field(ctx1.p, 1).elem(pair)) for pair in chain]
        rs = polys.roots(f, ctx2)
        if not rs:
            raise ContextMismatch("embedding root not found (bug)")
        root = rs[0]
        pows = [ctx2.one]
        for _ in range(ctx1.k - 1):
            pows.append(pows[-1] * root)
        ctx2._embed_cache[key] = pows
    pows = ctx2._embed_cache[key]
    out = ctx2.zero
    base1 = build_field(ctx1.p, 1)
    for i in range(ctx1.k):
        pair = FieldElem(base1, a.coeffs[2 * i:2 * i + 2])
        out = out + coerce(ctx2, pair) * pows[i]
    return out


# -- helpers for pair-coefficient polynomials (used by _inv and the modulus
#    search); little-endian lists of (c0, c1) with zero-trimming -------------

def _trim(f):
    while f and f[-1] == (0, 0):
        f.pop()
    return f


def _poly_mul_pairs(f, g, c, p):
    if not f or not g:
        return []
    out = [(0, 0)] * (len(f) + len(g) - 1)
    for i, a in enumerate(f):
        if a == (0, 0):
            continue
        for j, b in enumerate(g):
            if b == (0, 0):
                continue
            m = _pair_mul(a, b, c, p)
            cur = out[i + j]
            out[i + j] = ((cur[0] + m[0]) % p, (cur[1] + m[1]) % p)
    return _trim(out)


def _poly_sub_pairs(f, g, p):
    n = max(len(f), len(g))
    out = []
    for i in range(n):
        a = f[i] if i < len(f) else (0, 0)
        b = g[i] if i < len(g) else (0, 0)
        out.append(((a[0] - b[0]) % p, (a[1] - b[1]) % p))
    return _trim(out)


def _poly_divmod_pairs(f, g, c, p):
    f = list(f)
    q = [(0, 0)] * max(len(f) - len(g) + 1, 0)
    inv_lead = _pair_inv(g[-1], c, p)
    while len(f) >= len(g):
        coef = _pair_mul(f[-1], inv_lead, c, p)
        shift = len(f) - len(g)
        q[shift] = coef
        for i, b in enumerate(g):
            m = _pair_mul(coef, b, c, p)
            cur = f[shift + i]
            f[shift + i] = ((cur[0] - m[0]) % p, (cur[1] - m[1]) % p)
        f = _trim(f)
    return _trim(q), f


def _fp2_pow(d, e, c, p):
    result = (1, 0)
    base = d
    while e:
        if e & 1:
            result = _pair_mul(result, base, c, p)
        base = _pair_mul(base, base, c, p)
        e >>= 1
    return result


@functools.lru_cache(maxsize=None)
def build_field(p, k, word_bits=DEFAULT_WORD_BITS):
    """Deterministic context for F_{p^{2k}}."""
    return FieldCtx(p, k, word_bits=word_bits)

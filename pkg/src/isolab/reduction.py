"""Oracle-to-EndRing reduction drivers.

Contents: the walk-conjugation enrichment of a one-endomorphism oracle,
the main oracle-to-ring driver (rank building, saturation, index
factor refinement), pathfinding by meet-in-the-middle, collision
endomorphisms, and the converter from hash collisions to endomorphisms.
"""

import math
import time

import sympy

from .curves import enumerate_supersingular, torsion_field_degree
from .endos import EndoRep
from .errors import (BadKernel, NotACollision, OracleFailure,
                     ReductionFailure, Timeout)
from .isogenies import canonical_steps, dual_step, random_walk
from .lattices import (absorb, index_in_maximal, lattice_from, ring_closure,
                       saturate_at, saturate_at_p)
from .rand import make_rng


class ReductionParams:
    """Walk lengths and budgets for the main driver; the defaults
    reproduce the provable formulas (hundreds of steps), overrides
    give the empirically sufficient desk-scale lengths."""

    __slots__ = ('k1_override', 'k2_override', 'small_prime_bound',
                 'timeout', 'seed', 'max_iters', 'torsion_degree_budget')

    def __init__(self, k1_override=None, k2_override=None,
                 small_prime_bound=50, timeout=None, seed=0,
                 max_iters=300, torsion_degree_budget=40):
        self.k1_override = k1_override
        self.k2_override = k2_override
        self.small_prime_bound = small_prime_bound
        self.timeout = timeout
        self.seed = seed
        self.max_iters = max_iters
        self.torsion_degree_budget = torsion_degree_budget

    def k1(self, p):
        return self.k1_override if self.k1_override is not None \
            else default_k1(p)

    def k2(self, p, N):
        return self.k2_override if self.k2_override is not None \
            else default_k2(p, N)


def default_k1(p):
    num = math.log(12 * 9 * (1 + math.sqrt(3)) * math.sqrt(p + 13))
    return math.ceil(num / math.log(3 / (2 * math.sqrt(2))))


def default_k2(p, N):
    x = 4100000 * math.log(N) ** 12 * N * N * math.sqrt(p + 13)
    return math.ceil(12 * math.log(x))


def default_mixing_length(p, ell):
    """Walk length after which endpoints are close to stationary; the
    provable bound targets O(1/p) closeness, this desk-scale default
    relies on the measured spectral gap."""
    return math.ceil(2 * math.log(p) / math.log(ell)) + 4


# -- composition plumbing -----------------------------------------------------

_dual_of = dual_step


def _scalar_pair(a, b):
    """If b o a is multiplication by an integer, return it, else None.
    That happens when b has the kernel of dual(a): the composite is
    sigma^t [ell] for an automorphism power t, which is +-[ell] when t
    is 0 or half the automorphism order."""
    if b.ell != a.ell or b.domain.key() != a.codomain.key():
        return None
    d = _dual_of(a)
    if b.index != d.index:
        return None
    from .curves import aut_order
    order = aut_order(b.codomain)
    t = (b.post_aut - d.post_aut) % order
    if t == 0:
        return a.ell
    if t == order // 2:
        return -a.ell
    return None


def _simplify_steps(steps):
    """Cancel adjacent step pairs composing to a scalar: if b has the
    kernel of dual(a) then b(a(P)) = +-[ell]P, and the pair moves into
    the coefficient.  Returns (multiplier, reduced step tuple)."""
    mult = 1
    stack = []
    for s in steps:
        if stack:
            c = _scalar_pair(stack[-1], s)
            if c is not None:
                mult *= c
                stack.pop()
                continue
        stack.append(s)
    return mult, tuple(stack)


def conjugate_by_walk(path, beta):
    """The endomorphism dual(path) o beta o path on path.start, with the
    trace and degree carried over exactly (trace scales by deg(path),
    degree by deg(path)^2)."""
    if beta.curve.key() != path.end.key():
        raise OracleFailure("oracle output lives on the wrong curve")
    if not path.steps:
        return beta
    fwd = tuple(path.steps)
    bwd = tuple(_dual_of(s) for s in reversed(path.steps))
    d = path.degree
    terms = []
    for c, st in beta.terms:
        mult, red = _simplify_steps(fwd + st + bwd)
        terms.append((c * mult, red))
    return EndoRep(path.start, tuple(terms), beta.den,
                   trace=d * beta.trace(), degree=d * d * beta.degree())


def rich(E, k, oracle, seed=0, rng=None):
    """Enriched oracle: query at the endpoint of a uniform 2-walk of
    length k and pull the answer back through the walk."""
    if rng is None:
        rng = make_rng(seed)
    walk = random_walk(E, 2, k, rng=rng)
    beta = oracle(walk.end)
    if beta.is_scalar():
        raise OracleFailure("oracle returned a scalar endomorphism")
    return conjugate_by_walk(walk, beta)


# -- index bookkeeping --------------------------------------------------------

def _icbrt(n):
    r = round(n ** (1 / 3))
    while r ** 3 > n:
        r -= 1
    while (r + 1) ** 3 <= n:
        r += 1
    return r if r ** 3 == n else None


def _strip_cube(N, e):
    while N > 1:
        r = _icbrt(N)
        if r is None:
            break
        N, e = r, 3 * e
    return N, e


def cube_free_factor(n):
    """Initial factor list n = N^(3^m) with N not a cube (as a list of
    (base, exponent) pairs; refined later by gcd splitting)."""
    if n < 1:
        raise ReductionFailure("index must be positive")
    if n == 1:
        return []
    N, e = _strip_cube(n, 1)
    return [(N, e)]


def refine_factors(factors, d):
    """Split any base with a proper gcd with d, re-extracting cube roots
    so no base is a perfect cube.  Returns (new list, changed flag)."""
    out = []
    changed = False
    for N, e in factors:
        g = math.gcd(d, N)
        if 1 < g < N:
            changed = True
            for part in (g, N // g):
                out.append(_strip_cube(part, e))
        else:
            out.append((N, e))
    return out, changed


def _update_factors(factors, new_index):
    """Peel the known bases off a recomputed (smaller) index; any
    leftover cofactor enters as a fresh cube-free block."""
    r = new_index
    out = []
    for N, e in factors:
        v = 0
        while v < e and r % N == 0:
            r //= N
            v += 1
        if v:
            out.append((N, v))
    if r > 1:
        out.extend(cube_free_factor(r))
    return out


def _index_of(L):
    """Index of a rank-4 lattice containing 1 inside the maximal order:
    sqrt(disc)/p."""
    d = L.disc()
    s = math.isqrt(d)
    if s * s != d:
        raise ReductionFailure("lattice discriminant is not a square")
    p = L.curve.p
    if s % p:
        raise ReductionFailure("discriminant lacks the ramified factor")
    return s // p


# -- main driver --------------------------------------------------------------

def one_end_to_endring(E, oracle, params=None, log=None):
    """Grow End(E) from a one-endomorphism oracle: build a rank-4 ring
    from enriched samples, saturate at 2 and at p, then repeatedly
    sample reduced triples at each factor of the remaining index until
    the index is 1."""
    if params is None:
        params = ReductionParams()
    p = E.p
    rng = make_rng(params.seed, stream=1)
    t0 = time.monotonic()

    def check_budget(diag):
        if params.timeout is not None \
                and time.monotonic() - t0 > params.timeout:
            raise Timeout("reduction budget exhausted", diagnostics=diag)

    k1 = params.k1(p)
    one = EndoRep.scalar(E, 1)
    samples = []
    rank = 1
    first_iters = 0
    while True:
        first_iters += 1
        if first_iters > 200:
            raise Timeout("rank-4 stage stalled", diagnostics={'rank': rank})
        check_budget({'stage': 'rank', 'rank': rank})
        samples.append(rich(E, k1, oracle, rng=rng))
        # generate with raw samples plus their pairwise products so every
        # handle stays short; the rank-4 frame is then cheap to work with
        gens = [one] + list(samples)
        for i, a in enumerate(samples):
            for b in samples[i + 1:]:
                gens.append(a * b)
                gens.append(b * a)
        L = lattice_from(gens)
        rank = L.rank
        if log is not None:
            log.append({'stage': 'rank', 'iter': first_iters, 'rank': rank})
        if rank == 4:
            R = ring_closure(L)
            break

    R = saturate_at(R, 2)
    R = saturate_at_p(R)
    index = index_in_maximal(R)
    factors = cube_free_factor(index)
    if log is not None:
        log.append({'stage': 'saturated', 'index': index,
                    'factors': list(factors)})

    iters = 0
    while index != 1:
        iters += 1
        if iters > params.max_iters:
            raise Timeout("second stage budget exhausted", partial=R,
                          diagnostics={'index': index,
                                       'factors': list(factors)})
        check_budget({'stage': 'factor', 'index': index,
                      'factors': list(factors)})
        N = factors[-1][0]
        if N % 2 == 0:
            raise ReductionFailure(
                "even index factor after 2-saturation (bug)")
        if max(torsion_field_degree(p, q) for q in sympy.primefactors(N)) \
                > params.torsion_degree_budget:
            # E[N] is out of reach at desk scale; a raw enriched sample
            # almost surely leaves the offending local subring, so adjoin
            # one and re-derive the index instead of reducing at N
            alpha = rich(E, params.k1(p), oracle, rng=rng)
            R2 = absorb(R, [alpha])
            if R2 is R:
                continue
            R = saturate_at_p(saturate_at(R2, 2))
            new_index = index_in_maximal(R)
            if new_index > index or index % new_index:
                raise ReductionFailure("index failed to drop (bug)")
            index = new_index
            factors = cube_free_factor(index)
            if log is not None:
                log.append({'stage': 'factor', 'iter': iters,
                            'skipped_N': N, 'index': index,
                            'factors': list(factors)})
            continue
        k2 = params.k2(p, N)
        alphas = [rich(E, k2, lambda Eq: oracle(Eq).reduce_at(N), rng=rng)
                  for _ in range(3)]
        Lam = lattice_from([one] + alphas)
        entry = {'stage': 'factor', 'iter': iters, 'N': N,
                 'rank': Lam.rank}
        if Lam.rank == 4:
            idx_lam = _index_of(Lam)
            t = idx_lam
            while t % N == 0:
                t //= N
            d = math.gcd(t, N)
            entry['lattice_index'] = idx_lam
            if d != 1:
                factors, _ = refine_factors(factors, d)
                entry['refined_by'] = d
            R2 = absorb(R, Lam.basis)
            if R2 is not R:
                R = R2
                new_index = index_in_maximal(R)
                if new_index >= index or index % new_index:
                    raise ReductionFailure("index failed to drop (bug)")
                index = new_index
                factors = _update_factors(factors, index)
                entry['index'] = index
        if log is not None:
            entry['factors'] = list(factors)
            log.append(entry)
    return R


# -- collisions ---------------------------------------------------------------

def collision_endomorphism(E0, ell, k, seed=0, max_samples=None, stats=None):
    """Walk until two distinct length-k walks meet at the same j; the
    second walk composed with the dual of the first is a degree ell^2k
    endomorphism of the root."""
    rng = make_rng(seed)
    p = E0.p
    if max_samples is None:
        max_samples = 200 * math.isqrt(p) + 200
    table = {}
    for i in range(1, max_samples + 1):
        w = random_walk(E0, ell, k, rng=rng)
        key = w.end.j.coeffs
        ident = tuple(s.key() for s in w.steps)
        if key in table:
            stored_ident, stored = table[key]
            if ident == stored_ident:
                continue
            mult, red = _simplify_steps(
                tuple(w.steps) + tuple(_dual_of(s)
                                       for s in reversed(stored.steps)))
            alpha = EndoRep(E0, ((mult, red),), degree=ell ** (2 * k))
            if alpha.is_scalar():
                continue
            if stats is not None:
                stats['samples'] = i
            return alpha
        table[key] = (ident, w)
    raise Timeout("no usable collision found",
                  diagnostics={'samples': max_samples,
                               'table': len(table)})


def cgl_collision_to_endo(E, m, m_prime, ell=2):
    """Turn a hash collision (two distinct non-backtracking digit
    strings with the same endpoint) into a non-scalar endomorphism."""
    from .isogenies import cgl_walk
    if tuple(m) == tuple(m_prime):
        raise NotACollision("the two messages are identical")
    w1 = cgl_walk(E, m, ell=ell)
    w2 = cgl_walk(E, m_prime, ell=ell)
    if w1.end.key() != w2.end.key():
        raise NotACollision("walk endpoints differ")
    mult, red = _simplify_steps(
        tuple(w2.steps) + tuple(_dual_of(s) for s in reversed(w1.steps)))
    alpha = EndoRep(E, ((mult, red),),
                    degree=ell ** (len(w1.steps) + len(w2.steps)))
    if alpha.is_scalar():
        raise ReductionFailure(
            "collision composite is scalar (distinct non-backtracking "
            "strings should preclude this)")
    return alpha


# -- pathfinding --------------------------------------------------------------

def isogeny_path_mitm(E0, E1, ell, n, seed=0, max_probes=None, stats=None):
    """Bidirectional search: a sqrt(p)-size table of length-n walks from
    E0, then probe walks from E1 until endpoints meet.  The returned
    path E0 -> E1 has length 2n."""
    rng = make_rng(seed)
    p = E0.p
    target = min(math.isqrt(p - 1) + 1, len(enumerate_supersingular(p)))
    if max_probes is None:
        max_probes = 500 * target + 500
    samples = 0
    table = {}
    while len(table) < target and samples < 60 * target:
        w = random_walk(E0, ell, n, rng=rng)
        samples += 1
        table.setdefault(w.end.j.coeffs, w)
    for _ in range(max_probes):
        probe = random_walk(E1, ell, n, rng=rng)
        samples += 1
        hit = table.get(probe.end.j.coeffs)
        if hit is not None:
            path = hit.concat(probe.dual())
            if path.end.j.coeffs != E1.j.coeffs:
                raise ReductionFailure("assembled path misses the target")
            if stats is not None:
                stats['samples'] = samples
                stats['table'] = len(table)
            return path
    raise Timeout("no meet-in-the-middle collision",
                  diagnostics={'samples': samples, 'table': len(table)})


# -- one endomorphism from a pathfinding oracle -------------------------------

def one_end_from_isogeny_oracle(E, iso_oracle, eps=0.25, seed=0,
                                max_iters=60, stats=None):
    """Produce a non-scalar endomorphism given any isogeny oracle: push
    a 2-torsion point through a long 3-walk, quotient by it, ask the
    oracle for a way back, and divide the composite by the largest
    power of 2.  Success is certified by 2 | deg with the result not
    divisible by 2."""
    if not 0 < eps < 1 / 3:
        raise ReductionFailure("distance parameter must be in (0, 1/3)")
    rng = make_rng(seed)
    p = E.p
    x0 = E.division_kernel_xs(2)[0][0]
    P = E.lift_x(x0)
    n = math.ceil(2 * math.log(p, 3) - 4 * math.log(eps, 3))
    for it in range(1, max_iters + 1):
        phi = random_walk(E, 3, n, rng=rng, mode='non_backtracking')
        Q = phi(P)
        nu = None
        for s in canonical_steps(phi.end, 2):
            if s.kernel_xs[0] == Q.x:
                nu = s
                break
        if nu is None:
            raise BadKernel("pushed 2-torsion point matches no kernel (bug)")
        psi = iso_oracle(nu.codomain, E)
        if psi.start.key() != nu.codomain.key() \
                or psi.end.key() != E.key():
            raise OracleFailure("pathfinding oracle returned a bad path")
        mult, red = _simplify_steps(
            tuple(phi.steps) + (nu,) + tuple(psi.steps))
        alpha = EndoRep(E, ((mult, red),),
                        degree=2 * 3 ** n * psi.degree)
        while True:
            nxt = alpha.divide(2)
            if nxt is None:
                break
            alpha = nxt
        if alpha.degree() % 2 == 0:
            if stats is not None:
                stats['iterations'] = it
            return alpha
    raise Timeout("no odd-cofactor composite found",
                  diagnostics={'iterations': max_iters})


def endring_unconditional(E, seed=0, params=None):
    """End(E) with no oracle at all: meet-in-the-middle pathfinding
    plays the isogeny oracle, which feeds the one-endomorphism
    construction, which feeds the main driver."""
    p = E.p
    n_mix = default_mixing_length(p, 2)
    counter = [0]

    def iso_oracle(Ea, Eb):
        counter[0] += 1
        return isogeny_path_mitm(Ea, Eb, 2, n_mix,
                                 seed=(seed << 20) + counter[0])

    def oracle(Eq):
        counter[0] += 1
        return one_end_from_isogeny_oracle(
            Eq, iso_oracle, seed=(seed << 20) + 500000 + counter[0])

    if params is None:
        params = ReductionParams(k1_override=18, k2_override=18, seed=seed)
    return one_end_to_endring(E, oracle, params)

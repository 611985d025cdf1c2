"""Prime-degree isogenies (Velu), duals, walks, graphs, and the CGL hash.

Every step is normalized: its codomain is the canonical model of the target
j-invariant (the Velu codomain is post-composed with an isomorphism).  Walks
therefore move on the finite set of canonical models, and all per-edge data
(kernels, torsion action matrices) is cacheable.  Edges are identified with
kernel subgroups of the domain, i.e. with isogenies modulo post-composition
by isomorphisms, which matches the graph definition used throughout.
"""

from __future__ import annotations

import functools

import sympy

from . import polys
from .curves import (Curve, Point, aut_generator, aut_order, canonical_model,
                     enumerate_supersingular, j_invariant)
from .errors import BadKernel, NotComposable, PathNotFound
from .fields import build_field, coerce
from .rand import make_rng


class IsogenyStep:
    """A normalized ell-isogeny between canonical models.

    Evaluation: Velu's rational map from the kernel x-coordinates, then
    (x, y) -> (u^2 x, u^3 y) into the canonical codomain model, then
    optionally a power of the codomain automorphism (used by duals).
    """

    __slots__ = ('domain', 'codomain', 'ell', 'kernel_xs', 'kernel_poly',
                 'index', 'u', 'post_aut', '_matrix_cache', '_dual_index')

    def __init__(self, domain, codomain, ell, kernel_xs, index, u,
                 post_aut=0):
        self.domain = domain
        self.codomain = codomain
        self.ell = ell
        self.kernel_xs = kernel_xs
        self.index = index
        self.u = u
        self.post_aut = post_aut
        ctx = domain.ctx
        poly = [ctx.one]
        for x0 in kernel_xs:
            poly = polys.mul(poly, [-x0, ctx.one])
        self.kernel_poly = tuple(poly)
        self._matrix_cache = {}
        self._dual_index = None

    @property
    def degree(self):
        return self.ell

    def key(self):
        return (self.domain.key(), self.ell, self.index, self.post_aut)

    def __repr__(self):
        return (f"Step(ell={self.ell}, {list(self.domain.j.coeffs)} -> "
                f"{list(self.codomain.j.coeffs)}, k={self.index}"
                + (f", aut^{self.post_aut}" if self.post_aut else "") + ")")

    def with_post_aut(self, a):
        s = IsogenyStep(self.domain, self.codomain, self.ell, self.kernel_xs,
                        self.index, self.u, post_aut=a)
        s._dual_index = self._dual_index
        return s

    def __call__(self, P):
        if P.infinity:
            return self.codomain.infinity(P.ctx)
        if P.curve.key() != self.domain.key():
            raise NotComposable("point not on the domain curve")
        ctx = P.ctx
        A, B = self.domain.coeffs_in(ctx)
        x, y = P.x, P.y
        if self.ell == 2:
            x0 = coerce(ctx, self.kernel_xs[0])
            if x == x0:
                return self.codomain.infinity(ctx)
            t = 3 * x0 * x0 + A
            d = x - x0
            di = d.inv()
            xx = x + t * di
            yy = y * (ctx.one - t * di * di)
        else:
            xx = x
            dacc = ctx.one
            for x0 in self.kernel_xs:
                if x == coerce(ctx, x0):
                    return self.codomain.infinity(ctx)
            deriv = ctx.one
            for x0 in self.kernel_xs:
                x0 = coerce(ctx, x0)
                # x([P+Q]) + x([P-Q]) - 2 x(Q) summed over +-pairs
                n = 2 * ((x + x0) * (x * x0 + A) + 2 * B)
                np_ = 2 * (2 * x0 * x + x0 * x0 + A)
                d = x - x0
                di = d.inv()
                di2 = di * di
                xx = xx + n * di2 - 2 * x0
                deriv = deriv + np_ * di2 - 2 * n * di2 * di
            yy = y * deriv
        u = coerce(ctx, self.u)
        u2 = u * u
        Q = Point(self.codomain, ctx, u2 * xx, u2 * u * yy)
        if self.post_aut:
            act = aut_generator(self.codomain)
            for _ in range(self.post_aut):
                Q = act(Q)
        return Q

    def dual(self):
        return dual_step(self)

    def action_matrix(self, m):
        """2x2 matrix mod m of the step on the stored torsion bases
        (columns = images of the domain basis in the codomain basis)."""
        if m not in self._matrix_cache:
            bd = self.domain.torsion_basis(m)
            bc = self.codomain.torsion_basis(m)
            a, c = bc.dlog_pair(self(bd.P))
            b, d = bc.dlog_pair(self(bd.Q))
            self._matrix_cache[m] = (a % m, b % m, c % m, d % m)
        return self._matrix_cache[m]


@functools.lru_cache(maxsize=None)
def _steps_cached(p, ell, j_coeffs):
    E = canonical_model(build_field(p, 1).elem(j_coeffs))
    subgroups = E.division_kernel_xs(ell)
    steps = []
    for idx, xs in enumerate(subgroups):
        steps.append(_velu_normalized(E, ell, xs, idx))
    return tuple(steps)


def canonical_steps(E, ell):
    """The ell+1 outgoing normalized steps of a canonical curve, in
    canonical (lexicographic kernel) order."""
    return _steps_cached(E.p, ell, E.j.coeffs)


def kernel_subgroups(E, ell):
    """Kernel polynomials of the ell+1 cyclic subgroups of E[ell], in
    canonical order."""
    return [list(s.kernel_poly) for s in canonical_steps(E, ell)]


def velu(E, kernel):
    """Normalized step from a monic kernel polynomial (list of F_{p^2}
    elements, little-endian) or a tuple of kernel x-coordinates."""
    if len(kernel) >= 2 and kernel[-1] == E.ctx.one:
        xs = set(polys.roots(list(kernel), E.ctx))
        if len(xs) != len(kernel) - 1:
            raise BadKernel("kernel polynomial is not split/squarefree")
    else:
        xs = set(kernel)
    x0 = next(iter(xs))
    two_torsion = not (x0 * x0 * x0 + E.A * x0 + E.B)
    ell = 2 if (len(xs) == 1 and two_torsion) else 2 * len(xs) + 1
    for s in canonical_steps(E, ell):
        if set(s.kernel_xs) == xs:
            return s
    raise BadKernel("kernel does not define a rational subgroup")


def _velu_normalized(E, ell, xs, idx):
    ctx = E.ctx
    A, B = E.A, E.B
    if ell == 2:
        x0 = xs[0]
        t = 3 * x0 * x0 + A
        w = x0 * t
    else:
        t = ctx.zero
        w = ctx.zero
        for x0 in xs:
            gx = 3 * x0 * x0 + A
            u_q = 4 * (x0 * x0 * x0 + A * x0 + B)
            t = t + 2 * gx
            w = w + u_q + x0 * 2 * gx
    A1 = A - 5 * t
    B1 = B - 7 * w
    j1 = j_invariant(A1, B1)
    E2 = canonical_model(j1)
    u = _iso_scalar(ctx, A1, B1, E2.A, E2.B)
    return IsogenyStep(E, E2, ell, tuple(xs), idx, u)


def _iso_scalar(ctx, A1, B1, A2, B2):
    """u with (x,y) -> (u^2 x, u^3 y) mapping y^2=x^3+A1x+B1 onto
    y^2=x^3+A2x+B2; both curves canonical-sign, so u is in F_{p^2}."""
    if not A1:
        if A2:
            raise BadKernel("isomorphism mismatch (bug)")
        target = B2 / B1
        f = [-target] + [ctx.zero] * 5 + [ctx.one]
        rs = polys.roots(f, ctx)
        if not rs:
            raise BadKernel("no sextic-twist isomorphism (bug)")
        return rs[0]
    if not B1:
        if B2:
            raise BadKernel("isomorphism mismatch (bug)")
        target = A2 / A1
        f = [-target] + [ctx.zero] * 3 + [ctx.one]
        rs = polys.roots(f, ctx)
        if not rs:
            raise BadKernel("no quartic-twist isomorphism (bug)")
        return rs[0]
    u2 = (B2 * A1) / (A2 * B1)
    u = u2.sqrt()
    if u * u * u * u * A1 != A2 or u ** 6 * B1 != B2:
        raise BadKernel("isomorphism scalar check failed (bug)")
    return u


@functools.lru_cache(maxsize=None)
def _dual_data(p, ell, j_coeffs, index):
    """(codomain kernel index, post_aut exponent) of the dual of a plain
    (post_aut = 0) step."""
    E = canonical_model(build_field(p, 1).elem(j_coeffs))
    phi = canonical_steps(E, ell)[index]
    # kernel of the dual is phi(E[ell])
    basis = E.torsion_basis(ell)
    img = None
    for T in (basis.P, basis.Q, basis.P + basis.Q):
        img = phi(T)
        if not img.infinity:
            break
    if img is None or img.infinity:
        raise BadKernel("dual kernel image vanished (bug)")
    xs_img = img.x
    cand = None
    for s in canonical_steps(phi.codomain, ell):
        for x0 in s.kernel_xs:
            if coerce(img.ctx, x0) == xs_img:
                cand = s
                break
        if cand:
            break
    if cand is None:
        raise BadKernel("dual kernel not found among subgroups (bug)")
    # psi(phi(P)) = sigma([ell]P); find sigma among Aut(E).  Testing on a
    # basis of E[m] with odd m > 2*ell (coprime to 6p) certifies the
    # relation: two degree-ell^2 maps agreeing on E[m] are equal, and no
    # nontrivial automorphism fixes a point of that order.
    a = _closing_aut(E, phi, cand, ell)
    if a is None:
        raise BadKernel("no automorphism closes the dual relation (bug)")
    return (cand.index, a)


def _closing_aut(E, phi, cand, ell):
    """Exponent a with act^a(cand(phi(P))) = [ell]P on E, or None."""
    m = 5
    while m <= 2 * ell or E.p % m == 0:
        m = int(sympy.nextprime(m))
    act = aut_generator(E)
    bas = E.torsion_basis(m)
    for a in range(act.order):
        ok = True
        for P in (bas.P, bas.Q):
            T = cand(phi(P))
            for _ in range(a):
                T = act(T)
            if T != ell * P:
                ok = False
                break
        if ok:
            return a
    return None


_dual_step_cache = {}


def dual_step(phi):
    """The dual isogeny as a normalized step: dual(phi) o phi = [ell].
    Memoized so repeated duals share one object (and its caches)."""
    cache_key = (phi.domain.p,) + phi.key()
    hit = _dual_step_cache.get(cache_key)
    if hit is None:
        hit = _dual_step_cache[cache_key] = _dual_step(phi)
    return hit


def _dual_step(phi):
    if phi.post_aut == 0:
        idx, a = _dual_data(phi.domain.p, phi.ell, phi.domain.j.coeffs,
                            phi.index)
        psi = canonical_steps(phi.codomain, phi.ell)[idx]
        d = psi.with_post_aut(a)
        d._dual_index = phi.index
        return d
    # (sigma^k o phi0)^ = phi0^ o sigma^{-k}; realize by conjugating the
    # kernel: the dual of sigma phi0 has kernel sigma(ker(dual phi0)).
    base = phi.with_post_aut(0)
    d0 = dual_step(base)
    act = aut_generator(phi.codomain)
    k = phi.post_aut
    # find the step of the codomain whose kernel is sigma^k(ker d0)
    x0 = coerce(phi.codomain.ctx, d0.kernel_xs[0])
    P = phi.codomain.lift_x(x0)
    for _ in range(k):
        P = act(P)
    cand = None
    for s in canonical_steps(phi.codomain, phi.ell):
        if any(coerce(P.ctx, xx) == P.x for xx in s.kernel_xs):
            cand = s
            break
    if cand is None:
        raise BadKernel("conjugated dual kernel missing (bug)")
    # fix the closing automorphism by evaluation
    a = _closing_aut(phi.domain, phi, cand, phi.ell)
    if a is None:
        raise BadKernel("no automorphism closes the dual relation (bug)")
    d = cand.with_post_aut(a)
    d._dual_index = phi.index
    return d


class IsogenyPath:
    """Composable sequence of steps; degree = product of step degrees."""

    __slots__ = ('start', 'steps')

    def __init__(self, start, steps=()):
        self.start = start
        steps = list(steps)
        cur = start
        for s in steps:
            if s.domain.key() != cur.key():
                raise NotComposable("path steps do not chain")
            cur = s.codomain
        self.steps = steps

    @property
    def end(self):
        return self.steps[-1].codomain if self.steps else self.start

    @property
    def degree(self):
        d = 1
        for s in self.steps:
            d *= s.ell
        return d

    def __len__(self):
        return len(self.steps)

    def __call__(self, P):
        for s in self.steps:
            P = s(P)
        return P

    def extend(self, step):
        if step.domain.key() != self.end.key():
            raise NotComposable("step does not chain onto path")
        return IsogenyPath(self.start, self.steps + [step])

    def concat(self, other):
        if other.start.key() != self.end.key():
            raise NotComposable("paths do not chain")
        return IsogenyPath(self.start, self.steps + other.steps)

    def dual(self):
        return IsogenyPath(self.end, [dual_step(s)
                                      for s in reversed(self.steps)])

    def js(self):
        out = [self.start.j]
        for s in self.steps:
            out.append(s.codomain.j)
        return out


def random_walk(E, ell, k, seed=0, mode='uniform', rng=None):
    """Length-k walk from E; 'uniform' picks all ell+1 kernels equally,
    'non_backtracking' excludes the kernel of the dual of the previous
    step."""
    if rng is None:
        rng = make_rng(seed)
    path = IsogenyPath(E)
    prev_dual_idx = None
    for _ in range(k):
        steps = canonical_steps(path.end, ell)
        if mode == 'non_backtracking' and prev_dual_idx is not None:
            choices = [s for s in steps if s.index != prev_dual_idx]
        else:
            choices = list(steps)
        s = choices[int(rng.integers(0, len(choices)))]
        d = dual_step(s)
        prev_dual_idx = d.index
        path = path.extend(s)
    return path


# -- graphs -------------------------------------------------------------------

class IsogenyGraph:
    """The ell-isogeny multigraph on supersingular j-invariants.

    adjacency[i][jdx] = number of kernel subgroups of vertex i whose target
    is vertex jdx (row sums = ell + 1); weights are 1/#Aut.
    """

    def __init__(self, p, ell, vertices, adjacency, weights):
        self.p = p
        self.ell = ell
        self.vertices = vertices      # list of j (FieldElem)
        self.adjacency = adjacency    # list of lists of ints
        self.weights = weights        # list of Fractions 1/#Aut

    def vertex_index(self, j):
        return self._index[j.coeffs]

    def to_json(self):
        edges = []
        for i, row in enumerate(self.adjacency):
            for jdx, mult in enumerate(row):
                if mult:
                    edges.append({'from': i, 'to': jdx,
                                  'multiplicity': mult})
        return {
            'p': self.p,
            'ell': self.ell,
            'vertices': [list(j.coeffs) for j in self.vertices],
            'edges': edges,
            'weights': [f"1/{int(1 / w)}" for w in self.weights],
        }


@functools.lru_cache(maxsize=None)
def build_graph(p, ell):
    from fractions import Fraction
    js = enumerate_supersingular(p)
    index = {j.coeffs: i for i, j in enumerate(js)}
    adjacency = []
    for j in js:
        E = canonical_model(j)
        row = [0] * len(js)
        for s in canonical_steps(E, ell):
            row[index[s.codomain.j.coeffs]] += 1
        adjacency.append(row)
    weights = [Fraction(1, aut_order(j)) for j in js]
    g = IsogenyGraph(p, ell, list(js), adjacency, weights)
    g._index = index
    return g


def neighbor_js(j, ell):
    """Target j-invariants (with multiplicity) of the ell+1 outgoing
    kernels; used by the enumeration BFS."""
    E = canonical_model(j)
    out = []
    for xs in E.division_kernel_xs(ell):
        ctx = E.ctx
        A, B = E.A, E.B
        if ell == 2:
            x0 = xs[0]
            t = 3 * x0 * x0 + A
            w = x0 * t
        else:
            t = ctx.zero
            w = ctx.zero
            for x0 in xs:
                gx = 3 * x0 * x0 + A
                t = t + 2 * gx
                w = w + 4 * (x0 * x0 * x0 + A * x0 + B) + 2 * x0 * gx
        out.append(j_invariant(A - 5 * t, B - 7 * w))
    return out


# -- CGL hash -----------------------------------------------------------------

def cgl_walk(E0, message, ell=2, incoming=None):
    """Non-backtracking walk encoding the digits; labels follow the
    canonical kernel order after removing the backtracking kernel.

    incoming: an IsogenyStep targeting E0, or None for the documented
    default (the virtual incoming edge whose backtracking kernel is the
    canonically-first kernel of E0).
    """
    if incoming is not None:
        if incoming.codomain.key() != E0.key():
            raise NotComposable("incoming step does not target E0")
        excluded = dual_step(incoming).index
    else:
        excluded = 0
    path = IsogenyPath(E0)
    for digit in message:
        d = int(digit)
        if not 0 <= d < ell:
            raise BadKernel(f"digit {d} out of range base {ell}")
        steps = canonical_steps(path.end, ell)
        choices = [s for s in steps if s.index != excluded]
        s = choices[d]
        excluded = dual_step(s).index
        path = path.extend(s)
    return path


def cgl_hash(E0, message, ell=2, incoming=None):
    return cgl_walk(E0, message, ell=ell, incoming=incoming).end.j

"""Isogeny graphs decorated with mod-N data, their weighted adjacency
operators, the degree decomposition of the function space, and empirical
mixing-distance estimators.

A decorated graph has vertices (E, x) where x is a datum attached to E:
nothing (trivial), a cyclic subgroup of E[N] (cyc), or a 2x2 matrix over
Z/N standing for an endomorphism class mod N (endmod).  An ell-isogeny
step phi moves the datum along; vertices are identified under Aut(E) and
weighted by 1/#Aut(E, x).
"""

import math
from collections import Counter
from fractions import Fraction

import numpy as np
import sympy

from .curves import aut_generator, canonical_model, enumerate_supersingular
from .engine import endo_matrix_modN
from .errors import BoundExceeded
from .isogenies import canonical_steps
from .rand import make_rng
from .reduction import rich

KINDS = ('trivial', 'cyc', 'endmod')


# -- 2x2 matrices over Z/N ----------------------------------------------------

def _mat_mul2(a, b, m):
    return ((a[0] * b[0] + a[1] * b[2]) % m, (a[0] * b[1] + a[1] * b[3]) % m,
            (a[2] * b[0] + a[3] * b[2]) % m, (a[2] * b[1] + a[3] * b[3]) % m)


def _adjugate2(a, m):
    return (a[3] % m, -a[1] % m, -a[2] % m, a[0] % m)


def _det2(a, m):
    return (a[0] * a[3] - a[1] * a[2]) % m


def _aut_matrix(E, m):
    """Matrix mod m of a generator of Aut(E) on the stored torsion basis."""
    act = aut_generator(E)
    bs = E.torsion_basis(m)
    a, c = bs.dlog_pair(act(bs.P))
    b, d = bs.dlog_pair(act(bs.Q))
    return (a % m, b % m, c % m, d % m), act.order


# -- datum actions ------------------------------------------------------------

def _cyc_normalize(x, m):
    # canonical generator of the cyclic subgroup <x P + y Q>: least tuple
    # under scaling by units
    best = None
    for u in range(1, m):
        if math.gcd(u, m) != 1:
            continue
        c = (u * x[0] % m, u * x[1] % m)
        if best is None or c < best:
            best = c
    return best


def _apply(kind, M, x, m):
    if kind == 'trivial':
        return x
    if kind == 'cyc':
        return _cyc_normalize((M[0] * x[0] + M[1] * x[1],
                               M[2] * x[0] + M[3] * x[1]), m)
    # endmod: phi acts by A |-> M A M^ with M^ = deg(phi) M^{-1} = adj(M)
    return _mat_mul2(_mat_mul2(M, x, m), _adjugate2(M, m), m)


def _data_for(kind, m):
    if kind == 'trivial':
        return [()]
    if kind == 'cyc':
        seen = set()
        for a in range(m):
            for b in range(m):
                if math.gcd(math.gcd(a, b), m) == 1:
                    seen.add(_cyc_normalize((a, b), m))
        return sorted(seen)
    return [(a, b, c, d) for a in range(m) for b in range(m)
            for c in range(m) for d in range(m)]


class _AutAction:
    """Orbit/stabilizer bookkeeping for Aut(E) acting on data mod N."""

    def __init__(self, E, kind, m):
        self.kind, self.m = kind, m
        if kind == 'trivial' or m == 1:
            from .curves import aut_order
            self.mats = None
            self.order = aut_order(E)
        else:
            g, order = _aut_matrix(E, m)
            self.order = order
            self.mats = []
            acc = (1, 0, 0, 1)
            for _ in range(order):
                self.mats.append(acc)
                acc = _mat_mul2(g, acc, m)

    def orbit_rep(self, x):
        if self.mats is None:
            return x
        return min(_apply(self.kind, g, x, self.m) for g in self.mats)

    def stabilizer(self, x):
        if self.mats is None:
            return self.order
        return sum(1 for g in self.mats
                   if _apply(self.kind, g, x, self.m) == x)


# -- the decorated graph ------------------------------------------------------

class ExtraDataGraph:
    __slots__ = ('p', 'N', 'kind', 'ells', 'curves', 'verts', 'weights',
                 'adj', 'vert_index', '_aut')

    def __init__(self, p, N, kind, ells, curves, verts, weights, adj, aut):
        self.p, self.N, self.kind = p, N, kind
        self.ells = tuple(ells)
        self.curves = curves
        self.verts = verts
        self.weights = weights              # exact Fractions, 1/#Aut(E, x)
        self.adj = adj                      # ell -> integer count matrix
        self.vert_index = {v: i for i, v in enumerate(verts)}
        self._aut = aut

    @property
    def n(self):
        return len(self.verts)

    def weight_array(self):
        return np.array([float(w) for w in self.weights])


def build_graph(p, N, kind, ell_set):
    """The decorated ell-isogeny graph on all supersingular curves over
    F_{p^2}, for every ell in ell_set."""
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    if math.gcd(N, p) != 1:
        raise BoundExceeded(f"N = {N} not coprime to p = {p}")
    if kind != 'trivial' and N < 2:
        raise BoundExceeded(f"kind {kind} needs N >= 2")
    for ell in ell_set:
        if not sympy.isprime(ell) or N % ell == 0 or ell == p:
            raise BoundExceeded(f"ell = {ell} must be a prime not dividing "
                                f"Np = {N * p}")
    curves = [canonical_model(j) for j in enumerate_supersingular(p)]
    by_j = {E.j.coeffs: i for i, E in enumerate(curves)}
    aut = [_AutAction(E, kind, N) for E in curves]

    verts, weights = [], []
    for ci, E in enumerate(curves):
        seen = set()
        for x in _data_for(kind, N):
            r = aut[ci].orbit_rep(x)
            if r in seen:
                continue
            seen.add(r)
            verts.append((ci, r))
            weights.append(Fraction(1, aut[ci].stabilizer(r)))
    vert_index = {v: i for i, v in enumerate(verts)}

    adj = {}
    for ell in ell_set:
        A = np.zeros((len(verts), len(verts)), dtype=np.int64)
        for src, (ci, x) in enumerate(verts):
            for s in canonical_steps(curves[ci], ell):
                cj = by_j[s.codomain.j.coeffs]
                if kind == 'trivial' or N == 1:
                    y = x
                else:
                    y = _apply(kind, s.action_matrix(N), x, N)
                A[src, vert_index[(cj, aut[cj].orbit_rep(y))]] += 1
        if not (A.sum(axis=1) == ell + 1).all():
            raise BoundExceeded(f"out-degree != {ell + 1} at ell = {ell}")
        adj[ell] = A
    return ExtraDataGraph(p, N, kind, ell_set, curves, verts, weights,
                          adj, aut)


def adjacency_op(G, ell, tol=1e-9):
    """A_ell as a float matrix; verified normal for the weighted inner
    product <f, g> = sum w_v f_v g_v."""
    A = G.adj[ell].astype(float)
    As = adjoint_op(G, ell)
    if np.abs(A @ As - As @ A).max() > tol * max(1.0, np.abs(A).max()) ** 2:
        raise BoundExceeded(f"A_{ell} is not normal")
    return A


def adjoint_op(G, ell):
    """Adjoint of A_ell for the weighted inner product: W^{-1} A^T W."""
    w = G.weight_array()
    return (G.adj[ell].astype(float).T * w[None, :]) / w[:, None]


def arriving_op(G, ell):
    """B_ell: counts edges of degree ell arriving at each vertex."""
    return G.adj[ell].astype(float).T


# -- degree decomposition -----------------------------------------------------

class _UnionFind:
    def __init__(self, n):
        self.up = list(range(n))

    def find(self, i):
        while self.up[i] != i:
            self.up[i] = self.up[self.up[i]]
            i = self.up[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.up[ri] = rj


def _units(N):
    return [a for a in range(N) if math.gcd(a, N) == 1] or [0]


class SpectralReport:
    __slots__ = ('p', 'N', 'kind', 'component', 'component_count',
                 'deg_labels', 'deg_subgroups', 'l2deg_dim', 'l2deg_dim_alt',
                 'basis', 'per_ell')

    def __init__(self, **kw):
        for k in self.__slots__:
            setattr(self, k, kw[k])


def _components(G):
    uf = _UnionFind(G.n)
    for A in G.adj.values():
        for i, j in zip(*np.nonzero(A)):
            uf.union(int(i), int(j))
    roots = {}
    comp = []
    for i in range(G.n):
        r = uf.find(i)
        comp.append(roots.setdefault(r, len(roots)))
    return comp, len(roots)


def _deg_labels(G, comp, ncomp):
    """Multiplicative degree label per vertex (relative to a component
    root) and the discrepancy subgroup of each component."""
    N = G.N
    out = [[] for _ in range(G.n)]         # directed edges with labels
    for ell, A in G.adj.items():
        li = pow(ell % N if N > 1 else 0, -1, N) if N > 1 else 0
        for i, j in zip(*np.nonzero(A)):
            out[int(i)].append((int(j), ell % N))
            out[int(j)].append((int(i), li))
    label = [None] * G.n
    gens = [set() for _ in range(ncomp)]
    for root in range(G.n):
        if label[root] is not None:
            continue
        label[root] = 1 % N
        stack = [root]
        while stack:
            u = stack.pop()
            for v, d in out[u]:
                lv = label[u] * d % N
                if label[v] is None:
                    label[v] = lv
                    stack.append(v)
                elif label[v] != lv:
                    gens[comp[u]].add(label[v] * pow(lv, -1, N) % N)
    subgroups = []
    for c in range(ncomp):
        H = {1 % N} | gens[c]
        changed = True
        while changed:
            changed = False
            for a in list(H):
                for b in list(H):
                    ab = a * b % N
                    if ab not in H:
                        H.add(ab)
                        changed = True
        subgroups.append(frozenset(H))
    return label, subgroups


def _lifted_component_count(G):
    """dim of the degree-function space, counted as connected components
    of the graph lifted to vertex x unit pairs."""
    units = _units(G.N)
    uidx = {u: i for i, u in enumerate(units)}
    nu = len(units)
    uf = _UnionFind(G.n * nu)
    for ell, A in G.adj.items():
        lm = ell % G.N
        for i, j in zip(*np.nonzero(A)):
            for a in units:
                uf.union(int(i) * nu + uidx[a],
                         int(j) * nu + uidx[a * lm % G.N if G.N > 1 else 0])
    return len({uf.find(k) for k in range(G.n * nu)})


def _deg_basis(G, comp, ncomp, label, subgroups):
    """Indicator basis of the degree-function space: one vector per
    (component, coset of its discrepancy subgroup)."""
    basis = []
    for c in range(ncomp):
        H = subgroups[c]
        cosets = {}
        for v in range(G.n):
            if comp[v] != c:
                continue
            key = min(label[v] * h % G.N for h in H) if G.N > 1 else 0
            cosets.setdefault(key, []).append(v)
        for key in sorted(cosets):
            vec = np.zeros(G.n)
            vec[cosets[key]] = 1.0
            basis.append(vec)
    return basis


def _predicted_deg_eigs(G, ell, subgroups):
    """Character eigenvalues chi(ell)(ell+1) (real parts) predicted from
    the discrepancy subgroups alone."""
    N = G.N
    units = _units(N)
    vals = []
    for H in subgroups:
        idx = len(units) // len(H)         # size of units/H
        lm = ell % N if N > 1 else 0
        # order of ell in units/H
        r, acc = 1, lm
        while (min(acc * h % N for h in H) if N > 1 else 0) != \
              (min(h % N for h in H) if N > 1 else 0):
            acc = acc * lm % N
            r += 1
        for _ in range(idx // r):
            vals.extend((ell + 1) * math.cos(2 * math.pi * k / r)
                        for k in range(r))
    return sorted(vals)


def _eig(G, ell, tol=1e-9):
    """Eigenpairs of A_ell via the weight similarity; eigenvectors are
    returned in the original coordinates."""
    A = G.adj[ell].astype(float)
    sw = np.sqrt(G.weight_array())
    S = (A * sw[:, None]) / sw[None, :]
    if np.abs(S - S.T).max() <= 1e-9 * (ell + 1):
        vals, U = np.linalg.eigh((S + S.T) / 2)
    else:
        cvals, U = np.linalg.eig(S)
        if np.abs(cvals.imag).max() > tol * (ell + 1):
            raise BoundExceeded(f"complex spectrum at ell = {ell}")
        vals, U = cvals.real, U.real
    return vals, U / sw[:, None]


def _deg_projector(G, basis):
    """Orthogonal projection onto the degree-function space for the
    weighted inner product (the indicator basis is already orthogonal)."""
    w = G.weight_array()
    P = np.zeros((G.n, G.n))
    for b in basis:
        P += np.outer(b, b * w) / float((b * b * w).sum())
    return P


def deg_decomposition(G, tol=1e-9):
    comp, ncomp = _components(G)
    label, subgroups = _deg_labels(G, comp, ncomp)
    basis = _deg_basis(G, comp, ncomp, label, subgroups)
    dim_alt = _lifted_component_count(G)
    if len(basis) != dim_alt:
        raise BoundExceeded(f"degree-space dimension mismatch: "
                            f"{len(basis)} vs {dim_alt}")
    P = _deg_projector(G, basis)
    w = G.weight_array()
    if np.abs(P @ P - P).max() > 1e-12 * max(1.0, np.abs(P).max()):
        raise BoundExceeded("projector is not idempotent")
    WP = P * w[:, None]
    if np.abs(WP - WP.T).max() > 1e-12:
        raise BoundExceeded("projector is not self-adjoint")

    per_ell = {}
    for ell in G.ells:
        vals, vecs = _eig(G, ell, tol)
        deg_eigs, low_eigs = [], []
        for k in range(len(vals)):
            v = vecs[:, k]
            pv = P @ v
            r = math.sqrt(float((pv * pv * w).sum())
                          / float((v * v * w).sum()))
            (deg_eigs if r > 0.5 else low_eigs).append(float(vals[k]))
        predicted = _predicted_deg_eigs(G, ell, subgroups)
        got = sorted(deg_eigs)
        if len(got) != len(predicted) or \
                max((abs(a - b) for a, b in zip(got, predicted)),
                    default=0.0) > 1e-6 * (ell + 1):
            raise BoundExceeded(
                f"degree eigenvalues {got} != predicted {predicted}")
        mx = max((abs(v) for v in low_eigs), default=0.0)
        if mx > 2 * math.sqrt(ell) + tol:
            raise BoundExceeded(
                f"|lambda| = {mx} > 2 sqrt({ell}) on the bounded part")
        per_ell[ell] = {'eigs': sorted(float(v) for v in vals),
                        'deg_eigs': got, 'bounded_eigs': sorted(low_eigs),
                        'predicted_deg_eigs': predicted,
                        'max_bounded': mx,
                        'ramanujan_ok': mx <= 2 * math.sqrt(ell) + tol}
    return SpectralReport(p=G.p, N=G.N, kind=G.kind, component=comp,
                          component_count=ncomp, deg_labels=label,
                          deg_subgroups=subgroups, l2deg_dim=len(basis),
                          l2deg_dim_alt=dim_alt, basis=basis,
                          per_ell=per_ell)


def delta_operator(G, X):
    """Average of A_ell/(ell+1) over primes ell < X coprime to Np."""
    ells = [ell for ell in sympy.primerange(2, X)
            if G.N % ell and ell != G.p]
    missing = [ell for ell in ells if ell not in G.adj]
    if missing:
        raise BoundExceeded(f"graph lacks ell in {missing}")
    return sum(G.adj[ell].astype(float) / (ell + 1) for ell in ells) \
        / len(ells)


def stationary_check(G, ell):
    """Exact: the weight vector is a left eigenvector of A_ell for ell+1."""
    A = G.adj[ell]
    n = G.n
    for v in range(n):
        s = sum(G.weights[u] * int(A[u, v]) for u in range(n))
        if s != (ell + 1) * G.weights[v]:
            return False
    return True


# -- empirical mixing distances ----------------------------------------------

class StatResult:
    __slots__ = ('estimate', 'sigma', 'bound', 'samples', 'extra')

    def __init__(self, estimate, sigma, bound, samples, extra=None):
        self.estimate = estimate
        self.sigma = sigma
        self.bound = bound
        self.samples = samples
        self.extra = extra or {}

    def __repr__(self):
        return (f"StatResult(estimate={self.estimate:.4g}, "
                f"sigma={self.sigma:.4g}, bound={self.bound:.4g})")


def _tv(xs, ys):
    cx, cy = Counter(xs), Counter(ys)
    n = len(xs)
    return sum(abs(cx[k] - cy[k]) for k in set(cx) | set(cy)) / (2.0 * n)


def _bootstrap_tv(xs, ys, rng, rounds=100):
    n = len(xs)
    vals = []
    for _ in range(rounds):
        idx = rng.integers(0, n, size=n)
        vals.append(_tv([xs[i] for i in idx], [ys[i] for i in idx]))
    return float(np.std(vals))


def stat_distance_rich(table, E, N, k, samples, oracle, g, seed=0):
    """Total-variation distance between the mod-N distribution of the
    enriched oracle's output and its conjugate by g (deg g = 1 mod N),
    with a bootstrap error bar and the mixing bound it must satisfy."""
    p = E.p
    if g.degree() % N != 1:
        raise BoundExceeded(f"deg(g) = {g.degree()} != 1 mod {N}")
    MG = endo_matrix_modN(table, g, N)
    Mg = (MG.a, MG.b, MG.c, MG.d)
    rng = make_rng(seed)
    xs, ys = [], []
    for _ in range(samples):
        alpha = rich(E, k, oracle, rng=rng)
        MA = endo_matrix_modN(table, alpha, N)
        Ma = (MA.a, MA.b, MA.c, MA.d)
        xs.append(Ma)
        ys.append(_mat_mul2(_mat_mul2(Mg, Ma, N), _adjugate2(Mg, N), N))
    est = _tv(xs, ys)
    sigma = _bootstrap_tv(xs, ys, rng)
    lam = 2 * math.sqrt(2) / 3
    bound = (1 + math.sqrt(3)) / 4 * lam ** k * N * N * math.sqrt(p + 13)
    return StatResult(est, sigma, bound, samples)


def _hom_classes(curves, aut_mats, N, det):
    """Classes (curve, M mod N) with det M = det, modulo Aut post-action;
    returns the class list and the stationary measure nu on it."""
    classes, mass = [], []
    for ci in range(len(curves)):
        mats = aut_mats[ci]
        seen = set()
        for a in range(N):
            for b in range(N):
                for c in range(N):
                    for d in range(N):
                        M = (a, b, c, d)
                        if _det2(M, N) != det:
                            continue
                        r = min(_mat_mul2(g, M, N) for g in mats)
                        if r in seen:
                            continue
                        seen.add(r)
                        stab = sum(1 for g in mats
                                   if _mat_mul2(g, M, N) == M)
                        classes.append((ci, r))
                        mass.append(Fraction(1, stab))
    tot = sum(mass)
    return classes, [m / tot for m in mass]


def stat_distance_walk(E0, N, ell, k, samples, seed=0):
    """Distance between the endpoint pair (curve, walk mod N) of a
    length-k uniform ell-walk from E0 and the weighted stationary
    measure on classes of that degree, with the mixing bound."""
    p = E0.p
    if math.gcd(N, ell * p) != 1:
        raise BoundExceeded(f"N = {N} must be coprime to ell p")
    curves = [canonical_model(j) for j in enumerate_supersingular(p)]
    by_j = {E.j.coeffs: i for i, E in enumerate(curves)}
    aut_mats = []
    for E in curves:
        g, order = _aut_matrix(E, N)
        mats, acc = [], (1, 0, 0, 1)
        for _ in range(order):
            mats.append(acc)
            acc = _mat_mul2(g, acc, N)
        aut_mats.append(mats)
    det = pow(ell, k, N)
    classes, nu = _hom_classes(curves, aut_mats, N, det)
    cindex = {c: i for i, c in enumerate(classes)}

    rng = make_rng(seed)
    hits = []
    for _ in range(samples):
        cur, M = by_j[E0.j.coeffs], (1, 0, 0, 1)
        for _ in range(k):
            steps = canonical_steps(curves[cur], ell)
            s = steps[int(rng.integers(0, len(steps)))]
            M = _mat_mul2(s.action_matrix(N), M, N)
            cur = by_j[s.codomain.j.coeffs]
        hits.append(cindex[(cur, min(_mat_mul2(g, M, N)
                                     for g in aut_mats[cur]))])

    counts = Counter(hits)
    est = sum(abs(counts[i] / samples - float(nu[i]))
              for i in range(len(classes))) / 2.0

    vals = []
    for _ in range(100):
        idx = rng.integers(0, samples, size=samples)
        cb = Counter(hits[i] for i in idx)
        vals.append(sum(abs(cb[i] / samples - float(nu[i]))
                        for i in range(len(classes))) / 2.0)
    sigma = float(np.std(vals))
    bound = (1 / (2 * math.sqrt(6))) * (2 * math.sqrt(ell) / (ell + 1)) ** k \
        * N * N * math.sqrt(p)
    return StatResult(est, sigma, bound, samples,
                      extra={'classes': classes, 'nu': nu, 'counts': counts})

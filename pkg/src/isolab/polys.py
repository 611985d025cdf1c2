"""Dense univariate polynomials over a FieldCtx.

Little-endian lists of FieldElem.  Only what the curve/isogeny layers need:
division, gcd, modular exponentiation, root finding (deterministic), and an
irreducibility test.  Degrees here are tiny (division polynomials, kernel
cubics, modulus search), so everything is schoolbook.
"""

from __future__ import annotations


def trim(f):
    while f and not f[-1]:
        f.pop()
    return f


def degree(f):
    return len(f) - 1


def constant(ctx, a):
    return [ctx.from_int(a)] if a % ctx.p else []


def x_poly(ctx):
    return [ctx.zero, ctx.one]


def add(f, g):
    n = max(len(f), len(g))
    out = []
    for i in range(n):
        if i < len(f) and i < len(g):
            out.append(f[i] + g[i])
        elif i < len(f):
            out.append(f[i])
        else:
            out.append(g[i])
    return trim(out)


def neg(f):
    return [-a for a in f]


def sub(f, g):
    return add(f, neg(g))


def scale(f, s):
    if not s:
        return []
    return [a * s for a in f]


def mul(f, g):
    if not f or not g:
        return []
    ctx = (f[0] if f else g[0]).ctx
    out = [ctx.zero] * (len(f) + len(g) - 1)
    for i, a in enumerate(f):
        if not a:
            continue
        for j, b in enumerate(g):
            if b:
                out[i + j] = out[i + j] + a * b
    return trim(out)


def divmod_poly(f, g):
    if not g:
        raise ZeroDivisionError("polynomial division by zero")
    f = list(f)
    inv_lead = g[-1].inv()
    q = [g[-1].ctx.zero] * max(len(f) - len(g) + 1, 0)
    while len(f) >= len(g):
        coef = f[-1] * inv_lead
        shift = len(f) - len(g)
        q[shift] = coef
        for i, b in enumerate(g):
            f[shift + i] = f[shift + i] - coef * b
        trim(f)
    return trim(q), f


def mod(f, g):
    return divmod_poly(f, g)[1]


def monic(f):
    if not f:
        return f
    if f[-1] == f[-1].ctx.one:
        return list(f)
    return scale(f, f[-1].inv())


def gcd(f, g):
    f, g = list(f), list(g)
    while g:
        f, g = g, mod(f, g)
    return monic(f)


def pow_mod(base, e, modulus):
    """base^e mod modulus (e a Python int)."""
    ctx = modulus[-1].ctx
    result = [ctx.one]
    base = mod(base, modulus)
    while e:
        if e & 1:
            result = mod(mul(result, base), modulus)
        base = mod(mul(base, base), modulus)
        e >>= 1
    return result


def evaluate(f, a):
    ctx = a.ctx
    acc = ctx.zero
    for coef in reversed(f):
        acc = acc * a + coef
    return acc


def derivative(f):
    return trim([f[i] * i for i in range(1, len(f))])


def is_irreducible(f, ctx):
    """Rabin test: f irreducible over ctx iff x^{q^n} = x mod f and
    gcd(x^{q^{n/r}} - x, f) = 1 for each prime r | n."""
    import sympy
    f = monic(list(f))
    n = degree(f)
    if n <= 0:
        return False
    if n == 1:
        return True
    q = ctx.q
    x = x_poly(ctx)
    # cheap rejection first: most reducibles have a factor of degree <= 2
    xq = pow_mod(x, q, f)
    if degree(gcd(sub(xq, x), f)) != 0:
        return False
    if n > 2 and degree(gcd(sub(pow_mod(xq, q, f), x), f)) != 0:
        return False
    for r in sorted(sympy.primefactors(n), reverse=True):
        h = sub(pow_mod(x, q ** (n // r), f), x)
        if degree(gcd(h, f)) != 0:
            return False
    return sub(pow_mod(x, q ** n, f), x) == []


def roots(f, ctx=None):
    """Distinct roots of f in its coefficient field, sorted by coefficient
    vector.  Deterministic equal-degree splitting (the 'random' shifts come
    from the canonical element enumeration)."""
    f = trim(list(f))
    if not f:
        raise ValueError("zero polynomial")
    if ctx is None:
        ctx = f[0].ctx
    if degree(f) == 0:
        return []
    f = monic(f)
    q = ctx.q
    x = x_poly(ctx)
    # linear part: gcd(f, x^q - x)
    lin = gcd(f, sub(pow_mod(x, q, f), x))
    out = []
    stack = [lin]
    attempt = [1]

    def split(g):
        # g = product of distinct linear factors, degree >= 1
        if degree(g) == 1:
            out.append(-g[0])
            return
        while True:
            a = ctx.nth_element(attempt[0] % q)
            attempt[0] += 1
            h = pow_mod([a, ctx.one], (q - 1) // 2, g)
            h = sub(h, [ctx.one])
            d = gcd(h, g)
            if 0 < degree(d) < degree(g):
                split(d)
                split(divmod_poly(g, d)[0])
                return

    if degree(lin) >= 1:
        split(lin)
    out.sort(key=lambda r: r.coeffs)
    return out

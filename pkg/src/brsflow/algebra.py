"""Exact multivariate rational functions with rational coefficients.

Indeterminates live in an append-only registry; their registration index
fixes the canonical (graded lexicographic) term order.  A polynomial is a
map from sparse monomials ``((var_index, exponent), ...)`` to
``fractions.Fraction`` coefficients.  A rational expression is a pair
numerator/denominator kept in a normal form:

* the polynomial gcd of numerator and denominator is cancelled,
* the leading denominator coefficient is positive and the denominator is
  primitive up to that sign.

Equality is decided by cross-multiplication, which does not rely on the
gcd cancellation being complete.
"""
from __future__ import annotations

import ast
import re
import threading
from contextlib import contextmanager
from fractions import Fraction
from math import gcd, lcm
from typing import Dict, Iterable, Iterator, Mapping, Tuple, Union

__all__ = [
    "AlgebraError",
    "Registry",
    "REGISTRY",
    "Polynomial",
    "RationalExpr",
    "symbol",
    "symbols",
    "const",
    "parse",
    "arith",
    "substitute",
    "is_zero",
    "solve_linear",
    "to_sexpr",
    "from_sexpr",
]

Monomial = Tuple[Tuple[int, int], ...]
Number = Union[int, Fraction]


class AlgebraError(ValueError):
    """Raised for division by zero, non-linear solves and malformed input."""


class Registry:
    """Append-only table of indeterminate names.

    The index of a name is its registration order.  While frozen, new names
    are rejected so that the canonical ordering cannot change mid-solve.
    """

    def __init__(self, names: Iterable[str] = ()):
        self._names: list[str] = []
        self._index: Dict[str, int] = {}
        self._frozen = 0
        self._lock = threading.Lock()
        for name in names:
            self.register(name)

    def register(self, name: str) -> int:
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
            raise AlgebraError(f"invalid indeterminate name {name!r}")
        with self._lock:
            idx = self._index.get(name)
            if idx is not None:
                return idx
            if self._frozen:
                raise AlgebraError(
                    f"registry is frozen; cannot register new indeterminate {name!r}")
            self._names.append(name)
            self._index[name] = len(self._names) - 1
            return self._index[name]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise AlgebraError(f"unknown indeterminate {name!r}") from None

    def name(self, idx: int) -> str:
        return self._names[idx]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __len__(self) -> int:
        return len(self._names)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self._names)

    @property
    def frozen(self) -> bool:
        return self._frozen > 0

    @contextmanager
    def freeze(self) -> Iterator["Registry"]:
        with self._lock:
            self._frozen += 1
        try:
            yield self
        finally:
            with self._lock:
                self._frozen -= 1


REGISTRY = Registry(["g", "alpha", "mu"])


# ---------------------------------------------------------------------------
# monomial helpers

def _mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    out = dict(a)
    for v, e in b:
        out[v] = out.get(v, 0) + e
    return tuple(sorted(out.items()))


def _mono_div(a: Monomial, b: Monomial) -> Monomial | None:
    """a / b if b divides a, else None."""
    da = dict(a)
    for v, e in b:
        r = da.get(v, 0) - e
        if r < 0:
            return None
        if r:
            da[v] = r
        else:
            del da[v]
    return tuple(sorted(da.items()))


def _mono_gcd(a: Monomial, b: Monomial) -> Monomial:
    db = dict(b)
    return tuple((v, min(e, db[v])) for v, e in a if v in db)


def _deg(m: Monomial) -> int:
    return sum(e for _, e in m)


def _grlex_cmp_key(m: Monomial, nvars: int) -> tuple:
    dense = dict(m)
    return (_deg(m),) + tuple(dense.get(i, 0) for i in range(nvars))


# ---------------------------------------------------------------------------

class Polynomial:
    """Immutable sparse polynomial with Fraction coefficients."""

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[Monomial, Number] | None = None):
        clean: Dict[Monomial, Fraction] = {}
        if terms:
            for m, c in terms.items():
                c = Fraction(c)
                if c:
                    clean[m] = c
        self._terms = clean
        self._hash = None

    # constructors -------------------------------------------------------
    @classmethod
    def constant(cls, c: Number) -> "Polynomial":
        return cls({(): c})

    @classmethod
    def variable(cls, name: str, registry: Registry = REGISTRY) -> "Polynomial":
        return cls({((registry.register(name), 1),): 1})

    # basic queries ------------------------------------------------------
    @property
    def terms(self) -> Dict[Monomial, Fraction]:
        return dict(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(not m for m in self._terms)

    def constant_value(self) -> Fraction:
        if not self.is_constant():
            raise AlgebraError("polynomial is not constant")
        return self._terms.get((), Fraction(0))

    def variables(self) -> set:
        return {v for m in self._terms for v, _ in m}

    def degree_in(self, var: int) -> int:
        return max((dict(m).get(var, 0) for m in self._terms), default=0)

    def total_degree(self) -> int:
        return max((_deg(m) for m in self._terms), default=0)

    def sorted_terms(self) -> list:
        nv = 1 + max((v for m in self._terms for v, _ in m), default=-1)
        return sorted(self._terms.items(),
                      key=lambda t: _grlex_cmp_key(t[0], nv), reverse=True)

    def leading(self) -> Tuple[Monomial, Fraction]:
        if not self._terms:
            raise AlgebraError("zero polynomial has no leading term")
        return self.sorted_terms()[0]

    def content(self) -> Fraction:
        """Positive rational gcd of the coefficients (1 for the zero poly)."""
        if not self._terms:
            return Fraction(1)
        num = 0
        den = 1
        for c in self._terms.values():
            num = gcd(num, c.numerator)
            den = lcm(den, c.denominator)
        return Fraction(num, den)

    def monomial_content(self) -> Monomial:
        it = iter(self._terms)
        try:
            g = next(it)
        except StopIteration:
            return ()
        for m in it:
            g = _mono_gcd(g, m)
            if not g:
                break
        return g

    # arithmetic ---------------------------------------------------------
    def __add__(self, other: "Polynomial") -> "Polynomial":
        out = dict(self._terms)
        for m, c in other._terms.items():
            s = out.get(m, 0) + c
            if s:
                out[m] = s
            else:
                out.pop(m, None)
        return Polynomial(out)

    def __neg__(self) -> "Polynomial":
        return Polynomial({m: -c for m, c in self._terms.items()})

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self + (-other)

    def __mul__(self, other: "Polynomial") -> "Polynomial":
        out: Dict[Monomial, Fraction] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = _mono_mul(m1, m2)
                out[m] = out.get(m, 0) + c1 * c2
        return Polynomial(out)

    def scale(self, c: Number) -> "Polynomial":
        c = Fraction(c)
        return Polynomial({m: v * c for m, v in self._terms.items()})

    def mul_monomial(self, mono: Monomial) -> "Polynomial":
        return Polynomial({_mono_mul(m, mono): c for m, c in self._terms.items()})

    def div_monomial(self, mono: Monomial) -> "Polynomial":
        out = {}
        for m, c in self._terms.items():
            q = _mono_div(m, mono)
            if q is None:
                raise AlgebraError("monomial does not divide polynomial")
            out[q] = c
        return Polynomial(out)

    def __pow__(self, n: int) -> "Polynomial":
        if n < 0:
            raise AlgebraError("negative power of a polynomial")
        result = Polynomial.constant(1)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def divexact(self, other: "Polynomial") -> "Polynomial | None":
        """Quotient if ``other`` divides ``self`` exactly, else None."""
        if other.is_zero():
            raise AlgebraError("division by the zero polynomial")
        if self.is_zero():
            return Polynomial()
        nv = 1 + max((v for p in (self, other) for m in p._terms for v, _ in m),
                     default=-1)
        key = lambda m: _grlex_cmp_key(m, nv)
        lm_b, lc_b = max(other._terms.items(), key=lambda t: key(t[0]))
        rem = dict(self._terms)
        quot: Dict[Monomial, Fraction] = {}
        # bound the work: the quotient cannot have more terms than this
        limit = 4 * (len(self._terms) + 1) * (len(other._terms) + 1) + 64
        steps = 0
        while rem:
            steps += 1
            if steps > limit:
                return None
            lm_r = max(rem, key=key)
            q = _mono_div(lm_r, lm_b)
            if q is None:
                return None
            c = rem[lm_r] / lc_b
            quot[q] = quot.get(q, 0) + c
            for m, cb in other._terms.items():
                mm = _mono_mul(q, m)
                v = rem.get(mm, 0) - c * cb
                if v:
                    rem[mm] = v
                else:
                    rem.pop(mm, None)
        return Polynomial(quot)

    def evaluate(self, values: Mapping[int, object]):
        total = 0
        for m, c in self._terms.items():
            t = c
            for v, e in m:
                t = t * values[v] ** e
            total = total + t
        return total

    def compose(self, images: Mapping[int, "RationalExpr"]) -> "RationalExpr":
        """Substitute rational expressions for variables (missing pass through)."""
        total = RationalExpr.zero()
        cache: Dict[Tuple[int, int], RationalExpr] = {}
        for m, c in self._terms.items():
            t = RationalExpr.const(c)
            for v, e in m:
                if v in images:
                    key = (v, e)
                    if key not in cache:
                        cache[key] = images[v] ** e
                    t = t * cache[key]
                else:
                    t = t * RationalExpr(Polynomial({((v, e),): 1}))
            total = total + t
        return total

    # comparison ---------------------------------------------------------
    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def __repr__(self) -> str:
        return f"Polynomial({self.to_infix()})"

    def to_infix(self, registry: Registry = REGISTRY) -> str:
        if not self._terms:
            return "0"
        parts = []
        for m, c in self.sorted_terms():
            mono = "*".join(registry.name(v) + (f"^{e}" if e > 1 else "")
                            for v, e in m)
            if not mono:
                parts.append(str(c))
            elif c == 1:
                parts.append(mono)
            elif c == -1:
                parts.append("-" + mono)
            else:
                parts.append(f"{c}*{mono}")
        s = " + ".join(parts)
        return s.replace("+ -", "- ")


# ---------------------------------------------------------------------------
# polynomial gcd (recursive primitive remainder sequences)

def _univariate(p: Polynomial, var: int) -> Dict[int, Polynomial]:
    """Coefficients of p viewed as a polynomial in ``var``."""
    out: Dict[int, Dict[Monomial, Fraction]] = {}
    for m, c in p._terms.items():
        d = dict(m)
        e = d.pop(var, 0)
        out.setdefault(e, {})[tuple(sorted(d.items()))] = c
    return {e: Polynomial(t) for e, t in out.items()}


def _from_univariate(coeffs: Mapping[int, Polynomial], var: int) -> Polynomial:
    terms: Dict[Monomial, Fraction] = {}
    for e, c in coeffs.items():
        for m, v in c._terms.items():
            mm = _mono_mul(m, ((var, e),)) if e else m
            terms[mm] = terms.get(mm, 0) + v
    return Polynomial(terms)


def _content_in(p: Polynomial, var: int) -> Polynomial:
    g = Polynomial()
    for c in _univariate(p, var).values():
        g = poly_gcd(g, c)
        if g.is_constant():
            return Polynomial.constant(1)
    return g


def _prem(a: Dict[int, Polynomial], b: Dict[int, Polynomial]) -> Dict[int, Polynomial]:
    """Pseudo-remainder of univariate coefficient maps."""
    db = max(b)
    lb = b[db]
    r = {e: c for e, c in a.items() if not c.is_zero()}
    while r and max(r) >= db:
        dr = max(r)
        lr = r[dr]
        shift = dr - db
        new: Dict[int, Polynomial] = {e: c * lb for e, c in r.items()}
        for e, c in b.items():
            k = e + shift
            v = new.get(k, Polynomial()) - lr * c
            if v.is_zero():
                new.pop(k, None)
            else:
                new[k] = v
        r = new
    return r


def _monic_sign(p: Polynomial) -> Polynomial:
    """Primitive rational content and positive leading coefficient."""
    if p.is_zero():
        return p
    _, lc = p.leading()
    c = p.content()
    return p.scale((1 if lc > 0 else -1) / c)


def poly_gcd(a: Polynomial, b: Polynomial) -> Polynomial:
    """Greatest common divisor, normalized to be primitive with lc > 0."""
    if a.is_zero():
        return _monic_sign(b)
    if b.is_zero():
        return _monic_sign(a)
    if a.is_constant() or b.is_constant():
        return Polynomial.constant(1)
    mono = _mono_gcd(a.monomial_content(), b.monomial_content())
    if mono:
        a, b = a.div_monomial(mono), b.div_monomial(mono)
    mono_poly = Polynomial({mono: 1})
    va, vb = a.variables(), b.variables()
    if not va or not vb:
        return mono_poly
    var = min(va | vb)
    if var not in va:
        return mono_poly * poly_gcd(a, _content_in(b, var))
    if var not in vb:
        return mono_poly * poly_gcd(_content_in(a, var), b)
    ca, cb = _content_in(a, var), _content_in(b, var)
    c = poly_gcd(ca, cb)
    pa = _univariate(a.divexact(ca), var)
    pb = _univariate(b.divexact(cb), var)
    if max(pa) < max(pb):
        pa, pb = pb, pa
    while pb and max(pb) > 0:
        r = _prem(pa, pb)
        if not r:
            break
        rp = _from_univariate(r, var)
        rp = rp.divexact(_content_in(rp, var)) if max(r) > 0 else rp
        pa, pb = pb, _univariate(rp, var)
    else:
        # remainder of degree 0 in var: primitive parts are coprime
        return _monic_sign(mono_poly * c)
    g = _from_univariate(pb, var)
    g = g.divexact(_content_in(g, var))
    return _monic_sign(mono_poly * c * g)


# ---------------------------------------------------------------------------

class RationalExpr:
    """Immutable normalized quotient of two polynomials."""

    __slots__ = ("num", "den")

    def __init__(self, num: Polynomial, den: Polynomial | None = None,
                 *, normalize: bool = True):
        if den is None:
            den = Polynomial.constant(1)
        if den.is_zero():
            raise AlgebraError("division by the zero expression")
        if normalize:
            num, den = _normalize(num, den)
        self.num = num
        self.den = den

    @classmethod
    def zero(cls) -> "RationalExpr":
        return cls(Polynomial(), normalize=False)

    @classmethod
    def const(cls, c: Number) -> "RationalExpr":
        c = Fraction(c)
        return cls(Polynomial.constant(c), normalize=False)

    @classmethod
    def var(cls, name: str, registry: Registry = REGISTRY) -> "RationalExpr":
        return cls(Polynomial.variable(name, registry), normalize=False)

    @staticmethod
    def coerce(x: "RationalExpr | Number | str") -> "RationalExpr":
        if isinstance(x, RationalExpr):
            return x
        if isinstance(x, (int, Fraction)):
            return RationalExpr.const(x)
        if isinstance(x, str):
            return parse(x)
        raise TypeError(f"cannot convert {type(x).__name__} to RationalExpr")

    # arithmetic ---------------------------------------------------------
    def __add__(self, other) -> "RationalExpr":
        other = RationalExpr.coerce(other)
        if self.num.is_zero():
            return other
        if other.num.is_zero():
            return self
        if self.den == other.den:
            return RationalExpr(self.num + other.num, self.den)
        q = self.den.divexact(other.den) if len(other.den.terms) > 1 else None
        if q is not None:
            return RationalExpr(self.num + other.num * q, self.den)
        q = other.den.divexact(self.den) if len(self.den.terms) > 1 else None
        if q is not None:
            return RationalExpr(self.num * q + other.num, other.den)
        return RationalExpr(self.num * other.den + other.num * self.den,
                            self.den * other.den)

    __radd__ = __add__

    def __neg__(self) -> "RationalExpr":
        return RationalExpr(-self.num, self.den, normalize=False)

    def __sub__(self, other) -> "RationalExpr":
        return self + (-RationalExpr.coerce(other))

    def __rsub__(self, other) -> "RationalExpr":
        return RationalExpr.coerce(other) + (-self)

    def __mul__(self, other) -> "RationalExpr":
        other = RationalExpr.coerce(other)
        if self.num.is_zero() or other.num.is_zero():
            return RationalExpr.zero()
        a, b = self.num, self.den
        c, d = other.num, other.den
        # cross cancellation before multiplying out
        a, d = _cancel_pair(a, d)
        c, b = _cancel_pair(c, b)
        return RationalExpr(a * c, b * d)

    __rmul__ = __mul__

    def inverse(self) -> "RationalExpr":
        if self.num.is_zero():
            raise AlgebraError("division by the zero expression")
        return RationalExpr(self.den, self.num)

    def __truediv__(self, other) -> "RationalExpr":
        other = RationalExpr.coerce(other)
        if other.num.is_zero():
            raise AlgebraError("division by the zero expression")
        return self * other.inverse()

    def __rtruediv__(self, other) -> "RationalExpr":
        return RationalExpr.coerce(other) / self

    def __pow__(self, n: int) -> "RationalExpr":
        if n < 0:
            return self.inverse() ** (-n)
        return RationalExpr(self.num ** n, self.den ** n, normalize=False)

    # queries ------------------------------------------------------------
    def is_zero(self) -> bool:
        return self.num.is_zero()

    def is_constant(self) -> bool:
        return self.num.is_constant() and self.den.is_constant()

    def constant_value(self) -> Fraction:
        return self.num.constant_value() / self.den.constant_value()

    def variables(self, registry: Registry = REGISTRY) -> set:
        return {registry.name(v) for v in self.num.variables() | self.den.variables()}

    def equals(self, other) -> bool:
        other = RationalExpr.coerce(other)
        return (self.num * other.den - other.num * self.den).is_zero()

    def __eq__(self, other: object) -> bool:
        if isinstance(other, (int, Fraction, str)):
            other = RationalExpr.coerce(other)
        if not isinstance(other, RationalExpr):
            return NotImplemented
        return self.equals(other)

    def __hash__(self) -> int:
        raise TypeError("RationalExpr equality is semantic; use to_sexpr() as a key")

    def structurally_equal(self, other: "RationalExpr") -> bool:
        return self.num == other.num and self.den == other.den

    def evaluate(self, values: Mapping[str, object], registry: Registry = REGISTRY):
        idx = {registry.index(k): v for k, v in values.items()}
        missing = (self.num.variables() | self.den.variables()) - set(idx)
        if missing:
            raise AlgebraError("unbound indeterminates: " +
                               ", ".join(sorted(registry.name(v) for v in missing)))
        return self.num.evaluate(idx) / self.den.evaluate(idx)

    def normalized(self) -> "RationalExpr":
        return RationalExpr(self.num, self.den)

    def __repr__(self) -> str:
        return f"RationalExpr({self.to_infix()})"

    def __str__(self) -> str:
        return self.to_infix()

    def to_infix(self, registry: Registry = REGISTRY) -> str:
        n = self.num.to_infix(registry)
        if self.den == Polynomial.constant(1):
            return n
        d = self.den.to_infix(registry)
        if len(self.num.terms) > 1:
            n = f"({n})"
        if len(self.den.terms) > 1 or not self.den.is_constant() and "*" in d:
            d = f"({d})"
        return f"{n}/{d}"


def _cancel_pair(p: Polynomial, q: Polynomial) -> Tuple[Polynomial, Polynomial]:
    """Cancel the common factor of p and q."""
    if p.is_zero():
        return p, Polynomial.constant(1)
    g = _mono_gcd(p.monomial_content(), q.monomial_content())
    if g:
        p, q = p.div_monomial(g), q.div_monomial(g)
    if len(p.terms) > 1 and len(q.terms) > 1:
        g = poly_gcd(p, q)
        if not g.is_constant():
            p, q = p.divexact(g), q.divexact(g)
    return p, q


def _normalize(num: Polynomial, den: Polynomial) -> Tuple[Polynomial, Polynomial]:
    if num.is_zero():
        return Polynomial(), Polynomial.constant(1)
    num, den = _cancel_pair(num, den)
    cd = den.content()
    _, lc = den.leading()
    sign = 1 if lc > 0 else -1
    factor = cd * sign
    num = num.scale(1 / factor)
    den = den.scale(1 / factor)
    return num, den


# ---------------------------------------------------------------------------
# convenience constructors

def symbol(name: str, registry: Registry = REGISTRY) -> RationalExpr:
    return RationalExpr.var(name, registry)


def symbols(names: str | Iterable[str], registry: Registry = REGISTRY):
    if isinstance(names, str):
        names = names.replace(",", " ").split()
    return tuple(symbol(n, registry) for n in names)


def const(c: Number) -> RationalExpr:
    return RationalExpr.const(c)


_ALLOWED_BINOPS = {ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow}


def parse(text: str, registry: Registry = REGISTRY) -> RationalExpr:
    """Parse an infix expression such as ``"-2*F_AAA*(1+Sigma_dot_ccbar)/g"``.

    ``^`` is accepted as a synonym for ``**``.  Unknown names are registered
    unless the registry is frozen.
    """
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise AlgebraError(f"cannot parse expression {text!r}: {exc.msg}") from None

    def walk(node) -> RationalExpr:
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.BinOp) and type(node.op) in _ALLOWED_BINOPS:
            if isinstance(node.op, ast.Pow):
                exp = walk(node.right)
                if not exp.is_constant() or exp.constant_value().denominator != 1:
                    raise AlgebraError("exponents must be integer constants")
                return walk(node.left) ** int(exp.constant_value())
            a, b = walk(node.left), walk(node.right)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            if isinstance(node.op, ast.Mult):
                return a * b
            return a / b
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = walk(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Constant) and isinstance(node.value, int):
            return RationalExpr.const(node.value)
        if isinstance(node, ast.Name):
            return RationalExpr.var(node.id, registry)
        raise AlgebraError(f"unsupported syntax in {text!r}")

    return walk(tree)


# ---------------------------------------------------------------------------
# operations

def arith(op: str, a, b) -> RationalExpr:
    a, b = RationalExpr.coerce(a), RationalExpr.coerce(b)
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return a / b
    raise AlgebraError(f"unknown arithmetic operation {op!r}")


def substitute(expr, bindings: Mapping[str, object],
               registry: Registry = REGISTRY) -> RationalExpr:
    """Simultaneous substitution of indeterminates by expressions."""
    expr = RationalExpr.coerce(expr)
    images = {registry.index(k): RationalExpr.coerce(v) for k, v in bindings.items()}
    vars_used = expr.num.variables() | expr.den.variables()
    images = {k: v for k, v in images.items() if k in vars_used}
    if not images:
        return expr
    num = expr.num.compose(images)
    den = expr.den.compose(images)
    if den.is_zero():
        raise AlgebraError(
            f"substitution makes the denominator of {expr.to_infix()} vanish")
    return num / den


def is_zero(expr) -> bool:
    return RationalExpr.coerce(expr).is_zero()


def _split_linear(poly: Polynomial, var: int) -> Tuple[Polynomial, Polynomial]:
    """Write poly = a*x + b; raise if poly has higher degree in x."""
    a: Dict[Monomial, Fraction] = {}
    b: Dict[Monomial, Fraction] = {}
    for m, c in poly.terms.items():
        d = dict(m)
        e = d.get(var, 0)
        if e == 0:
            b[m] = c
        elif e == 1:
            del d[var]
            a[tuple(sorted(d.items()))] = c
        else:
            raise AlgebraError("not linear")
    return Polynomial(a), Polynomial(b)


def solve_linear(eq, target: str, label: str | None = None,
                 registry: Registry = REGISTRY) -> RationalExpr:
    """Solve ``eq == 0`` for ``target``; eq must be affine in the target."""
    eq = RationalExpr.coerce(eq)
    name = label or eq.to_infix(registry)
    if target not in registry:
        raise AlgebraError(f"equation {name}: unknown target {target!r}")
    v = registry.index(target)
    if eq.den.degree_in(v) > 0:
        raise AlgebraError(f"equation {name}: target {target} appears in a denominator")
    try:
        a, b = _split_linear(eq.num, v)
    except AlgebraError:
        raise AlgebraError(f"equation {name} is not linear in {target}") from None
    if a.is_zero():
        raise AlgebraError(
            f"equation {name}: coefficient of {target} vanishes identically")
    return RationalExpr(-b, a)


# ---------------------------------------------------------------------------
# S-expression serialization

def _poly_sexpr(p: Polynomial, registry: Registry) -> str:
    terms = []
    for m, c in p.sorted_terms():
        lit = f"{c.numerator}/{c.denominator}"
        facs = "".join(f" ({registry.name(v)} {e})" for v, e in m)
        terms.append(f"(term {lit}{facs})")
    return "(poly" + "".join(" " + t for t in terms) + ")"


def to_sexpr(expr, registry: Registry = REGISTRY) -> str:
    expr = RationalExpr.coerce(expr)
    return f"(div {_poly_sexpr(expr.num, registry)} {_poly_sexpr(expr.den, registry)})"


_TOKEN = re.compile(r"\s*(\(|\)|[^\s()]+)")


def _tokenize(text: str) -> list:
    pos = 0
    out = []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise AlgebraError(f"bad S-expression near position {pos}")
        out.append(m.group(1))
        pos = m.end()
    return out


def _read(tokens: list, i: int):
    if tokens[i] != "(":
        return tokens[i], i + 1
    items = []
    i += 1
    while i < len(tokens) and tokens[i] != ")":
        item, i = _read(tokens, i)
        items.append(item)
    if i >= len(tokens):
        raise AlgebraError("unbalanced parentheses in S-expression")
    return items, i + 1


def _rational_literal(tok: str) -> Fraction:
    if not re.fullmatch(r"-?\d+(/\d+)?", tok):
        raise AlgebraError(f"bad rational literal {tok!r}")
    return Fraction(tok)


def _poly_from_tree(tree, registry: Registry) -> Polynomial:
    if not isinstance(tree, list) or not tree or tree[0] != "poly":
        raise AlgebraError("expected (poly ...)")
    terms: Dict[Monomial, Fraction] = {}
    for t in tree[1:]:
        if not isinstance(t, list) or len(t) < 2 or t[0] != "term":
            raise AlgebraError("expected (term coeff (var exp) ...)")
        c = _rational_literal(t[1])
        mono: Dict[int, int] = {}
        for fac in t[2:]:
            if not isinstance(fac, list) or len(fac) != 2:
                raise AlgebraError("expected (var exp)")
            e = int(fac[1])
            if e <= 0:
                raise AlgebraError("exponents must be positive")
            v = registry.register(fac[0])
            mono[v] = mono.get(v, 0) + e
        m = tuple(sorted(mono.items()))
        terms[m] = terms.get(m, 0) + c
    return Polynomial(terms)


def from_sexpr(text: str, registry: Registry = REGISTRY) -> RationalExpr:
    tokens = _tokenize(text)
    if not tokens:
        raise AlgebraError("empty S-expression")
    tree, end = _read(tokens, 0)
    if end != len(tokens):
        raise AlgebraError("trailing tokens after S-expression")
    if not isinstance(tree, list) or len(tree) != 3 or tree[0] != "div":
        raise AlgebraError("expected (div (poly ...) (poly ...))")
    num = _poly_from_tree(tree[1], registry)
    den = _poly_from_tree(tree[2], registry)
    if den.is_zero():
        raise AlgebraError("serialized denominator is zero")
    return RationalExpr(num, den)

"""Catalogue of the relevant couplings and BRS insertion constants.

Each coupling carries its field content ``n = (n_A, n_h, n_B, n_cbar, n_c)``,
the number of momentum derivatives ``|w|`` carried by its tensor structure
and its mass order ``nu``.  Couplings with ``nu > 0`` are stored mass
stripped: the stored value is the coefficient of ``m**nu``.  The ratio
``M/m`` is the single indeterminate ``mu``.

>>> len(catalog("A")), len(catalog("B"))
(37, 7)
>>> tree_values()["F_hhhh"]
RationalExpr(1/32*g^2*mu^2)
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, Iterable, Iterator, Mapping, Sequence, Tuple

from .algebra import AlgebraError, RationalExpr, parse, to_sexpr

__all__ = [
    "FIELDS",
    "CouplingId",
    "CouplingSet",
    "ALIASES",
    "FREE_STANDARD",
    "FREE_ANTIGHOST",
    "catalog",
    "lookup",
    "names",
    "mass_order",
    "tree_values",
    "free_tree_values",
    "free_symbolic",
    "grading_check",
    "relevance_bound",
    "dump_json",
    "load_json",
]

FIELDS = ("A", "h", "B", "cbar", "c")


def _n(spec: str) -> Tuple[int, int, int, int, int]:
    """Field content from a compact string such as ``"AAh"`` or ``"cbar c A"``."""
    counts = dict.fromkeys(FIELDS, 0)
    toks = spec.replace("cbar", " cbar ").split()
    for tok in toks:
        if tok == "cbar":
            counts["cbar"] += 1
        else:
            for ch in tok:
                counts[ch] += 1
    return tuple(counts[f] for f in FIELDS)


@dataclass(frozen=True)
class CouplingId:
    """Static description of one relevant parameter.

    For insertion constants (``appendix == "B"``) ``source`` names the
    BRS source coupled to the vertex and ``paired`` the field whose BRS
    variation that source multiplies.
    """

    name: str
    appendix: str
    content: Tuple[int, int, int, int, int]
    deriv: int
    nu: int
    tensor: str
    tree: str
    source: str | None = None
    paired: str | None = None
    ghost: int = 0

    @property
    def size(self) -> int:
        return sum(self.content)

    @property
    def ghost_number(self) -> int:
        return self.content[4] - self.content[3]

    @property
    def dimension_count(self) -> int:
        return self.size + self.deriv + self.nu

    def to_dict(self) -> dict:
        return {
            "name": self.name, "appendix": self.appendix,
            "content": dict(zip(FIELDS, self.content)), "deriv": self.deriv,
            "nu": self.nu, "tensor": self.tensor, "tree": self.tree,
            **({"source": self.source, "paired": self.paired, "ghost": self.ghost}
               if self.appendix == "B" else {}),
        }


_A = "A"
_ENTRIES: Tuple[CouplingId, ...] = (
    # one-point
    CouplingId("kappa", _A, _n("h"), 0, 3, "1", "0"),
    # two-point self energies
    CouplingId("delta_m2", _A, _n("AA"), 0, 2, "δ_{μν}", "0"),
    CouplingId("Sigma_trans", _A, _n("AA"), 2, 0, "p²δ_{μν}−p_μp_ν", "0"),
    CouplingId("Sigma_long", _A, _n("AA"), 2, 0, "p_μp_ν/α", "0"),
    CouplingId("Sigma_hh", _A, _n("hh"), 0, 2, "1", "0"),
    CouplingId("Sigma_dot_hh", _A, _n("hh"), 2, 0, "p²", "0"),
    CouplingId("Sigma_BB", _A, _n("BB"), 0, 2, "δ^{ab}", "0"),
    CouplingId("Sigma_dot_BB", _A, _n("BB"), 2, 0, "p²δ^{ab}", "0"),
    CouplingId("Sigma_ccbar", _A, _n("cbar c"), 0, 2, "δ^{ab}", "0"),
    CouplingId("Sigma_dot_ccbar", _A, _n("cbar c"), 2, 0, "p²δ^{ab}", "0"),
    CouplingId("Sigma_AB", _A, _n("AB"), 1, 1, "ip_μδ^{ab}", "0"),
    # three-point
    CouplingId("F_AAA", _A, _n("AAA"), 1, 0, "ε^{rst}δ_{μν}i(p−q)_λ", "-g/2"),
    CouplingId("F_AAh1", _A, _n("AAh"), 0, 1, "δ^{rs}δ_{μν}", "g/2"),
    CouplingId("F_BBA", _A, _n("BBA"), 1, 0, "ε^{rst}i(p−q)_μ", "-g/4"),
    CouplingId("F1_hBA", _A, _n("hBA"), 1, 0, "i(p−q)_μ", "g/2"),
    CouplingId("r2_hBA", _A, _n("hBA"), 1, 0, "i(p+q)_μ", "0"),
    CouplingId("F1_ccbarA", _A, _n("cbar c A"), 1, 0, "ε^{rst}ip_μ", "g"),
    CouplingId("r2_ccbarA", _A, _n("cbar c A"), 1, 0, "ε^{rst}iq_μ", "0"),
    CouplingId("F_BBh1", _A, _n("BBh"), 0, 1, "δ^{rs}", "g*mu^2/4"),
    CouplingId("F_hhh1", _A, _n("hhh"), 0, 1, "1", "g*mu^2/4"),
    CouplingId("F_ccbarh1", _A, _n("cbar c h"), 0, 1, "δ^{rs}", "-alpha*g/2"),
    CouplingId("F_ccbarB1", _A, _n("cbar c B"), 0, 1, "ε^{rst}", "alpha*g/2"),
    # four-point
    CouplingId("F1_AAAA", _A, _n("AAAA"), 0, 0, "ε^{abc}ε^{ars}δ_{μμ'}δ_{νν'}", "g^2/4"),
    CouplingId("r2_AAAA", _A, _n("AAAA"), 0, 0, "δ^{rr'}δ^{ss'}δ_{μμ'}δ_{νν'}", "0"),
    CouplingId("r1_AAccbar", _A, _n("AA cbar c"), 0, 0, "δ_{μν}δ^{ab}δ^{rs}", "0"),
    CouplingId("r2_AAccbar", _A, _n("AA cbar c"), 0, 0, "δ_{μν}δ^{ar}δ^{bs}", "0"),
    CouplingId("F1_AABB", _A, _n("AABB"), 0, 0, "δ_{μν}δ^{ab}δ^{rs}", "g^2/8"),
    CouplingId("r2_AABB", _A, _n("AABB"), 0, 0, "δ_{μν}δ^{ar}δ^{bs}", "0"),
    CouplingId("r1_BBccbar", _A, _n("BB cbar c"), 0, 0, "δ^{ab}δ^{rs}", "0"),
    CouplingId("r2_BBccbar", _A, _n("BB cbar c"), 0, 0, "δ^{ar}δ^{bs}", "0"),
    CouplingId("F_hhhh", _A, _n("hhhh"), 0, 0, "1", "g^2*mu^2/32"),
    CouplingId("F_BBhh", _A, _n("BBhh"), 0, 0, "δ^{rs}", "g^2*mu^2/16"),
    CouplingId("F_BBBB", _A, _n("BBBB"), 0, 0, "δ^{rr'}δ^{ss'}", "g^2*mu^2/32"),
    CouplingId("F_AAhh", _A, _n("AAhh"), 0, 0, "δ^{rs}δ_{μν}", "g^2/8"),
    CouplingId("r_hhccbar", _A, _n("hh cbar c"), 0, 0, "δ^{rs}", "0"),
    CouplingId("r_ccbarccbar", _A, _n("cbar c cbar c"), 0, 0, "δ^{ab}δ^{rs}", "0"),
    CouplingId("r_hBccbar", _A, _n("hB cbar c"), 0, 0, "ε^{rst}", "0"),
    # BRS insertion constants
    CouplingId("R_1", "B", _n("c"), 1, 0, "−iq_μ", "1", "gamma_mu", "A", 1),
    CouplingId("R_2", "B", _n("Ac"), 0, 0, "ε^{arb}g", "1", "gamma_mu", "A", 1),
    CouplingId("R_3", "B", _n("Bc"), 0, 0, "−g/2·δ^{rs}", "1", "gamma", "h", 1),
    CouplingId("R_4", "B", _n("c"), 0, 1, "δ^{ab}", "1", "gamma_a", "B", 1),
    CouplingId("R_5", "B", _n("hc"), 0, 0, "g/2·δ^{ab}", "1", "gamma_a", "B", 1),
    CouplingId("R_6", "B", _n("Bc"), 0, 0, "ε^{arb}g/2", "1", "gamma_a", "B", 1),
    CouplingId("R_7", "B", _n("cc"), 0, 0, "ε^{ars}g/2", "1", "omega", "c", 2),
)

_BY_NAME: Dict[str, CouplingId] = {e.name: e for e in _ENTRIES}

ALIASES: Mapping[str, str] = MappingProxyType({"F_hhBB": "F_BBhh"})

#: renormalization constants chosen freely (kappa is fixed to zero)
FREE_STANDARD = ("Sigma_trans", "Sigma_long", "Sigma_AB", "Sigma_dot_ccbar",
                 "Sigma_dot_BB", "F_AAA", "F_BBh1", "R_3")
FREE_ANTIGHOST = tuple(n for n in FREE_STANDARD if n != "Sigma_long")


def relevance_bound(appendix: str) -> int:
    """Maximal |n| + |w| + nu of a relevant coupling."""
    return 4 if appendix == "A" else 2


def catalog(appendix: str | None = None) -> Tuple[CouplingId, ...]:
    """All catalogued couplings in stable order (optionally one appendix)."""
    if appendix is None:
        return _ENTRIES
    if appendix not in ("A", "B"):
        raise ValueError(f"unknown appendix {appendix!r}")
    return tuple(e for e in _ENTRIES if e.appendix == appendix)


def names(appendix: str | None = None) -> Tuple[str, ...]:
    return tuple(e.name for e in catalog(appendix))


def lookup(name: str) -> CouplingId:
    name = ALIASES.get(name, name)
    try:
        return _BY_NAME[name]
    except KeyError:
        raise KeyError(f"unknown coupling {name!r}") from None


def mass_order(name: str | CouplingId) -> int:
    if isinstance(name, CouplingId):
        name = name.name
    return lookup(name).nu


class CouplingSet(Mapping[str, object]):
    """Immutable complete assignment of values to catalogued couplings.

    Values are :class:`RationalExpr` in symbolic mode or floats in numeric
    mode.  Aliased names resolve on lookup.
    """

    def __init__(self, entries: Mapping[str, object], loop_order: int | None = None,
                 *, complete: bool = True):
        resolved: Dict[str, object] = {}
        for k, v in entries.items():
            key = ALIASES.get(k, k)
            if key not in _BY_NAME:
                raise KeyError(f"unknown coupling {k!r}")
            if key in resolved:
                raise KeyError(f"coupling {key!r} given twice")
            if isinstance(v, (int, str)) or type(v).__name__ == "Fraction":
                v = RationalExpr.coerce(v)
            resolved[key] = v
        if complete:
            missing = [e.name for e in _ENTRIES if e.name not in resolved]
            if missing:
                raise KeyError("missing couplings: " + ", ".join(missing))
        self._entries = {e.name: resolved[e.name] for e in _ENTRIES if e.name in resolved}
        self.loop_order = loop_order

    def __getitem__(self, key: str):
        return self._entries[ALIASES.get(key, key)]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        return f"CouplingSet({len(self)} entries, l={self.loop_order})"

    def replace(self, **updates) -> "CouplingSet":
        data = dict(self._entries)
        for k, v in updates.items():
            k = ALIASES.get(k, k)
            if k not in _BY_NAME:
                raise KeyError(f"unknown coupling {k!r}")
            data[k] = v if not isinstance(v, (int, str)) else RationalExpr.coerce(v)
        return CouplingSet(data, self.loop_order)

    def is_symbolic(self) -> bool:
        return all(isinstance(v, RationalExpr) for v in self._entries.values())

    def diff(self, other: "CouplingSet") -> Dict[str, Tuple[object, object]]:
        """Entries whose values differ (exact equality in symbolic mode)."""
        out = {}
        for k in self._entries:
            a, b = self._entries[k], other[k]
            same = a.equals(b) if isinstance(a, RationalExpr) else a == b
            if not same:
                out[k] = (a, b)
        return out

    def numeric(self, g: float, alpha: float, mu: float) -> "CouplingSet":
        vals = {"g": g, "alpha": alpha, "mu": mu}
        out = {}
        for k, v in self._entries.items():
            if isinstance(v, RationalExpr):
                used = {n: vals[n] for n in v.variables() if n in vals}
                unbound = v.variables() - set(vals)
                if unbound:
                    raise AlgebraError(f"{k} depends on unbound {sorted(unbound)}")
                v = float(v.evaluate(used)) if used else float(v.constant_value())
            out[k] = v
        return CouplingSet(out, self.loop_order)


def tree_values(params=None) -> CouplingSet:
    """Tree-order values.

    Without ``params`` the result is symbolic in ``g``, ``alpha``, ``mu``.
    With a parameter object exposing ``g``, ``alpha``, ``m`` and ``bigM`` the
    values are floats (still mass stripped).
    """
    s = CouplingSet({e.name: parse(e.tree) for e in _ENTRIES}, loop_order=0)
    if params is None:
        return s
    return s.numeric(params.g, params.alpha, params.bigM / params.m)


def free_tree_values(mode: str = "standard") -> Dict[str, RationalExpr]:
    keys = FREE_STANDARD if mode == "standard" else FREE_ANTIGHOST
    tree = tree_values()
    return {k: tree[k] for k in keys}


def free_symbolic(mode: str = "standard") -> Dict[str, RationalExpr]:
    """Free constants as independent indeterminates (their own names)."""
    keys = FREE_STANDARD if mode == "standard" else FREE_ANTIGHOST
    return {k: parse(k) for k in keys}


@dataclass
class GradingReport:
    checked: int
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"checked": self.checked, "violations": self.violations, "ok": self.ok}


def grading_check(entries: CouplingSet | Iterable[CouplingId] | None = None) -> GradingReport:
    """Ghost-number balance and relevance bound for each coupling.

    Accepts a :class:`CouplingSet` (its catalogue metadata is checked) or an
    explicit iterable of :class:`CouplingId`, which allows checking entries
    that are not in the catalogue.
    """
    if entries is None:
        ids: Sequence[CouplingId] = _ENTRIES
    elif isinstance(entries, CouplingSet):
        ids = [lookup(k) for k in entries]
    else:
        ids = list(entries)
    rep = GradingReport(checked=len(ids))
    for e in ids:
        if e.appendix == "A":
            if e.content[3] != e.content[4]:
                rep.violations.append(
                    {"coupling": e.name, "rule": "ghost balance",
                     "detail": f"n_c={e.content[4]}, n_cbar={e.content[3]}"})
        else:
            if e.ghost_number != e.ghost:
                rep.violations.append(
                    {"coupling": e.name, "rule": "insertion ghost number",
                     "detail": f"fields carry {e.ghost_number}, insertion {e.ghost}"})
        bound = relevance_bound(e.appendix)
        if e.dimension_count > bound:
            rep.violations.append(
                {"coupling": e.name, "rule": "relevance bound",
                 "detail": f"|n|+|w|+nu = {e.dimension_count} > {bound}"})
    return rep


# ---------------------------------------------------------------------------
# JSON

def dump_json(s: CouplingSet, loop_order: int | None = None) -> str:
    l = s.loop_order if loop_order is None else loop_order
    rows = []
    for k, v in s.items():
        val = v.to_infix() if isinstance(v, RationalExpr) else repr(float(v))
        rows.append({"coupling": k, "l": l if l is not None else 0,
                     "nu": mass_order(k), "value": val})
    return json.dumps(rows, indent=1, ensure_ascii=False) + "\n"


def load_json(text: str, *, complete: bool = True) -> CouplingSet:
    """Load rows ``{"coupling", "l", "nu", "value"}``; values parsed exactly."""
    rows = json.loads(text)
    if isinstance(rows, dict):
        rows = [{"coupling": k, "value": v} for k, v in rows.items()]
    if not isinstance(rows, list):
        raise ValueError("coupling JSON must be a list of rows or an object")
    entries: Dict[str, object] = {}
    loops = set()
    for row in rows:
        name = row["coupling"]
        e = lookup(name)
        if "nu" in row and int(row["nu"]) != e.nu:
            raise ValueError(f"{name}: nu={row['nu']} disagrees with catalogue nu={e.nu}")
        if "l" in row:
            loops.add(int(row["l"]))
        val = row["value"]
        entries[name] = float(val) if isinstance(val, float) else RationalExpr.coerce(
            val if not isinstance(val, int) else val)
    if len(loops) > 1:
        raise ValueError(f"mixed loop orders {sorted(loops)}")
    return CouplingSet(entries, loops.pop() if loops else None, complete=complete)


def sexpr_map(s: Mapping[str, RationalExpr]) -> Dict[str, str]:
    return {k: to_sexpr(v) for k, v in s.items()}

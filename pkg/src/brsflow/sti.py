"""Slavnov-Taylor constraint system on the relevant couplings.

The 53 equations are stored as bracket expressions with their momentum and
mass prefactor stripped (kept only as a tag).  Coupling names inside a
bracket are the catalogue names of :mod:`brsflow.couplings`; ``g``,
``alpha`` and ``mu`` are the theory indeterminates.

Typical use::

    >>> from brsflow import sti, couplings
    >>> evaluate(build_system(), couplings.tree_values()).all_zero
    True
    >>> values, trace = solve_chain(couplings.free_symbolic("antighost"), "antighost")
    >>> values["Sigma_long"]
    RationalExpr(0)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

from . import couplings as cp
from .algebra import (AlgebraError, RationalExpr, REGISTRY, parse, solve_linear,
                      substitute)

__all__ = [
    "StiEquation",
    "ResidualReport",
    "ChainStep",
    "ChainTrace",
    "ChainError",
    "PreconditionError",
    "build_system",
    "system_by_label",
    "evaluate",
    "verify_dependencies",
    "dependency_set",
    "solve_chain",
    "antighost_relations",
    "grading_audit",
    "UNUSED_EQUATIONS",
]


@dataclass(frozen=True)
class StiEquation:
    label: str
    prefactor: str
    nu: int
    signature: Tuple[int, int, int, int, int]
    source: str

    @property
    def bracket(self) -> RationalExpr:
        return _bracket(self.label)


# (label, prefactor tag, mass order, derivative signature, bracket)
_RAW: Tuple[Tuple[str, str, int, str, str], ...] = (
    ("I_a", "m² q_μ", 2, "Ac",
     "-(1+delta_m2)*R_1 + Sigma_AB*R_4 + 1 + Sigma_ccbar/alpha"),
    ("I_b", "q² q_μ", 0, "Ac",
     "-(1+Sigma_long)*R_1/alpha + (1+Sigma_dot_ccbar)/alpha"),
    ("II_a", "m³", 3, "Bc",
     "(alpha+Sigma_BB)*R_4 - (alpha+Sigma_ccbar) - g/2*kappa*R_3"),
    ("II_b", "m q²", 1, "Bc",
     "-Sigma_AB*R_1 + (1+Sigma_dot_BB)*R_4 - (1+Sigma_dot_ccbar)"),
    ("III_a", "(p_μp_ν − q_μq_ν)", 0, "AAc",
     "-2*F_AAA*R_1 - (F1_ccbarA - r2_ccbarA)/alpha"
     " + ((1+Sigma_long)/alpha - (1+Sigma_trans))*g*R_2"),
    ("III_b", "(p²−q²)δ_μν", 0, "AAc",
     "2*F_AAA*R_1 + (1+Sigma_trans)*g*R_2"),
    ("IV_a", "m p_μ", 1, "ABc",
     "2*F_BBA*R_4 + g/2*Sigma_AB*R_6 + F_ccbarB1/alpha - r2_ccbarA"),
    ("IV_b", "m q_μ", 1, "ABc",
     "g*Sigma_AB*R_2 + 4*F_BBA*R_4 + (F1_ccbarA - r2_ccbarA)"),
    ("V", "(p²−q²)", 0, "BBc",
     "2*R_1*F_BBA + (1+Sigma_dot_BB)*g/2*R_6"),
    ("VI_a", "m p_μ", 1, "Ahc",
     "-2*R_1*F_AAh1 + R_4*(F1_hBA - r2_hBA) + Sigma_AB*g/2*R_5 - F_ccbarh1/alpha"),
    ("VI_b", "m q_μ", 1, "Ahc",
     "-2*R_1*F_AAh1 + 2*R_4*F1_hBA"),
    ("VII_a", "m²", 2, "hBc",
     "(mu^2 + Sigma_hh)*(-g/2*R_3) + 2*F_BBh1*R_4 + F_ccbarh1"
     " + (alpha + Sigma_BB)*g/2*R_5"),
    ("VII_b", "p²", 0, "hBc",
     "F1_hBA*R_1 - (1+Sigma_dot_hh)*g/2*R_3"),
    ("VII_c", "q²", 0, "hBc",
     "-F1_hBA*R_1 + (1+Sigma_dot_BB)*g/2*R_5"),
    ("VII_d", "k²", 0, "hBc",
     "r2_hBA*R_1"),
    ("VIII_a", "m²", 2, "cc cbar",
     "2*F_ccbarB1*R_4 - (alpha + Sigma_ccbar)*g*R_7"),
    ("VIII_b", "k²", 0, "cc cbar",
     "F1_ccbarA*R_1 - r2_ccbarA*R_1 - (1+Sigma_dot_ccbar)*g*R_7"),
    ("VIII_c", "(p²+q²)", 0, "cc cbar",
     "r2_ccbarA*R_1"),
    ("IX", "m", 1, "hhBc",
     "6*F_hhh1*(-g/2*R_3) + 4*F_BBhh*R_4 + 2*F_BBh1*g*R_5 + 2*r_hhccbar"),
    ("X", "m", 1, "BBBc",
     "-F_BBh1*g*R_3 + 8*F_BBBB*R_4 + (2*r1_BBccbar + r2_BBccbar)"),
    ("XI", "m", 1, "h cbar cc",
     "2*r_hBccbar*R_4 + F_ccbarB1*g*R_5 + F_ccbarh1*g*R_7"),
    ("XII", "m", 1, "c cbar cB",
     "F_ccbarh1*(-g/2*R_3) + (2*r1_BBccbar - r2_BBccbar)*R_4"
     " + F_ccbarB1*(g/2*R_6 - g*R_7) + 2*r_ccbarccbar"),
    ("XIII_1", "1", 0, "AABc",
     "2*r2_AABB*R_4 + r2_AAccbar"),
    ("XIII_2", "m", 1, "AABc",
     "-F_AAh1*g*R_3 + 4*F1_AABB*R_4 + 2*r1_AAccbar"),
    ("XIV_a", "2δ_μν l_ρ", 0, "AAAc",
     "4*(F1_AAAA + r2_AAAA)*R_1 + 2*F_AAA*g*R_2 + r1_AAccbar/alpha"),
    ("XIV_b", "δ_μν(p+q)_ρ", 0, "AAAc",
     "2*r1_AAccbar/alpha"),
    ("XIV_c", "(δ_μρ l_ν + δ_νρ l_μ)", 0, "AAAc",
     "-4*F1_AAAA*R_1 - 2*F_AAA*g*R_2"),
    ("XIV_d", "(δ_μρ p_ν + δ_νρ q_μ)", 0, "AAAc",
     "0"),
    ("XIV_e", "(δ_μρ q_ν + δ_νρ p_μ)", 0, "AAAc",
     "-r2_AAccbar/alpha"),
    ("XV_1a", "l_μ", 0, "BBAc",
     "4*F1_AABB*R_1 + 2*F_BBA*g*R_6"),
    ("XV_1b", "k_μ", 0, "BBAc",
     "r1_BBccbar"),
    ("XV_2a", "p_μ", 0, "BBAc",
     "-2*r2_AABB*R_1 + 2*F_BBA*g*R_2 + F1_hBA*g*R_3"),
    ("XV_2b", "q_μ", 0, "BBAc",
     "-2*r2_AABB*R_1 - 2*F_BBA*g*R_2 + 2*F_BBA*g*R_6"),
    ("XV_2c", "k_μ", 0, "BBAc",
     "-2*r2_AABB*R_1 + F1_hBA*g/2*R_3 + r2_hBA*g/2*R_3 + F_BBA*g*R_6"
     " - r2_BBccbar/alpha"),
    ("XVI_a", "p_μ", 0, "hABc",
     "F1_hBA*g*(R_6 - R_2) - r2_hBA*g*R_2"),
    ("XVI_b", "q_μ", 0, "hABc",
     "F1_hBA*g*R_2 - r2_hBA*g*R_2 + 2*F_BBA*g*R_5"),
    ("XVI_c", "k_μ", 0, "hABc",
     "F1_hBA*g/2*R_6 - r2_hBA*g/2*R_6 + F_BBA*g*R_5 - r_hBccbar/alpha"),
    ("XVII_a", "l_μ", 0, "hhAc",
     "4*F_AAhh*R_1 - F1_hBA*g*R_5"),
    ("XVII_b", "k_μ", 0, "hhAc",
     "r2_hBA*g*R_5 + 2*r_hhccbar/alpha"),
    ("XVIII_a", "l_μ", 0, "A cc cbar",
     "F1_ccbarA*g*(R_2 - R_7) + 2*r_ccbarccbar/alpha"),
    ("XVIII_b", "p_μ", 0, "A cc cbar",
     "2*r1_AAccbar*R_1 + r2_ccbarA*g*(R_2 - R_7) + 2*r_ccbarccbar/alpha"),
    ("XVIII_c", "q_μ", 0, "A cc cbar",
     "-r2_AAccbar*R_1 - r2_ccbarA*g*R_7 + 2*r_ccbarccbar/alpha"),
    ("XIX", "1", 0, "hhhBc",
     "-2*F_hhhh*R_3 + F_hhBB*R_5"),
    ("XX", "1", 0, "hBBBc",
     "-F_BBhh*R_3 + 2*F_BBBB*R_5"),
    ("XXI", "1", 0, "AAhBc",
     "-F_AAhh*R_3 + F1_AABB*R_5"),
    ("XXII", "1", 0, "ABcAB",
     "r2_AABB*(R_6 - 2*R_2)"),
    ("XXIII", "1", 0, "ABAch",
     "r2_AABB*R_5"),
    ("XXIV", "1", 0, "AA cbar cc",
     "r2_AAccbar*R_2 + r1_AAccbar*R_7"),
    ("XXV", "1", 0, "A cbar A cc",
     "r2_AAccbar*(3*R_2 - R_7)"),
    ("XXVI", "1", 0, "BB cbar cc",
     "r2_BBccbar*(R_6 - R_7) - r1_BBccbar*R_7"),
    ("XXVII", "1", 0, "B cbar B cc",
     "-r_hBccbar*R_3 + r2_BBccbar*(3*R_6 - 2*R_7)"),
    ("XXVIII", "1", 0, "hh cbar cc",
     "r_hBccbar*R_5 + r_hhccbar*R_7"),
    ("XXIX", "1", 0, "hBc cbar c",
     "2*r_hhccbar*R_3 - 2*r1_BBccbar*R_5 + r2_BBccbar*R_5"
     " + r_hBccbar*(-R_6 + 2*R_7)"),
)

_THEORY = ("g", "alpha", "mu")
_BRACKETS: Dict[str, RationalExpr] = {}

# make sure every name used by the system is registered before any freeze
for _name in cp.names() + tuple(cp.ALIASES):
    REGISTRY.register(_name)


def _bracket(label: str) -> RationalExpr:
    if label not in _BRACKETS:
        raw = next(r for r in _RAW if r[0] == label)[4]
        expr = parse(raw)
        aliases = {a: parse(t) for a, t in cp.ALIASES.items() if a in expr.variables()}
        _BRACKETS[label] = substitute(expr, aliases) if aliases else expr
    return _BRACKETS[label]


_SYSTEM = tuple(StiEquation(lab, pre, nu, cp._n(sig), raw)
                for lab, pre, nu, sig, raw in _RAW)


def build_system() -> Tuple[StiEquation, ...]:
    """All 53 equations in their printed order."""
    return _SYSTEM


def system_by_label() -> Dict[str, StiEquation]:
    return {e.label: e for e in _SYSTEM}


# ---------------------------------------------------------------------------
# residuals

@dataclass
class ResidualReport:
    residuals: Dict[str, object]

    @property
    def all_zero(self) -> bool:
        return all(_is_zero(v) for v in self.residuals.values())

    @property
    def nonzero(self) -> List[str]:
        return [k for k, v in self.residuals.items() if not _is_zero(v)]

    def to_dict(self) -> dict:
        return {
            "all_zero": self.all_zero,
            "residuals": {k: (v.to_infix() if isinstance(v, RationalExpr) else v)
                          for k, v in self.residuals.items()},
        }


def _is_zero(v, tol: float = 0.0) -> bool:
    if isinstance(v, RationalExpr):
        return v.is_zero()
    return abs(v) <= tol


def _bind(expr: RationalExpr, values: Mapping[str, object]):
    used = expr.variables() - set(_THEORY)
    missing = [v for v in used if v not in values]
    if missing:
        raise KeyError("missing couplings: " + ", ".join(sorted(missing)))
    return substitute(expr, {k: values[k] for k in used})


def evaluate(system: Sequence[StiEquation], values: Mapping[str, object]) -> ResidualReport:
    """Residual of every bracket with the couplings bound to ``values``.

    Values must be exact (``RationalExpr`` or anything coercible to one).
    """
    vals = {cp.ALIASES.get(k, k): RationalExpr.coerce(v) for k, v in values.items()}
    return ResidualReport({e.label: _bind(e.bracket, vals) for e in system})


def evaluate_numeric(system: Sequence[StiEquation], values: Mapping[str, float],
                     g: float, alpha: float, mu: float) -> Dict[str, float]:
    """Floating-point residuals (for numeric coupling sets)."""
    env = dict(values)
    env.update(g=g, alpha=alpha, mu=mu)
    out = {}
    for e in system:
        br = e.bracket
        out[e.label] = float(br.evaluate({k: env[k] for k in br.variables()})) \
            if br.variables() else float(br.constant_value())
    return out


# ---------------------------------------------------------------------------
# dependencies among the two- and three-field equations

class PreconditionError(ValueError):
    def __init__(self, failed: Sequence[str]):
        super().__init__("precondition violated: " + ", ".join(failed))
        self.failed = list(failed)


_CONDITIONS = {
    "r2_hBA = 0": "r2_hBA",
    "r2_ccbarA = 0": "r2_ccbarA",
    "R_6 = R_2": "R_6 - R_2",
    "R_7 = R_2": "R_7 - R_2",
    "R_3 R_5 = R_2^2": "R_3*R_5 - R_2^2",
    "F_ccbarB1 R_5 = -F_ccbarh1 R_2": "F_ccbarB1*R_5 + F_ccbarh1*R_2",
    "2 F_BBA R_5 = -F1_hBA R_2": "2*F_BBA*R_5 + F1_hBA*R_2",
    "F_AAh1 R_1 = F1_hBA R_4": "F_AAh1*R_1 - F1_hBA*R_4",
}

_DEPENDENCIES = {
    "D1": "{VIII_b}/alpha + g*R_2*{I_b} + R_1*({III_a} + {III_b})",
    "D2": "g*R_2*{II_b} - {VIII_b} + R_1*{IV_b} - 2*R_4*{V}",
    "D3": "R_2*{IV_a} - R_3*({VI_a} - {VI_b})",
    "D4": "R_2*{V} - R_3*{VII_c}",
}


def _combine(template: str, brackets: Mapping[str, RationalExpr],
             values: Mapping[str, RationalExpr]) -> RationalExpr:
    """Evaluate a template where ``{X}`` stands for the bracket of equation X."""
    env: Dict[str, RationalExpr] = {}
    text = template
    for lab in sorted(brackets, key=len, reverse=True):
        tok = "{" + lab + "}"
        if tok in text:
            ph = "EQ_" + lab
            text = text.replace(tok, ph)
            env[ph] = brackets[lab]
    expr = parse(text)
    env.update({k: v for k, v in values.items() if k in expr.variables()})
    return substitute(expr, env)


def dependency_set() -> Dict[str, RationalExpr]:
    """Couplings as free indeterminates with the tie conditions imposed.

    Besides the four ties among insertion constants and three-point
    couplings, the two vanishing three-point couplings are set to zero;
    the third relation needs them.
    """
    vals = {n: parse(n) for n in cp.names()}
    r2, r3, r4, r1 = vals["R_2"], vals["R_3"], vals["R_4"], vals["R_1"]
    vals["R_6"] = r2
    vals["R_7"] = r2
    vals["R_5"] = r2 * r2 / r3
    vals["F_ccbarh1"] = -vals["F_ccbarB1"] * vals["R_5"] / r2
    vals["F1_hBA"] = -2 * vals["F_BBA"] * vals["R_5"] / r2
    vals["F_AAh1"] = vals["F1_hBA"] * r4 / r1
    vals["r2_hBA"] = RationalExpr.zero()
    vals["r2_ccbarA"] = RationalExpr.zero()
    return vals


@dataclass
class DependencyReport:
    combinations: Dict[str, RationalExpr]

    @property
    def all_zero(self) -> bool:
        return all(v.is_zero() for v in self.combinations.values())

    def to_dict(self) -> dict:
        return {"all_zero": self.all_zero,
                "combinations": {k: v.to_infix() for k, v in self.combinations.items()}}


def verify_dependencies(values: Mapping[str, object] | None = None) -> DependencyReport:
    """Check the four linear relations among the two/three-field brackets."""
    vals = dependency_set() if values is None else {
        cp.ALIASES.get(k, k): RationalExpr.coerce(v) for k, v in values.items()}
    failed = [name for name, cond in _CONDITIONS.items()
              if not _bind(parse(cond), vals).is_zero()]
    if failed:
        raise PreconditionError(failed)
    labels = ("I_b", "II_b", "III_a", "III_b", "IV_a", "IV_b", "V",
              "VI_a", "VI_b", "VII_c", "VIII_b")
    brackets = {lab: _bind(_bracket(lab), vals) for lab in labels}
    combos = {k: _combine(t, brackets, vals) for k, t in _DEPENDENCIES.items()}
    return DependencyReport(combos)


# ---------------------------------------------------------------------------
# determination chain

class ChainError(AlgebraError):
    pass


@dataclass(frozen=True)
class ChainStep:
    target: str
    equation: str
    value: RationalExpr

    def to_dict(self) -> dict:
        return {"target": self.target, "equation": self.equation,
                "value": self.value.to_infix()}


@dataclass
class ChainTrace:
    mode: str
    steps: List[ChainStep] = field(default_factory=list)

    @property
    def targets(self) -> List[str]:
        return [s.target for s in self.steps]

    @property
    def equations_used(self) -> List[str]:
        out = []
        for s in self.steps:
            out.extend(_labels_in(s.equation))
        return out

    def to_dict(self) -> dict:
        return {"mode": self.mode, "steps": [s.to_dict() for s in self.steps]}


def _labels_in(equation: str) -> List[str]:
    import re
    labels = set(system_by_label())
    return [t for t in re.findall(r"[IVX]+(?:_[0-9]?[a-e]?)?", equation) if t in labels]


# (target, equation); equation strings are either a label or a combination
# of labels in the template syntax of ``_combine``.
_CHAIN: Tuple[Tuple[str, str], ...] = (
    ("r2_hBA", "VII_d"),
    ("r2_ccbarA", "VIII_c"),
    ("r1_AAccbar", "XIV_b"),
    ("r2_AAccbar", "XIV_e"),
    ("r1_BBccbar", "XV_1b"),
    ("r2_AABB", "XXIII"),
    ("r2_AAAA", "{XIV_a} + {XIV_c}"),
    ("r_hhccbar", "XVII_b"),
    ("r_ccbarccbar", "XVIII_c"),
    ("r_hBccbar", "XXVIII"),
    ("r2_BBccbar", "XXIX"),
    ("R_1", "I_b"),
    ("R_4", "II_b"),
    ("R_2", "III_b"),
    ("R_6", "XVI_a"),
    ("R_7", "XVIII_a"),
    ("R_5", "R_2*{XV_2a} - R_3*{XVI_b}"),
    ("F1_ccbarA", "III_a"),
    ("F_BBA", "V"),
    ("F1_hBA", "XVI_b"),
    ("F_AAh1", "VI_b"),
    ("F_ccbarB1", "IV_a"),
    ("F_ccbarh1", "XI"),
    ("Sigma_ccbar", "VIII_a"),
    ("Sigma_BB", "II_a"),
    ("delta_m2", "I_a"),
    ("Sigma_hh", "VII_a"),
    ("Sigma_dot_hh", "VII_b"),
    ("F1_AAAA", "XIV_c"),
    ("F_BBBB", "X"),
    ("F_BBhh", "XX"),
    ("F_hhhh", "XIX"),
    ("F_hhh1", "IX"),
    ("F_AAhh", "XVII_a"),
    ("F1_AABB", "XXI"),
)

#: equations that the chain never solves but which must hold afterwards
UNUSED_EQUATIONS = ("IV_b", "VI_a", "VII_c", "VIII_b")

MODES = ("standard", "antighost")


def _step_equation(equation: str, bindings: Mapping[str, RationalExpr]) -> RationalExpr:
    labels = _labels_in(equation)
    if equation in labels:
        return _subst(_bracket(equation), bindings)
    brackets = {lab: _subst(_bracket(lab), bindings) for lab in labels}
    return _combine(equation, brackets, bindings)


def _subst(expr: RationalExpr, bindings: Mapping[str, RationalExpr]) -> RationalExpr:
    used = expr.variables()
    b = {k: v for k, v in bindings.items() if k in used}
    return substitute(expr, b) if b else expr


def solve_chain(free: Mapping[str, object], mode: str = "standard"
                ) -> Tuple[cp.CouplingSet, ChainTrace]:
    """Determine all couplings from the free renormalization constants.

    ``free`` maps each free constant to an expression (which may contain
    new indeterminates).  In antighost mode ``Sigma_long`` must not be
    given; it is fixed to zero.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    expected = set(cp.FREE_STANDARD if mode == "standard" else cp.FREE_ANTIGHOST)
    given = {cp.ALIASES.get(k, k) for k in free}
    if given != expected:
        extra = sorted(given - expected)
        missing = sorted(expected - given)
        msg = []
        if missing:
            msg.append("missing free constants: " + ", ".join(missing))
        if extra:
            msg.append("not free in this mode: " + ", ".join(extra))
        raise ValueError("; ".join(msg))

    bindings: Dict[str, RationalExpr] = {k: RationalExpr.coerce(v) for k, v in free.items()}
    bindings["kappa"] = RationalExpr.zero()
    trace = ChainTrace(mode)
    if mode == "antighost":
        bindings["Sigma_long"] = RationalExpr.zero()
        trace.steps.append(ChainStep("Sigma_long", "antighost field equation",
                                     RationalExpr.zero()))

    for target, equation in _CHAIN:
        if target in bindings:
            raise ChainError(f"chain step {target} ({equation}): already determined")
        try:
            eq = _step_equation(equation, bindings)
            value = solve_linear(eq, target, label=equation)
        except AlgebraError as exc:
            raise ChainError(f"chain step {target} ({equation}): {exc}") from None
        # keep every binding expressed in the free constants only
        try:
            for k in list(bindings):
                if target in bindings[k].variables():
                    bindings[k] = substitute(bindings[k], {target: value})
        except AlgebraError as exc:
            raise ChainError(f"chain step {target} ({equation}): {exc}") from None
        bindings[target] = value
        trace.steps.append(ChainStep(target, equation, value))

    # fixed point: nothing left that refers to a determined coupling
    solved = set(bindings) - set(free)
    for _ in range(len(bindings)):
        changed = False
        for k, v in bindings.items():
            hit = v.variables() & solved
            if hit:
                bindings[k] = _subst(v, {h: bindings[h] for h in hit})
                changed = True
        if not changed:
            break
    return cp.CouplingSet(bindings, loop_order=None), trace


# ---------------------------------------------------------------------------

_ANTIGHOST = {
    "c22": "1 + Sigma_dot_ccbar - R_1",
    "c23": "alpha + Sigma_ccbar - alpha*R_4",
    "c24": "F1_ccbarA - g*R_2",
    "c25": "F_ccbarB1 - alpha/2*g*R_6",
    "c26": "F_ccbarh1 + alpha/2*g*R_5",
}


def antighost_relations(values: Mapping[str, object]) -> ResidualReport:
    """Residuals of the five relations implied by the antighost equation."""
    vals = {cp.ALIASES.get(k, k): RationalExpr.coerce(v) for k, v in values.items()}
    return ResidualReport({k: _bind(parse(t), vals) for k, t in _ANTIGHOST.items()})


# ---------------------------------------------------------------------------
# grading audit

def _sub(a, b):
    return tuple(x - y for x, y in zip(a, b))


def _add(a, b):
    return tuple(x + y for x, y in zip(a, b))


def _unit(fieldname: str):
    return tuple(1 if f == fieldname else 0 for f in cp.FIELDS)


def _monomial_ok(sig, gamma: List[cp.CouplingId], ins: List[cp.CouplingId]) -> str | None:
    if len(gamma) > 1 or len(ins) > 1:
        return "more than one vertex or insertion factor"
    if gamma and ins:
        r = ins[0]
        got = _add(_sub(_add(gamma[0].content, r.content), _unit(r.paired)), (0,) * 5)
        return None if got == sig else f"{gamma[0].name}·{r.name} gives {got}"
    if ins:
        r = ins[0]
        implied = _add(_sub(sig, r.content), _unit(r.paired))
        if min(implied) < 0 or sum(implied) != 2 or implied[3] != implied[4]:
            return f"{r.name} alone implies vertex content {implied}"
        return None
    if gamma:
        n = gamma[0].content
        if n[3] < 1:
            return f"{gamma[0].name} alone has no antighost to contract"
        base = _sub(n, _unit("cbar"))
        if sig in (_add(base, _unit("A")), _add(base, _unit("B"))):
            return None
        return f"{gamma[0].name} alone does not match"
    return None


def grading_audit(system: Sequence[StiEquation] | None = None) -> Dict[str, List[str]]:
    """Field-content bookkeeping of every bracket monomial.

    A monomial holds at most one vertex coupling and one insertion constant.
    The insertion contributes its fields minus the field it is paired with;
    a vertex term without insertion has its antighost replaced by A or B
    (gauge-fixing contribution); an insertion without vertex coupling
    multiplies a tree two-point function.  Returns offending monomials per
    equation (empty dict when consistent).
    """
    system = build_system() if system is None else system
    problems: Dict[str, List[str]] = {}
    for eq in system:
        br = eq.bracket
        for mono in br.num.terms:
            names_ = [REGISTRY.name(v) for v, e in mono for _ in range(e)]
            gamma, ins = [], []
            for n in names_:
                if n in _THEORY:
                    continue
                cid = cp.lookup(n)
                (ins if cid.appendix == "B" else gamma).append(cid)
            err = _monomial_ok(eq.signature, gamma, ins)
            if err:
                problems.setdefault(eq.label, []).append(err)
    return problems

"""Truncated perturbative flow engine.

The engine works with two kinds of data:

* zero-momentum Taylor slots ``(l, n, nu)`` with scalar external legs
  (h and the isospin component B^1; B-dependence enters through B.B), stored
  as n-point values, i.e. background-polynomial coefficients times n!;
* tree radial slots: exceptional configuration (k, -k, 0, ..., 0) with
  scalar end legs, sampled on a log-spaced |k| grid.

With constant scalar backgrounds and the loop momentum along one axis, the
tree functions on the exceptional configuration are the background Taylor
coefficients of the Dyson resolvent ``K = V2 - V2 C K`` built from the
fluctuation matrix ``V2`` of the interaction.  The one-loop right-hand side
at zero external momenta is then

    d/dL L_1 = 1/2 int_k Tr_bos[Cdot K] + int_k Tr_gh[Sdot K_gh],

which is integrated in ln L with composite Simpson and step halving,
relevant slots upwards from L = 0 and irrelevant slots downwards from L0.

Grading: ``nu`` counts explicit powers of m in the vertices; the Taylor
coefficients in nu are separated by sampling a grading variable t.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import permutations, product
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize

from .couplings import _n, lookup
from .regulator import (EXP_CUT, TheoryParams, flow_kernel_radial, p_poly,
                        propagator_radial, sigma, sigma_window)

__all__ = [
    "SPECIES",
    "FlowModel",
    "Vertex",
    "SlotId",
    "BoundarySpec",
    "Schedule",
    "FlowState",
    "FlowError",
    "MissingDataError",
    "ScheduleError",
    "ContractionError",
    "build_model",
    "contraction_tables",
    "reduce_onto_basis",
    "rhs",
    "integrate_flow",
    "flow_tree_radial",
    "tree_exchange_closed_form",
    "transform_check",
    "truncation_check",
    "bound_check",
    "lambda0_convergence",
    "one_loop_oracle",
    "one_loop_functional",
    "ghost_sign_ratio",
]

SPECIES = ("A", "h", "B", "cbar", "c")
NCOMP = 22
COMP_H = 12


class FlowError(Exception):
    pass


class MissingDataError(FlowError):
    pass


class ScheduleError(FlowError):
    pass


class ContractionError(FlowError):
    pass


def comp_A(a: int, mu: int) -> int:
    return 4 * a + mu


def comp_B(a: int) -> int:
    return 13 + a


def comp_cbar(a: int) -> int:
    return 16 + a


def comp_c(a: int) -> int:
    return 19 + a


def comp_species(i: int) -> str:
    if i < 12:
        return "A"
    if i == COMP_H:
        return "h"
    if i < 16:
        return "B"
    return "cbar" if i < 19 else "c"


def comp_label(i: int) -> str:
    sp = comp_species(i)
    if sp == "A":
        return f"A{i // 4 + 1}_{i % 4}"
    if sp == "h":
        return "h"
    base = {"B": 13, "cbar": 16, "c": 19}[sp]
    return f"{sp}{i - base + 1}"


def _levi_civita() -> np.ndarray:
    e = np.zeros((3, 3, 3))
    for p in permutations(range(3)):
        inv = sum(1 for i in range(3) for j in range(i + 1, 3) if p[i] > p[j])
        e[p] = -1.0 if inv % 2 else 1.0
    return e


EPS = _levi_civita()
_PERM3 = [p for p in permutations(range(3))]


# ---------------------------------------------------------------------------
# vertex dictionary

@dataclass(frozen=True)
class Vertex:
    """One field-content class of the tree interaction.

    ``terms`` holds component monomials ``(coef, legs)`` with legs
    ``(component, derivative index or -1)`` in the written (Grassmann) order.
    Coefficients include the explicit factor m**nu.
    """

    name: str
    content: Tuple[int, int, int, int, int]
    tensor: str
    coupling: str
    nu: int
    terms: Tuple[Tuple[float, Tuple[Tuple[int, int], ...]], ...]

    @property
    def tree_value(self) -> str:
        return lookup(self.coupling).tree

    @property
    def species(self) -> Tuple[str, ...]:
        return tuple(s for s, k in zip(SPECIES, self.content) if k)


def _y11(p: TheoryParams) -> List[Vertex]:
    g, m, mu2, al = p.g, p.m, p.mu ** 2, p.alpha
    R3, R4 = range(3), range(4)
    A, B, H = comp_A, comp_B, COMP_H
    out: List[Vertex] = []

    def add(name, content, tensor, coupling, nu, terms):
        terms = tuple((float(c), tuple(l)) for c, l in terms if c != 0)
        out.append(Vertex(name, _n(content), tensor, coupling, nu, terms))

    add("AAA", "AAA", "ε^{abc}δ_{μν}i(p−q)_λ", "F_AAA", 0,
        [(g * EPS[a, b, c], ((A(a, nu), mu), (A(b, mu), -1), (A(c, nu), -1)))
         for a, b, c in _PERM3 for mu in R4 for nu in R4])
    add("AAAA", "AAAA", "ε^{abc}ε^{ars}δ_{μμ'}δ_{νν'}", "F1_AAAA", 0,
        [(0.25 * g * g * EPS[a, b, c] * EPS[a, d, e],
          ((A(b, mu), -1), (A(c, nu), -1), (A(d, mu), -1), (A(e, nu), -1)))
         for a in R3 for b, c in product(R3, R3) for d, e in product(R3, R3)
         if EPS[a, b, c] and EPS[a, d, e] for mu in R4 for nu in R4])
    add("hAB", "hAB", "δ^{ab}i(p−q)_μ", "F1_hBA", 0,
        [(0.5 * g, ((H, mu), (A(a, mu), -1), (B(a), -1))) for a in R3 for mu in R4]
        + [(-0.5 * g, ((H, -1), (A(a, mu), -1), (B(a), mu))) for a in R3 for mu in R4])
    add("ABB", "ABB", "ε^{abc}i(p−q)_μ", "F_BBA", 0,
        [(-0.5 * g * EPS[a, b, c], ((A(a, mu), -1), (B(b), mu), (B(c), -1)))
         for a, b, c in _PERM3 for mu in R4])
    add("AAh", "AAh", "δ^{ab}δ_{μν}", "F_AAh1", 1,
        [(0.5 * g * m, ((H, -1), (A(a, mu), -1), (A(a, mu), -1))) for a in R3 for mu in R4])
    add("AAhh", "AAhh", "δ^{ab}δ_{μν}", "F_AAhh", 0,
        [(g * g / 8, ((A(a, mu), -1), (A(a, mu), -1), (H, -1), (H, -1)))
         for a in R3 for mu in R4])
    add("AABB", "AABB", "δ_{μν}δ^{ab}δ^{rs}", "F1_AABB", 0,
        [(g * g / 8, ((A(a, mu), -1), (A(a, mu), -1), (B(b), -1), (B(b), -1)))
         for a in R3 for b in R3 for mu in R4])
    add("hhh", "hhh", "1", "F_hhh1", 1, [(g * mu2 * m / 4, ((H, -1),) * 3)])
    add("hBB", "hBB", "δ^{ab}", "F_BBh1", 1,
        [(g * mu2 * m / 4, ((H, -1), (B(a), -1), (B(a), -1))) for a in R3])
    add("hhhh", "hhhh", "1", "F_hhhh", 0, [(g * g * mu2 / 32, ((H, -1),) * 4)])
    add("hhBB", "hhBB", "δ^{ab}", "F_BBhh", 0,
        [(g * g * mu2 / 16, ((H, -1), (H, -1), (B(a), -1), (B(a), -1))) for a in R3])
    add("BBBB", "BBBB", "δ^{ab}δ^{rs}", "F_BBBB", 0,
        [(g * g * mu2 / 32, ((B(a), -1), (B(a), -1), (B(b), -1), (B(b), -1)))
         for a in R3 for b in R3])
    add("cbar c h", "cbar c h", "δ^{ab}", "F_ccbarh1", 1,
        [(-0.5 * al * g * m, ((comp_cbar(a), -1), (H, -1), (comp_c(a), -1))) for a in R3])
    add("cbar c B", "cbar c B", "ε^{abc}", "F_ccbarB1", 1,
        [(-0.5 * al * g * m * EPS[a, c, b], ((comp_cbar(a), -1), (B(c), -1), (comp_c(b), -1)))
         for a, c, b in _PERM3])
    add("cbar c A", "cbar c A", "ε^{abc}ip_μ", "F1_ccbarA", 0,
        [(-g * EPS[a, c, b], ((comp_cbar(a), mu), (A(c, mu), -1), (comp_c(b), -1)))
         for a, c, b in _PERM3 for mu in R4])
    return out


# ---------------------------------------------------------------------------
# model

@dataclass(frozen=True)
class Schedule:
    """ln(Lambda) grid from lam_min_factor*m to Lambda0 with ``intervals`` steps."""

    intervals: int = 512
    lam_min_factor: float = 0.01
    max_step: Optional[float] = None

    def __post_init__(self):
        if self.intervals < 16 or self.intervals % 8:
            raise ValueError("schedule intervals must be a multiple of 8 and >= 16")
        if not 0 < self.lam_min_factor < 1:
            raise ValueError("lam_min_factor must lie in (0, 1)")

    def count(self, params: TheoryParams) -> int:
        """Number of intervals; ``max_step`` (in ln Lambda) may raise it."""
        n = self.intervals
        if self.max_step:
            span = math.log(params.lambda0 / (self.lam_min_factor * params.m))
            n = max(n, 8 * math.ceil(span / self.max_step / 8))
        return n

    def nodes(self, params: TheoryParams) -> np.ndarray:
        lam = np.exp(np.linspace(math.log(self.lam_min_factor * params.m),
                                 math.log(params.lambda0), self.count(params) + 1))
        lam[-1] = params.lambda0
        return lam


@dataclass(frozen=True)
class GridSpec:
    nodes: int = 64
    kmin_factor: float = 1e-3
    kmax_factor: float = 10.0

    def radii(self, params: TheoryParams) -> np.ndarray:
        return np.geomspace(self.kmin_factor * params.m, self.kmax_factor * params.lambda0,
                            self.nodes)


DEFAULT_TOLERANCES = {
    "schedule_rel": 1e-8,
    "truncation_abs": 1e-10,
    "transform_inverse": 1e-12,
    "chain_rel": 1e-6,
    "oracle_rel": 1e-6,
    "exchange_rel": 1e-8,
    "exponent_window": 0.5,
    "exponent_fit_window": [10.0, 0.2],
    "envelope_pmax": 8.0,
    "lambda0_ratio": [2.0, 8.0],
}


@dataclass
class FlowModel:
    params: TheoryParams
    species: Tuple[str, ...]
    L_max: int
    N_max: int
    vertices: Dict[str, Vertex]
    grid: GridSpec = field(default_factory=GridSpec)
    schedule: Schedule = field(default_factory=Schedule)
    loop_panels: int = 6
    loop_nodes: int = 16
    tolerances: Dict[str, object] = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    _forms: Optional["_QuadraticForms"] = field(default=None, repr=False)

    @property
    def forms(self) -> "_QuadraticForms":
        if self._forms is None:
            self._forms = _QuadraticForms(self)
        return self._forms

    def with_params(self, **kw) -> "FlowModel":
        return build_model(self.config(), params=self.params.replace(**kw),
                           vertices=list(self.vertices.values()) if self._custom else None)

    _custom: bool = False

    def config(self) -> dict:
        return {
            "species": list(self.species),
            "L_max": self.L_max,
            "N_max": self.N_max,
            "params": {k: getattr(self.params, k) for k in ("m", "bigM", "alpha", "g", "lambda0")},
            "grid": {"nodes": self.grid.nodes, "kmin_factor": self.grid.kmin_factor,
                     "kmax_factor": self.grid.kmax_factor},
            "schedule": {"intervals": self.schedule.intervals,
                         "lam_min_factor": self.schedule.lam_min_factor,
                         "max_step": self.schedule.max_step},
            "loop": {"panels": self.loop_panels, "nodes": self.loop_nodes},
            "tolerances": dict(self.tolerances),
        }


def build_model(config: Mapping | None = None, *, params: TheoryParams | None = None,
                vertices: Sequence[Vertex] | None = None) -> FlowModel:
    """Assemble a model from a config mapping (see :meth:`FlowModel.config`)."""
    cfg = dict(config or {})
    species = tuple(cfg.get("species", SPECIES))
    bad = [s for s in species if s not in SPECIES]
    if bad:
        raise FlowError(f"unknown species {bad}")
    if ("cbar" in species) != ("c" in species):
        raise FlowError("ghost species cbar and c must be selected together")
    L_max = int(cfg.get("L_max", 1))
    N_max = int(cfg.get("N_max", 4))
    if not 0 <= L_max <= 2 or not 1 <= N_max <= 6:
        raise FlowError("unsupported truncation: need L_max <= 2 and N_max <= 6")
    if L_max == 2:
        raise FlowError("unsupported truncation: two-loop flows are not implemented")
    if params is None:
        params = TheoryParams(**cfg.get("params", {}))
    custom = vertices is not None
    if vertices is None:
        vertices = [v for v in _y11(params) if set(v.species) <= set(species)]
    g = cfg.get("grid", {})
    s = cfg.get("schedule", {})
    lp = cfg.get("loop", {})
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(cfg.get("tolerances", {}))
    model = FlowModel(params=params, species=species, L_max=L_max, N_max=N_max,
                      vertices={v.name: v for v in vertices},
                      grid=GridSpec(**g), schedule=Schedule(**s),
                      loop_panels=int(lp.get("panels", 6)), loop_nodes=int(lp.get("nodes", 16)),
                      tolerances=tol)
    model._custom = custom
    for v in model.vertices.values():
        if sum(v.content) + v.nu > 4:
            raise FlowError(f"vertex {v.name} violates |n|+nu <= 4")
    return model


# ---------------------------------------------------------------------------
# contractions

def reduce_onto_basis(tensor: np.ndarray, basis: Mapping[str, np.ndarray],
                      name: str = "contraction") -> Dict[str, float]:
    """Coefficients of ``tensor`` in the span of ``basis``; raise if outside."""
    keys = list(basis)
    if not keys:
        if np.any(tensor):
            raise ContractionError(f"{name}: no basis registered")
        return {}
    M = np.stack([np.asarray(basis[k], float).ravel() for k in keys], axis=1)
    t = np.asarray(tensor, float).ravel()
    coef, *_ = np.linalg.lstsq(M, t, rcond=None)
    resid = t - M @ coef
    scale = max(1.0, float(np.abs(t).max(initial=0.0)))
    if np.abs(resid).max(initial=0.0) > 1e-12 * scale:
        raise ContractionError(f"{name}: structure outside the registered basis")
    return {k: float(c) for k, c in zip(keys, coef)}


def _tadpole_weight(vertex: Vertex, loop: str, target: Tuple[int, int]) -> float:
    """Weight w with slot value -w int_k C^{0,L0} from one vertex.

    ``target = (n_h, n_B1)``: the scalar legs of the zero-momentum slot.
    The weight is 1/2 sum_u d^2/dphi_u^2 of the vertex, differentiated
    ``target`` times in the background (exhaustive index summation).
    """
    th, tb = target
    tot = 0.0
    for coef, legs in vertex.terms:
        for i, j in permutations(range(len(legs)), 2):
            ci, cj = legs[i][0], legs[j][0]
            if ci != cj or comp_species(ci) != loop or legs[i][1] >= 0 or legs[j][1] >= 0:
                continue
            rest = [l for k, l in enumerate(legs) if k not in (i, j)]
            if any(d >= 0 for _, d in rest):
                continue
            nh = sum(1 for c, _ in rest if c == COMP_H)
            nb = sum(1 for c, _ in rest if c == comp_B(0))
            if nh + nb != len(rest) or (nh, nb) != (th, tb):
                continue
            tot += coef * math.factorial(nh) * math.factorial(nb)
    return 0.5 * tot


def contraction_tables(model: FlowModel) -> Dict[str, Dict[str, Dict[str, float]]]:
    """Tadpole weights per vertex, loop species and scalar two-point target.

    For loop species A the weight refers to one component of the trace; the
    loop integral then carries 3 C_T + C_L per isospin component.
    """
    out: Dict[str, Dict[str, Dict[str, float]]] = {}
    targets = {"hh": (2, 0), "BB": (0, 2), "h": (1, 0)}
    for name, v in model.vertices.items():
        row: Dict[str, Dict[str, float]] = {}
        for sp in ("A", "h", "B"):
            if sp not in model.species:
                continue
            d = {t: _tadpole_weight(v, sp, tg) for t, tg in targets.items()}
            d = {k: x for k, x in d.items() if x != 0.0}
            if d:
                row[sp] = d
        if row:
            out[name] = row
    return out


# ---------------------------------------------------------------------------
# fluctuation matrices

class _QuadraticForms:
    """Fluctuation matrices in a constant (h, B^1) background.

    Bosonic: ``V2 = sum_q h^ih b^ib t^nu kappa^kp  Mat_q`` for loop momentum
    along the first axis, after the similarity transform that makes the
    longitudinal A-scalar mixing real.  Ghost: ``M = sum_q h^ih b^ib t^nu Mg_q``.
    """

    def __init__(self, model: FlowModel):
        self.model = model
        bos = [i for i in range(16) if comp_species(i) in model.species]
        self.bos = bos
        self.pos = {c: k for k, c in enumerate(bos)}
        self.ghost = "cbar" in model.species
        nb = len(bos)
        mats: Dict[Tuple[int, int, int, int], np.ndarray] = {}
        gmats: Dict[Tuple[int, int, int], np.ndarray] = {}
        pot: Dict[Tuple[int, int, int], float] = {}
        for v in model.vertices.values():
            for coef, legs in v.terms:
                self._potential(pot, v.nu, coef, legs)
                self._bosonic(mats, v.nu, coef, legs, nb)
                if self.ghost:
                    self._ghostic(gmats, v.nu, coef, legs)
        d = np.array([1j if comp_species(c) == "A" else 1.0 for c in bos])
        self.keys = sorted(mats)
        if self.keys:
            stack = np.stack([mats[k] for k in self.keys])
            stack = stack * d[None, :, None] / d[None, None, :]
            if np.abs(stack.imag).max() > 1e-14 * max(1.0, np.abs(stack).max()):
                raise FlowError("fluctuation matrix not real after similarity transform")
            self.mats = stack.real.copy()
        else:
            self.mats = np.zeros((0, nb, nb))
        self.gkeys = sorted(gmats)
        self.gmats = (np.stack([gmats[k] for k in self.gkeys]) if self.gkeys
                      else np.zeros((0, 3, 3)))
        self.potential = pot
        for (ih, ib, _, _) in self.keys:
            if ih + ib not in (1, 2):
                raise FlowError("fluctuation matrix of unexpected background degree")

    @staticmethod
    def _scalar_rest(rest):
        nh = nb = 0
        for c, dv in rest:
            if dv >= 0:
                return None
            if c == COMP_H:
                nh += 1
            elif c == comp_B(0):
                nb += 1
            else:
                return None
        return nh, nb

    def _potential(self, pot, nu, coef, legs):
        r = self._scalar_rest(legs)
        if r is not None:
            key = (r[0], r[1], nu)
            pot[key] = pot.get(key, 0.0) + coef

    def _bosonic(self, mats, nu, coef, legs, nb):
        for i, j in permutations(range(len(legs)), 2):
            ci, di = legs[i]
            cj, dj = legs[j]
            if ci not in self.pos or cj not in self.pos:
                continue
            r = self._scalar_rest([l for k, l in enumerate(legs) if k not in (i, j)])
            if r is None:
                continue
            phase, kp = 1.0 + 0j, 0
            for dv, sgn in ((di, 1), (dj, -1)):
                if dv > 0:
                    phase = 0.0
                elif dv == 0:
                    phase *= 1j * sgn
                    kp += 1
            if phase == 0:
                continue
            key = (r[0], r[1], nu, kp)
            if key not in mats:
                mats[key] = np.zeros((nb, nb), complex)
            mats[key][self.pos[ci], self.pos[cj]] += coef * phase

    def _ghostic(self, gmats, nu, coef, legs):
        ib = [k for k, (c, _) in enumerate(legs) if comp_species(c) == "cbar"]
        ic = [k for k, (c, _) in enumerate(legs) if comp_species(c) == "c"]
        if len(ib) != 1 or len(ic) != 1:
            return
        rest = [l for k, l in enumerate(legs) if k not in (ib[0], ic[0])]
        r = self._scalar_rest(rest)
        if r is None:
            return
        if legs[ib[0]][1] >= 0 or legs[ic[0]][1] >= 0:
            raise FlowError("derivative ghost coupling in a scalar background is not supported")
        sign = 1.0 if ib[0] < ic[0] else -1.0
        key = (r[0], r[1], nu)
        if key not in gmats:
            gmats[key] = np.zeros((3, 3))
        gmats[key][legs[ib[0]][0] - 16, legs[ic[0]][0] - 19] += sign * coef

    # -- propagator diagonals in the fluctuation basis

    def cdiag(self, kappa: np.ndarray) -> np.ndarray:
        p = self.model.params
        ksq = np.asarray(kappa) ** 2
        cols = []
        for c in self.bos:
            sp = comp_species(c)
            comp = {"h": "h", "B": "B"}.get(sp) or ("L" if c % 4 == 0 else "T")
            cols.append(propagator_radial(comp, ksq, p))
        return np.stack(cols, axis=-1) if cols else np.zeros(np.shape(kappa) + (0,))

    def kdiag(self, lam: float, kappa: np.ndarray) -> np.ndarray:
        p = self.model.params
        ksq = np.asarray(kappa) ** 2
        cols = []
        for c in self.bos:
            sp = comp_species(c)
            comp = {"h": "h", "B": "B"}.get(sp) or ("L" if c % 4 == 0 else "T")
            cols.append(flow_kernel_radial(comp, lam, ksq, p))
        return np.stack(cols, axis=-1) if cols else np.zeros(np.shape(kappa) + (0,))

    # -- sampled configurations

    def weights(self, h: np.ndarray, b: np.ndarray, t: np.ndarray, keys) -> np.ndarray:
        cols = [h ** k[0] * b ** k[1] * t ** k[2] for k in keys]
        return np.stack(cols, axis=-1) if cols else np.zeros(h.shape + (0,))

    def v2(self, h, b, t, kappa) -> Tuple[np.ndarray, np.ndarray]:
        """Degree-1 and degree-2 parts, shape (configs, kappa, nb, nb)."""
        out = []
        for deg in (1, 2):
            idx = [q for q, k in enumerate(self.keys) if k[0] + k[1] == deg]
            if not idx:
                out.append(np.zeros((len(h), len(kappa), len(self.bos), len(self.bos))))
                continue
            keys = [self.keys[q] for q in idx]
            w = self.weights(h, b, t, keys)
            kp = np.array([k[3] for k in keys])
            kw = np.asarray(kappa)[:, None] ** kp[None, :]
            out.append(np.einsum("cq,kq,qij->ckij", w, kw, self.mats[idx], optimize=True))
        return out[0], out[1]

    def ghost_matrix(self, h, b, t) -> np.ndarray:
        if not self.gkeys:
            return np.zeros((len(h), 3, 3))
        w = self.weights(h, b, t, self.gkeys)
        return np.einsum("cq,qij->cij", w, self.gmats)


# ---------------------------------------------------------------------------
# background sampling and coefficient extraction

class _Sampler:
    """Configurations (theta_j, t_l) and exact coefficient extraction."""

    def __init__(self, N: int):
        self.N = N
        th = np.pi * np.arange(N + 1) / (N + 1)
        tt = np.linspace(-1.5, 1.5, N + 1)
        T, TH = np.meshgrid(tt, th, indexing="ij")
        self.t = T.ravel()
        self.theta = TH.ravel()
        self.h = np.cos(self.theta)
        self.b = np.sin(self.theta)
        self._tv = np.vander(tt, N + 1, increasing=True)
        self._th = th

    def extract(self, values: np.ndarray, d: int) -> np.ndarray:
        """values (configs, ...) of a degree-d homogeneous part -> coef[ib, nu, ...]."""
        N = self.N
        v = values.reshape((N + 1, N + 1) + values.shape[1:])
        # nu from t
        c_nu = np.linalg.solve(self._tv, v.reshape(N + 1, -1)).reshape(v.shape)
        # (h, b) = (cos, sin) homogeneous degree d
        A = np.stack([np.cos(self._th) ** (d - i) * np.sin(self._th) ** i for i in range(d + 1)],
                     axis=1)
        rest = c_nu.shape[2:]
        flat = np.moveaxis(c_nu, 1, 0).reshape(N + 1, -1)
        coef, *_ = np.linalg.lstsq(A, flat, rcond=None)
        coef = coef.reshape((d + 1, N + 1) + rest)
        return coef


# ---------------------------------------------------------------------------
# slots

@dataclass(frozen=True, order=True)
class SlotId:
    """Zero-momentum Taylor slot with scalar legs, or a tree radial slot.

    ``structure`` is ``"sym"`` for zero-momentum slots (value of the
    all-B^1 component; B legs combine into symmetrized deltas) and
    ``"exc:<u>,<v>"`` for radial slots whose end legs u, v carry k, -k.
    """

    l: int
    n: Tuple[int, int, int, int, int]
    nu: int
    structure: str = "sym"
    w: int = 0

    @property
    def size(self) -> int:
        return sum(self.n)

    @property
    def relevant(self) -> bool:
        return self.size + self.w + self.nu <= 4

    @property
    def predicted_exponent(self) -> int:
        return 4 - self.size - self.w - self.nu

    @property
    def truncated(self) -> bool:
        return self.nu > 2 * self.l + self.size - 2

    def label(self) -> str:
        nm = "".join(s * k for s, k in zip(("A", "h", "B", "C", "c"), self.n))
        return f"l{self.l}:{nm}:nu{self.nu}:{self.structure}"


def _scalar_n(nh: int, nb: int) -> Tuple[int, int, int, int, int]:
    return (0, nh, nb, 0, 0)


@dataclass
class BoundarySpec:
    """Renormalization constants at Lambda = 0 for one-loop relevant slots."""

    constants: Dict[SlotId, float] = field(default_factory=dict)

    def assign(self, slot: SlotId, value: float) -> "BoundarySpec":
        if slot.l < 1:
            raise FlowError("tree slots are fixed by the bare interaction")
        if not slot.relevant:
            raise FlowError(f"slot {slot.label()} is irrelevant and vanishes at Lambda0")
        if slot.size + slot.w + slot.nu < 4 and value != 0:
            raise FlowError(f"slot {slot.label()} is fixed to 0 at Lambda = 0")
        if slot.truncated and value != 0:
            raise FlowError(f"slot {slot.label()} is excluded by the nu truncation")
        self.constants[slot] = float(value)
        return self

    def value(self, slot: SlotId) -> float:
        return self.constants.get(slot, 0.0)


@dataclass
class FlowState:
    model: FlowModel
    lams: np.ndarray                      # snapshot scales, ascending, lams[0] = 0
    taylor: Dict[SlotId, np.ndarray]      # values at the snapshot scales
    radial_k: Optional[np.ndarray] = None
    radial_lams: Optional[np.ndarray] = None
    radial: Dict[SlotId, np.ndarray] = field(default_factory=dict)   # (lam, k)
    errors: Dict[SlotId, float] = field(default_factory=dict)
    symmetry_violation: float = 0.0
    tree_available: bool = True

    def value(self, slot: SlotId, lam: float) -> float:
        i = int(np.argmin(np.abs(self.lams - lam)))
        if not math.isclose(self.lams[i], lam, rel_tol=1e-12, abs_tol=1e-300):
            raise FlowError(f"scale {lam} is not a snapshot node")
        return float(self.taylor[slot][i])

    def at_lambda0(self) -> Dict[SlotId, float]:
        return {s: float(v[-1]) for s, v in self.taylor.items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["Lambda", "slot", "structure", "value"])
        for s in sorted(self.taylor):
            for lam, v in zip(self.lams, self.taylor[s]):
                wr.writerow([repr(float(lam)), s.label(), s.structure, repr(float(v))])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# loop quadrature

def _kappa_max(lam: float, params: TheoryParams) -> float:
    target = EXP_CUT * lam ** 10
    hi = max(lam, params.m)
    while p_poly(hi * hi, params) < target:
        hi *= 2
    return optimize.brentq(lambda k: p_poly(k * k, params) - target, 0.0, hi, xtol=1e-14 * hi)


def _loop_nodes(model: FlowModel, lam: float) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes on [0, kappa_max] with the 1/(8 pi^2) k^3 measure."""
    kmax = _kappa_max(lam, model.params)
    x, w = np.polynomial.legendre.leggauss(model.loop_nodes)
    edges = np.linspace(0.0, 1.0, model.loop_panels + 1) ** 0.75 * kmax
    ks, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        ks.append(0.5 * (b - a) * x + 0.5 * (b + a))
        ws.append(0.5 * (b - a) * w)
    k = np.concatenate(ks)
    return k, np.concatenate(ws) * k ** 3 / (8 * math.pi ** 2)


def _layers(V2a, V2b, cw, N):
    """Dyson layers K_d, d = 1..N, of K = V2 - V2 C K."""
    K = {1: V2a}
    Vc = {1: V2a * cw[..., None, :], 2: V2b * cw[..., None, :]}
    for d in range(2, N + 1):
        acc = V2b.copy() if d == 2 else np.zeros_like(V2a)
        for e in (1, 2):
            if d - e >= 1:
                acc -= Vc[e] @ K[d - e]
        K[d] = acc
    return K


def _loop_rhs_samples(model: FlowModel, sampler: _Sampler, lam: float,
                      split: bool = False):
    """Sampled d/dL L_1 per degree: dict d -> (configs,) [bos, ghost if split]."""
    f = model.forms
    p = model.params
    kap, wq = _loop_nodes(model, lam)
    ksq = kap ** 2
    win = sigma_window(lam, p.lambda0, ksq, p)
    out = {}
    if f.bos:
        V2a, V2b = f.v2(sampler.h, sampler.b, sampler.t, kap)
        cw = f.cdiag(kap) * win[:, None]
        kd = f.kdiag(lam, kap)
        K = _layers(V2a, V2b, cw, model.N_max)
        for d, Kd in K.items():
            tr = np.einsum("ckii,ki->ck", Kd, kd)
            out[d] = [0.5 * tr @ wq, np.zeros(len(sampler.h))]
    else:
        for d in range(1, model.N_max + 1):
            out[d] = [np.zeros(len(sampler.h)), np.zeros(len(sampler.h))]
    if f.ghost and f.gkeys:
        M = f.ghost_matrix(sampler.h, sampler.b, sampler.t)
        s = propagator_radial("ghost", ksq, p) * win
        sd = flow_kernel_radial("ghost", lam, ksq, p)
        Mj = M.copy()
        for d in range(1, model.N_max + 1):
            trM = np.trace(Mj, axis1=1, axis2=2)
            out[d][1] = trM * ((sd * s ** (d - 1)) @ wq)
            Mj = Mj @ M
    if split:
        return out
    return {d: v[0] + v[1] for d, v in out.items()}


def _coefficients(model: FlowModel, sampler: _Sampler, samples: Dict[int, np.ndarray]):
    """coef[(nh, nb, nu)] (n-point normalization) and the largest coefficient
    forbidden by symmetry (odd in B^1, or nu + |n| odd)."""
    res = {}
    odd = 0.0
    for d, vals in samples.items():
        c = sampler.extract(np.asarray(vals), d)
        for ib in range(d + 1):
            for nu in range(model.N_max + 1):
                val = c[ib, nu] * math.factorial(d - ib) * math.factorial(ib)
                if ib % 2 or (d + nu) % 2:
                    odd = max(odd, float(np.max(np.abs(val))))
                else:
                    res[(d - ib, ib, nu)] = val
    return res, odd


def _loop_slots(model: FlowModel) -> List[SlotId]:
    out = []
    for d in range(1, model.N_max + 1):
        for ib in range(0, d + 1, 2):
            for nu in range(d % 2, model.N_max + 1, 2):
                out.append(SlotId(1, _scalar_n(d - ib, ib), nu))
    return out


def _tree_slots(model: FlowModel) -> Dict[SlotId, float]:
    """Zero-momentum tree slots with scalar legs (|n| >= 3)."""
    pot = model.forms.potential
    out = {}
    for d in range(3, model.N_max + 1):
        for ib in range(0, d + 1, 2):
            for nu in range(d % 2, model.N_max + 1, 2):
                c = pot.get((d - ib, ib, nu), 0.0)
                out[SlotId(0, _scalar_n(d - ib, ib), nu)] = (
                    c * math.factorial(d - ib) * math.factorial(ib))
    return out


# ---------------------------------------------------------------------------
# right-hand side

def rhs(state: Optional[FlowState], slot: SlotId, lam: float,
        model: Optional[FlowModel] = None, k: Optional[np.ndarray] = None):
    """Flow derivative of one slot at scale ``lam``.

    Tree zero-momentum slots: the bilinear term with the kernel at p' = 0,
    which vanishes identically.  One-loop slots: the linear term.  Tree
    radial slots: the bilinear term on the exceptional configuration at the
    radii ``k``.
    """
    model = model or (state.model if state is not None else None)
    if model is None:
        raise MissingDataError("no model available")
    if slot.l >= 1 and (state is None or not state.tree_available):
        raise MissingDataError(f"slot {slot.label()} needs tree data")
    if slot.l == 0 and slot.structure == "sym":
        return _tree_zero_rhs(model, slot, lam)
    if slot.l == 0:
        if k is None:
            raise FlowError("radial rhs needs radii")
        return _radial_rhs(model, slot, lam, np.asarray(k, float))
    sampler = _Sampler(model.N_max)
    co, _ = _coefficients(model, sampler, _loop_rhs_samples(model, sampler, lam))
    key = (slot.n[1], slot.n[2], slot.nu)
    return float(co.get(key, 0.0))


def _tree_zero_rhs(model: FlowModel, slot: SlotId, lam: float) -> float:
    """Bilinear term for a zero-momentum tree slot.

    Two lower tree functions at zero momentum joined by the kernel at
    p' = 0: ``-K Cdot(0) K`` on the layers of the zero-momentum resolvent,
    read off with two legs of the slot as end legs.
    """
    nh, nb = slot.n[1], slot.n[2]
    if slot.size < 3:
        return 0.0
    f = model.forms
    sampler = _Sampler(model.N_max)
    k0 = np.zeros(1)
    V2a, V2b = f.v2(sampler.h, sampler.b, sampler.t, k0)
    win = sigma_window(lam, model.params.lambda0, k0, model.params)
    K = _layers(V2a, V2b, f.cdiag(k0) * win[:, None], max(slot.size - 2, 1))
    kd = f.kdiag(lam, k0)
    d = slot.size - 2
    acc = np.zeros_like(V2a)
    for d1 in range(1, d):
        acc -= (K[d1] * kd[:, None, :]) @ K[d - d1]
    u = COMP_H if nh >= 2 else comp_B(0)
    if u not in f.pos:
        return 0.0
    ib = nb - (0 if nh >= 2 else 2)
    c = sampler.extract(acc[..., f.pos[u], f.pos[u]], d)
    return float(c[ib, slot.nu, 0] * math.factorial(d - ib) * math.factorial(ib))


# ---------------------------------------------------------------------------
# integration

def _cum_simpson(f: np.ndarray, h: float) -> np.ndarray:
    """Cumulative Simpson integral at even nodes (axis 0)."""
    pieces = h / 3.0 * (f[0:-2:2] + 4 * f[1:-1:2] + f[2::2])
    out = np.zeros((len(pieces) + 1,) + f.shape[1:])
    out[1:] = np.cumsum(pieces, axis=0)
    return out


def _integrate_samples(F: np.ndarray, h: float, upward: bool):
    """Richardson-corrected cumulative integrals at every 8th node.

    Returns the extrapolated values from steps (h, 2h) and the predicted
    change under one further halving of the step: the extrapolated rule is
    sixth order, so that change is (R(h) - R(2h)) / 63.
    """
    if not upward:
        F = F[::-1]

    def rich(G, step):
        fine = _cum_simpson(G, step)[::2]
        coarse = _cum_simpson(G[::2], 2 * step)
        return fine + (fine - coarse) / 15.0

    val = rich(F, h)[::2]
    err = (val - rich(F[::2], 2 * h)) / 63.0
    if not upward:
        val, err = -val[::-1], -err[::-1]
    return val, err


def integrate_flow(model: FlowModel, boundary: Optional[BoundarySpec] = None,
                   schedule: Optional[Schedule] = None, *, check: bool = True) -> FlowState:
    """Flow all zero-momentum slots and return the state on the snapshot scales.

    Snapshots are every eighth schedule node plus the endpoint Lambda = 0.
    """
    boundary = boundary or BoundarySpec()
    schedule = schedule or model.schedule
    p = model.params
    lams = schedule.nodes(p)
    h = math.log(lams[1] / lams[0])
    sampler = _Sampler(model.N_max)
    slots = _loop_slots(model) if model.L_max >= 1 else []
    F = {s: np.zeros(len(lams)) for s in slots}
    odd = 0.0
    for i, lam in enumerate(lams):
        co, o = _coefficients(model, sampler, _loop_rhs_samples(model, sampler, float(lam)))
        odd = max(odd, o * lam)
        for s in slots:
            F[s][i] = lam * co.get((s.n[1], s.n[2], s.nu), 0.0)
    snap = np.concatenate([[0.0], lams[::8]])
    taylor: Dict[SlotId, np.ndarray] = {}
    for s, v in _tree_slots(model).items():
        taylor[s] = np.full(len(snap), v)
    errors = {}
    for s in slots:
        up = s.relevant
        val, err = _integrate_samples(F[s], h, up)
        if up:
            r = boundary.value(s)
            val = r + val
            out = np.concatenate([[r], val])
        else:
            out = np.concatenate([[val[0]], val])
        taylor[s] = out
        errors[s] = float(np.max(np.abs(err)))
    state = FlowState(model=model, lams=snap, taylor=taylor, errors=errors, symmetry_violation=odd)
    if check:
        tol = float(model.tolerances["schedule_rel"])
        for s, e in errors.items():
            if s.truncated:
                continue                      # exact zeros, scanned by truncation_check
            scale = max(float(np.max(np.abs(taylor[s]))), _scale(model, s))
            if e > tol * scale:
                raise ScheduleError(
                    f"step halving changes {s.label()} by {e:.3e} (scale {scale:.3e}); "
                    f"increase schedule intervals beyond {schedule.count(p)}")
    return state


def _scale(model: FlowModel, s: SlotId) -> float:
    """Natural size used for absolute floors: g^2 (Lambda0 + m)^(4-|n|-nu) / (16 pi^2)."""
    p = model.params
    return 1e-3 * p.g ** 2 * (p.lambda0 + p.m) ** s.predicted_exponent / (16 * math.pi ** 2)


# ---------------------------------------------------------------------------
# tree radial flow

def _radial_pairs(model: FlowModel):
    f = model.forms
    sc = [c for c in f.bos if comp_species(c) in ("h", "B")]
    return [(u, v) for u in sc for v in sc]


def _radial_matrix(model: FlowModel, kap: np.ndarray, sampler: _Sampler):
    """-V2a diag(C) V2a per config and radius (full bosonic block)."""
    f = model.forms
    V2a, V2b = f.v2(sampler.h, sampler.b, sampler.t, kap)
    c = f.cdiag(kap)
    return V2a, V2b, -(V2a * c[None, :, None, :]) @ V2a


def _radial_rhs(model: FlowModel, slot: SlotId, lam: float, kap: np.ndarray):
    sampler = _Sampler(model.N_max)
    _, _, M = _radial_matrix(model, kap, sampler)
    omega = -_dsigma_dlam(lam, kap ** 2, model.params)
    return _radial_pick(model, sampler, M * omega[None, :, None, None], slot)


def _dsigma_dlam(lam: float, ksq, params: TheoryParams):
    return 10.0 * p_poly(ksq, params) / lam ** 11 * sigma(lam, ksq, params)


def _radial_pick(model, sampler, mats, slot: SlotId):
    f = model.forms
    u, v = slot.structure[4:].split(",")
    iu = [c for c in f.bos if comp_label(c) == u][0]
    iv = [c for c in f.bos if comp_label(c) == v][0]
    vals = mats[..., f.pos[iu], f.pos[iv]]
    d = slot.size - 2
    c = sampler.extract(vals, d)
    nb = slot.n[2] - sum(1 for x in (u, v) if x.startswith("B"))
    nh = d - nb
    return c[nb, slot.nu] * math.factorial(nh) * math.factorial(nb)


def _radial_slot(u: int, v: int, nh: int, nb: int, nu: int) -> SlotId:
    n = [0, nh, nb, 0, 0]
    for c in (u, v):
        n[1 if c == COMP_H else 2] += 1
    return SlotId(0, tuple(n), nu, f"exc:{comp_label(u)},{comp_label(v)}")


def flow_tree_radial(model: FlowModel, schedule: Optional[Schedule] = None,
                     nodes: Optional[np.ndarray] = None):
    """Flow the tree 4-point exceptional profiles downwards from Lambda0.

    At fixed radius the bilinear term is ``-V2a Cdot V2a`` with the kernel
    factorizing into ``C(k)`` times ``-d sigma_L/dL``; the Lambda-integral is
    done by composite Simpson in ln(Lambda) with Richardson step halving.
    Returns ``(lams, radii, {slot: array(lam, radius)}, max_error)``.
    """
    schedule = schedule or Schedule(intervals=2048, lam_min_factor=model.schedule.lam_min_factor)
    p = model.params
    kap = model.grid.radii(p) if nodes is None else np.asarray(nodes, float)
    lams = schedule.nodes(p)
    h = math.log(lams[1] / lams[0])
    sampler = _Sampler(model.N_max)
    _, _, M = _radial_matrix(model, kap, sampler)
    # scalar kernel integrand in ln(Lambda): Lambda * (-d sigma/dLambda)
    Fk = np.stack([-lam * _dsigma_dlam(lam, kap ** 2, p) for lam in lams])
    val, err = _integrate_samples(Fk, h, upward=False)      # (snap, k)
    snaps = lams[::8]
    f = model.forms
    out = {}
    for u, v in _radial_pairs(model):
        vals = M[..., f.pos[u], f.pos[v]]
        c = sampler.extract(vals, 2)            # (ib, nu, k)
        for ib in range(3):
            for nu in range(model.N_max + 1):
                slot = _radial_slot(u, v, 2 - ib, ib, nu)
                if not _radial_allowed(u, v, ib, slot):
                    continue
                coef = c[ib, nu] * math.factorial(2 - ib) * math.factorial(ib)
                # K2(L) = V2b + M * (w(L) - w(L0)), w(L0) = 0
                base = _radial_contact(model, sampler, u, v, ib, nu, kap)
                out[slot] = base[None, :] + coef[None, :] * val
    return snaps, kap, out, float(np.max(np.abs(err)))


def _radial_allowed(u: int, v: int, ib: int, slot: SlotId) -> bool:
    """Selection rules in the (h, B^1) background: isospin and mass-order parity."""
    ends = [comp_label(u), comp_label(v)]
    if any(ends.count(x) % 2 for x in ("B2", "B3")):
        return False
    if (ends.count("B1") + ib) % 2:
        return False
    return (slot.size + slot.nu) % 2 == 0


def _radial_contact(model, sampler, u, v, ib, nu, kap):
    f = model.forms
    _, V2b = f.v2(sampler.h, sampler.b, sampler.t, kap)
    c = sampler.extract(V2b[..., f.pos[u], f.pos[v]], 2)
    return c[ib, nu] * math.factorial(2 - ib) * math.factorial(ib)


def tree_exchange_closed_form(model: FlowModel, lam: float, kap: np.ndarray) -> np.ndarray:
    """h^4 exceptional profile at nu = 2: -2 F_hhh^2 C^{L,L0}_h(k).

    ``F_hhh`` is the three-point value 3! * (g mu^2 m / 4).
    """
    p = model.params
    F = 6.0 * p.g * p.mu ** 2 * p.m / 4.0
    ksq = np.asarray(kap) ** 2
    return -2.0 * F * F * propagator_radial("h", ksq, p) * sigma_window(lam, p.lambda0, ksq, p)


# ---------------------------------------------------------------------------
# oracles

def one_loop_oracle(model: FlowModel, slot: SlotId, lam: Optional[float] = None):
    """Tadpole value  -sum_s w_s int_k C_s(k) sigma_lam(k^2)  and error estimate.

    Equals the flowed relevant slot with vanishing constant; at lam = Lambda0
    it is minus the integrated tadpole against C^{0,Lambda0}.  Only slots fed
    purely by tadpoles qualify.
    """
    p = model.params
    lam = p.lambda0 if lam is None else lam
    if slot.l != 1 or slot.size != 2 or slot.nu != 0 or slot.structure != "sym":
        raise FlowError(f"{slot.label()} is not a tadpole-type slot")
    f = model.forms
    cubic0 = [k for k in f.keys if k[0] + k[1] == 1 and k[2] == 0]
    cubic0 = [k for k in cubic0 if np.any(f.mats[f.keys.index(k)])]
    if cubic0:
        raise FlowError(f"{slot.label()} receives non-tadpole contributions in this model")
    target = (slot.n[1], slot.n[2])
    tot, err = 0.0, 0.0
    for sp in ("A", "h", "B"):
        if sp not in model.species:
            continue
        w = sum(_tadpole_weight(v, sp, target) for v in model.vertices.values())
        if w == 0:
            continue
        comps = {"A": [("T", 3), ("L", 1)], "h": [("h", 1)], "B": [("B", 1)]}[sp]
        # the A weight is per component; isospin multiplicity already in the weight
        for comp, mult in comps:
            val, e = integrate.quad(
                lambda k: k ** 3 / (8 * math.pi ** 2) * propagator_radial(comp, k * k, p)
                * sigma(lam, k * k, p), 0.0, _kappa_max(lam, p), epsabs=0, epsrel=1e-13,
                limit=400)
            scale = mult if sp != "A" else mult / 4.0
            tot -= w * scale * val
            err += abs(w * scale) * e
    return tot, err


def one_loop_functional(model: FlowModel, lam: float) -> Dict[SlotId, float]:
    """One-loop slots from 1/2 STr log(1 + C^{L,L0} V2) by direct quadrature.

    Independent of the flow: log series instead of the resolvent, adaptive
    quadrature in k instead of Gauss-Legendre, no Lambda integration.
    Relevant slots get the constant subtraction at Lambda = 0 (zero constants).
    """
    p = model.params
    sampler = _Sampler(model.N_max)
    N = model.N_max
    f = model.forms

    def logtr(lamx):
        kmax = _kappa_max(p.lambda0, p)

        def integrand(kk):
            kap = np.array([kk])
            win = sigma_window(lamx, p.lambda0, kap ** 2, p)
            out = np.zeros((N, len(sampler.h)))
            if f.bos:
                V2a, V2b = f.v2(sampler.h, sampler.b, sampler.t, kap)
                cw = (f.cdiag(kap) * win[:, None])[None, :, :, None]
                X = {1: cw * V2a, 2: cw * V2b}        # C V2 by background degree
                # series of (X1 s + X2 s^2)^j, truncated at s^N
                cur = {1: X[1], 2: X[2]}
                for j in range(1, N + 1):
                    for d, m in cur.items():
                        if d <= N:
                            out[d - 1] += 0.5 * (-1) ** (j + 1) / j * np.trace(
                                m, axis1=-2, axis2=-1)[:, 0]
                    nxt = {}
                    for d, m in cur.items():
                        for e in (1, 2):
                            if d + e <= N:
                                nxt[d + e] = nxt.get(d + e, 0) + m @ X[e]
                    cur = nxt
            if f.ghost and f.gkeys:
                M = f.ghost_matrix(sampler.h, sampler.b, sampler.t)
                s = propagator_radial("ghost", kap ** 2, p)[0] * win[0]
                Mj = M.copy()
                for d in range(1, N + 1):
                    out[d - 1] += s ** d / d * np.trace(Mj, axis1=1, axis2=2)
                    Mj = Mj @ M
            return out.ravel() * kk ** 3 / (8 * math.pi ** 2)

        pts = sorted({p.m, min(lamx, kmax) if lamx > 0 else p.m, p.lambda0})
        pts = [x for x in pts if 0 < x < kmax]
        res, _ = integrate.quad_vec(integrand, 0.0, kmax, epsabs=0, epsrel=1e-12,
                                    points=pts, limit=2000)
        return res.reshape(N, -1)

    now = logtr(lam)
    zero = logtr(0.0)
    samples_now = {d + 1: now[d] for d in range(N)}
    samples_zero = {d + 1: zero[d] for d in range(N)}
    co_now, _ = _coefficients(model, sampler, samples_now)
    co_zero, _ = _coefficients(model, sampler, samples_zero)
    out = {}
    for s in _loop_slots(model):
        key = (s.n[1], s.n[2], s.nu)
        v = co_now.get(key, 0.0)
        if s.relevant:
            v = v - co_zero.get(key, 0.0)
        out[s] = float(v)
    return out


def ghost_sign_ratio(params: Optional[TheoryParams] = None, lam: float = 2.0) -> float:
    """Ghost loop over boson loop with equal kernel and matched vertices.

    Vertices: ``lam_g cbar^a h c^a`` and ``lam_g/2 h B^a B^a`` (both nu = 1);
    the hh slot at nu = 2 compares the two loops.  Expected value -2.
    """
    params = params or TheoryParams(lambda0=50.0)
    lg = 0.7
    gh = Vertex("cbar c h", _n("cbar c h"), "δ^{ab}", "F_ccbarh1", 1,
                tuple((lg, ((comp_cbar(a), -1), (COMP_H, -1), (comp_c(a), -1))) for a in range(3)))
    bo = Vertex("hBB", _n("hBB"), "δ^{ab}", "F_BBh1", 1,
                tuple((lg / 2, ((COMP_H, -1), (comp_B(a), -1), (comp_B(a), -1))) for a in range(3)))
    cfg = {"species": ["h", "cbar", "c"], "L_max": 1, "N_max": 2}
    mg = build_model(cfg, params=params, vertices=[gh])
    mb = build_model({"species": ["h", "B"], "L_max": 1, "N_max": 2}, params=params,
                     vertices=[bo])
    slot = SlotId(1, _scalar_n(2, 0), 2)
    st = FlowState(model=mg, lams=np.zeros(1), taylor={})
    a = rhs(st, slot, lam, model=mg)
    b = rhs(st, slot, lam, model=mb)
    return a / b


# ---------------------------------------------------------------------------
# checks

@dataclass
class Report:
    name: str
    ok: bool
    items: List[dict] = field(default_factory=list)
    summary: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"check": self.name, "ok": self.ok, "summary": self.summary,
                "items": self.items}


def transform_check(state: FlowState, samples: int = 64, seed: int = 0) -> Report:
    """Legendre-transform identities on sampled momenta and at Lambda0.

    (a) C^{L,L0}(p) Gamma_{0,2}(p,-p) = 1 per species, Gamma_{0,2} the
        inverted regularized propagator;
    (b) vertex and CAS slots coincide at Lambda0 (all propagators vanish);
    (c) one loop: the flowed CAS equals the 1PI one-loop functional plus
        the chain term Gamma C Gamma, whose propagator sits at zero
        momentum for zero-momentum slots; tree level: the exceptional
        4-point CAS equals the contact vertex plus the exchange chain.
    """
    model = state.model
    p = model.params
    tol = model.tolerances
    rng = np.random.default_rng(seed)
    items = []
    worst = 0.0
    for sp in ("AA", "hh", "BB", "ghost"):
        lam = float(np.exp(rng.uniform(np.log(0.2 * p.m), np.log(0.5 * p.lambda0))))
        kn = rng.uniform(0.3, 1.5, samples) * lam
        dirs = rng.normal(size=(samples, 4))
        k = dirs / np.linalg.norm(dirs, axis=1)[:, None] * kn[:, None]
        from .regulator import regularized_propagator
        C = regularized_propagator(sp, lam, p.lambda0, k, p)
        if sp == "AA":
            G = np.linalg.inv(C)
            dev = float(np.max(np.abs(C @ G - np.eye(4))))
        else:
            G = 1.0 / C
            dev = float(np.max(np.abs(C * G - 1.0)))
        worst = max(worst, dev)
        items.append({"identity": "inverse", "species": sp, "max_dev": dev})
    ok_a = worst <= float(tol["transform_inverse"])
    # (b) at Lambda0 the chain terms carry C^{L0,L0} = 0 exactly
    ok_b = True
    for s, v in state.taylor.items():
        g = _vertex_from_cas(model, s, float(v[-1]), p.lambda0)
        ok_b &= bool(g == v[-1])
    items.append({"identity": "bare", "slots": len(state.taylor), "identical": bool(ok_b)})
    # (c) one loop, Lambda strictly inside
    lam_c = float(state.lams[len(state.lams) // 2])
    gam = one_loop_functional(model, lam_c) if model.L_max >= 1 else {}
    worst_c = 0.0
    for s, g in gam.items():
        if s.size != 4:
            continue
        cas = state.value(s, lam_c)
        chain = _zero_momentum_chain(model, lam_c)
        scale = max(abs(g), _scale(model, s))
        worst_c = max(worst_c, abs(cas - (g + chain)) / scale)
    items.append({"identity": "chain_one_loop", "Lambda": lam_c, "max_rel": worst_c})
    # tree exceptional chain
    kap = np.array([0.7 * p.m])
    lam_t = 0.5 * p.m
    cas = _tree_exceptional_h4(model, lam_t, kap)
    vert = _contact_h4(model)
    chain = tree_exchange_closed_form(model, lam_t, kap)
    dev_t = float(np.max(np.abs(cas - (vert + chain)) / np.maximum(np.abs(cas), 1e-300)))
    items.append({"identity": "chain_tree", "Lambda": lam_t, "max_rel": dev_t})
    ok_c = worst_c <= float(tol["chain_rel"]) and dev_t <= float(tol["chain_rel"])
    return Report("transform", bool(ok_a and ok_b and ok_c), items,
                  {"inverse": ok_a, "bare": bool(ok_b), "chain": ok_c})


def _vertex_from_cas(model: FlowModel, s: SlotId, value: float, lam: float) -> float:
    """Proper vertex from CAS: subtract chains joined by C^{L,L0}(0)."""
    return value - _zero_momentum_chain(model, lam)


def _zero_momentum_chain(model: FlowModel, lam: float) -> float:
    """Leading h^4 chain: three channels of two hhh vertices joined at p = 0.

    Every internal line between zero-momentum legs carries p = 0, where
    C^{L,L0}(0) = C(0) (sigma_L0(0) - sigma_L(0)) vanishes for L > 0.
    """
    p = model.params
    w = float(sigma_window(lam, p.lambda0, 0.0, p)) if lam > 0 else 1.0
    f3 = 6.0 * model.forms.potential.get((3, 0, 1), 0.0)
    return -3.0 * f3 * f3 * float(propagator_radial("h", 0.0, p)) * w


def _tree_exceptional_h4(model, lam, kap):
    """h^4 CAS at (k,-k,0,0), nu-summed, from the Dyson layers."""
    f = model.forms
    sampler = _Sampler(model.N_max)
    V2a, V2b = f.v2(sampler.h, sampler.b, sampler.t, kap)
    cw = f.cdiag(kap) * sigma_window(lam, model.params.lambda0, kap ** 2, model.params)[:, None]
    K = _layers(V2a, V2b, cw, 2)
    i = f.pos[COMP_H]
    c = sampler.extract(K[2][..., i, i], 2)
    return 2.0 * c[0].sum(axis=0)


def _contact_h4(model):
    return 24.0 * model.forms.potential.get((4, 0, 0), 0.0)


def truncation_check(state: FlowState, radial: Optional[Tuple] = None) -> Report:
    """Every slot with nu > 2l + |n| - 2 must vanish at every scale."""
    model = state.model
    tol = float(model.tolerances["truncation_abs"])
    items = []
    worst = 0.0
    for s, v in state.taylor.items():
        if s.truncated:
            m = float(np.max(np.abs(v)))
            worst = max(worst, m)
            items.append({"slot": s.label(), "max_abs": m, "ok": m <= tol})
    if radial is not None:
        for s, v in radial[2].items():
            if s.truncated:
                m = float(np.max(np.abs(v)))
                worst = max(worst, m)
                items.append({"slot": s.label(), "max_abs": m, "ok": m <= tol})
    return Report("truncation", worst <= tol, items,
                  {"checked": len(items), "max_abs": worst, "tolerance": tol})


def _envelope_fit(x: np.ndarray, y: np.ndarray, pmax: float):
    """Smallest line c0 + p x (0 <= p <= pmax) above the points (x, y).

    Minimizes the summed gap by linear programming.
    """
    A = np.stack([np.ones_like(x), x], axis=1)
    res = optimize.linprog(A.sum(axis=0), A_ub=-A, b_ub=-y,
                           bounds=[(None, None), (0, pmax)], method="highs")
    if not res.success:
        raise FlowError(f"envelope fit failed: {res.message}")
    return res.x


def bound_check(state: FlowState) -> Report:
    """Fit-and-test envelopes C (L+m)^(4-|n|-nu) (1+log((L+m)/m))^p.

    (C, p) are fitted on the even snapshot scales (L > 0): the envelope must
    dominate the cubic-spline interpolant of the training samples on a
    dense grid.  The odd snapshot scales are held out and must not exceed
    the envelope.  Irrelevant one-loop slots additionally get a slope fit of
    log|value| against log L on the window given by ``exponent_fit_window``
    (multiples of m and of L0), compared with 4-|n|-nu.
    """
    from scipy.interpolate import CubicSpline

    model = state.model
    p = model.params
    tol = model.tolerances
    pmax = float(tol.get("envelope_pmax", 8.0))
    lo_f, hi_f = tol.get("exponent_fit_window", [10.0, 0.2])
    lams = state.lams[1:]
    if len(lams) < 8:
        raise FlowError("bound_check needs at least 8 snapshot scales")
    x = np.log1p(np.log1p(lams / p.m))
    tr, te = slice(0, None, 2), slice(1, None, 2)
    items = []
    ok = True
    for s in sorted(state.taylor):
        if s.truncated:
            continue
        v = np.abs(state.taylor[s][1:])
        if v.max() == 0:
            items.append({"slot": s.label(), "ok": True, "identically_zero": True})
            continue
        e = s.predicted_exponent
        floor = 1e-300
        logg = np.log(np.maximum(v, floor)) - e * np.log(lams + p.m)
        pos = v[tr] > 0
        xs, ys = x[tr][pos], logg[tr][pos]
        dense_x = np.linspace(xs[0], xs[-1], 16 * len(xs))
        dense_y = CubicSpline(xs, ys)(dense_x)
        c0, pw = _envelope_fit(np.concatenate([xs, dense_x]),
                               np.concatenate([ys, dense_y]), pmax)
        excess = float(np.max(logg[te] - (c0 + pw * x[te])))
        row = {"slot": s.label(), "exponent": e, "C": float(np.exp(c0)), "log_power": float(pw),
               "max_log_excess": excess, "ok": bool(excess <= 0.0)}
        if not s.relevant and s.l >= 1:
            sel = (lams >= lo_f * p.m) & (lams <= hi_f * p.lambda0)
            if sel.sum() < 3:
                raise FlowError("exponent fit window holds fewer than 3 snapshots")
            slope = float(np.polyfit(np.log(lams[sel]), np.log(v[sel]), 1)[0])
            row["fitted_exponent"] = slope
            row["exponent_ok"] = bool(abs(slope - e) <= float(tol["exponent_window"]))
            row["ok"] = row["ok"] and row["exponent_ok"]
        ok &= row["ok"]
        items.append(row)
    return Report("bounds", bool(ok), items, {"slots": len(items)})


def growth_exponent(state: FlowState, slot: SlotId, lo: float = 10.0) -> float:
    """Slope of log|value| against log(Lambda) on [lo*m, Lambda0]."""
    p = state.model.params
    lams = state.lams[1:]
    v = np.abs(state.taylor[slot][1:])
    sel = lams >= lo * p.m
    return float(np.polyfit(np.log(lams[sel]), np.log(v[sel]), 1)[0])


def lambda0_convergence(model: FlowModel, boundary: Optional[BoundarySpec],
                        lambda0s: Sequence[float], slot: Optional[SlotId] = None) -> Report:
    """Differences of a fixed irrelevant observable at Lambda = 0 under L0 doubling."""
    if len(lambda0s) < 2:
        raise FlowError("lambda0_convergence needs at least two Lambda0 values")
    slot = slot or SlotId(1, _scalar_n(4, 0), 2)
    vals = []
    rel = {}
    for L0 in lambda0s:
        m2 = build_model(model.config(), params=model.params.replace(lambda0=float(L0)),
                         vertices=list(model.vertices.values()) if model._custom else None)
        st = integrate_flow(m2, boundary)
        vals.append(float(st.taylor[slot][0]))
        rel[L0] = {s.label(): float(v[0]) for s, v in st.taylor.items()
                   if s.relevant and s.l >= 1}
    diffs = np.diff(vals)
    ratios = [float(diffs[i] / diffs[i + 1]) for i in range(len(diffs) - 1)]
    lo, hi = model.tolerances["lambda0_ratio"]
    rel_same = all(rel[lambda0s[0]] == rel[L] for L in lambda0s)
    ok = bool(ratios) and all(lo <= r <= hi for r in ratios) and rel_same
    return Report("lambda0", ok, [{"Lambda0": float(L), "value": v} for L, v in zip(lambda0s, vals)],
                  {"slot": slot.label(), "ratios": ratios, "relevant_identical": rel_same})

import csv
import io
import math

import numpy as np
import pytest
import sympy as sp
from scipy import integrate

from brsflow import flow as fl
from brsflow.couplings import lookup
from brsflow.regulator import TheoryParams, flow_kernel_radial

HH = fl.SlotId(1, (0, 2, 0, 0, 0), 0)
BB = fl.SlotId(1, (0, 0, 2, 0, 0), 0)


# ---------------------------------------------------------------------------
# model assembly

def test_full_vertex_dictionary(full_model):
    assert len(full_model.vertices) == 15
    for v in full_model.vertices.values():
        assert sum(v.content) + v.nu <= 4
        assert v.terms


def test_scalar_submodel_vertices(scalar_model):
    assert set(scalar_model.vertices) == {"hBB", "hhh", "hhhh", "hhBB", "BBBB"}


def test_aaa_vertex_tag(full_model):
    v = full_model.vertices["AAA"]
    assert v.tensor == "ε^{abc}δ_{μν}i(p−q)_λ"
    assert v.coupling == "F_AAA"
    assert lookup("F_AAA").tree.replace(" ", "") in ("-g/2", "-1/2*g", "-(1/2)*g")


@pytest.mark.parametrize("config, match", [
    ({"L_max": 2}, "two-loop"),
    ({"L_max": 3}, "unsupported"),
    ({"N_max": 7}, "unsupported"),
    ({"species": ["h", "X"]}, "unknown species"),
    ({"species": ["h", "c"]}, "together"),
])
def test_build_model_rejects(config, match):
    with pytest.raises(fl.FlowError, match=match):
        fl.build_model(config)


def test_model_config_round_trip(full_model):
    again = fl.build_model(full_model.config())
    assert again.config() == full_model.config()


# ---------------------------------------------------------------------------
# contractions

def test_reduce_onto_basis_identities():
    delta = np.eye(4)
    assert fl.reduce_onto_basis(np.array([np.trace(delta)]), {"1": np.ones(1)}) == {"1": 4.0}
    ee = np.einsum("abc,abd->cd", fl.EPS, fl.EPS)
    assert fl.reduce_onto_basis(ee, {"δ": np.eye(3)}) == pytest.approx({"δ": 2.0})


def test_reduce_onto_basis_rejects_foreign_structure():
    with pytest.raises(fl.ContractionError, match="outside"):
        fl.reduce_onto_basis(np.diag([1.0, 2.0, 3.0]), {"δ": np.eye(3)}, name="probe")
    with pytest.raises(fl.ContractionError):
        fl.reduce_onto_basis(np.ones(2), {})


def _sympy_tadpole(poly, loop, target, fields):
    """1/2 sum over loop components of the second derivative, then the target
    background derivatives, at zero fields."""
    expr = sum(sp.diff(poly, u, 2) for u in loop) / 2
    for f, k in target:
        expr = sp.diff(expr, f, k)
    return float(expr.subs({x: 0 for x in fields}))


def test_tadpole_weights_against_sympy(scalar_model):
    p = scalar_model.params
    h = sp.Symbol("h")
    B = sp.symbols("B1:4")
    g, mu2 = p.g, p.mu ** 2
    BB2 = sum(b * b for b in B)
    polys = {
        "hhhh": g * g * mu2 / 32 * h ** 4,
        "hhBB": g * g * mu2 / 16 * h ** 2 * BB2,
        "BBBB": g * g * mu2 / 32 * BB2 ** 2,
    }
    fields = (h,) + B
    tables = fl.contraction_tables(scalar_model)
    for name, poly in polys.items():
        for loop_name, loop in (("h", (h,)), ("B", B)):
            for tname, target in (("hh", ((h, 2),)), ("BB", ((B[0], 2),))):
                want = _sympy_tadpole(poly, loop, target, fields)
                got = tables.get(name, {}).get(loop_name, {}).get(tname, 0.0)
                assert got == pytest.approx(want, abs=1e-14), (name, loop_name, tname)
    assert tables["hhhh"]["h"]["hh"] == pytest.approx(12 * g * g * mu2 / 32)


# ---------------------------------------------------------------------------
# right-hand side

def _kernel_integral(comp, lam, p):
    f = lambda k: k ** 3 / (8 * math.pi ** 2) * flow_kernel_radial(comp, lam, k * k, p)
    val, _ = integrate.quad(f, 0, 6 * lam + 4 * p.m, epsabs=0, epsrel=1e-13, limit=500)
    return val


@pytest.mark.parametrize("lam", [0.3, 2.0, 17.0])
def test_rhs_hh_tadpole(scalar_model, scalar_state, lam):
    p = scalar_model.params
    tables = fl.contraction_tables(scalar_model)
    w_h = sum(t.get("h", {}).get("hh", 0.0) for t in tables.values())
    w_b = sum(t.get("B", {}).get("hh", 0.0) for t in tables.values())
    want = w_h * _kernel_integral("h", lam, p) + w_b * _kernel_integral("B", lam, p)
    got = fl.rhs(scalar_state, HH, lam)
    assert got == pytest.approx(want, rel=1e-8)


def test_rhs_needs_tree_data(scalar_model):
    st = fl.FlowState(model=scalar_model, lams=np.zeros(1), taylor={}, tree_available=False)
    with pytest.raises(fl.MissingDataError):
        fl.rhs(st, HH, 1.0)
    with pytest.raises(fl.MissingDataError):
        fl.rhs(None, HH, 1.0)


def test_rhs_tree_three_point_vanishes(full_model, full_state):
    for s in full_state.taylor:
        if s.l == 0 and s.size == 3:
            assert fl.rhs(full_state, s, 1.7) == 0.0


def test_rhs_truncated_slots_vanish(scalar_state):
    for s in scalar_state.taylor:
        if s.l == 1 and s.truncated:
            assert abs(fl.rhs(scalar_state, s, 1.3)) < 1e-12


def test_ghost_loop_sign():
    assert fl.ghost_sign_ratio() == pytest.approx(-2.0, rel=1e-10)


# ---------------------------------------------------------------------------
# boundary conditions and integration

def test_boundary_spec_rules():
    b = fl.BoundarySpec()
    b.assign(fl.SlotId(1, (0, 4, 0, 0, 0), 0), 0.25)
    with pytest.raises(fl.FlowError, match="irrelevant"):
        b.assign(fl.SlotId(1, (0, 4, 0, 0, 0), 2), 1.0)
    with pytest.raises(fl.FlowError, match="tree"):
        b.assign(fl.SlotId(0, (0, 4, 0, 0, 0), 0), 1.0)
    with pytest.raises(fl.FlowError, match="fixed to 0"):
        b.assign(HH, 1.0)


def test_tree_slots_constant(full_state):
    tree = {s: v for s, v in full_state.taylor.items() if s.l == 0}
    assert tree
    for s, v in tree.items():
        assert np.all(v == v[0])
        if s.truncated:
            assert v[0] == 0.0
    hhh = full_state.taylor[fl.SlotId(0, (0, 3, 0, 0, 0), 1)]
    p = full_state.model.params
    assert hhh[0] == pytest.approx(6 * p.g * p.mu ** 2 * p.m / 4)


def test_boundary_exactness(scalar_model):
    slot = fl.SlotId(1, (0, 4, 0, 0, 0), 0)
    st = fl.integrate_flow(scalar_model, fl.BoundarySpec().assign(slot, 0.125))
    for s, v in st.taylor.items():
        if s.l == 0:
            continue
        if s.relevant:
            assert v[0] == (0.125 if s == slot else 0.0)
        else:
            assert v[-1] == 0.0


def test_mass_slot_against_oracle(scalar_model, scalar_state):
    p = scalar_model.params
    for slot in (HH, BB):
        assert scalar_state.value(slot, 0.0) == 0.0
        ref, err = fl.one_loop_oracle(scalar_model, slot)
        assert err < 1e-9 * abs(ref)
        assert scalar_state.value(slot, p.lambda0) == pytest.approx(ref, rel=1e-6)


def test_oracle_refuses_non_tadpole(full_model):
    with pytest.raises(fl.FlowError):
        fl.one_loop_oracle(full_model, HH)
    with pytest.raises(fl.FlowError):
        fl.one_loop_oracle(full_model, fl.SlotId(1, (0, 4, 0, 0, 0), 0))


def test_flow_matches_functional(scalar_state):
    lam = float(scalar_state.lams[len(scalar_state.lams) // 3])
    ref = fl.one_loop_functional(scalar_state.model, lam)
    for s, want in ref.items():
        if s.truncated:
            continue
        got = scalar_state.value(s, lam)
        scale = max(abs(want), fl._scale(scalar_state.model, s))
        assert abs(got - want) <= 1e-6 * scale, s.label()


def test_step_halving(scalar_model, scalar_state):
    fine = fl.integrate_flow(scalar_model, schedule=fl.Schedule(intervals=1024))
    assert np.array_equal(np.concatenate([[0.0], fine.lams[1::2]]), scalar_state.lams)
    for s, v in scalar_state.taylor.items():
        if s.truncated:
            continue                  # round-off zeros, covered by the truncation scan
        w = np.concatenate([[fine.taylor[s][0]], fine.taylor[s][1::2]])
        scale = max(float(np.max(np.abs(v))), fl._scale(scalar_model, s))
        assert float(np.max(np.abs(w - v))) < 1e-8 * scale, s.label()


def test_coarse_schedule_raises(scalar_model):
    with pytest.raises(fl.ScheduleError, match="increase schedule"):
        fl.integrate_flow(scalar_model, schedule=fl.Schedule(intervals=16))


def test_schedule_validation():
    with pytest.raises(ValueError):
        fl.Schedule(intervals=20)
    with pytest.raises(ValueError):
        fl.Schedule(lam_min_factor=1.5)
    p = TheoryParams(lambda0=50.0)
    nodes = fl.Schedule().nodes(p)
    assert nodes[-1] == p.lambda0 and len(nodes) == 513
    assert fl.Schedule(max_step=0.001).count(p) > 512


def test_truncation_identity(full_model, full_state):
    rep = fl.truncation_check(full_state, fl.flow_tree_radial(full_model))
    assert rep.ok and rep.summary["checked"] > 0
    # (l=1, |n|=2, nu=3) and (l=0, |n|=3, nu=2) are absent; (l=0, |n|=3, nu=1) is not
    assert fl.SlotId(1, (0, 2, 0, 0, 0), 3).truncated
    assert fl.SlotId(0, (0, 3, 0, 0, 0), 2).truncated
    assert not fl.SlotId(0, (1, 2, 0, 0, 0), 1).truncated


def test_state_value_requires_node(scalar_state):
    with pytest.raises(fl.FlowError):
        scalar_state.value(HH, 1.234567)


def test_csv_output(scalar_state):
    rows = list(csv.reader(io.StringIO(scalar_state.to_csv())))
    assert rows[0] == ["Lambda", "slot", "structure", "value"]
    assert len(rows) == 1 + len(scalar_state.lams) * len(scalar_state.taylor)
    first = {(r[0], r[1]): float(r[3]) for r in rows[1:]}
    assert first[("0.0", HH.label())] == 0.0


# ---------------------------------------------------------------------------
# tree radial profiles

def test_tree_exchange_profile(scalar_model):
    nodes = np.geomspace(1e-3, 10 * scalar_model.params.lambda0, 32)
    lams, radii, prof, err = fl.flow_tree_radial(scalar_model, nodes=nodes)
    slot = fl.SlotId(0, (0, 4, 0, 0, 0), 2, "exc:h,h")
    worst = 0.0
    for i, lam in enumerate(lams):
        ref = fl.tree_exchange_closed_form(scalar_model, float(lam), radii)
        if lam == scalar_model.params.lambda0:
            assert np.all(prof[slot][i] == 0) and np.all(ref == 0)
            continue
        worst = max(worst, float(np.max(np.abs(prof[slot][i] - ref) / np.max(np.abs(ref)))))
    assert worst < 1e-8
    # the nu = 0 channel is the bare contact term at every scale
    contact = prof[fl.SlotId(0, (0, 4, 0, 0, 0), 0, "exc:h,h")]
    p = scalar_model.params
    assert np.allclose(contact, 24 * p.g ** 2 * p.mu ** 2 / 32, rtol=1e-14, atol=0)


# ---------------------------------------------------------------------------
# checks

def test_transform_check(full_state):
    rep = fl.transform_check(full_state)
    assert rep.ok, rep.items
    d = rep.to_dict()
    assert d["summary"] == {"inverse": True, "bare": True, "chain": True}


def test_bound_check_scalar(scalar_model):
    # the decay-exponent window [10m, 0.2 Lambda0] needs a wide cutoff range
    wide = scalar_model.with_params(lambda0=200.0)
    state = fl.integrate_flow(wide, schedule=fl.Schedule(max_step=0.0175))
    rep = fl.bound_check(state)
    assert rep.ok, [i for i in rep.items if not i["ok"]]
    fitted = [i for i in rep.items if "fitted_exponent" in i]
    assert fitted and all(i["exponent_ok"] for i in fitted)


def test_bound_check_empty_window(scalar_state):
    with pytest.raises(fl.FlowError, match="window"):
        fl.bound_check(scalar_state)


def test_mass_slot_growth(scalar_state):
    e = fl.growth_exponent(scalar_state, HH)
    assert 1.5 <= e <= 2.5


def test_lambda0_convergence_needs_two(scalar_model):
    with pytest.raises(fl.FlowError):
        fl.lambda0_convergence(scalar_model, None, [50.0])


def test_symmetry_violation_small(full_state):
    scale = max(abs(v[-1]) for v in full_state.taylor.values())
    assert full_state.symmetry_violation < 1e-8 * max(scale, 1.0)

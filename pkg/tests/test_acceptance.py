"""Acceptance criteria 1 to 14, one test each.

Every test prints a single ``criterion N: PASS|FAIL ...`` line (also under
captured output) and then asserts.  Run standalone with
``pytest tests/test_acceptance.py -v``.
"""
import math
import time

import numpy as np

from brsflow import couplings as cp
from brsflow import flow as fl
from brsflow import regulator as rg
from brsflow import sti
from brsflow.algebra import parse
from brsflow.regulator import TheoryParams

UNIT = TheoryParams(m=1.0, bigM=1.0, alpha=1.0, g=1.0, lambda0=50.0)
FULL = {"L_max": 1, "N_max": 4}
SCALAR = {"species": ["h", "B"], "L_max": 1, "N_max": 4}


def report(capsys, number, ok, elapsed, limit, detail):
    ok = bool(ok) and elapsed < limit
    with capsys.disabled():
        print(f"\ncriterion {number:2d}: {'PASS' if ok else 'FAIL'}  "
              f"({elapsed:.1f} s of {limit:.0f} s)  {detail}")
    assert ok, detail


def test_criterion_01_catalog_counts(capsys):
    t = time.perf_counter()
    counts = (len(cp.catalog("A")), len(cp.catalog("B")), len(sti.build_system()))
    report(capsys, 1, counts == (37, 7, 53), time.perf_counter() - t, 1,
           f"A={counts[0]} B={counts[1]} C={counts[2]}")


def test_criterion_02_tree_sti(capsys):
    t = time.perf_counter()
    rep = sti.evaluate(sti.build_system(), cp.tree_values())
    report(capsys, 2, rep.all_zero and len(rep.residuals) == 53, time.perf_counter() - t, 1,
           f"nonzero residuals: {rep.nonzero}")


def test_criterion_03_dependencies(capsys):
    t = time.perf_counter()
    rep = sti.verify_dependencies()
    report(capsys, 3, rep.all_zero and len(rep.combinations) == 4,
           time.perf_counter() - t, 10, f"combinations {sorted(rep.combinations)} all zero")


def test_criterion_04_standard_chain(capsys):
    t = time.perf_counter()
    sol, trace = sti.solve_chain(cp.free_symbolic("standard"), "standard")
    rep = sti.evaluate(sti.build_system(), sol)
    misused = set(trace.equations_used) & set(sti.UNUSED_EQUATIONS)
    report(capsys, 4, rep.all_zero and not misused, time.perf_counter() - t, 30,
           f"nonzero={rep.nonzero} unused-equations-used={sorted(misused)}")


def test_criterion_05_antighost_chain(capsys):
    t = time.perf_counter()
    sol, _ = sti.solve_chain(cp.free_symbolic("antighost"), "antighost")
    one = parse("1")
    e = {k: parse(k) for k in ("Sigma_dot_ccbar", "Sigma_trans", "Sigma_AB", "Sigma_dot_BB",
                               "F_AAA", "g")}
    R2 = -2 * e["F_AAA"] * (one + e["Sigma_dot_ccbar"]) / (e["g"] * (one + e["Sigma_trans"]))
    R4 = (one + e["Sigma_dot_ccbar"]) * (one + e["Sigma_AB"]) / (one + e["Sigma_dot_BB"])
    dm2 = (one + e["Sigma_AB"]) * (one + e["Sigma_AB"]) / (one + e["Sigma_dot_BB"]) - one
    checks = {
        "Sigma_long=0": sol["Sigma_long"].is_zero(),
        "Sigma_BB=0": sol["Sigma_BB"].is_zero(),
        "R_2": sol["R_2"].equals(R2),
        "R_4": sol["R_4"].equals(R4),
        "delta_m2": sol["delta_m2"].equals(dm2),
        "c22-c26": sti.antighost_relations(sol).all_zero,
    }
    bad = [k for k, v in checks.items() if not v]
    report(capsys, 5, not bad, time.perf_counter() - t, 30, f"failed: {bad}")


def test_criterion_06_round_trip(capsys):
    t = time.perf_counter()
    diffs = {}
    for mode in sti.MODES:
        sol, _ = sti.solve_chain(cp.free_tree_values(mode), mode)
        diffs[mode] = sorted(sol.diff(cp.tree_values()))
    report(capsys, 6, not any(diffs.values()), time.perf_counter() - t, 30,
           f"differences vs tree: {diffs}")


def test_criterion_07_regulator(capsys):
    t = time.perf_counter()
    p = TheoryParams(m=1.0, bigM=1.7, alpha=0.6, lambda0=40.0)
    rng = np.random.default_rng(7)
    ok_norm = rg.sigma(p.lambda0, 0.0, p) == 1.0
    # flatness at the origin; the difference carries an O(h^2 / Lambda^10)
    # truncation term, below 1e-8 once Lambda exceeds about 1.2 m
    h = 1e-4 * p.m ** 2
    flat = max(abs(rg.sigma_analytic(l, h, p) - rg.sigma_analytic(l, -h, p)) / (2 * h)
               for l in np.geomspace(2.0 * p.m, p.lambda0, 50))
    ksq = np.geomspace(1e-6, 1e3, 100)
    grid = np.array([rg.sigma(l, ksq, p) for l in np.geomspace(0.05, p.lambda0, 100)])
    rng_ok = bool(np.all(grid <= 1.0) and np.all(grid >= 0.0))
    d = np.diff(grid, axis=0)
    live = (grid[:-1] > 0) & (grid[1:] < 1 - 1e-12)
    mono = bool(np.all(d[live] > 0))
    worst, n = 0.0, 0
    species = rg.SPECIES
    while n < 1000:
        lam = float(np.exp(rng.uniform(np.log(0.2), np.log(30.0))))
        k = rng.normal(size=4)
        k *= rng.uniform(0.02, 1.6) * lam / np.linalg.norm(k)
        pk = float(rg.p_poly(k @ k, p))
        if pk / lam ** 10 > 15.0:
            continue
        sp_ = species[n % 4]
        c = rg.propagator(sp_, k, p)
        x0 = pk / p.lambda0 ** 10
        if pk / lam ** 10 < 0.5:
            f = lambda l: c * (np.expm1(-x0) - np.expm1(-pk / l ** 10))
        else:
            f = lambda l: -c * np.exp(-pk / l ** 10)
        hl = lam * 1e-5
        fd = (f(lam + hl) - f(lam - hl)) / (2 * hl)
        an = rg.flow_kernel(sp_, lam, p.lambda0, k, p)
        worst = max(worst, float(np.max(np.abs(fd - an)) / np.max(np.abs(an))))
        n += 1
    ok = ok_norm and flat < 1e-8 and rng_ok and mono and worst < 1e-6
    report(capsys, 7, ok, time.perf_counter() - t, 10,
           f"sigma(0)=1: {ok_norm}, max |FD slope|={flat:.1e}, range ok: {rng_ok}, "
           f"monotone: {mono}, kernel FD max rel={worst:.1e}")


def test_criterion_08_telescoping(capsys):
    t = time.perf_counter()
    p = TheoryParams(m=1.0, bigM=1.7, alpha=0.6, lambda0=40.0)
    rng = np.random.default_rng(8)
    worst = 0.0
    for sp_ in rg.SPECIES:
        for _ in range(100):
            k = rng.normal(size=4)
            k *= np.exp(rng.uniform(np.log(0.05), np.log(30.0))) / np.linalg.norm(k)
            got, want = rg.telescope(sp_, k, p)
            worst = max(worst, float(np.max(np.abs(got - want)) / np.max(np.abs(want))))
    report(capsys, 8, worst < 1e-8, time.perf_counter() - t, 10, f"max rel={worst:.1e}")


def test_criterion_09_one_loop_oracle(capsys):
    t = time.perf_counter()
    model = fl.build_model(SCALAR, params=UNIT)
    state = fl.integrate_flow(model)
    rel = {}
    for name, slot in (("hh", fl.SlotId(1, (0, 2, 0, 0, 0), 0)),
                       ("BB", fl.SlotId(1, (0, 0, 2, 0, 0), 0))):
        ref, _ = fl.one_loop_oracle(model, slot)
        rel[name] = abs(state.value(slot, UNIT.lambda0) - ref) / abs(ref)
    ratio = fl.ghost_sign_ratio(UNIT)
    ok = max(rel.values()) < 1e-6 and math.isclose(ratio, -2.0, rel_tol=1e-10)
    report(capsys, 9, ok, time.perf_counter() - t, 60,
           f"rel hh={rel['hh']:.1e} BB={rel['BB']:.1e}, ghost/boson={ratio:.12f}")


def test_criterion_10_tree_exchange(capsys):
    t = time.perf_counter()
    model = fl.build_model(SCALAR, params=UNIT)
    nodes = np.geomspace(1e-3 * UNIT.m, 10 * UNIT.lambda0, 32)
    lams, radii, prof, _ = fl.flow_tree_radial(model, nodes=nodes)
    slot = fl.SlotId(0, (0, 4, 0, 0, 0), 2, "exc:h,h")
    worst, exact_at_top = 0.0, True
    for i, lam in enumerate(lams):
        ref = fl.tree_exchange_closed_form(model, float(lam), radii)
        if lam == UNIT.lambda0:
            # the regularized propagator vanishes identically at the bare scale
            exact_at_top = bool(np.all(prof[slot][i] == 0) and np.all(ref == 0))
            continue
        worst = max(worst, float(np.max(np.abs(prof[slot][i] - ref)) / np.max(np.abs(ref))))
    report(capsys, 10, worst < 1e-8 and exact_at_top, time.perf_counter() - t, 30,
           f"max rel over {len(lams)} scales x 32 nodes={worst:.1e}")


def test_criterion_11_truncation(capsys):
    t = time.perf_counter()
    model = fl.build_model(FULL, params=UNIT)
    state = fl.integrate_flow(model)
    rep = fl.truncation_check(state, fl.flow_tree_radial(model))
    report(capsys, 11, rep.ok, time.perf_counter() - t, 60,
           f"{rep.summary['checked']} truncated slots, max |value|={rep.summary['max_abs']:.1e}")


def test_criterion_12_bound_envelopes(capsys):
    t = time.perf_counter()
    model = fl.build_model(dict(FULL, schedule={"max_step": 0.0175}),
                           params=UNIT.replace(lambda0=200.0))
    rep = fl.bound_check(fl.integrate_flow(model))
    fitted = [i for i in rep.items if "fitted_exponent" in i]
    dev = max(abs(i["fitted_exponent"] - i["exponent"]) for i in fitted)
    report(capsys, 12, rep.ok and fitted, time.perf_counter() - t, 120,
           f"{len(rep.items)} slots enveloped, {len(fitted)} decay fits, "
           f"max exponent deviation={dev:.2f}")


def test_criterion_13_lambda0_convergence(capsys):
    t = time.perf_counter()
    model = fl.build_model(dict(FULL, schedule={"max_step": 0.0175}), params=UNIT)
    rep = fl.lambda0_convergence(model, None, [50.0, 100.0, 200.0])
    report(capsys, 13, rep.ok, time.perf_counter() - t, 180,
           f"ratios={[round(r, 4) for r in rep.summary['ratios']]}, "
           f"relevant identical: {rep.summary['relevant_identical']}")


def test_criterion_14_transform_identities(capsys):
    t = time.perf_counter()
    model = fl.build_model(FULL, params=UNIT)
    rep = fl.transform_check(fl.integrate_flow(model))
    inv = max(i["max_dev"] for i in rep.items if i["identity"] == "inverse")
    chain = max(i["max_rel"] for i in rep.items if i["identity"].startswith("chain"))
    report(capsys, 14, rep.ok, time.perf_counter() - t, 30,
           f"inverse dev={inv:.1e}, bare identical={rep.summary['bare']}, chain rel={chain:.1e}")

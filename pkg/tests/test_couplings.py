import json

import pytest

from brsflow import couplings as cp
from brsflow.algebra import parse
from brsflow.regulator import TheoryParams

# tree values read off the appendix listing (mass stripped, mu = M/m)
APPENDIX_TREE = {
    "F_AAA": "-g/2", "F_AAh1": "g/2", "F_BBA": "-g/4", "F1_hBA": "g/2",
    "F1_ccbarA": "g", "F_BBh1": "g*mu^2/4", "F_hhh1": "g*mu^2/4",
    "F_ccbarh1": "-alpha*g/2", "F_ccbarB1": "alpha*g/2",
    "F1_AAAA": "g^2/4", "F1_AABB": "g^2/8", "F_hhhh": "g^2*mu^2/32",
    "F_BBhh": "g^2*mu^2/16", "F_BBBB": "g^2*mu^2/32", "F_AAhh": "g^2/8",
}


def test_counts():
    assert len(cp.catalog("A")) == 37
    assert len(cp.catalog("B")) == 7
    assert len(cp.catalog()) == 44


def test_appendix_tree_values():
    tree = cp.tree_values()
    for name, val in APPENDIX_TREE.items():
        assert tree[name].equals(parse(val)), name


def test_loop_only_parameters_vanish_at_tree_order():
    tree = cp.tree_values()
    for e in cp.catalog("A"):
        if e.name.startswith("r") or e.name.startswith("Sigma") or e.name in ("kappa", "delta_m2"):
            assert tree[e.name].is_zero(), e.name
    for i in range(1, 8):
        assert tree[f"R_{i}"].equals(parse("1"))


def test_tensor_tag_and_lookup():
    e = cp.lookup("F_AAA")
    assert "δ_{μν}" in e.tensor and "i(p−q)_λ" in e.tensor
    assert cp.lookup("F_hhBB") is cp.lookup("F_BBhh")
    with pytest.raises(KeyError):
        cp.lookup("F_nonsense")


@pytest.mark.parametrize("name, nu", [("F_AAh1", 1), ("F_hhh1", 1), ("F_AAA", 0),
                                      ("delta_m2", 2), ("F_hhhh", 0)])
def test_mass_order(name, nu):
    assert cp.mass_order(name) == nu


def test_grading_catalogue_clean():
    rep = cp.grading_check()
    assert rep.ok and rep.checked == 44


def test_grading_flags_violation():
    from dataclasses import replace
    bad = replace(cp.lookup("F_AAA"), nu=2)
    rep = cp.grading_check([bad])
    assert not rep.ok and rep.violations[0]["rule"] == "relevance bound"


def test_json_round_trip():
    s = cp.tree_values()
    back = cp.load_json(cp.dump_json(s))
    assert not s.diff(back)
    rows = json.loads(cp.dump_json(s))
    assert {r["coupling"] for r in rows} == set(cp.names())


def test_json_rejects_wrong_nu():
    rows = [{"coupling": "F_AAA", "nu": 1, "value": "1"}]
    with pytest.raises(ValueError, match="nu"):
        cp.load_json(json.dumps(rows), complete=False)


def test_incomplete_set_rejected():
    with pytest.raises(KeyError, match="missing"):
        cp.CouplingSet({"F_AAA": parse("1")})


def test_numeric_tree_values():
    p = TheoryParams(g=0.5, bigM=2.0)
    t = cp.tree_values(p)
    assert t["F_hhh1"] == pytest.approx(0.5 * 4.0 / 4)
    assert t["F_AAA"] == -0.25


def test_free_sets():
    assert len(cp.FREE_STANDARD) == 8
    assert "Sigma_long" not in cp.FREE_ANTIGHOST
    assert set(cp.free_tree_values("antighost")) == set(cp.FREE_ANTIGHOST)

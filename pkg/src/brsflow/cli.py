"""Command line interface.

    brsflow verify tree-sti
    brsflow verify dependencies
    brsflow verify antighost [--mode MODE] [--free FILE]
    brsflow solve sti [--mode MODE] [--free FILE|tree|symbolic]
    brsflow flow run [--config FILE] [--out DIR]
    brsflow check bounds|truncation|lambda0 [--config FILE]
    brsflow report catalog

Every command prints one JSON object on stdout.  Exit status: 0 if all
assertions pass, 1 on assertion failure, 2 on configuration or I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from typing import Dict, Optional, Sequence

from . import couplings as cp
from . import sti
from .algebra import AlgebraError, RationalExpr, from_sexpr, parse, to_sexpr

__all__ = ["main", "run", "ConfigError"]


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# I/O helpers

def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False, default=_default)


def _default(o):
    if isinstance(o, RationalExpr):
        return to_sexpr(o)
    try:
        import numpy as np
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
    except ImportError:        # pragma: no cover
        pass
    raise TypeError(f"not serializable: {type(o).__name__}")


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None


def _free_values(spec: Optional[str], mode: str) -> Dict[str, RationalExpr]:
    if spec in (None, "symbolic"):
        return cp.free_symbolic(mode)
    if spec == "tree":
        return cp.free_tree_values(mode)
    data = _read_json(spec)
    rows = data if isinstance(data, list) else [{"coupling": k, "value": v}
                                                 for k, v in data.items()]
    try:
        return {cp.ALIASES.get(r["coupling"], r["coupling"]): _expr(r["value"]) for r in rows}
    except (KeyError, AlgebraError) as exc:
        raise ConfigError(f"{spec}: {exc}") from None


def _expr(value) -> RationalExpr:
    """Infix text, an S-expression (as printed by this tool) or a number."""
    text = str(value).strip()
    return from_sexpr(text) if text.startswith("(") else parse(text)


def _model(path: Optional[str]):
    from .flow import FlowError, build_model
    cfg = _read_json(path) if path else {}
    if not isinstance(cfg, dict):
        raise ConfigError("model config must be a JSON object")
    try:
        return build_model(cfg)
    except (FlowError, TypeError, ValueError) as exc:
        raise ConfigError(f"model config: {exc}") from None


# ---------------------------------------------------------------------------
# commands

def _catalog(args) -> dict:
    counts = {"appendixA": len(cp.catalog("A")), "appendixB": len(cp.catalog("B")),
              "appendixC": len(sti.build_system())}
    ok = counts == {"appendixA": 37, "appendixB": 7, "appendixC": 53}
    return {"ok": ok, "counts": counts}


def _tree_sti(args) -> dict:
    rep = sti.evaluate(sti.build_system(), cp.tree_values())
    res = {k: to_sexpr(v) for k, v in rep.residuals.items()}
    return {"ok": rep.all_zero, "residuals": res, "failed": rep.nonzero}


def _dependencies(args) -> dict:
    try:
        rep = sti.verify_dependencies()
    except sti.PreconditionError as exc:
        return {"ok": False, "failed": [str(exc)]}
    combos = {k: to_sexpr(v) for k, v in rep.combinations.items()}
    return {"ok": rep.all_zero, "combinations": combos,
            "failed": [k for k, v in rep.combinations.items() if not v.is_zero()]}


def _solve(args) -> dict:
    free = _free_values(args.free, args.mode)
    try:
        sol, trace = sti.solve_chain(free, args.mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rep = sti.evaluate(sti.build_system(), sol)
    used = set(trace.equations_used)
    misused = sorted(used & set(sti.UNUSED_EQUATIONS))
    tree = cp.tree_values()
    diff = sorted(sol.diff(tree))
    tree_free = cp.free_tree_values(args.mode)
    round_trip = all(free[k].equals(tree_free[k]) for k in tree_free if k in free)
    ok = rep.all_zero and not misused and (not round_trip or not diff)
    return {"ok": ok, "mode": args.mode, "solution": cp.sexpr_map(sol),
            "diff_vs_tree": diff, "round_trip": round_trip,
            "residuals_nonzero": rep.nonzero, "unused_equations_used": misused,
            "steps": [[s.target, s.equation] for s in trace.steps]}


def _antighost(args) -> dict:
    free = _free_values(args.free, args.mode)
    try:
        sol, _ = sti.solve_chain(free, args.mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rep = sti.antighost_relations(sol)
    res = {k: to_sexpr(v) for k, v in rep.residuals.items()}
    return {"ok": rep.all_zero, "mode": args.mode, "residuals": res, "failed": rep.nonzero}


def _flow_run(args) -> dict:
    from .flow import FlowError, flow_tree_radial, integrate_flow, transform_check
    model = _model(args.config)
    try:
        state = integrate_flow(model)
    except FlowError as exc:
        return {"ok": False, "failed": [str(exc)]}
    tr = transform_check(state)
    out = {
        "ok": tr.ok,
        "snapshots": len(state.lams),
        "slots": len(state.taylor),
        "values_at_0": {s.label(): float(v[0]) for s, v in sorted(state.taylor.items())},
        "max_step_change": max(state.errors.values(), default=0.0),
        "symmetry_violation": state.symmetry_violation,
        "transform": tr.to_dict(),
    }
    if args.out:
        lams, radii, radial, err = flow_tree_radial(model)
        out["radial_step_change"] = err
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["Lambda", "k", "slot", "structure", "value"])
        for s in sorted(radial):
            for i in range(0, len(lams), 8):
                lam = lams[i]
                for j, k in enumerate(radii):
                    wr.writerow([repr(float(lam)), repr(float(k)), s.label(), s.structure,
                                 repr(float(radial[s][i, j]))])
        _atomic_write(os.path.join(args.out, "trajectory.csv"), state.to_csv())
        _atomic_write(os.path.join(args.out, "radial.csv"), buf.getvalue())
        _atomic_write(os.path.join(args.out, "report.json"), _dumps(out) + "\n")
    return out


def _check(args) -> dict:
    from .flow import (FlowError, bound_check, flow_tree_radial, integrate_flow,
                       lambda0_convergence, truncation_check)
    model = _model(args.config)
    try:
        if args.what == "bounds":
            rep = bound_check(integrate_flow(model))
        elif args.what == "truncation":
            rep = truncation_check(integrate_flow(model), flow_tree_radial(model))
        else:
            vals = args.lambda0 or [50.0, 100.0, 200.0]
            rep = lambda0_convergence(model, None, [v * model.params.m for v in vals])
    except FlowError as exc:
        return {"ok": False, "failed": [str(exc)]}
    d = rep.to_dict()
    d["failed"] = [it.get("slot", it.get("identity")) for it in rep.items
                   if it.get("ok") is False]
    return d


# ---------------------------------------------------------------------------

def _parser() -> _Parser:
    p = _Parser(prog="brsflow", description="STI solver and perturbative flow engine")
    p.add_argument("--report", metavar="FILE", help="also write the JSON summary to FILE")
    p.add_argument("--params-mode", choices=("symbolic", "numeric"), default=None,
                   help="symbolic forbids flow commands, numeric forbids STI commands")
    sub = p.add_subparsers(dest="group", required=True, parser_class=_Parser)

    v = sub.add_parser("verify")
    vs = v.add_subparsers(dest="what", required=True, parser_class=_Parser)
    vs.add_parser("tree-sti")
    vs.add_parser("dependencies")
    a = vs.add_parser("antighost")
    a.add_argument("--mode", choices=sti.MODES, default="antighost")
    a.add_argument("--free", default=None)

    s = sub.add_parser("solve")
    ss = s.add_subparsers(dest="what", required=True, parser_class=_Parser)
    so = ss.add_parser("sti")
    so.add_argument("--mode", choices=sti.MODES, default="standard")
    so.add_argument("--free", default=None,
                    help="JSON file of free constants, or 'tree' / 'symbolic'")

    f = sub.add_parser("flow")
    fs = f.add_subparsers(dest="what", required=True, parser_class=_Parser)
    fr = fs.add_parser("run")
    fr.add_argument("--config", default=None)
    fr.add_argument("--out", default=None, help="directory for trajectory CSV and report")

    c = sub.add_parser("check")
    cs = c.add_subparsers(dest="what", required=True, parser_class=_Parser)
    for name in ("bounds", "truncation", "lambda0"):
        cc = cs.add_parser(name)
        cc.add_argument("--config", default=None)
        if name == "lambda0":
            cc.add_argument("--lambda0", type=float, nargs="+", default=None,
                            help="cutoffs in units of m")

    r = sub.add_parser("report")
    rs = r.add_subparsers(dest="what", required=True, parser_class=_Parser)
    rs.add_parser("catalog")
    return p


_HANDLERS = {
    ("report", "catalog"): _catalog,
    ("verify", "tree-sti"): _tree_sti,
    ("verify", "dependencies"): _dependencies,
    ("verify", "antighost"): _antighost,
    ("solve", "sti"): _solve,
    ("flow", "run"): _flow_run,
    ("check", "bounds"): _check,
    ("check", "truncation"): _check,
    ("check", "lambda0"): _check,
}

_NUMERIC = {"flow", "check"}
_SYMBOLIC = {"verify", "solve"}


def run(argv: Optional[Sequence[str]] = None) -> tuple[int, dict]:
    """Execute a command; return (exit code, summary)."""
    try:
        args = _parser().parse_args(list(argv) if argv is not None else None)
        if args.params_mode == "symbolic" and args.group in _NUMERIC:
            raise ConfigError(f"'{args.group} {args.what}' needs numeric parameters")
        if args.params_mode == "numeric" and args.group in _SYMBOLIC:
            raise ConfigError(f"'{args.group} {args.what}' produces symbolic output")
        out = _HANDLERS[(args.group, args.what)](args)
        out = {"command": f"{args.group} {args.what}", **out}
        if args.report:
            _atomic_write(args.report, _dumps(out) + "\n")
        return (0 if out["ok"] else 1), out
    except ConfigError as exc:
        return 2, {"ok": False, "error": str(exc)}
    except OSError as exc:
        return 2, {"ok": False, "error": f"I/O error: {exc}"}


def main(argv: Optional[Sequence[str]] = None) -> int:
    code, out = run(argv)
    sys.stdout.write(_dumps(out) + "\n")
    return code


if __name__ == "__main__":     # pragma: no cover
    sys.exit(main())

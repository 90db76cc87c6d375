"""Command-line front end.

Subcommands: `analyze` (functional-block tree), `model` (full circuit
model dump), `eval` (DC solve + performance report for given sizes),
`size` (discrete search against a specification).

Exit codes: 0 success, 1 input error, 2 recognition failure,
3 infeasible within budget. All output is deterministic; wall-clock
timings go to stderr only.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources

from . import expr as E
from .blocks import RecognitionError, decompose
from .dc import RESIDUAL_TOL, solve_dc
from .device import DEFAULT_TECH, parse_tech
from .modelgen import InstantiationError, instantiate_model
from .netlist import NetlistError, parse_netlist, validate
from .sizing import build_problem, parse_sizes, parse_spec, size_circuit, verify_sizing

__all__ = ["main"]


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise NetlistError(f"cannot read {path}: {exc.strerror}") from exc


def _load_graph(args):
    g = parse_netlist(_read(args.netlist))
    diags = validate(g)
    if diags:
        raise NetlistError("; ".join(diags))
    return g


def _load_tech(args):
    if args.tech:
        return parse_tech(_read(args.tech))
    return DEFAULT_TECH


def _emit(args, text: str):
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
            if not text.endswith("\n"):
                fh.write("\n")
    else:
        print(text)


def default_data(name: str) -> str:
    """Path of a packaged example file (netlists, tech, specs)."""
    return str(resources.files("opsizer").joinpath("data", name))


def cmd_analyze(args) -> int:
    g = _load_graph(args)
    tree = decompose(g)
    doc = {
        "opamp_class": tree.opamp_class,
        "stages": [
            {
                "name": s.name,
                "kind": s.kind,
                "transconductor": list(s.tc),
                "bias": list(s.bias),
                "loads": [list(x) for x in s.loads],
                "inputs": list(s.input_nets),
                "outputs": list(s.outputs),
            }
            for s in tree.stages
        ],
        "blocks": [
            {
                "id": b.id,
                "level": b.level,
                "type": b.type,
                "members": list(b.members),
                "pins": b.pins,
            }
            for b in tree.blocks
        ],
    }
    if args.format == "json":
        _emit(args, json.dumps(doc, indent=1, sort_keys=True))
    else:
        lines = [f"op-amp class: {tree.opamp_class}"]
        for b in tree.blocks:
            lines.append(f"  HL{b.level} {b.id:10s} {{{', '.join(b.members)}}}")
        _emit(args, "\n".join(lines))
    return 0


def cmd_model(args) -> int:
    g = _load_graph(args)
    tree = decompose(g)
    model = instantiate_model(g, tree, _load_tech(args))
    if args.format == "json":
        _emit(args, model.dump())
    else:
        lines = []
        for z, e in model.performance.items():
            lines.append(f"{z} = {E.render(e) if e is not None else 'unconstrained'}")
        for k, e in model.intermediates.items():
            lines.append(f"{k} = {E.render(e)}")
        _emit(args, "\n".join(lines))
    return 0


def cmd_eval(args) -> int:
    g = _load_graph(args)
    tree = decompose(g)
    tech = _load_tech(args)
    model = instantiate_model(g, tree, tech)
    geom, bias, vcm = parse_sizes(_read(args.sizes))
    missing = []
    for d in g.mosfets():
        for key in (f"w[{d.name}]", f"l[{d.name}]"):
            if key not in geom and getattr(d, key[0]) is None:
                missing.append(key)
    for c in g.capacitors():
        if f"C[{c.name}]" not in geom and c.c is None:
            missing.append(f"C[{c.name}]")
    if missing:
        raise NetlistError(f"sizes file leaves geometry unbound: {', '.join(sorted(missing))}")

    op = solve_dc(g, tech, geom, bias=bias, vcm=vcm)
    b = op.bindings()
    b.update(geom)
    for d in g.mosfets():
        b.setdefault(f"w[{d.name}]", d.w)
        b.setdefault(f"l[{d.name}]", d.l)
    for c in g.capacitors():
        b.setdefault(f"C[{c.name}]", c.c)
        b[f"i[{c.name}]"] = 0.0
    perfs = model.evaluate_performance(dict(b))

    spec = parse_spec(_read(args.spec)) if args.spec else None
    doc = {
        "converged": op.converged,
        "iterations": op.iterations,
        "max_residual_A": op.residual,
        "region_violations": op.region_violations,
        "node_voltages": {k: round(v, 9) for k, v in sorted(op.voltages.items())},
        "performance": {},
    }
    for z in sorted(perfs):
        val = perfs[z]
        entry = {"value": val}
        if spec is not None and z in spec.bounds:
            lo, hi = spec.bounds[z]
            ok = (lo is None or (val is not None and val >= lo)) and (
                hi is None or (val is not None and val <= hi)
            )
            entry["bound"] = f"{'' if lo is None else f'>= {lo:g}'}{'' if hi is None else f' <= {hi:g}'}".strip()
            entry["pass"] = ok
        doc["performance"][z] = entry
    if args.format == "json":
        _emit(args, json.dumps(doc, indent=1, sort_keys=True))
    else:
        lines = [
            f"DC: converged={op.converged} iters={op.iterations} max residual={op.residual:.3g} A"
        ]
        for v in op.region_violations:
            lines.append(f"  region: {v}")
        for z, entry in doc["performance"].items():
            val = entry["value"]
            sval = "unconstrained" if val is None else f"{val:.6g}"
            mark = ""
            if "pass" in entry:
                mark = "  PASS" if entry["pass"] else "  FAIL"
            lines.append(f"{z:12s} {sval}{mark}")
        _emit(args, "\n".join(lines))
    if not op.converged:
        print(f"warning: DC solve did not converge (residual {op.residual:.3g})", file=sys.stderr)
    return 0


def cmd_size(args) -> int:
    g = _load_graph(args)
    tree = decompose(g)
    tech = _load_tech(args)
    model = instantiate_model(g, tree, tech)
    spec = parse_spec(_read(args.spec))
    if args.budget is not None:
        spec.budget_s = args.budget
    if args.seed is not None:
        spec.seed = args.seed
    problem = build_problem(model, spec, threads=args.threads)
    result = size_circuit(problem)
    report = verify_sizing(problem, result) if result.assignment else None

    doc = {
        "feasible": result.feasible,
        "objective_min_margin": None if result.objective == float("-inf") else result.objective,
        "sizing": {k: result.assignment[k] for k in sorted(result.assignment)},
        "performance": {
            z: result.performances.get(z) for z in sorted(result.performances)
        },
        "margins": {k: result.margins[k] for k in sorted(result.margins)},
        "violations": result.violations,
        "verified": None if report is None else report.ok,
        "verify_failures": [] if report is None else report.failures(),
        "leaves": result.leaves,
        "seed": spec.seed,
    }
    if args.format == "json":
        _emit(args, json.dumps(doc, indent=1, sort_keys=True))
    else:
        lines = [f"feasible: {result.feasible}"]
        for k in sorted(result.assignment):
            lines.append(f"  {k} = {result.assignment[k]:.4g}")
        for z in sorted(result.performances):
            v = result.performances[z]
            lines.append(f"  {z} = {'n/a' if v is None else f'{v:.6g}'}")
        for v in result.violations:
            lines.append(f"  violation: {v}")
        _emit(args, "\n".join(lines))
    print(
        f"search: {result.leaves} leaves in {result.runtime_s:.1f}s"
        + (f", first feasible at leaf {result.first_feasible_leaf}" if result.first_feasible_leaf else ""),
        file=sys.stderr,
    )
    if not result.feasible:
        return 3
    if report is not None and not report.ok:
        print("verification failed:", "; ".join(report.failures()), file=sys.stderr)
        return 3
    return 0


def _add_common(p, *, spec=False, sizes=False, sizing=False):
    p.add_argument("--netlist", required=True, help="netlist file")
    p.add_argument("--tech", help="technology parameter file (key=value)")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.add_argument("--out", help="write the report to this path instead of stdout")
    if spec:
        p.add_argument("--spec", required=sizing, help="specification file")
    if sizes:
        p.add_argument("--sizes", required=True, help="sizes file binding every free geometry")
    if sizing:
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--budget", type=float, default=None, help="search budget in seconds")
        p.add_argument("--threads", type=int, default=1)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="opsizer", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    _add_common(sub.add_parser("analyze", help="functional-block decomposition"))
    _add_common(sub.add_parser("model", help="instantiated circuit model"))
    _add_common(sub.add_parser("eval", help="evaluate performances for given sizes"), spec=True, sizes=True)
    _add_common(sub.add_parser("size", help="discrete sizing search"), spec=True, sizing=True)
    args = ap.parse_args(argv)
    handlers = {
        "analyze": cmd_analyze,
        "model": cmd_model,
        "eval": cmd_eval,
        "size": cmd_size,
    }
    try:
        return handlers[args.cmd](args)
    except RecognitionError as exc:
        print(f"recognition failure: {exc}", file=sys.stderr)
        return 2
    except InstantiationError as exc:
        print(f"instantiation error: {exc}", file=sys.stderr)
        return 2
    except (NetlistError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

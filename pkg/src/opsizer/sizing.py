"""Discrete sizing against a performance specification.

The search assigns grid values to one variable per geometry-equality
class (widths, lengths, capacitors) and evaluates every leaf with a
full DC solve plus analytical performance evaluation. Structure:

* exhaustive depth-first branch-and-bound with gate-area interval
  pruning whenever the grid space is small enough to enumerate;
* otherwise a seeded, deterministic sampling pass finds a first
  feasible sizing, which a trust-region depth-first pass then improves
  toward higher minimum normalized safety margins for the remaining
  budget.

A solution is feasible when every specification bound holds, every
transistor satisfies its assigned-region constraints, all behavioral
constraints hold within the configured tolerances, and every
non-dominant pole/zero sits at least a decade above the dominant pole.
"""

from __future__ import annotations

import math
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import expr as E
from .dc import RESIDUAL_TOL, gate_only_nets, solve_dc
from .modelgen import CircuitModel
from .netlist import NetlistError, parse_value

__all__ = [
    "Spec",
    "SizingProblem",
    "SizingResult",
    "parse_spec",
    "parse_sizes",
    "size_circuit",
    "verify_sizing",
    "VerifyReport",
]

_UNITS = {
    "db": lambda x: 10.0 ** (x / 20.0),
    "deg": lambda x: x * math.pi / 180.0,
    "ghz": lambda x: x * 1e9,
    "mhz": lambda x: x * 1e6,
    "khz": lambda x: x * 1e3,
    "hz": lambda x: x,
    "v/us": lambda x: x * 1e6,
    "v/s": lambda x: x,
    "mw": lambda x: x * 1e-3,
    "uw": lambda x: x * 1e-6,
    "w": lambda x: x,
    "um2": lambda x: x * 1e-12,
    "mm2": lambda x: x * 1e-6,
    "pf": lambda x: x * 1e-12,
    "nf": lambda x: x * 1e-9,
    "v": lambda x: x,
    "s": lambda x: x,
    "rad": lambda x: x,
}


def parse_bound_value(tok: str) -> float:
    t = tok.strip()
    low = t.lower()
    for unit in sorted(_UNITS, key=len, reverse=True):
        if low.endswith(unit):
            head = t[: len(t) - len(unit)]
            if head and (head[-1].isdigit() or head[-1] == "."):
                return _UNITS[unit](float(head))
    return parse_value(t)


@dataclass
class Spec:
    bounds: dict[str, tuple[float | None, float | None]] = field(default_factory=dict)
    budget_s: float = 60.0
    seed: int = 0
    vcm: float | None = None
    bias: dict[str, float] = field(default_factory=dict)
    eqtol_voltage: float = 0.2
    eqtol_ratio: float = 0.1
    grids: dict[str, np.ndarray] = field(default_factory=dict)

    def check(self):
        for z, (lo, hi) in self.bounds.items():
            if lo is not None and hi is not None and lo > hi:
                raise NetlistError(f"{z}: lower bound exceeds upper bound")


def _parse_grid(spec_str: str) -> np.ndarray:
    parts = spec_str.split(":")
    if len(parts) != 3:
        raise NetlistError(f"bad grid {spec_str!r}, expected start:stop:step")
    a = parse_value(parts[0])
    b = parse_value(parts[1])
    if parts[2].endswith("log"):
        n = int(parts[2][:-3])
        return np.unique(np.geomspace(a, b, n))
    step = parse_value(parts[2])
    n = int(round((b - a) / step))
    return a + step * np.arange(n + 1)


def parse_spec(text: str) -> Spec:
    spec = Spec()
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("*"):
            continue
        toks = line.split()
        head = toks[0]
        if head == "budget":
            spec.budget_s = parse_value(toks[1].rstrip("s") if toks[1].endswith("s") else toks[1])
        elif head == "seed":
            spec.seed = int(toks[1])
        elif head == "vcm":
            spec.vcm = parse_value(toks[1])
        elif head == "bias":
            spec.bias[toks[1]] = parse_value(toks[2])
        elif head == "eqtol":
            if toks[1] == "voltage":
                spec.eqtol_voltage = parse_value(toks[2])
            elif toks[1] == "ratio":
                spec.eqtol_ratio = parse_value(toks[2])
            else:
                raise NetlistError(f"spec line {ln}: unknown eqtol kind {toks[1]!r}")
        elif head == "grid":
            if toks[1] not in ("W", "L", "C"):
                raise NetlistError(f"spec line {ln}: grid kind must be W, L or C")
            spec.grids[toks[1]] = _parse_grid(toks[2])
        elif head.startswith("z_"):
            if len(toks) != 3 or toks[1] not in (">=", "<="):
                raise NetlistError(f"spec line {ln}: expected '<z> >=|<= <value>'")
            val = parse_bound_value(toks[2])
            lo, hi = spec.bounds.get(head, (None, None))
            if toks[1] == ">=":
                lo = val
            else:
                hi = val
            spec.bounds[head] = (lo, hi)
        else:
            raise NetlistError(f"spec line {ln}: unrecognized directive {head!r}")
    spec.check()
    return spec


def parse_sizes(text: str) -> tuple[dict[str, float], dict[str, float], float | None]:
    """Sizes file: `W <dev> <val>` / `L <dev> <val>` / `C <cap> <val>`
    plus optional `bias <net> <val>` and `vcm <val>` lines."""
    geom: dict[str, float] = {}
    bias: dict[str, float] = {}
    vcm = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("*"):
            continue
        toks = line.split()
        if toks[0] in ("W", "L", "C") and len(toks) == 3:
            key = {"W": "w", "L": "l", "C": "C"}[toks[0]]
            geom[f"{key}[{toks[1]}]"] = parse_value(toks[2])
        elif toks[0] == "bias" and len(toks) == 3:
            bias[toks[1]] = parse_value(toks[2])
        elif toks[0] == "vcm" and len(toks) == 2:
            vcm = parse_value(toks[1])
        else:
            raise NetlistError(f"sizes line {ln}: unrecognized entry {raw.strip()!r}")
    return geom, bias, vcm


# ---------------------------------------------------------------------------

@dataclass
class _Var:
    name: str  # e.g. "W:P1" (class representative) or "C:Cc"
    kind: str  # W | L | C
    members: tuple[str, ...]
    values: np.ndarray
    order: list[int]  # branching value order (indices into values)


@dataclass
class SizingProblem:
    model: CircuitModel
    spec: Spec
    variables: list[_Var] = field(default_factory=list)
    fixed: dict[str, float] = field(default_factory=dict)
    threads: int = 1

    @property
    def space(self) -> float:
        n = 1.0
        for v in self.variables:
            n *= len(v.values)
        return n


@dataclass
class SizingResult:
    feasible: bool
    assignment: dict[str, float]  # every w[..]/l[..]/C[..] value
    performances: dict[str, float | None]
    margins: dict[str, float]
    objective: float  # min normalized margin
    violations: list[str]
    op_voltages: dict[str, float]
    leaves: int
    first_feasible_leaf: int | None
    runtime_s: float


def build_problem(model: CircuitModel, spec: Spec, threads: int = 1) -> SizingProblem:
    g = model.graph
    wcl, lcl = model.geometry_classes()
    fixed: dict[str, float] = {}
    variables: list[_Var] = []

    def fixed_value(members, attr):
        vals = {getattr(g.device(t), attr) for t in members}
        vals.discard(None)
        if len(vals) > 1:
            raise NetlistError(f"inconsistent fixed {attr} in class {members}")
        return vals.pop() if vals else None

    refs = _reference_counts(model)
    for kind, classes, attr in (("W", wcl, "w"), ("L", lcl, "l")):
        grid = spec.grids.get(kind)
        for members in classes:
            members = tuple(members)
            fv = fixed_value(members, attr)
            key = f"{attr}[{{}}]"
            if fv is not None:
                for t in members:
                    fixed[key.format(t)] = fv
                continue
            if grid is None:
                raise NetlistError(f"no {kind} grid given and {members} is unsized")
            variables.append(_Var(f"{kind}:{members[0]}", kind, members, grid, []))
    cgrid = spec.grids.get("C")
    for cap in g.capacitors():
        if cap.c is not None:
            fixed[f"C[{cap.name}]"] = cap.c
            continue
        if cgrid is None:
            raise NetlistError(f"no C grid given and {cap.name} is unsized")
        variables.append(_Var(f"C:{cap.name}", "C", (cap.name,), cgrid, []))

    # most-constrained-first branching; ascending W/C, descending L
    variables.sort(key=lambda v: (-refs.get(v.name, 0), v.name))
    for v in variables:
        idx = list(range(len(v.values)))
        if v.kind == "L":
            idx.reverse()
        v.order = idx
    return SizingProblem(model=model, spec=spec, variables=variables, fixed=fixed, threads=threads)


def _reference_counts(model: CircuitModel) -> dict[str, int]:
    counts: dict[str, int] = {}
    pool = [e for e in model.performance.values() if e is not None]
    pool += list(model.intermediates.values())
    mentioned: list[str] = []
    for e in pool:
        mentioned.extend(e.variables())
    wcl, lcl = model.geometry_classes()
    for kind, classes, prefix in (("W", wcl, "w"), ("L", lcl, "l")):
        for members in classes:
            key = f"{kind}:{members[0]}"
            counts[key] = sum(mentioned.count(f"{prefix}[{t}]") for t in members)
    for cap in model.graph.capacitors():
        counts[f"C:{cap.name}"] = mentioned.count(f"C[{cap.name}]")
    return counts


# ---------------------------------------------------------------------------

def _assignment_bindings(problem: SizingProblem, values: dict[str, float]) -> dict[str, float]:
    b = dict(problem.fixed)
    for var in problem.variables:
        val = values[var.name]
        for t in var.members:
            key = {"W": "w", "L": "l", "C": "C"}[var.kind]
            b[f"{key}[{t}]"] = val
    return b


def _evaluate_leaf(problem: SizingProblem, values: dict[str, float]):
    """DC solve + performance evaluation; returns (feasible, objective,
    margins, perfs, violations, op)."""
    model = problem.model
    spec = problem.spec
    g = model.graph
    geom = _assignment_bindings(problem, values)
    op = solve_dc(g, model.tech, geom, bias=spec.bias, vcm=spec.vcm)
    violations: list[str] = []
    if not op.converged:
        return False, -math.inf, {}, {}, [f"DC did not converge (residual {op.residual:.3g} A)"], op
    if op.region_violations:
        violations += [f"region: {v}" for v in op.region_violations]

    b = op.bindings()
    b.update(geom)
    b.update(model.tech.bindings())
    for cap in g.capacitors():
        b[f"i[{cap.name}]"] = 0.0
    perfs = model.evaluate_performance(dict(b))

    margins: dict[str, float] = {}
    for z, (lo, hi) in spec.bounds.items():
        val = perfs.get(z)
        if val is None:
            continue
        if lo is not None:
            scale = abs(lo) if lo != 0 else 1.0
            margins[f"{z}>="] = (val - lo) / scale
        if hi is not None:
            scale = abs(hi) if hi != 0 else 1.0
            margins[f"{z}<="] = (hi - val) / scale

    resolver = dict(b)
    for c in model.behavioral:
        try:
            lv = model._resolve_expr(c.lhs, resolver)
            rv = model._resolve_expr(c.rhs, resolver)
        except Exception as exc:  # pragma: no cover - defensive
            violations.append(f"{c.kind}: evaluation failed ({exc})")
            continue
        if c.relation == "eq":
            if c.kind in ("offset-voltage",):
                if abs(lv - rv) > spec.eqtol_voltage:
                    violations.append(
                        f"{c.kind}: |{lv:.3f} - {rv:.3f}| > {spec.eqtol_voltage} V"
                    )
            else:
                ref = max(abs(lv), abs(rv), 1e-30)
                if abs(lv - rv) / ref > spec.eqtol_ratio:
                    violations.append(
                        f"{c.kind}: {lv:.4g} vs {rv:.4g} beyond {spec.eqtol_ratio:.0%}"
                    )
        elif c.relation == "gt" and not lv > rv:
            violations.append(f"{c.kind}: {lv:.4g} <= {rv:.4g}")
    for c in model.separations:
        lv = model._resolve_expr(c.lhs, resolver)
        if not lv > 10.0:
            violations.append(f"pole-separation {c.provenance[0]}: ratio {lv:.2f} <= 10")

    feas = not violations and all(mv >= 0.0 for mv in margins.values())
    objective = min(margins.values()) if margins else 0.0
    if violations:
        # infeasible gradient: every violation removed is worth one unit
        objective = min(objective, 0.0) - float(len(violations))
    return feas, objective, margins, perfs, violations, op


def size_circuit(problem: SizingProblem) -> SizingResult:
    """Deterministic discrete search; see the module docstring."""
    spec = problem.spec
    t0 = time.monotonic()
    deadline = t0 + spec.budget_s
    rng = random.Random(spec.seed)
    leaves = 0
    first_feasible: int | None = None
    best: tuple[float, dict[str, float]] | None = None  # (objective, values)
    best_feasible = False
    best_payload = None

    area_hi = spec.bounds.get("z_D", (None, None))[1]

    def record(values, feas, obj, payload):
        nonlocal best, best_feasible, best_payload, first_feasible
        if feas and first_feasible is None:
            first_feasible = leaves
        better = False
        if best is None:
            better = True
        elif feas and not best_feasible:
            better = True
        elif feas == best_feasible and obj > best[0]:
            better = True
        if better:
            best = (obj, dict(values))
            best_feasible = feas
            best_payload = payload

    def eval_values(values):
        nonlocal leaves
        leaves += 1
        feas, obj, margins, perfs, violations, op = _evaluate_leaf(problem, values)
        record(values, feas, obj, (margins, perfs, violations, op))
        return feas, obj

    nvars = len(problem.variables)
    if nvars == 0:
        values: dict[str, float] = {}
        eval_values(values)
    elif problem.space <= 4096:
        _dfs_exhaustive(problem, eval_values, deadline, area_hi)
    else:
        _sample_then_refine(problem, eval_values, deadline, area_hi, rng)

    runtime = time.monotonic() - t0
    if best is None:
        return SizingResult(
            feasible=False,
            assignment={},
            performances={},
            margins={},
            objective=-math.inf,
            violations=["no leaf evaluated within budget"],
            op_voltages={},
            leaves=leaves,
            first_feasible_leaf=None,
            runtime_s=runtime,
        )
    margins, perfs, violations, op = best_payload
    return SizingResult(
        feasible=best_feasible,
        assignment=_assignment_bindings(problem, best[1]),
        performances=perfs,
        margins=margins,
        objective=best[0],
        violations=violations,
        op_voltages=op.voltages,
        leaves=leaves,
        first_feasible_leaf=first_feasible,
        runtime_s=runtime,
    )


def _dfs_exhaustive(problem, eval_values, deadline, area_hi):
    order = problem.variables
    values: dict[str, float] = {}

    def area_prune(depth) -> bool:
        if area_hi is None:
            return False
        partial = {
            v.name: values.get(v.name, float(v.values.min())) for v in problem.variables
        }
        b = _assignment_bindings(problem, partial)
        area = sum(
            b[f"w[{d.name}]"] * b[f"l[{d.name}]"] for d in problem.model.graph.mosfets()
        )
        return area > area_hi

    def rec(depth):
        if time.monotonic() > deadline:
            return
        if depth == len(order):
            eval_values(values)
            return
        var = order[depth]
        for idx in var.order:
            values[var.name] = float(var.values[idx])
            if not area_prune(depth):
                rec(depth + 1)
            if time.monotonic() > deadline:
                break
        values.pop(var.name, None)

    rec(0)


def _sample_then_refine(problem, eval_values, deadline, area_hi, rng):
    varlist = problem.variables
    spec = problem.spec

    def random_values():
        return {
            v.name: float(v.values[rng.randrange(len(v.values))]) for v in varlist
        }

    # phase 1: seeded sampling until the first feasible point, capped at
    # 60% of the budget
    sample_deadline = min(deadline, time.monotonic() + 0.6 * spec.budget_s)
    incumbent = None
    incumbent_obj = -math.inf
    feasible_found = False

    def consider(vals, feas, obj):
        nonlocal incumbent, incumbent_obj, feasible_found
        if (feas, obj) > (feasible_found, incumbent_obj):
            incumbent, incumbent_obj, feasible_found = vals, obj, feas

    nthreads = max(1, problem.threads)
    while time.monotonic() < sample_deadline and not feasible_found:
        batch = [random_values() for _ in range(nthreads)]
        if nthreads == 1:
            results = [eval_values(batch[0])]
        else:
            with ThreadPoolExecutor(max_workers=nthreads) as pool:
                results = list(pool.map(eval_values, batch))
        for vals, (feas, obj) in zip(batch, results):
            consider(vals, feas, obj)
    if incumbent is None:
        return

    # phase 2: trust-region depth-first refinement around the incumbent
    radius = 1
    while time.monotonic() < deadline and radius <= 4:
        improved = False
        for var in varlist:
            if time.monotonic() > deadline:
                return
            base = incumbent[var.name]
            base_idx = int(np.argmin(np.abs(var.values - base)))
            lo = max(0, base_idx - radius)
            hi = min(len(var.values) - 1, base_idx + radius)
            for idx in range(lo, hi + 1):
                if idx == base_idx:
                    continue
                trial = dict(incumbent)
                trial[var.name] = float(var.values[idx])
                feas, obj = eval_values(trial)
                if (feas, obj) > (feasible_found, incumbent_obj):
                    incumbent, incumbent_obj, feasible_found = trial, obj, feas
                    improved = True
                if time.monotonic() > deadline:
                    return
        if not improved:
            radius += 1


# ---------------------------------------------------------------------------

@dataclass
class VerifyReport:
    ok: bool
    checks: list[tuple[str, bool, str]]

    def failures(self) -> list[str]:
        return [f"{name}: {detail}" for name, ok, detail in self.checks if not ok]


def verify_sizing(problem: SizingProblem, result: SizingResult) -> VerifyReport:
    """Independent re-evaluation of a sizing: fresh DC solve, expression
    re-evaluation, grid membership, bounds, behavioral constraints and
    pole separations."""
    model = problem.model
    spec = problem.spec
    checks: list[tuple[str, bool, str]] = []

    for var in problem.variables:
        key = {"W": "w", "L": "l", "C": "C"}[var.kind]
        val = result.assignment.get(f"{key}[{var.members[0]}]")
        on_grid = val is not None and bool(np.any(np.isclose(var.values, val, rtol=1e-9)))
        checks.append(
            (f"grid[{var.name}]", on_grid, f"value {val} on declared grid" if on_grid else f"value {val} off grid")
        )
        if val is not None:
            for t in var.members[1:]:
                same = math.isclose(result.assignment.get(f"{key}[{t}]", math.nan), val, rel_tol=1e-12)
                checks.append((f"class[{var.name}:{t}]", same, "class member consistent"))

    op = solve_dc(model.graph, model.tech, result.assignment, bias=spec.bias, vcm=spec.vcm)
    checks.append(
        (
            "kcl-residual",
            op.converged and op.residual < RESIDUAL_TOL,
            f"max residual {op.residual:.3g} A",
        )
    )
    checks.append(
        ("region", not op.region_violations, "; ".join(op.region_violations) or "all in region")
    )

    b = op.bindings()
    b.update(result.assignment)
    b.update(model.tech.bindings())
    for cap in model.graph.capacitors():
        b[f"i[{cap.name}]"] = 0.0
    perfs = model.evaluate_performance(dict(b))
    for z, (lo, hi) in sorted(spec.bounds.items()):
        val = perfs.get(z)
        if val is None:
            continue
        if lo is not None:
            checks.append((f"{z}>=", val >= lo, f"{val:.6g} vs bound {lo:.6g}"))
        if hi is not None:
            checks.append((f"{z}<=", val <= hi, f"{val:.6g} vs bound {hi:.6g}"))
        stored = result.performances.get(z)
        if stored is not None and val is not None:
            agree = math.isclose(stored, val, rel_tol=1e-9, abs_tol=1e-15)
            checks.append((f"{z}-bookkeeping", agree, f"search {stored:.6g} vs verify {val:.6g}"))

    resolver = dict(b)
    for c in model.behavioral:
        lv = model._resolve_expr(c.lhs, resolver)
        rv = model._resolve_expr(c.rhs, resolver)
        if c.relation == "eq":
            tol_ok = (
                abs(lv - rv) <= spec.eqtol_voltage
                if c.kind == "offset-voltage"
                else abs(lv - rv) / max(abs(lv), abs(rv), 1e-30) <= spec.eqtol_ratio
            )
            checks.append((f"behavioral[{c.kind}]", tol_ok, f"{lv:.4g} vs {rv:.4g}"))
        else:
            checks.append((f"behavioral[{c.kind}]", lv > rv, f"{lv:.4g} vs {rv:.4g}"))
    for c in model.separations:
        lv = model._resolve_expr(c.lhs, resolver)
        checks.append(
            (f"separation[{c.provenance[0]}]", lv > 10.0, f"f/f_dp = {lv:.2f}")
        )

    return VerifyReport(ok=all(ok for _, ok, _ in checks), checks=checks)

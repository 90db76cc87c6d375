"""Equation library and automatic model instantiation.

Builds the complete analytical circuit model for a decomposed op-amp:

* basic model: one KCL equation per internal net, nodal voltage map,
  square-law device equations with operating-region guards;
* performance model: symmetry constraints (levels 2-4), behavioral
  constraints, intermediate equations (net capacitances, block output
  conductances, stage output resistance and gain, poles and zeros) and
  the op-amp performance equations, keyed by performance variable.

Intermediate equations are only instantiated when some performance
equation or constraint needs them. All expressions are canonicalized
and hash-consed; the canonical rendering of the model is deterministic
and used for golden-file comparison.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import device as dev
from . import expr as E
from .blocks import FunctionalBlockTree, Stage
from .device import TechParams
from .netlist import CircuitGraph, Device

__all__ = ["Constraint", "CircuitModel", "instantiate_model", "InstantiationError"]

PERF_VARS = (
    "z_D",
    "z_QP",
    "z_vcm_min",
    "z_vcm_max",
    "z_vout_min",
    "z_vout_max",
    "z_CMRR",
    "z_fGBW",
    "z_AD0",
    "z_SR",
    "z_PM",
)


class InstantiationError(ValueError):
    pass


@dataclass(frozen=True)
class Constraint:
    kind: str
    level: int
    relation: str  # eq | gt | ge | lt
    lhs: E.Expr
    rhs: E.Expr
    provenance: tuple[str, ...] = ()

    def render(self) -> str:
        return f"{self.relation}({E.render(self.lhs)},{E.render(self.rhs)})"


@dataclass
class CircuitModel:
    graph: CircuitGraph
    tree: FunctionalBlockTree
    tech: TechParams
    kcl: dict[str, E.Expr] = field(default_factory=dict)
    kvl: dict[str, E.Expr] = field(default_factory=dict)
    device_eqs: dict[str, E.Expr] = field(default_factory=dict)
    region: list[Constraint] = field(default_factory=list)
    symmetry: list[Constraint] = field(default_factory=list)
    behavioral: list[Constraint] = field(default_factory=list)
    intermediates: dict[str, E.Expr] = field(default_factory=dict)
    performance: dict[str, E.Expr | None] = field(default_factory=dict)
    separations: list[Constraint] = field(default_factory=list)
    units: dict[str, str] = field(default_factory=dict)

    # -- variable classes ---------------------------------------------------
    def geometry_classes(self) -> tuple[list[list[str]], list[list[str]]]:
        """Transitive closure of the geometry equalities: (w classes,
        l classes), each class a sorted list of device names."""
        mos = [d.name for d in self.graph.mosfets()]
        wuf = _UnionFind(mos)
        luf = _UnionFind(mos)
        for c in self.symmetry:
            if c.kind == "geometry-match":
                a, b = c.provenance[:2]
                wuf.union(a, b)
                luf.union(a, b)
                continue
            lv, rv = _plain_var(c.lhs), _plain_var(c.rhs)
            if lv and rv:
                if lv[0] == "w":
                    wuf.union(lv[1], rv[1])
                elif lv[0] == "l":
                    luf.union(lv[1], rv[1])
        return wuf.classes(), luf.classes()

    # -- evaluation ----------------------------------------------------------
    def eval_vars(self, names, bindings: dict[str, float]) -> dict[str, float]:
        """Evaluate intermediates/performance variables on top of the
        operating-point bindings (which must already hold device
        variables, node voltages and geometry)."""
        b = dict(bindings)
        b.update(self.tech.bindings())
        out = {}
        for name in names:
            out[name] = self._resolve(name, b, set())
        return out

    def _resolve(self, name: str, b: dict[str, float], active: set[str]) -> float:
        if name in b:
            return b[name]
        if name in active:
            raise InstantiationError(f"cyclic definition of {name}")
        e = self.intermediates.get(name)
        if e is None:
            e = self.performance.get(name)
        if e is None:
            raise InstantiationError(f"no defining equation for {name!r}")
        active.add(name)
        for v in sorted(e.variables()):
            if v not in b and v != "pi":
                self._resolve(v, b, active)
        active.discard(name)
        val = E.evaluate(e, b)
        b[name] = val
        return val

    def _resolve_expr(self, e: E.Expr, b: dict[str, float]) -> float:
        """Evaluate an arbitrary model expression, resolving any referenced
        intermediate/performance variables on demand (results are cached
        into `b`)."""
        for v in sorted(e.variables()):
            if v not in b and v != "pi":
                self._resolve(v, b, set())
        return E.evaluate(e, b)

    def evaluate_performance(self, bindings: dict[str, float]) -> dict[str, float | None]:
        out: dict[str, float | None] = {}
        b = dict(bindings)
        b.update(self.tech.bindings())
        for z, e in self.performance.items():
            if e is None:
                out[z] = None
            else:
                out[z] = self._resolve(z, b, set())
        return out

    # -- reporting -----------------------------------------------------------
    def dump(self) -> str:
        doc = {
            "opamp_class": self.tree.opamp_class,
            "stages": [s.name for s in self.tree.stages],
            "variables": {k: self.units[k] for k in sorted(self.units)},
            "basic": {
                "kcl": {n: E.render(e) for n, e in sorted(self.kcl.items())},
                "kvl": {n: E.render(e) for n, e in sorted(self.kvl.items())},
                "devices": {n: E.render(e) for n, e in sorted(self.device_eqs.items())},
                "region": [c.render() for c in self.region],
            },
            "symmetry": [
                {"level": c.level, "kind": c.kind, "constraint": c.render(), "blocks": list(c.provenance)}
                for c in self.symmetry
            ],
            "behavioral": [
                {"level": c.level, "kind": c.kind, "constraint": c.render(), "blocks": list(c.provenance)}
                for c in self.behavioral
            ],
            "intermediate": {k: E.render(e) for k, e in self.intermediates.items()},
            "performance": {
                k: (E.render(e) if e is not None else "unconstrained")
                for k, e in self.performance.items()
            },
            "pole_separation": [c.render() for c in self.separations],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    def symmetry_counts(self) -> dict[int, int]:
        counts = {2: 0, 3: 0, 4: 0}
        for c in self.symmetry:
            counts[c.level] = counts.get(c.level, 0) + 1
        return counts


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if ra > rb:
                ra, rb = rb, ra
            self.parent[rb] = ra

    def same(self, a, b):
        return self.find(a) == self.find(b)

    def classes(self):
        groups: dict[str, list[str]] = {}
        for x in self.parent:
            groups.setdefault(self.find(x), []).append(x)
        return [sorted(v) for _, v in sorted(groups.items())]


def _plain_var(e: E.Expr):
    if e.kind == "var" and "[" in e.value and e.value.endswith("]"):
        head, _, rest = e.value.partition("[")
        return head, rest[:-1]
    return None


# ---------------------------------------------------------------------------

def instantiate_model(g: CircuitGraph, tree: FunctionalBlockTree, tech: TechParams) -> CircuitModel:
    m = CircuitModel(graph=g, tree=tree, tech=tech)
    _gen_units(m)
    _gen_kcl_kvl(m)
    _gen_device_eqs(m)
    _gen_symmetry(m)
    _gen_behavioral(m)
    _gen_gain_chain(m)
    _gen_poles(m)
    _gen_performance(m)
    _gen_net_capacitances(m)
    _gen_separations(m)
    _canonicalize_all(m)
    return m


def _gen_units(m: CircuitModel):
    u = m.units
    for d in m.graph.mosfets():
        t = d.name
        u[f"w[{t}]"] = "m"
        u[f"l[{t}]"] = "m"
        u[f"gm[{t}]"] = "S"
        u[f"gd[{t}]"] = "S"
        u[f"iDS[{t}]"] = "A"
        u[f"vGS[{t}]"] = "V"
        u[f"vDS[{t}]"] = "V"
    for d in m.graph.capacitors():
        u[f"C[{d.name}]"] = "F"
        u[f"i[{d.name}]"] = "A"
    for n in m.graph.nets:
        u[f"v[{n}]"] = "V"
    u.update(
        {
            "z_D": "m^2",
            "z_QP": "W",
            "z_vcm_min": "V",
            "z_vcm_max": "V",
            "z_vout_min": "V",
            "z_vout_max": "V",
            "z_CMRR": "1",
            "z_fGBW": "Hz",
            "z_AD0": "1",
            "z_SR": "V/s",
            "z_PM": "rad",
        }
    )


def _gen_kcl_kvl(m: CircuitModel):
    g = m.graph
    rails = {g.vdd: E.var("v_VDD"), g.vss: E.var("v_VSS")}

    def vnet(n: str) -> E.Expr:
        return rails.get(n, E.var(f"v[{n}]"))

    for d in g.mosfets():
        m.kvl[f"vGS[{d.name}]"] = E.sub(vnet(d.g), vnet(d.s))
        m.kvl[f"vDS[{d.name}]"] = E.sub(vnet(d.d), vnet(d.s))

    ibias_net = g.ports["ibias"]
    for net in g.nets:
        if net in rails:
            continue
        terms: list[E.Expr] = []
        for d, role in g.pins_at(net):
            if d.is_mosfet():
                if role == "d":
                    cur = E.var(f"iDS[{d.name}]")
                    terms.append(cur if d.doping == "p" else E.neg(cur))
                elif role == "s":
                    cur = E.var(f"iDS[{d.name}]")
                    terms.append(E.neg(cur) if d.doping == "p" else cur)
            else:
                cur = E.var(f"i[{d.name}]")
                terms.append(cur if role == "t2" else E.neg(cur))
        if net == ibias_net:
            bias = E.var("i_bias")
            terms.append(bias if g.bias_sink_doping == "n" else E.neg(bias))
        if not terms:
            continue  # gates-only net: externally biased, no KCL
        m.kcl[net] = E.add(*terms)


def _gen_device_eqs(m: CircuitModel):
    for d in m.graph.mosfets():
        branches = []
        for region in dev.REGIONS:
            conds = [
                (E.ge(l, r) if op == ">=" else E.lt(l, r))
                for l, op, r in dev.region_constraints(d, region)
            ]
            branches.append(E.when(E.guard_and(*conds), dev.ids_expr(d, region)))
        m.device_eqs[f"iDS[{d.name}]"] = E.case(*branches)
        gme, gde = dev.gm_gd_exprs(d)
        m.device_eqs[f"gm[{d.name}]"] = gme
        m.device_eqs[f"gd[{d.name}]"] = gde
        for l, op, r in dev.region_constraints(d, "saturation"):
            m.region.append(
                Constraint("region", 0, "ge" if op == ">=" else "lt", l, r, (d.name,))
            )


# --- symmetry ---------------------------------------------------------------

def _w(t: str) -> E.Expr:
    return E.var(f"w[{t}]")


def _l(t: str) -> E.Expr:
    return E.var(f"l[{t}]")


def _gen_symmetry(m: CircuitModel):
    tree = m.tree
    g = m.graph
    mos = {d.name: d for d in g.mosfets()}

    # level 2: equal lengths along diode-anchored gate groups
    for net, doping, anchors, followers in tree.bias_groups:
        members = list(anchors) + list(followers)
        for t in members[1:]:
            m.symmetry.append(
                Constraint("length-match", 2, "eq", _l(t), _l(members[0]), (members[0], t))
            )

    # level 3
    for st in tree.stages:
        if st.kind != "tc_inv":
            for a, b in st.dp_pairs:
                m.symmetry.append(Constraint("length-match", 3, "eq", _l(a), _l(b), (a, b)))
                m.symmetry.append(Constraint("width-match", 3, "eq", _w(a), _w(b), (a, b)))
        for a, b in st.gcc_pairs:
            a, b = sorted((a, b))
            m.symmetry.append(_geom(a, b))
        for group in (
            [t for stack in st.loads for t in stack],
            list(st.bias),
            list(st.fold_supplies),
        ):
            group = sorted(set(group))
            for i, a in enumerate(group):
                for b in group[i + 1 :]:
                    if mos[a].doping == mos[b].doping and mos[a].g == mos[b].g:
                        m.symmetry.append(_geom(a, b))
        # positional pairing of the two load parts of a dual-output stage
        if st.kind != "tc_inv" and len(st.outputs) == 2:
            parts = {}
            for stack in st.loads:
                parts.setdefault(mos[stack[0]].d, stack)
            s1 = parts.get(st.outputs[0])
            s2 = parts.get(st.outputs[1])
            if s1 and s2 and len(s1) == len(s2):
                for a, b in zip(s1, s2):
                    if mos[a].doping == mos[b].doping and mos[a].g != mos[b].g:
                        m.symmetry.append(_geom(*sorted((a, b))))

    # level 4: position-matched pairs across dual second stages
    seconds = [s for s in tree.stages if s.is_second_dual]
    if len(seconds) == 2:
        wuf, luf = _closure_sofar(m)
        pos1 = _positions(m, seconds[0])
        pos2 = _positions(m, seconds[1])
        for p, t1 in sorted(pos1.items()):
            t2 = pos2.get(p)
            if t2 is None:
                continue
            if not wuf.same(t1, t2):
                m.symmetry.append(Constraint("width-match", 4, "eq", _w(t1), _w(t2), (t1, t2)))
                wuf.union(t1, t2)
            if not luf.same(t1, t2):
                m.symmetry.append(Constraint("length-match", 4, "eq", _l(t1), _l(t2), (t1, t2)))
                luf.union(t1, t2)


def _geom(a: str, b: str) -> Constraint:
    return Constraint(
        "geometry-match",
        3,
        "eq",
        E.var(f"w[{a}]"),
        E.var(f"w[{b}]"),
        (a, b),
    )


def _closure_sofar(m: CircuitModel):
    mosnames = [d.name for d in m.graph.mosfets()]
    wuf = _UnionFind(mosnames)
    luf = _UnionFind(mosnames)
    for c in m.symmetry:
        a, b = c.provenance[:2]
        if c.kind == "length-match":
            luf.union(a, b)
        elif c.kind == "width-match":
            wuf.union(a, b)
        elif c.kind == "geometry-match":
            luf.union(a, b)
            wuf.union(a, b)
    return wuf, luf


def _positions(m: CircuitModel, st: Stage) -> dict[tuple, str]:
    """(doping, rail, stack depth) per transistor of a second stage."""
    g = m.graph
    mos = {d.name: d for d in g.mosfets()}
    out: dict[tuple, str] = {}
    members = st.tc + st.bias + [t for s in st.loads for t in s]
    for t in members:
        d = mos[t]
        depth = 0
        cur = d
        rail = None
        seen = set()
        while cur is not None and cur.name not in seen:
            seen.add(cur.name)
            depth += 1
            if cur.s in g.rails():
                rail = cur.s
                break
            nxt = next((mos[x] for x in sorted(mos) if mos[x].d == cur.s), None)
            cur = nxt
        out[(d.doping, rail, depth)] = t
    return out


# --- behavioral --------------------------------------------------------------

def _gen_behavioral(m: CircuitModel):
    tree = m.tree
    for vb_d, vb_s, cb_d, cb_s in tree.ccm_blocks:
        m.behavioral.append(
            Constraint(
                "width-ratio",
                2,
                "eq",
                E.div(_w(vb_d), _w(cb_d)),
                E.div(_w(vb_s), _w(cb_s)),
                (vb_d, vb_s, cb_d, cb_s),
            )
        )
    first = tree.first_stage()
    if first.kind == "tc_c":
        reps = _gin_reps(m, first)
        m.behavioral.append(
            Constraint(
                "gm-match",
                3,
                "eq",
                E.var(f"gm[{reps[0]}]"),
                E.var(f"gm[{reps[1]}]"),
                tuple(reps),
            )
        )
        if len(first.bias) == 2:
            a, b = first.bias
            m.behavioral.append(
                Constraint(
                    "current-match",
                    3,
                    "eq",
                    E.absv(E.var(f"iDS[{a}]")),
                    E.absv(E.var(f"iDS[{b}]")),
                    (a, b),
                )
            )
    if tree.second_stages() and len(first.outputs) == 2:
        o1, o2 = first.outputs
        m.behavioral.append(
            Constraint(
                "offset-voltage", 4, "eq", E.var(f"v[{o1}]"), E.var(f"v[{o2}]"), (o1, o2)
            )
        )
    if tree.cmfb_stage() is not None:
        m.behavioral.append(
            Constraint(
                "cmfb-bandwidth",
                5,
                "gt",
                E.var("f_GBW_CMFB"),
                E.var("f_GBW"),
                ("a_cmfb",),
            )
        )


# --- gain chain: gout, R_out, A_D0 -------------------------------------------

def _chain(m: CircuitModel) -> list[Stage]:
    return m.tree.amp_stage_chain()


def _chain_index(m: CircuitModel, st: Stage) -> int:
    return _chain(m).index(st) + 1


def _gin_reps(m: CircuitModel, st: Stage) -> list[str]:
    """Input transistor representative(s): the dp member whose drain chain
    reaches the gain net (tc_s/tc_c), the out-sensing member (tc_cmfb) or
    the input device (tc_inv)."""
    if st.kind == "tc_inv":
        return [st.tc[0]]
    if st.kind == "tc_cmfb":
        return [st.dp_pairs[0][0]]
    gain_net = st.outputs[0]
    reps = []
    for pair in st.dp_pairs:
        rep = pair[0]
        for t in pair:
            if st.branch_terminals.get(t) == gain_net:
                rep = t
        reps.append(rep)
    return reps


def _gin_expr(m: CircuitModel, st: Stage) -> E.Expr:
    reps = _gin_reps(m, st)
    return E.add(*[E.var(f"gm[{t}]") for t in reps])


def _gd(t: str) -> E.Expr:
    return E.var(f"gd[{t}]")


def _gm(t: str) -> E.Expr:
    return E.var(f"gm[{t}]")


def _gout_stack(m: CircuitModel, stack: list[str]) -> E.Expr:
    """Eq.-21 style output conductance of a 1- or 2-transistor stack,
    ordered from the output net to the supply rail."""
    hl1 = m.tree.hl1
    if len(stack) == 1:
        h = stack[0]
        return _gm(h) if hl1.get(h) == "dt" else _gd(h)
    if len(stack) == 2:
        t_out, t_sup = stack
        return E.div(E.mul(_gd(t_out), _gd(t_sup)), _gm(t_out))
    raise InstantiationError(f"unsupported stack shape: {stack}")


def _gout_terms(m: CircuitModel, st: Stage, net: str) -> list[tuple[str, str, E.Expr]]:
    """(role, name-suffix, expr) for every block at the given stage output
    net. Load parts come first (a gate-connected couple is load part 1)."""
    g = m.graph
    mos = {d.name: d for d in g.mosfets()}
    idx = _chain_index(m, st)
    terms: list[tuple[str, str, E.Expr]] = []
    lp = 0

    # gate-connected couple branches (cascode / folded-cascode)
    for k, (ga, gb) in enumerate(st.gcc_pairs):
        for t in (ga, gb):
            if mos[t].d != net:
                continue
            src = mos[t].s
            dp_ref = next(
                (x for x in st.tc if x not in (ga, gb) and mos[x].d == src), None
            )
            supply = next((x for x in st.fold_supplies if mos[x].d == src), None)
            if dp_ref is None:
                raise InstantiationError(f"couple {t} has no pair transistor at {src}")
            if supply is None:
                e = E.div(E.mul(_gd(t), _gd(dp_ref)), _gm(t))
            else:
                e = E.div(E.mul(_gd(t), E.add(_gd(supply), _gd(dp_ref))), _gm(t))
            lp += 1
            terms.append(("lp", f"gout_lp_{idx}_{lp}", e))

    # transconductor stack (simple dp side or inverting chain)
    if st.kind == "tc_inv":
        top = st.tc[-1]
        if mos[top].d == net:
            stack = list(reversed(st.tc))
            terms.append(("tc", f"gout_tc_{idx}", _gout_stack(m, stack)))
    elif not st.gcc_pairs:
        for pair in st.dp_pairs:
            for t in pair:
                if mos[t].d == net:
                    terms.append(("tc", f"gout_tc_{idx}", _gd(t)))
                    break
            else:
                continue
            break

    # load stacks
    for stack in st.loads:
        if mos[stack[0]].d == net:
            lp += 1
            terms.append(("lp", f"gout_lp_{idx}_{lp}", _gout_stack(m, stack)))

    # stage bias stacks at the output net
    if st.bias and mos[st.bias[0]].d == net:
        terms.append(("bs", f"gout_bs_{idx}", _gout_stack(m, st.bias)))

    if not terms:
        raise InstantiationError(f"no output conductance contributions at {net}")
    return terms


def _gen_gain_chain(m: CircuitModel):
    for st in _chain(m):
        idx = _chain_index(m, st)
        net = st.outputs[0]
        terms = _gout_terms(m, st, net)
        for _, name, e in terms:
            m.intermediates[name] = e
            m.units[name] = "S"
        m.intermediates[f"R_out_a{idx}"] = E.div(
            E.const(1.0), E.add(*[E.var(name) for _, name, _ in terms])
        )
        m.units[f"R_out_a{idx}"] = "V/A"
        gin = _gin_expr(m, st)
        m.intermediates[f"A_D0_{idx}"] = E.div(gin, E.add(*[e for _, _, e in terms]))
        m.units[f"A_D0_{idx}"] = "1"


# --- poles and zeros ----------------------------------------------------------

def _cnet(net: str) -> E.Expr:
    return E.var(f"C[{net}]")


def _gen_poles(m: CircuitModel):
    tree = m.tree
    g = m.graph
    mos = {d.name: d for d in g.mosfets()}
    chain = _chain(m)
    ndps: list[str] = []
    zeros: list[str] = []

    def add_pole(name: str, e: E.Expr):
        while name in m.intermediates:
            name += "x"
        m.intermediates[name] = e
        m.units[name] = "Hz"
        ndps.append(name)

    # stage-internal poles: every post-input transistor on the path to the
    # stage's gain output net
    for st in chain:
        idx = _chain_index(m, st)
        internal: list[tuple[str, str]] = []  # (device, net before it)
        if st.gcc_pairs:
            for ga, gb in st.gcc_pairs:
                for t in (ga, gb):
                    if mos[t].d == st.outputs[0]:
                        internal.append((t, mos[t].s))
        elif st.kind == "tc_inv" and st.cascodes:
            for t in st.cascodes:
                internal.append((t, mos[t].s))
        internal.sort(key=lambda p: p[1])
        for k, (t, before) in enumerate(internal, start=1):
            suffix = f"a{idx}" if len(internal) == 1 else f"a{idx}_{k}"
            add_pole(f"f_ndp_{suffix}", E.div(_gm(t), E.mul(E.const(2.0), E.PI, _cnet(before))))

    # input poles of later stages
    for st in chain[1:]:
        idx = _chain_index(m, st)
        t_in = st.tc[0]
        in_net = st.input_nets[0]
        if st.compensated_by:
            cap = st.compensated_by
            gin = _gin_expr(m, st)
            cin = _cnet(in_net)
            cout = _cnet(st.outputs[0])
            ctot = E.add(cout, E.div(E.mul(cin, cout), E.var(f"C[{cap}]")), cin)
            add_pole(f"f_ndp_a{idx}", E.div(gin, E.mul(E.const(2.0), E.PI, ctot)))
        else:
            name = f"a{idx - 1}" if st.is_second_dual else f"a{idx}"
            add_pole(f"f_ndp_{name}", E.div(_gm(t_in), E.mul(E.const(2.0), E.PI, _cnet(in_net))))

    # CMFB hand-off pole: the transistor receiving the CMFB output sees
    # the capacitance of the CMFB output net
    cm = tree.cmfb_stage()
    if cm is not None:
        cm_out = cm.outputs[0]
        receivers = sorted(t for t in mos if mos[t].g == cm_out)
        if receivers:
            first = chain[0]
            rep = receivers[0]
            for ga, gb in first.gcc_pairs:
                for t in (ga, gb):
                    if mos[t].d == first.outputs[0]:
                        sup = next(
                            (x for x in receivers if mos[x].d == mos[t].s), None
                        )
                        if sup is not None:
                            rep = sup
            add_pole(
                "f_ndp_cmfb", E.div(_gm(rep), E.mul(E.const(2.0), E.PI, _cnet(cm_out)))
            )

    # mirror zeros: a single-transistor mirror load rejoining the halves at
    # the stage gain net evokes a zero at twice the mirror pole
    for st in chain:
        idx = _chain_index(m, st)
        if st.kind == "tc_inv" or len(st.outputs) < 1:
            continue
        for stack in st.loads:
            if len(stack) != 1:
                continue
            h = stack[0]
            if tree.hl1.get(h) != "dt" and mos[h].d == st.outputs[0]:
                anchor = tree.cb_anchor.get(h)
                load_dts = {
                    s[0] for s in st.loads if len(s) >= 1 and tree.hl1.get(s[0]) == "dt"
                }
                if anchor in load_dts:
                    pole = f"f_ndp_a{idx}_mir"
                    add_pole(pole, E.div(_gm(anchor), E.mul(E.const(2.0), E.PI, _cnet(mos[anchor].d))))
                    zname = f"f_z_a{idx}_mir"
                    m.intermediates[zname] = E.mul(E.const(2.0), E.var(pole))
                    m.units[zname] = "Hz"
                    zeros.append(zname)

    # positive zero from the compensation capacitor
    comp_stage = next((s for s in chain if s.compensated_by), None)
    if comp_stage is not None:
        cap = comp_stage.compensated_by
        gin = _gin_expr(m, comp_stage)
        m.intermediates["f_pz"] = E.div(
            E.const(1.0),
            E.mul(
                E.const(2.0),
                E.PI,
                E.var(f"C[{cap}]"),
                E.sub(E.div(E.const(1.0), gin), E.div(E.const(1.0), E.const(1.0))),
            ),
        )
        m.units["f_pz"] = "Hz"

    # dominant pole
    if tree.opamp_class == "symmetrical":
        rep = tree.stage(tree.rep_second)
        i2 = _chain_index(m, rep)
        nxt = chain[i2] if len(chain) > i2 else None
        cnet = _cnet(rep.outputs[0])
        factors = [E.const(2.0), E.PI, cnet]
        if nxt is not None:
            factors.append(_gin_expr(m, nxt))
            factors.append(E.var(f"R_out_a{i2}"))
            factors.append(E.var(f"R_out_a{_chain_index(m, nxt)}"))
        else:
            factors.append(E.var(f"R_out_a{i2}"))
        m.intermediates["f_dp"] = E.div(E.const(1.0), E.mul(*factors))
    else:
        first = chain[0]
        cnet = _cnet(first.signal_out)
        factors = [E.const(2.0), E.PI, cnet, E.var("R_out_a1")]
        if len(chain) > 1:
            factors.append(_gin_expr(m, chain[1]))
            factors.append(E.var("R_out_a2"))
        m.intermediates["f_dp"] = E.div(E.const(1.0), E.mul(*factors))
    m.units["f_dp"] = "Hz"

    m._ndps = ndps  # type: ignore[attr-defined]
    m._zeros = zeros  # type: ignore[attr-defined]


# --- performance equations -----------------------------------------------------

def _vds_sat(m: CircuitModel, t: str, sign: int = 1) -> E.Expr:
    e = dev.vds_sat_expr(m.graph.device(t), m.tree.hl1[t])
    return E.neg(e) if sign < 0 else e


def _simple_paths(m: CircuitModel, start: str, rail: str, exclude: set[str]) -> list[list[str]]:
    """Simple drain-source paths from a net to a supply rail."""
    g = m.graph
    rails = set(g.rails())
    mos = [d for d in g.mosfets() if d.name not in exclude]
    out: list[list[str]] = []

    def walk(net, used, path):
        if net == rail:
            out.append(list(path))
            return
        if net in rails or len(path) > 6:
            return
        for d in mos:
            if d.name in used:
                continue
            nxt = None
            if d.d == net:
                nxt = d.s
            elif d.s == net:
                nxt = d.d
            if nxt is None:
                continue
            used.add(d.name)
            path.append(d.name)
            walk(nxt, used, path)
            path.pop()
            used.discard(d.name)

    walk(start, set(), [])
    return out


def _best_path(m: CircuitModel, paths: list[list[str]], prefer_dts: bool) -> list[str] | None:
    if not paths:
        return None
    hl1 = m.tree.hl1

    def key(p):
        dts = sum(1 for t in p if hl1.get(t) == "dt")
        return (-dts if prefer_dts else 0, len(p), tuple(p))

    return sorted(paths, key=key)[0]


def _gen_performance(m: CircuitModel):
    g = m.graph
    tree = m.tree
    mos = {d.name: d for d in g.mosfets()}
    chain = _chain(m)
    first = chain[0]
    perf = m.performance

    # area
    perf["z_D"] = E.add(*[E.mul(_w(d.name), _l(d.name)) for d in g.mosfets()])

    # quiescent power: one current per vdd-touching stack, plus the bias
    # current when it is sunk by an nmos diode
    vdd = g.vdd
    heads = sorted({d.name for d in g.mosfets() if vdd in (d.d, d.s)})
    currents = [E.absv(E.var(f"iDS[{t}]")) for t in heads]
    if g.bias_sink_doping == "n":
        currents.append(E.var("i_bias"))
    perf["z_QP"] = E.mul(E.sub(E.var("v_VDD"), E.var("v_VSS")), E.add(*currents))

    # common-mode input range
    if first.kind == "tc_c":
        perf["z_vcm_min"] = None  # rail-to-rail input: unconstrained
        perf["z_vcm_max"] = None
    else:
        bias_rail = mos[first.bias[0]].s if first.bias else g.vss
        load_rail = g.vss if bias_rail == g.vdd else g.vdd
        rep = _gin_reps(m, first)[0]
        bias_path = E.add(
            _railvar(g, bias_rail),
            E.var(f"vGS[{rep}]"),
            *[_vds_sat(m, t) for t in first.bias],
        )
        exclude = set(tree.dp_members) | set(tree.b_o) | set(first.bias)
        cands = []
        for t in [x for p in first.dp_pairs for x in p]:
            start = mos[t].d
            p = _best_path(m, _simple_paths(m, start, load_rail, exclude), prefer_dts=True)
            if p:
                cands.append(p)
        path = _best_path(m, cands, prefer_dts=True)
        if path is None:
            raise InstantiationError("no load path for the common-mode input range")
        gcc = set(tree.gcc_members)
        drops = [
            _vds_sat(m, t, sign=-1 if t in gcc else 1)
            for t in path
        ]
        tc_doping = mos[rep].doping
        load_path = E.add(_railvar(g, load_rail), dev.vth_sym(tc_doping), *drops)
        if bias_rail == g.vdd:
            perf["z_vcm_max"], perf["z_vcm_min"] = bias_path, load_path
        else:
            perf["z_vcm_max"], perf["z_vcm_min"] = load_path, bias_path

    # output voltage range: shortest stacks from the op-amp output
    last = chain[-1]
    out_net = g.ports["out"]
    exclude = set(tree.dp_members)
    up = _best_path(m, _simple_paths(m, out_net, g.vdd, exclude), prefer_dts=False)
    dn = _best_path(m, _simple_paths(m, out_net, g.vss, exclude), prefer_dts=False)
    if up is None or dn is None:
        raise InstantiationError("no output-voltage path to a supply rail")
    perf["z_vout_max"] = E.add(E.var("v_VDD"), *[_vds_sat(m, t) for t in up])
    perf["z_vout_min"] = E.add(E.var("v_VSS"), *[_vds_sat(m, t) for t in dn])

    # CMRR
    if tree.opamp_class == "fully_differential":
        perf["z_CMRR"] = None
    else:
        gout_bs1 = (
            E.add(*[_gd(t) for t in first.bias]) if first.bias else None
        )
        if gout_bs1 is None:
            perf["z_CMRR"] = None
        else:
            lg = _load_gate_at_output(m, first)
            if lg is not None and tree.opamp_class == "symmetrical":
                rep2 = _chain_index(m, tree.stage(tree.rep_second))
                perf["z_CMRR"] = E.div(
                    E.mul(
                        E.const(2.0),
                        E.var("A_D0_1"),
                        E.var(f"A_D0_{rep2}"),
                        _gm(lg),
                    ),
                    gout_bs1,
                )
            elif lg is not None:
                perf["z_CMRR"] = E.div(
                    E.mul(E.const(2.0), E.var("A_D0_1"), _gm(lg)), gout_bs1
                )
            else:
                perf["z_CMRR"] = E.div(
                    E.mul(E.const(2.0), _gin_expr(m, first)), gout_bs1
                )

    # unity-gain bandwidth
    if tree.opamp_class == "symmetrical":
        rep = tree.stage(tree.rep_second)
        i2 = _chain_index(m, rep)
        gbw = E.div(
            E.mul(E.var("A_D0_1"), _gin_expr(m, rep)),
            E.mul(E.const(2.0), E.PI, _cnet(rep.outputs[0])),
        )
    else:
        gbw = E.div(
            _gin_expr(m, first), E.mul(E.const(2.0), E.PI, _cnet(first.signal_out))
        )
    perf["z_fGBW"] = gbw
    m.intermediates["f_GBW"] = gbw
    m.units["f_GBW"] = "Hz"

    cm = tree.cmfb_stage()
    if cm is not None:
        m.intermediates["f_GBW_CMFB"] = E.div(
            _gin_expr(m, cm), E.mul(E.const(2.0), E.PI, _cnet(cm.outputs[0]))
        )
        m.units["f_GBW_CMFB"] = "Hz"

    # open-loop gain
    perf["z_AD0"] = E.mul(*[E.var(f"A_D0_{i+1}") for i in range(len(chain))])

    # slew rate
    perf["z_SR"] = _slew_rate(m)

    # phase margin
    fgbw = E.var("f_GBW")
    terms: list[E.Expr] = [E.div(E.PI, E.const(2.0))]
    for name in m._ndps:  # type: ignore[attr-defined]
        terms.append(E.neg(E.atan(E.div(fgbw, E.var(name)))))
    if "f_pz" in m.intermediates:
        terms.append(E.neg(E.atan(E.div(fgbw, E.var("f_pz")))))
    for name in m._zeros:  # type: ignore[attr-defined]
        terms.append(E.atan(E.div(fgbw, E.var(name))))
    perf["z_PM"] = E.add(*terms)


def _railvar(g: CircuitGraph, net: str) -> E.Expr:
    return E.var("v_VDD") if net == g.vdd else E.var("v_VSS")


def _load_gate_at_output(m: CircuitModel, first: Stage) -> str | None:
    """Load transistor whose gate sits on a first-stage output net; the
    net feeding the representative second stage is searched first, diodes
    preferred, then name order."""
    g = m.graph
    mos = {d.name: d for d in g.mosfets()}
    load_devs = sorted({t for stack in first.loads for t in stack})
    nets = list(dict.fromkeys([first.signal_out] + first.outputs))
    for net in nets:
        cands = [t for t in load_devs if mos[t].g == net]
        if cands:
            cands.sort(key=lambda t: (m.tree.hl1.get(t) != "dt", t))
            return cands[0]
    return None


def _slew_rate(m: CircuitModel) -> E.Expr:
    g = m.graph
    tree = m.tree
    mos = {d.name: d for d in g.mosfets()}
    chain = _chain(m)
    out_cap = _cnet(g.ports["out"])

    def stage_current(st: Stage) -> E.Expr:
        devs = st.bias if st.bias else [st.tc[0]]
        return E.add(*[E.absv(E.var(f"iDS[{t}]")) for t in devs])

    if len(chain) == 1:
        st = chain[0]
        terms = [stage_current(st)]
        if st.gcc_pairs:
            # the couple-biasing currents on the output branches
            supplies = []
            for ga, gb in st.gcc_pairs:
                for t in (ga, gb):
                    if mos[t].d in st.outputs:
                        sup = next(
                            (x for x in st.fold_supplies if mos[x].d == mos[t].s), None
                        )
                        if sup:
                            supplies.append(sup)
            if supplies:
                terms.append(E.add(*[E.absv(E.var(f"iDS[{t}]")) for t in sorted(supplies)]))
        return E.div(E.minv(*terms), out_cap)

    entries = []
    for k, st in enumerate(chain):
        if tree.opamp_class == "symmetrical" and k == 0:
            continue  # the first stage is mirrored into the second
        cur = stage_current(st)
        if tree.opamp_class == "symmetrical" and st.name == tree.rep_second:
            cur = E.mul(E.const(2.0), cur)
        entries.append(E.div(cur, _cnet(st.signal_out)))
    return E.minv(*entries)


def _gen_net_capacitances(m: CircuitModel):
    """Definitions for every referenced net capacitance."""
    g = m.graph
    needed = set()
    pool = [e for e in m.intermediates.values() if e is not None]
    pool += [e for e in m.performance.values() if e is not None]
    for e in pool:
        for v in e.variables():
            info = _plain_var(E.var(v))
            if info and info[0] == "C" and info[1] in g.nets:
                needed.add(info[1])
    for net in sorted(needed):
        terms = [dev.pin_capacitance_expr(d, role) for d, role in g.pins_at(net)]
        m.intermediates[f"C[{net}]"] = E.add(*terms) if terms else E.const(0.0)
        m.units[f"C[{net}]"] = "F"


def _gen_separations(m: CircuitModel):
    ten = E.const(10.0)
    for name in list(m._ndps) + list(m._zeros) + (["f_pz"] if "f_pz" in m.intermediates else []):  # type: ignore[attr-defined]
        m.separations.append(
            Constraint(
                "pole-separation",
                5,
                "gt",
                E.div(E.var(name), E.var("f_dp")),
                ten,
                (name,),
            )
        )


def _canonicalize_all(m: CircuitModel):
    memo: dict = {}
    m.kcl = {k: E.canonicalize(v, memo) for k, v in m.kcl.items()}
    m.kvl = {k: E.canonicalize(v, memo) for k, v in m.kvl.items()}
    m.device_eqs = {k: E.canonicalize(v, memo) for k, v in m.device_eqs.items()}
    m.intermediates = {k: E.canonicalize(v, memo) for k, v in m.intermediates.items()}
    m.performance = {
        k: (E.canonicalize(v, memo) if v is not None else None)
        for k, v in m.performance.items()
    }
    m.region = [_canon_constraint(c, memo) for c in m.region]
    m.symmetry = [_canon_constraint(c, memo) for c in m.symmetry]
    m.behavioral = [_canon_constraint(c, memo) for c in m.behavioral]
    m.separations = [_canon_constraint(c, memo) for c in m.separations]


def _canon_constraint(c: Constraint, memo) -> Constraint:
    return Constraint(
        c.kind,
        c.level,
        c.relation,
        E.canonicalize(c.lhs, memo),
        E.canonicalize(c.rhs, memo),
        c.provenance,
    )

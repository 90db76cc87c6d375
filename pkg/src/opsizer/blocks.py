"""Hierarchical functional-block recognition.

Pin-connection analysis over the circuit graph, bottom up:

  level 1  devices: normal transistor (nt), diode transistor (dt), cap
  level 2  structures: voltage/current bias (vb/cb), current mirrors
           (cm, cascode ccm), differential pairs (dp, cascode cdp,
           folded-cascode fcdp) with gate-connected couples (gcc),
           analog inverters (inv)
  level 3  stage subblocks: transconductor (tc_s/tc_c/tc_cmfb/tc_inv),
           load parts, stage bias
  level 4  op-amp subblocks: amplification stages, circuit bias b_O,
           compensation (c_C) and load (c_L) capacitors
  level 5  the op-amp itself (single-output / fully-differential /
           symmetrical)

Recognition is deterministic and uses structural tie-breaks (port
attachment, diode anchoring) so that renaming devices or nets yields an
isomorphic result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .netlist import CircuitGraph, Device

__all__ = ["RecognitionError", "FunctionalBlock", "Stage", "FunctionalBlockTree", "decompose"]


class RecognitionError(ValueError):
    pass


@dataclass(frozen=True)
class FunctionalBlock:
    id: str
    level: int
    type: str
    members: tuple[str, ...]  # device names (or child block ids at level 5)
    pins: dict[str, str] = field(default_factory=dict)


@dataclass
class Stage:
    """One amplification stage with its subblocks."""

    name: str  # a1, a2 / a2_1, a2_2, a3, a_cmfb
    kind: str  # tc_s | tc_c | tc_cmfb | tc_inv
    tc: list[str]
    dp_pairs: list[tuple[str, str]]  # (in1-side, in2-side) per doping path
    gcc_pairs: list[tuple[str, str]]  # aligned with dp_pairs where present
    cascodes: list[str]  # post-input tc chain of an inverting stage
    bias: list[str]
    bias_kind: str | None  # vb | cb | None
    loads: list[list[str]]  # stacks, each ordered output -> rail
    fold_supplies: list[str]
    input_nets: list[str]
    outputs: list[str]  # outputs[0] is the gain net
    signal_out: str
    tail_nets: list[str]
    branch_terminals: dict[str, str]  # dp member -> branch terminal net
    is_second_dual: bool = False
    compensated_by: str | None = None  # c_C capacitor name


@dataclass
class FunctionalBlockTree:
    graph: CircuitGraph
    opamp_class: str  # single_output | fully_differential | symmetrical
    hl1: dict[str, str]  # device -> nt | dt | cap
    blocks: list[FunctionalBlock]
    stages: list[Stage]
    rep_second: str | None  # name of the representative second stage
    b_o: list[str]
    c_c: list[str]
    c_l: list[str]
    bias_groups: list[tuple[str, str, tuple[str, ...], tuple[str, ...]]]
    # (net, doping, anchor dts, cb followers)
    cb_anchor: dict[str, str]  # cb device -> anchor dt
    dp_members: set[str] = field(default_factory=set)
    gcc_members: set[str] = field(default_factory=set)
    ccm_blocks: list[tuple[str, str, str, str]] = field(default_factory=list)
    # (vb drain transistor, vb source transistor, cb drain, cb source)

    def stage(self, name: str) -> Stage:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    def first_stage(self) -> Stage:
        return self.stages[0]

    def second_stages(self) -> list[Stage]:
        return [s for s in self.stages if s.name.startswith("a2")]

    def amp_stage_chain(self) -> list[Stage]:
        """a1 .. an along the signal path; dual second stages collapse to
        the representative one; the CMFB stage is excluded."""
        out = [self.first_stage()]
        for s in self.stages[1:]:
            if s.kind == "tc_cmfb":
                continue
            if s.name.startswith("a2") and s.name != (self.rep_second or s.name):
                continue
            out.append(s)
        return out

    def cmfb_stage(self) -> Stage | None:
        for s in self.stages:
            if s.kind == "tc_cmfb":
                return s
        return None


# ---------------------------------------------------------------------------

def _dt(d: Device) -> bool:
    return d.is_mosfet() and d.g == d.d


def _gate_hosts_dt(g: CircuitGraph, hl1, net: str, doping: str | None = None):
    for dev, role in g.pins_at(net):
        if role == "d" and dev.is_mosfet() and hl1.get(dev.name) == "dt":
            if doping is None or dev.doping == doping:
                return dev
    return None


def _gates_only(g: CircuitGraph, net: str) -> bool:
    return all(role == "g" for _, role in g.pins_at(net))


def decompose(g: CircuitGraph) -> FunctionalBlockTree:
    """Full HL1..HL5 decomposition of a basic op-amp."""
    rails = set(g.rails())

    # ---- HL1
    hl1: dict[str, str] = {}
    for d in g.devices:
        hl1[d.name] = "cap" if not d.is_mosfet() else ("dt" if _dt(d) else "nt")

    mosfets = {d.name: d for d in g.mosfets()}
    byname = {d.name: d for d in g.devices}

    # ---- differential pairs: same doping, shared non-rail source net,
    # distinct gate nets.
    dps: list[tuple[str, str]] = []
    dp_members: set[str] = set()
    names = sorted(mosfets)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            da, db = mosfets[a], mosfets[b]
            if da.doping != db.doping or da.s != db.s or da.s in rails:
                continue
            if da.g == db.g or hl1[a] == "dt" or hl1[b] == "dt":
                continue
            if a in dp_members or b in dp_members:
                continue
            dps.append((a, b))
            dp_members.update((a, b))
    if not any(
        {mosfets[a].g, mosfets[b].g} == {g.ports["in1"], g.ports["in2"]} for a, b in dps
    ):
        raise RecognitionError("no differential pair at the op-amp inputs; not a supported op-amp")

    # ---- gate-connected couples stacked on dp drains
    gccs: list[tuple[str, str, tuple[str, str]]] = []  # (a, b, dp pair)
    gcc_members: set[str] = set()
    dp_drains = {mosfets[t].d: (pair, t) for pair in dps for t in pair}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            da, db = mosfets[a], mosfets[b]
            if da.doping != db.doping or da.g != db.g or da.s == db.s:
                continue
            if a in dp_members or b in dp_members or a in gcc_members or b in gcc_members:
                continue
            if da.s in dp_drains and db.s in dp_drains:
                pa, ta = dp_drains[da.s]
                pb, _tb = dp_drains[db.s]
                if pa != pb:
                    continue
                # orient the couple to the dp pair order
                if ta == pa[0]:
                    gccs.append((a, b, pa))
                else:
                    gccs.append((b, a, pa))
                gcc_members.update((a, b))

    # ---- bias overlay: vb anchors and their same-doping followers
    bias_groups = []
    cb_anchor: dict[str, str] = {}
    anchor_nets = {}
    for n in sorted(mosfets):
        d = mosfets[n]
        if hl1[n] == "dt":
            anchor_nets.setdefault((d.g, d.doping), []).append(n)
    for (net, doping), anchors in sorted(anchor_nets.items()):
        followers = []
        for n in sorted(mosfets):
            d = mosfets[n]
            if hl1[n] == "dt" or d.doping != doping or d.g != net:
                continue
            followers.append(n)
            cb_anchor[n] = anchors[0]
        bias_groups.append((net, doping, tuple(anchors), tuple(followers)))

    # ---- cascode current mirrors (stacked diode pair + mirrored stack)
    ccm_blocks = []
    for n in sorted(mosfets):
        top = mosfets[n]
        if hl1[n] != "dt" or top.s in rails:
            continue
        bot = next(
            (
                mosfets[m]
                for m in sorted(mosfets)
                if hl1[m] == "dt" and mosfets[m].d == top.s and mosfets[m].doping == top.doping
            ),
            None,
        )
        if bot is None:
            continue
        cb_top = next(
            (
                mosfets[m]
                for m in sorted(mosfets)
                if hl1[m] == "nt"
                and mosfets[m].doping == top.doping
                and mosfets[m].g == top.g
                and m not in dp_members
                and m not in gcc_members
            ),
            None,
        )
        if cb_top is None:
            continue
        cb_bot = next(
            (
                mosfets[m]
                for m in sorted(mosfets)
                if hl1[m] == "nt"
                and mosfets[m].doping == bot.doping
                and mosfets[m].g == bot.g
                and mosfets[m].d == cb_top.s
            ),
            None,
        )
        if cb_bot is None:
            continue
        ccm_blocks.append((top.name, bot.name, cb_top.name, cb_bot.name))

    # ---- stages
    stages, b_o, claimed = _build_stages(g, hl1, mosfets, dps, gccs, dp_members, gcc_members)

    # leftover mosfets belong to the circuit bias web
    for n in sorted(mosfets):
        if n not in claimed:
            b_o.append(n)

    # ---- capacitors: compensation vs load
    c_c, c_l = [], []
    stage_io = {}
    for s in stages:
        for net in s.input_nets:
            stage_io.setdefault(net, set()).add(("in", s.name))
        for net in s.outputs + [s.signal_out]:
            stage_io.setdefault(net, set()).add(("out", s.name))
    for d in g.capacitors():
        n1, n2 = d.pins
        roles1 = stage_io.get(n1, set())
        roles2 = stage_io.get(n2, set())
        bridged = None
        for s in stages:
            nets = {n1, n2}
            if set(s.input_nets) & nets and ({s.signal_out} | set(s.outputs)) & nets:
                bridged = s
                break
        if bridged is not None:
            c_c.append(d.name)
            bridged.compensated_by = d.name
        elif g.ports["out"] in (n1, n2) or g.ports.get("out2") in (n1, n2):
            c_l.append(d.name)
        else:
            raise RecognitionError(
                f"capacitor {d.name} matches neither the compensation nor the load pattern"
            )

    # ---- HL5 classification
    seconds = [s for s in stages if s.name.startswith("a2")]
    if g.ports.get("out2"):
        opamp_class = "fully_differential"
    elif len(seconds) == 2:
        opamp_class = "symmetrical"
    else:
        opamp_class = "single_output"
    n_amp = len([s for s in stages if s.kind != "tc_cmfb"]) - (1 if len(seconds) == 2 else 0)
    if n_amp > 3:
        raise RecognitionError(f"unsupported topology: {n_amp} amplification stages")

    rep_second = None
    if seconds:
        rep_second = seconds[-1].name
        if len(seconds) == 2:
            # the representative is the one whose output feeds a later stage
            later_inputs = {
                n for s in stages for n in s.input_nets if s.name > seconds[-1].name
            }
            for s in seconds:
                if (set(s.outputs) | {s.signal_out}) & later_inputs:
                    rep_second = s.name
            for s in seconds:
                s.is_second_dual = True
        # the first stage's signal output is the net feeding the
        # (representative) next stage
        rep = next(s for s in stages if s.name == rep_second)
        first = stages[0]
        if rep.input_nets and rep.input_nets[0] in first.outputs:
            first.signal_out = rep.input_nets[0]

    tree = FunctionalBlockTree(
        graph=g,
        opamp_class=opamp_class,
        hl1=hl1,
        blocks=[],
        stages=stages,
        rep_second=rep_second,
        b_o=b_o,
        c_c=c_c,
        c_l=c_l,
        bias_groups=bias_groups,
        cb_anchor=cb_anchor,
        dp_members=dp_members,
        gcc_members=gcc_members,
        ccm_blocks=ccm_blocks,
    )
    _classify_stage_bias(tree)
    tree.blocks = _report_blocks(g, hl1, stages, dps, gccs, ccm_blocks, bias_groups, b_o, c_c, c_l)
    return tree


def _chain_down(g: CircuitGraph, hl1, mosfets, start_dev: Device, rails, claimed) -> list[str]:
    """Drain-source chain from a device to a rail (following sources for
    the start device's orientation toward the rail side)."""
    chain = [start_dev.name]
    cur = start_dev
    net = cur.s if cur.d != cur.s else cur.s
    # walk down through the source side until a rail
    net = cur.s
    while net not in rails:
        nxt = None
        for m in sorted(mosfets):
            d = mosfets[m]
            if m in chain or m in claimed:
                continue
            if d.d == net:
                nxt = d
                break
        if nxt is None:
            break
        chain.append(nxt.name)
        net = nxt.s
    return chain


def _build_stages(g, hl1, mosfets, dps, gccs, dp_members, gcc_members):
    rails = set(g.rails())
    in1, in2 = g.ports["in1"], g.ports["in2"]
    out_port = g.ports["out"]
    claimed: set[str] = set()
    b_o: list[str] = []

    # ibias diode and everything reachable along pure bias branches is
    # claimed as circuit bias later (leftovers); claim the diode now.
    bias_diode = next(
        (n for n in sorted(mosfets) if hl1[n] == "dt" and mosfets[n].g == g.ports["ibias"]), None
    )
    if bias_diode:
        b_o.append(bias_diode)
        claimed.add(bias_diode)

    # ---- stage 1
    input_dps = [
        p for p in dps if {mosfets[p[0]].g, mosfets[p[1]].g} == {in1, in2}
    ]
    input_dps.sort(key=lambda p: mosfets[p[0]].doping)  # n before p
    dp_pairs = []
    for a, b in input_dps:
        if mosfets[a].g == in1:
            dp_pairs.append((a, b))
        else:
            dp_pairs.append((b, a))

    tc = [t for p in dp_pairs for t in p]
    gcc_pairs = []
    for ga, gb, dpair in gccs:
        if dpair in input_dps or tuple(reversed(dpair)) in input_dps:
            # align couple sides with dp (in1, in2) order
            pa = next(p for p in dp_pairs if set(p) == set(dpair))
            if mosfets[ga].s == mosfets[pa[0]].d:
                gcc_pairs.append((ga, gb))
            else:
                gcc_pairs.append((gb, ga))
    gcc_flat = [t for p in gcc_pairs for t in p]
    tc_all = tc + gcc_flat
    claimed.update(tc_all)

    kind = "tc_s"
    if len(dp_pairs) == 2:
        kind = "tc_c"

    tail_nets = sorted({mosfets[t].s for p in dp_pairs for t in p})
    bias = []
    for tn in tail_nets:
        for m in sorted(mosfets):
            d = mosfets[m]
            if m not in claimed and d.d == tn and d.s in rails:
                bias.append(m)
                claimed.add(m)

    # branch terminals per dp member
    terminals: dict[str, str] = {}
    for p, gp in zip(dp_pairs, gcc_pairs + [None] * (len(dp_pairs) - len(gcc_pairs))):
        for side in (0, 1):
            t = p[side]
            if gp is not None:
                terminals[t] = mosfets[gp[side]].d
            else:
                terminals[t] = mosfets[t].d

    multi = _has_next_tc(g, hl1, mosfets, set(terminals.values()), claimed, dp_members)
    outputs: list[str] = []
    if gcc_pairs and not multi:
        outputs = [out_port]
    elif dp_pairs:
        outputs = [terminals[dp_pairs[0][0]], terminals[dp_pairs[0][1]]]
        if len(set(outputs)) == 1:
            outputs = [outputs[0]]
    if not outputs:
        raise RecognitionError("first stage has no output net")

    # fold supplies (rail sources at gcc source nets)
    fold_supplies = []
    for ga, gb in gcc_pairs:
        for t in (ga, gb):
            src_net = mosfets[t].s
            for m in sorted(mosfets):
                d = mosfets[m]
                if m not in claimed and d.d == src_net and d.s in rails:
                    fold_supplies.append(m)
                    claimed.add(m)

    stage1 = Stage(
        name="a1",
        kind=kind,
        tc=tc_all,
        dp_pairs=dp_pairs,
        gcc_pairs=gcc_pairs,
        cascodes=[],
        bias=bias,
        bias_kind=None,
        loads=[],
        fold_supplies=fold_supplies,
        input_nets=[in1, in2],
        outputs=outputs,
        signal_out=outputs[-1],
        tail_nets=tail_nets,
        branch_terminals=terminals,
    )
    stages = [stage1]
    load_nets = sorted(set(terminals.values()))
    _absorb_loads(g, hl1, mosfets, stage1, load_nets, rails, claimed, set())

    # ---- subsequent stages by signal-level BFS
    frontier = list(dict.fromkeys(stage1.outputs))
    level = 1
    stage_at: dict[str, Stage] = {net: stage1 for net in stage1.outputs}
    while frontier and level < 6:
        candidates = [
            m
            for m in sorted(mosfets)
            if m not in claimed
            and hl1[m] == "nt"
            and mosfets[m].g in frontier
            and m not in dp_members
        ]
        if not candidates:
            break
        new_nets: list[str] = []
        opened: list[Stage] = []
        for m in candidates:
            if m in claimed:
                continue
            d = mosfets[m]
            if d.d in stage_at and _gate_hosts_dt(g, hl1, d.g, d.doping) is None:
                # genuine transconductor landing on an existing stage net:
                # it takes over as that stage's input device
                st = stage_at[d.d]
                if st.name != "a1":
                    demoted = st.tc + st.cascodes
                    for t in demoted:
                        st.loads.append([t])
                    st.tc, st.cascodes = [m], []
                    st.kind = "tc_inv"
                    st.input_nets = [d.g]
                    claimed.add(m)
                    continue
            if d.d in stage_at and _gate_hosts_dt(g, hl1, d.g, d.doping) is not None:
                # mirror output feeding an existing stage: rail block there
                st = stage_at[d.d]
                st.loads.append(
                    _chain_down(g, hl1, mosfets, d, set(g.rails()), claimed)
                )
                claimed.update(st.loads[-1])
                continue
            # open a new inverting stage
            chain = [m]
            claimed.add(m)
            term = d.d
            while True:
                casc = None
                for x in sorted(mosfets):
                    dx = mosfets[x]
                    if (
                        x not in claimed
                        and dx.doping == d.doping
                        and dx.s == term
                        and dx.g not in frontier
                        and hl1[x] == "nt"
                    ):
                        casc = x
                        break
                if casc is None:
                    break
                chain.append(casc)
                claimed.add(casc)
                term = mosfets[casc].d
            st = Stage(
                name="",
                kind="tc_inv",
                tc=list(chain),
                dp_pairs=[],
                gcc_pairs=[],
                cascodes=chain[1:],
                bias=[],
                bias_kind=None,
                loads=[],
                fold_supplies=[],
                input_nets=[d.g],
                outputs=[term],
                signal_out=term,
                tail_nets=[],
                branch_terminals={},
            )
            stages.append(st)
            opened.append(st)
            stage_at[term] = st
            new_nets.append(term)
        # second phase: collect rail blocks at the new terminals
        signal_nets = set(stage_at) | set(frontier)
        for st in opened:
            _absorb_loads(g, hl1, mosfets, st, st.outputs, rails, claimed, signal_nets)
        frontier = list(dict.fromkeys(new_nets))
        level += 1

    # ---- name the inverting stages by signal depth
    inv_stages = [s for s in stages if s.name == ""]
    seconds = [s for s in inv_stages if set(s.input_nets) & set(stage1.outputs)]
    if len(seconds) == 2:
        order = {stage1.outputs[0]: "a2_1", stage1.outputs[1]: "a2_2"}
        for s in seconds:
            s.name = order[s.input_nets[0]]
        rest = [s for s in inv_stages if s not in seconds]
        for i, s in enumerate(sorted(rest, key=lambda s: s.input_nets[0])):
            s.name = f"a{3 + i}"
    else:
        for i, s in enumerate(inv_stages):
            s.name = f"a{2 + i}"
    stages.sort(key=lambda s: s.name)

    # ---- CMFB stage: unclaimed dps sensing the output
    cm_dps = [
        p
        for p in dps
        if p[0] not in claimed
        and p[1] not in claimed
        and (
            out_port in (mosfets[p[0]].g, mosfets[p[1]].g)
            or g.ports.get("out2") in (mosfets[p[0]].g, mosfets[p[1]].g)
        )
    ]
    if cm_dps:
        tc_devs = [t for p in cm_dps for t in p]
        claimed.update(tc_devs)
        tails = sorted({mosfets[t].s for t in tc_devs})
        cbias = []
        for tn in tails:
            for m in sorted(mosfets):
                dd = mosfets[m]
                if m not in claimed and dd.d == tn and dd.s in rails:
                    cbias.append(m)
                    claimed.add(m)
        drains = sorted({mosfets[t].d for t in tc_devs})
        st = Stage(
            name="a_cmfb",
            kind="tc_cmfb",
            tc=tc_devs,
            dp_pairs=[_orient_cmfb(mosfets, p, out_port) for p in cm_dps],
            gcc_pairs=[],
            cascodes=[],
            bias=cbias,
            bias_kind=None,
            loads=[],
            fold_supplies=[],
            input_nets=[out_port],
            outputs=[],
            signal_out="",
            tail_nets=tails,
            branch_terminals={t: mosfets[t].d for t in tc_devs},
        )
        _absorb_loads(g, hl1, mosfets, st, drains, rails, claimed, set(stage_at))
        # output: the drain net not anchored by a diode (the high-impedance side)
        outs = [n for n in drains if _gate_hosts_dt(g, hl1, n, None) is None]
        anchored = [n for n in drains if n not in outs]
        st.outputs = outs or drains
        st.signal_out = st.outputs[0]
        st.input_nets = [out_port]
        stages.append(st)

    return stages, b_o, claimed


def _orient_cmfb(mosfets, pair, out_port):
    a, b = pair
    if mosfets[a].g == out_port:
        return (a, b)
    if mosfets[b].g == out_port:
        return (b, a)
    return (a, b)


def _has_next_tc(g, hl1, mosfets, nets, claimed, dp_members) -> bool:
    for m in sorted(mosfets):
        d = mosfets[m]
        if m not in claimed and m not in dp_members and hl1[m] == "nt" and d.g in nets:
            return True
    return False


def _absorb_loads(g, hl1, mosfets, stage, nets, rails, claimed, signal_nets):
    """Collect rail-going stacks at the given nets into the stage."""
    for net in nets:
        for m in sorted(mosfets):
            d = mosfets[m]
            if m in claimed or d.d != net:
                continue
            if hl1[m] == "nt":
                gnet = d.g
                anchored = _gate_hosts_dt(g, hl1, gnet, d.doping) is not None
                bias_gated = (
                    anchored
                    or _gate_hosts_dt(g, hl1, gnet, None) is not None
                    or _gates_only(g, gnet)
                )
                if not bias_gated and gnet in signal_nets:
                    continue  # potential transconductor of a later stage
            chain = _chain_down(g, hl1, mosfets, d, rails, claimed)
            claimed.update(chain)
            stage.loads.append(chain)


def _classify_stage_bias(tree: FunctionalBlockTree):
    """Split each stage's rail blocks into stage bias vs load.

    A rail block is a stage bias when it is a diode, or a follower whose
    anchor diode is part of the circuit-bias web or is itself a stage
    bias; followers anchored to load diodes stay loads.
    """
    g = tree.graph
    mosfets = {d.name: d for d in g.mosfets()}
    bias_web = set(tree.b_o)
    stage_bias_dts: set[str] = set()
    load_dts: set[str] = set()

    for st in tree.stages:
        if st.kind != "tc_inv":
            # tail current sources are the stage bias by construction
            st.bias_kind = "cb" if st.bias else None
            for stack in st.loads:
                for t in stack:
                    if tree.hl1.get(t) == "dt":
                        load_dts.add(t)
            continue

    for st in tree.stages:
        if st.kind != "tc_inv":
            continue
        keep_loads: list[list[str]] = []
        for stack in st.loads:
            head = stack[0]
            dev = mosfets.get(head)
            if dev is None:
                keep_loads.append(stack)
                continue
            if tree.hl1.get(head) == "dt":
                st.bias.extend(stack)
                st.bias_kind = "vb"
                stage_bias_dts.add(head)
            else:
                anchor = tree.cb_anchor.get(head)
                if anchor is not None and (anchor in bias_web or anchor in stage_bias_dts):
                    st.bias.extend(stack)
                    st.bias_kind = "cb"
                else:
                    keep_loads.append(stack)
                    if anchor is not None:
                        load_dts.add(anchor)
        st.loads = keep_loads


def _report_blocks(g, hl1, stages, dps, gccs, ccm_blocks, bias_groups, b_o, c_c, c_l):
    """Flat block list for the analyze report."""
    blocks: list[FunctionalBlock] = []
    counter = {}

    def emit(level, typ, members, pins=None):
        counter[typ] = counter.get(typ, 0) + 1
        blocks.append(
            FunctionalBlock(
                id=f"{typ}{counter[typ]}",
                level=level,
                type=typ,
                members=tuple(members),
                pins=pins or {},
            )
        )

    for name in sorted(hl1):
        emit(1, hl1[name], (name,))

    ccm_members = {t for blk in ccm_blocks for t in blk}
    gcc_by_dp = {tuple(sorted(dpair)): (a, b) for a, b, dpair in gccs}
    for a, b in dps:
        key = tuple(sorted((a, b)))
        if key in gcc_by_dp:
            ga, gb = gcc_by_dp[key]
            da = g.device(a)
            ga_dev = g.device(ga)
            typ = "cdp" if da.doping == ga_dev.doping else "fcdp"
            emit(2, typ, sorted((a, b, ga, gb)))
            emit(2, "gcc", sorted((ga, gb)))
        else:
            emit(2, "dp", sorted((a, b)))
    for blk in ccm_blocks:
        emit(2, "ccm", sorted(blk))
    taken = (
        {t for a, b in dps for t in (a, b)}
        | {t for a, b, _ in gccs for t in (a, b)}
        | ccm_members
    )
    # analog inverters: opposite-doping rail-sourced pair at a common drain
    mosfets = {d.name: d for d in g.mosfets()}
    rails = set(g.rails())
    invs = []
    for st in stages:
        if st.kind == "tc_inv" and len(st.tc) == 1:
            t = st.tc[0]
            other = None
            for stack in [st.bias] + st.loads:
                for x in stack:
                    dx = mosfets.get(x)
                    if dx is not None and dx.doping != mosfets[t].doping and dx.s in rails and dx.d == mosfets[t].d:
                        other = x
            if other and t not in taken and other not in taken:
                emit(2, "inv", sorted((t, other)))
                taken.update((t, other))
                invs.append((t, other))
    for net, doping, anchors, followers in bias_groups:
        members = [m for m in anchors + followers if m not in taken]
        if not members:
            continue
        if followers and any(f not in taken for f in followers):
            emit(2, "cm", sorted(set(members)), {"gate": net})
        else:
            emit(2, "vb", sorted(set(members)), {"gate": net})
        taken.update(members)
    for name in sorted(mosfets):
        if name not in taken:
            emit(2, "vb" if hl1[name] == "dt" else "cb", (name,))

    for st in stages:
        emit(3, st.kind, tuple(st.tc), {"out": st.signal_out or (st.outputs[0] if st.outputs else "")})
        if st.bias:
            emit(3, f"b_s_{st.bias_kind or 'cb'}", tuple(st.bias))
        for i, stack in enumerate(st.loads, start=1):
            emit(3, "l_p", tuple(stack), {"at": st.name})
        atyp = {"tc_s": "a_s", "tc_c": "a_c", "tc_cmfb": "a_cmfb", "tc_inv": "a_inv"}[st.kind]
        members = st.tc + st.bias + [t for s in st.loads for t in s] + st.fold_supplies
        emit(4, atyp, tuple(members), {"name": st.name})
    if b_o:
        emit(4, "b_O", tuple(sorted(b_o)))
    for c in c_c:
        emit(4, "c_C", (c,))
    for c in c_l:
        emit(4, "c_L", (c,))
    return blocks

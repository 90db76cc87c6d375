"""Netlist parsing and the in-memory circuit graph.

Line-oriented SPICE subset:

    M<name> <d> <g> <s> <b> <nmos|pmos> [W=<val>] [L=<val>]
    C<name> <n1> <n2> [C=<val>]
    .port <in1|in2|out|out2|vdd|vss|ibias> <net>
    * comment

Values accept SI suffixes (u, n, p, f, m, k). A mosfet without W/L (or a
capacitor without C) leaves that quantity as a sizing variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

__all__ = [
    "Device",
    "CircuitGraph",
    "NetlistError",
    "parse_netlist",
    "serialize_netlist",
    "validate",
]

MANDATORY_PORTS = ("in1", "in2", "out", "vdd", "vss", "ibias")
PORT_ROLES = MANDATORY_PORTS + ("out2",)

_SI = {"k": 1e3, "m": 1e-3, "u": 1e-6, "n": 1e-9, "p": 1e-12, "f": 1e-15}


class NetlistError(ValueError):
    pass


def parse_value(tok: str) -> float:
    t = tok.strip().lower()
    scale = 1.0
    if t and t[-1] in _SI:
        scale = _SI[t[-1]]
        t = t[:-1]
    try:
        return float(t) * scale
    except ValueError:
        raise NetlistError(f"bad numeric value {tok!r}") from None


def format_value(v: float) -> str:
    for suf, s in (("f", 1e-15), ("p", 1e-12), ("n", 1e-9), ("u", 1e-6), ("m", 1e-3)):
        x = v / s
        if 1.0 <= abs(x) < 1000.0:
            return f"{x:g}{suf}"
    return f"{v:g}"


@dataclass(frozen=True)
class Device:
    """A mosfet (pins d,g,s,b) or capacitor (pins t1,t2)."""

    name: str
    kind: str  # "mosfet" | "capacitor"
    pins: tuple[str, ...]
    doping: str | None = None  # "n" | "p", mosfets only
    w: float | None = None
    l: float | None = None
    c: float | None = None

    @property
    def d(self) -> str:
        return self.pins[0]

    @property
    def g(self) -> str:
        return self.pins[1]

    @property
    def s(self) -> str:
        return self.pins[2]

    @property
    def b(self) -> str:
        return self.pins[3]

    def is_mosfet(self) -> bool:
        return self.kind == "mosfet"


@dataclass(frozen=True)
class CircuitGraph:
    """Validated bipartite device/net connection graph with named ports.

    Immutable after construction; safe to share between threads.
    """

    devices: tuple[Device, ...]
    nets: tuple[str, ...]
    ports: dict[str, str]
    bias_sink_doping: str | None = None

    def device(self, name: str) -> Device:
        for d in self.devices:
            if d.name == name:
                return d
        raise KeyError(name)

    def mosfets(self) -> list[Device]:
        return [d for d in self.devices if d.is_mosfet()]

    def capacitors(self) -> list[Device]:
        return [d for d in self.devices if not d.is_mosfet()]

    def pins_at(self, net: str) -> list[tuple[Device, str]]:
        """All (device, pin-role) pairs touching the net."""
        out = []
        for d in self.devices:
            roles = ("d", "g", "s", "b") if d.is_mosfet() else ("t1", "t2")
            for role, n in zip(roles, d.pins):
                if n == net:
                    out.append((d, role))
        return out

    @property
    def vdd(self) -> str:
        return self.ports["vdd"]

    @property
    def vss(self) -> str:
        return self.ports["vss"]

    def rails(self) -> tuple[str, str]:
        return (self.ports["vdd"], self.ports["vss"])


def parse_netlist(text: str) -> CircuitGraph:
    devices: list[Device] = []
    names: set[str] = set()
    nets: dict[str, None] = {}
    ports: dict[str, str] = {}

    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("*", 1)[0].strip() if raw.lstrip().startswith("*") else raw.strip()
        if raw.lstrip().startswith("*") or not line:
            continue
        toks = line.split()
        head = toks[0]
        if head.startswith(".port"):
            if len(toks) != 3:
                raise NetlistError(f"line {ln}: .port expects '<role> <net>'")
            role, net = toks[1], toks[2]
            if role not in PORT_ROLES:
                raise NetlistError(f"line {ln}: undeclared port role {role!r}")
            if role in ports:
                raise NetlistError(f"line {ln}: duplicate port role {role!r}")
            ports[role] = net
            nets.setdefault(net)
            continue
        if head[0].upper() == "M":
            if len(toks) < 6:
                raise NetlistError(f"line {ln}: mosfet needs 4 pins and a doping")
            name = head[1:]
            pins = tuple(toks[1:5])
            model = toks[5].lower()
            if model not in ("nmos", "pmos"):
                raise NetlistError(f"line {ln}: expected nmos|pmos, got {toks[5]!r}")
            kv = _keyvals(toks[6:], ln, allowed=("W", "L"))
            dev = Device(
                name=name,
                kind="mosfet",
                pins=pins,
                doping="n" if model == "nmos" else "p",
                w=kv.get("W"),
                l=kv.get("L"),
            )
        elif head[0].upper() == "C":
            if len(toks) < 3:
                raise NetlistError(f"line {ln}: capacitor needs 2 pins")
            name = head[1:]
            pins = tuple(toks[1:3])
            kv = _keyvals(toks[3:], ln, allowed=("C",))
            dev = Device(name=name, kind="capacitor", pins=pins, c=kv.get("C"))
        else:
            raise NetlistError(f"line {ln}: unrecognized element {head!r}")
        if not dev.name:
            raise NetlistError(f"line {ln}: empty device name")
        if dev.name in names:
            raise NetlistError(f"line {ln}: duplicate device name {dev.name!r}")
        names.add(dev.name)
        for n in dev.pins:
            nets.setdefault(n)
        devices.append(dev)

    missing = [p for p in MANDATORY_PORTS if p not in ports]
    if missing:
        raise NetlistError(f"missing mandatory port(s): {', '.join(missing)}")
    if not devices:
        raise NetlistError("netlist declares no devices")

    # Deterministic regardless of line order.
    devices.sort(key=lambda d: d.name)
    graph = CircuitGraph(
        devices=tuple(devices),
        nets=tuple(sorted(nets)),
        ports=dict(sorted(ports.items())),
        bias_sink_doping=_bias_sink_doping(devices, ports),
    )
    return graph


def _keyvals(toks, ln, allowed):
    out = {}
    for t in toks:
        if "=" not in t:
            raise NetlistError(f"line {ln}: expected key=value, got {t!r}")
        k, v = t.split("=", 1)
        if k not in allowed:
            raise NetlistError(f"line {ln}: unknown key {k!r}")
        out[k] = parse_value(v)
    return out


def _bias_sink_doping(devices, ports) -> str | None:
    net = ports.get("ibias")
    for d in devices:
        if d.is_mosfet() and d.g == d.d == net:
            return d.doping
    return None


def serialize_netlist(g: CircuitGraph) -> str:
    lines = []
    for role, net in sorted(g.ports.items()):
        lines.append(f".port {role} {net}")
    for d in g.devices:
        if d.is_mosfet():
            model = "nmos" if d.doping == "n" else "pmos"
            s = f"M{d.name} {' '.join(d.pins)} {model}"
            if d.w is not None:
                s += f" W={format_value(d.w)}"
            if d.l is not None:
                s += f" L={format_value(d.l)}"
        else:
            s = f"C{d.name} {' '.join(d.pins)}"
            if d.c is not None:
                s += f" C={format_value(d.c)}"
        lines.append(s)
    return "\n".join(lines) + "\n"


def validate(g: CircuitGraph) -> list[str]:
    """Diagnostics for CircuitGraph invariants; empty list means valid."""
    diags: list[str] = []
    if g.ports["vdd"] == g.ports["vss"]:
        diags.append("vdd and vss must differ")
    if g.ports["in1"] == g.ports["in2"]:
        diags.append("in1 and in2 must differ")

    pin_count: dict[str, int] = {n: 0 for n in g.nets}
    for d in g.devices:
        for n in d.pins:
            pin_count[n] += 1
    port_nets = set(g.ports.values())  # ports carry an external connection
    for net, cnt in sorted(pin_count.items()):
        if cnt < 2 and net not in port_nets:
            diags.append(f"net {net} touches {cnt} pin{'s' if cnt != 1 else ''}")

    # Connectivity with rails treated as ordinary nets.
    if g.devices:
        adj: dict[str, set] = {}
        for d in g.devices:
            for n in d.pins:
                adj.setdefault(n, set()).add(d.name)
                adj.setdefault(d.name, set()).add(n)
        seen: set[str] = set()
        stack = [g.devices[0].name]
        while stack:
            x = stack.pop()
            if x in seen:
                continue
            seen.add(x)
            stack.extend(adj.get(x, ()))
        unreachable = sorted(n for n in pin_count if n not in seen)
        if unreachable:
            diags.append(f"graph is disconnected; unreachable nets: {', '.join(unreachable)}")

    if g.bias_sink_doping is None:
        diags.append("no diode-connected mosfet found at the ibias net")
    return diags

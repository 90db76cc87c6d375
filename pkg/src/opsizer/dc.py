"""DC operating-point solution of the basic circuit model.

Damped Newton iteration over the unknown node voltages (mid-rail start,
step damping 0.5 on residual increase, 200-iteration cap). When the
plain solve stalls, a deterministic source-stepping homotopy ramps the
supplies and the bias current up in stages, warm-starting each stage.

Gate-only nets (op-amp inputs, external bias nets) are voltage inputs,
not unknowns. The device model is evaluated piecewise (off / linear /
saturation, continuous at the boundaries); the requested region
assignment is checked afterwards and violations are reported, not
enforced.

The residual/Jacobian assembly runs in the compiled extension when
available and falls back to the numpy implementation otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .device import TechParams
from .netlist import CircuitGraph

try:  # pragma: no cover - exercised implicitly
    from . import _dckernel as _kernel

    KERNEL = "cython"
except ImportError:  # pragma: no cover
    from . import _dckernel_py as _kernel

    KERNEL = "python"

__all__ = ["OperatingPoint", "solve_dc", "KERNEL", "gate_only_nets"]

GMIN = 1e-12
RESIDUAL_TOL = 1e-9  # 1 nA
MAX_ITER = 200
DAMPING = 0.5
RAMP = (0.1, 0.2, 0.4, 0.7, 1.0)


@dataclass
class OperatingPoint:
    voltages: dict[str, float]
    devices: dict[str, dict[str, float]]  # name -> ids/vgs/vds/gm/gd
    converged: bool
    iterations: int
    residual: float
    region_violations: list[str] = field(default_factory=list)

    def bindings(self) -> dict[str, float]:
        """Variable bindings for model-expression evaluation."""
        b: dict[str, float] = {}
        for n, v in self.voltages.items():
            b[f"v[{n}]"] = v
        for t, d in self.devices.items():
            b[f"iDS[{t}]"] = d["ids"]
            b[f"vGS[{t}]"] = d["vgs"]
            b[f"vDS[{t}]"] = d["vds"]
            b[f"gm[{t}]"] = d["gm"]
            b[f"gd[{t}]"] = d["gd"]
        return b


def gate_only_nets(g: CircuitGraph) -> list[str]:
    """Nets touched only by gate pins: externally driven bias inputs."""
    out = []
    for net in g.nets:
        pins = g.pins_at(net)
        if pins and all(role == "g" for _, role in pins):
            out.append(net)
    return out


class _System:
    def __init__(self, g: CircuitGraph, tech: TechParams, geometry, bias, vcm):
        self.g = g
        self.tech = tech
        nets = list(g.nets)
        self.nets = nets
        self.index = {n: i for i, n in enumerate(nets)}
        mid = 0.5 * (tech.vdd + tech.vss)
        self.mid = mid

        fixed: dict[str, float] = {g.vdd: tech.vdd, g.vss: tech.vss}
        for net in gate_only_nets(g):
            if net in (g.ports["in1"], g.ports["in2"]):
                fixed[net] = vcm if vcm is not None else mid
            else:
                fixed[net] = bias.get(net, mid)
        for net, val in bias.items():
            fixed[net] = val
        self.fixed = fixed
        self.unknown = [n for n in nets if n not in fixed]
        self.rowmap = np.full(len(nets), -1, dtype=np.int64)
        for r, n in enumerate(self.unknown):
            self.rowmap[self.index[n]] = r
        self.nu = len(self.unknown)

        mosfets = g.mosfets()
        self.mosfets = mosfets
        self.dn = np.array([self.index[d.d] for d in mosfets], dtype=np.int64)
        self.gn = np.array([self.index[d.g] for d in mosfets], dtype=np.int64)
        self.sn = np.array([self.index[d.s] for d in mosfets], dtype=np.int64)
        self.ptype = np.array([0 if d.doping == "n" else 1 for d in mosfets], dtype=np.int64)
        self.kwl = np.empty(len(mosfets))
        self.vth = np.empty(len(mosfets))
        self.lam = np.empty(len(mosfets))
        for k, d in enumerate(mosfets):
            w = geometry.get(f"w[{d.name}]", d.w)
            l = geometry.get(f"l[{d.name}]", d.l)
            if w is None or l is None:
                raise ValueError(f"geometry unbound for {d.name}")
            self.kwl[k] = tech.mu_cox(d.doping) * w / l
            self.vth[k] = abs(tech.vth(d.doping))
            self.lam[k] = tech.lam(d.doping)

        self.inj_full = np.zeros(self.nu)
        r_ib = self.rowmap[self.index[g.ports["ibias"]]]
        if r_ib >= 0:
            self.inj_full[r_ib] = tech.ibias if g.bias_sink_doping == "n" else -tech.ibias

    def voltage_vector(self, scale: float, warm: np.ndarray | None) -> np.ndarray:
        v = np.empty(len(self.nets))
        vss = self.tech.vss
        for n in self.nets:
            if n in self.fixed:
                v[self.index[n]] = vss + scale * (self.fixed[n] - vss)
            else:
                v[self.index[n]] = vss + scale * (self.mid - vss)
        if warm is not None:
            for r, n in enumerate(self.unknown):
                v[self.index[n]] = warm[r]
        return v

    def assemble(self, v):
        return _kernel.assemble(
            v,
            self.dn,
            self.gn,
            self.sn,
            self.ptype,
            self.kwl,
            self.vth,
            self.lam,
            self.rowmap,
            self.nu,
            self.inj,
            GMIN,
        )

    def newton(self, v, max_iter=MAX_ITER, stall=None):
        res, jac = self.assemble(v)
        norm = float(np.max(np.abs(res))) if self.nu else 0.0
        iters = 0
        best = norm
        since_best = 0
        idx = np.array([self.index[n] for n in self.unknown], dtype=np.int64)
        for iters in range(1, max_iter + 1):
            if norm < RESIDUAL_TOL:
                return v, norm, iters, True
            try:
                dx = np.linalg.solve(jac, -res)
            except np.linalg.LinAlgError:
                dx = np.linalg.lstsq(jac, -res, rcond=None)[0]
            if not np.all(np.isfinite(dx)):
                dx = np.nan_to_num(dx)
            dx = np.clip(dx, -1.0, 1.0)
            step = 1.0
            while True:
                vt = v.copy()
                vt[idx] += step * dx
                res_t, jac_t = self.assemble(vt)
                norm_t = float(np.max(np.abs(res_t))) if self.nu else 0.0
                if norm_t <= norm or step < 1e-7:
                    v, res, jac, norm = vt, res_t, jac_t, norm_t
                    break
                step *= DAMPING
            if norm < 0.9 * best:
                best = norm
                since_best = 0
            else:
                since_best += 1
                if stall is not None and since_best >= stall:
                    break
        return v, norm, iters, norm < RESIDUAL_TOL


def solve_dc(
    g: CircuitGraph,
    tech: TechParams,
    geometry: dict[str, float],
    bias: dict[str, float] | None = None,
    vcm: float | None = None,
    region: str = "saturation",
    warm: dict[str, float] | None = None,
) -> OperatingPoint:
    """Solve the nodal system for the given geometry assignment.

    `geometry` binds w[..]/l[..] (meters); capacitors carry no DC
    current. `bias` pins gate-only net voltages; unspecified ones and
    the op-amp inputs default to mid-rail (`vcm`). `warm` seeds the
    iteration with node voltages from a previous solution.
    """
    sys_ = _System(g, tech, geometry, dict(bias or {}), vcm)

    # plain damped Newton, warm-started when a previous solution is given
    sys_.inj = sys_.inj_full
    warm0 = None
    if warm is not None:
        warm0 = np.array([warm.get(n, sys_.mid) for n in sys_.unknown])
    v = sys_.voltage_vector(1.0, warm0)
    v, norm, iters, ok = sys_.newton(v, stall=12)
    total_iters = iters

    if not ok:
        # deterministic source-stepping homotopy, warm-started stage to stage
        wv = None
        for scale in RAMP:
            sys_.inj = scale * sys_.inj_full
            v = sys_.voltage_vector(scale, wv)
            v, norm, iters, ok = sys_.newton(v, stall=25 if scale < 1.0 else 40)
            total_iters += iters
            wv = np.array([v[sys_.index[n]] for n in sys_.unknown])
            if not ok and scale == 1.0:
                break

    voltages = {n: float(v[sys_.index[n]]) for n in sys_.nets}
    cur, _gm, _gds = _kernel.device_currents(
        v, sys_.dn, sys_.gn, sys_.sn, sys_.ptype, sys_.kwl, sys_.vth, sys_.lam, 0.0
    )
    devices: dict[str, dict[str, float]] = {}
    violations: list[str] = []
    for k, d in enumerate(sys_.mosfets):
        vgs = voltages[d.g] - voltages[d.s]
        vds = voltages[d.d] - voltages[d.s]
        ids = abs(float(cur[k]))
        gm = math.sqrt(2.0 * sys_.kwl[k] * ids) if ids > 0 else 0.0
        gd = max(sys_.lam[k] * ids, GMIN)
        devices[d.name] = {"ids": ids, "vgs": vgs, "vds": vds, "gm": gm, "gd": gd}
        mag_gs, mag_ds = abs(vgs), abs(vds)
        ov = mag_gs - sys_.vth[k]
        if region == "saturation":
            if ov < 0:
                violations.append(f"{d.name}: vGS-vth = {ov:.3f} < 0 (off)")
            elif not ov < mag_ds:
                violations.append(
                    f"{d.name}: vGS-vth = {ov:.3f} >= vDS = {mag_ds:.3f} (linear)"
                )
        if d.doping == "n" and vds < -1e-6 and ids > 1e-12:
            violations.append(f"{d.name}: reverse conduction (vDS < 0)")
        if d.doping == "p" and vds > 1e-6 and ids > 1e-12:
            violations.append(f"{d.name}: reverse conduction (vDS > 0)")

    return OperatingPoint(
        voltages=voltages,
        devices=devices,
        converged=ok,
        iterations=total_iters,
        residual=norm,
        region_violations=violations,
    )

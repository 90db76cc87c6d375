"""Square-law (Shichman-Hodges) transistor model and technology data.

Sign conventions: nmos quantities are signed as usual (vth_n > 0); pmos
equations are built over magnitudes (|vGS|, |vDS|) and the per-device
current variable iDS[...] always holds the positive channel current
(d->s for nmos, s->d for pmos). The nodal incidence supplies the signs.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import expr as E
from .netlist import Device, NetlistError, parse_value

__all__ = [
    "TechParams",
    "parse_tech",
    "DEFAULT_TECH",
    "ids_expr",
    "region_constraints",
    "gm_gd_exprs",
    "vds_sat_expr",
    "pin_capacitance_expr",
    "REGIONS",
]

REGIONS = ("off", "linear", "saturation")


@dataclass(frozen=True)
class TechParams:
    """Per-doping process constants plus supply/bias globals (SI units)."""

    mu_cox_n: float = 170e-6  # A/V^2
    mu_cox_p: float = 58e-6
    vth_n: float = 0.5  # V
    vth_p: float = -0.5
    lambda_n: float = 0.05  # 1/V
    lambda_p: float = 0.05
    cox_n: float = 5e-3  # F/m^2 (gate oxide)
    cox_p: float = 5e-3
    cj_n: float = 1e-3  # F/m^2 (junction)
    cj_p: float = 1e-3
    ldiff_n: float = 0.5e-6  # m
    ldiff_p: float = 0.5e-6
    vdd: float = 5.0
    vss: float = 0.0
    ibias: float = 10e-6

    def __post_init__(self):
        if self.mu_cox_n <= 0 or self.mu_cox_p <= 0:
            raise ValueError("mu_cox must be positive")
        if self.lambda_n < 0 or self.lambda_p < 0:
            raise ValueError("lambda must be non-negative")
        if not (self.vth_n > 0 > self.vth_p):
            raise ValueError("sign convention requires vth_n > 0 > vth_p")

    def mu_cox(self, doping: str) -> float:
        return self.mu_cox_n if doping == "n" else self.mu_cox_p

    def vth(self, doping: str) -> float:
        return self.vth_n if doping == "n" else self.vth_p

    def lam(self, doping: str) -> float:
        return self.lambda_n if doping == "n" else self.lambda_p

    def bindings(self) -> dict[str, float]:
        """Constant bindings used when evaluating model expressions."""
        return {
            "mu_cox_n": self.mu_cox_n,
            "mu_cox_p": self.mu_cox_p,
            "vth_n": self.vth_n,
            "vth_p": self.vth_p,
            "lambda_n": self.lambda_n,
            "lambda_p": self.lambda_p,
            "cox_n": self.cox_n,
            "cox_p": self.cox_p,
            "cj_n": self.cj_n,
            "cj_p": self.cj_p,
            "ldiff_n": self.ldiff_n,
            "ldiff_p": self.ldiff_p,
            "v_VDD": self.vdd,
            "v_VSS": self.vss,
            "i_bias": self.ibias,
        }


DEFAULT_TECH = TechParams()


def parse_tech(text: str) -> TechParams:
    """key=value lines, keys named exactly as TechParams fields."""
    kv = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("*"):
            continue
        if "=" not in line:
            raise NetlistError(f"tech line {ln}: expected key=value")
        k, v = (x.strip() for x in line.split("=", 1))
        if k not in TechParams.__dataclass_fields__:
            raise NetlistError(f"tech line {ln}: unknown key {k!r}")
        kv[k] = parse_value(v)
    return TechParams(**kv)


# --- symbolic variable helpers -------------------------------------------

def vgs(t: Device) -> E.Expr:
    return E.var(f"vGS[{t.name}]")


def vds(t: Device) -> E.Expr:
    return E.var(f"vDS[{t.name}]")


def ids(t: Device) -> E.Expr:
    return E.var(f"iDS[{t.name}]")


def gm(t: Device) -> E.Expr:
    return E.var(f"gm[{t.name}]")


def gd(t: Device) -> E.Expr:
    return E.var(f"gd[{t.name}]")


def width(t: Device) -> E.Expr:
    return E.var(f"w[{t.name}]")


def length(t: Device) -> E.Expr:
    return E.var(f"l[{t.name}]")


def vth_sym(doping: str) -> E.Expr:
    return E.var(f"vth_{doping}")


def _mu_cox_sym(doping: str) -> E.Expr:
    return E.var(f"mu_cox_{doping}")


def _lambda_sym(doping: str) -> E.Expr:
    return E.var(f"lambda_{doping}")


def _overdrive(t: Device) -> E.Expr:
    """|vGS| - |vth| as a signed-variable expression."""
    if t.doping == "n":
        return E.sub(vgs(t), vth_sym("n"))
    return E.sub(E.absv(vgs(t)), E.absv(vth_sym("p")))


def _vds_mag(t: Device) -> E.Expr:
    return vds(t) if t.doping == "n" else E.absv(vds(t))


def ids_expr(t: Device, region: str = "saturation") -> E.Expr:
    """Channel current magnitude for the given operating region.

    For a diode transistor vGS = vDS holds by construction (gate and drain
    share a net), so no substitution is needed here.
    """
    if not t.is_mosfet():
        raise ValueError(f"{t.name} is not a mosfet")
    if region not in REGIONS:
        raise ValueError(f"unknown region {region!r}")
    ov = _overdrive(t)
    vd = _vds_mag(t)
    k = E.mul(_mu_cox_sym(t.doping), E.div(width(t), length(t)))
    clm = E.add(E.const(1.0), E.mul(_lambda_sym(t.doping), vd))
    if region == "off":
        return E.const(0.0)
    if region == "linear":
        tri = E.sub(E.mul(ov, vd), E.div(E.pow2(vd), E.const(2.0)))
        return E.mul(k, tri, clm)
    return E.mul(E.div(k, E.const(2.0)), E.pow2(ov), clm)


def region_constraints(t: Device, region: str = "saturation") -> list[tuple[E.Expr, str, E.Expr]]:
    """Inequalities (lhs, op, rhs) that pin the region, op in {'>=', '<'}."""
    ov = _overdrive(t)
    vd = _vds_mag(t)
    zero = E.const(0.0)
    if region == "off":
        return [(ov, "<", zero)]
    if region == "linear":
        return [(ov, ">=", zero), (vd, "<", ov)]
    return [(ov, ">=", zero), (ov, "<", vd)]


def gm_gd_exprs(t: Device) -> tuple[E.Expr, E.Expr]:
    """Saturation-region closed forms over the device's own variables."""
    g = E.sqrt(E.mul(E.const(2.0), _mu_cox_sym(t.doping), E.div(width(t), length(t)), ids(t)))
    d = E.mul(_lambda_sym(t.doping), ids(t))
    return g, d


def vds_sat_expr(t: Device, hl1_type: str) -> E.Expr:
    """Minimum drain-source voltage keeping the transistor saturated
    (signed; for pmos the value is negative)."""
    if hl1_type == "dt":
        return vgs(t)
    return E.sub(vgs(t), vth_sym(t.doping))


def pin_capacitance_expr(t: Device, role: str) -> E.Expr:
    """Capacitance contributed by one pin: gate-oxide area for gates,
    junction area for drain/source, the capacitor value for capacitor
    pins, zero for bulk."""
    if not t.is_mosfet():
        return E.var(f"C[{t.name}]")
    if role == "g":
        return E.mul(E.var(f"cox_{t.doping}"), width(t), length(t))
    if role in ("d", "s"):
        return E.mul(E.var(f"cj_{t.doping}"), width(t), E.var(f"ldiff_{t.doping}"))
    if role == "b":
        return E.const(0.0)
    raise ValueError(f"unknown pin role {role!r}")

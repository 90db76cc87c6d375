"""Pure-numpy fallback for the DC residual/Jacobian assembly kernel.

Same contract as the compiled extension `_dckernel`: given the full node
voltage vector and flat per-device parameter arrays, return the KCL
residual over the unknown nets and its dense Jacobian.

Device model: square-law with channel-length modulation in both the
linear and saturation branches (continuous at the boundary) plus a
small gmin leak between drain and source for conditioning.
"""

from __future__ import annotations

import numpy as np

KERNEL = "python"


def device_currents(v, dn, gn, sn, ptype, kwl, vth, lam, gmin):
    """Channel current magnitude and its derivatives for every device.

    Returns (i, g_m, g_ds) in the device's own magnitude frame: for nmos
    the controlling voltages are vgs/vds, for pmos vsg/vsd.
    """
    n = len(dn)
    i = np.zeros(n)
    gm = np.zeros(n)
    gds = np.zeros(n)
    for k in range(n):
        if ptype[k] == 0:
            vgs = v[gn[k]] - v[sn[k]]
            vds = v[dn[k]] - v[sn[k]]
            ov = vgs - vth[k]
        else:
            vgs = v[sn[k]] - v[gn[k]]
            vds = v[sn[k]] - v[dn[k]]
            ov = vgs - vth[k]
        beta = kwl[k]
        if ov <= 0.0:
            ik = 0.0
            gmk = 0.0
            gdk = 0.0
        elif vds >= ov:
            clm = 1.0 + lam[k] * vds
            ik = 0.5 * beta * ov * ov * clm
            gmk = beta * ov * clm
            gdk = 0.5 * beta * ov * ov * lam[k]
        else:
            clm = 1.0 + lam[k] * vds
            if clm < 0.05:
                clm = 0.05
                dclm = 0.0
            else:
                dclm = lam[k]
            tri = ov * vds - 0.5 * vds * vds
            ik = beta * tri * clm
            gmk = beta * vds * clm
            gdk = beta * ((ov - vds) * clm + tri * dclm)
        ik += gmin * vds
        gdk += gmin
        i[k] = ik
        gm[k] = gmk
        gds[k] = gdk
    return i, gm, gds


def assemble(v, dn, gn, sn, ptype, kwl, vth, lam, rowmap, nu, inj, gmin):
    """KCL residual (inflow sums) and Jacobian over the unknown nets.

    rowmap maps net index -> unknown row (or -1 for fixed nets); inj is
    a per-row constant injection (bias current).
    """
    res = inj.copy()
    jac = np.zeros((nu, nu))
    cur, gm, gds = device_currents(v, dn, gn, sn, ptype, kwl, vth, lam, gmin)
    for k in range(len(dn)):
        d, g, s = dn[k], gn[k], sn[k]
        ik = cur[k]
        if ptype[k] == 0:
            # current d -> s; derivatives w.r.t. (d, g, s)
            dd, dg, ds = gds[k], gm[k], -(gm[k] + gds[k])
        else:
            # current s -> d in magnitude frame vsg/vsd
            dd, dg, ds = -gds[k], -gm[k], gm[k] + gds[k]
        rd, rg, rs = rowmap[d], rowmap[g], rowmap[s]
        sign_d = -1.0 if ptype[k] == 0 else 1.0  # inflow at drain
        if rd >= 0:
            res[rd] += sign_d * ik
            for node, dpart in ((d, dd), (g, dg), (s, ds)):
                c = rowmap[node]
                if c >= 0:
                    jac[rd, c] += sign_d * dpart
        if rs >= 0:
            res[rs] += -sign_d * ik
            for node, dpart in ((d, dd), (g, dg), (s, ds)):
                c = rowmap[node]
                if c >= 0:
                    jac[rs, c] += -sign_d * dpart
    return res, jac

# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled DC residual/Jacobian assembly. See _dckernel_py for the
reference implementation and the interface contract."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

KERNEL = "cython"


def device_currents(double[::1] v,
                    long[::1] dn, long[::1] gn, long[::1] sn, long[::1] ptype,
                    double[::1] kwl, double[::1] vth, double[::1] lam,
                    double gmin):
    cdef Py_ssize_t n = dn.shape[0]
    cdef cnp.ndarray[double, ndim=1] i_arr = np.zeros(n)
    cdef cnp.ndarray[double, ndim=1] gm_arr = np.zeros(n)
    cdef cnp.ndarray[double, ndim=1] gds_arr = np.zeros(n)
    cdef double[::1] i = i_arr
    cdef double[::1] gm = gm_arr
    cdef double[::1] gds = gds_arr
    cdef Py_ssize_t k
    cdef double vgs, vds, ov, beta, clm, dclm, tri, ik, gmk, gdk
    for k in range(n):
        if ptype[k] == 0:
            vgs = v[gn[k]] - v[sn[k]]
            vds = v[dn[k]] - v[sn[k]]
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
    return i_arr, gm_arr, gds_arr


def assemble(double[::1] v,
             long[::1] dn, long[::1] gn, long[::1] sn, long[::1] ptype,
             double[::1] kwl, double[::1] vth, double[::1] lam,
             long[::1] rowmap, Py_ssize_t nu, double[::1] inj, double gmin):
    cdef cnp.ndarray[double, ndim=1] res_arr = np.empty(nu)
    cdef cnp.ndarray[double, ndim=2] jac_arr = np.zeros((nu, nu))
    cdef double[::1] res = res_arr
    cdef double[:, ::1] jac = jac_arr
    cdef Py_ssize_t k, n = dn.shape[0]
    for k in range(nu):
        res[k] = inj[k]
    i_arr, gm_arr, gds_arr = device_currents(v, dn, gn, sn, ptype, kwl, vth, lam, gmin)
    cdef double[::1] cur = i_arr
    cdef double[::1] gm = gm_arr
    cdef double[::1] gds = gds_arr
    cdef long d, g, s, rd, rs, c0, c1, c2
    cdef double ik, dd, dg, ds, sign_d
    for k in range(n):
        d = dn[k]
        g = gn[k]
        s = sn[k]
        ik = cur[k]
        if ptype[k] == 0:
            dd = gds[k]
            dg = gm[k]
            ds = -(gm[k] + gds[k])
            sign_d = -1.0
        else:
            dd = -gds[k]
            dg = -gm[k]
            ds = gm[k] + gds[k]
            sign_d = 1.0
        rd = rowmap[d]
        rs = rowmap[s]
        c0 = rowmap[d]
        c1 = rowmap[g]
        c2 = rowmap[s]
        if rd >= 0:
            res[rd] += sign_d * ik
            if c0 >= 0:
                jac[rd, c0] += sign_d * dd
            if c1 >= 0:
                jac[rd, c1] += sign_d * dg
            if c2 >= 0:
                jac[rd, c2] += sign_d * ds
        if rs >= 0:
            res[rs] += -sign_d * ik
            if c0 >= 0:
                jac[rs, c0] += -sign_d * dd
            if c1 >= 0:
                jac[rs, c1] += -sign_d * dg
            if c2 >= 0:
                jac[rs, c2] += -sign_d * ds
    return res_arr, jac_arr

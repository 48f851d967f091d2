# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same contracts as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, copysign, hypot

cnp.import_array()

BACKEND = "cython"

cdef enum:
    C_G = 0
    C_B = 1
    C_VREF_D = 2
    C_VREF_Q = 3
    C_P = 4
    C_Q = 5
    C_IMAX = 6
    C_IDMAX_LIT = 7
    C_PMAX = 8
    C_VFLOOR = 9
    C_KP_DROOP = 10
    C_KQ_DROOP = 11
    C_DEADBAND = 12
    C_DROOP_VNOM = 13
    C_DROOP_LIM = 14
    C_FIXED_RE = 15
    C_FIXED_IM = 16

cdef enum:
    CI_NODE = 0
    CI_MODE = 1
    CI_VAC_ON = 2
    CI_IDMODE = 3
    CI_DROOP = 4

cdef enum:
    L_P = 0
    L_Q = 1
    L_ICC_D = 2
    L_ICC_Q = 3


cdef inline double _clip(double x, double lo, double hi) nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


cdef void _one_conv(double vr, double vi, const double[:] cf, const long[:] ci,
                    double* out_r, double* out_i, int* fd, int* fq,
                    double* ivd, double* ivq) noexcept nogil:
    cdef double vmag = hypot(vr, vi)
    cdef double phr = 1.0, phi = 0.0
    cdef double vsd, err, eff, dp = 0.0, dq = 0.0, lim, p, q
    cdef double ipq_d, ipq_q, ed, eq, rd, rq, imax, idmax, i_d, i_q, iqmax
    if ci[CI_MODE] == 1:
        out_r[0] = cf[C_FIXED_RE]
        out_i[0] = cf[C_FIXED_IM]
        fd[0] = 0
        fq[0] = 0
        ivd[0] = 0.0
        ivq[0] = 0.0
        return
    if vmag > 0:
        phr = vr / vmag
        phi = vi / vmag
    vsd = vmag if vmag > cf[C_VFLOOR] else cf[C_VFLOOR]
    if ci[CI_DROOP] > 0:
        err = cf[C_DROOP_VNOM] - vmag
        if fabs(err) <= cf[C_DEADBAND]:
            eff = 0.0
        else:
            eff = err - copysign(cf[C_DEADBAND], err)
        lim = cf[C_DROOP_LIM]
        dq = _clip(cf[C_KQ_DROOP] * eff, -lim, lim)
        if ci[CI_DROOP] == 2:
            dp = _clip(cf[C_KP_DROOP] * eff, -lim, lim)
    p = cf[C_P] + dp
    q = cf[C_Q] + dq
    ipq_d = 2.0 * p / (3.0 * vsd)
    ipq_q = -2.0 * q / (3.0 * vsd)
    if ci[CI_VAC_ON] != 0:
        ed = cf[C_VREF_D] - vmag
        eq = cf[C_VREF_Q]
        ivd[0] = cf[C_G] * ed - cf[C_B] * eq
        ivq[0] = cf[C_B] * ed + cf[C_G] * eq
    else:
        ivd[0] = 0.0
        ivq[0] = 0.0
    rd = ivd[0] + ipq_d
    rq = ivq[0] + ipq_q
    imax = cf[C_IMAX]
    if ci[CI_IDMODE] == 0:
        idmax = cf[C_IDMAX_LIT]
    else:
        idmax = 2.0 * cf[C_PMAX] / (3.0 * vsd)
        if idmax > imax:
            idmax = imax
    i_d = _clip(rd, 0.0, idmax)
    iqmax = imax * imax - i_d * i_d
    iqmax = sqrt(iqmax) if iqmax > 0 else 0.0
    i_q = _clip(rq, -iqmax, iqmax)
    fd[0] = i_d != rd
    fq[0] = i_q != rq
    out_r[0] = i_d * phr - i_q * phi
    out_i[0] = i_d * phi + i_q * phr


def conv_injection(v, cf, ci):
    cdef const double complex[:] vv = np.ascontiguousarray(v, dtype=np.complex128)
    cdef const double[:, :] cfv = np.ascontiguousarray(cf, dtype=np.float64)
    cdef const long[:, :] civ = np.ascontiguousarray(ci, dtype=np.int64)
    cdef Py_ssize_t m = cfv.shape[0], k
    out = np.zeros(m, np.complex128)
    flags = np.zeros((m, 2), bool)
    ivl = np.zeros(m, np.complex128)
    cdef double complex[:] ov = out
    cdef double complex[:] ivv = ivl
    cdef double r, i, a, b
    cdef int fd, fq
    cdef double complex vn
    for k in range(m):
        vn = vv[civ[k, CI_NODE]]
        _one_conv(vn.real, vn.imag, cfv[k], civ[k], &r, &i, &fd, &fq, &a, &b)
        ov[k] = r + 1j * i
        ivv[k] = a + 1j * b
        flags[k, 0] = fd
        flags[k, 1] = fq
    return out, flags, ivl


cdef void _sources(const double complex[:] v, const double[:, :] lf,
                   const double[:, :] cf, const long[:, :] ci,
                   double* hr, double* hi) noexcept nogil:
    cdef Py_ssize_t n = v.shape[0], m = cf.shape[0], j, k
    cdef double vr, vi, vm2, vmag, p, q, r, i, a, b
    cdef int fd, fq
    for j in range(n):
        vr = v[j].real
        vi = v[j].imag
        vm2 = vr * vr + vi * vi
        if vm2 <= 0:
            vr = 1.0
            vi = 0.0
            vm2 = 1.0
        p = lf[j, L_P]
        q = lf[j, L_Q]
        # conj(p + jq) / (1.5 conj(v)) = (p - jq)(vr + j vi) / (1.5 |v|^2)
        hr[j] = (p * vr + q * vi) / (1.5 * vm2)
        hi[j] = (p * vi - q * vr) / (1.5 * vm2)
        vmag = sqrt(vm2)
        hr[j] += (lf[j, L_ICC_D] * vr - lf[j, L_ICC_Q] * vi) / vmag
        hi[j] += (lf[j, L_ICC_D] * vi + lf[j, L_ICC_Q] * vr) / vmag
    for k in range(m):
        j = ci[k, CI_NODE]
        _one_conv(v[j].real, v[j].imag, cf[k], ci[k], &r, &i, &fd, &fq, &a, &b)
        hr[j] -= r
        hi[j] -= i


cdef void _residual(const double complex[:] v, const double complex[:, :] ybus,
                    const double complex[:] i_src, const double[:, :] lf,
                    const double[:, :] cf, const long[:, :] ci,
                    double* fr, double* fi) noexcept nogil:
    cdef Py_ssize_t n = v.shape[0], j, k
    cdef double complex acc
    _sources(v, lf, cf, ci, fr, fi)
    for j in range(n):
        acc = -i_src[j]
        for k in range(n):
            acc = acc + ybus[j, k] * v[k]
        fr[j] += acc.real
        fi[j] += acc.imag


def kcl_residual(v, ybus, i_src, lf, cf, ci):
    vv = np.ascontiguousarray(v, dtype=np.complex128)
    cdef Py_ssize_t n = vv.shape[0]
    if n == 0:
        return np.zeros(0, np.complex128)
    fr = np.zeros(n)
    fi = np.zeros(n)
    cdef double[:] frv = fr
    cdef double[:] fiv = fi
    _residual(vv, np.ascontiguousarray(ybus, dtype=np.complex128),
              np.ascontiguousarray(i_src, dtype=np.complex128),
              np.ascontiguousarray(lf, dtype=np.float64),
              np.ascontiguousarray(cf, dtype=np.float64),
              np.ascontiguousarray(ci, dtype=np.int64), &frv[0], &fiv[0])
    return fr + 1j * fi


cdef int _lu_solve(double[:, :] a, double[:] x) noexcept nogil:
    """Gaussian elimination with partial pivoting, in place; 0 on success."""
    cdef Py_ssize_t n = a.shape[0], i, j, k, p
    cdef double piv, t, f
    for k in range(n):
        p = k
        piv = fabs(a[k, k])
        for i in range(k + 1, n):
            if fabs(a[i, k]) > piv:
                piv = fabs(a[i, k])
                p = i
        if piv == 0.0:
            return 1
        if p != k:
            for j in range(n):
                t = a[k, j]
                a[k, j] = a[p, j]
                a[p, j] = t
            t = x[k]
            x[k] = x[p]
            x[p] = t
        for i in range(k + 1, n):
            f = a[i, k] / a[k, k]
            if f != 0.0:
                for j in range(k, n):
                    a[i, j] -= f * a[k, j]
                x[i] -= f * x[k]
    for i in range(n - 1, -1, -1):
        t = x[i]
        for j in range(i + 1, n):
            t -= a[i, j] * x[j]
        x[i] = t / a[i, i]
    return 0


def solve_kcl(ybus, i_src, lf, cf, ci, v0, double tol, int max_iter):
    cdef const double complex[:, :] yv = np.ascontiguousarray(ybus, dtype=np.complex128)
    cdef const double complex[:] isv = np.ascontiguousarray(i_src, dtype=np.complex128)
    cdef const double[:, :] lfv = np.ascontiguousarray(lf, dtype=np.float64)
    cdef const double[:, :] cfv = np.ascontiguousarray(cf, dtype=np.float64)
    cdef const long[:, :] civ = np.ascontiguousarray(ci, dtype=np.int64)
    v_arr = np.array(v0, dtype=np.complex128)
    cdef Py_ssize_t n = v_arr.shape[0], j, k, it
    if n == 0:
        return v_arr, True, 0, 0.0
    vt_arr = v_arr.copy()
    vp_arr = v_arr.copy()
    cdef double complex[:] v = v_arr
    cdef double complex[:] vt = vt_arr
    cdef double complex[:] vp = vp_arr
    cdef double[:] fr = np.zeros(n), fi = np.zeros(n)
    cdef double[:] tr = np.zeros(n), ti = np.zeros(n)
    cdef double[:] hpr = np.zeros(n), hpi = np.zeros(n)
    cdef double[:] hmr = np.zeros(n), hmi = np.zeros(n)
    cdef double[:] hs = np.zeros(n)
    cdef double[:, :] jac = np.zeros((2 * n, 2 * n))
    cdef double[:] dx = np.zeros(2 * n)
    cdef double worst, norm0, normt, t, dz_r, dz_i
    cdef int col

    _residual(v, yv, isv, lfv, cfv, civ, &fr[0], &fi[0])
    worst = 0.0
    for j in range(n):
        worst = max(worst, hypot(fr[j], fi[j]))
    for it in range(max_iter + 1):
        if worst < tol:
            return v_arr, True, it, worst
        if it == max_iter:
            break
        for j in range(n):
            for k in range(n):
                jac[j, k] = yv[j, k].real
                jac[j, k + n] = -yv[j, k].imag
                jac[j + n, k] = yv[j, k].imag
                jac[j + n, k + n] = yv[j, k].real
            hs[j] = 1e-6 * max(hypot(v[j].real, v[j].imag), 1.0)
        for col in range(2):
            dz_r = 1.0 if col == 0 else 0.0
            dz_i = 0.0 if col == 0 else 1.0
            for j in range(n):
                vp[j] = v[j] + hs[j] * (dz_r + 1j * dz_i)
                vt[j] = v[j] - hs[j] * (dz_r + 1j * dz_i)
            _sources(vp, lfv, cfv, civ, &hpr[0], &hpi[0])
            _sources(vt, lfv, cfv, civ, &hmr[0], &hmi[0])
            for j in range(n):
                jac[j, j + col * n] += (hpr[j] - hmr[j]) / (2.0 * hs[j])
                jac[j + n, j + col * n] += (hpi[j] - hmi[j]) / (2.0 * hs[j])
        norm0 = 0.0
        for j in range(n):
            dx[j] = -fr[j]
            dx[j + n] = -fi[j]
            norm0 += fr[j] * fr[j] + fi[j] * fi[j]
        norm0 = sqrt(norm0)
        if _lu_solve(jac, dx) != 0:
            break
        t = 1.0
        while True:
            for j in range(n):
                vt[j] = v[j] + t * (dx[j] + 1j * dx[j + n])
            _residual(vt, yv, isv, lfv, cfv, civ, &tr[0], &ti[0])
            normt = 0.0
            for j in range(n):
                normt += tr[j] * tr[j] + ti[j] * ti[j]
            normt = sqrt(normt)
            if normt <= (1.0 - 1e-4 * t) * norm0 or t < 1.0 / 64:
                break
            t *= 0.5
        worst = 0.0
        for j in range(n):
            v[j] = vt[j]
            fr[j] = tr[j]
            fi[j] = ti[j]
            worst = max(worst, hypot(fr[j], fi[j]))
    return v_arr, worst < tol, max_iter, worst


def grid_eval(g, b, double z_base, double complex ysum, double complex rhs,
              double complex vs, double v_nom, double a_w, double b_w,
              double i_base, double complex ipq, double i_max,
              double r_min, double l_min):
    ga = np.asarray(g, dtype=np.float64)
    ba = np.asarray(b, dtype=np.float64)
    shape = np.broadcast(ga, ba).shape
    ga = np.ascontiguousarray(np.broadcast_to(ga, shape)).ravel()
    ba = np.ascontiguousarray(np.broadcast_to(ba, shape)).ravel()
    cdef const double[:] gv = ga
    cdef const double[:] bv = ba
    cdef Py_ssize_t n = gv.shape[0], k
    f = np.empty(n)
    feas = np.empty(n, dtype=np.bool_)
    cdef double[:] fv = f
    cdef cnp.npy_bool[:] ok = feas
    cdef double complex yv, vj, iv, ic
    cdef double m2, vm, c1, c2, c3
    with nogil:
        for k in range(n):
            yv = (gv[k] + 1j * bv[k]) / z_base
            vj = (rhs + yv * vs) / (ysum + yv)
            iv = yv * (vs - vj)
            vm = hypot(vj.real, vj.imag)
            fv[k] = a_w * (1.0 - vm / v_nom) * (1.0 - vm / v_nom) \
                + b_w * (iv.real * iv.real + iv.imag * iv.imag) / (i_base * i_base)
            m2 = gv[k] * gv[k] + bv[k] * bv[k]
            c1 = -gv[k] + r_min * m2
            c2 = bv[k] + l_min * m2
            ic = iv + ipq
            c3 = ic.real * ic.real + ic.imag * ic.imag - i_max * i_max
            ok[k] = c1 < 0 and c2 < 0 and c3 < 0
    return f.reshape(shape), feas.reshape(shape)

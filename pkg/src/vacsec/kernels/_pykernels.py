"""Pure numpy implementation of the hot kernels (reference/fallback backend)."""
from __future__ import annotations

import numpy as np

from .layout import (
    C_B, C_DEADBAND, C_DROOP_LIM, C_DROOP_VNOM, C_FIXED_IM, C_FIXED_RE, C_G,
    C_IDMAX_LIT, C_IMAX, C_KP_DROOP, C_KQ_DROOP, C_P, C_PMAX, C_Q, C_VFLOOR,
    C_VREF_D, C_VREF_Q, CI_DROOP, CI_IDMODE, CI_MODE, CI_NODE, CI_VAC_ON,
    L_ICC_D, L_ICC_Q, L_P, L_Q,
)

BACKEND = "python"


def _droop(vmag, cf, ci):
    err = cf[:, C_DROOP_VNOM] - vmag
    db = cf[:, C_DEADBAND]
    eff = np.where(np.abs(err) <= db, 0.0, err - np.copysign(db, err))
    lim = cf[:, C_DROOP_LIM]
    dq = np.clip(cf[:, C_KQ_DROOP] * eff, -lim, lim)
    dp = np.clip(cf[:, C_KP_DROOP] * eff, -lim, lim)
    kind = ci[:, CI_DROOP]
    dq = np.where(kind > 0, dq, 0.0)
    dp = np.where(kind == 2, dp, 0.0)
    return dp, dq


def conv_injection(v, cf, ci):
    """Converter currents in the common frame for node voltages ``v``.

    Returns ``(i_common, flags, i_v_local)``; ``flags[:, 0]`` / ``[:, 1]`` mark
    d/q saturation.
    """
    m = cf.shape[0]
    if m == 0:
        return np.zeros(0, complex), np.zeros((0, 2), bool), np.zeros(0, complex)
    vn = v[ci[:, CI_NODE]]
    vmag = np.abs(vn)
    ph = np.where(vmag > 0, vn / np.where(vmag > 0, vmag, 1.0), 1.0)
    vsd = np.maximum(vmag, cf[:, C_VFLOOR])
    dp, dq = _droop(vmag, cf, ci)
    p = cf[:, C_P] + dp
    q = cf[:, C_Q] + dq
    ipq_d = 2.0 * p / (3.0 * vsd)
    ipq_q = -2.0 * q / (3.0 * vsd)
    ed = cf[:, C_VREF_D] - vmag
    eq = cf[:, C_VREF_Q]
    on = ci[:, CI_VAC_ON] != 0
    iv_d = np.where(on, cf[:, C_G] * ed - cf[:, C_B] * eq, 0.0)
    iv_q = np.where(on, cf[:, C_B] * ed + cf[:, C_G] * eq, 0.0)
    rd = iv_d + ipq_d
    rq = iv_q + ipq_q
    imax = cf[:, C_IMAX]
    idmax = np.where(
        ci[:, CI_IDMODE] == 0,
        cf[:, C_IDMAX_LIT],
        np.minimum(imax, 2.0 * cf[:, C_PMAX] / (3.0 * vsd)),
    )
    i_d = np.clip(rd, 0.0, idmax)
    iqmax = np.sqrt(np.maximum(imax * imax - i_d * i_d, 0.0))
    i_q = np.clip(rq, -iqmax, iqmax)
    flags = np.stack([i_d != rd, i_q != rq], axis=1)
    i_common = (i_d + 1j * i_q) * ph
    fixed = ci[:, CI_MODE] == 1
    i_common = np.where(fixed, cf[:, C_FIXED_RE] + 1j * cf[:, C_FIXED_IM], i_common)
    flags[fixed] = False
    return i_common, flags, iv_d + 1j * iv_q


def load_current(v, lf):
    vmag = np.abs(v)
    safe = np.where(vmag > 0, v, 1.0)
    i_cp = np.conj(lf[:, L_P] + 1j * lf[:, L_Q]) / (1.5 * np.conj(safe))
    i_cc = (lf[:, L_ICC_D] + 1j * lf[:, L_ICC_Q]) * safe / np.where(vmag > 0, vmag, 1.0)
    return i_cp + i_cc


def _node_sources(v, lf, cf, ci):
    """Net current drawn from each node by loads minus converters."""
    h = load_current(v, lf)
    if cf.shape[0]:
        ic, _, _ = conv_injection(v, cf, ci)
        np.subtract.at(h, ci[:, CI_NODE], ic)
    return h


def kcl_residual(v, ybus, i_src, lf, cf, ci):
    return ybus @ v - i_src + _node_sources(v, lf, cf, ci)


def _local_blocks(v, lf, cf, ci):
    """2x2 real Jacobians of each node's source term w.r.t. its own voltage."""
    n = v.shape[0]
    blocks = np.zeros((n, 2, 2))
    hstep = 1e-6 * np.maximum(np.abs(v), 1.0)
    for k, dz in enumerate((1.0, 1j)):
        vp = v + hstep * dz
        vm = v - hstep * dz
        # node sources depend only on the node's own voltage, so perturbing
        # every node at once yields all diagonal blocks in one pass
        dh = (_node_sources(vp, lf, cf, ci) - _node_sources(vm, lf, cf, ci)) / (2.0 * hstep)
        blocks[:, 0, k] = dh.real
        blocks[:, 1, k] = dh.imag
    return blocks


def solve_kcl(ybus, i_src, lf, cf, ci, v0, tol, max_iter):
    """Damped Newton on the stacked real KCL residual.

    Returns ``(v, converged, iterations, worst_residual)`` with residuals in
    amperes.
    """
    n = v0.shape[0]
    v = v0.astype(complex).copy()
    jy = np.block([[ybus.real, -ybus.imag], [ybus.imag, ybus.real]])
    f = kcl_residual(v, ybus, i_src, lf, cf, ci)
    worst = float(np.max(np.abs(f))) if n else 0.0
    idx = np.arange(n)
    for it in range(max_iter + 1):
        if worst < tol:
            return v, True, it, worst
        if it == max_iter:
            break
        blocks = _local_blocks(v, lf, cf, ci)
        jac = jy.copy()
        jac[idx, idx] += blocks[:, 0, 0]
        jac[idx, idx + n] += blocks[:, 0, 1]
        jac[idx + n, idx] += blocks[:, 1, 0]
        jac[idx + n, idx + n] += blocks[:, 1, 1]
        rhs = -np.concatenate([f.real, f.imag])
        try:
            dx = np.linalg.solve(jac, rhs)
        except np.linalg.LinAlgError:
            break
        dv = dx[:n] + 1j * dx[n:]
        norm0 = np.linalg.norm(f)
        t = 1.0
        while True:
            vt = v + t * dv
            ft = kcl_residual(vt, ybus, i_src, lf, cf, ci)
            if np.linalg.norm(ft) <= (1.0 - 1e-4 * t) * norm0 or t < 1.0 / 64:
                break
            t *= 0.5
        v, f = vt, ft
        worst = float(np.max(np.abs(f)))
    return v, worst < tol, max_iter, worst


def grid_eval(g, b, z_base, ysum, rhs, vs, v_nom, a_w, b_w, i_base, ipq, i_max, r_min, l_min):
    """Subproblem objective and feasibility over (g, b) points in pu."""
    g = np.asarray(g, float)
    b = np.asarray(b, float)
    yv = (g + 1j * b) / z_base
    vj = (rhs + yv * vs) / (ysum + yv)
    iv = yv * (vs - vj)
    f = a_w * (1.0 - np.abs(vj) / v_nom) ** 2 + b_w * np.abs(iv / i_base) ** 2
    m2 = g * g + b * b
    c1 = -g + r_min * m2
    c2 = b + l_min * m2
    c3 = np.abs(iv + ipq) ** 2 - i_max * i_max
    feasible = (c1 < 0) & (c2 < 0) & (c3 < 0)
    return f, feasible

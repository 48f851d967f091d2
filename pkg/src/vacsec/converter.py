"""Primary control of one grid-following DG unit.

All dq quantities here are in the converter's own PLL frame, in peak
space-vector volts/amperes (amplitude-invariant Park transform, so
``P = 1.5 * (v_d i_d + v_q i_q)``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy.linalg import expm

from .dq import DqVec, PerUnitBase, RLParams, rl_to_admittance, Admittance2, wrap_angle


class VoltageCollapseError(ValueError):
    pass


@dataclass(frozen=True)
class LCLFilter:
    l_f1: float = 2.3e-3
    l_f2: float = 0.93e-3
    r_f1: float = 160.6e-3
    r_f2: float = 64.9e-3
    c_f: float = 8.8e-6


@dataclass(frozen=True)
class ConverterParams:
    """Hardware and control parameters of one VSC (SI units)."""

    s_n: float = 15e3
    v_ll: float = 400.0
    f_n: float = 50.0
    u_dc: float = 680.0
    lcl: LCLFilter = field(default_factory=LCLFilter)
    kp_i: float = 5.14
    ki_i: float = 593.27
    kp_pll: float = 0.05
    ki_pll: float = 0.95
    t_f1: float = 0.1
    t_f2: float = 0.1
    i_max: float | None = None
    p_max: float | None = None
    id_limit: Literal["literal", "ac_power"] = "literal"
    v_floor_pu: float = 0.1
    cc_zeta: float = 0.7
    cc_settling: float = 7e-3

    def __post_init__(self):
        for name in ("s_n", "v_ll", "f_n", "u_dc", "t_f1", "t_f2", "kp_pll", "ki_pll"):
            if not getattr(self, name) > 0:
                raise ValueError(f"ConverterParams.{name} must be > 0")
        if self.i_max is None:
            object.__setattr__(self, "i_max", self.s_n / (1.5 * self.base.v_peak))
        if self.p_max is None:
            # non-binding default: P_max/u_dc == I_max
            object.__setattr__(self, "p_max", self.u_dc * self.i_max)
        if not self.i_max > 0 or self.p_max < 0:
            raise ValueError("i_max must be > 0 and p_max >= 0")
        if self.id_limit not in ("literal", "ac_power"):
            raise ValueError(f"unknown id_limit mode {self.id_limit!r}")

    @property
    def base(self) -> PerUnitBase:
        return PerUnitBase(self.s_n, self.v_ll, self.f_n)

    @property
    def omega_n(self) -> float:
        return 2.0 * math.pi * self.f_n

    @property
    def v_nom(self) -> float:
        return self.base.v_peak

    def id_max(self, v_sd: float) -> float:
        if self.id_limit == "literal":
            return min(self.i_max, self.p_max / self.u_dc)
        return min(self.i_max, 2.0 * self.p_max / (3.0 * max(v_sd, 1e-12)))


@dataclass(frozen=True)
class VacGains:
    """Virtual resistance/inductance in pu of the converter base.

    ``l_v`` is per unit of ``L_base = Z_base / omega_n``, so in pu the
    reactance equals ``l_v`` and the admittance conversion uses omega = 1.
    """

    r_v: float
    l_v: float

    def admittance_pu(self) -> Admittance2:
        return rl_to_admittance(RLParams(self.r_v, self.l_v), 1.0)

    def admittance_si(self, base: PerUnitBase) -> complex:
        return self.admittance_pu().to_complex() / base.z_base

    def rl_si(self, base: PerUnitBase) -> RLParams:
        return base.rl_to_si(RLParams(self.r_v, self.l_v))

    @classmethod
    def from_admittance_pu(cls, g: float, b: float) -> VacGains:
        den = g * g + b * b
        if den <= 0.0:
            raise ZeroDivisionError("zero admittance")
        return cls(g / den, -b / den)


@dataclass(frozen=True)
class Setpoints:
    p_ref: float = 0.0
    q_ref: float = 0.0
    v_ref: DqVec = DqVec(400.0 * math.sqrt(2.0) / math.sqrt(3.0), 0.0)

    def __post_init__(self):
        if not self.v_ref.magnitude > 0:
            raise ValueError("|v_ref| must be > 0")


@dataclass(frozen=True)
class SaturationFlags:
    d_limited: bool = False
    q_limited: bool = False

    @property
    def any(self) -> bool:
        return self.d_limited or self.q_limited


@dataclass(frozen=True)
class ConverterState:
    x_pll: float = 0.0
    theta_pll: float = 0.0
    omega_g: float = 2.0 * math.pi * 50.0
    delta: float = 0.0
    vac_i: DqVec = DqVec(0.0, 0.0)
    v_filt: DqVec = DqVec(400.0 * math.sqrt(2.0) / math.sqrt(3.0), 0.0)
    gains_filt: VacGains = VacGains(0.2255, 0.0032)
    i_c: DqVec = DqVec(0.0, 0.0)
    di_c: DqVec = DqVec(0.0, 0.0)
    saturation: SaturationFlags = SaturationFlags()


def pll_step(state: ConverterState, v_sq: float, dt: float, params: ConverterParams) -> ConverterState:
    if not dt > 0:
        raise ValueError("dt must be > 0")
    x = state.x_pll + v_sq * dt
    omega_g = params.ki_pll * x + params.kp_pll * v_sq + params.omega_n
    return replace(
        state,
        x_pll=x,
        omega_g=omega_g,
        theta_pll=wrap_angle(state.theta_pll + omega_g * dt),
        delta=wrap_angle(state.delta + (omega_g - params.omega_n) * dt),
    )


def pll_closed_loop(params: ConverterParams, v_d: float) -> tuple[float, float]:
    """Natural frequency and damping of the small-signal PLL loop at ``v_d``."""
    wn = math.sqrt(params.ki_pll * v_d)
    return wn, params.kp_pll * v_d / (2.0 * wn)


def vac_quasi_static(y: Admittance2 | complex, v_s: DqVec, v_ref: DqVec) -> DqVec:
    g, b = (y.real, y.imag) if isinstance(y, complex) else (y.g, y.b)
    ed, eq = v_ref.d - v_s.d, v_ref.q - v_s.q
    return DqVec(g * ed - b * eq, b * ed + g * eq)


def vac_dynamic_step(
    i_v: DqVec, rl: RLParams, v_s: DqVec, v_ref: DqVec, dt: float, omega_n: float
) -> DqVec:
    """Advance the virtual RL circuit current over ``dt`` with inputs held.

    The linear ODE ``di/dt = e/L - (R/L + j w) i`` is integrated exactly, so
    the step is stable for the sub-millisecond ``L/R`` of typical gains.
    """
    if not rl.l > 0:
        raise ZeroDivisionError("virtual inductance must be > 0")
    if not dt > 0:
        raise ValueError("dt must be > 0")
    e = complex(v_ref.d - v_s.d, v_ref.q - v_s.q)
    lam = rl.r / rl.l + 1j * omega_n
    i_ss = e / (rl.r + 1j * omega_n * rl.l)
    i_new = i_ss + (i_v.to_complex() - i_ss) * np.exp(-lam * dt)
    return DqVec.from_complex(complex(i_new))


def pq_current_ref(setpoints: Setpoints, v_sd: float, params: ConverterParams | None = None) -> DqVec:
    params = params or ConverterParams()
    floor = params.v_floor_pu * params.v_nom
    if not v_sd > floor:
        raise VoltageCollapseError(f"voltage collapse guard: v_sd={v_sd:.4g} V <= {floor:.4g} V")
    return DqVec(2.0 * setpoints.p_ref / (3.0 * v_sd), -2.0 * setpoints.q_ref / (3.0 * v_sd))


def compose_current_ref(i_v: DqVec, i_pq: DqVec, vac_enabled: bool = True) -> DqVec:
    if not vac_enabled:
        return i_pq
    return i_v + i_pq


def apply_current_limits(
    i_ref: DqVec, params: ConverterParams, v_sd: float
) -> tuple[DqVec, SaturationFlags]:
    """Active-priority saturation; ``i_q`` keeps the sign of its request."""
    id_max = params.id_max(v_sd)
    i_d = min(max(i_ref.d, 0.0), id_max)
    iq_max = math.sqrt(max(params.i_max**2 - i_d * i_d, 0.0))
    i_q = min(max(i_ref.q, -iq_max), iq_max)
    return DqVec(i_d, i_q), SaturationFlags(i_d != i_ref.d, i_q != i_ref.q)


def injection_with_flags(
    gains: VacGains,
    setpoints: Setpoints,
    params: ConverterParams,
    v_s_local: DqVec,
    vac_enabled: bool = True,
) -> tuple[DqVec, SaturationFlags, DqVec]:
    """Saturated steady-state injection, its flags and the virtual current."""
    i_v = vac_quasi_static(gains.admittance_si(params.base), v_s_local, setpoints.v_ref)
    if not vac_enabled:
        i_v = DqVec(0.0, 0.0)
    i_pq = pq_current_ref(setpoints, v_s_local.d, params)
    i_c, flags = apply_current_limits(compose_current_ref(i_v, i_pq, vac_enabled), params, v_s_local.d)
    return i_c, flags, i_v


def steady_state_injection(
    gains: VacGains,
    setpoints: Setpoints,
    params: ConverterParams,
    v_s_local: DqVec,
    vac_enabled: bool = True,
) -> DqVec:
    return injection_with_flags(gains, setpoints, params, v_s_local, vac_enabled)[0]


def gain_ramp_step(current: VacGains, target: VacGains, dt: float, t_f2: float) -> VacGains:
    if not dt > 0:
        raise ValueError("dt must be > 0")
    k = -math.expm1(-dt / t_f2)
    return VacGains(current.r_v + k * (target.r_v - current.r_v), current.l_v + k * (target.l_v - current.l_v))


def lowpass_step(x: DqVec, u: DqVec, dt: float, tau: float) -> DqVec:
    k = -math.expm1(-dt / tau)
    return DqVec(x.d + k * (u.d - x.d), x.q + k * (u.q - x.q))


@dataclass(frozen=True)
class DroopConfig:
    kind: Literal["QV", "PV_QV"] = "QV"
    k_q: float = 0.0
    """var per volt of peak-phase voltage error"""
    k_p: float = 0.0
    """W per volt of peak-phase voltage error"""
    deadband: float = 0.0
    v_nom: float = 400.0 * math.sqrt(2.0) / math.sqrt(3.0)
    limit: float = 15e3

    def __post_init__(self):
        if self.kind not in ("QV", "PV_QV"):
            raise ValueError(f"unknown droop kind {self.kind!r}")
        if self.k_q < 0 or self.k_p < 0 or self.deadband < 0:
            raise ValueError("droop slopes and deadband must be >= 0")


def droop_baseline(v_mag: float, config: DroopConfig) -> tuple[float, float]:
    """Set-point offsets (dP, dQ) of the Q/V or combined P/V + Q/V droop."""
    err = config.v_nom - v_mag
    if abs(err) <= config.deadband:
        return 0.0, 0.0
    err -= math.copysign(config.deadband, err)
    dq = min(max(config.k_q * err, -config.limit), config.limit)
    dp = 0.0
    if config.kind == "PV_QV":
        dp = min(max(config.k_p * err, -config.limit), config.limit)
    return dp, dq


class CurrentLoop:
    """Inner current loop as a per-axis second-order lag (exact ZOH step)."""

    def __init__(self, params: ConverterParams, dt: float):
        zeta = params.cc_zeta
        wn = 4.0 / (zeta * params.cc_settling)
        a = np.array([[0.0, 1.0], [-wn * wn, -2.0 * zeta * wn]])
        bvec = np.array([[0.0], [wn * wn]])
        m = np.zeros((3, 3))
        m[:2, :2] = a
        m[:2, 2:] = bvec
        phi = expm(m * dt)
        self.ad = phi[:2, :2]
        self.bd = phi[:2, 2]

    def step(self, i_c: DqVec, di_c: DqVec, ref: DqVec) -> tuple[DqVec, DqVec]:
        xd = self.ad @ (i_c.d, di_c.d) + self.bd * ref.d
        xq = self.ad @ (i_c.q, di_c.q) + self.bd * ref.q
        return DqVec(float(xd[0]), float(xq[0])), DqVec(float(xd[1]), float(xq[1]))


@dataclass(frozen=True)
class ConverterControl:
    """Everything the network solver needs to evaluate one converter."""

    params: ConverterParams
    setpoints: Setpoints
    gains: VacGains
    vac_enabled: bool = True
    droop: DroopConfig | None = None
    fixed_current: complex | None = None
    """Common-frame current that overrides the control law (dynamic runs)."""

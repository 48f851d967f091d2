import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import signal

from vacsec.converter import (
    ConverterParams, ConverterState, CurrentLoop, DroopConfig, Setpoints, VacGains,
    VoltageCollapseError, apply_current_limits, compose_current_ref, droop_baseline,
    gain_ramp_step, injection_with_flags, lowpass_step, pll_closed_loop, pll_step,
    pq_current_ref, steady_state_injection, vac_dynamic_step, vac_quasi_static,
)
from vacsec.dq import Admittance2, DqVec, RLParams

P = ConverterParams()
VN = P.v_nom
VREF = DqVec(VN, 0.0)
cur = st.floats(-200, 200, allow_nan=False)


class TestParams:
    def test_default_limits(self):
        assert math.isclose(P.i_max, 30.618621784789728)
        assert P.id_max(VN) == pytest.approx(P.i_max)

    def test_ac_power_mode(self):
        p = ConverterParams(p_max=9e3, id_limit="ac_power")
        assert p.id_max(VN) == pytest.approx(2 * 9e3 / (3 * VN))

    def test_literal_mode(self):
        p = ConverterParams(p_max=6800.0)
        assert p.id_max(VN) == pytest.approx(10.0)

    def test_rejects_bad(self):
        with pytest.raises(ValueError):
            ConverterParams(t_f1=0)
        with pytest.raises(ValueError):
            ConverterParams(id_limit="x")


class TestPll:
    def test_locked(self):
        s = ConverterState()
        for _ in range(100):
            s = pll_step(s, 0.0, 1e-3, P)
        assert s.omega_g == P.omega_n
        assert s.delta == 0.0

    def test_integrator_sign(self):
        s = ConverterState()
        om = []
        for _ in range(50):
            s = pll_step(s, 0.5, 1e-3, P)
            om.append(s.omega_g)
        assert all(b > a for a, b in zip(om, om[1:]))

    def test_rejects_dt(self):
        with pytest.raises(ValueError):
            pll_step(ConverterState(), 0.0, 0.0, P)

    def test_phase_step_matches_linear_loop(self):
        # small grid phase step; the loop is v_sq = V sin(phi - delta)
        phi, dt, t_end = 0.01, 1e-4, 3.0
        s = ConverterState()
        n = int(t_end / dt)
        out = np.empty(n)
        for k in range(n):
            s = pll_step(s, VN * math.sin(phi - s.delta), dt, P)
            out[k] = s.delta
        t = (np.arange(n) + 1) * dt
        kp, ki = P.kp_pll * VN, P.ki_pll * VN
        _, y = signal.step(signal.lti([kp, ki], [1, kp, ki]), T=t)
        assert np.max(np.abs(out - phi * y)) < 0.02 * phi
        assert abs(out[-1] - phi) < 1e-3 * phi
        wn, zeta = pll_closed_loop(P, VN)
        assert wn == pytest.approx(math.sqrt(ki))
        assert zeta == pytest.approx(kp / (2 * math.sqrt(ki)))


class TestVac:
    y = Admittance2(4.0, -0.5)

    def test_zero_error(self):
        assert vac_quasi_static(self.y, VREF, VREF) == DqVec(0, 0)

    def test_deficit(self):
        i = vac_quasi_static(self.y, DqVec(VN - 10, 0), VREF)
        assert i == DqVec(40.0, -5.0)

    def test_overvoltage_signs(self):
        i = vac_quasi_static(self.y, DqVec(VN + 10, 0), VREF)
        assert i.d < 0 and i.q > 0

    def test_full_formula(self):
        v = DqVec(300.0, 12.0)
        i = vac_quasi_static(self.y, v, VREF)
        ed, eq = VN - 300.0, -12.0
        assert i == DqVec(4 * ed + 0.5 * eq, -0.5 * ed + 4 * eq)

    def test_dynamic_equilibrium(self):
        rl = VacGains(0.2255, 0.0032).rl_si(P.base)
        v = DqVec(VN - 8, 3)
        ss = vac_quasi_static(VacGains(0.2255, 0.0032).admittance_si(P.base), v, VREF)
        again = vac_dynamic_step(ss, rl, v, VREF, 1e-3, P.omega_n)
        assert again.d == pytest.approx(ss.d, rel=1e-12) and again.q == pytest.approx(ss.q, rel=1e-9, abs=1e-12)

    def test_dynamic_converges_to_quasi_static(self):
        g = VacGains(0.3, 0.05)
        rl = g.rl_si(P.base)
        v = DqVec(VN - 12, -4)
        i = DqVec(0, 0)
        tau = rl.l / rl.r
        for _ in range(int(40 * tau / 1e-4)):
            i = vac_dynamic_step(i, rl, v, VREF, 1e-4, P.omega_n)
        ss = vac_quasi_static(g.admittance_si(P.base), v, VREF)
        assert abs(i.to_complex() - ss.to_complex()) <= 1e-6 * abs(ss.to_complex())

    def test_dynamic_envelope_time_constant(self):
        g = VacGains(0.3, 0.05)
        rl = g.rl_si(P.base)
        v = DqVec(VN - 12, 0)
        ss = vac_quasi_static(g.admittance_si(P.base), v, VREF).to_complex()
        tau = rl.l / rl.r
        i = vac_dynamic_step(DqVec(0, 0), rl, v, VREF, tau, P.omega_n)
        assert abs(i.to_complex() - ss) / abs(ss) == pytest.approx(math.exp(-1), rel=1e-9)

    def test_dynamic_decays_to_zero(self):
        rl = RLParams(1.0, 0.01)
        i = DqVec(5, -3)
        for _ in range(500):
            i = vac_dynamic_step(i, rl, VREF, VREF, 1e-3, P.omega_n)
        assert i.magnitude < 1e-12

    def test_dynamic_rejects_zero_l(self):
        with pytest.raises(ZeroDivisionError):
            vac_dynamic_step(DqVec(0, 0), RLParams(1, 0), VREF, VREF, 1e-3, P.omega_n)

    @given(st.floats(0.05, 5), st.floats(1e-3, 1), st.floats(-50, 50), st.floats(-50, 50))
    def test_dynamic_fixed_point_property(self, r, l, ed, eq):
        g = VacGains(r, l)
        v = DqVec(VN - ed, -eq)
        ss = vac_quasi_static(g.admittance_si(P.base), v, VREF)
        nxt = vac_dynamic_step(ss, g.rl_si(P.base), v, VREF, 1e-3, P.omega_n)
        assert abs(nxt.to_complex() - ss.to_complex()) <= 1e-6 * max(abs(ss.to_complex()), 1e-9)


class TestPq:
    def test_zero(self):
        assert pq_current_ref(Setpoints(0, 0), VN) == DqVec(0, 0)

    def test_nine_kw(self):
        i = pq_current_ref(Setpoints(9e3, 0), VN)
        assert i.d == pytest.approx(18.371173070873837, rel=1e-12) and i.q == 0

    def test_q_sign(self):
        i = pq_current_ref(Setpoints(0, 5e3), VN)
        assert i.d == 0 and i.q < 0

    def test_collapse_guard(self):
        with pytest.raises(VoltageCollapseError, match="voltage collapse guard"):
            pq_current_ref(Setpoints(1e3, 0), 0.05 * VN)

    @given(st.floats(0, 15e3), st.floats(-15e3, 15e3), st.floats(0.5, 1.5))
    def test_power_reconstruction(self, p, q, k):
        v = k * VN
        i = pq_current_ref(Setpoints(p, q), v)
        assert 1.5 * v * i.d == pytest.approx(p, rel=1e-9, abs=1e-9)
        assert -1.5 * v * i.q == pytest.approx(q, rel=1e-9, abs=1e-9)


class TestCompose:
    def test_sum(self):
        assert compose_current_ref(DqVec(1, 2), DqVec(3, -5)) == DqVec(4, -3)

    def test_zero_vac(self):
        assert compose_current_ref(DqVec(0, 0), DqVec(3, -5)) == DqVec(3, -5)

    def test_bypass(self):
        assert compose_current_ref(DqVec(7, 7), DqVec(3, -5), vac_enabled=False) == DqVec(3, -5)


class TestLimits:
    def test_inside(self):
        i, f = apply_current_limits(DqVec(10, -5), P, VN)
        assert i == DqVec(10, -5) and not f.any

    def test_d_at_ceiling(self):
        i, f = apply_current_limits(DqVec(P.i_max, 12.0), P, VN)
        assert i.d == pytest.approx(P.i_max) and i.q == 0 and f.q_limited

    def test_negative_d(self):
        i, f = apply_current_limits(DqVec(-4, 1), P, VN)
        assert i.d == 0 and f.d_limited

    @given(cur, cur, st.floats(100, 500))
    def test_safety(self, d, q, v):
        i, f = apply_current_limits(DqVec(d, q), P, v)
        assert i.magnitude <= P.i_max * (1 + 1e-12)
        assert i.d >= 0
        assert i.q == 0 or math.copysign(1, i.q) == math.copysign(1, q)

    @given(cur, cur)
    def test_flags_report_changes(self, d, q):
        i, f = apply_current_limits(DqVec(d, q), P, VN)
        assert f.d_limited == (i.d != d) and f.q_limited == (i.q != q)


class TestInjection:
    def test_nominal_zero(self):
        assert steady_state_injection(VacGains(0.2255, 0.0032), Setpoints(0, 0), P, VREF) == DqVec(0, 0)

    def test_undervoltage_raises_d(self):
        i, f, iv = injection_with_flags(VacGains(1.0, 0.5), Setpoints(2e3, 0), P, DqVec(VN - 5, 0))
        assert iv.d > 0 and i.d > pq_current_ref(Setpoints(2e3, 0), VN - 5).d

    def test_vac_disabled(self):
        i, _, iv = injection_with_flags(VacGains(0.2255, 0.0032), Setpoints(5e3, 1e3), P, DqVec(VN - 9, 0), False)
        assert iv == DqVec(0, 0)
        assert i == pq_current_ref(Setpoints(5e3, 1e3), VN - 9)

    @given(st.floats(0.1, 2), st.floats(1e-3, 1), st.floats(0, 15e3), st.floats(-15e3, 15e3), st.floats(200, 450))
    def test_bounded(self, r, l, p, q, v):
        i = steady_state_injection(VacGains(r, l), Setpoints(p, q), P, DqVec(v, 0))
        assert i.magnitude <= P.i_max * (1 + 1e-12)


class TestRamp:
    def test_unchanged(self):
        g = VacGains(0.3, 0.02)
        assert gain_ramp_step(g, g, 1e-3, 0.1) == g

    def test_one_time_constant(self):
        g = gain_ramp_step(VacGains(0.2, 0.01), VacGains(1.2, 0.11), 0.1, 0.1)
        assert g.r_v == pytest.approx(0.2 + (1 - math.exp(-1)), rel=1e-12)
        assert (g.r_v - 0.2) / 1.0 == pytest.approx(0.632, abs=1e-3)

    def test_ten_time_constants(self):
        g = VacGains(0.2, 0.01)
        tgt = VacGains(1.2, 0.11)
        for _ in range(1000):
            g = gain_ramp_step(g, tgt, 1e-3, 0.1)
        assert abs(g.r_v - tgt.r_v) < 1e-4 and abs(g.l_v - tgt.l_v) < 1e-4

    def test_lowpass(self):
        x = lowpass_step(DqVec(0, 0), DqVec(1, -1), 0.1, 0.1)
        assert x.d == pytest.approx(1 - math.exp(-1))


class TestDroop:
    def test_nominal(self):
        assert droop_baseline(VN, DroopConfig("QV", k_q=100)) == (0.0, 0.0)

    def test_qv_undervoltage(self):
        dp, dq = droop_baseline(VN - 5, DroopConfig("QV", k_q=100, k_p=50))
        assert dp == 0 and dq == pytest.approx(500)

    def test_pvqv_undervoltage(self):
        dp, dq = droop_baseline(VN - 5, DroopConfig("PV_QV", k_q=100, k_p=50))
        assert dp > 0 and dq > 0

    def test_deadband_and_clip(self):
        c = DroopConfig("QV", k_q=1e4, deadband=2, limit=3e3)
        assert droop_baseline(VN - 1.5, c) == (0.0, 0.0)
        assert droop_baseline(VN - 50, c)[1] == 3e3

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            DroopConfig(k_q=-1)


class TestCurrentLoop:
    def test_settling(self):
        loop = CurrentLoop(P, 1e-4)
        i, di = DqVec(0, 0), DqVec(0, 0)
        ref = DqVec(10, -4)
        trace = []
        for _ in range(200):
            i, di = loop.step(i, di, ref)
            trace.append(i.d)
        zeta = P.cc_zeta
        sigma = 4.0 / P.cc_settling
        t = (np.arange(len(trace)) + 1) * 1e-4
        env = 10 * np.exp(-sigma * t) / math.sqrt(1 - zeta**2)
        assert np.all(np.abs(np.array(trace) - 10) <= env + 1e-9)
        assert env[int(P.cc_settling / 1e-4) - 1] < 0.03 * 10
        # damping 0.7 overshoot
        assert max(trace) == pytest.approx(10 * (1 + math.exp(-math.pi * 0.7 / math.sqrt(1 - 0.49))), rel=1e-3)

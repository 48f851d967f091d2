import math

import pytest
from hypothesis import given, strategies as st

from vacsec.dq import (
    Admittance2, DqVec, FrameAngle, PerUnitBase, RLParams, SingularAdmittanceError,
    adm_add, adm_apply, adm_compose, adm_inverse, admittance_to_rl, rl_to_admittance,
    rotate, wrap_angle,
)

OMEGA = 2 * math.pi * 50
finite = st.floats(-1e4, 1e4, allow_nan=False)
angle = st.floats(-20.0, 20.0, allow_nan=False)
pos = st.floats(1e-4, 1e3, allow_nan=False)


def close(a: DqVec, b: DqVec, tol=1e-12):
    return abs(a.d - b.d) <= tol * max(1, abs(b.d)) and abs(a.q - b.q) <= tol * max(1, abs(b.q))


class TestRotate:
    def test_identity(self):
        assert rotate(DqVec(1, 0), FrameAngle(0)) == DqVec(1, 0)

    def test_quarter_turn(self):
        assert close(rotate(DqVec(1, 0), FrameAngle(math.pi / 2)), DqVec(0, 1))

    def test_round_trip(self):
        v = rotate(rotate(DqVec(0.8, -0.3), 0.41), -0.41)
        assert close(v, DqVec(0.8, -0.3))

    @given(finite, finite, angle)
    def test_preserves_norm(self, d, q, a):
        v = DqVec(d, q)
        assert math.isclose(rotate(v, a).magnitude, v.magnitude, rel_tol=1e-12, abs_tol=1e-9)

    @given(finite, finite, angle)
    def test_inverse_round_trip(self, d, q, a):
        v = DqVec(d, q)
        assert close(rotate(rotate(v, a), -a), v, 1e-10)


class TestFrameAngle:
    @given(angle)
    def test_wrapped(self, a):
        w = FrameAngle(a).delta
        assert -math.pi < w <= math.pi
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)

    def test_minus_pi_maps_to_pi(self):
        assert wrap_angle(-math.pi) == math.pi


class TestDqVec:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            DqVec(math.nan, 0.0)

    def test_magnitude(self):
        assert DqVec(3, -4).magnitude == 5


class TestAdmittance:
    def test_pure_resistance(self):
        assert rl_to_admittance(RLParams(1, 0), OMEGA) == Admittance2(1, 0)

    def test_pure_reactance(self):
        y = rl_to_admittance(RLParams(0, 1 / OMEGA), OMEGA)
        assert y.g == 0 and math.isclose(y.b, -1)

    def test_zero_impedance(self):
        with pytest.raises(SingularAdmittanceError, match="zero impedance"):
            rl_to_admittance(RLParams(0, 0), OMEGA)

    def test_initial_gains_fixture(self):
        # pu gains with unit pu frequency: g = r/(r^2+x^2), b = -x/(r^2+x^2)
        y = rl_to_admittance(RLParams(0.2255, 0.0032), 1.0)
        assert math.isclose(y.g, 4.433696962022977, rel_tol=1e-12)
        assert math.isclose(y.b, -0.06291720744334159, rel_tol=1e-12)

    def test_inverse_conversions(self):
        assert admittance_to_rl(Admittance2(1, 0), OMEGA) == RLParams(1, 0)
        rl = admittance_to_rl(Admittance2(0, -1), OMEGA)
        assert rl.r == 0 and math.isclose(rl.l, 1 / OMEGA)

    def test_zero_admittance(self):
        with pytest.raises(SingularAdmittanceError):
            admittance_to_rl(Admittance2(0, 0), OMEGA)
        with pytest.raises(SingularAdmittanceError):
            adm_inverse(Admittance2(0, 0))

    @given(pos, st.floats(-1e3, -1e-4))
    def test_round_trip_valid_region(self, g, b):
        y = rl_to_admittance(admittance_to_rl(Admittance2(g, b), OMEGA), OMEGA)
        assert math.isclose(y.g, g, rel_tol=1e-10)
        assert math.isclose(y.b, b, rel_tol=1e-10)

    def test_apply_identity(self):
        assert adm_apply(Admittance2(1, 0), DqVec(3.5, -2)) == DqVec(3.5, -2)

    def test_apply_formula(self):
        assert adm_apply(Admittance2(2, 3), DqVec(5, 7)) == DqVec(2 * 5 - 3 * 7, 3 * 5 + 2 * 7)

    def test_inverse_applied(self):
        y = Admittance2(0.37, -1.9)
        v = adm_apply(adm_compose(y, adm_inverse(y)), DqVec(1, 1))
        assert close(v, DqVec(1, 1))

    def test_add(self):
        assert adm_add(Admittance2(2, -1), Admittance2(1, -1)) == Admittance2(3, -2)

    @given(finite, finite, finite, finite)
    def test_compose_commutes(self, a, b, c, d):
        x, y = Admittance2(a, b), Admittance2(c, d)
        assert adm_compose(x, y) == adm_compose(y, x)

    def test_matrix_layout(self):
        assert Admittance2(2, 3).matrix() == ((2, -3), (3, 2))


class TestPerUnitBase:
    def test_converter_base(self):
        b = PerUnitBase(15e3, 400, 50)
        assert math.isclose(b.z_base, 400**2 / 15e3)
        assert math.isclose(b.v_peak, 326.5986323710904)
        assert math.isclose(b.i_base, 30.618621784789728)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            PerUnitBase(0, 400, 50)

    @given(pos, pos)
    def test_rl_round_trip(self, r, l):
        b = PerUnitBase()
        back = b.rl_to_pu(b.rl_to_si(RLParams(r, l)))
        assert math.isclose(back.r, r, rel_tol=1e-12) and math.isclose(back.l, l, rel_tol=1e-12)

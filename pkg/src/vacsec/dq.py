"""Rotating-frame vectors and the [g, -b; b, g] admittance family.

Both types are isomorphic to complex numbers: a dq vector is ``d + jq`` and an
admittance block is ``g + jb``.  Internally the network and optimizer code
works on complex numpy arrays; these dataclasses are the public value types.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


class SingularAdmittanceError(ZeroDivisionError):
    pass


def wrap_angle(delta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(delta, 2.0 * math.pi)
    if w == -math.pi:
        return math.pi
    return w


@dataclass(frozen=True)
class DqVec:
    d: float
    q: float

    def __post_init__(self):
        if not (math.isfinite(self.d) and math.isfinite(self.q)):
            raise ValueError(f"non-finite dq components ({self.d}, {self.q})")

    @property
    def magnitude(self) -> float:
        return math.hypot(self.d, self.q)

    def __add__(self, other: DqVec) -> DqVec:
        return DqVec(self.d + other.d, self.q + other.q)

    def __sub__(self, other: DqVec) -> DqVec:
        return DqVec(self.d - other.d, self.q - other.q)

    def __neg__(self) -> DqVec:
        return DqVec(-self.d, -self.q)

    def scale(self, k: float) -> DqVec:
        return DqVec(k * self.d, k * self.q)

    def to_complex(self) -> complex:
        return complex(self.d, self.q)

    @classmethod
    def from_complex(cls, z: complex) -> DqVec:
        return cls(float(z.real), float(z.imag))


@dataclass(frozen=True)
class FrameAngle:
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "delta", wrap_angle(float(self.delta)))


@dataclass(frozen=True)
class Admittance2:
    """Admittance block acting on dq vectors as ``[[g, -b], [b, g]]``."""

    g: float
    b: float

    @property
    def is_invertible(self) -> bool:
        return self.g * self.g + self.b * self.b > 0.0

    def to_complex(self) -> complex:
        return complex(self.g, self.b)

    @classmethod
    def from_complex(cls, y: complex) -> Admittance2:
        return cls(float(y.real), float(y.imag))

    def matrix(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return ((self.g, -self.b), (self.b, self.g))


@dataclass(frozen=True)
class RLParams:
    r: float
    l: float


@dataclass(frozen=True)
class PerUnitBase:
    s_base: float = 15e3
    v_base: float = 400.0
    f_n: float = 50.0

    def __post_init__(self):
        for name in ("s_base", "v_base", "f_n"):
            if not getattr(self, name) > 0:
                raise ValueError(f"PerUnitBase.{name} must be > 0")

    @property
    def omega_n(self) -> float:
        return 2.0 * math.pi * self.f_n

    @property
    def z_base(self) -> float:
        return self.v_base**2 / self.s_base

    @property
    def l_base(self) -> float:
        return self.z_base / self.omega_n

    @property
    def v_peak(self) -> float:
        """Nominal peak phase voltage, i.e. the nominal d-axis voltage."""
        return self.v_base * math.sqrt(2.0) / math.sqrt(3.0)

    @property
    def i_base(self) -> float:
        """Peak space-vector current that carries ``s_base`` at nominal voltage."""
        return self.s_base / (1.5 * self.v_peak)

    def rl_to_si(self, rl_pu: RLParams) -> RLParams:
        return RLParams(rl_pu.r * self.z_base, rl_pu.l * self.l_base)

    def rl_to_pu(self, rl_si: RLParams) -> RLParams:
        return RLParams(rl_si.r / self.z_base, rl_si.l / self.l_base)

    def adm_to_si(self, y_pu: Admittance2) -> Admittance2:
        return Admittance2(y_pu.g / self.z_base, y_pu.b / self.z_base)

    def adm_to_pu(self, y_si: Admittance2) -> Admittance2:
        return Admittance2(y_si.g * self.z_base, y_si.b * self.z_base)


def rotate(v: DqVec, delta: FrameAngle | float) -> DqVec:
    """Map a local-frame vector into a frame rotated by ``delta``."""
    a = delta.delta if isinstance(delta, FrameAngle) else float(delta)
    c, s = math.cos(a), math.sin(a)
    return DqVec(c * v.d - s * v.q, s * v.d + c * v.q)


def rl_to_admittance(rl: RLParams, omega_n: float) -> Admittance2:
    x = omega_n * rl.l
    den = rl.r * rl.r + x * x
    if den <= 0.0:
        raise SingularAdmittanceError("zero impedance")
    return Admittance2(rl.r / den, -x / den)


def admittance_to_rl(y: Admittance2, omega_n: float) -> RLParams:
    den = y.g * y.g + y.b * y.b
    if den <= 0.0:
        raise SingularAdmittanceError("zero admittance")
    return RLParams(y.g / den, -y.b / (den * omega_n))


def adm_apply(y: Admittance2, v: DqVec) -> DqVec:
    return DqVec(y.g * v.d - y.b * v.q, y.b * v.d + y.g * v.q)


def adm_add(a: Admittance2, b: Admittance2) -> Admittance2:
    return Admittance2(a.g + b.g, a.b + b.b)


def adm_compose(a: Admittance2, b: Admittance2) -> Admittance2:
    """Matrix product of two admittance blocks (commutative)."""
    return Admittance2(a.g * b.g - a.b * b.b, a.g * b.b + a.b * b.g)


def adm_inverse(y: Admittance2) -> Admittance2:
    den = y.g * y.g + y.b * y.b
    if den <= 0.0:
        raise SingularAdmittanceError("singular admittance block")
    return Admittance2(y.g / den, -y.b / den)

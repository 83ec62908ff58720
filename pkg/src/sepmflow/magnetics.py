"""Lumped magnetic circuit of the switchable-polarity electropermanent magnet.

The actuator stacks a low-coercivity Alnico rod (wound with the excitation
coil) between two high-coercivity NdFeB rods; soft-iron pole pieces close the
loop across a working air gap at each end. Reversing the Alnico magnetization
sign flips which NdFeB rod the internal flux loop shorts through, which flips
the external gap field. The flux balance solved here couples the rod-stack
flux to the gap + leakage permeance:

    (pi*d^2/12) * n_rods * (B_alnico(H_m, s_a) + 2*s_a*B_r + 2*mu0*H_m)
        = (mu0*a*b/(2g) + P_leak) * (N*I - H_m*l)

with gap flux density B_g = mu0*(N*I - H_m*l)/(2g) and pull force across the
two pole faces F = mu0*a*b*((N*I - H_m*l)/(2g))^2.

All quantities SI. Values are immutable; every function here is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import NoConvergence

MU0 = 4.0e-7 * math.pi  # vacuum permeability [T*m/A]


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ValueError(message)


@dataclass(frozen=True)
class CircuitGeometry:
    """Geometric parameters of the magnetic circuit (SI units)."""

    d: float        # rod diameter [m]
    n_rods: int     # magnetic rods in the stack
    a: float        # pole-piece width [m]
    b: float        # pole-piece thickness [m]
    g: float        # effective air-gap length [m]
    l: float        # effective magnetic path length [m]
    p_leak: float   # leakage permeance [Wb/A]

    def __post_init__(self):
        _require(self.d > 0, "rod diameter must be > 0")
        _require(self.n_rods >= 1, "need at least one rod")
        _require(self.a > 0 and self.b > 0, "pole-piece dimensions must be > 0")
        _require(self.g > 0, "air gap must be > 0")
        _require(self.l > 0, "path length must be > 0")
        _require(self.p_leak >= 0, "leakage permeance must be >= 0")

    @property
    def rod_flux_area(self) -> float:
        """Effective flux-carrying cross section of the rod stack [m^2]."""
        return math.pi * self.d ** 2 / 12.0 * self.n_rods

    @property
    def gap_permeance(self) -> float:
        """Permeance of the two working gaps in series [Wb/A]."""
        return MU0 * self.a * self.b / (2.0 * self.g)

    @property
    def total_permeance(self) -> float:
        return self.gap_permeance + self.p_leak

    def with_gap(self, g: float) -> "CircuitGeometry":
        return replace(self, g=g)


@dataclass(frozen=True)
class MagnetSpec:
    """Material and coil parameters of the actuator."""

    b_r_ndfeb: float        # NdFeB remanence [T]
    b_r_alnico: float       # Alnico remanence [T]
    h_c_alnico: float       # Alnico coercivity [A/m]
    h_scale: float          # hysteron transition width [A/m]
    n_turns: int            # excitation coil turns
    coil_resistance: float  # [ohm]
    coil_inductance: float  # [H]
    mu_0: float = MU0       # fixed physical constant, kept visible

    def __post_init__(self):
        _require(self.b_r_ndfeb > 0, "NdFeB remanence must be > 0")
        _require(self.b_r_alnico > 0, "Alnico remanence must be > 0")
        _require(self.h_c_alnico > 0, "Alnico coercivity must be > 0")
        _require(self.h_scale > 0, "hysteron field scale must be > 0")
        _require(self.n_turns >= 1, "coil needs at least one turn")
        _require(self.coil_resistance > 0, "coil resistance must be > 0")
        _require(self.coil_inductance > 0, "coil inductance must be > 0")


@dataclass(frozen=True)
class SepmState:
    """Bistable magnetic operating point of one actuator."""

    s_a: int      # Alnico magnetization sign, +1 or -1
    h_m: float    # internal field in the rod stack [A/m]
    b_g: float    # gap flux density [T]

    def __post_init__(self):
        _require(self.s_a in (+1, -1), "s_a must be +1 or -1")


@dataclass(frozen=True)
class Pulse:
    """Single switching pulse applied to the excitation coil."""

    voltage: float   # [V]
    duration: float  # [s]
    polarity: int    # target Alnico sign, +1 or -1

    def __post_init__(self):
        _require(self.voltage > 0, "pulse voltage must be > 0")
        _require(self.duration > 0, "pulse duration must be > 0")
        _require(self.polarity in (+1, -1), "polarity must be +1 or -1")


def hysteron_b(h_m: float, s_a: int, spec: MagnetSpec) -> float:
    """Alnico flux density on the branch selected by s_a [T].

    Two-branch smooth hysteron, normalized so the branch passes exactly
    through (0, s_a * b_r_alnico) and crosses zero at -s_a * h_c_alnico.
    Odd under a joint sign flip of (h_m, s_a), monotone in h_m.
    """
    knee = math.tanh(spec.h_c_alnico / spec.h_scale)
    return spec.b_r_alnico * math.tanh(
        (h_m + s_a * spec.h_c_alnico) / spec.h_scale) / knee


def delta_br(s_a: int, spec: MagnetSpec) -> float:
    """State-dependent remanent contribution of the NdFeB pair [T]."""
    _require(s_a in (+1, -1), "s_a must be +1 or -1")
    return 2.0 * s_a * spec.b_r_ndfeb


def flux_residual(h_m: float, geom: CircuitGeometry, spec: MagnetSpec,
                  current: float, s_a: int) -> float:
    """Stack flux minus gap+leak flux at internal field h_m [Wb].

    Strictly increasing in h_m, so the balance has exactly one root per
    magnetization branch.
    """
    lhs = geom.rod_flux_area * (
        hysteron_b(h_m, s_a, spec) + delta_br(s_a, spec) + 2.0 * MU0 * h_m)
    rhs = geom.total_permeance * (spec.n_turns * current - h_m * geom.l)
    return lhs - rhs


def _flux_residual_deriv(h_m: float, geom: CircuitGeometry, spec: MagnetSpec,
                         s_a: int) -> float:
    knee = math.tanh(spec.h_c_alnico / spec.h_scale)
    sech2 = 1.0 / math.cosh((h_m + s_a * spec.h_c_alnico) / spec.h_scale) ** 2
    d_lhs = geom.rod_flux_area * (
        spec.b_r_alnico * sech2 / (knee * spec.h_scale) + 2.0 * MU0)
    d_rhs = -geom.total_permeance * geom.l
    return d_lhs - d_rhs


def gap_flux_density(geom: CircuitGeometry, spec: MagnetSpec,
                     current: float, h_m: float) -> float:
    """Air-gap flux density from the circuit relation [T]."""
    return MU0 * (spec.n_turns * current - h_m * geom.l) / (2.0 * geom.g)


def solve_flux_balance(geom: CircuitGeometry, spec: MagnetSpec,
                       current: float = 0.0, s_a: int = +1,
                       tol: float = 1e-9, max_iter: int = 200) -> SepmState:
    """Solve the flux balance for h_m on the branch selected by s_a.

    Bracketed Newton iteration with a bisection fallback whenever a Newton
    step would leave the bracket. Converged when |residual| < tol [Wb].
    Raises NoConvergence (with the last residual) if the budget runs out.
    """
    _require(s_a in (+1, -1), "s_a must be +1 or -1")
    _require(math.isfinite(current), "coil current must be finite")

    # Expand a symmetric bracket until the residual changes sign. The
    # residual is monotone increasing, so any sign change brackets the root.
    scale = max(spec.h_c_alnico,
                abs(spec.n_turns * current) / geom.l, 1.0)
    lo, hi = -scale, scale
    f_lo = flux_residual(lo, geom, spec, current, s_a)
    f_hi = flux_residual(hi, geom, spec, current, s_a)
    expansions = 0
    while f_lo > 0.0 or f_hi < 0.0:
        expansions += 1
        if expansions > 60:
            raise NoConvergence(
                "could not bracket flux-balance root", last_residual=f_hi)
        lo *= 2.0
        hi *= 2.0
        f_lo = flux_residual(lo, geom, spec, current, s_a)
        f_hi = flux_residual(hi, geom, spec, current, s_a)

    h = 0.5 * (lo + hi)
    residual = flux_residual(h, geom, spec, current, s_a)
    for _ in range(max_iter):
        if abs(residual) < tol:
            return SepmState(
                s_a=s_a, h_m=h, b_g=gap_flux_density(geom, spec, current, h))
        if residual > 0.0:
            hi = h
        else:
            lo = h
        deriv = _flux_residual_deriv(h, geom, spec, s_a)
        h_newton = h - residual / deriv if deriv > 0.0 else math.nan
        if math.isfinite(h_newton) and lo < h_newton < hi:
            h = h_newton
        else:
            h = 0.5 * (lo + hi)
        residual = flux_residual(h, geom, spec, current, s_a)

    raise NoConvergence(
        f"flux balance not converged after {max_iter} iterations",
        last_residual=residual)


def gap_force(geom: CircuitGeometry, spec: MagnetSpec,
              current: float, h_m: float) -> float:
    """Total attractive force across the two pole-face gaps [N].

    F = mu0*a*b*((N*I - h_m*l)/(2g))^2, i.e. the gap magnetic pressure
    B_g^2/(2*mu0) applied over both pole faces of area a*b. Non-negative.
    """
    mmf = spec.n_turns * current - h_m * geom.l
    return MU0 * geom.a * geom.b * (mmf / (2.0 * geom.g)) ** 2


def magnetic_pressure(b_g: float) -> float:
    """Energy density of the gap field [Pa]."""
    return b_g ** 2 / (2.0 * MU0)


def gap_field_energy(geom: CircuitGeometry, b_g: float,
                     gap: float | None = None) -> float:
    """Field energy stored in the two working gaps [J].

    Volume is 2*a*b*g (one gap at each pole face); at fixed flux linkage the
    derivative of this energy with respect to g has magnitude gap_force.
    """
    g = geom.g if gap is None else gap
    return magnetic_pressure(b_g) * geom.a * geom.b * 2.0 * g


def pulse_current(spec: MagnetSpec, pulse: Pulse, t: float) -> float:
    """Coil current at time t into the pulse, first-order R-L response [A]."""
    if t <= 0.0:
        return 0.0
    tau = spec.coil_inductance / spec.coil_resistance
    return pulse.voltage / spec.coil_resistance * (1.0 - math.exp(-t / tau))


def pulse_energy(spec: MagnetSpec, pulse: Pulse) -> float:
    """Electrical energy delivered over one pulse, integral of V*I dt [J]."""
    tau = spec.coil_inductance / spec.coil_resistance
    t = pulse.duration
    return (pulse.voltage ** 2 / spec.coil_resistance
            * (t - tau * (1.0 - math.exp(-t / tau))))


def apply_pulse(state: SepmState, pulse: Pulse, geom: CircuitGeometry,
                spec: MagnetSpec) -> tuple[SepmState, float]:
    """Switch the actuator with one pulse; return (new state, energy [J]).

    Domain reorientation completes within the pulse, so the new operating
    point is the zero-current fixed point on the branch selected by the pulse
    polarity. Energy is dissipated whether or not the branch changed.
    """
    energy = pulse_energy(spec, pulse)
    new_state = solve_flux_balance(geom, spec, current=0.0,
                                   s_a=pulse.polarity)
    return new_state, energy

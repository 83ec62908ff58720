"""Bistable two-tube pinch valve driven by the S-EPM actuator.

Logical state +1 pinches the upper tube (lower open); -1 pinches the lower
tube (upper open). A polarity pulse reverses the actuator magnetization; the
seal on the newly pinched tube is established only if the magnetic closing
force beats the pressure load on the contact bars. State is retained with
zero power: nothing here encodes "energized".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import NotOccluded, OcclusionFailed
from .magnetics import (CircuitGeometry, MagnetSpec, Pulse, SepmState,
                        apply_pulse, gap_force, solve_flux_balance)


@dataclass(frozen=True)
class TubeSpec:
    """Silicone tube and its pinch-contact flow characteristics."""

    outer_diameter: float          # [m]
    inner_diameter: float          # [m]
    contact_length: float          # raised-bar contact length [m]
    open_conductance: float        # [(m^3/s)/Pa]
    closed_leak_conductance: float = 0.0

    def __post_init__(self):
        if not self.outer_diameter > self.inner_diameter > 0:
            raise ValueError("need outer_diameter > inner_diameter > 0")
        if not self.open_conductance > self.closed_leak_conductance >= 0:
            raise ValueError(
                "need open_conductance > closed_leak_conductance >= 0")

    @property
    def pinch_displaced_volume(self) -> float:
        """Bore volume expelled when the contact section is flattened [m^3]."""
        return math.pi / 4.0 * self.inner_diameter ** 2 * self.contact_length


@dataclass(frozen=True)
class OcclusionModel:
    """Seal mechanics shared by all valves built from one profile."""

    seal_area: float            # raised-bar contact area [m^2]
    dynamic_gap: float          # effective magnetic gap mid-stroke [m]
    dynamic_threshold: float    # single-pulse closing limit [Pa]
    static_limit: float         # holding limit once seated [Pa]
    max_retry: int = 3          # extra pulses after a failed first stroke
    dead_time: float = 0.05     # command-to-motion latency [s]
    stochastic: bool = False    # sample seal success near the threshold
    ramp_start: float = 320e3   # success probability 1 at/below this [Pa]
    ramp_end: float = 360e3     # success probability 0 at/above this [Pa]

    def success_probability(self, line_pressure: float) -> float:
        if line_pressure <= self.ramp_start:
            return 1.0
        if line_pressure >= self.ramp_end:
            return 0.0
        return (self.ramp_end - line_pressure) / (self.ramp_end - self.ramp_start)


@dataclass(frozen=True)
class SwitchResult:
    switched: bool            # logical state actually changed
    occlusion_achieved: bool
    energy: float             # [J], accumulated over all pulses issued
    pulses_used: int


class Valve:
    """One pinch valve: actuator state machine plus per-tube conductances."""

    def __init__(self, valve_id: str, geom: CircuitGeometry, spec: MagnetSpec,
                 pulse: Pulse, upper_tube: TubeSpec, lower_tube: TubeSpec,
                 occlusion: OcclusionModel, logical_state: int = +1,
                 pulse_count: int = 0, rng=None):
        if logical_state not in (+1, -1):
            raise ValueError("logical_state must be +1 or -1")
        self.id = valve_id
        self.geom = geom
        self.spec = spec
        self.pulse = pulse
        self.upper_tube = upper_tube
        self.lower_tube = lower_tube
        self.occlusion_model = occlusion
        self.logical_state = logical_state
        self.pulse_count = pulse_count
        self.rng = rng
        self.sepm: SepmState = solve_flux_balance(geom, spec, 0.0,
                                                  logical_state)
        self._occlusion_ok = True

    @property
    def occluded(self) -> str | None:
        """Which tube is sealed: 'upper', 'lower', or None after a failed stroke."""
        if not self._occlusion_ok:
            return None
        return "upper" if self.logical_state == +1 else "lower"

    @property
    def dynamic_threshold(self) -> float:
        return self.occlusion_model.dynamic_threshold

    @property
    def static_limit(self) -> float:
        return self.occlusion_model.static_limit

    @property
    def dead_time(self) -> float:
        return self.occlusion_model.dead_time

    def tube_conductances(self) -> tuple[float, float]:
        """(upper, lower) conductances for the current logical state."""
        if self.logical_state == +1:
            return (self.upper_tube.closed_leak_conductance,
                    self.lower_tube.open_conductance)
        return (self.upper_tube.open_conductance,
                self.lower_tube.closed_leak_conductance)

    def closing_tube(self, polarity: int) -> str:
        return "upper" if polarity == +1 else "lower"

    def _occlusion_succeeds(self, line_pressure: float) -> bool:
        model = self.occlusion_model
        if not model.stochastic:
            return line_pressure <= model.dynamic_threshold
        p = model.success_probability(line_pressure)
        if p >= 1.0:
            return True
        if p <= 0.0:
            return False
        if self.rng is None:
            raise ValueError(
                f"valve {self.id}: stochastic occlusion needs an rng")
        return float(self.rng.random()) < p

    def switch(self, polarity: int, line_pressure: float,
               timestamp: float | None = None) -> SwitchResult:
        """Pulse the actuator toward `polarity` against `line_pressure` [Pa].

        Re-issuing the current state costs one pulse of energy and changes
        nothing. Otherwise up to 1 + max_retry pulses are spent trying to
        seat the seal; OcclusionFailed carries the pulses and energy already
        dissipated so callers can keep their ledgers truthful.
        """
        if polarity not in (+1, -1):
            raise ValueError("polarity must be +1 or -1")
        if line_pressure < 0:
            raise ValueError("line_pressure must be >= 0")

        if polarity == self.logical_state and self._occlusion_ok:
            self.sepm, energy = apply_pulse(self.sepm, self._pulse(polarity),
                                            self.geom, self.spec)
            self.pulse_count += 1
            return SwitchResult(switched=False, occlusion_achieved=True,
                                energy=energy, pulses_used=1)

        total_energy = 0.0
        pulses = 0
        for _ in range(1 + self.occlusion_model.max_retry):
            self.sepm, energy = apply_pulse(self.sepm, self._pulse(polarity),
                                            self.geom, self.spec)
            self.pulse_count += 1
            pulses += 1
            total_energy += energy
            if self._occlusion_succeeds(line_pressure):
                switched = self.logical_state != polarity
                self.logical_state = polarity
                self._occlusion_ok = True
                return SwitchResult(switched=switched, occlusion_achieved=True,
                                    energy=total_energy, pulses_used=pulses)

        # Magnetization followed the pulse but the tube never sealed; the
        # previously seated side is still reported until a stroke succeeds.
        self._occlusion_ok = False
        raise OcclusionFailed(
            f"valve {self.id}: no seal after {pulses} pulses at "
            f"{line_pressure / 1e3:.1f} kPa",
            valve_id=self.id, line_pressure=line_pressure,
            pulses_used=pulses, energy=total_energy, timestamp=timestamp)

    def hold_pressure_limit(self) -> float:
        """Maximum pressure the seated seal can block, force/area [Pa]."""
        if not self._occlusion_ok:
            raise NotOccluded(f"valve {self.id} has no established seal")
        force = gap_force(self.geom, self.spec, 0.0, self.sepm.h_m)
        return force / self.occlusion_model.seal_area

    def _pulse(self, polarity: int) -> Pulse:
        return Pulse(self.pulse.voltage, self.pulse.duration, polarity)

    def pinch_displaced_volume(self, polarity: int) -> float:
        tube = self.upper_tube if polarity == +1 else self.lower_tube
        return tube.pinch_displaced_volume

    def to_record(self) -> tuple[str, int, int]:
        return (self.id, self.logical_state, self.pulse_count)

    def restore(self, logical_state: int, pulse_count: int = 0) -> None:
        """Reinstate a persisted state; remanence alone defines the state."""
        if logical_state not in (+1, -1):
            raise ValueError("logical_state must be +1 or -1")
        self.logical_state = logical_state
        self.pulse_count = pulse_count
        self.sepm = solve_flux_balance(self.geom, self.spec, 0.0,
                                       logical_state)
        self._occlusion_ok = True

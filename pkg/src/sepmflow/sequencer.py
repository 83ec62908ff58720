"""Compile timed routing programs into pulse schedules and execute them.

The compiler is state-aware: a valve is pulsed only when its required state
differs from the registry, and don't-care entries hold their previous state,
so repeated intents cost nothing. Energy bookkeeping is exact: total energy
is pulse count times the per-pulse energy, holding energy is identically
zero.

The valve registry is a line-oriented text file (one `id state pulse_count`
record per valve) that makes the magnetic nonvolatility literal: reloading
it into a fresh process reproduces every route without issuing a pulse.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (AddressOutOfRange, CorruptRegistry, IntentInvalid,
                     InvalidPort, OcclusionFailed)
from .pneumatics import PneumaticNetwork, Trace
from .routing import (RoutePattern, StateVector, Topology, active_paths,
                      decode_address, six_port_mode)
from .valve import SwitchResult


# -- program intents ----------------------------------------------------------

@dataclass(frozen=True)
class AddressIntent:
    address: int

    def describe(self) -> str:
        return f"address={self.address}"


@dataclass(frozen=True)
class SixPortIntent:
    mode: str
    ports: tuple = ()

    def describe(self) -> str:
        ports = ",".join(str(p) for p in self.ports)
        return f"six-port={self.mode}" + (f"({ports})" if ports else "")


@dataclass(frozen=True)
class VectorIntent:
    states: tuple  # ((valve_id, state), ...) kept sorted for hashability

    @classmethod
    def of(cls, mapping: dict) -> "VectorIntent":
        return cls(tuple(sorted(mapping.items())))

    def describe(self) -> str:
        return "vector={" + ",".join(f"{v}:{s:+d}" for v, s in self.states) + "}"


@dataclass(frozen=True)
class MediaIntent:
    select: object  # +1, -1 or "toggle"

    def describe(self) -> str:
        return f"media={self.select}"


@dataclass(frozen=True)
class ProgramStep:
    time: float
    intent: object
    dwell: float


@dataclass(frozen=True)
class Program:
    steps: tuple[ProgramStep, ...]

    def __post_init__(self):
        last = None
        for i, step in enumerate(self.steps):
            if step.dwell <= 0:
                raise ValueError(f"step {i}: dwell must be > 0")
            if last is not None and step.time <= last:
                raise ValueError(f"step {i}: times must be strictly increasing")
            last = step.time

    @property
    def duration(self) -> float:
        if not self.steps:
            return 0.0
        tail = self.steps[-1]
        return tail.time + tail.dwell


@dataclass(frozen=True)
class PulseCommand:
    time: float
    valve_id: str
    polarity: int
    step_index: int = 0


@dataclass(frozen=True)
class PulseSchedule:
    commands: tuple[PulseCommand, ...]

    def __post_init__(self):
        seen = set()
        for cmd in self.commands:
            key = (cmd.time, cmd.valve_id)
            if key in seen:
                raise ValueError(
                    f"duplicate command for {cmd.valve_id} at t={cmd.time}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.commands)


# -- compilation --------------------------------------------------------------

def target_states(intent, topology: Topology,
                  media_valve_id: str | None,
                  registry: dict[str, int]) -> dict[str, int]:
    """Concrete (valve -> state) demands of one intent; don't-cares omitted."""
    if isinstance(intent, AddressIntent):
        return decode_address(topology, intent.address).as_dict()
    if isinstance(intent, SixPortIntent):
        if topology.kind != "six-port-ring":
            raise ValueError("six-port intent needs a six-port-ring topology")
        return six_port_mode(intent.mode, intent.ports).as_dict()
    if isinstance(intent, VectorIntent):
        allowed = set(topology.valve_ids)
        if media_valve_id:
            allowed.add(media_valve_id)
        states = dict(intent.states)
        unknown = set(states) - allowed
        if unknown:
            raise ValueError(f"vector names unknown valves: {sorted(unknown)}")
        for v, s in states.items():
            if s not in (+1, -1):
                raise ValueError(f"vector state for {v} must be +1 or -1")
        return states
    if isinstance(intent, MediaIntent):
        if media_valve_id is None:
            raise ValueError("media intent but no media valve configured")
        if intent.select == "toggle":
            return {media_valve_id: -registry[media_valve_id]}
        if intent.select not in (+1, -1):
            raise ValueError("media select must be +1, -1 or 'toggle'")
        return {media_valve_id: intent.select}
    raise ValueError(f"unknown intent type {type(intent).__name__}")


def compile_program(program: Program, topology: Topology,
                    registry: dict[str, int],
                    media_valve_id: str | None = None,
                    stagger: float = 1e-3) -> PulseSchedule:
    """Minimal pulse schedule realizing the program from the registry state.

    Pulses are emitted only for valves whose state must change; simultaneous
    transitions within a step are serialized with `stagger` seconds between
    commands (one pulse per drive channel at a time).
    """
    state = dict(registry)
    order = list(topology.valve_ids)
    if media_valve_id and media_valve_id not in order:
        order.append(media_valve_id)
    commands: list[PulseCommand] = []
    for index, step in enumerate(program.steps):
        try:
            targets = target_states(step.intent, topology, media_valve_id,
                                    state)
        except (ValueError, AddressOutOfRange, InvalidPort, KeyError) as exc:
            raise IntentInvalid(f"step {index}: {exc}", step_index=index)
        slot = 0
        for valve_id in order:
            if valve_id not in targets:
                continue
            want = targets[valve_id]
            if state.get(valve_id) == want:
                continue
            commands.append(PulseCommand(step.time + slot * stagger,
                                         valve_id, want, index))
            state[valve_id] = want
            slot += 1
    return PulseSchedule(tuple(commands))


def mix_decoder_program(topology: Topology, media_valve_id: str,
                        n_wells: int | None = None, interval: float = 1.5,
                        n_intervals: int = 5, final_phase: float = 2.0,
                        media_phase: float = 0.0,
                        start: float = 0.0) -> Program:
    """Sequential well-addressing program for the mix-decoder rig.

    Each cycle selects one decoder output, alternates the media valve
    (liquid +1 first) every `interval` seconds for `n_intervals` intervals,
    then holds gas for `final_phase` seconds: with the defaults a cycle is
    exactly 5 * 1.5 + 2 = 9.5 s. media_phase shifts the toggles inside the
    cycle without changing its span.
    """
    if not 0 <= media_phase < interval:
        raise ValueError("media_phase must be in [0, interval)")
    if n_wells is None:
        n_wells = 2 ** topology.depth
    cycle = n_intervals * interval + final_phase
    steps: list[ProgramStep] = []
    for well in range(n_wells):
        t0 = start + well * cycle
        select = decode_address(topology, well).as_dict()
        select[media_valve_id] = +1
        first_dwell = interval + media_phase if media_phase else interval
        steps.append(ProgramStep(t0, VectorIntent.of(select), first_dwell))
        for k in range(1, n_intervals + 1):
            t = t0 + k * interval + media_phase
            polarity = +1 if k % 2 == 0 else -1
            dwell = final_phase if k == n_intervals else interval
            steps.append(ProgramStep(t, MediaIntent(polarity), dwell))
    return Program(tuple(steps))


# -- energy ledger -------------------------------------------------------------

@dataclass
class EnergyLedger:
    pulse_energy: float
    per_valve: dict[str, int] = field(default_factory=dict)

    def record(self, valve_id: str, pulses: int) -> None:
        self.per_valve[valve_id] = self.per_valve.get(valve_id, 0) + pulses

    @property
    def total_pulses(self) -> int:
        return sum(self.per_valve.values())

    @property
    def total_energy(self) -> float:
        return self.total_pulses * self.pulse_energy

    @property
    def holding_energy(self) -> float:
        """Energy spent keeping states between pulses: none, ever."""
        return 0.0


# -- drivers --------------------------------------------------------------------

@dataclass(frozen=True)
class Ack:
    timestamp: float
    valve_id: str
    polarity: int
    occlusion_achieved: bool
    pulses_used: int
    energy: float


class RecordingDriver:
    """Record-only command sink: tracks states, acknowledges everything."""

    def __init__(self, initial_states: dict[str, int], pulse_energy: float):
        self.states = dict(initial_states)
        self.pulse_energy = pulse_energy
        self.sent: list[PulseCommand] = []

    def send_pulse(self, valve_id: str, polarity: int,
                   timestamp: float = 0.0) -> Ack:
        self.sent.append(PulseCommand(timestamp, valve_id, polarity))
        self.states[valve_id] = polarity
        return Ack(timestamp, valve_id, polarity, occlusion_achieved=True,
                   pulses_used=1, energy=self.pulse_energy)

    def execute(self, commands, duration, record_interval=None, dt=None,
                on_failure: str = "halt"):
        acks = [self.send_pulse(c.valve_id, c.polarity, c.time)
                for c in commands]
        return None, acks


class SimulatorDriver:
    """Command sink backed by the pneumatic network simulator."""

    def __init__(self, network: PneumaticNetwork,
                 record_interval: float = 1e-3, dt: float = 1e-4,
                 supply_schedule=()):
        self.network = network
        self.record_interval = record_interval
        self.dt = dt
        self.supply_schedule = tuple(supply_schedule)

    @property
    def states(self) -> dict[str, int]:
        return {vid: v.logical_state
                for vid, v in self.network.valves.items()}

    def send_pulse(self, valve_id: str, polarity: int,
                   timestamp: float = 0.0) -> Ack:
        """Immediate out-of-band dispatch (no integration between commands)."""
        valve = self.network.valves[valve_id]
        load = self.network.line_pressure(valve_id,
                                          valve.closing_tube(polarity))
        result = valve.switch(polarity, load, timestamp=timestamp)
        self.network.refresh_valve_conductances()
        return Ack(timestamp, valve_id, polarity,
                   occlusion_achieved=result.occlusion_achieved,
                   pulses_used=result.pulses_used, energy=result.energy)

    def execute(self, commands, duration, record_interval=None, dt=None,
                on_failure: str = "halt"):
        acks: list[Ack] = []

        def on_pulse(time, valve_id, polarity, result):
            if isinstance(result, SwitchResult):
                acks.append(Ack(time, valve_id, polarity,
                                result.occlusion_achieved,
                                result.pulses_used, result.energy))
            else:  # OcclusionFailed carries its own ledger contribution
                acks.append(Ack(time, valve_id, polarity, False,
                                result.pulses_used, result.energy))

        trace = self.network.run(
            duration,
            events=[(c.time, c.valve_id, c.polarity) for c in commands],
            record_interval=record_interval or self.record_interval,
            dt=dt or self.dt, supply_schedule=self.supply_schedule,
            on_pulse=on_pulse, on_failure=on_failure)
        return trace, acks


# -- execution ------------------------------------------------------------------

@dataclass(frozen=True)
class StepReport:
    index: int
    time: float
    intent: str
    pattern: RoutePattern
    media: str | None = None
    failed: bool = False


@dataclass
class RunReport:
    schedule: PulseSchedule
    acks: list[Ack]
    trace: Trace | None
    ledger: EnergyLedger
    final_states: dict[str, int]
    steps: list[StepReport]
    halted_at_step: int | None = None

    def to_text(self) -> str:
        lines = ["run summary",
                 f"pulses: {self.ledger.total_pulses}",
                 f"pulse_energy_j: {self.ledger.pulse_energy!r}",
                 f"total_energy_j: {self.ledger.total_energy!r}",
                 f"holding_energy_j: {self.ledger.holding_energy!r}"]
        for vid in sorted(self.ledger.per_valve):
            lines.append(f"pulses[{vid}]: {self.ledger.per_valve[vid]}")
        if self.halted_at_step is not None:
            lines.append(f"halted_at_step: {self.halted_at_step}")
        lines.append("final_states: " + " ".join(
            f"{v}:{s:+d}" for v, s in sorted(self.final_states.items())))
        for step in self.steps:
            routes = ";".join(f"{a}->{b}" for a, b in sorted(step.pattern.pairs))
            media = ""
            if step.pattern.well_media:
                media = " wells " + ";".join(
                    f"{w}={'+'.join(sorted(m))}"
                    for w, m in sorted(step.pattern.well_media.items()))
            flag = " FAILED" if step.failed else ""
            lines.append(f"step {step.index} t={step.time:g} {step.intent}"
                         f" routes {routes or '-'}{media}{flag}")
        return "\n".join(lines) + "\n"


def execute(schedule: PulseSchedule, driver, program: Program,
            topology: Topology, initial_states: dict[str, int],
            pulse_energy: float, duration: float | None = None,
            media_valve_id: str | None = None,
            media_labels: dict[int, str] | None = None,
            halt_on_failure: bool = True,
            record_interval: float = 1e-3, dt: float = 1e-4) -> RunReport:
    """Dispatch a schedule through a driver and reconstruct what it achieved.

    Returns traces (if the driver simulates), an exact energy ledger, the
    final state vector and the per-step achieved route pattern.
    """
    if duration is None:
        duration = program.duration
    trace, acks = driver.execute(schedule.commands, duration,
                                 record_interval=record_interval, dt=dt,
                                 on_failure="halt" if halt_on_failure
                                 else "continue")

    ledger = EnergyLedger(pulse_energy=pulse_energy)
    states = dict(initial_states)
    ack_by_key = {(a.timestamp, a.valve_id): a for a in acks}
    halted_at: int | None = None
    steps: list[StepReport] = []
    commands_by_step: dict[int, list[PulseCommand]] = {}
    for cmd in schedule.commands:
        commands_by_step.setdefault(cmd.step_index, []).append(cmd)

    for ack in acks:
        ledger.record(ack.valve_id, ack.pulses_used)
        if ack.occlusion_achieved:
            states[ack.valve_id] = ack.polarity

    # Replay step by step against acknowledged outcomes to log the pattern
    # actually reached after each step's commands.
    replay = dict(initial_states)
    for index, step in enumerate(program.steps):
        failed = False
        reached_all = True
        for cmd in commands_by_step.get(index, ()):
            ack = ack_by_key.get((cmd.time, cmd.valve_id))
            if ack is None:
                reached_all = False  # halted before this command fired
                continue
            if ack.occlusion_achieved:
                replay[cmd.valve_id] = ack.polarity
            else:
                failed = True
        if failed:
            halted_at = index if halt_on_failure else halted_at
        media = None
        pattern_topology = topology
        if media_valve_id and media_labels:
            media = media_labels.get(replay.get(media_valve_id, +1))
            if media is not None:
                port_media = {port: media for port in topology.inputs}
                pattern_topology = dataclasses.replace(
                    topology, port_media=port_media)
        vector = StateVector.from_dict(
            pattern_topology,
            {v: replay[v] for v in pattern_topology.valve_ids})
        pattern = active_paths(pattern_topology, vector)
        steps.append(StepReport(index, step.time, _describe(step.intent),
                                pattern, media=media, failed=failed))
        if (failed and halt_on_failure) or not reached_all:
            break

    return RunReport(schedule=schedule, acks=acks, trace=trace, ledger=ledger,
                     final_states=states, steps=steps,
                     halted_at_step=halted_at)


def _describe(intent) -> str:
    describe = getattr(intent, "describe", None)
    return describe() if describe else repr(intent)


# -- valve state registry --------------------------------------------------------

REGISTRY_HEADER = "# sepmflow valve registry v1"


def format_registry(records: dict[str, tuple[int, int]]) -> str:
    """records: valve id -> (logical_state, pulse_count), sorted output."""
    lines = [REGISTRY_HEADER]
    for vid in sorted(records):
        state, pulses = records[vid]
        lines.append(f"{vid} {state:+d} {pulses}")
    return "\n".join(lines) + "\n"


def parse_registry(text: str, require_ids=None) -> dict[str, tuple[int, int]]:
    records: dict[str, tuple[int, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise CorruptRegistry(
                f"line {lineno}: expected 'id state pulse_count', got {raw!r}",
                line=lineno)
        vid, state_s, pulses_s = parts
        try:
            state = int(state_s)
            pulses = int(pulses_s)
        except ValueError:
            raise CorruptRegistry(f"line {lineno}: non-integer field in {raw!r}",
                                  line=lineno)
        if state not in (+1, -1) or pulses < 0:
            raise CorruptRegistry(f"line {lineno}: invalid record {raw!r}",
                                  line=lineno)
        if vid in records:
            raise CorruptRegistry(f"line {lineno}: duplicate valve id {vid!r}",
                                  line=lineno)
        records[vid] = (state, pulses)
    if require_ids is not None:
        missing = sorted(set(require_ids) - set(records))
        if missing:
            raise CorruptRegistry(f"registry missing valve ids: {missing}")
    return records


def persist_registry(records: dict[str, tuple[int, int]], path) -> None:
    Path(path).write_text(format_registry(records))


def load_registry(path, require_ids=None) -> dict[str, tuple[int, int]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CorruptRegistry(f"cannot read registry {path}: {exc}")
    return parse_registry(text, require_ids=require_ids)

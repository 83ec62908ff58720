"""Scenario documents: one YAML file describing a complete runnable setup.

A scenario names a profile, a routing topology, the pneumatic plumbing
(explicit node/edge lists, or `auto` to generate the standard rig for the
topology), initial valve states, a timed program and run settings. Numeric
fields in explicit networks may reference profile rig constants as
"$rig.<key>" so that calibration updates propagate into the bundled rigs.

Bundled scenarios (fig3_single_valve, fig3_dual_outlet, fig3_static_seal,
fig4_decoder_k3, fig5_dual_tree, fig6_six_port, fig6_mix_decoder) live in
sepmflow/data/scenarios.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import CorruptRegistry, ScenarioError
from .pneumatics import FlowEdge, PneumaticNetwork, PressureNode, Trace
from .profiles import Profile
from .routing import Topology, build_topology
from .sequencer import (AddressIntent, MediaIntent, Program, ProgramStep,
                        PulseSchedule, RunReport, SimulatorDriver,
                        SixPortIntent, VectorIntent, compile_program, execute,
                        mix_decoder_program)

SCENARIO_RESOURCE_DIR = "scenarios"
BUNDLED_SCENARIOS = (
    "fig3_single_valve",
    "fig3_dual_outlet",
    "fig3_static_seal",
    "fig4_decoder_k3",
    "fig5_dual_tree",
    "fig6_six_port",
    "fig6_mix_decoder",
)


def bundled_scenario_names() -> tuple[str, ...]:
    return BUNDLED_SCENARIOS


def load_bundled_scenario(name: str) -> "Scenario":
    if name not in BUNDLED_SCENARIOS:
        raise ScenarioError(
            f"unknown bundled scenario {name!r}; available: "
            f"{', '.join(BUNDLED_SCENARIOS)}")
    text = resources.files("sepmflow.data").joinpath(
        f"{SCENARIO_RESOURCE_DIR}/{name}.yaml").read_text()
    return Scenario.loads(text, source=f"bundled:{name}")


def resolve_scenario(ref) -> "Scenario":
    """Accept a bundled name, a file path, or an inline mapping."""
    if isinstance(ref, dict):
        return Scenario(ref)
    if isinstance(ref, str) and ref in BUNDLED_SCENARIOS:
        return load_bundled_scenario(ref)
    return Scenario.load(ref)


def _state_value(raw, where: str) -> int:
    if raw in (+1, -1):
        return int(raw)
    if isinstance(raw, str) and raw.lstrip("+-").isdigit() and int(raw) in (1, -1):
        return int(raw)
    raise ScenarioError(f"{where}: state must be +1 or -1, got {raw!r}")


@dataclass
class RunResult:
    """Everything a run produced, ready for the service/CLI to write out."""

    scenario_name: str
    schedule: PulseSchedule
    dry_run: bool
    report: RunReport | None = None
    trace: Trace | None = None
    registry_records: dict[str, tuple[int, int]] = field(default_factory=dict)


class Scenario:
    def __init__(self, doc: dict, source: str = "<inline>"):
        if not isinstance(doc, dict):
            raise ScenarioError(f"scenario {source}: document must be a mapping")
        self.doc = doc
        self.source = source

    # -- parse / serialize --------------------------------------------------

    @classmethod
    def loads(cls, text: str, source: str = "<inline>") -> "Scenario":
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"scenario {source}: invalid YAML: {exc}")
        return cls(doc, source)

    @classmethod
    def load(cls, path) -> "Scenario":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}")
        return cls.loads(text, source=str(path))

    def dumps(self) -> str:
        return yaml.safe_dump(self.doc, sort_keys=True,
                              default_flow_style=False)

    @property
    def name(self) -> str:
        return self.doc.get("name", "unnamed")

    def _req(self, key: str):
        if key not in self.doc:
            raise ScenarioError(f"scenario {self.name}: missing {key!r}")
        return self.doc[key]

    # -- pieces ---------------------------------------------------------------

    def profile(self) -> Profile:
        return Profile.resolve(self.doc.get("profile", "default"))

    def topology(self) -> Topology:
        spec = self._req("topology")
        if not isinstance(spec, dict) or "kind" not in spec:
            raise ScenarioError(
                f"scenario {self.name}: topology needs a 'kind'")
        try:
            return build_topology(spec["kind"], depth=spec.get("depth", 3))
        except ValueError as exc:
            raise ScenarioError(f"scenario {self.name}: {exc}")

    def media_valve(self) -> tuple[str | None, dict[int, str]]:
        spec = self.doc.get("media_valve")
        if not spec:
            return None, {}
        if "id" not in spec:
            raise ScenarioError(f"scenario {self.name}: media_valve needs id")
        labels = {+1: spec.get("plus", "plus"), -1: spec.get("minus", "minus")}
        return spec["id"], labels

    def valve_ids(self) -> list[str]:
        topology = self.topology()
        media_id, _ = self.media_valve()
        ids = list(topology.valve_ids)
        if media_id:
            ids.append(media_id)
        return ids

    def initial_states(self) -> dict[str, int]:
        states = {vid: +1 for vid in self.valve_ids()}
        for vid, raw in (self.doc.get("initial_states") or {}).items():
            if vid not in states:
                raise ScenarioError(
                    f"scenario {self.name}: initial state for unknown valve "
                    f"{vid!r}")
            states[vid] = _state_value(raw, f"initial_states[{vid}]")
        return states

    def program(self, topology: Topology, media_valve_id) -> Program:
        spec = self.doc.get("program") or {}
        if "mix_decoder" in spec:
            mx = spec["mix_decoder"] or {}
            if media_valve_id is None:
                raise ScenarioError(
                    f"scenario {self.name}: mix_decoder program needs a "
                    f"media_valve")
            return mix_decoder_program(
                topology, media_valve_id,
                n_wells=mx.get("wells"),
                interval=mx.get("interval_s", 1.5),
                n_intervals=mx.get("intervals", 5),
                final_phase=mx.get("final_phase_s", 2.0),
                media_phase=mx.get("media_phase_s", 0.0),
                start=mx.get("start_s", 0.0))
        steps = []
        for i, raw in enumerate(spec.get("steps", [])):
            where = f"scenario {self.name}: program step {i}"
            if "time" not in raw or "dwell" not in raw:
                raise ScenarioError(f"{where}: needs time and dwell")
            steps.append(ProgramStep(float(raw["time"]),
                                     self._intent(raw, where),
                                     float(raw["dwell"])))
        try:
            return Program(tuple(steps))
        except ValueError as exc:
            raise ScenarioError(f"scenario {self.name}: {exc}")

    def _intent(self, raw: dict, where: str):
        kinds = [k for k in ("address", "six_port", "vector", "media")
                 if k in raw]
        if len(kinds) != 1:
            raise ScenarioError(
                f"{where}: exactly one of address/six_port/vector/media")
        kind = kinds[0]
        value = raw[kind]
        if kind == "address":
            return AddressIntent(int(value))
        if kind == "six_port":
            if isinstance(value, str):
                return SixPortIntent(value)
            if isinstance(value, dict) and len(value) == 1:
                mode, ports = next(iter(value.items()))
                if not isinstance(ports, (list, tuple)):
                    ports = [ports]
                return SixPortIntent(mode, tuple(int(p) for p in ports))
            raise ScenarioError(f"{where}: bad six_port intent {value!r}")
        if kind == "vector":
            if not isinstance(value, dict) or not value:
                raise ScenarioError(f"{where}: vector must be a mapping")
            return VectorIntent.of(
                {v: _state_value(s, where) for v, s in value.items()})
        if value == "toggle":
            return MediaIntent("toggle")
        return MediaIntent(_state_value(value, where))

    # -- network ------------------------------------------------------------

    def _rig_value(self, raw, profile: Profile, where: str) -> float:
        if isinstance(raw, str):
            if not raw.startswith("$rig."):
                raise ScenarioError(f"{where}: bad value reference {raw!r}")
            return float(profile.rig(raw[len("$rig."):]))
        return float(raw)

    def build_network(self, profile: Profile, valves) -> PneumaticNetwork:
        spec = self._req("network")
        network = PneumaticNetwork()
        for valve in valves:
            network.add_valve(valve)
        if spec.get("auto"):
            self._build_auto_network(network, spec["auto"], profile)
        else:
            self._build_explicit_network(network, spec, profile)
        network.refresh_valve_conductances()
        return network

    def _build_explicit_network(self, network: PneumaticNetwork, spec: dict,
                                profile: Profile) -> None:
        for raw in spec.get("nodes", []):
            where = f"scenario {self.name}: node {raw.get('id')!r}"
            try:
                network.add_node(PressureNode(
                    id=raw["id"], kind=raw.get("kind", "internal"),
                    pressure=float(raw.get("pressure_kpa", 0.0)) * 1e3,
                    capacitance=self._rig_value(raw.get("capacitance", 0.0),
                                                profile, where)))
            except (KeyError, ValueError) as exc:
                raise ScenarioError(f"{where}: {exc}")
        for raw in spec.get("edges", []):
            where = f"scenario {self.name}: edge {raw.get('id')!r}"
            try:
                if "valve" in raw:
                    edge = FlowEdge(id=raw["id"], node_from=raw["from"],
                                    node_to=raw["to"], valve_id=raw["valve"],
                                    tube=raw["tube"])
                else:
                    edge = FlowEdge(
                        id=raw["id"], node_from=raw["from"], node_to=raw["to"],
                        conductance=self._rig_value(raw.get("conductance", 0.0),
                                                    profile, where))
                network.add_edge(edge)
            except (KeyError, ValueError) as exc:
                raise ScenarioError(f"{where}: {exc}")

    def _build_auto_network(self, network: PneumaticNetwork, auto: dict,
                            profile: Profile) -> None:
        """Standard rig for a routing topology: one regulated supply feeding
        every input port, every output port an open well, junction nodes at
        the valve branch points."""
        topology = self.topology()
        media_id, labels = self.media_valve()
        supply = float(auto.get("supply_kpa", 100.0)) * 1e3
        c_junction = profile.rig("junction_capacitance_m3_per_pa")
        g_feed = profile.rig("feed_conductance")

        graph_nodes: set[str] = set()
        for edge in topology.edges:
            graph_nodes.add(edge.node_from)
            graph_nodes.add(edge.node_to)
        outputs = set(topology.outputs)
        for name in sorted(graph_nodes):
            if name in outputs:
                network.add_node(PressureNode(name, kind="well"))
            else:
                network.add_node(PressureNode(name, kind="internal",
                                              capacitance=c_junction))

        if media_id:
            # Two supply rails selected by the media valve: lower tube (+1)
            # passes the 'plus' medium, upper tube (-1) the 'minus' medium.
            for state, tube in ((+1, "lower"), (-1, "upper")):
                rail = f"SUPPLY_{labels[state]}"
                network.add_node(PressureNode(rail, kind="supply",
                                              pressure=supply))
                for port in topology.inputs:
                    network.add_edge(FlowEdge(
                        id=f"media_{labels[state]}_{port}", node_from=rail,
                        node_to=port, valve_id=media_id, tube=tube))
        else:
            network.add_node(PressureNode("SUPPLY", kind="supply",
                                          pressure=supply))
            for port in topology.inputs:
                network.add_edge(FlowEdge(id=f"feed_{port}",
                                          node_from="SUPPLY", node_to=port,
                                          conductance=g_feed))

        for i, edge in enumerate(topology.edges):
            network.add_edge(FlowEdge(
                id=f"r{i}_{edge.node_from}_{edge.node_to}",
                node_from=edge.node_from, node_to=edge.node_to,
                conductance=0.0 if edge.valve_id else g_feed,
                valve_id=edge.valve_id, tube=edge.tube))

    def supply_schedule(self) -> list[tuple[float, str, float]]:
        out = []
        for raw in self.doc.get("supply_schedule", []) or []:
            out.append((float(raw["time"]), raw["node"],
                        float(raw["pressure_kpa"]) * 1e3))
        return sorted(out)

    # -- run ------------------------------------------------------------------

    def run(self, registry_records: dict[str, tuple[int, int]] | None = None,
            seed: int | None = None, dry_run: bool = False,
            profile: Profile | None = None) -> RunResult:
        profile = profile or self.profile()
        topology = self.topology()
        media_id, media_labels = self.media_valve()
        run_cfg = self.doc.get("run") or {}
        stagger = float((self.doc.get("program") or {}).get("stagger_s", 1e-3))

        states = self.initial_states()
        pulse_counts = {vid: 0 for vid in states}
        if registry_records is not None:
            missing = sorted(set(states) - set(registry_records))
            if missing:
                raise CorruptRegistry(f"registry missing valve ids: {missing}")
            for vid in states:
                states[vid], pulse_counts[vid] = registry_records[vid]

        program = self.program(topology, media_id)
        schedule = compile_program(program, topology, states,
                                   media_valve_id=media_id, stagger=stagger)
        if dry_run:
            return RunResult(scenario_name=self.name, schedule=schedule,
                             dry_run=True,
                             registry_records={v: (states[v], pulse_counts[v])
                                               for v in states})

        rng = np.random.default_rng(0 if seed is None else seed)
        valves = [profile.make_valve(vid, states[vid], pulse_counts[vid],
                                     rng=rng) for vid in states]
        network = self.build_network(profile, valves)
        driver = SimulatorDriver(network,
                                 supply_schedule=self.supply_schedule())

        duration = float(run_cfg.get("duration_s", program.duration or 1.0))
        dt = float(run_cfg.get("dt_s", profile.default_dt))
        record = float(run_cfg.get("record_interval_s",
                                   profile.default_record_interval))
        halt = bool(run_cfg.get("halt_on_failure", True))

        report = execute(schedule, driver, program, topology, states,
                         pulse_energy=profile.pulse_energy(),
                         duration=duration, media_valve_id=media_id,
                         media_labels=media_labels, halt_on_failure=halt,
                         record_interval=record, dt=dt)
        registry = {vid: (network.valves[vid].logical_state,
                          network.valves[vid].pulse_count)
                    for vid in states}
        return RunResult(scenario_name=self.name, schedule=schedule,
                         dry_run=False, report=report, trace=report.trace,
                         registry_records=registry)

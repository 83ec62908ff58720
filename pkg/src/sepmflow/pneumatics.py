"""Lumped pneumatic network: capacitive nodes, resistive edges, fixed rails.

Flow is linear in pressure difference (laminar RC analogy), integrated with
an explicit forward-Euler scheme. run() sub-steps automatically to stay
inside the stability bound and stops iterating early once the state reaches
its bit-exact fixed point, so long quiescent stretches (e.g. a closed valve
holding for minutes) cost almost nothing while remaining reproducible to the
last bit.

Choked/compressible gas dynamics are out of scope; conductances are
calibration parameters, not derived from duct geometry.
"""

from __future__ import annotations

import heapq
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NeverSettles, OcclusionFailed, UnstableStep
from .valve import Valve

FIXED_KINDS = ("supply", "vent-terminal", "well")
NODE_KINDS = FIXED_KINDS + ("internal",)


@dataclass
class PressureNode:
    id: str
    kind: str = "internal"
    pressure: float = 0.0      # gauge [Pa]; ambient = 0
    capacitance: float = 0.0   # [m^3/Pa], required > 0 for internal nodes

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise ValueError(f"unknown node kind {self.kind!r}")
        if self.kind == "internal" and not self.capacitance > 0:
            raise ValueError(f"internal node {self.id!r} needs capacitance > 0")

    @property
    def fixed(self) -> bool:
        return self.kind in FIXED_KINDS


@dataclass
class FlowEdge:
    id: str
    node_from: str
    node_to: str
    conductance: float = 0.0   # [(m^3/s)/Pa]
    valve_id: str | None = None
    tube: str | None = None    # "upper" | "lower" when valve-sourced

    def __post_init__(self):
        if self.conductance < 0:
            raise ValueError(f"edge {self.id!r} conductance must be >= 0")
        if (self.valve_id is None) != (self.tube is None):
            raise ValueError(f"edge {self.id!r}: valve edges need valve and tube")
        if self.tube is not None and self.tube not in ("upper", "lower"):
            raise ValueError(f"edge {self.id!r}: tube must be upper or lower")


@dataclass
class Trace:
    """Uniformly sampled pressures and flows plus command markers."""

    times: np.ndarray
    node_ids: list[str]
    pressures: np.ndarray            # shape (samples, nodes)
    edge_ids: list[str]
    flows: np.ndarray                # shape (samples, edges)
    events: list[tuple[float, str]] = field(default_factory=list)

    def pressure(self, node_id: str) -> np.ndarray:
        return self.pressures[:, self.node_ids.index(node_id)]

    def flow(self, edge_id: str) -> np.ndarray:
        return self.flows[:, self.edge_ids.index(edge_id)]

    def to_csv(self) -> str:
        """Columns: time_s, p_<node> (alphabetical), q_<edge> (alphabetical)."""
        node_order = sorted(range(len(self.node_ids)),
                            key=lambda i: self.node_ids[i])
        edge_order = sorted(range(len(self.edge_ids)),
                            key=lambda i: self.edge_ids[i])
        out = io.StringIO()
        header = (["time_s"]
                  + [f"p_{self.node_ids[i]}" for i in node_order]
                  + [f"q_{self.edge_ids[i]}" for i in edge_order])
        out.write(",".join(header) + "\n")
        for k in range(len(self.times)):
            row = [format(self.times[k], ".9g")]
            row += [repr(float(self.pressures[k, i])) for i in node_order]
            row += [repr(float(self.flows[k, i])) for i in edge_order]
            out.write(",".join(row) + "\n")
        return out.getvalue()


def measure_settle(trace: Trace, node_id: str, fraction: float,
                   event_time: float = 0.0, target: float | None = None,
                   band_abs: float | None = None) -> float:
    """Seconds after event_time until the node enters and stays in band.

    Band is fraction * |target - value at event| unless band_abs is given.
    Target defaults to the final sample. Raises NeverSettles if the trace
    ends outside the band.
    """
    series = trace.pressure(node_id)
    idx = int(np.searchsorted(trace.times, event_time, side="left"))
    if idx >= len(series):
        raise NeverSettles(f"event at {event_time} s is past the trace end")
    goal = float(series[-1]) if target is None else float(target)
    band = abs(goal - float(series[idx])) * fraction if band_abs is None \
        else band_abs
    outside = np.abs(series - goal) > band
    if outside[-1]:
        raise NeverSettles(
            f"{node_id} never stays within {band:.6g} Pa of {goal:.6g} Pa")
    last_out = np.nonzero(outside)[0]
    settle_idx = int(last_out[-1]) + 1 if len(last_out) else idx
    if settle_idx <= idx:
        return 0.0
    return float(trace.times[settle_idx] - event_time)


class PneumaticNetwork:
    """Single-writer mutable network; independent instances are unrelated."""

    def __init__(self):
        self.nodes: dict[str, PressureNode] = {}
        self.edges: dict[str, FlowEdge] = {}
        self.valves: dict[str, Valve] = {}
        self._dirty = True

    # -- construction -----------------------------------------------------

    def add_node(self, node: PressureNode) -> PressureNode:
        if node.id in self.nodes:
            raise ValueError(f"duplicate node id {node.id!r}")
        self.nodes[node.id] = node
        self._dirty = True
        return node

    def add_edge(self, edge: FlowEdge) -> FlowEdge:
        if edge.id in self.edges:
            raise ValueError(f"duplicate edge id {edge.id!r}")
        for nid in (edge.node_from, edge.node_to):
            if nid not in self.nodes:
                raise ValueError(f"edge {edge.id!r}: unknown node {nid!r}")
        if edge.valve_id is not None and edge.valve_id not in self.valves:
            raise ValueError(f"edge {edge.id!r}: unknown valve {edge.valve_id!r}")
        self.edges[edge.id] = edge
        self._dirty = True
        return edge

    def add_valve(self, valve: Valve) -> Valve:
        if valve.id in self.valves:
            raise ValueError(f"duplicate valve id {valve.id!r}")
        self.valves[valve.id] = valve
        return valve

    # -- assembly ----------------------------------------------------------

    def refresh_valve_conductances(self) -> None:
        for edge in self.edges.values():
            if edge.valve_id is None:
                continue
            upper, lower = self.valves[edge.valve_id].tube_conductances()
            edge.conductance = upper if edge.tube == "upper" else lower
        self._dirty = True

    def _assemble(self):
        ids = list(self.nodes)
        index = {nid: i for i, nid in enumerate(ids)}
        n = len(ids)
        a = np.zeros((n, n))
        for edge in self.edges.values():
            i, j = index[edge.node_from], index[edge.node_to]
            gc = edge.conductance
            a[i, i] -= gc
            a[j, j] -= gc
            a[i, j] += gc
            a[j, i] += gc
        coef = np.zeros(n)
        for nid, node in self.nodes.items():
            if not node.fixed:
                coef[index[nid]] = 1.0 / node.capacitance
        self._ids = ids
        self._index = index
        self._a = a
        self._coef = coef  # 1/C at internal nodes, 0 at fixed nodes
        self._edge_from = np.array([index[e.node_from]
                                    for e in self.edges.values()], dtype=int)
        self._edge_to = np.array([index[e.node_to]
                                  for e in self.edges.values()], dtype=int)
        self._edge_g = np.array([e.conductance for e in self.edges.values()])
        self._dirty = False

    def _pressure_vector(self) -> np.ndarray:
        return np.array([node.pressure for node in self.nodes.values()])

    def _store_pressures(self, p: np.ndarray) -> None:
        for i, node in enumerate(self.nodes.values()):
            node.pressure = float(p[i])

    def stability_bound(self) -> float:
        """Largest explicit step that keeps every internal node stable [s]."""
        if self._dirty:
            self._assemble()
        bound = math.inf
        for nid, node in self.nodes.items():
            if node.fixed:
                continue
            sum_g = -self._a[self._index[nid], self._index[nid]]
            if sum_g > 0:
                bound = min(bound, node.capacitance / sum_g)
        return bound

    # -- dynamics ----------------------------------------------------------

    def step(self, dt: float) -> None:
        """One explicit Euler step of length dt.

        dP = sum_edges G*(P_neighbor - P) * dt / C at every internal node;
        fixed nodes are untouched. Raises UnstableStep when dt exceeds the
        min(C/sum G) bound.
        """
        if dt <= 0:
            raise ValueError("dt must be > 0")
        self.refresh_valve_conductances()
        self._assemble()
        bound = self.stability_bound()
        if dt > bound:
            raise UnstableStep(
                f"dt={dt:.6g} s exceeds stability bound {bound:.6g} s")
        p = self._pressure_vector()
        self._store_pressures(p + dt * self._coef * (self._a @ p))

    def _integrate(self, p: np.ndarray, span: float, dt_max: float) -> np.ndarray:
        """Advance `p` by `span` seconds with equal substeps <= dt_max."""
        if span <= 0.0:
            return p
        n_sub = max(1, int(math.ceil(span / dt_max - 1e-12)))
        dt = span / n_sub
        coef = dt * self._coef
        a = self._a
        for _ in range(n_sub):
            new = p + coef * (a @ p)
            if np.array_equal(new, p):
                break  # fixed point in float64: further substeps are no-ops
            p = new
        return p

    def inject_volume(self, p: np.ndarray, node_id: str, volume: float) -> None:
        """Instantaneous volume dump into a node (tube-pinch displacement)."""
        node = self.nodes[node_id]
        if node.fixed:
            return
        p[self._index[node_id]] += volume / node.capacitance

    def stored_mass(self, node_ids=None) -> float:
        """Sum of C*P over the given (default: all internal) nodes."""
        total = 0.0
        for nid, node in self.nodes.items():
            if node.fixed or (node_ids is not None and nid not in node_ids):
                continue
            total += node.capacitance * node.pressure
        return total

    def edge_flow(self, edge_id: str) -> float:
        edge = self.edges[edge_id]
        return edge.conductance * (self.nodes[edge.node_from].pressure
                                   - self.nodes[edge.node_to].pressure)

    def line_pressure(self, valve_id: str, tube: str) -> float:
        """Gauge pressure loading the named tube (max over its endpoints)."""
        best = 0.0
        for edge in self.edges.values():
            if edge.valve_id == valve_id and edge.tube == tube:
                best = max(best,
                           self.nodes[edge.node_from].pressure,
                           self.nodes[edge.node_to].pressure)
        return best

    def _apply_completion(self, p: np.ndarray, valve: Valve,
                          polarity: int) -> None:
        """Seal established: swap conductances and push the pinched volume."""
        closing = valve.closing_tube(polarity)
        displaced = valve.pinch_displaced_volume(polarity)
        for edge in self.edges.values():
            if edge.valve_id == valve.id and edge.tube == closing:
                self.inject_volume(p, edge.node_from, displaced / 2.0)
                self.inject_volume(p, edge.node_to, displaced / 2.0)
        self.refresh_valve_conductances()
        self._assemble()

    def run(self, duration: float, events=(), record_interval: float = 1e-3,
            dt: float = 1e-4, supply_schedule=(), on_pulse=None,
            on_failure: str = "raise") -> Trace:
        """Integrate for `duration` seconds executing timed pulse commands.

        events: iterables of (time, valve_id, polarity). Each command pulses
        the valve after its dead time: the switch attempt, conductance swap
        and pinch-displacement injection all happen at time + dead_time.
        supply_schedule: (time, node_id, pressure) setpoint changes.
        on_pulse(time, valve_id, polarity, result_or_error) observes every
        command. on_failure: "raise" propagates OcclusionFailed (with
        timestamp), "halt" stops integration, "continue" keeps going.
        """
        if on_failure not in ("raise", "halt", "continue"):
            raise ValueError("on_failure must be raise, halt or continue")
        self.refresh_valve_conductances()
        self._assemble()

        heap: list = []
        seq = 0
        for time, valve_id, polarity in events:
            dead = self.valves[valve_id].dead_time
            heapq.heappush(heap, (time + dead, seq, "pulse",
                                  (time, valve_id, polarity)))
            seq += 1
        for time, node_id, pressure in supply_schedule:
            heapq.heappush(heap, (time, seq, "supply", (node_id, pressure)))
            seq += 1

        n_samples = int(round(duration / record_interval)) + 1
        times = np.empty(n_samples)
        pressures = np.empty((n_samples, len(self.nodes)))
        flows = np.empty((n_samples, len(self.edges)))
        markers: list[tuple[float, str]] = []

        p = self._pressure_vector()
        t = 0.0
        halted = False

        def sample(k: int, t_k: float) -> None:
            times[k] = t_k
            pressures[k, :] = p
            flows[k, :] = self._edge_g * (p[self._edge_from] - p[self._edge_to])

        def apply_action(kind: str, payload) -> bool:
            nonlocal p
            if kind == "supply":
                node_id, pressure = payload
                self.nodes[node_id].pressure = pressure
                p[self._index[node_id]] = pressure
                return False
            cmd_time, valve_id, polarity = payload
            valve = self.valves[valve_id]
            pressure_load = self._line_pressure_from(
                p, valve_id, valve.closing_tube(polarity))
            try:
                result = valve.switch(polarity, pressure_load,
                                      timestamp=cmd_time)
            except OcclusionFailed as exc:
                markers.append((cmd_time, f"{valve_id}:{polarity:+d}:failed"))
                if on_pulse is not None:
                    on_pulse(cmd_time, valve_id, polarity, exc)
                if on_failure == "raise":
                    raise
                return on_failure == "halt"
            markers.append((cmd_time, f"{valve_id}:{polarity:+d}"))
            if result.switched:
                self._apply_completion(p, valve, polarity)
            if on_pulse is not None:
                on_pulse(cmd_time, valve_id, polarity, result)
            return False

        sample(0, 0.0)
        for k in range(1, n_samples):
            t_k = k * record_interval
            while heap and heap[0][0] <= t_k and not halted:
                a_time, _, kind, payload = heapq.heappop(heap)
                bound = self.stability_bound()
                p = self._integrate(p, a_time - t, min(dt, 0.5 * bound))
                t = a_time
                halted = apply_action(kind, payload)
            if not halted:
                bound = self.stability_bound()
                p = self._integrate(p, t_k - t, min(dt, 0.5 * bound))
                t = t_k
            sample(k, t_k)

        self._store_pressures(p)
        return Trace(times=times, node_ids=list(self._ids),
                     pressures=pressures, edge_ids=list(self.edges),
                     flows=flows, events=markers)

    def _line_pressure_from(self, p: np.ndarray, valve_id: str,
                            tube: str) -> float:
        best = 0.0
        for edge in self.edges.values():
            if edge.valve_id == valve_id and edge.tube == tube:
                best = max(best, p[self._index[edge.node_from]],
                           p[self._index[edge.node_to]])
        return best

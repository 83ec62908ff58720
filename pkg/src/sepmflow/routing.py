"""Routing architectures built from pinch valves, and their state algebra.

Valve tube convention everywhere: logical state -1 leaves the upper tube
open, +1 leaves the lower tube open. In branching topologies the upper tube
feeds the even-index (lower-numbered) branch, so -1 selects outputs with a 0
address bit and +1 selects a 1 bit.

Four architectures are provided: the single-valve binary unit, the binary
tree decoder (2^k - 1 valves for 2^k outputs), the six-port ring with
alternating input/output ports, and the dual-tree mixer feeding a six-well
plate through a fixed fan-out layer. Reachability (active_paths) is the one
oracle all higher-level tables and checks are derived from.
"""

from __future__ import annotations

import io
import itertools
from dataclasses import dataclass, field

from .errors import AddressOutOfRange, DontCarePresent, InvalidPort

DONT_CARE = None

SIX_PORT_INPUTS = (1, 3, 5)
SIX_PORT_OUTPUTS = (2, 4, 6)

DUAL_TREE_WELLS = ("A1", "B1", "C1", "A2", "B2", "C2")
DUAL_TREE_RECYCLES = ("RA", "RB")

# Fan-out of each tree leaf into the mixing layer: the two facing leaves
# (tree A leaf 3 and tree B leaf 3) share a middle-row well, so driving both
# trees to the same column mixes in that column's middle well; the other two
# leaves of each tree are recycle returns.
_MIXER_FANOUT_A = {3: ("A1", "B1"), 0: ("A2", "B2"), 1: ("RA",), 2: ("RA",)}
_MIXER_FANOUT_B = {3: ("B1", "C1"), 0: ("B2", "C2"), 1: ("RB",), 2: ("RB",)}


def tube_open(state: int, tube: str) -> bool:
    """Whether the named tube passes flow in the given logical state."""
    return state == (-1 if tube == "upper" else +1)


@dataclass(frozen=True)
class RouteEdge:
    node_from: str
    node_to: str
    valve_id: str | None = None
    tube: str | None = None


@dataclass(frozen=True)
class Topology:
    kind: str
    valve_ids: tuple[str, ...]
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    edges: tuple[RouteEdge, ...]
    port_media: dict[str, str] = field(default_factory=dict)
    depth: int = 0

    @property
    def valve_count(self) -> int:
        return len(self.valve_ids)

    def media_for(self, port: str) -> str:
        return self.port_media.get(port, port)

    def reversed(self) -> "Topology":
        """Flow-reversed twin: outputs become inputs (multiplexer view)."""
        edges = tuple(RouteEdge(e.node_to, e.node_from, e.valve_id, e.tube)
                      for e in self.edges)
        return Topology(kind=self.kind + "-reversed",
                        valve_ids=self.valve_ids, inputs=self.outputs,
                        outputs=self.inputs, edges=edges,
                        port_media=dict(self.port_media), depth=self.depth)


@dataclass(frozen=True)
class StateVector:
    """Per-valve logical states aligned with a topology's valve order."""

    valve_ids: tuple[str, ...]
    states: tuple  # entries +1, -1 or DONT_CARE

    def __post_init__(self):
        if len(self.valve_ids) != len(self.states):
            raise ValueError("state vector length must match valve count")
        for s in self.states:
            if s not in (+1, -1, DONT_CARE):
                raise ValueError(f"invalid state entry {s!r}")

    @classmethod
    def from_dict(cls, topology: Topology, mapping: dict) -> "StateVector":
        unknown = set(mapping) - set(topology.valve_ids)
        if unknown:
            raise ValueError(f"states for unknown valves: {sorted(unknown)}")
        return cls(topology.valve_ids,
                   tuple(mapping.get(v, DONT_CARE)
                         for v in topology.valve_ids))

    def as_dict(self, include_dont_care: bool = False) -> dict:
        return {v: s for v, s in zip(self.valve_ids, self.states)
                if include_dont_care or s is not DONT_CARE}

    def state_of(self, valve_id: str):
        return self.states[self.valve_ids.index(valve_id)]

    @property
    def concrete(self) -> bool:
        return DONT_CARE not in self.states

    def concretizations(self):
        """All fully concrete vectors consistent with this one."""
        free = [i for i, s in enumerate(self.states) if s is DONT_CARE]
        for choice in itertools.product((-1, +1), repeat=len(free)):
            states = list(self.states)
            for idx, s in zip(free, choice):
                states[idx] = s
            yield StateVector(self.valve_ids, tuple(states))

    def symbols(self) -> tuple[str, ...]:
        return tuple("x" if s is DONT_CARE else f"{s:+d}" for s in self.states)


@dataclass(frozen=True)
class RoutePattern:
    """Connected input->output pairs and the media sets delivered per output."""

    pairs: frozenset  # of (input port, output port)
    well_media: dict  # output port -> frozenset of media labels

    def media_at(self, well: str) -> frozenset:
        return self.well_media.get(well, frozenset())

    def mixed_wells(self) -> tuple[str, ...]:
        return tuple(sorted(w for w, m in self.well_media.items()
                            if len(m) >= 2))


# -- reachability oracle ----------------------------------------------------

def active_paths(topology: Topology, vector: StateVector,
                 strict: bool = True) -> RoutePattern:
    """BFS reachability over edges whose gating tube is open.

    strict=True rejects don't-care entries (DontCarePresent); strict=False
    treats a don't-care valve as potentially open on both tubes, giving the
    union of reachability over its concretizations.
    """
    states = dict(zip(vector.valve_ids, vector.states))
    if strict and not vector.concrete:
        raise DontCarePresent("state vector has unresolved don't-care entries")

    adjacency: dict[str, list[str]] = {}
    for edge in topology.edges:
        if edge.valve_id is not None:
            state = states[edge.valve_id]
            if state is DONT_CARE:
                pass  # non-strict: either tube may be open
            elif not tube_open(state, edge.tube):
                continue
        adjacency.setdefault(edge.node_from, []).append(edge.node_to)

    pairs = set()
    well_media: dict[str, set] = {}
    out_set = set(topology.outputs)
    for inp in topology.inputs:
        seen = {inp}
        frontier = [inp]
        while frontier:
            node = frontier.pop()
            for nxt in adjacency.get(node, ()):
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        for out in seen & out_set:
            pairs.add((inp, out))
            well_media.setdefault(out, set()).add(topology.media_for(inp))

    return RoutePattern(pairs=frozenset(pairs),
                        well_media={w: frozenset(m)
                                    for w, m in well_media.items()})


# -- topology builders -------------------------------------------------------

def build_tree_decoder(depth: int) -> Topology:
    """Binary routing tree: 2^depth - 1 valves addressing 2^depth outputs.

    Valves are numbered heap-style (V1 root, V_i children V_2i / V_2i+1);
    depth 1 is the single-valve binary unit.
    """
    if not 1 <= depth <= 8:
        raise ValueError("depth must be in 1..8")
    n_valves = 2 ** depth - 1
    valve_ids = tuple(f"V{i}" for i in range(1, n_valves + 1))
    edges = [RouteEdge("I_0", "J1")]
    for i in range(1, n_valves + 1):
        for side, tube in ((0, "upper"), (1, "lower")):
            child = 2 * i + side
            if child <= n_valves:
                target = f"J{child}"
            else:
                target = f"Y_{child - (n_valves + 1)}"
            edges.append(RouteEdge(f"J{i}", target, f"V{i}", tube))
    outputs = tuple(f"Y_{j}" for j in range(2 ** depth))
    kind = "binary-unit" if depth == 1 else "tree-decoder"
    return Topology(kind=kind, valve_ids=valve_ids, inputs=("I_0",),
                    outputs=outputs, edges=tuple(edges), depth=depth)


def build_binary_unit() -> Topology:
    return build_tree_decoder(1)


def decode_address(topology: Topology, address: int) -> StateVector:
    """Valve states routing I_0 to Y_address; off-path valves are don't-care.

    Address bits MSB-first down the tree: bit 0 takes the upper tube
    (state -1, even branch), bit 1 the lower tube (+1, odd branch).
    """
    if topology.kind not in ("tree-decoder", "binary-unit"):
        raise ValueError("decode_address needs a tree-decoder topology")
    size = 2 ** topology.depth
    if not 0 <= address < size:
        raise AddressOutOfRange(
            f"address {address} outside [0, {size}) for depth {topology.depth}")
    states: dict[str, int] = {}
    node = 1
    for level in range(topology.depth - 1, -1, -1):
        bit = (address >> level) & 1
        states[f"V{node}"] = +1 if bit else -1
        node = 2 * node + bit
    return StateVector.from_dict(topology, states)


def build_six_port_ring() -> Topology:
    """Six valves on a ring, ports alternating input (1,3,5) / output (2,4,6).

    Each input valve steers its port clockwise (lower tube, +1) or
    counterclockwise (upper tube, -1); each output valve is an open/closed
    gate on its port (lower tube in line, +1 = open).
    """
    edges = []
    for inp in SIX_PORT_INPUTS:
        cw = inp + 1
        ccw = 6 if inp == 1 else inp - 1
        edges.append(RouteEdge(f"P{inp}", f"J{cw}", f"V{inp}", "lower"))
        edges.append(RouteEdge(f"P{inp}", f"J{ccw}", f"V{inp}", "upper"))
    for out in SIX_PORT_OUTPUTS:
        edges.append(RouteEdge(f"J{out}", f"P{out}", f"V{out}", "lower"))
    return Topology(kind="six-port-ring",
                    valve_ids=tuple(f"V{i}" for i in range(1, 7)),
                    inputs=tuple(f"P{i}" for i in SIX_PORT_INPUTS),
                    outputs=tuple(f"P{i}" for i in SIX_PORT_OUTPUTS),
                    edges=tuple(edges),
                    port_media={f"P{i}": f"R{i}" for i in SIX_PORT_INPUTS})


def six_port_mode(mode: str, ports=()) -> StateVector:
    """State vector for a named six-port routing mode.

    parallel: 1->2, 3->4, 5->6; crossed: 1->6, 3->2, 5->4; all-closed shuts
    every output (input steering is don't-care); isolate / isolate-two close
    only the named output ports on top of parallel routing.
    """
    topology = build_six_port_ring()
    if mode == "parallel":
        states = {f"V{i}": +1 for i in SIX_PORT_INPUTS + SIX_PORT_OUTPUTS}
    elif mode == "crossed":
        states = {f"V{i}": -1 for i in SIX_PORT_INPUTS}
        states.update({f"V{i}": +1 for i in SIX_PORT_OUTPUTS})
    elif mode == "all-closed":
        states = {f"V{i}": -1 for i in SIX_PORT_OUTPUTS}
    elif mode in ("isolate", "isolate-two"):
        want = 1 if mode == "isolate" else 2
        if len(ports) != want:
            raise InvalidPort(f"{mode} takes exactly {want} output port(s)")
        for port in ports:
            if port not in SIX_PORT_OUTPUTS:
                raise InvalidPort(
                    f"port {port} is not an output (choose from "
                    f"{SIX_PORT_OUTPUTS})")
        states = {f"V{i}": +1 for i in SIX_PORT_INPUTS + SIX_PORT_OUTPUTS}
        for port in ports:
            states[f"V{port}"] = -1
    else:
        raise ValueError(f"unknown six-port mode {mode!r}")
    return StateVector.from_dict(topology, states)


def build_dual_tree_mixer() -> Topology:
    """Two depth-2 trees (valves V1-V3 and V4-V6) over a shared mixing layer.

    Tree leaves fan out into wells A1..C2 of a six-well plate (rows A..C,
    columns 1..2) or into the recycle returns RA/RB; facing leaves overlap on
    the middle-row wells, which is where mixing happens.
    """
    edges = [RouteEdge("A", "JA1"), RouteEdge("B", "JB1")]
    for module, fanout in (("A", _MIXER_FANOUT_A), ("B", _MIXER_FANOUT_B)):
        base = 0 if module == "A" else 3
        # heap edges inside the module: root i=1, children 2 and 3
        for local in (1, 2, 3):
            vid = f"V{base + local}"
            for side, tube in ((0, "upper"), (1, "lower")):
                child = 2 * local + side
                if child <= 3:
                    edges.append(RouteEdge(f"J{module}{local}",
                                           f"J{module}{child}", vid, tube))
                else:
                    leaf = child - 4
                    edges.append(RouteEdge(f"J{module}{local}",
                                           f"{module.lower()}{leaf}", vid, tube))
        for leaf, targets in fanout.items():
            for target in targets:
                edges.append(RouteEdge(f"{module.lower()}{leaf}", target))
    return Topology(kind="dual-tree-mixer",
                    valve_ids=tuple(f"V{i}" for i in range(1, 7)),
                    inputs=("A", "B"),
                    outputs=DUAL_TREE_WELLS + DUAL_TREE_RECYCLES,
                    edges=tuple(edges), depth=2,
                    port_media={"A": "A", "B": "B"})


def dual_tree_pattern(vector: StateVector) -> RoutePattern:
    """Well-plate delivery pattern for a concrete six-valve mixer vector."""
    if len(vector.states) != 6:
        raise ValueError("dual-tree vector must have six entries")
    topology = build_dual_tree_mixer()
    if tuple(vector.valve_ids) != topology.valve_ids:
        vector = StateVector.from_dict(topology, vector.as_dict())
    return active_paths(topology, vector)


def build_topology(kind: str, depth: int = 3) -> Topology:
    """Topology factory used by scenario files and the service."""
    if kind == "binary-unit":
        return build_binary_unit()
    if kind == "tree-decoder":
        return build_tree_decoder(depth)
    if kind == "six-port-ring":
        return build_six_port_ring()
    if kind == "dual-tree-mixer":
        return build_dual_tree_mixer()
    raise ValueError(f"unknown topology kind {kind!r}")


# -- truth tables -------------------------------------------------------------

@dataclass(frozen=True)
class TruthTable:
    columns: tuple[str, ...]
    rows: tuple[tuple[str, ...], ...]

    def to_text(self) -> str:
        widths = [max(len(col), *(len(r[i]) for r in self.rows))
                  for i, col in enumerate(self.columns)]
        def fmt(cells):
            return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
        lines = [fmt(self.columns), fmt(tuple("-" * w for w in widths))]
        lines += [fmt(r) for r in self.rows]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(self.columns) + "\n")
        for row in self.rows:
            out.write(",".join(row) + "\n")
        return out.getvalue()


def _pattern_text(pattern: RoutePattern) -> str:
    if not pattern.pairs:
        return "-"
    return ";".join(f"{i}->{o}" for i, o in sorted(pattern.pairs))


def truth_table(topology: Topology) -> TruthTable:
    """Regenerate the routing table from the reachability oracle."""
    if topology.kind in ("binary-unit", "tree-decoder"):
        rows = []
        for address in range(2 ** topology.depth):
            vector = decode_address(topology, address)
            outs = set()
            for concrete in vector.concretizations():
                outs |= {o for _, o in active_paths(topology, concrete).pairs}
            rows.append((str(address),) + vector.symbols()
                        + (";".join(sorted(outs)),))
        return TruthTable(("address",) + topology.valve_ids + ("output",),
                          tuple(rows))

    if topology.kind == "six-port-ring":
        modes = [("parallel", ()), ("crossed", ()), ("all-closed", ())]
        modes += [("isolate", (p,)) for p in SIX_PORT_OUTPUTS]
        modes += [("isolate-two", pair) for pair in
                  itertools.combinations(SIX_PORT_OUTPUTS, 2)]
        rows = []
        for mode, ports in modes:
            vector = six_port_mode(mode, ports)
            pattern = active_paths(topology, vector, strict=False)
            label = mode if not ports else \
                f"{mode}({','.join(str(p) for p in ports)})"
            rows.append((label,) + vector.symbols()
                        + (_pattern_text(pattern),))
        return TruthTable(("mode",) + topology.valve_ids + ("routes",),
                          tuple(rows))

    if topology.kind == "dual-tree-mixer":
        rows = []
        for addr_a, addr_b in itertools.product(range(4), repeat=2):
            states = {}
            for base, addr in ((0, addr_a), (3, addr_b)):
                node = 1
                for level in (1, 0):
                    bit = (addr >> level) & 1
                    states[f"V{base + node}"] = +1 if bit else -1
                    node = 2 * node + bit
            vector = StateVector.from_dict(topology, states)
            pattern = active_paths(topology, vector)
            wells = ";".join(
                f"{w}={'+'.join(sorted(pattern.media_at(w)))}"
                for w in DUAL_TREE_WELLS if pattern.media_at(w))
            rows.append((str(addr_a), str(addr_b)) + vector.symbols()
                        + (wells or "-",))
        return TruthTable(("addr_a", "addr_b") + topology.valve_ids
                          + ("wells",), tuple(rows))

    raise ValueError(f"no truth table for topology kind {topology.kind!r}")

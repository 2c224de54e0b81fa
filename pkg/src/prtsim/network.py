"""Static PRT track graph: nodes, unidirectional segments and their discretizations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum


class Kind(str, Enum):
    STATION = "station"
    CAPACITOR = "capacitor"
    FORK = "fork"
    JOIN = "join"
    JUNCTION = "junction"


class Layout(str, Enum):
    INLINE = "inline"
    STUB = "stub"


# (in-degree, out-degree) required per node kind
DEGREE = {
    Kind.STATION: (1, 1),
    Kind.CAPACITOR: (1, 1),
    Kind.FORK: (1, 2),
    Kind.JOIN: (2, 1),
    Kind.JUNCTION: (1, 1),
}


@dataclass(frozen=True)
class StationSpec:
    layout: Layout = Layout.INLINE
    berths: int = 4
    entry_buffer: int = 0
    exit_buffer: int = 0


@dataclass(frozen=True)
class Node:
    id: int
    kind: Kind
    station: StationSpec | None = None
    parking: int = 0
    position: tuple[float, float] | None = None

    @property
    def is_terminal(self) -> bool:
        """Stations and capacitors: the nodes a vehicle can stop inside."""
        return self.kind in (Kind.STATION, Kind.CAPACITOR)


@dataclass(frozen=True)
class Segment:
    id: int
    source: int
    target: int
    length: float
    max_velocity: float
    priority: int = 0


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    ids: tuple[int, ...] = ()

    def __str__(self):
        return f"{self.kind}: {self.message}"


class NetworkError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class UnknownNode(KeyError):
    pass


@dataclass(eq=False)
class Network:
    """Validated, read-only track graph.

    Build with :func:`build_network`; the constructor does not validate.
    """

    nodes: dict[int, Node]
    segments: dict[int, Segment]
    out_edges: dict[int, tuple[int, ...]] = field(default_factory=dict)
    in_edges: dict[int, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.out_edges and not self.in_edges:
            self.out_edges, self.in_edges = _adjacency(self.nodes, self.segments.values())

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return self.nodes == other.nodes and self.segments == other.segments

    def node(self, nid: int) -> Node:
        try:
            return self.nodes[nid]
        except KeyError:
            raise UnknownNode(nid) from None

    def out_segments(self, nid: int) -> list[Segment]:
        return [self.segments[s] for s in self.out_edges.get(nid, ())]

    def in_segments(self, nid: int) -> list[Segment]:
        return [self.segments[s] for s in self.in_edges.get(nid, ())]

    @property
    def stations(self) -> list[int]:
        return sorted(n.id for n in self.nodes.values() if n.kind is Kind.STATION)

    @property
    def capacitors(self) -> list[int]:
        return sorted(n.id for n in self.nodes.values() if n.kind is Kind.CAPACITOR)

    @property
    def terminals(self) -> list[int]:
        return sorted(n.id for n in self.nodes.values() if n.is_terminal)

    @property
    def total_length(self) -> float:
        return math.fsum(s.length for s in self.segments.values())

    @property
    def parking_places(self) -> int:
        return sum(self.nodes[c].parking for c in self.capacitors)

    def export_dot(self) -> str:
        shapes = {
            Kind.STATION: "box",
            Kind.CAPACITOR: "doublecircle",
            Kind.FORK: "triangle",
            Kind.JOIN: "invtriangle",
            Kind.JUNCTION: "point",
        }
        lines = ["digraph prt {"]
        for n in sorted(self.nodes.values(), key=lambda n: n.id):
            label = f"{n.kind.value} {n.id}"
            if n.station is not None:
                label += f"\\n{n.station.layout.value} x{n.station.berths}"
            elif n.kind is Kind.CAPACITOR:
                label += f"\\n{n.parking} places"
            lines.append(f'  n{n.id} [shape={shapes[n.kind]}, label="{label}"];')
        for s in sorted(self.segments.values(), key=lambda s: s.id):
            lines.append(
                f'  n{s.source} -> n{s.target} [label="s{s.id} {s.length:g}m"];'
            )
        lines.append("}")
        return "\n".join(lines) + "\n"


def _adjacency(nodes, segments):
    out = {nid: [] for nid in nodes}
    inn = {nid: [] for nid in nodes}
    for s in segments:
        if s.source in out:
            out[s.source].append(s.id)
        if s.target in inn:
            inn[s.target].append(s.id)
    return (
        {k: tuple(sorted(v)) for k, v in out.items()},
        {k: tuple(sorted(v)) for k, v in inn.items()},
    )


def _check(nodes: list[Node], segments: list[Segment]) -> list[Violation]:
    found: list[Violation] = []

    seen: set[int] = set()
    for n in nodes:
        if n.id in seen:
            found.append(Violation("DuplicateId", f"node id {n.id} used twice", (n.id,)))
        seen.add(n.id)
    seen_seg: set[int] = set()
    for s in segments:
        if s.id in seen_seg:
            found.append(Violation("DuplicateId", f"segment id {s.id} used twice", (s.id,)))
        seen_seg.add(s.id)

    for n in nodes:
        if n.id < 0:
            found.append(Violation("InvalidValue", f"node id {n.id} is negative", (n.id,)))
        if n.kind is Kind.STATION:
            spec = n.station
            if spec is None or spec.berths < 1 or spec.entry_buffer < 0 or spec.exit_buffer < 0:
                found.append(Violation("InvalidValue", f"station {n.id} needs >= 1 berth and non-negative buffers", (n.id,)))
        if n.kind is Kind.CAPACITOR and n.parking < 1:
            found.append(Violation("InvalidValue", f"capacitor {n.id} needs >= 1 parking place", (n.id,)))

    node_ids = {n.id for n in nodes}
    for s in segments:
        for end in (s.source, s.target):
            if end not in node_ids:
                found.append(Violation("DanglingEndpoint", f"segment {s.id} references missing node {end}", (s.id, end)))
        if s.source == s.target:
            found.append(Violation("SelfLoop", f"segment {s.id} starts and ends at node {s.source}", (s.id,)))
        if not (s.length > 0 and math.isfinite(s.length)):
            found.append(Violation("InvalidValue", f"segment {s.id} length must be > 0", (s.id,)))
        if not (s.max_velocity > 0 and math.isfinite(s.max_velocity)):
            found.append(Violation("InvalidValue", f"segment {s.id} max_velocity must be > 0", (s.id,)))
    if found:
        # degree and reachability checks are meaningless on a broken id space
        return found

    by_id = {n.id: n for n in nodes}
    out, inn = _adjacency(by_id, segments)
    for n in nodes:
        want_in, want_out = DEGREE[n.kind]
        got_in, got_out = len(inn[n.id]), len(out[n.id])
        if (got_in, got_out) != (want_in, want_out):
            found.append(
                Violation(
                    "DegreeViolation",
                    f"{n.kind.value} {n.id} has {got_in} in / {got_out} out, needs {want_in} / {want_out}",
                    (n.id,),
                )
            )

    terminals = sorted(n.id for n in nodes if n.is_terminal)
    if terminals:
        succ = {nid: [] for nid in by_id}
        pred = {nid: [] for nid in by_id}
        for s in segments:
            succ[s.source].append(s.target)
            pred[s.target].append(s.source)
        root = terminals[0]
        fwd = _dfs(succ, root)
        bwd = _dfs(pred, root)
        for t in terminals:
            if t not in fwd or t not in bwd:
                found.append(
                    Violation(
                        "UnreachableStation",
                        f"{by_id[t].kind.value} {t} is not mutually reachable with node {root}",
                        (t,),
                    )
                )
    return found


def _dfs(adj, start):
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def validate(net: Network) -> list[Violation]:
    """Report every rule the network breaks; never raises."""
    return _check(list(net.nodes.values()), list(net.segments.values()))


def build_network(nodes: list[Node], segments: list[Segment]) -> Network:
    found = _check(nodes, segments)
    if found:
        raise NetworkError(found)
    return Network({n.id: n for n in nodes}, {s.id: s for s in segments})


def sectorize(seg: Segment, sector_length: float) -> list[float]:
    """Sector boundaries in meters from the segment start; the last sector takes the remainder."""
    if sector_length <= 0:
        raise ValueError("sector_length must be > 0")
    bounds = [0.0]
    n_full = int(seg.length // sector_length)
    for i in range(1, n_full + 1):
        bounds.append(i * sector_length)
    # guard against float remainders of ~1e-12 producing a degenerate last sector
    if seg.length - bounds[-1] > 1e-9:
        bounds.append(float(seg.length))
    else:
        bounds[-1] = float(seg.length)
    return bounds


def round_half_away(x: float) -> int:
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def cellize(seg: Segment, cell_length: float) -> int:
    if cell_length <= 0:
        raise ValueError("cell_length must be > 0")
    return max(1, round_half_away(seg.length / cell_length))


def reachable(net: Network, source: int, target: int) -> bool:
    net.node(source)
    net.node(target)
    succ = {nid: [net.segments[s].target for s in net.out_edges.get(nid, ())] for nid in net.nodes}
    return target in _dfs(succ, source)

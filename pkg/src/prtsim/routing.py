"""Dijkstra routing over parameterized edge weights."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .network import Network, Segment

# nominal vehicle body length used by the congestion estimate, meters
VEHICLE_LENGTH_M = 3.0


class NoPath(Exception):
    pass


@dataclass(frozen=True)
class EdgeWeightParams:
    alpha_length: float = 0.0
    beta_time: float = 1.0
    gamma_congestion: float = 0.0

    def __post_init__(self):
        vals = (self.alpha_length, self.beta_time, self.gamma_congestion)
        if any(v < 0 or not math.isfinite(v) for v in vals):
            raise ValueError("edge weight coefficients must be finite and >= 0")
        if not any(v > 0 for v in vals):
            raise ValueError("at least one edge weight coefficient must be > 0")

    def scaled(self, k: float) -> "EdgeWeightParams":
        return EdgeWeightParams(self.alpha_length * k, self.beta_time * k, self.gamma_congestion * k)


@dataclass(frozen=True)
class CongestionSnapshot:
    occupancy: Mapping[int, float] = field(default_factory=dict)

    def __getitem__(self, seg_id: int) -> float:
        return max(0.0, self.occupancy.get(seg_id, 0.0))

    @classmethod
    def from_counts(cls, net: Network, counts: Mapping[int, int], separation_m: float):
        occ = {}
        for sid, n in counts.items():
            if n:
                occ[sid] = max(0.0, n * (separation_m + VEHICLE_LENGTH_M) / net.segments[sid].length)
        return cls(occ)


EMPTY = CongestionSnapshot()


@dataclass(frozen=True)
class Route:
    segments: tuple[int, ...]
    origin: int
    destination: int
    weight: float

    def __len__(self):
        return len(self.segments)

    def length(self, net: Network) -> float:
        return math.fsum(net.segments[s].length for s in self.segments)


def edge_weight(seg: Segment, p: EdgeWeightParams, c: CongestionSnapshot = EMPTY) -> float:
    return (
        p.alpha_length * seg.length
        + p.beta_time * (seg.length / seg.max_velocity)
        + p.gamma_congestion * c[seg.id]
    )


def _search(net, source, p, c, stop_at=None):
    # labels compare by (weight, segment-id path): equal weights resolve to the
    # lexicographically smallest path, i.e. smaller next hop first
    best = {source: (0.0, ())}
    done = set()
    heap = [(0.0, (), source)]
    while heap:
        w, path, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == stop_at:
            break
        for sid in net.out_edges.get(u, ()):
            seg = net.segments[sid]
            v = seg.target
            if v in done:
                continue
            cand = (w + edge_weight(seg, p, c), path + (sid,))
            if v not in best or cand < best[v]:
                best[v] = cand
                heapq.heappush(heap, (cand[0], cand[1], v))
    return {k: best[k] for k in done}


def shortest_route(
    net: Network,
    source: int,
    target: int,
    p: EdgeWeightParams,
    c: CongestionSnapshot = EMPTY,
) -> Route:
    net.node(source)
    if not net.node(target).is_terminal:
        raise ValueError(f"route target {target} must be a station or capacitor")
    if source == target:
        return Route((), source, target, 0.0)
    found = _search(net, source, p, c, stop_at=target)
    if target not in found:
        raise NoPath(f"no path from {source} to {target}")
    w, path = found[target]
    return Route(path, source, target, w)


def route_weight(net: Network, segments, p: EdgeWeightParams, c: CongestionSnapshot = EMPTY) -> float:
    w = 0.0
    for sid in segments:
        w = w + edge_weight(net.segments[sid], p, c)
    return w


@dataclass(frozen=True)
class DistanceTable:
    """Zero-congestion shortest-route weights between all stations and capacitors."""

    nodes: tuple[int, ...]
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.nodes)})

    def __call__(self, a: int, b: int) -> float:
        return float(self.matrix[self._index[a], self._index[b]])


def all_pairs_static(net: Network, p: EdgeWeightParams) -> DistanceTable:
    nodes = tuple(net.terminals)
    mat = np.full((len(nodes), len(nodes)), np.inf)
    for i, a in enumerate(nodes):
        found = _search(net, a, p, EMPTY)
        for j, b in enumerate(nodes):
            if b in found:
                mat[i, j] = found[b][0]
    np.fill_diagonal(mat, 0.0)
    return DistanceTable(nodes, mat)


def reroute(
    net: Network,
    current_segment: int,
    offset: float,
    destination: int,
    p: EdgeWeightParams,
    c: CongestionSnapshot = EMPTY,
) -> Route:
    """New route from the end of the segment the vehicle is on.

    The vehicle always finishes its current segment; the returned route starts
    at that segment's end node, so it is empty when that node is the destination.
    """
    seg = net.segments[current_segment]
    if not 0 <= offset <= seg.length:
        raise ValueError("offset outside the current segment")
    return shortest_route(net, seg.target, destination, p, c)

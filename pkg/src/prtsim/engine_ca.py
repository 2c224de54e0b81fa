"""Cellular-automata engine.

Every segment is a row of cells and every node a single cell. Once per
simulated second each vehicle on the track runs the rule sequence
accelerate, gap deceleration, random slowdown, breakdown; conflicts at
merge cells are then settled by the weight function; finally all vehicles
move at once.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

from .analytics import EventLog
from .demand import substream
from .fleet import RANK_END, FleetManager
from .network import Kind, cellize, round_half_away
from .routing import CongestionSnapshot

EXIT = -1
TIE_TOL = 1e-9


class CollisionDetected(AssertionError):
    pass


@dataclass(frozen=True)
class JunctionWeights:
    w_t: float = 1.0
    w_d: float = 0.0
    w_p: float = 0.0
    w_pas: float = 0.0

    def scaled(self, k: float) -> "JunctionWeights":
        return JunctionWeights(self.w_t * k, self.w_d * k, self.w_p * k, self.w_pas * k)


@dataclass(frozen=True)
class CaConfig:
    cell_length_m: float = 4.0
    v_max_cells: int = 4
    p1: float = 0.0
    p2: float = 0.0
    breakdown_steps: int = 10
    weights: JunctionWeights = JunctionWeights()
    separation_m: float = 2.0

    def __post_init__(self):
        if not self.cell_length_m > 0:
            raise ValueError("cell_length_m must be > 0")
        if self.v_max_cells < 1:
            raise ValueError("v_max_cells must be >= 1")
        for p in (self.p1, self.p2):
            if not 0.0 <= p <= 1.0:
                raise ValueError("p1 and p2 must lie in [0, 1]")
        if self.breakdown_steps < 0 or self.separation_m < 0:
            raise ValueError("breakdown_steps and separation_m must be >= 0")

    @property
    def separation_cells(self) -> int:
        # empty cells that must stay between two vehicles; a neighbour cell is already one cell length away
        return max(0, math.ceil(self.separation_m / self.cell_length_m - 1e-9) - 1)


# -- rule primitives -----------------------------------------------------------


def ca_accelerate(v: int, gap_cells: int, v_allowed: int) -> int:
    return v + 1 if v < v_allowed and gap_cells > v + 1 else v


def ca_decelerate(v: int, gap_cells: int) -> int:
    return min(v, gap_cells - 1)


def ca_randomize(v: int, p1: float, rng) -> int:
    if v > 0 and p1 > 0 and rng.random() < p1:
        return v - 1
    return v


@dataclass
class Breakdown:
    v: int
    remaining: int = 0


def ca_breakdown(state: Breakdown, p2: float, J: int, rng) -> Breakdown:
    if state.remaining > 0:
        return Breakdown(0, state.remaining - 1)
    if p2 > 0 and J > 0 and rng.random() < p2:
        return Breakdown(0, J - 1)
    return Breakdown(state.v, 0)


def junction_weight(t: float, d: float, p: float, pas: float, w: JunctionWeights) -> float:
    return w.w_t * t + w.w_d * d + w.w_p * p + w.w_pas * pas


def resolve_junction(candidates, w: JunctionWeights) -> list[int]:
    """Order (vid, t, d, p, pas) candidates; the first one drives through.

    Weights within a relative 1e-9 count as a tie and go to the lower id, so
    float rounding of scaled coefficients cannot reorder genuine ties.
    """
    left = sorted((vid, junction_weight(t, d, p, pas, w)) for vid, t, d, p, pas in candidates)
    out = []
    while left:
        top = max(x for _, x in left)
        tol = TIE_TOL * max(abs(top), 1e-300)
        i = next(k for k, (_, x) in enumerate(left) if x >= top - tol)
        out.append(left.pop(i)[0])
    return out


# -- world -----------------------------------------------------------------------


class Car:
    __slots__ = ("vid", "traits", "route", "path", "seg", "cap", "pos", "v", "wait",
                 "broken", "reserved", "prio", "target")

    def __init__(self, vid, traits, target):
        self.vid = vid
        self.traits = traits
        self.route: list[int] = []
        self.path: list[int] = []  # global cell ids, origin node cell first, target node cell last
        self.seg: list[int] = []  # segment id per path cell, -1 on node cells
        self.cap: list[int] = []
        self.pos = 0
        self.v = 0
        self.wait = 0
        self.broken = 0
        self.reserved = False
        self.prio = 0
        self.target = target


class CellularEngine:
    tag = "CA"

    def __init__(self, sc, trace: bool = False, monitor=None):
        self.sc = sc
        self.net = sc.network
        self.cfg: CaConfig = sc.engine.ca
        self.log = EventLog(self.tag, trace)
        self.monitor = monitor
        self.cell = self.cfg.cell_length_m
        self.sep_cells = self.cfg.separation_cells
        self.horizon_cells = math.ceil(sc.traffic.horizon_m / self.cell)
        self.seg_cells: dict[int, range] = {}
        n = 0
        self.node_cell: dict[int, int] = {}
        for nid in sorted(self.net.nodes):
            self.node_cell[nid] = n
            n += 1
        for sid in sorted(self.net.segments):
            k = cellize(self.net.segments[sid], self.cell)
            self.seg_cells[sid] = range(n, n + k)
            n += k
        self.n_cells = n
        self.occ = [-1] * n
        controlled = (Kind.JOIN, Kind.STATION, Kind.CAPACITOR)
        self.merge_cells = {self.node_cell[x.id]: x.id for x in self.net.nodes.values() if x.kind in controlled}
        self.cars: dict[int, Car] = {}
        self.pending: dict[int, list[int]] = {t: [] for t in self.net.terminals}
        self.ask_since: dict[int, int] = {}
        self.retry: set[int] = set()
        self.asked: set[int] = set()
        self.rng = substream(sc.seed, "ca")
        self.heap: list = []
        self.seq = 0
        self.now = 0.0
        self.steps = 0
        self.mgr = FleetManager(sc, self, self.log, quantum=1.0)
        self.done = False

    # -- scheduler services ------------------------------------------------------

    def schedule(self, t, rank, entity, fn, *args):
        self.seq += 1
        heapq.heappush(self.heap, (t, rank, entity, self.seq, fn, args))

    def _events_until(self, t):
        heap = self.heap
        while heap and heap[0][0] <= t + 1e-9 and not self.done:
            et, _, _, _, fn, args = heapq.heappop(heap)
            self.now = max(self.now, et)
            fn(*args)

    def run(self):
        self.mgr.start()
        self.schedule(self.sc.duration_s, RANK_END, 0, self._end)
        k = 0
        self._events_until(0.0)
        while not self.done:
            k += 1
            self._events_until(k)
            if self.done:
                break
            self.now = float(k)
            self.step()
        return self.log

    def _end(self):
        self.done = True
        self.mgr.finish(self.now)

    def congestion(self) -> CongestionSnapshot:
        counts: dict[int, int] = {}
        for c in self.cars.values():
            s = c.seg[c.pos]
            if s >= 0:
                counts[s] = counts.get(s, 0) + 1
        return CongestionSnapshot.from_counts(self.net, counts, self.cfg.separation_m)

    def request_departure(self, v, node):
        self.pending[node].append(v.id)
        self.ask_since[v.id] = self.steps

    def capacity_freed(self, node):
        for c in self.cars.values():
            if not c.reserved and c.target == node:
                self.retry.add(c.vid)

    def reroute_all(self):
        for vid in sorted(self.cars):
            c = self.cars[vid]
            nxt = None
            for i in range(c.pos + 1, len(c.path)):
                if c.seg[i] < 0:
                    nxt = i
                    break
            if nxt is None or nxt == len(c.path) - 1:
                continue
            # route index of the segment ending at that node cell
            k = self._route_index(c, nxt)
            here = self.net.segments[c.route[k]].target
            new = self.mgr._route(here, c.target)
            route = c.route[: k + 1] + list(new.segments)
            if route == c.route:
                continue
            self._set_path(c, route, keep=nxt + 1)
            self.mgr.vehicles[vid].route = tuple(route)

    @staticmethod
    def _route_index(c: Car, node_idx: int) -> int:
        return sum(1 for s in c.seg[:node_idx] if s < 0) - 1

    # -- paths ---------------------------------------------------------------------

    def _cap(self, seg, traits) -> int:
        v = min(seg.max_velocity, traits.v_max, self.sc.traffic.model_v_max)
        return max(1, min(self.cfg.v_max_cells, round_half_away(v / self.cell)))

    def _set_path(self, c: Car, route, keep: int = 0):
        segs = self.net.segments
        origin = segs[route[0]].source
        path, seg, cap = [self.node_cell[origin]], [-1], [self._cap(segs[route[0]], c.traits)]
        for i, sid in enumerate(route):
            s = segs[sid]
            vc = self._cap(s, c.traits)
            cells = self.seg_cells[sid]
            path.extend(cells)
            seg.extend([sid] * len(cells))
            cap.extend([vc] * len(cells))
            nxt = segs[route[i + 1]] if i + 1 < len(route) else None
            path.append(self.node_cell[s.target])
            seg.append(-1)
            cap.append(self._cap(nxt, c.traits) if nxt is not None else vc)
        if keep:
            if path[:keep] != c.path[:keep]:
                raise RuntimeError(f"reroute of vehicle {c.vid} does not continue its path")
        c.route = list(route)
        c.path, c.seg, c.cap = path, seg, cap

    # -- one step ------------------------------------------------------------------

    def _gap(self, c: Car, limit: int) -> int:
        """Cells to the next obstacle, at most ``limit``."""
        path = c.path
        end = len(path) - 1 if c.reserved else len(path) - 2
        occ = self.occ
        for j in range(1, limit + 1):
            i = c.pos + j
            if i > end:
                return j
            if occ[path[i]] >= 0:
                return j
        return limit

    def _reserve(self):
        for vid in sorted(self.cars):
            c = self.cars[vid]
            if c.reserved:
                continue
            if len(c.path) - 1 - c.pos > self.horizon_cells:
                continue
            # ask once on entering the horizon, again only after capacity was freed
            if vid in self.retry or vid not in self.asked:
                self.retry.discard(vid)
                self.asked.add(vid)
                c.reserved = self.mgr.reserve(self.mgr.vehicles[vid], c.target)

    def step(self):
        self.steps += 1
        cfg = self.cfg
        rng = self.rng
        self._reserve()
        order = sorted(self.cars)
        cars = self.cars
        sep = self.sep_cells
        vmax = cfg.v_max_cells
        for vid in order:
            c = cars[vid]
            if c.broken > 0:
                c.broken -= 1
                c.v = 0
                continue
            j = self._gap(c, vmax + 2 + sep) - sep
            v = ca_accelerate(c.v, j, c.cap[c.pos])
            v = ca_decelerate(v, j)
            v = max(0, ca_randomize(v, cfg.p1, rng))
            if cfg.p2 > 0:
                b = ca_breakdown(Breakdown(v, 0), cfg.p2, cfg.breakdown_steps, rng)
                v, c.broken = b.v, b.remaining
            c.v = v

        launches = self._resolve(order)
        self._move(order, launches)

    def _resolve(self, order) -> dict[int, int]:
        """Clip velocities so each merge cell is entered from one approach per step."""
        cars = self.cars
        w = self.cfg.weights
        segs = self.net.segments
        launches = {}
        for node, pend in self.pending.items():
            if pend and self.occ[self.node_cell[node]] < 0:
                launches[node] = pend[0]
        changed = True
        while changed:
            changed = False
            claims: dict[int, list] = {}
            for vid in order:
                c = cars[vid]
                for dc in range(1, c.v + 1):
                    cell = c.path[c.pos + dc]
                    if cell in self.merge_cells:
                        app = c.seg[c.pos + dc - 1]
                        d = segs[app].priority if app >= 0 else 0
                        claims.setdefault(cell, []).append((vid, app, dc, c.wait, d, c.prio, self._pas(vid)))
            for node, vid in launches.items():
                cell = self.node_cell[node]
                t = self.steps - self.ask_since.get(vid, self.steps)
                claims.setdefault(cell, []).append((vid, EXIT, 0, t, 0, 0, self._pas(vid)))
            for cell in sorted(claims):
                cl = claims[cell]
                if len({x[1] for x in cl}) < 2:
                    continue
                ranked = resolve_junction([(x[0], x[3], x[4], x[5], x[6]) for x in cl], w)
                win = ranked[0]
                win_app = next(x[1] for x in cl if x[0] == win)
                for vid, app, dc, *_ in cl:
                    if app == win_app:
                        continue
                    if app == EXIT:
                        node = self.merge_cells[cell]
                        if launches.get(node) == vid:
                            del launches[node]
                    else:
                        cars[vid].v = dc - 1
                    changed = True
                if changed:
                    break
        return launches

    def _pas(self, vid) -> int:
        g = self.mgr.vehicles[vid].group
        return g.size if g is not None else 0

    def _move(self, order, launches):
        cars = self.cars
        occ = self.occ
        arrived = []
        for vid in order:
            c = cars[vid]
            occ[c.path[c.pos]] = -1
        for vid in order:
            c = cars[vid]
            if c.v > 0:
                passed_node = any(c.seg[i] < 0 for i in range(c.pos + 1, c.pos + c.v + 1))
                c.pos += c.v
                if passed_node:
                    c.wait = 0
                self.log.movement(self.now, "CellMoved", vid, c.seg[c.pos], cell=c.pos, v=c.v)
            else:
                c.wait += 1
            cell = c.path[c.pos]
            if occ[cell] >= 0:
                raise CollisionDetected(f"t={self.now:g} vehicles {occ[cell]} and {vid} in cell {cell}")
            occ[cell] = vid
            if c.pos == len(c.path) - 1:
                arrived.append(c)
        for node in sorted(launches):
            vid = launches[node]
            cell = self.node_cell[node]
            if occ[cell] >= 0:
                raise CollisionDetected(f"t={self.now:g} launch of {vid} into occupied cell {cell}")
            self._launch(vid, node)
        if self.monitor is not None:
            self.monitor.step(self.now, [(c.vid, c.path[c.pos], c.v) for c in cars.values()])
        for c in arrived:
            self._arrive(c)

    def _launch(self, vid, node):
        self.pending[node].pop(0)
        self.ask_since.pop(vid, None)
        mv = self.mgr.vehicles[vid]
        c = Car(vid, mv.traits, mv.target)
        self._set_path(c, mv.route)
        self.cars[vid] = c
        self.occ[c.path[0]] = vid
        self.mgr.on_launched(mv, node)

    def _arrive(self, c: Car):
        del self.cars[c.vid]
        self.occ[c.path[c.pos]] = -1
        self.asked.discard(c.vid)
        self.retry.discard(c.vid)
        dist = sum(self.net.segments[s].length for s in c.route)
        self.mgr.on_arrival(self.mgr.vehicles[c.vid], c.target, dist)

    def vehicle_count(self) -> int:
        return len(self.cars) + self.mgr.vehicles_inside()


@dataclass
class RunResult:
    log: EventLog
    engine: object

    @property
    def manager(self) -> FleetManager:
        return self.engine.mgr


def run(sc, trace: bool = False, monitor=None) -> RunResult:
    eng = CellularEngine(sc, trace=trace, monitor=monitor)
    eng.run()
    return RunResult(eng.log, eng)

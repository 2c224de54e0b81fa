"""Event-driven engine.

Track is cut into sectors and a vehicle only decides at sector connections.
Each decision plans the next sector analytically (accelerate, cruise,
decelerate) so that the vehicle could still stop a static separation behind
the point where its leader would come to rest if the leader braked right now.
Joins, and the points where stations and capacitors feed the line, are
arbitrated by a :class:`NodeController`.
"""

from __future__ import annotations

import heapq
import math
from bisect import bisect_right
from dataclasses import dataclass

from .analytics import EventLog
from .fleet import (RANK_CROSSING, RANK_DEPART, RANK_END, RANK_RELEASE,
                    FleetManager, TrafficParams, VehicleTraits)
from .network import Kind, Segment, sectorize
from .routing import CongestionSnapshot

EPS = 1e-9
EXIT = -1  # approach id of vehicles leaving a station or capacitor
POLL_S = 1.0

ACCELERATING = "Accelerating"
CONSTANT = "ConstantVelocity"
DECELERATING = "Decelerating"
FRICTION = "FrictionBraking"


class Blocked(Exception):
    """The vehicle has to stay at its current sector connection."""


def allowed_velocity(v: VehicleTraits, params: TrafficParams, seg: Segment) -> float:
    return min(params.model_v_max, seg.max_velocity, v.v_max)


def stopping_distance(v: float, d: float) -> float:
    if v < 0 or d <= 0:
        raise ValueError("need v >= 0 and d > 0")
    return v * v / (2.0 * d)


class Plan:
    """Constant-acceleration phases over one sector: ramp to vp, cruise, brake to v1."""

    __slots__ = ("t0", "x0", "length", "v0", "ta", "acc", "vp", "tc", "td", "dec", "v1", "mode")

    def __init__(self, t0, x0, length, v0, ta, acc, vp, tc, td, dec, v1, mode):
        self.t0 = t0
        self.x0 = x0
        self.length = length
        self.v0 = v0
        self.ta = ta
        self.acc = acc
        self.vp = vp
        self.tc = tc
        self.td = td
        self.dec = dec
        self.v1 = v1
        self.mode = mode

    @property
    def duration(self) -> float:
        return self.ta + self.tc + self.td

    @property
    def exit_time(self) -> float:
        return self.t0 + self.duration

    @property
    def exit_velocity(self) -> float:
        return self.v1

    def timeline(self):
        out = []
        if self.ta > 0:
            out.append((ACCELERATING if self.acc >= 0 else DECELERATING, self.ta))
        if self.tc > 0:
            out.append((CONSTANT, self.tc))
        if self.td > 0:
            out.append((self.mode if self.mode == FRICTION else DECELERATING, self.td))
        return out

    def at(self, t: float) -> tuple[float, float]:
        """(position, velocity) at absolute time t, clamped to the plan."""
        tau = t - self.t0
        if tau <= 0:
            return self.x0, self.v0
        if tau < self.ta:
            return self.x0 + self.v0 * tau + 0.5 * self.acc * tau * tau, self.v0 + self.acc * tau
        xa = self.x0 + 0.5 * (self.v0 + self.vp) * self.ta
        tau -= self.ta
        if tau < self.tc:
            return xa + self.vp * tau, self.vp
        xc = xa + self.vp * self.tc
        tau = min(tau - self.tc, self.td)
        return xc + self.vp * tau - 0.5 * self.dec * tau * tau, max(0.0, self.vp - self.dec * tau)


def plan_sector_traversal(
    v0: float,
    length: float,
    v_allowed: float,
    stop_at: float = math.inf,
    v_exit_max: float = math.inf,
    a: float = 2.0,
    d: float = 2.0,
    t0: float = 0.0,
    x0: float = 0.0,
) -> Plan:
    """Plan one sector of ``length`` entered at ``v0``.

    ``stop_at`` is the distance from the sector start to the furthest point the
    vehicle may be able to stop at; the exit velocity is chosen so braking at
    ``d`` from the sector end still stops there. Raises :class:`Blocked` when
    a stationary vehicle may not move at all.
    """
    room = stop_at - length
    if room < -EPS:
        if v0 <= EPS:
            raise Blocked()
        return _brake(t0, x0, length, v0, 0.0)
    v1 = min(math.sqrt(v0 * v0 + 2 * a * length), v_allowed, v_exit_max,
             math.sqrt(2 * d * max(room, 0.0)))
    v1_min = math.sqrt(max(0.0, v0 * v0 - 2 * d * length))
    if v1 < v1_min - EPS:
        return _brake(t0, x0, length, v0, v1)
    v1 = max(v1, v1_min)
    vp2 = (2 * a * d * length + d * v0 * v0 + a * v1 * v1) / (a + d)
    vp = max(min(v_allowed, math.sqrt(vp2)), v0, v1)
    if vp >= v0:
        ta, acc = (vp - v0) / a, a
        da = (vp * vp - v0 * v0) / (2 * a)
    else:
        ta, acc = (v0 - vp) / d, -d
        da = (v0 * v0 - vp * vp) / (2 * d)
    td = (vp - v1) / d
    dd = (vp * vp - v1 * v1) / (2 * d)
    dc = max(0.0, length - da - dd)
    tc = dc / vp if vp > EPS else 0.0
    if td > EPS:
        mode = DECELERATING
    elif ta > EPS:
        mode = ACCELERATING
    else:
        mode = CONSTANT
    return Plan(t0, x0, length, v0, ta, acc, vp, tc, td, d, v1, mode)


def _brake(t0, x0, length, v0, v1):
    dec = (v0 * v0 - v1 * v1) / (2 * length)
    return Plan(t0, x0, length, v0, 0.0, 0.0, v0, 0.0, (v0 - v1) / dec, dec, v1, FRICTION)


def min_time(dist: float, v0: float, a: float, vcap: float) -> float:
    """Fastest time to cover ``dist`` from ``v0`` accelerating at ``a`` up to ``vcap``."""
    if dist <= 0:
        return 0.0
    d_ramp = max(0.0, (vcap * vcap - v0 * v0) / (2 * a))
    if dist <= d_ramp:
        return (math.sqrt(v0 * v0 + 2 * a * dist) - v0) / a
    return max(0.0, (vcap - v0) / a) + (dist - d_ramp) / vcap


class NodeController:
    """Allocation of one merge point to the vehicles of a single approach at a time."""

    def __init__(self, node: int):
        self.node = node
        self.holders: dict[int, int] = {}  # vid -> approach
        self.waiting: dict[int, tuple[float, int]] = {}  # vid -> (projected arrival, approach)

    def request(self, vid: int, approach: int, eta: float) -> bool:
        if vid in self.holders:
            return True
        # a vehicle keeps the place in line it got on its first request
        mine = self.waiting.get(vid, (eta, approach))
        if any(a != approach for a in self.holders.values()):
            self.waiting[vid] = mine
            return False
        for w, (we, wa) in self.waiting.items():
            if w != vid and wa != approach and (we, wa) < mine:
                self.waiting[vid] = mine
                return False
        self.holders[vid] = approach
        self.waiting.pop(vid, None)
        return True

    def release(self, vid: int) -> list[int]:
        self.holders.pop(vid, None)
        if self.holders:
            return []
        return sorted(self.waiting, key=lambda w: (self.waiting[w], w))


def request_join(ctrl: NodeController, candidates) -> int:
    """Winner among (vid, approach, eta) candidates.

    A current holder keeps the node; otherwise the earliest projected arrival
    wins, lower approach id on ties.
    """
    for vid, _, _ in candidates:
        if vid in ctrl.holders:
            return vid
    if ctrl.holders:
        return min(ctrl.holders)
    ranked = sorted(candidates, key=lambda c: (c[2], c[1], c[0]))
    for vid, approach, eta in ranked:
        ctrl.waiting.setdefault(vid, (eta, approach))
    win = ranked[0]
    ctrl.request(win[0], win[1], win[2])
    return win[0]


class Track:
    """Kinematic state of one vehicle on the guideway."""

    __slots__ = ("vid", "traits", "route", "ri", "x", "v", "plan", "tok", "blocked",
                 "holds", "reserved", "odo", "dec")

    def __init__(self, vid, traits, route, dec):
        self.vid = vid
        self.traits = traits
        self.route = route
        self.ri = 0
        self.x = 0.0
        self.v = 0.0
        self.plan: Plan | None = None
        self.tok = 0
        self.blocked = False
        self.holds: dict[int, int] = {}  # node -> route index of its in-segment
        self.reserved = False
        self.odo = 0.0
        self.dec = dec  # deceleration assumed when this vehicle is somebody's leader

    def pos_at(self, t: float) -> tuple[float, float]:
        if self.plan is None:
            return self.x, self.v
        return self.plan.at(t)


class EventEngine:
    tag = "ED"

    def __init__(self, sc, trace: bool = False, monitor=None):
        self.sc = sc
        self.net = sc.network
        self.tp: TrafficParams = sc.traffic
        self.sep = self.tp.static_separation_m
        self.horizon = self.tp.horizon_m
        self.sector = sc.engine.sector_length_m
        self.bounds = {sid: sectorize(s, self.sector) for sid, s in self.net.segments.items()}
        self.order: dict[int, list[int]] = {sid: [] for sid in self.net.segments}
        controlled = (Kind.JOIN, Kind.STATION, Kind.CAPACITOR)
        self.ctrl = {n.id: NodeController(n.id) for n in self.net.nodes.values() if n.kind in controlled}
        self.pending: dict[int, list[int]] = {n: [] for n in self.net.terminals}
        self.refused_wait: dict[int, set[int]] = {n: set() for n in self.net.terminals}
        self.wake_on: dict[int, set[int]] = {}
        self.tracks: dict[int, Track] = {}
        self.heap: list = []
        self.seq = 0
        self.now = 0.0
        self.log = EventLog(self.tag, trace)
        self.monitor = monitor
        self.mgr = FleetManager(sc, self, self.log)
        self.crossings = 0
        self.emergencies = 0
        self.done = False

    # -- scheduler -----------------------------------------------------------

    def schedule(self, t, rank, entity, fn, *args):
        self.seq += 1
        heapq.heappush(self.heap, (t, rank, entity, self.seq, fn, args))

    def run(self):
        self.mgr.start()
        end = self.sc.duration_s
        self.schedule(end, RANK_END, 0, self._end)
        heap = self.heap
        while heap and not self.done:
            t, _, _, _, fn, args = heapq.heappop(heap)
            self.now = t
            fn(*args)
        return self.log

    def _end(self):
        self.done = True
        self.mgr.finish(self.now)

    # -- engine services used by the fleet manager ------------------------------

    def congestion(self) -> CongestionSnapshot:
        counts = {sid: len(v) for sid, v in self.order.items() if v}
        return CongestionSnapshot.from_counts(self.net, counts, self.sep)

    def request_departure(self, v, node):
        self.pending[node].append(v.id)
        self.schedule(self.now, RANK_DEPART, v.id, self._try_launch, node)

    def capacity_freed(self, node):
        waiting = self.refused_wait.get(node)
        if waiting:
            for vid in sorted(waiting):
                self._wake_soon(vid)
            waiting.clear()

    def reroute_all(self):
        for vid in sorted(self.tracks):
            tr = self.tracks[vid]
            v = self.mgr.vehicles[vid]
            here = self.net.segments[tr.route[tr.ri]].target
            if here == v.target:
                continue
            new = self.mgr._route(here, v.target)
            route = tr.route[: tr.ri + 1] + new.segments
            for node, k in list(tr.holds.items()):
                if k > tr.ri and (k >= len(route) or route[k] != tr.route[k]):
                    self._release(tr, node)
            tr.route = route
            v.route = route

    # -- vehicles on track --------------------------------------------------------

    def vcap(self, traits, seg) -> float:
        return min(self.tp.model_v_max, seg.max_velocity, traits.v_max)

    def _wake_soon(self, vid):
        tr = self.tracks.get(vid)
        if tr is not None and tr.blocked:
            self.schedule(self.now, RANK_CROSSING, vid, self._wake, vid, tr.tok)

    def _wake(self, vid, tok):
        tr = self.tracks.get(vid)
        if tr is None or not tr.blocked or tr.tok != tok:
            return
        tr.blocked = False
        self._advance(tr)

    def _wake_followers(self, vid):
        for f in sorted(self.wake_on.pop(vid, ())):
            self._wake_soon(f)

    def _release(self, tr: Track, node: int):
        tr.holds.pop(node, None)
        for w in self.ctrl[node].release(tr.vid):
            self._wake_soon(w)
        if self.pending.get(node):
            self.schedule(self.now, RANK_RELEASE, node, self._try_launch, node)

    def _check_release(self, tr: Track):
        for node, k in list(tr.holds.items()):
            # held until the first sector connection past the node
            if tr.ri > k + 1 or (tr.ri == k + 1 and tr.x > EPS):
                self._release(tr, node)

    def _snap(self, tr: Track, rel: float) -> float:
        """Largest sector connection at or before ``rel`` metres ahead of the vehicle."""
        if rel <= 0:
            return rel
        route = tr.route
        pos = tr.x + rel
        off = 0.0
        k = tr.ri
        segs = self.net.segments
        while k < len(route) - 1 and pos > segs[route[k]].length + EPS:
            L = segs[route[k]].length
            pos -= L
            off += L
            k += 1
        b = self.bounds[route[k]]
        i = bisect_right(b, pos + EPS) - 1
        return off + b[max(i, 0)] - tr.x

    def _leader(self, tr: Track, k: int):
        lst = self.order[tr.route[k]]
        if k == tr.ri:
            i = lst.index(tr.vid)
            return lst[i - 1] if i > 0 else None
        return lst[-1] if lst else None

    def _advance(self, tr: Track):
        tr.tok += 1
        now = self.now
        segs = self.net.segments
        route = tr.route
        n = len(route)
        seg = segs[route[tr.ri]]
        b = self.bounds[seg.id]
        j = bisect_right(b, tr.x + EPS)
        L = b[j] - tr.x
        traits = tr.traits
        a, d = traits.a_max, traits.d_max
        sep = self.sep
        H = self.horizon
        vcap = self.vcap(traits, seg)
        v0 = tr.v
        vexit = vcap
        at_node = b[j] >= seg.length - EPS

        stop = H - sep
        lead = None
        lead_rel = None
        ctrl_nodes = []
        base = -tr.x
        k = tr.ri
        while True:
            sg = segs[route[k]]
            if lead is None:
                lid = self._leader(tr, k)
                if lid is not None:
                    lt = self.tracks[lid]
                    lx, lv = lt.pos_at(now)
                    lead = lid
                    lead_rel = base + lx
                    stop = min(stop, lead_rel + lv * lv / (2 * lt.dec) - sep)
            node_rel = base + sg.length
            if node_rel > H:
                break
            node = sg.target
            if k == n - 1:
                if tr.reserved or self.mgr.reserve(self.mgr.vehicles[tr.vid], node):
                    tr.reserved = True
                    stop = min(stop, node_rel)
                else:
                    stop = min(stop, node_rel - sep)
                    self.refused_wait[node].add(tr.vid)
                break
            if node in self.ctrl:
                ctrl_nodes.append((node, node_rel, k))
            nxt = segs[route[k + 1]]
            vl = self.vcap(traits, nxt)
            ahead = node_rel - L
            if ahead <= EPS:
                vexit = min(vexit, vl)
            elif vl < vcap:
                vexit = min(vexit, math.sqrt(vl * vl + 2 * d * ahead))
            base += sg.length
            k += 1

        s = self._snap(tr, stop)
        for node, node_rel, k in ctrl_nodes:
            if node in tr.holds:
                continue
            snb = self._snap(tr, node_rel - sep)
            if snb >= s - EPS:
                break
            v1 = min(math.sqrt(v0 * v0 + 2 * a * L), vexit, math.sqrt(2 * d * max(0.0, s - L)))
            if L + v1 * v1 / (2 * d) <= snb + EPS:
                break
            c = self.ctrl[node]
            if lead_rel is not None and lead_rel < node_rel - EPS and lead not in c.holders:
                # only the vehicle closest to the node competes for it
                s = snb
                break
            eta = now + min_time(node_rel, v0, a, vcap)
            if c.request(tr.vid, route[k], eta):
                tr.holds[node] = k
                if self.net.nodes[node].kind is Kind.JOIN:
                    self.log.append(now, "JoinAllocated", vehicle=tr.vid, node=node, segment=route[k])
                continue
            s = snb
            break

        if at_node and tr.ri == n - 1:
            vexit = 0.0
        try:
            p = plan_sector_traversal(v0, L, vcap, s, vexit, a, d, now, tr.x)
        except Blocked:
            tr.blocked = True
            tr.plan = None
            tr.v = 0.0
            if lead is not None:
                self.wake_on.setdefault(lead, set()).add(tr.vid)
            if self.monitor is not None:
                self.monitor.hold(now, tr.vid, route, tr.ri, tr.x)
            self.schedule(now + POLL_S, RANK_CROSSING, tr.vid, self._wake, tr.vid, tr.tok)
            return
        if p.mode == FRICTION:
            self.emergencies += 1
        tr.plan = p
        if self.monitor is not None:
            self.monitor.plan(now, tr.vid, route, tr.ri, p, traits, vcap)
        self.schedule(p.exit_time, RANK_CROSSING, tr.vid, self._cross, tr.vid, tr.tok)

    def _cross(self, vid, tok):
        tr = self.tracks.get(vid)
        if tr is None or tr.tok != tok:
            return
        p = tr.plan
        tr.x = p.x0 + p.length
        tr.v = p.v1
        tr.plan = None
        self.crossings += 1
        seg = self.net.segments[tr.route[tr.ri]]
        self.log.movement(self.now, "SectorCrossed", vid, seg.id, x=tr.x, v=tr.v)
        if self.monitor is not None:
            self.monitor.cross(self.now, vid, seg.id, tr.x, tr.v)
        if tr.x >= seg.length - EPS:
            tr.x = seg.length
            tr.odo += seg.length
            self.order[seg.id].remove(vid)
            if tr.ri == len(tr.route) - 1:
                self._arrive(tr)
                return
            tr.ri += 1
            tr.x = 0.0
            self.order[tr.route[tr.ri]].append(vid)
        self._check_release(tr)
        self._wake_followers(vid)
        self._advance(tr)

    def _arrive(self, tr: Track):
        del self.tracks[tr.vid]
        node = self.net.segments[tr.route[-1]].target
        if self.monitor is not None:
            self.monitor.leave(self.now, tr.vid)
        for h in list(tr.holds):
            self._release(tr, h)
        self._wake_followers(tr.vid)
        self.mgr.on_arrival(self.mgr.vehicles[tr.vid], node, tr.odo)

    def _room(self, route, traits) -> bool:
        """Whether a vehicle launched at the start of route[0] could move one sector."""
        probe = Track(-1, traits, route, traits.d_max)
        segs = self.net.segments
        base = 0.0
        k = 0
        stop = self.horizon - self.sep
        while k < len(route) and base <= self.horizon:
            lst = self.order[route[k]]
            if lst:
                lt = self.tracks[lst[-1]]
                lx, lv = lt.pos_at(self.now)
                stop = min(stop, base + lx + lv * lv / (2 * lt.dec) - self.sep)
                break
            base += segs[route[k]].length
            k += 1
        first = self.bounds[route[0]][1]
        return self._snap(probe, stop) >= first - EPS

    def _try_launch(self, node):
        pend = self.pending[node]
        if not pend:
            return
        vid = pend[0]
        v = self.mgr.vehicles[vid]
        route = v.route
        ctrl = self.ctrl[node]
        if not self._room(route, v.traits):
            self.schedule(self.now + POLL_S, RANK_DEPART, node, self._try_launch, node)
            return
        if not ctrl.request(vid, EXIT, self.now):
            return
        pend.pop(0)
        dec = v.traits.d_emergency if self.tp.strict_separation else v.traits.d_max
        tr = Track(vid, v.traits, route, dec)
        tr.holds[node] = -1
        tr.reserved = False
        self.tracks[vid] = tr
        self.order[route[0]].append(vid)
        self.mgr.on_launched(v, node)
        if self.monitor is not None:
            self.monitor.launch(self.now, vid, node, route)
        self._advance(tr)
        if pend:
            self.schedule(self.now, RANK_DEPART, node, self._try_launch, node)

    def horizon_view(self, vid: int) -> list[tuple[float, str, int]]:
        """Obstacles ahead of an on-track vehicle along its route, nearest first."""
        tr = self.tracks[vid]
        segs = self.net.segments
        out = []
        base = -tr.x
        seen_vehicle = False
        for k in range(tr.ri, len(tr.route)):
            sg = segs[tr.route[k]]
            if not seen_vehicle:
                lid = self._leader(tr, k)
                if lid is not None:
                    rel = base + self.tracks[lid].pos_at(self.now)[0]
                    if rel <= self.horizon:
                        out.append((rel, "vehicle", lid))
                    seen_vehicle = True
            node_rel = base + sg.length
            if node_rel > self.horizon:
                break
            out.append((node_rel, "node", sg.target))
            base += sg.length
        return sorted(out)

    # -- checks -------------------------------------------------------------------

    def vehicle_count(self) -> int:
        return len(self.tracks) + self.mgr.vehicles_inside()


@dataclass
class RunResult:
    log: EventLog
    engine: object

    @property
    def manager(self) -> FleetManager:
        return self.engine.mgr


def run(sc, trace: bool = False, monitor=None) -> RunResult:
    eng = EventEngine(sc, trace=trace, monitor=monitor)
    eng.run()
    return RunResult(eng.log, eng)

"""Engine-independent fleet and passenger lifecycle.

Both engines own the track; this module owns everything that happens inside
stations and capacitors: groups queueing, coupling, boarding, debarking,
reservations and the execution of empty-vehicle orders. An engine talks to
the manager through a handful of callbacks and provides ``schedule``,
``request_departure`` and ``capacity_freed``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import evm
from .analytics import EventLog
from .demand import generate_demand
from .facilities import CapacitorState, StationState
from .network import Kind, Network
from .routing import EMPTY, EdgeWeightParams, Route, all_pairs_static, shortest_route

# event tie-break ranks at equal times
(RANK_RELEASE, RANK_CROSSING, RANK_GROUP, RANK_DWELL, RANK_DEPART,
 RANK_EVM, RANK_QUEUE, RANK_REROUTE, RANK_END) = range(9)

EVM_TICK_S = 10.0
QUEUE_TICK_S = 10.0


@dataclass(frozen=True)
class VehicleTraits:
    capacity: int = 4
    v_max: float = 14.0
    a_max: float = 2.0
    d_max: float = 2.0
    d_emergency: float = 7.0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("vehicle capacity must be >= 1")
        if not (self.v_max > 0 and self.a_max > 0 and self.d_max > 0):
            raise ValueError("v_max, a_max and d_max must be > 0")
        if self.d_emergency < self.d_max:
            raise ValueError("d_emergency must be >= d_max")


@dataclass(frozen=True)
class TrafficParams:
    horizon_m: float = 200.0
    static_separation_m: float = 4.0
    board_time_s: float = 10.0
    debark_time_s: float = 10.0
    model_v_max: float = 14.0
    stub_exit_penalty_s: float = 4.0
    strict_separation: bool = False

    def __post_init__(self):
        vals = (self.horizon_m, self.static_separation_m, self.board_time_s,
                self.debark_time_s, self.model_v_max)
        if any(not v > 0 for v in vals):
            raise ValueError("traffic parameters must be > 0")
        if self.horizon_m <= self.static_separation_m:
            raise ValueError("horizon_m must exceed static_separation_m")
        if self.stub_exit_penalty_s < 0:
            raise ValueError("stub_exit_penalty_s must be >= 0")


class Vehicle:
    """Fleet-level vehicle record; engines keep kinematics separately."""

    __slots__ = ("id", "traits", "state", "node", "group", "target", "cause",
                 "route", "idle_since", "token", "trip_start", "requested")

    def __init__(self, vid: int, traits: VehicleTraits):
        self.id = vid
        self.traits = traits
        self.state = "parked"  # parked | busy | ready | moving
        self.node: int | None = None
        self.group = None
        self.target: int | None = None
        self.cause: str | None = None
        self.route: tuple[int, ...] = ()
        self.idle_since: float | None = None
        self.token = 0
        self.trip_start: float | None = None
        self.requested = False

    @property
    def empty(self) -> bool:
        return self.group is None

    def __repr__(self):
        return f"Vehicle({self.id}, {self.state}, node={self.node}, target={self.target})"


class FleetManager:
    def __init__(self, sc, sim, log: EventLog, quantum: float | None = None):
        self.sc = sc
        self.net: Network = sc.network
        self.sim = sim
        self.log = log
        self.traffic: TrafficParams = sc.traffic
        self.cfg: evm.EvmConfig = sc.evm
        self.weights: EdgeWeightParams = sc.routing.params
        self.dist = all_pairs_static(self.net, EdgeWeightParams(0.0, 1.0, 0.0))
        self.fac: dict[int, StationState | CapacitorState] = {}
        for nid in self.net.stations:
            self.fac[nid] = StationState(nid, self.net.nodes[nid].station)
        for nid in self.net.capacitors:
            self.fac[nid] = CapacitorState(nid, self.net.nodes[nid].parking)
        self.vehicles = [Vehicle(i, sc.fleet.traits_for(i)) for i in range(sc.fleet.count)]
        self.quantum = quantum
        self.demand = generate_demand(
            sc.demand.scaled_periods(), sc.demand.sizes, sc.duration_s, sc.seed, quantum
        )
        self.refused: dict[int, set[int]] = {n: set() for n in self.fac}
        self.pending_expel: dict[int, int] = {n: 0 for n in self.fac}
        self.pending_withdraw: set[int] = set()
        self.spawned = self.arrived = self.riding = self.waiting = 0
        self.groups = {}

    # -- setup / teardown ---------------------------------------------------

    def start(self):
        stations = self.net.stations
        self.log.append(
            0.0, "RunStarted", engine=self.log.engine, scale=self.sc.demand.scale,
            seed=self.sc.seed, vehicles=len(self.vehicles), stations=len(stations),
            station_ids=" ".join(str(s) for s in stations),
        )
        caps = self.net.capacitors
        if not caps and self.vehicles:
            raise ValueError("vehicles need a capacitor for initial placement")
        i = 0
        for v in self.vehicles:
            for _ in range(len(caps)):
                c = self.fac[caps[i % len(caps)]]
                i += 1
                if c.free_places > 0:
                    break
            else:
                raise ValueError("fleet does not fit into the capacitors")
            c.admit(v.id)
            v.node = c.id
            v.idle_since = 0.0
        for t, g in self.demand:
            self.sim.schedule(t, RANK_GROUP, g.id, self.on_spawn, g)
        self.sim.schedule(EVM_TICK_S, RANK_EVM, 0, self._evm_tick)
        self.sim.schedule(QUEUE_TICK_S, RANK_QUEUE, 0, self._queue_tick)
        if self.cfg.enable_balancing:
            self.sim.schedule(self.cfg.balance_check_interval_s, RANK_EVM, 1, self._balance_tick)
        if self.sc.routing.reroute_interval_s > 0:
            self.sim.schedule(self.sc.routing.reroute_interval_s, RANK_REROUTE, 0, self._reroute_tick)

    def finish(self, now: float):
        self.log.append(
            now, "RunEnded", spawned=self.spawned, arrived=self.arrived,
            riding=self.riding, waiting=self.waiting, vehicles=len(self.vehicles),
        )

    def accounting_closed(self) -> bool:
        queued = sum(len(f.queue) for f in self.fac.values())
        return self.spawned == self.arrived + self.riding + self.waiting and queued == self.waiting

    # -- helpers ------------------------------------------------------------

    @property
    def now(self) -> float:
        return self.sim.now

    def _after(self, dt: float) -> float:
        t = self.now + dt
        if self.quantum:
            t = math.ceil(t / self.quantum - 1e-9) * self.quantum
        return t

    def is_station(self, nid) -> bool:
        return self.net.nodes[nid].kind is Kind.STATION

    def dispatchable(self, v: Vehicle) -> bool:
        if v.state != "parked" or v.node is None:
            return False
        f = self.fac[v.node]
        if isinstance(f, StationState):
            if v.id in f.entry:
                return False
            if f.inline:
                for vid in f.row:
                    if self.vehicles[vid].state == "parked":
                        return vid == v.id
                return False
        return True

    def view(self) -> evm.FleetView:
        vs = []
        for v in self.vehicles:
            ok = self.dispatchable(v)
            vs.append(evm.VehicleView(
                v.id, v.node if v.state != "moving" else None,
                v.idle_since if ok else None, occupied=v.group is not None,
            ))
        stations = {
            s: evm.StationView(s, f.spec.berths, f.free_berths,
                               f.spec.entry_buffer - len(f.entry), len(f.queue))
            for s, f in self.fac.items() if isinstance(f, StationState)
        }
        caps = {c: f.free_places for c, f in self.fac.items() if isinstance(f, CapacitorState)}
        return evm.FleetView(tuple(vs), stations, caps, self.dist)

    def _route(self, source: int, target: int) -> Route:
        c = self.sim.congestion() if self.weights.gamma_congestion > 0 else EMPTY
        return shortest_route(self.net, source, target, self.weights, c)

    def _queue_changed(self, st):
        self.log.append(self.now, "QueueSampled", node=st.id, length=len(st.queue))

    # -- passengers -----------------------------------------------------------

    def on_spawn(self, g):
        st = self.fac[g.origin]
        self.groups[g.id] = g
        self.spawned += 1
        self.waiting += 1
        st.queue.append(g)
        self.log.append(self.now, "GroupSpawned", group=g.id, node=g.origin,
                        dest=g.destination, size=g.size)
        self._queue_changed(st)
        v = self._couplable(st)
        if v is not None:
            self._couple(v)
        else:
            self._request_call(st)

    def _couplable(self, st) -> Vehicle | None:
        best = None
        for vid in st.berthed():
            v = self.vehicles[vid]
            if v.state != "parked":
                continue
            if st.inline:
                return v
            if best is None or (v.idle_since, v.id) < (best.idle_since, best.id):
                best = v
        return best

    def _couple(self, v: Vehicle):
        st = self.fac[v.node]
        g = st.queue.popleft()
        self.waiting -= 1
        self.riding += 1
        self.pending_withdraw.discard(v.id)
        g.board_time = self.now
        v.group = g
        v.state = "busy"
        v.idle_since = None
        v.token += 1
        self.log.append(self.now, "GroupCoupled", vehicle=v.id, group=g.id, node=st.id,
                        wait_s=self.now - g.spawn_time)
        self._queue_changed(st)
        self.log.append(self.now, "BoardingStarted", vehicle=v.id, group=g.id, node=st.id)
        self.sim.schedule(self._after(self.traffic.board_time_s), RANK_DWELL, v.id, self._board_done, v)

    def _board_done(self, v: Vehicle):
        self.log.append(self.now, "BoardingDone", vehicle=v.id, group=v.group.id, node=v.node)
        self._dispatch(v, v.group.destination, None)

    # -- departures -----------------------------------------------------------

    def _dispatch(self, v: Vehicle, target: int, cause: str | None):
        node = v.node
        route = self._route(node, target)
        v.target = target
        v.cause = cause
        v.route = route.segments
        v.state = "ready"
        v.idle_since = None
        v.token += 1
        self.pending_withdraw.discard(v.id)
        if cause is not None:
            self.log.append(self.now, "EvmOrderIssued", vehicle=v.id, node=target,
                            kind=cause, origin=node)
            if cause == "withdraw":
                self.log.append(self.now, "VehicleWithdrawn", vehicle=v.id, node=node, to=target)
        if isinstance(self.fac[target], CapacitorState):
            if not self.fac[target].reserve(v.id):
                raise RuntimeError(f"capacitor {target} has no place for vehicle {v.id}")
        self._departures(node)

    def _departures(self, node: int):
        f = self.fac[node]
        if isinstance(f, StationState) and f.inline:
            while f.row and f.spec.exit_buffer and self.vehicles[f.row[0]].state == "ready":
                if not f.to_exit_buffer(f.row[0]):
                    break
                self._berth_freed(node)
            head = f.exit[0] if f.exit else (f.row[0] if f.row else None)
            if head is None:
                return
            hv = self.vehicles[head]
            if hv.state == "ready":
                if not hv.requested:
                    hv.requested = True
                    self.sim.request_departure(hv, node)
            elif hv.state == "parked" and any(self.vehicles[x].state == "ready" for x in f.row):
                self._blocker_expel(hv)
            return
        delay = self.traffic.stub_exit_penalty_s if isinstance(f, StationState) else 0.0
        for vid in f.berthed():
            v = self.vehicles[vid]
            if v.state == "ready" and not v.requested:
                v.requested = True
                if delay > 0:
                    self.sim.schedule(self._after(delay), RANK_DEPART, v.id,
                                      self.sim.request_departure, v, node)
                else:
                    self.sim.request_departure(v, node)

    def _blocker_expel(self, v: Vehicle):
        # an idle vehicle at the front of an in-line station holds up a ready one
        if not self.cfg.enable_expelling:
            return
        target = self._expel_target(v.node)
        if target is not None:
            self._dispatch(v, target, "expel")

    def _expel_target(self, node: int) -> int | None:
        view = self.view()
        try:
            return evm.expel_target(view, node, self.cfg)
        except evm.NoCandidateStation:
            return evm.nearest_capacitor(view, node)

    def on_launched(self, v: Vehicle, node: int):
        f = self.fac[node]
        f.remove(v.id)
        v.node = None
        v.state = "moving"
        v.requested = False
        v.trip_start = self.now
        if v.cause == "expel":
            self.pending_expel[node] = max(0, self.pending_expel[node] - 1)
        self.log.append(self.now, "TripStarted", vehicle=v.id,
                        group=v.group.id if v.group else None, node=node,
                        empty=int(v.group is None), cause=v.cause or "")
        self._berth_freed(node)
        self._departures(node)
        if isinstance(f, StationState):
            for vid in f.berthed():
                w = self.vehicles[vid]
                if self.dispatchable(w):
                    self._idle_hook(w)
                    break

    def _berth_freed(self, node: int):
        f = self.fac[node]
        for vid in f.promote():
            self._berthed(self.vehicles[vid])
        self.sim.capacity_freed(node)

    # -- arrivals -------------------------------------------------------------

    def reserve(self, v: Vehicle, node: int) -> bool:
        f = self.fac[node]
        if f.reserve(v.id):
            self.refused[node].discard(v.id)
            return True
        self.refused[node].add(v.id)
        self._maybe_expel(node)
        return False

    def _maybe_expel(self, node: int):
        if not self.cfg.enable_expelling or not self.is_station(node):
            return
        if len(self.refused[node]) <= self.pending_expel[node]:
            return
        view = self.view()
        if not view.idle_at(node):
            return
        try:
            order = evm.on_station_full(view, node, self.cfg)
            target = order.to_station
            vid = order.vehicle
        except evm.NoCandidateStation:
            idle = view.idle_at(node)
            vid = min(idle, key=lambda x: (x.idle_since, x.id)).id
            target = evm.nearest_capacitor(view, node)
            if target is None:
                return
        self.pending_expel[node] += 1
        self._dispatch(self.vehicles[vid], target, "expel")

    def on_arrival(self, v: Vehicle, node: int, dist_m: float):
        f = self.fac[node]
        place = f.admit(v.id)
        if place is None:
            raise RuntimeError(f"vehicle {v.id} arrived at full node {node} without a reservation")
        self.refused[node].discard(v.id)
        self.log.append(self.now, "TripCompleted", vehicle=v.id,
                        group=v.group.id if v.group else None, node=node,
                        empty=int(v.group is None), cause=v.cause or "", dist_m=dist_m)
        if v.cause == "call" and isinstance(f, StationState):
            f.inbound_calls = max(0, f.inbound_calls - 1)
        v.node = node
        v.target = None
        v.cause = None
        v.route = ()
        v.state = "busy"
        if place[0] == "berth":
            self._berthed(v)

    def _berthed(self, v: Vehicle):
        if v.group is not None:
            self.log.append(self.now, "DebarkStarted", vehicle=v.id, group=v.group.id, node=v.node)
            self.sim.schedule(self._after(self.traffic.debark_time_s), RANK_DWELL, v.id,
                              self._debark_done, v)
        else:
            self._vehicle_free(v)

    def _debark_done(self, v: Vehicle):
        g = v.group
        g.arrival_time = self.now
        self.riding -= 1
        self.arrived += 1
        v.group = None
        self.log.append(self.now, "DebarkDone", vehicle=v.id, group=g.id, node=v.node)
        self._vehicle_free(v)

    def _vehicle_free(self, v: Vehicle):
        f = self.fac[v.node]
        if isinstance(f, StationState) and f.queue:
            self._couple(v)
            return
        v.state = "parked"
        v.idle_since = self.now
        v.token += 1
        self.log.append(self.now, "VehicleIdle", vehicle=v.id, node=v.node)
        if isinstance(f, StationState) and self.cfg.enable_withdrawing:
            self.sim.schedule(self._after(self.cfg.withdraw_timeout_s), RANK_EVM, v.id,
                              self._withdraw_check, v, v.token)
        if self.dispatchable(v):
            self._idle_hook(v)
        if isinstance(f, StationState):
            self._departures(v.node)

    # -- empty-vehicle management ------------------------------------------------

    def _idle_hook(self, v: Vehicle):
        """A vehicle just became dispatchable: serve the longest uncovered wait, or relieve a full station."""
        at_cap = isinstance(self.fac[v.node], CapacitorState)
        if self.cfg.enable_calling or at_cap:
            best = None
            for s, f in self.fac.items():
                if not isinstance(f, StationState) or s == v.node:
                    continue
                if len(f.queue) <= f.inbound_calls:
                    continue
                d = self.dist(v.node, s)
                if d == math.inf:
                    continue
                key = (f.queue[f.inbound_calls].spawn_time, d, s)
                if best is None or key < best:
                    best = key
            if best is not None:
                self.fac[best[2]].inbound_calls += 1
                self._dispatch(v, best[2], "call")
                return
        if self.refused.get(v.node):
            self._maybe_expel(v.node)

    def _request_call(self, st: StationState):
        if len(st.queue) <= st.inbound_calls:
            return
        view = self.view()
        if self.cfg.enable_calling:
            order = evm.on_group_arrival(view, st.id, self.cfg)
            vid = order.vehicle if order else None
        else:
            # capacitors still release vehicles on demand
            caps = set(self.net.capacitors)
            sub = evm.FleetView(
                tuple(x for x in view.vehicles if x.node in caps),
                view.stations, view.capacitor_free, view.dist,
            )
            pick = evm.nearest_idle(sub, st.id)
            vid = pick.id if pick else None
        if vid is None:
            return
        st.inbound_calls += 1
        self._dispatch(self.vehicles[vid], st.id, "call")

    def _withdraw_check(self, v: Vehicle, token: int):
        if v.token != token or v.state != "parked":
            return
        view = self.view()
        order = evm.on_idle_tick(view, view.vehicles[v.id], self.now, self.cfg)
        if order is not None:
            self._dispatch(v, order.to_capacitor, "withdraw")
        else:
            self.pending_withdraw.add(v.id)

    def _evm_tick(self):
        for vid in sorted(self.pending_withdraw):
            v = self.vehicles[vid]
            if v.state != "parked":
                self.pending_withdraw.discard(vid)
                continue
            self._withdraw_check(v, v.token)
        for s in self.net.stations:
            self._request_call(self.fac[s])
        self.sim.schedule(self.now + EVM_TICK_S, RANK_EVM, 0, self._evm_tick)

    def _balance_tick(self):
        rates = self.sc.demand.rates_at(self.now)
        for order in evm.balancing_tick(self.view(), rates, self.cfg):
            v = self.vehicles[order.vehicle]
            if self.dispatchable(v):
                self._dispatch(v, order.to_station, "balance")
        self.sim.schedule(self.now + self.cfg.balance_check_interval_s, RANK_EVM, 1, self._balance_tick)

    def _queue_tick(self):
        for s in self.net.stations:
            st = self.fac[s]
            if st.queue:
                self._queue_changed(st)
        self.sim.schedule(self.now + QUEUE_TICK_S, RANK_QUEUE, 0, self._queue_tick)

    def _reroute_tick(self):
        self.sim.reroute_all()
        self.sim.schedule(self.now + self.sc.routing.reroute_interval_s, RANK_REROUTE, 0, self._reroute_tick)

    # -- checks -----------------------------------------------------------------

    def vehicles_inside(self) -> int:
        n = 0
        for f in self.fac.values():
            n += len(f.berthed())
            if isinstance(f, StationState):
                n += len(f.entry) + len(f.exit)
        return n

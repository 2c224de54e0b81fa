"""Empty-vehicle management: pure decision rules over a fleet snapshot.

The functions here never mutate anything. The fleet manager builds a
:class:`FleetView`, asks for an order and carries it out.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping


class NoCandidateStation(Exception):
    pass


@dataclass(frozen=True)
class EvmConfig:
    enable_calling: bool = True
    enable_expelling: bool = True
    enable_withdrawing: bool = True
    enable_balancing: bool = False
    withdraw_timeout_s: float = 120.0
    expel_lambda: float = 0.5
    balance_surplus_threshold: int = 1
    balance_check_interval_s: float = 60.0

    def __post_init__(self):
        if not self.withdraw_timeout_s > 0:
            raise ValueError("withdraw_timeout_s must be > 0")
        if not 0.0 <= self.expel_lambda <= 1.0:
            raise ValueError("expel_lambda must lie in [0, 1]")
        if self.balance_check_interval_s <= 0:
            raise ValueError("balance_check_interval_s must be > 0")


@dataclass(frozen=True)
class VehicleView:
    id: int
    node: int | None  # None while en route
    idle_since: float | None  # None unless idle and empty
    occupied: bool = False

    @property
    def idle_empty(self) -> bool:
        return self.node is not None and self.idle_since is not None and not self.occupied


@dataclass(frozen=True)
class StationView:
    id: int
    berths: int
    free_berths: int
    free_entry: int
    waiting: int


@dataclass(frozen=True)
class FleetView:
    # only vehicles the engine could actually dispatch are listed as idle
    vehicles: tuple[VehicleView, ...]
    stations: Mapping[int, StationView]
    capacitor_free: Mapping[int, int]
    dist: Callable[[int, int], float]

    def idle_at(self, node: int) -> list[VehicleView]:
        return [v for v in self.vehicles if v.idle_empty and v.node == node]


@dataclass(frozen=True)
class Call:
    vehicle: int
    to_station: int
    kind = "call"


@dataclass(frozen=True)
class Expel:
    vehicle: int
    to_station: int
    kind = "expel"


@dataclass(frozen=True)
class Withdraw:
    vehicle: int
    to_capacitor: int
    kind = "withdraw"


@dataclass(frozen=True)
class Balance:
    vehicle: int
    to_station: int
    kind = "balance"


def target_of(order) -> int:
    return order.to_capacitor if isinstance(order, Withdraw) else order.to_station


def nearest_idle(view: FleetView, station: int, exclude_node: int | None = None) -> VehicleView | None:
    best = None
    for v in view.vehicles:
        if not v.idle_empty or v.node == exclude_node:
            continue
        key = (view.dist(v.node, station), v.id)
        if key[0] == float("inf"):
            continue
        if best is None or key < best[0]:
            best = (key, v)
    return None if best is None else best[1]


def on_group_arrival(view: FleetView, station: int, cfg: EvmConfig) -> Call | None:
    if not cfg.enable_calling:
        return None
    if view.idle_at(station):
        return None
    v = nearest_idle(view, station, exclude_node=station)
    return None if v is None else Call(v.id, station)


def expel_score(dist: float, max_dist: float, free: int, max_berths: int, lam: float) -> float:
    d = dist / max_dist if max_dist > 0 else 0.0
    b = free / max_berths if max_berths > 0 else 0.0
    return lam * d - (1.0 - lam) * b


def expel_target(view: FleetView, station: int, cfg: EvmConfig) -> int:
    cands = [
        s for s in view.stations.values()
        if s.id != station and s.free_berths > 0 and view.dist(station, s.id) < float("inf")
    ]
    if not cands:
        raise NoCandidateStation(f"no station with a free berth to expel to from {station}")
    max_dist = max(view.dist(station, s.id) for s in cands)
    max_berths = max(s.berths for s in view.stations.values())
    scored = [
        (expel_score(view.dist(station, s.id), max_dist, s.free_berths, max_berths, cfg.expel_lambda), s.id)
        for s in cands
    ]
    return min(scored)[1]


def on_station_full(view: FleetView, station: int, cfg: EvmConfig) -> Expel:
    idle = view.idle_at(station)
    if not idle:
        raise ValueError(f"no idle empty vehicle at station {station} to expel")
    # longest idle first, lower id on ties
    victim = min(idle, key=lambda v: (v.idle_since, v.id))
    return Expel(victim.id, expel_target(view, station, cfg))


def nearest_capacitor(view: FleetView, node: int) -> int | None:
    best = None
    for c, free in view.capacitor_free.items():
        if free <= 0:
            continue
        key = (view.dist(node, c), c)
        if key[0] == float("inf"):
            continue
        if best is None or key < best:
            best = key
    return None if best is None else best[1]


def on_idle_tick(view: FleetView, vehicle: VehicleView, now_s: float, cfg: EvmConfig) -> Withdraw | None:
    if not cfg.enable_withdrawing or not vehicle.idle_empty:
        return None
    if vehicle.node not in view.stations:
        return None
    # small tolerance so a check scheduled at exactly idle_since + timeout fires
    if now_s - vehicle.idle_since < cfg.withdraw_timeout_s - 1e-9:
        return None
    if view.stations[vehicle.node].waiting > 0:
        return None
    cap = nearest_capacitor(view, vehicle.node)
    return None if cap is None else Withdraw(vehicle.id, cap)


def balancing_tick(view: FleetView, expected_rates: Mapping[int, float], cfg: EvmConfig) -> list[Balance]:
    if not cfg.enable_balancing:
        return []
    idle = {s: view.idle_at(s) for s in view.stations}
    deficits = [
        s for s in view.stations
        if not idle[s] and view.stations[s].free_berths > 0
    ]
    orders = []
    taken = set()
    for s in sorted(view.stations):
        surplus = len(idle[s]) - view.stations[s].waiting
        if surplus <= cfg.balance_surplus_threshold:
            continue
        open_ = [d for d in deficits if d not in taken and view.dist(s, d) < float("inf")]
        if not open_:
            break
        target = min(open_, key=lambda d: (-expected_rates.get(d, 0.0), view.dist(s, d), d))
        victim = min(idle[s], key=lambda v: (v.idle_since, v.id))
        orders.append(Balance(victim.id, target))
        taken.add(target)
    return orders

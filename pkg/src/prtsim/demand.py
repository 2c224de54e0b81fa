"""Seeded Poisson passenger-group demand."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


class DegenerateRow(ValueError):
    pass


class OverlappingPeriods(ValueError):
    pass


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for one named consumer of the run seed.

    Keying by name keeps e.g. the demand draws identical whether or not CA
    randomization is switched on.
    """
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode()), *[int(e) for e in extra]]
    return np.random.default_rng(np.random.SeedSequence(key))


@dataclass(frozen=True)
class GroupSizeDistribution:
    probs: Mapping[int, float]

    def __post_init__(self):
        if not self.probs:
            raise ValueError("group size distribution is empty")
        if any(k < 1 for k in self.probs) or any(p < 0 for p in self.probs.values()):
            raise ValueError("group sizes must be >= 1 with non-negative probability")
        if abs(math.fsum(self.probs.values()) - 1.0) > 1e-9:
            raise ValueError("group size probabilities must sum to 1")

    @classmethod
    def point(cls, size: int) -> "GroupSizeDistribution":
        return cls({size: 1.0})

    @property
    def max_size(self) -> int:
        return max(k for k, p in self.probs.items() if p > 0)

    def sample(self, rng: np.random.Generator) -> int:
        sizes = sorted(self.probs)
        if len(sizes) == 1:
            return sizes[0]
        u = rng.random()
        acc = 0.0
        for s in sizes:
            acc += self.probs[s]
            if u < acc:
                return s
        return sizes[-1]


@dataclass(frozen=True)
class DemandPeriod:
    start_s: float
    end_s: float
    station_rates: Mapping[int, float]
    # origin -> {destination: probability}
    od: Mapping[int, Mapping[int, float]]

    def __post_init__(self):
        if not self.end_s > self.start_s:
            raise ValueError("demand period must have end_s > start_s")
        if any(r < 0 for r in self.station_rates.values()):
            raise ValueError("station rates must be >= 0")
        for o, row in self.od.items():
            if row.get(o, 0.0) != 0.0:
                raise ValueError(f"od[{o}][{o}] must be 0")
            total = math.fsum(row.values())
            if total != 0.0 and abs(total - 1.0) > 1e-9:
                raise ValueError(f"od row {o} sums to {total}, not 1")

    @staticmethod
    def uniform_od(stations) -> dict[int, dict[int, float]]:
        stations = sorted(stations)
        n = len(stations)
        if n < 2:
            return {s: {} for s in stations}
        return {o: {d: 1.0 / (n - 1) for d in stations if d != o} for o in stations}

    def scaled(self, k: float) -> "DemandPeriod":
        return DemandPeriod(self.start_s, self.end_s, {s: r * k for s, r in self.station_rates.items()}, self.od)


@dataclass
class PassengerGroup:
    id: int
    size: int
    origin: int
    destination: int
    spawn_time: float
    board_time: float | None = None
    arrival_time: float | None = None

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("group size must be >= 1")
        if self.destination == self.origin:
            raise ValueError("group destination equals its origin")


def sample_interarrival(rate_per_hour: float, rng: np.random.Generator) -> float:
    if rate_per_hour <= 0:
        raise ValueError("rate must be > 0")
    return float(rng.exponential(3600.0 / rate_per_hour))


def sample_destination(origin: int, period: DemandPeriod, rng: np.random.Generator) -> int:
    row = period.od.get(origin, {})
    dests = sorted(d for d, p in row.items() if p > 0)
    if not dests:
        raise DegenerateRow(f"od row for station {origin} has no destination")
    u = rng.random() * math.fsum(row[d] for d in dests)
    acc = 0.0
    for d in dests:
        acc += row[d]
        if u < acc:
            return d
    return dests[-1]


def sample_group(
    origin: int,
    period: DemandPeriod,
    dist: GroupSizeDistribution,
    rng: np.random.Generator,
    group_id: int = 0,
    spawn_time: float = 0.0,
) -> PassengerGroup:
    dest = sample_destination(origin, period, rng)
    return PassengerGroup(group_id, dist.sample(rng), origin, dest, spawn_time)


def check_periods(periods) -> None:
    for a, b in zip(periods, periods[1:]):
        if b.start_s < a.end_s:
            raise OverlappingPeriods(f"period starting at {b.start_s} overlaps one ending at {a.end_s}")


def generate_demand(
    periods: list[DemandPeriod],
    dist: GroupSizeDistribution,
    end_time_s: float,
    seed: int,
    quantum: float | None = None,
) -> list[tuple[float, PassengerGroup]]:
    """Time-ordered (time, group) stream for one run.

    Each origin station draws from its own seeded sub-stream. With ``quantum``
    set, spawn times are rounded up to the next multiple (used by the
    fixed-step engine so groups appear at step boundaries).
    """
    check_periods(periods)
    raw = []
    stations = sorted({s for p in periods for s in p.station_rates})
    for st in stations:
        rng = substream(seed, "demand", st)
        for p in periods:
            rate = p.station_rates.get(st, 0.0)
            if rate <= 0:
                continue
            t = p.start_s
            end = min(p.end_s, end_time_s)
            while True:
                t += sample_interarrival(rate, rng)
                if t >= end:
                    break
                dest = sample_destination(st, p, rng)
                size = dist.sample(rng)
                raw.append((t, st, dest, size))
    if quantum:
        raw = [(math.ceil(t / quantum - 1e-9) * quantum, st, d, n) for t, st, d, n in raw]
        raw = [r for r in raw if r[0] < end_time_s]
    raw.sort(key=lambda r: (r[0], r[1]))
    return [
        (t, PassengerGroup(i, size, st, dest, t))
        for i, (t, st, dest, size) in enumerate(raw)
    ]


@dataclass(frozen=True)
class DemandModel:
    periods: tuple[DemandPeriod, ...]
    sizes: GroupSizeDistribution = field(default_factory=lambda: GroupSizeDistribution.point(4))
    scale: float = 1.0

    def scaled_periods(self) -> list[DemandPeriod]:
        return [p.scaled(self.scale) for p in self.periods]

    def rates_at(self, t: float) -> dict[int, float]:
        for p in self.periods:
            if p.start_s <= t < p.end_s:
                return {s: r * self.scale for s, r in p.station_rates.items()}
        return {}

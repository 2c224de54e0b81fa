"""Demand sweeps: saturation search, the six-point empty-trip curve and engine comparison."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import engine_ca, engine_event
from .analytics import MetricsReport, NotSaturated, compute_metrics, empty_trip_curve, is_saturated

ENGINES = {"ed": engine_event, "ca": engine_ca}


def simulate(sc, engine: str, trace: bool = False, monitor=None):
    try:
        mod = ENGINES[engine]
    except KeyError:
        raise ValueError(f"unknown engine {engine!r}; use ed or ca") from None
    return mod.run(sc, trace=trace, monitor=monitor)


def _measure(job) -> MetricsReport:
    sc, engine, scale, seed = job
    res = simulate(sc.with_scale(scale).with_seed(seed), engine)
    return compute_metrics(res.log, sc.warmup_s)


def _map(jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [_measure(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_measure, jobs))


def replicate(sc, engine: str, scales, seeds, workers: int = 1) -> dict[float, list[MetricsReport]]:
    jobs = [(sc, engine, s, k) for s in scales for k in seeds]
    out: dict[float, list[MetricsReport]] = {s: [] for s in scales}
    for (_, _, s, _), rep in zip(jobs, _map(jobs, workers)):
        out[s].append(rep)
    return out


def pooled_quarters(reports) -> tuple:
    return tuple(float(x) for x in np.mean([r.queue_quarters for r in reports], axis=0))


@dataclass
class SaturationSearch:
    scale: float
    probes: list = field(default_factory=list)  # (scale, saturated, pooled quarters)


def find_saturation(sc, engine: str, seeds=(0,), start: float = 1.0, bisect_steps: int = 6,
                    max_probes: int = 12, workers: int = 1) -> SaturationSearch:
    """Double the demand scale until queues diverge, then bisect the bracket.

    A probe pools the queue quarters of all ``seeds`` at one scale and counts
    once against ``max_probes``.
    """
    search = SaturationSearch(0.0)

    def probe(s):
        reps = replicate(sc, engine, [s], seeds, workers)[s]
        q = pooled_quarters(reps)
        sat = is_saturated(q)
        search.probes.append((s, sat, q))
        return sat

    lo, hi = 0.0, start
    while not probe(hi):
        if len(search.probes) >= max_probes:
            raise NotSaturated(hi)
        lo, hi = hi, hi * 2
    for _ in range(bisect_steps):
        if len(search.probes) >= max_probes:
            break
        mid = 0.5 * (lo + hi)
        if probe(mid):
            hi = mid
        else:
            lo = mid
    search.scale = hi
    return search


def six_point_scales(saturation: float, n: int = 6) -> list[float]:
    return [saturation * k / n for k in range(1, n + 1)]


@dataclass
class SweepOutcome:
    scales: list
    reports: dict  # scale -> [MetricsReport per replication]
    saturation: float | None = None

    def curve_rows(self):
        rows = []
        for s in self.scales:
            vals = [r.trips_empty_per_h for r in self.reports[s]]
            rows.append((s, float(np.mean(vals)), float(np.min(vals)), float(np.max(vals))))
        return rows

    def replication_curves(self):
        n = min(len(v) for v in self.reports.values())
        return [empty_trip_curve([(s, self.reports[s][i]) for s in self.scales]) for i in range(n)]

    def mean_curve(self):
        return empty_trip_curve([(s, m) for s, m, _, _ in self.curve_rows()])


def sweep(sc, engine: str, scales, seeds=(0,), workers: int = 1, saturation: float | None = None) -> SweepOutcome:
    scales = sorted(scales)
    return SweepOutcome(scales, replicate(sc, engine, scales, seeds, workers), saturation)


def rel_diff(a: float, b: float) -> float:
    m = max(abs(a), abs(b))
    return 0.0 if m == 0 else abs(a - b) / m


@dataclass
class CompareRow:
    scale: float
    ed: tuple  # (throughput, empty, wait)
    ca: tuple
    diffs: tuple

    def ok(self, tol: float, empty_tol: float) -> bool:
        return self.diffs[0] <= tol and self.diffs[2] <= tol and self.diffs[1] <= empty_tol


def _means(reports):
    return (float(np.mean([r.trips_full_per_h for r in reports])),
            float(np.mean([r.trips_empty_per_h for r in reports])),
            float(np.mean([r.wait_mean_s for r in reports])))


def compare(sc, scales, seeds=(0,), workers: int = 1) -> list[CompareRow]:
    ed = replicate(sc, "ed", scales, seeds, workers)
    ca = replicate(sc, "ca", scales, seeds, workers)
    rows = []
    for s in scales:
        a, b = _means(ed[s]), _means(ca[s])
        rows.append(CompareRow(s, a, b, tuple(rel_diff(x, y) for x, y in zip(a, b))))
    return rows

"""Event log, metrics, saturation detection and the empty-trip curve."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

EVENT_COLUMNS = ("time_s", "kind", "vehicle_id", "group_id", "node_id", "segment_id", "detail")
METRIC_COLUMNS = (
    "demand_scale", "trips_full_per_h", "trips_empty_per_h", "empty_call", "empty_expel",
    "empty_withdraw", "empty_balance", "wait_mean_s", "wait_p95_s", "queue_mean",
    "vkm_full", "vkm_empty", "saturated",
)
CAUSES = ("call", "expel", "withdraw", "balance")

# a run counts as saturated only if its late queues are also long in absolute terms
QUEUE_RATIO_K = 2.0
MIN_SATURATED_QUEUE = 0.5
PLATEAU_GAIN = 0.02


class EmptyWindow(ValueError):
    pass


class NotSaturated(Exception):
    def __init__(self, upper_bound):
        self.upper_bound = upper_bound
        super().__init__(f"no saturation detected up to demand scale {upper_bound:g}")


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if x == 0:
            return "0"
        if math.isinf(x) or math.isnan(x):
            return str(x)
        return "%.6g" % x
    return str(x)


@dataclass(frozen=True)
class EventRecord:
    time_s: float
    kind: str
    vehicle_id: int | None = None
    group_id: int | None = None
    node_id: int | None = None
    segment_id: int | None = None
    detail: tuple = ()  # ordered (key, value) pairs

    def get(self, key, default=None):
        for k, v in self.detail:
            if k == key:
                return v
        return default

    def row(self) -> str:
        det = ";".join(f"{k}={fmt(v)}" for k, v in self.detail)
        return ",".join(
            (fmt(float(self.time_s)), self.kind, fmt(self.vehicle_id), fmt(self.group_id),
             fmt(self.node_id), fmt(self.segment_id), det)
        )


class EventLog:
    """Append-only, time-ordered record of a run."""

    def __init__(self, engine: str = "ED", trace: bool = False):
        self.engine = engine
        self.trace = trace
        self.records: list[EventRecord] = []
        self.movement_count = 0

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, time_s, event, vehicle=None, group=None, node=None, segment=None, **detail):
        if self.records and time_s < self.records[-1].time_s - 1e-9:
            raise ValueError(f"event at {time_s} appended after {self.records[-1].time_s}")
        rec = EventRecord(float(time_s), event, vehicle, group, node, segment, tuple(detail.items()))
        self.records.append(rec)
        return rec

    def movement(self, time_s, event, vehicle, segment, **detail):
        self.movement_count += 1
        if self.trace:
            self.append(time_s, event, vehicle=vehicle, segment=segment, **detail)

    def of_kind(self, *kinds):
        return [r for r in self.records if r.kind in kinds]

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(",".join(EVENT_COLUMNS) + "\n")
        for r in self.records:
            out.write(r.row() + "\n")
        return out.getvalue()


def export_csv(obj) -> str:
    if isinstance(obj, EventLog):
        return obj.to_csv()
    if isinstance(obj, MetricsReport):
        obj = [obj]
    return metrics_csv(obj)


def write_text(path, text: str) -> None:
    """Write atomically so a crashed run never leaves a half file behind."""
    import os
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as f:
        f.write(text)
    os.replace(tmp, path)


@dataclass
class MetricsReport:
    demand_scale: float = 1.0
    trips_full_per_h: float = 0.0
    trips_empty_per_h: float = 0.0
    empty_by_cause: dict = field(default_factory=lambda: {c: 0.0 for c in CAUSES})
    wait_mean_s: float = 0.0
    wait_p95_s: float = 0.0
    queue_mean: float = 0.0
    queue_by_station: dict = field(default_factory=dict)
    vkm_full: float = 0.0
    vkm_empty: float = 0.0
    saturated: bool = False
    queue_quarters: tuple = (0.0, 0.0, 0.0, 0.0)
    groups_spawned: int = 0
    groups_served: int = 0

    @property
    def queue_ratio(self) -> float:
        q2, q4 = self.queue_quarters[1], self.queue_quarters[3]
        if q2 <= 0:
            return math.inf if q4 > 0 else 1.0
        return q4 / q2

    def row(self) -> str:
        vals = (
            self.demand_scale, self.trips_full_per_h, self.trips_empty_per_h,
            *(self.empty_by_cause.get(c, 0.0) for c in CAUSES),
            self.wait_mean_s, self.wait_p95_s, self.queue_mean, self.vkm_full, self.vkm_empty,
            self.saturated,
        )
        return ",".join(fmt(float(v)) if not isinstance(v, bool) else fmt(v) for v in vals)


def metrics_csv(reports) -> str:
    lines = [",".join(METRIC_COLUMNS)]
    lines += [r.row() for r in reports]
    return "\n".join(lines) + "\n"


def _run_info(log):
    start = end = None
    for r in log:
        if r.kind == "RunStarted":
            start = r
        elif r.kind == "RunEnded":
            end = r
    return start, end


def queue_series(log) -> dict[int, list[tuple[float, int]]]:
    series: dict[int, list[tuple[float, int]]] = {}
    for r in log:
        if r.kind == "QueueSampled":
            series.setdefault(r.node_id, []).append((r.time_s, int(r.get("length", 0))))
    return series


def time_weighted_mean(samples, a: float, b: float) -> float:
    """Mean of a piecewise-constant signal (value holds until the next sample) over [a, b]."""
    if b <= a:
        raise EmptyWindow("zero-length averaging window")
    total = 0.0
    cur = 0
    t_prev = a
    for t, val in samples:
        if t > b:
            break
        if t > t_prev:
            total += cur * (t - t_prev)
            t_prev = t
        cur = val
    total += cur * (b - t_prev)
    return total / (b - a)


def queue_means(log, a: float, b: float, stations=None) -> dict[int, float]:
    series = queue_series(log)
    if stations is None:
        stations = sorted(series)
    return {s: time_weighted_mean(series.get(s, ()), a, b) for s in stations}


def _stations(start):
    if start is None:
        return None
    ids = start.get("station_ids")
    if ids in (None, ""):
        return []
    return [int(x) for x in str(ids).split(" ")]


def queue_quarters(log, duration: float | None = None) -> tuple[float, float, float, float]:
    start, end = _run_info(log)
    t0 = start.time_s if start else 0.0
    t1 = duration if duration is not None else (end.time_s if end else max((r.time_s for r in log), default=0.0))
    stations = _stations(start)
    out = []
    q = (t1 - t0) / 4
    for i in range(4):
        m = queue_means(log, t0 + i * q, t0 + (i + 1) * q, stations)
        out.append(float(np.mean(list(m.values()))) if m else 0.0)
    return tuple(out)


def is_saturated(quarters, k: float = QUEUE_RATIO_K, q_min: float = MIN_SATURATED_QUEUE) -> bool:
    q2, q4 = quarters[1], quarters[3]
    return q4 >= q_min and q4 > k * q2


def compute_metrics(log, warmup_s: float = 600.0, window_s: float | None = None) -> MetricsReport:
    start, end = _run_info(log)
    if window_s is None:
        t_end = end.time_s if end else max((r.time_s for r in log), default=0.0)
        window_s = t_end - warmup_s
    if not window_s > 0:
        raise EmptyWindow("measurement window has no length")
    a, b = warmup_s, warmup_s + window_s
    hours = window_s / 3600.0

    spawn = {}
    full = 0
    empty = {c: 0 for c in CAUSES}
    vkm_full = vkm_empty = 0.0
    waits = []
    spawned = served = 0
    for r in log:
        if r.kind == "GroupSpawned":
            spawn[r.group_id] = r.time_s
            if a <= r.time_s <= b:
                spawned += 1
        elif not a <= r.time_s <= b:
            continue
        elif r.kind == "TripCompleted":
            dist = float(r.get("dist_m", 0.0)) / 1000.0
            if int(r.get("empty", 0)):
                cause = r.get("cause", "call")
                empty[cause] = empty.get(cause, 0) + 1
                vkm_empty += dist
            else:
                full += 1
                vkm_full += dist
        elif r.kind == "GroupCoupled":
            served += 1
            waits.append(r.time_s - spawn[r.group_id])

    stations = _stations(start)
    qmeans = queue_means(log, a, b, stations)
    quarters = queue_quarters(log)
    n_empty = sum(empty.values())
    return MetricsReport(
        demand_scale=float(start.get("scale", 1.0)) if start else 1.0,
        trips_full_per_h=full / hours,
        trips_empty_per_h=n_empty / hours,
        empty_by_cause={c: empty.get(c, 0) / hours for c in CAUSES},
        wait_mean_s=float(np.mean(waits)) if waits else 0.0,
        wait_p95_s=float(np.percentile(waits, 95)) if waits else 0.0,
        queue_mean=float(np.mean(list(qmeans.values()))) if qmeans else 0.0,
        queue_by_station=qmeans,
        vkm_full=vkm_full,
        vkm_empty=vkm_empty,
        saturated=is_saturated(quarters),
        queue_quarters=quarters,
        groups_spawned=spawned,
        groups_served=served,
    )


@dataclass
class SweepResult:
    points: list  # [(demand_scale, MetricsReport)]
    saturation_scale: float | None = None

    def __post_init__(self):
        scales = [s for s, _ in self.points]
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ValueError("sweep demand scales must be strictly increasing")


def detect_saturation(
    points,
    k: float = QUEUE_RATIO_K,
    gain: float = PLATEAU_GAIN,
    q_min: float = MIN_SATURATED_QUEUE,
) -> float:
    """Smallest scale whose queues diverge and beyond which throughput stops rising.

    ``points`` is a rising list of (scale, MetricsReport). The top scale has no
    successor, so only its queue test applies.
    """
    points = list(points)
    if len(points) < 3:
        raise ValueError("saturation detection needs at least 3 demand scales")
    for i, (scale, rep) in enumerate(points):
        if not is_saturated(rep.queue_quarters, k, q_min):
            continue
        if i + 1 < len(points):
            thr = rep.trips_full_per_h
            nxt = points[i + 1][1].trips_full_per_h
            if thr > 0 and (nxt - thr) / thr >= gain:
                continue
        return scale
    raise NotSaturated(points[-1][0])


@dataclass(frozen=True)
class CurveReport:
    scales: tuple
    values: tuple
    argmax: int
    interior: bool
    margin: float  # peak / larger endpoint

    def passes(self, min_margin: float = 1.2) -> bool:
        return self.interior and self.margin >= min_margin


def empty_trip_curve(sweep) -> CurveReport:
    if isinstance(sweep, SweepResult):
        pairs = [(s, r.trips_empty_per_h) for s, r in sweep.points]
    else:
        pairs = [(s, v.trips_empty_per_h if isinstance(v, MetricsReport) else float(v)) for s, v in sweep]
    if len(pairs) < 4:
        raise ValueError("empty-trip curve needs at least 4 points")
    scales = tuple(p[0] for p in pairs)
    vals = tuple(float(p[1]) for p in pairs)
    i = int(np.argmax(vals))
    ends = max(vals[0], vals[-1])
    margin = vals[i] / ends if ends > 0 else (math.inf if vals[i] > 0 else 1.0)
    return CurveReport(scales, vals, i, 0 < i < len(vals) - 1, margin)


def curve_csv(rows) -> str:
    """rows: [(scale, mean, lo, hi)] in rising scale order."""
    lines = ["demand_scale,empty_per_h_mean,empty_per_h_min,empty_per_h_max"]
    for s, m, lo, hi in rows:
        lines.append(",".join(fmt(float(x)) for x in (s, m, lo, hi)))
    return "\n".join(lines) + "\n"


def curve_svg(rows, title: str = "empty trips per hour") -> str:
    w, h, pad = 480, 320, 48
    xs = [float(r[0]) for r in rows]
    ys = [float(r[1]) for r in rows]
    x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
    y1 = max(ys) if ys and max(ys) > 0 else 1.0
    if x1 == x0:
        x1 = x0 + 1.0

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (w - 2 * pad)

    def py(y):
        return h - pad - y / y1 * (h - 2 * pad)

    pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<text x="{w / 2:.0f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>',
        f'<text x="{w / 2:.0f}" y="{h - 10}" text-anchor="middle" font-size="12">demand scale</text>',
        f'<text x="{pad - 6}" y="{pad}" text-anchor="end" font-size="11">{fmt(y1)}</text>',
        f'<text x="{pad - 6}" y="{h - pad}" text-anchor="end" font-size="11">0</text>',
        f'<text x="{pad}" y="{h - pad + 16}" text-anchor="middle" font-size="11">{fmt(x0)}</text>',
        f'<text x="{w - pad}" y="{h - pad + 16}" text-anchor="middle" font-size="11">{fmt(x1)}</text>',
    ]
    if xs:
        parts.append(f'<polyline fill="none" stroke="steelblue" stroke-width="2" points="{pts}"/>')
        i = int(np.argmax(ys))
        parts.append(f'<circle cx="{px(xs[i]):.2f}" cy="{py(ys[i]):.2f}" r="5" fill="crimson"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"

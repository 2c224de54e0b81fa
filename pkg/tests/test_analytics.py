import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from prtsim import engine_event
from prtsim.analytics import (
    EVENT_COLUMNS, METRIC_COLUMNS, EmptyWindow, EventLog, MetricsReport, NotSaturated, SweepResult,
    compute_metrics, curve_csv, curve_svg, detect_saturation, empty_trip_curve, export_csv, fmt,
    is_saturated, metrics_csv, queue_quarters, time_weighted_mean, write_text,
)


def synthetic(full=10, empty=4, hours=1.0, warmup=0.0, waits=(30.0,), stations=(1,), queue=None):
    log = EventLog("ED")
    log.append(0.0, "RunStarted", scale=1.0, station_ids=" ".join(map(str, stations)))
    t_end = warmup + hours * 3600
    for gid, w in enumerate(waits):
        log.append(warmup + 100.0 + gid, "GroupSpawned", group=gid, node=1)
        log.append(warmup + 100.0 + gid + w, "GroupCoupled", group=gid, node=1)
    trips = [(0, "")] * full + [(1, "call")] * empty
    for i, (e, cause) in enumerate(trips):
        log.append(warmup + 200.0 + i, "TripCompleted", vehicle=i, empty=e, cause=cause, dist_m=1000.0)
    for t, n in queue or ():
        log.append(t, "QueueSampled", node=1, length=n)
    log.records.sort(key=lambda r: r.time_s)
    log.append(t_end, "RunEnded")
    return log


def test_counting():
    rep = compute_metrics(synthetic(), warmup_s=0.0)
    assert rep.trips_full_per_h == 10 and rep.trips_empty_per_h == 4
    assert rep.empty_by_cause["call"] == 4
    assert rep.vkm_full == 10.0 and rep.vkm_empty == 4.0
    assert rep.wait_mean_s == 30.0


def test_warmup_excluded():
    early = EventLog("ED")
    early.append(0.0, "RunStarted", station_ids="1")
    early.append(300.0, "TripCompleted", vehicle=1, empty=0, dist_m=0)
    early.append(4200.0, "RunEnded")
    assert compute_metrics(early, warmup_s=600.0).trips_full_per_h == 0.0


def test_empty_window():
    log = EventLog()
    log.append(0.0, "RunStarted")
    log.append(600.0, "RunEnded")
    with pytest.raises(EmptyWindow):
        compute_metrics(log, warmup_s=600.0)
    assert compute_metrics(log, warmup_s=0.0).trips_full_per_h == 0.0


def test_log_rejects_time_travel():
    log = EventLog()
    log.append(5.0, "A")
    with pytest.raises(ValueError):
        log.append(4.0, "B")


def test_time_weighted_mean():
    samples = [(0.0, 2), (10.0, 4), (30.0, 0)]
    assert time_weighted_mean(samples, 0, 40) == pytest.approx((2 * 10 + 4 * 20) / 40)
    assert time_weighted_mean(samples, 20, 30) == 4.0
    assert time_weighted_mean([], 0, 10) == 0.0
    with pytest.raises(EmptyWindow):
        time_weighted_mean(samples, 5, 5)


def test_queue_quarters_and_saturation():
    # queue grows linearly: quarter means 1, 3, 5, 7 on a 4 x 100 s run
    q = [(float(t), t // 50) for t in range(0, 400, 50)]
    log = synthetic(full=0, empty=0, waits=(), queue=q, hours=400 / 3600)
    quarters = queue_quarters(log)
    assert quarters == pytest.approx((0.5, 2.5, 4.5, 6.5))
    assert is_saturated(quarters)
    assert not is_saturated((1.0, 1.0, 1.0, 1.1))
    assert not is_saturated((0.0, 0.1, 0.2, 0.4))  # ratio high but queue tiny


def _point(scale, thr, quarters):
    return scale, MetricsReport(demand_scale=scale, trips_full_per_h=thr, queue_quarters=quarters)


def test_detect_saturation_on_plateau():
    pts = [_point(0.5, 100, (1, 1, 1, 1)), _point(1.0, 180, (1, 2, 4, 8)), _point(1.5, 181, (1, 4, 9, 16))]
    assert detect_saturation(pts) == 1.0


def test_detect_saturation_at_top():
    pts = [_point(0.5, 100, (1, 1, 1, 1)), _point(1.0, 150, (1, 2, 4, 8)), _point(1.5, 200, (1, 3, 6, 9))]
    assert detect_saturation(pts) == 1.5
    stable = [_point(s, 100 * s, (1, 1, 1, 1)) for s in (0.5, 1.0, 1.5)]
    with pytest.raises(NotSaturated):
        detect_saturation(stable)


def test_sweep_scales_must_rise():
    with pytest.raises(ValueError):
        SweepResult([_point(1.0, 0, (0, 0, 0, 0)), _point(1.0, 0, (0, 0, 0, 0))])


def test_empty_trip_curve():
    c = empty_trip_curve([(s, v) for s, v in zip(range(1, 7), [2, 9, 14, 11, 6, 3])])
    assert c.argmax == 2 and c.interior and c.margin == pytest.approx(14 / 3)
    assert c.passes(1.2)
    mono = empty_trip_curve([(s, s) for s in range(1, 7)])
    assert not mono.interior and not mono.passes()
    with pytest.raises(ValueError):
        empty_trip_curve([(1, 1), (2, 2)])


def test_fmt():
    assert fmt(None) == "" and fmt(True) == "1" and fmt(3) == "3"
    assert fmt(0.0) == "0" and fmt(1 / 3) == "0.333333" and fmt(1234567.0) == "1.23457e+06"


def test_csv_headers():
    assert EventLog().to_csv() == ",".join(EVENT_COLUMNS) + "\n"
    assert metrics_csv([]) == ",".join(METRIC_COLUMNS) + "\n"
    assert export_csv(MetricsReport()).count("\n") == 2
    row = EventLog().append(1.5, "X", vehicle=2, node=3, a=1, b=0.25).row()
    assert row == "1.5,X,2,,3,,a=1;b=0.25"


def test_write_text_is_atomic(tmp_path):
    p = tmp_path / "m.csv"
    write_text(p, "a\n")
    write_text(p, "b\n")
    assert p.read_text() == "b\n"
    assert not (tmp_path / "m.csv.tmp").exists()


def test_svg_is_a_function_of_the_curve():
    rows = [(1.0, 5.0, 4.0, 6.0), (2.0, 9.0, 8.0, 10.0), (3.0, 2.0, 1.0, 3.0)]
    text = curve_csv(rows)
    back = [tuple(float(x) for x in line.split(",")) for line in text.splitlines()[1:]]
    assert curve_svg(back) == curve_svg(rows)
    assert curve_svg(rows).startswith("<svg") and "polyline" in curve_svg(rows)


def test_metrics_are_pure(city):
    log = engine_event.run(city).log
    a, b = compute_metrics(log, 600.0), compute_metrics(log, 600.0)
    assert a == b
    # every trip either completes or the vehicle is still out at the end
    started = len(log.of_kind("TripStarted"))
    done = len(log.of_kind("TripCompleted"))
    assert 0 <= started - done <= city.fleet.count
    coupled = {r.group_id for r in log.of_kind("GroupCoupled")}
    spawned = {r.group_id for r in log.of_kind("GroupSpawned")}
    assert coupled <= spawned


@given(st.integers(0, 30), st.integers(0, 30), st.floats(0.5, 3.0))
def test_rates_scale_with_window(full, empty, hours):
    rep = compute_metrics(synthetic(full, empty, hours=hours), warmup_s=0.0)
    assert rep.trips_full_per_h == pytest.approx(full / hours)
    assert rep.trips_empty_per_h == pytest.approx(empty / hours)
    assert math.isclose(rep.trips_full_per_h + rep.trips_empty_per_h, (full + empty) / hours)


def test_stationary_halves():
    one = synthetic(full=20, empty=8, hours=1.0)
    two = EventLog("ED")
    two.append(0.0, "RunStarted", station_ids="1")
    for h in range(2):
        for r in one.records:
            if r.kind == "TripCompleted":
                two.append(r.time_s + 3600 * h, r.kind, vehicle=r.vehicle_id, **dict(r.detail))
    two.append(7200.0, "RunEnded")
    a, b = compute_metrics(one, 0.0), compute_metrics(two, 0.0)
    assert abs(b.trips_full_per_h - a.trips_full_per_h) / a.trips_full_per_h < 0.05

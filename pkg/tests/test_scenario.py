import json
import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prtsim.network import Kind
from prtsim.scenario import (
    BUNDLED, ParseError, ValidationError, bundled_networks, default_scenario, load_scenario,
    network_to_doc, paper_defaults, save_scenario, scenario_path, scenario_to_doc,
)


def _doc(**over):
    doc = scenario_to_doc(default_scenario("city", 12, duration_s=1800.0))
    for k, v in over.items():
        doc[k] = v
    return doc


def test_round_trip():
    sc = default_scenario("seashore", 24, 2.5, seed=7, duration_s=3600.0)
    assert load_scenario(save_scenario(sc)) == sc


def test_inline_network_round_trip():
    sc = default_scenario("city")
    doc = scenario_to_doc(sc)
    doc["network"] = network_to_doc(sc.network)
    back = load_scenario(json.dumps(doc))
    assert back.network.nodes == sc.network.nodes and back.network.segments == sc.network.segments


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(BUNDLED), st.integers(0, 24), st.floats(0, 10), st.integers(0, 2**31))
def test_round_trip_property(net, veh, scale, seed):
    sc = default_scenario(net, veh, scale, seed)
    assert load_scenario(save_scenario(sc)) == sc


def test_unknown_key_strict_and_lenient():
    doc = _doc()
    doc["fleet"]["colour"] = "red"
    with pytest.raises(ParseError) as e:
        load_scenario(doc)
    assert e.value.field == "fleet"
    with pytest.warns(UserWarning, match="colour"):
        load_scenario(doc, strict=False)


def test_bad_json_reports_line():
    with pytest.raises(ParseError) as e:
        load_scenario('{\n"network": {"ref": "city"},\n"run": {,}\n}')
    assert e.value.line == 3


def test_type_errors_name_the_field():
    doc = _doc()
    doc["run"]["duration_s"] = "long"
    with pytest.raises(ParseError, match=r"run\.duration_s"):
        load_scenario(doc)


def test_fleet_larger_than_parking_is_rejected():
    sc = default_scenario("city")
    places = sc.network.parking_places
    doc = _doc(fleet={"count": places + 1})
    with pytest.raises(ValidationError) as e:
        load_scenario(doc)
    assert any("parking" in p for p in e.value.problems)
    load_scenario(_doc(fleet={"count": places}))


def test_missing_values_take_defaults():
    sc = load_scenario({"network": {"ref": "city"}})
    assert sc.seed == 0 and sc.duration_s == 7200.0 and sc.warmup_s == 600.0
    assert sc.fleet.count == 24 and sc.demand.scale == 1.0
    with pytest.raises(ParseError, match="network"):
        load_scenario({"run": {}})


def test_warmup_must_be_shorter_than_run():
    with pytest.raises(ValidationError):
        load_scenario(_doc(run={"duration_s": 500.0, "warmup_s": 600.0}))


def test_demand_must_name_stations():
    doc = _doc()
    doc["demand"]["periods"][0]["station_rates"]["999"] = 1.0
    with pytest.raises(ValidationError, match="999"):
        load_scenario(doc)


def test_paper_defaults():
    d = paper_defaults()
    assert d.vehicle_counts == (12, 24) and d.group_size == 4 and d.berths == 4
    assert (d.v_max, d.a_max, d.d_max) == (14.0, 2.0, 2.0)
    assert (d.board_time_s, d.debark_time_s) == (10.0, 10.0)
    assert (d.separation_ed_m, d.separation_ca_m) == (4.0, 2.0)
    assert d.withdraw_timeout_s == 120.0


def test_bundled_scenarios_load():
    for name in BUNDLED:
        sc = load_scenario(scenario_path(name))
        assert sc.network_ref == name
        assert sc.network.nodes == bundled_networks()[name].nodes
    assert scenario_path("nope.json") == "nope.json"


def test_bundled_networks_have_stations_and_capacitors():
    for net in bundled_networks().values():
        kinds = {n.kind for n in net.nodes.values()}
        assert Kind.STATION in kinds and Kind.CAPACITOR in kinds
        assert net.parking_places >= 24


def test_network_file_reference(tmp_path):
    sc = default_scenario("city")
    (tmp_path / "net.json").write_text(json.dumps(network_to_doc(sc.network)))
    doc = scenario_to_doc(sc)
    doc["network"] = {"file": "net.json"}
    (tmp_path / "s.json").write_text(json.dumps(doc))
    assert load_scenario(tmp_path / "s.json").network.segments == sc.network.segments
    doc["network"] = {"file": "missing.json"}
    (tmp_path / "s.json").write_text(json.dumps(doc))
    with pytest.raises(ParseError, match="network.file"):
        load_scenario(tmp_path / "s.json")


def test_unknown_bundled_ref():
    with pytest.raises(ParseError, match="network.ref"):
        load_scenario({"network": {"ref": "atlantis"}})


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_scenario("/nonexistent/scenario.json")


def test_degree_violation_is_a_validation_error():
    doc = network_to_doc(default_scenario("city").network)
    doc["segments"].append(dict(doc["segments"][0], id=9999))
    with pytest.raises(ValidationError):
        load_scenario({"network": doc})


def test_lenient_mode_is_quiet_for_clean_files():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        load_scenario(scenario_path("city"), strict=False)

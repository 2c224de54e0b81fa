"""Experiment description shared by both engines, and its JSON file format.

A scenario file has the top-level keys ``network, fleet, traffic, demand,
evm, routing, engine, run``. ``network`` is either inline (``nodes`` and
``segments``), a bundled name (``{"ref": "city"}``) or a path relative to
the scenario file (``{"file": "net.json"}``).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from pathlib import Path

from .demand import DemandModel, DemandPeriod, GroupSizeDistribution
from .engine_ca import CaConfig, JunctionWeights
from .evm import EvmConfig
from .fleet import TrafficParams, VehicleTraits
from .network import Kind, Layout, Network, NetworkError, Node, Segment, StationSpec, build_network
from .routing import EdgeWeightParams

BUNDLED = ("city", "seashore")
TOP_KEYS = ("network", "fleet", "traffic", "demand", "evm", "routing", "engine", "run")
BASE_RATE_PER_STATION = 10.0  # groups per hour at demand_scale 1


class ParseError(ValueError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class ValidationError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class FleetSpec:
    count: int = 24
    traits: VehicleTraits = VehicleTraits()
    overrides: tuple = ()  # ((vehicle index, VehicleTraits), ...)

    def traits_for(self, i: int) -> VehicleTraits:
        for k, t in self.overrides:
            if k == i:
                return t
        return self.traits


@dataclass(frozen=True)
class RoutingSpec:
    params: EdgeWeightParams = EdgeWeightParams()
    reroute_interval_s: float = 0.0


@dataclass(frozen=True)
class EngineSpec:
    sector_length_m: float = 10.0
    ca: CaConfig = CaConfig()


@dataclass(frozen=True)
class Scenario:
    network: Network
    fleet: FleetSpec
    demand: DemandModel
    traffic: TrafficParams = TrafficParams()
    evm: EvmConfig = EvmConfig()
    routing: RoutingSpec = RoutingSpec()
    engine: EngineSpec = EngineSpec()
    duration_s: float = 7200.0
    warmup_s: float = 600.0
    seed: int = 0
    network_ref: str | None = None

    def with_scale(self, scale: float) -> "Scenario":
        return replace(self, demand=replace(self.demand, scale=scale))

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def problems(self) -> list[str]:
        out = []
        if not self.duration_s > self.warmup_s:
            out.append("run.duration_s must exceed run.warmup_s")
        if self.warmup_s < 0:
            out.append("run.warmup_s must be >= 0")
        if self.fleet.count < 0:
            out.append("fleet.count must be >= 0")
        places = self.network.parking_places
        if self.fleet.count > places:
            out.append(f"fleet.count {self.fleet.count} exceeds the {places} capacitor parking places")
        stations = set(self.network.stations)
        for i, p in enumerate(self.demand.periods):
            for s in p.station_rates:
                if s not in stations:
                    out.append(f"demand.periods[{i}]: node {s} is not a station")
            for o, row in p.od.items():
                for d in row:
                    if d not in stations:
                        out.append(f"demand.periods[{i}].od: node {d} is not a station")
        smallest = min([self.fleet.traits.capacity] + [t.capacity for _, t in self.fleet.overrides])
        if self.demand.sizes.max_size > smallest:
            out.append("group sizes exceed vehicle capacity")
        if self.demand.scale < 0:
            out.append("demand.demand_scale must be >= 0")
        if self.engine.sector_length_m <= 0:
            out.append("engine.ed.sector_length_m must be > 0")
        return out


# -- defaults ---------------------------------------------------------------------


@dataclass(frozen=True)
class PaperDefaults:
    vehicle_counts: tuple = (12, 24)
    group_size: int = 4
    station_layout: Layout = Layout.INLINE
    berths: int = 4
    v_max: float = 14.0
    a_max: float = 2.0
    d_max: float = 2.0
    board_time_s: float = 10.0
    debark_time_s: float = 10.0
    separation_ed_m: float = 4.0
    separation_ca_m: float = 2.0
    withdraw_timeout_s: float = 120.0


def paper_defaults() -> PaperDefaults:
    return PaperDefaults()


def bundled_path(name: str):
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled network {name!r}; choose from {', '.join(BUNDLED)}")
    return resources.files("prtsim").joinpath("data", f"{name}.json")


def scenario_path(name):
    """Map a bundled scenario name to its JSON text; anything else is returned unchanged."""
    if isinstance(name, str) and name in BUNDLED and not Path(name).exists():
        return resources.files("prtsim").joinpath("data", f"{name}.scenario.json").read_text()
    return name


def bundled_networks() -> dict[str, Network]:
    return {n: network_from_doc(json.loads(bundled_path(n).read_text()), "network") for n in BUNDLED}


def default_scenario(network: str = "city", vehicles: int = 24, scale: float = 1.0, seed: int = 0,
                     duration_s: float = 7200.0) -> Scenario:
    d = paper_defaults()
    net = network_from_doc(json.loads(bundled_path(network).read_text()), "network")
    traits = VehicleTraits(capacity=d.group_size, v_max=d.v_max, a_max=d.a_max, d_max=d.d_max)
    traffic = TrafficParams(static_separation_m=d.separation_ed_m, board_time_s=d.board_time_s,
                            debark_time_s=d.debark_time_s, model_v_max=d.v_max)
    stations = net.stations
    period = DemandPeriod(0.0, duration_s, {s: BASE_RATE_PER_STATION for s in stations},
                          DemandPeriod.uniform_od(stations))
    demand = DemandModel((period,), GroupSizeDistribution.point(d.group_size), scale)
    return Scenario(
        network=net, fleet=FleetSpec(vehicles, traits), demand=demand, traffic=traffic,
        evm=EvmConfig(withdraw_timeout_s=d.withdraw_timeout_s),
        # cells sized so the top cell speed equals the shared 14 m/s limit
        engine=EngineSpec(ca=CaConfig(cell_length_m=d.v_max / CaConfig().v_max_cells,
                                      separation_m=d.separation_ca_m)),
        duration_s=duration_s, seed=seed, network_ref=network,
    )


# -- parsing ----------------------------------------------------------------------


class _Reader:
    def __init__(self, strict: bool):
        self.strict = strict

    def obj(self, doc, path, allowed):
        if not isinstance(doc, dict):
            raise ParseError("expected an object", field=path)
        extra = sorted(k for k in doc if k not in allowed and not k.startswith("_"))
        if extra:
            msg = f"unknown key(s) {', '.join(extra)}"
            if self.strict:
                raise ParseError(msg, field=path)
            warnings.warn(f"{path}: {msg}", stacklevel=3)
        return doc

    def num(self, doc, key, path, default=None, kind=float):
        if key not in doc:
            if default is None:
                raise ParseError("missing required value", field=f"{path}.{key}")
            return default
        v = doc[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(f"expected a number, got {v!r}", field=f"{path}.{key}")
        if kind is int:
            if float(v) != int(v):
                raise ParseError(f"expected an integer, got {v!r}", field=f"{path}.{key}")
            return int(v)
        return float(v)

    def flag(self, doc, key, path, default):
        v = doc.get(key, default)
        if not isinstance(v, bool):
            raise ParseError(f"expected true or false, got {v!r}", field=f"{path}.{key}")
        return v

    def dataclass(self, cls, doc, path, base=None):
        """Fill a flat numeric/boolean dataclass from ``doc``, defaults from ``base``."""
        base = base if base is not None else cls()
        names = [f.name for f in fields(cls)]
        self.obj(doc, path, names)
        vals = {}
        for f in fields(cls):
            cur = getattr(base, f.name)
            if f.name not in doc:
                vals[f.name] = cur
            elif isinstance(cur, bool):
                vals[f.name] = self.flag(doc, f.name, path, cur)
            elif isinstance(cur, int):
                vals[f.name] = self.num(doc, f.name, path, cur, int)
            else:
                vals[f.name] = self.num(doc, f.name, path, cur)
        try:
            return cls(**vals)
        except ValueError as e:
            raise ParseError(str(e), field=path) from None


def network_from_doc(doc, path="network", strict=True) -> Network:
    rd = _Reader(strict)
    rd.obj(doc, path, ("nodes", "segments", "name"))
    nodes, segs = [], []
    for i, n in enumerate(doc.get("nodes", ())):
        p = f"{path}.nodes[{i}]"
        rd.obj(n, p, ("id", "kind", "layout", "berths", "entry_buffer", "exit_buffer", "parking", "position"))
        try:
            kind = Kind(n.get("kind"))
        except ValueError:
            raise ParseError(f"unknown node kind {n.get('kind')!r}", field=f"{p}.kind") from None
        station = None
        parking = 0
        if kind is Kind.STATION:
            try:
                layout = Layout(n.get("layout", "inline"))
            except ValueError:
                raise ParseError(f"unknown layout {n.get('layout')!r}", field=f"{p}.layout") from None
            station = StationSpec(layout, rd.num(n, "berths", p, 4, int), rd.num(n, "entry_buffer", p, 0, int),
                                  rd.num(n, "exit_buffer", p, 0, int))
            if station.berths < 1 or station.entry_buffer < 0 or station.exit_buffer < 0:
                raise ParseError("need berths >= 1 and buffers >= 0", field=p)
        elif kind is Kind.CAPACITOR:
            parking = rd.num(n, "parking", p, None, int)
            if parking < 1:
                raise ParseError("capacitor needs at least one parking place", field=f"{p}.parking")
        pos = n.get("position")
        if pos is not None:
            if not (isinstance(pos, list) and len(pos) == 2):
                raise ParseError("position must be [x, y]", field=f"{p}.position")
            pos = (float(pos[0]), float(pos[1]))
        nodes.append(Node(rd.num(n, "id", p, None, int), kind, station, parking, pos))
    for i, s in enumerate(doc.get("segments", ())):
        p = f"{path}.segments[{i}]"
        rd.obj(s, p, ("id", "from", "to", "length", "max_velocity", "priority"))
        length = rd.num(s, "length", p)
        vmax = rd.num(s, "max_velocity", p)
        if not (length > 0 and vmax > 0):
            raise ParseError("length and max_velocity must be > 0", field=p)
        segs.append(Segment(rd.num(s, "id", p, None, int), rd.num(s, "from", p, None, int),
                            rd.num(s, "to", p, None, int), length, vmax, rd.num(s, "priority", p, 0, int)))
    try:
        return build_network(nodes, segs)
    except NetworkError as e:
        raise ValidationError([str(v) for v in e.violations]) from None


def network_to_doc(net: Network) -> dict:
    nodes = []
    for nid in sorted(net.nodes):
        n = net.nodes[nid]
        rec = {"id": n.id, "kind": n.kind.value}
        if n.station is not None:
            rec.update(layout=n.station.layout.value, berths=n.station.berths,
                       entry_buffer=n.station.entry_buffer, exit_buffer=n.station.exit_buffer)
        if n.kind is Kind.CAPACITOR:
            rec["parking"] = n.parking
        if n.position is not None:
            rec["position"] = list(n.position)
        nodes.append(rec)
    segs = [
        {"id": s.id, "from": s.source, "to": s.target, "length": s.length,
         "max_velocity": s.max_velocity, "priority": s.priority}
        for s in (net.segments[k] for k in sorted(net.segments))
    ]
    return {"nodes": nodes, "segments": segs}


def _int_keys(d, path):
    try:
        return {int(k): v for k, v in d.items()}
    except (TypeError, ValueError, AttributeError):
        raise ParseError("keys must be node ids", field=path) from None


def _demand(rd: _Reader, doc, net: Network, default_end: float) -> DemandModel:
    rd.obj(doc, "demand", ("periods", "group_sizes", "demand_scale"))
    stations = net.stations
    periods = []
    raw = doc.get("periods")
    if raw is None:
        raw = [{"start_s": 0.0, "end_s": default_end, "rate_per_station": BASE_RATE_PER_STATION}]
    for i, p in enumerate(raw):
        path = f"demand.periods[{i}]"
        rd.obj(p, path, ("start_s", "end_s", "station_rates", "rate_per_station", "od"))
        if "station_rates" in p:
            rates = {k: float(v) for k, v in _int_keys(p["station_rates"], f"{path}.station_rates").items()}
        else:
            r = rd.num(p, "rate_per_station", path, BASE_RATE_PER_STATION)
            rates = {s: r for s in stations}
        od = p.get("od", "uniform")
        if od == "uniform":
            od = DemandPeriod.uniform_od(stations)
        elif isinstance(od, dict):
            od = {o: {int(d): float(x) for d, x in _int_keys(row, f"{path}.od.{o}").items()}
                  for o, row in _int_keys(od, f"{path}.od").items()}
        else:
            raise ParseError('od must be "uniform" or an object', field=f"{path}.od")
        try:
            periods.append(DemandPeriod(rd.num(p, "start_s", path, 0.0), rd.num(p, "end_s", path, default_end),
                                        rates, od))
        except ValueError as e:
            raise ParseError(str(e), field=path) from None
    sizes = doc.get("group_sizes", {"4": 1.0})
    try:
        dist = GroupSizeDistribution({k: float(v) for k, v in _int_keys(sizes, "demand.group_sizes").items()})
    except ValueError as e:
        raise ParseError(str(e), field="demand.group_sizes") from None
    scale = rd.num(doc, "demand_scale", "demand", 1.0)
    return DemandModel(tuple(periods), dist, scale)


def scenario_from_doc(doc, base_dir: Path | None = None, strict: bool = True) -> Scenario:
    rd = _Reader(strict)
    rd.obj(doc, "scenario", TOP_KEYS)
    if "network" not in doc:
        raise ParseError("missing required section", field="network")
    nd = doc["network"]
    ref = None
    if isinstance(nd, dict) and "ref" in nd:
        rd.obj(nd, "network", ("ref",))
        ref = nd["ref"]
        try:
            net_doc = json.loads(bundled_path(ref).read_text())
        except KeyError as e:
            raise ParseError(str(e), field="network.ref") from None
        net = network_from_doc(net_doc, "network", strict)
    elif isinstance(nd, dict) and "file" in nd:
        rd.obj(nd, "network", ("file",))
        p = Path(base_dir or ".") / nd["file"]
        try:
            net = network_from_doc(_parse_json(p.read_text()), "network", strict)
        except OSError as e:
            raise ParseError(f"cannot read network file: {e}", field="network.file") from None
    else:
        net = network_from_doc(nd, "network", strict)

    run = rd.obj(doc.get("run", {}), "run", ("duration_s", "warmup_s", "seed"))
    duration = rd.num(run, "duration_s", "run", 7200.0)
    warmup = rd.num(run, "warmup_s", "run", 600.0)
    seed = rd.num(run, "seed", "run", 0, int)

    fd = rd.obj(doc.get("fleet", {}), "fleet", ("count", "traits", "overrides"))
    traits = rd.dataclass(VehicleTraits, fd.get("traits", {}), "fleet.traits")
    overrides = []
    for i, o in enumerate(fd.get("overrides", ())):
        p = f"fleet.overrides[{i}]"
        if not isinstance(o, dict) or "index" not in o:
            raise ParseError("override needs an index", field=p)
        body = {k: v for k, v in o.items() if k != "index"}
        overrides.append((rd.num(o, "index", p, None, int), rd.dataclass(VehicleTraits, body, p, traits)))
    fleet = FleetSpec(rd.num(fd, "count", "fleet", 24, int), traits, tuple(overrides))

    traffic = rd.dataclass(TrafficParams, doc.get("traffic", {}), "traffic")
    demand = _demand(rd, doc.get("demand", {}), net, duration)
    evm_cfg = rd.dataclass(EvmConfig, doc.get("evm", {}), "evm")

    ro = rd.obj(doc.get("routing", {}), "routing",
                ("alpha_length", "beta_time", "gamma_congestion", "reroute_interval_s"))
    try:
        params = EdgeWeightParams(rd.num(ro, "alpha_length", "routing", 0.0), rd.num(ro, "beta_time", "routing", 1.0),
                                  rd.num(ro, "gamma_congestion", "routing", 0.0))
    except ValueError as e:
        raise ParseError(str(e), field="routing") from None
    routing = RoutingSpec(params, rd.num(ro, "reroute_interval_s", "routing", 0.0))
    if routing.reroute_interval_s < 0:
        raise ParseError("must be >= 0", field="routing.reroute_interval_s")

    en = rd.obj(doc.get("engine", {}), "engine", ("ed", "ca"))
    ed = rd.obj(en.get("ed", {}), "engine.ed", ("sector_length_m",))
    cad = dict(en.get("ca", {}))
    wd = cad.pop("weights", {})
    weights = rd.dataclass(JunctionWeights, wd, "engine.ca.weights")
    ca = replace(rd.dataclass(CaConfig, cad, "engine.ca"), weights=weights)
    engine = EngineSpec(rd.num(ed, "sector_length_m", "engine.ed", 10.0), ca)

    sc = Scenario(net, fleet, demand, traffic, evm_cfg, routing, engine, duration, warmup, seed, ref)
    probs = sc.problems()
    if probs:
        raise ValidationError(probs)
    return sc


def _parse_json(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, line=e.lineno) from None


def load_scenario(source, strict: bool = True) -> Scenario:
    """Load from a path, a JSON string or an already parsed dict."""
    if isinstance(source, dict):
        return scenario_from_doc(source, None, strict)
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        p = Path(source)
        try:
            text = p.read_text()
        except OSError as e:
            raise FileNotFoundError(f"cannot read scenario {p}: {e.strerror}") from None
        return scenario_from_doc(_parse_json(text), p.parent, strict)
    return scenario_from_doc(_parse_json(source), None, strict)


def scenario_to_doc(sc: Scenario) -> dict:
    net = {"ref": sc.network_ref} if sc.network_ref else network_to_doc(sc.network)
    periods = [
        {"start_s": p.start_s, "end_s": p.end_s,
         "station_rates": {str(k): v for k, v in sorted(p.station_rates.items())},
         "od": {str(o): {str(d): x for d, x in sorted(row.items())} for o, row in sorted(p.od.items())}}
        for p in sc.demand.periods
    ]
    ca = asdict(sc.engine.ca)
    return {
        "network": net,
        "fleet": {"count": sc.fleet.count, "traits": asdict(sc.fleet.traits),
                  "overrides": [{"index": i, **asdict(t)} for i, t in sc.fleet.overrides]},
        "traffic": asdict(sc.traffic),
        "demand": {"periods": periods,
                   "group_sizes": {str(k): v for k, v in sorted(sc.demand.sizes.probs.items())},
                   "demand_scale": sc.demand.scale},
        "evm": asdict(sc.evm),
        "routing": {"alpha_length": sc.routing.params.alpha_length, "beta_time": sc.routing.params.beta_time,
                    "gamma_congestion": sc.routing.params.gamma_congestion,
                    "reroute_interval_s": sc.routing.reroute_interval_s},
        "engine": {"ed": {"sector_length_m": sc.engine.sector_length_m}, "ca": ca},
        "run": {"duration_s": sc.duration_s, "warmup_s": sc.warmup_s, "seed": sc.seed},
    }


def save_scenario(sc: Scenario, path=None) -> str:
    text = json.dumps(scenario_to_doc(sc), indent=2, sort_keys=False) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


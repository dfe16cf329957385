"""Static grid road network: intersections, directed roads, phases and demand.

Layout conventions
------------------
Compass sides and headings are numbered clockwise ``N=0, E=1, S=2, W=3``;
row indices grow southward.  Every intersection has one incoming and one
outgoing road per side, each road carrying three lanes ordered
``LEFT=0, STRAIGHT=1, RIGHT=2`` (the movement a vehicle in that lane makes at
the downstream intersection).

Directed road ``k`` of an intersection is ``approach * 3 + movement`` where
``approach`` is the side vehicles arrive from.  Its arrival lane is lane
``movement`` of the incoming road on that side and its departure lane is lane
``movement`` of the outgoing road the movement leads to, so the 12 arrival and
12 departure lanes are each used by exactly one directed road.

Node coordinates are 1-based; row/column ``0`` and ``rows + 1`` / ``cols + 1``
are boundary nodes where source roads start and sink roads end.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

N, E, S, W = 0, 1, 2, 3
LEFT, STRAIGHT, RIGHT = 0, 1, 2
SIDE_NAMES = ("N", "E", "S", "W")
MOVEMENT_NAMES = ("left", "straight", "right")
LANES_PER_ROAD = 3
ROADS_PER_INTERSECTION = 12

_DELTA = {N: (-1, 0), E: (0, 1), S: (1, 0), W: (0, -1)}

DEFAULT_LANE_LENGTH = 300.0
DEFAULT_SPEED_LIMIT = 11.11

# (name, (directed road, directed road)); right turns are implicit in every phase.
PHASE_DEFS: tuple[tuple[str, tuple[int, int]], ...] = (
    ("NS-straight", (N * 3 + STRAIGHT, S * 3 + STRAIGHT)),
    ("EW-straight", (E * 3 + STRAIGHT, W * 3 + STRAIGHT)),
    ("NS-left", (N * 3 + LEFT, S * 3 + LEFT)),
    ("EW-left", (E * 3 + LEFT, W * 3 + LEFT)),
    ("N-straight-left", (N * 3 + STRAIGHT, N * 3 + LEFT)),
    ("S-straight-left", (S * 3 + STRAIGHT, S * 3 + LEFT)),
    ("E-straight-left", (E * 3 + STRAIGHT, E * 3 + LEFT)),
    ("W-straight-left", (W * 3 + STRAIGHT, W * 3 + LEFT)),
)
N_PHASES = len(PHASE_DEFS)
RIGHT_TURN_ROADS = tuple(side * 3 + RIGHT for side in range(4))
CONTROLLED_ROADS = tuple(k for k in range(ROADS_PER_INTERSECTION) if k % 3 != RIGHT)

# Movement pairs that may share a green; conflict-free under right-hand traffic.
_COMPATIBLE = {
    frozenset(pair)
    for _, pair in PHASE_DEFS
}


class RoadnetError(ValueError):
    """Raised when a roadnet or flow document is malformed or inconsistent."""


def heading_after(approach: int, movement: int) -> int:
    """Compass heading of a vehicle leaving via ``movement`` from ``approach``."""
    heading = (approach + 2) % 4
    if movement == LEFT:
        return (heading - 1) % 4
    if movement == RIGHT:
        return (heading + 1) % 4
    return heading


def movement_between(heading_in: int, heading_out: int) -> int:
    """Movement that turns a vehicle travelling ``heading_in`` to ``heading_out``."""
    diff = (heading_out - heading_in) % 4
    if diff == 0:
        return STRAIGHT
    if diff == 3:
        return LEFT
    if diff == 1:
        return RIGHT
    raise RoadnetError("U-turns are not permitted")


def node_id(row: int, col: int, rows: int, cols: int) -> str:
    inside = 1 <= row <= rows and 1 <= col <= cols
    return f"{'intersection' if inside else 'boundary'}_{row}_{col}"


def road_id(row: int, col: int, heading: int) -> str:
    return f"road_{row}_{col}_{heading}"


def lane_id(road: str, movement: int) -> str:
    return f"{road}_{movement}"


@dataclass(frozen=True)
class Road:
    id: str
    start: str
    end: str
    heading: int
    source: bool
    sink: bool

    @property
    def lanes(self) -> tuple[str, str, str]:
        return tuple(lane_id(self.id, m) for m in range(LANES_PER_ROAD))  # type: ignore[return-value]


@dataclass(frozen=True)
class DirectedRoad:
    index: int
    approach: int
    movement: int
    arrival_lane: str
    departure_lane: str

    @property
    def name(self) -> str:
        return f"{SIDE_NAMES[self.approach]}-{MOVEMENT_NAMES[self.movement]}"


@dataclass(frozen=True)
class Phase:
    id: int
    name: str
    movements: tuple[int, int]


@dataclass(frozen=True)
class Intersection:
    id: str
    row: int
    col: int
    incoming: tuple[str, str, str, str]
    outgoing: tuple[str, str, str, str]
    directed_roads: tuple[DirectedRoad, ...]
    phase_table: tuple[Phase, ...]

    @property
    def arrival_lanes(self) -> tuple[str, ...]:
        return tuple(r.arrival_lane for r in self.directed_roads)

    @property
    def departure_lanes(self) -> tuple[str, ...]:
        return tuple(r.departure_lane for r in self.directed_roads)


@dataclass(frozen=True)
class Network:
    grid_rows: int
    grid_cols: int
    lane_length: float = DEFAULT_LANE_LENGTH
    speed_limit: float = DEFAULT_SPEED_LIMIT
    intersections: tuple[Intersection, ...] = field(default=(), compare=False, repr=False)
    roads: dict[str, Road] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        _validate_params(self.grid_rows, self.grid_cols, self.lane_length, self.speed_limit)
        if not self.intersections:
            inters, roads = _build_grid(self.grid_rows, self.grid_cols)
            object.__setattr__(self, "intersections", inters)
            object.__setattr__(self, "roads", roads)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.grid_rows == other.grid_rows
            and self.grid_cols == other.grid_cols
            and self.lane_length == other.lane_length
            and self.speed_limit == other.speed_limit
            and self.intersections == other.intersections
            and self.roads == other.roads
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def lanes(self) -> list[str]:
        return [lane for road in self.roads.values() for lane in road.lanes]

    def intersection(self, ident: str) -> Intersection:
        for inter in self.intersections:
            if inter.id == ident:
                return inter
        raise KeyError(ident)

    def entry_roads(self) -> list[str]:
        return [r.id for r in self.roads.values() if r.source]

    def exit_roads(self) -> list[str]:
        return [r.id for r in self.roads.values() if r.sink]

    def successor(self, road: str, movement: int) -> str:
        """Road a vehicle enters after making ``movement`` at the end of ``road``."""
        r = self.roads[road]
        if r.sink:
            raise RoadnetError(f"{road} is a sink road")
        row, col = _coords(r.end)
        out = heading_after((r.heading + 2) % 4, movement)
        return road_id(row, col, out)

    def to_dict(self, full: bool = True) -> dict:
        doc: dict = {
            "rows": self.grid_rows,
            "cols": self.grid_cols,
            "lane_length_m": self.lane_length,
            "speed_limit_mps": self.speed_limit,
        }
        if full:
            doc["intersections"] = [
                {"id": i.id, "row": i.row, "col": i.col} for i in self.intersections
            ]
            doc["roads"] = [
                {"id": r.id, "from": r.start, "to": r.end, "lanes": LANES_PER_ROAD}
                for r in self.roads.values()
            ]
        return doc


def _coords(node: str) -> tuple[int, int]:
    _, row, col = node.rsplit("_", 2)
    return int(row), int(col)


def _validate_params(rows, cols, lane_length, speed_limit) -> None:
    for name, value in (("rows", rows), ("cols", cols)):
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise RoadnetError(f"field '{name}': expected positive integer, got {value!r}")
    for name, value in (("lane_length_m", lane_length), ("speed_limit_mps", speed_limit)):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
            raise RoadnetError(f"field '{name}': expected positive number, got {value!r}")


def _build_grid(rows: int, cols: int) -> tuple[tuple[Intersection, ...], dict[str, Road]]:
    roads: dict[str, Road] = {}

    def add_road(row: int, col: int, heading: int) -> str:
        dr, dc = _DELTA[heading]
        start = node_id(row, col, rows, cols)
        end = node_id(row + dr, col + dc, rows, cols)
        rid = road_id(row, col, heading)
        roads[rid] = Road(
            rid, start, end, heading,
            source=start.startswith("boundary"),
            sink=end.startswith("boundary"),
        )
        return rid

    phases = tuple(Phase(i, name, pair) for i, (name, pair) in enumerate(PHASE_DEFS))
    inters = []
    for row in range(1, rows + 1):
        for col in range(1, cols + 1):
            outgoing = tuple(add_road(row, col, h) for h in range(4))
            incoming = []
            for side in range(4):
                dr, dc = _DELTA[side]
                nr, nc = row + dr, col + dc
                rid = road_id(nr, nc, (side + 2) % 4)
                if rid not in roads:
                    add_road(nr, nc, (side + 2) % 4)
                incoming.append(rid)
            directed = tuple(
                DirectedRoad(
                    index=side * 3 + m,
                    approach=side,
                    movement=m,
                    arrival_lane=lane_id(incoming[side], m),
                    departure_lane=lane_id(outgoing[heading_after(side, m)], m),
                )
                for side in range(4)
                for m in range(LANES_PER_ROAD)
            )
            inters.append(
                Intersection(
                    id=node_id(row, col, rows, cols),
                    row=row,
                    col=col,
                    incoming=tuple(incoming),  # type: ignore[arg-type]
                    outgoing=outgoing,  # type: ignore[arg-type]
                    directed_roads=directed,
                    phase_table=phases,
                )
            )
    # Interior incoming roads are some neighbour's outgoing road; keep a stable order.
    ordered = dict(sorted(roads.items()))
    return tuple(inters), ordered


def grid_network(rows: int, cols: int, lane_length: float = DEFAULT_LANE_LENGTH,
                 speed_limit: float = DEFAULT_SPEED_LIMIT) -> Network:
    return Network(rows, cols, float(lane_length), float(speed_limit))


def phase_movements(inter: Intersection, phase: int) -> frozenset[int]:
    """Directed-road indices with right of way under ``phase``, right turns included."""
    if not 0 <= phase < len(inter.phase_table):
        raise IndexError(f"phase index {phase} outside 0..{len(inter.phase_table) - 1}")
    return frozenset(inter.phase_table[phase].movements) | frozenset(RIGHT_TURN_ROADS)


def movements_conflict_free(a: int, b: int) -> bool:
    return a == b or frozenset((a, b)) in _COMPATIBLE


# ---------------------------------------------------------------------------
# Roadnet documents


def parse_roadnet(doc: dict) -> Network:
    if not isinstance(doc, dict):
        raise RoadnetError("roadnet document must be a JSON object")
    for key in ("rows", "cols", "lane_length_m", "speed_limit_mps"):
        if key not in doc:
            raise RoadnetError(f"missing field '{key}'")
    net = Network(doc["rows"], doc["cols"], doc["lane_length_m"], doc["speed_limit_mps"])
    known_nodes = {i.id for i in net.intersections}
    for road in net.roads.values():
        known_nodes.update((road.start, road.end))

    if "intersections" in doc:
        listed = doc["intersections"]
        for n, item in enumerate(listed):
            ident = item.get("id") if isinstance(item, dict) else None
            if ident not in {i.id for i in net.intersections}:
                raise RoadnetError(f"intersections[{n}]: unknown intersection {ident!r}")
        if len(listed) != len(net.intersections):
            raise RoadnetError(
                f"intersections: expected {len(net.intersections)} entries, got {len(listed)}"
            )
    if "roads" in doc:
        seen = set()
        for n, item in enumerate(doc["roads"]):
            if not isinstance(item, dict):
                raise RoadnetError(f"roads[{n}]: expected object")
            for end in ("from", "to"):
                if item.get(end) not in known_nodes:
                    raise RoadnetError(
                        f"roads[{n}] ({item.get('id')!r}): field '{end}' references "
                        f"missing intersection {item.get(end)!r}"
                    )
            rid = item.get("id")
            road = net.roads.get(rid)
            if road is None:
                raise RoadnetError(f"roads[{n}]: road {rid!r} is not part of the grid")
            if (road.start, road.end) != (item["from"], item["to"]):
                raise RoadnetError(f"roads[{n}] ({rid}): endpoints disagree with grid topology")
            if item.get("lanes", LANES_PER_ROAD) != LANES_PER_ROAD:
                raise RoadnetError(f"roads[{n}] ({rid}): every road must have 3 lanes")
            seen.add(rid)
        missing = set(net.roads) - seen
        if missing:
            raise RoadnetError(f"roads: missing {len(missing)} grid roads, e.g. {sorted(missing)[0]}")
    return net


def _load_json(path: str | Path):
    path = Path(path)
    text = path.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise RoadnetError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def load_roadnet(path: str | Path) -> Network:
    try:
        return parse_roadnet(_load_json(path))
    except RoadnetError as exc:
        if str(exc).startswith(str(path)):
            raise
        raise RoadnetError(f"{path}: {exc}") from exc


def save_roadnet(net: Network, path: str | Path, full: bool = True) -> None:
    Path(path).write_text(json.dumps(net.to_dict(full=full), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Demand


@dataclass(frozen=True)
class FlowVehicle:
    depart: float
    route: tuple[str, ...]


@dataclass(frozen=True)
class FlowSpec:
    vehicles: tuple[FlowVehicle, ...]

    def __len__(self) -> int:
        return len(self.vehicles)

    def to_list(self) -> list[dict]:
        return [{"depart_s": v.depart, "route": list(v.route)} for v in self.vehicles]

    def counts_by_entry(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for v in self.vehicles:
            counts[v.route[0]] = counts.get(v.route[0], 0) + 1
        return counts


def validate_route(net: Network, route: Sequence[str]) -> None:
    if not route:
        raise RoadnetError("empty route")
    for rid in route:
        if rid not in net.roads:
            raise RoadnetError(f"route references unknown road {rid!r}")
    if not net.roads[route[0]].source:
        raise RoadnetError(f"route must start on a source road, got {route[0]}")
    if not net.roads[route[-1]].sink:
        raise RoadnetError(f"route must end on a sink road, got {route[-1]}")
    for a, b in zip(route, route[1:]):
        ra, rb = net.roads[a], net.roads[b]
        if ra.end != rb.start:
            raise RoadnetError(f"route is disconnected between {a} and {b}")
        movement_between(ra.heading, rb.heading)


def make_flow(net: Network, vehicles: Iterable[FlowVehicle]) -> FlowSpec:
    items = list(vehicles)
    for n, v in enumerate(items):
        if not v.depart >= 0:
            raise RoadnetError(f"vehicle {n}: depart_s must be >= 0")
        validate_route(net, v.route)
    order = sorted(range(len(items)), key=lambda n: (items[n].depart, n))
    return FlowSpec(tuple(items[n] for n in order))


def route_movements(net: Network, route: Sequence[str]) -> list[int]:
    """Movement made at the end of each non-sink road of ``route``."""
    return [
        movement_between(net.roads[a].heading, net.roads[b].heading)
        for a, b in zip(route, route[1:])
    ]


TURN_PROBABILITIES = (0.2, 0.6, 0.2)  # left, straight, right


def sample_route(net: Network, entry: str, rng: np.random.Generator,
                 max_turns: int | None = None) -> tuple[str, ...]:
    if max_turns is None:
        max_turns = 4 * (net.grid_rows + net.grid_cols)
    route = [entry]
    while not net.roads[route[-1]].sink:
        if len(route) > max_turns:
            movement = STRAIGHT
        else:
            movement = int(rng.choice(3, p=TURN_PROBABILITIES))
        route.append(net.successor(route[-1], movement))
    return tuple(route)


def _departure_times(rng: np.random.Generator, count: int, duration: float,
                     profile: str, spread: float) -> np.ndarray:
    if profile == "uniform":
        return rng.uniform(0.0, duration, size=count)
    if profile != "gaussian":
        raise ValueError(f"unknown arrival profile {profile!r}")
    out = np.empty(0)
    while out.size < count:
        draw = rng.normal(duration / 2.0, spread * duration, size=2 * (count - out.size) + 8)
        out = np.concatenate([out, draw[(draw >= 0.0) & (draw < duration)]])
    return out[:count]


def gen_synthetic_flow(net: Network, mean_rate: float, seed: int, duration: float,
                       sigma_fraction: float = 0.1, profile: str = "gaussian",
                       spread: float = 0.2) -> FlowSpec:
    """Synthetic demand on every source road of ``net``.

    Each source road draws its vehicle count from a normal distribution with
    mean ``mean_rate * duration / 3600`` and standard deviation
    ``sigma_fraction`` times that mean (rounded, clamped at zero).  With the
    ``"gaussian"`` profile the departure instants follow a normal curve
    centred on the horizon midpoint with standard deviation
    ``spread * duration``, truncated to ``[0, duration)``, so the arrival rate
    peaks mid-horizon while averaging ``mean_rate``; ``"uniform"`` spreads them
    evenly.  Routes turn left/straight/right with probabilities 0.2/0.6/0.2 at
    every intersection.
    """
    if not mean_rate > 0:
        raise ValueError("mean_rate must be positive")
    if not duration > 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    mu = mean_rate * duration / 3600.0
    vehicles = []
    for entry in net.entry_roads():
        count = max(0, int(round(rng.normal(mu, sigma_fraction * mu))))
        for t in _departure_times(rng, count, duration, profile, spread):
            vehicles.append(FlowVehicle(round(float(t), 3), sample_route(net, entry, rng)))
    return make_flow(net, vehicles)


def parse_flow(net: Network, doc) -> FlowSpec:
    if not isinstance(doc, list):
        raise RoadnetError("flow document must be a JSON array")
    vehicles = []
    for n, item in enumerate(doc):
        if not isinstance(item, dict) or "depart_s" not in item or "route" not in item:
            raise RoadnetError(f"flow[{n}]: expected object with 'depart_s' and 'route'")
        try:
            vehicles.append(FlowVehicle(float(item["depart_s"]), tuple(item["route"])))
        except (TypeError, ValueError) as exc:
            raise RoadnetError(f"flow[{n}]: {exc}") from exc
    try:
        return make_flow(net, vehicles)
    except RoadnetError as exc:
        raise RoadnetError(f"flow: {exc}") from exc


def load_flow(net: Network, path: str | Path) -> FlowSpec:
    try:
        return parse_flow(net, _load_json(path))
    except RoadnetError as exc:
        raise RoadnetError(f"{path}: {exc}") from exc


def save_flow(flow: FlowSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(flow.to_list()) + "\n")

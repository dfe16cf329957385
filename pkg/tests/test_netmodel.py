import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trafficlab import netmodel as nm
from trafficlab.netmodel import (
    LEFT, RIGHT, STRAIGHT, FlowVehicle, RoadnetError, gen_synthetic_flow, grid_network,
    load_flow, load_roadnet, phase_movements, save_flow, save_roadnet,
)


def test_one_by_three_counts():
    net = grid_network(1, 3, 300, 11.11)
    assert len(net.intersections) == 3
    assert sum(len(i.arrival_lanes) for i in net.intersections) == 36
    for inter in net.intersections:
        assert len(inter.arrival_lanes) == 12 and len(inter.departure_lanes) == 12
        assert len(set(inter.arrival_lanes)) == 12 and len(set(inter.departure_lanes)) == 12


def test_four_by_four_has_sixteen_intersections_with_eight_phases():
    net = grid_network(4, 4)
    assert len(net.intersections) == 16
    assert all(len(i.phase_table) == 8 for i in net.intersections)


@pytest.mark.parametrize("rows,cols", [(1, 1), (1, 3), (2, 2), (3, 2)])
def test_directed_roads_link_two_lanes_of_the_same_intersection(rows, cols):
    net = grid_network(rows, cols)
    lane_road = {lane: rid for rid, road in net.roads.items() for lane in road.lanes}
    for inter in net.intersections:
        for dr in inter.directed_roads:
            arr = net.roads[lane_road[dr.arrival_lane]]
            dep = net.roads[lane_road[dr.departure_lane]]
            assert arr.end == inter.id and dep.start == inter.id
            assert dr.arrival_lane.endswith(f"_{dr.movement}")
            assert nm.movement_between(arr.heading, dep.heading) == dr.movement


def test_border_roads_are_sources_and_sinks():
    net = grid_network(2, 3)
    inter_ids = {i.id for i in net.intersections}
    for road in net.roads.values():
        assert road.source == (road.start not in inter_ids)
        assert road.sink == (road.end not in inter_ids)
    # 2*(rows+cols) boundary approaches
    assert len(net.entry_roads()) == len(net.exit_roads()) == 10


def test_phase_sizes_and_right_turns():
    inter = grid_network(1, 1).intersections[0]
    for p in range(8):
        moves = phase_movements(inter, p)
        assert len(moves) == 6
        assert set(nm.RIGHT_TURN_ROADS) <= moves
        controlled = sorted(moves - set(nm.RIGHT_TURN_ROADS))
        assert len(controlled) == 2 and all(k % 3 != RIGHT for k in controlled)


def test_ew_straight_phase():
    inter = grid_network(1, 1).intersections[0]
    ew = next(p for p in inter.phase_table if p.name == "EW-straight")
    moves = phase_movements(inter, ew.id)
    assert nm.E * 3 + STRAIGHT in moves and nm.W * 3 + STRAIGHT in moves


def test_union_of_phases_covers_all_roads():
    inter = grid_network(1, 1).intersections[0]
    union = set()
    for p in range(8):
        union |= phase_movements(inter, p)
    assert union == set(range(12))


def test_phase_pairs_are_conflict_free():
    # brute-force geometric check: two movements conflict when their paths cross
    # or merge into the same exit; opposing straights and opposing lefts are the
    # only compatible pairs across approaches, same-approach pairs never cross
    inter = grid_network(1, 1).intersections[0]
    for phase in inter.phase_table:
        a, b = phase.movements
        ap_a, mv_a = divmod(a, 3)
        ap_b, mv_b = divmod(b, 3)
        assert nm.heading_after(ap_a, mv_a) != nm.heading_after(ap_b, mv_b)
        if ap_a != ap_b:
            assert (ap_a + 2) % 4 == ap_b and mv_a == mv_b
        assert nm.movements_conflict_free(a, b)


def test_phase_out_of_range():
    inter = grid_network(1, 1).intersections[0]
    with pytest.raises(IndexError):
        phase_movements(inter, 8)
    with pytest.raises(IndexError):
        phase_movements(inter, -1)


def test_roadnet_round_trip(tmp_path):
    net = grid_network(2, 3, 250.0, 13.0)
    path = tmp_path / "net.json"
    save_roadnet(net, path)
    assert load_roadnet(path) == net
    save_roadnet(net, path, full=False)
    assert load_roadnet(path) == net


def test_roadnet_missing_intersection_rejected(tmp_path):
    doc = grid_network(1, 3).to_dict()
    doc["roads"][0]["to"] = "intersection_9_9"
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(RoadnetError, match="missing intersection"):
        load_roadnet(path)


def test_roadnet_parse_error_reports_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"rows": 1,\n "cols": }')
    with pytest.raises(RoadnetError, match="line 2"):
        load_roadnet(path)


@pytest.mark.parametrize("field,value", [("rows", 0), ("cols", -1), ("lane_length_m", 0), ("speed_limit_mps", -3)])
def test_roadnet_field_validation(field, value):
    doc = {"rows": 1, "cols": 1, "lane_length_m": 300, "speed_limit_mps": 11.11, field: value}
    with pytest.raises(RoadnetError):
        nm.parse_roadnet(doc)


def test_roadnet_missing_field():
    with pytest.raises(RoadnetError, match="lane_length_m"):
        nm.parse_roadnet({"rows": 1, "cols": 1, "speed_limit_mps": 11.11})


def test_flow_determinism_and_file_round_trip(tmp_path):
    net = grid_network(1, 3)
    a = gen_synthetic_flow(net, 500, 7, 3600)
    b = gen_synthetic_flow(net, 500, 7, 3600)
    assert a == b
    pa, pb = tmp_path / "a.json", tmp_path / "b.json"
    save_flow(a, pa)
    save_flow(b, pb)
    assert pa.read_bytes() == pb.read_bytes()
    assert load_flow(net, pa) == a
    assert gen_synthetic_flow(net, 500, 8, 3600) != a


def test_flow_counts_per_entry_near_rate():
    net = grid_network(1, 1)
    flow = gen_synthetic_flow(net, 500, 0, 3600)
    counts = flow.counts_by_entry()
    assert set(counts) == set(net.entry_roads())
    for c in counts.values():
        assert 350 <= c <= 650  # sigma is 50


def test_flow_mean_over_twenty_seeds():
    net = grid_network(1, 1)
    per_lane = []
    for seed in range(20):
        per_lane.extend(gen_synthetic_flow(net, 500, seed, 3600).counts_by_entry().values())
    assert abs(np.mean(per_lane) - 500) <= 50
    # the count spread follows the declared 10% sigma
    assert 30 <= np.std(per_lane) <= 75


@pytest.mark.parametrize("kw", [{"duration": 0}, {"duration": -5}, {"mean_rate": 0}])
def test_flow_preconditions(kw):
    args = {"mean_rate": 500, "duration": 3600} | kw
    with pytest.raises(ValueError):
        gen_synthetic_flow(grid_network(1, 1), args["mean_rate"], 0, args["duration"])


def test_flow_sorted_and_routes_connected():
    net = grid_network(2, 2)
    flow = gen_synthetic_flow(net, 300, 3, 1800)
    departs = [v.depart for v in flow.vehicles]
    assert departs == sorted(departs)
    assert all(0 <= t < 1800 for t in departs)
    for v in flow.vehicles:
        nm.validate_route(net, v.route)


def test_turning_proportions():
    net = grid_network(3, 3)
    flow = gen_synthetic_flow(net, 500, 1, 3600)
    moves = Counter(m for v in flow.vehicles for m in nm.route_movements(net, v.route))
    total = sum(moves.values())
    assert abs(moves[STRAIGHT] / total - 0.6) < 0.03
    assert abs(moves[LEFT] / total - 0.2) < 0.03
    assert abs(moves[RIGHT] / total - 0.2) < 0.03


def test_uniform_profile_spreads_departures():
    net = grid_network(1, 1)
    flow = gen_synthetic_flow(net, 500, 0, 3600, profile="uniform")
    t = np.array([v.depart for v in flow.vehicles])
    first_half = np.mean(t < 1800)
    assert 0.45 < first_half < 0.55
    g = np.array([v.depart for v in gen_synthetic_flow(net, 500, 0, 3600).vehicles])
    # the gaussian profile concentrates departures around the midpoint
    assert np.mean(np.abs(g - 1800) < 720) > 0.6 > np.mean(np.abs(t - 1800) < 720)


def test_flow_rejects_bad_routes():
    net = grid_network(1, 2)
    entry = net.entry_roads()[0]
    with pytest.raises(RoadnetError):
        nm.make_flow(net, [FlowVehicle(0.0, (entry,))])  # does not reach a sink
    with pytest.raises(RoadnetError):
        nm.make_flow(net, [FlowVehicle(-1.0, nm.sample_route(net, entry, np.random.default_rng(0)))])
    with pytest.raises(RoadnetError):
        nm.make_flow(net, [FlowVehicle(0.0, ("nope",))])


def test_uturn_rejected():
    with pytest.raises(RoadnetError):
        nm.movement_between(nm.E, nm.W)


@settings(max_examples=30, deadline=None)
@given(rows=st.integers(1, 3), cols=st.integers(1, 3), seed=st.integers(0, 10_000))
def test_sampled_routes_are_valid(rows, cols, seed):
    net = grid_network(rows, cols)
    rng = np.random.default_rng(seed)
    for entry in net.entry_roads():
        route = nm.sample_route(net, entry, rng)
        nm.validate_route(net, route)

"""Deterministic 1-second-tick microsimulation over a grid :class:`Network`.

Vehicles are points moving along single-file lanes.  Each tick:

1. due vehicles spawn at the upstream end of their entry lane when it has
   ``min_gap`` of headroom (otherwise they wait, first-in first-out);
2. the head vehicle of an arrival lane is released if its movement is
   authorised by the intersection's phase and its target lane has headroom
   (one entry per target lane per tick), otherwise it must stop at the line;
3. every vehicle is advanced by the car-following kernel;
4. released heads that passed the stop line move to the lane of their next
   movement on the next road, or leave the network from a sink road.

A road's lane is chosen on entry from the vehicle's next movement; there is
no lane changing.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from itertools import chain
from typing import IO, Sequence

import numpy as np

from . import kernels
from .netmodel import (
    LANES_PER_ROAD,
    RIGHT,
    FlowSpec,
    Network,
    lane_id,
    phase_movements,
    route_movements,
)

PHASE_DURATION = 10

PENDING, ACTIVE, DONE = 0, 1, 2


@dataclass(frozen=True)
class SimParams:
    accel: float = 2.0
    decel: float = 4.5
    min_gap: float = 7.0
    wait_speed: float = 0.1


@dataclass(frozen=True)
class Vehicle:
    id: int
    route: tuple[str, ...]
    lane: str | None
    d: float
    v: float
    wt_veh: float
    dt_veh: float
    enter_time: float | None
    exit_time: float | None


@dataclass(frozen=True)
class LaneView:
    """Vehicles on one lane, head first."""

    lane: str
    d: np.ndarray
    v: np.ndarray
    wt: np.ndarray
    dt: np.ndarray

    def __len__(self) -> int:
        return len(self.d)


@dataclass(frozen=True)
class IntersectionObservation:
    intersection: str
    arrival: tuple[LaneView, ...]
    departure: tuple[LaneView, ...]
    phase: int
    l_max: float
    v_max: float


@dataclass(frozen=True)
class TravelStats:
    average_travel_time: float
    completed: int
    in_network: int


class Simulation:
    def __init__(self, net: Network, flow: FlowSpec, params: SimParams | None = None,
                 trace: IO[str] | None = None):
        self.net = net
        self.flow = flow
        self.params = params or SimParams()
        self.l_max = float(net.lane_length)
        self.v_max = float(net.speed_limit)

        self.lane_ids = net.lanes
        self.lane_index = {lane: n for n, lane in enumerate(self.lane_ids)}
        n_lanes = len(self.lane_ids)
        self._lane_sink = np.zeros(n_lanes, dtype=bool)
        for road in net.roads.values():
            if road.sink:
                for lane in road.lanes:
                    self._lane_sink[self.lane_index[lane]] = True

        # arrival lane -> (intersection position, directed-road index)
        self._lane_control: dict[int, tuple[int, int]] = {}
        for pos, inter in enumerate(net.intersections):
            for road in inter.directed_roads:
                self._lane_control[self.lane_index[road.arrival_lane]] = (pos, road.index)
        self._inter_pos = {inter.id: pos for pos, inter in enumerate(net.intersections)}

        n = len(flow)
        self._paths: list[list[int]] = []
        for veh in flow.vehicles:
            moves = route_movements(net, veh.route)
            # a lane is chosen by the movement made at its end; on the sink road
            # there is none, so the vehicle keeps the lane of the movement it just made
            moves.append(moves[-1] if moves else RIGHT)
            path = [self.lane_index[lane_id(rid, move)] for rid, move in zip(veh.route, moves)]
            self._paths.append(path)
        self._depart = np.array([v.depart for v in flow.vehicles], dtype=float)
        self._trace_writer = csv.writer(trace) if trace is not None else None
        if self._trace_writer is not None:
            self._trace_writer.writerow(["tick", "vehicle", "lane", "d", "v"])
        self._n = n
        self.reset()

    # -- lifecycle -------------------------------------------------------

    def reset(self) -> None:
        n = self._n
        self.now = 0
        self.d = np.zeros(n)
        self.v = np.zeros(n)
        self.wt = np.zeros(n)
        self.dt = np.zeros(n)
        self.enter = np.full(n, np.nan)
        self.exit = np.full(n, np.nan)
        self.status = np.zeros(n, dtype=np.int8)
        self.path_pos = np.zeros(n, dtype=np.int64)
        self.queues: list[list[int]] = [[] for _ in self.lane_ids]
        self.waiting: dict[int, deque[int]] = {}
        self._cursor = 0
        self.phases = [0] * len(self.net.intersections)
        self.completed: list[tuple[int, float, float]] = []
        self.spawned = 0

    # -- stepping --------------------------------------------------------

    def step(self, phases: Sequence[int] | None = None) -> "Simulation":
        """Advance the simulation by one second under ``phases``."""
        if phases is not None:
            if len(phases) != len(self.net.intersections):
                raise ValueError("need one phase per intersection")
            for p in phases:
                if not 0 <= p < 8:
                    raise IndexError(f"phase index {p} outside 0..7")
            self.phases = [int(p) for p in phases]
        p = self.params
        self._spawn()

        authorised = [phase_movements(inter, ph)
                      for inter, ph in zip(self.net.intersections, self.phases)]
        groups = []
        free = []
        released: list[tuple[int, int]] = []  # (lane, target lane or -1)
        reserved: set[int] = set()
        for lane, queue in enumerate(self.queues):
            if not queue:
                continue
            head = queue[0]
            ok = False
            target = -1
            if self._lane_sink[lane]:
                ok = True
            else:
                pos, road = self._lane_control[lane]
                reach = min(self.v[head] + p.accel, self.v_max)
                if road in authorised[pos] and self.d[head] < reach:
                    target = self._paths[head][self.path_pos[head] + 1]
                    if target not in reserved and self._has_headroom(target):
                        reserved.add(target)
                        ok = True
            groups.append(queue)
            free.append(ok)
            if ok:
                released.append((lane, target))

        if groups:
            order = np.fromiter(chain.from_iterable(groups), dtype=np.int64)
            offsets = np.zeros(len(groups) + 1, dtype=np.int64)
            np.cumsum([len(q) for q in groups], out=offsets[1:])
            kernels.advance_lanes(order, offsets, np.array(free, dtype=np.uint8),
                                  self.d, self.v, self.wt, self.dt,
                                  self.v_max, p.accel, p.decel, p.min_gap, p.wait_speed)

        t_end = float(self.now + 1)
        for lane, target in released:
            queue = self.queues[lane]
            head = queue[0]
            if self.d[head] >= 0.0:
                continue
            queue.pop(0)
            if target < 0:
                self.status[head] = DONE
                self.exit[head] = t_end
                self.d[head] = 0.0
                self.completed.append((head, float(self.enter[head]), t_end))
                continue
            tq = self.queues[target]
            entry = self.l_max + self.d[head]
            if tq:
                entry = max(entry, self.d[tq[-1]] + p.min_gap)
                self.v[head] = min(self.v[head], self._safe_speed(entry - self.d[tq[-1]] - p.min_gap))
            self.d[head] = min(entry, self.l_max)
            self.path_pos[head] += 1
            tq.append(head)

        self.now += 1
        if self._trace_writer is not None:
            for lane, queue in enumerate(self.queues):
                for vid in queue:
                    self._trace_writer.writerow(
                        [self.now, vid, self.lane_ids[lane], f"{self.d[vid]:.3f}", f"{self.v[vid]:.3f}"])
        return self

    def run(self, seconds: int, phases: Sequence[int] | None = None) -> None:
        for _ in range(seconds):
            self.step(phases)

    def _safe_speed(self, gap: float) -> float:
        b = self.params.decel
        gap = max(gap, 0.0)
        return min(self.v_max, -b + math.sqrt(b * b + 2.0 * b * gap))

    def _has_headroom(self, lane: int) -> bool:
        queue = self.queues[lane]
        return not queue or self.l_max - self.d[queue[-1]] >= self.params.min_gap

    def _spawn(self) -> None:
        n = self._n
        while self._cursor < n and self._depart[self._cursor] <= self.now:
            vid = self._cursor
            self.waiting.setdefault(self._paths[vid][0], deque()).append(vid)
            self._cursor += 1
        for lane in sorted(self.waiting):
            pending = self.waiting[lane]
            if not pending or not self._has_headroom(lane):
                continue
            vid = pending.popleft()
            queue = self.queues[lane]
            speed = self.v_max
            if queue:
                speed = self._safe_speed(self.l_max - self.d[queue[-1]] - self.params.min_gap)
            self.d[vid] = self.l_max
            self.v[vid] = speed
            self.enter[vid] = float(self.now)
            self.status[vid] = ACTIVE
            queue.append(vid)
            self.spawned += 1

    # -- queries ---------------------------------------------------------

    def _lane_view(self, lane: str) -> LaneView:
        ids = self.queues[self.lane_index[lane]]
        idx = np.array(ids, dtype=np.int64)
        return LaneView(lane, self.d[idx].copy(), self.v[idx].copy(),
                        self.wt[idx].copy(), self.dt[idx].copy())

    def observe(self, intersection: str | int) -> IntersectionObservation:
        pos = intersection if isinstance(intersection, int) else self._inter_pos[intersection]
        inter = self.net.intersections[pos]
        return IntersectionObservation(
            intersection=inter.id,
            arrival=tuple(self._lane_view(r.arrival_lane) for r in inter.directed_roads),
            departure=tuple(self._lane_view(r.departure_lane) for r in inter.directed_roads),
            phase=self.phases[pos],
            l_max=self.l_max,
            v_max=self.v_max,
        )

    def observe_all(self) -> list[IntersectionObservation]:
        return [self.observe(pos) for pos in range(len(self.net.intersections))]

    def vehicle(self, vid: int) -> Vehicle:
        status = self.status[vid]
        lane = None
        route = self.flow.vehicles[vid].route
        if status == ACTIVE:
            lane = self.lane_ids[self._paths[vid][self.path_pos[vid]]]
            route = route[self.path_pos[vid]:]
        elif status == DONE:
            route = ()
        return Vehicle(
            id=vid, route=route, lane=lane,
            d=float(self.d[vid]), v=float(self.v[vid]),
            wt_veh=float(self.wt[vid]), dt_veh=float(self.dt[vid]),
            enter_time=None if status == PENDING else float(self.enter[vid]),
            exit_time=None if status != DONE else float(self.exit[vid]),
        )

    @property
    def in_network(self) -> int:
        return int(np.count_nonzero(self.status == ACTIVE))

    def travel_time_stats(self) -> TravelStats:
        """Mean of exit - enter; vehicles still inside are clamped to now."""
        active = self.status == ACTIVE
        done = self.status == DONE
        total = float(np.sum(self.exit[done] - self.enter[done]))
        total += float(np.sum(self.now - self.enter[active]))
        count = int(done.sum() + active.sum())
        avg = total / count if count else 0.0
        return TravelStats(avg, int(done.sum()), int(active.sum()))


def step(state: Simulation, phases: Sequence[int]) -> Simulation:
    return state.step(phases)


def observe(state: Simulation, intersection: str | int) -> IntersectionObservation:
    return state.observe(intersection)


def travel_time_stats(state: Simulation) -> TravelStats:
    return state.travel_time_stats()


__all__ = [
    "PHASE_DURATION", "SimParams", "Simulation", "Vehicle", "LaneView",
    "IntersectionObservation", "TravelStats", "step", "observe", "travel_time_stats",
    "LANES_PER_ROAD",
]

"""Hybrid pressure metrics and the heuristic signal controllers.

A vehicle's hybrid pressure grows as it gets closer to the stop line, slower,
and as its accumulated waiting time outweighs its driving time::

    hp = ln(1 + (l_max - d)/l_max + (v_max - v)/v_max + wt/max(dt, 1))

Lane pressure is the sum over its vehicles; a directed road's pressure is its
arrival lane's minus its departure lane's; an intersection's pressure is the
sum over all arrival lanes minus all departure lanes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netmodel import CONTROLLED_ROADS, N_PHASES, PHASE_DEFS, ROADS_PER_INTERSECTION
from .simcore import PHASE_DURATION, IntersectionObservation, LaneView

_PHASE_PAIRS = np.array([pair for _, pair in PHASE_DEFS], dtype=np.int64)


def vehicle_hp(d, v, wt, dt, l_max: float, v_max: float):
    """Hybrid pressure of one vehicle (or elementwise over arrays)."""
    d = np.asarray(d, dtype=float)
    v = np.asarray(v, dtype=float)
    wt = np.asarray(wt, dtype=float)
    dt = np.asarray(dt, dtype=float)
    assert np.all((d >= 0) & (d <= l_max)), "d outside [0, l_max]"
    assert np.all((v >= 0) & (v <= v_max + 1e-9)), "v outside [0, v_max]"
    assert np.all(wt >= 0) and np.all(dt >= 0), "negative time"
    value = np.log1p((l_max - d) / l_max + (v_max - v) / v_max + wt / np.maximum(dt, 1.0))
    return float(value) if value.ndim == 0 else value


def lane_hp(lane: LaneView, l_max: float, v_max: float) -> float:
    if len(lane) == 0:
        return 0.0
    return float(np.sum(vehicle_hp(lane.d, lane.v, lane.wt, lane.dt, l_max, v_max)))


def road_hp(obs: IntersectionObservation, road: int) -> float:
    """Arrival-lane minus departure-lane pressure of directed road ``road``."""
    return (lane_hp(obs.arrival[road], obs.l_max, obs.v_max)
            - lane_hp(obs.departure[road], obs.l_max, obs.v_max))


def road_hp_vector(obs: IntersectionObservation) -> np.ndarray:
    return np.array([road_hp(obs, k) for k in range(ROADS_PER_INTERSECTION)])


def intersection_hp(obs: IntersectionObservation) -> float:
    arrival = sum(lane_hp(lane, obs.l_max, obs.v_max) for lane in obs.arrival)
    departure = sum(lane_hp(lane, obs.l_max, obs.v_max) for lane in obs.departure)
    return arrival - departure


@dataclass(frozen=True)
class HpVector:
    road_hp: np.ndarray
    intersection_hp: float


def hp_vector(obs: IntersectionObservation) -> HpVector:
    """All 12 directed-road pressures and the intersection pressure in one pass."""
    lanes = obs.arrival + obs.departure
    counts = [len(lane) for lane in lanes]
    if sum(counts) == 0:
        return HpVector(np.zeros(ROADS_PER_INTERSECTION), 0.0)
    hp = vehicle_hp(
        np.concatenate([lane.d for lane in lanes]),
        np.concatenate([lane.v for lane in lanes]),
        np.concatenate([lane.wt for lane in lanes]),
        np.concatenate([lane.dt for lane in lanes]),
        obs.l_max, obs.v_max,
    )
    owner = np.repeat(np.arange(len(lanes)), counts)
    sums = np.bincount(owner, weights=np.atleast_1d(hp), minlength=len(lanes))
    arrival = sums[:ROADS_PER_INTERSECTION]
    departure = sums[ROADS_PER_INTERSECTION:]
    return HpVector(arrival - departure, float(arrival.sum() - departure.sum()))


def road_pressure_vector(obs: IntersectionObservation) -> np.ndarray:
    """Vehicle-count pressure per directed road."""
    return np.array([float(len(a) - len(b)) for a, b in zip(obs.arrival, obs.departure)])


def intersection_pressure(obs: IntersectionObservation) -> float:
    return float(sum(len(a) for a in obs.arrival) - sum(len(b) for b in obs.departure))


def best_phase(road_values: np.ndarray) -> int:
    """Phase whose two controlled roads have the largest summed value; lowest index on ties."""
    scores = road_values[_PHASE_PAIRS[:, 0]] + road_values[_PHASE_PAIRS[:, 1]]
    return int(np.argmax(scores))


def maxhp_select(obs: IntersectionObservation) -> int:
    return best_phase(hp_vector(obs).road_hp)


def maxpressure_select(obs: IntersectionObservation) -> int:
    return best_phase(road_pressure_vector(obs))


def fixedtime_select(t: float) -> int:
    if t < 0:
        raise ValueError("t must be non-negative")
    return int(t // PHASE_DURATION) % N_PHASES


__all__ = [
    "HpVector", "hp_vector", "vehicle_hp", "lane_hp", "road_hp", "road_hp_vector", "intersection_hp",
    "road_pressure_vector", "intersection_pressure", "best_phase",
    "maxhp_select", "maxpressure_select", "fixedtime_select", "CONTROLLED_ROADS",
]

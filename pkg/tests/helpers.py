"""Builders for synthetic intersection observations."""

import numpy as np

from trafficlab.simcore import IntersectionObservation, LaneView

L_MAX = 300.0
V_MAX = 11.11


def lane(name, vehicles=()):
    """``vehicles`` is a list of (d, v, wt, dt) tuples."""
    arr = np.array(vehicles, dtype=float).reshape(-1, 4)
    order = np.argsort(arr[:, 0], kind="stable")
    arr = arr[order]
    return LaneView(name, arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), arr[:, 3].copy())


def observation(arrival=None, departure=None, phase=0, l_max=L_MAX, v_max=V_MAX):
    """``arrival``/``departure`` map directed-road index to a vehicle list."""
    arrival = arrival or {}
    departure = departure or {}
    return IntersectionObservation(
        "intersection_1_1",
        tuple(lane(f"a{k}", arrival.get(k, ())) for k in range(12)),
        tuple(lane(f"d{k}", departure.get(k, ())) for k in range(12)),
        phase, l_max, v_max,
    )


def random_observation(rng, max_per_lane=6, phase=None, l_max=L_MAX, v_max=V_MAX):
    def vehicles():
        n = int(rng.integers(0, max_per_lane + 1))
        return [(rng.uniform(0, l_max), rng.uniform(0, v_max), float(rng.integers(0, 200)),
                 float(rng.integers(0, 200))) for _ in range(n)]

    return observation({k: vehicles() for k in range(12)}, {k: vehicles() for k in range(12)},
                       int(rng.integers(0, 8)) if phase is None else phase, l_max, v_max)

"""Pure-Python car-following kernel; reference for the compiled ``_kernels``."""

from math import sqrt


def advance_lanes(order, offsets, head_free, d, v, wt, dt,
                  v_max, accel, decel, min_gap, wait_speed):
    """Advance every vehicle by one 1-second tick, lane by lane.

    ``order[offsets[g]:offsets[g + 1]]`` lists the vehicles of lane group
    ``g`` head first.  A head vehicle with ``head_free[g]`` set may run past
    the stop line (its new ``d`` goes negative); otherwise it must stop at
    ``d = 0``.  Followers keep ``min_gap`` behind their leader's new position.
    Speeds obey ``v' <= v + accel``, ``v' <= v_max`` and the stopping rule
    ``v'^2 / (2 decel) <= gap - v'``.  Waiting/driving seconds are credited by
    comparing ``v'`` with ``wait_speed``.
    """
    n_groups = len(offsets) - 1
    b = decel
    for g in range(n_groups):
        start = offsets[g]
        stop = offsets[g + 1]
        free = head_free[g]
        obstacle = 0.0
        for k in range(start, stop):
            idx = order[k]
            dk = d[idx]
            vn = v[idx] + accel
            if vn > v_max:
                vn = v_max
            if not (k == start and free):
                gap = dk - obstacle
                if gap < 0.0:
                    gap = 0.0
                safe = -b + sqrt(b * b + 2.0 * b * gap)
                if vn > safe:
                    vn = safe
                if vn > gap:
                    vn = gap
            if vn < 0.0:
                vn = 0.0
            dn = dk - vn
            d[idx] = dn
            v[idx] = vn
            if vn < wait_speed:
                wt[idx] += 1.0
            else:
                dt[idx] += 1.0
            obstacle = (dn if dn > 0.0 else 0.0) + min_gap

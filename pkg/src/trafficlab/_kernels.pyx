# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled car-following kernel; same contract as ``_kernels_py.advance_lanes``."""

from libc.math cimport sqrt


def advance_lanes(const long long[::1] order, const long long[::1] offsets,
                  const unsigned char[::1] head_free,
                  double[::1] d, double[::1] v, double[::1] wt, double[::1] dt,
                  double v_max, double accel, double decel, double min_gap,
                  double wait_speed):
    cdef Py_ssize_t n_groups = offsets.shape[0] - 1
    cdef Py_ssize_t g, k, start, stop
    cdef long long idx
    cdef double obstacle, dk, vn, gap, safe, dn
    cdef double b = decel
    with nogil:
        for g in range(n_groups):
            start = offsets[g]
            stop = offsets[g + 1]
            obstacle = 0.0
            for k in range(start, stop):
                idx = order[k]
                dk = d[idx]
                vn = v[idx] + accel
                if vn > v_max:
                    vn = v_max
                if not (k == start and head_free[g]):
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

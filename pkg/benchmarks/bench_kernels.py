"""Compare the compiled and pure-Python car-following kernels.

Usage::

    python benchmarks/bench_kernels.py [--lanes 2000] [--per-lane 20] [--repeat 20]

Times the bare kernel on synthetic queues, then a one-hour MaxHP episode on
the 1x3 grid with each backend (each in a fresh interpreter, since the
backend is picked at import time).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from trafficlab import _kernels_py

try:
    from trafficlab import _kernels
except ImportError:
    _kernels = None

EPISODE_SNIPPET = """
import time
from trafficlab import BACKEND, pressure
from trafficlab.netmodel import grid_network, gen_synthetic_flow
from trafficlab.simcore import Simulation
net = grid_network(1, 3)
sim = Simulation(net, gen_synthetic_flow(net, 500, 0, 3600))
t0 = time.perf_counter()
for _ in range(360):
    sim.run(10, [pressure.maxhp_select(o) for o in sim.observe_all()])
print(BACKEND, time.perf_counter() - t0)
"""


def synthetic_lanes(n_lanes: int, per_lane: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    n = n_lanes * per_lane
    order = np.arange(n, dtype=np.int64)
    offsets = np.arange(0, n + 1, per_lane, dtype=np.int64)
    d = np.sort(rng.uniform(0, 300, size=(n_lanes, per_lane)), axis=1).ravel()
    v = rng.uniform(0, 11.11, size=n)
    free = (rng.random(n_lanes) < 0.5).astype(np.uint8)
    return order, offsets, free, d, v


def time_kernel(fn, args, repeat: int) -> float:
    order, offsets, free, d0, v0 = args
    best = float("inf")
    for _ in range(repeat):
        d, v = d0.copy(), v0.copy()
        wt, dt = np.zeros_like(d), np.zeros_like(d)
        t0 = time.perf_counter()
        fn(order, offsets, free, d, v, wt, dt, 11.11, 2.0, 4.5, 7.0, 0.1)
        best = min(best, time.perf_counter() - t0)
    return best


def time_episode(pure: bool) -> str:
    env = dict(os.environ)
    if pure:
        env["TRAFFICLAB_PURE_PYTHON"] = "1"
    else:
        env.pop("TRAFFICLAB_PURE_PYTHON", None)
    out = subprocess.run([sys.executable, "-c", EPISODE_SNIPPET], env=env,
                         capture_output=True, text=True, check=True)
    return out.stdout.strip()


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--lanes", type=int, default=2000)
    ap.add_argument("--per-lane", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    data = synthetic_lanes(args.lanes, args.per_lane)
    n = args.lanes * args.per_lane
    t_py = time_kernel(_kernels_py.advance_lanes, data, max(1, args.repeat // 10))
    print(f"kernel, {n} vehicles: python  {t_py * 1e3:9.3f} ms/tick")
    if _kernels is None:
        print("compiled extension not built; skipping")
    else:
        t_cy = time_kernel(_kernels.advance_lanes, data, args.repeat)
        print(f"kernel, {n} vehicles: cython  {t_cy * 1e3:9.3f} ms/tick  ({t_py / t_cy:.0f}x)")

    for pure in (True, False):
        backend, seconds = time_episode(pure).split()
        print(f"1x3 MaxHP hour, backend {backend:6s}: {float(seconds):6.2f} s")


if __name__ == "__main__":
    main()

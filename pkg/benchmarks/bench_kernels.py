"""Compare the numba and numpy kernel paths.

Each backend runs in its own interpreter with ``NODALAB_DISABLE_NUMBA`` set
accordingly, so the module-level backend choice is exercised exactly as a
user would.  The first call (JIT compilation for numba) is reported
separately from the steady-state timings.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _cases():
    rng = np.random.default_rng(0)
    v2 = rng.standard_normal((513, 513))
    p2 = rng.uniform(-1, 1, (200_000, 2))
    v3 = rng.standard_normal((65, 65, 65))
    p3 = rng.uniform(-1, 1, (100_000, 3))
    axis = np.stack([np.zeros(4001), np.zeros(4001), np.linspace(-1, 1, 4001)], axis=1)
    cloud = rng.uniform(-0.7, 0.7, (3000, 3))
    lo2, lo3 = np.full(2, -1.0), np.full(3, -1.0)
    return {
        "interp2d_513^2_200k": lambda K: K.interpolate(v2, lo2, 2 / 512, p2),
        "interp3d_65^3_100k": lambda K: K.interpolate(v3, lo3, 2 / 64, p3),
        "lattice_axis_r0.05": lambda K: K.neighbourhood_lattice_count(axis, 0.05, np.zeros(3), 1.0, 0.005),
        "lattice_cloud_r0.08": lambda K: K.neighbourhood_lattice_count(cloud, 0.08, np.zeros(3), 1.0, 0.008),
    }


def worker(repeat: int) -> dict:
    from nodalab import _kernels as K
    out = {"backend": K.backend(), "cases": {}}
    for name, fn in _cases().items():
        t0 = time.perf_counter()
        first = fn(K)
        warm = time.perf_counter() - t0
        times = []
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn(K)
            times.append(time.perf_counter() - t0)
        digest = float(np.sum(first)) if isinstance(first, np.ndarray) else int(first)
        out["cases"][name] = {"first_call": warm, "best": min(times), "median": float(np.median(times)),
                              "result": digest}
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", metavar="PATH")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.worker:
        print(json.dumps(worker(args.repeat)))
        return 0
    runs = {}
    for flag in ("0", "1"):
        env = dict(os.environ, NODALAB_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(args.repeat)], env=env,
                             capture_output=True, text=True, check=True)
        data = json.loads(res.stdout.strip().splitlines()[-1])
        runs[data["backend"]] = data["cases"]
    if "numba" not in runs:
        print("numba is not available; only the numpy path was timed")
    print(f"{'case':24s} {'numpy best':>11s} {'numba best':>11s} {'speedup':>8s} {'jit (s)':>8s} same")
    for name, np_case in runs["numpy"].items():
        nb = runs.get("numba", {}).get(name)
        if nb is None:
            print(f"{name:24s} {np_case['best']:11.4f}")
            continue
        same = nb["result"] == np_case["result"]
        print(f"{name:24s} {np_case['best']:11.4f} {nb['best']:11.4f} {np_case['best'] / nb['best']:8.2f}"
              f" {nb['first_call'] - nb['best']:8.2f} {'yes' if same else 'NO'}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(runs, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())

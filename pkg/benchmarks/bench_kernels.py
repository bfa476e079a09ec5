"""Time the compiled geometry kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Both backends run on the same map, rays and points; results are checked
for agreement before any timing is reported.
"""

import argparse
import time

import numpy as np

from depthnav import kernels
from depthnav.sensor import render_depth
from depthnav.transforms import quat_from_euler
from depthnav.world import generate_map


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    world = generate_map(1 / 25, (50.0, 50.0), seed=0, kinds="mixed")
    g = np.random.default_rng(0)
    points = np.column_stack([g.uniform(-25, 25, 20_000), g.uniform(-25, 25, 20_000), g.uniform(0, 4, 20_000)])
    pose = (np.array([-20.0, 0.0, 2.0]), quat_from_euler(0.0, 0.0, 0.0))

    cases = {
        "sdf 20k points": lambda: kernels.sdf_batch(points, world.packed),
        "depth image 64x64": lambda: render_depth(world, pose).depth,
    }
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the fallback is available")
    previous = kernels.BACKEND
    results = {}
    try:
        for name in backends:
            kernels.use_backend(name)
            outs = {case: np.asarray(fn()) for case, fn in cases.items()}
            times = {case: best_of(fn, args.repeat) for case, fn in cases.items()}
            results[name] = (outs, times)
    finally:
        kernels.use_backend(previous)

    if len(results) == 2:
        for case in cases:
            a, b = results["compiled"][0][case], results["python"][0][case]
            if not np.allclose(a, b, rtol=0, atol=1e-9):
                raise SystemExit(f"{case}: backends disagree (max diff {np.abs(a - b).max():.3g})")
    print(f"{'case':<22}" + "".join(f"{n:>12}" for n in results) + ("     speedup" if len(results) == 2 else ""))
    for case in cases:
        row = f"{case:<22}" + "".join(f"{results[n][1][case] * 1e3:>10.1f}ms" for n in results)
        if len(results) == 2:
            row += f"{results['python'][1][case] / results['compiled'][1][case]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()

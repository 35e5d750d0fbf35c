"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--points 200000] [--repeat 5] [--pipeline]

Kernel timings run both implementations in one process and check that they
agree.  ``--pipeline`` also times plane detection end to end in a subprocess
per backend, selected through STREETMORPH_BACKEND.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from streetmorph import kernels
from streetmorph._backend import ENV_VAR, HAVE_NUMBA

DETECT_SNIPPET = """
import time
from streetmorph import synth
from streetmorph.config import build_config
from streetmorph.pipeline import prepare_cloud, extract_entities
cfg = build_config("hillside", ["voxel_size=0"])
cloud = prepare_cloud(synth.generate(synth.corridor_spec(length={length}, sigma=0.003, seed=1))[0], cfg)
extract_entities(cloud, cfg)  # warm-up (jit compile)
t = time.perf_counter()
extract_entities(cloud, cfg)
print(len(cloud), time.perf_counter() - t)
"""


def workloads(n, rng):
    pts = rng.uniform(0, 30, size=(n, 3))
    nrm = rng.normal(size=(n, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    planes = np.column_stack([nrm[:64], rng.uniform(-10, 10, 64)])
    keys = kernels.cell_keys(pts, 0.05)
    xy = np.ascontiguousarray(pts[: min(n, 50_000), :2])
    return {
        "count_inliers (64 planes)": lambda impl: impl["count_inliers"](pts, nrm, planes, 0.15, 0.97),
        "inlier_mask": lambda impl: impl["inlier_mask"](pts, nrm, planes[0], 0.15, 0.97),
        "voxel_select": lambda impl: impl["voxel_select"](keys, pts),
        "radius_components (50k)": lambda impl: impl["radius_components"](xy, 0.12),
        "convex_hull_indices (50k)": lambda impl: impl["convex_hull_indices"](xy),
    }


def bench_kernels(n, repeat):
    if not HAVE_NUMBA:
        print("numba is not importable; only the numpy kernels can run")
    rng = np.random.default_rng(0)
    names = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    print(f"{'kernel':28s}" + "".join(f"{b:>12s}" for b in names) + "   speedup  agree")
    for label, call in workloads(n, rng).items():
        times, results = {}, {}
        for b in names:
            impl = kernels.IMPLEMENTATIONS[b]
            results[b] = call(impl)  # also absorbs jit compilation
            times[b] = min(timeit.repeat(lambda: call(impl), number=1, repeat=repeat))
        speed = times["numpy"] / times["numba"] if "numba" in times else float("nan")
        agree = all(np.array_equal(results[b], results["numpy"]) for b in names)
        print(f"{label:28s}" + "".join(f"{times[b] * 1e3:10.2f}ms" for b in names) + f"{speed:9.1f}x  {agree}")


def bench_pipeline(length):
    for backend in ("numpy", "numba"):
        env = dict(os.environ, **{ENV_VAR: backend})
        res = subprocess.run([sys.executable, "-c", DETECT_SNIPPET.format(length=length)], env=env,
                             capture_output=True, text=True, check=True)
        n, secs = res.stdout.split()
        print(f"detect {backend:6s}: {float(secs):7.2f}s on {n} points")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--pipeline", action="store_true", help="also time full plane detection per backend")
    ap.add_argument("--length", type=float, default=10.0, help="corridor length for --pipeline")
    args = ap.parse_args()
    bench_kernels(args.points, args.repeat)
    if args.pipeline:
        bench_pipeline(args.length)


if __name__ == "__main__":
    main()

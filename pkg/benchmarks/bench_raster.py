"""Time the compiled compositing kernel against the NumPy fallback.

    python benchmarks/bench_raster.py --sizes 32 64 128 --repeats 3

Each case renders a random grid of splats into one view, forward only and
forward plus backward, and checks that both backends agree.
"""
import argparse
import time

import numpy as np
import torch

from splatprior import raster
from splatprior.scenes import random_splat_scene
from splatprior.tensors import SceneTensors, pose_tensors


def _best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def run_case(size, grid, repeats, threads):
    scene, cams = random_splat_scene(grid=grid, seed=0, image_size=size)
    cam = cams[0]
    cfg = raster.RenderConfig(num_threads=threads)
    R, T = pose_tensors(cam)

    def forward():
        with torch.no_grad():
            return raster.render_scene_tensors(SceneTensors.from_scene(scene), R, T, cam.intrinsics, cfg)["color"]

    def backward():
        st = SceneTensors.from_scene(scene, requires_grad=True)
        raster.render_scene_tensors(st, R, T, cam.intrinsics, cfg)["color"].sum().backward()

    row, images = {}, {}
    for backend in ("cython", "python"):
        raster.set_backend(backend)
        images[backend] = forward().numpy()
        row[backend] = (_best_of(forward, repeats), _best_of(backward, repeats))
    diff = float(np.abs(images["cython"] - images["python"]).max())
    return row, diff


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128])
    parser.add_argument("--grid", type=int, default=16, help="splats per side of the random grid")
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    try:
        raster.set_backend("cython")
    except ImportError as exc:
        parser.error(f"compiled kernel unavailable: {exc}")

    print(f"{'image':>7} {'splats':>7} {'backend':>8} {'forward s':>10} {'fwd+bwd s':>10} {'speedup':>8}")
    for size in args.sizes:
        row, diff = run_case(size, args.grid, args.repeats, args.threads)
        for backend in ("cython", "python"):
            fwd, bwd = row[backend]
            speedup = row["python"][1] / bwd
            print(f"{size:>7} {args.grid ** 2:>7} {backend:>8} {fwd:>10.4f} {bwd:>10.4f} {speedup:>7.1f}x")
        print(f"{'':>7} max |cython - python| = {diff:.1e}")


if __name__ == "__main__":
    main()

"""Compare the compiled and pure-Python geometry kernels.

Run with ``python3 benchmarks/bench_kernels.py [--pairs N] [--repeat R]``.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mapgen import _kernels
from mapgen.dataio.synth import SynthConfig, scan_directions


def random_boxes(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.column_stack([
        rng.uniform(5, 40, n), rng.uniform(-10, 10, n), rng.uniform(-1, 0, n),
        rng.uniform(1.3, 1.8, n), rng.uniform(3.2, 4.6, n), rng.uniform(1.4, 1.9, n),
        rng.uniform(-np.pi, np.pi, n),
    ])


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pairs", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    a = random_boxes(rng, args.pairs)
    b = a + np.column_stack([rng.normal(0, 0.8, (args.pairs, 3)), np.zeros((args.pairs, 3)),
                             rng.normal(0, 0.5, args.pairs)])
    cfg = SynthConfig()
    dirs = scan_directions(cfg)
    origin = np.zeros(3)
    boxes = random_boxes(rng, 8)

    backends = {"python": _kernels.python_backend}
    if _kernels.compiled_backend is not None:
        backends["cython"] = _kernels.compiled_backend
    else:
        print("compiled backend not built; reporting the Python backend only")

    cases = {
        f"bev_iou_pairs x{args.pairs}": lambda k: k.bev_iou_pairs(a, b),
        f"iou3d_pairs x{args.pairs}": lambda k: k.iou3d_pairs(a, b),
        f"raycast {len(dirs)} rays x 8 boxes": lambda k: k.raycast(origin, dirs, boxes, -cfg.lidar_height,
                                                                    cfg.max_range),
    }
    print(f"{'kernel':34s}" + "".join(f"{name:>12s}" for name in backends) + "     speedup")
    for label, fn in cases.items():
        times = {name: best_of(lambda: fn(k), args.repeat) for name, k in backends.items()}
        ref = fn(_kernels.python_backend)
        if "cython" in backends:
            got = fn(_kernels.compiled_backend)
            for x, y in zip(ref if isinstance(ref, tuple) else (ref,), got if isinstance(got, tuple) else (got,)):
                assert np.allclose(x, y, atol=1e-9, equal_nan=True), f"{label}: backends disagree"
        speed = f"{times['python'] / times['cython']:10.1f}x" if "cython" in times else ""
        print(f"{label:34s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times.values()) + speed)


if __name__ == "__main__":
    main()

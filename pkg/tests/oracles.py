"""Independent reference computations the tests compare against."""
import numpy as np

from mapgen.geometry import Box3D


def _local(box: Box3D, pts: np.ndarray) -> np.ndarray:
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    d = pts - np.array([box.cx, box.cy, box.cz])
    return np.column_stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], d[:, 2]])


def _inside(box: Box3D, pts: np.ndarray, dims: slice) -> np.ndarray:
    half = 0.5 * np.array([box.l, box.w, box.h])[dims]
    return np.all(np.abs(_local(box, pts)[:, dims]) <= half, axis=1)


def _sample(box: Box3D, n: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.uniform(-0.5, 0.5, size=(n, 3)) * np.array([box.l, box.w, box.h])
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    return np.column_stack([c * u[:, 0] - s * u[:, 1] + box.cx, s * u[:, 0] + c * u[:, 1] + box.cy,
                            u[:, 2] + box.cz])


def monte_carlo_iou(a: Box3D, b: Box3D, n: int, rng: np.random.Generator, bev: bool = False) -> float:
    """IoU from uniform samples drawn inside each box (half the budget per box).

    The intersection measure is estimated from both sides and averaged; the box
    measures themselves are exact.
    """
    dims = slice(0, 2) if bev else slice(0, 3)
    ma = a.l * a.w * (1.0 if bev else a.h)
    mb = b.l * b.w * (1.0 if bev else b.h)
    half = n // 2
    in_b = _inside(b, _sample(a, half, rng), dims).mean() * ma
    in_a = _inside(a, _sample(b, half, rng), dims).mean() * mb
    inter = 0.5 * (in_a + in_b)
    return float(inter / (ma + mb - inter))


def random_pair(rng: np.random.Generator) -> tuple[Box3D, Box3D]:
    """A box and a perturbed copy, overlapping most of the time."""
    a = Box3D(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-1, 1), rng.uniform(0.5, 2.5),
              rng.uniform(1.0, 5.0), rng.uniform(0.5, 2.5), rng.uniform(-np.pi, np.pi))
    scale = rng.choice([0.3, 1.0, 3.0])
    b = Box3D(a.cx + rng.normal(0, scale), a.cy + rng.normal(0, scale), a.cz + rng.normal(0, 0.3 * scale),
              a.h * rng.uniform(0.6, 1.5), a.l * rng.uniform(0.6, 1.5), a.w * rng.uniform(0.6, 1.5),
              rng.uniform(-np.pi, np.pi))
    return a, b


def ap_staircase_fixture():
    """Three scored detections against two moderate gts in one frame.

    Ranked by score: hit on gt A, a miss far away, hit on gt B. Precision runs
    1, 1/2, 2/3 at recall 1/2, 1/2, 1. Enumerating the 40 recall positions by hand:
    the 20 positions up to 1/2 take precision 1, the 20 above take 2/3, so the AP is
    100 * (20 + 20 * 2/3) / 40 = 250/3. On the 11-point grid 0, 0.1, .., 1 the six
    positions up to 0.5 take 1 and the five above take 2/3: 100 * (6 + 10/3) / 11 = 2800/33.
    """
    from mapgen.evaluation import Detection, GroundTruth

    a = Box3D(10.0, 2.0, -0.8, 1.5, 3.9, 1.6, 0.0)
    b = Box3D(20.0, -3.0, -0.8, 1.5, 3.9, 1.6, 0.5)
    far = Box3D(40.0, 10.0, -0.8, 1.5, 3.9, 1.6, 0.0)
    dets = [Detection("f", a, 0.9), Detection("f", far, 0.8), Detection("f", b, 0.7)]
    gts = [GroundTruth("f", a, "moderate"), GroundTruth("f", b, "moderate")]
    return dets, gts, 250.0 / 3.0, 2800.0 / 33.0

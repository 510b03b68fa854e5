"""Time every accelerated kernel under both backends.

    python benchmarks/bench_kernels.py [--repeat N]

Numba compilation happens in an untimed warm-up call. Results are
best-of-N wall times per call.
"""

import argparse
import timeit

import numpy as np

from pathtracker import _accel
from pathtracker.assignment import hungarian_assign
from pathtracker.flow import TvL1Params, sample_bilinear, tv_l1
from pathtracker.scene import generate_fold
from pathtracker.tracker import classify_sample, label_components
from pathtracker.trajgen import GenConfig, integrate_walk


def cases():
    rng = np.random.default_rng(0)
    turns = rng.uniform(-0.35, 0.35, size=508)
    cost = rng.uniform(0, 10, size=(27, 27))
    tie_cost = rng.integers(0, 3, size=(27, 27)).astype(float)
    mask = rng.random((32, 32)) < 0.3
    img = rng.random((32, 32))
    xs, ys = rng.uniform(-2, 34, size=(2, 32, 32))
    tex = rng.integers(0, 256, (32, 32)).astype(np.uint8)
    shifted = np.roll(tex, 1, axis=1)
    sample = next(generate_fold(GenConfig(distractors=15), "test", 1))
    params = TvL1Params()
    return {
        "random walk (508 steps)": lambda: integrate_walk(10.0, 10.0, 0.3, turns),
        "hungarian 27x27": lambda: hungarian_assign(cost),
        "hungarian 27x27 with ties": lambda: hungarian_assign(tie_cost),
        "component labels 32x32": lambda: label_components(mask),
        "bilinear sample 32x32": lambda: sample_bilinear(img, xs, ys),
        "tv_l1 32x32": lambda: tv_l1(tex, shifted, params),
        "classify sample (32f, 15d)": lambda: classify_sample(sample),
    }


def bench(repeat):
    results = {}
    backends = [False, True] if _accel.NUMBA_AVAILABLE else [False]
    saved = _accel.USE_NUMBA
    try:
        for flag in backends:
            _accel.USE_NUMBA = flag
            for name, fn in cases().items():
                fn()  # warm-up, includes compilation
                timer = timeit.Timer(fn)
                number, _ = timer.autorange()
                best = min(timer.repeat(repeat=repeat, number=number)) / number
                results.setdefault(name, {})["numba" if flag else "numpy"] = best
    finally:
        _accel.USE_NUMBA = saved
    return results


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    res = bench(args.repeat)
    print(f"{'kernel':<30} {'numpy':>12} {'numba':>12} {'speedup':>8}")
    for name, t in res.items():
        nb = t.get("numba")
        speed = f"{t['numpy'] / nb:7.1f}x" if nb else "     n/a"
        nb_s = f"{nb * 1e3:9.3f} ms" if nb else "         n/a"
        print(f"{name:<30} {t['numpy'] * 1e3:9.3f} ms {nb_s} {speed}")


if __name__ == "__main__":
    main()

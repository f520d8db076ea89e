"""Compare the numba kernels with their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 7] [--quick]

Per-kernel timings run in this process (both variants are importable side
by side). The end-to-end train step is timed in two child processes, one
with GAROM_DISABLE_NUMBA=1, so the switch is exercised the way users set it.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from garom import kernels


def _best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_cases(quick):
    rng = np.random.default_rng(0)
    n_adam = 100_000 if quick else 1_000_000
    p, g, m = rng.normal(size=(3, n_adam))
    v = rng.random(n_adam)
    act = rng.normal(size=(16, 300))
    grad = rng.normal(size=act.shape)
    a, b = rng.normal(size=(2, 8, 900))
    centers = rng.uniform(-1, 1, (240, 2))
    spd = kernels.gaussian_gram(centers, centers, 0.3) + 1e-8 * np.eye(240)
    low, _ = kernels.cholesky_lower_numpy(spd)
    rhs = rng.normal(size=(240, 16))
    snaps = rng.normal(size=(16, 200))

    def jacobi(impl):
        def run():
            w = snaps.copy()
            getattr(kernels, f"jacobi_orthogonalize_{impl}")(w, np.eye(16), 1e-15, 60)
        return run

    adam_args = (1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)
    return {
        f"adam_update ({n_adam} params)": lambda impl: (
            lambda: getattr(kernels, f"adam_update_{impl}")(p, g, m, v, *adam_args)),
        "silu_forward (16x300)": lambda impl: (
            lambda: getattr(kernels, f"silu_forward_{impl}")(act)),
        "silu_backward (16x300)": lambda impl: (
            lambda: getattr(kernels, f"silu_backward_{impl}")(act, grad)),
        "l1_loss_grad (8x900)": lambda impl: (
            lambda: getattr(kernels, f"l1_loss_grad_{impl}")(a, b)),
        "gaussian_gram (240x240)": lambda impl: (
            lambda: getattr(kernels, f"gaussian_gram_{impl}")(centers, centers, 0.3)),
        "cholesky_lower (240)": lambda impl: (
            lambda: getattr(kernels, f"cholesky_lower_{impl}")(spd)),
        "cholesky_solve (240, 16 rhs)": lambda impl: (
            lambda: getattr(kernels, f"cholesky_solve_{impl}")(low, rhs)),
        "jacobi_orthogonalize (16x200)": jacobi,
    }


_STEP_SCRIPT = """
import json, time, numpy as np
from garom import kernels
from garom.data import gen_gaussian_dataset
from garom.model import TrainConfig, build_model, train_step
ds = gen_gaussian_dataset(64, {points}, seed=0)
m = build_model(ds.n_u, ds.n_c, TrainConfig(latent_dim=64))
rng = np.random.default_rng(0)
u, c = ds.solutions[:8], ds.params[:8]
for _ in range(5):
    train_step(m, u, c, rng)
best = float("inf")
for _ in range({repeat}):
    t0 = time.perf_counter()
    for _ in range(20):
        train_step(m, u, c, rng)
    best = min(best, (time.perf_counter() - t0) / 20)
print(json.dumps({{"numba": kernels.HAS_NUMBA, "seconds": best}}))
"""


def train_step_seconds(disable, points, repeat):
    env = dict(os.environ)
    env.pop("GAROM_DISABLE_NUMBA", None)
    if disable:
        env["GAROM_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", _STEP_SCRIPT.format(points=points, repeat=repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=7)
    parser.add_argument("--quick", action="store_true", help="smaller sizes, fewer repeats")
    args = parser.parse_args(argv)
    if not kernels.HAS_NUMBA:
        sys.exit("numba is disabled or missing; unset GAROM_DISABLE_NUMBA to compare")
    repeat = 3 if args.quick else args.repeat

    print(f"{'kernel':<34}{'numba':>12}{'numpy':>12}{'speedup':>9}")
    for name, make in kernel_cases(args.quick).items():
        fast, slow = make("numba"), make("numpy")
        fast()  # compile or load from cache before timing
        number = max(1, int(0.05 / max(_best(slow, 1, 1), 1e-7)))
        t_fast = _best(fast, repeat, number)
        t_slow = _best(slow, repeat, number)
        print(f"{name:<34}{t_fast * 1e6:>10.1f}us{t_slow * 1e6:>10.1f}us{t_slow / t_fast:>8.2f}x")

    points = 300 if args.quick else 900
    on = train_step_seconds(False, points, repeat)
    off = train_step_seconds(True, points, repeat)
    assert on["numba"] and not off["numba"]
    label = f"train_step (N_u={points}, batch 8)"
    print(f"{label:<34}{on['seconds'] * 1e3:>10.2f}ms{off['seconds'] * 1e3:>10.2f}ms"
          f"{off['seconds'] / on['seconds']:>8.2f}x")


if __name__ == "__main__":
    main()

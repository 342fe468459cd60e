"""Time the numba and numpy paths of every kernel at desk-scale sizes.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with both timings, the faster path and the path
``auto`` currently selects, then a full training epoch under each forced
backend (run in a subprocess because the backend is fixed at import).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from unlearn_forge import _kernels as K


def _inputs(rng: np.random.Generator) -> dict[str, tuple]:
    a, w, b = rng.normal(size=(64, 64)), rng.normal(size=(64, 64)), rng.normal(size=(1, 64))
    feats = rng.normal(size=(400, 64))
    labels = rng.integers(0, 8, size=400)
    dist = K.pairwise_dists_numpy(feats)
    points = rng.normal(size=400)
    return {
        "affine": (a, w, b),
        "affine_backward": (a, w, rng.normal(size=(64, 64))),
        "softmax": (rng.normal(size=(64, 8)),),
        "pairwise_dists": (feats,),
        "silhouette_values": (dist, labels, 8),
        "kde_grid": (points, 0.3, np.linspace(-4, 4, 2048)),
    }


EPOCH_SNIPPET = """
import time
from unlearn_forge.data import make_synthetic_benchmark
from unlearn_forge.nn import MlpArchitecture, SgdConfig, fit, init_params
train, _ = make_synthetic_benchmark(8, 16, 200, 0.5, seed=0)
arch = MlpArchitecture((16, 64, 64, 64, 8), seed=0)
fit(init_params(arch), arch, train.features, train.labels, SgdConfig(0.05), 1, seed=0)
start = time.perf_counter()
fit(init_params(arch), arch, train.features, train.labels, SgdConfig(0.05), {epochs}, seed=0)
print((time.perf_counter() - start) / {epochs})
"""


def epoch_seconds(backend: str, epochs: int) -> float:
    env = os.environ | {"UNLEARN_FORGE_BACKEND": backend}
    out = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET.format(epochs=epochs)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--epochs", type=int, default=5)
    args = parser.parse_args()
    if not K.HAVE_NUMBA:
        sys.exit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numpy us':>10}{'numba us':>10}  faster  auto")
    mismatches = []
    for name, args_ in _inputs(rng).items():
        np_fn, nb_fn = K.get(name, "numpy"), K.get(name, "numba")
        nb_fn(*args_)  # compile outside the timing
        t_np = min(timeit.repeat(lambda: np_fn(*args_), number=args.repeat, repeat=3)) / args.repeat
        t_nb = min(timeit.repeat(lambda: nb_fn(*args_), number=args.repeat, repeat=3)) / args.repeat
        faster = "numba" if t_nb < t_np else "numpy"
        if faster != K._AUTO[name]:
            mismatches.append(name)
        print(f"{name:<18}{t_np * 1e6:10.1f}{t_nb * 1e6:10.1f}  {faster:<6}  {K._AUTO[name]}")

    print()
    for backend in ("numpy", "numba", "auto"):
        print(f"training epoch ({backend:>5}): {epoch_seconds(backend, args.epochs) * 1e3:8.1f} ms")
    if mismatches:
        print(f"\nauto choice differs from this machine's measurement for: {', '.join(mismatches)}")


if __name__ == "__main__":
    main()

"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--nodes 2000]

Also times one full scoring pass in a subprocess per backend, switching
with EGODIFF_DISABLE_NUMBA.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from egodiff import _kernels as K
from egodiff.io import SynthConfig, generate_synthetic

END_TO_END = """
import time, numpy as np
from egodiff import EgoConfig, ModelConfig, ScoreModel, ScoringConfig, VpSde, backend
from egodiff.io import SynthConfig, generate_synthetic
from egodiff.scoring import score_all
from egodiff.train import standardize_features
net, _ = standardize_features(generate_synthetic(SynthConfig(num_nodes=200, clique_size=5, seed=0)))
model = ScoreModel.init(ModelConfig(net.num_features, 16), np.random.default_rng(0))
cfg = ScoringConfig(levels=2, samples_per_level=1)
score_all(net, model, VpSde(), EgoConfig(1, 8), cfg, nodes=range(8))
t0 = time.perf_counter()
score_all(net, model, VpSde(), EgoConfig(1, 8), cfg)
print(backend(), time.perf_counter() - t0)
"""


def best_of(fn, repeat):
    fn()  # warm-up (includes numba compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(n_nodes, rng):
    net = generate_synthetic(SynthConfig(num_nodes=n_nodes, p_in=0.02, p_out=0.002,
                                         structural_fraction=0.0, seed=0))
    indptr, indices = net.csr
    centers = rng.integers(n_nodes, size=200)
    balls = [K.bfs_ball_numpy(indptr, indices, int(v), 2) for v in centers]
    b, n, f = 256, 32, 8
    x = rng.standard_normal((b, n, f))
    a = np.triu((rng.random((b, n, n)) < 0.2).astype(float), 1)
    a = a + a.transpose(0, 2, 1)
    mask = np.ones((b, n), dtype=bool)
    h = rng.standard_normal((64, 32, 64))
    return {
        "bfs_ball (200 x 2 hops)": (
            lambda: [K.bfs_ball_numpy(indptr, indices, int(v), 2) for v in centers],
            lambda: [K.bfs_ball_numba(indptr, indices, int(v), 2) for v in centers]),
        "induced_adjacency (200 egos)": (
            lambda: [K.induced_adjacency_numpy(indptr, indices, s) for s in balls],
            lambda: [K.induced_adjacency_numba(indptr, indices, s) for s in balls]),
        "masked_energy (256 x 32 nodes)": (
            lambda: K.masked_energy_numpy(x, a, mask),
            lambda: K.masked_energy_numba(x, a, mask)),
        "elu (131k values)": (lambda: K.elu_numpy(h), lambda: K.elu_numba(h)),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--nodes", type=int, default=2000)
    p.add_argument("--skip-end-to-end", action="store_true")
    args = p.parse_args()
    if not K.HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, (np_fn, nb_fn) in kernel_cases(args.nodes, rng).items():
        t_np, t_nb = best_of(np_fn, args.repeat), best_of(nb_fn, args.repeat)
        print(f"{name:32s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:8.1f}x")
    if args.skip_end_to_end:
        return
    print("\nscore_all, 200 nodes, K=2, S=1:")
    for flag in ("0", "1"):
        env = dict(os.environ, EGODIFF_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, check=True,
                             capture_output=True, text=True).stdout.split()
        print(f"  {out[0]:6s} {float(out[1]):8.2f} s")


if __name__ == "__main__":
    main()

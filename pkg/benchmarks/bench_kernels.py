"""Time the sampler kernels and a full imputation under both backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Each numba kernel is called once before timing so JIT compilation is not
counted. Reported numbers are the best of ``--repeat`` runs. masked_gram is
a BLAS GEMM under both backends, so its row is a control.
"""
import argparse
import time

import numpy as np

from btf import btmf, dist, kernels, set_backend, synthetic
from btf._backend import HAVE_NUMBA
from btf.btmf import ModelConfig
from btf.data import MaskSpec, apply_mask


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(quick):
    rng = np.random.default_rng(0)
    N, T, R = (60, 300, 5) if quick else (200, 2000, 10)
    lags = np.array([1, 2, 24])
    w = (rng.random((N, T)) > 0.3).astype(float)
    feats = rng.standard_normal((T, R))
    vals = rng.standard_normal((N, T))
    G = np.array([g @ g.T + np.eye(R) for g in rng.standard_normal((T, R, R))])
    prec = np.array([dist.symmetrize(p) for p in G])
    lin = rng.standard_normal((T, R))
    z = rng.standard_normal((T, R))
    blocks = 0.1 * rng.standard_normal((len(lags), R, R))
    Sinv = np.eye(R)
    X0 = rng.standard_normal((T, R))

    def sweep():
        kernels.temporal_sweep(G, lin, X0.copy(), blocks, Sinv, lags, z)

    syn = synthetic.btmf_matrix(n_series=30, n_steps=300, seed=1)
    masked, _ = apply_mask(syn.data, MaskSpec("RM", 0.3, seed=1))
    cfg = ModelConfig(rank=3, lags=(1, 2), burn_in=50 if quick else 200, samples=20 if quick else 100)

    return {
        f"masked_gram {N}x{T} R={R}": lambda: kernels.masked_gram(w, feats, vals),
        f"sample_canonical_batch {T}x{R}": lambda: kernels.sample_canonical_batch(prec, lin, z),
        f"temporal_sweep T={T} R={R} lags=1,2,24": sweep,
        f"impute 30x300 R=3 sweeps={cfg.burn_in + cfg.samples}": lambda: btmf.impute(masked, cfg, rng=0),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = parser.parse_args()
    backends = ("numba", "numpy") if HAVE_NUMBA else ("numpy",)
    table = {}
    for backend in backends:
        previous = set_backend(backend)
        try:
            for name, fn in cases(args.quick).items():
                fn()
                table.setdefault(name, {})[backend] = best_of(fn, args.repeat)
        finally:
            set_backend(previous)
    width = max(len(k) for k in table)
    print(f"{'case':<{width}}  " + "  ".join(f"{b:>10}" for b in backends) + ("  speedup" if len(backends) == 2 else ""))
    for name, row in table.items():
        cells = "  ".join(f"{row[b] * 1e3:>8.2f}ms" for b in backends)
        extra = f"  {row['numpy'] / row['numba']:>6.1f}x" if len(backends) == 2 else ""
        print(f"{name:<{width}}  {cells}{extra}")


if __name__ == "__main__":
    main()

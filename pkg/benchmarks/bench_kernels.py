"""Compare the numba-compiled kernels with the numpy fallback.

Runs each hot kernel on desk-scale shapes (K=4, M=64, N=100, hidden=200)
with both backends, checks that they agree, and prints the median time per
call. A final row times one full meta-learning epoch end to end with each
backend (the backend is chosen at import time, so that part spawns one
subprocess per backend).

    python3 benchmarks/bench_kernels.py [--reps 200]
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from rismeta import _kernels


def median_time(fn, args, reps):
    fn(*args)  # warm-up (compilation for numba)
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def make_inputs(rng, K=4, M=64, N=100, hidden=200):
    A = rng.standard_normal((K, K)) + 1j * rng.standard_normal((K, K))
    w = np.ones(K)
    H = rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))
    phi = np.exp(1j * rng.uniform(0, 2 * np.pi, N))
    g = rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))
    n_in = 2 * M
    W1 = rng.uniform(-0.1, 0.1, (hidden, n_in))
    b1 = rng.uniform(-0.1, 0.1, hidden)
    W2 = rng.uniform(-0.1, 0.1, (n_in, hidden))
    b2 = rng.uniform(-0.1, 0.1, n_in)
    x = rng.standard_normal((K, n_in))
    return A, w, H, phi, g, (W1, b1, W2, b2, x)


EPOCH_SNIPPET = """
import time, numpy as np
from rismeta import SystemConfig, draw_channel, gmml
cfg = SystemConfig()
ch = draw_channel(cfg, np.random.default_rng(0))
hyper = gmml.GmmlHyper(N_e=20)
gmml.run(ch, ch, cfg, hyper, np.random.default_rng(1))
t0 = time.perf_counter()
gmml.run(ch, ch, cfg, gmml.GmmlHyper(N_e=200), np.random.default_rng(1))
print((time.perf_counter() - t0) / 200)
"""


def epoch_time(flag):
    env = dict(os.environ, RISMETA_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", EPOCH_SNIPPET], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--skip-epoch", action="store_true")
    args = ap.parse_args()
    if _kernels.numba_kernels is None:
        sys.exit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    A, w, H, phi, g, mlp = make_inputs(rng)
    sigma2 = 0.1
    nb, npk = _kernels.numba_kernels, _kernels.numpy_kernels
    y, z, a = npk.mlp_forward(*mlp)
    up = rng.standard_normal(y.shape)
    W1, b1, W2, b2, x = mlp
    cases = [
        ("rate_grad", (A, sigma2, w)),
        ("rate", (A, sigma2, w)),
        ("phase_grad", (H, phi, g)),
        ("mlp_forward", mlp),
        ("mlp_backward", (W1, W2, x, z, a, up)),
    ]
    print(f"{'kernel':<14}{'numpy [us]':>12}{'numba [us]':>12}{'speedup':>9}  max|diff|")
    for name, fargs in cases:
        r_np = getattr(npk, name)(*fargs)
        r_nb = getattr(nb, name)(*fargs)
        flat = lambda r: np.concatenate([np.ravel(np.asarray(v)) for v in (r if isinstance(r, tuple) else (r,))])
        diff = float(np.max(np.abs(flat(r_np) - flat(r_nb))))
        t_np = median_time(getattr(npk, name), fargs, args.reps)
        t_nb = median_time(getattr(nb, name), fargs, args.reps)
        print(f"{name:<14}{t_np * 1e6:12.2f}{t_nb * 1e6:12.2f}{t_np / t_nb:9.2f}  {diff:.1e}")
    if not args.skip_epoch:
        e_np, e_nb = epoch_time("0"), epoch_time("1")
        print(f"{'GMML epoch':<14}{e_np * 1e6:12.1f}{e_nb * 1e6:12.1f}{e_np / e_nb:9.2f}")


if __name__ == "__main__":
    main()

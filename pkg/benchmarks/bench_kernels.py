"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeats 30] [--json out.json]

Each case runs once untimed (compilation, caches) and then ``repeats`` times;
the median is reported. Both backends are exercised in the same process
through ``_kernels.use_backend``.
"""
import argparse
import json
import time

import numpy as np

from hfce import _kernels
from hfce.channel import ScenarioSampler, sample_scenario, synth_hybrid
from hfce.dictionary import build_joint
from hfce.estimators import PdOmpConfig, npd_omp, pd_omp, pd_range
from hfce.geometry import ArrayConfig, near_steering
from hfce.measurement import build_whitener, gen_beamforming, measurement_matrix, observe, snr_to_sigma2


def _median_time(fn, repeats):
    fn()
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def cases(N=200):
    cfg = ArrayConfig(N, 0.01)
    d = build_joint(cfg, 5)
    rng = np.random.default_rng(0)
    th = rng.uniform(-1, 1, 1000)
    r = rng.uniform(30, 300, 1000)
    h = synth_hybrid(cfg, sample_scenario(rng, ScenarioSampler(n_paths=10, gamma=0.5), cfg))
    cb = gen_beamforming(rng, 10, 10, cfg)
    obs = observe(rng, h, cb, snr_to_sigma2(h, 10))
    wh = build_whitener(cb)
    phi = measurement_matrix(cb, wh, d)
    seeds = rng.choice(d.n_atoms, 50, replace=False)
    return {
        "near_steering 200x1000": lambda: near_steering(cfg, th, r),
        "pd_range x50 (alpha 0.5)": lambda: [pd_range(d, s, 1.0, 0.5) for s in seeds],
        "npd_omp L=10": lambda: npd_omp(obs, d, 10, phi=phi, whitener=wh),
        "pd_omp L=10 alpha=0.7": lambda: pd_omp(obs, d, PdOmpConfig(10, 0.7), phi=phi, whitener=wh, warn=False),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=30)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)
    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    results = {}
    for b in backends:
        prev = _kernels.use_backend(b)
        try:
            results[b] = {name: _median_time(fn, args.repeats) for name, fn in cases().items()}
        finally:
            _kernels.use_backend(prev)
    names = list(results["numpy"])
    print(f"{'case':28s}" + "".join(f"{b:>14s}" for b in backends) + ("    speedup" if len(backends) > 1 else ""))
    for n in names:
        line = f"{n:28s}" + "".join(f"{results[b][n] * 1e3:12.3f}ms" for b in backends)
        if len(backends) > 1:
            line += f"   {results['numpy'][n] / results['numba'][n]:7.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as f:
            json.dump(results, f, indent=2)


if __name__ == "__main__":
    main()

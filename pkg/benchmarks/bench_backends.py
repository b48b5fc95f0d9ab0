"""Benchmark the compiled event kernels against the pure-Python fallback.

Run:  python benchmarks/bench_backends.py [--events N]

Generates one event batch per model family and times both backends applying
it to identical configurations, reporting events/second and the speedup.
Trajectories are asserted bit-identical along the way.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

import quenchflow as qf
from quenchflow import _reference, kernels
from quenchflow.engine import stream_for


def _make(family: str, L: int):
    if family == "misanthrope":
        spec = qf.ModelSpec(family="misanthrope", K=2, c=0.5, rate=qf.RateFunction.product(2),
                            kernel=qf.JumpKernel([-1, 1, 2], [0.3, 0.6, 0.1]),
                            law=qf.IidLaw("uniform", low=0.5, high=2.0))
    elif family == "generalized":
        spec = qf.ModelSpec(family="generalized", K=1, c=0.5, rate=qf.RateFunction.exclusion(1),
                            kernel=qf.JumpKernel([-1, 1], [0.5, 0.5]),
                            law=qf.IidLaw("uniform", low=0.5, high=2.0), style="bond")
    elif family == "kstep":
        spec = qf.ModelSpec(family="kstep", K=1, c=0.3, k=3, style="site_walk",
                            law=qf.IidLaw("uniform", low=0.3, high=0.7))
    else:  # traffic
        spec = qf.ModelSpec(family="traffic", K=1, c=0.3, k=2,
                            law=qf.IidLaw("uniform", low=0.5, high=2.0),
                            extra={"beta_law": {"kind": "iid_uniform", "low": 0.4, "high": 1.0}})
    fld = qf.sample_environment(spec, L, seed=1)
    runtime = qf.build_runtime(spec, fld)
    rng = np.random.default_rng(0)
    cfg = qf.Configuration(rng.integers(0, spec.K + 1, L).astype(np.int64), "ring")
    return runtime, cfg


def _apply(impl, runtime, eta, sites, zi, v1, v2):
    if runtime.family == "misanthrope":
        impl.mis_evolve(eta, runtime.alpha, runtime.btab, runtime.zvals,
                        runtime.invnorm, True, sites, zi, v2, None)
    elif runtime.family == "generalized":
        impl.gen_evolve(eta, runtime.B, runtime.zvals, runtime.invP, True, sites, zi, v2, None)
    else:
        impl.kstep_evolve(eta, runtime.paths, runtime.cumq, runtime.beta,
                          runtime.K, True, sites, v1, v2, None)


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--events", type=int, default=2_000_000)
    parser.add_argument("--lattice", type=int, default=1000)
    args = parser.parse_args()

    compiled = kernels.compiled_or_none()
    print(f"active backend: {kernels.BACKEND}")
    if compiled is None:
        print("compiled extension not built; only the python backend will run")

    print(f"{'family':<14}{'python ev/s':>14}{'compiled ev/s':>16}{'speedup':>10}")
    for family in ("misanthrope", "generalized", "kstep", "traffic"):
        runtime, cfg = _make(family, args.lattice)
        stream = stream_for(runtime, cfg, seed=7)
        horizon = args.events / (args.lattice * runtime.rate_per_site)
        times, sites, v1, v2 = stream.take_until(horizon)
        zi = runtime.mark_indices(v1)
        n = sites.size

        eta_py = cfg.occ.copy()
        t0 = time.perf_counter()
        _apply(_reference, runtime, eta_py, sites, zi, v1, v2)
        t_py = time.perf_counter() - t0

        if compiled is not None:
            eta_c = cfg.occ.copy()
            t0 = time.perf_counter()
            _apply(compiled, runtime, eta_c, sites, zi, v1, v2)
            t_c = time.perf_counter() - t0
            assert np.array_equal(eta_py, eta_c), f"backend mismatch for {family}"
            print(f"{family:<14}{n / t_py:>14.3e}{n / t_c:>16.3e}{t_py / t_c:>10.1f}")
        else:
            print(f"{family:<14}{n / t_py:>14.3e}{'-':>16}{'-':>10}")


if __name__ == "__main__":
    main()

"""Time the numeric kernels with the numba and numpy backends.

Run from the repository root::

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Two workloads are measured: evaluating the phase gradients of an extended
Calogero system at many sample points (the bracket and rank checks), and
integrating the extended flow to ``T = 10`` at tolerance ``1e-10`` (the
drift check).  The first call of each numba kernel is timed separately as
compilation.
"""

from __future__ import annotations

import argparse
import json
import platform
import time

import numpy as np

from hamext import _accel, kernels
from hamext.catalog import build_extension, certify_config, constraint_instance
from hamext.phasepoly import stack_programs
from hamext.verify import default_initial, extension_sampler, hamilton_program


def _setup():
    inst, L0 = constraint_instance("calogero3", "centre", 3, seed=1)
    ext = build_extension(inst, 3, L0=L0)
    cfg = certify_config(inst, ext, seed=1)
    polys = [P for _, P in ext.integrals]
    names = sorted(set().union(*(P.free_parameters() for P in polys)))
    prog = stack_programs(polys, list(ext.space.phase_names) + names, "gradient")
    X = extension_sampler(ext, cfg).draw(20000)
    if names:
        X = np.concatenate([X, np.tile([cfg.params[n] for n in names], (len(X), 1))], axis=1)
    flow = hamilton_program(ext.H, [])
    y0 = default_initial(ext, cfg, 0)
    return prog, X, flow, y0


def _time(fn, repeat: int) -> tuple:
    t0 = time.perf_counter()
    fn()
    first = time.perf_counter() - t0
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t0)
    return first, min(runs)


def main(argv=None) -> dict:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None, help="write the timings to this file")
    args = ap.parse_args(argv)
    prog, X, flow, y0 = _setup()
    backends = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    results = {"python": platform.python_version(), "numpy": np.__version__, "points": len(X), "timings": {}}
    old = _accel.backend()
    try:
        for name in backends:
            _accel.set_backend(name)
            ev = _time(lambda: kernels.evaluate_program(prog, X), args.repeat)
            fl = _time(lambda: kernels.integrate_flow(flow, y0, [], 10.0, 1e-10), args.repeat)
            results["timings"][name] = {"eval_first": ev[0], "eval_best": ev[1], "flow_first": fl[0],
                                        "flow_best": fl[1]}
    finally:
        _accel.set_backend(old)
    print(f"{'backend':<8} {'eval first':>12} {'eval best':>12} {'flow first':>12} {'flow best':>12}")
    for name, t in results["timings"].items():
        print(f"{name:<8} {t['eval_first']:>11.4f}s {t['eval_best']:>11.4f}s {t['flow_first']:>11.4f}s "
              f"{t['flow_best']:>11.4f}s")
    if "numba" in results["timings"]:
        a, b = results["timings"]["numpy"], results["timings"]["numba"]
        print(f"speed-up (best of {args.repeat}): eval {a['eval_best'] / b['eval_best']:.1f}x, "
              f"flow {a['flow_best'] / b['flow_best']:.1f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2)
    return results


if __name__ == "__main__":
    main()

"""Compare the numba and numpy integration backends on the default transport.

Usage: python3 benchmarks/bench_kernels.py [--trajectories N] [--repeat R]
"""
from __future__ import annotations

import argparse
import time
import warnings

import numpy as np

warnings.filterwarnings("ignore", module="numba")

from exchcool import _kernels  # noqa: E402
from exchcool import dynamics as dyn  # noqa: E402
from exchcool.scenario import Scenario  # noqa: E402


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trajectories", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    sc = Scenario.from_dict().with_overrides(ideal_ec=True)
    fr = sc.frames(sc.closed_form_E_c())
    spec = dyn.EnsembleSpec(15.0, n_energy=max(args.trajectories // 8, 1), n_phase=8)
    z0, v0, _ = dyn.thermal_initial_conditions(fr.poly_at(0), spec, sc.species, sc.constants)
    steps = dyn.n_steps_for(fr.duration, sc.dt) * len(z0)

    results = {}
    backends = {"numpy": _kernels.integrate_batch_numpy}
    if _kernels.integrate_batch_numba is not None:
        backends["numba"] = _kernels.integrate_batch_numba
        dyn.run_batch(fr, z0[:1], v0[:1], sc.dt, backend=backends["numba"])  # compile
    for name, kern in backends.items():
        out = {}

        def run():
            out["z"] = dyn.run_batch(fr, z0, v0, sc.dt, sc.species, sc.constants, backend=kern)[0]

        t = _time(run, args.repeat)
        results[name] = (t, out["z"])
        print(f"{name:6s} {len(z0):5d} trajectories  {t:8.3f} s  "
              f"{steps / t / 1e6:8.2f} M trajectory-steps/s")
    if len(results) == 2:
        dz = np.max(np.abs(results["numba"][1] - results["numpy"][1]))
        print(f"speedup numba/numpy: {results['numpy'][0] / results['numba'][0]:.1f}x, "
              f"max |dz| = {dz:.2e} m")


if __name__ == "__main__":
    main()

"""Command-line scenario runner.

Exit codes: 0 success, 2 configuration or usage error, 3 simulation failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

from . import dynamics as dyn
from . import experiments as ex
from .potential import NoConvergence, NotDoubleWell
from .scenario import Scenario, ConfigError
from .thermometry import Divergent, NoFit, NonMonotonic, read_flop_csv, write_flop_csv

EXIT_OK, EXIT_CONFIG, EXIT_SIM = 0, 2, 3
SIM_ERRORS = (dyn.IntegrationError, dyn.PreconditionError, dyn.UnresolvedPeaks,
              ex.CalibrationError, NotDoubleWell, NoConvergence, NoFit, NonMonotonic, Divergent)


class UsageError(ValueError):
    pass


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario JSON (defaults when omitted)")
    common.add_argument("--out", help="output directory (default: output.dir of the config)")
    common.add_argument("--seed", type=int, default=0, help="RNG seed for synthetic data")
    common.add_argument("--dry-run", action="store_true",
                        help="validate the config and print the resolved SI plan")
    common.add_argument("--no-filter", action="store_true", help="bypass the control-line filter")
    common.add_argument("--ideal-ec", action="store_true", help="disable E_c quantization")

    p = argparse.ArgumentParser(prog="exchcool", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("compensation-sweep", parents=[common],
                       help="separation and mode splitting over (E_c, alpha_c)")
    s.add_argument("--E-c", type=_floats, help="E_c grid in V/m (comma separated)")
    s.add_argument("--alpha-c", type=_floats, help="alpha_c grid in V/mm^2 (comma separated)")
    sub.add_parser("calibrate", parents=[common], help="find the resonant E_c")
    s = sub.add_parser("tex-sweep", parents=[common], help="exchange versus hold time")
    s.add_argument("--t-ex", type=_floats, help="t_ex grid in us (comma separated)")
    s = sub.add_parser("cooling-curve", parents=[common], help="final versus initial quanta")
    s.add_argument("--nbar", type=_floats, help="initial quanta (comma separated)")
    s.add_argument("--repeats", type=int, help="sequential exchanges per row")
    s = sub.add_parser("mode-freq", parents=[common], help="trap frequency versus separation")
    s.add_argument("--d", type=_floats, help="separations in um (comma separated)")
    s = sub.add_parser("thermometry", parents=[common], help="sideband thermometry readout")
    s.add_argument("--flop-csv", help="flop data (t_us, P_S, sigma_P); synthetic when omitted")
    s.add_argument("--sbr", nargs=3, type=int, metavar=("K_RED", "K_BLUE", "SHOTS"),
                   help="red/blue sideband counts for the ratio estimate")
    return p


def _scenario(args) -> Scenario:
    sc = Scenario.load(args.config) if args.config else Scenario.from_dict()
    return sc.with_overrides(no_filter=args.no_filter, ideal_ec=args.ideal_ec)


def _outdir(args, sc: Scenario) -> str:
    out = args.out or sc.cfg["output"]["dir"]
    os.makedirs(out, exist_ok=True)
    return out


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plan(args, sc: Scenario) -> dict:
    plan = sc.plan()
    plan["command"] = args.command
    axes = {
        "compensation-sweep": lambda: {"E_c_V_per_m": args.E_c or sc.grid("compensation_E_c_V_per_m"),
                                       "alpha_c_V_per_mm2": args.alpha_c or sc.grid(
                                           "compensation_alpha_c_V_per_mm2")},
        "tex-sweep": lambda: {"t_ex_s": [t * 1e-6 for t in (args.t_ex or sc.grid("t_ex_us"))]},
        "cooling-curve": lambda: {"nbar_init": args.nbar or sc.grid("cooling_nbar_init")},
        "mode-freq": lambda: {"d_m": [d * 1e-6 for d in (args.d or sc.grid("mode_freq_d_um"))]},
    }
    if args.command in axes:
        plan["axes"] = axes[args.command]()
    return plan


def _run(args, sc: Scenario, out: str) -> None:
    cmd = args.command
    if cmd == "compensation-sweep":
        r = ex.run_compensation_sweep(sc, args.E_c, args.alpha_c)
        r.write(os.path.join(out, "compensation_sweep.csv"),
                os.path.join(out, "compensation_sweep.json"))
    elif cmd == "calibrate":
        cal = ex.calibrate_resonance(sc)
        rows = [[E, g] for E, g in zip(cal["grid_V_per_m"], cal["grid_gain"])]
        ex.SweepResult(["E_c_V_per_m", "coolant_gain"], rows, ex._meta(sc)).write(
            os.path.join(out, "calibration.csv"))
        _write_json(os.path.join(out, "calibration.json"), {**ex._meta(sc), **cal})
        print(f"calibrated E_c = {cal['E_c_V_per_m']:.4f} V/m "
              f"(closed form {cal['closed_form_E_c_V_per_m']:.4f} V/m)")
    elif cmd == "tex-sweep":
        r = ex.run_tex_sweep(sc, args.t_ex)
        r.write(os.path.join(out, "tex_sweep.csv"), os.path.join(out, "tex_sweep.json"))
    elif cmd == "cooling-curve":
        r = ex.run_cooling_curve(sc, args.nbar, args.repeats)
        r.write(os.path.join(out, "cooling_curve.csv"), os.path.join(out, "cooling_curve.json"))
        if "removal_fit" in r.metadata:
            print(f"removal fraction (linear fit) = {r.metadata['removal_fit']:.4f}")
    elif cmd == "mode-freq":
        r = ex.run_mode_freq_curve(sc, args.d)
        r.write(os.path.join(out, "mode_freq.csv"), os.path.join(out, "mode_freq.json"))
    elif cmd == "thermometry":
        samples = None
        if args.flop_csv:
            try:
                samples = read_flop_csv(args.flop_csv)
            except (OSError, ValueError) as e:
                raise UsageError(str(e)) from None
            if not samples:
                raise UsageError(f"{args.flop_csv}: no flop samples")
        r, data = ex.run_thermometry(sc, samples, tuple(args.sbr) if args.sbr else None,
                                     seed=args.seed)
        r.write(os.path.join(out, "thermometry.csv"), os.path.join(out, "thermometry.json"))
        if samples is None:
            for label, s in data.items():
                write_flop_csv(os.path.join(out, f"flop_{label}.csv"), s)


def main(argv=None) -> int:
    warnings.filterwarnings("ignore", module="numba")
    try:
        args = _parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        sc = _scenario(args)
        if args.dry_run:
            print(json.dumps(_plan(args, sc), indent=2, sort_keys=True))
            return EXIT_OK
        out = _outdir(args, sc)
        _run(args, sc, out)
    except (ConfigError, UsageError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SIM_ERRORS as e:
        print(f"simulation failed: {e}", file=sys.stderr)
        return EXIT_SIM
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

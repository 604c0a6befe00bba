"""Calibration routines and sweeps producing plot-ready tables."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar

from . import dynamics as dyn
from .constants import PER_MM2, UM, US, rad_to_khz
from .potential import Compensation, NotDoubleWell, PolyPotential, pair_analysis, pair_equilibrium
from .scenario import Scenario
from .thermometry import (FlopSample, ThermalReadout, fit_nbar, flop_times, ratio_from_counts,
                          sideband_ratio_nbar, sideband_ratio_samples, synthetic_flop)
from .waveform import build, static_frames

try:
    from importlib.metadata import version as _version
    ARTIFACT_VERSION = _version("artifact")
except Exception:  # noqa: BLE001 - running from a source tree
    ARTIFACT_VERSION = "0.1.0"


class CalibrationError(RuntimeError):
    """No interior optimum inside the calibration window."""


class ProvenanceError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


@dataclass
class SweepResult:
    """One row per axis point plus provenance metadata."""
    columns: list
    rows: list
    metadata: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([np.nan if r[j] is None or r[j] == "" else r[j] for r in self.rows],
                        dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns + ["config_hash"])
        h = self.metadata.get("config_hash", "")
        for r in self.rows:
            w.writerow([_fmt(x) for x in r] + [h])
        return buf.getvalue()

    def write(self, path_csv, path_json=None) -> None:
        with open(path_csv, "w", newline="") as fh:
            fh.write(self.to_csv())
        if path_json is not None:
            with open(path_json, "w") as fh:
                json.dump(self.metadata, fh, indent=2, sort_keys=True, default=_fmt)
                fh.write("\n")

    @staticmethod
    def concat(parts: list) -> "SweepResult":
        if not parts:
            raise ValueError("nothing to concatenate")
        hashes = {p.metadata.get("config_hash") for p in parts}
        if len(hashes) != 1:
            raise ProvenanceError(f"mixed provenance: {sorted(map(str, hashes))}")
        cols = parts[0].columns
        if any(p.columns != cols for p in parts):
            raise ValueError("column mismatch")
        meta = dict(parts[0].metadata)
        return SweepResult(list(cols), [r for p in parts for r in p.rows], meta)


def _meta(sc: Scenario, **extra) -> dict:
    return {"config_hash": sc.config_hash, "artifact_version": ARTIFACT_VERSION, **extra}


def _kw(sc: Scenario) -> dict:
    return {"species": sc.species, "constants": sc.constants}


# --- compensation sweep ---

def probe_hold(sc: Scenario, E_c: float, alpha_c: float, hold: float, probe: float = 50e-9,
               sample_every: int = 10) -> dict:
    """Transport a1..b2 at one compensation setting, then keep holding.

    The b2 hold is extended by ``hold`` inside the (filtered) waveform, so the
    potential settles onto its commanded value as it would on the bench. The
    separation is the mean over the extension of the transported pair. The
    mode splitting is measured on the settled configuration with a small
    probe about its equilibrium, so residual transport motion (which can
    hide a mode or add anharmonic harmonics) does not enter the spectrum.
    """
    kw = _kw(sc)
    t_ex = sc.schedule().duration_of("b2")
    fr = sc.frames(E_c, alpha_c, t_ex=t_ex + hold, last="b2")
    t1 = fr.duration - hold
    z0 = np.array([pair_equilibrium(fr.poly_at(0), **kw)])
    z, v, status, _ = dyn.run_batch(fr, z0, np.zeros((1, 2)), sc.dt, duration=t1, **kw)
    dyn._raise_failures(status, sc.dt, "transport")
    n1 = dyn.n_steps_for(t1, sc.dt)
    _, _, status, rec = dyn.run_batch(fr, z, v, sc.dt, duration=hold, t0=n1 * sc.dt,
                                      record_every=sample_every, **kw)
    dyn._raise_failures(status, sc.dt, "hold")
    zr = rec[0][0]
    settled = fr.poly_at(-1)
    spec = dyn.extract_mode_splitting(settled, hold, probe, sc.dt, sample_every=sample_every, **kw)
    return {"separation": float(np.mean(zr[:, 1] - zr[:, 0])), "delta_Omega": spec.delta_Omega,
            "omega_plus": spec.omega_plus, "omega_minus": spec.omega_minus, "poly": settled}


def run_compensation_sweep(sc: Scenario, E_c_grid=None, alpha_c_grid=None,
                           hold: float | None = None) -> SweepResult:
    """Final separation and FFT mode splitting over an (E_c, alpha_c) grid.

    Grids are in V/m and V/mm^2. Per-point failures land in the status column.
    """
    E_grid = sc.grid("compensation_E_c_V_per_m") if E_c_grid is None else list(E_c_grid)
    a_grid = sc.grid("compensation_alpha_c_V_per_mm2") if alpha_c_grid is None else list(alpha_c_grid)
    hold = sc.cfg["sweeps"]["compensation_hold_us"] * US if hold is None else hold
    cols = ["alpha_c_V_per_mm2", "E_c_V_per_m", "separation_um", "delta_Omega_kHz",
            "static_separation_um", "static_delta_Omega_kHz", "status"]
    rows = []
    for a in a_grid:
        for E in E_grid:
            try:
                r = probe_hold(sc, E, a * PER_MM2, hold)
                try:
                    pa = pair_analysis(r["poly"], **_kw(sc))
                    st_d, st_dO = pa.d / UM, rad_to_khz(pa.delta_Omega)
                except (NotDoubleWell, ValueError, RuntimeError):
                    st_d = st_dO = math.nan
                rows.append([a, E, r["separation"] / UM, rad_to_khz(r["delta_Omega"]),
                             st_d, st_dO, "ok"])
            except (dyn.IntegrationError, dyn.UnresolvedPeaks, NotDoubleWell, ValueError,
                    RuntimeError) as e:
                rows.append([a, E, math.nan, math.nan, math.nan, math.nan,
                             f"failed: {type(e).__name__}"])
    res = SweepResult(cols, rows, _meta(sc, hold_s=hold))
    try:
        fit = resonance_line(res)
        res.metadata.update(fit)
    except ValueError as e:
        res.metadata["resonance_line_error"] = str(e)
    if sc.stray is not None:
        res.metadata["closed_form_slope_V_per_m_per_V_per_mm2"] = 2 * (
            -sc.stray.gamma / (4 * sc.stray.beta)) * PER_MM2
    return res


def row_minimum(E, dO) -> float:
    """E_c of minimum splitting: parabola through dO^2 around the discrete minimum."""
    E, dO = np.asarray(E, float), np.asarray(dO, float)
    ok = np.isfinite(dO)
    E, y = E[ok], dO[ok] ** 2
    if len(E) < 3:
        raise ValueError("too few valid points in row")
    i = int(np.argmin(y))
    if i == 0 or i == len(E) - 1:
        raise ValueError("row minimum at the grid edge")
    lo, hi = max(i - 2, 0), min(i + 3, len(E))
    c = np.polyfit(E[lo:hi], y[lo:hi], 2)
    if not c[0] > 0:
        return float(E[i])
    return float(-c[1] / (2 * c[0]))


def resonance_line(res: SweepResult) -> dict:
    """Line through the per-row minimum-splitting E_c versus alpha_c."""
    a = res.column("alpha_c_V_per_mm2")
    E = res.column("E_c_V_per_m")
    dO = res.column("delta_Omega_kHz")
    xs, ys = [], []
    for av in sorted(set(a.tolist())):
        m = a == av
        try:
            ys.append(row_minimum(E[m], dO[m]))
            xs.append(av)
        except ValueError:
            continue
    if len(xs) < 2:
        raise ValueError("fewer than two rows with an interior minimum")
    slope, icpt = np.polyfit(xs, ys, 1)
    return {"resonance_alpha_c_V_per_mm2": xs, "resonance_E_c_V_per_m": ys,
            "resonance_slope_V_per_m_per_V_per_mm2": float(slope),
            "resonance_intercept_V_per_m": float(icpt)}


# --- calibration ---

def exchange_gain(sc: Scenario, E_c: float, nbar_init: float | None = None,
                  t_ex: float | None = None) -> dict:
    """Transfer observables for one on-resonance E_c (filtered full transport)."""
    nb = sc.cfg["compensation"]["calibration"]["nbar_init"] if nbar_init is None else nbar_init
    fr = sc.frames(E_c, t_ex=t_ex)
    hot = dyn.ensemble_exchange(fr, sc.ensemble_spec(nb), sc.dt, guard=False, **_kw(sc))
    cold = dyn.ensemble_exchange(fr, sc.ensemble_spec(0.0), sc.dt, guard=False, **_kw(sc))
    return {"E_c": E_c, "nbar_comp": hot.nbar_comp, "nbar_cool": hot.nbar_cool,
            "floor_comp": cold.nbar_comp, "floor_cool": cold.nbar_cool,
            "gain": (hot.nbar_cool - cold.nbar_cool) / nb,
            "transferred": dyn.transfer_fraction(hot.nbar_comp, cold.nbar_comp, nb)}


def calibrate_resonance(sc: Scenario, window: tuple | None = None) -> dict:
    """E_c maximizing the coolant energy gain of one exchange.

    Quantized scenarios search the quantization grid; otherwise a coarse grid
    is refined by bounded scalar minimization. Deterministic.
    """
    cal = sc.cfg["compensation"]["calibration"]
    center = sc.closed_form_E_c()
    if window is None:
        window = (center - cal["half_window_V_per_m"], center + cal["half_window_V_per_m"])
    lo, hi = window
    q = sc.quantization
    cache: dict = {}

    def gain(E):
        key = round(float(E), 12)
        if key not in cache:
            cache[key] = exchange_gain(sc, float(E))["gain"]
        return cache[key]

    if q.enabled:
        step = q.E_c_step
        grid = np.arange(math.ceil(lo / step), math.floor(hi / step) + 1) * step
    else:
        h = cal["coarse_step_V_per_m"]
        grid = lo + h * np.arange(int(math.floor((hi - lo) / h + 1e-9)) + 1)
    if len(grid) < 3:
        raise CalibrationError("calibration window holds fewer than three grid points")
    g = np.array([gain(E) for E in grid])
    i = int(np.argmax(g))
    if i == 0 or i == len(grid) - 1:
        raise CalibrationError(
            f"optimum at the window edge ({grid[i]:.3f} V/m in [{lo:.3f}, {hi:.3f}])")
    best = float(grid[i])
    if not q.enabled:
        r = minimize_scalar(lambda E: -gain(E), bounds=(grid[i - 1], grid[i + 1]),
                            method="bounded", options={"xatol": cal["tolerance_V_per_m"]})
        if -r.fun >= g[i]:
            best = float(r.x)
    return {"E_c_V_per_m": best, "gain": gain(best), "closed_form_E_c_V_per_m": center,
            "window_V_per_m": [float(lo), float(hi)], "quantized": bool(q.enabled),
            "grid_V_per_m": [float(x) for x in grid], "grid_gain": [float(x) for x in g]}


def resolve_E_c(sc: Scenario) -> tuple:
    """(E_c, calibration record or None) for commands needing an on-resonance field."""
    if sc.E_c_on is not None:
        return sc.quantization.quantize(sc.E_c_on), None
    cal = calibrate_resonance(sc)
    return cal["E_c_V_per_m"], cal


def sensitivity(sc: Scenario, E_c: float, offset: float = 0.7) -> dict:
    """Transferred fraction at E_c and at E_c +- offset."""
    base = exchange_gain(sc, E_c)["transferred"]
    up = exchange_gain(sc, E_c + offset)["transferred"]
    dn = exchange_gain(sc, E_c - offset)["transferred"]
    return {"transferred": base, "transferred_plus": up, "transferred_minus": dn,
            "drop_plus": base - up, "drop_minus": base - dn, "drop_mean": base - 0.5 * (up + dn)}


# --- t_ex sweep ---

def run_tex_sweep(sc: Scenario, t_ex_grid=None, E_c: float | None = None,
                  nbar_init: float = 15.0) -> SweepResult:
    """Exchange curve versus hold time (t_ex in us)."""
    grid = sc.grid("t_ex_us") if t_ex_grid is None else list(t_ex_grid)
    cal = None
    if E_c is None:
        E_c, cal = resolve_E_c(sc)
    spec = sc.ensemble_spec(nbar_init)
    pts = dyn.sweep_t_ex(lambda t: sc.frames(E_c, t_ex=t), [t * US for t in grid], spec,
                         sc.dt, **_kw(sc))
    floors = dyn.sweep_t_ex(lambda t: sc.frames(E_c, t_ex=t), [t * US for t in grid],
                            sc.ensemble_spec(0.0), sc.dt, **_kw(sc))
    cols = ["t_ex_us", "nbar_comp", "nbar_cool", "floor_comp", "floor_cool"]
    rows = [[t, p.nbar_comp, p.nbar_cool, f.nbar_comp, f.nbar_cool]
            for t, p, f in zip(grid, pts, floors)]
    comp = np.array([p.nbar_comp for p in pts])
    meta = _meta(sc, E_c_V_per_m=E_c, nbar_init=nbar_init,
                 argmin_t_ex_us=float(grid[int(np.argmin(comp))]))
    if cal is not None:
        meta["calibration"] = cal
    return SweepResult(cols, rows, meta)


def beat_period(t, y) -> float:
    """Dominant oscillation period of a sampled curve (sinusoid least squares)."""
    t, y = np.asarray(t, float), np.asarray(y, float)

    def resid(T):
        A = np.column_stack([np.ones_like(t), np.cos(2 * np.pi * t / T), np.sin(2 * np.pi * t / T)])
        c, *_ = np.linalg.lstsq(A, y, rcond=None)
        return float(np.sum((A @ c - y) ** 2))

    span = t[-1] - t[0]
    trial = np.linspace(2 * (t[1] - t[0]), 2 * span, 400)
    i = int(np.argmin([resid(T) for T in trial]))
    r = minimize_scalar(resid, bounds=(trial[max(i - 1, 0)], trial[min(i + 1, len(trial) - 1)]),
                        method="bounded")
    return float(r.x)


def sinusoid_residual(t, y, period: float) -> float:
    """RMS residual of the best sinusoid at a fixed period, relative to the swing."""
    t, y = np.asarray(t, float), np.asarray(y, float)
    A = np.column_stack([np.ones_like(t), np.cos(2 * np.pi * t / period),
                         np.sin(2 * np.pi * t / period)])
    c, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(np.sqrt(np.mean((A @ c - y) ** 2)) / (np.ptp(y) or 1.0))


# --- cooling curve ---

def sequential_exchange(sc: Scenario, E_c: float, nbar_init: float, repeats: int = 1):
    """Quanta after ``repeats`` exchanges, coolant reset to rest in between.

    Returns (EnsembleResult, frames).
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    kw = _kw(sc)
    fr = sc.frames(E_c)
    spec = sc.ensemble_spec(nbar_init)
    z, v, w = dyn.thermal_initial_conditions(fr.poly_at(0), spec, **kw)
    cool = 1 - spec.computational
    z_rest = pair_equilibrium(fr.poly_at(0), **kw)[cool]
    for k in range(repeats):
        if k:
            z[:, cool], v[:, cool] = z_rest, 0.0
        z, v = dyn.propagate(fr, z, v, sc.dt, **kw)
    ro = dyn.readout_for(fr.poly_at(-1), **kw)
    return dyn.reduce_ensemble(dyn.final_quanta(z, v, ro, sc.constants), w,
                               spec.computational), fr


def run_cooling_curve(sc: Scenario, nbar_list=None, repeats: int | None = None,
                      E_c: float | None = None) -> SweepResult:
    """Final versus initial quanta; removal fraction from a linear fit."""
    nbar_list = sc.grid("cooling_nbar_init") if nbar_list is None else list(nbar_list)
    repeats = int(sc.cfg["sweeps"]["cooling_repeats"]) if repeats is None else repeats
    cal = None
    if E_c is None:
        E_c, cal = resolve_E_c(sc)
    floor, _ = sequential_exchange(sc, E_c, 0.0, repeats)
    cols = ["nbar_init", "nbar_comp", "nbar_cool", "floor_comp", "floor_cool",
            "removed_fraction", "waveform_duration_us", "n_frames"]
    rows = []
    for nb in nbar_list:
        r, fr = sequential_exchange(sc, E_c, nb, repeats)
        rows.append([nb, r.nbar_comp, r.nbar_cool, floor.nbar_comp, floor.nbar_cool,
                     dyn.transfer_fraction(r.nbar_comp, floor.nbar_comp, nb),
                     fr.duration / US, len(fr.frames)])
    x = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    meta = _meta(sc, E_c_V_per_m=E_c, repeats=repeats)
    if len(x) >= 2:
        slope, icpt = np.polyfit(x, y, 1)
        meta.update(removal_fit=float(1 - slope), fit_intercept=float(icpt))
    if cal is not None:
        meta["calibration"] = cal
    return SweepResult(cols, rows, meta)


# --- mode frequency profile ---

def run_mode_freq_curve(sc: Scenario, d_grid=None) -> SweepResult:
    """Trap frequency (no Coulomb) versus separation: profile vs built frames.

    Frames come from the pure design waveform (no stray overlay, no
    compensation); the trap curvature is evaluated at the two-ion equilibrium.
    """
    d_grid = sc.grid("mode_freq_d_um") if d_grid is None else list(d_grid)
    sch = replace(sc.schedule(), stray=PolyPotential(), compensation_off=Compensation(),
                  compensation_on=Compensation())
    fr = build(sch, sc.sample_rate)
    t = fr.times
    t_end = sch.bounds("a2")[1]
    inward = t <= t_end
    sep, tab = fr.separation[inward], fr.combined()[inward]
    order = np.argsort(sep)
    sep, tab = sep[order], tab[order]
    q, m = sc.species.charge, sc.species.mass
    rows = []
    for d in d_grid:
        dm = d * UM
        coeffs = [np.interp(dm, sep, tab[:, j]) for j in range(4)]
        poly = PolyPotential(*coeffs)
        z1, z2 = pair_equilibrium(poly, sc.species, sc.constants)
        w_frames = math.sqrt(q * poly.curvature(z2) / m)
        w_prof = float(sch.omega(dm))
        rows.append([d, rad_to_khz(w_prof), rad_to_khz(w_frames), w_frames / w_prof - 1,
                     (z2 - z1) / UM])
    cols = ["d_um", "omega_profile_kHz", "omega_frames_kHz", "rel_diff", "ion_separation_um"]
    return SweepResult(cols, rows, _meta(sc, omega_max_kHz=rad_to_khz(sch.omega_max)))


# --- thermometry ---

def _readout_row(label, nbar_true, fit: ThermalReadout, sbr: ThermalReadout | None):
    return [label, nbar_true, fit.nbar, fit.sigma_lo, fit.sigma_hi,
            None if sbr is None else sbr.nbar, None if sbr is None else sbr.sigma_lo,
            None if sbr is None else sbr.sigma_hi]


THERMO_COLUMNS = ["label", "nbar_true", "nbar_fit", "fit_sigma_lo", "fit_sigma_hi",
                  "nbar_sbr", "sbr_sigma_lo", "sbr_sigma_hi"]


def run_thermometry(sc: Scenario, samples: list | None = None, sbr_counts: tuple | None = None,
                    seed: int = 0) -> tuple:
    """Flop fits (and sideband ratio when counts are available).

    With ``samples`` the given data are fitted; otherwise a synthetic
    pre/post pair is generated from the thermometry block. Returns
    (SweepResult, {label: flop samples}).
    """
    params = sc.sideband
    th = sc.cfg["thermometry"]
    shots = int(th["shots"])
    rows, data = [], {}
    if samples is not None:
        if len(samples) == 0:
            raise ValueError("no flop samples")
        fit = fit_nbar(samples, params)
        sbr = None
        if sbr_counts is not None:
            r, sr = ratio_from_counts(*sbr_counts)
            sbr = sideband_ratio_nbar(r, sr)
        rows.append(_readout_row("input", None, fit, sbr))
        data["input"] = samples
    else:
        rng = np.random.default_rng(seed)
        for label, nb in (("pre", th["nbar_pre"]), ("post", th["nbar_post"])):
            times = flop_times(nb, params, int(th["n_times"]), th["flop_periods"])
            s = synthetic_flop(times, nb, params, shots, rng)
            fit = fit_nbar(s, params, shots=shots)
            sbr = None
            if label == "post":
                # the ratio estimator is only well conditioned near the ground state
                r, sr = ratio_from_counts(*sideband_ratio_samples(nb, shots, rng), shots)
                sbr = sideband_ratio_nbar(r, sr)
            rows.append(_readout_row(label, nb, fit, sbr))
            data[label] = s
    return SweepResult(THERMO_COLUMNS, rows, _meta(sc, seed=seed)), data


def coverage(nbar: float, params, shots: int, reps: int, rng: np.random.Generator,
             n_times: int = 41, periods: float = 1.5, z: float = 1.96) -> dict:
    """Fraction of noisy fits whose z-sigma interval covers the true n-bar."""
    times = flop_times(nbar, params, n_times, periods)
    hits, zs = 0, []
    for _ in range(reps):
        fit = fit_nbar(synthetic_flop(times, nbar, params, shots, rng), params, shots=shots)
        dz = (fit.nbar - nbar) / fit.sigma
        zs.append(dz)
        hits += abs(dz) <= z
    zs = np.array(zs)
    return {"coverage": hits / reps, "z_mean": float(zs.mean()), "z_std": float(zs.std())}


__all__ = [
    "SweepResult", "CalibrationError", "ProvenanceError", "run_compensation_sweep",
    "resonance_line", "calibrate_resonance", "exchange_gain", "sensitivity", "run_tex_sweep",
    "run_cooling_curve", "sequential_exchange", "run_mode_freq_curve", "run_thermometry",
    "coverage", "beat_period", "sinusoid_residual", "FlopSample",
]

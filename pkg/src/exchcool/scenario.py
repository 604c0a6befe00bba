"""Scenario configuration: JSON with unit-suffixed keys, resolved to SI objects.

The user document is merged over ``DEFAULTS``; unknown keys and bad values
raise ``ConfigError`` carrying the line of the offending key.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass, replace
from functools import cached_property

from . import filters
from .constants import CA40, CODATA, PER_MM2, UM, US, IonSpecies, PhysicalConstants, khz_to_rad
from .dynamics import EnsembleSpec
from .potential import Compensation, PolyPotential, resonant_field
from .thermometry import SidebandParams
from .waveform import (DEFAULT_DURATIONS_US, SEGMENT_IDS, ControlFrameSeries, QuantizationSpec,
                       TransportSchedule, build, correction_for, default_schedule)

DEFAULTS: dict = {
    "constants": {
        "vacuum_permittivity_F_per_m": CODATA.vacuum_permittivity,
        "reduced_planck_J_s": CODATA.reduced_planck,
        "boltzmann_J_per_K": CODATA.boltzmann,
    },
    "species": {"name": CA40.name, "mass_kg": CA40.mass, "charge_C": CA40.charge},
    "stray": {
        "enabled": True,
        "E0_V_per_m": -23.0,
        "alpha_V_per_mm2": -1.3,
        "gamma_V_per_mm3": -120.0,
        "beta_V_per_mm4": 8.4e3,
    },
    "schedule": {
        "durations_us": dict(zip(SEGMENT_IDS, DEFAULT_DURATIONS_US)),
        "d_start_um": 140.0,
        "d_mid_um": 77.0,
        "d_in_um": 14.0,
        "omega_max_kHz": 1300.0,
        "omega_in_kHz": 450.0,
        "corrections_enabled": True,
        "sample_rate_MHz": 2.0,
    },
    "filter": {"enabled": True, "order": 6, "cutoff_kHz": 150.0, "ripple_dB": filters.DEFAULT_RIPPLE_DB},
    "compensation": {
        "off": {"E_c_V_per_m": 24.0, "alpha_c_V_per_mm2": -0.16},
        # E_c "calibrate": search for the optimum; a number is used as given
        "on": {"E_c_V_per_m": "calibrate", "alpha_c_V_per_mm2": 1.33},
        "quantization": {"enabled": True, "E_c_step_V_per_m": 1.0},
        "calibration": {"half_window_V_per_m": 6.0, "coarse_step_V_per_m": 0.5,
                        "tolerance_V_per_m": 0.01, "nbar_init": 15.0},
    },
    "ensemble": {"nbar_init": 15.0, "n_energy": 16, "n_phase": 8, "dt_ns": 1.0},
    "thermometry": {
        "eta": 0.06,
        "omega0_kHz": 250.0,
        "shots": 200,
        "n_times": 41,
        "flop_periods": 1.5,
        "tau_us": 5.0,
        "nbar_pre": 20.8,
        "nbar_post": 1.85,
    },
    "sweeps": {
        "compensation_E_c_V_per_m": {"start": 4.0, "stop": 26.0, "step": 1.0},
        "compensation_alpha_c_V_per_mm2": {"start": 0.2, "stop": 1.6, "step": 0.2},
        "compensation_hold_us": 500.0,
        "t_ex_us": {"start": 0.0, "stop": 16.0, "step": 0.5},
        "cooling_nbar_init": [15.0, 50.0, 106.0],
        "cooling_repeats": 1,
        "mode_freq_d_um": {"start": 14.0, "stop": 140.0, "step": 7.0},
    },
    "output": {"dir": "out", "trace": False, "trace_every": 100},
}


class ConfigError(ValueError):
    """Invalid scenario configuration; ``line`` points into the source text."""

    def __init__(self, msg: str, line: int | None = None, source: str | None = None):
        where = f"{source or '<config>'}:{line}: " if line else f"{source or '<config>'}: "
        super().__init__(where + msg)
        self.line = line


def _line_of(text: str | None, path: tuple) -> int | None:
    """Line of the last key in ``path``, searching inside each parent in turn."""
    if not text or not path:
        return None
    pos = 0
    for key in path:
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            break
        pos = m.start()
    return text.count("\n", 0, pos) + 1 if pos else None


def _merge(base: dict, user: dict, text, source, path=()) -> dict:
    out = copy.deepcopy(base)
    for k, v in user.items():
        p = path + (k,)
        if k not in base:
            raise ConfigError(f"unknown key {'.'.join(p)}", _line_of(text, p), source)
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{'.'.join(p)} must be an object", _line_of(text, p), source)
            out[k] = _merge(base[k], v, text, source, p)
        else:
            out[k] = v
    return out


def _grid(spec) -> list:
    """Explicit list or {start, stop, step} (stop inclusive)."""
    if isinstance(spec, dict):
        a, b, h = float(spec["start"]), float(spec["stop"]), float(spec["step"])
        if not h > 0:
            raise ValueError("grid step must be positive")
        n = int(math.floor((b - a) / h + 1e-9)) + 1
        return [round(a + i * h, 12) for i in range(n)]
    return [float(x) for x in spec]


@dataclass(frozen=True)
class Scenario:
    cfg: dict
    source: str | None = None
    text: str | None = None

    # --- construction ---
    @classmethod
    def from_dict(cls, user: dict | None = None, text: str | None = None,
                  source: str | None = None) -> "Scenario":
        cfg = _merge(DEFAULTS, user or {}, text, source)
        sc = cls(cfg, source, text)
        sc.validate()
        return sc

    @classmethod
    def from_json(cls, text: str, source: str | None = None) -> "Scenario":
        try:
            user = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e.msg}", e.lineno, source) from None
        if not isinstance(user, dict):
            raise ConfigError("top level must be an object", 1, source)
        return cls.from_dict(user, text, source)

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_json(fh.read(), str(path))

    def _fail(self, path: tuple, msg: str):
        raise ConfigError(f"{'.'.join(path)}: {msg}", _line_of(self.text, path), self.source)

    def _num(self, path: tuple, positive=False, nonneg=False, integer=False):
        v = self.cfg
        for k in path:
            v = v[k]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self._fail(path, f"expected a finite number, got {v!r}")
        if integer and int(v) != v:
            self._fail(path, f"expected an integer, got {v!r}")
        if positive and not v > 0:
            self._fail(path, f"must be > 0, got {v!r}")
        if nonneg and v < 0:
            self._fail(path, f"must be >= 0, got {v!r}")
        return v

    def validate(self):
        c = self.cfg
        for k in c["constants"]:
            self._num(("constants", k), positive=True)
        self._num(("species", "mass_kg"), positive=True)
        self._num(("species", "charge_C"), positive=True)
        for k in ("E0_V_per_m", "alpha_V_per_mm2", "gamma_V_per_mm3", "beta_V_per_mm4"):
            self._num(("stray", k))
        if c["stray"]["enabled"] and not c["stray"]["beta_V_per_mm4"] > 0:
            self._fail(("stray", "beta_V_per_mm4"), "must be > 0")
        durs = c["schedule"]["durations_us"]
        if set(durs) != set(SEGMENT_IDS):
            self._fail(("schedule", "durations_us"), f"needs exactly the segments {list(SEGMENT_IDS)}")
        for k in SEGMENT_IDS:
            self._num(("schedule", "durations_us", k), nonneg=True)
        for k in ("d_start_um", "d_mid_um", "d_in_um", "omega_max_kHz", "omega_in_kHz", "sample_rate_MHz"):
            self._num(("schedule", k), positive=True)
        self._num(("filter", "order"), positive=True, integer=True)
        self._num(("filter", "cutoff_kHz"), positive=True)
        self._num(("filter", "ripple_dB"), positive=True)
        for side in ("off", "on"):
            self._num(("compensation", side, "alpha_c_V_per_mm2"))
        self._num(("compensation", "off", "E_c_V_per_m"))
        if c["compensation"]["on"]["E_c_V_per_m"] != "calibrate":
            self._num(("compensation", "on", "E_c_V_per_m"))
        self._num(("compensation", "quantization", "E_c_step_V_per_m"), positive=True)
        for k in c["compensation"]["calibration"]:
            self._num(("compensation", "calibration", k), positive=True)
        self._num(("ensemble", "nbar_init"), nonneg=True)
        for k in ("n_energy", "n_phase"):
            self._num(("ensemble", k), positive=True, integer=True)
        self._num(("ensemble", "dt_ns"), positive=True)
        for k in ("eta", "omega0_kHz", "shots", "n_times", "flop_periods", "tau_us"):
            self._num(("thermometry", k), positive=True)
        for k in ("nbar_pre", "nbar_post"):
            self._num(("thermometry", k), nonneg=True)
        self._num(("sweeps", "compensation_hold_us"), positive=True)
        self._num(("sweeps", "cooling_repeats"), positive=True, integer=True)
        for k in ("compensation_E_c_V_per_m", "compensation_alpha_c_V_per_mm2", "t_ex_us",
                  "cooling_nbar_init", "mode_freq_d_um"):
            try:
                g = _grid(c["sweeps"][k])
            except (KeyError, TypeError, ValueError) as e:
                self._fail(("sweeps", k), f"bad grid ({e})")
            if not g:
                self._fail(("sweeps", k), "empty grid")
        # building these surfaces the remaining physical constraints
        for path, fn in ((("schedule",), lambda: self.schedule()),
                         (("filter",), lambda: self.filter),
                         (("species",), lambda: self.species),
                         (("constants",), lambda: self.constants)):
            try:
                fn()
            except (ValueError, filters.FilterError) as e:
                self._fail(path, str(e))

    # --- variants ---
    def with_overrides(self, no_filter: bool = False, ideal_ec: bool = False,
                       **blocks) -> "Scenario":
        cfg = copy.deepcopy(self.cfg)
        if no_filter:
            cfg["filter"]["enabled"] = False
        if ideal_ec:
            cfg["compensation"]["quantization"]["enabled"] = False
        for path, value in blocks.items():
            *parents, leaf = path.split("__")
            node = cfg
            for k in parents:
                node = node[k]
            node[leaf] = value
        sc = Scenario(cfg, self.source, None)
        sc.validate()
        return sc

    @cached_property
    def config_hash(self) -> str:
        blob = json.dumps(self.cfg, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # --- resolved objects ---
    @cached_property
    def constants(self) -> PhysicalConstants:
        c = self.cfg["constants"]
        return PhysicalConstants(c["vacuum_permittivity_F_per_m"], c["reduced_planck_J_s"],
                                 c["boltzmann_J_per_K"])

    @cached_property
    def species(self) -> IonSpecies:
        s = self.cfg["species"]
        return IonSpecies(s["mass_kg"], s["charge_C"], s["name"])

    @cached_property
    def stray(self) -> PolyPotential | None:
        """Characterized potential at the exchange point, or None when disabled."""
        s = self.cfg["stray"]
        if not s["enabled"]:
            return None
        return PolyPotential.from_mm_units(s["E0_V_per_m"], s["alpha_V_per_mm2"],
                                           s["gamma_V_per_mm3"], s["beta_V_per_mm4"])

    @property
    def sample_rate(self) -> float:
        return self.cfg["schedule"]["sample_rate_MHz"] * 1e6

    @cached_property
    def filter(self) -> filters.DiscreteFilter | None:
        f = self.cfg["filter"]
        if not f["enabled"]:
            return None
        return filters.design_lowpass(filters.FilterSpec(
            self.sample_rate, int(f["order"]), f["cutoff_kHz"] * 1e3, f["ripple_dB"]))

    @property
    def quantization(self) -> QuantizationSpec:
        q = self.cfg["compensation"]["quantization"]
        return QuantizationSpec(q["E_c_step_V_per_m"], bool(q["enabled"]))

    @property
    def dt(self) -> float:
        return self.cfg["ensemble"]["dt_ns"] * 1e-9

    def ensemble_spec(self, nbar_init: float | None = None) -> EnsembleSpec:
        e = self.cfg["ensemble"]
        nb = e["nbar_init"] if nbar_init is None else nbar_init
        return EnsembleSpec(float(nb), int(e["n_energy"]), int(e["n_phase"]))

    @property
    def compensation_off(self) -> Compensation:
        o = self.cfg["compensation"]["off"]
        return Compensation(o["E_c_V_per_m"], o["alpha_c_V_per_mm2"] * PER_MM2)

    @property
    def alpha_c_on(self) -> float:
        return self.cfg["compensation"]["on"]["alpha_c_V_per_mm2"] * PER_MM2

    @property
    def E_c_on(self) -> float | None:
        """Configured on-resonance E_c (V/m), None when it is to be calibrated."""
        v = self.cfg["compensation"]["on"]["E_c_V_per_m"]
        return None if v == "calibrate" else float(v)

    def closed_form_E_c(self, alpha_c: float | None = None) -> float:
        a = self.alpha_c_on if alpha_c is None else alpha_c
        return 0.0 if self.stray is None else resonant_field(a, self.stray)

    @property
    def sideband(self) -> SidebandParams:
        t = self.cfg["thermometry"]
        return SidebandParams(t["eta"], khz_to_rad(t["omega0_kHz"]))

    def grid(self, key: str) -> list:
        return _grid(self.cfg["sweeps"][key])

    # --- waveforms ---
    def schedule(self, E_c: float | None = None, alpha_c: float | None = None,
                 t_ex: float | None = None, last: str | None = None) -> TransportSchedule:
        s = self.cfg["schedule"]
        durs = {k: s["durations_us"][k] * US for k in SEGMENT_IDS}
        base = default_schedule(
            d_start=s["d_start_um"] * UM, d_mid=s["d_mid_um"] * UM, d_in=s["d_in_um"] * UM,
            omega_max=khz_to_rad(s["omega_max_kHz"]), omega_in=khz_to_rad(s["omega_in_kHz"]),
            corrections_enabled=bool(s["corrections_enabled"]),
            species=self.species, constants=self.constants).with_durations(**durs)
        if self.stray is not None:
            base = replace(base, stray=correction_for(self.stray, base))
        on = Compensation(0.0 if E_c is None else E_c,
                          self.alpha_c_on if alpha_c is None else alpha_c)
        sch = replace(base, compensation_off=self.compensation_off, compensation_on=on)
        if t_ex is not None:
            sch = sch.with_t_ex(t_ex)
        if last is not None:
            sch = sch.truncated(last)
        return sch

    def frames(self, E_c: float | None = None, alpha_c: float | None = None,
               t_ex: float | None = None, last: str | None = None,
               filtered: bool | None = None) -> ControlFrameSeries:
        """Built (and by default filtered) control frames for one setting."""
        raw = build(self.schedule(E_c, alpha_c, t_ex, last), self.sample_rate, self.quantization)
        use = self.filter is not None if filtered is None else filtered
        if not use:
            return raw
        filt = self.filter or filters.design_lowpass(filters.FilterSpec(self.sample_rate))
        return filters.apply(filt, raw)

    def plan(self) -> dict:
        """Resolved SI-unit plan for --dry-run."""
        sch = self.schedule(self.E_c_on)
        st = self.stray
        return {
            "config_hash": self.config_hash,
            "species": {"mass_kg": self.species.mass, "charge_C": self.species.charge},
            "stray_SI": None if st is None else
            {"E0": st.E0, "alpha": st.alpha, "gamma": st.gamma, "beta": st.beta},
            "segments_s": {s.id: s.duration for s in sch.segments},
            "total_duration_s": sch.total_duration,
            "d_start_m": sch.d_start, "d_mid_m": sch.d_mid, "d_in_m": sch.d_in,
            "omega_max_rad_s": sch.omega_max, "omega_in_rad_s": sch.omega_in,
            "sample_rate_Hz": self.sample_rate,
            "filter": None if self.filter is None else
            {"order": self.filter.spec.order, "cutoff_Hz": self.filter.spec.cutoff,
             "ripple_dB": self.filter.spec.ripple_db},
            "compensation_off": {"E_c": self.compensation_off.E_c,
                                 "alpha_c": self.compensation_off.alpha_c},
            "compensation_on": {"E_c": self.E_c_on if self.E_c_on is not None else "calibrate",
                                "alpha_c": self.alpha_c_on},
            "closed_form_E_c": self.closed_form_E_c(),
            "quantization": {"enabled": self.quantization.enabled,
                             "E_c_step": self.quantization.E_c_step},
            "dt_s": self.dt,
            "ensemble": {"nbar_init": self.ensemble_spec().nbar_init,
                         "n_energy": self.ensemble_spec().n_energy,
                         "n_phase": self.ensemble_spec().n_phase},
        }

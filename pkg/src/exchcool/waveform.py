"""Staged exchange-transport schedule and its sampled control frames.

The roundtrip has three parts: approach (a1, a2, s_a), exchange (b1, b2, b3,
s_b) and separation (c1, c2, s_c). Each frame carries the design quartic
(E0, alpha, gamma, beta) plus the compensation channels (E_c, alpha_c).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .constants import CA40, CODATA, UM, US, IonSpecies, PhysicalConstants, khz_to_rad
from .potential import Compensation, PolyPotential, two_ion_double_well

SEGMENT_IDS = ("a1", "a2", "s_a", "b1", "b2", "b3", "s_b", "c1", "c2", "s_c")
SEGMENT_KINDS = {
    "a1": "separation-schedule", "a2": "separation-schedule", "s_a": "hold",
    "b1": "compensation-ramp", "b2": "hold", "b3": "compensation-ramp", "s_b": "hold",
    "c1": "separation-schedule", "c2": "separation-schedule", "s_c": "hold",
}
DEFAULT_DURATIONS_US = (5.0, 8.75, 17.5, 2.0, 5.8, 2.0, 7.5, 31.75, 5.0, 22.0)

CHANNELS = ("E0", "alpha", "gamma", "beta", "E_c", "alpha_c")


@dataclass(frozen=True)
class SegmentSpec:
    id: str
    duration: float
    kind: str

    def __post_init__(self):
        if self.id not in SEGMENT_IDS:
            raise ValueError(f"unknown segment {self.id!r}")
        if not self.duration >= 0:
            raise ValueError(f"segment {self.id} has negative duration")


@dataclass(frozen=True)
class QuantizationSpec:
    E_c_step: float = 1.0
    enabled: bool = False

    def __post_init__(self):
        if self.enabled and not self.E_c_step > 0:
            raise ValueError("quantization step must be positive")

    def quantize(self, E_c: float) -> float:
        if not self.enabled:
            return E_c
        return round(E_c / self.E_c_step) * self.E_c_step


def omega_profile_default(d: float, d_in: float = 14 * UM, d_start: float = 140 * UM,
                          omega_in: float = khz_to_rad(450), omega_max: float = khz_to_rad(1300)):
    """Trap frequency (no Coulomb) along the approach.

    Quadratic in the normalized separation u with zero slope at d_start, so
    frequencies stay high over the fast outer leg and fall steeply near d_in.
    """
    u = np.clip((np.asarray(d, dtype=float) - d_in) / (d_start - d_in), 0.0, 1.0)
    w = omega_in + (omega_max - omega_in) * (1.0 - (1.0 - u) ** 2)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class TransportSchedule:
    segments: tuple = field(default_factory=lambda: tuple(
        SegmentSpec(i, t * US, SEGMENT_KINDS[i]) for i, t in zip(SEGMENT_IDS, DEFAULT_DURATIONS_US)))
    d_start: float = 140 * UM
    d_mid: float = 77 * UM
    d_in: float = 14 * UM
    omega_max: float = khz_to_rad(1300)
    omega_in: float = khz_to_rad(450)
    compensation_off: Compensation = Compensation()
    compensation_on: Compensation = Compensation()
    # correction overlay (characterized minus design at d_in); zero = no stray
    stray: PolyPotential = PolyPotential()
    corrections_enabled: bool = True
    species: IonSpecies = CA40
    constants: PhysicalConstants = CODATA
    omega_profile: Callable | None = None

    def __post_init__(self):
        ids = tuple(s.id for s in self.segments)
        if ids != SEGMENT_IDS:
            raise ValueError(f"segments must be {SEGMENT_IDS}, got {ids}")
        if not (0 < self.d_in < self.d_mid < self.d_start):
            raise ValueError("need 0 < d_in < d_mid < d_start")
        if not (0 < self.omega_in < self.omega_max):
            raise ValueError("need 0 < omega_in < omega_max")

    # --- timing ---
    @property
    def total_duration(self) -> float:
        return sum(s.duration for s in self.segments)

    def duration_of(self, seg_id: str) -> float:
        return self.segments[SEGMENT_IDS.index(seg_id)].duration

    def bounds(self, seg_id: str) -> tuple:
        i = SEGMENT_IDS.index(seg_id)
        t0 = sum(s.duration for s in self.segments[:i])
        return t0, t0 + self.segments[i].duration

    def with_durations(self, **durations) -> "TransportSchedule":
        segs = tuple(replace(s, duration=durations.get(s.id, s.duration)) for s in self.segments)
        return replace(self, segments=segs)

    def with_t_ex(self, t_ex: float) -> "TransportSchedule":
        return self.with_durations(b2=t_ex)

    def truncated(self, last: str) -> "TransportSchedule":
        """Schedule with every segment after ``last`` set to zero duration."""
        k = SEGMENT_IDS.index(last)
        return self.with_durations(**{i: 0.0 for i in SEGMENT_IDS[k + 1:]})

    # --- design ---
    def omega(self, d):
        if self.omega_profile is not None:
            return self.omega_profile(d)
        return omega_profile_default(d, self.d_in, self.d_start, self.omega_in, self.omega_max)

    def design(self, d: float) -> PolyPotential:
        return two_ion_double_well(d, float(self.omega(d)), self.species, self.constants)


def default_schedule(**overrides) -> TransportSchedule:
    return replace(TransportSchedule(), **overrides) if overrides else TransportSchedule()


def correction_for(characterized: PolyPotential, schedule: TransportSchedule) -> PolyPotential:
    """Correction overlay turning the design at d_in into the characterized potential."""
    return characterized - schedule.design(schedule.d_in)


def _smooth(s):
    return 0.5 * (1.0 - np.cos(np.pi * np.clip(s, 0.0, 1.0)))


def separation_profile(schedule: TransportSchedule, t):
    """Designed ion separation (m) at time(s) ``t``."""
    t = np.asarray(t, dtype=float)
    T = schedule.total_duration
    if np.any(t < -1e-15) or np.any(t > T * (1 + 1e-12) + 1e-15):
        raise ValueError(f"t outside [0, {T}]")
    ds, dm, di = schedule.d_start, schedule.d_mid, schedule.d_in
    legs = {"a1": (ds, dm), "a2": (dm, di), "c1": (di, dm), "c2": (dm, ds), "s_c": (ds, ds)}
    d = np.full(t.shape, di)
    for seg in SEGMENT_IDS:
        t0, t1 = schedule.bounds(seg)
        a, b = legs.get(seg, (di, di))
        if seg == "a1":
            d = np.where(t <= t0, a, d)
        if t1 > t0:
            inside = (t >= t0) & (t <= t1)
            d = np.where(inside, a + (b - a) * _smooth((t - t0) / (t1 - t0)), d)
        d = np.where(t > t1, b, d)
    return float(d) if d.ndim == 0 else d


def _crossing_time(schedule, seg, level):
    """Time within a separation leg at which the design passes ``level``."""
    t0, t1 = schedule.bounds(seg)
    a, b = {"a2": (schedule.d_mid, schedule.d_in), "c1": (schedule.d_in, schedule.d_mid)}[seg]
    if t1 <= t0:
        return t0
    frac = (level - a) / (b - a)
    if frac <= 0:
        return t0
    if frac >= 1:
        return t1
    return t0 + (t1 - t0) * math.acos(1 - 2 * frac) / math.pi


def overlay_envelope(schedule: TransportSchedule, t):
    """Ramp shared by the exchange-zone overlays (0 far out, 1 around the exchange).

    Rises linearly from the a2 crossing of 2*d_in to the end of a2 and falls
    from the start of c1 to the c1 crossing of 2*d_in.
    """
    t = np.asarray(t, dtype=float)
    level = min(2 * schedule.d_in, schedule.d_mid)
    _, a2_end = schedule.bounds("a2")
    t_on = _crossing_time(schedule, "a2", level)
    c1_start, _ = schedule.bounds("c1")
    t_off = _crossing_time(schedule, "c1", level)
    up = np.clip((t - t_on) / (a2_end - t_on), 0, 1) if a2_end > t_on else (t >= t_on).astype(float)
    down = 1 - (np.clip((t - c1_start) / (t_off - c1_start), 0, 1) if t_off > c1_start
                else (t >= c1_start).astype(float))
    return np.where(t < c1_start, up, down)


def correction_weight(schedule: TransportSchedule, t):
    """Weight of the stray correction overlay (zero when corrections are disabled)."""
    if not schedule.corrections_enabled:
        return np.zeros(np.shape(t))
    return overlay_envelope(schedule, t)


def compensation_weight(schedule: TransportSchedule, t):
    """0 = compensation_off, 1 = compensation_on; linear over b1 and b3."""
    t = np.asarray(t, dtype=float)
    b1 = schedule.bounds("b1")
    b3 = schedule.bounds("b3")

    def ramp(t0, t1):
        if t1 > t0:
            return np.clip((t - t0) / (t1 - t0), 0, 1)
        return (t >= t0).astype(float)

    return ramp(*b1) - ramp(*b3)


@dataclass(frozen=True)
class ControlFrameSeries:
    sample_rate: float
    frames: np.ndarray  # (n, 6) columns CHANNELS, SI
    duration: float
    separation: np.ndarray | None = None

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != len(CHANNELS):
            raise ValueError("frames must be (n, 6)")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frames must be finite")
        self.frames.setflags(write=False)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.frames)) / self.sample_rate

    def channel(self, name: str) -> np.ndarray:
        return self.frames[:, CHANNELS.index(name)]

    def combined(self) -> np.ndarray:
        """(n, 4) total quartic coefficients [E0+E_c, alpha+alpha_c, gamma, beta]."""
        f = self.frames
        return np.ascontiguousarray(np.column_stack([f[:, 0] + f[:, 4], f[:, 1] + f[:, 5],
                                                     f[:, 2], f[:, 3]]))

    def poly_at(self, index: int) -> PolyPotential:
        return PolyPotential(*self.combined()[index])

    def with_frames(self, frames: np.ndarray) -> "ControlFrameSeries":
        return replace(self, frames=np.array(frames, dtype=float))


def build(schedule: TransportSchedule, sample_rate: float = 2e6,
          quant: QuantizationSpec = QuantizationSpec()) -> ControlFrameSeries:
    T = schedule.total_duration
    n = max(int(math.ceil(T * sample_rate - 1e-9)), 1)
    t = np.arange(n) / sample_rate
    d = separation_profile(schedule, np.minimum(t, T))
    w = np.asarray(schedule.omega(d), dtype=float)
    frames = np.zeros((n, 6))
    # design is symmetric: only alpha, beta depend on d
    for k in range(n):
        p = two_ion_double_well(d[k], float(w[k]), schedule.species, schedule.constants)
        frames[k, 1] = p.alpha
        frames[k, 3] = p.beta
    cw = correction_weight(schedule, t)
    frames[:, :4] += np.outer(cw, schedule.stray.as_array())
    off, on = schedule.compensation_off, schedule.compensation_on
    e_off, e_on = quant.quantize(off.E_c), quant.quantize(on.E_c)
    s = compensation_weight(schedule, t)
    # compensations act in the exchange zone only, on the same envelope as the
    # stray correction they are meant to cancel
    env = overlay_envelope(schedule, t)
    frames[:, 4] = env * (e_off + s * (e_on - e_off))
    frames[:, 5] = env * (off.alpha_c + s * (on.alpha_c - off.alpha_c))
    return ControlFrameSeries(sample_rate, frames, T, d)


def static_frames(poly: PolyPotential, duration: float, sample_rate: float = 2e6,
                  compensation: Compensation = Compensation()) -> ControlFrameSeries:
    """Constant frame series holding one potential."""
    n = max(int(math.ceil(duration * sample_rate - 1e-9)), 1)
    row = np.array([poly.E0, poly.alpha, poly.gamma, poly.beta,
                    compensation.E_c, compensation.alpha_c])
    return ControlFrameSeries(sample_rate, np.tile(row, (n, 1)), duration)

"""Control-line lowpass filter model.

Sixth-order Chebyshev type-I lowpass, discretized with the bilinear transform
(cutoff prewarped) and stored as second-order sections. Every control
coefficient channel is filtered independently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal

# Passband ripple giving the target step metrics (90 % rise ~7.5 us,
# 1 % settling ~22 us) for a 150 kHz sixth-order design.
DEFAULT_RIPPLE_DB = 0.022


class FilterError(ValueError):
    pass


@dataclass(frozen=True)
class FilterSpec:
    sample_rate: float
    order: int = 6
    cutoff: float = 150e3
    ripple_db: float = DEFAULT_RIPPLE_DB

    def __post_init__(self):
        if self.order < 2 or self.order % 2:
            raise FilterError("order must be even and >= 2")
        if not 0 < self.cutoff < self.sample_rate / 2:
            raise FilterError("cutoff must lie in (0, sample_rate/2)")
        if not self.ripple_db > 0:
            raise FilterError("ripple must be positive")


@dataclass(frozen=True)
class DiscreteFilter:
    spec: FilterSpec
    sos: np.ndarray  # (order/2, 6) rows [b0 b1 b2 a0 a1 a2]

    @property
    def sample_rate(self) -> float:
        return self.spec.sample_rate

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(s[3:]) for s in self.sos])

    def response(self, f) -> np.ndarray:
        """Complex frequency response at frequencies ``f`` (Hz)."""
        zinv = np.exp(-2j * np.pi * np.asarray(f, dtype=float) / self.sample_rate)
        h = np.ones_like(zinv)
        for b0, b1, b2, a0, a1, a2 in self.sos:
            h = h * (b0 + b1 * zinv + b2 * zinv**2) / (a0 + a1 * zinv + a2 * zinv**2)
        return h


def analog_prototype_poles(order: int, ripple_db: float) -> np.ndarray:
    """Chebyshev-I poles normalized to a unit passband edge (upper half plane)."""
    eps = math.sqrt(10 ** (ripple_db / 10) - 1)
    mu = math.asinh(1 / eps) / order
    k = np.arange(1, order // 2 + 1)
    theta = np.pi * (2 * k - 1) / (2 * order)
    return -math.sinh(mu) * np.sin(theta) + 1j * math.cosh(mu) * np.cos(theta)


def design_lowpass(spec: FilterSpec) -> DiscreteFilter:
    fs = spec.sample_rate
    wc = 2 * fs * math.tan(math.pi * spec.cutoff / fs)  # prewarped edge, rad/s
    rows = []
    for p in analog_prototype_poles(spec.order, spec.ripple_db) * wc:
        zp = (2 * fs + p) / (2 * fs - p)
        a1, a2 = -2 * zp.real, abs(zp) ** 2
        g = (1 + a1 + a2) / 4  # unit DC gain per section (zeros at z = -1)
        rows.append([g, 2 * g, g, 1.0, a1, a2])
    return DiscreteFilter(spec, np.array(rows))


def apply(filt: DiscreteFilter, values, sample_rate: float | None = None):
    """Filter each channel starting from the steady state of the first sample.

    ``values`` is either an array (rows are samples, ``sample_rate`` required)
    or a frame series with ``frames``/``sample_rate`` attributes, in which
    case a new series with filtered frames is returned.
    """
    if hasattr(values, "frames"):
        out = apply(filt, values.frames, values.sample_rate)
        return values.with_frames(out)
    if sample_rate is None:
        raise FilterError("sample_rate is required for raw arrays")
    if not math.isclose(sample_rate, filt.sample_rate, rel_tol=1e-12):
        raise FilterError(f"series sampled at {sample_rate} Hz, filter designed for "
                          f"{filt.sample_rate} Hz")
    x = np.asarray(values, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    zi = signal.sosfilt_zi(filt.sos)
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        out[:, j], _ = signal.sosfilt(filt.sos, x[:, j], zi=zi * x[0, j])
    return out[:, 0] if squeeze else out


def step_response(filt: DiscreteFilter, duration: float) -> tuple:
    """(t, y) of the unit step response.

    The sampled step switches between samples -1 and 0, so sample n sits at
    t = (n + 1/2)/fs after the edge.
    """
    fs = filt.sample_rate
    n = int(math.ceil(duration * fs))
    y, _ = signal.sosfilt(filt.sos, np.ones(n), zi=np.zeros((len(filt.sos), 2)))
    return (np.arange(n) + 0.5) / fs, y


def _crossing(t, y, i, level):
    return t[i - 1] + (level - y[i - 1]) / (y[i] - y[i - 1]) * (t[i] - t[i - 1])


def step_metrics(filt: DiscreteFilter) -> tuple:
    """(t_rise90, t_settle1pct) of the unit step response, in seconds."""
    t, y = step_response(filt, 400.0 / filt.spec.cutoff)
    i = int(np.argmax(y >= 0.9))
    rise = _crossing(t, y, i, 0.9)
    out = np.nonzero(np.abs(y - 1) > 0.01)[0]
    j = int(out[-1]) + 1
    level = 1 + 0.01 * np.sign(y[j - 1] - 1)
    settle = _crossing(t, y, j, level)
    return rise, settle


def with_cutoff(filt: DiscreteFilter, cutoff: float) -> DiscreteFilter:
    return design_lowpass(replace(filt.spec, cutoff=cutoff))

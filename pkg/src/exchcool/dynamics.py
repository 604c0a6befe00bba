"""Classical two-ion dynamics through sampled control frames.

Ions are ordered (index 0 left, index 1 right) and integrated with velocity
Verlet. Energies are read out per ion with a local harmonic partition about
the two-ion equilibrium of the final (static) potential.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .constants import CA40, CODATA, IonSpecies, PhysicalConstants
from .potential import PairAnalysis, PolyPotential, pair_analysis, pair_equilibrium, pair_hessian
from .waveform import ControlFrameSeries, static_frames

DEFAULT_DT = 1e-9
STEPS_PER_PERIOD_MIN = 50
# readout precondition: the pair must be effectively decoupled
MAX_READOUT_COUPLING = 2 * math.pi * 200.0


class IntegrationError(RuntimeError):
    """Ion crossing or non-finite state during integration."""

    def __init__(self, msg, time=None, sample=None):
        super().__init__(msg)
        self.time = time
        self.sample = sample


class PreconditionError(ValueError):
    pass


class UnresolvedPeaks(ValueError):
    """Fewer than two spectral components could be separated."""


@dataclass(frozen=True)
class SystemState:
    z: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).reshape(2)
        v = np.asarray(self.v, dtype=float).reshape(2)
        if not z[1] > z[0]:
            raise ValueError("ion 0 must sit left of ion 1")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "v", v)


@dataclass(frozen=True)
class TrajectoryResult:
    final: SystemState
    energies: np.ndarray
    quanta: np.ndarray
    trace: np.ndarray | None = None  # columns t, z1, z2, v1, v2 (SI)

    def trace_rows(self):
        """Trace in CSV units (t_us, z1_um, z2_um, v1, v2)."""
        if self.trace is None:
            return None
        out = self.trace.copy()
        out[:, 0] *= 1e6
        out[:, 1:3] *= 1e6
        return out


@dataclass(frozen=True)
class EnsembleSpec:
    nbar_init: float = 0.0
    n_energy: int = 16
    n_phase: int = 8
    computational: int = 0  # which ion starts hot

    def __post_init__(self):
        if self.nbar_init < 0:
            raise ValueError("nbar_init must be >= 0")
        if self.n_energy < 1 or self.n_phase < 1:
            raise ValueError("need at least one energy node and one phase")
        if self.computational not in (0, 1):
            raise ValueError("computational ion index must be 0 or 1")

    @property
    def n_samples(self) -> int:
        return 1 if self.nbar_init == 0 else self.n_energy * self.n_phase


@dataclass(frozen=True)
class EnsembleResult:
    nbar_comp: float
    nbar_cool: float
    quanta: np.ndarray = field(repr=False)  # (n_samples, 2) per-trajectory final quanta
    weights: np.ndarray = field(repr=False)

    def __iter__(self):
        return iter((self.nbar_comp, self.nbar_cool))


@dataclass(frozen=True)
class SpectralResult:
    omega_plus: float
    omega_minus: float

    @property
    def delta_Omega(self) -> float:
        return self.omega_plus - self.omega_minus


# --- single-step physics ---

def force(coeffs, z_self, z_other, species: IonSpecies = CA40,
          constants: PhysicalConstants = CODATA):
    """Trap plus Coulomb force on the ion at ``z_self`` (N)."""
    poly = coeffs if isinstance(coeffs, PolyPotential) else PolyPotential(*coeffs)
    r = np.asarray(z_self, dtype=float) - z_other
    if np.any(r == 0):
        raise ValueError("coincident ion positions")
    kc = constants.coulomb_prefactor(species.charge)
    return -species.charge * poly.gradient(z_self) + kc * np.sign(r) / r**2


def quanta(E, omega, constants: PhysicalConstants = CODATA):
    """E / (hbar omega)."""
    if np.any(np.asarray(omega) <= 0):
        raise ValueError("omega must be positive")
    return E / (constants.reduced_planck * omega)


def _quanta(E, omega, constants):
    return np.asarray(E) / (constants.reduced_planck * np.asarray(omega))


@dataclass(frozen=True)
class Readout:
    """Static readout frame: equilibrium and local frequencies."""
    analysis: PairAnalysis
    species: IonSpecies

    @property
    def z_eq(self):
        return np.array([self.analysis.z1, self.analysis.z2])

    @property
    def omega(self):
        return np.array([self.analysis.local1, self.analysis.local2])


def readout_for(poly: PolyPotential, species: IonSpecies = CA40,
                constants: PhysicalConstants = CODATA,
                max_coupling: float | None = MAX_READOUT_COUPLING) -> Readout:
    pa = pair_analysis(poly, species, constants)
    if max_coupling is not None and pa.Omega_ex >= max_coupling:
        raise PreconditionError(
            f"exchange rate {pa.Omega_ex / (2 * math.pi):.1f} Hz too large for a per-ion readout")
    return Readout(pa, species)


def energy_partition(state, poly: PolyPotential, species: IonSpecies = CA40,
                     constants: PhysicalConstants = CODATA,
                     max_coupling: float | None = MAX_READOUT_COUPLING,
                     readout: Readout | None = None) -> np.ndarray:
    """Per-ion energy 1/2 m v^2 + 1/2 m w_i^2 (z - z_eq,i)^2 (J).

    ``state`` may be a SystemState or a pair of (n, 2) arrays (z, v).
    """
    if readout is None:
        readout = readout_for(poly, species, constants, max_coupling)
    if isinstance(state, SystemState):
        z, v = state.z, state.v
    else:
        z, v = state
    z, v = np.asarray(z), np.asarray(v)
    m = species.mass
    return 0.5 * m * v**2 + 0.5 * m * readout.omega**2 * (z - readout.z_eq) ** 2


# --- integration ---

def _kc(species, constants):
    return constants.coulomb_prefactor(species.charge)


def max_mode_frequency(frames: ControlFrameSeries, species: IonSpecies = CA40,
                       constants: PhysicalConstants = CODATA, stride: int = 8) -> float:
    """Largest normal-mode frequency (rad/s) over a subsample of frames."""
    table = frames.combined()
    idx = sorted(set(range(0, len(table), stride)) | {len(table) - 1})
    best = 0.0
    for i in idx:
        try:
            best = max(best, pair_analysis(PolyPotential(*table[i]), species, constants).omega_plus)
        except Exception:  # noqa: BLE001 - transient frames may be single-welled
            continue
    return best


def check_step(frames, dt, species=CA40, constants=CODATA, f_max=None):
    if f_max is None:
        f_max = max_mode_frequency(frames, species, constants) / (2 * math.pi)
    if f_max > 0 and dt > 1.0 / (STEPS_PER_PERIOD_MIN * f_max):
        raise PreconditionError(
            f"dt = {dt:g} s gives fewer than {STEPS_PER_PERIOD_MIN} steps per period at "
            f"{f_max / 1e3:.1f} kHz")


def n_steps_for(duration, dt):
    return max(int(round(duration / dt)), 0)


def run_batch(frames: ControlFrameSeries, z0, v0, dt: float = DEFAULT_DT,
              species: IonSpecies = CA40, constants: PhysicalConstants = CODATA,
              duration: float | None = None, record_every: int = 0, backend=None,
              t0: float = 0.0):
    """Integrate a batch of initial conditions (arrays of shape (n, 2)).

    Starts at time ``t0`` within ``frames`` and runs for ``duration``
    (default: to the end of the frames). Returns (z, v, status, records);
    records is None or (rec_z, rec_v) with shape (n, n_rec, 2).
    """
    z = np.array(z0, dtype=float, order="C").reshape(-1, 2)
    v = np.array(v0, dtype=float, order="C").reshape(-1, 2)
    T = frames.duration - t0 if duration is None else duration
    n_steps = n_steps_for(T, dt)
    kernel = backend or _kernels.integrate_batch
    rec = None
    if record_every > 0:
        n_rec = n_steps // record_every + 1
        rec = (np.zeros((len(z), n_rec, 2)), np.zeros((len(z), n_rec, 2)))
        status = kernel(frames.combined(), 1.0 / frames.sample_rate, t0, z, v, dt, n_steps,
                        species.charge, species.mass, species.mass, _kc(species, constants),
                        record_every, rec[0], rec[1])
    else:
        status = kernel(frames.combined(), 1.0 / frames.sample_rate, t0, z, v, dt, n_steps,
                        species.charge, species.mass, species.mass, _kc(species, constants))
    return z, v, status, rec


def _raise_failures(status, dt, what="trajectory"):
    bad = np.nonzero(status >= 0)[0]
    if len(bad):
        k = int(bad[0])
        t = float(status[k]) * dt
        raise IntegrationError(f"{what} {k} failed at t = {t * 1e6:.4f} us "
                               "(ion crossing or blow-up; reduce dt)", time=t, sample=k)


def integrate(frames: ControlFrameSeries, initial: SystemState, dt: float = DEFAULT_DT,
              species: IonSpecies = CA40, constants: PhysicalConstants = CODATA,
              record_every: int = 0, readout: bool = True,
              max_coupling: float | None = MAX_READOUT_COUPLING,
              guard: bool = True) -> TrajectoryResult:
    """Velocity-Verlet trajectory through ``frames`` (initial.t is ignored)."""
    if guard:
        check_step(frames, dt, species, constants)
    z, v, status, rec = run_batch(frames, initial.z[None], initial.v[None], dt, species,
                                  constants, record_every=record_every)
    _raise_failures(status, dt)
    n_steps = n_steps_for(frames.duration, dt)
    final = SystemState(z[0], v[0], n_steps * dt)
    if readout:
        ro = readout_for(frames.poly_at(-1), species, constants, max_coupling)
        E = energy_partition(final, None, species, constants, readout=ro)
        n = _quanta(E, ro.omega, constants)
    else:
        E = n = np.full(2, np.nan)
    trace = None
    if rec is not None:
        t = np.arange(rec[0].shape[1]) * record_every * dt
        trace = np.column_stack([t, rec[0][0], rec[1][0]])
    return TrajectoryResult(final, E, n, trace)


def thermal_initial_conditions(poly: PolyPotential, spec: EnsembleSpec,
                               species: IonSpecies = CA40,
                               constants: PhysicalConstants = CODATA):
    """Gauss-Laguerre energy nodes x phase grid for the computational ion.

    Returns (z0, v0, weights) with weights summing to one. The coolant starts
    at rest at its equilibrium.
    """
    pa = pair_analysis(poly, species, constants)
    z_eq = np.array([pa.z1, pa.z2])
    c = spec.computational
    w_c = (pa.local1, pa.local2)[c]
    if spec.nbar_init == 0:
        return z_eq[None].copy(), np.zeros((1, 2)), np.ones(1)
    x, wx = np.polynomial.laguerre.laggauss(spec.n_energy)
    kT = spec.nbar_init * constants.reduced_planck * w_c
    amp = np.sqrt(2 * x * kT / (species.mass * w_c**2))
    phi = 2 * np.pi * np.arange(spec.n_phase) / spec.n_phase
    A, P = np.meshgrid(amp, phi, indexing="ij")
    z0 = np.tile(z_eq, (A.size, 1))
    v0 = np.zeros_like(z0)
    z0[:, c] += (A * np.cos(P)).ravel()
    v0[:, c] = (-A * w_c * np.sin(P)).ravel()
    weights = np.repeat(wx / wx.sum(), spec.n_phase) / spec.n_phase
    return z0, v0, weights


def propagate(frames: ControlFrameSeries, z0, v0, dt: float = DEFAULT_DT,
              species: IonSpecies = CA40, constants: PhysicalConstants = CODATA,
              what: str = "ensemble sample") -> tuple:
    """Final (z, v) of a batch, raising IntegrationError on the first failure."""
    z, v, status, _ = run_batch(frames, z0, v0, dt, species, constants)
    _raise_failures(status, dt, what)
    return z, v


def final_quanta(z, v, readout: Readout, constants: PhysicalConstants = CODATA):
    E = energy_partition((z, v), None, readout.species, constants, readout=readout)
    return _quanta(E, readout.omega, constants)


def ensemble_exchange(frames: ControlFrameSeries, spec: EnsembleSpec, dt: float = DEFAULT_DT,
                      species: IonSpecies = CA40, constants: PhysicalConstants = CODATA,
                      guard: bool = True, readout_poly: PolyPotential | None = None,
                      max_coupling: float | None = MAX_READOUT_COUPLING) -> EnsembleResult:
    """Boltzmann-weighted, phase-averaged final quanta of both ions.

    Returned in (computational, coolant) order.
    """
    if guard:
        check_step(frames, dt, species, constants)
    z0, v0, w = thermal_initial_conditions(frames.poly_at(0), spec, species, constants)
    z, v = propagate(frames, z0, v0, dt, species, constants)
    ro = readout_for(readout_poly or frames.poly_at(-1), species, constants, max_coupling)
    return reduce_ensemble(final_quanta(z, v, ro, constants), w, spec.computational)


def reduce_ensemble(n, w, computational: int = 0) -> EnsembleResult:
    """Weighted average of per-sample quanta (n_samples, 2) in a fixed order."""
    order = [computational, 1 - computational]
    n = np.asarray(n)[:, order]
    # fixed-order weighted sum: independent of how trajectories were scheduled
    avg = np.einsum("k,kj->j", w, n)
    return EnsembleResult(float(avg[0]), float(avg[1]), n, np.asarray(w))


def transfer_fraction(nbar_comp: float, floor_comp: float, nbar_init: float) -> float:
    """Fraction of the initial computational-ion energy removed, floor subtracted."""
    if nbar_init <= 0:
        raise ValueError("nbar_init must be positive")
    return 1.0 - (nbar_comp - floor_comp) / nbar_init


# --- spectral analysis ---

def _peak_refine(logp, i):
    a, b, c = logp[i - 1], logp[i], logp[i + 1]
    den = a - 2 * b + c
    return 0.0 if den == 0 else 0.5 * (a - c) / den


def mode_splitting_from_records(velocities, sample_dt: float, pad: int = 8,
                                rel_threshold: float = 1e-2) -> SpectralResult:
    """Two strongest components of the velocity record(s) (rad/s)."""
    v = np.asarray(velocities, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    n = v.shape[0]
    if n < 16:
        raise UnresolvedPeaks("record too short")
    win = np.hanning(n)
    nfft = 1 << int(math.ceil(math.log2(n * pad)))
    spec = np.zeros(nfft // 2 + 1)
    for j in range(v.shape[1]):
        x = (v[:, j] - v[:, j].mean()) * win
        spec += np.abs(np.fft.rfft(x, nfft)) ** 2
    spec[0] = 0.0
    top = spec.max()
    if not top > 0:
        raise UnresolvedPeaks("no oscillation in the record")
    interior = (spec[1:-1] > spec[:-2]) & (spec[1:-1] >= spec[2:]) & (spec[1:-1] > rel_threshold * top)
    idx = np.nonzero(interior)[0] + 1
    if len(idx) < 2:
        raise UnresolvedPeaks("only one spectral component above threshold")
    idx = idx[np.argsort(spec[idx])[::-1][:2]]
    logp = np.log(spec + top * 1e-300)
    df = 1.0 / (nfft * sample_dt)
    freqs = sorted((i + _peak_refine(logp, i)) * df for i in idx)
    return SpectralResult(2 * np.pi * freqs[1], 2 * np.pi * freqs[0])


def extract_mode_splitting(poly: PolyPotential, duration: float, probe: float = 50e-9,
                           dt: float = DEFAULT_DT, species: IonSpecies = CA40,
                           constants: PhysicalConstants = CODATA,
                           expected_delta_Omega: float | None = None,
                           initial: SystemState | None = None,
                           sample_every: int = 10) -> SpectralResult:
    """FFT mode splitting of a static configuration after a small probe kick.

    Ions start at ``initial`` (default: equilibrium) displaced along the sum
    of the two normal-mode vectors, so both modes ring with amplitude
    ``probe`` whatever the detuning.
    """
    if expected_delta_Omega is not None and duration < 20 * 2 * np.pi / expected_delta_Omega:
        raise UnresolvedPeaks("duration shorter than 20 beat periods")
    frames = static_frames(poly, duration)
    if initial is None:
        z1, z2 = pair_equilibrium(poly, species, constants)
        initial = SystemState([z1, z2], [0.0, 0.0])
    _, vecs = np.linalg.eigh(pair_hessian(poly, *initial.z, species, constants))
    z0 = initial.z + probe * (vecs[:, 0] + vecs[:, 1])
    _, _, status, rec = run_batch(frames, z0[None], initial.v[None], dt, species, constants,
                                  record_every=sample_every)
    _raise_failures(status, dt, "probe trajectory")
    return mode_splitting_from_records(rec[1][0], sample_every * dt)


# --- energy bookkeeping ---

def total_energy(poly: PolyPotential, z, v, species: IonSpecies = CA40,
                 constants: PhysicalConstants = CODATA):
    z, v = np.asarray(z), np.asarray(v)
    q, m = species.charge, species.mass
    kin = 0.5 * m * np.sum(v**2, axis=-1)
    pot = q * (poly.value(z[..., 0]) + poly.value(z[..., 1])) \
        + _kc(species, constants) / (z[..., 1] - z[..., 0])
    return kin + pot


def shadow_energy(poly: PolyPotential, z, v, dt: float, species: IonSpecies = CA40,
                  constants: PhysicalConstants = CODATA):
    """Velocity-Verlet modified energy, correct through O(dt^2).

    H + dt^2/24 (2 v.K.v - F.F/m) with K the Hessian of the potential
    energy; the remaining oscillation is O(dt^4) so secular drift shows.
    """
    z, v = np.asarray(z), np.asarray(v)
    q, m = species.charge, species.mass
    kc = _kc(species, constants)
    d = z[..., 1] - z[..., 0]
    c = 2 * kc / d**3
    f1 = -q * poly.gradient(z[..., 0]) - kc / d**2
    f2 = -q * poly.gradient(z[..., 1]) + kc / d**2
    k11 = q * poly.curvature(z[..., 0]) + c
    k22 = q * poly.curvature(z[..., 1]) + c
    v1, v2 = v[..., 0], v[..., 1]
    vKv = k11 * v1**2 + k22 * v2**2 - 2 * c * v1 * v2
    return total_energy(poly, z, v, species, constants) + dt**2 / 24 * (2 * vKv - (f1**2 + f2**2) / m)


def relative_drift(series, window: float = 0.1) -> float:
    """|mean(last window) - mean(first window)| / |mean| of an energy series."""
    e = np.asarray(series, dtype=float)
    k = max(int(len(e) * window), 1)
    return abs(e[-k:].mean() - e[:k].mean()) / abs(e.mean())


# --- sweeps ---

@dataclass(frozen=True)
class TexPoint:
    t_ex: float
    nbar_comp: float
    nbar_cool: float


def sweep_t_ex(frames_for, t_ex_values, spec: EnsembleSpec, dt: float = DEFAULT_DT,
               species: IonSpecies = CA40, constants: PhysicalConstants = CODATA) -> list:
    """One ensemble exchange per hold time.

    ``frames_for(t_ex)`` returns the (filtered) frame series for that hold.
    """
    out = []
    for t_ex in t_ex_values:
        frames = frames_for(float(t_ex))
        r = ensemble_exchange(frames, spec, dt, species, constants)
        out.append(TexPoint(float(t_ex), r.nbar_comp, r.nbar_cool))
    return out

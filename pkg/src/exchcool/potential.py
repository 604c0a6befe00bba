"""Axial quartic potentials, well geometry and two-ion mode structure.

The axial electric potential is modelled as

    V(z) = -E0*z + alpha*z**2 + gamma*z**3 + beta*z**4

(volts, SI coefficients). An ion of charge q sees the energy q*V(z).
Compensation potentials are a uniform field ``E_c`` that adds to ``E0`` and a
harmonic term ``alpha_c*z**2`` centred at z = 0, the design centre.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import CA40, CODATA, PER_MM2, PER_MM3, PER_MM4, IonSpecies, PhysicalConstants


class NotDoubleWell(ValueError):
    """The potential has a single minimum where two were required."""


class NoConvergence(RuntimeError):
    """A nonlinear solve (equilibrium or characterization) failed."""


@dataclass(frozen=True)
class PolyPotential:
    E0: float = 0.0
    alpha: float = 0.0
    gamma: float = 0.0
    beta: float = 0.0

    @classmethod
    def from_mm_units(cls, E0_V_per_m=0.0, alpha_V_per_mm2=0.0, gamma_V_per_mm3=0.0,
                         beta_V_per_mm4=0.0) -> "PolyPotential":
        return cls(E0_V_per_m, alpha_V_per_mm2 * PER_MM2, gamma_V_per_mm3 * PER_MM3,
                   beta_V_per_mm4 * PER_MM4)

    def to_mm_units(self) -> dict:
        return {
            "E0_V_per_m": self.E0,
            "alpha_V_per_mm2": self.alpha / PER_MM2,
            "gamma_V_per_mm3": self.gamma / PER_MM3,
            "beta_V_per_mm4": self.beta / PER_MM4,
        }

    def as_array(self) -> np.ndarray:
        return np.array([self.E0, self.alpha, self.gamma, self.beta])

    def __add__(self, other: "PolyPotential") -> "PolyPotential":
        return PolyPotential(self.E0 + other.E0, self.alpha + other.alpha,
                             self.gamma + other.gamma, self.beta + other.beta)

    def __sub__(self, other: "PolyPotential") -> "PolyPotential":
        return self + other.scaled(-1.0)

    def scaled(self, w: float) -> "PolyPotential":
        return PolyPotential(w * self.E0, w * self.alpha, w * self.gamma, w * self.beta)

    def value(self, z):
        return evaluate(self, z)

    def gradient(self, z):
        return -self.E0 + z * (2 * self.alpha + z * (3 * self.gamma + z * 4 * self.beta))

    def curvature(self, z):
        return 2 * self.alpha + z * (6 * self.gamma + z * 12 * self.beta)

    def third_derivative(self, z):
        return 6 * self.gamma + 24 * self.beta * z


@dataclass(frozen=True)
class Compensation:
    """Applied compensating potentials.

    ``E_c`` is a uniform field along +z (it contributes ``-E_c*z`` to V, the
    same sign convention as ``E0``); ``alpha_c`` adds ``alpha_c*z**2``.
    """
    E_c: float = 0.0
    alpha_c: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.E_c) and math.isfinite(self.alpha_c)):
            raise ValueError("compensation values must be finite")

    def as_poly(self) -> PolyPotential:
        return PolyPotential(E0=self.E_c, alpha=self.alpha_c)

    def applied_to(self, poly: PolyPotential) -> PolyPotential:
        return poly + self.as_poly()


@dataclass(frozen=True)
class WellAnalysis:
    z1: float
    z2: float
    omega1: float
    omega2: float

    @property
    def d(self) -> float:
        return self.z2 - self.z1

    @property
    def delta_omega(self) -> float:
        return self.omega1 - self.omega2


@dataclass(frozen=True)
class CoupledModes:
    omega_plus: float
    omega_minus: float
    delta_Omega: float
    Omega_ex: float
    A_ex: float


@dataclass(frozen=True)
class PairAnalysis:
    """Two-ion equilibrium (trap + Coulomb) and its small-oscillation structure.

    ``omega1``/``omega2`` are trap-only curvatures at the ion positions.
    ``local1``/``local2`` add the Coulomb self-stiffness ``2k/d**3`` but not
    the off-diagonal coupling; they are the uncoupled oscillators whose
    exchange rate is ``Omega_ex``. ``omega_plus``/``omega_minus`` are the
    exact normal modes of the mass-weighted Hessian.
    """
    z1: float
    z2: float
    omega1: float
    omega2: float
    local1: float
    local2: float
    omega_plus: float
    omega_minus: float
    Omega_ex: float

    @property
    def d(self) -> float:
        return self.z2 - self.z1

    @property
    def center(self) -> float:
        return 0.5 * (self.z1 + self.z2)

    @property
    def delta_omega(self) -> float:
        return self.local1 - self.local2

    @property
    def delta_Omega(self) -> float:
        return self.omega_plus - self.omega_minus

    @property
    def A_ex(self) -> float:
        return exchange_amplitude(self.delta_omega, self.Omega_ex)


def evaluate(poly: PolyPotential, z):
    """Potential in volts at position(s) ``z`` (metres)."""
    return z * (-poly.E0 + z * (poly.alpha + z * (poly.gamma + z * poly.beta)))


def symmetric_double_well(d: float, omega: float, species: IonSpecies = CA40) -> PolyPotential:
    """Symmetric quartic whose single-ion minima are ``d`` apart with frequency ``omega``."""
    if not (d > 0 and omega > 0):
        raise ValueError("d and omega must be positive")
    k = species.mass * omega**2 / species.charge
    return PolyPotential(alpha=-k / 4.0, beta=k / (2.0 * d**2))


def two_ion_double_well(d: float, omega: float, species: IonSpecies = CA40,
                        constants: PhysicalConstants = CODATA,
                        coulomb_in_omega: bool = False) -> PolyPotential:
    """Symmetric quartic holding two ions at separation ``d`` (Coulomb included).

    ``omega`` is the trap curvature frequency at each ion, or, with
    ``coulomb_in_omega``, the local frequency including the Coulomb
    self-stiffness.
    """
    if not (d > 0 and omega > 0):
        raise ValueError("d and omega must be positive")
    q, m = species.charge, species.mass
    kc = constants.coulomb_prefactor(q)
    stiff = m * omega**2
    if coulomb_in_omega:
        stiff -= 2 * kc / d**3
    z = d / 2
    push = kc / d**2 / (q * z)  # Coulomb field over z
    B = (stiff / q - push) / (2 * z**2)
    if B <= 0:
        raise ValueError("frequency too low to hold two ions at this separation")
    A = push - B * z**2
    return PolyPotential(alpha=A / 2, beta=B / 4)


def _cubic_real_roots(c3, c2, c1, c0):
    """Real roots of c3*u^3 + c2*u^2 + c1*u + c0 (closed form, Newton-polished)."""
    a, b, c = c2 / c3, c1 / c3, c0 / c3
    p = b - a * a / 3.0
    qq = 2 * a**3 / 27.0 - a * b / 3.0 + c
    disc = (qq / 2) ** 2 + (p / 3) ** 3
    if disc > 0:
        s = math.sqrt(disc)
        t = math.copysign(abs(-qq / 2 + s) ** (1 / 3), -qq / 2 + s) \
            + math.copysign(abs(-qq / 2 - s) ** (1 / 3), -qq / 2 - s)
        roots = [t]
    elif p == 0:
        roots = [0.0]
    else:
        r = 2 * math.sqrt(-p / 3)
        arg = 3 * qq / (p * r) if r else 0.0
        phi = math.acos(max(-1.0, min(1.0, arg)))
        roots = [r * math.cos((phi - 2 * math.pi * k) / 3) for k in range(3)]
    out = []
    for t in roots:
        u = t - a / 3
        for _ in range(4):
            f = ((c3 * u + c2) * u + c1) * u + c0
            fp = (3 * c3 * u + 2 * c2) * u + c1
            if fp == 0:
                break
            u -= f / fp
        out.append(u)
    return sorted(out)


def find_minima(poly: PolyPotential, require_double: bool = False) -> tuple:
    """Local minima of ``poly`` sorted ascending (one or two entries).

    Raises NotDoubleWell if ``require_double`` and only one minimum exists.
    """
    if not poly.beta > 0:
        raise ValueError("beta must be positive")
    L = 1e-6  # solve in micrometres
    roots = _cubic_real_roots(4 * poly.beta * L**3, 3 * poly.gamma * L**2,
                              2 * poly.alpha * L, -poly.E0)
    minima = []
    for u in roots:
        z = u * L
        if poly.curvature(z) > 0 and not any(abs(z - m) < 1e-15 for m in minima):
            minima.append(z)
    if not minima:  # degenerate (flat) stationary point; fall back to the lowest
        minima = [min((u * L for u in roots), key=poly.value)]
    minima.sort()
    if require_double and len(minima) < 2:
        raise NotDoubleWell(f"single minimum at z = {minima[0]:.6g} m")
    return tuple(minima)


def well_frequencies(poly: PolyPotential, species: IonSpecies = CA40) -> WellAnalysis:
    """Single-ion (no Coulomb) frequencies of the two wells."""
    z1, z2 = find_minima(poly, require_double=True)
    w1 = math.sqrt(species.charge * poly.curvature(z1) / species.mass)
    w2 = math.sqrt(species.charge * poly.curvature(z2) / species.mass)
    return WellAnalysis(z1, z2, w1, w2)


def exchange_rate(d: float, omega1: float, omega2: float, m1: float, m2: float,
                  charge: float = CA40.charge, constants: PhysicalConstants = CODATA) -> float:
    """Coulomb exchange rate q^2 / (4 pi eps0 d^3 sqrt(m1 m2) sqrt(w1 w2))."""
    if min(d, omega1, omega2, m1, m2) <= 0:
        raise ValueError("all arguments must be positive")
    kc = constants.coulomb_prefactor(charge)
    return kc / (d**3 * math.sqrt(m1 * m2) * math.sqrt(omega1 * omega2))


def exchange_amplitude(delta_omega, Omega_ex):
    """Maximal exchanged energy fraction, 1 / (1 + dw^2 / (4 Omega_ex^2))."""
    return 1.0 / (1.0 + np.square(delta_omega) / (4.0 * np.square(Omega_ex)))


def mode_splitting(delta_omega, Omega_ex):
    return np.sqrt(4.0 * np.square(Omega_ex) + np.square(delta_omega))


def coupled_modes(analysis: WellAnalysis, species: IonSpecies = CA40,
                  constants: PhysicalConstants = CODATA) -> CoupledModes:
    Om = exchange_rate(analysis.d, analysis.omega1, analysis.omega2, species.mass,
                       species.mass, species.charge, constants)
    dO = float(mode_splitting(analysis.delta_omega, Om))
    mean = 0.5 * (analysis.omega1 + analysis.omega2)
    return CoupledModes(mean + dO / 2, mean - dO / 2, dO, Om,
                        float(exchange_amplitude(analysis.delta_omega, Om)))


# --- two-ion equilibrium and normal modes ---

def _pair_guess(poly, q, kc):
    mins = find_minima(poly)
    if len(mins) == 2:
        return mins
    zm = mins[0]
    k = max(q * poly.curvature(zm), 1e-30)
    half = (kc / (4 * k)) ** (1 / 3)
    return zm - half, zm + half


def pair_equilibrium(poly: PolyPotential, species: IonSpecies = CA40,
                     constants: PhysicalConstants = CODATA, guess=None,
                     tol: float = 1e-12, max_iter: int = 200) -> tuple:
    """Two-ion equilibrium (z1 < z2) by damped Newton on the force balance."""
    q = species.charge
    kc = constants.coulomb_prefactor(q)
    z1, z2 = guess if guess is not None else _pair_guess(poly, q, kc)

    def energy(a, b):
        return q * (evaluate(poly, a) + evaluate(poly, b)) + kc / (b - a)

    for _ in range(max_iter):
        d = z2 - z1
        f1 = -q * poly.gradient(z1) - kc / d**2
        f2 = -q * poly.gradient(z2) + kc / d**2
        c = 2 * kc / d**3
        h11 = q * poly.curvature(z1) + c
        h22 = q * poly.curvature(z2) + c
        det = h11 * h22 - c * c
        if h11 > 0 and h22 > 0 and det > 0:
            s1 = (h22 * f1 + c * f2) / det
            s2 = (c * f1 + h11 * f2) / det
        else:  # not convex here: steepest descent with a curvature-free scale
            scale = 0.05 * d / max(abs(f1), abs(f2), 1e-300)
            s1, s2 = f1 * scale, f2 * scale
        # keep ordering and shrink until the energy does not rise
        lam = 1.0
        e0 = energy(z1, z2)
        while lam > 1e-8:
            n1, n2 = z1 + lam * s1, z2 + lam * s2
            if n2 - n1 > 0.05 * d and energy(n1, n2) <= e0 + 1e-30 * abs(e0):
                break
            lam *= 0.5
        z1, z2 = z1 + lam * s1, z2 + lam * s2
        if max(abs(lam * s1), abs(lam * s2)) < tol:
            return z1, z2
    raise NoConvergence("two-ion equilibrium did not converge")


def pair_hessian(poly: PolyPotential, z1: float, z2: float, species: IonSpecies = CA40,
                 constants: PhysicalConstants = CODATA) -> np.ndarray:
    q = species.charge
    c = 2 * constants.coulomb_prefactor(q) / (z2 - z1) ** 3
    return np.array([[q * poly.curvature(z1) + c, -c],
                     [-c, q * poly.curvature(z2) + c]])


def pair_analysis(poly: PolyPotential, species: IonSpecies = CA40,
                  constants: PhysicalConstants = CODATA, guess=None) -> PairAnalysis:
    z1, z2 = pair_equilibrium(poly, species, constants, guess)
    m, q = species.mass, species.charge
    H = pair_hessian(poly, z1, z2, species, constants)
    lam = np.linalg.eigvalsh(H / m)
    if lam[0] <= 0:
        raise NoConvergence("equilibrium is not a minimum")
    k1, k2 = q * poly.curvature(z1), q * poly.curvature(z2)
    w1 = math.sqrt(k1 / m) if k1 > 0 else float("nan")
    w2 = math.sqrt(k2 / m) if k2 > 0 else float("nan")
    l1, l2 = math.sqrt(H[0, 0] / m), math.sqrt(H[1, 1] / m)
    Om = exchange_rate(z2 - z1, l1, l2, m, m, q, constants)
    return PairAnalysis(z1, z2, w1, w2, l1, l2, math.sqrt(lam[1]), math.sqrt(lam[0]), Om)


def forward_model(poly: PolyPotential, species: IonSpecies = CA40,
                  constants: PhysicalConstants = CODATA, guess=None) -> tuple:
    """(Omega_plus, Omega_minus, z1, z2) observed for two ions in ``poly``."""
    pa = pair_analysis(poly, species, constants, guess)
    return pa.omega_plus, pa.omega_minus, pa.z1, pa.z2


def characterize_stray(omega_plus: float, omega_minus: float, z1: float, z2: float,
                       applied: Compensation = Compensation(), species: IonSpecies = CA40,
                       constants: PhysicalConstants = CODATA,
                       stiffer: str | None = None) -> PolyPotential:
    """Recover the quartic (minus the applied compensation) from two-ion observables.

    The equilibrium conditions and the diagonal Hessian entries are linear in
    the four coefficients; the diagonal entries follow from the mode pair up
    to which ion sits in the stiffer well. ``stiffer`` ("left"/"right") picks
    that branch; by default the branch with the smaller cubic term is used.
    """
    if not (z2 > z1 and omega_plus > 0 and omega_minus > 0):
        raise ValueError("need z1 < z2 and positive mode frequencies")
    if omega_plus < omega_minus:
        omega_plus, omega_minus = omega_minus, omega_plus
    q, m = species.charge, species.mass
    kc = constants.coulomb_prefactor(q)
    d = z2 - z1
    c = 2 * kc / d**3
    S = m * (omega_plus**2 + omega_minus**2)
    P = m * m * omega_plus**2 * omega_minus**2 + c * c
    disc = S * S / 4 - P
    if disc < -1e-12 * S * S:
        raise NoConvergence("mode pair is inconsistent with the Coulomb coupling at this separation")
    r = math.sqrt(max(disc, 0.0))
    branches = {"left": (S / 2 + r, S / 2 - r), "right": (S / 2 - r, S / 2 + r)}
    if stiffer is not None and stiffer not in branches:
        raise ValueError("stiffer must be 'left', 'right' or None")

    def solve(h11, h22):
        A = np.array([
            [-1.0, 2 * z1, 3 * z1**2, 4 * z1**3],
            [-1.0, 2 * z2, 3 * z2**2, 4 * z2**3],
            [0.0, 2.0, 6 * z1, 12 * z1**2],
            [0.0, 2.0, 6 * z2, 12 * z2**2],
        ])
        rhs = np.array([-kc / (q * d**2), kc / (q * d**2), (h11 - c) / q, (h22 - c) / q])
        # column scaling keeps the system well conditioned in SI
        scale = np.array([1.0, d**-1, d**-2, d**-3])
        x = np.linalg.solve(A * scale, rhs) * scale
        total = PolyPotential(*x)
        if not np.all(np.isfinite(x)) or total.beta <= 0:
            raise NoConvergence("characterization produced a non-confining quartic")
        return total - applied.as_poly()

    if stiffer is not None:
        return solve(*branches[stiffer])
    cands = []
    for key in ("left", "right"):
        try:
            cands.append(solve(*branches[key]))
        except NoConvergence:
            pass
    if not cands:
        raise NoConvergence("no consistent quartic for these observables")
    return min(cands, key=lambda p: abs(p.gamma))


def symmetry_center(stray: PolyPotential) -> float:
    """z0 = -gamma/(4 beta), where the cubic term vanishes."""
    if not stray.beta > 0:
        raise ValueError("beta must be positive")
    return -stray.gamma / (4 * stray.beta)


def resonant_field(alpha_c: float, stray: PolyPotential) -> float:
    """E_c that makes stray + compensation symmetric about z0 (so dw = 0)."""
    z0 = symmetry_center(stray)
    return -stray.E0 + 2 * z0 * (stray.alpha + alpha_c + z0 * stray.gamma)

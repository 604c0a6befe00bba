"""Blue-sideband thermometry: thermal flop model, n-bar fits and inversions.

P_S(t) = 1/2 (1 + sum_n p_n cos(2 W_n t)), with thermal weights
p_n = nbar^n / (nbar + 1)^(n+1) summed from n = 0 and
W_n = eta W0 exp(-eta^2/2) sqrt(1/(n+1)) L1_n(eta^2).
"""
from __future__ import annotations

import csv
import functools
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import chi2 as chi2_dist

TRUNCATION_TAIL = 1e-6
# data consistent with a constant at this confidence carry no thermal signal
FLAT_CONFIDENCE = 0.999
# 729 nm at 45 degrees to the axis, 40Ca+ at 1.3 MHz
DEFAULT_ETA = 0.06
DEFAULT_OMEGA0 = 2 * math.pi * 250e3
GOLDEN = (math.sqrt(5) - 1) / 2


class NoFit(ValueError):
    """The objective has no interior minimum in the search window."""


class NonMonotonic(ValueError):
    """The fixed-pulse curve is not invertible around the requested value."""

    def __init__(self, msg, window=None):
        super().__init__(msg)
        self.window = window


class Divergent(ValueError):
    pass


@dataclass(frozen=True)
class SidebandParams:
    eta: float
    omega0: float
    n_max: int | None = None  # None: pick from the thermal tail

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not self.omega0 > 0:
            raise ValueError("omega0 must be positive")
        if self.n_max is not None and self.n_max < 1:
            raise ValueError("n_max must be >= 1")


@dataclass(frozen=True)
class ThermalReadout:
    nbar: float
    sigma_lo: float
    sigma_hi: float

    def __post_init__(self):
        if self.nbar < 0 or self.sigma_lo < 0 or self.sigma_hi < 0:
            raise ValueError("nbar and uncertainties must be non-negative")

    @property
    def sigma(self) -> float:
        return 0.5 * (self.sigma_lo + self.sigma_hi)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FlopSample:
    t: float
    P_S: float
    sigma_P: float

    def __post_init__(self):
        if not 0 <= self.P_S <= 1:
            raise ValueError("P_S must lie in [0, 1]")
        if not self.sigma_P > 0:
            raise ValueError("sigma_P must be positive")


def laguerre1(n: int, x):
    """Associated Laguerre polynomial L^1_n(x) by upward recurrence."""
    if n < 0:
        raise ValueError("n must be >= 0")
    x = np.asarray(x, dtype=float)
    prev, cur = np.zeros_like(x), np.ones_like(x)
    for k in range(n):
        # (k+1) L_{k+1} = (2k + 2 - x) L_k - (k + 1) L_{k-1}
        prev, cur = cur, ((2 * k + 2 - x) * cur - (k + 1) * prev) / (k + 1)
    return float(cur) if cur.ndim == 0 else cur


def laguerre1_table(n_max: int, x: float) -> np.ndarray:
    """L^1_n(x) for n = 0..n_max."""
    out = np.empty(n_max + 1)
    prev, cur = 0.0, 1.0
    out[0] = cur
    for k in range(n_max):
        prev, cur = cur, ((2 * k + 2 - x) * cur - (k + 1) * prev) / (k + 1)
        out[k + 1] = cur
    return out


def bsb_rabi(n, params: SidebandParams):
    """Blue-sideband Rabi rate for |n> -> |n+1> (rad/s)."""
    n_arr = np.atleast_1d(np.asarray(n, dtype=int))
    if np.any(n_arr < 0):
        raise ValueError("n must be >= 0")
    e2 = params.eta**2
    lag = laguerre1_table(int(n_arr.max()), e2)[n_arr]
    out = params.eta * params.omega0 * math.exp(-e2 / 2) * np.sqrt(1.0 / (n_arr + 1)) * lag
    return float(out[0]) if np.ndim(n) == 0 else out


def truncation(nbar: float, tail: float = TRUNCATION_TAIL) -> int:
    """Smallest n_max with cumulative thermal weight above 1 - tail."""
    if nbar < 0:
        raise ValueError("nbar must be >= 0")
    if nbar == 0:
        return 1
    r = nbar / (nbar + 1)
    # cumulative weight through n is 1 - r^(n+1)
    n = math.ceil(math.log(tail) / math.log(r)) - 1
    while 1 - r ** (n + 1) <= 1 - tail:
        n += 1
    return max(n, 1)


def thermal_weights(nbar: float, n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1)
    if nbar == 0:
        w = np.zeros(n_max + 1)
        w[0] = 1.0
        return w
    return np.exp(n * math.log(nbar / (nbar + 1))) / (nbar + 1)


def flop_population(t, nbar: float, params: SidebandParams, n_max: int | None = None):
    """Thermal blue-sideband S-state population at pulse time(s) ``t``."""
    if nbar < 0:
        raise ValueError("nbar must be >= 0")
    if n_max is None:
        n_max = params.n_max if params.n_max is not None else truncation(nbar)
    rates = bsb_rabi(np.arange(n_max + 1), params)
    w = thermal_weights(nbar, n_max)
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    p = 0.5 * (1 + np.cos(2 * np.outer(tt, rates)) @ w)
    p = np.clip(p, 0.0, 1.0)
    return float(p[0]) if np.ndim(t) == 0 else p


# --- fitting ---

@functools.lru_cache(maxsize=32)
def _cos_matrix(t_bytes: bytes, eta: float, omega0: float, n_max: int) -> np.ndarray:
    t = np.frombuffer(t_bytes, dtype=float)
    rates = bsb_rabi(np.arange(n_max + 1), SidebandParams(eta, omega0))
    C = np.cos(2 * np.outer(t, rates))
    C.setflags(write=False)
    return C


class _FlopModel:
    """Cosine matrix for a fixed set of times and a maximal n (cached)."""

    def __init__(self, t, params: SidebandParams, nbar_max: float):
        self.n_max = params.n_max if params.n_max is not None else truncation(nbar_max)
        t = np.ascontiguousarray(t, dtype=float)
        self.C = _cos_matrix(t.tobytes(), params.eta, params.omega0, self.n_max)

    def __call__(self, nbar):
        return 0.5 * (1 + self.C @ thermal_weights(nbar, self.n_max))


def _golden(f, a, b, tol):
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol * (abs(c) + abs(d) + 1e-12):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (a + b) / 2


def _weights_matrix(nbars, n_max):
    """Thermal weights, shape (n_max + 1, len(nbars))."""
    n = np.arange(n_max + 1)[:, None]
    nb = np.asarray(nbars, dtype=float)[None, :]
    hot = nb[0] > 0
    W = np.zeros((n_max + 1, nb.shape[1]))
    W[:, hot] = np.exp(n * np.log(nb[:, hot] / (nb[:, hot] + 1))) / (nb[:, hot] + 1)
    W[0, ~hot] = 1.0
    return W


@functools.lru_cache(maxsize=64)
def _scan_grid(upper: float, n_grid: int, n_max: int):
    grid = np.concatenate([[0.0], np.geomspace(upper * 1e-4, upper, n_grid - 1)])
    W = _weights_matrix(grid, n_max)
    W.setflags(write=False)
    return grid, W


def _fit_once(model, y, w, upper, n_grid):
    def chi2(nb):
        return float(np.sum(w * (model(max(nb, 0.0)) - y) ** 2))

    grid, W = _scan_grid(float(upper), n_grid, model.n_max)
    P = 0.5 * (1 + model.C @ W)
    vals = np.sum(w[:, None] * (P - y[:, None]) ** 2, axis=0)
    # flat objective: the data carry no thermal information
    if not np.ptp(vals) > 1e-9 * max(vals.max(), 1e-300):
        raise NoFit("objective is flat in n-bar")
    k = int(np.argmin(vals))
    if k == len(grid) - 1:
        raise NoFit(f"chi^2 keeps falling up to the window edge n-bar = {upper:g}")
    best = _golden(chi2, grid[max(k - 1, 0)], grid[k + 1], 1e-10)
    if chi2(0.0) <= chi2(best):
        best = 0.0
    h = max(best * 1e-3, 1e-4)
    c0 = chi2(best)
    if best - h <= 0:
        curv = (chi2(best + 2 * h) - 2 * chi2(best + h) + c0) / h**2
    else:
        curv = (chi2(best + h) - 2 * c0 + chi2(best - h)) / h**2
    if not curv > 0:
        raise NoFit("objective has no curvature at the optimum")
    return best, curv


def fit_nbar(samples, params: SidebandParams, guess: float | None = None,
             shots: int | None = None, n_grid: int = 121) -> ThermalReadout:
    """Weighted least-squares n-bar from flop samples.

    Log-spaced scan over [0, 10*guess] followed by golden-section refinement;
    sigma from the curvature of chi^2 (delta chi^2 = 1). With ``shots`` the
    weights are re-evaluated from the fitted curve (binomial variance) for a
    few rounds, which removes the bias of data-derived weights.
    """
    samples = list(samples)
    if len(samples) < 5:
        raise ValueError("need at least 5 samples")
    t = np.array([s.t for s in samples])
    y = np.array([s.P_S for s in samples])
    sig = np.array([s.sigma_P for s in samples])
    w = 1.0 / sig**2
    flat = float(np.sum(w * (y - np.sum(w * y) / np.sum(w)) ** 2))
    if flat <= chi2_dist.ppf(FLAT_CONFIDENCE, len(y) - 1):
        raise NoFit("data are consistent with a constant: no thermal signal")
    if guess is None:
        guess = _initial_guess(t, y, params)
    upper = 10.0 * max(guess, 0.05)
    model = _FlopModel(t, params, upper)
    best, curv = _fit_once(model, y, w, upper, n_grid)
    for _ in range(3 if shots else 0):
        sig = binomial_sigma(model(best) * shots, shots)
        best, curv = _fit_once(model, y, 1.0 / sig**2, upper, n_grid)
    sigma = math.sqrt(2.0 / curv)
    return ThermalReadout(best, sigma, sigma)


@functools.lru_cache(maxsize=4)
def _guess_grid(n_max: int):
    grid = np.geomspace(0.01, 1000, 61)
    W = _weights_matrix(grid, n_max)
    W.setflags(write=False)
    return grid, W


def _initial_guess(t, y, params):
    """Coarse guess: n-bar whose predicted curve best matches on a wide log grid."""
    model = _FlopModel(t, params, 2000.0)
    grid = np.geomspace(0.01, 1000, 61)
    _, W = _guess_grid(model.n_max)
    P = 0.5 * (1 + model.C @ W)
    errs = np.sum((P - y[:, None]) ** 2, axis=0)
    return float(grid[int(np.argmin(errs))])


# --- fixed pulse inversion ---

def monotone_window(tau: float, params: SidebandParams, nbar_max: float = 200.0,
                    n_points: int = 801) -> tuple:
    """Largest n-bar interval from 0 over which P_S(tau; n-bar) is monotone."""
    grid = np.concatenate([[0.0], np.geomspace(1e-4, nbar_max, n_points - 1)])
    model = _FlopModel(np.array([tau]), params, nbar_max)
    p = np.array([model(g)[0] for g in grid])
    dp = np.diff(p)
    sign = np.sign(dp[np.nonzero(dp)[0][0]]) if np.any(dp) else 0.0
    if sign == 0:
        return grid[0], grid[0], p[:1]
    bad = np.nonzero(np.sign(dp) == -sign)[0]
    end = bad[0] if len(bad) else len(dp)
    return grid[0], grid[end], p[: end + 1]


def invert_fixed_pulse(P: float, sigma_P: float, tau: float, params: SidebandParams,
                       nbar_max: float = 200.0) -> ThermalReadout:
    """n-bar with P_S(tau; n-bar) = P, errors from P +- sigma_P."""
    lo, hi, p = monotone_window(tau, params, nbar_max)
    if hi <= lo or abs(p[-1] - p[0]) < 1e-9:
        raise NonMonotonic("P_S(tau) is flat in n-bar at this pulse time", window=(lo, hi))
    # same truncation rule as the forward model, so round trips are exact
    f = lambda nb: flop_population(tau, nb, params)  # noqa: E731
    pmin, pmax = min(p[0], p[-1]), max(p[0], p[-1])

    def solve(target):
        if not pmin <= target <= pmax:
            raise NonMonotonic(
                f"P = {target:.4f} outside the monotone range [{pmin:.4f}, {pmax:.4f}] "
                f"(n-bar window [{lo:g}, {hi:g}])", window=(lo, hi))
        a, b = lo, hi
        fa = f(a) - target
        for _ in range(200):
            m = 0.5 * (a + b)
            fm = f(m) - target
            if fm == 0 or b - a < 1e-12 * max(1.0, m):
                return m
            if (fm > 0) == (fa > 0):
                a, fa = m, fm
            else:
                b = m
        return 0.5 * (a + b)

    nb = solve(P)
    decreasing = p[-1] < p[0]
    clamp = lambda x: min(max(x, pmin), pmax)  # noqa: E731
    n_up = solve(clamp(P - sigma_P if decreasing else P + sigma_P))
    n_dn = solve(clamp(P + sigma_P if decreasing else P - sigma_P))
    return ThermalReadout(nb, max(nb - n_dn, 0.0), max(n_up - nb, 0.0))


# --- sideband ratio ---

def sideband_ratio_nbar(r: float, sigma_r: float = 0.0) -> ThermalReadout:
    """n-bar = r / (1 - r) from the red/blue sideband excitation ratio."""
    if r < 0:
        raise ValueError("ratio must be >= 0")
    if r >= 1:
        raise Divergent("sideband ratio >= 1: non-thermal or saturated data")
    nb = r / (1 - r)
    lo = nb - max(r - sigma_r, 0.0) / (1 - max(r - sigma_r, 0.0))
    if r + sigma_r < 1:
        hi = (r + sigma_r) / (1 - r - sigma_r) - nb
    else:
        hi = math.inf
    return ThermalReadout(nb, max(lo, 0.0), max(hi, 0.0))


def binomial_sigma(k, shots):
    """Posterior standard deviation of a binomial probability (uniform prior)."""
    k = np.asarray(k, dtype=float)
    return np.sqrt((k + 1) * (shots - k + 1) / ((shots + 2) ** 2 * (shots + 3)))


def flop_times(nbar: float, params: SidebandParams, n: int = 41, periods: float = 1.5):
    """Pulse times covering ``periods`` flop periods of the Fock state nearest n-bar."""
    rate = abs(bsb_rabi(max(int(round(nbar)), 0), params))
    return np.linspace(0.0, periods * 2 * np.pi / rate, n)


def synthetic_flop(times, nbar: float, params: SidebandParams, shots: int | None = None,
                   rng: np.random.Generator | None = None) -> list:
    """Flop samples at ``times``; binomial noise when ``shots`` is given."""
    p = np.atleast_1d(flop_population(np.asarray(times, dtype=float), nbar, params))
    if shots is None:
        return [FlopSample(float(t), float(pp), 1e-3) for t, pp in zip(times, p)]
    rng = rng or np.random.default_rng()
    k = rng.binomial(shots, p)
    return [FlopSample(float(t), float(kk / shots), float(s))
            for t, kk, s in zip(times, k, binomial_sigma(k, shots))]


def sideband_ratio_samples(nbar: float, shots: int, rng: np.random.Generator,
                           p_blue_scale: float = 0.5) -> tuple:
    """Red/blue excitation counts for a thermal state (weak-pulse limit).

    Red and blue excitation are proportional to nbar and nbar + 1; the common
    scale is ``p_blue_scale`` / (nbar + 1) so the blue probability equals
    ``p_blue_scale``.
    """
    p_b = p_blue_scale
    p_r = p_b * nbar / (nbar + 1)
    return int(rng.binomial(shots, p_r)), int(rng.binomial(shots, p_b))


def ratio_from_counts(k_red: int, k_blue: int, shots: int) -> tuple:
    """(r, sigma_r) of red/blue excitation, first-order error propagation."""
    if k_blue <= 0:
        raise Divergent("no blue-sideband excitation")
    pr, pb = k_red / shots, k_blue / shots
    sr, sb = binomial_sigma(k_red, shots), binomial_sigma(k_blue, shots)
    r = pr / pb
    return r, float(math.hypot(sr / pb, r * sb / pb))


# --- file interchange ---

def read_flop_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"t_us", "P_S", "sigma_P"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [FlopSample(float(r["t_us"]) * 1e-6, float(r["P_S"]), float(r["sigma_P"]))
                for r in reader]


def write_flop_csv(path, samples) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_us", "P_S", "sigma_P"])
        for s in samples:
            w.writerow([f"{s.t * 1e6:.6f}", f"{s.P_S:.8f}", f"{s.sigma_P:.8f}"])


def readout_json(readout: ThermalReadout) -> str:
    return json.dumps(readout.to_json(), sort_keys=True)

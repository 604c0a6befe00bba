import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", module="numba")

from exchcool.constants import CA40, CODATA, PER_MM2  # noqa: E402
from exchcool.potential import PolyPotential  # noqa: E402
from exchcool.scenario import Scenario  # noqa: E402


@pytest.fixture(scope="session")
def stray():
    """Characterized potential at the exchange point (mm units in, SI out)."""
    return PolyPotential.from_mm_units(-23.0, -1.3, -120.0, 8.4e3)


@pytest.fixture(scope="session")
def scenario():
    return Scenario.from_dict()


@pytest.fixture(scope="session")
def ideal_scenario(scenario):
    return scenario.with_overrides(ideal_ec=True)


@pytest.fixture(scope="session")
def ideal_calibration(ideal_scenario):
    from exchcool.experiments import calibrate_resonance
    return calibrate_resonance(ideal_scenario)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["CA40", "CODATA", "PER_MM2"]


TEX_GRID_US = [0.5 * k for k in range(49)]  # 0 .. 24 us


@pytest.fixture(scope="session")
def tex_sweeps(ideal_scenario, ideal_calibration):
    """Filtered and unfiltered t_ex sweeps at the calibrated field (small ensemble)."""
    from exchcool.experiments import run_tex_sweep
    sc = ideal_scenario.with_overrides(ensemble__n_energy=8, ensemble__n_phase=4)
    E_c = ideal_calibration["E_c_V_per_m"]
    return {
        "E_c": E_c,
        "filtered": run_tex_sweep(sc, TEX_GRID_US, E_c=E_c),
        "unfiltered": run_tex_sweep(sc.with_overrides(no_filter=True), TEX_GRID_US, E_c=E_c),
    }


@pytest.fixture(scope="session")
def exchange_config(ideal_scenario, ideal_calibration):
    """Static analysis of the designed hold configuration at the calibrated field."""
    from exchcool.potential import pair_analysis
    fr = ideal_scenario.frames(ideal_calibration["E_c_V_per_m"], filtered=False)
    sch = ideal_scenario.schedule(ideal_calibration["E_c_V_per_m"])
    t0, t1 = sch.bounds("b2")
    k = int(round(0.5 * (t0 + t1) * fr.sample_rate))
    return pair_analysis(fr.poly_at(k), ideal_scenario.species, ideal_scenario.constants)


@pytest.fixture(scope="session")
def compensation_sweep(scenario):
    """Default-grid compensation sweep (transport a1..b2, static hold)."""
    from exchcool.experiments import run_compensation_sweep
    return run_compensation_sweep(scenario)


@pytest.fixture(scope="session")
def cooling_curve(ideal_scenario, ideal_calibration):
    """Cooling curve at the default n-bar grid plus the extreme n-bar = 1000 row."""
    from exchcool.experiments import run_cooling_curve
    return run_cooling_curve(ideal_scenario, [15.0, 50.0, 106.0, 1000.0],
                             E_c=ideal_calibration["E_c_V_per_m"])


# --- acceptance reporting ---

ACCEPTANCE: dict = {}


def report(n: int, ok: bool, detail: str) -> None:
    """Record and print one acceptance verdict."""
    line = f"CRITERION {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])

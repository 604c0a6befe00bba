import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exchcool.constants import CA40, CODATA, PER_MM2, PER_MM4, UM, khz_to_rad, rad_to_khz
from exchcool.potential import (Compensation, NoConvergence, NotDoubleWell, PolyPotential,
                                characterize_stray, coupled_modes, evaluate, exchange_amplitude,
                                exchange_rate, find_minima, forward_model, mode_splitting,
                                pair_analysis, pair_equilibrium, resonant_field,
                                symmetric_double_well, symmetry_center, two_ion_double_well,
                                well_frequencies)

TWO_PI = 2 * math.pi


def direct_rate(d, w1, w2, m1, m2):
    """Independent evaluation from raw constants."""
    e, eps0 = 1.602176634e-19, 8.8541878128e-12
    return e**2 / (4 * math.pi * eps0 * d**3 * math.sqrt(m1 * m2) * math.sqrt(w1 * w2))


class TestEvaluate:
    def test_zero_at_origin(self, stray):
        assert evaluate(stray, 0.0) == 0.0

    def test_quartic_arithmetic(self):
        p = PolyPotential.from_mm_units(0.0, -0.3, 0.0, 9e3)
        assert evaluate(p, 1e-3) == pytest.approx(8999.7, rel=1e-12)

    def test_linear_term_sign(self):
        assert evaluate(PolyPotential(E0=10.0), 1e-3) == pytest.approx(-0.01, rel=1e-12)

    def test_unit_round_trip(self, stray):
        mm = stray.to_mm_units()
        assert PolyPotential.from_mm_units(**mm) == stray


class TestSymmetricDoubleWell:
    def test_round_trip(self):
        p = symmetric_double_well(14 * UM, khz_to_rad(450))
        z1, z2 = find_minima(p)
        assert z2 - z1 == pytest.approx(14 * UM, rel=1e-9)
        wa = well_frequencies(p)
        assert wa.omega1 == pytest.approx(khz_to_rad(450), rel=1e-9)
        assert wa.omega2 == pytest.approx(khz_to_rad(450), rel=1e-9)

    def test_scaling(self):
        a = symmetric_double_well(14 * UM, 1e6)
        b = symmetric_double_well(14 * UM, 2e6)
        assert b.alpha / a.alpha == pytest.approx(4)
        assert b.beta / a.beta == pytest.approx(4)

    def test_beta_magnitude_matches_characterized(self):
        p = symmetric_double_well(14 * UM, khz_to_rad(450))
        beta_mm = p.beta / PER_MM4
        # direct arithmetic m w^2 / (2 q d^2)
        expect = CA40.mass * khz_to_rad(450) ** 2 / (2 * CA40.charge * (14 * UM) ** 2) / PER_MM4
        assert beta_mm == pytest.approx(expect, rel=1e-12)
        assert 0.5 < beta_mm / 8.4e3 < 2.0

    def test_two_ion_design_holds_pair_at_d(self):
        p = two_ion_double_well(14 * UM, khz_to_rad(450))
        z1, z2 = pair_equilibrium(p)
        assert z2 - z1 == pytest.approx(14 * UM, rel=1e-9)
        pa = pair_analysis(p)
        assert pa.omega1 == pytest.approx(khz_to_rad(450), rel=1e-9)
        pc = pair_analysis(two_ion_double_well(14 * UM, khz_to_rad(450), coulomb_in_omega=True))
        assert pc.local1 == pytest.approx(khz_to_rad(450), rel=1e-9)


class TestFindMinima:
    def test_symmetric_closed_form(self):
        p = PolyPotential.from_mm_units(0.0, -0.3, 0.0, 9e3)
        z1, z2 = find_minima(p)
        zm = math.sqrt(0.3 * PER_MM2 / (2 * 9e3 * PER_MM4))
        assert z1 == pytest.approx(-zm, rel=1e-10)
        assert z2 == pytest.approx(zm, rel=1e-10)
        assert zm == pytest.approx(4.082 * UM, rel=1e-3)

    def test_single_well(self):
        p = PolyPotential.from_mm_units(0.0, 1.0, 0.0, 9e3)
        assert find_minima(p) == (0.0,) or len(find_minima(p)) == 1
        with pytest.raises(NotDoubleWell):
            well_frequencies(p)

    def test_field_shifts_midpoint_against_field(self):
        p = PolyPotential.from_mm_units(0.0, -0.3, 0.0, 9e3)
        q = PolyPotential.from_mm_units(0.3, -0.3, 0.0, 9e3)
        z = np.linspace(-8e-6, 8e-6, 400001)
        for poly in (p, q):
            z1, z2 = find_minima(poly)
            v = poly.value(z)
            left, right = z < 0, z >= 0
            g1 = z[left][np.argmin(v[left])]
            g2 = z[right][np.argmin(v[right])]
            assert abs(z1 - g1) < 1e-10 and abs(z2 - g2) < 1e-10
        (a1, a2), (b1, b2) = find_minima(p), find_minima(q)
        # -E0 z with E0 > 0 lowers the potential at positive z
        assert b1 > a1 and b2 > a2

    @settings(max_examples=1000, deadline=None)
    @given(alpha=st.floats(-3.0, -0.05), gamma=st.floats(-300, 300), E0=st.floats(-30, 30),
           beta=st.floats(2e3, 2e4))
    def test_grid_oracle(self, alpha, gamma, E0, beta):
        p = PolyPotential.from_mm_units(E0, alpha, gamma, beta)
        mins = find_minima(p)
        # Cauchy bound on the roots of V'(z) sets the grid span
        c = np.array([4 * p.beta, 3 * p.gamma, 2 * p.alpha, -p.E0]) * 1e-6 ** np.arange(3, -1, -1)
        R = (1 + np.max(np.abs(c[1:])) / abs(c[0])) * 1e-6
        z = np.linspace(-R, R, 400001)
        h = z[1] - z[0]
        v = p.value(z)
        interior = (v[1:-1] < v[:-2]) & (v[1:-1] <= v[2:])
        grid_mins = z[1:-1][interior]
        assert len(grid_mins) == len(mins)
        for a, b in zip(mins, grid_mins):
            assert abs(a - b) <= h


class TestFrequencies:
    def test_symmetric_frequency(self):
        p = PolyPotential.from_mm_units(0.0, -0.823, 0.0, 8.4e3)
        wa = well_frequencies(p)
        assert wa.delta_omega == pytest.approx(0.0, abs=1e-6)
        expect = math.sqrt(4 * 0.823 * PER_MM2 * CA40.charge / CA40.mass)
        assert wa.omega1 == pytest.approx(expect, rel=1e-10)
        assert rad_to_khz(wa.omega1) == pytest.approx(448, abs=1.0)

    def test_design_band(self):
        wa = well_frequencies(symmetric_double_well(14 * UM, khz_to_rad(450)))
        assert 400 <= rad_to_khz(wa.omega1) <= 600


class TestExchange:
    def test_d_cubed(self):
        a = exchange_rate(14 * UM, 1e6, 1e6, CA40.mass, CA40.mass)
        b = exchange_rate(28 * UM, 1e6, 1e6, CA40.mass, CA40.mass)
        assert a / b == pytest.approx(8.0, rel=1e-12)

    def test_rate_value(self):
        w = khz_to_rad(450)
        Om = exchange_rate(14 * UM, w, w, CA40.mass, CA40.mass)
        assert Om == pytest.approx(direct_rate(14 * UM, w, w, CA40.mass, CA40.mass), rel=1e-8)
        assert Om / TWO_PI == pytest.approx(71e3, rel=0.01)
        far = exchange_rate(140 * UM, w, w, CA40.mass, CA40.mass)
        assert far / TWO_PI == pytest.approx(71, rel=0.01)

    def test_symmetric_in_ions(self):
        a = exchange_rate(14 * UM, 1e6, 2e6, 1e-25, 2e-25)
        b = exchange_rate(14 * UM, 2e6, 1e6, 2e-25, 1e-25)
        assert a == pytest.approx(b, rel=1e-14)

    def test_amplitude(self):
        assert exchange_amplitude(0.0, 1.0) == 1.0
        assert exchange_amplitude(2.0, 1.0) == pytest.approx(0.5)
        thresh = 2 * math.sqrt(199)
        assert thresh == pytest.approx(28.2, abs=0.05)
        assert exchange_amplitude(thresh * 1.0001, 1.0) < 0.005
        assert exchange_amplitude(thresh * 0.9999, 1.0) > 0.005

    @given(dw=st.floats(-1e7, 1e7), Om=st.floats(1e2, 1e7))
    def test_identity(self, dw, Om):
        lhs = exchange_amplitude(dw, Om) * mode_splitting(dw, Om) ** 2
        assert lhs == pytest.approx(4 * Om**2, rel=1e-12)

    def test_coupled_modes(self):
        wa = well_frequencies(symmetric_double_well(14 * UM, khz_to_rad(450)))
        cm = coupled_modes(wa)
        assert cm.delta_Omega == pytest.approx(2 * cm.Omega_ex, rel=1e-6)
        assert cm.omega_plus >= cm.omega_minus
        dO = mode_splitting(khz_to_rad(30), khz_to_rad(71))
        assert rad_to_khz(dO) == pytest.approx(145.1, abs=0.05)
        big = mode_splitting(1e7, 1e3)
        assert big == pytest.approx(1e7, rel=1e-7)


class TestCharacterize:
    @staticmethod
    def side(poly):
        pa = pair_analysis(poly)
        return "left" if pa.local1 > pa.local2 else "right"

    def test_round_trip_characterized(self, stray):
        applied = Compensation(10.5, 0.0)
        obs = forward_model(applied.applied_to(stray))
        rec = characterize_stray(*obs, applied=applied, stiffer=self.side(applied.applied_to(stray)))
        for a, b in zip(rec.as_array(), stray.as_array()):
            assert a == pytest.approx(b, rel=1e-4)

    def test_forward_reproduces_inputs(self, stray):
        applied = Compensation(10.5, 0.0)
        obs = forward_model(applied.applied_to(stray))
        rec = characterize_stray(*obs, applied=applied)  # either branch reproduces the inputs
        again = forward_model(applied.applied_to(rec))
        assert np.allclose(again, obs, rtol=1e-6, atol=0)

    def test_symmetric_zero(self):
        p = two_ion_double_well(14 * UM, khz_to_rad(450))
        rec = characterize_stray(*forward_model(p))
        assert abs(rec.E0) < 1e-6 and abs(rec.gamma) < 1e-6 * abs(rec.beta) * 1e-6

    def test_both_branches_fit_observables(self, stray):
        obs = forward_model(stray)
        for side in ("left", "right"):
            again = forward_model(characterize_stray(*obs, stiffer=side))
            assert np.allclose(again, obs, rtol=1e-6, atol=0)

    def test_sensitivity_matches_jacobian(self, stray):
        obs = np.array(forward_model(stray))
        side = self.side(stray)

        def beta(wp):
            o = obs.copy()
            o[0] = wp
            return characterize_stray(*o, stiffer=side).beta

        w = obs[0]
        h = 1e-5
        jac = (beta(w * (1 + h)) - beta(w * (1 - h))) / (2 * h)
        fd = (beta(w * 1.01) - beta(w)) / 0.01
        assert fd == pytest.approx(jac, rel=0.01)

    def test_inconsistent_inputs(self):
        with pytest.raises(NoConvergence):
            characterize_stray(khz_to_rad(500), khz_to_rad(499.9), 0.0, 14 * UM)

    @settings(max_examples=40, deadline=None)
    @given(s=st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(0.5, 2.0)))
    def test_round_trip_random(self, s):
        E0, a, g, b = s
        p = PolyPotential.from_mm_units(-23 * E0, -1.3 * abs(a) - 0.3, -120 * g, 8.4e3 * b)
        try:
            obs = forward_model(p)
        except (NotDoubleWell, ValueError, NoConvergence):
            return
        rec = characterize_stray(*obs, stiffer=self.side(p))
        got, want = rec.to_mm_units(), p.to_mm_units()
        for k in want:
            assert got[k] == pytest.approx(want[k], rel=1e-4, abs=1e-6 * want["beta_V_per_mm4"])


class TestResonance:
    def test_zero_stray(self):
        p = PolyPotential.from_mm_units(0.0, -1.3, 0.0, 8.4e3)
        for ac in (0.0, 0.5, 1.33):
            assert resonant_field(ac * PER_MM2, p) == pytest.approx(0.0, abs=1e-12)

    def test_slope(self, stray):
        z0 = symmetry_center(stray)
        a, b = resonant_field(0.0, stray), resonant_field(1.0 * PER_MM2, stray)
        assert (b - a) / PER_MM2 == pytest.approx(2 * z0, rel=1e-12)

    def test_operating_point(self, stray):
        assert symmetry_center(stray) == pytest.approx(3.571 * UM, rel=1e-3)
        E = resonant_field(1.33 * PER_MM2, stray)
        assert E == pytest.approx(20.2, abs=0.1)
        # within a few V/m of the measured operating point (day-to-day drift)
        assert abs(E - 23.0) < 4.0

    def test_resonance_zeroes_detuning(self, stray):
        ac = 1.33 * PER_MM2
        p = Compensation(resonant_field(ac, stray), ac).applied_to(stray)
        pa = pair_analysis(p)
        assert abs(pa.delta_omega) < 1e-3 * 0.5 * (pa.local1 + pa.local2)

    @settings(max_examples=60, deadline=None)
    @given(E0=st.floats(-50, 50), g=st.floats(-250, 250), b=st.floats(5e3, 2e4),
           ac=st.floats(0.5, 1.5))
    def test_resonance_random(self, E0, g, b, ac):
        stray = PolyPotential.from_mm_units(E0, -1.3, g, b)
        p = Compensation(resonant_field(ac * PER_MM2, stray), ac * PER_MM2).applied_to(stray)
        try:
            pa = pair_analysis(p)
        except (NotDoubleWell, ValueError, NoConvergence):
            return
        assert abs(pa.delta_omega) < 1e-3 * 0.5 * (pa.local1 + pa.local2)

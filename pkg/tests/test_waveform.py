import math
from dataclasses import replace

import numpy as np
import pytest

from exchcool.constants import PER_MM2, UM, US, khz_to_rad
from exchcool.potential import Compensation, PolyPotential, pair_equilibrium
from exchcool.waveform import (SEGMENT_IDS, QuantizationSpec, build, compensation_weight,
                               correction_for, correction_weight, default_schedule,
                               omega_profile_default, overlay_envelope, separation_profile,
                               static_frames)


@pytest.fixture(scope="module")
def sched(stray):
    s = default_schedule()
    return replace(s, stray=correction_for(stray, s),
                   compensation_off=Compensation(24.0, -0.16 * PER_MM2),
                   compensation_on=Compensation(23.0, 1.33 * PER_MM2))


class TestSchedule:
    def test_total(self):
        assert default_schedule().total_duration == pytest.approx(107.3 * US, rel=1e-12)

    def test_ramps(self):
        s = default_schedule()
        assert s.duration_of("b1") == pytest.approx(2 * US)
        assert s.duration_of("b3") == pytest.approx(2 * US)

    def test_zero_hold(self):
        assert default_schedule().with_t_ex(0.0).total_duration == pytest.approx(101.5 * US)

    def test_segment_order(self):
        assert tuple(s.id for s in default_schedule().segments) == SEGMENT_IDS

    def test_bad_segments(self):
        s = default_schedule()
        with pytest.raises(ValueError):
            replace(s, segments=s.segments[::-1])
        with pytest.raises(ValueError):
            replace(s, d_in=200 * UM)


class TestSeparation:
    def test_endpoints(self):
        s = default_schedule()
        assert separation_profile(s, 0.0) == pytest.approx(140 * UM)
        assert separation_profile(s, s.total_duration) == pytest.approx(140 * UM)
        assert separation_profile(s, s.bounds("a1")[1]) == pytest.approx(77 * UM)

    def test_hold_midpoints(self):
        s = default_schedule()
        for seg in ("s_a", "b1", "b2", "b3", "s_b"):
            t0, t1 = s.bounds(seg)
            assert separation_profile(s, 0.5 * (t0 + t1)) == 14 * UM

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            separation_profile(default_schedule(), -1e-6)

    def test_c2_reverses_a1(self):
        s = default_schedule()
        a0, a1 = s.bounds("a1")
        c0, c1 = s.bounds("c2")
        assert a1 - a0 == pytest.approx(c1 - c0)
        u = np.linspace(0, 1, 51)
        fwd = separation_profile(s, a0 + u * (a1 - a0))
        rev = separation_profile(s, c1 - u * (c1 - c0))
        assert np.allclose(fwd, rev, rtol=0, atol=1e-15)

    def test_monotone_approach(self):
        s = default_schedule()
        t = np.linspace(0, s.bounds("a2")[1], 2001)
        assert np.all(np.diff(separation_profile(s, t)) <= 1e-18)


class TestOmegaProfile:
    def test_endpoints_and_bounds(self):
        assert omega_profile_default(140 * UM) == pytest.approx(khz_to_rad(1300))
        assert omega_profile_default(14 * UM) == pytest.approx(khz_to_rad(450))
        assert omega_profile_default(77 * UM) / khz_to_rad(1300) >= 0.8
        d = np.linspace(14, 140, 500) * UM
        assert np.all(np.diff(omega_profile_default(d)) > 0)


class TestBuild:
    def test_frame_count_and_finite(self, sched):
        fr = build(sched, 2e6)
        assert len(fr.frames) == math.ceil(sched.total_duration * 2e6 - 1e-9)
        assert np.all(np.isfinite(fr.frames))
        assert abs(len(fr.frames) / 2e6 - sched.total_duration) <= 1 / 2e6

    def test_zero_stray_correction_is_noop(self):
        s = default_schedule(compensation_on=Compensation(3.0, 0.5 * PER_MM2))
        a = build(s)
        b = build(replace(s, corrections_enabled=False))
        assert np.array_equal(a.frames, b.frames)

    def test_b2_holds_compensation_on(self, sched):
        fr = build(sched, 2e6)
        t0, t1 = sched.bounds("b2")
        k = int(round(0.5 * (t0 + t1) * 2e6))
        assert fr.frames[k, 4] == pytest.approx(23.0)
        assert fr.frames[k, 5] == pytest.approx(1.33 * PER_MM2)
        # the characterized potential is fully present at the exchange point
        assert np.allclose(fr.frames[k, :4], sched.design(sched.d_in).as_array() + sched.stray.as_array())

    def test_quantization(self):
        q = QuantizationSpec(1.0, True)
        assert q.quantize(23.0) == 23.0
        assert abs(q.quantize(23.4) - 23.4) == pytest.approx(0.4)
        s = default_schedule(compensation_on=Compensation(23.4, 0.0))
        fr = build(s, 2e6, q)
        assert fr.channel("E_c").max() == pytest.approx(23.0)

    def test_continuity_scales_with_sample_step(self, sched):
        d1 = np.max(np.abs(np.diff(build(sched, 2e6).frames, axis=0)), axis=0)
        d2 = np.max(np.abs(np.diff(build(sched, 4e6).frames, axis=0)), axis=0)
        ok = d1 > 0
        assert np.allclose(d2[ok] / d1[ok], 0.5, rtol=0.1)

    def test_symmetric_without_stray(self):
        fr = build(default_schedule())
        assert np.all(fr.channel("E0") == 0) and np.all(fr.channel("gamma") == 0)
        assert np.all(fr.channel("E_c") == 0)

    def test_ramp_weights(self, sched):
        t = np.array([sched.bounds("b1")[0], sum(sched.bounds("b1")) / 2, sched.bounds("b2")[0]])
        assert np.allclose(compensation_weight(sched, t), [0, 0.5, 1])
        t_out = np.array([0.0, sched.bounds("a1")[1], sched.total_duration])
        assert np.allclose(overlay_envelope(sched, t_out), 0)
        assert np.all(correction_weight(replace(sched, corrections_enabled=False), t_out) == 0)

    def test_overlay_starts_at_twice_d_in(self, sched):
        t = np.linspace(*sched.bounds("a2"), 4001)
        env = overlay_envelope(sched, t)
        d = separation_profile(sched, t)
        assert np.all(env[d > 2 * sched.d_in + 1e-12] == 0)
        assert env[-1] == pytest.approx(1)
        assert np.all(np.diff(env) >= -1e-15)

    def test_design_places_ions_at_separation(self):
        s = default_schedule()
        fr = build(s)
        for k in (0, len(fr.frames) // 4):
            z1, z2 = pair_equilibrium(fr.poly_at(k))
            assert z2 - z1 == pytest.approx(fr.separation[k], rel=1e-6)

    def test_static_frames(self):
        p = PolyPotential(1.0, -2.0, 3.0, 4.0)
        fr = static_frames(p, 10 * US, compensation=Compensation(5.0, 6.0))
        assert fr.poly_at(3) == PolyPotential(6.0, 4.0, 3.0, 4.0)

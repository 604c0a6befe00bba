import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal

from exchcool import filters
from exchcool.filters import (FilterError, FilterSpec, apply, design_lowpass, step_metrics,
                              step_response, with_cutoff)
from exchcool.waveform import Compensation, build, default_schedule

FS = 2e6


@pytest.fixture(scope="module")
def filt():
    return design_lowpass(FilterSpec(FS))


class TestDesign:
    def test_dc_gain_and_stability(self, filt):
        assert abs(filt.response(0.0)) == pytest.approx(1.0, rel=1e-9)
        assert np.all(np.abs(filt.poles()) < 1)

    def test_matches_reference_design(self, filt):
        # independent oracle: scipy's Chebyshev I with the same prewarped edge
        spec = filt.spec
        ref = signal.cheby1(spec.order, spec.ripple_db, spec.cutoff, fs=FS, output="sos")
        f = np.linspace(0, 0.45 * FS, 300)
        _, h = signal.sosfreqz(ref, worN=f, fs=FS)
        assert np.allclose(np.abs(filt.response(f)), np.abs(h) / np.abs(h[0]), atol=1e-6)

    def test_cutoff_attenuation_is_ripple(self, filt):
        # even order: DC sits in a ripple trough, so the edge is down by the
        # ripple from the passband peak and level with DC
        peak = np.max(np.abs(filt.response(np.linspace(0, 150e3, 20001))))
        edge = abs(filt.response(150e3))
        assert 20 * np.log10(edge / peak) == pytest.approx(-filt.spec.ripple_db, abs=1e-4)
        assert edge == pytest.approx(1.0, abs=1e-9)

    def test_stopband(self, filt):
        assert 20 * np.log10(abs(filt.response(400e3))) < -50

    def test_invalid(self):
        with pytest.raises(FilterError):
            FilterSpec(FS, order=5)
        with pytest.raises(FilterError):
            FilterSpec(FS, cutoff=1.5e6)
        with pytest.raises(FilterError):
            FilterSpec(FS, ripple_db=0)


class TestApply:
    def test_constant(self, filt):
        x = np.full((100, 3), 7.5)
        assert np.allclose(apply(filt, x, FS), x, rtol=0, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2**16))
    def test_linear(self, filt, a, b, seed):
        r = np.random.default_rng(seed)
        X, Y = r.normal(size=300), r.normal(size=300)
        lhs = apply(filt, a * X + b * Y, FS)
        rhs = a * apply(filt, X, FS) + b * apply(filt, Y, FS)
        assert np.allclose(lhs, rhs, atol=1e-9)

    def test_rate_mismatch(self, filt):
        with pytest.raises(FilterError):
            apply(filt, np.ones(10), 4e6)

    def test_ramp_lags(self, filt):
        n0, n1 = 40, 44  # 2 us ramp at 2 MHz
        x = np.zeros(200)
        x[n0:n1] = np.linspace(0, 1, n1 - n0 + 1)[1:]
        x[n1:] = 1.0
        y = apply(filt, x, FS)
        assert abs(y[n1 - 1] - 1.0) > 0.1

    def test_frame_series(self, filt):
        fr = build(default_schedule(compensation_on=Compensation(20.0, 1e6)), FS)
        out = apply(filt, fr)
        assert out.frames.shape == fr.frames.shape and out.duration == fr.duration
        assert out.frames[0] == pytest.approx(fr.frames[0])


class TestMetrics:
    def test_target_step_metrics(self, filt):
        rise, settle = step_metrics(filt)
        assert rise == pytest.approx(7.5e-6, rel=0.25)
        assert settle == pytest.approx(22e-6, rel=0.25)

    def test_doubling_cutoff(self, filt):
        r1, s1 = step_metrics(design_lowpass(FilterSpec(8e6)))
        r2, s2 = step_metrics(design_lowpass(FilterSpec(8e6, cutoff=300e3)))
        assert r2 / r1 == pytest.approx(0.5, rel=0.02)
        assert s2 / s1 == pytest.approx(0.5, rel=0.02)

    def test_sample_rate_invariance(self, filt):
        a = step_metrics(filt)
        b = step_metrics(design_lowpass(FilterSpec(8e6)))
        assert np.allclose(a, b, rtol=0.03)

    def test_impulse_decay_and_dc(self, filt):
        n = int(100 / filt.spec.cutoff * FS)
        x = np.zeros(n)
        x[0] = 1
        h, _ = signal.sosfilt(filt.sos, x, zi=np.zeros((len(filt.sos), 2)))
        assert np.max(np.abs(h[-20:])) < 1e-9 * np.max(np.abs(h))
        _, y = step_response(filt, 200 / filt.spec.cutoff)
        assert y[-1] == pytest.approx(1.0, abs=1e-9)

    def test_with_cutoff(self, filt):
        assert with_cutoff(filt, 100e3).spec.cutoff == 100e3
        assert filters.DEFAULT_RIPPLE_DB == filt.spec.ripple_db

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wfrloc.signal import DiscreteMeasure, Seismogram
from wfrloc.w2 import NormalizedMeasure, normalize, w2_1d, w2_misfit


def measure(masses, positions):
    return DiscreteMeasure(np.asarray(masses, float), np.asarray(positions, float))


def w2_sq_quadrature(a, b, n=200001):
    """Independent oracle: dense midpoint quadrature of the quantile integral."""
    q = (np.arange(n) + 0.5) / n
    ca, cb = np.cumsum(a.masses), np.cumsum(b.masses)
    ia = np.minimum(np.searchsorted(ca, q, side="left"), ca.size - 1)
    ib = np.minimum(np.searchsorted(cb, q, side="left"), cb.size - 1)
    return float(np.mean((a.positions[ia] - b.positions[ib]) ** 2))


class TestNormalize:
    def test_halves(self):
        out = normalize(measure([2.0, 2.0], [0.0, 1.0]))
        assert np.allclose(out.masses, [0.5, 0.5])

    def test_already_normalized(self):
        out = normalize(measure([0.25, 0.75], [0.0, 1.0]))
        assert np.allclose(out.masses, [0.25, 0.75])

    def test_scale_invariance(self):
        m = measure([1.0, 3.0, 2.0], [0.0, 0.5, 1.0])
        a = normalize(m)
        b = normalize(m.scaled(10.0))
        assert np.allclose(a.masses, b.masses)

    def test_zero_mass_rejected(self):
        with pytest.raises(ValueError):
            normalize(measure([0.0, 0.0], [0.0, 1.0]))


class TestW2Distance:
    def test_identical(self):
        a = normalize(measure([1.0, 2.0], [0.0, 1.0]))
        assert w2_1d(a, a) == 0.0

    def test_dirac_translation(self):
        a = normalize(measure([1.0], [1.0]))
        b = normalize(measure([1.0], [3.0]))
        assert w2_1d(a, b) == pytest.approx(2.0, rel=1e-14)

    def test_against_quadrature_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            a = normalize(measure(rng.uniform(0.1, 1, 5), np.sort(rng.uniform(0, 4, 5))))
            b = normalize(measure(rng.uniform(0.1, 1, 5), np.sort(rng.uniform(0, 4, 5))))
            exact = w2_1d(a, b) ** 2
            approx = w2_sq_quadrature(a, b)
            assert exact == pytest.approx(approx, abs=1e-8, rel=1e-4)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_symmetry_and_triangle(self, seed):
        rng = np.random.default_rng(seed)
        ms = [
            normalize(measure(rng.uniform(0.05, 1, 4), np.sort(rng.uniform(0, 3, 4))))
            for _ in range(3)
        ]
        d01, d10 = w2_1d(ms[0], ms[1]), w2_1d(ms[1], ms[0])
        assert d01 == pytest.approx(d10, abs=1e-9)
        d02 = w2_1d(ms[0], ms[2])
        d12 = w2_1d(ms[1], ms[2])
        assert d02 <= d01 + d12 + 1e-9


class TestW2Misfit:
    def _ricker_trace(self, shift=0.0, scale=1.0):
        t = np.arange(0, 10, 0.005)
        arg = (np.pi * 2.0 * (t - 4.0 - shift)) ** 2
        return Seismogram(scale * (1 - 2 * arg) * np.exp(-arg), 0.0, 0.005)

    def test_identical_zero(self):
        d = self._ricker_trace()
        assert w2_misfit(d, d) == 0.0

    def test_amplitude_blindness(self):
        d = self._ricker_trace()
        s = self._ricker_trace(scale=2.0)
        assert w2_misfit(d, s) == pytest.approx(0.0, abs=1e-20)

    def test_shift_squared_behavior(self):
        d = self._ricker_trace()
        s = self._ricker_trace(shift=0.5)
        assert w2_misfit(d, s) == pytest.approx(0.25, rel=0.02)

    def test_window_applied(self):
        d = self._ricker_trace()
        s = self._ricker_trace(shift=0.2)
        full = w2_misfit(d, s)
        windowed = w2_misfit(d, s, win=(2.0, 6.5))
        assert windowed == pytest.approx(full, rel=0.25)

    def test_zero_energy_window_rejected(self):
        d = self._ricker_trace()
        with pytest.raises(ValueError):
            w2_misfit(d, d, win=(8.5, 9.5))

    def test_any_scale_zero(self):
        d = self._ricker_trace()
        for alpha in (-3.0, 0.5, 7.0):
            s = Seismogram(alpha * d.samples, d.t0, d.dt)
            assert w2_misfit(d, s) == pytest.approx(0.0, abs=1e-20)

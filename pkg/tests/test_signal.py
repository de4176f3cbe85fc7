import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wfrloc.signal import (
    DiscreteMeasure,
    NoiseSpec,
    Seismogram,
    add_noise,
    read_csv,
    resample,
    shift,
    square_to_measure,
    window,
    write_csv,
)


def make_trace(samples, dt=0.01, t0=0.0, rid=0):
    return Seismogram(np.asarray(samples, dtype=float), t0, dt, rid)


class TestSeismogram:
    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            make_trace([0.0, 1.0], dt=0.0)

    def test_rejects_short(self):
        with pytest.raises(ValueError):
            make_trace([1.0])

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            make_trace([0.0, np.nan])

    def test_times(self):
        s = make_trace([0, 1, 2], dt=0.5, t0=1.0)
        assert np.allclose(s.times, [1.0, 1.5, 2.0])


class TestSquareToMeasure:
    def test_zero_signal(self):
        m = square_to_measure(make_trace(np.zeros(8)))
        assert m.total_mass == 0.0

    def test_elementwise_square(self):
        m = square_to_measure(make_trace([1.0, -2.0, 3.0]))
        assert np.array_equal(m.masses, [1.0, 4.0, 9.0])

    def test_sign_flip_invariant(self):
        s = make_trace([0.3, -1.2, 0.7, 2.0])
        flipped = make_trace([-0.3, 1.2, -0.7, -2.0])
        assert np.array_equal(
            square_to_measure(s).masses, square_to_measure(flipped).masses
        )

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=40))
    def test_total_mass_is_sum_of_squares(self, vals):
        s = make_trace(vals)
        assert square_to_measure(s).total_mass == pytest.approx(
            float(np.sum(np.square(vals))), abs=0.0, rel=1e-15
        )


class TestAddNoise:
    def test_zero_ratio_identity(self):
        s = make_trace([1.0, 2.0, -3.0])
        out = add_noise(s, NoiseSpec(ratio=0.0, seed=1))
        assert out is s

    def test_noise_magnitude(self):
        n = 40000
        s = make_trace(np.concatenate([[1.0], np.zeros(n - 1)]))
        out = add_noise(s, NoiseSpec(ratio=0.2, seed=7))
        sigma = np.std(out.samples - s.samples)
        assert sigma == pytest.approx(0.2, rel=0.05)

    def test_deterministic(self):
        s = make_trace(np.sin(np.arange(100)))
        a = add_noise(s, NoiseSpec(ratio=0.3, seed=99))
        b = add_noise(s, NoiseSpec(ratio=0.3, seed=99))
        assert np.array_equal(a.samples, b.samples)

    def test_receiver_streams_differ(self):
        a = add_noise(make_trace(np.ones(64), rid=0), NoiseSpec(ratio=0.1, seed=5))
        b = add_noise(make_trace(np.ones(64), rid=1), NoiseSpec(ratio=0.1, seed=5))
        assert not np.array_equal(a.samples, b.samples)

    def test_negative_ratio_rejected(self):
        with pytest.raises(ValueError):
            NoiseSpec(ratio=-0.1, seed=0)


class TestResample:
    def test_identity(self):
        s = make_trace(np.arange(10.0))
        assert resample(s, 1) is s

    def test_factor_four(self):
        s = make_trace(np.arange(1000.0), dt=0.01)
        out = resample(s, 4)
        assert out.samples.size == 250
        assert out.dt == pytest.approx(0.04)
        assert out.t0 == s.t0

    def test_peak_time_preserved(self):
        t = np.arange(0, 10, 0.01)
        s = make_trace(np.exp(-((t - 4.37) / 0.3) ** 2), dt=0.01)
        out = resample(s, 4)
        t_peak_before = s.times[np.argmax(s.samples)]
        t_peak_after = out.times[np.argmax(out.samples)]
        assert abs(t_peak_after - t_peak_before) <= out.dt

    def test_factor_exceeding_length(self):
        with pytest.raises(ValueError):
            resample(make_trace(np.arange(5.0)), 5)


class TestWindow:
    def test_full_span_identity(self):
        s = make_trace(np.arange(10.0), dt=0.5)
        out = window(s, -1.0, 100.0)
        assert np.array_equal(out.samples, s.samples)

    def test_excludes_energy(self):
        t = np.arange(0, 10, 0.01)
        s = make_trace(np.exp(-((t - 2.0) / 0.2) ** 2), dt=0.01)
        out = window(s, 6.0, 9.0)
        assert square_to_measure(out).total_mass < 1e-12

    def test_retains_energy_of_noise_free_part(self):
        t = np.arange(0, 20, 0.01)
        clean = np.exp(-((t - 5.0) / 0.4) ** 2) * np.sin(12 * t)
        s = make_trace(clean, dt=0.01)
        noisy = add_noise(s, NoiseSpec(ratio=0.2, seed=3))
        out = window(noisy, 5.0 - 1.5, 5.0 + 1.5)
        kept = square_to_measure(window(s, 3.5, 6.5)).total_mass
        total = square_to_measure(s).total_mass
        assert kept >= 0.95 * total

    def test_empty_window_rejected(self):
        s = make_trace(np.arange(10.0), dt=0.5)
        with pytest.raises(ValueError):
            window(s, 100.0, 200.0)
        with pytest.raises(ValueError):
            window(s, 3.0, 1.0)


class TestShift:
    def test_shift_moves_peak(self):
        t = np.arange(0, 10, 0.01)
        s = make_trace(np.exp(-((t - 3.0) / 0.3) ** 2), dt=0.01)
        out = shift(s, 1.5)
        assert out.times[np.argmax(out.samples)] == pytest.approx(4.5, abs=0.02)

    def test_prefix_zero_filled(self):
        s = make_trace(np.ones(100), dt=0.1)
        out = shift(s, 2.0)
        assert np.all(out.samples[:19] == 0.0)


class TestCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        s = make_trace(rng.normal(size=50), dt=0.013, t0=2.5, rid=3)
        p = tmp_path / "trace.csv"
        write_csv(s, p)
        back = read_csv(p, receiver_id=3)
        assert np.array_equal(back.samples, s.samples)
        assert back.dt == pytest.approx(s.dt, rel=1e-15)
        assert back.t0 == pytest.approx(s.t0, rel=1e-15)
        assert p.read_text().splitlines()[0] == "t,amplitude"

    def test_byte_identical_rewrites(self, tmp_path):
        s = make_trace(np.sin(np.arange(64) * 0.37), dt=0.01)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_csv(s, p1)
        write_csv(s, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestMeasureValidation:
    def test_negative_mass_rejected(self):
        with pytest.raises(ValueError):
            DiscreteMeasure([-1.0], [0.0])

    def test_positions_strictly_increasing(self):
        with pytest.raises(ValueError):
            DiscreteMeasure([1.0, 1.0], [0.0, 0.0])

"""Seismogram containers and the signal -> measure pipeline.

Traces are uniformly sampled time series.  Squaring a trace turns it into a
non-negative measure on the time axis (one atom per sample, no dt weighting,
no normalization); that measure is what the transport misfits consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri


@dataclass(frozen=True)
class Seismogram:
    """Uniformly sampled receiver trace.

    samples : wavefield amplitude, arbitrary units
    t0      : time of the first sample, seconds
    dt      : sampling interval, seconds (> 0)
    """

    samples: np.ndarray
    t0: float
    dt: float
    receiver_id: int = 0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size < 2:
            raise ValueError("seismogram needs at least 2 samples")
        if not np.all(np.isfinite(samples)):
            raise ValueError("seismogram samples must be finite")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (self.samples.size - 1)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Non-negative atoms on a strictly increasing (uniform) time axis."""

    masses: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=np.float64)
        positions = np.asarray(self.positions, dtype=np.float64)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "positions", positions)
        if masses.shape != positions.shape or masses.ndim != 1:
            raise ValueError("masses and positions must be 1-d arrays of equal length")
        if masses.size and np.min(masses) < 0:
            raise ValueError("measure masses must be non-negative")
        if not np.all(np.isfinite(masses)):
            raise ValueError("measure masses must be finite")
        if positions.size > 1 and np.min(np.diff(positions)) <= 0:
            raise ValueError("positions must be strictly increasing")

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    def scaled(self, s: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.masses * s, self.positions)

    def shifted(self, delta_t: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.masses, self.positions + delta_t)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive white-noise description: per-sample sigma = ratio * max|trace|."""

    ratio: float
    seed: int = 0

    def __post_init__(self):
        if self.ratio < 0:
            raise ValueError("noise ratio must be >= 0")


def square_to_measure(s: Seismogram) -> DiscreteMeasure:
    """Square the trace sample-wise into a non-negative measure.

    masses[i] = samples[i]**2, positions[i] = t0 + i*dt.  No normalization:
    the total mass carries the amplitude information the misfit relies on.
    """
    return DiscreteMeasure(s.samples**2, s.times)


def receiver_noise_seed(base_seed: int, receiver_id: int) -> int:
    """Per-receiver noise stream seed: base_seed XOR receiver_id (as uint64)."""
    return int(np.uint64(base_seed) ^ np.uint64(receiver_id))


def add_noise(s: Seismogram, n: NoiseSpec) -> Seismogram:
    """Add white Gaussian noise with sigma = ratio * max|samples|.

    Sampling is a fixed deterministic transform so runs reproduce across
    platforms: a Philox counter stream keyed on (seed XOR receiver_id)
    supplies uniforms in (0, 1), mapped through the inverse normal CDF.
    ratio = 0 returns the input unchanged.
    """
    if n.ratio == 0.0:
        return s
    sigma = n.ratio * float(np.max(np.abs(s.samples)))
    stream = np.random.Generator(
        np.random.Philox(receiver_noise_seed(n.seed, s.receiver_id))
    )
    # 53-bit uniforms strictly inside (0, 1) keep ndtri finite
    u = (stream.integers(0, 1 << 53, size=s.samples.size) + 0.5) * 2.0**-53
    noise = sigma * ndtri(u)
    return Seismogram(s.samples + noise, s.t0, s.dt, s.receiver_id)


def resample(s: Seismogram, factor: int) -> Seismogram:
    """Keep every factor-th sample (dt scales by factor, t0 unchanged)."""
    factor = int(factor)
    if factor < 1:
        raise ValueError("resample factor must be >= 1")
    if factor >= s.samples.size:
        raise ValueError(
            f"resample factor {factor} exceeds trace length {s.samples.size}"
        )
    if factor == 1:
        return s
    return Seismogram(s.samples[::factor].copy(), s.t0, s.dt * factor, s.receiver_id)


def window(s: Seismogram, t_lo: float, t_hi: float) -> Seismogram:
    """Keep samples with t_lo <= t <= t_hi; errors on an empty window."""
    if not t_lo < t_hi:
        raise ValueError("window requires t_lo < t_hi")
    t = s.times
    keep = (t >= t_lo) & (t <= t_hi)
    if np.count_nonzero(keep) < 2:
        raise ValueError(f"window [{t_lo}, {t_hi}] keeps fewer than 2 samples")
    idx = np.flatnonzero(keep)
    return Seismogram(
        s.samples[idx[0] : idx[-1] + 1].copy(),
        float(t[idx[0]]),
        s.dt,
        s.receiver_id,
    )


def shift(s: Seismogram, delta_t: float) -> Seismogram:
    """Trace delayed by delta_t on the same time axis (linear interpolation).

    Values requested before the original first sample are zero-filled, which
    matches a quiescent field before the source becomes active.
    """
    shifted = np.interp(s.times - delta_t, s.times, s.samples, left=0.0, right=0.0)
    return Seismogram(shifted, s.t0, s.dt, s.receiver_id)


def write_csv(s: Seismogram, path) -> None:
    """Serialize as `t,amplitude` rows with 17 significant digits."""
    t = s.times
    with open(path, "w") as f:
        f.write("t,amplitude\n")
        for i in range(s.samples.size):
            f.write(f"{t[i]:.17g},{s.samples[i]:.17g}\n")


def read_csv(path, receiver_id: int = 0) -> Seismogram:
    """Read a `t,amplitude` CSV written by :func:`write_csv`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 2:
        raise ValueError(f"{path}: expected >= 2 rows of t,amplitude")
    t, amp = data[:, 0], data[:, 1]
    steps = np.diff(t)
    dt = float(steps[0])
    if not np.allclose(steps, dt, rtol=1e-9, atol=1e-12):
        raise ValueError(f"{path}: time axis is not uniformly sampled")
    return Seismogram(amp, float(t[0]), dt, receiver_id)

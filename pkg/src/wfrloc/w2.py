"""Quadratic Wasserstein misfit on normalized squared signals.

This is the comparison baseline.  Normalization makes it blind to amplitude:
w2_misfit(d, a*d) == 0 for any a != 0, which is exactly the weakness the
unbalanced misfit in :mod:`wfrloc.wfr` avoids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal import DiscreteMeasure, Seismogram, square_to_measure, window


@dataclass(frozen=True)
class NormalizedMeasure:
    """Probability measure on the time axis (masses sum to 1)."""

    masses: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        masses = np.asarray(self.masses, dtype=np.float64)
        positions = np.asarray(self.positions, dtype=np.float64)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "positions", positions)
        if abs(float(np.sum(masses)) - 1.0) > 1e-12:
            raise ValueError("normalized measure must sum to 1 within 1e-12")
        if masses.size and np.min(masses) < 0:
            raise ValueError("masses must be non-negative")


def normalize(m: DiscreteMeasure) -> NormalizedMeasure:
    """Divide masses by total mass; errors when the measure is all zero."""
    total = m.total_mass
    if total <= 0:
        raise ValueError("cannot normalize a zero measure")
    return NormalizedMeasure(m.masses / total, m.positions)


def w2_1d(a: NormalizedMeasure, b: NormalizedMeasure) -> float:
    """Quadratic Wasserstein distance between two 1-d probability measures.

    Uses the exact quantile identity W2^2 = integral_0^1 (Qa - Qb)^2 dq,
    evaluated by merging the two cumulative-mass breakpoint sequences
    (both quantile functions are constant between merged levels).
    """
    ca = np.cumsum(a.masses)
    cb = np.cumsum(b.masses)
    levels = np.union1d(ca, cb)
    levels = levels[(levels > 0.0) & (levels <= 1.0)]
    edges = np.concatenate(([0.0], levels))
    widths = np.diff(np.concatenate((edges, [1.0])))
    mids = edges + widths / 2
    ia = np.searchsorted(ca, mids, side="left")
    ib = np.searchsorted(cb, mids, side="left")
    ia = np.minimum(ia, ca.size - 1)
    ib = np.minimum(ib, cb.size - 1)
    w2_sq = float(np.sum(widths * (a.positions[ia] - b.positions[ib]) ** 2))
    return float(np.sqrt(max(w2_sq, 0.0)))


def w2_misfit(
    d: Seismogram,
    s: Seismogram,
    win: tuple[float, float] | None = None,
) -> float:
    """Squared W2 between the normalized squared traces.

    An optional (t_lo, t_hi) window is applied to both traces before
    squaring; a window with zero energy on either side is an error.
    """
    if win is not None:
        d = window(d, win[0], win[1])
        s = window(s, win[0], win[1])
    a = normalize(square_to_measure(d))
    b = normalize(square_to_measure(s))
    return w2_1d(a, b) ** 2

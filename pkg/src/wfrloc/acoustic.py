"""2D acoustic finite-difference forward modeling.

Displacement-form leapfrog on a node-centered grid with the wave speed kept
inside the divergence (flux form).  The surface z = 0 is a free (zero-flux)
boundary; the other three sides carry an absorbing sponge with a quadratic
damping profile, padded outside the physical domain so receivers and
reflectors never sit inside the damped region.

Axis convention: fields are (nz, nx) row-major, z increasing downward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .signal import Seismogram

SPONGE_CELLS = 20
SPONGE_REFLECTION = 1e-4


@dataclass(frozen=True)
class Grid2D:
    nx: int
    nz: int
    dx: float
    dz: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 16 or self.nz < 16:
            raise ValueError("grid must be at least 16x16")
        if self.dx <= 0 or self.dz <= 0:
            raise ValueError("grid spacing must be positive")

    @property
    def xs(self) -> np.ndarray:
        return self.origin[0] + self.dx * np.arange(self.nx)

    @property
    def zs(self) -> np.ndarray:
        return self.origin[1] + self.dz * np.arange(self.nz)

    @property
    def x_extent(self) -> tuple[float, float]:
        return (self.origin[0], self.origin[0] + self.dx * (self.nx - 1))

    @property
    def z_extent(self) -> tuple[float, float]:
        return (self.origin[1], self.origin[1] + self.dz * (self.nz - 1))


@dataclass(frozen=True)
class VelocityModel:
    grid: Grid2D
    c: np.ndarray  # km/s, shape (nz, nx)
    name: str = ""

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64)
        object.__setattr__(self, "c", c)
        if c.shape != (self.grid.nz, self.grid.nx):
            raise ValueError("wave-speed field shape must be (nz, nx)")
        if np.min(c) <= 0 or np.max(c) > 10.0:
            raise ValueError("wave speed must be positive and at most 10 km/s")


@dataclass(frozen=True)
class SourceSpec:
    """Point source: hypocenter xi (km), origin time tau (s), Ricker f0, amplitude."""

    xi: tuple[float, float]
    tau: float
    f0: float
    amplitude: float = 1.0

    def __post_init__(self):
        if self.f0 <= 0:
            raise ValueError("dominant frequency must be positive")


@dataclass(frozen=True)
class ReceiverSet:
    """Receivers on the free surface z = 0, identified by index."""

    positions: tuple

    def __post_init__(self):
        pos = tuple((float(x), float(z)) for x, z in self.positions)
        object.__setattr__(self, "positions", pos)
        if any(abs(z) > 1e-12 for _, z in pos):
            raise ValueError("receivers must sit on the surface z = 0")
        if len({x for x, _ in pos}) != len(pos):
            raise ValueError("receiver positions must be distinct")

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True)
class WavefieldSnapshots:
    """Decimated field history on a (possibly cropped) window of the grid."""

    data: np.ndarray  # (n_snaps, nz_win, nx_win)
    times: np.ndarray
    x0_index: int
    z0_index: int
    grid: Grid2D


def ricker(t, spec: SourceSpec):
    """Ricker wavelet A (1 - 2 pi^2 f0^2 (t-tau)^2) exp(-pi^2 f0^2 (t-tau)^2)."""
    arg = (np.pi * spec.f0 * (np.asarray(t, dtype=np.float64) - spec.tau)) ** 2
    return spec.amplitude * (1.0 - 2.0 * arg) * np.exp(-arg)


def ricker_dt(t, spec: SourceSpec):
    """Analytic time derivative of :func:`ricker`."""
    p = (np.pi * spec.f0) ** 2
    dt_ = np.asarray(t, dtype=np.float64) - spec.tau
    return spec.amplitude * (-6.0 * p * dt_ + 4.0 * p * p * dt_**3) * np.exp(-p * dt_**2)


def _quintic_kernel(s):
    """Piecewise-quintic point-source kernel on |s| <= 3 (unit spacing).

    Interpolates a delta: value 1 at s = 0, vanishes at other integers, and
    its lattice sum is 1 for any sub-cell shift.
    """
    s = np.abs(np.asarray(s, dtype=np.float64))
    out = np.zeros_like(s)
    m1 = s <= 1.0
    m2 = (s > 1.0) & (s <= 2.0)
    m3 = (s > 2.0) & (s <= 3.0)
    a = s[m1]
    out[m1] = (
        1.0 - 5.0 / 4.0 * a**2 - 35.0 / 12.0 * a**3 + 21.0 / 4.0 * a**4 - 25.0 / 12.0 * a**5
    )
    a = s[m2]
    out[m2] = (
        -4.0 + 75.0 / 4.0 * a - 245.0 / 8.0 * a**2 + 545.0 / 24.0 * a**3
        - 63.0 / 8.0 * a**4 + 25.0 / 24.0 * a**5
    )
    a = s[m3]
    out[m3] = (
        18.0 - 153.0 / 4.0 * a + 255.0 / 8.0 * a**2 - 313.0 / 24.0 * a**3
        + 21.0 / 8.0 * a**4 - 5.0 / 24.0 * a**5
    )
    return out


def _quintic_kernel_deriv(s):
    """Derivative of :func:`_quintic_kernel` (odd function of s)."""
    s = np.asarray(s, dtype=np.float64)
    sign = np.sign(s)
    a = np.abs(s)
    out = np.zeros_like(a)
    m1 = a <= 1.0
    m2 = (a > 1.0) & (a <= 2.0)
    m3 = (a > 2.0) & (a <= 3.0)
    v = a[m1]
    out[m1] = -5.0 / 2.0 * v - 35.0 / 4.0 * v**2 + 21.0 * v**3 - 125.0 / 12.0 * v**4
    v = a[m2]
    out[m2] = (
        75.0 / 4.0 - 245.0 / 4.0 * v + 545.0 / 8.0 * v**2 - 63.0 / 2.0 * v**3
        + 125.0 / 24.0 * v**4
    )
    v = a[m3]
    out[m3] = (
        -153.0 / 4.0 + 255.0 / 4.0 * v - 313.0 / 8.0 * v**2 + 21.0 / 2.0 * v**3
        - 25.0 / 24.0 * v**4
    )
    return sign * out


@dataclass(frozen=True)
class SourceStencil:
    """Discretized point source: weights approximate delta(x-p)/(dx dz)."""

    ix: np.ndarray  # column indices into the grid
    iz: np.ndarray  # row indices
    w: np.ndarray  # (len(iz), len(ix)) weights, units 1/(dx*dz)


def delta_weights(p: tuple[float, float], grid: Grid2D) -> SourceStencil:
    """Tensor-product quintic delta stencil for a point at p = (x, z).

    The point must be at least 3 cells from every domain edge so the
    stencil support stays inside the grid.
    """
    x, z = p
    fx = (x - grid.origin[0]) / grid.dx
    fz = (z - grid.origin[1]) / grid.dz
    if not (3.0 <= fx <= grid.nx - 4) or not (3.0 <= fz <= grid.nz - 4):
        raise ValueError(f"point {p} is within 3 cells of the domain edge")
    ix0 = int(math.floor(fx))
    iz0 = int(math.floor(fz))
    ix = np.arange(ix0 - 3, ix0 + 5)
    iz = np.arange(iz0 - 3, iz0 + 5)
    wx = _quintic_kernel(fx - ix) / grid.dx
    wz = _quintic_kernel(fz - iz) / grid.dz
    return SourceStencil(ix, iz, np.outer(wz, wx))


def delta_weights_gradient(p: tuple[float, float], grid: Grid2D):
    """d/dx and d/dz of the delta stencil weights w.r.t. the point position.

    Sampling a field with these weight matrices gives the gradient of the
    stencil-interpolated point value, which is the derivative consistent
    with how a moving point source enters the discrete scheme.
    """
    x, z = p
    fx = (x - grid.origin[0]) / grid.dx
    fz = (z - grid.origin[1]) / grid.dz
    if not (3.0 <= fx <= grid.nx - 4) or not (3.0 <= fz <= grid.nz - 4):
        raise ValueError(f"point {p} is within 3 cells of the domain edge")
    ix0 = int(math.floor(fx))
    iz0 = int(math.floor(fz))
    ix = np.arange(ix0 - 3, ix0 + 5)
    iz = np.arange(iz0 - 3, iz0 + 5)
    wx = _quintic_kernel(fx - ix) / grid.dx
    wz = _quintic_kernel(fz - iz) / grid.dz
    dwx = _quintic_kernel_deriv(fx - ix) / grid.dx**2
    dwz = _quintic_kernel_deriv(fz - iz) / grid.dz**2
    return SourceStencil(ix, iz, np.outer(wz, dwx)), SourceStencil(ix, iz, np.outer(dwz, wx))


def receiver_node_stencil(x: float, grid: Grid2D) -> SourceStencil:
    """Single-node stencil at the surface node nearest x (weight 1/(dx dz)).

    Receivers record the field at their nearest surface node, so the
    adjoint of that sampling injects at exactly that node; this equals the
    quintic delta stencil evaluated at an on-node position.
    """
    i = int(round((x - grid.origin[0]) / grid.dx))
    if not 0 <= i < grid.nx:
        raise ValueError(f"receiver x={x} outside the grid")
    w = np.array([[1.0 / (grid.dx * grid.dz)]])
    return SourceStencil(np.array([i]), np.array([0]), w)


def two_layer_speed(x, z):
    """Crust over a faster layer below the 20 km discontinuity; gentle
    lateral sine undulation.  Units: km in, km/s out."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    upper = 5.2 + 0.05 * z + 0.2 * np.sin(np.pi * x / 25.0)
    lower = 6.8 + 0.2 * np.sin(np.pi * x / 25.0)
    return np.where(z <= 20.0, upper, lower)


def subduction_speed(x, z):
    """Crust, mantle, and a dipping slab (slow layer atop a fast layer)
    under an undulating interface.  Units: km in, km/s out."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    moho = 33.0 + 5.0 * np.sin(np.pi * x / 40.0)
    out = np.full(np.broadcast(x, z).shape, 7.8)
    out = np.where((z > moho) & (z <= 45.0 + 0.4 * x), 7.8, out)
    out = np.where((z > 45.0 + 0.4 * x) & (z <= 60.0 + 0.4 * x), 7.488, out)
    out = np.where((z > 60.0 + 0.4 * x) & (z <= 85.0 + 0.4 * x), 8.268, out)
    out = np.where(z <= moho, 5.5, out)
    return out


_MODEL_EXTENTS = {
    "two_layer": ((0.0, 100.0), (0.0, 50.0)),
    "subduction": ((0.0, 200.0), (0.0, 200.0)),
}


def build_model(kind: str, grid: Grid2D) -> VelocityModel:
    """Evaluate a named layered-speed formula on the grid nodes."""
    if kind not in _MODEL_EXTENTS:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(_MODEL_EXTENTS)}")
    (x_lo, x_hi), (z_lo, z_hi) = _MODEL_EXTENTS[kind]
    gx, gz = grid.x_extent, grid.z_extent
    if abs(gx[0] - x_lo) > 1e-9 or abs(gx[1] - x_hi) > 1e-9 \
            or abs(gz[0] - z_lo) > 1e-9 or abs(gz[1] - z_hi) > 1e-9:
        raise ValueError(
            f"{kind} model needs a grid covering x {x_lo}..{x_hi} km, z {z_lo}..{z_hi} km"
        )
    fn = two_layer_speed if kind == "two_layer" else subduction_speed
    xg, zg = np.meshgrid(grid.xs, grid.zs)
    return VelocityModel(grid, fn(xg, zg), name=kind)


def cfl_dt(model: VelocityModel, safety: float = 0.5) -> float:
    """Stable time step: safety * min(dx, dz) / (sqrt(2) * max c)."""
    if not 0.0 < safety < 1.0:
        raise ValueError("safety factor must be in (0, 1)")
    g = model.grid
    return safety * min(g.dx, g.dz) / (math.sqrt(2.0) * float(np.max(model.c)))


@njit(cache=True)
def _leapfrog_step(u, up, un, c2, damp, dt2_dx2, dt2_dz2, half_dt_damp):
    nz, nx = u.shape
    for j in range(nz):
        for i in range(nx):
            uc = u[j, i]
            cc = c2[j, i]
            fe = 0.5 * (cc + c2[j, i + 1]) * (u[j, i + 1] - uc) if i + 1 < nx else 0.0
            fw = 0.5 * (cc + c2[j, i - 1]) * (uc - u[j, i - 1]) if i >= 1 else 0.0
            fs = 0.5 * (cc + c2[j + 1, i]) * (u[j + 1, i] - uc) if j + 1 < nz else 0.0
            fn_ = 0.5 * (cc + c2[j - 1, i]) * (uc - u[j - 1, i]) if j >= 1 else 0.0
            lap = dt2_dx2 * (fe - fw) + dt2_dz2 * (fs - fn_)
            a = half_dt_damp * damp[j, i]
            un[j, i] = (2.0 * uc - (1.0 - a) * up[j, i] + lap) / (1.0 + a)


class _Simulation:
    """Padded-domain leapfrog driver shared by forward and adjoint solves."""

    def __init__(self, model: VelocityModel, dt: float, reflecting: bool = False):
        g = model.grid
        limit = cfl_dt(model, 0.9999)
        if dt > limit:
            raise ValueError(f"dt={dt} violates the CFL limit {limit:.6g}")
        self.model = model
        self.dt = float(dt)
        pad = 0 if reflecting else SPONGE_CELLS
        self.pad = pad
        nz_p, nx_p = g.nz + pad, g.nx + 2 * pad
        c_pad = np.empty((nz_p, nx_p))
        c_pad[: g.nz, pad : pad + g.nx] = model.c
        if pad:
            c_pad[: g.nz, :pad] = model.c[:, :1]
            c_pad[: g.nz, pad + g.nx :] = model.c[:, -1:]
            c_pad[g.nz :, :] = c_pad[g.nz - 1 : g.nz, :]
        self.c2 = c_pad**2
        self.damp = np.zeros((nz_p, nx_p))
        if pad:
            ramp = (np.arange(1, pad + 1) / pad) ** 2
            sig0 = 3.0 * c_pad * math.log(1.0 / SPONGE_REFLECTION)
            for k in range(pad):
                s_x = ramp[k] * sig0[:, pad - 1 - k] / (2.0 * pad * g.dx)
                self.damp[:, pad - 1 - k] = np.maximum(self.damp[:, pad - 1 - k], s_x)
                s_x = ramp[k] * sig0[:, pad + g.nx + k] / (2.0 * pad * g.dx)
                self.damp[:, pad + g.nx + k] = np.maximum(self.damp[:, pad + g.nx + k], s_x)
                s_z = ramp[k] * sig0[g.nz + k, :] / (2.0 * pad * g.dz)
                self.damp[g.nz + k, :] = np.maximum(self.damp[g.nz + k, :], s_z)
        self.u = np.zeros((nz_p, nx_p))
        self.u_prev = np.zeros((nz_p, nx_p))
        self._scratch = np.zeros((nz_p, nx_p))
        self.dt2_dx2 = dt**2 / g.dx**2
        self.dt2_dz2 = dt**2 / g.dz**2

    def inject_index(self, stencil: SourceStencil):
        """Padded-array index arrays for a stencil on the physical grid."""
        return np.ix_(stencil.iz, stencil.ix + self.pad)

    def step(self, injections):
        """One leapfrog step; injections are (index, dt^2 * amplitude * w)."""
        _leapfrog_step(
            self.u, self.u_prev, self._scratch, self.c2, self.damp,
            self.dt2_dx2, self.dt2_dz2, 0.5 * self.dt * 1.0,
        )
        for idx, contrib in injections:
            self._scratch[idx] += contrib
        self.u_prev, self.u, self._scratch = self.u, self._scratch, self.u_prev


def forward(
    model: VelocityModel,
    src,
    recs: ReceiverSet,
    T: float,
    dt: float,
    store_field: bool = False,
    snap_every: int = 2,
    snap_center: tuple[float, float] | None = None,
    snap_halfwidth: int = 8,
    reflecting: bool = False,
):
    """Forward acoustic simulation recording traces at the surface receivers.

    src may be a single SourceSpec or a sequence (linear superposition).
    With store_field=True, every snap_every-th field is kept, either over
    the full physical grid or a window around snap_center.  Returns
    (list of Seismogram, WavefieldSnapshots | None).
    """
    sources = [src] if isinstance(src, SourceSpec) else list(src)
    g = model.grid
    nsteps = int(round(T / dt))
    sim = _Simulation(model, dt, reflecting=reflecting)
    stencils = []
    for s in sources:
        st = delta_weights(s.xi, g)
        stencils.append((sim.inject_index(st), st.w * dt**2, s))
    rec_idx = []
    for x, _ in recs.positions:
        i = int(round((x - g.origin[0]) / g.dx))
        if not 0 <= i < g.nx:
            raise ValueError(f"receiver x={x} outside the grid")
        rec_idx.append(i)

    traces = np.zeros((len(rec_idx), nsteps + 1))
    snaps, snap_times = [], []
    win = None
    if store_field:
        if snap_center is not None:
            ci = int(round((snap_center[0] - g.origin[0]) / g.dx))
            cj = int(round((snap_center[1] - g.origin[1]) / g.dz))
            j0 = max(cj - snap_halfwidth, 0)
            j1 = min(cj + snap_halfwidth + 1, g.nz)
            i0 = max(ci - snap_halfwidth, 0)
            i1 = min(ci + snap_halfwidth + 1, g.nx)
        else:
            j0, i0, j1, i1 = 0, 0, g.nz, g.nx
        win = (j0, j1, i0, i1)

    pad = sim.pad
    for n in range(nsteps + 1):
        t_n = n * dt
        for r, i in enumerate(rec_idx):
            traces[r, n] = sim.u[0, i + pad]
        if store_field and n % snap_every == 0:
            j0, j1, i0, i1 = win
            snaps.append(sim.u[j0:j1, i0 + pad : i1 + pad].copy())
            snap_times.append(t_n)
        if n == nsteps:
            break
        injections = [
            (idx, w2 * ricker(t_n, s)) for idx, w2, s in stencils if s.amplitude != 0.0
        ]
        sim.step(injections)
        if n % 200 == 0 and not np.isfinite(sim.u[0, pad]):
            raise FloatingPointError(f"field became non-finite at step {n}")

    if not np.all(np.isfinite(traces)):
        bad = int(np.argwhere(~np.isfinite(traces))[0][1])
        raise FloatingPointError(f"non-finite receiver sample at step {bad}")

    seis = [
        Seismogram(traces[r], 0.0, dt, receiver_id=r) for r in range(len(rec_idx))
    ]
    snapshots = None
    if store_field:
        j0, j1, i0, i1 = win
        snapshots = WavefieldSnapshots(
            np.asarray(snaps), np.asarray(snap_times), i0, j0, g
        )
    return seis, snapshots


def discrete_energy(u0: np.ndarray, u1: np.ndarray, dt: float, model: VelocityModel) -> float:
    """Leapfrog-conserved energy between consecutive fields:
    0.5 |(u1-u0)/dt|^2 + 0.5 a(u0, u1), with the stiffness form evaluated on
    the flux faces.  Constant in time for the undamped scheme."""
    g = model.grid
    v = (u1 - u0) / dt
    kin = 0.5 * float(np.sum(v * v)) * g.dx * g.dz
    c2 = model.c**2
    cx = 0.5 * (c2[:, 1:] + c2[:, :-1])
    cz = 0.5 * (c2[1:, :] + c2[:-1, :])
    pot = 0.5 * float(
        np.sum(cx * np.diff(u0, axis=1) * np.diff(u1, axis=1)) / g.dx**2
        + np.sum(cz * np.diff(u0, axis=0) * np.diff(u1, axis=0)) / g.dz**2
    ) * g.dx * g.dz
    return kin + pot


def save_snapshot(path, field: np.ndarray, grid: Grid2D, t: float) -> None:
    """Flat binary dump: header [nx, nz, dx, dz, t] then row-major float64."""
    header = np.array([grid.nx, grid.nz, grid.dx, grid.dz, t], dtype=np.float64)
    with open(path, "wb") as f:
        header.tofile(f)
        np.ascontiguousarray(field, dtype=np.float64).tofile(f)


def load_snapshot(path):
    raw = np.fromfile(path, dtype=np.float64)
    nx, nz = int(raw[0]), int(raw[1])
    dx, dz, t = raw[2], raw[3], raw[4]
    field = raw[5 : 5 + nx * nz].reshape(nz, nx)
    return field, Grid2D(nx, nz, dx, dz), t

"""Adjoint-state gradient of the transport misfit w.r.t. source location/time.

One forward solve gives the synthetic traces; the converged dual potential
on each synthetic trace drives an adjoint source at its receiver; a single
reversed-time solve of the same wave operator (all receivers superposed,
valid by linearity) yields the field whose time correlations with the
source wavelet give the hypocenter and origin-time sensitivities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acoustic import (
    ReceiverSet,
    SourceSpec,
    VelocityModel,
    WavefieldSnapshots,
    _Simulation,
    delta_weights,
    delta_weights_gradient,
    receiver_node_stencil,
    ricker,
    ricker_dt,
)
from .signal import Seismogram, resample, square_to_measure
from .wfr import DualPotentials, WFRParams, solve_regularized


@dataclass(frozen=True)
class AdjointSource:
    """Time series injected at one receiver during the reversed solve."""

    receiver_id: int
    series: np.ndarray
    t0: float
    dt: float


@dataclass(frozen=True)
class GradientAtSource:
    """Misfit sensitivities: d(chi) = K_xi . d(xi) + K_tau * d(tau)."""

    K_xi: tuple[float, float]
    K_tau: float


@dataclass(frozen=True)
class ProblemSetup:
    """Fixed simulation context shared by objective and gradient calls."""

    model: VelocityModel
    receivers: ReceiverSet
    T: float
    dt: float
    f0: float
    amplitude: float = 1.0
    resample_factor: int = 4
    snap_every: int = 2

    @property
    def coarse_dt(self) -> float:
        return self.dt * self.resample_factor


def adjoint_source(
    pot: DualPotentials,
    s_r: Seismogram,
    gamma: float,
    resample_factor: int = 1,
) -> AdjointSource:
    """Misfit derivative against the synthetic trace as a time series.

    a_r(t) = 4 gamma^2 (1 - e^{-psi*(t)}) s_r(t), with psi* linearly
    interpolated from the (possibly resampled) transport grid back to the
    simulation axis.  pot.psi must live on resample(s_r, factor)'s axis.
    Samples where s_r is exactly zero contribute nothing regardless of the
    potential (the squared-signal misfit has zero derivative there).
    """
    coarse_t = s_r.times[::resample_factor]
    if pot.psi.size != coarse_t.size:
        raise ValueError(
            f"psi has {pot.psi.size} entries but the resampled axis has {coarse_t.size}"
        )
    psi_fine = np.interp(s_r.times, coarse_t, pot.psi)
    factor = 1.0 - np.exp(-psi_fine)
    series = 4.0 * gamma**2 * np.where(s_r.samples != 0.0, factor * s_r.samples, 0.0)
    return AdjointSource(s_r.receiver_id, series, s_r.t0, s_r.dt)


def adjoint_solve(
    model: VelocityModel,
    sources: list[AdjointSource],
    recs: ReceiverSet,
    T: float,
    dt: float,
    patch_center: tuple[float, float],
    patch_halfwidth: int = 8,
    snap_every: int = 2,
) -> WavefieldSnapshots:
    """Integrate the wave operator backward from terminal rest.

    Implemented as a forward run on the time-reversed sources (the damped
    operator is self-adjoint under time reversal), storing decimated
    snapshots of a window around patch_center, returned in forward-time
    order so snapshot k holds w(x, times[k]).
    """
    g = model.grid
    nsteps = int(round(T / dt))
    sim = _Simulation(model, dt)
    injections = []
    for src in sources:
        x_r = recs.positions[src.receiver_id][0]
        st = receiver_node_stencil(x_r, g)
        if src.series.size != nsteps + 1:
            raise ValueError("adjoint source series must cover the full time axis")
        injections.append((sim.inject_index(st), st.w * dt**2, src.series[::-1]))

    ci = int(round((patch_center[0] - g.origin[0]) / g.dx))
    cj = int(round((patch_center[1] - g.origin[1]) / g.dz))
    j0, j1 = cj - patch_halfwidth, cj + patch_halfwidth + 1
    i0, i1 = ci - patch_halfwidth, ci + patch_halfwidth + 1
    if j0 < 0 or i0 < 0 or j1 > g.nz or i1 > g.nx:
        raise ValueError("snapshot patch extends outside the grid")

    pad = sim.pad
    t_end = nsteps * dt  # recorded axis; round(T/dt)*dt can differ from T
    snaps, times = [], []
    for n in range(nsteps + 1):
        if n % snap_every == 0:
            snaps.append(sim.u[j0:j1, i0 + pad : i1 + pad].copy())
            times.append(t_end - n * dt)
        if n == nsteps:
            break
        sim.step([(idx, w2 * ser[n]) for idx, w2, ser in injections])
    return WavefieldSnapshots(
        np.asarray(snaps[::-1]), np.asarray(times[::-1]), i0, j0, g
    )


def kernels(w: WavefieldSnapshots, spec: SourceSpec, T: float) -> GradientAtSource:
    """Source-parameter sensitivities from the adjoint field near xi.

    K_xi = integral R(t - tau) grad w(xi, t) dt   (x and z components)
    K_tau = -integral R'(t - tau) w(xi, t) dt

    grad w at xi is sampled with the analytic derivative of the quintic
    delta stencil, which is exactly how a perturbation of the injection
    point enters the discrete scheme; time integrals are Riemann sums on
    the snapshot axis (the discrete pairing) with the wavelet derivative
    analytic.
    """
    g = w.grid
    st = delta_weights(spec.xi, g)
    dstx, dstz = delta_weights_gradient(spec.xi, g)
    iz = st.iz - w.z0_index
    ix = st.ix - w.x0_index
    nz_w, nx_w = w.data.shape[1:]
    if iz.min() < 0 or ix.min() < 0 or iz.max() >= nz_w or ix.max() >= nx_w:
        raise ValueError("source stencil leaves the snapshot patch")
    area = g.dx * g.dz
    sub = w.data[:, iz.min() : iz.max() + 1, ix.min() : ix.max() + 1]
    w_at = np.einsum("tji,ji->t", sub, st.w * area)
    dwdx = np.einsum("tji,ji->t", sub, dstx.w * area)
    dwdz = np.einsum("tji,ji->t", sub, dstz.w * area)
    t = w.times
    step = abs(float(t[1] - t[0])) if t.size > 1 else 0.0
    r = ricker(t, spec)
    r_dot = ricker_dt(t, spec)
    k_x = float(np.sum(r * dwdx)) * step
    k_z = float(np.sum(r * dwdz)) * step
    k_tau = -float(np.sum(r_dot * w_at)) * step
    return GradientAtSource((k_x, k_z), k_tau)


def objective_gradient(
    xi: tuple[float, float],
    tau: float,
    data: list[Seismogram],
    setup: ProblemSetup,
    wfr_params: WFRParams,
    warm: list[DualPotentials] | None = None,
    patch_halfwidth: int = 8,
    synth: list[Seismogram] | None = None,
):
    """Misfit value and its gradient w.r.t. (xi_x, xi_z, tau).

    Runs one forward solve, solves the transport dual per receiver, then
    one reversed-time solve with all adjoint sources superposed (kernels
    are additive over receivers because the wave operator is linear).
    Accepts precomputed synthetic traces for (xi, tau) to avoid repeating
    a forward solve.  Returns (theta, gradient[3], potentials per receiver).
    """
    from .acoustic import forward  # local import keeps module load cheap

    spec = SourceSpec(xi=xi, tau=tau, f0=setup.f0, amplitude=setup.amplitude)
    if synth is None:
        synth, _ = forward(setup.model, spec, setup.receivers, setup.T, setup.dt)
    theta = 0.0
    adj_sources = []
    pots = []
    for r, (d_r, s_r) in enumerate(zip(data, synth)):
        mu = square_to_measure(resample(d_r, setup.resample_factor))
        nu = square_to_measure(resample(s_r, setup.resample_factor))
        res = solve_regularized(
            mu, nu, wfr_params, init=None if warm is None else warm[r]
        )
        theta += res.distance_sq
        pots.append(res.potentials)
        adj_sources.append(
            adjoint_source(res.potentials, s_r, wfr_params.gamma, setup.resample_factor)
        )
    w = adjoint_solve(
        setup.model,
        adj_sources,
        setup.receivers,
        setup.T,
        setup.dt,
        patch_center=xi,
        patch_halfwidth=patch_halfwidth,
        snap_every=setup.snap_every,
    )
    k = kernels(w, spec, setup.T)
    # the transport misfit sums per-sample squared amplitudes (no dt weight)
    # while the kernel integrals are continuum ones, so one coarse-axis
    # sample spacing converts between them
    scale = 1.0 / setup.coarse_dt
    grad = np.array([k.K_xi[0] * scale, k.K_xi[1] * scale, k.K_tau * scale])
    return theta, grad, pots

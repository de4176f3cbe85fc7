"""Outer optimization: objective assembly, descent loop, scans, noise studies.

The misfit is the summed squared transport distance between squared observed
and synthetic traces.  Location runs planar gradient descent with Armijo
backtracking on scaled variables, in two phases: a large transport length
scale first (smooth, convex across velocity interfaces), then a small one
(sharp near the optimum).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .acoustic import SourceSpec, forward
from .adjoint import ProblemSetup, objective_gradient
from .signal import (
    NoiseSpec,
    Seismogram,
    add_noise,
    resample,
    shift,
    square_to_measure,
    window,
)
from .w2 import w2_misfit
from .wfr import WFRParams, solve_regularized

GOLDEN_STEP = 0x9E3779B97F4A7C15  # per-trial seed stride (splittable scheme)


@dataclass(frozen=True)
class LocateConfig:
    """Everything a location run needs besides the observed data."""

    setup: ProblemSetup
    gamma1: float  # phase-1 transport scale, seconds
    gamma2: float  # phase-2 transport scale, seconds
    eps_schedule: tuple = (1e-1, 1e-2, 1e-3, 1e-4)
    max_iter_per_eps: int = 2000
    dual_tol: float = 1e-8
    max_iterations: int = 100
    tol_km: float = 0.02
    tol_s: float = 0.005
    armijo_c: float = 1e-4
    shrink: float = 0.5
    L_ref: float = 10.0  # km per scaled unit
    T_ref: float = 1.0  # s per scaled unit
    switch_step: float = 0.05  # scaled step norm triggering the phase switch
    switch_budget_frac: float = 0.4
    first_step: float = 0.25  # scaled norm of the first trial step
    max_step: float = 1.0  # scaled trust bound per iteration
    interior_margin_km: float = 1.0
    w2_window_halfwidth_s: float | None = None  # default 3/f0
    truth: tuple[tuple[float, float], float] | None = None

    def wfr_params(self, gamma: float) -> WFRParams:
        return WFRParams(
            gamma=gamma,
            eps_schedule=self.eps_schedule,
            max_iter_per_eps=self.max_iter_per_eps,
            dual_tol=self.dual_tol,
        )

    @property
    def w2_halfwidth(self) -> float:
        if self.w2_window_halfwidth_s is not None:
            return self.w2_window_halfwidth_s
        return 3.0 / self.setup.f0


@dataclass
class LocationHistory:
    xi: np.ndarray  # (k, 2)
    tau: np.ndarray  # (k,)
    theta: np.ndarray  # (k,)
    gamma: np.ndarray  # (k,) transport scale used at each iterate
    err_km: np.ndarray | None  # distance to truth when truth is known
    converged: bool
    diverged: bool
    iterations: int

    @property
    def final_xi(self) -> tuple[float, float]:
        return (float(self.xi[-1, 0]), float(self.xi[-1, 1]))

    @property
    def final_tau(self) -> float:
        return float(self.tau[-1])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["k", "xi_x", "xi_z", "tau", "theta", "gamma", "err_km"])
            for k in range(self.xi.shape[0]):
                err = "" if self.err_km is None else f"{self.err_km[k]:.17g}"
                wr.writerow(
                    [
                        k,
                        f"{self.xi[k, 0]:.17g}",
                        f"{self.xi[k, 1]:.17g}",
                        f"{self.tau[k]:.17g}",
                        f"{self.theta[k]:.17g}",
                        f"{self.gamma[k]:.17g}",
                        err,
                    ]
                )


@dataclass(frozen=True)
class NoiseStudyResult:
    offsets_km: np.ndarray
    trial_seeds: tuple
    metric: str

    @property
    def average(self) -> float:
        return float(np.mean(self.offsets_km))

    @property
    def maximum(self) -> float:
        return float(np.max(self.offsets_km))


def synthetic_traces(xi, tau, cfg: LocateConfig) -> list[Seismogram]:
    s = cfg.setup
    spec = SourceSpec(xi=xi, tau=tau, f0=s.f0, amplitude=s.amplitude)
    traces, _ = forward(s.model, spec, s.receivers, s.T, s.dt)
    return traces


def _wfr_theta(data, synth, cfg: LocateConfig, gamma: float, warm=None):
    params = cfg.wfr_params(gamma)
    k = cfg.setup.resample_factor
    theta = 0.0
    pots = []
    for r, (d_r, s_r) in enumerate(zip(data, synth)):
        mu = square_to_measure(resample(d_r, k) if k > 1 else d_r)
        nu = square_to_measure(resample(s_r, k) if k > 1 else s_r)
        res = solve_regularized(mu, nu, params, init=None if warm is None else warm[r])
        theta += res.distance_sq
        pots.append(res.potentials)
    return theta, pots


def _w2_windows(noise_free_data, cfg: LocateConfig):
    """Per-receiver window around the first-arrival peak of the clean trace."""
    wins = []
    half = cfg.w2_halfwidth
    for d in noise_free_data:
        t_peak = float(d.times[np.argmax(np.abs(d.samples))])
        wins.append((t_peak - half, t_peak + half))
    return wins


def _w2_theta(data, synth, wins):
    theta = 0.0
    for d_r, s_r, win in zip(data, synth, wins):
        theta += w2_misfit(d_r, s_r, win)
    return theta


def objective(xi, tau, data, cfg: LocateConfig, gamma: float | None = None) -> float:
    """Misfit at one candidate source (forward solve plus transport solves)."""
    synth = synthetic_traces(xi, tau, cfg)
    theta, _ = _wfr_theta(data, synth, cfg, cfg.gamma2 if gamma is None else gamma)
    return theta


def _project_interior(xi, tau, cfg: LocateConfig):
    g = cfg.setup.model.grid
    m = cfg.interior_margin_km
    x = min(max(xi[0], g.x_extent[0] + m), g.x_extent[1] - m)
    z = min(max(xi[1], g.z_extent[0] + m), g.z_extent[1] - m)
    return (x, z), tau


def locate(initial_xi, initial_tau, data, cfg: LocateConfig) -> LocationHistory:
    """Two-phase gradient descent with Armijo backtracking.

    Variables are scaled by (L_ref, L_ref, T_ref) so kilometers and seconds
    are commensurate; the first trial step along the steepest descent
    direction has scaled norm first_step, afterwards a Barzilai-Borwein
    estimate (clipped to max_step) seeds each backtracking search.  Phase 1
    runs at gamma1 until the accepted scaled step drops below switch_step
    or the budget fraction is spent; phase 2 restarts the descent at
    gamma2.  Iterates are projected into the domain interior.
    """
    scale = np.array([cfg.L_ref, cfg.L_ref, cfg.T_ref])
    xi, tau = _project_interior(tuple(initial_xi), float(initial_tau), cfg)

    xs = [np.array([xi[0], xi[1], tau])]
    thetas = []
    gammas = []
    phase = 1
    gamma = cfg.gamma1
    warm = None
    prev_scaled = None
    prev_grad_scaled = None
    alpha = None
    converged = False
    diverged = False
    increases = 0
    small_steps = 0
    it = 0

    theta, grad, warm = objective_gradient(
        xi, tau, data, cfg.setup, cfg.wfr_params(gamma), warm=None
    )
    thetas.append(theta)
    gammas.append(gamma)

    while it < cfg.max_iterations:
        it += 1
        x_scaled = xs[-1] / scale
        g_scaled = grad * scale
        gnorm = float(np.linalg.norm(g_scaled))
        if gnorm == 0.0:
            converged = True
            break
        if alpha is None:
            alpha = cfg.first_step / gnorm
        if prev_scaled is not None and prev_grad_scaled is not None:
            s_v = x_scaled - prev_scaled
            y_v = g_scaled - prev_grad_scaled
            sy = float(np.dot(s_v, y_v))
            if sy > 1e-16:
                alpha = float(np.dot(s_v, s_v)) / sy
        alpha = min(alpha, cfg.max_step / gnorm)
        alpha = max(alpha, 1e-6 / gnorm)

        accepted = False
        a = alpha
        for _ in range(30):
            cand_scaled = x_scaled - a * g_scaled
            cand = cand_scaled * scale
            c_xi, c_tau = _project_interior((cand[0], cand[1]), cand[2], cfg)
            cand = np.array([c_xi[0], c_xi[1], c_tau])
            synth = synthetic_traces((cand[0], cand[1]), cand[2], cfg)
            th_new, pots = _wfr_theta(data, synth, cfg, gamma, warm=warm)
            if th_new <= theta - cfg.armijo_c * a * gnorm * gnorm:
                accepted = True
                break
            a *= cfg.shrink
        if not accepted:
            if phase == 1:
                phase = 2
                gamma = cfg.gamma2
                warm = None
                alpha = None
                prev_scaled = prev_grad_scaled = None
                theta, grad, warm = objective_gradient(
                    xi, tau, data, cfg.setup, cfg.wfr_params(gamma)
                )
                thetas[-1] = theta
                gammas[-1] = gamma
                continue
            converged = True
            break

        step_scaled = float(np.linalg.norm(cand_scaled - x_scaled))
        prev_scaled = x_scaled
        prev_grad_scaled = g_scaled
        alpha = a
        if th_new > theta:
            increases += 1
            if increases >= 10:
                diverged = True
        else:
            increases = 0
        xi, tau = (float(cand[0]), float(cand[1])), float(cand[2])
        xs.append(cand.copy())
        theta = th_new
        thetas.append(theta)
        gammas.append(gamma)

        step_km = float(np.linalg.norm((cand_scaled - x_scaled)[:2] * cfg.L_ref))
        step_s = abs(float((cand_scaled - x_scaled)[2] * cfg.T_ref))
        if phase == 1 and (
            step_scaled < cfg.switch_step
            or it >= cfg.switch_budget_frac * cfg.max_iterations
        ):
            phase = 2
            gamma = cfg.gamma2
            warm = None
            alpha = None
            prev_scaled = prev_grad_scaled = None
            theta, grad, warm = objective_gradient(
                xi, tau, data, cfg.setup, cfg.wfr_params(gamma)
            )
            thetas[-1] = theta
            gammas[-1] = gamma
            continue
        if phase == 2 and step_km < cfg.tol_km and step_s < cfg.tol_s:
            small_steps += 1
            if small_steps >= 2:  # a single tiny BB step can be a valley probe
                converged = True
                break
        else:
            small_steps = 0
        if diverged:
            break

        theta_g, grad, warm = objective_gradient(
            xi, tau, data, cfg.setup, cfg.wfr_params(gamma), warm=warm, synth=synth
        )
        theta = theta_g
        thetas[-1] = theta

    xs_arr = np.asarray(xs)
    err = None
    if cfg.truth is not None:
        t_xi = np.asarray(cfg.truth[0])
        err = np.linalg.norm(xs_arr[:, :2] - t_xi[None, :], axis=1)
    return LocationHistory(
        xi=xs_arr[:, :2],
        tau=xs_arr[:, 2],
        theta=np.asarray(thetas),
        gamma=np.asarray(gammas),
        err_km=err,
        converged=converged,
        diverged=diverged,
        iterations=it,
    )


class DepthSynthCache:
    """Forward solves keyed by quantized source depth (x fixed).

    Scans and refinement search the (depth, origin-time) plane: each depth
    costs one wave solve at the reference origin time, and other origin
    times come from shifting the cached traces (the wave equation is
    time-invariant in the source time).
    """

    Z_QUANT = 1.0 / 64.0  # km; finer than the last refinement cell

    def __init__(self, cfg: LocateConfig, x_fixed: float, tau_ref: float):
        self.cfg = cfg
        self.x_fixed = x_fixed
        self.tau_ref = tau_ref
        self._store: dict[int, list[Seismogram]] = {}

    def quantize(self, z: float) -> float:
        return round(z / self.Z_QUANT) * self.Z_QUANT

    def traces(self, z: float, tau: float) -> list[Seismogram]:
        zq = self.quantize(z)
        key = int(round(zq / self.Z_QUANT))
        if key not in self._store:
            self._store[key] = synthetic_traces(
                (self.x_fixed, zq), self.tau_ref, self.cfg
            )
        base = self._store[key]
        delta = tau - self.tau_ref
        if abs(delta) < 1e-12:
            return base
        return [shift(s, delta) for s in base]

    @property
    def solves(self) -> int:
        return len(self._store)


@dataclass(frozen=True)
class ScanResult:
    plane: str
    p1: np.ndarray
    p2: np.ndarray
    theta: np.ndarray  # (len(p1), len(p2))
    metric: str

    def argmin(self) -> tuple[float, float]:
        i, j = np.unravel_index(int(np.argmin(self.theta)), self.theta.shape)
        return (float(self.p1[i]), float(self.p2[j]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["p1", "p2", "theta"])
            for i, a in enumerate(self.p1):
                for j, b in enumerate(self.p2):
                    wr.writerow([f"{a:.17g}", f"{b:.17g}", f"{self.theta[i, j]:.17g}"])


def landscape_scan(
    plane: str,
    ranges: tuple[tuple[float, float], tuple[float, float]],
    steps: tuple[int, int],
    data: list[Seismogram],
    cfg: LocateConfig,
    metric: str = "wfr",
    fixed: float | None = None,
    noise_free_data: list[Seismogram] | None = None,
) -> ScanResult:
    """Brute-force objective evaluation over a 2-parameter grid.

    plane: 'depth-time' (p1 = depth, p2 = tau, x fixed), 'x-z' (tau fixed)
    or 'x-time' (z fixed).  `fixed` is the held coordinate; it defaults to
    the matching component of cfg.truth.  The w2 metric windows each trace
    around the first-arrival peak of the clean data (noise_free_data,
    defaulting to data itself).
    """
    if plane not in ("depth-time", "x-z", "x-time"):
        raise ValueError(f"unknown scan plane {plane!r}")
    if metric not in ("wfr", "w2"):
        raise ValueError(f"unknown metric {metric!r}")
    if fixed is None:
        if cfg.truth is None:
            raise ValueError("no fixed coordinate given and cfg.truth unset")
        fixed = {
            "depth-time": cfg.truth[0][0],
            "x-z": cfg.truth[1],
            "x-time": cfg.truth[0][1],
        }[plane]

    p1 = np.linspace(ranges[0][0], ranges[0][1], steps[0])
    p2 = np.linspace(ranges[1][0], ranges[1][1], steps[1])
    theta = np.empty((steps[0], steps[1]))
    wins = None
    if metric == "w2":
        wins = _w2_windows(noise_free_data or data, cfg)

    if plane == "depth-time":
        cache = DepthSynthCache(cfg, x_fixed=fixed, tau_ref=float(np.min(p2)))
        for i, z in enumerate(p1):
            warm = None
            for j, tau in enumerate(p2):
                synth = cache.traces(z, tau)
                if metric == "wfr":
                    theta[i, j], warm = _wfr_theta(data, synth, cfg, cfg.gamma2, warm)
                else:
                    theta[i, j] = _w2_theta(data, synth, wins)
    else:
        for i, a in enumerate(p1):
            warm = None
            for j, b in enumerate(p2):
                if plane == "x-z":
                    xi, tau = (a, b), fixed
                else:
                    xi, tau = (a, fixed), b
                synth = synthetic_traces(xi, tau, cfg)
                if metric == "wfr":
                    theta[i, j], warm = _wfr_theta(data, synth, cfg, cfg.gamma2, warm)
                else:
                    theta[i, j] = _w2_theta(data, synth, wins)
    return ScanResult(plane, p1, p2, theta, metric)


def flat_valley_ratio(scan: ScanResult) -> float:
    """Spread along the flattest straight line through the scan's argmin,
    as a fraction of the scan's full range.

    For each direction through the minimizer the objective is sampled by
    bilinear interpolation from border to border; the direction with the
    smallest (max - min) measures how flat the metric's worst-constrained
    tradeoff is: small values mean a long flat valley.
    """
    th = scan.theta
    n1, n2 = th.shape
    i0, j0 = np.unravel_index(int(np.argmin(th)), th.shape)
    rng_all = float(np.max(th) - np.min(th))
    if rng_all == 0.0:
        return 0.0

    def interp(fi, fj):
        ii = np.clip(fi, 0, n1 - 1.0001)
        jj = np.clip(fj, 0, n2 - 1.0001)
        i = np.floor(ii).astype(int)
        j = np.floor(jj).astype(int)
        a = ii - i
        b = jj - j
        return (
            th[i, j] * (1 - a) * (1 - b)
            + th[i + 1, j] * a * (1 - b)
            + th[i, j + 1] * (1 - a) * b
            + th[i + 1, j + 1] * a * b
        )

    best = np.inf
    for angle in np.linspace(0.0, np.pi, 73, endpoint=False):
        di, dj = math.cos(angle), math.sin(angle)
        # parameter range keeping the whole segment inside the grid
        tmax = np.inf
        for d, pos, n in ((di, i0, n1), (dj, j0, n2)):
            if abs(d) > 1e-12:
                tmax = min(tmax, (n - 1 - pos) / d if d > 0 else -pos / d)
        tmin = -np.inf
        for d, pos, n in ((di, i0, n1), (dj, j0, n2)):
            if abs(d) > 1e-12:
                tmin = max(tmin, -pos / d if d > 0 else (n - 1 - pos) / d)
        ts = np.linspace(tmin, tmax, 101)
        vals = interp(i0 + ts * di, j0 + ts * dj)
        spread = float(np.max(vals) - np.min(vals))
        best = min(best, spread)
    return best / rng_all


def trial_seed(base_seed: int, trial: int) -> int:
    return int((np.uint64(base_seed) + np.uint64(trial) * np.uint64(GOLDEN_STEP)))


def _refine_minimum(data, cache: DepthSynthCache, cfg, metric, wins, z0, tau0, cell_z, cell_t, z_lim):
    """Pattern refinement: repeatedly halve the cell and rescan 5x5 locally."""
    best = (z0, tau0)
    for _ in range(3):
        cell_z /= 2.0
        cell_t /= 2.0
        zs = best[0] + cell_z * np.arange(-2, 3)
        ts = best[1] + cell_t * np.arange(-2, 3)
        zs = np.clip(zs, z_lim[0], z_lim[1])
        vals = np.empty((5, 5))
        for i, z in enumerate(zs):
            warm = None
            for j, tau in enumerate(ts):
                synth = cache.traces(z, tau)
                if metric == "wfr":
                    vals[i, j], warm = _wfr_theta(data, synth, cfg, cfg.gamma2, warm)
                else:
                    vals[i, j] = _w2_theta(data, synth, wins)
        i, j = np.unravel_index(int(np.argmin(vals)), vals.shape)
        best = (float(zs[i]), float(ts[j]))
    return best


def monte_carlo(
    truth_xi: tuple[float, float],
    truth_tau: float,
    R: float,
    n_trials: int,
    base_seed: int,
    cfg: LocateConfig,
    metric: str = "wfr",
    depth_halfwidth_km: float = 1.5,
    tau_halfwidth_s: float = 0.25,
    cell_km: float = 0.25,
    cell_s: float = 0.05,
    noise_free_data: list[Seismogram] | None = None,
) -> NoiseStudyResult:
    """Minimizer-deviation study under per-trial noise realizations.

    For every trial the observed traces get a fresh noise realization
    (sigma = R * max|trace| per receiver, trial-dependent seed), the misfit
    is scanned over the (depth, origin-time) plane with x fixed at the
    true epicenter, and the scan minimum is refined by three rounds of
    local pattern search.  The offset statistics of the refined depth
    against the true depth are returned.  Synthetic traces are cached per
    quantized depth and shared across trials and metrics.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if noise_free_data is None:
        noise_free_data = synthetic_traces(truth_xi, truth_tau, cfg)
    cache = DepthSynthCache(cfg, x_fixed=truth_xi[0], tau_ref=truth_tau - tau_halfwidth_s)
    wins = _w2_windows(noise_free_data, cfg) if metric == "w2" else None

    z_lo = max(truth_xi[1] - depth_halfwidth_km, cfg.setup.model.grid.z_extent[0] + cfg.interior_margin_km)
    z_hi = min(truth_xi[1] + depth_halfwidth_km, cfg.setup.model.grid.z_extent[1] - cfg.interior_margin_km)
    zs = np.arange(z_lo, z_hi + 1e-9, cell_km)
    ts = np.arange(truth_tau - tau_halfwidth_s, truth_tau + tau_halfwidth_s + 1e-9, cell_s)

    offsets = np.empty(n_trials)
    seeds = []
    for trial in range(n_trials):
        seed = trial_seed(base_seed, trial)
        seeds.append(seed)
        spec = NoiseSpec(ratio=R, seed=seed)
        data = [add_noise(d, spec) for d in noise_free_data]
        vals = np.empty((zs.size, ts.size))
        for i, z in enumerate(zs):
            warm = None
            for j, tau in enumerate(ts):
                synth = cache.traces(z, tau)
                if metric == "wfr":
                    vals[i, j], warm = _wfr_theta(data, synth, cfg, cfg.gamma2, warm)
                else:
                    vals[i, j] = _w2_theta(data, synth, wins)
        i, j = np.unravel_index(int(np.argmin(vals)), vals.shape)
        z_best, t_best = _refine_minimum(
            data, cache, cfg, metric, wins,
            float(zs[i]), float(ts[j]), cell_km, cell_s, (z_lo, z_hi),
        )
        offsets[trial] = abs(z_best - truth_xi[1])
    return NoiseStudyResult(offsets, tuple(seeds), metric)

"""Command-line front end.

Subcommands: forward, wfr, landscape, locate, gradcheck, noise-study.
Every run writes its outputs plus a manifest.json into --out.  Exit codes:
0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .acoustic import SourceSpec, forward
from .adjoint import objective_gradient
from .experiments import (
    RunManifest,
    Scenario,
    builtin_scenario,
    config_to_scenario,
    parse_config,
    scenario_to_config,
    serialize_config,
)
from .locator import landscape_scan, locate, monte_carlo, synthetic_traces
from .signal import NoiseSpec, add_noise, read_csv, write_csv
from .wfr import WFRParams, wfr_distance


class ConfigError(Exception):
    pass


def _load_scenario(args) -> Scenario:
    if args.config:
        try:
            cfg = parse_config(Path(args.config).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
    elif args.scenario:
        cfg = scenario_to_config(builtin_scenario(args.scenario))
    else:
        raise ConfigError("either --scenario or --config is required")
    for item in args.set or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, _, value = item.partition("=")
        section, _, key = dotted.partition(".")
        cfg.setdefault(section, {})
        from .experiments import _parse_value

        cfg[section][key.strip()] = _parse_value(value)
    try:
        return config_to_scenario(cfg)
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e


def _observed_data(scenario: Scenario, cfg):
    data = synthetic_traces(scenario.truth_xi_km, scenario.truth_tau_s, cfg)
    if scenario.noise_ratio > 0:
        spec = NoiseSpec(ratio=scenario.noise_ratio, seed=scenario.noise_seed)
        data = [add_noise(d, spec) for d in data]
    return data


def _cmd_forward(args) -> int:
    scenario = _load_scenario(args)
    cfg = scenario.locate_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = _observed_data(scenario, cfg)
    paths = []
    for d in data:
        p = out / f"seismogram_r{d.receiver_id:02d}.csv"
        write_csv(d, p)
        paths.append(p)
    RunManifest.for_run(scenario, scenario.noise_seed, paths).write(out / "manifest.json")
    print(f"wrote {len(paths)} seismograms to {out}")
    return 0


def _cmd_wfr(args) -> int:
    a = read_csv(args.trace_a, receiver_id=0)
    b = read_csv(args.trace_b, receiver_id=1)
    res = wfr_distance(a, b, WFRParams(gamma=args.gamma))
    print(f"distance_sq = {res.distance_sq:.17g}")
    print(f"distance    = {res.distance:.17g}")
    print(f"iterations  = {res.iterations}  converged = {res.converged}")
    return 0


def _cmd_landscape(args) -> int:
    scenario = _load_scenario(args)
    cfg = scenario.locate_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    noise_free = synthetic_traces(scenario.truth_xi_km, scenario.truth_tau_s, cfg)
    data = _observed_data(scenario, cfg)
    scan = landscape_scan(
        args.plane,
        ((args.p1_lo, args.p1_hi), (args.p2_lo, args.p2_hi)),
        (args.steps, args.steps),
        data,
        cfg,
        metric=args.metric,
        noise_free_data=noise_free,
    )
    path = out / f"landscape_{args.plane}_{args.metric}.csv"
    scan.write_csv(path)
    RunManifest.for_run(scenario, scenario.noise_seed, [path]).write(out / "manifest.json")
    amin = scan.argmin()
    print(f"wrote {path}; argmin p1={amin[0]:.4f} p2={amin[1]:.4f}")
    return 0


def _cmd_locate(args) -> int:
    scenario = _load_scenario(args)
    cfg = scenario.locate_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = _observed_data(scenario, cfg)
    hist = locate(scenario.initial_xi_km, scenario.initial_tau_s, data, cfg)
    path = out / "history.csv"
    hist.write_csv(path)
    RunManifest.for_run(scenario, scenario.noise_seed, [path]).write(out / "manifest.json")
    print(
        f"final xi = ({hist.final_xi[0]:.3f}, {hist.final_xi[1]:.3f}) km, "
        f"tau = {hist.final_tau:.3f} s, iterations = {hist.iterations}, "
        f"converged = {hist.converged}"
    )
    if hist.err_km is not None:
        print(f"hypocenter error = {hist.err_km[-1]:.3f} km")
    return 0


def _cmd_gradcheck(args) -> int:
    scenario = _load_scenario(args)
    cfg = scenario.locate_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = _observed_data(scenario, cfg)
    rng = np.random.default_rng(args.seed)
    g = cfg.setup.model.grid
    rows = []
    worst = 0.0
    params = cfg.wfr_params(cfg.gamma2)
    from .locator import objective as theta_fn

    for k in range(args.points):
        xi = (
            rng.uniform(g.x_extent[0] + 10, g.x_extent[1] - 10),
            rng.uniform(3.0, g.z_extent[1] * 0.8),
        )
        tau = scenario.truth_tau_s + rng.uniform(-1.0, 1.0)
        theta, grad, _ = objective_gradient(xi, tau, data, cfg.setup, params)
        hx, ht = 0.1, 0.01
        fd = np.array(
            [
                (theta_fn((xi[0] + hx, xi[1]), tau, data, cfg)
                 - theta_fn((xi[0] - hx, xi[1]), tau, data, cfg)) / (2 * hx),
                (theta_fn((xi[0], xi[1] + hx), tau, data, cfg)
                 - theta_fn((xi[0], xi[1] - hx), tau, data, cfg)) / (2 * hx),
                (theta_fn(xi, tau + ht, data, cfg)
                 - theta_fn(xi, tau - ht, data, cfg)) / (2 * ht),
            ]
        )
        gnorm = float(np.linalg.norm(grad))
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-3 * gnorm)
        significant = np.abs(grad) >= 1e-3 * gnorm
        rel_sig = float(np.max(rel[significant])) if significant.any() else 0.0
        worst = max(worst, rel_sig)
        rows.append((xi[0], xi[1], tau, *grad, *fd, rel_sig))
        print(f"point {k}: xi=({xi[0]:.2f},{xi[1]:.2f}) tau={tau:.2f} max rel err {rel_sig:.3%}")
    path = out / "gradcheck.csv"
    with open(path, "w") as f:
        f.write("xi_x,xi_z,tau,gx,gz,gt,fdx,fdz,fdt,max_rel_err\n")
        for row in rows:
            f.write(",".join(f"{v:.17g}" for v in row) + "\n")
    RunManifest.for_run(scenario, args.seed, [path]).write(out / "manifest.json")
    print(f"worst significant-component relative error: {worst:.3%}")
    return 0 if worst <= 0.05 else 3


def _cmd_noise_study(args) -> int:
    scenario = _load_scenario(args)
    cfg = scenario.locate_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = ["wfr", "w2"] if args.metric == "both" else [args.metric]
    noise_free = synthetic_traces(scenario.truth_xi_km, scenario.truth_tau_s, cfg)
    paths = []
    for metric in metrics:
        res = monte_carlo(
            scenario.truth_xi_km,
            scenario.truth_tau_s,
            args.ratio,
            args.trials,
            args.seed,
            cfg,
            metric=metric,
            noise_free_data=noise_free,
        )
        p = out / f"offsets_{metric}.csv"
        with open(p, "w") as f:
            f.write("trial,offset_km,seed\n")
            for i, (off, s) in enumerate(zip(res.offsets_km, res.trial_seeds)):
                f.write(f"{i},{off:.17g},{s}\n")
        paths.append(p)
        print(f"{metric}: AVE {res.average:.4f} km  MAX {res.maximum:.4f} km")
    RunManifest.for_run(scenario, args.seed, paths).write(out / "manifest.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wfrloc", description=__doc__)
    ap.add_argument("--version", action="version", version=f"wfrloc {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_scenario_args(p):
        p.add_argument("--scenario", help="builtin scenario name")
        p.add_argument("--config", help="config file path")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config entry")
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("forward", help="simulate and write observed seismograms")
    add_scenario_args(p)
    p.set_defaults(fn=_cmd_forward)

    p = sub.add_parser("wfr", help="transport distance between two trace CSVs")
    p.add_argument("trace_a")
    p.add_argument("trace_b")
    p.add_argument("--gamma", type=float, required=True, help="length scale, seconds")
    p.set_defaults(fn=_cmd_wfr)

    p = sub.add_parser("landscape", help="objective values over a parameter grid")
    add_scenario_args(p)
    p.add_argument("--plane", choices=["depth-time", "x-z", "x-time"], required=True)
    p.add_argument("--metric", choices=["wfr", "w2"], default="wfr")
    p.add_argument("--p1-lo", type=float, required=True)
    p.add_argument("--p1-hi", type=float, required=True)
    p.add_argument("--p2-lo", type=float, required=True)
    p.add_argument("--p2-hi", type=float, required=True)
    p.add_argument("--steps", type=int, default=13)
    p.set_defaults(fn=_cmd_landscape)

    p = sub.add_parser("locate", help="run the descent from the scenario's start")
    add_scenario_args(p)
    p.set_defaults(fn=_cmd_locate)

    p = sub.add_parser("gradcheck", help="adjoint gradient vs finite differences")
    add_scenario_args(p)
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("noise-study", help="Monte-Carlo minimizer deviation study")
    add_scenario_args(p)
    p.add_argument("--ratio", type=float, default=0.2)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metric", choices=["wfr", "w2", "both"], default="both")
    p.set_defaults(fn=_cmd_noise_study)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except KeyError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FloatingPointError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Canned scenarios, config files, and run manifests.

Scenarios bundle the velocity model, receiver geometry, true and initial
source parameters, and solver knobs for the synthetic experiments.  Config
files are a strict TOML subset (sections of key = value pairs) with every
physical unit spelled out in the key name; command-line overrides win over
file values.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .acoustic import Grid2D, ReceiverSet, build_model, cfl_dt
from .adjoint import ProblemSetup
from .locator import LocateConfig

TWO_LAYER_RECEIVERS_KM = (11.74, 18.59, 27.88, 41.11, 58.23, 68.50, 87.01)
SUBDUCTION_RECEIVERS_KM = (
    24.53, 43.79, 47.21, 49.96, 63.42, 97.91,
    103.32, 120.11, 142.92, 147.86, 166.73, 175.35,
)


@dataclass(frozen=True)
class Scenario:
    """A fully specified synthetic experiment."""

    name: str
    model_kind: str  # two_layer | subduction
    receivers_x_km: tuple
    truth_xi_km: tuple[float, float]
    truth_tau_s: float
    initial_xi_km: tuple[float, float]
    initial_tau_s: float
    f0_hz: float = 2.0
    amplitude: float = 1.0
    T_s: float = 30.0
    dx_km: float = 0.25
    dt_s: float | None = None  # None: CFL at safety 0.5
    cfl_safety: float = 0.5
    resample_factor: int = 4
    gamma1_s: float = 2.5  # 5 / f0
    gamma2_s: float = 0.25  # 0.5 / f0
    noise_ratio: float = 0.0
    noise_seed: int = 0
    metric: str = "wfr"
    max_iterations: int = 100

    def grid(self) -> Grid2D:
        (x_lo, x_hi), (z_lo, z_hi) = {
            "two_layer": ((0.0, 100.0), (0.0, 50.0)),
            "subduction": ((0.0, 200.0), (0.0, 200.0)),
        }[self.model_kind]
        nx = int(round((x_hi - x_lo) / self.dx_km)) + 1
        nz = int(round((z_hi - z_lo) / self.dx_km)) + 1
        return Grid2D(nx, nz, self.dx_km, self.dx_km, origin=(x_lo, z_lo))

    def locate_config(self) -> LocateConfig:
        model = build_model(self.model_kind, self.grid())
        dt = self.dt_s if self.dt_s is not None else cfl_dt(model, self.cfl_safety)
        setup = ProblemSetup(
            model=model,
            receivers=ReceiverSet(tuple((x, 0.0) for x in self.receivers_x_km)),
            T=self.T_s,
            dt=dt,
            f0=self.f0_hz,
            amplitude=self.amplitude,
            resample_factor=self.resample_factor,
        )
        return LocateConfig(
            setup=setup,
            gamma1=self.gamma1_s,
            gamma2=self.gamma2_s,
            truth=(self.truth_xi_km, self.truth_tau_s),
            max_iterations=self.max_iterations,
        )


_BUILTINS = {
    "two_layer_i": dict(
        model_kind="two_layer",
        receivers_x_km=TWO_LAYER_RECEIVERS_KM,
        truth_xi_km=(46.23, 7.12),
        truth_tau_s=5.73,
        initial_xi_km=(57.60, 39.36),
        initial_tau_s=3.18,
    ),
    "two_layer_ii": dict(
        model_kind="two_layer",
        receivers_x_km=TWO_LAYER_RECEIVERS_KM,
        truth_xi_km=(57.60, 39.36),
        truth_tau_s=3.18,
        initial_xi_km=(46.23, 7.12),
        initial_tau_s=5.73,
    ),
    "subduction_i": dict(
        model_kind="subduction",
        receivers_x_km=SUBDUCTION_RECEIVERS_KM,
        truth_xi_km=(124.69, 46.48),
        truth_tau_s=10.02,
        initial_xi_km=(58.96, 88.99),
        initial_tau_s=6.79,
        T_s=55.0,
        dx_km=0.5,
    ),
    "subduction_ii": dict(
        model_kind="subduction",
        receivers_x_km=SUBDUCTION_RECEIVERS_KM,
        truth_xi_km=(58.96, 88.99),
        truth_tau_s=6.79,
        initial_xi_km=(124.69, 46.48),
        initial_tau_s=10.02,
        T_s=55.0,
        dx_km=0.5,
    ),
}


def builtin_scenario(name: str) -> Scenario:
    """One of the four synthetic cases, fully populated."""
    if name not in _BUILTINS:
        raise KeyError(
            f"unknown scenario {name!r}; valid names: {', '.join(sorted(_BUILTINS))}"
        )
    return Scenario(name=name, **_BUILTINS[name])


# ---------------------------------------------------------------------------
# config files: strict TOML subset (sections of key = value)

def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    raise TypeError(f"unsupported config value type {type(v)!r}")


def _parse_value(text: str):
    text = text.strip()
    if text.startswith("["):
        if not text.endswith("]"):
            raise ValueError(f"unterminated array: {text!r}")
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_value(p) for p in _split_array(inner)]
    if text.startswith('"'):
        if not text.endswith('"') or len(text) < 2:
            raise ValueError(f"unterminated string: {text!r}")
        return text[1:-1].replace('\\"', '"').replace("\\\\", "\\")
    if text in ("true", "false"):
        return text == "true"
    try:
        if any(ch in text for ch in ".eE") and not text.lstrip("+-").isdigit():
            return float(text)
        return int(text)
    except ValueError:
        raise ValueError(f"cannot parse config value {text!r}") from None


def _split_array(inner: str):
    parts, depth, start, in_str = [], 0, 0, False
    for i, ch in enumerate(inner):
        if ch == '"' and (i == 0 or inner[i - 1] != "\\"):
            in_str = not in_str
        elif not in_str:
            if ch == "[":
                depth += 1
            elif ch == "]":
                depth -= 1
            elif ch == "," and depth == 0:
                parts.append(inner[start:i])
                start = i + 1
    parts.append(inner[start:])
    return [p for p in parts if p.strip()]


def parse_config(text: str) -> dict:
    """Parse sectioned key = value text into {section: {key: value}}."""
    out: dict[str, dict] = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ValueError(f"line {lineno}: malformed section header {line!r}")
            section = line[1:-1].strip()
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {line!r}")
        if section is None:
            raise ValueError(f"line {lineno}: key outside any [section]")
        key, _, value = line.partition("=")
        out[section][key.strip()] = _parse_value(value)
    return out


def serialize_config(cfg: dict) -> str:
    lines = []
    for section in cfg:
        lines.append(f"[{section}]")
        for key, value in cfg[section].items():
            lines.append(f"{key} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)


def scenario_to_config(s: Scenario) -> dict:
    return {
        "scenario": {
            "name": s.name,
            "model_kind": s.model_kind,
            "receivers_x_km": list(s.receivers_x_km),
            "truth_xi_km": list(s.truth_xi_km),
            "truth_tau_s": s.truth_tau_s,
            "initial_xi_km": list(s.initial_xi_km),
            "initial_tau_s": s.initial_tau_s,
            "f0_hz": s.f0_hz,
            "amplitude": s.amplitude,
            "T_s": s.T_s,
            "metric": s.metric,
            "max_iterations": s.max_iterations,
        },
        "grid": {
            "dx_km": s.dx_km,
            "dt_s": -1.0 if s.dt_s is None else s.dt_s,
            "cfl_safety": s.cfl_safety,
        },
        "wfr": {
            "gamma1_s": s.gamma1_s,
            "gamma2_s": s.gamma2_s,
            "resample_factor": s.resample_factor,
        },
        "noise": {"ratio": s.noise_ratio, "seed": s.noise_seed},
    }


_KEY_MAP = {
    ("scenario", "name"): "name",
    ("scenario", "model_kind"): "model_kind",
    ("scenario", "receivers_x_km"): "receivers_x_km",
    ("scenario", "truth_xi_km"): "truth_xi_km",
    ("scenario", "truth_tau_s"): "truth_tau_s",
    ("scenario", "initial_xi_km"): "initial_xi_km",
    ("scenario", "initial_tau_s"): "initial_tau_s",
    ("scenario", "f0_hz"): "f0_hz",
    ("scenario", "amplitude"): "amplitude",
    ("scenario", "T_s"): "T_s",
    ("scenario", "metric"): "metric",
    ("scenario", "max_iterations"): "max_iterations",
    ("grid", "dx_km"): "dx_km",
    ("grid", "dt_s"): "dt_s",
    ("grid", "cfl_safety"): "cfl_safety",
    ("wfr", "gamma1_s"): "gamma1_s",
    ("wfr", "gamma2_s"): "gamma2_s",
    ("wfr", "resample_factor"): "resample_factor",
    ("noise", "ratio"): "noise_ratio",
    ("noise", "seed"): "noise_seed",
}


def config_to_scenario(cfg: dict) -> Scenario:
    """Build a Scenario from parsed config, rejecting unknown keys."""
    kwargs = {}
    for section, entries in cfg.items():
        for key, value in entries.items():
            if (section, key) not in _KEY_MAP:
                raise KeyError(f"unknown config key [{section}] {key}")
            name = _KEY_MAP[(section, key)]
            if name in ("receivers_x_km", "truth_xi_km", "initial_xi_km"):
                value = tuple(float(v) for v in value)
            kwargs[name] = value
    if kwargs.get("dt_s", -1.0) is not None and float(kwargs.get("dt_s", -1.0)) < 0:
        kwargs["dt_s"] = None
    missing = {"name", "model_kind", "receivers_x_km", "truth_xi_km",
               "truth_tau_s", "initial_xi_km", "initial_tau_s"} - set(kwargs)
    if missing:
        raise KeyError(f"config missing required keys: {sorted(missing)}")
    return Scenario(**kwargs)


@dataclass(frozen=True)
class RunManifest:
    """Provenance record written next to every CLI run's outputs."""

    scenario_hash: str
    seed: int
    output_paths: tuple
    code_version: str = __version__

    @staticmethod
    def for_run(scenario: Scenario, seed: int, output_paths) -> "RunManifest":
        text = serialize_config(scenario_to_config(scenario))
        h = hashlib.sha256(text.encode()).hexdigest()
        return RunManifest(h, seed, tuple(str(p) for p in output_paths))

    def write(self, path) -> None:
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")

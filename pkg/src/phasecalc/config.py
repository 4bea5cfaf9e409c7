"""Experiment configuration: flat TOML with one ``[bundle]`` table."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml

COMMANDS = ("metric-report", "flow-audit", "moyal-scan", "egorov-scan", "ehrenfest-scan",
            "partition-audit", "assumptions")

# allowed modes per command; the first one is the default
MODES = {
    "metric-report": ("gains", "chain"),
    "flow-audit": ("audit",),
    "moyal-scan": ("orders", "quantization", "isometry"),
    "egorov-scan": ("orders", "anchors"),
    "ehrenfest-scan": ("rate",),
    "partition-audit": ("audit",),
    "assumptions": ("audit",),
}

SCHEMA_VERSION = 1
SEED_ENV = "PHASECALC_SEED"

_COMMON = {"command", "mode", "seed", "output_dir", "bundle", "N", "side", "hbar", "hbar_list",
           "times", "tolerances", "description"}


class ConfigError(ValueError):
    """Raised with the full list of diagnostics."""

    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


@dataclass
class ExperimentConfig:
    command: str
    mode: str = ""
    seed: int = 0
    output_dir: str = "out"
    bundle: dict = field(default_factory=dict)
    N: int | None = None
    side: float | None = None
    hbar: float | None = None
    hbar_list: list = field(default_factory=list)
    times: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    description: str = ""

    def __post_init__(self):
        if not self.mode and self.command in MODES:
            self.mode = MODES[self.command][0]

    def get(self, key: str, default=None):
        return self.params.get(key, default)

    def tol(self, key: str, default: float) -> float:
        return float(self.tolerances.get(key, default))

    def to_json(self) -> dict:
        return asdict(self)


def from_dict(raw: dict) -> ExperimentConfig:
    """Split a parsed document into common fields and command parameters.

    Tolerances are given as top-level ``tol_*`` keys; every other unknown
    key becomes a command parameter.
    """
    raw = dict(raw)
    if "command" not in raw:
        raise ConfigError(["missing required key 'command'"])
    tolerances = {k[4:]: v for k, v in raw.items() if k.startswith("tol_")}
    params = {k: v for k, v in raw.items() if k not in _COMMON and not k.startswith("tol_")}
    bundle = raw.get("bundle", {})
    if not isinstance(bundle, dict):
        raise ConfigError(["'bundle' must be a table"])
    nested = [k for k, v in raw.items() if isinstance(v, dict) and k != "bundle"]
    nested += [f"bundle.{k}" for k, v in bundle.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError([f"only [bundle] may be a table; found nested key(s) {sorted(nested)}"])
    return ExperimentConfig(
        command=raw["command"], mode=raw.get("mode", ""), seed=int(raw.get("seed", 0)),
        output_dir=str(raw.get("output_dir", "out")), bundle=dict(bundle),
        N=raw.get("N"), side=raw.get("side"), hbar=raw.get("hbar"),
        hbar_list=list(raw.get("hbar_list", [])), times=list(raw.get("times", [])),
        tolerances=tolerances, params=params, description=str(raw.get("description", "")))


def load(path: str | os.PathLike) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            raw = _toml.load(fh)
        except _toml.TOMLDecodeError as e:
            raise ConfigError([f"{path}: {e}"]) from e
    cfg = from_dict(raw)
    if not cfg.output_dir or cfg.output_dir == "out":
        cfg.output_dir = str(Path("out") / Path(path).stem)
    return cfg


def apply_seed_override(cfg: ExperimentConfig) -> ExperimentConfig:
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            cfg.seed = int(env)
        except ValueError as e:
            raise ConfigError([f"{SEED_ENV} must be an integer, got {env!r}"]) from e
    return cfg


def _positive(name, v, out):
    try:
        if not float(v) > 0:
            out.append(f"{name} must be positive, got {v}")
    except (TypeError, ValueError):
        out.append(f"{name} must be a number, got {v!r}")


def validate(cfg: ExperimentConfig) -> list[str]:
    """Schema and cross-field diagnostics; empty when the config is usable."""
    d: list[str] = []
    if cfg.command not in COMMANDS:
        return [f"unknown command {cfg.command!r}; choose from {list(COMMANDS)}"]
    if cfg.mode not in MODES[cfg.command]:
        d.append(f"mode {cfg.mode!r} is not valid for {cfg.command}; choose from {list(MODES[cfg.command])}")
    if cfg.N is not None:
        if not isinstance(cfg.N, int) or isinstance(cfg.N, bool):
            d.append(f"N must be an integer, got {cfg.N!r}")
        elif cfg.N % 2 == 0:
            d.append("N must be odd")
        elif cfg.N < 3:
            d.append("N must be at least 3")
    if cfg.side is not None:
        _positive("side", cfg.side, d)
    if cfg.hbar is not None:
        _positive("hbar", cfg.hbar, d)
    for h in cfg.hbar_list:
        _positive("hbar_list entry", h, d)
    if len(set(map(float, (h for h in cfg.hbar_list if isinstance(h, (int, float)))))) != len(cfg.hbar_list):
        d.append("hbar_list entries must be distinct")
    for k, v in cfg.tolerances.items():
        _positive(f"tol_{k}", v, d)
    if cfg.command in ("egorov-scan", "ehrenfest-scan") and cfg.mode != "anchors" and len(cfg.hbar_list) < 2:
        d.append(f"{cfg.command} needs at least two hbar_list values")
    if cfg.command == "partition-audit" and not d:
        d.extend(_partition_window(cfg))
    return d


def _partition_window(cfg: ExperimentConfig) -> list[str]:
    from .experiments import partition_window

    try:
        tau, T_E = partition_window(cfg)
    except Exception as e:  # model or field construction failed
        return [f"cannot evaluate the Ehrenfest window: {e}"]
    if tau > T_E / 2:
        return [f"tau = {tau:.6g} lies outside the window tau <= T_E/2 = {T_E / 2:.6g} (T_E = {T_E:.6g})"]
    return []

"""Run configuration: profiles, ``key = value`` files and resolved snapshots."""

from __future__ import annotations

import math
import os
from pathlib import Path

from .errors import ConfigurationError

# key -> (type, desk default, paper default)
_KEYS = {
    "seed": (int, 0, 0),
    "side": (int, 32, 128),
    "hidden": (int, 256, 2048),
    "epochs": (int, 300, 1000),
    "lr": (float, 1e-3, 1e-3),
    "objective": (str, "mse", "mse"),
    "snr_db": (float, math.inf, math.inf),
    "scene_dir": (str, "", ""),
    "wiener_sigma2": (float, 1e-4, 1e-4),
    "tv_rho": (float, 1e-3, 1e-3),
    "tv_iters": (int, 100, 100),
    "rl_iters": (int, 30, 30),
    "repeats": (int, 3, 3),
    "e2e_side": (int, 64, 128),
    "L": (int, 15, 350),
    "gamma": (float, 0.0, 0.0),
    "outer_epochs": (int, 100, 100),
    "inner_epochs": (int, 50, 500),
    "outer_lr": (float, 0.05, 1e-3),
    "inner_lr": (float, 1e-3, 1e-3),
    "batch": (int, 4, 4),
    "e2e_snr_db": (float, 30.0, 30.0),
    "threads": (int, 1, 1),
}
PROFILES = ("desk", "paper")


def _parse(key: str, raw, where: str = ""):
    kind = _KEYS[key][0]
    try:
        if kind is float:
            return float(raw)
        if kind is int:
            return int(raw)
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{where}{key}: cannot parse {raw!r} as {kind.__name__}") from None


class RunConfig(dict):
    """Resolved settings; item access for known keys only."""

    def __getattr__(self, name):
        try:
            return self[name]
        except KeyError:
            raise AttributeError(name) from None

    def snapshot(self) -> str:
        lines = ["# resolved configuration"]
        lines += [f"{k} = {self[k]}" for k in sorted(self)]
        return "\n".join(lines) + "\n"

    def write_snapshot(self, directory) -> Path:
        path = Path(directory) / "config.resolved"
        path.write_text(self.snapshot())
        return path


def profile_defaults(profile: str) -> dict:
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}; choose from {PROFILES}")
    col = 1 if profile == "desk" else 2
    return {k: v[col] for k, v in _KEYS.items()}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "profile":
            out[key] = value
            continue
        if key not in _KEYS:
            raise ConfigurationError(f"{path}:{n}: unknown key {key!r}")
        out[key] = _parse(key, value, f"{path}:{n}: ")
    return out


def resolve(profile: str | None = None, config_file=None, overrides: dict | None = None, env=os.environ) -> RunConfig:
    """Profile defaults < config file < environment (threads) < explicit overrides."""
    from_file = read_config_file(config_file) if config_file else {}
    profile = profile or from_file.pop("profile", "desk")
    from_file.pop("profile", None)
    cfg = profile_defaults(profile)
    cfg.update(from_file)
    if "PSFINV_THREADS" in env and "threads" not in from_file:
        cfg["threads"] = _parse("threads", env["PSFINV_THREADS"], "PSFINV_THREADS: ")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _KEYS:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        cfg[key] = _parse(key, value)
    if cfg["threads"] < 1:
        raise ConfigurationError("threads must be >= 1")
    out = RunConfig(cfg)
    out["profile"] = profile
    return out

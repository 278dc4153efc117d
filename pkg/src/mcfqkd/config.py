"""YAML configuration: defaults, merging, and construction of run objects.

A config file only needs the keys it changes; everything else comes from
:func:`default_config`, which is generated from the dataclass defaults so
there is a single source of truth. Unknown keys are rejected.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import asdict, fields
from pathlib import Path

import yaml

from .channel import DriftProcess, FiberSpec, default_fiber_profile
from .detection import DetectorSpec, SourceSpec, control_detector, quantum_detector
from .engine import EXPERIMENTS, ControlSpec, ExperimentConfig, VisibilityModel
from .errors import ConfigError, SimulationError
from .keyrate import ChannelModel, DecoyProtocolParams
from .pll import PllConfig

ENV_VAR = "MCFQKD_CONFIG"

# maps whose keys are free-form rather than fixed field names
_OPEN_MAPS = {("source", "mean_photon_numbers")}
# maps replaced as a whole when given
_REPLACED = {("keyrate", "optimize")}


def _drift_dict(seed: int, diffusion: float) -> dict:
    d = asdict(DriftProcess(diffusion=diffusion))
    d.pop("rng_seed")
    d["seed"] = seed
    return d


def default_config() -> dict:
    """Every tunable value with its default."""
    exp = ExperimentConfig()
    return {
        "seed": 0,
        "scheme": exp.scheme,
        "fiber": default_fiber_profile().to_dict(),
        "drift": {
            "mcf": _drift_dict(1, exp.mcf_drift.diffusion),
            "smf": _drift_dict(2, exp.smf_drift.diffusion),
        },
        "source": asdict(SourceSpec()),
        "detectors": {"quantum": asdict(quantum_detector()), "control": asdict(control_detector())},
        "pll": asdict(PllConfig()),
        "control": asdict(ControlSpec()),
        "visibility": asdict(VisibilityModel()),
        "link": {
            "channel_loss_db": exp.channel_loss_db,
            "leakage_rate": exp.leakage_rate,
            "cw_rate": exp.cw_rate,
            "mode": exp.mode,
            "pulse_level_cap": exp.pulse_level_cap,
        },
        "experiments": {
            "stability_comparison": {"duration": 30.0, "bin": 0.01},
            "state_distribution": {"duration": 10.0, "intensity": "decoy"},
            "long_qber": {"duration": 7 * 3600.0, "bin": 1.0, "intensity": "signal",
                          "basis": 1, "state": 1, "faults": []},
            "qkd_emulation": {"duration": 10.0, "step_seconds": 10.0},
        },
        "protocol": asdict(DecoyProtocolParams()),
        "keyrate": {
            "loss_db": 7.0,
            "intrinsic_error": 0.025,
            "dead_time": True,
            "stats_file": None,
            "optimize": {"p_mu1": [0.5, 0.99], "p_Z": [0.5, 0.99]},
            "points": 11,
            "rounds": 5,
        },
    }


def merge(base: dict, override: dict, path: tuple = ()) -> dict:
    """Recursive merge that rejects keys absent from ``base``."""
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        here = path + (key,)
        name = ".".join(map(str, here))
        if path in _OPEN_MAPS:
            out[key] = copy.deepcopy(value)
        elif key not in out:
            raise ConfigError(f"unknown config key {name}")
        elif here in _REPLACED:
            out[key] = copy.deepcopy(value)
        elif isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{name} must be a mapping")
            out[key] = merge(out[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_path(path: str | os.PathLike | None) -> Path | None:
    if path is not None:
        return Path(path)
    env = os.environ.get(ENV_VAR)
    return Path(env) if env else None


def load_config(path: str | os.PathLike | None = None) -> dict:
    """Defaults overlaid with the YAML file at ``path`` (or ``$MCFQKD_CONFIG``)."""
    p = resolve_path(path)
    if p is None:
        return default_config()
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    try:
        user = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {p}: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"config {p} must be a mapping at top level")
    return merge(default_config(), user)


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _build(cls, values: dict, where: str):
    names = {f.name for f in fields(cls)}
    extra = set(values) - names
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    try:
        return cls(**values)
    except (SimulationError, TypeError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from None


def _drift(values: dict, where: str) -> DriftProcess:
    v = dict(values)
    v["rng_seed"] = int(v.pop("seed", 0))
    return _build(DriftProcess, v, where)


def experiment_config(raw: dict, experiment: str, seed: int | None = None) -> ExperimentConfig:
    """Run object for one named experiment."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    settings = raw["experiments"][experiment]
    link = raw["link"]
    try:
        fiber = FiberSpec.from_dict(raw["fiber"])
    except (SimulationError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid fiber section: {exc}") from None
    faults = tuple(tuple(map(float, f)) for f in settings.get("faults", []))
    duration = float(settings["duration"])
    kwargs = dict(
        scheme=raw["scheme"],
        fiber=fiber,
        mcf_drift=_drift(raw["drift"]["mcf"], "drift.mcf"),
        smf_drift=_drift(raw["drift"]["smf"], "drift.smf"),
        source=_build(SourceSpec, raw["source"], "source"),
        quantum_detector=_build(DetectorSpec, raw["detectors"]["quantum"], "detectors.quantum"),
        control_detector=_build(DetectorSpec, raw["detectors"]["control"], "detectors.control"),
        pll=_build(PllConfig, raw["pll"], "pll"),
        control=_build(ControlSpec, raw["control"], "control"),
        visibility=_build(VisibilityModel, raw["visibility"], "visibility"),
        duration=duration,
        bin=float(settings.get("bin", duration)),
        mode=link["mode"],
        rng_seed=int(raw["seed"] if seed is None else seed),
        pulse_level_cap=float(link["pulse_level_cap"]),
        channel_loss_db=float(link["channel_loss_db"]),
        intensity=settings.get("intensity", "decoy"),
        faults=faults,
        leakage_rate=float(link["leakage_rate"]),
        cw_rate=float(link["cw_rate"]),
    )
    try:
        return ExperimentConfig(**kwargs)
    except SimulationError as exc:
        raise ConfigError(f"invalid experiment settings: {exc}") from None


def protocol_params(raw: dict) -> DecoyProtocolParams:
    return _build(DecoyProtocolParams, raw["protocol"], "protocol")


def channel_model(raw: dict) -> ChannelModel:
    kr = raw["keyrate"]
    det = _build(DetectorSpec, raw["detectors"]["quantum"], "detectors.quantum")
    return ChannelModel(loss_db=float(kr["loss_db"]), detector=det,
                        intrinsic_error=float(kr["intrinsic_error"]), dead_time=bool(kr["dead_time"]))

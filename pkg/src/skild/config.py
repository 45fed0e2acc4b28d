"""JSON configuration loading, presets and run manifests."""

from __future__ import annotations

import hashlib
import json
import os
import platform
import time
from importlib import resources
from pathlib import Path

from skild.errors import ValidationError
from skild.schedule import ScheduleSpec
from skild.spectrum import PowerLawParams

PRESETS = (
    "cifar-linear-best",
    "cifar-loglinear-best",
    "imnet256-4x",
    "imnet128-4x",
    "imnet128-8x",
    "ising-128",
)


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: top level must be a JSON object")
    return obj


def parse_schedule(obj: dict, where: str = "schedule") -> ScheduleSpec:
    try:
        return ScheduleSpec.from_json(obj)
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from None
    except TypeError as exc:
        raise ValidationError(f"{where}: {exc}") from None


def parse_power_law(obj: dict, where: str = "params") -> PowerLawParams:
    try:
        return PowerLawParams.from_json(obj)
    except (ValidationError, TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: {exc}") from None


def load_config(path):
    """Load a schedule spec (has ``family``) or power-law params (has ``C``).

    A file may also nest them as ``{"schedule": {...}, "power_law": {...}}``;
    the nested form returns a dict of parsed objects.
    """
    obj = _read_json(path)
    if "family" in obj:
        return parse_schedule(obj, str(path))
    if "C" in obj:
        return parse_power_law(obj, str(path))
    out = {}
    if "schedule" in obj:
        out["schedule"] = parse_schedule(obj["schedule"], f"{path}: schedule")
    if "power_law" in obj:
        out["power_law"] = parse_power_law(obj["power_law"], f"{path}: power_law")
    if not out:
        raise ValidationError(f"{path}: not a schedule or power-law config")
    return out


def load_schedule(path) -> ScheduleSpec:
    cfg = load_config(path)
    if isinstance(cfg, ScheduleSpec):
        return cfg
    if isinstance(cfg, dict) and "schedule" in cfg:
        return cfg["schedule"]
    raise ValidationError(f"{path}: family: required field missing")


def save_schedule(spec: ScheduleSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_json(), indent=2, sort_keys=True) + "\n")


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {PRESETS}")
    return Path(str(resources.files("skild") / "presets" / f"{name}.json"))


def load_preset(name: str) -> ScheduleSpec:
    return load_schedule(preset_path(name))


def resolve_schedule(arg: str) -> ScheduleSpec:
    """Accept a path or a bare preset name."""
    if not os.path.exists(arg) and arg.removesuffix(".json") in PRESETS:
        return load_preset(arg.removesuffix(".json"))
    return load_schedule(arg)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def run_manifest(argv, *, seed=None, schedule: ScheduleSpec | None = None, s0=None, artifacts=(), **extra) -> dict:
    from skild import CONFIG_SCHEMA_VERSION, __version__

    cfg = {"schedule": schedule.to_json() if schedule else None, "s0": s0, **extra}
    return {
        "command": list(argv),
        "version": __version__,
        "config_schema": CONFIG_SCHEMA_VERSION,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "schedule": cfg["schedule"],
        "s0": s0,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "host": platform.node(),
        "artifacts": sorted(artifacts),
        **extra,
    }


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")

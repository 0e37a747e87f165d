"""Experiment manifests: a TOML document listing simulation configs.

    out = "results"

    [defaults]            # merged into every experiment (optional)
    rounds = 100
    dataset.name = "mnist"

    [[experiment]]
    id = "fedavg-fedsa"
    agr.kind = "fed_avg"
    attack.kind = "fedsa"
    attack.fedsa.k = 0.5
"""
from __future__ import annotations

import copy
import dataclasses
import sys
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .sim import SimConfig

TOP_KEYS = {"out", "defaults", "experiment"}


@dataclass
class ExperimentManifest:
    entries: list[tuple[str, SimConfig]] = field(default_factory=list)
    out_dir: Path = Path("results")

    def ids(self) -> list[str]:
        return [i for i, _ in self.entries]


def _coerce(value, tp, path: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        (inner,) = typing.get_args(tp)
        return [_coerce(v, inner, f"{path}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a table, got {type(value).__name__}")
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{path}: expected an integer, got {value!r}") from None
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported field type {tp}")


def _build(cls, table: dict, path: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in table.items():
        kp = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown key {kp!r}")
        kwargs[key] = _coerce(value, hints[key], kp)
    return cls(**kwargs)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def config_from_dict(table: dict, path: str = "") -> SimConfig:
    cfg = _build(SimConfig, table, path)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None
    return cfg


def parse_manifest_text(text: str, base_dir: Path | None = None) -> ExperimentManifest:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed manifest: {exc}") from None
    for key in doc:
        if key not in TOP_KEYS:
            raise ConfigError(f"unknown key {key!r}")
    defaults = doc.get("defaults", {})
    if not isinstance(defaults, dict):
        raise ConfigError("defaults: expected a table")
    experiments = doc.get("experiment", [])
    if not isinstance(experiments, list):
        raise ConfigError("experiment: expected an array of tables ([[experiment]])")
    out = Path(doc.get("out", "results"))
    if base_dir is not None and not out.is_absolute():
        out = base_dir / out
    manifest = ExperimentManifest(out_dir=out)
    seen = set()
    for n, entry in enumerate(experiments):
        path = f"experiment[{n}]"
        if "id" not in entry:
            raise ConfigError(f"{path}: missing required key 'id'")
        exp_id = entry["id"]
        if not isinstance(exp_id, str) or not exp_id or "/" in exp_id:
            raise ConfigError(f"{path}.id: expected a non-empty string without '/'")
        if exp_id in seen:
            raise ConfigError(f"duplicate experiment id {exp_id!r}")
        seen.add(exp_id)
        body = _merge(defaults, {k: v for k, v in entry.items() if k != "id"})
        manifest.entries.append((exp_id, config_from_dict(body, path)))
    return manifest


def parse_config(path) -> ExperimentManifest:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {p}: {exc.strerror}") from None
    return parse_manifest_text(text)

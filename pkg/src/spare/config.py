"""JSON configuration files and the shipped presets.

One file describes a whole run::

    {
      "seed": 1,
      "key": {"key_hex": "...", "iv_hex": "..."},
      "firewall": {"mode": "timestamp_device", "time_window": 3600, "daily_threshold": 30},
      "benign": {"n_users": 100},
      "malicious": {"n_users": 300, "n_devices": 10},
      "adversary": {"n_harvesters": 10, "strategy": "round_robin"},
      "service": {"listen_address": "127.0.0.1:8080", "snapshot_path": "ledger.json"}
    }

Every section except ``key`` is optional.  ``SPARE_KEY_HEX`` and
``SPARE_IV_HEX`` in the environment override the key material.
"""
from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from spare.adversary import AdversarySpec
from spare.codec import KeyMaterial
from spare.engine import PRESETS, Scenario
from spare.exceptions import ConfigError
from spare.firewall import Cooldown, FirewallConfig
from spare.workload import WorkloadSpec

# demo material only; real deployments must supply their own
DEMO_KEY_HEX = "53504152452d64656d6f2d6b65792121"
DEMO_IV_HEX = "53504152452d64656d6f2d6976212121"


def fixtures_dir():
    return resources.files("spare") / "fixtures"


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def key_from_config(doc: dict) -> KeyMaterial:
    section = doc.get("key") or {}
    key_hex = os.environ.get("SPARE_KEY_HEX") or section.get("key_hex") or DEMO_KEY_HEX
    iv_hex = os.environ.get("SPARE_IV_HEX") or section.get("iv_hex") or DEMO_IV_HEX
    return KeyMaterial.from_hex(key_hex, iv_hex)


def _build(cls, section: dict, **extra):
    try:
        return cls(**section, **extra)
    except TypeError as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from None


def firewall_from_config(doc: dict, key: KeyMaterial | None = None) -> FirewallConfig:
    section = dict(doc.get("firewall") or {})
    cooldown = section.pop("cooldown", None)
    if isinstance(cooldown, dict):
        section["cooldown"] = _build(Cooldown, cooldown)
    elif isinstance(cooldown, str):
        section["cooldown"] = Cooldown(cooldown)
    return _build(FirewallConfig, section, key=key or key_from_config(doc))


def _workload(doc: dict, population: str) -> WorkloadSpec | None:
    section = doc.get(population)
    if section is None:
        return None
    section = dict(section)
    section.setdefault("seed", doc.get("seed", 0))
    section["scenario"] = population
    try:
        return WorkloadSpec.from_dict(section)
    except ConfigError as exc:
        raise ConfigError(f"{population}: {exc}") from None


def scenario_from_config(doc: dict) -> Scenario:
    key = key_from_config(doc)
    adversary = doc.get("adversary")
    return Scenario(
        firewall=firewall_from_config(doc, key),
        benign=_workload(doc, "benign"),
        malicious=_workload(doc, "malicious"),
        adversary=_build(AdversarySpec, adversary, key=key) if adversary is not None else None,
        preset_name=doc.get("preset"),
    )


def apply_overrides(
    doc: dict,
    *,
    seed: int | None = None,
    users: int | None = None,
    devices: int | None = None,
    threshold: int | None = None,
    mode: str | None = None,
    strategy: str | None = None,
) -> dict:
    """Return a copy of ``doc`` with command-line style overrides applied."""
    doc = copy.deepcopy(doc)
    if seed is not None:
        doc["seed"] = seed
        for population in ("benign", "malicious"):
            if doc.get(population) is not None:
                doc[population]["seed"] = seed
    if users is not None:
        for population in ("benign", "malicious"):
            if doc.get(population) is not None:
                doc[population]["n_users"] = users
    if devices is not None:
        if doc.get("malicious") is None:
            raise ConfigError("--devices needs a malicious workload")
        doc["malicious"]["n_devices"] = devices
        if doc.get("adversary") is not None:
            doc["adversary"]["n_harvesters"] = devices
    if threshold is not None:
        doc.setdefault("firewall", {})["daily_threshold"] = threshold
    if mode is not None:
        doc.setdefault("firewall", {})["mode"] = mode
    if strategy is not None:
        if doc.get("adversary") is None:
            raise ConfigError("--strategy needs an adversary section")
        doc["adversary"]["strategy"] = strategy
    return doc


def preset_doc(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    doc = json.loads((fixtures_dir() / "presets" / f"{name}.json").read_text())
    doc["preset"] = name
    return doc


def load_preset(name: str, seed: int | None = None, **overrides) -> Scenario:
    return scenario_from_config(apply_overrides(preset_doc(name), seed=seed, **overrides))


@dataclass(frozen=True)
class ServiceConfig:
    firewall: FirewallConfig
    listen_address: str = "127.0.0.1:8080"
    snapshot_path: str | None = None
    snapshot_interval: float = 30.0

    def __post_init__(self):
        if self.snapshot_interval <= 0:
            raise ConfigError("snapshot_interval must be > 0")
        host, sep, port = self.listen_address.rpartition(":")
        if not sep or not port.isdigit():
            raise ConfigError(f"listen_address must be host:port, got {self.listen_address!r}")

    @property
    def host(self) -> str:
        return self.listen_address.rpartition(":")[0]

    @property
    def port(self) -> int:
        return int(self.listen_address.rpartition(":")[2])


def service_from_config(doc: dict) -> ServiceConfig:
    return _build(ServiceConfig, dict(doc.get("service") or {}), firewall=firewall_from_config(doc))

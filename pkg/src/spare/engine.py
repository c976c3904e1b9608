"""Deterministic discrete-event replay of a day of traffic through the firewall."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

from spare.adversary import AdversarySpec, TokenStore
from spare.codec import KeyMaterial
from spare.exceptions import ConfigError, StoreEmpty
from spare.firewall import (
    DeviceLedger,
    FirewallConfig,
    Reason,
    Verdict,
    advance_time,
    judge,
    open_request,
)
from spare.workload import (
    Dataset,
    RequestEvent,
    WorkloadSpec,
    gen_benign,
    gen_malicious_demand,
    read_dataset,
)

PRESETS = (
    "case1_benign",
    "case2_amateur",
    "case3_naive",
    "case4_moderate",
    "case5_sophisticated",
    "table2_benign",
    "table3_malicious",
)

RECORD_COLUMNS = ("send_time", "user_id", "device_id", "is_malicious", "decision", "reason", "request_index")

_LEDGER_SWEEP_INTERVAL = 3600


@dataclass(frozen=True)
class Scenario:
    firewall: FirewallConfig
    benign: WorkloadSpec | None = None
    malicious: WorkloadSpec | None = None
    adversary: AdversarySpec | None = None
    preset_name: str | None = None

    def __post_init__(self):
        if self.benign is None and self.malicious is None:
            raise ConfigError("scenario has no workload")
        if self.benign is not None and self.benign.scenario != "benign":
            raise ConfigError("benign workload must have scenario='benign'")
        if self.malicious is not None and self.malicious.scenario != "malicious":
            raise ConfigError("malicious workload must have scenario='malicious'")
        if self.adversary is not None:
            if self.malicious is None:
                raise ConfigError("adversary given without a malicious workload")
            if self.adversary.strategy != "static_url":
                self.adversary.check_against(self.firewall.time_window)
        if self.preset_name is not None and self.preset_name not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset_name!r}")

    @property
    def seed(self) -> int:
        return (self.benign or self.malicious).seed

    def echo(self) -> dict:
        return {
            "preset": self.preset_name,
            "firewall": firewall_echo(self.firewall),
            "benign": self.benign.to_dict() if self.benign else None,
            "malicious": self.malicious.to_dict() if self.malicious else None,
            "adversary": adversary_echo(self.adversary) if self.adversary else None,
        }


def firewall_echo(cfg: FirewallConfig) -> dict:
    # key material deliberately left out
    return {
        "mode": cfg.mode.value,
        "time_window": cfg.time_window,
        "daily_threshold": cfg.daily_threshold,
        "simultaneity_enabled": cfg.simultaneity_enabled,
        "simultaneity_window": cfg.simultaneity_window,
        "simultaneity_count": cfg.simultaneity_count,
        "cooldown": {"kind": cfg.cooldown.kind, "seconds": cfg.cooldown.seconds},
        "future_skew": cfg.future_skew,
    }


def adversary_echo(spec: AdversarySpec) -> dict:
    return {
        "n_harvesters": spec.n_harvesters,
        "harvest_interval": spec.harvest_interval,
        "strategy": spec.strategy,
        "delete_after_use": spec.delete_after_use,
        "retention": spec.retention,
    }


@dataclass(frozen=True)
class SimulationRecord:
    event: RequestEvent
    verdict: Verdict
    is_malicious: bool
    # device named by the presented token, when it could be opened
    presented_device: str | None = None

    @property
    def device_id(self) -> str:
        return self.presented_device or self.event.device_id


@dataclass
class SimulationReport:
    requests: int
    accepted: int
    rejected: int
    per_reason: dict[str, int]
    per_user: dict[str, dict]
    per_device: dict[str, int]
    config: dict
    seed: int | None
    records: list[SimulationRecord] = field(default_factory=list, repr=False, compare=False)

    @property
    def failed_fraction(self) -> float:
        return self.rejected / self.requests if self.requests else 0.0

    def to_dict(self) -> dict:
        return {
            "totals": {
                "requests": self.requests,
                "accepted": self.accepted,
                "rejected": self.rejected,
                "failed_fraction": self.failed_fraction,
            },
            "per_reason": self.per_reason,
            "per_user": self.per_user,
            "per_device": self.per_device,
            "config": self.config,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write(self, report_path: str | Path, records_path: str | Path | None = None) -> None:
        Path(report_path).write_text(self.to_json())
        if records_path is not None:
            write_records(self.records, records_path)


def write_records(records, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([
                r.event.send_time,
                r.event.user_id,
                r.device_id,
                "true" if r.is_malicious else "false",
                r.verdict.decision.value,
                r.verdict.reason.value,
                r.event.request_index,
            ])


def build_report(records: list[SimulationRecord], config: dict, seed: int | None) -> SimulationReport:
    per_reason = {r.value: 0 for r in Reason}
    per_user: dict[str, dict] = {}
    per_device: dict[str, int] = {}
    accepted = 0
    for rec in records:
        per_reason[rec.verdict.reason.value] += 1
        u = per_user.setdefault(rec.event.user_id, {"count": 0, "accepted": 0, "first_error_index": None})
        u["count"] += 1
        if rec.verdict.accepted:
            accepted += 1
            u["accepted"] += 1
            per_device[rec.device_id] = per_device.get(rec.device_id, 0) + 1
        else:
            idx = rec.event.request_index
            if u["first_error_index"] is None or idx < u["first_error_index"]:
                u["first_error_index"] = idx
    return SimulationReport(
        requests=len(records),
        accepted=accepted,
        rejected=len(records) - accepted,
        per_reason=per_reason,
        per_user=dict(sorted(per_user.items())),
        per_device=dict(sorted(per_device.items())),
        config=config,
        seed=seed,
        records=records,
    )


@lru_cache(maxsize=16)
def _benign_dataset(spec: WorkloadSpec, key: KeyMaterial) -> Dataset:
    return gen_benign(spec, key)


@lru_cache(maxsize=16)
def _malicious_dataset(spec: WorkloadSpec) -> Dataset:
    return gen_malicious_demand(spec)


def _merge(*streams: tuple[Dataset, bool]) -> list[tuple[RequestEvent, bool]]:
    merged = [(e, mal) for ds, mal in streams for e in ds.events]
    merged.sort(key=lambda pair: pair[0].sort_key)
    return merged


class _Harvester:
    """Drives harvest ticks on the adversary's cadence, lazily."""

    def __init__(self, spec: AdversarySpec, start: int, seed: int, first_request: int | None):
        self.store = TokenStore(spec, seed)
        self.interval = spec.harvest_interval
        if spec.strategy == "single_token":
            # one URL grabbed shortly before the clone app ships, never refreshed
            if first_request is not None:
                self.store.harvest_tick(first_request - self.interval)
            self.next_tick = None
        else:
            self.next_tick = start

    def token_at(self, now: int):
        while self.next_tick is not None and self.next_tick <= now:
            self.store.harvest_tick(self.next_tick)
            self.next_tick += self.interval
        try:
            return self.store.serve(now)
        except StoreEmpty:
            # the clone app falls back to its bare URL
            return None


def _run(stream, cfg: FirewallConfig, harvester: _Harvester | None) -> list[SimulationRecord]:
    ledger = DeviceLedger()
    records = []
    next_sweep = None
    for event, is_malicious in stream:
        now = event.send_time
        if next_sweep is None:
            next_sweep = now + _LEDGER_SWEEP_INTERVAL
        elif now >= next_sweep:
            advance_time(ledger, now, cfg)
            next_sweep = now + _LEDGER_SWEEP_INTERVAL
        if is_malicious and harvester is not None:
            event = replace(event, token=harvester.token_at(now))
        opened = open_request(event.token, cfg)
        if isinstance(opened, Verdict):
            verdict, device = opened, None
        else:
            verdict = judge(opened, event.resubmit, now, ledger, cfg)
            device = opened.device_id
        records.append(SimulationRecord(event, verdict, is_malicious, device))
    return records


def run_scenario(s: Scenario) -> SimulationReport:
    """Run one scenario; the returned report carries the full record log."""
    streams = []
    if s.benign is not None:
        streams.append((_benign_dataset(s.benign, s.firewall.key), False))
    harvester = None
    if s.malicious is not None:
        demand = _malicious_dataset(s.malicious)
        streams.append((demand, True))
        if s.adversary is not None and s.adversary.strategy != "static_url":
            first = demand.events[0].send_time if demand.events else None
            harvester = _Harvester(s.adversary, s.malicious.day_start, s.malicious.seed, first)
    records = _run(_merge(*streams), s.firewall, harvester)
    return build_report(records, s.echo(), s.seed)


def replay_dataset(path: str | Path, firewall_cfg: FirewallConfig) -> SimulationReport:
    """Re-judge a stored dataset exactly as recorded (no adversary involved)."""
    ds = read_dataset(path)
    records = _run(_merge((ds, ds.is_malicious)), firewall_cfg, None)
    population = "malicious" if ds.is_malicious else "benign"
    config = {
        "preset": None,
        "firewall": firewall_echo(firewall_cfg),
        "benign": None,
        "malicious": None,
        "adversary": None,
    }
    config[population] = ds.spec.to_dict()
    return build_report(records, config, ds.spec.seed)


def run_preset(name: str, seed: int | None = None, **overrides) -> SimulationReport:
    from spare.config import load_preset

    return run_scenario(load_preset(name, seed=seed, **overrides))

"""Tables, first-error statistics, parameter sweeps and closed-form oracles."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path
from statistics import median

import numpy as np

from spare.engine import Scenario, SimulationRecord, SimulationReport, run_scenario
from spare.exceptions import ConfigError, SchemaError
from spare.regression import RegressionFit, fit_linear, fit_poly2  # noqa: F401

GRID_COLUMNS = ("users", "devices", "threshold", "total", "successful", "failed")
FIRST_ERROR_COLUMNS = ("user_id", "is_malicious", "total_requests", "first_error_index")


@dataclass(frozen=True)
class GridRow:
    users: int
    devices: int
    threshold: int
    total: int
    successful: int
    failed: int

    def __post_init__(self):
        if self.successful + self.failed != self.total:
            raise ValueError("successful + failed must equal total")

    @property
    def failed_fraction(self) -> float:
        return self.failed / self.total if self.total else 0.0


@dataclass(frozen=True)
class Summary:
    total: int
    successful: int
    failed: int

    @property
    def failed_fraction(self) -> float:
        return self.failed / self.total if self.total else 0.0


def summarize(records) -> Summary:
    total = successful = 0
    for r in records:
        total += 1
        successful += r.verdict.accepted
    return Summary(total, successful, total - successful)


def first_error_positions(records, malicious: bool | None = None) -> dict[str, int | None]:
    """Smallest rejected ``request_index`` per user, ``None`` if never rejected.

    ``malicious`` restricts the result to one population.
    """
    out: dict[str, int | None] = {}
    for r in records:
        if malicious is not None and r.is_malicious != malicious:
            continue
        uid = r.event.user_id
        current = out.setdefault(uid, None)
        if not r.verdict.accepted:
            idx = r.event.request_index
            if current is None or idx < current:
                out[uid] = idx
    return out


def median_first_error(records, malicious: bool) -> float | None:
    positions = [p for p in first_error_positions(records, malicious).values() if p is not None]
    return median(positions) if positions else None


def cell_seed(base_seed: int, users: int, devices: int) -> int:
    # the threshold is left out so every threshold sees the same traffic
    ss = np.random.SeedSequence(base_seed, spawn_key=(users, devices))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def cell_scenario(base: Scenario, users: int, devices: int | None, threshold: int) -> Scenario:
    firewall = replace(base.firewall, daily_threshold=threshold)
    if base.malicious is not None:
        if devices is None:
            raise ConfigError("malicious sweeps need a device count")
        seed = cell_seed(base.malicious.seed, users, devices)
        malicious = replace(base.malicious, n_users=users, n_devices=devices, seed=seed)
        adversary = base.adversary
        if adversary is not None and adversary.strategy in ("random_pool", "round_robin"):
            adversary = replace(adversary, n_harvesters=devices)
        return replace(base, firewall=firewall, malicious=malicious, adversary=adversary, benign=None)
    seed = cell_seed(base.benign.seed, users, 0)
    return replace(base, firewall=firewall, benign=replace(base.benign, n_users=users, seed=seed))


def sweep_grid(users_set, devices_set, threshold_set, base: Scenario) -> list[GridRow]:
    """Run one simulation per (users, devices, threshold) cell.

    A benign-only ``base`` ignores devices (pass ``[0]``); those rows carry
    ``devices=0``.
    """
    if not users_set or not devices_set or not threshold_set:
        raise ValueError("sweep sets must be non-empty")
    rows = []
    for u in users_set:
        for d in devices_set:
            for t in threshold_set:
                report = run_scenario(cell_scenario(base, u, d if base.malicious else None, t))
                rows.append(GridRow(u, d if base.malicious else 0, t, report.requests, report.accepted, report.rejected))
    return rows


def analytic_benign_failed_fraction(threshold: int, req_min: int, req_max: int) -> float:
    """Expected rejected share when each device gets ``min(n, R)`` accepts,
    ``n ~ DiscreteUniform[req_min, req_max]`` (exact enumeration)."""
    if req_min > req_max:
        raise ValueError("req_min > req_max")
    ns = range(req_min, req_max + 1)
    excess = sum(max(0, n - threshold) for n in ns)
    return float(Fraction(excess, sum(ns)))


def analytic_malicious_failed_fraction(users: int, devices: int, threshold: int, mean_req: float) -> float:
    """Rejected share when ``devices`` identities can absorb at most ``threshold`` each."""
    if min(users, devices, threshold, mean_req) <= 0:
        raise ValueError("all arguments must be positive")
    return max(0.0, 1.0 - devices * threshold / (users * mean_req))


def dump_grid_rows(rows, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(GRID_COLUMNS + ("failed_fraction",))
    for r in rows:
        w.writerow([r.users, r.devices, r.threshold, r.total, r.successful, r.failed, repr(r.failed_fraction)])


def write_grid_rows(rows, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        dump_grid_rows(rows, fh)


def read_grid_rows(path: str | Path) -> list[GridRow]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(GRID_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise SchemaError(f"{path}: missing columns {sorted(missing)}")
        try:
            return [GridRow(*(int(row[c]) for c in GRID_COLUMNS)) for row in reader]
        except ValueError as exc:
            raise SchemaError(f"{path}: {exc}") from None


def load_table3() -> list[GridRow]:
    """The 27 malicious-user configurations as published, verbatim."""
    from spare.config import fixtures_dir

    with resources.as_file(fixtures_dir() / "table3.csv") as p:
        return read_grid_rows(p)


def heatmap_slice(rows, **fixed) -> list[GridRow]:
    """Rows matching every ``field=value`` in ``fixed`` (e.g. ``threshold=30``)."""
    return [r for r in rows if all(getattr(r, k) == v for k, v in fixed.items())]


def write_first_errors(records: list[SimulationRecord], path: str | Path) -> None:
    totals: dict[str, list] = {}
    for r in records:
        entry = totals.setdefault(r.event.user_id, [r.is_malicious, 0])
        entry[1] += 1
    firsts = first_error_positions(records)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIRST_ERROR_COLUMNS)
        for uid in sorted(totals):
            is_mal, n = totals[uid]
            first = firsts[uid]
            w.writerow([uid, "true" if is_mal else "false", n, "" if first is None else first])


def read_first_errors(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != FIRST_ERROR_COLUMNS:
            raise SchemaError(f"{path}: expected columns {FIRST_ERROR_COLUMNS}")
        return [
            {
                "user_id": row["user_id"],
                "is_malicious": row["is_malicious"] == "true",
                "total_requests": int(row["total_requests"]),
                "first_error_index": int(row["first_error_index"]) if row["first_error_index"] else None,
            }
            for row in reader
        ]


def export(obj, path: str | Path, fmt: str = "csv") -> None:
    """Write grid rows (csv/json), a simulation report (json) or a regression fit (json)."""
    path = Path(path)
    if isinstance(obj, SimulationReport):
        if fmt != "json":
            raise ValueError("reports export as json")
        path.write_text(obj.to_json())
    elif isinstance(obj, RegressionFit):
        doc = {**asdict(obj), "terms": obj.terms()}
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    elif fmt == "csv":
        write_grid_rows(obj, path)
    elif fmt == "json":
        doc = [{**asdict(r), "failed_fraction": r.failed_fraction} for r in obj]
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")

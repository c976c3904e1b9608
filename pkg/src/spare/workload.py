"""Synthetic one-day request workloads.

Every user draws a request count uniformly from ``[req_min, req_max]`` and
request times from a 24-bin hourly usage profile (hour first, then a uniform
second inside the hour).  Randomness comes from numpy's PCG64, one
independent substream per user derived from ``SeedSequence(seed,
spawn_key=(population, user_index))``, so a user's requests do not depend on
how many other users exist or in which order they are generated.
"""
from __future__ import annotations

import bisect
import calendar
import csv
import json
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from spare.codec import KeyMaterial, Token, TokenPayload, mint_token
from spare.exceptions import ConfigError, InfeasibleSpec, SchemaError

SECONDS_PER_HOUR = 3600

# minimal 00-05h, morning ramp, 09-11h peak, slow evening decline
DEFAULT_HOURLY_PROFILE = (
    1.0, 0.7, 0.5, 0.4, 0.5, 1.0, 2.5, 4.5, 6.5, 8.0, 8.0, 7.5,
    6.5, 6.0, 5.5, 5.5, 6.0, 6.5, 6.0, 5.0, 4.0, 3.0, 2.0, 1.4,
)
DEFAULT_DAY = date(2024, 3, 9)

DATASET_COLUMNS = ("user_id", "device_id", "send_time", "request_index", "token", "resubmit")

_POPULATION_STREAM = {"benign": 0, "malicious": 1}


def normalize_weights(weights) -> tuple[float, ...]:
    w = np.asarray(weights, dtype=float)
    if w.shape != (24,) or np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
        raise ConfigError("hourly weights must be 24 non-negative finite numbers, not all zero")
    return tuple(float(x) for x in w / w.sum())


def benign_user_id(i: int) -> str:
    return f"user{i:05d}"


def benign_device_id(i: int) -> str:
    return f"PWAdev{i:05d}"


def malicious_user_id(i: int) -> str:
    return f"mal{i:05d}"


def attack_device_id(h: int) -> str:
    return f"ATKdev{h:03d}"


def day_start(day: date) -> int:
    return calendar.timegm(day.timetuple())


@dataclass(frozen=True)
class WorkloadSpec:
    n_users: int
    req_min: int = 25
    req_max: int = 45
    hourly_weights: tuple[float, ...] = field(default_factory=lambda: normalize_weights(DEFAULT_HOURLY_PROFILE))
    day: date = DEFAULT_DAY
    scenario: str = "benign"
    n_devices: int | None = None
    seed: int = 0
    min_gap_per_device: int = 10

    def __post_init__(self):
        object.__setattr__(self, "hourly_weights", normalize_weights(self.hourly_weights))
        if isinstance(self.day, str):
            object.__setattr__(self, "day", date.fromisoformat(self.day))
        if self.n_users < 1:
            raise ConfigError("n_users must be >= 1")
        if not 1 <= self.req_min <= self.req_max:
            raise ConfigError("need 1 <= req_min <= req_max")
        if self.min_gap_per_device < 0:
            raise ConfigError("min_gap_per_device must be >= 0")
        if self.scenario == "malicious":
            if self.n_devices is None or not 1 <= self.n_devices <= self.n_users:
                raise ConfigError("malicious workload needs 1 <= n_devices <= n_users")
        elif self.scenario == "benign":
            if self.n_devices is not None:
                raise ConfigError("benign workload takes no n_devices")
        else:
            raise ConfigError(f"unknown scenario {self.scenario!r}")

    @property
    def day_start(self) -> int:
        return day_start(self.day)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["day"] = self.day.isoformat()
        d["hourly_weights"] = list(self.hourly_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorkloadSpec":
        d = dict(d)
        if "hourly_weights" in d:
            d["hourly_weights"] = tuple(d["hourly_weights"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def user_rng(self, user_index: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(_POPULATION_STREAM[self.scenario], user_index))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class RequestEvent:
    user_id: str
    device_id: str
    send_time: int
    token: Token | None
    resubmit: bool
    request_index: int

    @property
    def sort_key(self) -> tuple:
        return (self.send_time, self.user_id, self.request_index)


@dataclass(frozen=True)
class Dataset:
    spec: WorkloadSpec
    events: tuple[RequestEvent, ...]

    @property
    def is_malicious(self) -> bool:
        return self.spec.scenario == "malicious"

    def per_user_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for e in self.events:
            counts[e.user_id] = counts.get(e.user_id, 0) + 1
        return counts


def sample_request_times(n: int, spec: WorkloadSpec, rng: np.random.Generator | None = None) -> list[int]:
    """Draw ``n`` sorted, pairwise distinct send times inside ``spec.day``.

    Candidates that land closer than ``min_gap_per_device`` to an already
    kept time are redrawn.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if rng is None:
        rng = spec.user_rng(0)
    gap = max(spec.min_gap_per_device, 1)
    weights = np.asarray(spec.hourly_weights)
    available = SECONDS_PER_HOUR * int(np.count_nonzero(weights))
    if n * gap > available:
        raise InfeasibleSpec(f"{n} requests with gap {gap}s do not fit in {available}s of active hours")

    start = spec.day_start
    kept: list[int] = []
    budget = 1000 * n
    while len(kept) < n:
        if budget <= 0:
            raise InfeasibleSpec("could not place requests with the requested gap")
        batch = n - len(kept)
        budget -= batch
        hours = rng.choice(24, size=batch, p=weights)
        seconds = rng.integers(0, SECONDS_PER_HOUR, size=batch)
        for h, s in zip(hours.tolist(), seconds.tolist()):
            t = start + h * SECONDS_PER_HOUR + s
            i = bisect.bisect_left(kept, t)
            if i > 0 and t - kept[i - 1] < gap:
                continue
            if i < len(kept) and kept[i] - t < gap:
                continue
            kept.insert(i, t)
            if len(kept) == n:
                break
    return kept


def _user_times(spec: WorkloadSpec, user_index: int) -> list[int]:
    rng = spec.user_rng(user_index)
    count = int(rng.integers(spec.req_min, spec.req_max + 1))
    return sample_request_times(count, spec, rng)


def gen_benign(spec: WorkloadSpec, key: KeyMaterial) -> Dataset:
    """One device per user; every request carries a token minted at send time."""
    if spec.scenario != "benign":
        raise ConfigError("gen_benign needs a benign WorkloadSpec")
    events = []
    for i in range(spec.n_users):
        user, device = benign_user_id(i), benign_device_id(i)
        for idx, t in enumerate(_user_times(spec, i), start=1):
            token = mint_token(TokenPayload(t, device), key)
            events.append(RequestEvent(user, device, t, token, False, idx))
    events.sort(key=lambda e: e.sort_key)
    return Dataset(spec, tuple(events))


def gen_malicious_demand(spec: WorkloadSpec) -> Dataset:
    """Malicious users' demand without tokens.

    User ``i`` is tied to pool device ``i mod n_devices``; the adversary
    supplies the actual tokens when the requests are replayed.
    """
    if spec.scenario != "malicious":
        raise ConfigError("gen_malicious_demand needs a malicious WorkloadSpec")
    events = []
    for i in range(spec.n_users):
        user, device = malicious_user_id(i), attack_device_id(i % spec.n_devices)
        for idx, t in enumerate(_user_times(spec, i), start=1):
            events.append(RequestEvent(user, device, t, None, False, idx))
    events.sort(key=lambda e: e.sort_key)
    return Dataset(spec, tuple(events))


def meta_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_dataset(d: Dataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DATASET_COLUMNS)
        for e in d.events:
            writer.writerow([
                e.user_id,
                e.device_id,
                e.send_time,
                e.request_index,
                e.token.ciphertext_b64url if e.token else "",
                "true" if e.resubmit else "false",
            ])
    meta_path(path).write_text(json.dumps(d.spec.to_dict(), sort_keys=True, indent=2) + "\n")


def read_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    try:
        spec = WorkloadSpec.from_dict(json.loads(meta_path(path).read_text()))
    except FileNotFoundError:
        raise SchemaError(f"missing metadata sidecar {meta_path(path)}") from None
    except (ValueError, ConfigError) as exc:
        raise SchemaError(f"bad metadata sidecar: {exc}") from None

    events = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(DATASET_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise SchemaError(f"dataset is missing columns: {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                resubmit = {"true": True, "false": False}[row["resubmit"]]
                events.append(RequestEvent(
                    user_id=row["user_id"],
                    device_id=row["device_id"],
                    send_time=int(row["send_time"]),
                    token=Token(row["token"]) if row["token"] else None,
                    resubmit=resubmit,
                    request_index=int(row["request_index"]),
                ))
            except (KeyError, ValueError, TypeError):
                raise SchemaError(f"{path}:{lineno}: malformed row") from None
    return Dataset(spec, tuple(events))

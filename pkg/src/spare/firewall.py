"""Server-side request validation.

Every request is judged by :func:`validate` against a fixed sequence of
checks; the first failing check names the rejection reason:

1. a token is present                       -> ``MissingToken``
2. the token decodes, decrypts and parses   -> ``TokenUndecodable`` / ``TokenUndecryptable`` / ``MalformedPayload``
3. the device is not cooling down           -> ``DeviceBlocked``
4. the token has not been seen before       -> ``DuplicateToken``
5. the token (or session) is fresh          -> ``StaleToken`` / ``FutureToken``
6. no burst of simultaneous requests        -> ``SimultaneousAbuse``
7. the device is under its daily threshold  -> ``ThresholdExceeded``

Checks 3, 4, 6 and 7 need a device identity and only run in
``timestamp_device`` mode.  In ``timestamp_only`` mode the server trusts any
fresh token, which is exactly what a token-harvesting attacker exploits.
"""
from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum

from spare.codec import KeyMaterial, Token, TokenPayload, open_token
from spare.exceptions import (
    ConfigError,
    CorruptSnapshot,
    MalformedPayload,
    TokenUndecodable,
    TokenUndecryptable,
)

SECONDS_PER_DAY = 86_400
SNAPSHOT_FORMAT = "spare-ledger"
SNAPSHOT_VERSION = 1


class Mode(str, Enum):
    TIMESTAMP_ONLY = "timestamp_only"
    TIMESTAMP_DEVICE = "timestamp_device"


class Decision(str, Enum):
    ACCEPT = "Accept"
    REJECT = "Reject"


class Reason(str, Enum):
    Ok = "Ok"
    MissingToken = "MissingToken"
    TokenUndecodable = "TokenUndecodable"
    TokenUndecryptable = "TokenUndecryptable"
    MalformedPayload = "MalformedPayload"
    StaleToken = "StaleToken"
    FutureToken = "FutureToken"
    DuplicateToken = "DuplicateToken"
    DeviceBlocked = "DeviceBlocked"
    SimultaneousAbuse = "SimultaneousAbuse"
    ThresholdExceeded = "ThresholdExceeded"


@dataclass(frozen=True)
class Verdict:
    decision: Decision
    reason: Reason

    @property
    def accepted(self) -> bool:
        return self.decision is Decision.ACCEPT


ACCEPT = Verdict(Decision.ACCEPT, Reason.Ok)
_REJECTS = {r: Verdict(Decision.REJECT, r) for r in Reason if r is not Reason.Ok}


def reject(reason: Reason) -> Verdict:
    return _REJECTS[reason]


@dataclass(frozen=True)
class Cooldown:
    """Either ``calendar_day_reset`` (blocked until next UTC midnight) or
    ``fixed_duration`` (blocked for ``seconds``, then the counter resets)."""

    kind: str = "calendar_day_reset"
    seconds: int | None = None

    def __post_init__(self):
        if self.kind not in ("calendar_day_reset", "fixed_duration"):
            raise ConfigError(f"unknown cooldown kind {self.kind!r}")
        if self.kind == "fixed_duration" and (self.seconds is None or self.seconds <= 0):
            raise ConfigError("fixed_duration cooldown needs seconds > 0")

    def blocked_until(self, now: int) -> int:
        if self.kind == "fixed_duration":
            return now + self.seconds
        return (now // SECONDS_PER_DAY + 1) * SECONDS_PER_DAY


@dataclass(frozen=True)
class FirewallConfig:
    key: KeyMaterial
    mode: Mode = Mode.TIMESTAMP_DEVICE
    time_window: int = 3600
    daily_threshold: int = 30
    simultaneity_enabled: bool = False
    simultaneity_window: int = 5
    simultaneity_count: int = 3
    cooldown: Cooldown = Cooldown()
    future_skew: int = 60

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.time_window <= 0:
            raise ConfigError("time_window must be > 0")
        if self.daily_threshold < 1:
            raise ConfigError("daily_threshold must be >= 1")
        if self.simultaneity_enabled and (
            self.simultaneity_window <= 0 or self.simultaneity_count < 2
        ):
            raise ConfigError("simultaneity needs window > 0 and count >= 2")
        if self.future_skew < 0:
            raise ConfigError("future_skew must be >= 0")

    @property
    def seen_retention(self) -> int:
        # a token older than this is stale anyway, so forgetting it is safe
        return self.time_window + self.future_skew


@dataclass
class DeviceState:
    day_bucket: int
    request_count_today: int = 0
    last_request_time: int | None = None
    seen_tokens: set[int] = field(default_factory=set)
    recent_arrival_times: deque = field(default_factory=deque)
    blocked_until: int | None = None

    def to_dict(self) -> dict:
        return {
            "day_bucket": self.day_bucket,
            "request_count_today": self.request_count_today,
            "last_request_time": self.last_request_time,
            "seen_tokens": sorted(self.seen_tokens),
            "recent_arrival_times": list(self.recent_arrival_times),
            "blocked_until": self.blocked_until,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceState":
        return cls(
            day_bucket=int(d["day_bucket"]),
            request_count_today=int(d["request_count_today"]),
            last_request_time=d["last_request_time"],
            seen_tokens=set(d["seen_tokens"]),
            recent_arrival_times=deque(d["recent_arrival_times"]),
            blocked_until=d["blocked_until"],
        )


@dataclass
class DeviceLedger:
    """Rolling per-device state, keyed by device id."""

    devices: dict[str, DeviceState] = field(default_factory=dict)

    def snapshot(self) -> bytes:
        doc = {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "devices": {dev: st.to_dict() for dev, st in self.devices.items()},
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def restore(cls, data: bytes) -> "DeviceLedger":
        try:
            doc = json.loads(data.decode("utf-8"))
            if doc.get("format") != SNAPSHOT_FORMAT:
                raise ValueError("not a ledger snapshot")
            if doc.get("version") != SNAPSHOT_VERSION:
                raise ValueError(f"unsupported snapshot version {doc.get('version')!r}")
            devices = {str(k): DeviceState.from_dict(v) for k, v in doc["devices"].items()}
        except (ValueError, KeyError, TypeError, AttributeError, UnicodeDecodeError) as exc:
            raise CorruptSnapshot(str(exc) or "empty snapshot") from None
        return cls(devices)

    def reset_device(self, device_id: str) -> None:
        self.devices.pop(device_id, None)


def snapshot(ledger: DeviceLedger) -> bytes:
    return ledger.snapshot()


def restore(data: bytes) -> DeviceLedger:
    return DeviceLedger.restore(data)


def reset_device(ledger: DeviceLedger, device_id: str) -> None:
    ledger.reset_device(device_id)


def utc_day(ts: int) -> int:
    return int(ts // SECONDS_PER_DAY)


def _roll(state: DeviceState, now: int, cfg: FirewallConfig) -> None:
    day = utc_day(now)
    if state.day_bucket != day:
        state.day_bucket = day
        state.request_count_today = 0
    if state.blocked_until is not None and state.blocked_until <= now:
        state.blocked_until = None
        if cfg.cooldown.kind == "fixed_duration":
            state.request_count_today = 0


def open_request(token: Token | None, cfg: FirewallConfig) -> TokenPayload | Verdict:
    """Checks 1-2.  Returns the payload, or the rejecting verdict."""
    if token is None:
        return reject(Reason.MissingToken)
    try:
        return open_token(token, cfg.key)
    except TokenUndecodable:
        return reject(Reason.TokenUndecodable)
    except TokenUndecryptable:
        return reject(Reason.TokenUndecryptable)
    except MalformedPayload:
        return reject(Reason.MalformedPayload)


def _freshness(ts: int, now: int, cfg: FirewallConfig) -> Verdict | None:
    age = now - ts
    if age < -cfg.future_skew:
        return reject(Reason.FutureToken)
    if age > cfg.time_window:
        return reject(Reason.StaleToken)
    return None


def judge(
    payload: TokenPayload,
    resubmit: bool,
    now: int,
    ledger: DeviceLedger,
    cfg: FirewallConfig,
) -> Verdict:
    """Checks 3-7 for an already opened token; mutates ``ledger``."""
    if cfg.mode is Mode.TIMESTAMP_ONLY:
        # no device identity to key state on: freshness is the whole policy
        return _freshness(payload.timestamp_utc, now, cfg) or ACCEPT

    state = ledger.devices.get(payload.device_id)
    if state is None:
        state = ledger.devices[payload.device_id] = DeviceState(day_bucket=utc_day(now))
    else:
        _roll(state, now, cfg)
    verdict = _judge_device(state, payload.timestamp_utc, resubmit, now, cfg)
    if cfg.simultaneity_enabled:
        # every attempt counts towards a burst, accepted or not
        state.recent_arrival_times.append(now)
    return verdict


def _judge_device(state: DeviceState, ts: int, resubmit: bool, now: int, cfg: FirewallConfig) -> Verdict:
    if state.blocked_until is not None and state.blocked_until > now:
        return reject(Reason.DeviceBlocked)

    if not resubmit and ts in state.seen_tokens:
        return reject(Reason.DuplicateToken)

    if resubmit:
        last = state.last_request_time
        if last is None or now - last > cfg.time_window:
            return reject(Reason.StaleToken)
    else:
        stale = _freshness(ts, now, cfg)
        if stale is not None:
            return stale

    if cfg.simultaneity_enabled:
        arrivals = state.recent_arrival_times
        horizon = now - cfg.simultaneity_window
        while arrivals and arrivals[0] < horizon:
            arrivals.popleft()
        if len(arrivals) + 1 >= cfg.simultaneity_count:
            state.blocked_until = cfg.cooldown.blocked_until(now)
            return reject(Reason.SimultaneousAbuse)

    if state.request_count_today >= cfg.daily_threshold:
        state.blocked_until = cfg.cooldown.blocked_until(now)
        return reject(Reason.ThresholdExceeded)

    state.request_count_today += 1
    state.seen_tokens.add(ts)
    state.last_request_time = now
    return ACCEPT


def validate(
    token: Token | None,
    resubmit: bool,
    arrival_time: int,
    ledger: DeviceLedger,
    cfg: FirewallConfig,
) -> Verdict:
    opened = open_request(token, cfg)
    if isinstance(opened, Verdict):
        return opened
    return judge(opened, resubmit, arrival_time, ledger, cfg)


def advance_time(ledger: DeviceLedger, now: int, cfg: FirewallConfig) -> None:
    """Roll day buckets, lift expired blocks and forget tokens too old to matter."""
    # keep today's tokens (at most R per device) plus anything still fresh
    cutoff = min(now - cfg.seen_retention, utc_day(now) * SECONDS_PER_DAY)
    horizon = now - cfg.simultaneity_window
    for state in ledger.devices.values():
        _roll(state, now, cfg)
        if state.seen_tokens and min(state.seen_tokens) < cutoff:
            state.seen_tokens = {t for t in state.seen_tokens if t >= cutoff}
        arrivals = state.recent_arrival_times
        while arrivals and arrivals[0] < horizon:
            arrivals.popleft()


def _iso(ts: int | None) -> str | None:
    if ts is None:
        return None
    return datetime.fromtimestamp(ts, tz=timezone.utc).isoformat().replace("+00:00", "Z")


class Firewall:
    """Thread-safe wrapper around a :class:`DeviceLedger`.

    Validation of one device is serialized by a per-device lock; requests for
    different devices only contend on the (cheap) lock registry.  Token
    decryption happens outside any lock.
    """

    def __init__(self, cfg: FirewallConfig, ledger: DeviceLedger | None = None):
        self.cfg = cfg
        self.ledger = ledger if ledger is not None else DeviceLedger()
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}

    def _lock(self, device_id: str) -> threading.Lock:
        with self._guard:
            lock = self._locks.get(device_id)
            if lock is None:
                lock = self._locks[device_id] = threading.Lock()
            return lock

    def validate(self, token: Token | None, resubmit: bool, arrival_time: int) -> Verdict:
        opened = open_request(token, self.cfg)
        if isinstance(opened, Verdict):
            return opened
        with self._lock(opened.device_id):
            return judge(opened, resubmit, arrival_time, self.ledger, self.cfg)

    def advance_time(self, now: int) -> None:
        for device_id in self._device_ids():
            with self._lock(device_id):
                state = self.ledger.devices.get(device_id)
                if state is not None:
                    advance_time(DeviceLedger({device_id: state}), now, self.cfg)

    def reset_device(self, device_id: str) -> None:
        with self._lock(device_id):
            self.ledger.reset_device(device_id)

    def snapshot(self) -> bytes:
        devices = {}
        for device_id in self._device_ids():
            with self._lock(device_id):
                state = self.ledger.devices.get(device_id)
                if state is not None:
                    devices[device_id] = DeviceState.from_dict(state.to_dict())
        return DeviceLedger(devices).snapshot()

    def stats(self) -> dict[str, dict]:
        out = {}
        for device_id in sorted(self._device_ids()):
            with self._lock(device_id):
                state = self.ledger.devices.get(device_id)
                if state is None:
                    continue
                out[device_id] = {
                    "count_today": state.request_count_today,
                    "blocked_until": _iso(state.blocked_until),
                    "last_request_time": _iso(state.last_request_time),
                }
        return out

    def _device_ids(self) -> list[str]:
        with self._guard:
            return list(self.ledger.devices)

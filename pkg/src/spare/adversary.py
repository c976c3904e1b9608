"""Token-harvesting attacker.

Harvester devices run the legitimate app and push a freshly minted token to
a central store every ``harvest_interval`` seconds.  The clone app then asks
the store for a token whenever one of its users opens it.  How the store
answers is the attacker's distribution strategy:

``static_url``
    no token at all (a copied bare URL)
``single_token``
    one pre-harvested token, hard-coded for everyone
``random_pool``
    a uniformly random stored entry, with replacement
``round_robin``
    cycle over harvester devices, freshest unused entry of each
"""
from __future__ import annotations

import csv
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from spare.codec import KeyMaterial, Token, TokenPayload, mint_token
from spare.exceptions import ConfigError, StoreEmpty
from spare.workload import attack_device_id

STRATEGIES = ("static_url", "single_token", "random_pool", "round_robin")


@dataclass(frozen=True)
class AdversarySpec:
    key: KeyMaterial
    n_harvesters: int = 5
    harvest_interval: int = 60
    strategy: str = "round_robin"
    delete_after_use: bool = True
    # entries older than this are dropped from the store; None keeps everything
    retention: int | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.n_harvesters < 1:
            raise ConfigError("n_harvesters must be >= 1")
        if self.harvest_interval <= 0:
            raise ConfigError("harvest_interval must be > 0")
        if self.retention is not None and self.retention <= 0:
            raise ConfigError("retention must be > 0")

    @property
    def sources(self) -> list[str]:
        return [attack_device_id(h) for h in range(self.n_harvesters)]

    def check_against(self, time_window: int) -> None:
        if self.harvest_interval >= time_window:
            raise ConfigError(
                f"harvest_interval {self.harvest_interval}s must be shorter than "
                f"the firewall time window {time_window}s"
            )


@dataclass(slots=True, eq=False)
class StoreEntry:
    minted_at: int
    source_device: str
    key: KeyMaterial = field(repr=False)
    used: bool = False
    removed: bool = False
    _token: Token | None = field(default=None, repr=False)

    @property
    def token(self) -> Token:
        # minted on first use; minting is deterministic so this is invisible
        if self._token is None:
            self._token = mint_token(TokenPayload(self.minted_at, self.source_device), self.key)
        return self._token


class TokenStore:
    """The attacker's central URL database."""

    def __init__(self, spec: AdversarySpec, seed: int = 0):
        self.spec = spec
        self.cursor = 0
        self._sources = spec.sources
        self._entries: list[StoreEntry] = []
        self._unused: dict[str, deque[StoreEntry]] = {s: deque() for s in self._sources}
        self._removed = 0
        self._harvested = Counter()
        self._served = Counter()
        self._hourly = [0] * 24
        self._rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(2,))))

    @property
    def entries(self) -> list[StoreEntry]:
        return [e for e in self._entries if not e.removed]

    def __len__(self) -> int:
        return len(self._entries) - self._removed

    def harvest_tick(self, now: int) -> None:
        key = self.spec.key
        hour = (now // 3600) % 24
        for source in self._sources:
            entry = StoreEntry(now, source, key)
            self._entries.append(entry)
            self._unused[source].append(entry)
            self._harvested[source] += 1
            self._hourly[hour] += 1
        if self.spec.retention is not None:
            self._expire(now - self.spec.retention)

    def _expire(self, cutoff: int) -> None:
        n = 0
        for e in self._entries:
            if e.minted_at >= cutoff:
                break
            n += 1
        if n:
            dropped = self._entries[:n]
            del self._entries[:n]
            self._removed -= sum(e.removed for e in dropped)
            for q in self._unused.values():
                while q and q[0].minted_at < cutoff:
                    q.popleft()

    def _remove(self, entry: StoreEntry) -> None:
        entry.removed = True
        self._removed += 1
        if self._removed > 64 and self._removed * 2 > len(self._entries):
            self._entries = [e for e in self._entries if not e.removed]
            self._removed = 0

    def _hand_out(self, entry: StoreEntry, delete: bool) -> Token:
        entry.used = True
        self._served[entry.source_device] += 1
        if delete:
            self._remove(entry)
        return entry.token

    def serve(self, now: int | None = None) -> Token | None:
        strategy = self.spec.strategy
        if strategy == "static_url":
            return None
        if len(self) == 0:
            raise StoreEmpty(f"no entries to serve ({strategy})")

        if strategy == "single_token":
            entry = next(e for e in self._entries if not e.removed)
            return self._hand_out(entry, delete=False)

        if strategy == "round_robin":
            n = len(self._sources)
            for step in range(n):
                i = (self.cursor + step) % n
                q = self._unused[self._sources[i]]
                if q:
                    self.cursor = (i + 1) % n
                    return self._hand_out(q.pop(), self.spec.delete_after_use)
            raise StoreEmpty("every stored entry has already been used")

        # random_pool
        if not self.spec.delete_after_use:
            live = self._entries if not self._removed else self.entries
            return self._hand_out(live[int(self._rng.integers(len(live)))], delete=False)
        unused = [e for e in self._entries if not e.used and not e.removed]
        if not unused:
            raise StoreEmpty("every stored entry has already been used")
        entry = unused[int(self._rng.integers(len(unused)))]
        self._unused[entry.source_device].remove(entry)
        return self._hand_out(entry, delete=True)

    def stats(self, now: int | None = None) -> dict:
        live = self.entries
        if now is None:
            now = max((e.minted_at for e in live), default=0)
        width = self.spec.harvest_interval
        ages = Counter((now - e.minted_at) // width for e in live)
        return {
            "per_source": {
                s: {
                    "harvested": self._harvested[s],
                    "served": self._served[s],
                    "stored": sum(1 for e in live if e.source_device == s),
                }
                for s in self._sources
            },
            "age_histogram": {int(k): ages[k] for k in sorted(ages)},
            "hourly_harvest": list(self._hourly),
            "total_stored": len(live),
        }

    def dump_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["token", "minted_at", "source_device", "used"])
            for e in self.entries:
                w.writerow([e.token.ciphertext_b64url, e.minted_at, e.source_device, "true" if e.used else "false"])


def harvest_tick(store: TokenStore, now: int, spec: AdversarySpec | None = None) -> None:
    store.harvest_tick(now)


def serve_token(store: TokenStore, spec: AdversarySpec | None = None, now: int | None = None) -> Token | None:
    return store.serve(now)


def store_stats(store: TokenStore, now: int | None = None) -> dict:
    return store.stats(now)

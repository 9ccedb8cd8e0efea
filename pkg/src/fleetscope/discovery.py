"""Enumeration crawl: resolve generated candidates and keep the hits.

The crawl walks the candidate stream, resolves each name through a
pluggable resolver, and records one ``ServerRecord`` per name that
resolves. Output is invariant under candidate order; a progress cursor
makes long crawls resumable.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol

from .names import (
    OPERATOR_ISP,
    OPERATOR_IXP,
    ServerName,
    Wordlists,
    enumerate_candidates,
    format_server_name,
    parse_server_name,
)

logger = logging.getLogger(__name__)

OUTCOME_RESOLVED = "resolved"
OUTCOME_NXDOMAIN = "nxdomain"
OUTCOME_TIMEOUT = "timeout"
OUTCOME_SERVFAIL = "servfail"


class ResolverUnavailable(Exception):
    """All resolver endpoints failed; distinct from an authoritative nxdomain."""


class Interrupted(Exception):
    """Crawl interrupted; progress was persisted."""


@dataclass(slots=True)
class ResolutionResult:
    """Outcome of one resolution attempt."""

    name: str
    outcome: str
    addresses: tuple[str, ...] = ()
    resolved_at_ns: int = 0

    def __post_init__(self) -> None:
        if self.outcome == OUTCOME_RESOLVED and not self.addresses:
            raise ValueError("resolved outcome requires at least one address")


class Resolver(Protocol):
    """One resolution attempt; retry policy lives in the crawl, not here.

    Implementations must be safe for concurrent calls.
    """

    def query(self, name: str) -> ResolutionResult: ...


class SystemResolver:
    """Resolve through the host's configured DNS via getaddrinfo."""

    def __init__(self, timeout_s: float = 5.0):
        self.timeout_s = timeout_s

    def query(self, name: str) -> ResolutionResult:
        now = time.time_ns()
        try:
            infos = socket.getaddrinfo(name, None)
        except socket.gaierror as exc:
            if exc.errno in (socket.EAI_NONAME, getattr(socket, "EAI_NODATA", -5)):
                return ResolutionResult(name, OUTCOME_NXDOMAIN, (), now)
            if exc.errno == socket.EAI_AGAIN:
                return ResolutionResult(name, OUTCOME_TIMEOUT, (), now)
            return ResolutionResult(name, OUTCOME_SERVFAIL, (), now)
        except OSError as exc:
            raise ResolverUnavailable(str(exc)) from exc
        addresses = tuple(dict.fromkeys(info[4][0] for info in infos))
        if not addresses:
            return ResolutionResult(name, OUTCOME_NXDOMAIN, (), now)
        return ResolutionResult(name, OUTCOME_RESOLVED, addresses, now)


@dataclass(frozen=True)
class CrawlPolicy:
    """Crawl pacing and retry behaviour.

    Only timeouts are retried; nxdomain is authoritative absence. The
    default rate is conservative; resolvers that are ours (the simulator)
    can run unlimited with ``max_queries_per_second=None``.
    """

    max_queries_per_second: float | None = 500.0
    retries: int = 2
    retry_backoff_s: float = 0.5
    resolver_endpoints: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.max_queries_per_second is not None and self.max_queries_per_second <= 0:
            raise ValueError("max_queries_per_second must be > 0")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


@dataclass(slots=True)
class ServerRecord:
    """A discovered server: parsed name, addresses, and discovery times."""

    name: ServerName
    addresses: tuple[str, ...]
    first_seen_ns: int
    last_seen_ns: int

    def __post_init__(self) -> None:
        if not self.addresses:
            raise ValueError("a record needs at least one address")

    @property
    def hostname(self) -> str:
        return format_server_name(self.name)

    @property
    def operator_kind(self) -> str:
        return self.name.operator_kind

    @property
    def isp_label(self) -> str | None:
        return self.name.isp_label

    @property
    def claimed_location(self) -> str:
        return self.name.airport_code

    @property
    def site_code(self) -> str:
        return self.name.site_code

    def to_json(self) -> dict:
        return {
            "v": 1,
            "name": self.hostname,
            "suffix": self.name.domain_suffix,
            "addresses": list(self.addresses),
            "first_seen_ns": self.first_seen_ns,
            "last_seen_ns": self.last_seen_ns,
            "operator_kind": self.operator_kind,
            "isp": self.isp_label,
            "airport": self.name.airport_code,
            "site": self.site_code,
        }

    @classmethod
    def from_json(cls, obj: dict, domain_suffix: str | None = None) -> "ServerRecord":
        suffix = domain_suffix or obj.get("suffix", "nflxvideo.net")
        return cls(
            name=parse_server_name(obj["name"], domain_suffix=suffix),
            addresses=tuple(obj["addresses"]),
            first_seen_ns=obj["first_seen_ns"],
            last_seen_ns=obj["last_seen_ns"],
        )


class RateLimiter:
    """Token bucket; capacity is a tenth of a second's worth of tokens."""

    def __init__(self, rate_per_s: float):
        self.rate = rate_per_s
        self.capacity = max(1.0, rate_per_s / 10.0)
        self._tokens = self.capacity
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(wait)


def resolve_candidate(name: str, resolver: Resolver, policy: CrawlPolicy) -> ResolutionResult:
    """Resolve one candidate, retrying timeouts and unavailable resolvers.

    Exactly one outcome is recorded per candidate. ``ResolverUnavailable``
    propagates once retries are exhausted.
    """
    attempts = 1 + policy.retries
    last: ResolutionResult | None = None
    for attempt in range(attempts):
        try:
            result = resolver.query(name)
        except ResolverUnavailable:
            if attempt == attempts - 1:
                raise
            time.sleep(policy.retry_backoff_s)
            continue
        if result.outcome != OUTCOME_TIMEOUT:
            return result
        last = result
        if attempt < attempts - 1 and policy.retry_backoff_s > 0:
            time.sleep(policy.retry_backoff_s)
    assert last is not None
    return last


def _load_cursor(path: Path) -> tuple[int, list[dict]]:
    if not path.exists():
        return 0, []
    state = json.loads(path.read_text())
    return state["cursor"], state["records"]


def _save_cursor(path: Path, cursor: int, records: Iterable[ServerRecord]) -> None:
    state = {"cursor": cursor, "records": [r.to_json() for r in records]}
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(state))
    tmp.replace(path)


def run_crawl(
    lists: Wordlists,
    resolver: Resolver,
    policy: CrawlPolicy,
    domain_suffix: str = "nflxvideo.net",
    worker_count: int = 1,
    progress_path: str | Path | None = None,
    persist_every: int = 10000,
) -> list[ServerRecord]:
    """Attempt every candidate once (plus timeout retries) and collect hits.

    Returns one record per resolved name, sorted by hostname. When
    ``progress_path`` is set, a cursor plus found records persist every
    ``persist_every`` candidates; re-running resumes past the cursor.
    Interruption persists progress and raises ``Interrupted``.
    """
    limiter = (
        RateLimiter(policy.max_queries_per_second)
        if policy.max_queries_per_second is not None
        else None
    )
    progress = Path(progress_path) if progress_path is not None else None
    start_at = 0
    found: dict[str, ServerRecord] = {}
    if progress is not None:
        start_at, persisted = _load_cursor(progress)
        for obj in persisted:
            record = ServerRecord.from_json(obj, domain_suffix=domain_suffix)
            found[record.hostname] = record

    def record_hit(result: ResolutionResult) -> None:
        name = parse_server_name(result.name, domain_suffix=domain_suffix)
        existing = found.get(result.name)
        if existing is None:
            found[result.name] = ServerRecord(
                name=name,
                addresses=result.addresses,
                first_seen_ns=result.resolved_at_ns,
                last_seen_ns=result.resolved_at_ns,
            )
        else:
            existing.last_seen_ns = max(existing.last_seen_ns, result.resolved_at_ns)

    def resolve_one(name: str) -> ResolutionResult:
        if limiter is not None:
            limiter.acquire()
        return resolve_candidate(name, resolver, policy)

    cursor = 0
    candidates = enumerate_candidates(lists, domain_suffix=domain_suffix)
    try:
        if worker_count <= 1:
            for cursor, candidate in enumerate(candidates, start=1):
                if cursor <= start_at:
                    continue
                result = resolve_one(candidate)
                if result.outcome == OUTCOME_RESOLVED:
                    record_hit(result)
                if progress is not None and cursor % persist_every == 0:
                    _save_cursor(progress, cursor, found.values())
        else:
            with ThreadPoolExecutor(max_workers=worker_count) as pool:
                batch: list[str] = []
                last_persist = start_at

                def flush() -> None:
                    for result in pool.map(resolve_one, batch):
                        if result.outcome == OUTCOME_RESOLVED:
                            record_hit(result)
                    batch.clear()

                for cursor, candidate in enumerate(candidates, start=1):
                    if cursor <= start_at:
                        continue
                    batch.append(candidate)
                    if len(batch) >= max(worker_count * 8, 64):
                        flush()
                        if progress is not None and cursor - last_persist >= persist_every:
                            _save_cursor(progress, cursor, found.values())
                            last_persist = cursor
                flush()
    except KeyboardInterrupt:
        if progress is not None:
            _save_cursor(progress, max(cursor - 1, start_at), found.values())
        raise Interrupted(f"crawl interrupted at candidate {cursor}") from None

    if progress is not None:
        _save_cursor(progress, cursor, found.values())
    return sorted(found.values(), key=lambda r: r.hostname)


@dataclass(frozen=True)
class KindCounts:
    servers: int
    locations: int
    countries: int


@dataclass(frozen=True)
class DiscoverySummary:
    """Per-operator-kind discovery counts. Totals are set-union sizes, so a
    location or country hosting both kinds is counted once."""

    isp: KindCounts
    ixp: KindCounts
    total: KindCounts
    isps_found: int
    unknown_airports: tuple[str, ...] = ()


def summarize_discovery(
    records: Iterable[ServerRecord], airport_countries: Mapping[str, str]
) -> DiscoverySummary:
    """Count servers, locations (distinct site codes), countries and ISPs.

    Countries come from ``airport_countries`` metadata; codes missing from
    it are reported in ``unknown_airports`` and excluded from country
    counts.
    """
    kinds = {OPERATOR_ISP: {"servers": 0, "locations": set(), "countries": set()},
             OPERATOR_IXP: {"servers": 0, "locations": set(), "countries": set()}}
    isps: set[str] = set()
    unknown: set[str] = set()
    for record in records:
        bucket = kinds[record.operator_kind]
        bucket["servers"] += 1
        bucket["locations"].add(record.site_code)
        country = airport_countries.get(record.name.airport_code)
        if country is None:
            unknown.add(record.name.airport_code)
        else:
            bucket["countries"].add(country)
        if record.isp_label is not None:
            isps.add(record.isp_label)

    def counts(kind: str) -> KindCounts:
        bucket = kinds[kind]
        return KindCounts(bucket["servers"], len(bucket["locations"]), len(bucket["countries"]))

    total = KindCounts(
        kinds[OPERATOR_ISP]["servers"] + kinds[OPERATOR_IXP]["servers"],
        len(kinds[OPERATOR_ISP]["locations"] | kinds[OPERATOR_IXP]["locations"]),
        len(kinds[OPERATOR_ISP]["countries"] | kinds[OPERATOR_IXP]["countries"]),
    )
    return DiscoverySummary(
        isp=counts(OPERATOR_ISP),
        ixp=counts(OPERATOR_IXP),
        total=total,
        isps_found=len(isps),
        unknown_airports=tuple(sorted(unknown)),
    )

"""Virtual target fleet: DNS zone, echo responders, and traffic profiles.

Time is virtual throughout, so a ten-day campaign replays in seconds. Every
responder integrates its traffic profile into a cumulative packet counter;
in global-counter mode the exposed IP ID is that counter mod 65536, with
the echo reply itself incrementing it by one, which is exactly what a rate
estimator has to cope with. The fleet also logs exact per-visit mean rates
so estimates can be judged against ground truth.

All randomness (profile noise, random IDs, injected timeouts, probe loss)
comes from streams seeded by the fleet seed and the server address: one
seed, one behaviour.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .discovery import (
    OUTCOME_NXDOMAIN,
    OUTCOME_RESOLVED,
    OUTCOME_TIMEOUT,
    ResolutionResult,
)
from .ipid import IdBehavior
from .names import parse_server_name

DAY_S = 86400.0


class TimeRegression(ValueError):
    """A responder was asked to advance backwards in time."""


class VirtualClock:
    """Monotonic virtual time in nanoseconds.

    ``jump_to`` may move backwards; the campaign runner uses it to replay
    overlapping per-worker visits sequentially. Individual responders keep
    their own clocks and stay monotonic per server.
    """

    __slots__ = ("now_ns",)

    def __init__(self, start_ns: int = 0):
        self.now_ns = start_ns

    def advance_to(self, t_ns: int) -> None:
        if t_ns > self.now_ns:
            self.now_ns = t_ns

    def jump_to(self, t_ns: int) -> None:
        self.now_ns = t_ns


def parse_hhmm(text: str) -> float:
    """'23:30' -> seconds since local midnight."""
    hours, _, minutes = text.partition(":")
    return int(hours) * 3600.0 + int(minutes or 0) * 60.0


def format_hhmm(seconds: float) -> str:
    total = int(round(seconds)) % int(DAY_S)
    return f"{total // 3600:02d}:{(total % 3600) // 60:02d}"


@dataclass(frozen=True)
class TrafficProfile:
    """Instantaneous send rate of a simulated server.

    The deterministic part is a daily sinusoid peaking at ``peak_local_s``
    plus an optional content-fill burst: a raised cosine inside the fill
    window, zero at the edges and ``fill_extra_pps`` high at the window
    midpoint. Noise multiplies each integration step by a Gaussian factor,
    clipped so the rate never goes negative.
    """

    base_pps: float
    diurnal_amplitude: float = 0.0
    peak_local_s: float = 84600.0  # 23:30
    tz_offset_s: float = 0.0
    noise_rel: float = 0.0
    fill_extra_pps: float = 0.0
    fill_start_s: float = 7200.0  # 02:00
    fill_end_s: float = 50400.0  # 14:00

    def __post_init__(self) -> None:
        if self.base_pps < 0:
            raise ValueError("base_pps must be >= 0")
        if not 0.0 <= self.diurnal_amplitude <= 1.0:
            raise ValueError("diurnal_amplitude must be within [0, 1]")
        if self.fill_extra_pps < 0:
            raise ValueError("fill_extra_pps must be >= 0")
        if not 0.0 <= self.fill_start_s < self.fill_end_s <= DAY_S:
            raise ValueError("fill window must satisfy 0 <= start < end <= 24h")
        if self.noise_rel < 0:
            raise ValueError("noise_rel must be >= 0")

    def rate_at(self, t_s: float) -> float:
        """Deterministic instantaneous rate at UTC time ``t_s``."""
        local = t_s + self.tz_offset_s
        phase = 2 * math.pi * (local - self.peak_local_s) / DAY_S
        rate = self.base_pps * (1.0 + self.diurnal_amplitude * math.cos(phase))
        pos = local % DAY_S
        if self.fill_extra_pps and self.fill_start_s <= pos < self.fill_end_s:
            width = self.fill_end_s - self.fill_start_s
            rate += self.fill_extra_pps * 0.5 * (
                1.0 - math.cos(2 * math.pi * (pos - self.fill_start_s) / width)
            )
        return rate

    def _cumulative(self, t_s: float) -> float:
        """Antiderivative of the deterministic rate at UTC time ``t_s``."""
        local = t_s + self.tz_offset_s
        phase = 2 * math.pi * (local - self.peak_local_s) / DAY_S
        total = self.base_pps * (
            t_s + self.diurnal_amplitude * (DAY_S / (2 * math.pi)) * math.sin(phase)
        )
        if self.fill_extra_pps:
            width = self.fill_end_s - self.fill_start_s
            days = math.floor(local / DAY_S)
            pos = local - days * DAY_S
            x = min(max(pos - self.fill_start_s, 0.0), width)
            partial = 0.5 * (x - (width / (2 * math.pi)) * math.sin(2 * math.pi * x / width))
            total += self.fill_extra_pps * (days * 0.5 * width + partial)
        return total

    def packets_between(self, t0_s: float, t1_s: float) -> float:
        """Exact deterministic packet count sent over [t0, t1]."""
        return self._cumulative(t1_s) - self._cumulative(t0_s)

    def mean_rate(self, t0_s: float, t1_s: float) -> float:
        if t1_s <= t0_s:
            return self.rate_at(t0_s)
        return self.packets_between(t0_s, t1_s) / (t1_s - t0_s)


@dataclass
class SimulatedServer:
    """One responder: a name, an address, a profile and an ID counter."""

    name: str
    address: str
    profile: TrafficProfile
    id_behavior: IdBehavior = IdBehavior.GLOBAL_COUNTER
    reachable: bool = True
    rtt_ns: int = 5_000_000
    constant_id: int = 7
    background_packets: float = field(default=0.0, init=False)
    reply_packets: int = field(default=0, init=False)
    time_ns: int = field(default=0, init=False)
    _noise_rng: random.Random | None = field(default=None, init=False, repr=False)
    _id_rng: random.Random | None = field(default=None, init=False, repr=False)

    def bind_rngs(self, seed: int) -> None:
        self._noise_rng = random.Random(f"{seed}:{self.address}:noise")
        self._id_rng = random.Random(f"{seed}:{self.address}:ids")

    @property
    def cumulative_packets(self) -> int:
        """Total packets sent: background traffic plus our echo replies."""
        return int(self.background_packets) + self.reply_packets

    def advance(self, to_ns: int) -> None:
        """Integrate the profile up to ``to_ns``.

        Noise applies multiplicatively per advance step, so the realized
        counter depends on the step sequence; a fixed seed and campaign
        replays identically.
        """
        if to_ns < self.time_ns:
            raise TimeRegression(f"{self.address}: {to_ns} < {self.time_ns}")
        if to_ns == self.time_ns:
            return
        packets = self.profile.packets_between(self.time_ns / 1e9, to_ns / 1e9)
        if self._noise_rng is not None and self.profile.noise_rel > 0 and packets > 0:
            packets = max(0.0, packets * (1.0 + self.profile.noise_rel * self._noise_rng.gauss(0.0, 1.0)))
        self.background_packets += packets
        self.time_ns = to_ns

    def serve_echo(self, at_ns: int) -> int | None:
        """Answer one echo arriving at ``at_ns``: returns the reply's IP ID.

        The current ID is returned first, then the counter moves by one for
        the reply packet itself. Unreachable servers never reply.
        """
        if not self.reachable:
            return None
        self.advance(max(at_ns, self.time_ns))
        if self.id_behavior is IdBehavior.GLOBAL_COUNTER:
            ipid = self.cumulative_packets & 0xFFFF
        elif self.id_behavior is IdBehavior.RANDOM:
            ipid = self._id_rng.randrange(0, 1 << 16) if self._id_rng else 0
        else:
            ipid = self.constant_id
        self.reply_packets += 1
        return ipid


@dataclass(frozen=True, slots=True)
class TruthRecord:
    """Exact mean background rate of one target over one visit window."""

    target: str
    start_ns: int
    end_ns: int
    true_pps: float


class SimulatedFleet:
    """All simulated servers plus the DNS zone that names them."""

    def __init__(self, servers: Iterable[SimulatedServer], seed: int = 0,
                 domain_suffix: str = "nflxvideo.net"):
        self.seed = seed
        self.domain_suffix = domain_suffix
        self.servers = list(servers)
        self.by_address: dict[str, SimulatedServer] = {}
        self.by_name: dict[str, SimulatedServer] = {}
        for server in self.servers:
            parse_server_name(server.name, domain_suffix=domain_suffix)
            if server.address in self.by_address:
                raise ValueError(f"duplicate address {server.address}")
            if server.name in self.by_name:
                raise ValueError(f"duplicate name {server.name}")
            server.bind_rngs(seed)
            self.by_address[server.address] = server
            self.by_name[server.name] = server
        self.truth: list[TruthRecord] = []
        self._open_visits: dict[str, tuple[int, float]] = {}

    def zone(self) -> dict[str, tuple[str, ...]]:
        return {server.name: (server.address,) for server in self.servers}

    def addresses(self) -> list[str]:
        return [server.address for server in self.servers]

    def mark_visit_start(self, address: str, t_ns: int) -> None:
        server = self.by_address.get(address)
        if server is None or not server.reachable:
            return
        server.advance(max(t_ns, server.time_ns))
        self._open_visits[address] = (t_ns, server.background_packets)

    def mark_visit_end(self, address: str, t_ns: int) -> None:
        opened = self._open_visits.pop(address, None)
        if opened is None:
            return
        start_ns, start_packets = opened
        if t_ns <= start_ns:
            return
        server = self.by_address[address]
        server.advance(max(t_ns, server.time_ns))
        pps = (server.background_packets - start_packets) / ((t_ns - start_ns) / 1e9)
        self.truth.append(TruthRecord(address, start_ns, t_ns, pps))

    def truth_for(self, address: str) -> list[TruthRecord]:
        return [t for t in self.truth if t.target == address]

    def export_truth_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["server", "window_start_ns", "window_end_ns", "true_pps"])
            for row in self.truth:
                writer.writerow([row.target, row.start_ns, row.end_ns, repr(row.true_pps)])

    @classmethod
    def from_config(cls, config: Mapping) -> "SimulatedFleet":
        seed = config.get("seed", 0)
        suffix = config.get("domain_suffix", "nflxvideo.net")
        servers = []
        for entry in config["servers"]:
            profile_cfg = entry.get("profile", {})
            fill = profile_cfg.get("fill") or {}
            profile = TrafficProfile(
                base_pps=float(profile_cfg.get("base_pps", 0.0)),
                diurnal_amplitude=float(profile_cfg.get("diurnal_amplitude", 0.0)),
                peak_local_s=parse_hhmm(profile_cfg.get("peak_local", "23:30")),
                tz_offset_s=float(profile_cfg.get("tz_offset_hours", 0.0)) * 3600.0,
                noise_rel=float(profile_cfg.get("noise_rel", 0.0)),
                fill_extra_pps=float(fill.get("extra_pps", 0.0)),
                fill_start_s=parse_hhmm(fill.get("start", "02:00")),
                fill_end_s=parse_hhmm(fill.get("end", "14:00")),
            )
            servers.append(
                SimulatedServer(
                    name=entry["name"],
                    address=entry["address"],
                    profile=profile,
                    id_behavior=IdBehavior(entry.get("id_behavior", "global_counter")),
                    reachable=bool(entry.get("reachable", True)),
                    rtt_ns=round(float(entry.get("rtt_ms", 5.0)) * 1e6),
                    constant_id=int(entry.get("constant_id", 7)),
                )
            )
        return cls(servers, seed=seed, domain_suffix=suffix)

    @classmethod
    def from_file(cls, path: str | Path) -> "SimulatedFleet":
        return cls.from_config(json.loads(Path(path).read_text()))

    def to_config(self) -> dict:
        servers = []
        for s in self.servers:
            p = s.profile
            entry = {
                "name": s.name,
                "address": s.address,
                "reachable": s.reachable,
                "rtt_ms": s.rtt_ns / 1e6,
                "id_behavior": s.id_behavior.value,
                "constant_id": s.constant_id,
                "profile": {
                    "base_pps": p.base_pps,
                    "diurnal_amplitude": p.diurnal_amplitude,
                    "peak_local": format_hhmm(p.peak_local_s),
                    "tz_offset_hours": p.tz_offset_s / 3600.0,
                    "noise_rel": p.noise_rel,
                    "fill": (
                        {
                            "start": format_hhmm(p.fill_start_s),
                            "end": format_hhmm(p.fill_end_s),
                            "extra_pps": p.fill_extra_pps,
                        }
                        if p.fill_extra_pps
                        else None
                    ),
                },
            }
            servers.append(entry)
        return {"seed": self.seed, "domain_suffix": self.domain_suffix, "servers": servers}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_config(), indent=2) + "\n")


class ZoneResolver:
    """Resolver backed by a static name-to-address map.

    Fleet members resolve to their addresses; everything else is nxdomain.
    ``timeout_rate`` injects that fraction of timeouts, deterministically
    per seed, for exercising retry paths.
    """

    def __init__(self, zone: Mapping[str, tuple[str, ...]], clock: VirtualClock | None = None,
                 timeout_rate: float = 0.0, seed: int = 0):
        self._zone = dict(zone)
        self._clock = clock
        self._timeout_rate = timeout_rate
        self._rng = random.Random(f"{seed}:zone")
        self.queries = 0
        self.timeouts = 0

    def query(self, name: str) -> ResolutionResult:
        self.queries += 1
        now = self._clock.now_ns if self._clock is not None else 0
        if self._timeout_rate and self._rng.random() < self._timeout_rate:
            self.timeouts += 1
            return ResolutionResult(name, OUTCOME_TIMEOUT, (), now)
        addresses = self._zone.get(name)
        if addresses is None:
            return ResolutionResult(name, OUTCOME_NXDOMAIN, (), now)
        return ResolutionResult(name, OUTCOME_RESOLVED, tuple(addresses), now)


class SimulatedTransport:
    """Echo transport over a virtual fleet; sleeping costs nothing.

    Losses model requests dropped in flight: the responder never sees them
    and its counter does not move. Replies arrive one RTT after the send;
    the responder is served at the halfway point.
    """

    is_virtual = True

    def __init__(self, fleet: SimulatedFleet, clock: VirtualClock | None = None,
                 loss_rate: float = 0.0, seed: int | None = None):
        self.fleet = fleet
        self.clock = clock if clock is not None else VirtualClock()
        self.loss_rate = loss_rate
        self._seed = fleet.seed if seed is None else seed
        self._loss_rngs: dict[str, random.Random] = {}
        self._pending: dict[str, dict[int, tuple[int, int]]] = {}

    def _loss_rng(self, target: str) -> random.Random:
        rng = self._loss_rngs.get(target)
        if rng is None:
            rng = random.Random(f"{self._seed}:loss:{target}")
            self._loss_rngs[target] = rng
        return rng

    def now_ns(self) -> int:
        return self.clock.now_ns

    def sleep_until_ns(self, t_ns: int) -> None:
        self.clock.advance_to(t_ns)

    def jump_to_ns(self, t_ns: int) -> None:
        self.clock.jump_to(t_ns)

    def begin_visit(self, target: str) -> None:
        self._pending.pop(target, None)
        self.fleet.mark_visit_start(target, self.clock.now_ns)

    def send_echo(self, target: str, seq: int) -> int:
        sent_ns = self.clock.now_ns
        server = self.fleet.by_address.get(target)
        if server is not None and server.reachable:
            if self.loss_rate and self._loss_rng(target).random() < self.loss_rate:
                return sent_ns
            ipid = server.serve_echo(sent_ns + server.rtt_ns // 2)
            if ipid is not None:
                self._pending.setdefault(target, {})[seq] = (sent_ns + server.rtt_ns, ipid)
        return sent_ns

    def drain(self, target: str, deadline_ns: int) -> dict[int, tuple[int, int]]:
        return self._pending.pop(target, {})

    def end_visit(self, target: str) -> None:
        self.fleet.mark_visit_end(target, self.clock.now_ns)

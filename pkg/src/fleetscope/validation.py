"""Cross-checks of claimed server locations and operator attribution.

Three independent methods: a geolocation snapshot (country per address), an
address-to-ASN snapshot, and RTT proximity from vantage points of known
location. Providers are offline snapshot files, never live services, so
verdicts are reproducible.
"""

from __future__ import annotations

import csv
import ipaddress
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .discovery import ServerRecord

EARTH_RADIUS_KM = 6371.0088
COINCIDENT_TOLERANCE_KM = 0.001  # one metre

VERDICT_MATCH = "match"
VERDICT_MISMATCH = "mismatch"

MISMATCH_IXP_PREFIX = "ixp_prefix_registration"
MISMATCH_ONGOING = "ongoing_deployment"
MISMATCH_MULTINATIONAL = "multinational_operator"
MISMATCH_UNEXPLAINED = "unexplained"

ASN_CONSISTENT = "consistent"
ASN_ONGOING = "ongoing_deployment"
ASN_INCONSISTENT = "inconsistent"

PROXIMITY_KS = (1, 5, 10, 25)


class UnknownAirportCode(KeyError):
    """Airport code absent from the database (and alias table, if any)."""


class UnknownAsn(KeyError):
    """No ASN mapping covers the address."""


class UnknownAddress(KeyError):
    """No snapshot row covers the address."""


class ProviderUnavailable(Exception):
    """A provider could not answer at all (as opposed to a negative answer)."""


class NoVantagePoints(ValueError):
    """RTT proximity check called without any vantage measurements."""


@dataclass(frozen=True, slots=True)
class GeoPoint:
    """A point on the globe in decimal degrees."""

    latitude: float
    longitude: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in kilometres."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a.latitude, a.longitude, b.latitude, b.longitude))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def spherical_centroid(points: Sequence[GeoPoint]) -> GeoPoint:
    """Unweighted centroid on the sphere (mean of unit vectors)."""
    if not points:
        raise ValueError("centroid of no points")
    x = y = z = 0.0
    for p in points:
        lat = math.radians(p.latitude)
        lon = math.radians(p.longitude)
        x += math.cos(lat) * math.cos(lon)
        y += math.cos(lat) * math.sin(lon)
        z += math.sin(lat)
    n = len(points)
    x, y, z = x / n, y / n, z / n
    norm = math.sqrt(x * x + y * y + z * z)
    if norm == 0.0:
        # Antipodal degenerate case; fall back to the flat average.
        return GeoPoint(
            sum(p.latitude for p in points) / n, sum(p.longitude for p in points) / n
        )
    return GeoPoint(math.degrees(math.asin(z / norm)), math.degrees(math.atan2(y, x)))


class AirportDatabase:
    """Airport code to coordinates, country and UTC offset.

    Loaded from CSV rows ``code,lat,lon,country,utc_offset``; an optional
    alias table (``code,canonical``) maps typo'd codes onto real ones.
    """

    def __init__(self, rows: Iterable[tuple[str, float, float, str, float]],
                 aliases: Mapping[str, str] | None = None):
        self._airports: dict[str, tuple[GeoPoint, str, float]] = {}
        for code, lat, lon, country, offset in rows:
            self._airports[code.lower()] = (GeoPoint(lat, lon), country.upper(), offset)
        self._aliases = {k.lower(): v.lower() for k, v in (aliases or {}).items()}

    @classmethod
    def from_csv(cls, path: str | Path, aliases_path: str | Path | None = None) -> "AirportDatabase":
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#"):
                    continue
                rows.append((row[0], float(row[1]), float(row[2]), row[3], float(row[4])))
        aliases = load_alias_table(aliases_path) if aliases_path else None
        return cls(rows, aliases)

    @classmethod
    def bundled(cls, with_aliases: bool = False) -> "AirportDatabase":
        data = resources.files("fleetscope.data")
        with resources.as_file(data / "airports.csv") as path:
            db = cls.from_csv(path)
        if with_aliases:
            with resources.as_file(data / "airport_aliases.csv") as path:
                db.add_aliases(load_alias_table(path))
        return db

    def add_aliases(self, aliases: Mapping[str, str]) -> None:
        self._aliases.update({k.lower(): v.lower() for k, v in aliases.items()})

    def _resolve(self, code: str) -> tuple[GeoPoint, str, float]:
        key = code.lower()
        key = self._aliases.get(key, key)
        try:
            return self._airports[key]
        except KeyError:
            raise UnknownAirportCode(code) from None

    def __contains__(self, code: str) -> bool:
        key = code.lower()
        return self._aliases.get(key, key) in self._airports

    def codes(self) -> tuple[str, ...]:
        return tuple(sorted(self._airports))

    def location(self, code: str) -> tuple[GeoPoint, str]:
        """Coordinates and ISO country for a known (or aliased) code."""
        point, country, _ = self._resolve(code)
        return point, country

    def country(self, code: str) -> str:
        return self._resolve(code)[1]

    def utc_offset_hours(self, code: str) -> float:
        """Standard-time UTC offset of the airport's site."""
        return self._resolve(code)[2]

    def country_map(self) -> dict[str, str]:
        return {code: entry[1] for code, entry in self._airports.items()}


def load_alias_table(path: str | Path) -> dict[str, str]:
    aliases = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            aliases[row[0].lower()] = row[1].lower()
    return aliases


def load_continent_table(path: str | Path | None = None) -> dict[str, str]:
    """Country to continent mapping (``country,continent`` CSV)."""
    if path is None:
        data = resources.files("fleetscope.data")
        with resources.as_file(data / "continents.csv") as bundled:
            return load_continent_table(bundled)
    table = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            table[row[0].upper()] = row[1].upper()
    return table


def airport_location(code: str, db: AirportDatabase) -> tuple[GeoPoint, str]:
    """Coordinates and country claimed by an airport code."""
    return db.location(code)


class AddressInfoProvider(Protocol):
    """Per-address metadata from an offline snapshot."""

    def country(self, address: str) -> str: ...

    def registered_country(self, address: str) -> str: ...

    def asn(self, address: str) -> int: ...


class AddressSnapshot:
    """Longest-prefix-match snapshot of per-prefix address metadata.

    CSV rows: ``prefix,country,registered_country,asn,holder``.
    """

    def __init__(self, rows: Iterable[tuple[str, str, str, int, str]]):
        self._by_prefixlen: dict[int, dict[int, tuple[str, str, int, str]]] = {}
        for prefix, country, reg_country, asn, holder in rows:
            network = ipaddress.ip_network(prefix, strict=True)
            if network.version != 4:
                raise ValueError(f"only IPv4 prefixes supported, got {prefix}")
            table = self._by_prefixlen.setdefault(network.prefixlen, {})
            table[int(network.network_address)] = (
                country.upper(),
                reg_country.upper(),
                int(asn),
                holder,
            )
        self._prefixlens = sorted(self._by_prefixlen, reverse=True)

    @classmethod
    def from_csv(cls, path: str | Path) -> "AddressSnapshot":
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].startswith("#"):
                    continue
                rows.append((row[0], row[1], row[2], int(row[3]), row[4] if len(row) > 4 else ""))
        return cls(rows)

    def _lookup(self, address: str) -> tuple[str, str, int, str]:
        addr = int(ipaddress.IPv4Address(address))
        for prefixlen in self._prefixlens:
            mask = ((1 << prefixlen) - 1) << (32 - prefixlen) if prefixlen else 0
            hit = self._by_prefixlen[prefixlen].get(addr & mask)
            if hit is not None:
                return hit
        raise UnknownAddress(address)

    def country(self, address: str) -> str:
        return self._lookup(address)[0]

    def registered_country(self, address: str) -> str:
        return self._lookup(address)[1]

    def asn(self, address: str) -> int:
        try:
            return self._lookup(address)[2]
        except UnknownAddress:
            raise UnknownAsn(address) from None

    def holder(self, address: str) -> str:
        return self._lookup(address)[3]


@dataclass(frozen=True, slots=True)
class GeoVerdict:
    """Geolocation cross-check outcome; ``mismatch_class`` explains any
    disagreement between the claimed and observed country."""

    verdict: str
    expected_country: str
    observed_country: str
    mismatch_class: str | None = None

    def __post_init__(self) -> None:
        if (self.verdict == VERDICT_MISMATCH) != (self.mismatch_class is not None):
            raise ValueError("mismatch_class present iff verdict is mismatch")


@dataclass(frozen=True, slots=True)
class AsnVerdict:
    """ASN cross-check outcome against the operator the name claims."""

    verdict: str
    observed_asn: int
    expected_owner: str  # "cdn_operator" or "isp"
    isp_label: str | None = None


def _first_ipv4(record: ServerRecord) -> str:
    for address in record.addresses:
        if ":" not in address:
            return address
    raise ValueError(f"{record.hostname} has no IPv4 address")


def geo_crosscheck(
    record: ServerRecord,
    provider: AddressInfoProvider,
    cdn_asns: frozenset[int] | set[int],
    airports: AirportDatabase,
    multinational_isps: frozenset[str] | set[str] = frozenset(),
) -> GeoVerdict:
    """Compare the geolocated country against the airport-code claim.

    Mismatches are classified: IXP servers whose prefix geolocates to its
    registration country rather than where it is used; ISP-named servers
    still on CDN-owned address space (deployment in progress); ISP labels
    known to operate in several countries; everything else is left
    unexplained rather than forced into a class.
    """
    address = _first_ipv4(record)
    expected = airports.country(record.name.airport_code)
    observed = provider.country(address)
    if observed == expected:
        return GeoVerdict(VERDICT_MATCH, expected, observed)

    if record.operator_kind == "ixp":
        if provider.registered_country(address) == observed:
            return GeoVerdict(VERDICT_MISMATCH, expected, observed, MISMATCH_IXP_PREFIX)
        return GeoVerdict(VERDICT_MISMATCH, expected, observed, MISMATCH_UNEXPLAINED)

    if provider.asn(address) in cdn_asns:
        return GeoVerdict(VERDICT_MISMATCH, expected, observed, MISMATCH_ONGOING)
    if record.isp_label in multinational_isps:
        return GeoVerdict(VERDICT_MISMATCH, expected, observed, MISMATCH_MULTINATIONAL)
    return GeoVerdict(VERDICT_MISMATCH, expected, observed, MISMATCH_UNEXPLAINED)


def asn_crosscheck(
    record: ServerRecord,
    provider: AddressInfoProvider,
    cdn_asns: frozenset[int] | set[int],
    isp_asn_table: Mapping[str, Iterable[int]],
) -> AsnVerdict:
    """Check that the address maps to the AS the name claims.

    IXP names must map to the CDN operator's ASNs; ISP names to that ISP's.
    ISP names on CDN address space indicate deployment in progress.
    """
    address = _first_ipv4(record)
    observed = provider.asn(address)
    if record.operator_kind == "ixp":
        if observed in cdn_asns:
            return AsnVerdict(ASN_CONSISTENT, observed, "cdn_operator")
        return AsnVerdict(ASN_INCONSISTENT, observed, "cdn_operator")
    label = record.isp_label or ""
    expected_asns = set(isp_asn_table.get(label, ()))
    if observed in expected_asns:
        return AsnVerdict(ASN_CONSISTENT, observed, "isp", label)
    if observed in cdn_asns:
        return AsnVerdict(ASN_ONGOING, observed, "isp", label)
    return AsnVerdict(ASN_INCONSISTENT, observed, "isp", label)


@dataclass(frozen=True, slots=True)
class VantageMeasurement:
    """One vantage point's best RTT towards the target."""

    vantage_id: str
    location: GeoPoint
    rtt_ms: float


@dataclass(frozen=True)
class ProximityReport:
    """The k lowest-RTT vantages and their distance to the claimed spot."""

    target: str
    k: int
    closest_vantages: tuple[tuple[str, float, float], ...]  # (id, rtt_ms, km to claim)
    centroid: GeoPoint
    distance_to_claim_km: float


def rtt_proximity_check(
    claimed: GeoPoint,
    vantage_rtts: Iterable[VantageMeasurement],
    k: int,
    target: str = "",
) -> ProximityReport:
    """Select the k lowest-RTT vantages and measure how far their centroid
    sits from the claimed location.

    Several measurements from one vantage collapse to their minimum RTT
    (the minimum filters queueing noise). Equal RTTs order stably by
    vantage id. Fewer than k vantages use all of them.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    best: dict[str, VantageMeasurement] = {}
    for m in vantage_rtts:
        if not math.isfinite(m.rtt_ms):
            raise ValueError(f"non-finite RTT from {m.vantage_id}")
        current = best.get(m.vantage_id)
        if current is None or m.rtt_ms < current.rtt_ms:
            best[m.vantage_id] = m
    if not best:
        raise NoVantagePoints("no vantage measurements")

    ranked = sorted(best.values(), key=lambda m: (m.rtt_ms, m.vantage_id))[:k]
    closest = tuple(
        (m.vantage_id, m.rtt_ms, haversine_km(claimed, m.location)) for m in ranked
    )
    centroid = spherical_centroid([m.location for m in ranked])
    return ProximityReport(
        target=target,
        k=k,
        closest_vantages=closest,
        centroid=centroid,
        distance_to_claim_km=haversine_km(claimed, centroid),
    )

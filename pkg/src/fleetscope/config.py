"""Campaign configuration: one JSON file drives the whole pipeline.

Durations accept plain seconds or strings with units ("30ms", "60s",
"30m", "10d"). Defaults pace probes every 30 ms, dwell one minute per
visit, and run 150 workers.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .discovery import CrawlPolicy
from .probe import CampaignParams


class ConfigError(ValueError):
    """A config field is missing, malformed or points nowhere."""

    def __init__(self, fieldname: str, reason: str):
        self.fieldname = fieldname
        self.reason = reason
        super().__init__(f"{fieldname}: {reason}")


_DURATION_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+)\s*(ns|us|ms|s|m|h|d)?\s*$")
_DURATION_UNITS = {
    "ns": 1e-9,
    "us": 1e-6,
    "ms": 1e-3,
    "s": 1.0,
    "m": 60.0,
    "h": 3600.0,
    "d": 86400.0,
}


def parse_duration_s(value, fieldname: str = "duration") -> float:
    """'30ms' -> 0.03; bare numbers are seconds."""
    if isinstance(value, (int, float)):
        return float(value)
    match = _DURATION_RE.match(str(value))
    if not match:
        raise ConfigError(fieldname, f"cannot parse duration {value!r}")
    return float(match.group(1)) * _DURATION_UNITS[match.group(2) or "s"]


@dataclass
class CampaignConfig:
    """Validated pipeline configuration with defaults applied."""

    seed: int = 0
    wordlists_dir: Path | None = None
    fleet_path: Path | None = None
    output_dir: Path = Path("campaign-out")
    domain_suffix: str = "nflxvideo.net"
    crawl_policy: CrawlPolicy = field(default_factory=CrawlPolicy)
    campaign: CampaignParams = field(default_factory=CampaignParams)
    provider_snapshot: Path | None = None
    airports_path: Path | None = None
    aliases_path: Path | None = None
    cdn_asns: tuple[int, ...] = ()
    isp_asns: dict = field(default_factory=dict)
    multinational_isps: tuple[str, ...] = ()
    subtract_self_traffic: bool = True


def _require_path(value: str, fieldname: str, base: Path) -> Path:
    path = Path(value)
    if not path.is_absolute():
        path = base / path
    if not path.exists():
        raise ConfigError(fieldname, f"path does not exist: {path}")
    return path


def load_config(path: str | Path) -> CampaignConfig:
    """Load and validate a config file; referenced paths must exist."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"no such file: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    base = path.parent

    config = CampaignConfig()
    config.seed = int(raw.get("seed", 0))
    config.domain_suffix = raw.get("domain_suffix", "nflxvideo.net")
    if "wordlists" in raw:
        config.wordlists_dir = _require_path(raw["wordlists"], "wordlists", base)
    if "fleet" in raw:
        config.fleet_path = _require_path(raw["fleet"], "fleet", base)
    out = raw.get("output_dir", "campaign-out")
    config.output_dir = Path(out) if Path(out).is_absolute() else base / out

    crawl = raw.get("crawl", {})
    try:
        rate = crawl.get("rate_qps", 500.0)
        config.crawl_policy = CrawlPolicy(
            max_queries_per_second=None if rate in (None, 0) else float(rate),
            retries=int(crawl.get("retries", 2)),
            retry_backoff_s=parse_duration_s(crawl.get("retry_backoff", 0.5), "crawl.retry_backoff"),
            resolver_endpoints=tuple(crawl.get("endpoints", ())),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("crawl", str(exc)) from exc

    campaign = raw.get("campaign", {})
    try:
        config.campaign = CampaignParams(
            probe_interval_s=parse_duration_s(campaign.get("probe_interval", 0.03), "campaign.probe_interval"),
            dwell_s=parse_duration_s(campaign.get("dwell", 60.0), "campaign.dwell"),
            revisit_period_s=parse_duration_s(campaign.get("revisit_period", 1800.0), "campaign.revisit_period"),
            workers=int(campaign.get("workers", 150)),
            total_duration_s=parse_duration_s(campaign.get("total_duration", 864000.0), "campaign.total_duration"),
            max_visits_per_hour=(
                None
                if campaign.get("max_visits_per_hour", 2.0) is None
                else float(campaign.get("max_visits_per_hour", 2.0))
            ),
            probe_timeout_s=(
                None
                if campaign.get("probe_timeout") is None
                else parse_duration_s(campaign["probe_timeout"], "campaign.probe_timeout")
            ),
            mtu_bytes=int(campaign.get("mtu_bytes", 1500)),
            seed=config.seed,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("campaign", str(exc)) from exc

    providers = raw.get("providers", {})
    if "snapshot" in providers:
        config.provider_snapshot = _require_path(providers["snapshot"], "providers.snapshot", base)
    if "airports" in providers:
        config.airports_path = _require_path(providers["airports"], "providers.airports", base)
    if "aliases" in providers:
        config.aliases_path = _require_path(providers["aliases"], "providers.aliases", base)
    config.cdn_asns = tuple(int(a) for a in providers.get("cdn_asns", ()))
    config.isp_asns = {
        label: [int(a) for a in asns] for label, asns in providers.get("isp_asns", {}).items()
    }
    config.multinational_isps = tuple(providers.get("multinational_isps", ()))

    estimate = raw.get("estimate", {})
    config.subtract_self_traffic = bool(estimate.get("subtract_self_traffic", True))
    return config

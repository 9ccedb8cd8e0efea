"""Command-line interface: enumerate, crawl, validate, probe, estimate,
report, and the end-to-end simulate pipeline.

Exit codes: 0 success, 1 usage error, 2 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analytics, discovery, ipid, names, probe, simulation, store, validation
from .config import CampaignConfig, ConfigError, load_config, parse_duration_s
from .transport import TransportError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STAGE = 2

SIM_CDN_ASN = 64500  # private-use ASN for the fleet operator in synthesized snapshots


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default; we use 1 for usage
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="fleetscope", description=__doc__)
    parser.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--config", default=None, help="campaign config JSON")
    parser.add_argument("--store", default=None,
                        help="campaign store directory; stages read/write its streams")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enumerate", help="print candidate hostnames from wordlists")
    p.add_argument("--wordlists", required=True, help="directory with airports.txt etc.")
    p.add_argument("--max-counter", type=int, default=5)
    p.add_argument("--max-site-counter", type=int, default=1)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--count-only", action="store_true")

    p = sub.add_parser("crawl", help="resolve candidates and record the hits")
    p.add_argument("--wordlists", required=True)
    p.add_argument("--resolver", default="system", help="'system' or 'zone:FLEET.json'")
    p.add_argument("--rate", type=float, default=500.0, help="queries per second (0 = unlimited)")
    p.add_argument("--max-counter", type=int, default=5)
    p.add_argument("--max-site-counter", type=int, default=1)
    p.add_argument("--out", default=None, help="records JSON-lines file (or use --store)")

    p = sub.add_parser("validate", help="geo/ASN cross-checks for discovered records")
    p.add_argument("--records", default=None, help="records file (or use --store)")
    p.add_argument("--snapshot", required=True, help="prefix,country,reg_country,asn,holder CSV")
    p.add_argument("--cdn-asns", required=True, help="comma-separated ASNs of the CDN operator")
    p.add_argument("--isp-asns", default=None, help="JSON file: label -> [asns]")
    p.add_argument("--airports", default=None, help="airport CSV (bundled set by default)")
    p.add_argument("--aliases", default=None, help="airport alias CSV")
    p.add_argument("--out", default=None, help="verdicts file (or use --store)")

    p = sub.add_parser("probe", help="run an ID-sampling campaign")
    p.add_argument("--targets", required=True, help="file with one IPv4 address per line")
    p.add_argument("--transport", default="raw", help="'raw' or 'sim:FLEET.json'")
    p.add_argument("--interval", default=None)
    p.add_argument("--dwell", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--duration", default=None)
    p.add_argument("--out", default=None, help="samples JSON-lines file (or use --store)")

    p = sub.add_parser("estimate", help="turn stored samples into rate estimates")
    p.add_argument("--samples", default=None, help="samples file (or use --store)")
    p.add_argument("--interval", default="30ms")
    p.add_argument("--mtu", type=int, default=1500)
    p.add_argument("--no-self-subtraction", action="store_true")
    p.add_argument("--out", default=None, help="estimates file (or use --store)")

    p = sub.add_parser("report", help="aggregate estimates into report CSVs")
    p.add_argument("--estimates", default=None, help="estimates file (or use --store)")
    p.add_argument("--records", default=None, help="records file (or use --store)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("simulate", help="crawl+probe+estimate+report against a virtual fleet")
    p.add_argument("--fleet", required=True, help="fleet config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--interval", default=None)
    p.add_argument("--dwell", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--duration", default=None)
    p.add_argument("--loss-rate", type=float, default=0.0)
    return parser


def _visits_from_samples(rows, interval_s: float):
    """Rebuild visit logs from flat sample lines; sequence reset starts a visit."""
    interval_ns = round(interval_s * 1e9)
    per_target: dict[str, list[probe.ProbeSample]] = {}
    last_seq: dict[str, int] = {}
    visits: list[probe.VisitLog] = []

    def close(target: str) -> None:
        samples = per_target.pop(target, [])
        if samples:
            visits.append(
                probe.VisitLog(target, samples[0].sent_ns, samples[-1].sent_ns + interval_ns, samples)
            )

    for row in rows:
        target = row["target"]
        if target in last_seq and row["seq"] <= last_seq[target]:
            close(target)
        last_seq[target] = row["seq"]
        per_target.setdefault(target, []).append(
            probe.ProbeSample(target, row["seq"], row["sent_ns"], row["recv_ns"], row["ipid"])
        )
    for target in list(per_target):
        close(target)
    return visits


class _JsonlSink:
    """Writes visits as flat sample lines into a campaign store stream."""

    def __init__(self, campaign_store: store.CampaignStore):
        self._store = campaign_store

    def add_visit(self, visit: probe.VisitLog) -> None:
        for s in visit.samples:
            self._store.append(
                "samples",
                {"target": s.target, "seq": s.seq, "sent_ns": s.sent_ns,
                 "recv_ns": s.recv_ns, "ipid": s.ipid},
            )


class _FileSink:
    """Writes visits as flat sample lines into a plain JSON-lines file."""

    def __init__(self, fh):
        self._fh = fh

    def add_visit(self, visit: probe.VisitLog) -> None:
        for s in visit.samples:
            self._fh.write(json.dumps(
                {"target": s.target, "seq": s.seq, "sent_ns": s.sent_ns,
                 "recv_ns": s.recv_ns, "ipid": s.ipid},
                separators=(",", ":")) + "\n")


def derive_wordlists(fleet: simulation.SimulatedFleet) -> names.Wordlists:
    """Word lists covering exactly the dimensions present in a fleet."""
    parsed = [names.parse_server_name(s.name, domain_suffix=fleet.domain_suffix)
              for s in fleet.servers]
    return names.Wordlists(
        airport_codes=tuple(sorted({n.airport_code for n in parsed})),
        isp_labels=tuple(sorted({n.isp_label for n in parsed if n.isp_label})),
        nic_types=tuple(sorted({n.nic for n in parsed})),
        protocols=tuple(sorted({n.protocol for n in parsed})),
        protocol_indices=tuple(sorted({n.protocol_index for n in parsed})),
        deployment_indices=tuple(sorted({n.deployment_index for n in parsed})),
        max_server_counter=max(n.server_counter for n in parsed),
        max_site_counter=max(n.site_counter for n in parsed),
    )


def synthesize_snapshot(
    fleet: simulation.SimulatedFleet, airports: validation.AirportDatabase
) -> tuple[validation.AddressSnapshot, set[int], dict[str, list[int]]]:
    """Per-address metadata consistent with the fleet's own naming.

    IXP addresses map to a private-use CDN ASN, ISP addresses to one
    private-use ASN per label; countries come from the airport claim.
    """
    isp_labels = sorted(
        {n.isp_label for n in (names.parse_server_name(s.name, domain_suffix=fleet.domain_suffix)
                               for s in fleet.servers) if n.isp_label}
    )
    isp_asn_table = {label: [64501 + i] for i, label in enumerate(isp_labels)}
    rows = []
    for server in fleet.servers:
        parsed = names.parse_server_name(server.name, domain_suffix=fleet.domain_suffix)
        country = (
            airports.country(parsed.airport_code)
            if parsed.airport_code in airports
            else "zz"
        )
        asn = SIM_CDN_ASN if parsed.is_ixp else isp_asn_table[parsed.isp_label][0]
        holder = "cdn" if parsed.is_ixp else parsed.isp_label
        rows.append((f"{server.address}/32", country, country, asn, holder))
    return validation.AddressSnapshot(rows), {SIM_CDN_ASN}, isp_asn_table


def _cmd_enumerate(args) -> int:
    lists = names.Wordlists.from_dir(
        args.wordlists,
        max_server_counter=args.max_counter,
        max_site_counter=args.max_site_counter,
    )
    if args.count_only:
        print(names.candidate_count(lists))
        return EXIT_OK
    for i, candidate in enumerate(names.enumerate_candidates(lists)):
        if args.limit is not None and i >= args.limit:
            break
        print(candidate)
    return EXIT_OK


def _make_resolver(spec: str, clock=None):
    if spec == "system":
        return discovery.SystemResolver()
    if spec.startswith("zone:"):
        fleet = simulation.SimulatedFleet.from_file(spec[len("zone:"):])
        return simulation.ZoneResolver(fleet.zone(), clock=clock)
    raise _UsageError(f"unknown resolver {spec!r}")


def _open_store(args) -> store.CampaignStore | None:
    return store.CampaignStore(args.store) if args.store else None


def _require_out(args, what: str) -> None:
    if args.out is None and args.store is None:
        raise _UsageError(f"{what} needs --out or a global --store")


def _cmd_crawl(args) -> int:
    _require_out(args, "crawl")
    lists = names.Wordlists.from_dir(
        args.wordlists,
        max_server_counter=args.max_counter,
        max_site_counter=args.max_site_counter,
    )
    resolver = _make_resolver(args.resolver)
    policy = discovery.CrawlPolicy(
        max_queries_per_second=None if args.rate == 0 else args.rate
    )
    records = discovery.run_crawl(lists, resolver, policy)
    campaign_store = _open_store(args)
    if campaign_store is not None:
        if not campaign_store.stage_done("crawl"):
            for record in records:
                campaign_store.append("records", record.to_json())
            campaign_store.mark_stage_done("crawl")
        campaign_store.close()
    if args.out:
        with open(args.out, "w") as fh:
            for record in records:
                fh.write(json.dumps(record.to_json(), separators=(",", ":")) + "\n")
    summary = discovery.summarize_discovery(
        records, validation.AirportDatabase.bundled().country_map()
    )
    print(f"servers: isp={summary.isp.servers} ixp={summary.ixp.servers} "
          f"total={summary.total.servers}; locations={summary.total.locations}; "
          f"countries={summary.total.countries}; isps={summary.isps_found}")
    return EXIT_OK


def _load_records_file(path: str) -> list[discovery.ServerRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                records.append(discovery.ServerRecord.from_json(json.loads(line)))
    return records


def _records_in(args) -> list[discovery.ServerRecord]:
    if args.records:
        return _load_records_file(args.records)
    if args.store:
        with store.CampaignStore(args.store, create=False) as campaign_store:
            return [discovery.ServerRecord.from_json(obj)
                    for obj in campaign_store.scan("records")]
    raise _UsageError("need --records or a global --store")


def _cmd_validate(args) -> int:
    _require_out(args, "validate")
    records = _records_in(args)
    snapshot = validation.AddressSnapshot.from_csv(args.snapshot)
    cdn_asns = {int(a) for a in args.cdn_asns.split(",") if a}
    isp_asns = {}
    if args.isp_asns:
        isp_asns = {k: [int(a) for a in v] for k, v in json.loads(Path(args.isp_asns).read_text()).items()}
    airports = (
        validation.AirportDatabase.from_csv(args.airports, args.aliases)
        if args.airports
        else validation.AirportDatabase.bundled(with_aliases=bool(args.aliases))
    )
    verdicts = []
    for record in records:
        geo = validation.geo_crosscheck(record, snapshot, cdn_asns, airports)
        asn = validation.asn_crosscheck(record, snapshot, cdn_asns, isp_asns)
        verdicts.append({
            "v": 1,
            "name": record.hostname,
            "geo": {"verdict": geo.verdict, "mismatch_class": geo.mismatch_class,
                    "expected_country": geo.expected_country,
                    "observed_country": geo.observed_country},
            "asn": {"verdict": asn.verdict, "observed_asn": asn.observed_asn,
                    "expected_owner": asn.expected_owner, "isp": asn.isp_label},
        })
    campaign_store = _open_store(args)
    if campaign_store is not None:
        if not campaign_store.stage_done("validate"):
            for verdict in verdicts:
                campaign_store.append("verdicts", verdict)
            campaign_store.mark_stage_done("validate")
        campaign_store.close()
    if args.out:
        with open(args.out, "w") as fh:
            for verdict in verdicts:
                fh.write(json.dumps(verdict, separators=(",", ":")) + "\n")
    return EXIT_OK


def _campaign_params(config: CampaignConfig, args) -> probe.CampaignParams:
    params = config.campaign
    overrides = {}
    if getattr(args, "interval", None):
        overrides["probe_interval_s"] = parse_duration_s(args.interval, "interval")
    if getattr(args, "dwell", None):
        overrides["dwell_s"] = parse_duration_s(args.dwell, "dwell")
    if getattr(args, "workers", None):
        overrides["workers"] = args.workers
    if getattr(args, "duration", None):
        overrides["total_duration_s"] = parse_duration_s(args.duration, "duration")
    if not overrides:
        return params
    from dataclasses import replace

    return replace(params, **overrides)


def _cmd_probe(args, config: CampaignConfig) -> int:
    _require_out(args, "probe")
    targets = [line.strip() for line in Path(args.targets).read_text().splitlines()
               if line.strip() and ":" not in line]  # ID sampling is IPv4-only
    params = _campaign_params(config, args)
    if args.transport.startswith("sim:"):
        fleet = simulation.SimulatedFleet.from_file(args.transport[len("sim:"):])
        transport = simulation.SimulatedTransport(fleet)
    elif args.transport == "raw":
        from .transport import RawIcmpTransport

        transport = RawIcmpTransport()
    else:
        raise _UsageError(f"unknown transport {args.transport!r}")

    campaign_store = _open_store(args)
    if campaign_store is not None:
        if campaign_store.stage_done("probe"):
            print("probe stage already complete; nothing to do")
            campaign_store.close()
            return EXIT_OK
        summary = probe.run_campaign(targets, params, transport, _JsonlSink(campaign_store))
        campaign_store.mark_stage_done("probe")
        campaign_store.close()
    else:
        with open(args.out, "w") as fh:
            summary = probe.run_campaign(targets, params, transport, _FileSink(fh))
    print(f"visits={summary.visits_completed} probes={summary.probes_sent} "
          f"losses={summary.losses} reachable={len(summary.reachable)} "
          f"non_reachable={len(summary.unreachable)}")
    return EXIT_OK


def _cmd_estimate(args) -> int:
    _require_out(args, "estimate")
    interval_s = parse_duration_s(args.interval, "interval")
    if args.samples:
        with open(args.samples) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
    elif args.store:
        with store.CampaignStore(args.store, create=False) as campaign_store:
            rows = list(campaign_store.scan("samples"))
    else:
        raise _UsageError("need --samples or a global --store")
    visits = _visits_from_samples(rows, interval_s)
    per_target: dict[str, list[probe.VisitLog]] = {}
    for visit in visits:
        per_target.setdefault(visit.target, []).append(visit)
    estimates = []
    for target in sorted(per_target):
        estimates.extend(ipid.series_estimates(
            per_target[target], interval_s, args.mtu,
            subtract_self=not args.no_self_subtraction,
        ))
    campaign_store = _open_store(args)
    if campaign_store is not None:
        if not campaign_store.stage_done("estimate"):
            for est in estimates:
                campaign_store.append("estimates", est.to_json())
            campaign_store.mark_stage_done("estimate")
        campaign_store.close()
    if args.out:
        with open(args.out, "w") as fh:
            for est in estimates:
                fh.write(json.dumps(est.to_json(), separators=(",", ":")) + "\n")
    return EXIT_OK


def _cmd_report(args) -> int:
    records = _records_in(args)
    if args.estimates:
        with open(args.estimates) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
    elif args.store:
        with store.CampaignStore(args.store, create=False) as campaign_store:
            rows = list(campaign_store.scan("estimates"))
    else:
        raise _UsageError("need --estimates or a global --store")
    estimates = [ipid.RateEstimate.from_json(obj) for obj in rows]
    airports = validation.AirportDatabase.bundled(with_aliases=True)
    continents = validation.load_continent_table()
    paths = analytics.write_reports(args.out, records, estimates, airports, continents)
    for name in sorted(paths):
        print(paths[name])
    return EXIT_OK


def _cmd_simulate(args, seed_override: int | None) -> int:
    fleet = simulation.SimulatedFleet.from_file(args.fleet)
    config = load_config(args.config) if args.config else CampaignConfig()
    if seed_override is not None:
        config.seed = seed_override
        from dataclasses import replace

        config.campaign = replace(config.campaign, seed=seed_override)
    params = _campaign_params(config, args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    campaign_store = store.CampaignStore(out_dir / "store")

    clock = simulation.VirtualClock()
    airports = validation.AirportDatabase.bundled(with_aliases=True)
    continents = validation.load_continent_table()

    # crawl
    if not campaign_store.stage_done("crawl"):
        lists = derive_wordlists(fleet)
        resolver = simulation.ZoneResolver(fleet.zone(), clock=clock)
        policy = discovery.CrawlPolicy(max_queries_per_second=None, retries=1, retry_backoff_s=0.0)
        records = discovery.run_crawl(lists, resolver, policy, domain_suffix=fleet.domain_suffix)
        for record in records:
            campaign_store.append("records", record.to_json())
        campaign_store.mark_stage_done("crawl")
        logger.info("crawl found %d records", len(records))
    records = [
        discovery.ServerRecord.from_json(obj, domain_suffix=fleet.domain_suffix)
        for obj in campaign_store.scan("records")
    ]

    # validate
    if not campaign_store.stage_done("validate"):
        snapshot, cdn_asns, isp_asns = synthesize_snapshot(fleet, airports)
        for record in records:
            geo = validation.geo_crosscheck(record, snapshot, cdn_asns, airports)
            asn = validation.asn_crosscheck(record, snapshot, cdn_asns, isp_asns)
            campaign_store.append("verdicts", {
                "v": 1,
                "name": record.hostname,
                "geo": {"verdict": geo.verdict, "mismatch_class": geo.mismatch_class},
                "asn": {"verdict": asn.verdict, "observed_asn": asn.observed_asn},
            })
        campaign_store.mark_stage_done("validate")

    # probe
    if not campaign_store.stage_done("probe"):
        transport = simulation.SimulatedTransport(fleet, clock=clock, loss_rate=args.loss_rate)
        targets = [a for r in records for a in r.addresses if ":" not in a]
        summary = probe.run_campaign(targets, params, transport, _JsonlSink(campaign_store))
        fleet.export_truth_csv(out_dir / "truth.csv")
        (out_dir / "reachability.json").write_text(json.dumps({
            "reachable": list(summary.reachable),
            "non_reachable": list(summary.unreachable),
            "visits": summary.visits_completed,
            "losses": summary.losses,
        }, indent=2, sort_keys=True) + "\n")
        campaign_store.mark_stage_done("probe")

    # estimate
    if not campaign_store.stage_done("estimate"):
        visits = _visits_from_samples(campaign_store.scan("samples"), params.probe_interval_s)
        per_target: dict[str, list[probe.VisitLog]] = {}
        for visit in visits:
            per_target.setdefault(visit.target, []).append(visit)
        for target in sorted(per_target):
            for est in ipid.series_estimates(
                per_target[target], params.probe_interval_s, params.mtu_bytes,
                subtract_self=config.subtract_self_traffic,
            ):
                campaign_store.append("estimates", est.to_json())
        campaign_store.mark_stage_done("estimate")

    # report
    estimates = [ipid.RateEstimate.from_json(obj) for obj in campaign_store.scan("estimates")]
    analytics.write_reports(out_dir, records, estimates, airports, continents,
                            bin_s=params.revisit_period_s)
    if not campaign_store.stage_done("report"):
        campaign_store.mark_stage_done("report")
    campaign_store.close()
    print(f"simulated campaign complete: {len(records)} servers, "
          f"{len(estimates)} estimates, reports in {out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=getattr(logging, args.log_level.upper()))
    try:
        if args.command == "enumerate":
            return _cmd_enumerate(args)
        if args.command == "crawl":
            return _cmd_crawl(args)
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "probe":
            config = load_config(args.config) if args.config else CampaignConfig()
            return _cmd_probe(args, config)
        if args.command == "estimate":
            return _cmd_estimate(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "simulate":
            return _cmd_simulate(args, args.seed)
        raise _UsageError(f"unknown command {args.command!r}")
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, store.StoreError, discovery.ResolverUnavailable,
            probe.CapacityExceeded, probe.Aborted, TransportError,
            OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())

"""Command-line behaviour: exit codes and the simulate pipeline."""

import json

import pytest

from fleetscope.cli import EXIT_OK, EXIT_STAGE, EXIT_USAGE, main
from fleetscope.simulation import SimulatedFleet

from conftest import make_server


@pytest.fixture
def small_fleet_file(tmp_path):
    servers = [
        make_server(2000.0, airport="lhr", operator="ix", counter=1),
        make_server(1000.0, airport="lhr", operator="bt.isp", counter=2),
        make_server(500.0, airport="jfk", operator="ix", counter=1),
    ]
    fleet = SimulatedFleet(servers, seed=5)
    path = tmp_path / "fleet.json"
    fleet.save(path)
    return path


def test_usage_error_exit_code(capsys):
    assert main(["no-such-command"]) == EXIT_USAGE
    assert main(["crawl"]) == EXIT_USAGE  # missing required flags


def test_stage_failure_exit_code(tmp_path):
    code = main(["simulate", "--fleet", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path / "out")])
    assert code == EXIT_STAGE


def test_enumerate_outputs_candidates(tmp_path, capsys):
    wordlists = tmp_path / "wl"
    wordlists.mkdir()
    (wordlists / "airports.txt").write_text("lhr\n")
    (wordlists / "isps.txt").write_text("bt\n")
    code = main(["enumerate", "--wordlists", str(wordlists), "--max-counter", "2"])
    assert code == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 8  # 2 protocols x 2 counters x 1 site x 2 operators
    assert "ipv4_1-lagg0-c001.1.lhr001.ix.nflxvideo.net" in lines


def test_enumerate_count_only(tmp_path, capsys):
    wordlists = tmp_path / "wl"
    wordlists.mkdir()
    (wordlists / "airports.txt").write_text("lhr\nams\n")
    code = main(["enumerate", "--wordlists", str(wordlists), "--max-counter", "3",
                 "--count-only"])
    assert code == EXIT_OK
    assert capsys.readouterr().out.strip() == "12"


def test_crawl_against_zone(tmp_path, small_fleet_file, capsys):
    wordlists = tmp_path / "wl"
    wordlists.mkdir()
    (wordlists / "airports.txt").write_text("lhr\njfk\n")
    (wordlists / "isps.txt").write_text("bt\n")
    out = tmp_path / "records.jsonl"
    code = main([
        "crawl", "--wordlists", str(wordlists), "--resolver", f"zone:{small_fleet_file}",
        "--rate", "0", "--max-counter", "3", "--out", str(out),
    ])
    assert code == EXIT_OK
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == 3
    assert "total=3" in capsys.readouterr().out


def test_simulate_end_to_end(tmp_path, small_fleet_file, capsys):
    out = tmp_path / "out"
    code = main([
        "--seed", "9",
        "simulate", "--fleet", str(small_fleet_file), "--out", str(out),
        "--interval", "30ms", "--dwell", "6s", "--workers", "3",
        "--duration", "120s",
    ])
    assert code == EXIT_OK
    for expected in (
        "store/records.jsonl", "store/samples.jsonl", "store/estimates.jsonl",
        "store/verdicts.jsonl", "truth.csv", "reachability.json",
        "peaks.csv", "cdf.csv", "rollup_country.csv", "summary.json",
    ):
        assert (out / expected).exists(), expected
    verdicts = [json.loads(line) for line in (out / "store" / "verdicts.jsonl").read_text().splitlines()]
    assert all(v["geo"]["verdict"] == "match" for v in verdicts)
    assert all(v["asn"]["verdict"] == "consistent" for v in verdicts)
    estimates = [json.loads(line) for line in (out / "store" / "estimates.jsonl").read_text().splitlines()]
    assert estimates
    reach = json.loads((out / "reachability.json").read_text())
    assert len(reach["reachable"]) == 3


def test_store_backed_pipeline_across_commands(tmp_path, small_fleet_file):
    store_dir = tmp_path / "campaign"
    wordlists = tmp_path / "wl"
    wordlists.mkdir()
    (wordlists / "airports.txt").write_text("lhr\njfk\n")
    (wordlists / "isps.txt").write_text("bt\n")

    code = main(["--store", str(store_dir), "crawl", "--wordlists", str(wordlists),
                 "--resolver", f"zone:{small_fleet_file}", "--rate", "0",
                 "--max-counter", "3"])
    assert code == EXIT_OK

    fleet = SimulatedFleet.from_file(small_fleet_file)
    snapshot = tmp_path / "snapshot.csv"
    rows = []
    for server in fleet.servers:
        country = "gb" if "lhr" in server.name else "us"
        asn = 64500 if ".ix." in server.name else 64510
        rows.append(f"{server.address}/32,{country},{country},{asn},x")
    snapshot.write_text("\n".join(rows) + "\n")
    isp_asns = tmp_path / "isp_asns.json"
    isp_asns.write_text(json.dumps({"bt": [64510]}))
    code = main(["--store", str(store_dir), "validate", "--snapshot", str(snapshot),
                 "--cdn-asns", "64500", "--isp-asns", str(isp_asns)])
    assert code == EXIT_OK

    targets = tmp_path / "targets.txt"
    targets.write_text("\n".join(s.address for s in fleet.servers) + "\n")
    code = main(["--store", str(store_dir), "probe", "--targets", str(targets),
                 "--transport", f"sim:{small_fleet_file}", "--interval", "30ms",
                 "--dwell", "6s", "--workers", "2", "--duration", "60s"])
    assert code == EXIT_OK

    code = main(["--store", str(store_dir), "estimate", "--interval", "30ms"])
    assert code == EXIT_OK

    out = tmp_path / "reports"
    code = main(["--store", str(store_dir), "report", "--out", str(out)])
    assert code == EXIT_OK
    assert (out / "rollup_kind.csv").exists()
    manifest = json.loads((store_dir / "manifest.json").read_text())
    for stage in ("crawl", "validate", "probe", "estimate"):
        assert manifest["stages"][stage]["done"]


def test_simulate_stages_are_idempotent(tmp_path, small_fleet_file):
    out = tmp_path / "out"
    args = ["--seed", "3", "simulate", "--fleet", str(small_fleet_file),
            "--out", str(out), "--dwell", "6s", "--workers", "3", "--duration", "30s"]
    assert main(args) == EXIT_OK
    samples_before = (out / "store" / "samples.jsonl").read_bytes()
    # a second run skips completed stages instead of appending twice
    assert main(args) == EXIT_OK
    assert (out / "store" / "samples.jsonl").read_bytes() == samples_before

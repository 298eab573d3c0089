import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from cobfsim.cli import main as cli_main
from cobfsim.csi import builtin_profile_path
from cobfsim.harness import (
    DeploymentResult,
    Scenario,
    ScenarioError,
    build_deployment,
    load_scenario,
    nearest_rank,
    run_batch,
    run_deployment,
    summarize,
)

FAST = Scenario(mode="cobf_ae", stas_per_ap=2, load="medium", deployments=2,
                duration_s=0.15, seed=99)


def _sha_tree(path: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(path.iterdir())}


def fake_result(index, latencies_ms, throughput=50e6):
    lat = np.asarray(latencies_ms, dtype=float) / 1e3
    return DeploymentResult(
        index=index, generated=lat.size, delivered=lat.size, dropped=0, backlog=0,
        collisions=0, latencies=lat, arrivals=np.zeros(lat.size),
        sta_ids=np.zeros(lat.size, dtype=np.int32),
        throughput_bps={0: throughput}, records=[])


# --- scenario files ------------------------------------------------------------


def test_load_scenario_toml_and_json(tmp_path):
    toml = tmp_path / "s.toml"
    toml.write_text(
        'mode = "cobf_st"\nstas_per_ap = 4\nload = "high"\n'
        'deployments = 3\nduration_s = 1.5\nseed = 7\n'
        '[compressor]\nkind = "givens"\nn_g = 4\nphi_bits = 7\npsi_bits = 5\n')
    s1 = load_scenario(toml)
    assert s1.mode == "cobf_st" and s1.compressor["n_g"] == 4
    assert s1.offered_load_bps == 93e6

    as_json = tmp_path / "s.json"
    as_json.write_text(json.dumps(s1.to_dict()))
    assert load_scenario(as_json) == s1


def test_scenario_validation_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"mode": "warp"}))
    with pytest.raises(ScenarioError):
        load_scenario(bad)
    bad.write_text(json.dumps({"mode": "cobf_st", "frobnicate": 1}))
    with pytest.raises(ScenarioError):
        load_scenario(bad)
    with pytest.raises(ScenarioError):
        Scenario(stas_per_ap=3).validate()


def test_load_levels_follow_table():
    assert Scenario(stas_per_ap=2, load="high").offered_load_bps == 177e6
    assert Scenario(stas_per_ap=4, load="high").offered_load_bps == 93e6
    assert Scenario(stas_per_ap=6, load="high").offered_load_bps == 63e6
    assert Scenario(stas_per_ap=6, load="medium").offered_load_bps == 31.5e6
    assert Scenario(stas_per_ap=2, load="full_buffer").offered_load_bps == 0.0


# --- seed discipline ------------------------------------------------------------


def test_topology_traffic_identical_across_modes():
    def fresh_seed():
        return np.random.SeedSequence(1234).spawn(1)[0]

    a = build_deployment(Scenario(mode="cobf_st", stas_per_ap=2, seed=1234,
                                  duration_s=1.0), fresh_seed())
    b = build_deployment(Scenario(mode="legacy40", stas_per_ap=2, seed=1234,
                                  duration_s=1.0), fresh_seed())
    for sta_a, sta_b in zip(a["stas"], b["stas"]):
        assert np.array_equal(sta_a.pos, sta_b.pos)
    for key in a["links"]:
        assert np.array_equal(a["links"][key].tensor.gains, b["links"][key].tensor.gains)
    for sta_id in a["arrivals"]:
        assert np.array_equal(a["arrivals"][sta_id][0], b["arrivals"][sta_id][0])
        assert np.array_equal(a["arrivals"][sta_id][1], b["arrivals"][sta_id][1])
    assert a["mac_seed"] == b["mac_seed"]


def test_deployments_pick_two_rooms():
    parts = build_deployment(FAST, np.random.SeedSequence(5).spawn(1)[0])
    assert len(parts["aps"]) == 2
    rooms = {parts["cfg"].room_of(ap.pos) for ap in parts["aps"]}
    assert len(rooms) == 2


def test_offered_load_within_two_percent():
    scenario = Scenario(mode="cobf_st", stas_per_ap=2, load="high", duration_s=10.0,
                        deployments=1, seed=3)
    parts = build_deployment(scenario, np.random.SeedSequence(3).spawn(1)[0])
    for times, sizes in parts["arrivals"].values():
        rate_bps = sizes.sum() * 1500 * 8 / 10.0
        assert rate_bps == pytest.approx(177e6, rel=0.02)


# --- metrics ------------------------------------------------------------------


def test_nearest_rank_percentiles():
    lat = np.arange(1, 101, dtype=float)
    assert nearest_rank(lat, 50) == 50.0
    assert nearest_rank(lat, 99) == 99.0
    assert nearest_rank(np.array([7.0]), 50) == 7.0
    assert nearest_rank(np.array([7.0]), 99) == 7.0


def test_summarize_matches_sort_oracle():
    rng = np.random.default_rng(11)
    chunks = [rng.uniform(0, 50, size=n) for n in (17, 3, 40)]
    results = [fake_result(i, chunk) for i, chunk in enumerate(chunks)]
    summary = summarize(results, FAST)
    pooled = np.sort(np.concatenate(chunks)) / 1e3
    med_oracle = pooled[int(np.ceil(0.50 * pooled.size)) - 1] * 1e3
    p99_oracle = pooled[int(np.ceil(0.99 * pooled.size)) - 1] * 1e3
    assert summary.latency_median_ms == pytest.approx(med_oracle)
    assert summary.latency_p99_ms == pytest.approx(p99_oracle)


def test_summarize_order_independent():
    rng = np.random.default_rng(13)
    results = [fake_result(i, rng.uniform(0, 9, size=25)) for i in range(6)]
    forward = summarize(results, FAST).to_dict()
    backward = summarize(list(reversed(results)), FAST).to_dict()
    assert forward == backward


def test_summarize_saturated_flags():
    summary = summarize([fake_result(0, [])], FAST)
    assert summary.saturated
    assert summary.latency_median_ms is None and summary.latency_p99_ms is None


# --- end-to-end batches -----------------------------------------------------------


def test_run_batch_outputs_are_byte_identical(tmp_path):
    run_batch(FAST, out_dir=tmp_path / "a")
    run_batch(FAST, out_dir=tmp_path / "b")
    ha, hb = _sha_tree(tmp_path / "a"), _sha_tree(tmp_path / "b")
    assert ha == hb
    assert set(ha) == {"summary.json", "latency.csv", "overhead.csv", "manifest.json"}


def test_run_batch_parallel_matches_serial(tmp_path):
    serial = run_batch(FAST, out_dir=tmp_path / "serial", workers=1)
    parallel = run_batch(FAST, out_dir=tmp_path / "par", workers=2)
    assert serial.to_dict() == parallel.to_dict()
    assert _sha_tree(tmp_path / "serial") == _sha_tree(tmp_path / "par")


def test_manifest_hash_tracks_scenario(tmp_path):
    run_batch(FAST, out_dir=tmp_path / "a")
    changed = Scenario(**{**FAST.to_dict(), "seed": FAST.seed + 1})
    run_batch(changed, out_dir=tmp_path / "b")
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["config_hash"] != mb["config_hash"]
    assert ma["config_hash"] == FAST.config_hash()


def test_csv_row_counts(tmp_path):
    summary = run_batch(FAST, out_dir=tmp_path)
    latency_rows = (tmp_path / "latency.csv").read_text().strip().splitlines()
    overhead_rows = (tmp_path / "overhead.csv").read_text().strip().splitlines()
    assert len(latency_rows) - 1 == summary.packets["delivered"]
    n_txops = sum(v for k, v in summary.txop_counts.items() if k != "collision")
    assert len(overhead_rows) - 1 == n_txops


def test_full_buffer_delivers_without_arrivals():
    scenario = Scenario(mode="cobf_ae", stas_per_ap=2, load="full_buffer",
                        deployments=1, duration_s=0.1, seed=5)
    result = run_deployment(scenario, 0)
    assert result.delivered > 0
    assert all(tp > 0 for tp in result.throughput_bps.values())


def test_trace_export(tmp_path):
    scenario = Scenario(**{**FAST.to_dict(), "deployments": 1})
    run_batch(scenario, out_dir=tmp_path, trace=True)
    trace = tmp_path / "trace_000.ndjson"
    assert trace.exists()
    lines = trace.read_text().strip().splitlines()
    assert all("kind" in json.loads(line) for line in lines[:50])


# --- CLI ----------------------------------------------------------------------


def test_cli_simulate_and_report(tmp_path, capsys):
    scen = tmp_path / "s.json"
    scen.write_text(json.dumps(FAST.to_dict()))
    out_dir = tmp_path / "out"
    assert cli_main(["simulate", "--scenario", str(scen), "--out", str(out_dir)]) == 0
    assert cli_main(["report", "--in", str(out_dir)]) == 0
    assert "median latency" in capsys.readouterr().out


def test_cli_config_error_exit_code(tmp_path):
    scen = tmp_path / "bad.json"
    scen.write_text(json.dumps({"mode": "nope"}))
    assert cli_main(["simulate", "--scenario", str(scen), "--out", str(tmp_path / "x")]) == 2


def test_cli_profile_validate(tmp_path):
    assert cli_main(["profile-validate", str(builtin_profile_path("ae_eta_1_4"))]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"eta": 0.25}))
    assert cli_main(["profile-validate", str(bad)]) == 2
    inconsistent = json.loads(builtin_profile_path("ae_eta_1_4").read_text())
    inconsistent["latent_dim"] = 5
    bad.write_text(json.dumps(inconsistent))
    assert cli_main(["profile-validate", str(bad)]) == 2


def test_cli_export_channels(tmp_path):
    out = tmp_path / "chans.bin"
    assert cli_main(["export-channels", "--out", str(out), "--samples", "8",
                     "--seed", "3"]) == 0
    from cobfsim.channel import load_channel_dataset
    sidecar, tensors = load_channel_dataset(out)
    assert len(tensors) == 8
    assert {s["room_id"] for s in sidecar["samples"]} <= {0, 1, 2, 3}

"""Scenario configuration, seeded batch execution and metric aggregation.

A scenario names a transmission mode, a compressor, the STA density and the
offered load; a batch runs `deployments` independent seeded topologies and
pools packet latencies, per-STA throughput and per-TXOP sounding overhead.
Seed handling keeps topology, mobility and traffic streams identical across
modes under the same master seed, so scenario comparisons are paired.
"""

from __future__ import annotations

import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .channel import ChannelConfig, LsNoiseParams, generate_channel
from .csi import builtin_profile_path, load_profile
from .mac import (
    ApState,
    FrameSizes,
    GivensCompressor,
    LearnedCompressor,
    LinkState,
    MacParams,
    Simulation,
    StaState,
    TrafficConfig,
    TxopRecord,
    bpp_generate,
    load_frame_sizes,
    packet_latency,
)
from .precoding import load_mcs_table

MODES = ("cobf_st", "cobf_ae", "legacy80", "legacy40")
LOAD_LEVELS = ("high", "medium", "full_buffer")

# per-STA offered load [b/s] under high load, keyed by STAs per AP
HIGH_LOAD_BPS = {2: 177e6, 4: 93e6, 6: 63e6}


class ScenarioError(ValueError):
    """The scenario file is malformed or inconsistent."""


@dataclass(frozen=True)
class Scenario:
    mode: str = "cobf_ae"
    stas_per_ap: int = 2
    load: str = "high"
    deployments: int = 50
    duration_s: float = 10.0
    seed: int = 1
    compressor: dict = field(default_factory=dict)
    mac: dict = field(default_factory=dict)
    channel: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ScenarioError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.stas_per_ap not in (2, 4, 6):
            raise ScenarioError(f"stas_per_ap must be 2, 4 or 6, got {self.stas_per_ap}")
        if self.load not in LOAD_LEVELS:
            raise ScenarioError(f"load must be one of {LOAD_LEVELS}, got {self.load!r}")
        if self.deployments < 1 or self.duration_s <= 0:
            raise ScenarioError("deployments and duration_s must be positive")

    @property
    def offered_load_bps(self) -> float:
        if self.load == "full_buffer":
            return 0.0
        per_sta = HIGH_LOAD_BPS[self.stas_per_ap]
        return per_sta if self.load == "high" else per_sta / 2.0

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()


def load_scenario(path) -> Scenario:
    """Read a TOML or JSON scenario file."""
    path = Path(path)
    text = path.read_bytes()
    if path.suffix.lower() == ".json":
        raw = json.loads(text)
    else:
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        try:
            raw = tomllib.loads(text.decode())
        except Exception:
            raw = json.loads(text)   # both formats are accepted
    known = set(Scenario.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ScenarioError(f"unknown scenario fields: {sorted(unknown)}")
    scenario = Scenario(**raw)
    scenario.validate()
    return scenario


def _build_compressor(scenario: Scenario):
    cfg = dict(scenario.compressor)
    kind = cfg.pop("kind", None)
    if scenario.mode in ("legacy80", "legacy40"):
        return None
    if kind is None:
        kind = "profile" if scenario.mode == "cobf_ae" else "givens"
    if kind == "givens":
        return GivensCompressor(n_g=cfg.get("n_g", 16),
                                phi_bits=cfg.get("phi_bits", 9),
                                psi_bits=cfg.get("psi_bits", 7))
    if kind == "profile":
        name = cfg.get("profile", "ae_eta_1_4")
        path = Path(name)
        if not path.exists():
            path = builtin_profile_path(str(name))
        return LearnedCompressor(load_profile(path), n_g=cfg.get("n_g", 16))
    raise ScenarioError(f"unknown compressor kind {kind!r}")


# ---------------------------------------------------------------------------
# Deployment construction


def _room_origin(cfg: ChannelConfig, room: int) -> np.ndarray:
    ix, iy = room % cfg.rooms_per_side, room // cfg.rooms_per_side
    return np.array([ix * cfg.room_pitch, iy * cfg.room_pitch, 0.0])


def build_deployment(scenario: Scenario, deploy_seed: np.random.SeedSequence):
    """Topology, channels and traffic for one deployment.

    The five substreams (topology, mobility, traffic, channel, mac) are
    spawned in a fixed order so scenarios sharing a master seed see the
    same rooms, positions, walks and arrival processes.
    """
    topo_ss, mobility_ss, traffic_ss, channel_ss, mac_ss = deploy_seed.spawn(5)
    cfg = ChannelConfig(**scenario.channel)
    mac = MacParams(**scenario.mac)
    noise = LsNoiseParams(**scenario.noise)

    topo_rng = np.random.default_rng(topo_ss)
    n_rooms = cfg.rooms_per_side**2
    rooms = sorted(int(r) for r in topo_rng.choice(n_rooms, size=2, replace=False))

    aps, stas = [], []
    wall_margin = 0.5
    for ap_id, room in enumerate(rooms):
        origin = _room_origin(cfg, room)
        ap_pos = origin + np.array([cfg.room_size[0] / 2, cfg.room_size[1] / 2,
                                    cfg.room_size[2]])
        sta_ids = tuple(ap_id * scenario.stas_per_ap + i
                        for i in range(scenario.stas_per_ap))
        aps.append(ApState(ap_id=ap_id, pos=ap_pos, sta_ids=sta_ids))
        bounds = (origin[0] + wall_margin, origin[0] + cfg.room_size[0] - wall_margin,
                  origin[1] + wall_margin, origin[1] + cfg.room_size[1] - wall_margin)
        for sta_id in sta_ids:
            pos = np.array([
                topo_rng.uniform(bounds[0], bounds[1]),
                topo_rng.uniform(bounds[2], bounds[3]),
                topo_rng.uniform(1.2, 1.7),
            ])
            stas.append(StaState(sta_id=sta_id, ap_id=ap_id, pos=pos,
                                 room_bounds=bounds))

    links = {}
    link_streams = channel_ss.spawn(len(stas) * len(aps))
    k = 0
    for sta in stas:
        for ap in aps:
            tensor = generate_channel(
                cfg, sta.pos, ap.pos, seed=int(link_streams[k].generate_state(1)[0]))
            tensor = replace(tensor, sta_id=sta.sta_id, ap_id=ap.ap_id)
            links[(sta.sta_id, ap.ap_id)] = LinkState(
                tensor=tensor,
                seed_rng=np.random.default_rng(link_streams[k]),
                ref_distance=float(np.linalg.norm(sta.pos - ap.pos)))
            k += 1

    arrivals = {}
    traffic_streams = traffic_ss.spawn(len(stas))
    for i, sta in enumerate(stas):
        if scenario.load == "full_buffer":
            arrivals[sta.sta_id] = (np.empty(0), np.empty(0, dtype=np.int64))
        else:
            tc = TrafficConfig(load_bps=scenario.offered_load_bps,
                               payload_bytes=mac.payload_bytes)
            arrivals[sta.sta_id] = bpp_generate(
                tc, scenario.duration_s, np.random.default_rng(traffic_streams[i]))

    return {
        "cfg": cfg, "mac": mac, "noise": noise, "aps": aps, "stas": stas,
        "links": links, "arrivals": arrivals,
        "mac_seed": int(mac_ss.generate_state(1)[0]),
        "mobility_seed": int(mobility_ss.generate_state(1)[0]),
    }


@dataclass
class DeploymentResult:
    index: int
    generated: int
    delivered: int
    dropped: int
    backlog: int
    collisions: int
    latencies: np.ndarray            # seconds, delivered packets only
    arrivals: np.ndarray             # t_arr of delivered packets
    sta_ids: np.ndarray
    throughput_bps: dict             # per STA
    records: list[TxopRecord]
    trace: list | None = None


def run_deployment(scenario: Scenario, index: int, collect_trace: bool = False
                   ) -> DeploymentResult:
    master = np.random.SeedSequence(scenario.seed)
    deploy_seed = master.spawn(scenario.deployments)[index]
    parts = build_deployment(scenario, deploy_seed)
    sim_mode = {"cobf_st": "cobf", "cobf_ae": "cobf"}.get(scenario.mode, scenario.mode)
    sim = Simulation(
        mode=sim_mode, mac=parts["mac"], chan_cfg=parts["cfg"], noise=parts["noise"],
        mcs_table=load_mcs_table(), frames=load_frame_sizes(),
        compressor=_build_compressor(scenario), aps=parts["aps"], stas=parts["stas"],
        links=parts["links"], arrivals=parts["arrivals"],
        duration=scenario.duration_s, mac_seed=parts["mac_seed"],
        mobility_seed=parts["mobility_seed"],
        full_buffer=scenario.load == "full_buffer", collect_trace=collect_trace)
    sim.run()
    delivered = [p for p in sim.packets if p.t_rec is not None]
    return DeploymentResult(
        index=index,
        generated=sim.generated,
        delivered=sim.delivered,
        dropped=sim.dropped,
        backlog=sim.queued,
        collisions=sim.collisions,
        latencies=np.array([packet_latency(p) for p in delivered]),
        arrivals=np.array([p.t_arr for p in delivered]),
        sta_ids=np.array([p.sta_id for p in delivered], dtype=np.int32),
        throughput_bps={s.sta_id: s.delivered_bits / scenario.duration_s
                        for s in sim.stas.values()},
        records=sim.records,
        trace=sim.trace,
    )


# ---------------------------------------------------------------------------
# Metrics


def nearest_rank(sorted_values: np.ndarray, percentile: float) -> float:
    """Nearest-rank percentile over pre-sorted values."""
    if sorted_values.size == 0:
        raise ValueError("no samples")
    rank = max(1, math_ceil(percentile / 100.0 * sorted_values.size))
    return float(sorted_values[rank - 1])


def math_ceil(x: float) -> int:
    n = int(x)
    return n if n == x else n + 1


@dataclass
class MetricsSummary:
    scenario: dict
    latency_median_ms: float | None
    latency_p99_ms: float | None
    mean_throughput_mbps: float
    sounding_ms: dict
    txop_counts: dict
    packets: dict
    saturated: bool
    per_deployment: list[dict]

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(results: list[DeploymentResult], scenario: Scenario) -> MetricsSummary:
    """Pool packet latencies and per-TXOP overhead across deployments.

    Percentiles use the nearest-rank method over all received packets;
    throughput is delivered payload bits over the simulated duration,
    averaged across STAs and deployments.
    """
    results = sorted(results, key=lambda r: r.index)
    pooled = (np.sort(np.concatenate([r.latencies for r in results]))
              if results else np.empty(0))
    saturated = pooled.size == 0
    sounding = np.array([rec.sounding_airtime for r in results for rec in r.records
                         if rec.mode == "cobf" and rec.sounding_airtime > 0])
    counts: dict[str, int] = {"collision": 0}
    for r in results:
        counts["collision"] += r.collisions
        for rec in r.records:
            counts[rec.mode] = counts.get(rec.mode, 0) + 1
    throughputs = [tp for r in results for tp in r.throughput_bps.values()]

    per_deployment = []
    for r in results:
        lat = np.sort(r.latencies)
        per_deployment.append({
            "index": r.index,
            "median_ms": nearest_rank(lat, 50) * 1e3 if lat.size else None,
            "p99_ms": nearest_rank(lat, 99) * 1e3 if lat.size else None,
            "throughput_mbps": float(np.mean(list(r.throughput_bps.values())) / 1e6),
        })

    return MetricsSummary(
        scenario=scenario.to_dict(),
        latency_median_ms=None if saturated else nearest_rank(pooled, 50) * 1e3,
        latency_p99_ms=None if saturated else nearest_rank(pooled, 99) * 1e3,
        mean_throughput_mbps=float(np.mean(throughputs) / 1e6) if throughputs else 0.0,
        sounding_ms={
            "count": int(sounding.size),
            "median": float(np.median(sounding) * 1e3) if sounding.size else 0.0,
            "p95": float(np.percentile(sounding, 95) * 1e3) if sounding.size else 0.0,
            "max": float(sounding.max() * 1e3) if sounding.size else 0.0,
        },
        txop_counts=counts,
        packets={
            "generated": sum(r.generated for r in results),
            "delivered": sum(r.delivered for r in results),
            "dropped": sum(r.dropped for r in results),
            "backlog": sum(r.backlog for r in results),
        },
        saturated=saturated,
        per_deployment=per_deployment,
    )


def emit_results(summary: MetricsSummary, results: list[DeploymentResult],
                 scenario: Scenario, out_dir) -> dict[str, Path]:
    """Write summary JSON, per-packet latency CSV, per-TXOP overhead CSV
    and a self-describing manifest. Outputs are byte-stable for a fixed
    scenario and seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}

    files["summary"] = out / "summary.json"
    with open(files["summary"], "w") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)

    results = sorted(results, key=lambda r: r.index)
    files["latency"] = out / "latency.csv"
    with open(files["latency"], "w") as fh:
        fh.write("deployment,sta_id,t_arr,t_rec,latency_s\n")
        for r in results:
            for sta, t_arr, lat in zip(r.sta_ids, r.arrivals, r.latencies):
                fh.write(f"{r.index},{int(sta)},{float(t_arr)!r},"
                         f"{float(t_arr + lat)!r},{float(lat)!r}\n")

    files["overhead"] = out / "overhead.csv"
    with open(files["overhead"], "w") as fh:
        fh.write("deployment,owner,mode,t_start,t_end,sounding_s,data_s,"
                 "csi_bits,n_scheduled,mpdus_ok,mpdus_failed\n")
        for r in results:
            for rec in r.records:
                fh.write(f"{r.index},{rec.owner},{rec.mode},{rec.t_start!r},"
                         f"{rec.t_end!r},{rec.sounding_airtime!r},{rec.data_airtime!r},"
                         f"{rec.csi_bits_fed_back},{len(rec.scheduled)},"
                         f"{rec.mpdus_ok},{rec.mpdus_failed}\n")

    for r in results:
        if r.trace is not None:
            trace_path = out / f"trace_{r.index:03d}.ndjson"
            with open(trace_path, "w") as fh:
                for event in r.trace:
                    fh.write(json.dumps(event, sort_keys=True) + "\n")
            files[f"trace_{r.index}"] = trace_path

    files["manifest"] = out / "manifest.json"
    with open(files["manifest"], "w") as fh:
        json.dump({
            "config_hash": scenario.config_hash(),
            "scenario": scenario.to_dict(),
            "versions": {"cobfsim": __version__, "numpy": np.__version__},
        }, fh, indent=2, sort_keys=True)
    return files


def _worker(args):
    scenario, index, trace = args
    return run_deployment(scenario, index, collect_trace=trace)


def run_batch(scenario: Scenario, out_dir=None, workers: int = 1,
              trace: bool = False) -> MetricsSummary:
    """Run every deployment of a scenario and aggregate (order-independent)."""
    scenario.validate()
    _build_compressor(scenario)   # fail fast on a bad profile before forking
    jobs = [(scenario, i, trace) for i in range(scenario.deployments)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        results = [_worker(job) for job in jobs]
    summary = summarize(results, scenario)
    if out_dir is not None:
        emit_results(summary, results, scenario, out_dir)
    return summary

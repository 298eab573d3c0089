"""Command-line front end: simulate, report, profile-validate, export-channels."""

import os

# deployments are process-parallel; keep BLAS single-threaded inside each
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import json
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _cmd_simulate(args) -> int:
    import numpy as np

    from .channel import ConfigurationError
    from .harness import ScenarioError, load_scenario, run_batch

    try:
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            scenario = type(scenario)(**{**scenario.to_dict(), "seed": args.seed})
        if args.deployments is not None:
            scenario = type(scenario)(**{**scenario.to_dict(),
                                         "deployments": args.deployments})
        scenario.validate()
    except (ScenarioError, ConfigurationError, FileNotFoundError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        summary = run_batch(scenario, out_dir=args.out, workers=args.workers,
                            trace=args.trace)
    except AssertionError as exc:
        print(f"runtime assertion failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    med = summary.latency_median_ms
    p99 = summary.latency_p99_ms
    print(f"mode={scenario.mode} stas_per_ap={scenario.stas_per_ap} load={scenario.load}")
    print(f"  median latency : {med:.3f} ms" if med is not None else "  median latency : n/a")
    print(f"  p99 latency    : {p99:.3f} ms" if p99 is not None else "  p99 latency    : n/a")
    print(f"  mean throughput: {summary.mean_throughput_mbps:.1f} Mb/s per STA")
    print(f"  sounding median: {summary.sounding_ms['median']:.3f} ms "
          f"({summary.sounding_ms['count']} exchanges)")
    print(f"  results in     : {args.out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    summary_path = Path(args.indir) / "summary.json"
    if not summary_path.exists():
        print(f"configuration error: no summary.json in {args.indir}", file=sys.stderr)
        return EXIT_CONFIG
    with open(summary_path) as fh:
        s = json.load(fh)
    scen = s["scenario"]
    rows = [
        ("mode", scen["mode"]),
        ("STAs per AP", scen["stas_per_ap"]),
        ("load", scen["load"]),
        ("deployments", scen["deployments"]),
        ("sim duration [s]", scen["duration_s"]),
        ("median latency [ms]", s["latency_median_ms"]),
        ("p99 latency [ms]", s["latency_p99_ms"]),
        ("mean throughput [Mb/s/STA]", round(s["mean_throughput_mbps"], 2)),
        ("sounding median [ms]", round(s["sounding_ms"]["median"], 3)),
        ("sounding p95 [ms]", round(s["sounding_ms"]["p95"], 3)),
        ("TXOPs", {k: v for k, v in sorted(s["txop_counts"].items())}),
        ("packets", {k: v for k, v in sorted(s["packets"].items())}),
    ]
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}} : {value}")
    return EXIT_OK


def _cmd_profile_validate(args) -> int:
    from .csi import load_profile

    try:
        profile = load_profile(args.profile)
        profile.validate()
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"invalid profile: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"profile ok: eta={profile.eta} latent_dim={profile.latent_dim} "
          f"size median={profile.size_bits.median:.0f} bits")
    return EXIT_OK


def _cmd_export_channels(args) -> int:
    import numpy as np

    from .channel import ChannelConfig, export_channel_dataset, generate_channel
    from .harness import _room_origin

    cfg = ChannelConfig()
    rng = np.random.default_rng(args.seed)
    tensors, rooms = [], []
    n_rooms = cfg.rooms_per_side**2
    per_room = -(-args.samples // n_rooms)
    for room in range(n_rooms):
        origin = _room_origin(cfg, room)
        ap_pos = origin + np.array([cfg.room_size[0] / 2, cfg.room_size[1] / 2,
                                    cfg.room_size[2]])
        for _ in range(per_room):
            if len(tensors) >= args.samples:
                break
            sta_pos = origin + np.array([rng.uniform(0.5, cfg.room_size[0] - 0.5),
                                         rng.uniform(0.5, cfg.room_size[1] - 0.5),
                                         rng.uniform(1.2, 1.7)])
            # mix in cross-room (NLOS) links at roughly one third
            if rng.random() < 1.0 / 3.0:
                other = (room + 1 + int(rng.integers(n_rooms - 1))) % n_rooms
                o = _room_origin(cfg, other)
                sta_pos = o + np.array([rng.uniform(0.5, cfg.room_size[0] - 0.5),
                                        rng.uniform(0.5, cfg.room_size[1] - 0.5),
                                        rng.uniform(1.2, 1.7)])
            tensors.append(generate_channel(cfg, sta_pos, ap_pos,
                                            seed=int(rng.integers(2**63))))
            rooms.append(room)
    export_channel_dataset(args.out, cfg, tensors, room_ids=rooms)
    n_los = sum(t.los for t in tensors)
    print(f"wrote {len(tensors)} channels ({n_los} LOS / {len(tensors) - n_los} NLOS) "
          f"to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cobfsim",
        description="Coordinated-beamforming simulator and CSI codec suite")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a scenario batch")
    p_sim.add_argument("--scenario", required=True, help="TOML or JSON scenario file")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--seed", type=int, default=None, help="override master seed")
    p_sim.add_argument("--deployments", type=int, default=None,
                       help="override deployment count")
    p_sim.add_argument("--workers", type=int, default=1,
                       help="parallel deployment processes")
    p_sim.add_argument("--trace", action="store_true",
                       help="export per-deployment event traces (NDJSON)")
    p_sim.set_defaults(func=_cmd_simulate)

    p_rep = sub.add_parser("report", help="print the summary table of a result dir")
    p_rep.add_argument("--in", dest="indir", required=True)
    p_rep.set_defaults(func=_cmd_report)

    p_val = sub.add_parser("profile-validate",
                           help="check a learned-compressor profile file")
    p_val.add_argument("profile")
    p_val.set_defaults(func=_cmd_profile_validate)

    p_exp = sub.add_parser("export-channels",
                           help="write a channel dataset container for codec training")
    p_exp.add_argument("--out", required=True)
    p_exp.add_argument("--samples", type=int, default=1000)
    p_exp.add_argument("--seed", type=int, default=0)
    p_exp.set_defaults(func=_cmd_export_channels)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry points: sim, run, eval.

Exit codes: 0 success, 1 numerical failure, 2 usage / input error.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evaluate, io, odometry, simulator

PRESETS = {
    "benign": lambda d, s: simulator.benign_scenario(d, s, noisy=False),
    "benign-noisy": lambda d, s: simulator.benign_scenario(d, s, noisy=True),
    "aggressive": lambda d, s: simulator.aggressive_scenario(d, s, noisy=False),
    "aggressive-noisy": lambda d, s: simulator.aggressive_scenario(
        d, s, noisy=True
    ),
}


def build_parser():
    p = argparse.ArgumentParser(prog="ctlio")
    sub = p.add_subparsers(dest="command")

    ps = sub.add_parser("sim", help="generate a synthetic dataset")
    ps.add_argument("--preset", choices=sorted(PRESETS), default="benign")
    ps.add_argument("--duration", type=float, default=None)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--output", required=True)

    pr = sub.add_parser("run", help="run the estimator on a dataset")
    pr.add_argument("--config", required=True)
    pr.add_argument("--mode", choices=["LIO", "LO"], default=None)
    pr.add_argument("--output", default=None)

    pe = sub.add_parser("eval", help="absolute position error of an estimate")
    pe.add_argument("--gt", required=True)
    pe.add_argument("--est", required=True)
    pe.add_argument("--max-dt", type=float, default=0.05)
    pe.add_argument("--align-origin", action="store_true")
    return p


def cmd_sim(args):
    maker = PRESETS[args.preset]
    duration = args.duration
    if duration is None:
        duration = 60.0 if args.preset.startswith("benign") else 30.0
    spec = maker(duration, args.seed)
    data = simulator.generate(spec)

    out = Path(args.output)
    scans_dir = out / "scans"
    scans_dir.mkdir(parents=True, exist_ok=True)
    io.write_imu_csv(out / "imu.csv", data["imu_t"], data["imu_gyro"],
                     data["imu_accel"])
    for i, (t, pts) in enumerate(data["scans"]):
        io.write_scan_csv(scans_dir / f"scan_{i:06d}.csv", t, pts)
    quats = np.array([io.rotation_to_quat(R) for R in data["gt_R"]])
    io.write_tum(out / "gt.tum", data["gt_t"], data["gt_p"], quats)
    print(f"wrote {len(data['scans'])} scans, "
          f"{data['imu_t'].size} IMU samples to {out}")
    return 0


def cmd_run(args):
    import yaml

    cfg_path = Path(args.config)
    if not cfg_path.is_file():
        print(f"config not found: {cfg_path}", file=sys.stderr)
        return 2
    with open(cfg_path) as f:
        raw = yaml.safe_load(f) or {}
    try:
        cfg = odometry.RunConfig.from_dict(raw)
    except KeyError as e:
        print(f"bad config: {e}", file=sys.stderr)
        return 2
    if args.mode:
        cfg.mode = args.mode

    scans_dir = raw.get("scans_dir")
    if not scans_dir or not Path(scans_dir).is_dir():
        print(f"scans directory not found: {scans_dir}", file=sys.stderr)
        return 2
    scan_files = io.list_scan_files(scans_dir)
    if not scan_files:
        print(f"no scan files in {scans_dir}", file=sys.stderr)
        return 2

    imu = None
    if cfg.mode.upper() == "LIO":
        imu_csv = raw.get("imu_csv")
        if not imu_csv or not Path(imu_csv).is_file():
            print(f"imu file not found: {imu_csv}", file=sys.stderr)
            return 2
        imu = io.read_imu_csv(imu_csv)

    out_dir = Path(args.output or raw.get("output_dir") or "out")
    out_dir.mkdir(parents=True, exist_ok=True)

    odo = odometry.Odometry(cfg)
    if imu is not None:
        odo.set_imu(*imu)
    failed = False
    try:
        for path in scan_files:
            t, pts = io.read_scan_csv(path)
            if t.size == 0:
                continue
            odo.process_scan(t, pts)
    except io.MalformedInputError as e:
        print(str(e), file=sys.stderr)
        return 2
    except (FloatingPointError, np.linalg.LinAlgError, ValueError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        failed = True

    res = odo.results()
    io.write_tum(out_dir / "trajectory.tum", res["t"], res["p"], res["q"])
    odometry.write_diagnostics_csv(out_dir / "diagnostics.csv",
                                   res["diagnostics"])
    stats = odo.timing_stats()
    with open(out_dir / "timing.txt", "w") as f:
        f.write(f"frames {stats['frames']}\n"
                f"mean_ms {stats['mean_ms']:.3f}\n"
                f"total_s {stats['total_s']:.3f}\n")
    if odo.ctx is not None:
        odo.ctx.vmap.export_nodes_csv(out_dir / "map_nodes.csv")
        odo.ctx.vmap.export_means_ply(out_dir / "map.ply")
    print(f"{stats['frames']} frames, mean {stats['mean_ms']:.1f} ms/frame")
    return 1 if failed else 0


def cmd_eval(args):
    for path in (args.gt, args.est):
        if not Path(path).is_file():
            print(f"file not found: {path}", file=sys.stderr)
            return 2
    try:
        gt_t, gt_p, _ = io.read_tum(args.gt)
        est_t, est_p, _ = io.read_tum(args.est)
        metrics = evaluate.ape(gt_t, gt_p, est_t, est_p,
                               max_dt=args.max_dt,
                               align_origin=args.align_origin)
    except io.MalformedInputError as e:
        print(str(e), file=sys.stderr)
        return 2
    except evaluate.NoOverlapError as e:
        print(str(e), file=sys.stderr)
        return 1
    print(f"APE_RMSE {metrics['rmse']:.6f}")
    print(f"APE_MAX {metrics['max']:.6f}")
    print(f"APE_MEAN {metrics['mean']:.6f}")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    handler = {"sim": cmd_sim, "run": cmd_run, "eval": cmd_eval}[args.command]
    return handler(args)


def entry():
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())

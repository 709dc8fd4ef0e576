"""Command-line surface: gen-noise, stats, warp-check, optimize.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 failed assertion
(--assert), 5 numerical divergence. All commands are deterministic given
the config seed; outputs are written atomically.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .analysis import NoiseStrategy, StrategyContext, pass_crossview, pass_normal
from .config import ConfigError, RunConfig, load_config
from .diagnostics import WARP_CHECK_TOLERANCES, run_warp_checks
from .formats import atomic_write_text, write_csv_rows, write_manifest, write_map
from .noising import ConsistentNoiseSampler
from .optimize import DivergenceError, run_color_optimization
from .ply import write_ply
from .score import ColorPointCloud

OUT_ENV_VAR = "GEOSCORE_OUT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_ASSERT = 4
EXIT_DIVERGED = 5


def _ensure_outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    if not out.is_absolute():
        out = Path.cwd() / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_noise(cfg: RunConfig, assert_mode: bool) -> int:
    scene = cfg.load_scene()
    out = _ensure_outdir(cfg)
    intr = cfg.camera.intrinsics
    poses = cfg.camera.poses
    rng = np.random.default_rng(cfg.seed)
    center = scene.cloud.positions.mean(axis=0)
    sampler = ConsistentNoiseSampler(
        scene.cloud, intr, cfg.noising, rng,
        camera_distance=float(np.linalg.norm(poses[0].center - center)),
        scene_center=center,
    )
    files = []
    for k, pose in enumerate(poses):
        noise = sampler.noise_map(pose)
        base = out / f"noise_{k:03d}"
        bin_path, sidecar = write_map(
            base, noise.values,
            meta={"seed": cfg.seed, "pose_id": k,
                  "azimuth_deg": cfg.camera.azimuth_deg[k],
                  "elevation_deg": cfg.camera.elevation_deg[k]},
        )
        files.append({"pose_id": k, "binary": bin_path.name, "sidecar": sidecar.name})
    write_manifest(out / "manifest.yaml", {
        "command": "gen-noise",
        "seed": cfg.seed,
        "scene": cfg.scene_source,
        "config": cfg.to_dict(),
        "files": files,
    })
    print(f"wrote {len(files)} noise maps to {out}")
    return EXIT_OK


def cmd_stats(cfg: RunConfig, assert_mode: bool, strategies: list[str] | None,
              num_samples: int, assert_crossview: bool) -> int:
    scene = cfg.load_scene()
    out = _ensure_outdir(cfg)
    intr = cfg.camera.intrinsics
    poses = cfg.camera.poses
    if len(poses) >= 2:
        pose_i, pose_j = poses[0], poses[1]
    else:
        pose_i = poses[0]
        az = cfg.camera.azimuth_deg[0] + 5.0
        import math

        from .geometry import sample_hemisphere_pose
        pose_j = sample_hemisphere_pose(
            math.radians(az), math.radians(cfg.camera.elevation_deg[0]),
            cfg.camera.radius, cfg.camera.target,
        )
    ctx = StrategyContext(scene, intr, pose_i, pose_j, params=cfg.noising)
    rng = np.random.default_rng(cfg.seed)
    wanted = [NoiseStrategy(s) for s in strategies] if strategies else None
    reports = analysis.strategy_comparison(ctx, num_samples, rng, strategies=wanted)

    rows = []
    for name, r in reports.items():
        for metric, value in [
            ("mean", r.mean), ("variance", r.variance), ("skewness", r.skewness),
            ("excess_kurtosis", r.excess_kurtosis), ("ks_statistic", r.ks_statistic),
            ("ks_pvalue", r.ks_pvalue), ("max_offdiag", r.max_offdiag),
            ("min_diag", r.min_diag), ("corr_corresponding", r.corr_corresponding),
            ("corr_noncorresponding", r.corr_noncorresponding),
            ("duplicate_rate", r.duplicate_rate),
            ("value_count", r.value_count), ("pair_sample_count", r.pair_sample_count),
            ("pass_normal", int(pass_normal(r))), ("pass_crossview", int(pass_crossview(r))),
        ]:
            rows.append([name, metric, value])
        np.asarray(r.patch_covariance, dtype="<f4").tofile(out / f"cov_{name}.f32")
    write_csv_rows(out / "stats.csv", ["strategy", "metric", "value"], rows)
    summary = [
        f"{name}: pass_normal={pass_normal(r)} pass_crossview={pass_crossview(r)}"
        for name, r in reports.items()
    ]
    atomic_write_text(out / "summary.txt", "\n".join(summary) + "\n")
    print("\n".join(summary))

    if assert_mode or assert_crossview:
        failed = False
        if assert_crossview:
            for r in reports.values():
                failed |= not pass_crossview(r)
        else:
            expectations = {
                "consistent_3d": lambda r: pass_normal(r) and pass_crossview(r),
                "random": lambda r: pass_normal(r) and not pass_crossview(r),
                "bilinear_warp": lambda r: not pass_normal(r),
            }
            for name, check in expectations.items():
                if name in reports and not check(reports[name]):
                    print(f"assertion failed for strategy {name}", file=sys.stderr)
                    failed = True
        if failed:
            return EXIT_ASSERT
    return EXIT_OK


def cmd_warp_check(cfg: RunConfig, assert_mode: bool) -> int:
    out = _ensure_outdir(cfg)
    intr = cfg.camera.intrinsics
    results = run_warp_checks(intr)
    rows = [[k, v, WARP_CHECK_TOLERANCES[k]] for k, v in results.items()]
    write_csv_rows(out / "warp_checks.csv", ["check", "max_error", "tolerance"], rows)
    for k, v in results.items():
        print(f"{k}: {v:.3e} (tolerance {WARP_CHECK_TOLERANCES[k]:.0e})")
    if assert_mode and any(v >= WARP_CHECK_TOLERANCES[k] for k, v in results.items()):
        return EXIT_ASSERT
    return EXIT_OK


def cmd_optimize(cfg: RunConfig, assert_mode: bool) -> int:
    scene = cfg.load_scene()
    out = _ensure_outdir(cfg)
    intr = cfg.camera.intrinsics
    poses = cfg.camera.poses
    positions = scene.cloud.positions
    lo = positions.min(axis=0)
    span = np.maximum(positions.max(axis=0) - lo, 1e-9)
    target_colors = (positions - lo) / span
    rep = ColorPointCloud(positions=positions, colors=np.full_like(target_colors, 0.5))
    write_ply(out / "checkpoint_init.ply", rep.cloud, colors=rep.colors)

    rng = np.random.default_rng(cfg.seed)
    result = run_color_optimization(
        rep, target_colors, poses, intr, cfg.schedule,
        strategy=cfg.optimizer.strategy, params=cfg.noising,
        learning_rate=cfg.optimizer.learning_rate,
        iterations=cfg.optimizer.iterations, rng=rng,
        lambda_sim=cfg.optimizer.lambda_sim,
        loss_threshold=cfg.optimizer.loss_threshold,
    )
    rows = [[t.iteration, f"{t.loss:.9g}", f"{t.l_sim:.9g}", f"{t.grad_norm:.9g}"]
            for t in result.trace]
    write_csv_rows(out / "trace.csv", ["iteration", "loss", "l_sim", "grad_norm"], rows)
    write_ply(out / "checkpoint_final.ply", result.rep.cloud, colors=result.rep.colors)
    write_manifest(out / "manifest.yaml", {
        "command": "optimize",
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "final_loss": result.final_loss,
        "iterations_to_threshold": result.iterations_to_threshold,
    })
    if result.trace:
        print(f"final loss {result.final_loss:.6f} after {len(result.trace)} iterations")
    else:
        print("zero iterations requested; checkpoint equals initialization")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geoscore",
        description="3D-consistent noise generation, warp diagnostics, and the toy score-distillation loop",
    )
    parser.add_argument("--config", required=True, help="path to the YAML run config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--assert", dest="assert_mode", action="store_true",
                        help="exit 4 when a required check fails")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-noise", help="write one noise map per configured pose")
    p_stats = sub.add_parser("stats", help="noise strategy statistics")
    p_stats.add_argument("--strategy", action="append", default=None,
                         choices=[s.value for s in NoiseStrategy])
    p_stats.add_argument("--num-samples", type=int, default=300)
    p_stats.add_argument("--assert-crossview", action="store_true",
                         help="exit 4 unless every requested strategy passes cross-view checks")
    sub.add_parser("warp-check", help="identity, homography, and round-trip warp checks")
    sub.add_parser("optimize", help="run the toy color optimization loop")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out_override = args.out if args.out is not None else os.environ.get(OUT_ENV_VAR)
    try:
        cfg = load_config(args.config, seed_override=args.seed, out_override=out_override)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "gen-noise":
            return cmd_gen_noise(cfg, args.assert_mode)
        if args.command == "stats":
            return cmd_stats(cfg, args.assert_mode, args.strategy, args.num_samples,
                             args.assert_crossview)
        if args.command == "warp-check":
            return cmd_warp_check(cfg, args.assert_mode)
        if args.command == "optimize":
            return cmd_optimize(cfg, args.assert_mode)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

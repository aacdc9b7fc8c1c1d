"""Command-line pipeline over episode directories.

Subcommands: synth, calibrate, annotate, eval, grid. Exit codes follow a
fixed protocol so shell pipelines can branch on them:

    0  success
    2  validation failure (missing/malformed inputs)
    3  awaiting an external stage (mark written, 2D track still needed)
    4  optimization collapse (empty renders, no gradient signal)
"""
from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .correspondence import load_fmap, load_mark, propagate_mark, query_feature, save_mark
from .episode import load_episode
from .errors import (
    CalibrationError,
    ConventionMismatch,
    EpisodeValidationError,
    TooFewVisible,
)
from .figures import plot_accuracy_curve, plot_grid_heatmap, plot_loss_curve
from .kinematics import eef_point, load_robot
from .metrics import (
    MetricConfig,
    NoiseGridSpec,
    add_metric,
    auc_metric,
    convergence_grid,
    format_grid_table,
    point_distances,
    save_grid_csv,
)
from .pnp import build_correspondences, solve_pnp, solve_pnp_ransac
from .refine import RefineConfig, default_frames, refine, save_loss_csv, save_refine_report
from .render import project_trajectory, render, save_depth_pfm, save_linkid_png, save_mask_png, save_trajectory_json
from .se3 import Extrinsic, rotation_geodesic_deg, translation_dist_m

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_AWAITING = 3
EXIT_COLLAPSE = 4

OVERLAY_COLOR = np.array([60, 200, 90], dtype=np.float64)


def _load_config(path):
    if path is None:
        return {}
    with open(path, "rb") as f:
        return tomllib.load(f)


def _seed_from(args) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("CALIB_SEED")
    return int(env) if env else 0


def _provenance(seed: int, config: dict) -> dict:
    digest = hashlib.sha256(
        json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()
    return {"tool": f"eyehand {__version__}", "config_hash": digest[:16], "seed": seed}


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def _refine_config(config: dict, n_frames: int) -> RefineConfig:
    section = dict(config.get("refine", {}))
    count = int(section.pop("n_frames", 4))
    frames = section.pop("frames", None)
    cfg = RefineConfig(**section) if section else RefineConfig()
    if frames is None:
        frames = default_frames(n_frames, count)
    return cfg.with_frames(frames)


def _metric_config(config: dict, model) -> MetricConfig:
    section = dict(config.get("metrics", {}))
    max_points = int(section.pop("max_eval_points", 2000))
    return MetricConfig.for_robot(model, max_points=max_points, **section)


# --- synth ------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .synth import SynthSpec, generate_episode

    offset = tuple(float(v) for v in args.mark_offset.split(","))
    spec = SynthSpec(
        arm=args.arm,
        n_frames=args.frames,
        camera_distance=args.camera_distance,
        track_noise_px=args.track_noise,
        mark_offset=offset,
        mask_noise=args.mask_noise,
        seed=_seed_from(args),
        width=args.width,
        height=args.height,
        supersample=args.supersample,
    )
    generate_episode(spec, args.out)
    print(f"synthetic episode written to {args.out}")
    return EXIT_OK


# --- calibrate ----------------------------------------------------------------


def _calibrate_one(episode_dir, args, config, seed) -> int:
    episode = load_episode(episode_dir)
    out = Path(args.out) if args.out else episode.root
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(seed, config)

    if episode.track is None:
        if episode.fmap_path.exists() and episode.reference_fmap_path.exists():
            ref_map = load_fmap(episode.reference_fmap_path)
            ref_mark = load_mark(episode.reference_mark_path)
            fq = query_feature(ref_map, ref_mark)
            frame_map = load_fmap(
                episode.fmap_path,
                target_size=(episode.intrinsics.height, episode.intrinsics.width),
            )
            mark, similarity, _ = propagate_mark(fq, frame_map)
            save_mark(mark, episode.mark_path)
            print(
                f"propagated mark to ({mark.u:.0f}, {mark.v:.0f}) "
                f"similarity {similarity:.3f}; wrote {episode.mark_path}"
            )
            print("awaiting track: run a point tracker on the mark, then rerun")
            return EXIT_AWAITING
        raise EpisodeValidationError(
            f"{episode.root}: no track.csv and no features/ pair to propagate from"
        )

    if args.initial_extrinsic:
        T0 = Extrinsic.load(args.initial_extrinsic)
        print(f"using initial extrinsic override from {args.initial_extrinsic}")
    else:
        corr = build_correspondences(episode.track, episode.robot, episode.joints)
        pnp_cfg = config.get("pnp", {})
        use_ransac = args.ransac or bool(pnp_cfg.get("ransac", False))
        if use_ransac:
            T0, inliers = solve_pnp_ransac(
                corr,
                episode.intrinsics,
                threshold_px=float(
                    pnp_cfg.get("ransac_threshold_px", args.ransac_threshold)
                ),
                iters=int(pnp_cfg.get("ransac_iters", 200)),
                seed=seed,
            )
            print(f"RANSAC kept {int(inliers.sum())}/{len(corr)} correspondences")
        else:
            T0 = solve_pnp(corr, episode.intrinsics)
    _write_json(out / "coarse_extrinsic.json", T0.to_json_dict() | {"provenance": prov})

    if episode.mask_paths is None:
        raise EpisodeValidationError(
            f"{episode.root}: refinement needs masks/ (none found)"
        )
    cfg = _refine_config(config, episode.n_frames)
    targets = episode.target_masks(cfg.frames)
    for k, mask in targets.items():
        if not np.any(mask):
            import warnings

            from .errors import EmptyTargetWarning

            warnings.warn(f"target mask for frame {k} is empty", EmptyTargetWarning)

    report = refine(episode, episode.robot, T0, targets, cfg)
    _write_json(
        out / "extrinsic.json",
        report.final_extrinsic.to_json_dict() | {"provenance": prov},
    )
    _write_json(
        out / "refine_report.json", report.to_json_dict() | {"provenance": prov}
    )
    save_loss_csv(report.loss_history, out / "loss_curve.csv")
    plot_loss_curve(report.loss_history, out / "loss_curve.png")

    if report.collapsed:
        print("refinement collapsed: rendered mask is empty around the initial pose")
        return EXIT_COLLAPSE

    print(
        f"refined extrinsic written to {out / 'extrinsic.json'} "
        f"({report.iters_run} iters, converged={report.converged})"
    )
    if episode.gt_extrinsic is not None:
        T = report.final_extrinsic
        gt = episode.gt_extrinsic
        print(
            "vs ground truth: "
            f"rot {rotation_geodesic_deg(T.rotation, gt.rotation):.3f} deg, "
            f"pos {100 * translation_dist_m(T.translation, gt.translation):.3f} cm"
        )
    return EXIT_OK


def cmd_calibrate(args) -> int:
    config = _load_config(args.config)
    seed = _seed_from(args)
    dirs = args.episode
    if len(dirs) == 1:
        return _calibrate_one(dirs[0], args, config, seed)
    jobs = max(1, args.jobs)
    codes = []
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = {
            pool.submit(_calibrate_one, d, args, config, seed): d for d in dirs
        }
        for fut in concurrent.futures.as_completed(futures):
            d = futures[fut]
            try:
                codes.append(fut.result())
            except (CalibrationError, OSError, ValueError) as exc:
                print(f"{d}: {exc}", file=sys.stderr)
                codes.append(EXIT_VALIDATION)
    return max(codes)


# --- annotate -----------------------------------------------------------------


def cmd_annotate(args) -> int:
    episode = load_episode(args.episode)
    T = Extrinsic.load(args.extrinsic)
    config = _load_config(args.config)
    seed = _seed_from(args)
    ss = int(config.get("refine", {}).get("supersample", 4))

    out = Path(args.out) if args.out else episode.root / "annotations"
    for sub in ("depth", "link_id", "masks_rendered"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    eef_path = [eef_point(episode.robot, q) for q in episode.joints]
    track = project_trajectory(eef_path, T, episode.intrinsics)
    save_trajectory_json(
        [(t, uv, vis) for t, (uv, vis) in enumerate(track)], out / "trajectory.json"
    )

    for t, q in enumerate(episode.joints):
        bundle = render(episode.robot, q, T, episode.intrinsics, ss=ss)
        save_depth_pfm(bundle.depth, out / "depth" / f"{t:06d}.pfm")
        save_linkid_png(bundle.link_id, out / "link_id" / f"{t:06d}.png")
        save_mask_png(bundle.coverage, out / "masks_rendered" / f"{t:06d}.png")
        if t == 0:
            rgb = episode.frame_image(0).astype(np.float64)
            alpha = 0.5 * bundle.coverage[..., None]
            blended = (rgb * (1.0 - alpha) + OVERLAY_COLOR * alpha).astype(np.uint8)
            Image.fromarray(blended).save(out / "overlay_000000.png")

    _write_json(
        out / "provenance.json",
        {"provenance": _provenance(seed, config), "supersample": ss},
    )
    print(f"annotations for {episode.n_frames} frames written to {out}")
    return EXIT_OK


# --- eval ---------------------------------------------------------------------


def cmd_eval(args) -> int:
    pred = Extrinsic.load(args.pred)
    gt = Extrinsic.load(args.gt)
    model = load_robot(args.robot)
    config = _load_config(args.config)
    cfg = _metric_config(config, model)

    distances = point_distances(pred, gt, cfg)
    add = add_metric(pred, gt, cfg)
    auc = auc_metric(distances, cfg)
    rot = rotation_geodesic_deg(pred.rotation, gt.rotation)
    pos = translation_dist_m(pred.translation, gt.translation)

    print(f"ADD (m):        {add:.6f}")
    print(f"AUC:            {auc:.4f}")
    print(f"rot error (deg): {rot:.4f}")
    print(f"pos error (m):   {pos:.6f}")

    out = Path(args.out) if args.out else Path(args.pred).parent / "metrics.csv"
    with open(out, "w", encoding="utf-8", newline="") as f:
        f.write("add_m,auc,rot_err_deg,pos_err_m\n")
        f.write(f"{add:.9f},{auc:.6f},{rot:.6f},{pos:.9f}\n")
    plot_accuracy_curve(
        distances, cfg.auc_max_threshold, cfg.auc_bins, out.with_suffix(".png")
    )
    _write_json(
        out.parent / "metrics_provenance.json",
        {"provenance": _provenance(_seed_from(args), config)},
    )
    return EXIT_OK


# --- grid ---------------------------------------------------------------------


def _parse_ranges(s: str):
    ranges = []
    for part in s.split(";"):
        lo, _, hi = part.partition("-")
        ranges.append((float(lo), float(hi)))
    return tuple(ranges)


def cmd_grid(args) -> int:
    from .synth import SynthSpec, generate_episode

    config = _load_config(args.config)
    seed = _seed_from(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.episode:
        episode = load_episode(args.episode)
    else:
        spec = SynthSpec(
            arm=args.arm,
            n_frames=args.frames,
            seed=seed,
            width=args.width,
            height=args.height,
            supersample=args.supersample,
        )
        episode, _ = generate_episode(spec, out / "episode")

    grid_spec = NoiseGridSpec(
        pos_ranges=_parse_ranges(args.pos_ranges),
        rot_ranges=_parse_ranges(args.rot_ranges),
        n_poses=args.n,
        m_samples=args.m,
        seed=seed,
    )
    cfg = _refine_config(config, episode.n_frames)
    rows = convergence_grid(episode.robot, episode, grid_spec, cfg)

    save_grid_csv(rows, out / "grid.csv")
    table = format_grid_table(rows)
    with open(out / "grid_table.txt", "w", encoding="utf-8") as f:
        f.write(table)
    plot_grid_heatmap(rows, out / "grid.png")
    _write_json(out / "provenance.json", {"provenance": _provenance(seed, config)})
    print(table, end="")
    return EXIT_OK


# --- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eyehand",
        description="Coarse-to-fine eye-to-hand extrinsic calibration toolkit",
    )
    parser.add_argument("--version", action="version", version=f"eyehand {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic episode")
    p.add_argument("--out", required=True)
    p.add_argument("--arm", default="spatial_6dof",
                   choices=("single_link", "planar_3dof", "spatial_6dof"))
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--camera-distance", type=float, default=1.0)
    p.add_argument("--track-noise", type=float, default=0.0)
    p.add_argument("--mark-offset", default="0.02,0,0")
    p.add_argument("--mask-noise", default="none")
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--height", type=int, default=240)
    p.add_argument("--supersample", type=int, default=2, choices=(1, 2, 4))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="coarse PnP + refinement over an episode")
    p.add_argument("episode", nargs="+")
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--ransac", action="store_true")
    p.add_argument("--ransac-threshold", type=float, default=8.0)
    p.add_argument("--initial-extrinsic",
                   help="skip PnP and refine from this extrinsic JSON")
    p.add_argument("--synth-complete", action="store_true",
                   help="assert the episode is a complete synthetic bundle")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("annotate", help="export depth/link-id/trajectory annotations")
    p.add_argument("episode")
    p.add_argument("extrinsic")
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("eval", help="ADD/AUC metrics between two extrinsics")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("robot")
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="refinement convergence grid over noise levels")
    p.add_argument("--out", required=True)
    p.add_argument("--episode", help="existing episode dir (else a synthetic one is made)")
    p.add_argument("--arm", default="spatial_6dof",
                   choices=("single_link", "planar_3dof", "spatial_6dof"))
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--height", type=int, default=240)
    p.add_argument("--supersample", type=int, default=2, choices=(1, 2, 4))
    p.add_argument("--rot-ranges", default="1-5;20-25")
    p.add_argument("--pos-ranges", default="0.1-2.5;10-15")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_grid)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        EpisodeValidationError,
        ConventionMismatch,
        TooFewVisible,
        CalibrationError,
        FileNotFoundError,
        json.JSONDecodeError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

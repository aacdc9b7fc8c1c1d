"""Adapter entry points. Each takes an episode directory, runs one model
stage, and serializes the result plus a checksummed manifest.

    adapter-extract  episode/ [--reference img --reference-mark u,v]
    adapter-segment  episode/ [--prompt ... --box-threshold ... --text-threshold ...]
    adapter-track    episode/ [--mark mark.json]
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import features, segment, track
from .formats import (
    load_image_gray,
    load_image_rgb,
    read_mark,
    write_fmap,
    write_mark,
    write_mask,
    write_track,
)
from .manifest import write_manifest


def _frame_paths(episode: Path) -> list:
    frames = sorted((episode / "frames").glob("*.png"))
    if not frames:
        raise FileNotFoundError(f"{episode}: no frames/*.png")
    return frames


def run_extract(episode, reference=None, reference_mark=None, patch=features.DEFAULT_PATCH):
    episode = Path(episode)
    frames = _frame_paths(episode)
    (episode / "features").mkdir(exist_ok=True)

    fmap_path = episode / "features" / "frame0.fmap"
    frame0 = load_image_rgb(frames[0])
    feats0 = features.extract_dense_features(frame0, patch=patch)
    write_fmap(feats0, fmap_path)
    outputs = [fmap_path]
    settings = {"patch": patch, "upsampling": features.UPSAMPLING}

    if reference is not None:
        if reference_mark is None:
            raise ValueError("--reference needs --reference-mark u,v")
        ref_rgb = load_image_rgb(reference)
        ref_feats = features.extract_dense_features(ref_rgb, patch=patch)
        mu, mv = reference_mark
        query = features.sample_feature(ref_feats, mu, mv)
        u, v, similarity = features.propagate(query, feats0)
        mark_path = episode / "mark.json"
        write_mark(u, v, "propagated", mark_path)
        outputs.append(mark_path)
        settings |= {
            "reference": str(reference),
            "reference_mark": [mu, mv],
            "similarity": similarity,
        }
        print(f"propagated mark to ({u:.0f}, {v:.0f}), similarity {similarity:.3f}")

    manifest = episode / "adapter_extract_manifest.json"
    write_manifest(
        manifest, episode, {"features": features.BACKEND_ID}, settings, outputs
    )
    return manifest


def run_segment(
    episode,
    prompt=segment.DEFAULT_PROMPT,
    box_threshold=segment.DEFAULT_BOX_THRESHOLD,
    text_threshold=segment.DEFAULT_TEXT_THRESHOLD,
):
    episode = Path(episode)
    frames = _frame_paths(episode)
    (episode / "masks").mkdir(exist_ok=True)
    rgbs = [load_image_rgb(p) for p in frames]
    masks = segment.segment_episode(
        rgbs, prompt=prompt, box_threshold=box_threshold, text_threshold=text_threshold
    )
    outputs = []
    for t, mask in enumerate(masks):
        out = episode / "masks" / f"{t:06d}.png"
        write_mask(mask, out)
        outputs.append(out)
    manifest = episode / "adapter_segment_manifest.json"
    write_manifest(
        manifest,
        episode,
        {"segmenter": segment.BACKEND_ID},
        {
            "prompt": prompt,
            "box_threshold": box_threshold,
            "text_threshold": text_threshold,
        },
        outputs,
    )
    return manifest


def run_track(episode, mark_path=None):
    episode = Path(episode)
    frames = _frame_paths(episode)
    mark_path = Path(mark_path) if mark_path else episode / "mark.json"
    u, v, _source = read_mark(mark_path)
    grays = [load_image_gray(p) for p in frames]
    points, visible = track.track_point(grays, u, v)
    track_path = episode / "track.csv"
    write_track(points, visible, track_path)
    manifest = episode / "adapter_track_manifest.json"
    write_manifest(
        manifest,
        episode,
        {"tracker": track.BACKEND_ID},
        {"mark": str(mark_path), "seed_point": [u, v]},
        [track_path],
    )
    print(f"tracked {int(visible.sum())}/{len(visible)} frames visible")
    return manifest


def main_extract(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Dense feature extraction (plus optional mark propagation)"
    )
    parser.add_argument("episode")
    parser.add_argument("--reference", help="reference image with a labeled mark")
    parser.add_argument("--reference-mark", help="u,v of the mark on the reference")
    parser.add_argument("--patch", type=int, default=features.DEFAULT_PATCH)
    args = parser.parse_args(argv)
    mark = None
    if args.reference_mark:
        parts = args.reference_mark.split(",")
        mark = (float(parts[0]), float(parts[1]))
    try:
        run_extract(args.episode, args.reference, mark, patch=args.patch)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main_segment(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Robot mask extraction")
    parser.add_argument("episode")
    parser.add_argument("--prompt", default=segment.DEFAULT_PROMPT)
    parser.add_argument("--box-threshold", type=float,
                        default=segment.DEFAULT_BOX_THRESHOLD)
    parser.add_argument("--text-threshold", type=float,
                        default=segment.DEFAULT_TEXT_THRESHOLD)
    args = parser.parse_args(argv)
    try:
        run_segment(args.episode, args.prompt, args.box_threshold, args.text_threshold)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main_track(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Track the mark through the episode")
    parser.add_argument("episode")
    parser.add_argument("--mark", help="mark JSON (default: episode/mark.json)")
    args = parser.parse_args(argv)
    try:
        run_track(args.episode, args.mark)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0

"""Render-and-compare extrinsic refinement.

Starting from a coarse pose, gradient-descend the mean squared difference
between rendered and target masks over a handful of constraint frames. The
renderer is not differentiable, so gradients come from central finite
differences over the 6-dim pose tangent. A rejection safeguard keeps the
loss history monotone: a step that increases the loss is retried with a
halved learning rate (restored on the next iteration) and dropped entirely
if no improvement can be found.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, ZeroGradientRegion
from .render import render_coverage
from .se3 import Extrinsic, PoseTangent, retract

# Stop when the loss improves by less than PLATEAU_TOL for PLATEAU_WINDOW
# consecutive iterations.
PLATEAU_TOL = 1e-10
PLATEAU_WINDOW = 200

# Give up on a rejected step after this many learning-rate halvings; past
# lr/1024 the proposal is stuck on a quantization flat and holding position
# (a zero-improvement iteration) is cheaper than more probe renders.
MAX_HALVINGS = 10


@dataclass(frozen=True)
class RefineConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-6
    max_iters: int = 10000
    fd_step_rot: float = 1e-4
    fd_step_trans: float = 1e-4
    frames: tuple = ()
    supersample: int = 4
    safeguard: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0 or self.fd_step_rot <= 0 or self.fd_step_trans <= 0:
            raise ValueError("learning rate and FD steps must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        object.__setattr__(self, "frames", tuple(int(f) for f in self.frames))

    def with_frames(self, frames) -> "RefineConfig":
        return RefineConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            max_iters=self.max_iters,
            fd_step_rot=self.fd_step_rot,
            fd_step_trans=self.fd_step_trans,
            frames=tuple(frames),
            supersample=self.supersample,
            safeguard=self.safeguard,
        )


def default_frames(n_frames: int, count: int = 4) -> tuple:
    """`count` frame indices spread uniformly over the episode."""
    count = min(count, n_frames)
    return tuple(int(round(x)) for x in np.linspace(0, n_frames - 1, count))


@dataclass
class RefineReport:
    final_extrinsic: Extrinsic
    loss_history: list
    iters_run: int
    converged: bool
    empty_render_events: int
    collapsed: bool = False

    def to_json_dict(self) -> dict:
        return {
            "final_extrinsic": self.final_extrinsic.to_json_dict(),
            "loss_history": [float(v) for v in self.loss_history],
            "iters_run": self.iters_run,
            "converged": self.converged,
            "empty_render_events": self.empty_render_events,
            "collapsed": self.collapsed,
        }


def mask_loss(targets, rendered) -> float:
    """Mean over frames of the per-pixel mean squared mask difference."""
    if len(targets) != len(rendered):
        raise ShapeMismatch(
            f"{len(targets)} target masks vs {len(rendered)} rendered masks"
        )
    if not targets:
        raise ShapeMismatch("no masks given")
    total = 0.0
    for tgt, ren in zip(targets, rendered):
        tgt = np.asarray(tgt, dtype=np.float64)
        ren = np.asarray(ren, dtype=np.float64)
        if tgt.shape != ren.shape:
            raise ShapeMismatch(f"mask shapes differ: {tgt.shape} vs {ren.shape}")
        diff = tgt - ren
        total += float(np.mean(diff * diff))
    return total / len(targets)


def _eval_loss(loss_at, T):
    """loss_at may return a float or a (loss, empty) pair."""
    out = loss_at(T)
    if isinstance(out, tuple):
        return float(out[0]), bool(out[1])
    return float(out), None


def fd_gradient(loss_at, T: Extrinsic, cfg: RefineConfig, center_empty=None) -> PoseTangent:
    """Central-difference gradient of `loss_at` over the pose tangent.

    Raises ZeroGradientRegion when the loss function reports empty renders
    for the center pose and every probe (only detectable when `loss_at`
    returns (loss, empty) pairs).
    """
    grad = np.zeros(6)
    empties = []
    for i in range(6):
        h = cfg.fd_step_rot if i < 3 else cfg.fd_step_trans
        e = np.zeros(6)
        e[i] = h
        lp, ep = _eval_loss(loss_at, retract(T, PoseTangent.from_vector(e)))
        lm, em = _eval_loss(loss_at, retract(T, PoseTangent.from_vector(-e)))
        grad[i] = (lp - lm) / (2.0 * h)
        empties.extend([ep, em])
    if empties and all(e is True for e in empties):
        if center_empty is None:
            _, center_empty = _eval_loss(loss_at, T)
        if center_empty:
            raise ZeroGradientRegion(
                "rendered mask is empty at the pose and all probes"
            )
    return PoseTangent(grad[:3], grad[3:])


def refine(episode, model, T0: Extrinsic, target_masks, cfg: RefineConfig) -> RefineReport:
    """Run the mask-alignment descent loop from the coarse pose `T0`.

    `episode` must expose `.joints` (JointState list) and `.intrinsics`;
    `target_masks` maps frame index -> H x W coverage array and must cover
    every index in cfg.frames.
    """
    frames = cfg.frames if cfg.frames else default_frames(len(episode.joints))
    targets = []
    for k in frames:
        if k < 0 or k >= len(episode.joints):
            raise ValueError(f"refine frame {k} outside episode of {len(episode.joints)}")
        if k not in target_masks:
            raise ValueError(f"no target mask for frame {k}")
        targets.append(np.asarray(target_masks[k], dtype=np.float64))

    Kc = episode.intrinsics
    empty_events = 0

    def loss_at(T):
        nonlocal empty_events
        rendered = []
        all_empty = True
        for k in frames:
            coverage = render_coverage(
                model, episode.joints[k], T, Kc, ss=cfg.supersample
            )
            if coverage.max() == 0.0:
                empty_events += 1
            else:
                all_empty = False
            rendered.append(coverage)
        return mask_loss(targets, rendered), all_empty

    loss_cur, center_empty = _eval_loss(loss_at, T0)
    history = [loss_cur]
    T = T0
    accumulated = np.zeros(6)
    stagnant = 0
    iters_run = 0
    converged = False
    collapsed = False

    for _ in range(cfg.max_iters):
        try:
            g = fd_gradient(loss_at, T, cfg, center_empty=center_empty)
        except ZeroGradientRegion:
            collapsed = True
            break
        g_vec = g.as_vector()

        lr = cfg.learning_rate
        applied = None
        loss_new = loss_cur
        for _halving in range(MAX_HALVINGS + 1):
            step = -lr * g_vec - cfg.weight_decay * accumulated
            T_prop = retract(T, PoseTangent.from_vector(step))
            loss_prop, prop_empty = _eval_loss(loss_at, T_prop)
            if loss_prop <= loss_cur or not cfg.safeguard:
                applied = (step, T_prop, loss_prop, prop_empty)
                break
            lr *= 0.5
        if applied is not None:
            step, T, loss_new, center_empty = applied
            accumulated = accumulated + step
        # else: every halving increased the loss; hold position this iteration.

        improvement = loss_cur - loss_new
        loss_cur = loss_new
        history.append(loss_cur)
        iters_run += 1
        if improvement < PLATEAU_TOL:
            stagnant += 1
            if stagnant >= PLATEAU_WINDOW:
                converged = True
                break
        else:
            stagnant = 0

    return RefineReport(
        final_extrinsic=T,
        loss_history=history,
        iters_run=iters_run,
        converged=converged,
        empty_render_events=empty_events,
        collapsed=collapsed,
    )


def save_refine_report(report: RefineReport, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_json_dict(), f, indent=2)
        f.write("\n")


def save_loss_csv(loss_history, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iter", "loss"])
        for i, loss in enumerate(loss_history):
            writer.writerow([i, f"{loss:.12g}"])

"""Alternating three-phase training loop.

Each cycle performs, in order: one coarse-stage generator update, one joint
update of both generator halves on the composed output, then K interleaved
update steps of the shape and appearance discriminators. Iteration counting
follows that structure: 2 + K per cycle (1 + K when the pose half is frozen,
since its phase is skipped).
"""

from __future__ import annotations

import contextlib
import glob
import hashlib
import json
import os
import time
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import torch

from .config import RunConfig
from .data import Batch, BatchSampler, load_dataset
from .discriminators import AppearanceDiscriminator, ShapeDiscriminator
from .generator import GeneratorOutput, RateNetGenerator, compose
from .losses import SurrogateFeatureExtractor, gan_loss_d, l1_terms, l2_terms
from .optim import RAdam, lr_at

LOG_NAME = "train_log.jsonl"
FX_SEED = 101


class TrainingAborted(RuntimeError):
    """Raised when a phase produces a non-finite loss."""

    def __init__(self, phase: str, message: str):
        super().__init__(f"{phase} phase: {message}")
        self.phase = phase


@dataclass
class TrainLogRecord:
    cycle: int
    iteration: int
    lr: float
    losses: dict
    wall_time: float

    def to_json(self) -> str:
        return json.dumps({"cycle": self.cycle, "iteration": self.iteration,
                           "lr": self.lr, "losses": self.losses,
                           "wall_time": self.wall_time}, sort_keys=True)


@dataclass
class TrainState:
    config: RunConfig
    generator: RateNetGenerator
    disc_shape: ShapeDiscriminator
    disc_app: AppearanceDiscriminator
    opt_gen: RAdam
    opt_disc_shape: RAdam
    opt_disc_app: RAdam
    fx: SurrogateFeatureExtractor
    cycle: int = 0
    iteration: int = 0


def _derived_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def build_state(config: RunConfig) -> TrainState:
    seed = config.cycle.seed
    mode = config.cycle.ablation_mode
    gen = RateNetGenerator(config.generator, use_enhancer=(mode != "pb_only"),
                           init_seed=_derived_seed(seed, 1))
    if mode == "pb_fixed":
        gen.pose_transfer.requires_grad_(False)
    d_shape = ShapeDiscriminator(config.discriminator, init_seed=_derived_seed(seed, 2))
    d_app = AppearanceDiscriminator(config.discriminator, init_seed=_derived_seed(seed, 3))
    opt_kw = dict(lr=config.optimizer.base_lr, betas=config.optimizer.betas,
                  eps=config.optimizer.eps, weight_decay=config.optimizer.weight_decay,
                  grad_clip=config.optimizer.grad_clip)
    return TrainState(
        config=config,
        generator=gen,
        disc_shape=d_shape,
        disc_app=d_app,
        opt_gen=RAdam(gen.named_parameters(), **opt_kw),
        opt_disc_shape=RAdam(d_shape.named_parameters(), **opt_kw),
        opt_disc_app=RAdam(d_app.named_parameters(), **opt_kw),
        fx=SurrogateFeatureExtractor(seed=FX_SEED),
    )


def _require_finite(terms: dict, phase: str) -> None:
    for name, value in terms.items():
        if not torch.isfinite(value).all():
            raise TrainingAborted(phase, f"loss term '{name}' is {float(value.detach())}")


@contextlib.contextmanager
def _grads_disabled(*modules):
    """Keep autograd flowing through these modules without accumulating into them."""
    saved = []
    for mod in modules:
        for p in mod.parameters():
            saved.append((p, p.requires_grad))
            p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad_(flag)


def phase_coarse_update(state: TrainState, batch: Batch) -> dict:
    """One update of the pose-transfer half against the coarse-stage objective."""
    cfg = state.config
    state.opt_gen.zero_grad()
    _, coarse = state.generator.pose_transfer(
        batch.source_image, batch.source_pose, batch.target_pose)
    terms = l1_terms(coarse, batch.target_image, cfg.losses, state.fx)
    _require_finite(terms, "coarse")
    terms["total"].backward()
    state.opt_gen.step()
    state.iteration += 1
    return {f"l1_{k}": float(v.detach()) for k, v in terms.items()}


def phase_joint_update(state: TrainState, batch: Batch) -> dict:
    """One joint update of both generator halves on the composed image."""
    cfg = state.config
    state.opt_gen.zero_grad()
    out = state.generator(batch.source_image, batch.source_pose, batch.target_pose)
    with _grads_disabled(state.disc_shape, state.disc_app):
        fake_s = state.disc_shape(out.final, batch.target_pose)
        fake_a = state.disc_app(out.final, batch.source_image)
        terms = l2_terms(out.final, batch.target_image, cfg.losses, state.fx,
                         fake_s, fake_a)
        _require_finite(terms, "joint")
        terms["total"].backward()
    state.opt_gen.step()
    state.iteration += 1
    return {f"l2_{k}": float(v.detach()) for k, v in terms.items()}


def _fake_final(state: TrainState, batch: Batch) -> torch.Tensor:
    with torch.no_grad():
        out = state.generator(batch.source_image, batch.source_pose, batch.target_pose)
    return out.final.detach()


def phase_disc_updates(state: TrainState, batch: Batch) -> dict:
    """K interleaved critic steps; each step updates shape then appearance."""
    cfg = state.config.cycle
    fake = _fake_final(state, batch)
    shape_losses, app_losses = [], []
    for k in range(cfg.d_steps):
        if cfg.regenerate_fakes and k > 0:
            fake = _fake_final(state, batch)

        state.opt_disc_shape.zero_grad()
        loss_s = gan_loss_d(state.disc_shape(batch.target_image, batch.target_pose),
                            state.disc_shape(fake, batch.target_pose))
        _require_finite({"d_shape": loss_s}, "discriminator")
        loss_s.backward()
        state.opt_disc_shape.step()

        state.opt_disc_app.zero_grad()
        loss_a = gan_loss_d(state.disc_app(batch.target_image, batch.source_image),
                            state.disc_app(fake, batch.source_image))
        _require_finite({"d_app": loss_a}, "discriminator")
        loss_a.backward()
        state.opt_disc_app.step()

        state.iteration += 1
        shape_losses.append(float(loss_s.detach()))
        app_losses.append(float(loss_a.detach()))
    return {"d_shape": sum(shape_losses) / len(shape_losses),
            "d_app": sum(app_losses) / len(app_losses)}


def iterations_per_cycle(config: RunConfig) -> int:
    skip_coarse = config.cycle.ablation_mode == "pb_fixed"
    return (1 if skip_coarse else 2) + config.cycle.d_steps


def run_cycle(state: TrainState, batch: Batch, lr: float) -> TrainLogRecord:
    started = time.monotonic()
    for opt in (state.opt_gen, state.opt_disc_shape, state.opt_disc_app):
        opt.lr = lr
    losses = {}
    if state.config.cycle.ablation_mode != "pb_fixed":
        losses.update(phase_coarse_update(state, batch))
    losses.update(phase_joint_update(state, batch))
    losses.update(phase_disc_updates(state, batch))
    record = TrainLogRecord(cycle=state.cycle, iteration=state.iteration, lr=lr,
                            losses=losses, wall_time=time.monotonic() - started)
    state.cycle += 1
    return record


def _rng_digest(seed: int, next_cycle: int) -> str:
    blob = json.dumps({"seed": seed, "next_cycle": next_cycle}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _ckpt_paths(out_dir: str, cycle: int) -> Tuple[str, str]:
    stem = os.path.join(out_dir, f"ckpt_{cycle:06d}")
    return stem + ".pt", stem + ".json"


def save_checkpoint(state: TrainState, out_dir: str) -> str:
    pt_path, json_path = _ckpt_paths(out_dir, state.cycle)
    torch.save({
        "generator": state.generator.state_dict(),
        "disc_shape": state.disc_shape.state_dict(),
        "disc_app": state.disc_app.state_dict(),
        "opt/gen": state.opt_gen.state_dict(),
        "opt/disc_shape": state.opt_disc_shape.state_dict(),
        "opt/disc_app": state.opt_disc_app.state_dict(),
        "cycle": state.cycle,
        "iteration": state.iteration,
    }, pt_path)
    manifest = {"config": state.config.to_dict(), "cycle": state.cycle,
                "iteration": state.iteration,
                "rng_state_digest": _rng_digest(state.config.cycle.seed, state.cycle)}
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return pt_path


def checkpoint_cycles(out_dir: str) -> list:
    found = []
    for path in glob.glob(os.path.join(out_dir, "ckpt_*.pt")):
        stem = os.path.basename(path)[len("ckpt_"):-len(".pt")]
        if stem.isdigit():
            found.append(int(stem))
    return sorted(found)


def load_checkpoint(path: str, config: Optional[RunConfig] = None
                    ) -> Tuple[RunConfig, TrainState]:
    """Rebuild a TrainState from a checkpoint and its sidecar manifest.

    When ``config`` is given it must match the stored one exactly.
    """
    json_path = os.path.splitext(path)[0] + ".json"
    if not os.path.exists(path) or not os.path.exists(json_path):
        raise FileNotFoundError(f"checkpoint pair missing: {path} / {json_path}")
    with open(json_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    stored = RunConfig.from_dict(manifest["config"])
    if config is not None and config.to_dict() != stored.to_dict():
        raise ValueError(f"{path}: checkpoint config does not match the requested config")
    state = build_state(stored)
    blob = torch.load(path, map_location="cpu", weights_only=True)
    state.generator.load_state_dict(blob["generator"])
    state.disc_shape.load_state_dict(blob["disc_shape"])
    state.disc_app.load_state_dict(blob["disc_app"])
    state.opt_gen.load_state_dict(blob["opt/gen"])
    state.opt_disc_shape.load_state_dict(blob["opt/disc_shape"])
    state.opt_disc_app.load_state_dict(blob["opt/disc_app"])
    state.cycle = blob["cycle"]
    state.iteration = blob["iteration"]
    if state.cycle != manifest["cycle"] or state.iteration != manifest["iteration"]:
        raise ValueError(f"{path}: sidecar manifest disagrees with checkpoint contents")
    return stored, state


def _truncate_log(log_path: str, keep_below: int) -> list:
    if not os.path.exists(log_path):
        return []
    kept = []
    with open(log_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and json.loads(line)["cycle"] < keep_below:
                kept.append(line)
    with open(log_path, "w", encoding="utf-8") as fh:
        for line in kept:
            fh.write(line + "\n")
    return kept


def _should_checkpoint(completed: int, every: int, total: int) -> bool:
    return completed == 1 or completed == total or completed % every == 0


def train(config: RunConfig, out_dir: str, resume: bool = False) -> str:
    """Run the full schedule; returns the final checkpoint path.

    Deterministic for a fixed (config, seed): batch composition is a pure
    function of the seed and cycle index, and initialization is seeded, so a
    resumed run reproduces the loss trace of an uninterrupted one.
    """
    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, LOG_NAME)

    if resume:
        cycles = checkpoint_cycles(out_dir)
        if not cycles:
            raise FileNotFoundError(f"no checkpoint found in {out_dir}")
        pt_path, _ = _ckpt_paths(out_dir, cycles[-1])
        _, state = load_checkpoint(pt_path, config)
        _truncate_log(log_path, state.cycle)
    else:
        state = build_state(config)
        with open(log_path, "w", encoding="utf-8"):
            pass

    index = load_dataset(config.data.root, "train")
    sampler = BatchSampler(index, config.cycle.batch_size, config.cycle.seed,
                           sigma=config.data.sigma)
    sched = config.schedule()
    total = config.cycle.total_cycles
    per_cycle = iterations_per_cycle(config)

    final_path = None
    with open(log_path, "a", encoding="utf-8") as log:
        for cycle in range(state.cycle, total):
            batch = sampler.sample(cycle)
            record = run_cycle(state, batch, lr_at(cycle, sched))
            log.write(record.to_json() + "\n")
            log.flush()
            if state.iteration != per_cycle * state.cycle:
                raise AssertionError(
                    f"iteration bookkeeping broke: {state.iteration} != "
                    f"{per_cycle} * {state.cycle}")
            if _should_checkpoint(state.cycle, config.cycle.checkpoint_every, total):
                final_path = save_checkpoint(state, out_dir)
    if final_path is None:
        # Resume with nothing left to do; the latest checkpoint already exists.
        final_path = _ckpt_paths(out_dir, total)[0]
    return final_path


def infer(checkpoint_path: str, src_img: torch.Tensor, src_pose: torch.Tensor,
          tgt_pose: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Run a checkpointed generator; returns (coarse, residual, final)."""
    config, state = load_checkpoint(checkpoint_path)
    out = infer_with_state(state, src_img, src_pose, tgt_pose)
    return out.coarse, out.residual, out.final


def infer_with_state(state: TrainState, src_img: torch.Tensor,
                     src_pose: torch.Tensor, tgt_pose: torch.Tensor) -> GeneratorOutput:
    cfg = state.config.data
    if src_img.dim() == 3:
        src_img, src_pose, tgt_pose = src_img[None], src_pose[None], tgt_pose[None]
    if tuple(src_img.shape[2:]) != (cfg.height, cfg.width):
        raise ValueError(f"input resolution {tuple(src_img.shape[2:])} does not match "
                         f"checkpoint resolution ({cfg.height}, {cfg.width})")
    state.generator.eval()
    try:
        with torch.no_grad():
            out = state.generator(src_img, src_pose, tgt_pose)
    finally:
        state.generator.train()
    return out

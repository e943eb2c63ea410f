"""Desk-scale experiments shared by the scripts and the acceptance suite."""
from __future__ import annotations

import time

import numpy as np
import torch

from .model import ModelConfig, WholeBodyModel
from .synthetic import generate_clip
from .training import ClipDataset, CurriculumConfig, build_heldout, ema, train

OVERFIT_KINDS = ["walk", "wave", "finger-wiggle", "reach", "idle", "wave", "finger-wiggle", "walk"]
HELDOUT_KINDS = ["wave", "finger-wiggle", "wave", "finger-wiggle"]


def overfit_experiment(stage1_steps=2000, stage2_steps=1000, batch_size=2, width=64, layers=2, seed=0,
                       clip_length=150, log_path=None):
    """Curriculum run on 8 fixed clips with a hand-rich held-out set.

    Returns a summary with the step-10 and final smoothed losses and the
    held-out hand PA-MPJPE at the end of each stage.
    """
    torch.manual_seed(seed)
    train_clips = [generate_clip(k, seed + i, length=clip_length) for i, k in enumerate(OVERFIT_KINDS)]
    held_clips = [generate_clip(k, 10_000 + seed + i, length=clip_length) for i, k in enumerate(HELDOUT_KINDS)]
    dataset = ClipDataset(train_clips, seed=seed)
    heldout = build_heldout(held_clips, seed=seed + 1)
    model = WholeBodyModel(ModelConfig(width=width, layers=layers, heads=4, seed=seed))
    cfg = CurriculumConfig(stage1_steps=stage1_steps, stage2_steps=stage2_steps, batch_size=batch_size, seed=seed)
    t0 = time.perf_counter()
    result = train(model, dataset, cfg, log_path=log_path, heldout=heldout)
    smooth = ema(result.losses)
    return {
        "model": model,
        "losses": result.losses,
        "smoothed": smooth,
        "step10_loss": float(np.mean(result.losses[:10])),
        "final_smoothed_loss": float(smooth[-1]),
        "stage_end": result.stage_end,
        "seconds": time.perf_counter() - t0,
    }

"""Windowed sampling and the two-stage training curriculum."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augmentation import AugmentConfig, synthesize_closeup
from .errors import NumericalError, UndefinedRatioError
from .kinematics import DTYPE, default_skeleton
from .metrics import position_metrics
from .objectives import LossWeights, total_loss
from .observations import NoiseConfig, ObservationSeq, synthesize_observations
from .representation import GravityFrame, MotionState, derive_ground_truth_state, local_joints
from .rotations import encode_rotation6d
from .synthetic import generate_clip

HAND_RICH = "hand-rich"
BODY_RICH = "body-rich"


@dataclass
class CurriculumConfig:
    stage1_steps: int = 2000
    stage2_steps: int = 1000
    hand_rich_multiplier: float = 3.0
    lr: float = 3e-4
    lr_final_ratio: float = 0.1
    batch_size: int = 4
    window: int = 120
    grad_clip: float = 1.0
    eval_every: int = 0  # 0 disables periodic held-out evaluation
    seed: int = 0

    def __post_init__(self):
        if self.stage1_steps <= 0 or self.stage2_steps <= 0:
            raise ValueError("stage step counts must be positive")
        if self.window < 2:
            raise ValueError("window length must be at least 2")
        if self.hand_rich_multiplier <= 0:
            raise ValueError("hand-rich multiplier must be positive")

    @property
    def total_steps(self):
        return self.stage1_steps + self.stage2_steps


def stage_at(step, cfg):
    return "I" if step < cfg.stage1_steps else "II"


def learning_rate(step, cfg):
    """Cosine decay from lr to lr * lr_final_ratio over both stages."""
    frac = min(step / max(cfg.total_steps - 1, 1), 1.0)
    return cfg.lr * (cfg.lr_final_ratio + (1.0 - cfg.lr_final_ratio) * 0.5 * (1.0 + math.cos(math.pi * frac)))


class ClipDataset:
    """Clips with lazily cached observation variants (full-body and close-up)."""

    def __init__(self, clips, noise=None, augment=None, variants=4, seed=0, skeleton=None):
        if not clips:
            raise ValueError("dataset is empty")
        self.clips = list(clips)
        self.noise = noise or NoiseConfig()
        self.augment = augment or AugmentConfig()
        self.variants = variants
        self.seed = seed
        self.skeleton = skeleton or default_skeleton()
        self._obs = {}
        self._targets = {}

    def __len__(self):
        return len(self.clips)

    @classmethod
    def generate(cls, kinds, seeds, length=150, **kw):
        return cls([generate_clip(k, s, length=length) for k, s in zip(kinds, seeds)], **kw)

    def categories(self):
        return [c.category for c in self.clips]

    def observation(self, idx, variant=0, closeup=False):
        key = (idx, variant, closeup)
        if key not in self._obs:
            clip = self.clips[idx]
            base_seed = [self.seed, idx, variant]
            full, crop = synthesize_observations(clip, noise=self.noise, seed=base_seed + [0],
                                                 skeleton=self.skeleton, augment=self.augment)
            if closeup:
                try:
                    crop = synthesize_closeup(full.body_kp, full.body_valid, seed=base_seed + [1],
                                              config=self.augment, image_size=(clip.camera.width, clip.camera.height))
                    full, crop = synthesize_observations(clip, crop=crop, noise=self.noise, seed=base_seed + [2],
                                                         skeleton=self.skeleton, augment=self.augment)
                except UndefinedRatioError:
                    pass
            self._obs[key] = (full, crop)
        return self._obs[key]

    def _clip_state(self, idx):
        if idx not in self._targets:
            clip = self.clips[idx]
            state, _ = derive_ground_truth_state(self.skeleton, clip.pose, clip.root_orient, clip.root_trans,
                                                 clip.betas, clip.camera, fps=clip.fps)
            self._targets[idx] = state
        return self._targets[idx]

    def window_target(self, idx, start, length):
        """Targets for frames [start, start + length) with the GV frame of the window's own camera.

        Contact labels and velocities come from the whole clip, so the window
        edges see their true neighbours.
        """
        clip = self.clips[idx]
        state = self._clip_state(idx).slice(start, start + length)
        frame = GravityFrame.from_camera(clip.camera.slice(start, start + length))
        ref = torch.as_tensor(frame.reference, dtype=DTYPE)
        gv = ref @ torch.as_tensor(clip.root_orient[start:start + length], dtype=DTYPE)
        return state.replace(gv_orient=encode_rotation6d(gv))


def category_probabilities(categories, stage, multiplier):
    """Per-category sampling probabilities; stage II scales the hand-rich weight."""
    present = sorted(set(categories))
    w = {c: (multiplier if (stage == "II" and c == HAND_RICH) else 1.0) for c in present}
    z = sum(w.values())
    return {c: w[c] / z for c in present}


def sample_indices(categories, stage, multiplier, rng, n):
    probs = category_probabilities(categories, stage, multiplier)
    names = list(probs)
    picks = rng.choice(len(names), size=n, p=[probs[c] for c in names])
    by_cat = {c: [i for i, k in enumerate(categories) if k == c] for c in names}
    return [int(rng.choice(by_cat[names[p]])) for p in picks]


def intrinsics_of(clip):
    cam = clip.camera
    return torch.tensor([cam.fx, cam.fy, cam.cx, cam.cy], dtype=DTYPE)


def sample_batch(dataset, stage, cfg, rng, augment=None):
    """Windows of (observations, targets) drawn under the stage's category weights.

    Each clip takes the close-up view with probability ``augment.mix_ratio``.
    """
    augment = augment or dataset.augment
    idx = sample_indices(dataset.categories(), stage, cfg.hand_rich_multiplier, rng, cfg.batch_size)
    obs, targets, meta = [], [], []
    for i in idx:
        clip = dataset.clips[i]
        closeup = bool(rng.random() < augment.mix_ratio)
        variant = int(rng.integers(dataset.variants))
        T = min(cfg.window, len(clip))
        start = int(rng.integers(0, len(clip) - T + 1))
        o, _ = dataset.observation(i, variant, closeup)
        obs.append(o.slice(start, start + T))
        targets.append(dataset.window_target(i, start, T))
        meta.append({"clip": i, "kind": clip.kind, "category": clip.category, "start": start,
                     "variant": variant, "closeup": closeup})
    batch = ObservationSeq.batch(obs)
    batch["intrinsics"] = torch.stack([intrinsics_of(dataset.clips[i]) for i in idx])
    return batch, MotionState.stack(targets), meta


def _dump_batch(path, step, batch, meta, terms):
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"step": step, "meta": meta,
               "terms": {k: float(v.detach()) for k, v in terms.items()},
               "batch": {k: v.tolist() for k, v in batch.items()}}
    path.write_text(json.dumps(payload))


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    stage_end: dict = field(default_factory=dict)  # held-out metrics at the end of each stage
    seconds: float = 0.0


def predict(model, obs, intrinsics=None):
    """Unbatched prediction for one observation sequence."""
    batch = ObservationSeq.batch([obs])
    with torch.no_grad():
        out = model(batch)
    return out.map(lambda v: v[0])


def evaluate_heldout(model, heldout, skeleton=None):
    """Mean hand/body PA-MPJPE (mm) over held-out (observation, target) pairs."""
    skeleton = skeleton or default_skeleton()
    was_training = model.training
    model.eval()
    hands, body = [], []
    for obs, target in heldout:
        pred = predict(model, obs)
        pj = local_joints(skeleton, pred)[0].numpy()
        tj = local_joints(skeleton, target)[0].numpy()
        hands.append(position_metrics(pj, tj, skeleton, "hands")["pa_mpjpe"])
        body.append(position_metrics(pj, tj, skeleton, "all")["pa_mpjpe"])
    model.train(was_training)
    return {"hands_pa_mpjpe": float(np.mean(hands)), "all_pa_mpjpe": float(np.mean(body))}


def build_heldout(clips, noise=None, seed=1000, skeleton=None):
    skeleton = skeleton or default_skeleton()
    out = []
    for k, clip in enumerate(clips):
        obs, _ = synthesize_observations(clip, noise=noise, seed=[seed, k], skeleton=skeleton)
        target, _ = derive_ground_truth_state(skeleton, clip.pose, clip.root_orient, clip.root_trans,
                                              clip.betas, clip.camera, fps=clip.fps)
        out.append((obs, target))
    return out


def train(model, dataset, cfg, weights=None, log_path=None, heldout=None, dump_dir=None, on_step=None):
    """Stage I then stage II on ``dataset``; returns per-step losses and evaluations.

    ``weights`` maps stage -> LossWeights (defaults from LossWeights.for_stage).
    Logs one JSON line per step when ``log_path`` is given.
    """
    weights = weights or {s: LossWeights.for_stage(s) for s in ("I", "II")}
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    result = TrainResult()
    skeleton = dataset.skeleton
    log = open(log_path, "w") if log_path else None
    t0 = time.perf_counter()
    model.train()
    try:
        for step in range(cfg.total_steps):
            stage = stage_at(step, cfg)
            lr = learning_rate(step, cfg)
            for g in opt.param_groups:
                g["lr"] = lr
            batch, target, meta = sample_batch(dataset, stage, cfg, rng)
            pred = model(batch)
            loss, terms = total_loss(pred, target, skeleton, weights[stage], obs=batch)
            if not torch.isfinite(loss):
                dump = Path(dump_dir or ".") / f"nonfinite_step{step}.json"
                _dump_batch(dump, step, batch, meta, terms)
                raise NumericalError(f"non-finite loss at step {step}", dump_path=str(dump))
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            value = float(loss.detach())
            result.losses.append(value)
            if log:
                rec = {"step": step, "stage": stage, "lr": lr, "loss": value}
                rec.update({k: float(v.detach()) for k, v in terms.items() if k != "total"})
                log.write(json.dumps(rec) + "\n")
            boundary = step + 1 in (cfg.stage1_steps, cfg.total_steps)
            periodic = cfg.eval_every and (step + 1) % cfg.eval_every == 0
            if heldout and (boundary or periodic):
                ev = {"step": step + 1, "stage": stage, **evaluate_heldout(model, heldout, skeleton)}
                result.evals.append(ev)
                if boundary:
                    result.stage_end[stage] = ev
                if log:
                    log.write(json.dumps({"eval": ev}) + "\n")
            if on_step:
                on_step(step, value)
    finally:
        if log:
            log.close()
    result.seconds = time.perf_counter() - t0
    return result


def ema(values, alpha=0.05):
    out, acc = [], None
    for v in values:
        acc = v if acc is None else alpha * v + (1 - alpha) * acc
        out.append(acc)
    return out


def config_dict(cfg):
    return asdict(cfg)

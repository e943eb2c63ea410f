"""Procedural whole-body motion clips with a tracking, optionally orbiting camera."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .kinematics import (
    DTYPE, LEFT_ANKLE, LEFT_FOOT, NUM_BETAS, NUM_JOINTS, RIGHT_ANKLE, CameraModel,
    default_skeleton, forward_kinematics,
)
from .rotations import axis_angle_to_matrix

KINDS = ("walk", "wave", "finger-wiggle", "reach", "idle")
CATEGORY = {"walk": "body-rich", "reach": "body-rich", "idle": "body-rich",
            "wave": "hand-rich", "finger-wiggle": "hand-rich"}
# mean temporal variance of finger joint angles (rad^2) a hand-rich clip must reach
HAND_RICH_MIN_ENERGY = 0.01

_L_SHOULDER, _R_SHOULDER, _L_ELBOW, _R_ELBOW, _L_WRIST, _R_WRIST = 16, 17, 18, 19, 20, 21
_L_HIP, _R_HIP, _L_KNEE, _R_KNEE = 1, 2, 4, 5
_SPINE = (3, 6, 9)
_NECK, _HEAD = 12, 15


@dataclass
class SyntheticClip:
    kind: str
    category: str
    fps: float
    betas: np.ndarray  # (10,)
    pose: np.ndarray  # (T, 55, 3, 3) local rotations, root slot identity
    root_orient: np.ndarray  # (T, 3, 3) world
    root_trans: np.ndarray  # (T, 3) world
    camera: CameraModel
    seed: int = 0

    def __len__(self):
        return len(self.root_trans)

    def joints(self, skeleton=None, return_rotations=False):
        skeleton = skeleton or default_skeleton()
        return forward_kinematics(skeleton, torch.as_tensor(self.pose), torch.as_tensor(self.betas),
                                  torch.as_tensor(self.root_orient), torch.as_tensor(self.root_trans),
                                  return_rotations=return_rotations)

    def to_dict(self):
        from .rotations import matrix_to_axis_angle
        return {
            "kind": self.kind, "category": self.category, "fps": self.fps, "seed": self.seed,
            "betas": self.betas.tolist(),
            "pose_aa": matrix_to_axis_angle(torch.as_tensor(self.pose)).numpy().tolist(),
            "root_orient_aa": matrix_to_axis_angle(torch.as_tensor(self.root_orient)).numpy().tolist(),
            "root_trans": self.root_trans.tolist(),
            "camera": self.camera.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        pose = axis_angle_to_matrix(torch.as_tensor(d["pose_aa"], dtype=DTYPE)).numpy()
        # restore exact identity in the root slot
        pose[:, 0] = np.eye(3)
        return cls(d["kind"], d["category"], d["fps"], np.asarray(d["betas"]), pose,
                   axis_angle_to_matrix(torch.as_tensor(d["root_orient_aa"], dtype=DTYPE)).numpy(),
                   np.asarray(d["root_trans"]), CameraModel.from_dict(d["camera"]), d.get("seed", 0))

    def slice(self, start, stop):
        return SyntheticClip(self.kind, self.category, self.fps, self.betas, self.pose[start:stop],
                             self.root_orient[start:stop], self.root_trans[start:stop],
                             self.camera.slice(start, stop), self.seed)


def finger_articulation_energy(clip):
    from .rotations import matrix_to_axis_angle
    aa = matrix_to_axis_angle(torch.as_tensor(clip.pose[:, 25:55])).numpy()
    return float(aa.var(axis=0).sum(axis=-1).mean())


def _aa(T):
    return np.zeros((T, NUM_JOINTS, 3))


def _finger_curl(aa, side, curl, spread=None):
    """Flex each finger chain; curl is (T, 5) or (5,) radians (index, middle, pinky, ring, thumb)."""
    base = 25 if side == "left" else 40
    sign = -1.0 if side == "left" else 1.0
    curl = np.broadcast_to(curl, (aa.shape[0], 5))
    for k in range(5):
        for s in range(3):
            j = base + 3 * k + s
            if k == 4:
                # thumb flexes across the palm
                aa[:, j, 1] += -sign * 0.6 * curl[:, k]
                aa[:, j, 2] += sign * 0.4 * curl[:, k]
            else:
                aa[:, j, 2] += sign * curl[:, k] * (1.0 if s else 0.7)
        if spread is not None and k < 4:
            aa[:, base + 3 * k, 1] += sign * spread[:, k] if spread.ndim == 2 else sign * spread[k]


def _arms_down(aa, rng, angle=None):
    a = angle if angle is not None else rng.uniform(1.1, 1.35)
    aa[:, _L_SHOULDER, 2] += -a
    aa[:, _R_SHOULDER, 2] += a
    aa[:, _L_ELBOW, 1] += rng.uniform(0.1, 0.3)
    aa[:, _R_ELBOW, 1] += -rng.uniform(0.1, 0.3)


def _look_at(eye, target):
    f = target - eye
    f = f / np.linalg.norm(f)
    right = np.cross(f, np.array([0.0, 1.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(f, right)
    R = np.stack([right, down, f])
    return R, -R @ eye


def make_camera(root_trans, heading, rng, T, fps, orbit=True, fx=1000.0, width=1280, height=960):
    """Camera tracking the subject's (linearly smoothed) pelvis path from the front."""
    dist = rng.uniform(2.8, 3.8)
    height_eye = rng.uniform(0.9, 1.5)
    az0 = heading + rng.uniform(-0.6, 0.6)
    rate = rng.uniform(-0.25, 0.25) if orbit else 0.0  # rad/s, bounded orbit
    t = np.arange(T)
    coeff = np.polyfit(t, root_trans, 1) if T > 1 else np.stack([np.zeros(3), root_trans[0]])
    centre = t[:, None] * coeff[0] + coeff[1]
    rots, trans = [], []
    for i in range(T):
        az = az0 + rate * i / fps
        eye = centre[i] + np.array([dist * np.sin(az), 0.0, dist * np.cos(az)])
        eye[1] = height_eye
        target = centre[i] + np.array([0.0, 0.15, 0.0])
        R, tr = _look_at(eye, target)
        rots.append(R)
        trans.append(tr)
    return CameraModel(fx, fx, width / 2.0, height / 2.0, width, height, np.array(rots), np.array(trans))


def _to_mats(aa):
    return axis_angle_to_matrix(torch.as_tensor(aa, dtype=DTYPE)).numpy()


def _standing_root(skeleton, pose, betas, heading, T):
    root_orient = np.broadcast_to(_to_mats(np.array([0.0, heading, 0.0])), (T, 3, 3)).copy()
    j = forward_kinematics(skeleton, torch.as_tensor(pose[:1]), torch.as_tensor(betas),
                           torch.as_tensor(root_orient[:1]), None).numpy()[0]
    lift = -min(j[LEFT_FOOT, 1], j[LEFT_ANKLE, 1] - 0.08)
    root_trans = np.tile(np.array([0.0, lift, 0.0]), (T, 1))
    return root_orient, root_trans


def _gait(phi, alpha, knee_amp):
    """Hip/knee angles over one step.  The swing leg finishes early and lands
    straight, so the stance leg's rising pelvis keeps the swing foot clear."""
    u = np.minimum(1.0, np.asarray(phi) / 0.8)
    stance_h = -alpha * np.cos(np.pi * phi)
    swing_h = alpha * np.cos(np.pi * u)
    swing_k = knee_amp * np.sin(np.pi * u) ** 2
    return stance_h, swing_h, swing_k


def _walk(skeleton, rng, T, fps, betas, heading):
    aa = _aa(T)
    _arms_down(aa, rng)
    _finger_curl(aa, "left", rng.uniform(0.1, 0.4, 5))
    _finger_curl(aa, "right", rng.uniform(0.1, 0.4, 5))
    alpha = rng.uniform(0.3, 0.42)
    period = rng.uniform(15.0, 20.0)  # frames per step
    knee_amp = rng.uniform(0.7, 1.0)
    s = np.arange(T) / period
    n = np.floor(s).astype(int)
    phi = s - n
    # even steps: left stance; hip flexion about +x moves the leg backward
    stance_h, swing_h, swing_k = _gait(phi, alpha, knee_amp)
    left_stance = n % 2 == 0
    lh = np.where(left_stance, stance_h, swing_h)
    rh = np.where(left_stance, swing_h, stance_h)
    lk = np.where(left_stance, 0.0, swing_k)
    rk = np.where(left_stance, swing_k, 0.0)
    aa[:, _L_HIP, 0], aa[:, _R_HIP, 0] = lh, rh
    aa[:, _L_KNEE, 0], aa[:, _R_KNEE, 0] = lk, rk
    # ankles cancel hip+knee so the foot keeps the root orientation and both
    # ankle and toe stay fixed while planted
    aa[:, LEFT_ANKLE, 0] = -(lh + lk)
    aa[:, RIGHT_ANKLE, 0] = -(rh + rk)
    aa[:, _L_SHOULDER, 0] += -0.6 * lh
    aa[:, _R_SHOULDER, 0] += -0.6 * rh
    for j in _SPINE:
        aa[:, j, 1] = 0.04 * np.cos(np.pi * s)
    pose = _to_mats(aa)
    pose[:, 0] = np.eye(3)
    R = _to_mats(np.array([0.0, heading, 0.0]))
    root_orient = np.broadcast_to(R, (T, 3, 3)).copy()

    local = forward_kinematics(skeleton, torch.as_tensor(pose), torch.as_tensor(betas),
                               torch.as_tensor(root_orient), None).numpy()
    ankles = {0: local[:, LEFT_ANKLE], 1: local[:, RIGHT_ANKLE]}

    def ankle_at(time, leg):
        # configuration at continuous time evaluated with the step that ends there
        nn_ = int(np.floor(time - 1e-9)) if time > 0 else 0
        ph = time - nn_
        a = np.zeros((1, NUM_JOINTS, 3))
        st_h, sw_h, sw_k = _gait(ph, alpha, knee_amp)
        stance_leg = nn_ % 2
        h = st_h if leg == stance_leg else sw_h
        k = 0.0 if leg == stance_leg else sw_k
        hip, knee, ank = (_L_HIP, _L_KNEE, LEFT_ANKLE) if leg == 0 else (_R_HIP, _R_KNEE, RIGHT_ANKLE)
        a[0, hip, 0], a[0, knee, 0], a[0, ank, 0] = h, k, -(h + k)
        p = _to_mats(a)
        p[:, 0] = np.eye(3)
        out = forward_kinematics(skeleton, torch.as_tensor(p), torch.as_tensor(betas), torch.as_tensor(R), None).numpy()
        return out[0, ank]

    foot_drop = (local[0, LEFT_FOOT] - local[0, LEFT_ANKLE])[1]
    plant = np.array([0.0, -foot_drop, 0.0])
    root_trans = np.zeros((T, 3))
    last_n = -1
    for t in range(T):
        if n[t] != last_n:
            if last_n >= 0:
                # hand over: the swing foot lands where it is at the step boundary
                boundary = float(n[t])
                root_b = plant - ankle_at(boundary, last_n % 2)
                plant = root_b + ankle_at(boundary, n[t] % 2)
            last_n = n[t]
        root_trans[t] = plant - ankles[n[t] % 2][t]
    return pose, root_orient, root_trans


def _wave(skeleton, rng, T, fps, betas, heading):
    aa = _aa(T)
    _arms_down(aa, rng)
    t = np.arange(T) / fps
    f = rng.uniform(1.0, 2.0)
    # raise the right arm and swing the forearm side to side
    aa[:, _R_SHOULDER, 2] = -rng.uniform(0.2, 0.5)
    aa[:, _R_ELBOW, 1] = -rng.uniform(1.2, 1.6)
    aa[:, _R_ELBOW, 2] = 0.5 * np.sin(2 * np.pi * f * t)
    aa[:, _R_WRIST, 2] = 0.3 * np.sin(2 * np.pi * f * t + 0.7)
    phase = rng.uniform(0, 2 * np.pi, 5)
    curl_r = 0.35 + 0.35 * np.sin(2 * np.pi * 1.5 * f * t[:, None] + phase)
    spread = 0.15 * np.sin(2 * np.pi * f * t[:, None] + phase[:4])
    _finger_curl(aa, "right", curl_r, spread)
    _finger_curl(aa, "left", 0.3 + 0.2 * np.sin(2 * np.pi * 0.5 * f * t[:, None] + phase))
    pose = _to_mats(aa)
    pose[:, 0] = np.eye(3)
    root_orient, root_trans = _standing_root(skeleton, pose, betas, heading, T)
    return pose, root_orient, root_trans


def _finger_wiggle(skeleton, rng, T, fps, betas, heading):
    aa = _aa(T)
    _arms_down(aa, rng, angle=rng.uniform(1.0, 1.2))
    t = np.arange(T) / fps
    # forearms forward in front of the torso
    aa[:, _L_SHOULDER, 0] = -rng.uniform(0.3, 0.6)
    aa[:, _R_SHOULDER, 0] = -rng.uniform(0.3, 0.6)
    aa[:, _L_ELBOW, 1] = rng.uniform(1.2, 1.6)
    aa[:, _R_ELBOW, 1] = -rng.uniform(1.2, 1.6)
    for side in ("left", "right"):
        freq = rng.uniform(0.7, 2.0, 5)
        phase = rng.uniform(0, 2 * np.pi, 5)
        amp = rng.uniform(0.4, 0.75, 5)
        curl = amp * (0.5 + 0.5 * np.sin(2 * np.pi * freq * t[:, None] + phase))
        spread = 0.2 * np.sin(2 * np.pi * freq[:4] * t[:, None] + phase[:4] + 1.0)
        _finger_curl(aa, side, curl, spread)
    pose = _to_mats(aa)
    pose[:, 0] = np.eye(3)
    root_orient, root_trans = _standing_root(skeleton, pose, betas, heading, T)
    return pose, root_orient, root_trans


def _reach(skeleton, rng, T, fps, betas, heading):
    aa = _aa(T)
    _arms_down(aa, rng)
    t = np.arange(T) / fps
    f = rng.uniform(0.3, 0.6)
    s = 0.5 - 0.5 * np.cos(2 * np.pi * f * t)
    side = rng.integers(2)
    sh, el = (_L_SHOULDER, _L_ELBOW) if side == 0 else (_R_SHOULDER, _R_ELBOW)
    aa[:, sh, 0] = -1.2 * s
    aa[:, el, 1] = (1 if side == 0 else -1) * 0.8 * (1 - s)
    for j in _SPINE:
        aa[:, j, 0] = 0.08 * s
    grasp = 0.2 + 0.6 * s[:, None] * np.ones(5)
    _finger_curl(aa, "left" if side == 0 else "right", grasp)
    _finger_curl(aa, "right" if side == 0 else "left", rng.uniform(0.1, 0.4, 5))
    pose = _to_mats(aa)
    pose[:, 0] = np.eye(3)
    root_orient, root_trans = _standing_root(skeleton, pose, betas, heading, T)
    return pose, root_orient, root_trans


def _idle(skeleton, rng, T, fps, betas, heading):
    aa = _aa(1)
    _arms_down(aa, rng)
    _finger_curl(aa, "left", rng.uniform(0.1, 0.5, 5))
    _finger_curl(aa, "right", rng.uniform(0.1, 0.5, 5))
    aa[0, _HEAD, 1] = rng.uniform(-0.2, 0.2)
    pose = np.repeat(_to_mats(aa), T, axis=0)
    pose[:, 0] = np.eye(3)
    root_orient, root_trans = _standing_root(skeleton, pose, betas, heading, T)
    return pose, root_orient, root_trans


_BUILDERS = {"walk": _walk, "wave": _wave, "finger-wiggle": _finger_wiggle, "reach": _reach, "idle": _idle}


def generate_clip(kind, seed, length=150, fps=30.0, orbit=None, skeleton=None):
    """Procedural clip of ``kind``; identical for identical (kind, seed, length)."""
    if kind not in _BUILDERS:
        raise ValueError(f"unknown clip kind {kind!r}; expected one of {KINDS}")
    skeleton = skeleton or default_skeleton()
    rng = np.random.default_rng([seed, KINDS.index(kind)])
    betas = np.clip(rng.normal(scale=0.6, size=NUM_BETAS), -2.0, 2.0)
    heading = rng.uniform(-np.pi, np.pi)
    pose, root_orient, root_trans = _BUILDERS[kind](skeleton, rng, length, fps, betas, heading)
    if orbit is None:
        orbit = kind != "idle" and bool(rng.random() < 0.5)
    camera = make_camera(root_trans, heading, rng, length, fps, orbit=orbit)
    return SyntheticClip(kind, CATEGORY[kind], fps, betas, pose, root_orient, root_trans, camera, seed)

"""Articulated 55-joint skeleton, forward kinematics, vertex proxy and camera projection."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import torch

from .rotations import matrix_to_axis_angle

DTYPE = torch.float64
NUM_JOINTS = 55
NUM_BETAS = 10
DEFAULT_SKELETON_PATH = Path(__file__).parent / "data" / "skeleton.json"

JOINT_NAMES = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "jaw", "left_eye", "right_eye",
]
_FINGERS = ["index", "middle", "pinky", "ring", "thumb"]
for _side in ("left", "right"):
    for _f in _FINGERS:
        JOINT_NAMES += [f"{_side}_{_f}{k}" for k in (1, 2, 3)]

PARENTS = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 15, 15, 15]
for _wrist in (20, 21):
    _base = len(PARENTS)
    for _k in range(5):
        PARENTS += [_wrist, _base + 3 * _k, _base + 3 * _k + 1]

BODY_JOINTS = list(range(22))
LEFT_HAND_JOINTS = list(range(25, 40))
RIGHT_HAND_JOINTS = list(range(40, 55))
HAND_JOINTS = LEFT_HAND_JOINTS + RIGHT_HAND_JOINTS
LEFT_WRIST, RIGHT_WRIST = 20, 21
PELVIS, HEAD = 0, 15
LEFT_HIP, RIGHT_HIP, LEFT_KNEE, RIGHT_KNEE = 1, 2, 4, 5
LEFT_ANKLE, RIGHT_ANKLE, LEFT_FOOT, RIGHT_FOOT = 7, 8, 10, 11
# body keypoint layout: 22 body joints followed by jaw and both eyes as head markers
BODY_KEYPOINTS = list(range(25))

# 21-point hand layout: wrist, then (base, mid, distal, tip) for thumb, index, middle, ring, pinky
_KP_FINGER_ORDER = ["thumb", "index", "middle", "ring", "pinky"]


def _hand_keypoint_layout(side_offset):
    chains = []
    for f in _KP_FINGER_ORDER:
        base = side_offset + 3 * _FINGERS.index(f)
        chains.append((base, base + 1, base + 2))
    return chains


def _template_offsets():
    off = np.zeros((NUM_JOINTS, 3))
    body = {
        1: (0.09, -0.08, 0.0), 2: (-0.09, -0.08, 0.0), 3: (0.0, 0.11, -0.01),
        4: (0.01, -0.38, 0.0), 5: (-0.01, -0.38, 0.0), 6: (0.0, 0.13, 0.01),
        7: (0.0, -0.40, 0.0), 8: (0.0, -0.40, 0.0), 9: (0.0, 0.06, 0.0),
        10: (0.01, -0.06, 0.12), 11: (-0.01, -0.06, 0.12), 12: (0.0, 0.21, -0.02),
        13: (0.07, 0.12, -0.01), 14: (-0.07, 0.12, -0.01), 15: (0.0, 0.09, 0.03),
        16: (0.11, 0.03, -0.01), 17: (-0.11, 0.03, -0.01), 18: (0.27, 0.0, -0.01),
        19: (-0.27, 0.0, -0.01), 20: (0.26, 0.0, 0.0), 21: (-0.26, 0.0, 0.0),
        22: (0.0, -0.02, 0.07), 23: (0.03, 0.07, 0.08), 24: (-0.03, 0.07, 0.08),
    }
    for j, v in body.items():
        off[j] = v
    # left hand, fingers point along +x in the T-pose
    fingers = {
        "index": [(0.09, 0.005, 0.025), (0.035, 0.0, 0.0), (0.025, 0.0, 0.0)],
        "middle": [(0.095, 0.005, 0.003), (0.038, 0.0, 0.0), (0.027, 0.0, 0.0)],
        "pinky": [(0.08, -0.003, -0.04), (0.025, 0.0, 0.0), (0.02, 0.0, 0.0)],
        "ring": [(0.088, 0.0, -0.02), (0.033, 0.0, 0.0), (0.025, 0.0, 0.0)],
        "thumb": [(0.03, -0.015, 0.03), (0.03, -0.005, 0.02), (0.025, 0.0, 0.015)],
    }
    for k, f in enumerate(_FINGERS):
        for s in range(3):
            off[25 + 3 * k + s] = fingers[f][s]
    return off


def _mirror_index(j):
    name = JOINT_NAMES[j]
    if name.startswith("left_"):
        return JOINT_NAMES.index("right_" + name[5:])
    if name.startswith("right_"):
        return JOINT_NAMES.index("left_" + name[6:])
    return j


def generate_skeleton_data(seed=0):
    """Procedural canonical skeleton: template proportions with seeded jitter.

    Left/right symmetry is kept by jittering the left side and mirroring,
    for both the offsets and the shape coefficients.
    The shape basis scales each bone radially; per-bone coefficients have
    L1 norm 0.07 so any |beta_i| <= 2 changes a bone length by at most 14%.
    """
    rng = np.random.default_rng(seed)
    off = _template_offsets()
    jitter = 1.0 + rng.uniform(-0.03, 0.03, size=NUM_JOINTS)
    for j in range(NUM_JOINTS):
        m = _mirror_index(j)
        if JOINT_NAMES[j].startswith("right_"):
            jitter[j] = jitter[m]
    off = off * jitter[:, None]
    for j in range(NUM_JOINTS):
        if JOINT_NAMES[j].startswith("right_"):
            off[j] = off[_mirror_index(j)] * np.array([-1.0, 1.0, 1.0])
    coeff = rng.normal(size=(NUM_JOINTS, NUM_BETAS))
    coeff = 0.07 * coeff / np.abs(coeff).sum(axis=1, keepdims=True)
    for j in range(NUM_JOINTS):
        if JOINT_NAMES[j].startswith("right_"):
            coeff[j] = coeff[_mirror_index(j)]
    shape_basis = off[:, :, None] * coeff[:, None, :]
    fingertips = [25 + 3 * k + 2 for k in range(5)] + [40 + 3 * k + 2 for k in range(5)]
    return {
        "parents": list(PARENTS),
        "rest_offsets": off.tolist(),
        "fingertips": fingertips,
        "shape_basis": shape_basis.tolist(),
    }


@dataclass
class SkeletonModel:
    parents: np.ndarray
    rest_offsets: np.ndarray
    shape_basis: np.ndarray
    fingertips: list
    joint_names: list = field(default_factory=lambda: list(JOINT_NAMES))

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.rest_offsets = np.asarray(self.rest_offsets, dtype=np.float64)
        self.shape_basis = np.asarray(self.shape_basis, dtype=np.float64)
        self.fingertips = [int(j) for j in self.fingertips]
        n = len(self.parents)
        if self.rest_offsets.shape != (n, 3) or self.shape_basis.shape != (n, 3, NUM_BETAS):
            raise ValueError("skeleton arrays have inconsistent shapes")
        if (self.parents == -1).sum() != 1 or self.parents[0] != -1:
            raise ValueError("skeleton must have a single root at index 0")
        if any(self.parents[j] >= j for j in range(1, n)):
            raise ValueError("parents must be topologically ordered")
        leaves = set(self.leaves())
        if not set(self.fingertips) <= leaves:
            raise ValueError("every fingertip must be a leaf joint")

    @property
    def joint_count(self):
        return len(self.parents)

    def leaves(self):
        has_child = set(int(p) for p in self.parents[1:])
        return [j for j in range(self.joint_count) if j not in has_child]

    @classmethod
    def from_dict(cls, d):
        return cls(d["parents"], d["rest_offsets"], d["shape_basis"], d["fingertips"])

    def to_dict(self):
        return {
            "parents": self.parents.tolist(),
            "rest_offsets": self.rest_offsets.tolist(),
            "fingertips": list(self.fingertips),
            "shape_basis": self.shape_basis.tolist(),
        }

    @classmethod
    def load(cls, path=DEFAULT_SKELETON_PATH):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @cached_property
    def levels(self):
        depth = np.zeros(self.joint_count, dtype=np.int64)
        for j in range(1, self.joint_count):
            depth[j] = depth[self.parents[j]] + 1
        return [np.flatnonzero(depth == d) for d in range(depth.max() + 1)]

    @cached_property
    def bone_children(self):
        return np.arange(1, self.joint_count)

    @cached_property
    def hand_keypoint_chains(self):
        return {"left": _hand_keypoint_layout(25), "right": _hand_keypoint_layout(40)}

    def offsets(self, betas):
        """Shape-deformed bone offsets, (..., 55, 3)."""
        betas = torch.as_tensor(betas, dtype=DTYPE)
        basis = torch.as_tensor(self.shape_basis, dtype=betas.dtype)
        rest = torch.as_tensor(self.rest_offsets, dtype=betas.dtype)
        return rest + torch.einsum("jck,...k->...jc", basis, betas)


_DEFAULT = None


def default_skeleton():
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = SkeletonModel.load()
    return _DEFAULT


def forward_kinematics(skeleton, pose, betas, root_rot=None, root_trans=None, return_rotations=False):
    """Chain parent transforms over shape-deformed offsets.

    pose: (..., 55, 3, 3) local rotations; betas: (..., 10) or (10,).
    root_rot (..., 3, 3) pre-multiplies the root's local rotation and
    root_trans (..., 3) places the root joint.
    Returns joints (..., 55, 3) and optionally global rotations (..., 55, 3, 3).
    """
    pose = torch.as_tensor(pose, dtype=DTYPE)
    batch = pose.shape[:-3]
    if pose.shape[-3] != skeleton.joint_count:
        raise ValueError(f"expected {skeleton.joint_count} joint rotations, got {pose.shape[-3]}")
    betas = torch.as_tensor(betas, dtype=pose.dtype)
    if betas.shape[-1] != NUM_BETAS:
        raise ValueError(f"expected {NUM_BETAS} shape coefficients")
    offsets = skeleton.offsets(betas)
    offsets = torch.broadcast_to(offsets, (*batch, skeleton.joint_count, 3))

    root_local = pose[..., 0, :, :]
    g_root = root_local if root_rot is None else torch.as_tensor(root_rot, dtype=pose.dtype) @ root_local
    p_root = (
        torch.zeros((*batch, 3), dtype=pose.dtype)
        if root_trans is None
        else torch.broadcast_to(torch.as_tensor(root_trans, dtype=pose.dtype), (*batch, 3))
    )
    g_root = torch.broadcast_to(g_root, (*batch, 3, 3))

    rots = [g_root[..., None, :, :]]
    pos = [p_root[..., None, :]]
    slot = np.zeros(skeleton.joint_count, dtype=np.int64)
    order = [0]
    count = 1
    for level in skeleton.levels[1:]:
        g_all = torch.cat(rots, dim=-3)
        p_all = torch.cat(pos, dim=-2)
        pidx = torch.as_tensor(slot[skeleton.parents[level]])
        g_par = g_all.index_select(-3, pidx)
        p_par = p_all.index_select(-2, pidx)
        lidx = torch.as_tensor(level)
        local = pose.index_select(-3, lidx)
        off = offsets.index_select(-2, lidx)
        rots.append(g_par @ local)
        pos.append(p_par + (g_par @ off[..., None])[..., 0])
        slot[level] = np.arange(count, count + len(level))
        order.extend(level.tolist())
        count += len(level)
    inv = np.empty(skeleton.joint_count, dtype=np.int64)
    inv[np.asarray(order)] = np.arange(skeleton.joint_count)
    inv_t = torch.as_tensor(inv)
    joints = torch.cat(pos, dim=-2).index_select(-2, inv_t)
    if return_rotations:
        return joints, torch.cat(rots, dim=-3).index_select(-3, inv_t)
    return joints


def regress_vertices(skeleton, joints):
    """Vertex proxy: 55 joints followed by the 54 bone midpoints (109 points)."""
    joints = torch.as_tensor(joints)
    child = torch.as_tensor(skeleton.bone_children)
    parent = torch.as_tensor(skeleton.parents[skeleton.bone_children])
    mids = 0.5 * (joints.index_select(-2, child) + joints.index_select(-2, parent))
    return torch.cat([joints, mids], dim=-2)


def hand_vertex_indices(skeleton, side=None):
    """Vertex-proxy rows belonging to the hands: finger joints and their incoming bone midpoints."""
    sides = ["left", "right"] if side is None else [side]
    out = []
    for s in sides:
        js = LEFT_HAND_JOINTS if s == "left" else RIGHT_HAND_JOINTS
        out += js + [skeleton.joint_count + (j - 1) for j in js]
    return out


def hand_keypoints(skeleton, joints, rotations, betas, side):
    """21 hand keypoints: wrist plus (base, mid, distal, tip) per finger.

    Fingertips extend the distal joint by 0.8 of the distal bone, expressed in
    the distal joint's frame.
    """
    wrist = LEFT_WRIST if side == "left" else RIGHT_WRIST
    offsets = skeleton.offsets(torch.as_tensor(betas, dtype=joints.dtype))
    pts = [joints[..., wrist, :]]
    for base, mid, distal in skeleton.hand_keypoint_chains[side]:
        tip_off = 0.8 * offsets[..., distal, :]
        tip = joints[..., distal, :] + (rotations[..., distal, :, :] @ tip_off[..., None])[..., 0]
        pts += [joints[..., base, :], joints[..., mid, :], joints[..., distal, :], tip]
    return torch.stack(pts, dim=-2)


@dataclass
class CameraModel:
    """Pinhole camera with per-frame world->camera extrinsics (x_c = R x_w + t).

    Camera axes follow the usual image convention: x right, y down, z forward.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotations: np.ndarray
    translations: np.ndarray

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 3, 3)
        self.translations = np.asarray(self.translations, dtype=np.float64).reshape(-1, 3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if len(self.rotations) != len(self.translations):
            raise ValueError("extrinsic rotation/translation counts differ")
        r = self.rotations
        ortho = np.abs(r @ np.swapaxes(r, -1, -2) - np.eye(3)).max() if len(r) else 0.0
        if ortho > 1e-6 or (len(r) and np.abs(np.linalg.det(r) - 1.0).max() > 1e-6):
            raise ValueError("extrinsic rotations must be proper orthonormal")

    def __len__(self):
        return len(self.rotations)

    @property
    def intrinsics(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def frame(self, t):
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.width, self.height,
                           self.rotations[t:t + 1], self.translations[t:t + 1])

    def slice(self, start, stop):
        return CameraModel(self.fx, self.fy, self.cx, self.cy, self.width, self.height,
                           self.rotations[start:stop], self.translations[start:stop])

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "rotations": self.rotations.tolist(), "translations": self.translations.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"], d["rotations"], d["translations"])


MIN_DEPTH = 1e-4


def project_camera_points(points_cam, fx, fy, cx, cy):
    """Pinhole projection of camera-frame points; returns (pixels, in_front)."""
    z = points_cam[..., 2]
    in_front = z > MIN_DEPTH
    z_safe = torch.where(in_front, z, torch.ones_like(z)) if isinstance(z, torch.Tensor) else np.where(in_front, z, 1.0)
    u = fx * points_cam[..., 0] / z_safe + cx
    v = fy * points_cam[..., 1] / z_safe + cy
    stack = torch.stack if isinstance(z, torch.Tensor) else np.stack
    return stack([u, v], -1), in_front


def world_to_camera(camera, points_world, frame=None):
    """Apply extrinsics. points_world: (T, N, 3) with one frame per extrinsic, or (N, 3) with ``frame``."""
    pts = np.asarray(points_world, dtype=np.float64)
    if frame is not None:
        return pts @ camera.rotations[frame].T + camera.translations[frame]
    return np.einsum("tij,tnj->tni", camera.rotations, pts) + camera.translations[:, None, :]


def project(camera, points_world, frame=0):
    """Project N world points through the camera at ``frame``; returns (N×2 pixels, N in-front flags)."""
    pc = world_to_camera(camera, points_world, frame=frame)
    return project_camera_points(pc, camera.fx, camera.fy, camera.cx, camera.cy)


def camera_angular_velocity(rot_t, rot_next, fps):
    """Body-frame angular velocity of the camera between two world->camera rotations (rad/s).

    The camera orientation is C = R^T, so the relative motion C_t^T C_{t+1}
    equals R_t R_{t+1}^T.
    """
    rel = np.asarray(rot_t) @ np.swapaxes(np.asarray(rot_next), -1, -2)
    return fps * matrix_to_axis_angle(torch.as_tensor(rel, dtype=DTYPE)).numpy()


def camera_angular_velocities(camera, fps):
    """Per-frame Ω for a whole trajectory; the last frame repeats the previous value."""
    n = len(camera)
    if n < 2:
        return np.zeros((n, 3))
    om = camera_angular_velocity(camera.rotations[:-1], camera.rotations[1:], fps)
    return np.concatenate([om, om[-1:]], axis=0)


def pose_to_axis_angle(pose):
    return matrix_to_axis_angle(torch.as_tensor(pose, dtype=DTYPE))

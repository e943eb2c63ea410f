"""Coupled camera/gravity-view motion state and conversions between its parts.

Conventions
-----------
* World and gravity-view (GV) frames are y-up; gravity defaults to (0, -1, 0).
* The GV frame is fixed per clip.  Its z axis is the horizontal direction from
  the reference camera's optical axis back toward the camera, so a level
  camera looking down world -z yields the identity GV frame.
* Root velocity is stored in metres per frame, in the root's own frame at t:
  ``p[t+1] = p[t] + R[t] @ v[t]``.  The last frame has zero velocity.
* The root slot of ``pose`` is identity; root orientation lives in the GV and
  camera orientation fields.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np
import torch

from .errors import GimbalDegenerateError
from .kinematics import (
    DTYPE, LEFT_ANKLE, LEFT_FOOT, LEFT_WRIST, RIGHT_ANKLE, RIGHT_FOOT, RIGHT_WRIST,
    forward_kinematics,
)
from .rotations import decode_rotation6d, encode_rotation6d

CONTACT_JOINTS = [LEFT_ANKLE, RIGHT_ANKLE, LEFT_FOOT, RIGHT_FOOT, LEFT_WRIST, RIGHT_WRIST]
DEFAULT_FPS = 30.0
# 2 mm/frame at 30 fps (6 cm/s)
CONTACT_SPEED_THRESHOLD = 0.002


@dataclass
class MotionState:
    """Per-frame motion state, tensors with leading (..., T) dims."""

    gv_orient: torch.Tensor  # (..., T, 6)
    root_vel: torch.Tensor  # (..., T, 3) m/frame, root-local
    pose: torch.Tensor  # (..., T, 55, 3, 3)
    betas: torch.Tensor  # (..., T, 10)
    cam_orient: torch.Tensor  # (..., T, 6)
    cam_trans: torch.Tensor  # (..., T, 3)
    contacts: torch.Tensor  # (..., T, 6) in [0, 1]

    @property
    def num_frames(self):
        return self.root_vel.shape[-2]

    def gv_rotmat(self):
        return decode_rotation6d(self.gv_orient, check=False)

    def cam_rotmat(self):
        return decode_rotation6d(self.cam_orient, check=False)

    def map(self, fn):
        return MotionState(**{f.name: fn(getattr(self, f.name)) for f in fields(self)})

    def slice(self, start, stop):
        # time is always the dim right before the per-frame payload
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            tdim = v.dim() - (4 if f.name == "pose" else 2)
            out[f.name] = v.narrow(tdim, start, stop - start)
        return MotionState(**out)

    def detach(self):
        return self.map(lambda v: v.detach())

    @staticmethod
    def stack(states):
        return MotionState(**{f.name: torch.stack([getattr(s, f.name) for s in states]) for f in fields(MotionState)})

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass
class GravityFrame:
    gravity: np.ndarray
    reference: np.ndarray  # world -> GV rotation

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=np.float64)
        self.reference = np.asarray(self.reference, dtype=np.float64)
        n = np.linalg.norm(self.gravity)
        if abs(n - 1.0) > 1e-9:
            raise ValueError("gravity direction must be a unit vector")

    @classmethod
    def from_camera(cls, camera, gravity=(0.0, -1.0, 0.0)):
        """Reference yaw from the first frame whose optical axis is not vertical."""
        gravity = np.asarray(gravity, dtype=np.float64)
        for r in camera.rotations:
            try:
                return cls(gravity, gravity_view_reference(r, gravity))
            except GimbalDegenerateError:
                continue
        # every frame looks straight up or down; keep world yaw
        return cls(gravity, gravity_view_reference(None, gravity))

    @classmethod
    def identity(cls):
        return cls(np.array([0.0, -1.0, 0.0]), np.eye(3))


def gravity_view_reference(extrinsic_rot, gravity=(0.0, -1.0, 0.0), fallback=None):
    """World->GV rotation: y opposite gravity, z = horizontal reversed optical axis.

    ``extrinsic_rot`` is a world->camera rotation.  When the optical axis is
    parallel to gravity the yaw is undefined: ``fallback`` (a previous
    reference) is returned if given, otherwise GimbalDegenerateError is raised.
    Passing ``None`` as the rotation builds the frame from world +z.
    """
    up = -np.asarray(gravity, dtype=np.float64)
    up = up / np.linalg.norm(up)
    if extrinsic_rot is None:
        back = np.array([0.0, 0.0, 1.0]) if abs(up[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    else:
        back = -np.asarray(extrinsic_rot, dtype=np.float64)[2]
    horiz = back - back.dot(up) * up
    n = np.linalg.norm(horiz)
    if n < 1e-6:
        if fallback is not None:
            return np.asarray(fallback, dtype=np.float64)
        else:
            raise GimbalDegenerateError("camera optical axis is parallel to gravity")
    z = horiz / n
    x = np.cross(up, z)
    return np.stack([x, up, z])


def camera_to_gravity_view(cam_orient, extrinsic_rot, frame):
    """Root orientation in camera coordinates -> GV orientation (rotation matrices)."""
    cam_orient = torch.as_tensor(cam_orient, dtype=DTYPE)
    r_wc = torch.as_tensor(extrinsic_rot, dtype=DTYPE)
    ref = torch.as_tensor(frame.reference, dtype=DTYPE)
    return ref @ r_wc.transpose(-1, -2) @ cam_orient


def gravity_view_to_camera(gv_orient, extrinsic_rot, frame):
    gv_orient = torch.as_tensor(gv_orient, dtype=DTYPE)
    r_wc = torch.as_tensor(extrinsic_rot, dtype=DTYPE)
    ref = torch.as_tensor(frame.reference, dtype=DTYPE)
    return r_wc @ ref.transpose(-1, -2) @ gv_orient


def integrate_trajectory(gv_rotmat, root_vel, initial_position=None, frame=None):
    """Accumulate root-local velocities into world root transforms.

    Returns (world rotations (..., T, 3, 3), world positions (..., T, 3)).
    Without ``frame`` the GV frame is taken as the world frame.
    """
    gv_rotmat = torch.as_tensor(gv_rotmat, dtype=DTYPE)
    root_vel = torch.as_tensor(root_vel, dtype=DTYPE)
    if frame is not None:
        ref = torch.as_tensor(frame.reference, dtype=DTYPE)
        rot = ref.transpose(-1, -2) @ gv_rotmat
    else:
        rot = gv_rotmat
    step = (rot @ root_vel[..., None])[..., 0]
    p0 = torch.zeros(step.shape[:-2] + (3,), dtype=DTYPE) if initial_position is None else torch.as_tensor(initial_position, dtype=DTYPE)
    disp = torch.cumsum(step, dim=-2)
    pos = torch.cat([p0[..., None, :].expand(*step.shape[:-2], 1, 3), p0[..., None, :] + disp[..., :-1, :]], dim=-2)
    return rot, pos


def contact_labels(joint_positions, fps=DEFAULT_FPS, threshold=CONTACT_SPEED_THRESHOLD):
    """1 where a joint's world speed is below threshold on either adjacent step.

    Taking the slower of the forward and backward displacement labels every
    frame of a planted interval, including both of its endpoints.
    ``threshold`` is in m/frame at 30 fps and rescaled for other rates.
    """
    x = np.asarray(joint_positions, dtype=np.float64)
    thr = threshold * DEFAULT_FPS / fps
    if x.shape[0] < 2:
        return np.ones(x.shape[:-1])
    step = np.linalg.norm(np.diff(x, axis=0), axis=-1)
    fwd = np.concatenate([step, step[-1:]], axis=0)
    bwd = np.concatenate([step[:1], step], axis=0)
    return (np.minimum(fwd, bwd) < thr).astype(np.float64)


def derive_ground_truth_state(skeleton, pose, root_orient, root_trans, betas, camera,
                              gravity=(0.0, -1.0, 0.0), fps=DEFAULT_FPS, frame=None):
    """Training targets for a world-space motion seen through ``camera``.

    pose: (T, 55, 3, 3) local rotations (root slot identity); root_orient
    (T, 3, 3) and root_trans (T, 3) are world root transforms.  Returns the
    MotionState and the GravityFrame used.
    """
    pose = torch.as_tensor(pose, dtype=DTYPE)
    root_orient = torch.as_tensor(root_orient, dtype=DTYPE)
    root_trans = torch.as_tensor(root_trans, dtype=DTYPE)
    T = pose.shape[0]
    if not (root_orient.shape[0] == root_trans.shape[0] == len(camera) == T):
        raise ValueError("world motion and camera trajectory lengths differ")
    if frame is None:
        frame = GravityFrame.from_camera(camera, gravity)
    ref = torch.as_tensor(frame.reference, dtype=DTYPE)
    r_wc = torch.as_tensor(camera.rotations, dtype=DTYPE)
    t_wc = torch.as_tensor(camera.translations, dtype=DTYPE)

    gv = ref @ root_orient
    disp = root_trans[1:] - root_trans[:-1]
    vel = (root_orient[:-1].transpose(-1, -2) @ disp[..., None])[..., 0]
    vel = torch.cat([vel, torch.zeros((1, 3), dtype=DTYPE)], dim=0)
    cam_rot = r_wc @ root_orient
    cam_trans = (r_wc @ root_trans[..., None])[..., 0] + t_wc

    betas = torch.as_tensor(betas, dtype=DTYPE)
    joints = forward_kinematics(skeleton, pose, betas, root_orient, root_trans)
    contacts = contact_labels(joints[:, CONTACT_JOINTS].numpy(), fps=fps)

    state = MotionState(
        gv_orient=encode_rotation6d(gv),
        root_vel=vel,
        pose=pose.clone(),
        betas=betas.expand(T, -1).clone(),
        cam_orient=encode_rotation6d(cam_rot),
        cam_trans=cam_trans,
        contacts=torch.as_tensor(contacts, dtype=DTYPE),
    )
    return state, frame


def camera_frame_joints(skeleton, state):
    """FK with the camera-frame root (Γ^c, τ^c): joints and global rotations."""
    return forward_kinematics(skeleton, state.pose, state.betas, state.cam_rotmat(), state.cam_trans,
                              return_rotations=True)


def local_joints(skeleton, state, orient="camera"):
    """Root-centred joints with the root rotated by the camera or GV orientation."""
    rot = state.cam_rotmat() if orient == "camera" else state.gv_rotmat()
    return forward_kinematics(skeleton, state.pose, state.betas, rot, None, return_rotations=True)

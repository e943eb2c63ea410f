"""JSON file formats for motions, clips, observations and manifests.

Motion file::

    {"format": "wholebody-motion", "version": 1, "fps": 30.0,
     "betas": [10 floats],
     "frames": [{"pose_aa": [[3] * 55], "gv_orient6d": [6], "root_vel": [3],
                 "cam_orient6d": [6], "cam_trans": [3], "contacts": [6]}, ...]}

Poses are stored as axis-angle; orientations keep the 6D form the network
predicts.  Root velocity is in metres per frame, root-local.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import WholeBodyError
from .kinematics import DTYPE
from .observations import ObservationSeq
from .representation import MotionState
from .rotations import axis_angle_to_matrix, matrix_to_axis_angle
from .synthetic import SyntheticClip

MOTION_FORMAT = "wholebody-motion"
MOTION_VERSION = 1


class FormatError(WholeBodyError, ValueError):
    """A file parsed as JSON but does not hold the expected structure."""


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, sort_keys=True))
    tmp.replace(path)


def read_json(path):
    with open(path) as f:
        return json.load(f)


def motion_to_dict(state, fps):
    pose_aa = matrix_to_axis_angle(state.pose.detach()).numpy()
    frames = []
    for t in range(state.num_frames):
        frames.append({
            "pose_aa": pose_aa[t].tolist(),
            "gv_orient6d": state.gv_orient[t].detach().tolist(),
            "root_vel": state.root_vel[t].detach().tolist(),
            "cam_orient6d": state.cam_orient[t].detach().tolist(),
            "cam_trans": state.cam_trans[t].detach().tolist(),
            "contacts": state.contacts[t].detach().tolist(),
        })
    betas = state.betas.detach().mean(0) if state.num_frames else torch.zeros(10, dtype=DTYPE)
    return {"format": MOTION_FORMAT, "version": MOTION_VERSION, "fps": float(fps),
            "betas": betas.tolist(), "frames": frames}


def motion_from_dict(d):
    if d.get("format") != MOTION_FORMAT:
        raise FormatError("not a motion file")
    if d.get("version") != MOTION_VERSION:
        raise FormatError(f"unsupported motion file version {d.get('version')}")
    frames = d["frames"]
    T = len(frames)

    def col(name, width):
        return torch.as_tensor(np.asarray([f[name] for f in frames], dtype=np.float64).reshape(T, width), dtype=DTYPE)

    pose = axis_angle_to_matrix(torch.as_tensor(np.asarray([f["pose_aa"] for f in frames], dtype=np.float64).reshape(T, 55, 3)))
    pose[:, 0] = torch.eye(3, dtype=DTYPE)
    betas = torch.as_tensor(d["betas"], dtype=DTYPE).expand(T, -1).clone()
    state = MotionState(col("gv_orient6d", 6), col("root_vel", 3), pose, betas,
                        col("cam_orient6d", 6), col("cam_trans", 3), col("contacts", 6))
    return state, float(d["fps"])


def save_motion(path, state, fps):
    write_json(path, motion_to_dict(state, fps))


def load_motion(path):
    return motion_from_dict(read_json(path))


def save_clip(path, clip):
    write_json(path, clip.to_dict())


def load_clip(path):
    return SyntheticClip.from_dict(read_json(path))


def save_observations(path, obs, crop=None, intrinsics=None):
    d = {"observations": obs.to_dict()}
    if crop is not None:
        d["crop"] = crop.to_dict()
    if intrinsics is not None:
        d["intrinsics"] = list(map(float, intrinsics))
    write_json(path, d)


def load_observations(path):
    d = read_json(path)
    return ObservationSeq.from_dict(d["observations"]), d

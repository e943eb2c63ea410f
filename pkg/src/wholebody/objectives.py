"""Training losses.

Distances are in millimetres (L1), rotations use the geodesic angle in
radians.  Frame-wise terms are averaged over frames and clips, so they do
not depend on frame order.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import torch
import torch.nn.functional as F

from .augmentation import CONFIDENCE_THRESHOLD
from .kinematics import DTYPE, HAND_JOINTS, hand_keypoints, project_camera_points, regress_vertices
from .representation import integrate_trajectory, local_joints
from .rotations import geodesic_angle

MM = 1000.0
_NON_HAND = [j for j in range(55) if j not in set(HAND_JOINTS)]


@dataclass
class LossWeights:
    w_pose: float = 1.0
    w_joints3d: float = 1.0
    w_verts: float = 0.5
    w_shape: float = 1.0
    w_traj: float = 1.0
    w_contact: float = 0.1
    w_hand_pose_multiplier: float = 2.0
    w_tip: float = 0.0
    w_vis: float = 1.0
    w_temporal: float = 0.1
    stage: str = "I"

    def __post_init__(self):
        for k, v in asdict(self).items():
            if k != "stage" and v < 0:
                raise ValueError(f"loss weight {k} must be non-negative")
        if self.stage not in ("I", "II"):
            raise ValueError("stage must be 'I' or 'II'")

    @classmethod
    def for_stage(cls, stage, **overrides):
        base = cls(stage="I") if stage == "I" else cls(stage="II", w_hand_pose_multiplier=4.0, w_tip=1.0)
        return replace(base, **overrides)

    def scaled(self, c):
        d = {k: (v * c if k not in ("stage", "w_hand_pose_multiplier") else v) for k, v in asdict(self).items()}
        return LossWeights(**d)


def _geo(r1, r2):
    return geodesic_angle(r1, r2)


def _l1(a, b):
    return (a - b).abs().sum(-1)


def reconstruction_loss(pred, target, skeleton, weights, pred_fk=None, target_fk=None):
    """Weighted reconstruction objective; returns (total, breakdown dict of unweighted terms).

    Joint and vertex terms compare root-centred joints oriented by the camera
    orientation field, so they isolate articulation and shape from the
    global trajectory (which has its own terms).
    """
    pj, pr = pred_fk if pred_fk is not None else local_joints(skeleton, pred)
    tj, tr = target_fk if target_fk is not None else local_joints(skeleton, target)
    del pr, tr
    pose_err = _geo(pred.pose, target.pose)
    terms = {
        "pose_body": pose_err[..., _NON_HAND].mean(),
        "pose_hand": pose_err[..., HAND_JOINTS].mean(),
        "joints_body": _l1(pj[..., _NON_HAND, :], tj[..., _NON_HAND, :]).mean() * MM,
        "joints_hand": _l1(pj[..., HAND_JOINTS, :], tj[..., HAND_JOINTS, :]).mean() * MM,
        "verts": _l1(regress_vertices(skeleton, pj), regress_vertices(skeleton, tj)).mean() * MM,
        "shape": _l1(pred.betas, target.betas).mean(),
        "gv_orient": _geo(pred.gv_rotmat(), target.gv_rotmat()).mean(),
        "cam_orient": _geo(pred.cam_rotmat(), target.cam_rotmat()).mean(),
        "root_vel": _l1(pred.root_vel, target.root_vel).mean() * MM,
        "cam_trans": _l1(pred.cam_trans, target.cam_trans).mean() * MM,
        "contact": F.binary_cross_entropy(pred.contacts.clamp(1e-7, 1 - 1e-7), target.contacts),
    }
    w = weights
    m = w.w_hand_pose_multiplier
    total = (w.w_pose * (terms["pose_body"] + m * terms["pose_hand"])
             + w.w_joints3d * (terms["joints_body"] + m * terms["joints_hand"])
             + w.w_verts * terms["verts"]
             + w.w_shape * terms["shape"]
             + w.w_traj * (terms["gv_orient"] + terms["cam_orient"] + terms["root_vel"] + terms["cam_trans"])
             + w.w_contact * terms["contact"])
    return total, terms


def fingertip_loss(pred_joints, target_joints, tips, reduction="sum"):
    """L1 over the fingertip/distal set, in mm.

    ``reduction="sum"`` sums over frames and joints; ``"mean"`` averages
    over frames, batch entries and fingertips, which puts it on the same
    per-joint scale as the other joint terms.
    """
    tips = torch.as_tensor(list(tips))
    d = _l1(pred_joints.index_select(-2, tips), target_joints.index_select(-2, tips)) * MM
    total = d.sum()
    if reduction == "sum":
        return total
    if reduction == "mean":
        return total / d.numel()
    raise ValueError(f"unknown reduction {reduction!r}")


def visibility_weights(conf, hand_visible, in_front, threshold=CONFIDENCE_THRESHOLD):
    """Detector confidence where reliable, else 0 (low confidence, masked hand, behind camera)."""
    conf = torch.as_tensor(conf, dtype=DTYPE)
    keep = (conf >= threshold) & torch.as_tensor(in_front, dtype=torch.bool)
    if hand_visible is not None:
        keep = keep & (torch.as_tensor(hand_visible) > 0)[..., None]
    return torch.where(keep, conf, torch.zeros_like(conf))


def visibility_reprojection_loss(points_cam, intrinsics, detected, weights):
    """Confidence-weighted L1 reprojection error normalised by the total weight.

    Returns (loss, has_evidence).  With no weight the loss is a constant 0
    detached from the graph, so it contributes no gradient.
    """
    w = torch.as_tensor(weights, dtype=DTYPE)
    wsum = w.sum()
    if not bool(wsum > 0):
        return torch.zeros((), dtype=DTYPE), False
    # intrinsics (4,) or (B, 4): fx, fy, cx, cy, broadcast over the point dims
    intr = torch.as_tensor(intrinsics, dtype=DTYPE)
    intr = intr.reshape(intr.shape[:-1] + (1,) * (points_cam.dim() - intr.dim()) + (4,))
    px, _ = project_camera_points(points_cam, *intr.unbind(-1))
    det = torch.as_tensor(detected, dtype=DTYPE)
    # zero-weight entries must not leak NaN/inf gradients
    err = torch.where(w > 0, _l1(px, det), torch.zeros_like(w))
    return (w * err).sum() / wsum, True


def hand_reprojection(skeleton, pred, obs, camera_fk=None):
    """L_vis over both hands' 21 keypoints, with camera-frame joints from (Γ^c, τ^c)."""
    from .representation import camera_frame_joints

    joints, rots = camera_fk if camera_fk is not None else camera_frame_joints(skeleton, pred)
    pts, det, wts = [], [], []
    for side, key in (("left", "lh"), ("right", "rh")):
        kp = hand_keypoints(skeleton, joints, rots, pred.betas, side)
        pts.append(kp)
        det.append(obs[f"{key}_kp"])
        in_front = (kp[..., 2] > 1e-4).detach()
        wts.append(visibility_weights(obs[f"{key}_conf"] * obs[f"{key}_valid"], obs[f"{key}_visible"], in_front))
    intr = obs["intrinsics"]
    return visibility_reprojection_loss(torch.cat(pts, -2), intr, torch.cat(det, -2), torch.cat(wts, -1))


def root_positions(state):
    """GV-frame root trajectory integrated from the predicted velocities."""
    return integrate_trajectory(state.gv_rotmat(), state.root_vel)[1]


def temporal_regularizer(joints, root_pos, target_joints=None, target_root=None):
    """Sum of first-difference L1 of joints plus second-difference L1 of the root, per frame, in mm.

    joints (..., T, J, 3), root_pos (..., T, 3).  Both sums are divided by
    T.  Given targets, the differences are taken of the residuals, which
    penalises temporal error rather than motion itself.
    """
    if target_joints is not None:
        joints = joints - target_joints
    if target_root is not None:
        root_pos = root_pos - target_root
    T = joints.shape[-3]
    first = (joints[..., 1:, :, :] - joints[..., :-1, :, :]).abs().sum((-1, -2, -3)) / T
    if T >= 3:
        acc = root_pos[..., 2:, :] - 2 * root_pos[..., 1:-1, :] + root_pos[..., :-2, :]
        second = acc.abs().sum((-1, -2)) / T
    else:
        second = torch.zeros_like(first)
    return ((first + second) * MM).mean()


def total_loss(pred, target, skeleton, weights, obs=None, tip_reduction="mean"):
    """All terms for a batch; returns (scalar, flat breakdown of floats-able tensors)."""
    pfk = local_joints(skeleton, pred)
    tfk = local_joints(skeleton, target)
    rec, terms = reconstruction_loss(pred, target, skeleton, weights, pfk, tfk)
    total = rec
    terms = dict(terms)
    tips = skeleton.fingertips
    terms["tip"] = fingertip_loss(pfk[0], tfk[0], tips, reduction=tip_reduction)
    total = total + weights.w_tip * terms["tip"]
    terms["temporal"] = temporal_regularizer(pfk[0], root_positions(pred), tfk[0], root_positions(target))
    total = total + weights.w_temporal * terms["temporal"]
    if obs is not None and weights.w_vis > 0:
        # camera-frame FK differs from the camera-oriented local FK only by τ^c
        cam_fk = (pfk[0] + pred.cam_trans[..., None, :], pfk[1])
        vis, has = hand_reprojection(skeleton, pred, obs, camera_fk=cam_fk)
        terms["vis"] = vis
        terms["vis_has_evidence"] = torch.tensor(float(has), dtype=DTYPE)
        total = total + weights.w_vis * vis
    terms["total"] = total
    return total, terms

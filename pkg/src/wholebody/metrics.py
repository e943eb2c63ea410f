"""Evaluation metrics: aligned/unaligned position errors and temporal derivative errors.

Inputs are numpy arrays of joint positions in metres with leading time axis.
Position errors are reported in mm, velocity error in mm/s, acceleration
error in m/s^2 and jitter in m/s^3.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateAlignmentError, UndefinedMetricError
from .kinematics import LEFT_HAND_JOINTS, LEFT_WRIST, PELVIS, RIGHT_HAND_JOINTS, RIGHT_WRIST, hand_vertex_indices

MM = 1000.0
_RANK_TOL = 1e-9


@dataclass
class Similarity:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points):
        return self.scale * np.asarray(points) @ self.rotation.T + self.translation


def _umeyama(src, tgt):
    """Batched similarity fit over the last two axes (..., N, 3)."""
    mu_s = src.mean(-2, keepdims=True)
    mu_t = tgt.mean(-2, keepdims=True)
    xs, xt = src - mu_s, tgt - mu_t
    n = src.shape[-2]
    cov = np.swapaxes(xt, -1, -2) @ xs / n
    u, d, vt = np.linalg.svd(cov)
    sign = np.sign(np.linalg.det(u @ vt))
    sign = np.where(sign == 0, 1.0, sign)
    s = np.ones(d.shape)
    s[..., -1] = sign
    rot = u @ (s[..., :, None] * vt)
    var_s = (xs ** 2).sum((-1, -2)) / n
    scale = (d * s).sum(-1) / var_s
    trans = mu_t[..., 0, :] - scale[..., None] * (rot @ mu_s[..., 0, :, None])[..., 0]
    return scale, rot, trans


def _check_spread(src):
    if src.shape[-2] < 3:
        raise DegenerateAlignmentError("similarity alignment needs at least 3 points")
    xs = src - src.mean(-2, keepdims=True)
    sv = np.linalg.svd(xs, compute_uv=False)
    if np.any(sv[..., 1] <= _RANK_TOL * np.maximum(sv[..., 0], 1.0)):
        raise DegenerateAlignmentError("source points are collinear or coincident")


def procrustes_align(source, target):
    """Similarity transform (scale, rotation, translation) minimising the squared distance to target."""
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if src.shape != tgt.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("expected matching (N, 3) point sets")
    _check_spread(src)
    scale, rot, trans = _umeyama(src, tgt)
    return Similarity(float(scale), rot, trans)


def aligned(source, target):
    """Per-set Procrustes-aligned copy of ``source`` (..., N, 3)."""
    src = np.asarray(source, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    _check_spread(src)
    scale, rot, trans = _umeyama(src, tgt)
    return scale[..., None, None] * src @ np.swapaxes(rot, -1, -2) + trans[..., None, :]


def _err(a, b):
    return np.linalg.norm(a - b, axis=-1).mean()


def vertex_proxy(skeleton, joints):
    """Numpy twin of the joint + bone-midpoint vertex proxy."""
    joints = np.asarray(joints, dtype=np.float64)
    child = skeleton.bone_children
    mids = 0.5 * (joints[..., child, :] + joints[..., skeleton.parents[child], :])
    return np.concatenate([joints, mids], axis=-2)


def position_metrics(pred, gt, skeleton, subset="all"):
    """PA-PVE, PVE, PA-MPJPE and root-aligned MPJPE (mm) for (T, 55, 3) joints.

    "all" aligns on the pelvis.  "hands" evaluates each hand's joints and
    vertices on its own, aligning on that hand's wrist, and averages the two.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth shapes differ")
    pv, gv = vertex_proxy(skeleton, pred), vertex_proxy(skeleton, gt)
    if subset == "all":
        groups = [(list(range(pred.shape[-2])), list(range(pv.shape[-2])), PELVIS)]
    elif subset == "hands":
        groups = [(LEFT_HAND_JOINTS, hand_vertex_indices(skeleton, "left"), LEFT_WRIST),
                  (RIGHT_HAND_JOINTS, hand_vertex_indices(skeleton, "right"), RIGHT_WRIST)]
    else:
        raise ValueError(f"unknown subset {subset!r}")
    out = {"pa_pve": 0.0, "pve": 0.0, "pa_mpjpe": 0.0, "mpjpe": 0.0}
    for joints, verts, root in groups:
        pr, gr = pred[..., root:root + 1, :], gt[..., root:root + 1, :]
        pj, gj = pred[..., joints, :], gt[..., joints, :]
        pvs, gvs = pv[..., verts, :], gv[..., verts, :]
        out["pve"] += _err(pvs - pr, gvs - gr)
        out["mpjpe"] += _err(pj - pr, gj - gr)
        out["pa_pve"] += _err(aligned(pvs, gvs), gvs)
        out["pa_mpjpe"] += _err(aligned(pj, gj), gj)
    return {k: v * MM / len(groups) for k, v in out.items()}


def finite_difference(x, order, fps):
    """Time derivative of ``x`` (T, ...) of order 1-3.

    Central stencils inside the clip, one-sided stencils of the same order at
    the boundaries.
    """
    x = np.asarray(x, dtype=np.float64)
    T = x.shape[0]
    h = 1.0 / fps
    if T < order + 1:
        raise UndefinedMetricError(f"order-{order} derivative needs at least {order + 1} frames, got {T}")
    out = np.empty_like(x)
    if order == 1:
        out[1:-1] = (x[2:] - x[:-2]) / (2 * h)
        out[0] = (x[1] - x[0]) / h
        out[-1] = (x[-1] - x[-2]) / h
    elif order == 2:
        out[1:-1] = (x[2:] - 2 * x[1:-1] + x[:-2]) / h ** 2
        out[0] = (x[2] - 2 * x[1] + x[0]) / h ** 2
        out[-1] = (x[-1] - 2 * x[-2] + x[-3]) / h ** 2
    elif order == 3:
        out[2:-2] = (x[4:] - 2 * x[3:-1] + 2 * x[1:-3] - x[:-4]) / (2 * h ** 3)
        for t in sorted({0, 1, T - 2, T - 1}):
            s = min(t, T - 4) if t < 2 else max(t - 3, 0)
            out[t] = (x[s + 3] - 3 * x[s + 2] + 3 * x[s + 1] - x[s]) / h ** 3
    else:
        raise ValueError("derivative order must be 1, 2 or 3")
    return out


def temporal_metrics(pred, gt, fps):
    """MPJVE (mm/s), Accel (m/s^2) and Jitter (m/s^3) for (T, J, 3) joints."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape[0] < 4:
        raise UndefinedMetricError("temporal metrics need at least 4 frames")
    dv = finite_difference(pred, 1, fps) - finite_difference(gt, 1, fps)
    da = finite_difference(pred, 2, fps) - finite_difference(gt, 2, fps)
    jit = finite_difference(pred, 3, fps)
    return {
        "mpjve": float(np.linalg.norm(dv, axis=-1).mean() * MM),
        "accel": float(np.linalg.norm(da, axis=-1).mean()),
        "jitter": float(np.linalg.norm(jit, axis=-1).mean()),
    }


def _hand_local(joints):
    return np.concatenate([joints[..., LEFT_HAND_JOINTS, :] - joints[..., LEFT_WRIST:LEFT_WRIST + 1, :],
                           joints[..., RIGHT_HAND_JOINTS, :] - joints[..., RIGHT_WRIST:RIGHT_WRIST + 1, :]], -2)


@dataclass
class MetricsReport:
    all: dict
    hands: dict
    fps: float
    frames: int

    def to_dict(self):
        return asdict(self)

    def flat(self):
        row = {"fps": self.fps, "frames": self.frames}
        for subset in ("all", "hands"):
            row.update({f"{subset}_{k}": v for k, v in getattr(self, subset).items()})
        return row


def evaluate(pred, gt, skeleton, fps):
    """Full report; hand temporal metrics use wrist-relative finger joints."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    res = {}
    for subset in ("all", "hands"):
        m = {k: float(v) for k, v in position_metrics(pred, gt, skeleton, subset).items()}
        if pred.shape[0] >= 4:
            p, g = (pred, gt) if subset == "all" else (_hand_local(pred), _hand_local(gt))
            m.update(temporal_metrics(p, g, fps))
        res[subset] = m
    return MetricsReport(res["all"], res["hands"], float(fps), int(pred.shape[0]))

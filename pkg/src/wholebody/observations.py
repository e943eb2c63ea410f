"""Synthetic per-frame observations: 2D keypoints, crop features, box tokens, camera rotation rate.

This stands in for frozen keypoint detectors and image feature extractors.
The "crop features" are a fixed seeded random linear map of clean geometry
(normalised 2D layout plus root- or wrist-relative 3D positions) with additive
noise, so they carry detail the 2D keypoints lose under masking.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np
import torch
from scipy.ndimage import gaussian_filter1d

from .augmentation import CONFIDENCE_THRESHOLD, AugmentConfig, CropSpec, full_body_crop, recompute_hand_visibility
from .kinematics import (
    BODY_KEYPOINTS, DTYPE, camera_angular_velocities, default_skeleton, forward_kinematics,
    hand_keypoints, project_camera_points,
)

BODY_KP = len(BODY_KEYPOINTS)
HAND_KP = 21
FEATURE_SEED = 7301
BOX_PAD = 0.1


@dataclass
class NoiseConfig:
    pixel_sigma: float = 1.5
    conf_scale: float = 6.0  # confidence = exp(-|noise| / conf_scale)
    dropout: float = 0.03  # chance a detection is replaced by a low-confidence miss
    feature_sigma: float = 0.02
    body_feature_dim: int = 128
    hand_feature_dim: int = 128


@dataclass
class ObservationSeq:
    """Per-frame observations for one clip (numpy arrays, leading T)."""

    body_kp: np.ndarray  # (T, 25, 2) pixels
    body_kp_norm: np.ndarray  # (T, 25, 2) in [-1, 1] within the crop
    body_conf: np.ndarray  # (T, 25)
    body_valid: np.ndarray  # (T, 25) bool
    body_feat: np.ndarray  # (T, Fb)
    body_box: np.ndarray  # (T, 3) box token
    omega: np.ndarray  # (T, 3) rad/s
    lh_kp: np.ndarray
    lh_kp_norm: np.ndarray  # within the hand box
    lh_conf: np.ndarray
    lh_valid: np.ndarray
    lh_feat: np.ndarray
    lh_box: np.ndarray
    lh_visible: np.ndarray  # (T,) {0,1}
    rh_kp: np.ndarray
    rh_kp_norm: np.ndarray
    rh_conf: np.ndarray
    rh_valid: np.ndarray
    rh_feat: np.ndarray
    rh_box: np.ndarray
    rh_visible: np.ndarray

    def __len__(self):
        return len(self.body_kp)

    def slice(self, start, stop):
        return ObservationSeq(**{f.name: getattr(self, f.name)[start:stop] for f in fields(self)})

    def copy(self):
        return ObservationSeq(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def to_dict(self):
        return {f.name: getattr(self, f.name).tolist() for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        out = {}
        for f in fields(cls):
            arr = np.asarray(d[f.name])
            if f.name.endswith("_valid"):
                arr = arr.astype(bool)
            out[f.name] = arr
        return cls(**out)

    def to_torch(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = torch.as_tensor(v) if v.dtype == bool else torch.as_tensor(v, dtype=DTYPE)
        return out

    @staticmethod
    def batch(seqs):
        """Stack clips into a dict of (B, T, ...) tensors."""
        return {f.name: torch.stack([s.to_torch()[f.name] for s in seqs]) for f in fields(ObservationSeq)}


def encode_keypoints(kp_norm, mask, weight, bias, missing, out_weight, out_bias):
    """Sum of per-joint embeddings followed by a linear map.

    kp_norm (..., J, 2), mask (..., J) bool, weight (J, 2, e), bias / missing
    (J, e), out_weight (d, e), out_bias (d,).  Masked joints contribute their
    learned missing embedding instead of a projection of the coordinates.
    """
    proj = torch.einsum("...jc,jce->...je", kp_norm, weight) + bias
    emb = torch.where(mask[..., None], proj, missing.expand_as(proj))
    return emb.sum(-2) @ out_weight.T + out_bias


def build_box_token(center, size, fx, fy, cx, cy):
    """Focal-normalised (centre x, centre y, size); zero size gives the all-zero masked token."""
    center = np.asarray(center, dtype=np.float64)
    size = np.asarray(size, dtype=np.float64)
    tok = np.stack([(center[..., 0] - cx) / fx, (center[..., 1] - cy) / fy, size / fx], -1)
    return np.where((size > 0)[..., None], tok, 0.0)


def _fit_boxes(kp, mask, pad=BOX_PAD):
    """Square boxes (centre, side) around masked keypoints; side 0 where nothing is visible."""
    T = kp.shape[0]
    centre = np.zeros((T, 2))
    side = np.zeros(T)
    for t in range(T):
        p = kp[t, mask[t]]
        if len(p) == 0:
            continue
        lo, hi = p.min(0), p.max(0)
        centre[t] = 0.5 * (lo + hi)
        side[t] = (hi - lo).max() * (1.0 + 2 * pad)
    return centre, side


def _normalise(kp, lo, hi):
    span = np.maximum(hi - lo, 1e-6)
    return 2.0 * (kp - lo) / span - 1.0


_FEATURE_MAPS = {}


def feature_map(in_dim, out_dim, tag):
    key = (in_dim, out_dim, tag)
    if key not in _FEATURE_MAPS:
        rng = np.random.default_rng([FEATURE_SEED, in_dim, out_dim, {"body": 0, "left": 1, "right": 2}[tag]])
        _FEATURE_MAPS[key] = rng.normal(size=(out_dim, in_dim)) / np.sqrt(in_dim)
    return _FEATURE_MAPS[key]


def _detect(rng, proj, in_front, crop, noise):
    """Noisy detections with confidences; misses and out-of-crop points get U(0, 0.3)."""
    n = rng.normal(scale=noise.pixel_sigma, size=proj.shape) if noise.pixel_sigma > 0 else np.zeros(proj.shape)
    obs = proj + n
    conf = np.exp(-np.linalg.norm(n, axis=-1) / noise.conf_scale)
    low = rng.uniform(0.0, 0.3, size=conf.shape)
    miss = rng.random(conf.shape) < noise.dropout
    outside = ~in_front | ~crop.contains(obs)
    conf = np.where(miss | outside, low, conf)
    conf = np.clip(conf, 0.0, 1.0)
    valid = (conf >= CONFIDENCE_THRESHOLD) & ~outside
    return obs, conf, valid


def synthesize_observations(clip, crop=None, noise=None, seed=0, skeleton=None, augment=None):
    """Observation sequence for a clip seen through ``crop`` (full-body box if None)."""
    skeleton = skeleton or default_skeleton()
    noise = noise or NoiseConfig()
    augment = augment or AugmentConfig()
    rng = np.random.default_rng(seed)
    cam = clip.camera
    joints, rots = forward_kinematics(skeleton, torch.as_tensor(clip.pose), torch.as_tensor(clip.betas),
                                      torch.as_tensor(clip.root_orient), torch.as_tensor(clip.root_trans),
                                      return_rotations=True)
    hands_w = {s: hand_keypoints(skeleton, joints, rots, torch.as_tensor(clip.betas), s).numpy() for s in ("left", "right")}
    joints = joints.numpy()
    R, t = cam.rotations, cam.translations

    def to_cam(p):
        return np.einsum("tij,tnj->tni", R, p) + t[:, None, :]

    body_c = to_cam(joints[:, BODY_KEYPOINTS])
    body_px, body_front = project_camera_points(body_c, cam.fx, cam.fy, cam.cx, cam.cy)
    if crop is None:
        crop = full_body_crop(body_px[body_front], image_size=(cam.width, cam.height))

    body_kp, body_conf, body_valid = _detect(rng, body_px, body_front, crop, noise)
    lo, hi = crop.rect[:2], crop.rect[2:]
    body_norm = _normalise(body_kp, lo, hi)
    centre, side = _fit_boxes(body_kp, body_valid)
    body_box = build_box_token(centre, side, cam.fx, cam.fy, cam.cx, cam.cy)

    root_c = body_c[:, :1]
    geo_b = np.concatenate([_normalise(body_px, lo, hi).reshape(len(body_px), -1),
                            (body_c[:, :22] - root_c).reshape(len(body_px), -1)], -1)
    feat_noise = rng.normal(scale=noise.feature_sigma, size=(len(geo_b), noise.body_feature_dim))
    if crop.blur and crop.blur_sigma > 0:
        # anti-aliasing blur acts on the noise channel of the stand-in features
        feat_noise = gaussian_filter1d(feat_noise, crop.blur_sigma, axis=-1, mode="wrap")
    body_feat = geo_b @ feature_map(geo_b.shape[-1], noise.body_feature_dim, "body").T + feat_noise

    out = dict(body_kp=body_kp, body_kp_norm=body_norm, body_conf=body_conf, body_valid=body_valid,
               body_feat=body_feat, body_box=body_box, omega=camera_angular_velocities(cam, clip.fps))
    tight_boxes, visible = [], []
    for side_name, key in (("left", "lh"), ("right", "rh")):
        hc = to_cam(hands_w[side_name])
        px, front = project_camera_points(hc, cam.fx, cam.fy, cam.cx, cam.cy)
        kp, conf, valid = _detect(rng, px, front, crop, noise)
        vis, tight = recompute_hand_visibility(crop, kp, np.where(valid, conf, 0.0), augment)
        tight_boxes.append(tight)
        visible.append(vis)
        h_centre, h_side = _fit_boxes(kp, valid)
        h_side = np.where(vis > 0, h_side, 0.0)
        half = 0.5 * np.maximum(h_side, 1e-6)[:, None, None]
        kp_norm = np.where(vis[:, None, None] > 0, (kp - h_centre[:, None]) / half, 0.0)
        box = build_box_token(h_centre, h_side, cam.fx, cam.fy, cam.cx, cam.cy)
        px_norm = np.where(vis[:, None, None] > 0, (px - h_centre[:, None]) / half, 0.0)
        geo = np.concatenate([px_norm.reshape(len(px), -1), 5.0 * (hc - hc[:, :1]).reshape(len(px), -1)], -1)
        fn = rng.normal(scale=noise.feature_sigma, size=(len(geo), noise.hand_feature_dim))
        feat = geo @ feature_map(geo.shape[-1], noise.hand_feature_dim, side_name).T + fn
        masked = vis == 0
        feat[masked] = 0.0
        valid = valid & ~masked[:, None]
        out.update({f"{key}_kp": kp, f"{key}_kp_norm": kp_norm, f"{key}_conf": conf, f"{key}_valid": valid,
                    f"{key}_feat": feat, f"{key}_box": box, f"{key}_visible": vis})
    crop = replace(crop, hand_visible=np.stack(visible, -1), hand_boxes=np.stack(tight_boxes, 1))
    return ObservationSeq(**out), crop

"""Close-up view synthesis and hand visibility recomputation.

A close-up view is a single crop rectangle shared by every frame of a clip.
Its lower edge follows the upper-body ratio: upright clips are cut at the
hips, seated ones keep the knees.  Rectangles are closed: a keypoint lying
exactly on an edge counts as inside.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import UndefinedRatioError
from .kinematics import HEAD, LEFT_HIP, LEFT_KNEE, RIGHT_HIP, RIGHT_KNEE

CONFIDENCE_THRESHOLD = 0.55
MIN_HAND_KEYPOINTS = 5
MIN_HAND_BOX = 20.0


@dataclass
class AugmentConfig:
    r_split: float = 0.5
    margin: float = 0.05  # fraction of body height
    scale_range: tuple = (0.85, 1.25)
    translation_frac: float = 0.10
    blur_ratio: float = 2.0
    net_side: int = 256
    mix_ratio: float = 0.4
    confidence_threshold: float = CONFIDENCE_THRESHOLD
    min_hand_keypoints: int = MIN_HAND_KEYPOINTS
    min_hand_box: float = MIN_HAND_BOX


@dataclass
class CropSpec:
    rect: np.ndarray  # (x0, y0, x1, y1) pixels, closed
    base_rect: np.ndarray = None  # before scale/translation perturbation
    scale: float = 1.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(2))
    blur: bool = False
    blur_sigma: float = 0.0
    closeup: bool = False
    ratio: float = float("nan")
    hand_visible: np.ndarray = None  # (T, 2) {0,1}: left, right
    hand_boxes: np.ndarray = None  # (T, 2, 4) tight boxes of reliable in-crop keypoints

    def __post_init__(self):
        self.rect = np.asarray(self.rect, dtype=np.float64)
        if self.base_rect is None:
            self.base_rect = self.rect.copy()
        self.translation = np.asarray(self.translation, dtype=np.float64)

    @property
    def side(self):
        return float(max(self.rect[2] - self.rect[0], self.rect[3] - self.rect[1]))

    def contains(self, points):
        p = np.asarray(points)
        x0, y0, x1, y1 = self.rect
        return (p[..., 0] >= x0) & (p[..., 0] <= x1) & (p[..., 1] >= y0) & (p[..., 1] <= y1)

    def to_dict(self):
        d = {
            "crop": self.rect.tolist(), "base_crop": self.base_rect.tolist(), "scale": self.scale,
            "translation": self.translation.tolist(), "blur": bool(self.blur), "blur_sigma": self.blur_sigma,
            "closeup": bool(self.closeup), "ratio": None if np.isnan(self.ratio) else self.ratio,
        }
        if self.hand_visible is not None:
            d["v_lh"] = self.hand_visible[:, 0].astype(int).tolist()
            d["v_rh"] = self.hand_visible[:, 1].astype(int).tolist()
            d["hand_boxes"] = self.hand_boxes.tolist()
        return d


def full_body_crop(keypoints, valid=None, pad=0.1, image_size=None):
    """Clip-level box around all visible body keypoints, padded on each side."""
    kp = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
    if valid is not None:
        kp = kp[np.asarray(valid).reshape(-1)]
    lo, hi = kp.min(0), kp.max(0)
    ext = (hi - lo) * pad
    lo, hi = lo - ext, hi + ext
    if image_size is not None:
        lo = np.maximum(lo, 0.0)
        hi = np.minimum(hi, np.asarray(image_size, dtype=np.float64))
    return CropSpec(np.concatenate([lo, hi]))


def upper_body_ratio(keypoints, valid=None):
    """Head-to-hip distance over the visible vertical extent of the body."""
    kp = np.asarray(keypoints, dtype=np.float64)
    valid = np.ones(len(kp), bool) if valid is None else np.asarray(valid, bool)
    if not (valid[HEAD] and valid[LEFT_HIP] and valid[RIGHT_HIP]):
        raise UndefinedRatioError("head or hip keypoints are not visible")
    ys = kp[valid, 1]
    h_body = ys.max() - ys.min()
    if h_body < 1.0:
        raise UndefinedRatioError("visible body height is below one pixel")
    hip = 0.5 * (kp[LEFT_HIP] + kp[RIGHT_HIP])
    return float(np.linalg.norm(kp[HEAD] - hip) / h_body)


def synthesize_closeup(keypoints, valid=None, seed=0, config=None, image_size=None):
    """Clip-level close-up crop from body keypoints (T, 25, 2).

    The perturbation (scale about the centre, then translation) is drawn
    once and applies to every frame.
    """
    config = config or AugmentConfig()
    kp = np.asarray(keypoints, dtype=np.float64)
    T = kp.shape[0]
    valid = np.ones(kp.shape[:2], bool) if valid is None else np.asarray(valid, bool)
    ratios, heights = [], []
    for t in range(T):
        try:
            ratios.append(upper_body_ratio(kp[t], valid[t]))
        except UndefinedRatioError:
            continue
        ys = kp[t, valid[t], 1]
        heights.append(ys.max() - ys.min())
    if not ratios:
        raise UndefinedRatioError("no frame has a defined upper-body ratio")
    r_up = float(np.median(ratios))
    margin = config.margin * float(np.median(heights))
    standing = r_up >= config.r_split

    hip_y = 0.5 * (kp[:, LEFT_HIP, 1] + kp[:, RIGHT_HIP, 1])
    knee_y = np.maximum(kp[:, LEFT_KNEE, 1], kp[:, RIGHT_KNEE, 1])
    level = hip_y if standing else knee_y
    bottom = float(np.max(level[valid[:, LEFT_HIP] & valid[:, RIGHT_HIP]])) + margin
    above = valid & (kp[..., 1] <= bottom)
    xs, ys = kp[above, 0], kp[above, 1]
    top = float(ys.min()) - 2.0 * margin
    x0, x1 = float(xs.min()) - margin, float(xs.max()) + margin
    base = np.array([x0, top, x1, bottom])

    rng = np.random.default_rng(seed)
    s = rng.uniform(*config.scale_range)
    w, h = (x1 - x0) * s, (bottom - top) * s
    cx, cy = 0.5 * (x0 + x1), 0.5 * (top + bottom)
    shift = rng.uniform(-config.translation_frac, config.translation_frac, size=2) * np.array([w, h])
    rect = np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2]) + np.tile(shift, 2)
    if image_size is not None:
        rect[[0, 2]] = np.clip(rect[[0, 2]], 0.0, image_size[0])
        rect[[1, 3]] = np.clip(rect[[1, 3]], 0.0, image_size[1])
    factor = max(rect[2] - rect[0], rect[3] - rect[1]) / config.net_side
    blur = factor > config.blur_ratio
    return CropSpec(rect, base, float(s), shift, bool(blur), 0.5 * (factor - 1.0) if blur else 0.0,
                    closeup=True, ratio=r_up)


def recompute_hand_visibility(crop, hand_keypoints, confidences, config=None):
    """Visibility flag and tight box per frame for one hand.

    N = confident keypoints inside the crop, s = max side of their tight box
    (source pixels).  Visible iff N >= min_hand_keypoints and s >= min_hand_box.
    """
    config = config or AugmentConfig()
    kp = np.asarray(hand_keypoints, dtype=np.float64)
    conf = np.asarray(confidences, dtype=np.float64)
    single = kp.ndim == 2
    if single:
        kp, conf = kp[None], conf[None]
    reliable = (conf >= config.confidence_threshold) & crop.contains(kp)
    n = reliable.sum(-1)
    boxes = np.zeros((kp.shape[0], 4))
    sizes = np.zeros(kp.shape[0])
    for t in np.flatnonzero(n > 0):
        p = kp[t, reliable[t]]
        boxes[t] = np.concatenate([p.min(0), p.max(0)])
        sizes[t] = (p.max(0) - p.min(0)).max()
    vis = ((n >= config.min_hand_keypoints) & (sizes >= config.min_hand_box)).astype(np.int64)
    if single:
        return vis[0], boxes[0]
    return vis, boxes


def with_hand_visibility(crop, left, right, config=None):
    """Attach recomputed visibility for both hands; left/right are (keypoints, confidences)."""
    vl, bl = recompute_hand_visibility(crop, *left, config=config)
    vr, br = recompute_hand_visibility(crop, *right, config=config)
    return replace(crop, hand_visible=np.stack([vl, vr], -1), hand_boxes=np.stack([bl, br], 1))


def config_to_dict(config):
    return asdict(config)

"""Hand-aware temporal network.

Per frame, a body token is the sum of four stream encoders (keypoints, crop
feature, box token, camera rotation rate).  Each hand has its own token from
keypoint/feature/box streams; the pair is mapped by a fusion MLP and added to
the body token.  A transformer with rotary relative positions and a local
attention window contextualises the fused tokens, and linear heads decode the
motion state.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .augmentation import CONFIDENCE_THRESHOLD
from .kinematics import DTYPE, NUM_BETAS, NUM_JOINTS
from .observations import BODY_KP, HAND_KP, encode_keypoints
from .representation import CONTACT_JOINTS, MotionState
from .rotations import decode_rotation6d

CHECKPOINT_FORMAT = "wholebody-checkpoint"
CHECKPOINT_VERSION = 1
METADATA_KEY = "wholebody"
_IDENTITY_6D = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
# an upright subject facing an x-right/y-down/z-forward camera: diag(1, -1, -1)
_FACING_CAMERA_6D = (1.0, 0.0, 0.0, 0.0, -1.0, 0.0)


@dataclass
class ModelConfig:
    width: int = 128
    layers: int = 4
    heads: int = 4
    window: int = 120
    ffn_mult: int = 4
    body_feature_dim: int = 128
    hand_feature_dim: int = 128
    rope_base: float = 10000.0
    seed: int = 0

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")
        if (self.width // self.heads) % 2:
            raise ValueError("head width must be even for rotary positions")
        if self.window < 1:
            raise ValueError("attention window must be >= 1")


class MLP(nn.Module):
    """Two-layer perceptron; ``owner.linear_mode`` swaps GELU for identity."""

    def __init__(self, d_in, d_hidden, d_out, owner=None):
        super().__init__()
        self.fc1 = nn.Linear(d_in, d_hidden)
        self.fc2 = nn.Linear(d_hidden, d_out)
        self._owner = [owner]

    def forward(self, x):
        h = self.fc1(x)
        owner = self._owner[0]
        if owner is None or not owner.linear_mode:
            h = F.gelu(h)
        return self.fc2(h)


class KeypointEncoder(nn.Module):
    def __init__(self, num_joints, width, owner=None):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(num_joints, 2, width) / math.sqrt(2 * num_joints))
        self.bias = nn.Parameter(torch.zeros(num_joints, width))
        self.missing = nn.Parameter(torch.randn(num_joints, width) * 0.5 / math.sqrt(num_joints))
        self.proj = nn.Linear(width, width)
        self.out = nn.Linear(width, width)
        self._owner = [owner]

    def forward(self, kp_norm, mask):
        h = encode_keypoints(kp_norm, mask, self.weight, self.bias, self.missing, self.proj.weight, self.proj.bias)
        owner = self._owner[0]
        if owner is None or not owner.linear_mode:
            h = F.gelu(h)
        return self.out(h)


def rotary(x, positions, base):
    """Rotate channel pairs of (..., T, D) by position-dependent angles."""
    d = x.shape[-1]
    inv = 1.0 / (base ** (torch.arange(0, d, 2, dtype=x.dtype) / d))
    ang = positions.to(x.dtype)[:, None] * inv[None, :]
    cos, sin = torch.cos(ang), torch.sin(ang)
    x1, x2 = x[..., 0::2], x[..., 1::2]
    return torch.stack([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1).flatten(-2)


def local_attention_mask(T, window):
    idx = torch.arange(T)
    return (idx[:, None] - idx[None, :]).abs() <= window / 2


class TemporalBlock(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        d = cfg.width
        self.heads = cfg.heads
        self.rope_base = cfg.rope_base
        self.norm1 = nn.LayerNorm(d)
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)
        self.norm2 = nn.LayerNorm(d)
        self.ffn = nn.Sequential(nn.Linear(d, cfg.ffn_mult * d), nn.GELU(), nn.Linear(cfg.ffn_mult * d, d))

    def attention(self, x, positions, mask):
        *lead, T, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        hd = d // self.heads

        def split(t):
            return t.reshape(*lead, T, self.heads, hd).transpose(-2, -3)

        q, k, v = split(q), split(k), split(v)
        q = rotary(q, positions, self.rope_base)
        k = rotary(k, positions, self.rope_base)
        scores = (q @ k.transpose(-1, -2)) / math.sqrt(hd)
        scores = scores.masked_fill(~mask, float("-inf"))
        out = torch.softmax(scores, dim=-1) @ v
        return self.proj(out.transpose(-2, -3).reshape(*lead, T, d))

    def forward(self, x, positions, mask):
        x = x + self.attention(self.norm1(x), positions, mask)
        return x + self.ffn(self.norm2(x))


class TemporalEncoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.window = cfg.window
        self.blocks = nn.ModuleList(TemporalBlock(cfg) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(cfg.width)

    def forward(self, z, offset=0):
        T = z.shape[-2]
        positions = torch.arange(T) + offset
        mask = local_attention_mask(T, self.window)
        h = z
        for blk in self.blocks:
            h = blk(h, positions, mask)
        return self.norm(h)


class MotionHead(nn.Module):
    SIZES = {"pose": NUM_JOINTS * 6, "betas": NUM_BETAS, "gv_orient": 6, "root_vel": 3,
             "cam_orient": 6, "cam_trans": 3, "contacts": len(CONTACT_JOINTS)}

    def __init__(self, width):
        super().__init__()
        self.heads = nn.ModuleDict({k: nn.Linear(width, n) for k, n in self.SIZES.items()})
        with torch.no_grad():
            for k in ("pose", "gv_orient", "cam_orient"):
                self.heads[k].weight.mul_(0.1)
                self.heads[k].bias.copy_(torch.tensor(_IDENTITY_6D).repeat(self.SIZES[k] // 6))
            self.heads["cam_orient"].bias.copy_(torch.tensor(_FACING_CAMERA_6D))
            self.heads["cam_trans"].bias.copy_(torch.tensor([0.0, 0.0, 3.3]))

    def forward(self, h):
        raw = {k: head(h) for k, head in self.heads.items()}
        pose6 = raw["pose"].reshape(*h.shape[:-1], NUM_JOINTS, 6)
        pose = decode_rotation6d(pose6, check=False)
        # root orientation is carried by the GV and camera fields
        eye = torch.eye(3, dtype=pose.dtype).expand(*pose.shape[:-3], 1, 3, 3)
        pose = torch.cat([eye, pose[..., 1:, :, :]], dim=-3)
        betas = raw["betas"].mean(dim=-2, keepdim=True).expand_as(raw["betas"])
        return MotionState(
            gv_orient=raw["gv_orient"],
            root_vel=0.01 * raw["root_vel"],
            pose=pose,
            betas=betas,
            cam_orient=raw["cam_orient"],
            cam_trans=raw["cam_trans"],
            contacts=torch.sigmoid(raw["contacts"]),
        )


class WholeBodyModel(nn.Module):
    def __init__(self, cfg=None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        self.linear_mode = False  # test hook: disables encoder/fusion nonlinearities
        self.fusion_enabled = True  # test hook: False drops the hand residual
        d = cfg.width
        g = torch.Generator().manual_seed(cfg.seed)
        with _seeded(g):
            self.body_kp = KeypointEncoder(BODY_KP, d, self)
            self.body_feat = MLP(cfg.body_feature_dim, d, d, self)
            self.body_box = MLP(3, d, d, self)
            self.omega = MLP(3, d, d, self)
            self.lh_kp = KeypointEncoder(HAND_KP, d, self)
            self.rh_kp = KeypointEncoder(HAND_KP, d, self)
            # shared across hands
            self.hand_feat = MLP(cfg.hand_feature_dim, d, d, self)
            self.hand_box = MLP(3, d, d, self)
            self.fusion = MLP(2 * d, d, d, self)
            self.temporal = TemporalEncoder(cfg)
            self.head = MotionHead(d)
        self.to(DTYPE)

    # -- tokens -------------------------------------------------------------
    @staticmethod
    def _mask(valid, conf):
        return valid & (conf >= CONFIDENCE_THRESHOLD)

    def body_token(self, obs):
        mask = self._mask(obs["body_valid"], obs["body_conf"])
        return (self.body_kp(obs["body_kp_norm"], mask) + self.body_feat(obs["body_feat"])
                + self.body_box(obs["body_box"]) + self.omega(obs["omega"]))

    def hand_token(self, obs, side):
        key = "lh" if side == "left" else "rh"
        vis = obs[f"{key}_visible"] > 0
        mask = self._mask(obs[f"{key}_valid"], obs[f"{key}_conf"]) & vis[..., None]
        kp = obs[f"{key}_kp_norm"]
        feat = torch.where(vis[..., None], obs[f"{key}_feat"], torch.zeros_like(obs[f"{key}_feat"]))
        box = torch.where(vis[..., None], obs[f"{key}_box"], torch.zeros_like(obs[f"{key}_box"]))
        enc = self.lh_kp if side == "left" else self.rh_kp
        return enc(kp, mask) + self.hand_feat(feat) + self.hand_box(box)

    def residual_fuse(self, z_b, z_lh, z_rh):
        if not self.fusion_enabled:
            return z_b
        return z_b + self.fusion(torch.cat([z_lh, z_rh], dim=-1))

    def tokens(self, obs, body_only=False):
        z_b = self.body_token(obs)
        if body_only:
            return z_b
        return self.residual_fuse(z_b, self.hand_token(obs, "left"), self.hand_token(obs, "right"))

    def forward(self, obs, offset=0, body_only=False):
        z = self.tokens(obs, body_only=body_only)
        h = self.temporal(z, offset=offset)
        return self.head(h)

    # -- persistence --------------------------------------------------------
    def save(self, path, extra=None):
        from safetensors.numpy import save_file

        tensors = {k: v.detach().cpu().numpy().copy() for k, v in self.state_dict().items()}
        header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "config": asdict(self.cfg),
                  "extra": extra or {}}
        # one metadata key: safetensors writes multi-key metadata in hash order
        save_file(tensors, str(path), metadata={METADATA_KEY: json.dumps(header, sort_keys=True)})

    @classmethod
    def load(cls, path):
        from safetensors import safe_open

        with safe_open(str(path), framework="numpy") as f:
            meta = f.metadata() or {}
            header = json.loads(meta[METADATA_KEY]) if METADATA_KEY in meta else {}
            if header.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
            if header.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {header.get('version')}")
            state = {k: torch.as_tensor(f.get_tensor(k)) for k in f.keys()}
        model = cls(ModelConfig(**header["config"]))
        model.load_state_dict(state)
        return model


class _seeded:
    """Route default parameter initialisation through a private generator."""

    def __init__(self, generator):
        self.generator = generator

    def __enter__(self):
        self.state = torch.random.get_rng_state()
        torch.random.manual_seed(int(torch.randint(0, 2**62, (1,), generator=self.generator)))
        return self

    def __exit__(self, *exc):
        torch.random.set_rng_state(self.state)


def parameter_count(model):
    return sum(p.numel() for p in model.parameters())


def numpy_state(model):
    return {k: v.detach().numpy().copy() for k, v in model.state_dict().items()}


def states_equal(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)

"""Rotation parameterizations: continuous 6D, axis-angle and rotation matrices.

All functions accept arbitrary leading batch dimensions and operate on torch
tensors so they can sit inside the training graph.
"""
import math

import torch

from .errors import DegenerateRotationError

_EPS = 1e-12


def _as_tensor(x):
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def decode_rotation6d(r6d, check=True):
    """Map 6D vectors (first two matrix columns) to rotation matrices.

    Gram-Schmidt on the two columns; the third column is their cross product.
    With ``check`` set, parallel or zero columns raise
    :class:`DegenerateRotationError` instead of silently producing NaNs.
    """
    r6d = _as_tensor(r6d)
    a1 = r6d[..., 0:3]
    a2 = r6d[..., 3:6]
    n1 = torch.linalg.vector_norm(a1, dim=-1, keepdim=True)
    if check:
        cross_norm = torch.linalg.vector_norm(torch.cross(a1, a2, dim=-1), dim=-1)
        scale = n1[..., 0] * torch.linalg.vector_norm(a2, dim=-1)
        if bool((n1 < 1e-9).any()) or bool((cross_norm <= 1e-9 * torch.clamp(scale, min=1e-300)).any()):
            raise DegenerateRotationError("6D rotation has zero or parallel columns")
    b1 = a1 / torch.clamp(n1, min=_EPS)
    a2p = a2 - (b1 * a2).sum(-1, keepdim=True) * b1
    b2 = a2p / torch.clamp(torch.linalg.vector_norm(a2p, dim=-1, keepdim=True), min=_EPS)
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def encode_rotation6d(mat):
    mat = _as_tensor(mat)
    return torch.cat([mat[..., :, 0], mat[..., :, 1]], dim=-1)


def _skew(v):
    zero = torch.zeros_like(v[..., 0])
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    return torch.stack(
        [
            torch.stack([zero, -z, y], -1),
            torch.stack([z, zero, -x], -1),
            torch.stack([-y, x, zero], -1),
        ],
        dim=-2,
    )


def axis_angle_to_matrix(aa):
    """Rodrigues formula, with a Taylor branch near zero angle."""
    aa = _as_tensor(aa)
    theta2 = (aa * aa).sum(-1)
    small = theta2 < 1e-12
    theta2_safe = torch.where(small, torch.ones_like(theta2), theta2)
    theta = torch.sqrt(theta2_safe)
    a = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(theta)) / theta2_safe)
    K = _skew(aa)
    eye = torch.eye(3, dtype=aa.dtype, device=aa.device).expand(K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def matrix_to_axis_angle(mat):
    """Log map of SO(3), robust at 0 and pi.

    Uses the quaternion route (Shepperd's method) so angles near pi keep full
    precision.
    """
    q = matrix_to_quaternion(_as_tensor(mat))
    w = q[..., 0:1]
    v = q[..., 1:]
    # fix hemisphere so the angle lies in [0, pi]
    sign = torch.where(w < 0, -torch.ones_like(w), torch.ones_like(w))
    w = w * sign
    v = v * sign
    vn = torch.linalg.vector_norm(v, dim=-1, keepdim=True)
    angle = 2.0 * torch.atan2(vn, w)
    small = vn < 1e-12
    scale = torch.where(small, 2.0 / torch.clamp(w, min=_EPS), angle / torch.where(small, torch.ones_like(vn), vn))
    return v * scale


def matrix_to_quaternion(mat):
    """(w, x, y, z) quaternion of a rotation matrix."""
    m = mat
    m00, m11, m22 = m[..., 0, 0], m[..., 1, 1], m[..., 2, 2]
    trace = m00 + m11 + m22
    cands = torch.stack(
        [
            torch.stack([1.0 + trace, m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]], -1),
            torch.stack([m[..., 2, 1] - m[..., 1, 2], 1.0 + m00 - m11 - m22, m[..., 0, 1] + m[..., 1, 0], m[..., 0, 2] + m[..., 2, 0]], -1),
            torch.stack([m[..., 0, 2] - m[..., 2, 0], m[..., 0, 1] + m[..., 1, 0], 1.0 - m00 + m11 - m22, m[..., 1, 2] + m[..., 2, 1]], -1),
            torch.stack([m[..., 1, 0] - m[..., 0, 1], m[..., 0, 2] + m[..., 2, 0], m[..., 1, 2] + m[..., 2, 1], 1.0 - m00 - m11 + m22], -1),
        ],
        dim=-2,
    )
    diag = torch.stack([1.0 + trace, 1.0 + m00 - m11 - m22, 1.0 - m00 + m11 - m22, 1.0 - m00 - m11 + m22], -1)
    best = diag.argmax(-1)
    idx = best[..., None, None].expand(*best.shape, 1, 4)
    q = torch.gather(cands, -2, idx)[..., 0, :]
    d = torch.gather(diag, -1, best[..., None])
    return q / (2.0 * torch.sqrt(torch.clamp(d, min=_EPS)))


def geodesic_angle(r1, r2, eps=1e-12):
    """Angle of r1^T r2, smooth everywhere (atan2 with a softened sine).

    The softening offset is subtracted so identical rotations give 0.
    """
    rel = r1.transpose(-1, -2) @ r2
    cos = 0.5 * (rel[..., 0, 0] + rel[..., 1, 1] + rel[..., 2, 2] - 1.0)
    vee = torch.stack(
        [rel[..., 2, 1] - rel[..., 1, 2], rel[..., 0, 2] - rel[..., 2, 0], rel[..., 1, 0] - rel[..., 0, 1]], -1
    )
    sin = 0.5 * torch.sqrt((vee * vee).sum(-1) + eps)
    return torch.atan2(sin, cos) - math.atan2(0.5 * math.sqrt(eps), 1.0)


def rot_x(angle):
    angle = _as_tensor(angle)
    return axis_angle_to_matrix(torch.stack([angle, torch.zeros_like(angle), torch.zeros_like(angle)], -1))


def rot_y(angle):
    angle = _as_tensor(angle)
    return axis_angle_to_matrix(torch.stack([torch.zeros_like(angle), angle, torch.zeros_like(angle)], -1))


def rot_z(angle):
    angle = _as_tensor(angle)
    return axis_angle_to_matrix(torch.stack([torch.zeros_like(angle), torch.zeros_like(angle), angle], -1))

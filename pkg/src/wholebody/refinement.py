"""Contact-aware root trajectory refinement.

Only root translation velocities change.  Writing the per-frame world step
as u_t = R_t v_t (R_t the GV root orientation), the objective

    λ_data Σ_t |u_t - u0_t|^2
  + λ_contact Σ_{(t,j) planted} |u_t + Δo_tj|^2
  + λ_smooth Σ_t |u_t - u_{t-1}|^2

is quadratic and separable per coordinate, where Δo_tj is the change of
joint j's root-relative offset between t and t+1 and a pair counts as
planted when the contact probability is at least the threshold at both t
and t+1.  |u_t - u_{t-1}| is the second difference of the root path.  Each
coordinate is a symmetric tridiagonal system.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.linalg import solveh_banded
from scipy.sparse import diags
from scipy.sparse.linalg import cg

from .kinematics import DTYPE, LEFT_ANKLE, LEFT_FOOT, RIGHT_ANKLE, RIGHT_FOOT
from .representation import CONTACT_JOINTS, integrate_trajectory, local_joints

FOOT_JOINTS = [LEFT_ANKLE, RIGHT_ANKLE, LEFT_FOOT, RIGHT_FOOT]
MM = 1000.0


@dataclass
class RefinementConfig:
    threshold: float = 0.5
    lambda_contact: float = 100.0
    lambda_smooth: float = 0.1
    lambda_data: float = 1.0
    max_iter: int = 500
    tol: float = 1e-12
    method: str = "direct"  # or "cg"

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("contact threshold must lie in (0, 1)")
        for k in ("lambda_contact", "lambda_smooth", "lambda_data"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be non-negative")
        if self.method not in ("direct", "cg"):
            raise ValueError("method must be 'direct' or 'cg'")


@dataclass
class RefinementResult:
    state: object  # MotionState with refined root_vel
    positions: np.ndarray  # (T, 3) refined GV root path
    objective: list = field(default_factory=list)  # per-iteration objective values
    identity: bool = False


def _contact_pairs(contacts, threshold):
    c = np.asarray(contacts) >= threshold
    return c[:-1] & c[1:]


def _system(offsets, u0, pairs, cfg):
    """Banded matrix (upper form) and right-hand side for the n = T-1 free steps."""
    n = u0.shape[0]
    count = pairs.sum(-1).astype(np.float64)
    delta = offsets[1:] - offsets[:-1]  # (n, J, 3)
    pull = (pairs[..., None] * delta).sum(-2)
    diag = cfg.lambda_data + cfg.lambda_contact * count
    off = np.zeros(n)
    if n > 1:
        deg = np.full(n, 2.0)
        deg[0] = deg[-1] = 1.0
        diag = diag + cfg.lambda_smooth * deg
        off[1:] = -cfg.lambda_smooth
    ab = np.stack([off, diag])
    rhs = cfg.lambda_data * u0 - cfg.lambda_contact * pull
    return ab, rhs


def objective(u, u0, offsets, pairs, cfg):
    """Objective value for world steps u (n, 3)."""
    delta = offsets[1:] - offsets[:-1]
    data = ((u - u0) ** 2).sum()
    contact = (pairs[..., None] * (u[:, None, :] + delta) ** 2).sum()
    smooth = ((u[1:] - u[:-1]) ** 2).sum()
    return float(cfg.lambda_data * data + cfg.lambda_contact * contact + cfg.lambda_smooth * smooth)


def refine_trajectory(state, skeleton, config=None, contacts=None):
    """Refine root velocities of an unbatched MotionState (T frames).

    ``contacts`` overrides the state's contact probabilities (T, 6).
    """
    cfg = config or RefinementConfig()
    T = state.num_frames
    if T == 0:
        raise ValueError("cannot refine an empty sequence")
    probs = state.contacts.detach().numpy() if contacts is None else np.asarray(contacts, dtype=np.float64)
    pairs = _contact_pairs(probs, cfg.threshold) if T > 1 else np.zeros((0, len(CONTACT_JOINTS)), bool)

    rot = state.gv_rotmat().detach().numpy()
    v0 = state.root_vel.detach().numpy()
    u0_all = np.einsum("tij,tj->ti", rot, v0)
    no_effect = (cfg.lambda_contact == 0 or not pairs.any()) and (cfg.lambda_smooth == 0 or T < 3)
    if T < 2 or no_effect:
        _, pos = integrate_trajectory(state.gv_rotmat().detach(), state.root_vel.detach())
        out = state.replace(root_vel=state.root_vel.detach().clone())
        obj = objective(u0_all[:-1], u0_all[:-1], np.zeros((T, 0, 3)), pairs[:, :0], cfg) if T > 1 else 0.0
        return RefinementResult(out, pos.numpy(), [obj], identity=True)

    with torch.no_grad():
        joints, _ = local_joints(skeleton, state, orient="gv")
    offsets = joints[:, CONTACT_JOINTS].numpy()
    u0 = u0_all[:-1]
    ab, rhs = _system(offsets, u0, pairs, cfg)
    history = [objective(u0, u0, offsets, pairs, cfg)]
    if cfg.method == "direct":
        u = solveh_banded(ab, rhs)
        history.append(objective(u, u0, offsets, pairs, cfg))
    else:
        n = u0.shape[0]
        A = diags([ab[0, 1:], ab[1], ab[0, 1:]], [-1, 0, 1], format="csr")
        u = np.empty_like(u0)
        iterates = [u0.copy()]
        for c in range(3):
            trace = []
            sol, _ = cg(A, rhs[:, c], x0=u0[:, c].copy(), rtol=cfg.tol, atol=0.0, maxiter=cfg.max_iter,
                        callback=lambda xk: trace.append(xk.copy()))
            u[:, c] = sol
            # coordinates are independent, so per-iteration objectives add up
            for k, xk in enumerate(trace):
                if len(iterates) <= k + 1:
                    iterates.append(iterates[-1].copy())
                iterates[k + 1][:, c] = xk
            for k in range(len(trace) + 1, len(iterates)):
                iterates[k][:, c] = sol
        history = [objective(x, u0, offsets, pairs, cfg) for x in iterates]
        del n
    v = np.concatenate([np.einsum("tji,tj->ti", rot[:-1], u), v0[-1:]], axis=0)
    vel = torch.as_tensor(v, dtype=DTYPE)
    out = state.replace(root_vel=vel)
    _, pos = integrate_trajectory(state.gv_rotmat().detach(), vel)
    return RefinementResult(out, pos.numpy(), history)


def world_joints(state, skeleton, positions=None):
    """GV-frame joint positions from the integrated root path."""
    with torch.no_grad():
        rot = state.gv_rotmat()
        if positions is None:
            _, positions = integrate_trajectory(rot, state.root_vel)
        joints, _ = local_joints(skeleton, state, orient="gv")
        return (joints + torch.as_tensor(positions, dtype=DTYPE)[:, None, :]).numpy()


def foot_sliding(state, skeleton, labels=None, threshold=0.5):
    """Mean horizontal displacement (mm) of foot joints across planted frame pairs.

    ``labels`` (T, 6) defaults to the state's contact probabilities.  Returns
    NaN when no foot joint is planted on two consecutive frames.
    """
    labels = state.contacts.detach().numpy() if labels is None else np.asarray(labels, dtype=np.float64)
    cols = [CONTACT_JOINTS.index(j) for j in FOOT_JOINTS]
    pairs = _contact_pairs(labels[:, cols], threshold)
    if not pairs.any():
        return math.nan
    joints = world_joints(state, skeleton)[:, FOOT_JOINTS]
    step = joints[1:] - joints[:-1]
    horiz = np.linalg.norm(step[..., [0, 2]], axis=-1)
    return float(horiz[pairs].mean() * MM)


def contact_speed(state, skeleton, labels=None, threshold=0.5, fps=30.0):
    """Mean 3D speed (m/s) of planted foot joints."""
    labels = state.contacts.detach().numpy() if labels is None else np.asarray(labels, dtype=np.float64)
    cols = [CONTACT_JOINTS.index(j) for j in FOOT_JOINTS]
    pairs = _contact_pairs(labels[:, cols], threshold)
    if not pairs.any():
        return math.nan
    joints = world_joints(state, skeleton)[:, FOOT_JOINTS]
    return float(np.linalg.norm(joints[1:] - joints[:-1], axis=-1)[pairs].mean() * fps)


def inject_stance_drift(state, drift=(0.005, 0.0, 0.0), labels=None, threshold=0.5):
    """Add a constant GV-frame root step during frames where any foot is planted.

    Used to build drift test cases; ``drift`` is in metres per frame.
    """
    labels = state.contacts.detach().numpy() if labels is None else np.asarray(labels)
    cols = [CONTACT_JOINTS.index(j) for j in FOOT_JOINTS]
    planted = _contact_pairs(labels[:, cols], threshold).any(-1)
    rot = state.gv_rotmat().detach()
    d = torch.as_tensor(drift, dtype=DTYPE)
    local = (rot[:-1].transpose(-1, -2) @ d)
    add = torch.zeros_like(state.root_vel)
    add[:-1] = torch.where(torch.as_tensor(planted)[:, None], local, torch.zeros_like(local))
    return state.replace(root_vel=state.root_vel.detach() + add)

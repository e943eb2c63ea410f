import numpy as np
import pytest
import torch
from hypothesis import settings

from wholebody.kinematics import default_skeleton

torch.set_num_threads(1)
settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def skeleton():
    return default_skeleton()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rotations(rng, n):
    """Uniform random rotation matrices via QR of Gaussian matrices."""
    q, r = np.linalg.qr(rng.normal(size=(n, 3, 3)))
    q = q * np.sign(np.diagonal(r, axis1=-2, axis2=-1))[:, None, :]
    det = np.linalg.det(q)
    q[det < 0, :, 0] *= -1
    return q


def clip_target(skeleton, kind="wave", seed=0, length=8):
    """(clip, ground-truth MotionState, observations) for a short synthetic clip."""
    from wholebody.observations import synthesize_observations
    from wholebody.representation import derive_ground_truth_state
    from wholebody.synthetic import generate_clip

    clip = generate_clip(kind, seed, length=length)
    state, _ = derive_ground_truth_state(skeleton, clip.pose, clip.root_orient, clip.root_trans, clip.betas,
                                         clip.camera)
    obs, _ = synthesize_observations(clip, seed=seed, skeleton=skeleton)
    return clip, state, obs


def perturbed_leaves(state, rng, scale=0.05):
    """Differentiable leaf tensors near ``state``: 6D pose/orientations plus raw vectors."""
    from wholebody.rotations import encode_rotation6d

    def leaf(x):
        x = torch.as_tensor(x, dtype=torch.float64)
        return (x + scale * torch.as_tensor(rng.normal(size=x.shape))).requires_grad_(True)

    return {
        "pose6": leaf(encode_rotation6d(state.pose)),
        "gv_orient": leaf(state.gv_orient),
        "root_vel": leaf(state.root_vel * 0 + 0.01),
        "betas": leaf(state.betas),
        "cam_orient": leaf(state.cam_orient),
        "cam_trans": leaf(state.cam_trans),
        "contact_logits": leaf(torch.zeros_like(state.contacts)),
    }


def state_from_leaves(leaves):
    from wholebody.representation import MotionState
    from wholebody.rotations import decode_rotation6d

    return MotionState(
        gv_orient=leaves["gv_orient"], root_vel=leaves["root_vel"],
        pose=decode_rotation6d(leaves["pose6"], check=False), betas=leaves["betas"],
        cam_orient=leaves["cam_orient"], cam_trans=leaves["cam_trans"],
        contacts=torch.sigmoid(leaves["contact_logits"]),
    )


def observation_batch(obs, clip):
    from wholebody.observations import ObservationSeq

    batch = ObservationSeq.batch([obs])
    cam = clip.camera
    batch["intrinsics"] = torch.tensor([[cam.fx, cam.fy, cam.cx, cam.cy]], dtype=torch.float64)
    return batch


def fd_check(fn, leaves, rng, n=20, h=1e-6, rtol=1e-3, atol=1e-7):
    """Compare autograd with central differences on ``n`` random coordinates; returns worst relative error."""
    loss = fn()
    grads = torch.autograd.grad(loss, list(leaves.values()), allow_unused=True)
    names = list(leaves)
    worst = 0.0
    for _ in range(n):
        k = int(rng.integers(len(names)))
        t = leaves[names[k]]
        i = int(rng.integers(t.numel()))
        g = 0.0 if grads[k] is None else float(grads[k].reshape(-1)[i])
        with torch.no_grad():
            flat = t.view(-1)
            x0 = float(flat[i])
            flat[i] = x0 + h
            fp = float(fn())
            flat[i] = x0 - h
            fm = float(fn())
            flat[i] = x0
        fd = (fp - fm) / (2 * h)
        err = abs(fd - g)
        assert err <= atol + rtol * max(abs(fd), abs(g)), (names[k], i, g, fd)
        # below atol / rtol the gradient is numerically zero and only the absolute bound applies
        worst = max(worst, err / max(abs(fd), abs(g), atol / rtol))
    return worst

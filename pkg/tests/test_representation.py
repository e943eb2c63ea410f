import math

import numpy as np
import pytest
import torch

from conftest import random_rotations
from wholebody.errors import GimbalDegenerateError
from wholebody.kinematics import DTYPE, CameraModel
from wholebody.representation import (
    CONTACT_JOINTS, GravityFrame, MotionState, camera_to_gravity_view, contact_labels,
    derive_ground_truth_state, gravity_view_reference, gravity_view_to_camera, integrate_trajectory,
)
from wholebody.rotations import rot_x, rot_y, rot_z
from wholebody.synthetic import KINDS, generate_clip

LEVEL = np.diag([1.0, -1.0, -1.0])  # level camera looking down world -z


def pitched(deg):
    # tilt the optical axis downward about the camera x axis
    return rot_x(torch.tensor(math.radians(deg), dtype=DTYPE)).numpy() @ LEVEL


def test_level_camera_identity_body():
    frame = GravityFrame(np.array([0.0, -1.0, 0.0]), gravity_view_reference(LEVEL))
    cam_orient = torch.as_tensor(LEVEL)  # identity body seen from the level camera
    gv = camera_to_gravity_view(cam_orient, LEVEL, frame)
    assert torch.allclose(gv, torch.eye(3, dtype=DTYPE), atol=1e-12)


def test_pitched_camera_leaves_gv_unchanged(rng):
    body = torch.as_tensor(random_rotations(rng, 1)[0])
    out = []
    for R in (LEVEL, pitched(30.0)):
        frame = GravityFrame(np.array([0.0, -1.0, 0.0]), gravity_view_reference(R))
        cam_orient = torch.as_tensor(R) @ body
        out.append(camera_to_gravity_view(cam_orient, R, frame))
    assert torch.allclose(out[0], out[1], atol=1e-12)


def test_gv_round_trip(rng):
    orients = torch.as_tensor(random_rotations(rng, 100))
    extr = random_rotations(rng, 100)
    for o, R in zip(orients, extr):
        frame = GravityFrame(np.array([0.0, -1.0, 0.0]), gravity_view_reference(R))
        back = gravity_view_to_camera(camera_to_gravity_view(o, R, frame), R, frame)
        assert (back - o).abs().max() < 1e-6


def test_gv_vertical_axis_is_gravity_aligned(rng):
    for R in random_rotations(rng, 20):
        ref = gravity_view_reference(R)
        assert np.allclose(ref[1], [0.0, 1.0, 0.0])
        assert np.allclose(ref @ ref.T, np.eye(3), atol=1e-12)


def test_gimbal_case_uses_fallback():
    R = np.array([[1.0, 0, 0], [0, 0, 1.0], [0, -1.0, 0]])  # optical axis straight down
    with pytest.raises(GimbalDegenerateError):
        gravity_view_reference(R)
    prev = gravity_view_reference(LEVEL)
    assert np.array_equal(gravity_view_reference(R, fallback=prev), prev)
    # a clip whose first frame is degenerate takes its yaw from the next frame
    cam = CameraModel(1000, 1000, 640, 480, 1280, 960, [R, LEVEL], [[0, 0, 0], [0, 0, 0]])
    assert np.allclose(GravityFrame.from_camera(cam).reference, prev)


def eye(T):
    return torch.eye(3, dtype=DTYPE).expand(T, 3, 3)


def test_integrate_zero_velocity():
    _, pos = integrate_trajectory(eye(10), torch.zeros(10, 3, dtype=DTYPE), initial_position=torch.tensor([1.0, 2, 3]))
    assert torch.equal(pos, torch.tensor([1.0, 2, 3], dtype=DTYPE).expand(10, 3))


def test_integrate_straight_line():
    T = 25
    v = torch.tensor([0.0, 0.0, 0.02], dtype=DTYPE).expand(T, 3)
    _, pos = integrate_trajectory(eye(T), v)
    assert abs((pos[-1] - pos[0]).norm().item() - 0.02 * (T - 1)) < 1e-12


def test_integrate_l_shape():
    T = 21
    rots = eye(T).clone()
    rots[10:] = rot_y(torch.tensor(math.pi / 2, dtype=DTYPE))
    v = torch.tensor([0.0, 0.0, 0.1], dtype=DTYPE).expand(T, 3)
    _, pos = integrate_trajectory(rots, v)
    # ten steps along +z, then along rot_y(90) @ z = +x
    assert torch.allclose(pos[10], torch.tensor([0.0, 0.0, 1.0], dtype=DTYPE), atol=1e-12)
    assert torch.allclose(pos[20], torch.tensor([1.0, 0.0, 1.0], dtype=DTYPE), atol=1e-12)


def static_camera(T, R=LEVEL, t=(0.0, -1.0, 3.0)):
    return CameraModel(1000, 1000, 640, 480, 1280, 960, np.repeat(R[None], T, 0), np.tile(t, (T, 1)))


def test_static_subject_static_camera(skeleton):
    clip = generate_clip("idle", 3, length=12)
    state, _ = derive_ground_truth_state(skeleton, clip.pose, clip.root_orient, clip.root_trans, clip.betas,
                                         static_camera(12))
    assert state.root_vel.abs().max() == 0
    assert torch.all(state.contacts == 1)


def test_round_trip_on_walk(skeleton):
    clip = generate_clip("walk", 0, length=90)
    state, frame = derive_ground_truth_state(skeleton, clip.pose, clip.root_orient, clip.root_trans, clip.betas,
                                             clip.camera)
    rot, pos = integrate_trajectory(state.gv_rotmat(), state.root_vel, clip.root_trans[0], frame=frame)
    assert np.abs(pos.numpy() - clip.root_trans).max() < 1e-6
    assert np.abs(rot.numpy() - clip.root_orient).max() < 1e-6


def test_length_mismatch(skeleton):
    clip = generate_clip("idle", 0, length=10)
    with pytest.raises(ValueError):
        derive_ground_truth_state(skeleton, clip.pose, clip.root_orient, clip.root_trans, clip.betas, static_camera(9))


def test_planted_interval_labels():
    x = np.zeros((30, 1, 3))
    for t in range(30):
        x[t, 0, 0] = 0.01 * min(t, 10) + 0.01 * max(t - 20, 0)
    lab = contact_labels(x)[:, 0]
    assert lab[10:21].tolist() == [1.0] * 11
    assert lab[:10].sum() == 0 and lab[21:].sum() == 0


def test_camera_motion_invariance(skeleton):
    clip = generate_clip("walk", 5, length=60)
    T = len(clip)
    a, _ = derive_ground_truth_state(skeleton, clip.pose, clip.root_orient, clip.root_trans, clip.betas, clip.camera)
    # the reference frame is pitched about the camera x axis (heading kept);
    # later frames roll and pan freely, and every frame is translated
    R0 = rot_x(torch.tensor(-0.4, dtype=DTYPE)).numpy() @ clip.camera.rotations[0]
    roll = rot_z(torch.tensor(0.2, dtype=DTYPE)).numpy()
    rots = [R0] + [rot_y(torch.tensor(0.02 * t, dtype=DTYPE)).numpy() @ roll @ R0 for t in range(1, T)]
    cam = CameraModel(900, 900, 600, 400, 1200, 800, np.array(rots), np.random.default_rng(0).normal(size=(T, 3)))
    b, _ = derive_ground_truth_state(skeleton, clip.pose, clip.root_orient, clip.root_trans, clip.betas, cam)
    assert (a.gv_orient - b.gv_orient).abs().max() < 1e-6
    assert (a.root_vel - b.root_vel).abs().max() < 1e-6


def test_camera_fields_transform_with_extrinsics(skeleton, rng):
    clip = generate_clip("wave", 2, length=20)
    a, _ = derive_ground_truth_state(skeleton, clip.pose, clip.root_orient, clip.root_trans, clip.betas, clip.camera)
    G = random_rotations(rng, 1)[0]
    g = rng.normal(size=3)
    cam = CameraModel(clip.camera.fx, clip.camera.fy, clip.camera.cx, clip.camera.cy, 1280, 960,
                      G @ clip.camera.rotations, clip.camera.translations @ G.T + g)
    b, _ = derive_ground_truth_state(skeleton, clip.pose, clip.root_orient, clip.root_trans, clip.betas, cam)
    Gt = torch.as_tensor(G)
    assert torch.allclose(b.cam_rotmat(), Gt @ a.cam_rotmat(), atol=1e-10)
    assert torch.allclose(b.cam_trans, a.cam_trans @ Gt.T + torch.as_tensor(g), atol=1e-10)


def test_state_invariants_on_all_kinds(skeleton):
    for k in KINDS:
        clip = generate_clip(k, 1, length=30)
        s, _ = derive_ground_truth_state(skeleton, clip.pose, clip.root_orient, clip.root_trans, clip.betas, clip.camera)
        assert s.contacts.shape == (30, len(CONTACT_JOINTS))
        assert torch.all((s.contacts >= 0) & (s.contacts <= 1))
        assert torch.all(s.betas == s.betas[:1])
        for R in (s.gv_rotmat(), s.cam_rotmat()):
            assert torch.allclose(torch.linalg.det(R), torch.ones(30, dtype=DTYPE), atol=1e-9)


def test_motion_state_slice_and_stack(skeleton):
    clip = generate_clip("reach", 0, length=20)
    s, _ = derive_ground_truth_state(skeleton, clip.pose, clip.root_orient, clip.root_trans, clip.betas, clip.camera)
    w = s.slice(5, 12)
    assert w.num_frames == 7 and torch.equal(w.pose, s.pose[5:12])
    b = MotionState.stack([w, w])
    assert b.pose.shape == (2, 7, 55, 3, 3)
    assert torch.equal(b.slice(1, 3).root_vel, b.root_vel[:, 1:3])

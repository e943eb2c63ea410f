import numpy as np
import pytest
import torch

from wholebody.augmentation import CropSpec
from wholebody.kinematics import BODY_KEYPOINTS, DTYPE, project_camera_points
from wholebody.observations import (
    NoiseConfig, ObservationSeq, build_box_token, encode_keypoints, synthesize_observations,
)
from wholebody.synthetic import generate_clip

CLEAN = NoiseConfig(pixel_sigma=0.0, dropout=0.0, feature_sigma=0.0)


def body_projection(clip, skeleton):
    j = clip.joints(skeleton).numpy()[:, BODY_KEYPOINTS]
    pc = np.einsum("tij,tnj->tni", clip.camera.rotations, j) + clip.camera.translations[:, None]
    return project_camera_points(pc, clip.camera.fx, clip.camera.fy, clip.camera.cx, clip.camera.cy)[0]


def test_zero_noise_full_body(skeleton):
    clip = generate_clip("wave", 0, length=20)
    obs, crop = synthesize_observations(clip, noise=CLEAN, seed=0, skeleton=skeleton)
    assert np.array_equal(obs.body_kp, body_projection(clip, skeleton))
    assert np.all(obs.body_conf == 1.0) and obs.body_valid.all()
    assert np.all(obs.lh_visible == 1) and np.all(obs.rh_visible == 1)


def test_same_seed_bit_identical(skeleton):
    clip = generate_clip("finger-wiggle", 1, length=20)
    a, _ = synthesize_observations(clip, seed=[3, 4], skeleton=skeleton)
    b, _ = synthesize_observations(clip, seed=[3, 4], skeleton=skeleton)
    for k, v in a.to_dict().items():
        assert v == b.to_dict()[k], k
    c, _ = synthesize_observations(clip, seed=[3, 5], skeleton=skeleton)
    assert not np.array_equal(a.body_kp, c.body_kp)


def test_out_of_crop_confidence_low(skeleton):
    clip = generate_clip("reach", 2, length=20)
    full = body_projection(clip, skeleton)
    ymid = float(np.median(full[..., 1]))
    crop = CropSpec(np.array([0.0, 0.0, 1280.0, ymid]))
    obs, _ = synthesize_observations(clip, crop=crop, noise=CLEAN, seed=0, skeleton=skeleton)
    out = ~crop.contains(obs.body_kp)
    assert out.any()
    assert np.all(obs.body_conf[out] <= 0.3) and not obs.body_valid[out].any()


def test_hand_outside_crop_is_masked(skeleton):
    clip = generate_clip("idle", 0, length=10)
    full = body_projection(clip, skeleton)
    # only the head region: both hands fall outside
    top = full[..., 1].min() - 5
    crop = CropSpec(np.array([0.0, top - 100, 1280.0, top + 40]))
    obs, _ = synthesize_observations(clip, crop=crop, noise=CLEAN, seed=0, skeleton=skeleton)
    for key in ("lh", "rh"):
        assert np.all(getattr(obs, f"{key}_visible") == 0)
        assert not getattr(obs, f"{key}_valid").any()
        assert np.all(getattr(obs, f"{key}_feat") == 0) and np.all(getattr(obs, f"{key}_box") == 0)


def test_confidences_in_range(skeleton):
    obs, _ = synthesize_observations(generate_clip("walk", 0, length=30), seed=1, skeleton=skeleton)
    for c in (obs.body_conf, obs.lh_conf, obs.rh_conf):
        assert np.all((c >= 0) & (c <= 1))


def test_observation_dict_round_trip(skeleton):
    obs, _ = synthesize_observations(generate_clip("wave", 0, length=8), seed=0, skeleton=skeleton)
    back = ObservationSeq.from_dict(obs.to_dict())
    assert np.array_equal(back.rh_valid, obs.rh_valid) and back.rh_valid.dtype == bool
    assert np.array_equal(back.body_feat, obs.body_feat)


def encoder_params(J=6, e=5, d=4, seed=0):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(*s, generator=g, dtype=DTYPE) for s in ((J, 2, e), (J, e), (J, e), (d, e), (d,))]


def test_all_masked_depends_only_on_missing():
    W, b, m, Wo, bo = encoder_params()
    mask = torch.zeros(6, dtype=torch.bool)
    out1 = encode_keypoints(torch.randn(6, 2, dtype=DTYPE), mask, W, b, m, Wo, bo)
    out2 = encode_keypoints(torch.randn(6, 2, dtype=DTYPE) * 100, mask, W, b, m, Wo, bo)
    assert torch.equal(out1, out2)
    assert torch.allclose(out1, m.sum(0) @ Wo.T + bo, atol=1e-12)


def test_masked_joint_perturbation_bit_identical():
    W, b, m, Wo, bo = encoder_params()
    kp = torch.randn(6, 2, dtype=DTYPE)
    mask = torch.tensor([1, 1, 0, 1, 0, 1], dtype=torch.bool)
    base = encode_keypoints(kp, mask, W, b, m, Wo, bo)
    kp2 = kp.clone()
    kp2[2] += 3.0
    kp2[4] = float("nan")
    assert torch.equal(encode_keypoints(kp2, mask, W, b, m, Wo, bo), base)


def test_zero_coordinates_closed_form():
    W, b, m, Wo, bo = encoder_params()
    out = encode_keypoints(torch.zeros(6, 2, dtype=DTYPE), torch.ones(6, dtype=torch.bool), W, b, m, Wo, bo)
    assert torch.allclose(out, b.sum(0) @ Wo.T + bo, atol=1e-12)


def test_linear_in_visible_coordinates():
    W, b, m, Wo, bo = encoder_params()
    kp = torch.randn(6, 2, dtype=DTYPE)
    mask = torch.ones(6, dtype=torch.bool)
    jac = torch.autograd.functional.jacobian(lambda x: encode_keypoints(x, mask, W, b, m, Wo, bo), kp)
    jac2 = torch.autograd.functional.jacobian(lambda x: encode_keypoints(x, mask, W, b, m, Wo, bo), kp * 5 - 2)
    assert torch.allclose(jac, jac2, atol=1e-12)


def test_box_token_examples():
    assert np.allclose(build_box_token([640.0, 480.0], 200.0, 1000.0, 1000.0, 640.0, 480.0), [0.0, 0.0, 0.2])
    a = build_box_token([700.0, 500.0], 100.0, 1000.0, 1000.0, 640.0, 480.0)
    b = build_box_token([700.0, 500.0], 100.0, 2000.0, 2000.0, 640.0, 480.0)
    assert np.allclose(b, a / 2)
    assert np.array_equal(build_box_token([700.0, 500.0], 0.0, 1000.0, 1000.0, 640.0, 480.0), [0.0, 0.0, 0.0])


@pytest.mark.parametrize("kind", ["walk", "finger-wiggle"])
def test_no_gradient_into_observations(kind, skeleton):
    obs, _ = synthesize_observations(generate_clip(kind, 0, length=6), seed=0, skeleton=skeleton)
    for v in obs.to_torch().values():
        assert not v.requires_grad

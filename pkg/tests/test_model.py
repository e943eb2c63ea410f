import numpy as np
import pytest
import torch

from conftest import clip_target, observation_batch
from wholebody.kinematics import DTYPE
from wholebody.model import (
    ModelConfig, TemporalEncoder, WholeBodyModel, local_attention_mask, numpy_state, parameter_count, states_equal,
)
from wholebody.observations import ObservationSeq

SMALL = ModelConfig(width=32, layers=2, heads=4, window=8, body_feature_dim=128, hand_feature_dim=128, seed=3)


@pytest.fixture(scope="module")
def batch(skeleton):
    clip, _, obs = clip_target(skeleton, "finger-wiggle", 1, length=12)
    return observation_batch(obs, clip)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(width=30, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(window=0)


def test_default_size_is_desk_scale():
    assert parameter_count(WholeBodyModel()) < 3_000_000


def test_seeded_init_is_deterministic():
    a, b = WholeBodyModel(SMALL), WholeBodyModel(SMALL)
    assert states_equal(numpy_state(a), numpy_state(b))
    c = WholeBodyModel(ModelConfig(**{**SMALL.__dict__, "seed": 4}))
    assert not states_equal(numpy_state(a), numpy_state(c))


def zero_obs(T=3):
    z = {
        "body_kp_norm": torch.zeros(1, T, 25, 2), "body_conf": torch.ones(1, T, 25),
        "body_valid": torch.ones(1, T, 25, dtype=torch.bool), "body_feat": torch.zeros(1, T, 128),
        "body_box": torch.zeros(1, T, 3), "omega": torch.zeros(1, T, 3),
    }
    return {k: (v.to(DTYPE) if v.dtype != torch.bool else v) for k, v in z.items()}


def test_body_token_zero_at_origin():
    m = WholeBodyModel(SMALL)
    with torch.no_grad():
        for name, p in m.named_parameters():
            if name.endswith("bias"):
                p.zero_()
    assert torch.count_nonzero(m.body_token(zero_obs())) == 0


def test_body_streams_additive_in_linear_mode():
    m = WholeBodyModel(SMALL)
    m.linear_mode = True
    g = torch.Generator().manual_seed(0)
    obs = zero_obs()
    kp = dict(obs, body_kp_norm=torch.randn(1, 3, 25, 2, generator=g, dtype=DTYPE))
    ft = dict(obs, body_feat=torch.randn(1, 3, 128, generator=g, dtype=DTYPE))
    both = dict(kp, body_feat=ft["body_feat"])
    with torch.no_grad():
        lhs = m.body_token(kp) + m.body_token(ft)
        rhs = m.body_token(both) + m.body_token(obs)
    assert torch.allclose(lhs, rhs, atol=1e-12)


def test_left_right_encoders_differ(batch):
    m = WholeBodyModel(SMALL)
    mirrored = dict(batch)
    for k in ("kp_norm", "conf", "valid", "feat", "box", "visible"):
        mirrored[f"rh_{k}"] = batch[f"lh_{k}"]
    with torch.no_grad():
        assert not torch.allclose(m.hand_token(mirrored, "left"), m.hand_token(mirrored, "right"))


def test_masked_hand_token_ignores_raw_values(batch):
    m = WholeBodyModel(SMALL)
    b = dict(batch)
    b["lh_visible"] = torch.zeros_like(b["lh_visible"])
    noisy = dict(b)
    for k in ("kp_norm", "feat", "box", "conf"):
        noisy[f"lh_{k}"] = b[f"lh_{k}"] + 10.0 * torch.randn_like(b[f"lh_{k}"])
    with torch.no_grad():
        assert torch.equal(m.hand_token(b, "left"), m.hand_token(noisy, "left"))


def test_fusion_residual_independent_of_body(batch):
    m = WholeBodyModel(SMALL)
    other = dict(batch, body_feat=batch["body_feat"] + 1.0, omega=batch["omega"] - 0.3)
    with torch.no_grad():
        d1 = m.tokens(batch) - m.body_token(batch)
        d2 = m.tokens(other) - m.body_token(other)
    assert torch.allclose(d1, d2, atol=1e-12)


def test_fusion_hook_gives_body_only(batch):
    m = WholeBodyModel(SMALL)
    m.fusion_enabled = False
    with torch.no_grad():
        a = m(batch)
        m.fusion_enabled = True
        b = m(batch, body_only=True)
    for f in ("pose", "gv_orient", "root_vel", "betas", "cam_orient", "cam_trans", "contacts"):
        assert torch.equal(getattr(a, f), getattr(b, f))


def test_singleton_sequence_is_per_token_path():
    enc = TemporalEncoder(SMALL).to(DTYPE)
    z = torch.randn(2, 1, 32, dtype=DTYPE)
    with torch.no_grad():
        h = z
        for blk in enc.blocks:
            # one key: softmax weight 1 on the value of the token itself
            v = blk.qkv(blk.norm1(h))[..., 64:]
            h = h + blk.proj(v)
            h = h + blk.ffn(blk.norm2(h))
        expected = enc.norm(h)
        assert torch.allclose(enc(z), expected, atol=1e-12)


def test_offset_invariance():
    enc = TemporalEncoder(SMALL).to(DTYPE)
    z = torch.randn(1, 30, 32, dtype=DTYPE)
    with torch.no_grad():
        a = enc(z)
        for off in (1, 17, 1000):
            assert (enc(z, offset=off) - a).abs().max() < 1e-5


def test_periodic_shift_interior():
    cfg = ModelConfig(width=32, layers=2, heads=4, window=8, seed=1)
    enc = TemporalEncoder(cfg).to(DTYPE)
    P, T = 10, 80
    base = torch.randn(1, P, 32, dtype=DTYPE)
    z = base.repeat(1, T // P, 1)
    reach = cfg.layers * cfg.window // 2
    with torch.no_grad():
        h = enc(z)
    for t in range(reach, T - reach - P):
        assert (h[0, t] - h[0, t + P]).abs().max() < 1e-5


def test_locality_bound():
    cfg = ModelConfig(width=32, layers=3, heads=4, window=6, seed=2)
    enc = TemporalEncoder(cfg).to(DTYPE)
    z = torch.randn(1, 40, 32, dtype=DTYPE)
    j = 20
    z2 = z.clone()
    z2[0, j] += 1.0
    with torch.no_grad():
        diff = (enc(z2) - enc(z)).abs().amax(-1)[0]
    reach = cfg.layers * cfg.window // 2
    far = [i for i in range(40) if abs(i - j) > reach]
    assert torch.count_nonzero(diff[far]) == 0
    assert diff[j + reach] > 0 and diff[j - reach] > 0


def test_attention_mask_shape():
    m = local_attention_mask(5, 2)
    assert m.tolist()[0] == [True, True, False, False, False]


def test_heads_valid_outputs(batch):
    m = WholeBodyModel(SMALL)
    with torch.no_grad():
        out = m(dict(batch, body_feat=batch["body_feat"] * 50))
    assert torch.all((out.contacts >= 0) & (out.contacts <= 1))
    for R in (out.gv_rotmat(), out.cam_rotmat(), out.pose):
        eye = torch.eye(3, dtype=DTYPE)
        assert (R @ R.transpose(-1, -2) - eye).abs().max() < 1e-9
        assert (torch.linalg.det(R) - 1).abs().max() < 1e-9
    assert torch.equal(out.pose[..., 0, :, :], torch.eye(3, dtype=DTYPE).expand_as(out.pose[..., 0, :, :]))
    assert torch.equal(out.betas, out.betas[:, :1].expand_as(out.betas))


def test_deterministic_forward(batch):
    m = WholeBodyModel(SMALL)
    with torch.no_grad():
        a, b = m(batch), m(batch)
    assert torch.equal(a.pose, b.pose) and torch.equal(a.cam_trans, b.cam_trans)


def test_checkpoint_round_trip(batch, tmp_path):
    m = WholeBodyModel(SMALL)
    path = tmp_path / "m.safetensors"
    m.save(path, extra={"note": "x"})
    back = WholeBodyModel.load(path)
    assert back.cfg == m.cfg
    assert states_equal(numpy_state(back), numpy_state(m))
    with torch.no_grad():
        assert torch.equal(back(batch).pose, m(batch).pose)


def test_checkpoint_rejects_foreign_file(tmp_path):
    from safetensors.numpy import save_file

    path = tmp_path / "x.safetensors"
    save_file({"a": np.zeros(2)}, str(path), metadata={"format": "other"})
    with pytest.raises(ValueError):
        WholeBodyModel.load(path)


def test_batch_helper_shapes(skeleton):
    _, _, obs = clip_target(skeleton, "walk", 0, length=6)
    b = ObservationSeq.batch([obs, obs])
    assert b["body_kp_norm"].shape == (2, 6, 25, 2) and b["lh_valid"].dtype == torch.bool

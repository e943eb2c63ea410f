import json

import numpy as np
import pytest
import torch

from wholebody.errors import NumericalError
from wholebody.model import ModelConfig, WholeBodyModel, numpy_state, states_equal
from wholebody.representation import GravityFrame
from wholebody.synthetic import generate_clip
from wholebody.training import (
    ClipDataset, CurriculumConfig, build_heldout, category_probabilities, ema, learning_rate, sample_batch,
    sample_indices, stage_at, train,
)

TINY = ModelConfig(width=16, layers=1, heads=2, window=16, seed=0)


@pytest.fixture(scope="module")
def dataset():
    clips = [generate_clip(k, i, length=24) for i, k in enumerate(["walk", "wave", "finger-wiggle", "idle"])]
    return ClipDataset(clips, variants=2, seed=0)


def cfg(**kw):
    base = dict(stage1_steps=3, stage2_steps=2, batch_size=2, window=12, seed=0)
    base.update(kw)
    return CurriculumConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        CurriculumConfig(stage1_steps=0)
    with pytest.raises(ValueError):
        CurriculumConfig(window=1)


def test_stage_and_schedule():
    c = CurriculumConfig(stage1_steps=10, stage2_steps=5, lr=1e-3, lr_final_ratio=0.1)
    assert [stage_at(s, c) for s in (0, 9, 10, 14)] == ["I", "I", "II", "II"]
    assert learning_rate(0, c) == pytest.approx(1e-3)
    assert learning_rate(14, c) == pytest.approx(1e-4)
    lrs = [learning_rate(s, c) for s in range(15)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_multiplier_one_equals_stage_one():
    cats = ["hand-rich", "body-rich", "body-rich"]
    assert category_probabilities(cats, "II", 1.0) == category_probabilities(cats, "I", 1.0)


def test_stage_two_hand_rich_fraction():
    cats = ["hand-rich"] * 4 + ["body-rich"] * 4
    picks = sample_indices(cats, "II", 3.0, np.random.default_rng(0), 10_000)
    frac = np.mean([cats[i] == "hand-rich" for i in picks])
    assert abs(frac - 0.75) <= 0.03
    picks = sample_indices(cats, "I", 3.0, np.random.default_rng(0), 10_000)
    assert abs(np.mean([cats[i] == "hand-rich" for i in picks]) - 0.5) <= 0.03


def test_batches_reproducible(dataset):
    a = sample_batch(dataset, "I", cfg(), np.random.default_rng(5))
    b = sample_batch(dataset, "I", cfg(), np.random.default_rng(5))
    assert a[2] == b[2]
    for k in a[0]:
        assert torch.equal(a[0][k], b[0][k])
    assert a[0]["body_kp"].shape[:2] == (2, 12)


def test_closeup_mix_ratio(dataset):
    rng = np.random.default_rng(0)
    c = cfg(batch_size=1)
    flags = [sample_batch(dataset, "I", c, rng)[2][0]["closeup"] for _ in range(300)]
    assert abs(np.mean(flags) - dataset.augment.mix_ratio) < 0.08


def test_window_target_uses_window_camera(dataset):
    clip = dataset.clips[1]
    full = dataset.window_target(1, 0, len(clip))
    assert torch.allclose(full.gv_orient, dataset._clip_state(1).gv_orient, atol=1e-12)
    w = dataset.window_target(1, 6, 10)
    ref = GravityFrame.from_camera(clip.camera.slice(6, 16)).reference
    gv = w.gv_rotmat().numpy()
    assert np.allclose(gv, ref @ clip.root_orient[6:16], atol=1e-9)


def test_short_run_logs_and_keeps_topology(dataset, tmp_path):
    model = WholeBodyModel(TINY)
    keys = set(model.state_dict())
    log = tmp_path / "log.jsonl"
    held = build_heldout([generate_clip("wave", 99, length=24)])
    res = train(model, dataset, cfg(), log_path=log, heldout=held)
    assert len(res.losses) == 5 and set(res.stage_end) == {"I", "II"}
    assert set(model.state_dict()) == keys
    recs = [json.loads(line) for line in log.read_text().splitlines()]
    steps = [r for r in recs if "loss" in r]
    assert [r["stage"] for r in steps] == ["I", "I", "I", "II", "II"]
    assert {"pose_hand", "tip", "vis", "temporal", "contact"} <= set(steps[0])
    assert sum("eval" in r for r in recs) == 2


def test_deterministic_training(dataset):
    a, b = WholeBodyModel(TINY), WholeBodyModel(TINY)
    ra = train(a, dataset, cfg())
    rb = train(b, dataset, cfg())
    assert ra.losses == rb.losses
    assert states_equal(numpy_state(a), numpy_state(b))


def test_no_gradient_reaches_observations(dataset):
    model = WholeBodyModel(TINY)
    seen = []
    orig = model.forward

    def spy(obs, **kw):
        seen.append(obs)
        return orig(obs, **kw)

    model.forward = spy
    train(model, dataset, cfg(stage1_steps=1, stage2_steps=1))
    assert all(not v.requires_grad and v.grad is None for v in seen[0].values())


def test_nonfinite_loss_dumps_batch(dataset, tmp_path):
    model = WholeBodyModel(TINY)
    with torch.no_grad():
        model.head.heads["cam_trans"].bias.fill_(float("nan"))
    with pytest.raises(NumericalError) as err:
        train(model, dataset, cfg(), dump_dir=tmp_path)
    dump = json.loads(open(err.value.dump_path).read())
    assert dump["step"] == 0 and "batch" in dump and len(dump["meta"]) == 2


def test_ema():
    assert ema([1.0, 1.0, 1.0]) == [1.0, 1.0, 1.0]
    assert ema([0.0, 1.0], alpha=0.5) == [0.0, 0.5]

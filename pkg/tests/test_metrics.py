import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_rotations
from wholebody.errors import DegenerateAlignmentError, UndefinedMetricError
from wholebody.metrics import (
    evaluate, finite_difference, position_metrics, procrustes_align, temporal_metrics, vertex_proxy,
)
from wholebody.rotations import rot_y
from wholebody.synthetic import generate_clip


@pytest.fixture(scope="module")
def walk(skeleton):
    return generate_clip("walk", 0, length=40).joints(skeleton).numpy()


def test_procrustes_identity(rng):
    x = rng.normal(size=(10, 3))
    s = procrustes_align(x, x)
    assert s.scale == pytest.approx(1.0) and np.allclose(s.rotation, np.eye(3)) and np.allclose(s.translation, 0)


def test_procrustes_recovers_similarity(rng):
    x = rng.normal(size=(12, 3))
    R = random_rotations(rng, 1)[0]
    t = rng.normal(size=3)
    s = procrustes_align(x, 2.0 * x @ R.T + t)
    assert abs(s.scale - 2.0) < 1e-8
    assert np.abs(s.rotation - R).max() < 1e-8 and np.abs(s.translation - t).max() < 1e-8


def test_procrustes_degenerate():
    with pytest.raises(DegenerateAlignmentError):
        procrustes_align(np.zeros((5, 3)), np.ones((5, 3)))
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateAlignmentError):
        procrustes_align(line, line)


def test_pred_equals_gt(skeleton, walk):
    for subset in ("all", "hands"):
        m = position_metrics(walk, walk, skeleton, subset)
        assert max(m.values()) < 1e-9
    t = temporal_metrics(walk, walk, 30.0)
    assert t["mpjve"] == 0.0 and t["accel"] == 0.0
    assert t["jitter"] == pytest.approx(np.linalg.norm(finite_difference(walk, 3, 30.0), axis=-1).mean())


def test_translation_removed(skeleton, walk):
    m = position_metrics(walk + np.array([0.3, -0.2, 1.0]), walk, skeleton)
    assert m["pve"] < 1e-9 and m["pa_pve"] < 1e-9 and m["mpjpe"] < 1e-9


def test_rotation_removed_by_pa(skeleton, walk):
    R = rot_y(np.float64(np.deg2rad(10.0))).numpy()
    root = walk[:, :1]
    rotated = (walk - root) @ R.T + root
    m = position_metrics(rotated, walk, skeleton)
    assert m["pa_mpjpe"] < 1e-9 and m["mpjpe"] > 1.0


def test_hand_subset_ignores_body_error(skeleton, walk):
    p = walk.copy()
    p[:, 4] += 0.05  # knee
    assert position_metrics(p, walk, skeleton, "hands")["pa_mpjpe"] < 1e-9
    assert position_metrics(p, walk, skeleton, "all")["pa_mpjpe"] > 0


@given(st.integers(0, 10_000))
def test_pa_never_exceeds_root_aligned(seed):
    from wholebody.kinematics import default_skeleton

    r = np.random.default_rng(seed)
    gt = r.normal(size=(4, 55, 3))
    pred = gt + r.normal(scale=r.uniform(0.01, 0.5), size=gt.shape)
    m = position_metrics(pred, gt, default_skeleton())
    assert m["pa_mpjpe"] <= m["mpjpe"] + 1e-9
    assert m["pa_pve"] <= m["pve"] + 1e-9


def test_rigid_invariance(skeleton, rng):
    gt = rng.normal(size=(6, 55, 3))
    pred = gt + rng.normal(scale=0.05, size=gt.shape)
    R = random_rotations(rng, 1)[0]
    t = rng.normal(size=3)
    a = evaluate(pred, gt, skeleton, 30.0).flat()
    b = evaluate(pred @ R.T + t, gt @ R.T + t, skeleton, 30.0).flat()
    for k in a:
        assert a[k] == pytest.approx(b[k], rel=1e-9, abs=1e-9), k


def test_position_metrics_chunking(skeleton, rng):
    gt = rng.normal(size=(12, 55, 3))
    pred = gt + rng.normal(scale=0.05, size=gt.shape)
    whole = position_metrics(pred, gt, skeleton)
    parts = [position_metrics(pred[s:s + 4], gt[s:s + 4], skeleton) for s in (0, 4, 8)]
    for k in whole:
        assert whole[k] == pytest.approx(np.mean([p[k] for p in parts]), rel=1e-12)


def brute_force_derivative(x, order, fps):
    """Difference table built with explicit loops."""
    T = len(x)
    h = 1.0 / fps
    out = np.zeros_like(x)
    for t in range(T):
        if order == 1:
            if t == 0:
                out[t] = (x[1] - x[0]) / h
            elif t == T - 1:
                out[t] = (x[T - 1] - x[T - 2]) / h
            else:
                out[t] = (x[t + 1] - x[t - 1]) / (2 * h)
        elif order == 2:
            c = min(max(t, 1), T - 2)
            out[t] = (x[c + 1] - 2 * x[c] + x[c - 1]) / h ** 2
        else:
            if 2 <= t <= T - 3:
                out[t] = (x[t + 2] - 2 * x[t + 1] + 2 * x[t - 1] - x[t - 2]) / (2 * h ** 3)
            else:
                # one-sided: starting at t near the start, ending at t near the end,
                # kept inside the clip for very short sequences
                s = min(max(t if t < 2 else t - 3, 0), T - 4)
                out[t] = (x[s + 3] - 3 * x[s + 2] + 3 * x[s + 1] - x[s]) / h ** 3
    return out


@pytest.mark.parametrize("T", [4, 5, 9, 20])
def test_finite_differences_match_brute_force(rng, T):
    x = rng.normal(size=(T, 3, 3))
    for order in (1, 2, 3):
        assert np.abs(finite_difference(x, order, 30.0) - brute_force_derivative(x, order, 30.0)).max() <= 1e-9 * 30 ** order


def test_alternating_jitter_closed_form(rng):
    T, eps, fps = 12, 0.002, 30.0
    gt = rng.normal(size=(T, 4, 3))
    pred = gt.copy()
    sign = np.array([(-1.0) ** t for t in range(T)])
    pred[:, 2, 0] += eps * sign
    got = temporal_metrics(pred, gt, fps)
    d1 = brute_force_derivative(pred, 1, fps) - brute_force_derivative(gt, 1, fps)
    d2 = brute_force_derivative(pred, 2, fps) - brute_force_derivative(gt, 2, fps)
    d3 = brute_force_derivative(pred, 3, fps)
    assert got["mpjve"] == pytest.approx(np.linalg.norm(d1, axis=-1).mean() * 1000, rel=1e-9)
    assert got["accel"] == pytest.approx(np.linalg.norm(d2, axis=-1).mean(), rel=1e-9)
    assert got["jitter"] == pytest.approx(np.linalg.norm(d3, axis=-1).mean(), rel=1e-9)
    # interior second difference of ±eps alternation is 4 eps per h^2
    assert abs(d2[5, 2, 0]) == pytest.approx(4 * eps * fps ** 2)


def test_straight_line_has_no_accel_or_jitter():
    t = np.arange(10.0)[:, None, None]
    x = t * np.array([0.01, 0.0, 0.02]) + np.zeros((1, 3, 3))
    m = temporal_metrics(x, x + 0.5, 30.0)
    assert m["accel"] < 1e-9 and m["jitter"] < 1e-9 and m["mpjve"] < 1e-9


def test_temporal_needs_four_frames():
    x = np.zeros((3, 2, 3))
    with pytest.raises(UndefinedMetricError):
        temporal_metrics(x, x, 30.0)


def test_report_shape(skeleton, walk):
    rep = evaluate(walk + 0.01, walk, skeleton, 30.0)
    d = rep.to_dict()
    assert set(d["all"]) == {"pa_pve", "pve", "pa_mpjpe", "mpjpe", "mpjve", "accel", "jitter"}
    assert all(v >= 0 for v in rep.flat().values())
    assert vertex_proxy(skeleton, walk).shape == (40, 109, 3)

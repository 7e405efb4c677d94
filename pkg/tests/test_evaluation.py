import math

import numpy as np
import pytest

from f2fvo.evaluation import (
    DegenerateAlignment,
    Sim3,
    Trajectory,
    accumulate,
    align,
    ate,
    decompose,
    evaluate,
    kitti_segment_errors,
    path_lengths,
    pooled_segment_errors,
    rpe,
    substitute_component,
    umeyama_align,
)
from f2fvo.se3 import RigidMotion, geodesic_angle, so3_exp
from f2fvo.synth import gen_noisy_odometry


def _random_motion(rng, angle=0.3, scale=1.0):
    return RigidMotion(so3_exp(rng.normal(size=3) * angle), rng.normal(size=3) * scale)


def _random_traj(rng, n=30):
    return accumulate([_random_motion(rng, 0.1) for _ in range(n - 1)])


def _straight(n, step=1.0):
    return accumulate([RigidMotion(np.eye(3), [0.0, 0.0, step])] * (n - 1))


def _left(T: RigidMotion, traj: Trajectory) -> Trajectory:
    return Trajectory([T @ p for p in traj.poses], traj.indices)


def _sim(s, R, t, traj: Trajectory) -> Trajectory:
    return Sim3(s, R, np.asarray(t, dtype=float)).apply(traj)


# --- accumulation --------------------------------------------------------------


def test_accumulate_identities():
    traj = accumulate([RigidMotion.identity()] * 4)
    assert len(traj) == 5
    for p in traj.poses:
        np.testing.assert_array_equal(p.matrix(), np.eye(4))


def test_accumulate_forward_steps():
    np.testing.assert_allclose(_straight(5).positions()[:, 2], [0, 1, 2, 3, 4], atol=1e-15)


def test_accumulate_decompose_round_trip(rng):
    traj = _random_traj(rng, 50)
    back = accumulate(decompose(traj), traj.poses[0])
    for a, b in zip(traj.poses, back.poses):
        np.testing.assert_allclose(a.matrix(), b.matrix(), atol=1e-9)


def test_trajectory_indices_validated():
    with pytest.raises(ValueError):
        Trajectory([RigidMotion.identity()] * 2, (0,))
    with pytest.raises(ValueError):
        Trajectory([RigidMotion.identity()] * 2, (3, 3))


# --- Umeyama -------------------------------------------------------------------------


def test_umeyama_identity(rng):
    traj = _random_traj(rng)
    S = umeyama_align(traj, traj)
    assert S.scale == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(S.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(S.translation, 0.0, atol=1e-12)


def test_umeyama_recovers_constructed_similarity(rng):
    gt = _random_traj(rng)
    Ry = so3_exp([0.0, math.radians(30.0), 0.0])
    est = _sim(0.5, Ry, [1.0, -2.0, 0.5], gt)
    S = umeyama_align(est, gt)
    assert S.scale == pytest.approx(2.0, abs=1e-9)
    np.testing.assert_allclose(S.rotation, Ry.T, atol=1e-9)
    assert math.degrees(geodesic_angle(S.rotation)) == pytest.approx(30.0, abs=1e-9)
    np.testing.assert_allclose(S.apply_points(est.positions()), gt.positions(), atol=1e-9)


def test_umeyama_optimal_against_random_similarities(rng):
    gt = _random_traj(rng, 40)
    est = Trajectory([RigidMotion(p.rotation, p.translation + rng.normal(scale=0.3, size=3)) for p in gt.poses])
    S = umeyama_align(est, gt)
    best = np.sum((gt.positions() - S.apply_points(est.positions())) ** 2)
    for _ in range(1000):
        cand = Sim3(
            S.scale * math.exp(rng.normal(scale=0.05)),
            so3_exp(rng.normal(scale=0.05, size=3)) @ S.rotation,
            S.translation + rng.normal(scale=0.1, size=3),
        )
        assert best <= np.sum((gt.positions() - cand.apply_points(est.positions())) ** 2) + 1e-12


def test_umeyama_zero_variance_raises(rng):
    gt = _random_traj(rng, 5)
    est = Trajectory([RigidMotion.identity()] * 5)
    with pytest.raises(DegenerateAlignment):
        umeyama_align(est, gt)


def test_umeyama_collinear_returns_proper_rotation():
    gt = _straight(10)
    est = _sim(0.7, so3_exp([0.2, 0.1, -0.3]), [1, 2, 3], gt)
    S = umeyama_align(est, gt)
    assert np.linalg.det(S.rotation) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(S.apply_points(est.positions()), gt.positions(), atol=1e-9)


def test_align_modes(rng):
    gt = _random_traj(rng)
    est = _sim(2.0, np.eye(3), [0, 0, 0], gt)
    assert ate(align(est, gt, "7dof"), gt) < 1e-9
    assert ate(align(est, gt, "6dof"), gt) > 0.1
    assert align(est, gt, "none") is est
    with pytest.raises(ValueError):
        align(est, gt, "5dof")


# --- ATE and RPE -------------------------------------------------------------------------


def test_ate_examples(rng):
    gt = _random_traj(rng)
    assert ate(gt, gt) == 0.0
    shifted = Trajectory([RigidMotion(p.rotation, p.translation + [1.0, 0, 0]) for p in gt.poses])
    assert ate(shifted, gt) == pytest.approx(1.0, abs=1e-12)


def test_ate_matches_naive_recomputation(rng):
    gt, est = _random_traj(rng), _random_traj(rng)
    S = umeyama_align(est, gt)
    total = 0.0
    for e, g in zip(est.poses, gt.poses):
        d = g.translation - (S.scale * S.rotation @ e.translation + S.translation)
        total += float(d @ d)
    assert ate(est, gt, S) == pytest.approx(math.sqrt(total / len(gt)), abs=1e-12)


def test_ate_invariant_to_similarity_before_7dof(rng):
    gt = _random_traj(rng)
    est = Trajectory([RigidMotion(p.rotation, p.translation + rng.normal(scale=0.2, size=3)) for p in gt.poses])
    base = evaluate(est, gt).ate
    for _ in range(10):
        moved = _sim(math.exp(rng.normal()), so3_exp(rng.normal(size=3)), rng.normal(size=3) * 10, est)
        assert evaluate(moved, gt).ate == pytest.approx(base, abs=1e-9)


def test_rpe_examples():
    gt = _straight(2)
    assert rpe(gt, gt) == (0.0, 0.0)
    est = accumulate([RigidMotion(np.eye(3), [0.0, 0.0, 1.1])])
    m, deg = rpe(est, gt)
    assert m == pytest.approx(0.1, abs=1e-12) and deg == 0.0
    assert all(math.isnan(x) for x in rpe(gt, gt, step=5))
    with pytest.raises(ValueError):
        rpe(gt, gt, step=0)


def test_rpe_and_rotation_errors_frame_invariant(rng):
    gt = _random_traj(rng, 40)
    est = accumulate([_random_motion(rng, 0.01, 0.01) @ r for r in decompose(gt)])
    m, deg = rpe(est, gt)
    _, r_err = kitti_segment_errors(est, gt, lengths=(2.0, 4.0))
    for _ in range(5):
        T = _random_motion(rng, 1.0, 5.0)
        m2, deg2 = rpe(_left(T, est), _left(T, gt))
        assert m2 == pytest.approx(m, abs=1e-9) and deg2 == pytest.approx(deg, abs=1e-9)
        _, r2 = kitti_segment_errors(_left(T, est), _left(T, gt), lengths=(2.0, 4.0))
        assert r2 == pytest.approx(r_err, abs=1e-9)


def test_mismatched_lengths_rejected():
    with pytest.raises(ValueError):
        ate(_straight(4), _straight(5))
    with pytest.raises(ValueError):
        rpe(Trajectory(_straight(3).poses, (0, 1, 2)), Trajectory(_straight(3).poses, (0, 1, 3)))


# --- KITTI segment errors ---------------------------------------------------------------


def test_segment_errors_zero_for_identical(rng):
    gt = accumulate([_random_motion(rng, 0.02, 1.0) for _ in range(300)])
    t, r = kitti_segment_errors(gt, gt, lengths=(50.0, 100.0))
    assert t == pytest.approx(0.0, abs=1e-12) and r == pytest.approx(0.0, abs=1e-12)
    t2, r2 = kitti_segment_errors(gt, gt, lengths=(50.0, 100.0, 50.0, 100.0))
    assert t2 == pytest.approx(0.0, abs=1e-12) and r2 == pytest.approx(0.0, abs=1e-12)


def test_segment_errors_straight_line_scale():
    gt = _straight(1000)
    est = _straight(1000, 1.01)
    t, r = kitti_segment_errors(est, gt)
    assert t == pytest.approx(1.0, abs=0.05)
    assert r == pytest.approx(0.0, abs=1e-12)


def test_segment_errors_too_short():
    t, r = kitti_segment_errors(_straight(50), _straight(50))
    assert math.isnan(t) and math.isnan(r)


def test_path_lengths():
    np.testing.assert_allclose(path_lengths(_straight(4, 2.0)), [0, 2, 4, 6])


def test_pooled_matches_single_sequence():
    gt, est = _straight(300), _straight(300, 1.02)
    single = kitti_segment_errors(align(est, gt), gt, lengths=(100.0,))
    pooled = pooled_segment_errors([(est, gt)], lengths=(100.0,))
    assert pooled == pytest.approx(single)
    assert all(math.isnan(x) for x in pooled_segment_errors([(_straight(5), _straight(5))]))


def test_evaluate_identity_all_zero(rng):
    gt = accumulate([_random_motion(rng, 0.02, 1.0) for _ in range(250)])
    rep = evaluate(gt, gt, lengths=(50.0, 100.0)).as_dict()
    assert set(rep) == {"t_err", "r_err", "ATE", "RPE_m", "RPE_deg"}
    for v in rep.values():
        assert abs(v) <= 1e-12 or v == pytest.approx(0.0, abs=1e-12)


# --- component substitution ----------------------------------------------------------------


def test_substitute_component_examples(rng):
    gt = [_random_motion(rng) for _ in range(10)]
    est = [_random_motion(rng) for _ in range(10)]
    same = substitute_component(gt, gt, "rotation")
    for a, b in zip(same, gt):
        np.testing.assert_array_equal(a.matrix(), b.matrix())
    both = substitute_component(substitute_component(est, gt, "rotation"), gt, "translation")
    for a, b in zip(both, gt):
        np.testing.assert_array_equal(a.matrix(), b.matrix())
    rot = substitute_component(est, gt, "rotation")
    for a, e, g in zip(rot, est, gt):
        np.testing.assert_array_equal(a.rotation, g.rotation)
        np.testing.assert_array_equal(a.translation, e.translation)
    with pytest.raises(ValueError):
        substitute_component(est, gt, "scale")
    with pytest.raises(ValueError):
        substitute_component(est[:3], gt, "rotation")


def test_rotation_substitution_beats_translation_substitution():
    wins = 0
    for seed in range(20):
        gt_rel, est_rel = gen_noisy_odometry(seed)
        gt = accumulate(gt_rel)
        a_rot = evaluate(accumulate(substitute_component(est_rel, gt_rel, "rotation")), gt).ate
        a_tr = evaluate(accumulate(substitute_component(est_rel, gt_rel, "translation")), gt).ate
        wins += a_rot < a_tr
    assert wins >= 19

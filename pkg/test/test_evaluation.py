import numpy as np
import pytest

from lidar_odometry.errors import LengthMismatch
from lidar_odometry.evaluation import (
    OdomErrors,
    accumulate,
    errors_to_csv,
    odometry_errors,
    pose_error,
    subsequence_set,
)
from lidar_odometry.evaluation.report import summary_line
from lidar_odometry.geometry import (
    PoseDelta,
    RigidTransform,
    Trajectory,
    compose,
    delta_to_transform,
)


def straight_line(n_frames, step=1.0):
    return Trajectory(tuple(RigidTransform.translate(step * k, 0.0, 0.0) for k in range(n_frames)))


def random_drive(rng, n_frames=100):
    deltas = [
        PoseDelta((rng.uniform(2.0, 4.0), rng.uniform(-0.3, 0.3), rng.uniform(-0.1, 0.1)), rng.uniform(-2, 2, size=3))
        for _ in range(n_frames - 1)
    ]
    noisy = [
        PoseDelta(d.t + rng.normal(scale=0.05, size=3), d.r + rng.normal(scale=0.2, size=3)) for d in deltas
    ]
    return accumulate(deltas), accumulate(noisy)


def naive_errors(gt, pred, subsequences):
    t_ratios, r_ratios = [], []
    for entry in subsequences:
        gt_ij = np.linalg.inv(gt[entry.first].matrix) @ gt[entry.last].matrix
        pred_ij = np.linalg.inv(pred[entry.first].matrix) @ pred[entry.last].matrix
        err = np.linalg.inv(gt_ij) @ pred_ij
        angle = np.degrees(np.arccos(np.clip((np.trace(err[:3, :3]) - 1.0) / 2.0, -1.0, 1.0)))
        t_ratios.append(np.linalg.norm(err[:3, 3]) / entry.dist)
        r_ratios.append(angle / entry.dist)
    return np.array(t_ratios), np.array(r_ratios)


class TestAccumulate:
    def test_empty(self):
        traj = accumulate([])
        assert len(traj) == 1
        assert traj[0].allclose(RigidTransform.identity())

    def test_turning(self):
        step = PoseDelta((1.0, 0.0, 0.0), (0.0, 0.0, 90.0))
        traj = accumulate([step, step])
        np.testing.assert_allclose(traj[1].translation, [1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(traj[2].translation, [1.0, 1.0, 0.0], atol=1e-12)


class TestSubsequences:
    def test_straight_line_entries(self):
        subsequences = subsequence_set(straight_line(850))
        assert len(subsequences) == 3200
        first = subsequences.entries[0]
        assert (first.first, first.last, first.length, first.dist) == (0, 100, 100.0, 100.0)
        assert all(e.last - e.first == int(e.length) for e in subsequences)

    def test_short_trajectory_has_no_entries(self):
        assert len(subsequence_set(straight_line(51))) == 0

    def test_stride(self):
        subsequences = subsequence_set(straight_line(850), stride=10)
        assert len(subsequences) == 320
        assert {e.first % 10 for e in subsequences} == {0}

    def test_invalid(self):
        with pytest.raises(ValueError):
            subsequence_set(straight_line(1))
        with pytest.raises(ValueError):
            subsequence_set(straight_line(10), stride=0)


class TestPoseError:
    def test_identical(self):
        t = delta_to_transform(PoseDelta((1, 2, 3), (10, -20, 30)))
        assert pose_error(t, t) == (0.0, 0.0)

    def test_translation_offset(self):
        t_err, angle = pose_error(RigidTransform.identity(), RigidTransform.translate(3.0, 4.0, 0.0))
        assert t_err == pytest.approx(5.0)
        assert angle == 0.0

    def test_rotation_offset(self):
        rz = delta_to_transform(PoseDelta((0, 0, 0), (0, 0, 30)))
        t_err, angle = pose_error(RigidTransform.identity(), rz)
        assert t_err == 0.0
        assert angle == pytest.approx(30.0)


class TestOdometryErrors:
    def test_perfect_prediction_is_exactly_zero(self, rng):
        gt, _ = random_drive(rng)
        errors = odometry_errors(gt, gt, subsequence_set(gt))
        assert len(errors) > 0
        assert np.all(errors.t_ratios == 0.0)
        assert np.all(errors.r_ratios == 0.0)

    def test_one_percent_drift(self):
        gt = straight_line(101)
        poses = list(gt.poses)
        poses[-1] = RigidTransform.translate(100.0, 1.0, 0.0)
        errors = odometry_errors(gt, Trajectory(tuple(poses)), subsequence_set(gt))
        assert len(errors) == 1
        assert errors.e_t == 0.01
        assert errors.e_r == 0.0

    def test_matches_direct_matrix_computation(self, rng):
        for _ in range(50):
            gt, pred = random_drive(rng)
            subsequences = subsequence_set(gt)
            errors = odometry_errors(gt, pred, subsequences)
            t_ratios, r_ratios = naive_errors(gt, pred, subsequences)
            np.testing.assert_allclose(errors.t_ratios, t_ratios, rtol=1e-7, atol=1e-9)
            np.testing.assert_allclose(errors.r_ratios, r_ratios, rtol=1e-7, atol=1e-9)

    def test_world_frame_does_not_matter(self, rng):
        gt, pred = random_drive(rng)
        world = delta_to_transform(PoseDelta((100.0, -50.0, 3.0), (5.0, -10.0, 120.0)))
        moved_gt = Trajectory(tuple(compose(world, pose) for pose in gt))
        moved_pred = Trajectory(tuple(compose(world, pose) for pose in pred))
        a = odometry_errors(gt, pred, subsequence_set(gt))
        b = odometry_errors(moved_gt, moved_pred, subsequence_set(moved_gt))
        np.testing.assert_allclose(a.t_ratios, b.t_ratios, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(a.r_ratios, b.r_ratios, rtol=1e-6, atol=1e-9)

    def test_length_mismatch(self):
        gt = straight_line(120)
        with pytest.raises(LengthMismatch):
            odometry_errors(gt, straight_line(119), subsequence_set(gt))


class TestReport:
    def _errors(self):
        return OdomErrors(np.array([100.0, 100.0, 200.0]), np.array([0.01, 0.03, 0.02]), np.array([0.1, 0.2, 0.3]))

    def test_pooled_is_entry_mean(self):
        a = self._errors()
        b = OdomErrors(np.array([100.0]), np.array([0.06]), np.array([0.4]))
        pooled = OdomErrors.pooled([a, b])
        assert len(pooled) == 4
        assert pooled.e_t == pytest.approx(0.03)
        assert pooled.e_r == pytest.approx(0.25)
        assert OdomErrors.pooled([]).e_t == 0.0

    def test_per_class(self):
        classes = self._errors().per_class()
        assert list(classes) == [100.0, 200.0]
        assert classes[100.0].count == 2
        assert classes[100.0].e_t == pytest.approx(0.02)

    def test_csv(self):
        lines = errors_to_csv(self._errors()).splitlines()
        assert lines[0] == "length_class,count,e_t_percent,e_r_deg_per_m"
        assert lines[1].startswith("100,2,2.000000,")
        assert lines[-1].startswith("all,3,2.000000,")

    def test_summary_line(self):
        assert summary_line("00", self._errors()).startswith("00: E_t=2.0000%")

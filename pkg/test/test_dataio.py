import struct

import numpy as np
import pytest

from lidar_odometry.dataio import (
    CalibTr,
    FramePair,
    KittiLayout,
    KittiPairDataset,
    SplitSpec,
    SyntheticConfig,
    lidar_to_camera_trajectory,
    make_synthetic_pair,
    make_synthetic_sequence,
    prefetch,
    read_calib,
    read_poses,
    read_scan,
    relative_gt,
    write_calib,
    write_scan,
)
from lidar_odometry.dataio.kitti import preprocess_sequence
from lidar_odometry.errors import MalformedCalib, MalformedPose, MalformedScan
from lidar_odometry.evaluation import accumulate, write_poses
from lidar_odometry.geometry import PoseDelta, RigidTransform, Trajectory, compose, delta_to_transform
from lidar_odometry.pointcloud import PointCloud, RansacConfig


def random_trajectory(rng, n=10):
    poses = [RigidTransform.identity()]
    for _ in range(n - 1):
        step = PoseDelta(rng.uniform(-2, 2, size=3), rng.uniform(-10, 10, size=3))
        poses.append(compose(poses[-1], delta_to_transform(step)))
    return Trajectory(tuple(poses))


class TestScanFiles:
    def test_single_point(self):
        cloud = read_scan(struct.pack("<4f", 1.0, 2.0, 3.0, 0.5))
        np.testing.assert_array_equal(cloud.xyz, [[1.0, 2.0, 3.0]])
        np.testing.assert_array_equal(cloud.features, [[0.5]])

    def test_empty(self):
        assert len(read_scan(b"")) == 0

    def test_bad_length(self):
        with pytest.raises(MalformedScan):
            read_scan(b"\x00" * 17)

    def test_non_finite(self):
        with pytest.raises(MalformedScan):
            read_scan(struct.pack("<4f", 1.0, float("nan"), 3.0, 0.5))

    def test_write_then_read_is_exact(self, rng):
        xyz = rng.normal(size=(50, 3)).astype(np.float32).astype(np.float64)
        intensity = rng.uniform(size=(50, 1)).astype(np.float32).astype(np.float64)
        cloud = PointCloud(xyz, intensity)
        again = read_scan(write_scan(cloud))
        np.testing.assert_array_equal(again.xyz, cloud.xyz)
        np.testing.assert_array_equal(again.features, cloud.features)


class TestPoseText:
    def test_identity_and_translation(self):
        traj = read_poses("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 5 0 1 0 0 0 0 1 0\n")
        assert traj[0].allclose(RigidTransform.identity())
        assert traj[1].allclose(RigidTransform.translate(5, 0, 0))

    def test_round_trip(self, rng):
        traj = random_trajectory(rng, 20)
        again = read_poses(write_poses(traj))
        assert len(again) == len(traj)
        for a, b in zip(traj, again):
            assert a.allclose(b, atol=1e-6)

    @pytest.mark.parametrize(
        "text", ["", "1 0 0 0 0 1 0 0 0 0 1\n", "1 0 0 0 0 1 0 0 0 0 1 x\n", "1 0 0 nan 0 1 0 0 0 0 1 0\n"]
    )
    def test_malformed(self, text):
        with pytest.raises(MalformedPose):
            read_poses(text)


class TestCalib:
    def test_reads_tr_line(self):
        text = "P0: 1 0 0 0 0 1 0 0 0 0 1 0\nTr: 0 -1 0 0.1 0 0 -1 0.2 1 0 0 0.3\n"
        calib = read_calib(text)
        np.testing.assert_allclose(calib.tr.translation, [0.1, 0.2, 0.3])
        assert read_calib(write_calib(calib)).tr.allclose(calib.tr, atol=1e-12)

    def test_missing_tr(self):
        with pytest.raises(MalformedCalib):
            read_calib("P0: 1 0 0 0 0 1 0 0 0 0 1 0\n")


def kitti_like_calib():
    rotation = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    return CalibTr(RigidTransform.from_rt(rotation, (0.01, -0.07, -0.05)))


class TestRelativeGt:
    def test_static_camera(self):
        traj = Trajectory((RigidTransform.identity(), RigidTransform.identity()))
        delta = relative_gt(traj, kitti_like_calib())[0]
        np.testing.assert_allclose(delta.as_vector(), np.zeros(6), atol=1e-12)

    def test_forward_motion_length(self):
        traj = Trajectory((RigidTransform.identity(), RigidTransform.translate(0, 0, 5)))
        delta = relative_gt(traj, CalibTr.identity())[0]
        assert np.linalg.norm(delta.t) == pytest.approx(5.0)

    def test_accumulated_deltas_reproduce_camera_trajectory(self, rng):
        calib = kitti_like_calib()
        traj = random_trajectory(rng, 15)
        back = lidar_to_camera_trajectory(accumulate(relative_gt(traj, calib)), calib)
        for a, b in zip(traj, back):
            assert a.allclose(b, atol=1e-6)

    def test_too_short(self):
        with pytest.raises(ValueError):
            relative_gt(Trajectory((RigidTransform.identity(),)), CalibTr.identity())


class TestSynthetic:
    def test_zero_motion(self):
        pair = make_synthetic_pair(0, SyntheticConfig(max_t=0.0, max_r=0.0))
        np.testing.assert_array_equal(pair.target.as_vector(), np.zeros(6))

    def test_constructive_oracle(self):
        pair = make_synthetic_pair(3, SyntheticConfig(n_points=128, overlap=0.7))
        moved = delta_to_transform(pair.target).apply(pair.q.xyz)
        np.testing.assert_allclose(moved, pair.p.xyz[pair.correspondence], atol=1e-9)

    def test_seed_determinism(self):
        cfg = SyntheticConfig(noise_sigma=0.02, overlap=0.8)
        a, b = make_synthetic_pair(5, cfg), make_synthetic_pair(5, cfg)
        np.testing.assert_array_equal(a.p.xyz, b.p.xyz)
        np.testing.assert_array_equal(a.q.xyz, b.q.xyz)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SyntheticConfig(n_points=8)
        with pytest.raises(ValueError):
            SyntheticConfig(overlap=0.0)

    def test_sequence_observations(self):
        cfg = SyntheticConfig(n_points=64)
        clouds, traj = make_synthetic_sequence(2, 4, cfg)
        assert len(clouds) == len(traj) == 4
        # 每帧都是同一静态场景在各自位姿下的观测
        world0 = traj[0].apply(clouds[0].xyz)
        world3 = traj[3].apply(clouds[3].xyz)
        np.testing.assert_allclose(world0, world3, atol=1e-9)


class TestLayoutAndDataset:
    def test_write_and_load_sequence(self, synthetic_root):
        layout = KittiLayout(synthetic_root)
        assert layout.frames(0) == list(range(6))
        assert layout.scan_path(0, 3).name == "000003.bin"
        assert len(layout.load_poses(0)) == 6
        assert layout.load_calib(0).tr.allclose(RigidTransform.identity())
        assert layout.has_sequence(0)
        assert not layout.has_sequence(3)

    def test_pair_dataset_targets(self, synthetic_root):
        dataset = KittiPairDataset(synthetic_root, [0], remove_plane=False)
        assert len(dataset) == 5
        layout = KittiLayout(synthetic_root)
        expected = relative_gt(layout.load_poses(0), layout.load_calib(0))
        pair = dataset[2]
        np.testing.assert_allclose(pair.target.as_vector(), expected[2].as_vector())
        assert len(pair.p) == len(layout.load_scan(0, 2))

    def test_pair_dataset_removes_plane(self, synthetic_root):
        kept = KittiPairDataset(synthetic_root, [0], remove_plane=False)[0]
        removed = KittiPairDataset(synthetic_root, [0], remove_plane=True)[0]
        assert len(removed.p) < len(kept.p)

    def test_preprocess_sequence(self, synthetic_root, tmp_path):
        target = KittiLayout(tmp_path / "reduced")
        stats = preprocess_sequence(KittiLayout(synthetic_root), target, 0, RansacConfig())
        assert [frame for frame, _ in stats] == list(range(6))
        assert all(0.43 <= fraction <= 0.47 for _, fraction in stats)
        assert target.frames(0) == list(range(6))
        assert target.poses_path(0).exists()


def test_split_spec():
    split = SplitSpec()
    assert split.sequences("train") == (0, 1, 2, 8, 9)
    assert split.sequences("all") == tuple(range(11))
    with pytest.raises(ValueError):
        SplitSpec(train=(0, 1), test=(1, 2))
    with pytest.raises(ValueError):
        split.sequences("dev")


class _SlowDataset:
    def __init__(self, pairs):
        self.pairs = pairs

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]


def test_prefetch_preserves_order(small_pairs):
    dataset = _SlowDataset(small_pairs)
    order = [3, 1, 7, 0, 5]
    for workers in (0, 2):
        delivered = list(prefetch(dataset, order, workers=workers, depth=2))
        assert [id(p) for p in delivered] == [id(small_pairs[i]) for i in order]
    unordered = list(prefetch(dataset, order, workers=3, deterministic=False))
    assert sorted(id(p) for p in unordered) == sorted(id(small_pairs[i]) for i in order)


def test_frame_pair_rejects_large_rotation():
    cloud = PointCloud(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        FramePair(cloud, cloud, PoseDelta((0, 0, 0), (0, 0, 180.0)))

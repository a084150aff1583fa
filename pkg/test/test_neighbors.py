import time

import numpy as np
import pytest

from lidar_odometry.errors import EmptyCloud
from lidar_odometry.neighbors import VoxelGrid, canonical_start, farthest_point_sampling, knn, radius_group


def d2(a, b):
    dx = a[..., 0] - b[..., 0]
    dy = a[..., 1] - b[..., 1]
    dz = a[..., 2] - b[..., 2]
    return dx * dx + dy * dy + dz * dz


def fps_reference(points, n_fps, start):
    n = len(points)
    dist = d2(points[:, None, :], points[None, :, :])
    selected = [start]
    while len(selected) < min(n_fps, n):
        nearest = dist[:, selected].min(axis=1)
        nearest[selected] = -1.0
        selected.append(int(np.argmax(nearest)))
    return [selected[i % len(selected)] for i in range(n_fps)]


def radius_reference(centroid_index, points, r, n_n):
    rows = []
    for c in centroid_index:
        dist = d2(points, points[c])
        hits = [i for i in range(len(points)) if dist[i] <= r * r][:n_n]
        rows.append(hits or [int(c)])
    return rows


def knn_reference(queries, points, k):
    rows = []
    for q in queries:
        dist = d2(points, q)
        order = sorted(range(len(points)), key=lambda i: (dist[i], i))[: min(k, len(points))]
        rows.append([order[i % len(order)] for i in range(k)])
    return rows


def random_instance(rng, n):
    if rng.random() < 0.3:
        # 整数网格坐标，制造大量并列距离与重复点
        return rng.integers(0, 4, size=(n, 3)).astype(float)
    return rng.uniform(-5, 5, size=(n, 3))


def test_fps_examples():
    points = np.array([[0.0, 0, 0], [1.0, 0, 0], [10.0, 0, 0]])
    assert farthest_point_sampling(points, 2, 0).tolist() == [0, 2]
    rng = np.random.default_rng(0)
    cloud = rng.normal(size=(50, 3))
    assert sorted(farthest_point_sampling(cloud, 50, 3).tolist()) == list(range(50))
    cycled = farthest_point_sampling(cloud[:5], 12, 0)
    assert len(cycled) == 12
    np.testing.assert_array_equal(cycled[5:10], cycled[:5])


def test_fps_matches_reference():
    rng = np.random.default_rng(11)
    for _ in range(500):
        n = int(rng.integers(1, 40))
        points = random_instance(rng, n)
        n_fps = int(rng.integers(1, 48))
        start = int(rng.integers(0, n))
        assert farthest_point_sampling(points, n_fps, start).tolist() == fps_reference(points, n_fps, start)


def test_fps_prefix_duplicate_free_and_greedy():
    rng = np.random.default_rng(2)
    points = rng.uniform(size=(60, 3))
    previous = np.inf
    for n_fps in range(2, 20):
        chosen = farthest_point_sampling(points, n_fps, 0)
        assert len(set(chosen.tolist())) == n_fps
        sel = points[chosen]
        dist = np.sqrt(d2(sel[:, None, :], sel[None, :, :]))
        spacing = dist[np.triu_indices(n_fps, 1)].min()
        assert spacing <= previous
        previous = spacing


def fps_vectorized(points, n_fps, start):
    min_dist = np.full(len(points), np.inf)
    expected = [start]
    for _ in range(n_fps - 1):
        min_dist = np.minimum(min_dist, d2(points, points[expected[-1]]))
        masked = min_dist.copy()
        masked[expected] = -np.inf
        expected.append(int(np.argmax(masked)))
    return expected


def test_fps_large_cloud_bit_matches_vectorized_reference():
    points = np.random.default_rng(5).uniform(-30, 30, size=(1000, 3))
    assert farthest_point_sampling(points, 64, 0).tolist() == fps_vectorized(points, 64, 0)


def test_fps_many_blocks_with_ties_and_duplicates():
    rng = np.random.default_rng(6)
    # 整数坐标：大量重复点和等距并列，分块数远多于1
    points = rng.integers(0, 24, size=(6000, 3)).astype(float)
    points[:, 2] *= 0.25
    start = int(rng.integers(0, len(points)))
    assert farthest_point_sampling(points, 400, start).tolist() == fps_vectorized(points, 400, start)


def test_fps_flat_cloud():
    rng = np.random.default_rng(7)
    points = np.column_stack([rng.uniform(-10, 10, size=(3000, 2)), np.zeros(3000)])
    assert farthest_point_sampling(points, 128, 5).tolist() == fps_vectorized(points, 128, 5)


@pytest.mark.parametrize("method", ["brute", "grid"])
def test_kernels_are_translation_invariant(method):
    rng = np.random.default_rng(8)
    # 二进制有理坐标加整数平移，所有差值精确
    points = rng.integers(-2048, 2048, size=(300, 3)) / 64.0
    queries = rng.integers(-2048, 2048, size=(20, 3)) / 64.0
    base_fps = farthest_point_sampling(points, 40, 3)
    base_groups = radius_group(base_fps, points, 6.0, 12, method=method)
    base_knn = knn(queries, points, 10, method=method)
    for _ in range(50):
        shift = rng.integers(-1000, 1000, size=3).astype(float)
        moved = points + shift
        assert farthest_point_sampling(moved, 40, 3).tolist() == base_fps.tolist()
        groups = radius_group(base_fps, moved, 6.0, 12, method=method)
        np.testing.assert_array_equal(groups.index, base_groups.index)
        np.testing.assert_array_equal(groups.counts, base_groups.counts)
        np.testing.assert_array_equal(knn(queries + shift, moved, 10, method=method).index, base_knn.index)


def test_canonical_start():
    points = np.array([[10.0, 0, 0], [0.1, 0, 0], [-10.0, 0, 0], [0.1, 0, 0]])
    assert canonical_start(points) == 1
    with pytest.raises(EmptyCloud):
        canonical_start(np.zeros((0, 3)))


def test_radius_group_examples():
    points = np.array([[0.0, 0, 0], [5.0, 0, 0], [10.0, 0, 0]])
    groups = radius_group(np.array([1]), points, 0.5, 4)
    assert groups.row(0).tolist() == [1]
    assert groups.index[0].tolist() == [1, 1, 1, 1]

    dense = np.random.default_rng(0).uniform(-0.1, 0.1, size=(20, 3))
    groups = radius_group(np.array([7]), dense, 1.0, 8)
    assert groups.row(0).tolist() == list(range(8))


@pytest.mark.parametrize("method", ["brute", "grid"])
def test_radius_group_matches_reference(method):
    rng = np.random.default_rng(21)
    for _ in range(500):
        n = int(rng.integers(1, 120))
        points = random_instance(rng, n)
        centroids = rng.integers(0, n, size=int(rng.integers(1, 10)))
        r = float(rng.choice([0.5, 1.0, 1.5, 3.0]))
        n_n = int(rng.integers(1, 16))
        groups = radius_group(centroids, points, r, n_n, method=method)
        expected = radius_reference(centroids, points, r, n_n)
        assert [groups.row(i).tolist() for i in range(len(groups))] == expected


def test_knn_examples():
    points = np.array([[0.0, 0, 0], [1.0, 0, 0], [-1.0, 0, 0], [3.0, 0, 0]])
    assert knn(np.array([[3.0, 0, 0]]), points, 1).row(0).tolist() == [3]
    # 两个等距点，索引小者优先
    assert knn(np.array([[0.0, 0, 0]]), points, 3).row(0).tolist() == [0, 1, 2]
    sparse = knn(np.array([[0.0, 0, 0]]), points[:2], 5)
    assert sparse.index[0].tolist() == [0, 1, 0, 1, 0]
    assert sparse.counts[0] == 2


@pytest.mark.parametrize("method", ["brute", "grid"])
def test_knn_matches_reference(method):
    rng = np.random.default_rng(31)
    for _ in range(500):
        n = int(rng.integers(1, 120))
        points = random_instance(rng, n)
        queries = random_instance(rng, int(rng.integers(1, 8)))
        k = int(rng.integers(1, 20))
        result = knn(queries, points, k, method=method)
        assert result.index.tolist() == knn_reference(queries, points, k)


def test_grid_paths_match_brute_on_large_clouds():
    rng = np.random.default_rng(41)
    points = rng.uniform(0, 20, size=(1000, 3))
    centroids = farthest_point_sampling(points, 64, 0)
    a = radius_group(centroids, points, 2.0, 16, method="brute")
    b = radius_group(centroids, points, 2.0, 16, method="grid")
    np.testing.assert_array_equal(a.index, b.index)
    np.testing.assert_array_equal(a.counts, b.counts)
    queries = points[centroids] + 0.25
    np.testing.assert_array_equal(knn(queries, points, 16, "brute").index, knn(queries, points, 16, "grid").index)


def test_voxel_grid_neighborhood():
    points = np.array([[0.0, 0, 0], [0.5, 0, 0], [2.5, 0, 0], [0.2, 0.9, 0.9]])
    grid = VoxelGrid(points, 1.0)
    assert grid.neighborhood(points[0]).tolist() == [0, 1, 3]


def test_empty_inputs():
    with pytest.raises(EmptyCloud):
        farthest_point_sampling(np.zeros((0, 3)), 4)
    with pytest.raises(EmptyCloud):
        knn(np.zeros((1, 3)), np.zeros((0, 3)), 2)


@pytest.mark.slow
def test_fps_performance_floor():
    points = np.random.default_rng(0).uniform(-50, 50, size=(100_000, 3))
    started = time.perf_counter()
    farthest_point_sampling(points, 1024, 0)
    assert time.perf_counter() - started < 0.5


@pytest.mark.slow
def test_grid_grouping_speedup():
    rng = np.random.default_rng(1)
    points = rng.uniform(0, 50, size=(100_000, 3))
    centroids = farthest_point_sampling(points, 1024, 0)
    started = time.perf_counter()
    brute = radius_group(centroids, points, 1.0, 32, method="brute")
    brute_time = time.perf_counter() - started
    started = time.perf_counter()
    grid = radius_group(centroids, points, 1.0, 32, method="grid")
    grid_time = time.perf_counter() - started
    np.testing.assert_array_equal(brute.index, grid.index)
    assert brute_time >= 10 * grid_time

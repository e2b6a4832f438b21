import numpy as np
import pytest

from polarplace.pointcloud import load_point_cloud, rotate_point_cloud
from polarplace.synth import (ScanSpec, generate_benchmark, generate_world, read_manifest,
                              simulate_scan, write_manifest)


def _surface_distance(world, pts):
    """Smallest |signed distance| from each world point to any prism surface."""
    best = np.full(len(pts), np.inf)
    for l in world.landmarks:
        c = np.array([l.center[0], l.center[1], l.height / 2])
        if l.kind == "box":
            q = np.abs(pts - c) - np.array([l.size[0], l.size[1], l.height / 2])
        else:
            rxy = np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1]) - l.size[0]
            q = np.column_stack([rxy, np.abs(pts[:, 2] - c[2]) - l.height / 2])
        sdf = np.linalg.norm(np.maximum(q, 0), axis=1) + np.minimum(q.max(axis=1), 0)
        best = np.minimum(best, np.abs(sdf))
    return best


def _to_world(pc, spec):
    yaw = np.deg2rad(spec.pose[2])
    c, s = np.cos(yaw), np.sin(yaw)
    p = pc.points
    return np.column_stack([c * p[:, 0] - s * p[:, 1] + spec.pose[0],
                            s * p[:, 0] + c * p[:, 1] + spec.pose[1],
                            p[:, 2] + spec.sensor_height_m])


@pytest.mark.parametrize("pose", [(3.0, -4.0, 0.0), (10.0, 12.0, 77.0), (-20.0, 5.0, 301.5)])
def test_points_lie_on_landmark_surfaces(world, pose):
    spec = ScanSpec(pose, beams=360, rings=16)
    pc = simulate_scan(world, spec)
    assert len(pc) > 100
    assert np.max(_surface_distance(world, _to_world(pc, spec))) < 1e-9


def test_yaw_is_a_rigid_rotation(world):
    a = simulate_scan(world, ScanSpec((1.0, 2.0, 30.0)))
    b = simulate_scan(world, ScanSpec((1.0, 2.0, 100.0)))
    # a point in a's sensor frame appears rotated by yaw_a - yaw_b in b's frame
    assert len(a) == len(b)
    assert np.allclose(rotate_point_cloud(a, -70.0).points, b.points, atol=1e-9)


def test_ground_returns_flag(world):
    spec = ScanSpec((0.0, 0.0, 0.0), ground_returns=True)
    z = simulate_scan(world, spec).points[:, 2]
    assert np.any(np.abs(z + spec.sensor_height_m) < 1e-9)
    z0 = simulate_scan(world, ScanSpec((0.0, 0.0, 0.0))).points[:, 2]
    assert not np.any(np.abs(z0 + spec.sensor_height_m) < 1e-9)


def test_scan_determinism(world):
    spec = ScanSpec((5.0, 5.0, 12.0), range_noise_sigma_m=0.05, dropout_prob=0.1, seed=9)
    assert np.array_equal(simulate_scan(world, spec).points, simulate_scan(world, spec).points)
    assert generate_world(3) == generate_world(3)
    assert generate_world(3) != generate_world(4)


def test_noise_and_dropout(world):
    clean = simulate_scan(world, ScanSpec((5.0, 5.0, 0.0)))
    dropped = simulate_scan(world, ScanSpec((5.0, 5.0, 0.0), dropout_prob=0.3, seed=1))
    assert 0.6 * len(clean) < len(dropped) < 0.8 * len(clean)
    noisy = simulate_scan(world, ScanSpec((5.0, 5.0, 0.0), range_noise_sigma_m=0.05, seed=1))
    assert len(noisy) == len(clean)
    dr = np.linalg.norm(noisy.points, axis=1) - np.linalg.norm(clean.points, axis=1)
    assert abs(np.std(dr) - 0.05) < 0.01
    # noise is along the ray: directions unchanged
    u = noisy.points / np.linalg.norm(noisy.points, axis=1, keepdims=True)
    v = clean.points / np.linalg.norm(clean.points, axis=1, keepdims=True)
    assert np.allclose(u, v, atol=1e-12)


def test_spec_validation():
    with pytest.raises(ValueError):
        ScanSpec(dropout_prob=1.0)
    with pytest.raises(ValueError):
        ScanSpec(range_noise_sigma_m=-1)
    with pytest.raises(ValueError):
        ScanSpec(azimuth_frame="body")


@pytest.fixture(scope="module")
def bench():
    w = generate_world(11, 120, 240.0)
    return w, generate_benchmark(w, 30, 20, revisit_fraction=0.5, seed=2, simulate=False)


def test_benchmark_associations(bench):
    w, b = bench
    assert b.db_poses.shape == (30, 3) and b.query_poses.shape == (20, 3)
    rev = b.associations >= 0
    assert rev.sum() == 10
    d = np.hypot(*(b.query_poses[rev, :2] - b.db_poses[b.associations[rev], :2]).T)
    assert np.all(d <= 0.5 + 1e-12)
    for xy in b.query_poses[~rev, :2]:
        assert np.min(np.hypot(*(b.db_poses[:, :2] - xy).T)) >= 10.0
    sep = np.hypot(*(b.db_poses[:, None, :2] - b.db_poses[None, :, :2]).transpose(2, 0, 1))
    assert np.min(sep + 1e9 * np.eye(30)) >= 6.0


def test_benchmark_determinism(bench):
    w, b = bench
    b2 = generate_benchmark(w, 30, 20, revisit_fraction=0.5, seed=2, simulate=False)
    assert np.array_equal(b.query_poses, b2.query_poses)
    assert b.db_specs == b2.db_specs


@pytest.mark.parametrize("dist", ["aligned", "flip"])
def test_yaw_distributions(dist):
    w = generate_world(11, 120, 240.0)
    b = generate_benchmark(w, 10, 10, yaw_distribution=dist, seed=0, simulate=False)
    rel = (b.query_poses[:, 2] - b.db_poses[b.associations, 2]) % 360
    assert np.allclose(rel, 0.0 if dist == "aligned" else 180.0)


def test_manifest_round_trip(tmp_path):
    w = generate_world(11, 120, 240.0)
    b = generate_benchmark(w, 4, 3, revisit_fraction=2 / 3, seed=1,
                           scan_kwargs={"beams": 90, "rings": 4})
    path = write_manifest(b, tmp_path, w)
    rows = read_manifest(path)
    assert [r["role"] for r in rows] == ["db"] * 4 + ["query"] * 3
    assert [r["associated_db_id"] for r in rows[:4]] == [0, 1, 2, 3]
    assert [r["associated_db_id"] for r in rows[4:]] == list(b.associations)
    for r, pose in zip(rows, np.vstack([b.db_poses, b.query_poses])):
        assert (r["x"], r["y"], r["yaw_deg"]) == tuple(pose)
    for r, pc in zip(rows, b.db_scans + b.query_scans):
        assert np.array_equal(load_point_cloud(r["scan_path"]).points,
                              pc.points.astype(np.float32).astype(np.float64))

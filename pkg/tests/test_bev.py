import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polarplace.bev import (BevConfig, BevVariant, PolarBev, build_polar_bev, channel_pool,
                            load_polar_bev, rotate_polar_bev, save_polar_bev)
from polarplace.errors import ConfigError, FormatError, PointOutOfBounds
from polarplace.pointcloud import PointCloud, rotate_point_cloud


def naive_histogram(points, cfg, origin=0.0):
    """Per-point loop written straight from the binning rules."""
    out = np.zeros(cfg.shape)
    for x, y, z in points:
        r = math.hypot(x, y)
        phi = math.degrees(math.atan2(y, x)) % 360.0
        h = z - origin
        i = min(int(r // (cfg.max_range_m / cfg.rings)), cfg.rings - 1)
        j = int(math.floor(phi / (360.0 / cfg.sectors))) % cfg.sectors
        if cfg.variant is BevVariant.HEIGHT:
            out[i, j, 0] = max(out[i, j, 0], h)
            continue
        k = min(int(h // (cfg.height_span_m / cfg.layers)), cfg.layers - 1)
        out[i, j, k] += 1
    if cfg.variant is BevVariant.OCCUPIED:
        out = (out > 0).astype(float)
    return out


@st.composite
def clouds_in_range(draw, max_r=80.0, span=20.0, n_max=80):
    n = draw(st.integers(0, n_max))
    r = draw(st.lists(st.floats(0, max_r), min_size=n, max_size=n))
    a = draw(st.lists(st.floats(0, 2 * math.pi), min_size=n, max_size=n))
    z = draw(st.lists(st.floats(0, span), min_size=n, max_size=n))
    pts = np.array([[ri * math.cos(ai), ri * math.sin(ai), zi] for ri, ai, zi in zip(r, a, z)])
    pts = pts.reshape(-1, 3)
    # keep points strictly inside the range after the trig round trip
    keep = np.hypot(pts[:, 0], pts[:, 1]) <= max_r
    return pts[keep]


@pytest.mark.parametrize("variant", ["occupied", "density", "height"])
@given(pts=clouds_in_range())
def test_matches_naive_histogram(variant, pts):
    cfg = BevConfig(rings=10, sectors=24, layers=5, variant=variant)
    got = build_polar_bev(PointCloud(pts), cfg).cells
    np.testing.assert_array_equal(got, naive_histogram(pts, cfg))


@given(pts=clouds_in_range())
def test_density_counts_every_point(pts):
    bev = build_polar_bev(PointCloud(pts), BevConfig(variant="density"))
    assert bev.cells.sum() == len(pts)


@given(pts=clouds_in_range())
def test_occupied_is_indicator_of_density(pts):
    pc = PointCloud(pts)
    dens = build_polar_bev(pc, BevConfig(variant="density")).cells
    occ = build_polar_bev(pc, BevConfig(variant="occupied")).cells
    np.testing.assert_array_equal(occ, (dens > 0).astype(float))


def test_empty_cloud_gives_zero_grid():
    bev = build_polar_bev(PointCloud.empty())
    assert bev.cells.shape == (40, 120, 20) and not bev.cells.any()


def test_single_point_cell():
    # r = 5 -> ring 2 (2 m rings); 10 deg -> sector 3 (3 deg sectors); z = 4.5 -> layer 4
    p = [5 * math.cos(math.radians(10)), 5 * math.sin(math.radians(10)), 4.5]
    bev = build_polar_bev(PointCloud(np.array([p])), BevConfig(variant="density"))
    assert bev.cells[2, 3, 4] == 1 and bev.cells.sum() == 1


def test_point_on_sector_edge_goes_to_upper_sector():
    bev = build_polar_bev(PointCloud(np.array([[0.0, 1.0, 0.0]])), BevConfig(variant="density"))
    assert bev.cells[0, 30, 0] == 1


def test_max_range_point_lands_in_last_ring():
    bev = build_polar_bev(PointCloud(np.array([[80.0, 0.0, 20.0]])), BevConfig(variant="density"))
    assert bev.cells[39, 0, 19] == 1


@pytest.mark.parametrize("p", [[80.01, 0, 1], [1, 0, -0.1], [1, 0, 20.5]])
def test_out_of_bounds(p):
    with pytest.raises(PointOutOfBounds):
        build_polar_bev(PointCloud(np.array([p], dtype=float)))


def test_height_origin_shifts_layers():
    pc = PointCloud(np.array([[1.0, 0.2, -1.0]]))
    bev = build_polar_bev(pc, BevConfig(variant="density"), height_origin_m=-1.5)
    assert bev.cells[0, 3, 0] == 1


def test_height_variant_forces_one_layer():
    assert BevConfig(variant="height").layers == 1


@pytest.mark.parametrize("kw", [dict(rings=0), dict(sectors=1), dict(max_range_m=-1)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        BevConfig(**kw)


@given(pts=clouds_in_range(), k=st.integers(-300, 300))
def test_roll_composes(pts, k):
    bev = build_polar_bev(PointCloud(pts), BevConfig(variant="density"))
    assert rotate_polar_bev(rotate_polar_bev(bev, k), -k) == bev
    assert rotate_polar_bev(bev, k + 120) == rotate_polar_bev(bev, k)


@st.composite
def sector_centred_clouds(draw, sectors=120):
    # points well inside their sector and ring survive rotation rounding
    n = draw(st.integers(1, 60))
    j = draw(st.lists(st.integers(0, sectors - 1), min_size=n, max_size=n))
    off = draw(st.lists(st.floats(0.25, 0.75), min_size=n, max_size=n))
    ring = draw(st.lists(st.integers(0, 39), min_size=n, max_size=n))
    u = draw(st.lists(st.floats(0.05, 0.95), min_size=n, max_size=n))
    r = [2.0 * (i + f) for i, f in zip(ring, u)]
    z = draw(st.lists(st.floats(0.01, 19.9), min_size=n, max_size=n))
    w = 360.0 / sectors
    ang = [math.radians((jj + o) * w) for jj, o in zip(j, off)]
    return np.array([[ri * math.cos(a), ri * math.sin(a), zi] for ri, a, zi in zip(r, ang, z)])


@given(pts=sector_centred_clouds(), k=st.integers(0, 119))
def test_cloud_rotation_is_column_shift(pts, k):
    cfg = BevConfig(variant="density")
    a = build_polar_bev(rotate_point_cloud(PointCloud(pts), 3.0 * k), cfg)
    b = rotate_polar_bev(build_polar_bev(PointCloud(pts), cfg), k)
    assert a == b


def test_channel_pool():
    cells = np.arange(2 * 3 * 4, dtype=float).reshape(2, 3, 4)
    bev = PolarBev(cells, BevConfig(2, 3, 4, variant="density"))
    np.testing.assert_array_equal(channel_pool(bev, "max").cells[..., 0], cells.max(axis=2))
    np.testing.assert_array_equal(channel_pool(bev, "sum").cells[..., 0], cells.sum(axis=2))
    assert channel_pool(bev).config.layers == 1
    with pytest.raises(ValueError):
        channel_pool(bev, "mean")


@pytest.mark.parametrize("variant", ["occupied", "density", "height"])
def test_save_load_round_trip(tmp_path, variant, scan):
    from polarplace.pointcloud import filter_points, FilterConfig
    cfg = BevConfig(variant=variant)
    bev = build_polar_bev(filter_points(scan), cfg, height_origin_m=FilterConfig().ground_z_m)
    path = tmp_path / "g.pbev"
    save_polar_bev(bev, path)
    # cells are stored as float32; counts and indicators survive exactly
    want = PolarBev(bev.cells.astype(np.float32).astype(np.float64), cfg)
    assert load_polar_bev(path) == want
    if variant != "height":
        assert want == bev
    raw = path.read_bytes()
    assert raw[:4] == b"PBEV" and len(raw) == 36 + 4 * bev.cells.size


def test_load_rejects_bad_files(tmp_path):
    p = tmp_path / "g.pbev"
    p.write_bytes(b"XXXX" + b"\0" * 36)
    with pytest.raises(FormatError):
        load_polar_bev(p)
    bev = PolarBev(np.zeros((2, 4, 1)), BevConfig(2, 4, 1))
    save_polar_bev(bev, p)
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(FormatError):
        load_polar_bev(p)

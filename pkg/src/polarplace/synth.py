"""Synthetic worlds of boxes and cylinders and a ray-casting LiDAR simulator.

The azimuth grid of the simulated sensor is anchored to the map frame by
default, so two zero-noise scans from the same position differ by an exact
rigid rotation whatever their yaw.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pointcloud import PointCloud, save_point_cloud


@dataclass(frozen=True)
class Landmark:
    """Vertical prism standing on z = 0.

    ``kind`` is ``"box"`` (axis-aligned, half extents ``size``) or
    ``"cylinder"`` (radius ``size[0]``).
    """

    kind: str
    center: tuple
    size: tuple
    height: float


@dataclass(frozen=True)
class World:
    seed: int
    extent_m: float
    landmarks: tuple = ()


@dataclass(frozen=True)
class ScanSpec:
    pose: tuple = (0.0, 0.0, 0.0)
    beams: int = 720
    rings: int = 16
    range_noise_sigma_m: float = 0.0
    dropout_prob: float = 0.0
    seed: int = 0
    elevation_deg: tuple = (-15.0, 15.0)
    sensor_height_m: float = 1.8
    max_range_m: float = 100.0
    ground_returns: bool = False
    azimuth_frame: str = "world"

    def __post_init__(self):
        if self.beams < 1 or self.rings < 1:
            raise ValueError("beams and rings must be >= 1")
        if self.range_noise_sigma_m < 0:
            raise ValueError("range noise must be non-negative")
        if not 0 <= self.dropout_prob < 1:
            raise ValueError("dropout_prob must lie in [0, 1)")
        if self.azimuth_frame not in ("world", "sensor"):
            raise ValueError(f"unknown azimuth frame {self.azimuth_frame!r}")


def generate_world(seed, n_landmarks=120, extent_m=200.0, height_range=(2.0, 15.0)):
    """Uniformly scattered boxes and cylinders in a square of side ``extent_m``."""
    if n_landmarks < 1:
        raise ValueError("n_landmarks must be >= 1")
    rng = np.random.default_rng(seed)
    half = extent_m / 2
    out = []
    for _ in range(n_landmarks):
        cx, cy = rng.uniform(-half, half, size=2)
        h = float(rng.uniform(*height_range))
        if rng.random() < 0.5:
            sx, sy = rng.uniform(0.5, 4.0, size=2)
            out.append(Landmark("box", (float(cx), float(cy)), (float(sx), float(sy)), h))
        else:
            r = float(rng.uniform(0.4, 3.0))
            out.append(Landmark("cylinder", (float(cx), float(cy)), (r, r), h))
    return World(seed, float(extent_m), tuple(out))


def _landmark_arrays(world):
    boxes = [l for l in world.landmarks if l.kind == "box"]
    cyls = [l for l in world.landmarks if l.kind == "cylinder"]
    b = np.array([[l.center[0], l.center[1], l.size[0], l.size[1], l.height] for l in boxes])
    c = np.array([[l.center[0], l.center[1], l.size[0], l.height] for l in cyls])
    return b.reshape(-1, 5), c.reshape(-1, 4)


def _box_intervals(o, ux, uy, boxes):
    """Horizontal entry/exit distances of each azimuth through each box footprint."""
    with np.errstate(divide="ignore", invalid="ignore"):
        tx1 = (boxes[None, :, 0] - boxes[None, :, 2] - o[0]) / ux[:, None]
        tx2 = (boxes[None, :, 0] + boxes[None, :, 2] - o[0]) / ux[:, None]
        ty1 = (boxes[None, :, 1] - boxes[None, :, 3] - o[1]) / uy[:, None]
        ty2 = (boxes[None, :, 1] + boxes[None, :, 3] - o[1]) / uy[:, None]
    in_x = np.abs(o[0] - boxes[:, 0]) <= boxes[:, 2]
    in_y = np.abs(o[1] - boxes[:, 1]) <= boxes[:, 3]
    # axis-parallel azimuths: the slab is either always or never crossed
    par_x = (ux == 0)[:, None]
    par_y = (uy == 0)[:, None]
    lox = np.where(par_x, np.where(in_x, -np.inf, np.inf), np.minimum(tx1, tx2))
    hix = np.where(par_x, np.where(in_x, np.inf, -np.inf), np.maximum(tx1, tx2))
    loy = np.where(par_y, np.where(in_y, -np.inf, np.inf), np.minimum(ty1, ty2))
    hiy = np.where(par_y, np.where(in_y, np.inf, -np.inf), np.maximum(ty1, ty2))
    return np.maximum(lox, loy), np.minimum(hix, hiy)


def _cylinder_intervals(o, ux, uy, cyls):
    fx = o[0] - cyls[:, 0]
    fy = o[1] - cyls[:, 1]
    b = ux[:, None] * fx[None] + uy[:, None] * fy[None]
    c = fx * fx + fy * fy - cyls[:, 2] ** 2
    disc = b * b - c[None]
    root = np.sqrt(np.maximum(disc, 0.0))
    s_in = np.where(disc >= 0, -b - root, np.inf)
    s_out = np.where(disc >= 0, -b + root, -np.inf)
    return s_in, s_out


def _cast_prisms(o, az, el, s_in, s_out, heights):
    """Range to the first prism surface for every (azimuth, elevation) ray.

    A ray enters through the wall at horizontal distance ``s_in`` when its
    height there lies on the wall, otherwise it may come down onto the roof.
    """
    if s_in.shape[1] == 0:
        return np.full((len(az), len(el)), np.inf)
    tan_e = np.tan(el)[None, None, :]
    cos_e = np.cos(el)[None, None, :]
    h = heights[None, :, None]
    si = s_in[:, :, None]
    so = s_out[:, :, None]
    valid = (so >= si) & (si > 0)
    z_in = o[2] + si * tan_e
    wall = valid & (z_in >= 0) & (z_in <= h)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_roof = (h - o[2]) / tan_e
    roof = valid & (z_in > h) & (tan_e < 0) & (s_roof >= si) & (s_roof <= so)
    s = np.where(wall, si, np.where(roof, s_roof, np.inf))
    return (s / cos_e).min(axis=1)


def ray_angles(spec):
    """World and sensor azimuths (radians) of each beam, and ring elevations."""
    az = (np.arange(spec.beams) + 0.5) * (2 * np.pi / spec.beams)
    el = np.deg2rad(np.linspace(spec.elevation_deg[0], spec.elevation_deg[1], spec.rings))
    yaw = np.deg2rad(spec.pose[2])
    if spec.azimuth_frame == "world":
        return az, az - yaw, el
    return az + yaw, az, el


def simulate_scan(world, spec):
    """Ray-cast one scan; returns sensor-frame points ordered by beam index."""
    az_w, az_s, el = ray_angles(spec)
    o = np.array([spec.pose[0], spec.pose[1], spec.sensor_height_m], dtype=np.float64)
    boxes, cyls = _landmark_arrays(world)
    reach = spec.max_range_m + 6.0
    boxes = boxes[np.hypot(boxes[:, 0] - o[0], boxes[:, 1] - o[1]) <= reach]
    cyls = cyls[np.hypot(cyls[:, 0] - o[0], cyls[:, 1] - o[1]) <= reach]
    ux, uy = np.cos(az_w), np.sin(az_w)
    bi, bo = _box_intervals(o, ux, uy, boxes) if len(boxes) else (np.zeros((len(az_w), 0)),) * 2
    ci, co = _cylinder_intervals(o, ux, uy, cyls) if len(cyls) else (np.zeros((len(az_w), 0)),) * 2
    t = _cast_prisms(o, az_w, el, np.concatenate([bi, ci], 1), np.concatenate([bo, co], 1),
                     np.concatenate([boxes[:, 4], cyls[:, 3]]))
    if spec.ground_returns:
        with np.errstate(divide="ignore"):
            tg = np.where(el < 0, -o[2] / np.sin(el), np.inf)
        t = np.minimum(t, tg[None, :])
    t = t.reshape(-1)
    keep = t <= spec.max_range_m
    rng = np.random.default_rng(spec.seed)
    if spec.range_noise_sigma_m > 0:
        t = t + rng.normal(0.0, spec.range_noise_sigma_m, size=t.shape)
    if spec.dropout_prob > 0:
        keep &= rng.random(t.shape) >= spec.dropout_prob
    keep &= t > 0
    A, E = np.meshgrid(az_s, el, indexing="ij")
    d = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], -1).reshape(-1, 3)
    return PointCloud(t[keep, None] * d[keep])


def _inside_landmark(world, xy, clearance):
    for l in world.landmarks:
        dx, dy = xy[0] - l.center[0], xy[1] - l.center[1]
        if l.kind == "box":
            if abs(dx) <= l.size[0] + clearance and abs(dy) <= l.size[1] + clearance:
                return True
        elif dx * dx + dy * dy <= (l.size[0] + clearance) ** 2:
            return True
    return False


@dataclass(frozen=True)
class Benchmark:
    db_poses: np.ndarray
    query_poses: np.ndarray
    associations: np.ndarray
    db_specs: tuple
    query_specs: tuple
    db_scans: tuple = field(default=(), repr=False)
    query_scans: tuple = field(default=(), repr=False)


def _sample_free(world, rng, n, min_sep, others=(), other_sep=0.0, margin=0.35,
                 clearance=1.0, max_tries=200000):
    half = world.extent_m / 2 * (1 - margin)
    pts = []
    others = np.asarray(others, dtype=np.float64).reshape(-1, 2)
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > max_tries:
            raise RuntimeError(f"could only place {len(pts)} of {n} poses; enlarge the world")
        xy = rng.uniform(-half, half, size=2)
        if _inside_landmark(world, xy, clearance):
            continue
        if pts and np.min(np.hypot(*(np.array(pts) - xy).T)) < min_sep:
            continue
        if len(others) and np.min(np.hypot(*(others - xy).T)) < other_sep:
            continue
        pts.append(xy)
    return np.array(pts).reshape(-1, 2)


def _draw_yaw(rng, base, dist):
    if dist == "uniform":
        return float(rng.uniform(0, 360))
    if dist == "aligned":
        return base
    if dist == "flip":
        return (base + 180.0) % 360.0
    if dist == "mixed":
        return (base + 180.0) % 360.0 if rng.random() < 0.5 else float(rng.uniform(0, 360))
    raise ValueError(f"unknown yaw distribution {dist!r}")


def generate_benchmark(world, n_places=200, n_queries=100, revisit_fraction=1.0,
                       yaw_distribution="uniform", range_noise_sigma_m=0.0, dropout_prob=0.0,
                       position_perturbation_m=0.5, place_spacing_m=6.0,
                       novel_min_distance_m=10.0, seed=0, simulate=True, scan_kwargs=None):
    """Database places plus revisit and novel queries with exact associations.

    Revisit queries sit within ``position_perturbation_m`` of a database
    place (drawn uniformly over the disc) with yaw from ``yaw_distribution``
    (``uniform``, ``aligned``, ``flip`` or ``mixed``); novel queries are at
    least ``novel_min_distance_m`` from every database place.
    """
    if not 0 <= revisit_fraction <= 1:
        raise ValueError("revisit_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    kw = dict(scan_kwargs or {})
    db_xy = _sample_free(world, rng, n_places, place_spacing_m)
    db_yaw = rng.uniform(0, 360, size=n_places)
    db_poses = np.column_stack([db_xy, db_yaw])

    n_rev = int(round(revisit_fraction * n_queries))
    targets = rng.choice(n_places, size=n_rev, replace=n_rev > n_places)
    q_poses, assoc = [], []
    for t in targets:
        for _ in range(1000):
            rr = position_perturbation_m * np.sqrt(rng.random())
            ang = rng.uniform(0, 2 * np.pi)
            xy = db_xy[t] + rr * np.array([np.cos(ang), np.sin(ang)])
            if not _inside_landmark(world, xy, 0.5):
                break
        q_poses.append([xy[0], xy[1], _draw_yaw(rng, float(db_yaw[t]), yaw_distribution)])
        assoc.append(int(t))
    novel = _sample_free(world, rng, n_queries - n_rev, place_spacing_m,
                         others=db_xy, other_sep=novel_min_distance_m)
    for xy in novel:
        q_poses.append([xy[0], xy[1], float(rng.uniform(0, 360))])
        assoc.append(-1)
    q_poses = np.array(q_poses, dtype=np.float64).reshape(-1, 3)

    base = int(rng.integers(0, 2 ** 31))
    noise = dict(range_noise_sigma_m=range_noise_sigma_m, dropout_prob=dropout_prob)
    db_specs = tuple(ScanSpec(tuple(map(float, p)), seed=base + i, **noise, **kw)
                     for i, p in enumerate(db_poses))
    q_specs = tuple(ScanSpec(tuple(map(float, p)), seed=base + n_places + i, **noise, **kw)
                    for i, p in enumerate(q_poses))
    db_scans = q_scans = ()
    if simulate:
        db_scans = tuple(simulate_scan(world, s) for s in db_specs)
        q_scans = tuple(simulate_scan(world, s) for s in q_specs)
    return Benchmark(db_poses, q_poses, np.array(assoc, dtype=np.int64), db_specs, q_specs,
                     db_scans, q_scans)


MANIFEST_HEADER = ["role", "scan_path", "x", "y", "yaw_deg", "associated_db_id"]


def write_manifest(bench, out_dir, world=None):
    """Write scans as xyz-binary files and a ``manifest.csv`` describing them.

    Database rows carry their own place id, query rows the associated
    database id or -1 for novel places.
    """
    out = Path(out_dir)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    db_scans = bench.db_scans or tuple(simulate_scan(world, s) for s in bench.db_specs)
    q_scans = bench.query_scans or tuple(simulate_scan(world, s) for s in bench.query_specs)
    rows = []
    for i, (pose, pc) in enumerate(zip(bench.db_poses, db_scans)):
        rel = f"scans/db_{i:05d}.bin"
        save_point_cloud(pc, out / rel)
        rows.append(["db", rel, *pose, i])
    for i, (pose, pc, a) in enumerate(zip(bench.query_poses, q_scans, bench.associations)):
        rel = f"scans/query_{i:05d}.bin"
        save_point_cloud(pc, out / rel)
        rows.append(["query", rel, *pose, int(a)])
    path = out / "manifest.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for role, rel, x, y, yaw, a in rows:
            w.writerow([role, rel, repr(float(x)), repr(float(y)), repr(float(yaw)), a])
    return path


def read_manifest(path):
    """Rows as dicts with ``scan_path`` resolved relative to the manifest."""
    path = Path(path)
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({
                "role": row["role"],
                "scan_path": str((path.parent / row["scan_path"]).resolve()),
                "x": float(row["x"]), "y": float(row["y"]), "yaw_deg": float(row["yaw_deg"]),
                "associated_db_id": int(row["associated_db_id"]),
            })
    return out

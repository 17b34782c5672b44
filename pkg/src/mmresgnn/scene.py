"""Procedural vehicular scenes, trajectories and ego-view renders.

Scenes are 2D occupancy grids indexed ``mask[row, col]`` where ``row``
follows the world y axis and ``col`` the world x axis; cell ``(col, row)``
covers ``[col*res, (col+1)*res) x [row*res, (row+1)*res)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import InvalidConfig

SCENARIO_KINDS = ("wide_lane", "crossroad", "forking_road")
DEFAULT_NUM_VEHICLES = {"wide_lane": 40, "crossroad": 20, "forking_road": 25}

SHADOW_RADIUS = 8
SHADOW_STD_DB = 3.0
NEAR_ROAD_CELLS = 20
SNAPSHOT_DT = 0.25
VEHICLE_Z = 0.75


@dataclass(frozen=True)
class SceneConfig:
    scenario_kind: str = "wide_lane"
    grid_width: int = 128
    grid_height: int = 128
    resolution: float = 1.0
    num_vehicles: Optional[int] = None
    num_rx: int = 400
    rx_height: float = 1.5
    tx_height: float = 2.0
    carrier_freq: float = 28.0
    seed: int = 0

    def __post_init__(self):
        if self.scenario_kind not in SCENARIO_KINDS:
            raise InvalidConfig(f"unknown scenario_kind {self.scenario_kind!r}")
        if self.num_vehicles is None:
            object.__setattr__(self, "num_vehicles", DEFAULT_NUM_VEHICLES[self.scenario_kind])
        if self.grid_width < 32 or self.grid_height < 32:
            raise InvalidConfig("grid_width and grid_height must be >= 32")
        if not self.resolution > 0:
            raise InvalidConfig("resolution must be positive")
        if not self.carrier_freq > 0:
            raise InvalidConfig("carrier_freq must be positive")
        if self.num_vehicles < 1:
            raise InvalidConfig("num_vehicles must be >= 1")
        if self.num_rx < 1:
            raise InvalidConfig("num_rx must be >= 1")

    @property
    def extent(self) -> tuple[float, float]:
        return self.grid_width * self.resolution, self.grid_height * self.resolution


@dataclass
class Scene:
    config: SceneConfig
    building_mask: np.ndarray
    tree_mask: np.ndarray
    road_mask: np.ndarray
    rx_positions: np.ndarray
    shadow_field: np.ndarray
    scene_id: str

    def cell_of(self, point) -> tuple[int, int]:
        """(col, row) of the cell containing a world point (no bounds check)."""
        res = self.config.resolution
        return int(np.floor(point[0] / res)), int(np.floor(point[1] / res))

    def on_road(self, point) -> bool:
        col, row = self.cell_of(point)
        h, w = self.road_mask.shape
        return 0 <= row < h and 0 <= col < w and bool(self.road_mask[row, col])


@dataclass(frozen=True)
class DynamicVehicle:
    vehicle_id: int
    position: np.ndarray
    heading: float
    speed: float
    half_extents: tuple[float, float, float]


@dataclass(frozen=True)
class Snapshot:
    snapshot_id: int
    tx_position: np.ndarray
    tx_heading: float
    tx_speed: float
    tx_vehicle_id: int
    dynamic_vehicles: tuple[DynamicVehicle, ...]
    scene_ref: str
    tx_half_extents: tuple[float, float, float] = (2.25, 0.9, VEHICLE_Z)


@dataclass
class EgoImage:
    pixels: np.ndarray
    pose: tuple[np.ndarray, float]
    window: float
    channels: tuple[str, str, str] = ("building", "tree", "vehicle")


# -- layout -----------------------------------------------------------------


def _kind_index(kind: str) -> int:
    return SCENARIO_KINDS.index(kind)


def _road_half_width(config: SceneConfig) -> int:
    if config.scenario_kind == "wide_lane":
        return max(5, config.grid_height // 12)
    if config.scenario_kind == "crossroad":
        return max(4, min(config.grid_width, config.grid_height) // 14)
    return max(4, config.grid_width // 18)


def road_centerlines(config: SceneConfig) -> list[np.ndarray]:
    """Road centerline polylines in cell units (x=col, y=row)."""
    w, h = config.grid_width, config.grid_height
    m = 4.0
    if config.scenario_kind == "wide_lane":
        return [np.array([[m, h / 2], [w - m, h / 2]])]
    if config.scenario_kind == "crossroad":
        return [np.array([[m, h / 2], [w - m, h / 2]]), np.array([[w / 2, m], [w / 2, h - m]])]
    fork = np.array([w / 2, h * 0.45])
    return [
        np.array([[w / 2, m], fork, [w * 0.15, h - m]]),
        np.array([[w / 2, m], fork, [w * 0.85, h - m]]),
    ]


def _distance_to_polylines(shape, polylines) -> np.ndarray:
    """Distance (cells) from each cell center to the nearest polyline."""
    rows, cols = np.mgrid[0 : shape[0], 0 : shape[1]]
    px, py = cols + 0.5, rows + 0.5
    best = np.full(shape, np.inf)
    for line in polylines:
        # extend open ends to the grid border so roads run off-map
        pts = np.asarray(line, dtype=float).copy()
        for i0, i1 in ((0, 1), (-1, -2)):
            d = pts[i0] - pts[i1]
            pts[i0] = pts[i0] + d / np.linalg.norm(d) * 8.0
        for a, b in zip(pts[:-1], pts[1:]):
            ab = b - a
            t = ((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / ab.dot(ab)
            t = np.clip(t, 0.0, 1.0)
            dx = px - (a[0] + t * ab[0])
            dy = py - (a[1] + t * ab[1])
            best = np.minimum(best, np.hypot(dx, dy))
    return best


def _place_blocks(rng, allowed: np.ndarray, n_try: int, size_range, fill=1.0) -> np.ndarray:
    out = np.zeros_like(allowed, dtype=bool)
    h, w = allowed.shape
    for _ in range(n_try):
        bw, bh = rng.integers(size_range[0], size_range[1] + 1, size=2)
        c0 = rng.integers(0, max(1, w - bw))
        r0 = rng.integers(0, max(1, h - bh))
        patch = allowed[r0 : r0 + bh, c0 : c0 + bw]
        if patch.all() and rng.random() < fill:
            out[r0 : r0 + bh, c0 : c0 + bw] = True
    return out


def _layout(config: SceneConfig, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    h, w = config.grid_height, config.grid_width
    hw = _road_half_width(config)
    kind = config.scenario_kind
    dist = _distance_to_polylines((h, w), road_centerlines(config))
    road = dist <= hw
    cols = np.arange(w)[None, :]
    # central median strip splits the carriageway, open at both ends for U-turns
    median = (dist <= 1.5) & (cols >= 12) & (cols < w - 12) if kind == "wide_lane" else np.zeros((h, w), bool)
    road &= ~median
    sidewalk = (dist > hw) & (dist <= hw + 2)
    free = dist > hw + 2

    if kind == "wide_lane":
        # two building rows hugging the sidewalks, broken by irregular gaps
        building = np.zeros((h, w), dtype=bool)
        for side in (-1, 1):
            col = 0
            edge = int(round(h / 2 + side * (hw + 2 + 0.5)))
            while col < w:
                bw = int(rng.integers(6, 16))
                depth = int(rng.integers(4, 12))
                setback = int(rng.integers(0, 3))
                if side > 0:
                    r0, r1 = edge + setback, edge + setback + depth
                else:
                    r0, r1 = edge - setback - depth, edge - setback
                building[max(r0, 0) : max(min(r1, h), 0), col : min(col + bw, w)] = True
                col += bw + int(rng.integers(3, 9))
        building |= _place_blocks(rng, free & (dist > hw + 16), 40, (4, 10))
        kiosks = np.zeros((h, w), dtype=bool)
        col = int(rng.integers(0, 12))
        while col < w:
            kiosks[:, col : col + int(rng.integers(2, 5))] = True
            col += int(rng.integers(10, 24))
        building = (building & free) | (median & kiosks)
        tree = (sidewalk | (median & ~building)) & (rng.random((h, w)) < 0.25)
        gaps = free & ~building & (dist < hw + 12)
        tree |= gaps & (rng.random((h, w)) < 0.2)
    elif kind == "crossroad":
        rows, cols = np.mgrid[0:h, 0:w]
        pitch = 18
        alley = 4
        in_block = ((rows % pitch) >= alley) & ((cols % pitch) >= alley)
        keep = rng.random((h // pitch + 1, w // pitch + 1)) < 0.85
        building = in_block & keep[rows // pitch, cols // pitch] & free
        tree = sidewalk & (rng.random((h, w)) < 0.08)
        tree |= free & ~building & (rng.random((h, w)) < 0.03)
    else:
        building = _place_blocks(rng, free & (dist > hw + 3), 60, (3, 8), fill=0.6)
        building &= free
        lush = ndimage.uniform_filter(rng.random((h, w)), size=5) > 0.48
        tree = (free | sidewalk) & ~building & lush

    building &= ~road
    tree &= ~road & ~building
    return building.astype(np.uint8), tree.astype(np.uint8), road.astype(np.uint8)


def _select_rx(config: SceneConfig, road: np.ndarray, building: np.ndarray) -> np.ndarray:
    near = ndimage.distance_transform_edt(road == 0) <= NEAR_ROAD_CELLS
    candidates = near & (building == 0)
    n_cand = int(candidates.sum())
    if config.num_rx > n_cand:
        raise InvalidConfig(
            f"num_rx={config.num_rx} exceeds the {n_cand} available road/near-road cells"
        )
    rows, cols = np.mgrid[0 : road.shape[0], 0 : road.shape[1]]
    chosen = None
    for step in range(max(road.shape), 0, -1):
        off = step // 2
        lattice = candidates & ((rows % step) == off) & ((cols % step) == off)
        if lattice.sum() >= config.num_rx:
            chosen = lattice
            break
    r, c = np.nonzero(chosen)
    pick = np.round(np.linspace(0, len(r) - 1, config.num_rx)).astype(int)
    res = config.resolution
    xy = np.stack([(c[pick] + 0.5) * res, (r[pick] + 0.5) * res], axis=1)
    z = np.full((config.num_rx, 1), config.rx_height)
    return np.hstack([xy, z])


def _shadow_field(config: SceneConfig) -> np.ndarray:
    rng = np.random.default_rng([config.seed, _kind_index(config.scenario_kind), 1])
    white = rng.standard_normal((config.grid_height, config.grid_width))
    smooth = ndimage.uniform_filter(white, size=2 * SHADOW_RADIUS + 1, mode="wrap")
    smooth -= smooth.mean()
    return smooth / smooth.std() * SHADOW_STD_DB


def generate_scene(config: SceneConfig) -> Scene:
    """Build the static environment for ``config``; a pure function of it."""
    rng = np.random.default_rng([config.seed, _kind_index(config.scenario_kind), 0])
    building, tree, road = _layout(config, rng)
    rx = _select_rx(config, road, building)
    return Scene(
        config=config,
        building_mask=building,
        tree_mask=tree,
        road_mask=road,
        rx_positions=rx,
        shadow_field=_shadow_field(config),
        scene_id=f"{config.scenario_kind}-s{config.seed}",
    )


# -- trajectories -----------------------------------------------------------


def _offset_polyline(line: np.ndarray, offset: float) -> np.ndarray:
    seg = np.diff(line, axis=0)
    seg /= np.linalg.norm(seg, axis=1, keepdims=True)
    normals = np.stack([-seg[:, 1], seg[:, 0]], axis=1)
    vert = np.empty_like(line)
    vert[0] = normals[0]
    vert[-1] = normals[-1]
    for i in range(1, len(line) - 1):
        n = normals[i - 1] + normals[i]
        n /= np.linalg.norm(n)
        vert[i] = n / max(n.dot(normals[i]), 0.5)
    return line + offset * vert


def lane_loops(config: SceneConfig) -> list[np.ndarray]:
    """Closed driving loops (world meters): out on one lane, back on the other."""
    hw = _road_half_width(config)
    loops = []
    for line in road_centerlines(config):
        for frac in (0.3, 0.7):
            a = frac * hw
            out = _offset_polyline(line, -a)
            back = _offset_polyline(line, a)[::-1]
            loop = np.vstack([out, back, out[:1]]) * config.resolution
            loops.append(loop)
    return loops


def _position_on_loop(loop: np.ndarray, cum: np.ndarray, s: float):
    s = s % cum[-1]
    i = int(np.searchsorted(cum, s, side="right") - 1)
    i = min(i, len(loop) - 2)
    seg = loop[i + 1] - loop[i]
    length = cum[i + 1] - cum[i]
    p = loop[i] + seg * ((s - cum[i]) / length)
    return p, float(np.arctan2(seg[1], seg[0]))


def simulate_trajectories(scene: Scene, num_snapshots: int, seed: int) -> list[Snapshot]:
    """Constant-speed loop following; the Tx role rotates round-robin over vehicle ids."""
    if num_snapshots < 1:
        raise InvalidConfig("num_snapshots must be >= 1")
    cfg = scene.config
    rng = np.random.default_rng([seed, _kind_index(cfg.scenario_kind), 2])
    loops = lane_loops(cfg)
    cums = [np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(lp, axis=0), axis=1))]) for lp in loops]
    n = cfg.num_vehicles
    route = np.arange(n) % len(loops)
    start = np.array([rng.uniform(0, cums[r][-1]) for r in route])
    speed = rng.uniform(8.0, 14.0, size=n)
    half = np.stack([rng.uniform(2.0, 2.5, n), rng.uniform(0.85, 1.0, n), np.full(n, VEHICLE_Z)], axis=1)

    snapshots = []
    for sid in range(num_snapshots):
        t = sid * SNAPSHOT_DT
        tx_id = sid % n
        vehicles = []
        for vid in range(n):
            p, heading = _position_on_loop(loops[route[vid]], cums[route[vid]], start[vid] + speed[vid] * t)
            vehicles.append(
                DynamicVehicle(
                    vehicle_id=vid,
                    position=np.array([p[0], p[1], VEHICLE_Z]),
                    heading=heading,
                    speed=float(speed[vid]),
                    half_extents=tuple(float(x) for x in half[vid]),
                )
            )
        tx = vehicles[tx_id]
        snapshots.append(
            Snapshot(
                snapshot_id=sid,
                tx_position=np.array([tx.position[0], tx.position[1], cfg.tx_height]),
                tx_heading=tx.heading,
                tx_speed=tx.speed,
                tx_vehicle_id=tx_id,
                dynamic_vehicles=tuple(v for v in vehicles if v.vehicle_id != tx_id),
                scene_ref=scene.scene_id,
                tx_half_extents=tx.half_extents,
            )
        )
    return snapshots


# -- ego view ---------------------------------------------------------------


def _ego_sample_points(tx_xy, heading: float, size: int, window: float):
    centers = (np.arange(size) + 0.5) / size - 0.5
    forward = 0.5 - (np.arange(size) + 0.5) / size  # row 0 is farthest ahead
    fwd = np.array([np.cos(heading), np.sin(heading)])
    right = np.array([np.sin(heading), -np.cos(heading)])
    f = forward[:, None] * window
    r = centers[None, :] * window
    x = tx_xy[0] + f * fwd[0] + r * right[0]
    y = tx_xy[1] + f * fwd[1] + r * right[1]
    return x, y


def _rasterize_vehicles(x, y, vehicles: Sequence[DynamicVehicle]) -> np.ndarray:
    occ = np.zeros(x.shape)
    for v in vehicles:
        dx, dy = x - v.position[0], y - v.position[1]
        c, s = np.cos(v.heading), np.sin(v.heading)
        along = dx * c + dy * s
        across = -dx * s + dy * c
        inside = (np.abs(along) <= v.half_extents[0]) & (np.abs(across) <= v.half_extents[1])
        occ[inside] = 1.0
    return occ


def render_ego_image(scene: Scene, snapshot: Snapshot, size: int = 64, window: float = 60.0) -> EgoImage:
    """Heading-up semantic crop around the Tx with bilinear mask resampling."""
    if size < 16:
        raise InvalidConfig("size must be >= 16")
    if not window > 0:
        raise InvalidConfig("window must be positive")
    res = scene.config.resolution
    x, y = _ego_sample_points(snapshot.tx_position, snapshot.tx_heading, size, window)
    coords = np.stack([y / res - 0.5, x / res - 0.5])
    pixels = np.empty((size, size, 3))
    for ch, mask in enumerate((scene.building_mask, scene.tree_mask)):
        pixels[..., ch] = ndimage.map_coordinates(mask.astype(float), coords, order=1, mode="grid-constant", cval=0.0)
    pixels[..., 2] = _rasterize_vehicles(x, y, snapshot.dynamic_vehicles)
    np.clip(pixels, 0.0, 1.0, out=pixels)
    return EgoImage(pixels=pixels, pose=(snapshot.tx_position.copy(), snapshot.tx_heading), window=window)

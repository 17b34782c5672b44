"""Per-link physics features extracted by Bresenham traversal of the masks.

Layout of the 14-dim vector (column index in brackets)::

    distance         [0] log10(d)        [1] d / window
    static_blockage  [2] r_building      [3] r_tree
    dynamic_blockers [4] I_dyn           [5] d_blocker / d   (1 when none)
    relative_pos     [6] dx/d [7] dy/d [8] dz/d
    direction_motion [9] cos(phi) [10] sin(phi) [11] v / v_max
    link_type        [12] is_transmission [13] is_correlation
"""

from __future__ import annotations

from collections import OrderedDict
from enum import Enum

import numpy as np

from .errors import DegenerateLink, InvalidConfig, OutOfBounds

FEATURE_DIM = 14
FEATURE_GROUPS = OrderedDict(
    [
        ("distance", (0, 2)),
        ("static_blockage", (2, 4)),
        ("dynamic_blockers", (4, 6)),
        ("relative_position", (6, 9)),
        ("direction_motion", (9, 12)),
        ("link_type", (12, 14)),
    ]
)
# finer-grained column sets used by feature ablations
FEATURE_SLICES = {
    **{name: tuple(range(a, b)) for name, (a, b) in FEATURE_GROUPS.items()},
    "direction": (9, 10),
    "speed": (11,),
}

IDX_LOG_D = 0
IDX_R_BUILDING = 2
IDX_R_TREE = 3
IDX_I_DYN = 4

DEFAULT_WINDOW = 60.0
DEFAULT_V_MAX = 20.0
DEFAULT_CORRIDOR = 2.0


class LinkType(str, Enum):
    TRANSMISSION = "transmission"
    CORRELATION = "correlation"


def bresenham_cells(p0, p1, shape=None) -> list[tuple[int, int]]:
    """Integer Bresenham traversal from ``p0`` to ``p1`` inclusive.

    Cells are ``(col, row)`` pairs. When ``shape`` (rows, cols) is given the
    endpoints are bounds-checked.
    """
    x0, y0 = int(p0[0]), int(p0[1])
    x1, y1 = int(p1[0]), int(p1[1])
    if shape is not None:
        h, w = shape
        for x, y in ((x0, y0), (x1, y1)):
            if not (0 <= x < w and 0 <= y < h):
                raise OutOfBounds(f"cell ({x}, {y}) outside grid {w}x{h}")
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    cells = []
    while True:
        cells.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return cells
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def _point_cell(p, resolution: float) -> tuple[int, int]:
    return int(np.floor(p[0] / resolution)), int(np.floor(p[1] / resolution))


def blockage_ratio(mask: np.ndarray, tx, rx, resolution: float) -> float:
    """Fraction of interior traversed cells that are occupied in ``mask``."""
    a = _point_cell(tx, resolution)
    b = _point_cell(rx, resolution)
    # traverse in a canonical direction so the result is symmetric in (tx, rx)
    if b < a:
        a, b = b, a
    cells = bresenham_cells(a, b, mask.shape)
    interior = cells[1:-1]
    if not interior:
        return 0.0
    cols = np.fromiter((c for c, _ in interior), dtype=np.intp, count=len(interior))
    rows = np.fromiter((r for _, r in interior), dtype=np.intp, count=len(interior))
    return float(mask[rows, cols].sum()) / len(interior)


def dynamic_blocker_features(snapshot, tx, rx, corridor: float = DEFAULT_CORRIDOR) -> tuple[int, float]:
    """(I_dyn, distance to nearest in-corridor blocker / link length)."""
    if not corridor > 0:
        raise InvalidConfig("corridor must be positive")
    a = np.asarray(tx[:2], dtype=float)
    ab = np.asarray(rx[:2], dtype=float) - a
    length2 = float(ab.dot(ab))
    if not snapshot.dynamic_vehicles or length2 == 0.0:
        return 0, 1.0
    centers = np.array([v.position[:2] for v in snapshot.dynamic_vehicles], dtype=float)
    rel = centers - a
    t = rel @ ab / length2
    perp = np.abs(rel[:, 0] * ab[1] - rel[:, 1] * ab[0]) / np.sqrt(length2)
    hit = (t >= 0.0) & (t <= 1.0) & (perp <= corridor)
    if not hit.any():
        return 0, 1.0
    # fraction along the ground projection equals the fraction along the 3D link
    return 1, float(t[hit].min())


def extract_link_features(
    scene,
    snapshot,
    rx,
    link_type=LinkType.TRANSMISSION,
    window: float = DEFAULT_WINDOW,
    v_max: float = DEFAULT_V_MAX,
    src=None,
    corridor: float = DEFAULT_CORRIDOR,
) -> np.ndarray:
    """Fill the 14-dim feature vector for one link.

    Transmission links run from the snapshot's Tx to ``rx``. For correlation
    links ``src`` is the first Rx and ``rx`` the second; the azimuth is then
    the world-frame bearing and the speed feature is zero.
    """
    link_type = LinkType(link_type)
    is_tx = link_type is LinkType.TRANSMISSION
    a = np.asarray(snapshot.tx_position if is_tx else src, dtype=float)
    b = np.asarray(rx, dtype=float)
    delta = b - a
    d = float(np.linalg.norm(delta))
    if d == 0.0:
        raise DegenerateLink("zero-length link")
    res = scene.config.resolution
    i_dyn, d_block = dynamic_blocker_features(snapshot, a, b, corridor)
    azimuth = np.arctan2(delta[1], delta[0])
    if is_tx:
        phi = azimuth - snapshot.tx_heading
        v_norm = min(snapshot.tx_speed / v_max, 1.0)
    else:
        phi = azimuth
        v_norm = 0.0
    out = np.empty(FEATURE_DIM)
    out[0] = np.log10(d)
    out[1] = min(d / window, 1.0)
    out[2] = blockage_ratio(scene.building_mask, a, b, res)
    out[3] = blockage_ratio(scene.tree_mask, a, b, res)
    out[4] = i_dyn
    out[5] = d_block
    out[6:9] = delta / d
    out[9] = np.cos(phi)
    out[10] = np.sin(phi)
    out[11] = v_norm
    out[12:14] = (1.0, 0.0) if is_tx else (0.0, 1.0)
    return out


def link_distance(features) -> np.ndarray:
    """Recover link length (m) from feature rows."""
    return 10.0 ** np.asarray(features)[..., IDX_LOG_D]

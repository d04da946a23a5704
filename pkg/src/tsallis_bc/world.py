"""Rectangular driving course and its forward-view raster renderer.

The course is a walled room with a rectangular centerline loop. The stop
sign (a red octagon billboard) sits at the corner diagonally opposite the
start corner, which is the second corner reached in either driving
direction; a white stop stripe lies on the floor a fixed distance before
that corner on each approach edge. Colored boxes along the walls act as
landmarks so every pose is visually distinguishable at low resolution.

Rendering is a flat-shaded perspective projection: column raycasts against
the four outer walls, an exact floor/ceiling reprojection for stripes, and
depth-tested billboards. No lighting, no textures; pure function of
(course, vehicle state, resolution).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

Color = tuple[float, float, float]


@dataclass(frozen=True)
class Billboard:
    x: float
    y: float
    z: float
    half_size: float
    color: Color
    shape: str = "square"  # or "octagon"


class PolylinePath:
    """Arc-length parametrized open polyline with projection support."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=np.float64)
        deltas = np.diff(self.points, axis=0)
        self.seg_len = np.sqrt((deltas ** 2).sum(axis=1))
        self.seg_dir = deltas / self.seg_len[:, None]
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.cum[-1])

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = min(np.searchsorted(self.cum, s, side="right") - 1, len(self.seg_len) - 1)
        return self.points[i] + (s - self.cum[i]) * self.seg_dir[i]

    def tangent_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = min(np.searchsorted(self.cum, s, side="right") - 1, len(self.seg_len) - 1)
        return self.seg_dir[i]

    def project(self, p) -> float:
        """Arc length of the closest point on the path to p."""
        p = np.asarray(p, dtype=np.float64)
        best_d2 = np.inf
        best_s = 0.0
        for i in range(len(self.seg_len)):
            rel = p - self.points[i]
            t = float(np.clip(rel @ self.seg_dir[i], 0.0, self.seg_len[i]))
            q = self.points[i] + t * self.seg_dir[i]
            d2 = float(((p - q) ** 2).sum())
            if d2 < best_d2:
                best_d2 = d2
                best_s = self.cum[i] + t
        return best_s


@dataclass(frozen=True)
class Course:
    bounds: tuple[float, float, float, float] = (0.0, 0.0, 12.0, 9.0)
    # centerline corners listed counterclockwise, start corner first
    corners: tuple = ((2.0, 2.0), (10.0, 2.0), (10.0, 7.0), (2.0, 7.0))
    sign_corner: int = 2  # diagonally opposite the start: second corner either way
    stop_line_offset: float = 1.0
    stop_line_width: float = 0.25
    track_halfwidth: float = 0.9
    wall_height: float = 1.0
    floor_color: Color = (0.70, 0.70, 0.68)
    ceiling_color: Color = (0.24, 0.24, 0.27)
    stripe_color: Color = (0.95, 0.95, 0.95)
    # west (x=xmin), east (x=xmax), south (y=ymin), north (y=ymax)
    wall_colors: tuple = ((0.55, 0.45, 0.33), (0.33, 0.45, 0.57),
                          (0.44, 0.55, 0.33), (0.50, 0.34, 0.52))
    sign: Billboard = Billboard(10.45, 7.45, 0.55, 0.30, (0.88, 0.06, 0.06), "octagon")
    landmarks: tuple = (
        Billboard(6.0, 0.35, 0.45, 0.30, (1.00, 0.85, 0.10)),
        Billboard(11.65, 4.5, 0.45, 0.30, (0.10, 0.80, 0.85)),
        Billboard(6.0, 8.65, 0.45, 0.30, (0.85, 0.15, 0.80)),
        Billboard(0.35, 4.5, 0.45, 0.30, (0.20, 0.80, 0.20)),
        Billboard(2.0, 0.35, 0.50, 0.26, (0.95, 0.55, 0.10)),
        Billboard(11.65, 8.0, 0.50, 0.26, (0.15, 0.25, 0.90)),
    )

    def path(self, direction: str) -> PolylinePath:
        """Centerline polyline from the start corner to the sign corner."""
        if direction == "counterclockwise":
            order = [0, 1, 2]
        elif direction == "clockwise":
            order = [0, 3, 2]
        else:
            raise ValueError(f"unknown direction {direction!r}")
        return PolylinePath([self.corners[i] for i in order])

    def stop_line_s(self, direction: str) -> float:
        return self.path(direction).length - self.stop_line_offset

    def stop_stripes(self) -> list[tuple[float, float, float, float]]:
        """Axis-aligned floor rects (xmin, ymin, xmax, ymax), one per approach edge."""
        rects = []
        for direction in ("counterclockwise", "clockwise"):
            p = self.path(direction)
            s = self.stop_line_s(direction)
            c = p.point_at(s)
            t = p.tangent_at(s - 1e-9)
            half_w = self.stop_line_width / 2.0
            ext = np.abs(t) * half_w + np.abs(np.array([-t[1], t[0]])) * self.track_halfwidth
            rects.append((c[0] - ext[0], c[1] - ext[1], c[0] + ext[0], c[1] + ext[1]))
        return rects

    def contains(self, x: float, y: float, margin: float = 0.0) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 + margin <= x <= x1 - margin and y0 + margin <= y <= y1 - margin


CAMERA_HEIGHT = 0.45
MIN_BILLBOARD_DEPTH = 0.10


def render(course: Course, vehicle, resolution: int) -> np.ndarray:
    """Rasterize the forward view at the vehicle pose; (3, R, R) floats in [0, 1]."""
    px, py, heading = float(vehicle.x), float(vehicle.y), float(vehicle.heading)
    if not course.contains(px, py):
        raise ValueError(f"vehicle outside course bounds: {(px, py)}")
    res = int(resolution)
    w = h = res
    f = w / 2.0
    cx, cy = w / 2.0, h / 2.0
    zc = CAMERA_HEIGHT

    fwd = np.array([math.cos(heading), math.sin(heading)])
    right = np.array([math.sin(heading), -math.cos(heading)])
    u = (np.arange(w) + 0.5 - cx) / f               # tan offsets per column
    dirs = fwd[:, None] + right[:, None] * u[None]  # (2, W); fwd-depth of t along ray = t

    x0, y0, x1, y1 = course.bounds
    t_wall = np.full(w, np.inf)
    wall_id = np.zeros(w, dtype=np.int64)
    planes = [(0, x0, 0), (0, x1, 1), (1, y0, 2), (1, y1, 3)]
    for axis, coord, wid in planes:
        d = dirs[axis]
        with np.errstate(divide="ignore"):
            t = (coord - (px if axis == 0 else py)) / d
        t = np.where((d != 0) & (t > 0), t, np.inf)
        closer = t < t_wall
        t_wall = np.where(closer, t, t_wall)
        wall_id = np.where(closer, wid, wall_id)

    rows = (np.arange(h) + 0.5)[:, None]            # pixel center rows, (H, 1)
    top = cy + f * (zc - course.wall_height) / t_wall[None]
    bottom = cy + f * zc / t_wall[None]

    img = np.empty((h, w, 3))
    img[:] = np.asarray(course.ceiling_color)
    wall_rgb = np.asarray(course.wall_colors)[wall_id]          # (W, 3)
    on_wall = (rows >= top) & (rows <= bottom)
    img = np.where(on_wall[:, :, None], wall_rgb[None], img)

    depth = np.where(on_wall, t_wall[None], np.inf)
    above = rows < top
    with np.errstate(divide="ignore", invalid="ignore"):
        d_ceil = f * (zc - course.wall_height) / (rows - cy)    # valid above horizon
        d_floor = f * zc / (rows - cy)                          # valid below horizon
    depth = np.where(above, d_ceil, depth)

    below = rows > bottom
    if below.any():
        fx = px + d_floor * dirs[0][None]
        fy = py + d_floor * dirs[1][None]
        floor_rgb = np.tile(np.asarray(course.floor_color), (h, w, 1))
        for (rx0, ry0, rx1, ry1) in course.stop_stripes():
            in_stripe = (fx >= rx0) & (fx <= rx1) & (fy >= ry0) & (fy <= ry1)
            floor_rgb = np.where(in_stripe[:, :, None], np.asarray(course.stripe_color), floor_rgb)
        img = np.where(below[:, :, None], floor_rgb, img)
        depth = np.where(below, d_floor, depth)

    boards = [course.sign, *course.landmarks]
    rel_depth = [float((np.array([b.x, b.y]) - (px, py)) @ fwd) for b in boards]
    for db, board in sorted(zip(rel_depth, boards), key=lambda z: -z[0]):
        if db < MIN_BILLBOARD_DEPTH:
            continue
        ub = float((np.array([board.x, board.y]) - (px, py)) @ right) / db
        col_c = cx + f * ub
        row_c = cy + f * (zc - board.z) / db
        half_px = f * board.half_size / db
        r_lo = max(int(math.floor(row_c - half_px)), 0)
        r_hi = min(int(math.ceil(row_c + half_px)) + 1, h)
        c_lo = max(int(math.floor(col_c - half_px)), 0)
        c_hi = min(int(math.ceil(col_c + half_px)) + 1, w)
        if r_lo >= r_hi or c_lo >= c_hi:
            continue
        dy = np.arange(r_lo, r_hi)[:, None] + 0.5 - row_c
        dx = np.arange(c_lo, c_hi)[None, :] + 0.5 - col_c
        inside = (np.abs(dx) <= half_px) & (np.abs(dy) <= half_px)
        if board.shape == "octagon":
            inside &= (np.abs(dx) + np.abs(dy)) <= half_px * math.sqrt(2.0)
        visible = inside & (db < depth[r_lo:r_hi, c_lo:c_hi])
        region = img[r_lo:r_hi, c_lo:c_hi]
        img[r_lo:r_hi, c_lo:c_hi] = np.where(visible[:, :, None], np.asarray(board.color), region)
        depth[r_lo:r_hi, c_lo:c_hi] = np.where(visible, db, depth[r_lo:r_hi, c_lo:c_hi])

    return np.clip(img, 0.0, 1.0).transpose(2, 0, 1).astype(np.float32)

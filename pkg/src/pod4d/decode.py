"""Geometric box decoder: cluster non-ground points, fit oriented boxes, assign classes by size."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .boxes import CLASSES, DetectionBox
from .preprocess import TwoFramePoints
from .sim import DEFAULT_DIMS

log = logging.getLogger(__name__)


@dataclass
class DecodeParams:
    cell_size: float = 0.2
    radius: float = 1.0  # cells whose centers are closer than this are connected
    min_points: int = 5
    score_cap: float = 100.0
    width_floor: float = 0.1
    height_floor: float = 0.1
    templates: dict[str, tuple[float, float, float]] = field(default_factory=lambda: dict(DEFAULT_DIMS))
    complete_partial: bool = True  # grow partial views to the class template, away from the sensor
    elongated_ratio: float = 1.25  # major extent above this multiple of template width means a side is visible
    extent_slack: float = 0.15  # observed extents may fall short of the template by this fraction
    closeness_tol: float = 0.3  # rectangles within this relative area of the minimum compete on edge closeness
    class_priors: dict[str, float] = field(default_factory=lambda: {
        "car": 0.5, "pedestrian": 0.2, "cyclist": 0.1, "van": 0.15, "traffic_cone": 0.05})
    prior_weight: float = 0.02
    ground_z: float | None = None  # None: taken from the ground points when available
    future_mode: str = "twin"  # "twin": move each current box by its points' virtual displacement; "independent": refit

    def __post_init__(self):
        if self.cell_size <= 0 or self.radius <= 0:
            raise ValueError("cell_size and radius must be positive")
        if self.min_points < 1 or self.score_cap <= 0 or self.width_floor <= 0:
            raise ValueError("min_points, score_cap and width_floor must be positive")
        unknown = set(self.templates) - set(CLASSES)
        if unknown:
            raise ValueError(f"templates for unknown classes {sorted(unknown)}")
        self.templates = {k: tuple(float(d) for d in v) for k, v in self.templates.items()}
        if self.future_mode not in ("twin", "independent"):
            raise ValueError(f"unknown future_mode {self.future_mode!r}")


def segment_foreground(xyz: np.ndarray, ground_mask: np.ndarray | None, params: DecodeParams | None = None) -> list[np.ndarray]:
    """Connected components of occupied BEV cells; returns point-row arrays, largest first.

    Clusters are ordered by size, then by their smallest row, so the output is
    deterministic.
    """
    params = params or DecodeParams()
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    rows = np.arange(len(xyz))
    if ground_mask is not None:
        rows = rows[~np.asarray(ground_mask, dtype=bool)]
    if len(rows) == 0:
        return []
    cells = np.floor(xyz[rows, :2] / params.cell_size).astype(np.int64)
    ucells, inverse = np.unique(cells, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    centers = (ucells + 0.5) * params.cell_size
    pairs = cKDTree(centers).query_pairs(params.radius, output_type="ndarray")
    m = len(ucells)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(m, m))
    _, comp = connected_components(graph, directed=False)
    point_comp = comp[inverse]
    order = np.argsort(point_comp, kind="stable")
    sc = point_comp[order]
    starts = np.concatenate([[0], np.nonzero(sc[1:] != sc[:-1])[0] + 1, [len(sc)]])
    clusters = [rows[order[a:b]] for a, b in zip(starts[:-1], starts[1:]) if b - a >= params.min_points]
    clusters.sort(key=lambda c: (-len(c), int(c[0])))
    return clusters


def min_area_rectangle(xy: np.ndarray, width_floor: float = 0.1, closeness_tol: float = 0.0):
    """Minimum-area enclosing rectangle via caliper directions on the convex hull.

    Partial views (an L-shaped hull is close to a triangle) make several
    directions nearly tie on area; candidates within ``closeness_tol`` of the
    minimum are then ranked by mean distance of the points to the nearest
    rectangle edge. Returns (center_xy, length, width, yaw) with length >=
    width and yaw the direction of the long side, wrapped to (-pi/2, pi/2].
    """
    xy = np.asarray(xy, dtype=np.float64)
    uniq = np.unique(xy, axis=0)
    hull_pts = uniq
    edge_dirs = None
    if len(uniq) >= 3:
        try:
            hull = ConvexHull(uniq)
            hull_pts = uniq[hull.vertices]
            edges = np.roll(hull_pts, -1, axis=0) - hull_pts
            norms = np.linalg.norm(edges, axis=1)
            edge_dirs = edges[norms > 1e-12] / norms[norms > 1e-12, None]
        except QhullError:
            edge_dirs = None
    if edge_dirs is None:
        # collinear or tiny: principal direction
        if len(uniq) >= 2:
            d = uniq - uniq.mean(axis=0)
            _, _, vt = np.linalg.svd(d, full_matrices=False)
            edge_dirs = vt[:1]
        else:
            edge_dirs = np.array([[1.0, 0.0]])

    cands = []
    for u in edge_dirs:
        v = np.array([-u[1], u[0]])
        pu, pv = hull_pts @ u, hull_pts @ v
        a, b = pu.max() - pu.min(), pv.max() - pv.min()
        cu, cv = 0.5 * (pu.max() + pu.min()), 0.5 * (pv.max() + pv.min())
        cands.append((a * b, u, a, b, cu * u + cv * v))
    min_area = min(c[0] for c in cands)
    best = None
    for c in cands:
        if c[0] > min_area * (1.0 + closeness_tol) + 1e-12:
            continue
        if closeness_tol > 0:
            _, u, a, b, center = c
            rel = xy - center
            du = 0.5 * a - np.abs(rel @ u)
            dv = 0.5 * b - np.abs(rel @ np.array([-u[1], u[0]]))
            key = float(np.mean(np.minimum(du, dv)))
        else:
            key = c[0]
        if best is None or key < best[0] - 1e-12:
            best = (key,) + c[1:]
    _, u, a, b, center = best
    if b > a:
        u = np.array([-u[1], u[0]])
        a, b = b, a
    yaw = math.atan2(u[1], u[0])
    if yaw > math.pi / 2:
        yaw -= math.pi
    elif yaw <= -math.pi / 2:
        yaw += math.pi
    return center, max(a, width_floor), max(b, width_floor), yaw


def _interval_penalty(x: float, lo: float, hi: float) -> float:
    if x < lo:
        return math.log(lo / x) ** 2
    if x > hi:
        return math.log(x / hi) ** 2
    return 0.0


def classify_by_size(major: float, minor: float, height: float, templates: dict,
                     priors: dict | None = None, prior_weight: float = 0.0, slack: float = 0.15) -> str:
    """Nearest size template in log space, treating footprint extents as lower bounds.

    A partial view can show any face, so the visible major extent only needs
    to lie between the template's width and length (with a mild pull toward
    whichever of the two it is closer to), and the minor extent must not
    exceed the template width. Height is compared directly. A weak class
    prior breaks near-ties.
    """
    best_cls, best_cost = None, math.inf
    for cls in CLASSES:
        if cls not in templates:
            continue
        L, W, H = templates[cls]
        cost = 4.0 * _interval_penalty(major, (1.0 - slack) * W, (1.0 + slack) * L)
        cost += 4.0 * _interval_penalty(max(minor, 1e-3), 1e-3, (1.0 + slack) * W)
        cost += 0.5 * min(math.log(major / W) ** 2, math.log(major / L) ** 2)
        cost += math.log(max(height, 1e-3) / H) ** 2
        if priors and prior_weight > 0:
            cost -= prior_weight * math.log(max(priors.get(cls, 0.0), 1e-6))
        if cost < best_cost:
            best_cls, best_cost = cls, cost
    return best_cls


def fit_box(xyz: np.ndarray, params: DecodeParams | None = None, ground_z: float | None = None,
            **box_kw) -> DetectionBox:
    """Raw oriented box around a cluster: footprint from the minimum-area rectangle,
    vertical extent from min/max z (bottom lowered to ``ground_z`` when given),
    class from the size templates."""
    params = params or DecodeParams()
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    if len(xyz) < 1:
        raise ValueError("cannot fit a box to an empty cluster")
    center_xy, length, width, yaw = min_area_rectangle(xyz[:, :2], params.width_floor, params.closeness_tol)
    zmin, zmax = float(xyz[:, 2].min()), float(xyz[:, 2].max())
    if ground_z is not None:
        zmin = min(zmin, float(ground_z))
    height = max(zmax - zmin, params.height_floor)
    cls = classify_by_size(length, width, height, params.templates, params.class_priors,
                           params.prior_weight, params.extent_slack)
    score = min(1.0, len(xyz) / params.score_cap)
    return DetectionBox(
        center=(center_xy[0], center_xy[1], zmin + 0.5 * height),
        dims=(length, width, height),
        yaw=yaw,
        cls=cls,
        score=score,
        num_points=len(xyz),
        **box_kw,
    )


def _extend_away(proj: np.ndarray, sensor_proj: float, size: float) -> tuple[float, float]:
    """Interval of length >= ``size`` covering ``proj``, anchored at the edge nearest the sensor."""
    lo, hi = float(proj.min()), float(proj.max())
    if hi - lo >= size:
        return lo, hi
    if abs(lo - sensor_proj) <= abs(hi - sensor_proj):
        return lo, lo + size
    return hi - size, hi


def complete_box(box: DetectionBox, xyz: np.ndarray, params: DecodeParams, sensor_origin=(0.0, 0.0, 0.0)) -> DetectionBox:
    """Grow a partial-view box to its class template.

    When the visible footprint is no longer than the template width, the
    visible face is taken as the front or rear if it faces the sensor, and as
    a side otherwise. The box keeps the observed edge nearest the sensor and
    extends away from it, so every cluster point stays inside.
    """
    L, W, H = params.templates[box.cls]
    xy = np.asarray(xyz, dtype=np.float64)[:, :2]
    origin = np.asarray(sensor_origin, dtype=np.float64)[:2]
    major = np.array([math.cos(box.yaw), math.sin(box.yaw)])
    minor = np.array([-major[1], major[0]])
    length_axis = major
    if box.dims[0] <= params.elongated_ratio * W:
        ray = np.asarray(box.center[:2]) - origin
        ray_n = np.linalg.norm(ray)
        if ray_n > 0 and abs(major @ ray) / ray_n < abs(minor @ ray) / ray_n:
            length_axis = minor  # visible face is across the ray: front or rear
    width_axis = np.array([-length_axis[1], length_axis[0]])

    l_lo, l_hi = _extend_away(xy @ length_axis, origin @ length_axis, L)
    w_lo, w_hi = _extend_away(xy @ width_axis, origin @ width_axis, W)
    center = 0.5 * (l_lo + l_hi) * length_axis + 0.5 * (w_lo + w_hi) * width_axis
    zmin = box.center[2] - 0.5 * box.dims[2]
    height = max(box.dims[2], H)
    yaw = math.atan2(length_axis[1], length_axis[0])
    if yaw > math.pi / 2:
        yaw -= math.pi
    elif yaw <= -math.pi / 2:
        yaw += math.pi
    return DetectionBox(
        center=(center[0], center[1], zmin + 0.5 * height),
        dims=(l_hi - l_lo, w_hi - w_lo, height),
        yaw=yaw,
        cls=box.cls,
        score=box.score,
        time_tag=box.time_tag,
        frame_ref=box.frame_ref,
        t_query=box.t_query,
        t_ref=box.t_ref,
        delta_t=box.delta_t,
        num_points=box.num_points,
    )


def ground_height(xyz: np.ndarray, ground_mask, params: DecodeParams) -> float | None:
    if params.ground_z is not None:
        return params.ground_z
    if ground_mask is None or not np.any(ground_mask):
        return None
    return float(np.median(np.asarray(xyz)[np.asarray(ground_mask, dtype=bool), 2]))


def decode_points(xyz: np.ndarray, ground_mask, params: DecodeParams | None = None,
                  sensor_origin=(0.0, 0.0, 0.0), ground_z: float | None = None, **box_kw) -> list[DetectionBox]:
    params = params or DecodeParams()
    if ground_z is None:
        ground_z = ground_height(xyz, ground_mask, params)
    boxes = []
    for rows in segment_foreground(xyz, ground_mask, params):
        pts = xyz[rows]
        box = fit_box(pts, params, ground_z, **box_kw)
        if params.complete_partial:
            box = complete_box(box, pts, params, sensor_origin)
        boxes.append(box)
    return boxes


def decode_frame(two_frames: TwoFramePoints, params: DecodeParams | None = None,
                 frame_id: str = "", t_ref: float = 0.0) -> tuple[list[DetectionBox], list[DetectionBox]]:
    """Decode current points into current boxes and virtual points into future boxes.

    In ``twin`` mode each current cluster is carried to the virtual frame
    through the point twins, and its box is translated by the mean planar
    displacement of those twins; shape and class come from the current view.
    In ``independent`` mode the virtual points are clustered and fitted on
    their own.
    """
    params = params or DecodeParams()
    origin = two_frames.sensor_origin
    sel0, sel1 = two_frames.select(0), two_frames.select(1)
    xyz0, xyz1 = two_frames.xyz[sel0], two_frames.xyz[sel1]
    ground0 = two_frames.is_ground[sel0]
    gz = ground_height(xyz0, ground0, params)
    dt = two_frames.delta_t
    cur_kw = dict(time_tag="current", frame_ref=frame_id, t_ref=t_ref, t_query=t_ref)
    fut_kw = dict(time_tag="future", frame_ref=frame_id, t_ref=t_ref, t_query=t_ref + dt, delta_t=dt)

    if params.future_mode == "independent":
        cur = decode_points(xyz0, ground0, params, origin, gz, **cur_kw)
        fut = decode_points(xyz1, two_frames.is_ground[sel1], params, origin, gz, **fut_kw)
        if len(cur) != len(fut):
            log.info("frame %s: %d current vs %d future clusters (merge or split under extrapolation)",
                     frame_id, len(cur), len(fut))
        return cur, fut

    if len(xyz0) != len(xyz1):
        raise ValueError("twin mode needs equal current and virtual point counts")
    cur, fut = [], []
    for rows in segment_foreground(xyz0, ground0, params):
        pts = xyz0[rows]
        box = fit_box(pts, params, gz, **cur_kw)
        if params.complete_partial:
            box = complete_box(box, pts, params, origin)
        shift = np.mean(xyz1[rows, :2] - pts[:, :2], axis=0)
        cur.append(box)
        fut.append(replace(box, center=(box.center[0] + shift[0], box.center[1] + shift[1], box.center[2]),
                           extra=dict(box.extra), **fut_kw))
    return cur, fut

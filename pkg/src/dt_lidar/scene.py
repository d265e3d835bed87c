"""Lane-constrained actor spawning, kinematic stepping and box labels."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .geometry import TriangleMesh, box_mesh, yaw_matrix
from .sensor import PointCloudFrame, SensorPose

MIN_DIM = 0.2
MAX_CONSECUTIVE_REJECTIONS = 1000
BOX_MARGIN = 1e-6


def wrap_angle(a: float) -> float:
    """Wrap an angle in radians to [-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    return max(-math.pi, min(math.pi, w))


class LanePolyline:
    """Ordered waypoints with a lane width; parametrised by arc length."""

    def __init__(self, waypoints, width: float):
        self.waypoints = np.asarray(waypoints, dtype=np.float64).reshape(-1, 3)
        self.width = float(width)
        if len(self.waypoints) < 2:
            raise ValidationError("lane needs at least 2 waypoints")
        seg = np.diff(self.waypoints, axis=0)
        seg_len = np.linalg.norm(seg, axis=1)
        if np.any(seg_len == 0):
            raise ValidationError("lane has repeated consecutive waypoints")
        if not self.width > 0:
            raise ValidationError("lane width must be positive")
        self._seg = seg
        self._seg_len = seg_len
        self._cum = np.concatenate([[0.0], np.cumsum(seg_len)])

    def __repr__(self):
        return f"LanePolyline({len(self.waypoints)} waypoints, length={self.length:.2f})"

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def _segment(self, s: float) -> int:
        return int(np.clip(np.searchsorted(self._cum, s, side="right") - 1,
                           0, len(self._seg) - 1))

    def point_at(self, s: float) -> np.ndarray:
        i = self._segment(s)
        frac = (s - self._cum[i]) / self._seg_len[i]
        return self.waypoints[i] + frac * self._seg[i]

    def heading_at(self, s: float) -> float:
        i = self._segment(s)
        return math.atan2(self._seg[i, 1], self._seg[i, 0])


@dataclass(frozen=True)
class ActorClass:
    name: str
    mean_dims: tuple
    dims_stddev: tuple = (0.0, 0.0, 0.0)
    spawn_weight: float = 1.0
    speed_range: tuple = (0.0, 0.0)

    def validate(self) -> "ActorClass":
        if any(not d > 0 for d in self.mean_dims) or len(self.mean_dims) != 3:
            raise ValidationError(f"class {self.name!r}: mean_dims must be 3 positive values")
        if any(d < 0 for d in self.dims_stddev) or len(self.dims_stddev) != 3:
            raise ValidationError(f"class {self.name!r}: dims_stddev must be 3 values >= 0")
        if self.spawn_weight < 0:
            raise ValidationError(f"class {self.name!r}: spawn_weight must be >= 0")
        lo, hi = self.speed_range
        if lo < 0 or hi < lo:
            raise ValidationError(f"class {self.name!r}: invalid speed_range")
        return self


@dataclass(frozen=True)
class ActorInstance:
    class_name: str
    center: tuple
    dims: tuple
    heading: float
    speed: float
    lane_index: int
    arc_position: float


@dataclass(frozen=True)
class BoxLabel:
    center: tuple
    dims: tuple
    heading: float
    class_name: str
    # None when read back from disk; the label file does not store it.
    num_points: Optional[int] = None

    @property
    def volume(self) -> float:
        dx, dy, dz = self.dims
        return dx * dy * dz


def footprint_corners(center, dims, heading) -> np.ndarray:
    """Four 2D corners of an oriented footprint, counter-clockwise."""
    hl, hw = dims[0] / 2.0, dims[1] / 2.0
    c, s = math.cos(heading), math.sin(heading)
    local = np.array([[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.asarray(center[:2], dtype=np.float64)


def footprints_overlap(a: ActorInstance, b: ActorInstance) -> bool:
    """Separating-axis test on 2D oriented footprints; touching counts as overlap."""
    ca = footprint_corners(a.center, a.dims, a.heading)
    cb = footprint_corners(b.center, b.dims, b.heading)
    for heading in (a.heading, b.heading):
        for axis in ((math.cos(heading), math.sin(heading)),
                     (-math.sin(heading), math.cos(heading))):
            pa = ca @ axis
            pb = cb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def _place(lane: LanePolyline, s: float, height: float):
    p = lane.point_at(s)
    return (float(p[0]), float(p[1]), float(p[2] + height / 2.0)), lane.heading_at(s)


def spawn_actors(lanes: Sequence[LanePolyline], classes: Sequence[ActorClass],
                 target_count: int, rng_seed: int) -> list[ActorInstance]:
    """Place up to ``target_count`` non-overlapping actors on the lanes.

    Stops early only after ``MAX_CONSECUTIVE_REJECTIONS`` rejected candidates
    in a row.
    """
    if not lanes:
        raise ValidationError("spawn_actors needs at least one lane")
    weights = np.array([c.validate().spawn_weight for c in classes], dtype=np.float64)
    if weights.size == 0 or not weights.sum() > 0:
        raise ValidationError("spawn_actors needs a class with positive spawn_weight")
    if target_count < 0:
        raise ValidationError("target_count must be >= 0")
    probs = weights / weights.sum()
    rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed) % 2**64, 0x5EED]))

    actors: list[ActorInstance] = []
    xy = np.empty((target_count, 2))
    radius = np.empty(target_count)
    while len(actors) < target_count:
        # Class and size are fixed per slot; only the placement is retried, so
        # crowding cannot skew the class mix towards small actors.
        cls = classes[int(rng.choice(len(classes), p=probs))]
        dims = tuple(float(max(MIN_DIM, d))
                     for d in rng.normal(cls.mean_dims, cls.dims_stddev))
        speed = float(rng.uniform(*cls.speed_range))
        r = 0.5 * math.hypot(dims[0], dims[1])
        n = len(actors)
        for _ in range(MAX_CONSECUTIVE_REJECTIONS):
            lane_index = int(rng.integers(len(lanes)))
            lane = lanes[lane_index]
            s = float(rng.uniform(0.0, lane.length))
            center, heading = _place(lane, s, dims[2])
            cand = ActorInstance(cls.name, center, dims, wrap_angle(heading), speed,
                                 lane_index, s)
            near = np.nonzero(np.hypot(xy[:n, 0] - center[0], xy[:n, 1] - center[1])
                              <= radius[:n] + r)[0]
            if not any(footprints_overlap(cand, actors[i]) for i in near):
                break
        else:
            break
        xy[n] = center[:2]
        radius[n] = r
        actors.append(cand)
    return actors


def step_actors(actors: Sequence[ActorInstance], lanes: Sequence[LanePolyline],
                dt: float) -> list[ActorInstance]:
    """Advance each actor ``speed * dt`` along its lane, wrapping at the end."""
    if not dt > 0:
        raise ValidationError("dt must be positive")
    out = []
    for a in actors:
        lane = lanes[a.lane_index]
        s = (a.arc_position + a.speed * dt) % lane.length
        center, heading = _place(lane, s, a.dims[2])
        out.append(replace(a, center=center, heading=wrap_angle(heading), arc_position=s))
    return out


def _fit_template(template: TriangleMesh, dims) -> np.ndarray:
    v = template.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    extent = np.where(hi > lo, hi - lo, 1.0)
    return (v - (lo + hi) / 2.0) / extent * np.asarray(dims, dtype=np.float64)


def actor_meshes(actors: Sequence[ActorInstance], first_object_id: int = 1,
                 templates: Optional[Mapping[str, TriangleMesh]] = None) -> list[TriangleMesh]:
    """One closed mesh per actor, tagged ``first_object_id + i``.

    Actors default to oriented boxes. ``templates`` maps class names to meshes
    that are rescaled so their bounding box matches the sampled dims.
    """
    meshes = []
    for i, a in enumerate(actors):
        oid = first_object_id + i
        tpl = templates.get(a.class_name) if templates else None
        if tpl is None:
            meshes.append(box_mesh(a.center, a.dims, a.heading, oid))
        else:
            local = TriangleMesh(_fit_template(tpl, a.dims), tpl.triangles, oid)
            meshes.append(local.transformed(yaw_matrix(a.heading), a.center))
    return meshes


def points_in_box(xyz, center, dims, heading, margin: float = BOX_MARGIN) -> np.ndarray:
    """Boolean mask of points inside a yawed box grown by ``margin``."""
    d = np.asarray(xyz, dtype=np.float64).reshape(-1, 3) - np.asarray(center, dtype=np.float64)
    c, s = math.cos(heading), math.sin(heading)
    lx = d[:, 0] * c + d[:, 1] * s
    ly = -d[:, 0] * s + d[:, 1] * c
    hx, hy, hz = (dim / 2.0 + margin for dim in dims)
    return (np.abs(lx) <= hx) & (np.abs(ly) <= hy) & (np.abs(d[:, 2]) <= hz)


def generate_labels(frame: PointCloudFrame, pose: Optional[SensorPose],
                    actors: Sequence[ActorInstance], min_points: int = 1) -> list[BoxLabel]:
    """Ground-truth boxes for actors with at least ``min_points`` returns.

    ``pose`` places the frame in the world; pass None for frames that are
    already in world coordinates (merged frames). Labels are expressed in the
    frame's own coordinate system.
    """
    world = pose.to_world(frame.xyz) if pose is not None else frame.xyz
    yaw = math.radians(pose.yaw) if pose is not None else 0.0
    labels = []
    for a in actors:
        count = int(points_in_box(world, a.center, a.dims, a.heading).sum())
        if count < min_points:
            continue
        center = pose.to_sensor(np.asarray(a.center)) if pose is not None else a.center
        labels.append(BoxLabel(tuple(float(v) for v in center), tuple(a.dims),
                               wrap_angle(a.heading - yaw), a.class_name, count))
    return labels

"""Spinning multi-channel LiDAR: scan pattern derivation and scan simulation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .geometry import cast_rays

DEFAULT_NOISE_STDDEV = 0.02
DEFAULT_DROPOUT_PROB = 0.0


@dataclass(frozen=True)
class SensorSpec:
    name: str
    channels: int
    upper_fov: float
    lower_fov: float
    points_per_second: float
    max_range: float
    rotation_hz: float
    noise_stddev: float = DEFAULT_NOISE_STDDEV
    dropout_prob: float = DEFAULT_DROPOUT_PROB

    def validate(self) -> "SensorSpec":
        checks = [
            ("name", isinstance(self.name, str) and self.name != ""),
            ("channels", isinstance(self.channels, (int, np.integer)) and self.channels >= 1),
            ("max_range", self.max_range > 0),
            ("rotation_hz", self.rotation_hz > 0),
            ("noise_stddev", self.noise_stddev >= 0),
            ("dropout_prob", 0 <= self.dropout_prob < 1),
        ]
        for name, ok in checks:
            if not ok:
                raise ValidationError(f"sensor {self.name!r}: invalid {name}")
        for name in ("upper_fov", "lower_fov", "points_per_second", "max_range",
                     "rotation_hz", "noise_stddev", "dropout_prob"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"sensor {self.name!r}: {name} must be finite")
        if self.channels > 1 and not self.upper_fov > self.lower_fov:
            raise ValidationError(f"sensor {self.name!r}: upper_fov must exceed lower_fov")
        if self.channels == 1 and self.upper_fov < self.lower_fov:
            raise ValidationError(f"sensor {self.name!r}: upper_fov below lower_fov")
        if not -90 <= self.lower_fov <= 90 or not -90 <= self.upper_fov <= 90:
            raise ValidationError(f"sensor {self.name!r}: fov outside [-90, 90] degrees")
        if self.points_per_second < self.channels * self.rotation_hz:
            raise ValidationError(
                f"sensor {self.name!r}: points_per_second below channels x rotation_hz")
        return self


# Manufacturer figures for the four LUMPI intersection sensors. Rotation rate
# is not part of the datasheet values and must be supplied.
SENSOR_PRESETS = {
    "pandar64": dict(name="Hesai Pandar64", channels=64, upper_fov=15.0, lower_fov=-25.0,
                     points_per_second=2.60e6, max_range=200.0),
    "hdl64e": dict(name="Velodyne HDL-64E", channels=64, upper_fov=1.9, lower_fov=-24.6,
                   points_per_second=4.97e6, max_range=120.0),
    "pandarqt": dict(name="Hesai PandarQT", channels=64, upper_fov=52.1, lower_fov=-52.1,
                     points_per_second=0.87e6, max_range=20.0),
    "vlp16": dict(name="Velodyne VLP-16", channels=16, upper_fov=15.0, lower_fov=-15.0,
                  points_per_second=0.68e6, max_range=100.0),
}


def preset(key: str, rotation_hz: float, **overrides) -> SensorSpec:
    """SensorSpec for one of the ``SENSOR_PRESETS`` devices."""
    try:
        params = dict(SENSOR_PRESETS[key])
    except KeyError:
        raise ValidationError(f"unknown sensor preset {key!r}") from None
    params.update(overrides)
    return SensorSpec(rotation_hz=rotation_hz, **params).validate()


def rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Rotation for yaw, pitch, roll in degrees, composed as Rz @ Ry @ Rx."""
    y, p, r = (math.radians(a) for a in (yaw, pitch, roll))
    cy, sy = math.cos(y), math.sin(y)
    cp, sp = math.cos(p), math.sin(p)
    cr, sr = math.cos(r), math.sin(r)
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return rz @ ry @ rx


@dataclass(frozen=True)
class SensorPose:
    center: tuple = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        if len(c) != 3 or not all(math.isfinite(v) for v in c):
            raise ValidationError("pose center must be 3 finite numbers")
        object.__setattr__(self, "center", c)
        for name in ("yaw", "pitch", "roll"):
            a = float(getattr(self, name))
            if not -180.0 <= a <= 180.0:
                raise ValidationError(f"pose {name} must lie in [-180, 180] degrees")
            object.__setattr__(self, name, a)

    @property
    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.yaw, self.pitch, self.roll)

    def to_world(self, xyz) -> np.ndarray:
        return np.asarray(xyz, dtype=np.float64) @ self.rotation.T + np.asarray(self.center)

    def to_sensor(self, xyz) -> np.ndarray:
        return (np.asarray(xyz, dtype=np.float64) - np.asarray(self.center)) @ self.rotation


@dataclass
class ScanPattern:
    elevation_angles: np.ndarray
    azimuth_step: float
    steps_per_rev: int

    @property
    def n_rays(self) -> int:
        return len(self.elevation_angles) * self.steps_per_rev

    def directions(self) -> np.ndarray:
        """Unit ray directions in the sensor frame, azimuth-major order.

        Ray ``k * channels + c`` fires channel ``c`` at azimuth step ``k``.
        """
        el = np.radians(self.elevation_angles)
        az = np.radians(np.arange(self.steps_per_rev) * self.azimuth_step)
        cos_el = np.cos(el)[None, :]
        d = np.empty((self.steps_per_rev, len(el), 3))
        d[..., 0] = cos_el * np.cos(az)[:, None]
        d[..., 1] = cos_el * np.sin(az)[:, None]
        d[..., 2] = np.sin(el)[None, :]
        return d.reshape(-1, 3)


def derive_scan_pattern(spec: SensorSpec) -> ScanPattern:
    spec.validate()
    elevations = np.linspace(spec.lower_fov, spec.upper_fov, spec.channels)
    steps = math.floor(spec.points_per_second / (spec.rotation_hz * spec.channels))
    return ScanPattern(elevations, 360.0 / steps, steps)


@dataclass
class PointCloudFrame:
    points: np.ndarray
    frame_index: int = 0
    sensor_name: str = ""
    timestamp: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 4)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]


def _stream(seed: int, frame_index: int, sensor_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) % 2**64, int(frame_index), int(sensor_index)]))


def simulate_scan(geometry, spec: SensorSpec, pose: SensorPose, frame_index: int,
                  rng_seed: int, sensor_index: int = 0,
                  timestamp: Optional[float] = None) -> PointCloudFrame:
    """Simulate one full revolution of ``spec`` placed at ``pose``.

    ``geometry`` is a BVH, a sequence of BVHs, or None for an empty scene.
    Points are returned in the sensor frame. Noise and dropout draws come from
    a stream keyed on ``(rng_seed, frame_index, sensor_index)`` and are drawn
    for every ray, hit or not, so output never depends on scheduling.
    """
    pattern = derive_scan_pattern(spec)
    dirs = pattern.directions()
    world_dirs = dirs @ pose.rotation.T
    if geometry is not None and not isinstance(geometry, Sequence):
        geometry = [geometry]
    if geometry:
        dist, _, _ = cast_rays(geometry, np.asarray(pose.center), world_dirs, spec.max_range)
    else:
        dist = np.full(len(dirs), np.inf)

    rng = _stream(rng_seed, frame_index, sensor_index)
    noise = rng.standard_normal(len(dirs)) * spec.noise_stddev
    dropped = rng.random(len(dirs)) < spec.dropout_prob
    measured = dist + noise
    keep = np.isfinite(dist) & (measured > 0) & (measured <= spec.max_range) & ~dropped

    points = np.empty((int(keep.sum()), 4))
    points[:, :3] = dirs[keep] * measured[keep, None]
    points[:, 3] = 1.0
    if timestamp is None:
        timestamp = frame_index / spec.rotation_hz
    return PointCloudFrame(points, frame_index, spec.name, float(timestamp))


def merge_frames(frames: Sequence[PointCloudFrame],
                 poses: Sequence[SensorPose]) -> PointCloudFrame:
    """Concatenate per-sensor frames in the world frame."""
    if len(frames) != len(poses) or not frames:
        raise ValidationError("merge_frames needs equal, non-empty frame and pose lists")
    parts = []
    for frame, pose in zip(frames, poses):
        pts = frame.points.copy()
        pts[:, :3] = pose.to_world(frame.xyz)
        parts.append(pts)
    first = frames[0]
    return PointCloudFrame(np.concatenate(parts), first.frame_index, "merged", first.timestamp)

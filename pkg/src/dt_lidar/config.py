"""JSON schemas for sensor and scene configuration files."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError

from .errors import ValidationError
from .geometry import TriangleMesh, load_obj
from .scene import ActorClass, LanePolyline
from .sensor import DEFAULT_DROPOUT_PROB, DEFAULT_NOISE_STDDEV, SensorPose, SensorSpec

RESERVED_VIEW = "merged"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PoseModel(_Strict):
    x: float
    y: float
    z: float
    yaw_deg: float = Field(0.0, ge=-180, le=180)
    pitch_deg: float = Field(0.0, ge=-180, le=180)
    roll_deg: float = Field(0.0, ge=-180, le=180)


class SensorModel(_Strict):
    name: str = Field(min_length=1, pattern=r"^[^/\\\x00]+$")
    channels: int = Field(ge=1)
    upper_fov_deg: float
    lower_fov_deg: float
    points_per_second: float = Field(gt=0)
    max_range_m: float = Field(gt=0)
    rotation_hz: float = Field(gt=0)
    noise_stddev_m: float = Field(DEFAULT_NOISE_STDDEV, ge=0)
    dropout_prob: float = Field(DEFAULT_DROPOUT_PROB, ge=0, lt=1)
    pose: PoseModel


class StaticMeshModel(_Strict):
    path: str
    scale: float = Field(1.0, gt=0)


class LaneModel(_Strict):
    waypoints: list[tuple[float, float, float]] = Field(min_length=2)
    width_m: float = Field(gt=0)


class ClassModel(_Strict):
    name: str = Field(min_length=1, pattern=r"^\S+$")
    mean_dims_m: tuple[float, float, float]
    dims_stddev_m: tuple[float, float, float] = (0.0, 0.0, 0.0)
    spawn_weight: float = Field(ge=0)
    speed_range_mps: tuple[float, float] = (0.0, 0.0)
    mesh: Optional[StaticMeshModel] = None


class SceneModel(_Strict):
    static_meshes: list[StaticMeshModel] = []
    lanes: list[LaneModel] = Field(min_length=1)
    classes: list[ClassModel] = Field(min_length=1)
    target_actor_count: int = Field(ge=0)
    min_points: int = Field(1, ge=0)


def _format_errors(exc: PydanticValidationError, source) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{source}: {path}: {err['msg']}")
    return "\n".join(lines)


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from None


def sensor_from_model(m: SensorModel) -> tuple[SensorSpec, SensorPose]:
    spec = SensorSpec(m.name, m.channels, m.upper_fov_deg, m.lower_fov_deg,
                      m.points_per_second, m.max_range_m, m.rotation_hz,
                      m.noise_stddev_m, m.dropout_prob).validate()
    p = m.pose
    return spec, SensorPose((p.x, p.y, p.z), p.yaw_deg, p.pitch_deg, p.roll_deg)


def sensor_to_dict(spec: SensorSpec, pose: SensorPose) -> dict:
    x, y, z = pose.center
    return {
        "name": spec.name,
        "channels": int(spec.channels),
        "upper_fov_deg": spec.upper_fov,
        "lower_fov_deg": spec.lower_fov,
        "points_per_second": spec.points_per_second,
        "max_range_m": spec.max_range,
        "rotation_hz": spec.rotation_hz,
        "noise_stddev_m": spec.noise_stddev,
        "dropout_prob": spec.dropout_prob,
        "pose": {"x": x, "y": y, "z": z, "yaw_deg": pose.yaw,
                 "pitch_deg": pose.pitch, "roll_deg": pose.roll},
    }


def parse_sensors(data, source="sensors") -> list[tuple[SensorSpec, SensorPose]]:
    if not isinstance(data, list) or not data:
        raise ValidationError(f"{source}: expected a non-empty JSON array of sensors")
    sensors = []
    for i, item in enumerate(data):
        try:
            model = SensorModel.model_validate(item)
        except PydanticValidationError as exc:
            raise ValidationError(_format_errors(exc, f"{source}[{i}]")) from None
        try:
            sensors.append(sensor_from_model(model))
        except ValidationError as exc:
            raise ValidationError(f"{source}[{i}]: {exc}") from None
    names = [s.name for s, _ in sensors]
    if len(set(names)) != len(names):
        raise ValidationError(f"{source}: sensor names must be unique")
    if RESERVED_VIEW in names:
        raise ValidationError(f"{source}: sensor name {RESERVED_VIEW!r} is reserved")
    return sensors


def load_sensors(path) -> list[tuple[SensorSpec, SensorPose]]:
    return parse_sensors(_read_json(path), str(path))


class SceneConfig:
    """Parsed scene file with mesh paths resolved against its directory."""

    def __init__(self, model: SceneModel, base_dir: Path):
        self.model = model
        self.base_dir = base_dir
        self.lanes = [LanePolyline(l.waypoints, l.width_m) for l in model.lanes]
        self.classes = [
            ActorClass(c.name, c.mean_dims_m, c.dims_stddev_m, c.spawn_weight,
                       c.speed_range_mps).validate()
            for c in model.classes
        ]
        if not sum(c.spawn_weight for c in self.classes) > 0:
            raise ValidationError("classes: at least one spawn_weight must be positive")
        self.target_actor_count = model.target_actor_count
        self.min_points = model.min_points

    def _resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def static_meshes(self) -> list[TriangleMesh]:
        return [load_obj(self._resolve(m.path), m.scale, object_id=0)
                for m in self.model.static_meshes]

    def class_templates(self) -> dict[str, TriangleMesh]:
        return {c.name: load_obj(self._resolve(c.mesh.path), c.mesh.scale)
                for c in self.model.classes if c.mesh is not None}


def parse_scene(data, base_dir=".", source="scene") -> SceneConfig:
    try:
        model = SceneModel.model_validate(data)
    except PydanticValidationError as exc:
        raise ValidationError(_format_errors(exc, source)) from None
    return SceneConfig(model, Path(base_dir))


def load_scene(path) -> SceneConfig:
    path = Path(path)
    return parse_scene(_read_json(path), path.parent, str(path))

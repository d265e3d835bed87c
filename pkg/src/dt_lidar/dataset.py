"""On-disk dataset layout.

::

    <root>/manifest.json
    <root>/points/[<view>/]<frame_id>.bin   float32 LE, (x, y, z, intensity) per point
    <root>/labels/[<view>/]<frame_id>.txt   "x y z dx dy dz heading class_name" per line
    <root>/features/*.fmat                  optional latent-feature matrices

A "view" is a sensor name or ``merged``. Datasets with a ``flat`` layout have
a single view stored directly under ``points/`` and ``labels/``.
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .config import RESERVED_VIEW, parse_sensors, sensor_to_dict
from .errors import FormatError, IntegrityError, ValidationError
from .scene import BoxLabel
from .sensor import PointCloudFrame, SensorPose, SensorSpec

FORMAT_VERSION = 1
FRAME_ID_RE = re.compile(r"^[0-9]{6}$")
FMAT_MAGIC = b"FMAT"
FMAT_HEADER = struct.Struct("<4sIII")
_POINT_DTYPE = np.dtype("<f4")


def frame_id(index: int) -> str:
    fid = f"{int(index):06d}"
    if not FRAME_ID_RE.match(fid):
        raise ValidationError(f"frame index {index} does not fit a 6-digit id")
    return fid


def _check_frame_id(fid: str) -> None:
    if not isinstance(fid, str) or not FRAME_ID_RE.match(fid):
        raise ValidationError(f"malformed frame id {fid!r}; expected 6 digits")


def points_path(root, fid: str, view: Optional[str] = None) -> Path:
    base = Path(root) / "points"
    return (base / view if view else base) / f"{fid}.bin"


def labels_path(root, fid: str, view: Optional[str] = None) -> Path:
    base = Path(root) / "labels"
    return (base / view if view else base) / f"{fid}.txt"


def format_label(label: BoxLabel) -> str:
    x, y, z = label.center
    dx, dy, dz = label.dims
    values = " ".join(f"{float(v):.9g}" for v in (x, y, z, dx, dy, dz, label.heading))
    return f"{values} {label.class_name}"


def parse_label(line: str, lineno: int = 1, source: str = "") -> BoxLabel:
    fields = line.split()
    where = f"{source}:" if source else ""
    if len(fields) != 8:
        raise FormatError(f"{where}line {lineno}: expected 8 fields, got {len(fields)}")
    try:
        x, y, z, dx, dy, dz, heading = (float(f) for f in fields[:7])
    except ValueError:
        raise FormatError(f"{where}line {lineno}: unparsable number") from None
    if not all(math.isfinite(v) for v in (x, y, z, dx, dy, dz, heading)):
        raise FormatError(f"{where}line {lineno}: non-finite value")
    if min(dx, dy, dz) <= 0:
        raise FormatError(f"{where}line {lineno}: box dims must be positive")
    return BoxLabel((x, y, z), (dx, dy, dz), heading, fields[7])


def write_frame(root, fid: str, frame: PointCloudFrame, labels, view: Optional[str] = None):
    _check_frame_id(fid)
    pts = points_path(root, fid, view)
    lbl = labels_path(root, fid, view)
    pts.parent.mkdir(parents=True, exist_ok=True)
    lbl.parent.mkdir(parents=True, exist_ok=True)
    pts.write_bytes(np.ascontiguousarray(frame.points, dtype=_POINT_DTYPE).tobytes())
    text = "".join(format_label(l) + "\n" for l in labels)
    lbl.write_bytes(text.encode("utf-8"))


def read_points(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        raise FormatError(f"{path}: truncated point file ({len(raw)} bytes)")
    return np.frombuffer(raw, dtype=_POINT_DTYPE).reshape(-1, 4)


def read_labels(path) -> list[BoxLabel]:
    text = Path(path).read_bytes().decode("utf-8")
    return [parse_label(line, i, str(path))
            for i, line in enumerate(text.splitlines(), start=1) if line.strip()]


def read_frame(root, fid: str, view: Optional[str] = None):
    """Inverse of :func:`write_frame`.

    Points come back as the stored float32 values (widened to float64).
    """
    _check_frame_id(fid)
    pts = read_points(points_path(root, fid, view))
    labels = read_labels(labels_path(root, fid, view))
    return PointCloudFrame(pts.astype(np.float64), int(fid), view or ""), labels


# -- manifest -----------------------------------------------------------------

def make_split(frame_ids, ratio: float, seed: int) -> dict[str, str]:
    """Seeded shuffle; the first ``round(ratio * N)`` shuffled ids train."""
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError("split ratio must lie in [0, 1]")
    ids = list(frame_ids)
    n_train = int(math.floor(ratio * len(ids) + 0.5))
    perm = np.random.default_rng(int(seed) % 2**64).permutation(len(ids))
    train = {ids[i] for i in perm[:n_train]}
    return {fid: ("train" if fid in train else "test") for fid in ids}


@dataclass
class DatasetManifest:
    name: str
    frame_ids: list = field(default_factory=list)
    sensors: list = field(default_factory=list)  # [(SensorSpec, SensorPose)]
    split: dict = field(default_factory=dict)
    split_ratio: float = 0.8
    creation_seed: int = 0
    layout: str = "flat"
    merged: bool = False
    min_points: int = 1
    dt: float = 0.1
    format_version: int = FORMAT_VERSION

    @property
    def views(self) -> list:
        if self.layout == "flat":
            return [None]
        names = [spec.name for spec, _ in self.sensors]
        return names + [RESERVED_VIEW] if self.merged else names

    def default_view(self) -> Optional[str]:
        """Merged frames when present, otherwise the first sensor."""
        if self.layout == "flat":
            return None
        return RESERVED_VIEW if self.merged else self.sensors[0][0].name

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "name": self.name,
            "frame_ids": list(self.frame_ids),
            "sensors": [sensor_to_dict(s, p) for s, p in self.sensors],
            "split": {fid: self.split[fid] for fid in self.frame_ids if fid in self.split},
            "split_ratio": self.split_ratio,
            "split_counts": {
                "train": sum(1 for v in self.split.values() if v == "train"),
                "test": sum(1 for v in self.split.values() if v == "test"),
            },
            "creation_seed": self.creation_seed,
            "layout": self.layout,
            "merged": self.merged,
            "min_points": self.min_points,
            "dt": self.dt,
        }

    @classmethod
    def from_dict(cls, d: dict, source: str = "manifest") -> "DatasetManifest":
        try:
            version = int(d["format_version"])
            if version != FORMAT_VERSION:
                raise FormatError(f"{source}: unsupported format_version {version}")
            sensors = parse_sensors(d["sensors"], f"{source}.sensors") if d["sensors"] else []
            m = cls(
                name=str(d["name"]),
                frame_ids=[str(f) for f in d["frame_ids"]],
                sensors=sensors,
                split={str(k): str(v) for k, v in d["split"].items()},
                split_ratio=float(d["split_ratio"]),
                creation_seed=int(d["creation_seed"]),
                layout=str(d["layout"]),
                merged=bool(d["merged"]),
                min_points=int(d["min_points"]),
                dt=float(d["dt"]),
                format_version=version,
            )
        except KeyError as exc:
            raise FormatError(f"{source}: missing key {exc.args[0]!r}") from None
        except (TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise FormatError(f"{source}: {exc}") from None
        m.check()
        return m

    def check(self) -> None:
        for fid in self.frame_ids:
            _check_frame_id(fid)
        if len(set(self.frame_ids)) != len(self.frame_ids):
            raise FormatError("manifest frame_ids are not unique")
        if self.layout not in ("flat", "per_sensor"):
            raise FormatError(f"unknown layout {self.layout!r}")
        if self.layout == "per_sensor" and not self.sensors:
            raise FormatError("per_sensor layout needs at least one sensor")
        if set(self.split) != set(self.frame_ids) or \
                not set(self.split.values()) <= {"train", "test"}:
            raise FormatError("split must assign every frame_id to train or test")


def validate_files(root, manifest: DatasetManifest) -> None:
    """Raise IntegrityError listing frame ids whose files are missing."""
    missing = []
    for fid in manifest.frame_ids:
        for view in manifest.views:
            if not points_path(root, fid, view).is_file() or \
                    not labels_path(root, fid, view).is_file():
                missing.append(fid)
                break
    if missing:
        shown = ", ".join(missing[:20]) + (" ..." if len(missing) > 20 else "")
        raise IntegrityError(f"{root}: {len(missing)} frame(s) missing files: {shown}", missing)


def write_manifest(root, manifest: DatasetManifest, validate: bool = True) -> Path:
    manifest.check()
    if validate:
        validate_files(root, manifest)
    path = Path(root) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def read_manifest(root, validate: bool = True) -> DatasetManifest:
    path = Path(root) / "manifest.json"
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}") from None
    m = DatasetManifest.from_dict(data, str(path))
    if validate:
        validate_files(root, m)
    return m


class Dataset:
    """A dataset directory together with its validated manifest."""

    def __init__(self, root, manifest: Optional[DatasetManifest] = None):
        self.root = Path(root)
        if not self.root.is_dir():
            raise FileNotFoundError(f"dataset directory not found: {self.root}")
        self.manifest = manifest if manifest is not None else read_manifest(self.root)

    def __len__(self) -> int:
        return len(self.manifest.frame_ids)

    def resolve_view(self, view: Optional[str]) -> Optional[str]:
        if view is None:
            return self.manifest.default_view()
        if view not in self.manifest.views:
            raise ValidationError(f"{self.root}: no view {view!r}; have {self.manifest.views}")
        return view

    def read(self, fid: str, view: Optional[str] = None):
        return read_frame(self.root, fid, self.resolve_view(view))

    def frames(self, view: Optional[str] = None) -> Iterator:
        view = self.resolve_view(view)
        for fid in self.manifest.frame_ids:
            yield fid, *read_frame(self.root, fid, view)


# -- feature matrices ---------------------------------------------------------

def write_features(path, values) -> None:
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValidationError("feature matrix must be 2-D with at least one row and column")
    if not np.all(np.isfinite(a)):
        raise ValidationError("feature matrix values must be finite")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = FMAT_HEADER.pack(FMAT_MAGIC, a.shape[0], a.shape[1], 0)
    path.write_bytes(header + a.astype("<f4").tobytes())


def load_features(path) -> np.ndarray:
    """Read a ``FMAT`` file into a ``(rows, cols)`` float64 array.

    Header: ``b"FMAT"``, u32 rows, u32 cols, u32 reserved, all little-endian.
    """
    raw = Path(path).read_bytes()
    if len(raw) < FMAT_HEADER.size:
        raise FormatError(f"{path}: file shorter than FMAT header")
    magic, rows, cols, _ = FMAT_HEADER.unpack_from(raw)
    if magic != FMAT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if rows < 1 or cols < 1:
        raise FormatError(f"{path}: empty feature matrix ({rows}x{cols})")
    expected = rows * cols * 4
    payload = len(raw) - FMAT_HEADER.size
    if payload != expected:
        raise FormatError(
            f"{path}: size mismatch, header claims {rows}x{cols} ({expected} bytes), "
            f"payload has {payload}")
    a = np.frombuffer(raw, dtype="<f4", offset=FMAT_HEADER.size).reshape(rows, cols)
    bad = np.argwhere(~np.isfinite(a))
    if len(bad):
        r, c = (int(v) for v in bad[0])
        raise FormatError(f"{path}: non-finite value at ({r},{c})")
    return a.astype(np.float64)

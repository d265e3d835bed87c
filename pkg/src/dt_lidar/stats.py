"""Frame-level dataset statistics: point density, scene complexity, box volume."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError

METRICS = ("point_count", "box_count", "mean_box_volume")
POINT_DENSITY_UNIT = "points/frame"
NORMALIZATION = "divide by the larger of the two means"


@dataclass(frozen=True)
class FrameStats:
    point_count: int
    box_count: int
    mean_box_volume: float


@dataclass(frozen=True)
class DatasetSummary:
    frame_count: int
    mean: dict
    std: dict

    def to_dict(self) -> dict:
        out = {"frame_count": self.frame_count}
        for m in METRICS:
            out[m] = {"mean": self.mean[m], "std": self.std[m]}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSummary":
        try:
            return cls(int(d["frame_count"]),
                       {m: float(d[m]["mean"]) for m in METRICS},
                       {m: float(d[m]["std"]) for m in METRICS})
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed summary: {exc}") from None


def frame_stats(frame, labels) -> FrameStats:
    volumes = [l.volume for l in labels]
    return FrameStats(len(frame.points), len(labels),
                      float(np.mean(volumes)) if volumes else 0.0)


def summarize_stats(per_frame: Sequence[FrameStats]) -> DatasetSummary:
    """Means and population standard deviations over frames."""
    if not per_frame:
        raise ValidationError("cannot summarize an empty dataset")
    table = np.array([[getattr(s, m) for m in METRICS] for s in per_frame], dtype=np.float64)
    mean = table.mean(axis=0)
    std = table.std(axis=0)
    return DatasetSummary(len(per_frame),
                          {m: float(v) for m, v in zip(METRICS, mean)},
                          {m: float(v) for m, v in zip(METRICS, std)})


def summarize(dataset, view: Optional[str] = None) -> DatasetSummary:
    """Summarize every frame of a :class:`~dt_lidar.dataset.Dataset`."""
    return summarize_stats([frame_stats(frame, labels)
                            for _, frame, labels in dataset.frames(view)])


def normalized_comparison(a: DatasetSummary, b: DatasetSummary) -> dict:
    """Per-metric ``(a, b)`` means scaled so the larger one is 1.0."""
    out = {}
    for m in METRICS:
        top = max(a.mean[m], b.mean[m])
        if top <= 0:
            out[m] = (0.0, 0.0)
        else:
            out[m] = (a.mean[m] / top, b.mean[m] / top)
    return out

"""A small synthetic intersection scene for trying the tools end to end."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import TriangleMesh, box_mesh, plane_mesh, save_obj

DEFAULT_CLASSES = [
    {"name": "car", "mean_dims_m": [4.5, 1.9, 1.6], "dims_stddev_m": [0.3, 0.1, 0.1],
     "spawn_weight": 0.75, "speed_range_mps": [5.0, 12.0]},
    {"name": "truck", "mean_dims_m": [9.0, 2.5, 3.4], "dims_stddev_m": [1.0, 0.1, 0.2],
     "spawn_weight": 0.25, "speed_range_mps": [3.0, 9.0]},
]


def city_block_mesh(n_buildings: int = 24, half_size: float = 80.0, seed: int = 0,
                    ground_cells: int = 8) -> TriangleMesh:
    """Gridded ground plus box buildings kept clear of the two crossing roads."""
    rng = np.random.default_rng(seed)
    parts = []
    step = 2 * half_size / ground_cells
    for i in range(ground_cells):
        for j in range(ground_cells):
            cell = plane_mesh(step / 2)
            cell.vertices[:, 0] += -half_size + (i + 0.5) * step
            cell.vertices[:, 1] += -half_size + (j + 0.5) * step
            parts.append(cell)
    placed = 0
    while placed < n_buildings:
        x, y = rng.uniform(-half_size + 10, half_size - 10, 2)
        if abs(x) < 14 or abs(y) < 14:
            continue
        dims = (rng.uniform(6, 16), rng.uniform(6, 16), rng.uniform(4, 20))
        parts.append(box_mesh((x, y, dims[2] / 2), dims, rng.uniform(-0.3, 0.3)))
        placed += 1
    verts, tris, offset = [], [], 0
    for p in parts:
        verts.append(p.vertices)
        tris.append(p.triangles + offset)
        offset += len(p.vertices)
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris), 0)


def demo_scene(target_actor_count: int = 20, classes=None, min_points: int = 1,
               mesh_path: str = "city.obj") -> dict:
    # Two-way crossing; each lane's direction of travel is its waypoint order.
    lanes = [
        {"waypoints": [[-75.0, -2.0, 0.0], [75.0, -2.0, 0.0]], "width_m": 3.5},
        {"waypoints": [[75.0, 2.0, 0.0], [-75.0, 2.0, 0.0]], "width_m": 3.5},
        {"waypoints": [[2.0, -75.0, 0.0], [2.0, 75.0, 0.0]], "width_m": 3.5},
        {"waypoints": [[-2.0, 75.0, 0.0], [-2.0, -75.0, 0.0]], "width_m": 3.5},
    ]
    return {
        "static_meshes": [{"path": mesh_path, "scale": 1.0}],
        "lanes": lanes,
        "classes": classes if classes is not None else DEFAULT_CLASSES,
        "target_actor_count": target_actor_count,
        "min_points": min_points,
    }


def demo_sensors(height: float = 5.0) -> list:
    return [{
        "name": "vlp16",
        "channels": 16,
        "upper_fov_deg": 15.0,
        "lower_fov_deg": -15.0,
        "points_per_second": 680000.0,
        "max_range_m": 100.0,
        "rotation_hz": 10.0,
        "noise_stddev_m": 0.02,
        "dropout_prob": 0.0,
        "pose": {"x": 8.0, "y": 8.0, "z": height, "yaw_deg": 0.0,
                 "pitch_deg": 0.0, "roll_deg": 0.0},
    }]


def write_demo(out_dir, **scene_kwargs) -> tuple[Path, Path]:
    """Write ``city.obj``, ``scene.json`` and ``sensors.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_obj(city_block_mesh(), out / "city.obj")
    scene_path = out / "scene.json"
    sensors_path = out / "sensors.json"
    scene_path.write_text(json.dumps(demo_scene(**scene_kwargs), indent=2), encoding="utf-8")
    sensors_path.write_text(json.dumps(demo_sensors(), indent=2), encoding="utf-8")
    return scene_path, sensors_path

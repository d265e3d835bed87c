"""Scene and sensor files for end-to-end tests."""

import hashlib
import json
from pathlib import Path

import numpy as np

from dt_lidar.cli import main
from dt_lidar.geometry import plane_mesh, save_obj, sphere_mesh

CAR = {"name": "car", "mean_dims_m": [4.5, 1.9, 1.6], "dims_stddev_m": [0.3, 0.1, 0.1],
       "spawn_weight": 0.75, "speed_range_mps": [5.0, 10.0]}
TRUCK = {"name": "truck", "mean_dims_m": [9.0, 2.5, 3.4], "dims_stddev_m": [0.8, 0.1, 0.2],
         "spawn_weight": 0.25, "speed_range_mps": [3.0, 8.0]}


def sensor(name="lidar", channels=8, pps=28_800.0, z=2.0, x=0.0, y=0.0, yaw=0.0,
           upper=10.0, lower=-20.0, noise=0.02, dropout=0.0, max_range=100.0):
    return {"name": name, "channels": channels, "upper_fov_deg": upper, "lower_fov_deg": lower,
            "points_per_second": pps, "max_range_m": max_range, "rotation_hz": 10.0,
            "noise_stddev_m": noise, "dropout_prob": dropout,
            "pose": {"x": x, "y": y, "z": z, "yaw_deg": yaw, "pitch_deg": 0.0, "roll_deg": 0.0}}


def circle_lane(radius, n=72, width=3.5):
    ang = np.linspace(0.0, 2 * np.pi, n + 1)
    ang[-1] = 0.0
    pts = np.column_stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros(n + 1)])
    return {"waypoints": pts.tolist(), "width_m": width}


def cross_lanes(half=60.0):
    return [{"waypoints": [[-half, -2.0, 0.0], [half, -2.0, 0.0]], "width_m": 3.5},
            {"waypoints": [[half, 2.0, 0.0], [-half, 2.0, 0.0]], "width_m": 3.5},
            {"waypoints": [[2.0, -half, 0.0], [2.0, half, 0.0]], "width_m": 3.5},
            {"waypoints": [[-2.0, half, 0.0], [-2.0, -half, 0.0]], "width_m": 3.5}]


def write_world(directory, sensors, lanes=None, classes=None, actors=6, min_points=1,
                mesh="city"):
    """Write scene.json/sensors.json (plus a mesh) and return their paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if mesh == "city":
        from dt_lidar.demo import city_block_mesh
        save_obj(city_block_mesh(n_buildings=12, half_size=60.0), d / "world.obj")
    elif mesh == "plane":
        save_obj(plane_mesh(200.0), d / "world.obj")
    elif mesh == "sphere":
        save_obj(sphere_mesh(80.0, lon_offset=0.1), d / "world.obj")
    scene = {
        "static_meshes": [{"path": "world.obj"}] if mesh else [],
        "lanes": lanes if lanes is not None else cross_lanes(),
        "classes": classes if classes is not None else [CAR, TRUCK],
        "target_actor_count": actors,
        "min_points": min_points,
    }
    (d / "scene.json").write_text(json.dumps(scene), encoding="utf-8")
    (d / "sensors.json").write_text(json.dumps(sensors), encoding="utf-8")
    return d / "scene.json", d / "sensors.json"


def simulate(scene, sensors, out, frames, seed=0, *extra):
    code = main(["simulate", "--scene", str(scene), "--sensors", str(sensors),
                 "--frames", str(frames), "--seed", str(seed), "--out", str(out), *extra])
    assert code == 0
    return Path(out)


def tree_digest(root):
    """Relative path -> sha256 for every file under ``root``."""
    root = Path(root)
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}

"""Digital-twin LiDAR simulation and Sim2Real domain-gap metrics."""

import os as _os

# Prefer OpenMP over TBB: an outdated TBB install triggers a warning on every run.
_os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp workqueue tbb")

__version__ = "0.1.0"

from .errors import (DtLidarError, FormatError, GeometryError, IntegrityError,  # noqa: E402
                     ValidationError)
from .geometry import (Bvh, Hit, Ray, TriangleMesh, build_bvh, cast_rays,  # noqa: E402
                       intersect, load_obj)
from .metrics import chamfer, dataset_gap, emd, frechet, mmd_rbf  # noqa: E402
from .scene import (ActorClass, ActorInstance, BoxLabel, LanePolyline,  # noqa: E402
                    actor_meshes, generate_labels, spawn_actors, step_actors)
from .sensor import (PointCloudFrame, ScanPattern, SensorPose, SensorSpec,  # noqa: E402
                     derive_scan_pattern, merge_frames, simulate_scan)

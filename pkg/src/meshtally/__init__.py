"""Monte Carlo particle tallies on tetrahedral meshes.

Particles are traced element-to-element through shared-face adjacency and
score track-length / collision tallies into preallocated element x group
grids. A deliberately allocation-heavy baseline (KD-tree localization per
segment, dynamically grown segment vectors) is included for performance and
allocation comparisons.
"""

import os as _os

# Allow oversubscribed thread requests (e.g. benchmarking 8 threads on a
# smaller box). Must be set before numba is first imported anywhere.
_os.environ.setdefault(
    "NUMBA_NUM_THREADS", str(max(8, _os.cpu_count() or 1))
)

from .mesh import (
    TetMesh,
    build_cube_mesh,
    build_adjacency,
    element_volume,
    validate,
    read_tetmesh,
    write_tetmesh,
    MalformedMeshError,
)
from .geometry import (
    ExitKind,
    ExitResult,
    barycentric_coords,
    ray_face_intersection,
    point_in_tet,
    find_exit_face,
)
from .particles import ParticleBatch, create_batch, load_step, active_count
from .search import (
    InterfaceEvent,
    TraceSummary,
    TraceWorkspace,
    trace_batch,
    initialize_locations,
)
from .tally import (
    TallyGrid,
    FluxResult,
    MeshTally,
    create_grid,
    score_track_length,
    score_collision,
    finalize_batch,
    flux,
    write_vtk,
    write_flux_csv,
)
from .transport import (
    CrossSections,
    RunConfig,
    RunResult,
    sample_source,
    sample_collision_distance,
    collision_distance,
    sample_collision,
    advance_event,
    run,
)
from .baseline import KdTree, SegmentList, build_kdtree, baseline_trace
from .instrument import allocation_probe, ProbeResult, BenchRecord

__all__ = [
    "TetMesh", "build_cube_mesh", "build_adjacency", "element_volume",
    "validate", "read_tetmesh", "write_tetmesh", "MalformedMeshError",
    "ExitKind", "ExitResult", "barycentric_coords", "ray_face_intersection",
    "point_in_tet", "find_exit_face",
    "ParticleBatch", "create_batch", "load_step", "active_count",
    "InterfaceEvent", "TraceSummary", "TraceWorkspace", "trace_batch",
    "initialize_locations",
    "TallyGrid", "FluxResult", "MeshTally", "create_grid",
    "score_track_length", "score_collision", "finalize_batch", "flux",
    "write_vtk", "write_flux_csv",
    "CrossSections", "RunConfig", "RunResult", "sample_source",
    "sample_collision_distance", "collision_distance", "sample_collision",
    "advance_event", "run",
    "KdTree", "SegmentList", "build_kdtree", "baseline_trace",
    "allocation_probe", "ProbeResult", "BenchRecord",
]

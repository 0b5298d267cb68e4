"""Fluid-flow probing of 3D Gaussian scenes.

A divergence-free SPH solver pushes a slab of fluid through the rigid
geometry extracted from a Gaussian scene; the residual velocity
divergence the flow picks up near badly reconstructed geometry is
aggregated per Gaussian, scored per camera view, and used to pick the
next best view to acquire.
"""

__version__ = "0.1.0"

from .kernels import SmoothingKernel, kernel_value, kernel_gradient
from .neighbors import NeighborGrid, build_grid, neighbors
from .metrics import (
    DivergenceField,
    GaussianScore,
    particle_divergence,
    aggregate_per_gaussian,
    reduce_over_ics,
    geometry_divergence,
)
from .sph import (
    ParticleSystem,
    SimulationConfig,
    SimulationError,
    RolloutTrace,
    dfsph_step,
    run_rollout,
    cfl_timestep,
    reynolds_number,
)
from .scene import (
    CANONICAL_DIRECTIONS,
    Gaussian,
    GaussianScene,
    RigidParticleSet,
    FluidSlabSpec,
    load_scene,
    save_scene,
    voxelize,
    build_domain,
)
from .cameras import (
    CameraView,
    ViewScore,
    visible_set,
    score_view,
    view_divergence_score,
    view_count_score,
    load_views,
    look_at_view,
)
from .probe import ProbeResult, probe_scene, function_critical_views
from .nbv import (
    DEFAULT_SPEEDS,
    CandidatePool,
    AcquisitionLog,
    DegradedSceneOracle,
    RandomProposer,
    FarthestProposer,
    ExternalScoreProposer,
    top_k_size,
    select_next_view,
    run_acquisition_loop,
    velocity_sweep,
)

"""Scene probing: run the flow battery and reduce to per-Gaussian scores.

A probe voxelizes the scene once, releases a fluid slab from each
requested direction, rolls the solver forward, and aggregates the
recorded divergence snapshots onto the Gaussians.  Directions are
independent jobs; results are merged in canonical direction order so
the output does not depend on the order the caller listed them in.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .cameras import score_view
from .metrics import GaussianScore, aggregate_per_gaussian, geometry_divergence
from .scene import (CANONICAL_DIRECTIONS, FluidSlabSpec, RigidParticleSet,
                    build_domain, normalize_direction, voxelize)
from .sph import run_rollout

log = logging.getLogger(__name__)


@dataclass
class ProbeResult:
    """Per-Gaussian scores plus per-direction rollout summaries."""

    ics: tuple               # canonical direction order actually run
    d_g: np.ndarray          # max over directions
    counts: np.ndarray       # distinct-particle counts, max over directions
    per_ic: dict             # direction -> per-Gaussian divergence
    per_ic_counts: dict
    d_bar: float             # scene-level geometry divergence
    summaries: dict          # direction -> rollout summary dict
    config: object           # SimulationConfig used for every rollout
    params: dict             # probe-level knobs (membership radius etc.)

    @property
    def n_gaussians(self) -> int:
        return int(self.d_g.shape[0])


def _normalize_ics(ics):
    if ics is None:
        return CANONICAL_DIRECTIONS
    requested = {normalize_direction(d) for d in ics}
    if not requested:
        raise ValueError("IC list is empty; nothing to probe")
    return tuple(d for d in CANONICAL_DIRECTIONS if d in requested)


def _summarize(trace):
    s = trace.summary
    total = 0.0
    count = 0
    for snap in trace.snapshots:
        total += float(snap.divergence.sum())
        count += snap.divergence.size
    return {
        "steps": s.steps,
        "n_fluid": s.n_fluid,
        "n_rigid": s.n_rigid,
        "snapshots": len(trace.snapshots),
        "wall_time": s.wall_time,
        "min_density": s.min_density,
        "max_density": s.max_density,
        "escaped": s.escaped,
        "non_converged_steps": s.non_converged_steps,
        "mean_divergence": total / count if count else 0.0,
        "domain_min": list(s.domain_min),
        "domain_max": list(s.domain_max),
    }


def probe_scene(scene, cfg, ics=None, opacity_threshold=0.3, n=3.0,
                slab_thickness=0.3, slab_padding=0.1,
                empty_domain=False) -> ProbeResult:
    """Run one rollout per direction and aggregate onto the Gaussians.

    `ics` is a subset of the five release directions (default all);
    the top-down drop uses zero release speed and falls under gravity,
    lateral slabs are released at cfg.initial_speed.  `empty_domain`
    swaps the voxelized obstacle for an empty rigid set while keeping
    the same domain extents, which gives a matched control rollout.
    """
    if len(scene) == 0:
        raise ValueError("cannot probe an empty scene")
    directions = _normalize_ics(ics)
    rigid = voxelize(scene, opacity_threshold=opacity_threshold,
                     spacing=2.0 * cfg.particle_radius,
                     kernel_size=cfg.kernel_size,
                     rigid_density=cfg.rigid_density)
    reference = rigid.aabb
    obstacle = RigidParticleSet.empty(cfg.rigid_density) if empty_domain else rigid

    per_ic = {}
    per_ic_counts = {}
    summaries = {}
    for ic in directions:
        speed = 0.0 if ic == "-y" else cfg.initial_speed
        slab = FluidSlabSpec(direction=ic, thickness=slab_thickness,
                             padding=slab_padding, speed=speed)
        try:
            system = build_domain(obstacle, slab, cfg, reference_aabb=reference)
            trace = run_rollout(system, cfg)
            d_ic, counts = aggregate_per_gaussian(trace, scene, n=n)
        except Exception as e:
            raise RuntimeError(f"probe IC '{ic}' failed: {e}") from e
        per_ic[ic] = d_ic
        per_ic_counts[ic] = counts
        summaries[ic] = _summarize(trace)
        log.info("IC %s: %d fluid, mean divergence %.4g",
                 ic, summaries[ic]["n_fluid"], summaries[ic]["mean_divergence"])

    score = GaussianScore.from_ics(per_ic, per_ic_counts, n=n)
    return ProbeResult(
        ics=directions,
        d_g=score.d_g,
        counts=score.counts,
        per_ic=score.per_ic,
        per_ic_counts=score.per_ic_counts,
        d_bar=geometry_divergence(scene, score.d_g),
        summaries=summaries,
        config=cfg,
        params={
            "opacity_threshold": opacity_threshold,
            "n": n,
            "slab_thickness": slab_thickness,
            "slab_padding": slab_padding,
            "empty_domain": empty_domain,
        },
    )


def function_critical_views(scene, cfg, direction, poses, top_k=None,
                            opacity_threshold=0.3, n=3.0,
                            slab_thickness=0.3, slab_padding=0.1,
                            unweighted=False):
    """Rank candidate poses by interaction-count score.

    Runs a single rollout along `direction`, accumulates per-Gaussian
    particle counts, scores every pose and returns the top_k as
    (view, score) pairs in descending count-score order.  Ties break
    toward the earlier pose in the list.
    """
    if not poses:
        raise ValueError("poses must be non-empty")
    if top_k is None:
        top_k = len(poses)
    if top_k < 0:
        raise ValueError(f"top_k must be nonnegative, got {top_k}")
    if top_k > len(poses):
        raise ValueError(f"top_k {top_k} exceeds the {len(poses)} candidate poses")
    if top_k == 0:
        return []
    result = probe_scene(scene, cfg, ics=[direction],
                         opacity_threshold=opacity_threshold, n=n,
                         slab_thickness=slab_thickness,
                         slab_padding=slab_padding)
    counts = result.counts.astype(np.float64)
    scored = [score_view(v, scene, counts=counts, unweighted=unweighted)
              for v in poses]
    order = sorted(range(len(poses)),
                   key=lambda i: (-scored[i].count_score, i))
    return [(poses[i], scored[i]) for i in order[:top_k]]

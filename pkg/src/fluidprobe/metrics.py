"""Velocity-divergence metric and its per-Gaussian aggregation.

The per-particle field is the SPH divergence estimate

    (div v)_i = sum_j V_j (v_j - v_i) . grad W(x_i - x_j, h_k)

taken over fluid and rigid neighbors alike; its magnitude D_i is the
physical-uncertainty signal.  Rigid particles carry 0.  Aggregation
averages D_i over every (snapshot, particle) membership event inside a
Gaussian's n * r_g sphere, and scenes reduce over initial conditions by
elementwise maximum.  The aggregation consumes whatever per-particle
field the trace snapshots carry, so a different field (e.g. vorticity
magnitude) can be substituted at trace level; only divergence ships.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from scipy.spatial import cKDTree

from .kernels import grad_coef_cubic


@dataclass
class DivergenceField:
    """Per-particle |div v| (1/s); rigid rows are zero."""
    values: np.ndarray
    step: int = 0


@dataclass
class GaussianScore:
    """Per-Gaussian divergence aggregate over one or more ICs."""
    per_ic: dict            # direction label -> D_g^(IC) array
    per_ic_counts: dict     # direction label -> |P_g^(IC)| array
    d_g: np.ndarray         # max over ICs
    counts: np.ndarray      # max over ICs
    n: float                # membership radius multiplier

    @classmethod
    def from_ics(cls, per_ic, per_ic_counts, n):
        d_g = reduce_over_ics(list(per_ic.values()))
        counts = reduce_over_ics(list(per_ic_counts.values()))
        return cls(per_ic=dict(per_ic), per_ic_counts=dict(per_ic_counts),
                   d_g=d_g, counts=counts.astype(np.int64), n=float(n))


@njit(cache=True, parallel=True)
def _divergence_magnitude(pos, vel, vol, starts, idx, h):
    nf = starts.shape[0] - 1
    out = np.empty(nf)
    for i in prange(nf):
        s = 0.0
        for t in range(starts[i], starts[i + 1]):
            j = idx[t]
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            dz = pos[i, 2] - pos[j, 2]
            c = grad_coef_cubic(math.sqrt(dx * dx + dy * dy + dz * dz), h)
            s += vol[j] * c * ((vel[j, 0] - vel[i, 0]) * dx
                               + (vel[j, 1] - vel[i, 1]) * dy
                               + (vel[j, 2] - vel[i, 2]) * dz)
        out[i] = abs(s)
    return out


def particle_divergence(system, grid, step=0) -> DivergenceField:
    """|div v| for every fluid particle; rigid rows are zero.

    The grid must be current for the system's positions.  The kernel
    size comes from the grid cutoff, matching the solver's pairing of
    search radius and smoothing length.
    """
    nf = system.n_fluid
    starts, idx = grid.query_csr(nf)
    values = np.zeros(len(system))
    if nf:
        values[:nf] = _divergence_magnitude(
            system.positions, system.velocities, system.volumes,
            starts, idx, grid.cutoff,
        )
    return DivergenceField(values=values, step=step)


def aggregate_per_gaussian(trace, scene, n=3.0):
    """Mean divergence and distinct-particle count per Gaussian.

    A membership event is a (snapshot, particle) pair with
    ||x_i - mu_g|| <= n * r_g (inclusive).  Returns (d_ic, counts):
    the event-mean of D_i per Gaussian (0 when no event occurs) and the
    number of distinct particles ever inside the sphere.
    """
    if n <= 0:
        raise ValueError(f"membership multiplier must be positive, got {n}")
    if not trace.snapshots:
        raise ValueError("trace has no snapshots")
    ng = len(scene)
    radii = n * scene.radii
    d_sum = np.zeros(ng)
    events = np.zeros(ng, dtype=np.int64)
    members = [[] for _ in range(ng)]
    for snap in trace.snapshots:
        if snap.positions.shape[0] == 0:
            continue
        tree = cKDTree(snap.positions)
        hits = tree.query_ball_point(scene.centers, radii)
        for g, lst in enumerate(hits):
            if lst:
                arr = np.asarray(lst, dtype=np.int64)
                d_sum[g] += snap.divergence[arr].sum()
                events[g] += arr.size
                members[g].append(arr)
    d_ic = np.where(events > 0, d_sum / np.maximum(events, 1), 0.0)
    counts = np.array(
        [np.unique(np.concatenate(m)).size if m else 0 for m in members],
        dtype=np.int64,
    )
    return d_ic, counts


def reduce_over_ics(per_ic) -> np.ndarray:
    """Elementwise maximum across per-IC arrays."""
    arrays = [np.asarray(a, dtype=np.float64) for a in per_ic]
    if not arrays:
        raise ValueError("no IC arrays to reduce")
    length = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != length:
            raise ValueError("IC arrays have mismatched shapes")
    return np.maximum.reduce(arrays)


def geometry_divergence(scene, d_g) -> float:
    """Scene-level scalar: mean over Gaussians of pi * s_g^2 * D_g."""
    d_g = np.asarray(d_g, dtype=np.float64)
    if len(scene) == 0:
        raise ValueError("empty scene")
    if d_g.shape != (len(scene),):
        raise ValueError(f"D_g length {d_g.shape} does not match scene size {len(scene)}")
    s = scene.traces
    return float(np.mean(math.pi * s * s * d_g))

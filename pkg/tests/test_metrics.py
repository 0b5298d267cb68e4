"""Divergence metric tests.

The linear-field case uses an analytic oracle: for v(x) = A x the true
divergence is tr(A), evaluated independently of the SPH estimate.
"""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from fluidprobe.metrics import (
    GaussianScore,
    aggregate_per_gaussian,
    geometry_divergence,
    particle_divergence,
    reduce_over_ics,
)
from fluidprobe.scene import GaussianScene
from fluidprobe.sph import ParticleSystem, Snapshot

V0 = 0.05 ** 3


def block_system(n=14, velocity_field=None, n_rigid=0, spacing=0.05):
    axes = [(np.arange(n) + 0.5) * spacing] * 3
    g = np.meshgrid(*axes, indexing="ij")
    pos = np.stack([a.ravel() for a in g], axis=1)
    vel = np.zeros_like(pos) if velocity_field is None else velocity_field(pos)
    if n_rigid:
        # rigid rows appended just outside the block
        extra = pos[:n_rigid] + np.array([n * spacing + 0.2, 0.0, 0.0])
        pos = np.concatenate([pos, extra])
        vel = np.concatenate([vel, np.zeros((n_rigid, 3))])
    return ParticleSystem(
        positions=pos,
        velocities=vel,
        volumes=np.full(len(pos), V0),
        n_fluid=len(pos) - n_rigid,
        domain_min=(-5, -5, -5),
        domain_max=(5, 5, 5),
    )


def interior_mask(system, margin=0.1):
    pos = system.positions[:system.n_fluid]
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    return np.all((pos >= lo + margin) & (pos <= hi - margin), axis=1)


def one_gaussian_scene(scale=0.1, center=(0.0, 0.0, 0.0)):
    return GaussianScene(
        centers=np.array([center], dtype=float),
        scales=np.full((1, 3), scale),
        rotations=np.array([[1.0, 0, 0, 0]]),
        opacities=np.array([0.9]),
    )


def trace_of(snapshots):
    return SimpleNamespace(snapshots=snapshots)


def snap(step, positions, divergence):
    positions = np.asarray(positions, dtype=float)
    return Snapshot(step=step, positions=positions,
                    velocities=np.zeros_like(positions),
                    divergence=np.asarray(divergence, dtype=float))


# -------------------- per-particle divergence --------------------

def test_uniform_field_has_zero_divergence():
    system = block_system(n=8, velocity_field=lambda p: np.tile([1.0, -2.0, 0.5], (len(p), 1)))
    field = particle_divergence(system, system.build_grid(0.1))
    np.testing.assert_array_equal(field.values, 0.0)


def test_isolated_particle_has_zero_divergence():
    system = ParticleSystem(
        positions=np.zeros((1, 3)), velocities=np.ones((1, 3)),
        volumes=np.full(1, V0), n_fluid=1,
    )
    field = particle_divergence(system, system.build_grid(0.1))
    assert field.values[0] == 0.0


def test_linear_field_matches_trace_oracle():
    A = np.diag([0.5, -0.2, 0.1])
    oracle = np.trace(A)   # analytic divergence of v = A x
    system = block_system(n=14, velocity_field=lambda p: p @ A.T)
    field = particle_divergence(system, system.build_grid(0.1))
    inner = field.values[:system.n_fluid][interior_mask(system)]
    assert inner.size > 500
    np.testing.assert_allclose(inner, abs(oracle), rtol=0.10)


def test_rigid_rows_carry_zero():
    system = block_system(n=6, velocity_field=lambda p: p * 0.3, n_rigid=5)
    field = particle_divergence(system, system.build_grid(0.1))
    np.testing.assert_array_equal(field.values[system.n_fluid:], 0.0)
    assert field.values.shape == (len(system),)
    assert np.all(field.values >= 0.0)


# -------------------- per-Gaussian aggregation --------------------

def test_event_mean_over_snapshots():
    scene = one_gaussian_scene(scale=0.1)
    trace = trace_of([
        snap(0, [[0.05, 0.0, 0.0]], [1.0]),
        snap(10, [[0.10, 0.0, 0.0]], [3.0]),
    ])
    d, counts = aggregate_per_gaussian(trace, scene, n=3.0)
    assert d[0] == pytest.approx(2.0)
    assert counts[0] == 1    # one distinct particle, two events


def test_distinct_particle_count():
    scene = one_gaussian_scene(scale=0.1)
    trace = trace_of([
        snap(0, [[0.05, 0, 0], [0.1, 0, 0]], [1.0, 2.0]),
        snap(10, [[0.05, 0, 0], [9.0, 0, 0]], [4.0, 9.0]),
    ])
    d, counts = aggregate_per_gaussian(trace, scene, n=3.0)
    assert counts[0] == 2
    assert d[0] == pytest.approx((1.0 + 2.0 + 4.0) / 3.0)


def test_membership_radius_is_inclusive():
    scene = one_gaussian_scene(scale=0.1)
    boundary = 3.0 * scene.radii[0]
    trace = trace_of([snap(0, [[boundary, 0.0, 0.0]], [5.0])])
    d, counts = aggregate_per_gaussian(trace, scene, n=3.0)
    assert d[0] == pytest.approx(5.0)
    assert counts[0] == 1


def test_untouched_gaussian_scores_zero():
    scene = one_gaussian_scene(scale=0.1)
    trace = trace_of([snap(0, [[10.0, 0.0, 0.0]], [7.0])])
    d, counts = aggregate_per_gaussian(trace, scene, n=3.0)
    assert d[0] == 0.0
    assert counts[0] == 0


def test_aggregation_validation():
    scene = one_gaussian_scene()
    with pytest.raises(ValueError, match="multiplier"):
        aggregate_per_gaussian(trace_of([snap(0, [[0, 0, 0]], [1.0])]), scene, n=0.0)
    with pytest.raises(ValueError, match="snapshot"):
        aggregate_per_gaussian(trace_of([]), scene, n=3.0)


def test_aggregation_is_permutation_invariant():
    rng = np.random.default_rng(5)
    pos = rng.uniform(-0.4, 0.4, size=(50, 3))
    div = rng.uniform(0.0, 2.0, size=50)
    scene = GaussianScene(
        centers=np.array([[0.0, 0, 0], [0.25, 0, 0]]),
        scales=np.full((2, 3), 0.05),
        rotations=np.array([[1.0, 0, 0, 0], [1.0, 0, 0, 0]]),
        opacities=np.array([0.9, 0.9]),
    )
    d1, c1 = aggregate_per_gaussian(trace_of([snap(0, pos, div)]), scene)
    perm = rng.permutation(50)
    d2, c2 = aggregate_per_gaussian(trace_of([snap(0, pos[perm], div[perm])]), scene)
    np.testing.assert_allclose(d1, d2, rtol=1e-12)
    np.testing.assert_array_equal(c1, c2)


# -------------------- IC reduction --------------------

def test_reduce_is_elementwise_max():
    per_ic = [np.array([0.1]), np.array([0.2]), np.array([0.05]),
              np.array([0.3]), np.array([0.15])]
    np.testing.assert_allclose(reduce_over_ics(per_ic), [0.3])
    np.testing.assert_allclose(reduce_over_ics([np.zeros(4)] * 5), np.zeros(4))
    single = np.array([0.7, 0.2])
    np.testing.assert_allclose(reduce_over_ics([single]), single)


def test_reduce_validation():
    with pytest.raises(ValueError, match="no IC"):
        reduce_over_ics([])
    with pytest.raises(ValueError, match="mismatch"):
        reduce_over_ics([np.zeros(2), np.zeros(3)])


def test_score_reduction_dominates_every_ic():
    rng = np.random.default_rng(9)
    per_ic = {d: rng.uniform(size=6) for d in ("+x", "-x", "+z", "-z", "-y")}
    per_counts = {d: rng.integers(0, 50, size=6) for d in per_ic}
    score = GaussianScore.from_ics(per_ic, per_counts, n=3.0)
    for d, arr in per_ic.items():
        assert np.all(score.d_g >= arr)
    assert score.d_g.shape == (6,)
    assert score.counts.dtype == np.int64
    assert score.n == 3.0


# -------------------- scene-level scalar --------------------

def test_geometry_divergence_formula():
    scene = one_gaussian_scene(scale=0.1)   # s_g = 3 * 0.1^2 = 0.03
    d_bar = geometry_divergence(scene, np.array([2.0]))
    assert d_bar == pytest.approx(math.pi * 0.03 ** 2 * 2.0, rel=1e-12)
    assert d_bar == pytest.approx(5.655e-3, rel=1e-3)


def test_geometry_divergence_zero_and_linearity():
    scene = GaussianScene(
        centers=np.zeros((3, 3)),
        scales=np.abs(np.random.default_rng(2).normal(size=(3, 3))) + 0.05,
        rotations=np.tile([1.0, 0, 0, 0], (3, 1)),
        opacities=np.full(3, 0.9),
    )
    assert geometry_divergence(scene, np.zeros(3)) == 0.0
    d = np.array([0.5, 1.0, 2.0])
    assert geometry_divergence(scene, 2 * d) == pytest.approx(
        2 * geometry_divergence(scene, d), rel=1e-12)
    # monotone in every component
    bumped = d.copy()
    bumped[1] += 0.7
    assert geometry_divergence(scene, bumped) > geometry_divergence(scene, d)


def test_geometry_divergence_validation():
    scene = one_gaussian_scene()
    with pytest.raises(ValueError, match="does not match"):
        geometry_divergence(scene, np.zeros(3))

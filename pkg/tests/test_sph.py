"""DFSPH integrator tests: free fall, equilibrium, dam-break invariants,
boundary enforcement, determinism, and the similarity-number helpers."""

import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from fluidprobe.scene import FluidSlabSpec, GaussianScene, build_domain, voxelize
from fluidprobe.sph import (
    ParticleSystem,
    SimulationConfig,
    SimulationError,
    cfl_timestep,
    dfsph_step,
    reynolds_number,
    run_rollout,
)

V0 = 0.05 ** 3


def single_particle(gravity=(0.0, -9.81, 0.0)):
    return ParticleSystem(
        positions=np.zeros((1, 3)),
        velocities=np.zeros((1, 3)),
        volumes=np.full(1, V0),
        n_fluid=1,
        gravity=gravity,
        domain_min=(-10, -10, -10),
        domain_max=(10, 10, 10),
    )


def lattice_block(n, lo=(0.0, 0.0, 0.0), spacing=0.05):
    axes = [lo[a] + (np.arange(n) + 0.5) * spacing for a in range(3)]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in g], axis=1)


def dam_break_system(n=6, domain=1.0):
    pos = lattice_block(n)
    return ParticleSystem(
        positions=pos,
        velocities=np.zeros_like(pos),
        volumes=np.full(len(pos), V0),
        n_fluid=len(pos),
        domain_min=(0.0, 0.0, 0.0),
        domain_max=(domain, domain, domain),
    )


def ball_impact_setup(n_steps=60):
    scene = GaussianScene(np.zeros((1, 3)), np.full((1, 3), 0.08),
                          np.array([[1.0, 0, 0, 0]]), np.array([0.95]))
    rigid = voxelize(scene)
    cfg = SimulationConfig(n_steps=n_steps, domain_min=(-1.5, -1.5, -1.5),
                           domain_max=(1.5, 1.5, 1.5))
    slab = FluidSlabSpec(direction="-x", thickness=0.3, padding=0.1, speed=3.0)
    return build_domain(rigid, slab, cfg), rigid, cfg


# -------------------- single steps --------------------

def test_free_fall_single_particle():
    system = single_particle()
    cfg = SimulationConfig()
    grid = system.build_grid(cfg.cutoff_radius)
    system, grid, report = dfsph_step(system, grid, cfg, step=1)
    assert system.velocities[0, 1] == pytest.approx(-9.81 * cfg.dt, rel=1e-15)
    assert system.velocities[0, 0] == 0.0
    assert system.positions[0, 1] == pytest.approx(-9.81 * cfg.dt ** 2, rel=1e-15)
    assert report.divergence_error == 0.0


def test_lattice_at_rest_stays_at_rest():
    pos = lattice_block(4)
    system = ParticleSystem(
        positions=pos, velocities=np.zeros_like(pos),
        volumes=np.full(len(pos), V0), n_fluid=len(pos),
        gravity=(0.0, 0.0, 0.0),
        domain_min=(-1, -1, -1), domain_max=(1, 1, 1),
    )
    cfg = SimulationConfig(gravity=(0.0, 0.0, 0.0), n_steps=10)
    grid = system.build_grid(cfg.cutoff_radius)
    for step in range(1, 11):
        system, grid, _ = dfsph_step(system, grid, cfg, step=step)
    assert np.abs(system.velocities).max() < 1e-8


def test_nan_state_raises_with_step_index():
    system = single_particle()
    cfg = SimulationConfig()
    grid = system.build_grid(cfg.cutoff_radius)
    system.velocities[0, 0] = np.nan
    with pytest.raises(SimulationError, match="step 7"):
        dfsph_step(system, grid, cfg, step=7)


def test_non_convergence_is_a_warning_not_an_abort():
    # head-on pair with no solver iterations allowed
    pos = np.array([[0.0, 0.0, 0.0], [0.06, 0.0, 0.0]])
    vel = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    system = ParticleSystem(
        positions=pos, velocities=vel, volumes=np.full(2, V0), n_fluid=2,
        gravity=(0.0, 0.0, 0.0),
        domain_min=(-1, -1, -1), domain_max=(1, 1, 1),
    )
    cfg = SimulationConfig(gravity=(0.0, 0.0, 0.0), min_iterations=0, max_iterations=0)
    grid = system.build_grid(cfg.cutoff_radius)
    system, grid, report = dfsph_step(system, grid, cfg, step=1)
    assert report.warnings
    assert np.all(np.isfinite(system.velocities))


# -------------------- dam break invariants --------------------

def test_dam_break_solver_invariants():
    system = dam_break_system(n=6)
    cfg = SimulationConfig(n_steps=100)
    rho_tol, div_tol = cfg.solver_tolerances()
    mass0 = system.total_fluid_mass()
    count0 = system.n_fluid
    trace = run_rollout(system, cfg)

    assert system.n_fluid == count0
    assert system.total_fluid_mass() == mass0
    assert trace.summary.escaped == 0
    assert trace.summary.non_converged_steps == 0
    for rep in trace.reports:
        assert rep.divergence_error <= div_tol
        assert rep.density_error <= rho_tol
        assert rep.mean_density_deviation <= 0.01 * cfg.fluid_density
    # containment after every recorded state
    for snap in trace.snapshots:
        assert np.all(snap.positions >= system.domain_min - 1e-12)
        assert np.all(snap.positions <= system.domain_max + 1e-12)


def test_rollout_determinism_bit_identical():
    cfg = SimulationConfig(n_steps=30, deterministic=True)
    traces = [run_rollout(dam_break_system(n=5), cfg) for _ in range(2)]
    for a, b in zip(traces[0].snapshots, traces[1].snapshots):
        assert a.positions.tobytes() == b.positions.tobytes()
        assert a.velocities.tobytes() == b.velocities.tobytes()
        assert a.divergence.tobytes() == b.divergence.tobytes()


# -------------------- rollout bookkeeping --------------------

def test_zero_step_rollout_keeps_initial_snapshot():
    cfg = SimulationConfig(n_steps=0)
    trace = run_rollout(single_particle(), cfg)
    assert len(trace.snapshots) == 1
    assert trace.snapshots[0].step == 0
    assert trace.summary.steps == 0


def test_snapshot_count_at_default_stride():
    cfg = SimulationConfig(n_steps=750, stride=10, gravity=(0.0, 0.0, 0.0))
    trace = run_rollout(single_particle(gravity=(0.0, 0.0, 0.0)), cfg)
    assert len(trace.snapshots) == 76
    assert trace.snapshots[-1].step == 750


def test_stride_validation():
    with pytest.raises(ValueError, match="stride"):
        run_rollout(single_particle(), SimulationConfig(n_steps=1), stride=0)


# -------------------- rigid boundary --------------------

def test_no_penetration_after_every_step():
    system, rigid, cfg = ball_impact_setup(n_steps=60)
    tree = cKDTree(rigid.positions)
    grid = system.build_grid(cfg.cutoff_radius)
    contacts = 0
    for step in range(1, cfg.n_steps + 1):
        system, grid, rep = dfsph_step(system, grid, cfg, step=step)
        contacts += rep.rigid_contacts
        gap, _ = tree.query(system.positions[:system.n_fluid])
        assert gap.min() >= cfg.particle_radius
    # overlaps cleared by enforcement stay rare over the rollout
    assert contacts / (system.n_fluid * cfg.n_steps) <= 1e-3


def test_rigid_particles_never_move():
    system, rigid, cfg = ball_impact_setup(n_steps=20)
    before = system.positions[system.n_fluid:].copy()
    trace = run_rollout(system, cfg)
    np.testing.assert_array_equal(system.positions[system.n_fluid:], before)
    np.testing.assert_array_equal(trace.rigid_positions, before)
    np.testing.assert_array_equal(system.velocities[system.n_fluid:], 0.0)


# -------------------- config and state validation --------------------

def test_config_validation():
    with pytest.raises(ValueError, match="dt"):
        SimulationConfig(dt=0.0)
    with pytest.raises(ValueError, match="n_steps"):
        SimulationConfig(n_steps=-1)
    with pytest.raises(ValueError, match="divergence_tolerance"):
        SimulationConfig(divergence_tolerance=0.0)
    with pytest.raises(ValueError, match="stride"):
        SimulationConfig(stride=0)
    with pytest.raises(ValueError, match="min_iterations"):
        SimulationConfig(min_iterations=5, max_iterations=2)
    with pytest.raises(ValueError, match="domain"):
        SimulationConfig(domain_min=(-1, -1, -1))
    with pytest.raises(ValueError, match="viscosity"):
        SimulationConfig(viscosity=-1.0)


def test_default_tolerances():
    rho_tol, div_tol = SimulationConfig().solver_tolerances()
    assert rho_tol == pytest.approx(1.0)      # 0.1% of rest density
    assert div_tol == pytest.approx(0.5)      # 1e-3 / dt
    assert SimulationConfig(divergence_tolerance=0.2).solver_tolerances()[1] == 0.2


def test_particle_system_validation():
    with pytest.raises(ValueError, match="volumes must be positive"):
        ParticleSystem(np.zeros((1, 3)), np.zeros((1, 3)), np.zeros(1), 1)
    with pytest.raises(ValueError, match="n_fluid"):
        ParticleSystem(np.zeros((1, 3)), np.zeros((1, 3)), np.full(1, V0), 2)
    with pytest.raises(ValueError, match="domain_max"):
        ParticleSystem(np.zeros((1, 3)), np.zeros((1, 3)), np.full(1, V0), 1,
                       domain_min=(1, 1, 1), domain_max=(0, 0, 0))
    with pytest.raises(ValueError, match="non-finite"):
        ParticleSystem(np.full((1, 3), np.inf), np.zeros((1, 3)), np.full(1, V0), 1)


def test_rigid_velocity_pinned_to_zero():
    system = ParticleSystem(
        positions=np.zeros((2, 3)),
        velocities=np.ones((2, 3)),
        volumes=np.full(2, V0),
        n_fluid=1,
    )
    np.testing.assert_array_equal(system.velocities[1], 0.0)
    assert list(system.kinds) == [0, 1]
    assert system.total_fluid_mass() == pytest.approx(1000.0 * V0)


# -------------------- similarity numbers --------------------

def test_cfl_timestep():
    assert cfl_timestep(3.0) == pytest.approx(0.002)
    assert cfl_timestep(6.0) == pytest.approx(0.001)
    assert cfl_timestep(50.0) == pytest.approx(0.00012)
    with pytest.raises(ValueError):
        cfl_timestep(0.0)


def test_reynolds_number():
    assert reynolds_number(1000.0, 3.0, 3.0, 10.0) == pytest.approx(900.0)
    assert reynolds_number(1000.0, 6.0, 3.0, 10.0) == pytest.approx(1800.0)
    with pytest.raises(ValueError, match="viscosity"):
        reynolds_number(1000.0, 3.0, 3.0, 0.0)

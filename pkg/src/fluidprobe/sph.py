"""Divergence-free SPH time integration with rigid boundary coupling.

Each step runs the classic DFSPH sequence: non-pressure forces, an
iterative divergence-free solve on the velocities, advection, and an
iterative constant-density solve at the new positions, finished by wall
enforcement.  Rigid particles never move; they enter every sum with a
boundary mass m_b = rho_0 * V_b.

All inner loops are gather-style (each parallel iteration writes only
its own output row) over neighbor lists sorted by index, so results are
bit-identical regardless of worker count.
"""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import numba
from numba import njit, prange

from .kernels import w_cubic, grad_coef_cubic
from .neighbors import NeighborGrid
from .metrics import particle_divergence

log = logging.getLogger(__name__)

GRAVITY = (0.0, -9.81, 0.0)


class SimulationError(RuntimeError):
    """Solver state became non-finite."""

    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step


# -------------------- configuration --------------------

@dataclass
class SimulationConfig:
    """Solver constants.  SI units throughout."""

    dt: float = 0.002                 # s
    n_steps: int = 750
    particle_radius: float = 0.025    # m
    cutoff_radius: float = 0.1        # m, neighbor search radius h_r
    kernel_size: float = 0.1          # m, smoothing length h_k
    fluid_density: float = 1000.0     # kg/m^3
    rigid_density: float = 2200.0     # kg/m^3
    viscosity: float = 10.0           # kg/(m s), dynamic
    initial_speed: float = 3.0        # m/s, slab release speed
    gravity: tuple = GRAVITY          # m/s^2
    domain_min: tuple = None          # m; None lets build_domain choose
    domain_max: tuple = None
    density_tolerance: float = 1e-3   # relative to rest density
    divergence_tolerance: float = None  # 1/s; None derives 1e-3 / dt
    max_iterations: int = 100
    min_iterations: int = 2
    stride: int = 10                  # steps between trace snapshots
    deterministic: bool = True
    seed: int = 0

    def __post_init__(self):
        positive = {
            "dt": self.dt,
            "particle_radius": self.particle_radius,
            "cutoff_radius": self.cutoff_radius,
            "kernel_size": self.kernel_size,
            "fluid_density": self.fluid_density,
            "rigid_density": self.rigid_density,
            "density_tolerance": self.density_tolerance,
        }
        for name, value in positive.items():
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        if self.viscosity < 0:
            raise ValueError(f"viscosity must be nonnegative, got {self.viscosity}")
        if self.initial_speed < 0:
            raise ValueError(f"initial_speed must be nonnegative, got {self.initial_speed}")
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be nonnegative, got {self.n_steps}")
        if self.divergence_tolerance is not None and self.divergence_tolerance <= 0:
            raise ValueError("divergence_tolerance must be positive when set")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if not 0 <= self.min_iterations <= self.max_iterations:
            raise ValueError("need 0 <= min_iterations <= max_iterations")
        if (self.domain_min is None) != (self.domain_max is None):
            raise ValueError("domain_min and domain_max must be set together")
        self.gravity = tuple(float(g) for g in self.gravity)
        if len(self.gravity) != 3 or not all(math.isfinite(g) for g in self.gravity):
            raise ValueError(f"gravity must be a finite 3-vector, got {self.gravity}")

    def solver_tolerances(self):
        """(density tol in kg/m^3, divergence tol in 1/s)."""
        rho_tol = self.density_tolerance * self.fluid_density
        div_tol = self.divergence_tolerance
        if div_tol is None:
            div_tol = 1e-3 / self.dt
        return rho_tol, div_tol


def set_worker_count(n: int):
    """Cap numba's parallel workers; results do not depend on this."""
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)


# -------------------- particle state --------------------

class ParticleSystem:
    """Fluid and static rigid particles in one array set, fluid rows first.

    Rigid velocities are pinned to zero and rigid densities to the rest
    density, which lets the solver kernels index any neighbor row
    without branching on kind.
    """

    def __init__(self, positions, velocities, volumes, n_fluid,
                 rest_density=1000.0, viscosity=10.0, gravity=GRAVITY,
                 domain_min=(-1.5, -1.5, -1.5), domain_max=(1.5, 1.5, 1.5)):
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        velocities = np.ascontiguousarray(velocities, dtype=np.float64)
        volumes = np.ascontiguousarray(volumes, dtype=np.float64)
        n = positions.shape[0]
        if positions.shape != (n, 3) or velocities.shape != (n, 3):
            raise ValueError("positions and velocities must both be (n, 3)")
        if volumes.shape != (n,):
            raise ValueError("volumes must be (n,)")
        if not (0 <= n_fluid <= n):
            raise ValueError(f"n_fluid {n_fluid} out of range for {n} particles")
        if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(velocities))):
            raise ValueError("non-finite particle state")
        if np.any(volumes <= 0):
            raise ValueError("volumes must be positive")
        self.positions = positions
        self.velocities = velocities
        self.velocities[n_fluid:] = 0.0   # rigid particles never move
        self.volumes = volumes
        self.n_fluid = int(n_fluid)
        self.rest_density = float(rest_density)
        self.viscosity = float(viscosity)
        self.gravity = np.asarray(gravity, dtype=np.float64).reshape(3)
        self.domain_min = np.asarray(domain_min, dtype=np.float64).reshape(3)
        self.domain_max = np.asarray(domain_max, dtype=np.float64).reshape(3)
        if np.any(self.domain_max <= self.domain_min):
            raise ValueError("domain_max must exceed domain_min on every axis")
        self.densities = np.full(n, self.rest_density)
        self.factors = np.zeros(n)
        self.divergence = np.zeros(n)

    def __len__(self):
        return self.positions.shape[0]

    @property
    def n_rigid(self):
        return len(self) - self.n_fluid

    @property
    def kinds(self):
        """0 for fluid rows, 1 for rigid rows."""
        k = np.zeros(len(self), dtype=np.uint8)
        k[self.n_fluid:] = 1
        return k

    def total_fluid_mass(self):
        return self.rest_density * self.volumes[:self.n_fluid].sum()

    def build_grid(self, cutoff):
        return NeighborGrid(self.positions, cutoff, (self.domain_min, self.domain_max))


# -------------------- solver kernels --------------------

@njit(cache=True, parallel=True)
def _density_and_factor(pos, vol, starts, idx, h, rho0):
    nf = starts.shape[0] - 1
    rho = np.empty(nf)
    alpha = np.empty(nf)
    w0 = w_cubic(0.0, h)
    for i in prange(nf):
        r = rho0 * vol[i] * w0
        sx = 0.0
        sy = 0.0
        sz = 0.0
        s2 = 0.0
        for t in range(starts[i], starts[i + 1]):
            j = idx[t]
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            dz = pos[i, 2] - pos[j, 2]
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            mj = rho0 * vol[j]
            r += mj * w_cubic(d, h)
            c = grad_coef_cubic(d, h)
            px = mj * c * dx
            py = mj * c * dy
            pz = mj * c * dz
            sx += px
            sy += py
            sz += pz
            s2 += px * px + py * py + pz * pz
        rho[i] = r
        denom = sx * sx + sy * sy + sz * sz + s2
        # isolated particles have a degenerate denominator; no pressure
        alpha[i] = r / denom if denom > 1e-6 else 0.0
    return rho, alpha


@njit(cache=True, parallel=True)
def _viscosity_accel(pos, vel, vol, rho, starts, idx, h, rho0, mu):
    nf = starts.shape[0] - 1
    acc = np.zeros((nf, 3))
    eps = 0.01 * h * h
    for i in prange(nf):
        pref = 10.0 * mu / rho[i]
        ax = 0.0
        ay = 0.0
        az = 0.0
        for t in range(starts[i], starts[i + 1]):
            j = idx[t]
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            dz = pos[i, 2] - pos[j, 2]
            r2 = dx * dx + dy * dy + dz * dz
            c = grad_coef_cubic(math.sqrt(r2), h)
            vdotx = ((vel[i, 0] - vel[j, 0]) * dx
                     + (vel[i, 1] - vel[j, 1]) * dy
                     + (vel[i, 2] - vel[j, 2]) * dz)
            lam = pref * (rho0 * vol[j] / rho[j]) * (vdotx / (r2 + eps)) * c
            ax += lam * dx
            ay += lam * dy
            az += lam * dz
        acc[i, 0] = ax
        acc[i, 1] = ay
        acc[i, 2] = az
    return acc


@njit(cache=True, parallel=True)
def _density_rate(pos, vel, vol, starts, idx, h, rho0):
    """Drho/Dt per fluid particle: sum_j m_j (v_i - v_j) . grad W_ij."""
    nf = starts.shape[0] - 1
    rate = np.empty(nf)
    for i in prange(nf):
        s = 0.0
        for t in range(starts[i], starts[i + 1]):
            j = idx[t]
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            dz = pos[i, 2] - pos[j, 2]
            c = grad_coef_cubic(math.sqrt(dx * dx + dy * dy + dz * dz), h)
            s += rho0 * vol[j] * c * ((vel[i, 0] - vel[j, 0]) * dx
                                      + (vel[i, 1] - vel[j, 1]) * dy
                                      + (vel[i, 2] - vel[j, 2]) * dz)
        rate[i] = s
    return rate


@njit(cache=True, parallel=True)
def _apply_stiffness(pos, vel, vol, rho, kappa, starts, idx, h, rho0, dt):
    """v_i -= dt * sum_j m_j (k_i/rho_i + k_j/rho_j) grad W_ij.

    kappa and rho cover all rows; rigid rows carry kappa = 0 so boundary
    neighbors only mirror the fluid particle's own stiffness.
    """
    nf = starts.shape[0] - 1
    for i in prange(nf):
        ki = kappa[i] / rho[i]
        dvx = 0.0
        dvy = 0.0
        dvz = 0.0
        for t in range(starts[i], starts[i + 1]):
            j = idx[t]
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            dz = pos[i, 2] - pos[j, 2]
            c = grad_coef_cubic(math.sqrt(dx * dx + dy * dy + dz * dz), h)
            f = rho0 * vol[j] * (ki + kappa[j] / rho[j]) * c
            dvx += f * dx
            dvy += f * dy
            dvz += f * dz
        vel[i, 0] -= dt * dvx
        vel[i, 1] -= dt * dvy
        vel[i, 2] -= dt * dvz


@njit(cache=True, parallel=True)
def _apply_walls(pos, vel, nf, lo, hi):
    clamped = 0
    for i in prange(nf):
        hit = False
        for a in range(3):
            if pos[i, a] < lo[a]:
                pos[i, a] = lo[a]
                if vel[i, a] < 0.0:
                    vel[i, a] = 0.0   # zero restitution
                hit = True
            elif pos[i, a] > hi[a]:
                pos[i, a] = hi[a]
                if vel[i, a] > 0.0:
                    vel[i, a] = 0.0
                hit = True
        if hit:
            clamped += 1
    return clamped


@njit(cache=True, parallel=True)
def _enforce_rigid_exclusion(pos, vel, starts, idx, nf, excl):
    """Project fluid particles out of rigid exclusion spheres.

    Neighbor rows must cover at least radius excl around each fluid
    particle; rows are only read for rigid entries (j >= nf), so the
    parallel loop writes nothing another iteration reads.
    """
    moved = 0
    margin = excl * (1.0 + 1e-7)
    for i in prange(nf):
        best = -1
        best_d2 = excl * excl
        for t in range(starts[i], starts[i + 1]):
            j = idx[t]
            if j < nf:
                continue
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            dz = pos[i, 2] - pos[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < best_d2:
                best = j
                best_d2 = d2
        if best < 0:
            continue
        dx = pos[i, 0] - pos[best, 0]
        dy = pos[i, 1] - pos[best, 1]
        dz = pos[i, 2] - pos[best, 2]
        d = math.sqrt(dx * dx + dy * dy + dz * dz)
        if d > 0.0:
            ux, uy, uz = dx / d, dy / d, dz / d
        else:
            ux, uy, uz = 0.0, 1.0, 0.0
        pos[i, 0] = pos[best, 0] + margin * ux
        pos[i, 1] = pos[best, 1] + margin * uy
        pos[i, 2] = pos[best, 2] + margin * uz
        vrad = vel[i, 0] * ux + vel[i, 1] * uy + vel[i, 2] * uz
        if vrad < 0.0:
            vel[i, 0] -= vrad * ux
            vel[i, 1] -= vrad * uy
            vel[i, 2] -= vrad * uz
        moved += 1
    return moved


# -------------------- stepping --------------------

@dataclass
class StepReport:
    step: int
    divergence_iterations: int
    divergence_error: float        # 1/s, post-solve mean |div v|
    density_iterations: int
    density_error: float           # kg/m^3, post-solve mean positive deviation
    min_density: float
    max_density: float
    mean_density_deviation: float  # kg/m^3, mean(max(rho - rho0, 0))
    clamped: int
    rigid_contacts: int = 0
    warnings: list = field(default_factory=list)


def _mean_abs(x):
    return float(np.abs(x).mean()) if x.size else 0.0


def dfsph_step(system: ParticleSystem, grid: NeighborGrid, cfg: SimulationConfig, step=0):
    """Advance the system by one step in place.

    Returns (system, grid, report); the grid is rebuilt after advection
    and remains valid for the returned positions.
    """
    nf = system.n_fluid
    pos, vel, vol = system.positions, system.velocities, system.volumes
    rho0 = system.rest_density
    h = cfg.kernel_size
    dt = cfg.dt
    rho_tol, div_tol = cfg.solver_tolerances()
    kappa = np.zeros(len(system))
    rho_all = np.full(len(system), rho0)
    warnings = []

    # (1) densities and stiffness factors at current positions
    starts, idx = grid.query_csr(nf)
    rho, alpha = _density_and_factor(pos, vol, starts, idx, h, rho0)
    rho_all[:nf] = rho

    # (2) non-pressure forces: viscosity + gravity
    if cfg.viscosity > 0 and nf:
        vel[:nf] += dt * _viscosity_accel(pos, vel, vol, rho_all, starts, idx, h, rho0, cfg.viscosity)
    vel[:nf] += dt * system.gravity

    # (3) divergence-free solve: drive mean |div v| under tolerance.
    # The 0.5 under-relaxation compensates the symmetric neighbor terms,
    # which would otherwise double each particle's intended correction
    # (an isolated pair oscillates undamped at full strength).
    rate = _density_rate(pos, vel, vol, starts, idx, h, rho0)
    div_err = _mean_abs(rate) / rho0
    div_iters = 0
    while div_iters < cfg.max_iterations and (div_iters < cfg.min_iterations or div_err > div_tol):
        kappa[:nf] = 0.5 * rate * alpha / dt
        _apply_stiffness(pos, vel, vol, rho_all, kappa, starts, idx, h, rho0, dt)
        rate = _density_rate(pos, vel, vol, starts, idx, h, rho0)
        div_err = _mean_abs(rate) / rho0
        div_iters += 1
    if div_err > div_tol:
        warnings.append(f"divergence solver at {div_err:.3e} 1/s after {div_iters} iterations")

    # (4) advect, (5) rebuild neighbor structure
    pos[:nf] += dt * vel[:nf]
    if not np.all(np.isfinite(pos[:nf])):
        raise SimulationError(step, "non-finite particle state")
    grid = system.build_grid(cfg.cutoff_radius)
    starts, idx = grid.query_csr(nf)

    # (6) constant-density solve at the new positions
    rho, alpha = _density_and_factor(pos, vol, starts, idx, h, rho0)
    rho_all[:nf] = rho
    system.densities[:nf] = rho
    system.factors[:nf] = alpha
    mean_dev = float(np.maximum(rho - rho0, 0.0).mean()) if nf else 0.0
    rate = _density_rate(pos, vel, vol, starts, idx, h, rho0)
    dev = np.maximum(rho + dt * rate - rho0, 0.0)
    rho_err = float(dev.mean()) if nf else 0.0
    rho_iters = 0
    while rho_iters < cfg.max_iterations and (rho_iters < cfg.min_iterations or rho_err > rho_tol):
        kappa[:nf] = 0.5 * dev * alpha / (dt * dt)
        _apply_stiffness(pos, vel, vol, rho_all, kappa, starts, idx, h, rho0, dt)
        rate = _density_rate(pos, vel, vol, starts, idx, h, rho0)
        dev = np.maximum(rho + dt * rate - rho0, 0.0)
        rho_err = float(dev.mean()) if nf else 0.0
        rho_iters += 1
    if rho_err > rho_tol:
        warnings.append(f"density solver at {rho_err:.3e} kg/m^3 after {rho_iters} iterations")

    # (7) boundary enforcement: outer box, then rigid exclusion radii.
    # Pressure alone does not guarantee the exclusion distance under hard
    # impacts, so overlaps left by the solve are projected out here.  The
    # neighbor rows are from the stage-5 build; positions have not moved
    # since except by the wall clamp, which stays well inside the search
    # margin (cutoff 4x the exclusion radius).
    clamped = _apply_walls(pos, vel, nf, system.domain_min, system.domain_max)
    contacts = 0
    if system.n_rigid and nf:
        excl = cfg.particle_radius
        for _ in range(4):
            moved = _enforce_rigid_exclusion(pos, vel, starts, idx, nf, excl)
            if not contacts:
                contacts = moved
            if moved == 0:
                break
            clamped = max(clamped, _apply_walls(pos, vel, nf, system.domain_min, system.domain_max))
    if clamped or contacts:
        grid = system.build_grid(cfg.cutoff_radius)

    if not (np.all(np.isfinite(pos[:nf])) and np.all(np.isfinite(vel[:nf]))):
        raise SimulationError(step, "non-finite particle state")

    report = StepReport(
        step=step,
        divergence_iterations=div_iters,
        divergence_error=div_err,
        density_iterations=rho_iters,
        density_error=rho_err,
        min_density=float(rho.min()) if nf else rho0,
        max_density=float(rho.max()) if nf else rho0,
        mean_density_deviation=mean_dev,
        clamped=int(clamped),
        rigid_contacts=int(contacts),
        warnings=warnings,
    )
    return system, grid, report


# -------------------- rollout --------------------

@dataclass
class Snapshot:
    """Fluid state at one recorded step (rigid rows never change)."""
    step: int
    positions: np.ndarray
    velocities: np.ndarray
    divergence: np.ndarray


@dataclass
class RolloutSummary:
    steps: int
    n_fluid: int
    n_rigid: int
    wall_time: float
    min_density: float
    max_density: float
    escaped: int
    non_converged_steps: int
    domain_min: tuple
    domain_max: tuple


@dataclass
class RolloutTrace:
    snapshots: list
    reports: list
    summary: RolloutSummary
    rigid_positions: np.ndarray
    rigid_volumes: np.ndarray


def run_rollout(system: ParticleSystem, cfg: SimulationConfig, stride=None) -> RolloutTrace:
    """Run cfg.n_steps DFSPH steps, recording a snapshot every `stride` steps.

    The trace always contains the initial state; snapshots carry the
    divergence field evaluated at record time.
    """
    if stride is None:
        stride = cfg.stride
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    nf = system.n_fluid
    t0 = time.perf_counter()
    grid = system.build_grid(cfg.cutoff_radius)

    def record(step):
        dfield = particle_divergence(system, grid, step=step)
        system.divergence[:] = dfield.values
        return Snapshot(
            step=step,
            positions=system.positions[:nf].copy(),
            velocities=system.velocities[:nf].copy(),
            divergence=dfield.values[:nf].copy(),
        )

    snapshots = [record(0)]
    reports = []
    min_rho = math.inf
    max_rho = -math.inf
    bad = 0
    for step in range(1, cfg.n_steps + 1):
        system, grid, rep = dfsph_step(system, grid, cfg, step=step)
        reports.append(rep)
        min_rho = min(min_rho, rep.min_density)
        max_rho = max(max_rho, rep.max_density)
        if rep.warnings:
            bad += 1
            if bad == 1:
                log.warning("step %d: %s", step, "; ".join(rep.warnings))
        if step % stride == 0:
            snapshots.append(record(step))

    pos = system.positions[:nf]
    escaped = int(np.any((pos < system.domain_min) | (pos > system.domain_max), axis=1).sum())
    if bad:
        log.warning("%d of %d steps finished without full solver convergence", bad, cfg.n_steps)
    summary = RolloutSummary(
        steps=cfg.n_steps,
        n_fluid=nf,
        n_rigid=system.n_rigid,
        wall_time=time.perf_counter() - t0,
        min_density=min_rho if reports else system.rest_density,
        max_density=max_rho if reports else system.rest_density,
        escaped=escaped,
        non_converged_steps=bad,
        domain_min=tuple(system.domain_min),
        domain_max=tuple(system.domain_max),
    )
    return RolloutTrace(
        snapshots=snapshots,
        reports=reports,
        summary=summary,
        rigid_positions=system.positions[nf:].copy(),
        rigid_volumes=system.volumes[nf:].copy(),
    )


# -------------------- similarity numbers --------------------

def cfl_timestep(speed: float, base_dt: float = 0.002, base_speed: float = 3.0) -> float:
    """Timestep keeping the Courant number of the base setting."""
    if speed <= 0:
        raise ValueError(f"speed must be positive, got {speed}")
    return base_dt * base_speed / speed


def reynolds_number(density: float, speed: float, length: float, viscosity: float) -> float:
    """Re = rho U L / mu with L the characteristic (domain) size."""
    for name, v in (("density", density), ("speed", speed),
                    ("length", length), ("viscosity", viscosity)):
        if v <= 0:
            raise ValueError(f"{name} must be positive, got {v}")
    return density * speed * length / viscosity

"""Gaussian scene model, ingestion, and conversion to SPH particles.

A scene is a set of anisotropic 3D Gaussians (center, per-axis scale,
rotation, opacity).  Sufficiently opaque Gaussians are voxelized into
rigid boundary particles on a regular lattice; a fluid slab is then
seeded next to the rigid geometry to form a complete particle system.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit, prange
from scipy.special import expit

from .kernels import w_cubic
from .neighbors import NeighborGrid
from .sph import ParticleSystem, SimulationConfig

# travel directions for the fluid slab; the bottom-up release (+y) is
# deliberately unsupported
CANONICAL_DIRECTIONS = ("+x", "-x", "+z", "-z", "-y")

_DIRECTION_VECTORS = {
    "+x": np.array([1.0, 0.0, 0.0]),
    "-x": np.array([-1.0, 0.0, 0.0]),
    "+z": np.array([0.0, 0.0, 1.0]),
    "-z": np.array([0.0, 0.0, -1.0]),
    "-y": np.array([0.0, -1.0, 0.0]),
}

_DIRECTION_ALIASES = {"x": "+x", "z": "+z", "y": "-y"}


def normalize_direction(direction: str) -> str:
    d = str(direction).strip().lower()
    d = _DIRECTION_ALIASES.get(d, d)
    if d in ("+y",):
        raise ValueError("bottom-up release (+y) is not supported")
    if d not in CANONICAL_DIRECTIONS:
        raise ValueError(
            f"unknown direction {direction!r}; expected one of {CANONICAL_DIRECTIONS}"
        )
    return d


def direction_vector(direction: str) -> np.ndarray:
    """Unit travel vector for a canonical direction label."""
    return _DIRECTION_VECTORS[normalize_direction(direction)].copy()


# -------------------- Gaussians --------------------

def _unit_quaternion(q, where=""):
    q = np.asarray(q, dtype=np.float64).reshape(-1, 4)
    norm = np.linalg.norm(q, axis=1)
    off = np.abs(norm - 1.0)
    if np.any(off > 1e-6):
        i = int(np.argmax(off))
        raise ValueError(f"{where}rotation quaternion not unit-norm (|q| = {norm[i]:.8f})")
    return q / norm[:, None]


@dataclass
class Gaussian:
    """One anisotropic Gaussian: center, principal semi-axes, rotation (w,x,y,z), opacity."""

    center: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        self.rotation = _unit_quaternion(self.rotation).reshape(4)
        self.opacity = float(self.opacity)
        if not np.all(np.isfinite(self.center)):
            raise ValueError("center is not finite")
        if not np.all(self.scale > 0) or not np.all(np.isfinite(self.scale)):
            raise ValueError("scales must be positive and finite")
        if not 0.0 <= self.opacity <= 1.0:
            raise ValueError(f"opacity must be in [0, 1], got {self.opacity}")

    @property
    def radius(self) -> float:
        """Largest principal semi-axis r_g."""
        return float(self.scale.max())

    @property
    def trace(self) -> float:
        """tr(Sigma) = sum of squared scales (rotation-invariant)."""
        return float((self.scale ** 2).sum())

    def rotation_matrix(self) -> np.ndarray:
        return _quat_to_matrix(self.rotation[None, :])[0]

    def covariance(self) -> np.ndarray:
        r = self.rotation_matrix()
        return r @ np.diag(self.scale ** 2) @ r.T


def _quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


class GaussianScene:
    """Array-of-structs view over a non-empty set of Gaussians."""

    def __init__(self, centers, scales, rotations, opacities):
        self.centers = np.ascontiguousarray(centers, dtype=np.float64)
        self.scales = np.ascontiguousarray(scales, dtype=np.float64)
        self.opacities = np.ascontiguousarray(opacities, dtype=np.float64)
        n = self.centers.shape[0]
        if n == 0:
            raise ValueError("scene must contain at least one Gaussian")
        if self.centers.shape != (n, 3) or self.scales.shape != (n, 3):
            raise ValueError("centers and scales must be (n, 3)")
        if self.opacities.shape != (n,):
            raise ValueError("opacities must be (n,)")
        if not np.all(np.isfinite(self.centers)):
            raise ValueError("centers are not finite")
        if not np.all(self.scales > 0) or not np.all(np.isfinite(self.scales)):
            raise ValueError("scales must be positive and finite")
        if np.any(self.opacities < 0) or np.any(self.opacities > 1):
            raise ValueError("opacities must lie in [0, 1]")
        self.rotations = np.ascontiguousarray(
            _unit_quaternion(rotations, where="scene "), dtype=np.float64
        )
        if self.rotations.shape != (n, 4):
            raise ValueError("rotations must be (n, 4)")

    @classmethod
    def from_gaussians(cls, gaussians):
        gaussians = list(gaussians)
        if not gaussians:
            raise ValueError("scene must contain at least one Gaussian")
        return cls(
            centers=np.stack([g.center for g in gaussians]),
            scales=np.stack([g.scale for g in gaussians]),
            rotations=np.stack([g.rotation for g in gaussians]),
            opacities=np.array([g.opacity for g in gaussians]),
        )

    def __len__(self):
        return self.centers.shape[0]

    def __getitem__(self, i) -> Gaussian:
        return Gaussian(self.centers[i], self.scales[i], self.rotations[i],
                        self.opacities[i])

    @property
    def radii(self) -> np.ndarray:
        """r_g: largest principal semi-axis per Gaussian."""
        return self.scales.max(axis=1)

    @property
    def traces(self) -> np.ndarray:
        """s_g = tr(Sigma) per Gaussian."""
        return (self.scales ** 2).sum(axis=1)

    @property
    def aabb(self):
        return self.centers.min(axis=0), self.centers.max(axis=0)

    def rotation_matrices(self) -> np.ndarray:
        return _quat_to_matrix(self.rotations)

    def covariances(self) -> np.ndarray:
        r = self.rotation_matrices()
        s2 = self.scales ** 2
        return np.einsum("nij,nj,nkj->nik", r, s2, r)


# -------------------- file formats --------------------

_RECORD_FIELDS = {"center": 3, "scale": 3, "rotation": 4, "opacity": None}


def load_scene(path) -> GaussianScene:
    """Load a scene from canonical JSON or a 3DGS binary PLY export."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"scene file not found: {p}")
    suffix = p.suffix.lower()
    if suffix == ".json":
        return _load_json(p)
    if suffix == ".ply":
        return _load_ply(p)
    raise ValueError(f"unsupported scene format {suffix!r} (expected .json or .ply)")


def _load_json(path) -> GaussianScene:
    with open(path) as f:
        data = json.load(f)
    if not isinstance(data, list):
        raise ValueError(f"{path}: top level must be an array of Gaussian records")
    if not data:
        raise ValueError(f"{path}: scene contains zero Gaussians")
    rows = {"center": [], "scale": [], "rotation": [], "opacity": []}
    for i, rec in enumerate(data):
        if not isinstance(rec, dict):
            raise ValueError(f"{path}: record {i} is not an object")
        for name, width in _RECORD_FIELDS.items():
            if name not in rec:
                raise ValueError(f"{path}: record {i} is missing field '{name}'")
            value = rec[name]
            try:
                if width is None:
                    value = float(value)
                else:
                    value = np.asarray(value, dtype=np.float64)
                    if value.shape != (width,):
                        raise ValueError
                    if not np.all(np.isfinite(value)):
                        raise ValueError
            except (TypeError, ValueError):
                raise ValueError(
                    f"{path}: record {i} field '{name}' is malformed: {rec[name]!r}"
                ) from None
            rows[name].append(value)
    try:
        return GaussianScene(
            centers=np.stack(rows["center"]),
            scales=np.stack(rows["scale"]),
            rotations=np.stack(rows["rotation"]),
            opacities=np.array(rows["opacity"]),
        )
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from None


def save_scene(path, scene: GaussianScene):
    """Write the canonical JSON representation (lossless float round-trip)."""
    records = [
        {
            "center": scene.centers[i].tolist(),
            "scale": scene.scales[i].tolist(),
            "rotation": scene.rotations[i].tolist(),
            "opacity": float(scene.opacities[i]),
        }
        for i in range(len(scene))
    ]
    with open(path, "w") as f:
        json.dump(records, f, indent=1)


_PLY_DTYPES = {
    "char": "i1", "uchar": "u1", "short": "i2", "ushort": "u2",
    "int": "i4", "uint": "u4", "float": "f4", "double": "f8",
    "int8": "i1", "uint8": "u1", "int16": "i2", "uint16": "u2",
    "int32": "i4", "uint32": "u4", "float32": "f4", "float64": "f8",
}

_PLY_REQUIRED = ("x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2",
                 "rot_0", "rot_1", "rot_2", "rot_3")


def _load_ply(path) -> GaussianScene:
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise ValueError(f"{path}: not a PLY file")
        fmt = f.readline().split()
        if fmt[:2] != [b"format", b"binary_little_endian"]:
            raise ValueError(f"{path}: only binary_little_endian PLY is supported")
        count = None
        props = []
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: truncated header")
            tokens = line.split()
            if not tokens or tokens[0] == b"comment":
                continue
            if tokens[0] == b"end_header":
                break
            if tokens[0] == b"element":
                if count is not None:
                    raise ValueError(f"{path}: only a single vertex element is supported")
                if tokens[1] != b"vertex":
                    raise ValueError(f"{path}: first element must be 'vertex'")
                count = int(tokens[2])
            elif tokens[0] == b"property":
                kind = tokens[1].decode()
                if kind == "list":
                    raise ValueError(f"{path}: list properties are not supported")
                if kind not in _PLY_DTYPES:
                    raise ValueError(f"{path}: unknown property type '{kind}'")
                props.append((tokens[2].decode(), "<" + _PLY_DTYPES[kind]))
        if count is None:
            raise ValueError(f"{path}: missing vertex element")
        if count == 0:
            raise ValueError(f"{path}: scene contains zero Gaussians")
        names = [n for n, _ in props]
        for need in _PLY_REQUIRED:
            if need not in names:
                raise ValueError(f"{path}: missing property '{need}'")
        dtype = np.dtype(props)
        raw = f.read(count * dtype.itemsize)
        if len(raw) < count * dtype.itemsize:
            raise ValueError(f"{path}: truncated vertex data")
        data = np.frombuffer(raw, dtype=dtype, count=count)
    centers = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    # 3DGS exports store log-scales and opacity logits
    scales = np.exp(np.stack([data["scale_0"], data["scale_1"], data["scale_2"]],
                             axis=1).astype(np.float64))
    opacities = expit(data["opacity"].astype(np.float64))
    quats = np.stack([data["rot_0"], data["rot_1"], data["rot_2"], data["rot_3"]],
                     axis=1).astype(np.float64)
    norms = np.linalg.norm(quats, axis=1)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        i = int(np.argmin(np.where(np.isfinite(norms), norms, -1.0)))
        raise ValueError(f"{path}: record {i} field 'rotation' is degenerate")
    quats /= norms[:, None]
    try:
        return GaussianScene(centers, scales, quats, opacities)
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from None


# -------------------- voxelization --------------------

@dataclass
class RigidParticleSet:
    """Static boundary particles sampled from the opaque Gaussians."""

    positions: np.ndarray   # (m, 3)
    volumes: np.ndarray     # (m,) boundary pseudo-volumes V_b
    source: np.ndarray      # (m,) index of the nearest contributing Gaussian
    rigid_density: float = 2200.0

    def __len__(self):
        return self.positions.shape[0]

    @property
    def aabb(self):
        if len(self) == 0:
            raise ValueError("empty rigid set has no bounding box")
        return self.positions.min(axis=0), self.positions.max(axis=0)

    @classmethod
    def empty(cls, rigid_density=2200.0):
        return cls(positions=np.zeros((0, 3)), volumes=np.zeros(0),
                   source=np.zeros(0, dtype=np.int64), rigid_density=rigid_density)


@njit(cache=True, parallel=True)
def _inverse_kernel_sums(pos, starts, idx, h):
    n = starts.shape[0] - 1
    out = np.empty(n)
    w0 = w_cubic(0.0, h)
    for i in prange(n):
        s = w0   # self contribution keeps isolated particles finite
        for t in range(starts[i], starts[i + 1]):
            j = idx[t]
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            dz = pos[i, 2] - pos[j, 2]
            s += w_cubic(math.sqrt(dx * dx + dy * dy + dz * dz), h)
        out[i] = 1.0 / s
    return out


def voxelize(scene: GaussianScene, opacity_threshold: float = 0.3,
             spacing: float = 0.05, n_sigma: float = 3.0,
             kernel_size: float = 0.1, rigid_density: float = 2200.0) -> RigidParticleSet:
    """Sample rigid particles on a lattice inside the opaque Gaussians.

    A lattice point is kept when at least one Gaussian with opacity >=
    opacity_threshold contains it within Mahalanobis distance n_sigma;
    it records the contributing Gaussian with the nearest center.
    Pseudo-volumes are inverse kernel sums over the rigid neighborhood.
    """
    if spacing <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    if not 0.0 <= opacity_threshold <= 1.0:
        raise ValueError(f"opacity threshold must be in [0, 1], got {opacity_threshold}")
    if n_sigma <= 0:
        raise ValueError(f"n_sigma must be positive, got {n_sigma}")
    alive = np.where(scene.opacities >= opacity_threshold)[0]
    if alive.size == 0:
        raise ValueError(
            f"scene fully transparent: no Gaussian reaches opacity {opacity_threshold}"
        )
    radii = scene.radii
    pad = n_sigma * radii[alive].max()
    lo, hi = scene.aabb
    lo = lo - pad
    hi = hi + pad
    counts = np.maximum(np.ceil((hi - lo) / spacing).astype(np.int64), 1)
    total = int(counts.prod())
    if total > 50_000_000:
        raise ValueError(
            f"voxelization lattice of {total} points is too large; increase spacing"
        )
    # center the lattice in the padded box so symmetric geometry samples
    # symmetrically
    origin = lo + 0.5 * (hi - lo - counts * spacing)
    axes = [origin[a] + (np.arange(counts[a]) + 0.5) * spacing for a in range(3)]
    kept = np.zeros(total, dtype=bool)
    best_d2 = np.full(total, np.inf)
    best_src = np.full(total, -1, dtype=np.int64)
    rot = scene.rotation_matrices()
    ny, nz = int(counts[1]), int(counts[2])
    for g in alive:
        center = scene.centers[g]
        reach = n_sigma * radii[g]
        wins = []
        for a in range(3):
            i0 = max(0, int(np.ceil((center[a] - reach - origin[a]) / spacing - 0.5)))
            i1 = min(int(counts[a]) - 1, int(np.floor((center[a] + reach - origin[a]) / spacing - 0.5)))
            if i1 < i0:
                wins = None
                break
            wins.append(np.arange(i0, i1 + 1))
        if wins is None:
            continue
        pts = np.stack(np.meshgrid(axes[0][wins[0]], axes[1][wins[1]],
                                   axes[2][wins[2]], indexing="ij"), axis=-1).reshape(-1, 3)
        flat = ((wins[0][:, None, None] * ny + wins[1][None, :, None]) * nz
                + wins[2][None, None, :]).reshape(-1)
        diff = pts - center
        local = diff @ rot[g]
        m2 = ((local / scene.scales[g]) ** 2).sum(axis=1)
        inside = m2 <= n_sigma * n_sigma
        if not inside.any():
            continue
        flat = flat[inside]
        d2 = (diff[inside] ** 2).sum(axis=1)
        kept[flat] = True
        closer = d2 < best_d2[flat]
        upd = flat[closer]
        best_d2[upd] = d2[closer]
        best_src[upd] = g
    keep_idx = np.nonzero(kept)[0]
    if keep_idx.size == 0:
        raise ValueError("voxelization produced no rigid particles; decrease spacing")
    ix, rem = np.divmod(keep_idx, ny * nz)
    iy, iz = np.divmod(rem, nz)
    positions = np.stack([axes[0][ix], axes[1][iy], axes[2][iz]], axis=1)
    grid = NeighborGrid(positions, kernel_size, (lo, hi))
    starts, idx = grid.query_csr()
    volumes = _inverse_kernel_sums(positions, starts, idx, kernel_size)
    return RigidParticleSet(
        positions=positions,
        volumes=volumes,
        source=best_src[keep_idx],
        rigid_density=float(rigid_density),
    )


# -------------------- domain construction --------------------

@dataclass
class FluidSlabSpec:
    """Fluid release slab: travels along `direction` at `speed`.

    The slab is placed on the side the flow comes from: offset by
    `padding` from the rigid bounding box face it will travel towards,
    spanning the box in the two orthogonal axes.
    """

    direction: str = "-x"
    thickness: float = 0.3
    padding: float = 0.1    # two particle diameters at the default radius
    speed: float = 3.0

    def __post_init__(self):
        self.direction = normalize_direction(self.direction)
        if self.thickness <= 0:
            raise ValueError(f"thickness must be positive, got {self.thickness}")
        if self.padding < 0:
            raise ValueError(f"padding must be nonnegative, got {self.padding}")
        if self.speed < 0:
            raise ValueError(f"speed must be nonnegative, got {self.speed}")

    @property
    def vector(self) -> np.ndarray:
        return direction_vector(self.direction)


def build_domain(rigid: RigidParticleSet, slab: FluidSlabSpec,
                 cfg: SimulationConfig, reference_aabb=None) -> ParticleSystem:
    """Seed the fluid slab next to the rigid set inside a closed domain.

    With an empty rigid set, `reference_aabb` (lo, hi) stands in for the
    rigid bounding box so obstacle and empty-domain runs share identical
    flow geometry.
    """
    spacing = 2.0 * cfg.particle_radius
    if len(rigid):
        r_lo, r_hi = rigid.aabb
    elif reference_aabb is not None:
        r_lo = np.asarray(reference_aabb[0], dtype=np.float64).reshape(3)
        r_hi = np.asarray(reference_aabb[1], dtype=np.float64).reshape(3)
    else:
        raise ValueError("empty rigid set requires reference_aabb")

    travel = slab.vector
    axis = int(np.argmax(np.abs(travel)))
    slab_lo = r_lo.copy()
    slab_hi = r_hi.copy()
    if travel[axis] < 0:
        slab_lo[axis] = r_hi[axis] + slab.padding
        slab_hi[axis] = slab_lo[axis] + slab.thickness
    else:
        slab_hi[axis] = r_lo[axis] - slab.padding
        slab_lo[axis] = slab_hi[axis] - slab.thickness

    if cfg.domain_min is not None:
        d_lo = np.asarray(cfg.domain_min, dtype=np.float64).reshape(3)
        d_hi = np.asarray(cfg.domain_max, dtype=np.float64).reshape(3)
        if np.any(slab_lo < d_lo) or np.any(slab_hi > d_hi):
            raise ValueError(
                f"slab [{slab_lo}, {slab_hi}] falls outside the configured domain"
            )
    else:
        pad = 0.10 * (r_hi - r_lo)
        d_lo = np.minimum(r_lo - pad, slab_lo)
        d_hi = np.maximum(r_hi + pad, slab_hi)

    extent = slab_hi - slab_lo
    n_axis = np.floor(extent / spacing + 1e-9).astype(np.int64)
    if n_axis[axis] < 1:
        raise ValueError(
            f"slab thickness {slab.thickness} admits no particle at spacing {spacing}"
        )
    n_axis = np.maximum(n_axis, 1)
    # lattice centered inside the slab box on every axis
    offsets = [slab_lo[a] + 0.5 * (extent[a] - n_axis[a] * spacing)
               + (np.arange(n_axis[a]) + 0.5) * spacing for a in range(3)]
    fx, fy, fz = np.meshgrid(*offsets, indexing="ij")
    fluid_pos = np.stack([fx.ravel(), fy.ravel(), fz.ravel()], axis=1)
    nf = fluid_pos.shape[0]

    positions = np.concatenate([fluid_pos, rigid.positions], axis=0)
    velocities = np.zeros_like(positions)
    velocities[:nf] = slab.speed * travel
    volumes = np.concatenate([np.full(nf, spacing ** 3), rigid.volumes])
    return ParticleSystem(
        positions=positions,
        velocities=velocities,
        volumes=volumes,
        n_fluid=nf,
        rest_density=cfg.fluid_density,
        viscosity=cfg.viscosity,
        gravity=cfg.gravity,
        domain_min=d_lo,
        domain_max=d_hi,
    )

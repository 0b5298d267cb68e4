"""Pinhole views over Gaussian scenes: projection, visibility, and the
divergence/count view scores used to rank candidate poses.

Visibility is decided on a coarse occlusion buffer: Gaussians are
splatted front-to-back as opacity discs onto an 8x-downsampled image,
and a Gaussian counts as visible while any cell it covers is not yet
saturated.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SIGMA_EXTENT = 3.0        # screen radius covers the 3-sigma ellipse
OCCLUSION_DOWNSAMPLE = 8
SATURATION = 0.99


@dataclass
class CameraView:
    """World-to-camera pose [R | t] with pinhole intrinsics (pixels)."""

    rotation: np.ndarray      # (3, 3)
    translation: np.ndarray   # (3,)
    focal: float
    width: int
    height: int
    view_id: str = ""

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.focal = float(self.focal)
        self.width = int(self.width)
        self.height = int(self.height)
        self.view_id = str(self.view_id)
        if not np.all(np.isfinite(self.rotation)) or not np.all(np.isfinite(self.translation)):
            raise ValueError("camera pose is not finite")
        if np.abs(self.rotation @ self.rotation.T - np.eye(3)).max() > 1e-6:
            raise ValueError("rotation is not orthonormal")
        if self.focal <= 0:
            raise ValueError(f"focal length must be positive, got {self.focal}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def camera_coords(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return points @ self.rotation.T + self.translation

    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation


def project(view: CameraView, point):
    """Pixel coordinates and depth, or None when at/behind the camera."""
    xc = view.camera_coords(point)[0]
    z = xc[2]
    if z <= 0.0:
        return None
    px = view.focal * xc[0] / z + view.width / 2.0
    py = view.focal * xc[1] / z + view.height / 2.0
    return np.array([px, py]), float(z)


def screen_radius(view: CameraView, gaussian) -> float:
    """R_g = f * 3 * r_g / z_c, clamped to the image diagonal."""
    center = getattr(gaussian, "center", None)
    radius = getattr(gaussian, "radius", None)
    if center is None:
        center, radius = gaussian
    z = float(view.camera_coords(center)[0, 2])
    if z <= 0.0:
        raise ValueError("Gaussian is behind the camera")
    return min(view.focal * SIGMA_EXTENT * float(radius) / z, view.diagonal)


def _project_scene(view, scene):
    """(pixels, depths, radii) for every Gaussian; z <= 0 rows are garbage."""
    xc = view.camera_coords(scene.centers)
    z = xc[:, 2]
    safe = np.where(z > 0, z, 1.0)
    px = view.focal * xc[:, 0] / safe + view.width / 2.0
    py = view.focal * xc[:, 1] / safe + view.height / 2.0
    radii = np.minimum(view.focal * SIGMA_EXTENT * scene.radii / safe, view.diagonal)
    return np.stack([px, py], axis=1), z, radii


def visible_set(view: CameraView, scene) -> np.ndarray:
    """Indices of Gaussians visible from the view, ascending.

    A Gaussian is visible when it lies in front of the camera, its
    screen disc meets the image rectangle, and some buffer cell it
    covers is below the saturation opacity when it is splatted in
    front-to-back order.
    """
    pix, z, radii = _project_scene(view, scene)
    w, h = view.width, view.height
    cand = (z > 0.0) \
        & (pix[:, 0] + radii > 0) & (pix[:, 0] - radii < w) \
        & (pix[:, 1] + radii > 0) & (pix[:, 1] - radii < h)
    order = np.lexsort((np.arange(len(scene)), z))
    order = order[cand[order]]
    if order.size == 0:
        return np.zeros(0, dtype=np.int64)

    ds = OCCLUSION_DOWNSAMPLE
    nbx = max(1, -(-w // ds))
    nby = max(1, -(-h // ds))
    cx = (np.arange(nbx) + 0.5) * ds
    cy = (np.arange(nby) + 0.5) * ds
    occ = np.zeros((nby, nbx))
    visible = []
    for g in order:
        px, py = pix[g]
        r = radii[g]
        x0 = min(max(int((px - r) // ds), 0), nbx - 1)
        x1 = min(max(int((px + r) // ds), 0), nbx - 1) + 1
        y0 = min(max(int((py - r) // ds), 0), nby - 1)
        y1 = min(max(int((py + r) // ds), 0), nby - 1) + 1
        mask = ((cx[x0:x1][None, :] - px) ** 2
                + (cy[y0:y1][:, None] - py) ** 2) <= r * r
        if not mask.any():
            # disc smaller than a cell: use the cell holding its center
            x0 = min(max(int(px // ds), 0), nbx - 1)
            y0 = min(max(int(py // ds), 0), nby - 1)
            x1, y1 = x0 + 1, y0 + 1
            mask = np.ones((1, 1), dtype=bool)
        block = occ[y0:y1, x0:x1]
        if np.any(block[mask] < SATURATION):
            visible.append(g)
        block[mask] += (1.0 - block[mask]) * scene.opacities[g]
    return np.array(sorted(visible), dtype=np.int64)


@dataclass
class ViewScore:
    """Scores of one candidate pose against per-Gaussian aggregates."""

    view_id: str
    visible: np.ndarray            # Gaussian indices, ascending
    radii: np.ndarray              # screen radius per visible Gaussian (px)
    weights: np.ndarray            # soft area weight per visible Gaussian
    divergence_score: float = 0.0  # S(T)
    count_score: float = 0.0       # C(T)
    normalized: float = 0.0        # S(T) / |visible|, 0 when empty

    @property
    def n_visible(self) -> int:
        return int(self.visible.size)


def score_view(view: CameraView, scene, d_g=None, counts=None,
               unweighted: bool = False) -> ViewScore:
    """Evaluate S(T) and C(T) for one pose with a single visibility pass."""
    vis = visible_set(view, scene)
    if vis.size:
        _, z, radii = _project_scene(view, scene)
        radii = radii[vis]
        if unweighted:
            weights = np.ones(vis.size)
        else:
            weights = np.clip(math.pi * radii ** 2 / (view.width * view.height), 0.0, 1.0)
    else:
        radii = np.zeros(0)
        weights = np.zeros(0)
    score = ViewScore(view_id=view.view_id, visible=vis, radii=radii, weights=weights)
    if d_g is not None and vis.size:
        d_g = np.asarray(d_g, dtype=np.float64)
        score.divergence_score = float(weights @ d_g[vis])
        score.normalized = score.divergence_score / vis.size
    if counts is not None and vis.size:
        counts = np.asarray(counts, dtype=np.float64)
        score.count_score = float(weights @ counts[vis])
    return score


def view_divergence_score(view: CameraView, scene, d_g, unweighted=False) -> float:
    """S(T) = sum over visible Gaussians of w_g * D_g."""
    return score_view(view, scene, d_g=d_g, unweighted=unweighted).divergence_score


def view_count_score(view: CameraView, scene, counts, unweighted=False) -> float:
    """C(T) = sum over visible Gaussians of w_g * |P_g|."""
    return score_view(view, scene, counts=counts, unweighted=unweighted).count_score


# -------------------- pose files --------------------

def load_views(path, width=800, height=800) -> list:
    """Read camera poses from a NeRF-style transforms JSON.

    The file supplies camera_angle_x and per-frame camera-to-world
    matrices; focal length is 0.5*W/tan(0.5*camera_angle_x).  Frame
    matrices follow the convention of looking down -z with +y up, so
    the y/z axes are flipped before inverting to world-to-camera.
    Per-frame or top-level "w"/"h" fields override the arguments.
    """
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"pose file not found: {p}")
    with open(p) as f:
        data = json.load(f)
    if "camera_angle_x" not in data:
        raise ValueError(f"{p}: missing camera_angle_x")
    angle = float(data["camera_angle_x"])
    if not 0.0 < angle < math.pi:
        raise ValueError(f"{p}: camera_angle_x must be in (0, pi), got {angle}")
    frames = data.get("frames")
    if not frames:
        raise ValueError(f"{p}: no frames")
    width = int(data.get("w", width))
    height = int(data.get("h", height))
    views = []
    for i, frame in enumerate(frames):
        if "transform_matrix" not in frame:
            raise ValueError(f"{p}: frame {i} is missing transform_matrix")
        c2w = np.asarray(frame["transform_matrix"], dtype=np.float64)
        if c2w.shape != (4, 4):
            raise ValueError(f"{p}: frame {i} transform_matrix is not 4x4")
        c2w = c2w.copy()
        c2w[:3, 1:3] *= -1.0   # flip to looking down +z with +y down
        r = c2w[:3, :3].T
        t = -r @ c2w[:3, 3]
        w = int(frame.get("w", width))
        h = int(frame.get("h", height))
        f = 0.5 * w / math.tan(0.5 * angle)
        name = frame.get("file_path", f"frame_{i:04d}")
        try:
            view = CameraView(rotation=r, translation=t, focal=f,
                              width=w, height=h, view_id=Path(str(name)).name)
        except ValueError as e:
            raise ValueError(f"{p}: frame {i}: {e}") from e
        views.append(view)
    return views


def look_at_view(position, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0),
                 focal=800.0, width=800, height=800, view_id="") -> CameraView:
    """World-to-camera view at `position` looking toward `target`.

    Camera axes follow the projection convention here: +z forward
    (into the scene), +x right, +y down.
    """
    position = np.asarray(position, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    fwd = target - position
    norm = np.linalg.norm(fwd)
    if norm == 0:
        raise ValueError("camera position coincides with the target")
    fwd = fwd / norm
    upv = np.asarray(up, dtype=np.float64).reshape(3)
    right = np.cross(fwd, upv)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-12:
        upv = np.array([0.0, 0.0, 1.0])
        right = np.cross(fwd, upv)
        rnorm = np.linalg.norm(right)
    right /= rnorm
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd])
    return CameraView(rotation=r, translation=-r @ position, focal=focal,
                      width=width, height=height, view_id=view_id)

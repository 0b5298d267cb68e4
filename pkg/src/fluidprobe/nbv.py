"""Physics-aware next-best-view selection.

A Step-1 proposer (random, farthest-pose, or an external score file)
narrows the candidate poses to a top-K subset each round; the final
pick inside that subset is the pose with the highest divergence view
score.  Reconstruction updates are stood in for by a degraded-scene
oracle whose perturbations shrink whenever an acquired view sees the
affected Gaussians.
"""

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cameras import view_divergence_score, visible_set
from .probe import probe_scene
from .scene import GaussianScene
from .sph import SimulationConfig, cfl_timestep, reynolds_number

DEFAULT_SPEEDS = (3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 20.0, 50.0)


def top_k_size(budget: int, n_selected: int) -> int:
    """Candidate-subset size for the current round: max{B - n, 2}."""
    if budget < 0:
        raise ValueError(f"budget must be nonnegative, got {budget}")
    if n_selected < 0:
        raise ValueError(f"n_selected must be nonnegative, got {n_selected}")
    if n_selected > budget:
        raise ValueError(
            f"n_selected {n_selected} exceeds the budget {budget}")
    return max(budget - n_selected, 2)


@dataclass
class CandidatePool:
    """One round's view universe, acquired ids, and top-K subset."""

    views: list
    acquired: tuple
    budget: int
    top_k: tuple

    def __post_init__(self):
        self.acquired = tuple(int(i) for i in self.acquired)
        self.top_k = tuple(int(i) for i in self.top_k)
        n = len(self.views)
        taken = set(self.acquired)
        for i in self.acquired + self.top_k:
            if not 0 <= i < n:
                raise ValueError(f"pose id {i} out of range for {n} views")
        if len(set(self.top_k)) != len(self.top_k):
            raise ValueError("top-K subset contains duplicate pose ids")
        if taken & set(self.top_k):
            raise ValueError("top-K subset overlaps the acquired set")
        k = top_k_size(self.budget, len(self.acquired))
        if len(self.top_k) != k:
            raise ValueError(
                f"top-K subset has {len(self.top_k)} poses, expected {k}")


def select_next_view(pool: CandidatePool, scores) -> int:
    """Argmax of the view score over the top-K subset; ties take the
    lowest pose id."""
    if not pool.top_k:
        raise ValueError("candidate subset is empty")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(pool.top_k),):
        raise ValueError(
            f"expected {len(pool.top_k)} scores, got shape {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    best = scores.max()
    return min(i for i, s in zip(pool.top_k, scores) if s == best)


# -------------------- proposers --------------------

class RandomProposer:
    """Uniform-random ordering of the unacquired poses."""

    name = "random"

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)

    def propose(self, views, acquired, k):
        taken = set(acquired)
        pool = [i for i in range(len(views)) if i not in taken]
        order = self.rng.permutation(len(pool))
        return [pool[j] for j in order[:k]]


class FarthestProposer:
    """Greedy farthest-pose sampling by angle between camera centers."""

    name = "farthest"

    def propose(self, views, acquired, k):
        centers = np.array([v.center() for v in views], dtype=np.float64)
        norms = np.linalg.norm(centers, axis=1)
        units = centers / np.where(norms > 0, norms, 1.0)[:, None]
        taken = set(acquired)
        remaining = [i for i in range(len(views)) if i not in taken]
        anchor = [int(i) for i in acquired]
        picked = []
        while remaining and len(picked) < k:
            if not anchor:
                choice = remaining[0]          # lowest id seeds the chain
            else:
                ref = units[anchor]
                best_angle = -1.0
                choice = remaining[0]
                for i in remaining:
                    cosines = np.clip(ref @ units[i], -1.0, 1.0)
                    a = float(np.arccos(cosines).min())
                    if a > best_angle + 1e-12:
                        best_angle = a
                        choice = i
            picked.append(choice)
            anchor.append(choice)
            remaining.remove(choice)
        return picked


class ExternalScoreProposer:
    """Ranking read from a planner's score file (JSON dict or CSV)."""

    name = "external"

    def __init__(self, path):
        p = Path(path)
        text = p.read_text()
        self.scores = {}
        if p.suffix.lower() == ".json":
            data = json.loads(text)
            if not isinstance(data, dict):
                raise ValueError(f"{p}: expected a view_id -> score object")
            self.scores = {str(k): float(v) for k, v in data.items()}
        else:
            reader = csv.DictReader(text.splitlines())
            if reader.fieldnames is None or \
                    {"view_id", "score"} - set(reader.fieldnames):
                raise ValueError(f"{p}: expected columns view_id,score")
            for row in reader:
                self.scores[str(row["view_id"])] = float(row["score"])
        if not self.scores:
            raise ValueError(f"{p}: no scores found")

    def propose(self, views, acquired, k):
        taken = set(acquired)
        ranked = []
        for i, v in enumerate(views):
            if i in taken:
                continue
            if v.view_id not in self.scores:
                raise ValueError(f"no external score for view '{v.view_id}'")
            ranked.append((-self.scores[v.view_id], i))
        ranked.sort()
        return [i for _, i in ranked[:k]]


# -------------------- reconstruction stand-in --------------------

class DegradedSceneOracle:
    """Perturbed copy of a clean scene with per-view recovery.

    Each Gaussian carries a jitter magnitude (meters) applied along a
    fixed seeded unit direction, optionally attenuating opacity with
    severity.  Acquiring a view multiplies the magnitude of every
    visible Gaussian by the recovery factor, so perturbations only
    ever shrink.
    """

    def __init__(self, scene: GaussianScene, magnitudes, seed=0,
                 opacity_attenuation=0.0, recovery=0.3, directions=None):
        self.clean = scene
        m = np.asarray(magnitudes, dtype=np.float64).copy()
        if m.shape != (len(scene),):
            raise ValueError(
                f"magnitudes shape {m.shape} does not match scene size {len(scene)}")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValueError("magnitudes must be finite and nonnegative")
        if not 0.0 <= opacity_attenuation < 1.0:
            raise ValueError(
                f"opacity_attenuation must be in [0, 1), got {opacity_attenuation}")
        if not 0.0 <= recovery < 1.0:
            raise ValueError(f"recovery must be in [0, 1), got {recovery}")
        self.magnitudes = m
        self._initial = m.copy()
        self.opacity_attenuation = float(opacity_attenuation)
        self.recovery = float(recovery)
        if directions is None:
            rng = np.random.default_rng(seed)
            directions = rng.normal(size=(len(scene), 3))
        d = np.asarray(directions, dtype=np.float64).copy()
        if d.shape != (len(scene), 3):
            raise ValueError(
                f"directions shape {d.shape} does not match scene size {len(scene)}")
        norms = np.linalg.norm(d, axis=1)
        if np.any(norms == 0):
            raise ValueError("jitter directions must be nonzero")
        self.directions = d / norms[:, None]

    @classmethod
    def with_defect(cls, scene, indices, magnitude, seed=0, direction=None,
                    **kwargs):
        """Uniform-magnitude defect on the given Gaussians; `direction`
        optionally fixes one jitter direction for all of them."""
        m = np.zeros(len(scene))
        m[np.asarray(indices, dtype=int)] = float(magnitude)
        directions = None
        if direction is not None:
            directions = np.tile(np.asarray(direction, dtype=np.float64),
                                 (len(scene), 1))
        return cls(scene, m, seed=seed, directions=directions, **kwargs)

    @property
    def defect_indices(self) -> np.ndarray:
        return np.flatnonzero(self._initial > 0)

    def current_scene(self) -> GaussianScene:
        centers = self.clean.centers + self.magnitudes[:, None] * self.directions
        opacities = self.clean.opacities
        if self.opacity_attenuation > 0.0:
            init = np.where(self._initial > 0, self._initial, 1.0)
            severity = self.magnitudes / init
            opacities = opacities * (1.0 - self.opacity_attenuation * severity)
        return GaussianScene(centers, self.clean.scales.copy(),
                             self.clean.rotations.copy(), opacities.copy())

    def recover(self, visible):
        visible = np.asarray(visible, dtype=int)
        self.magnitudes[visible] *= self.recovery


# -------------------- acquisition loop --------------------

@dataclass
class RoundRecord:
    round: int
    candidates: tuple
    scores: tuple
    selected: int
    covered: bool
    d_bar: float          # scene-level divergence after this round's recovery


@dataclass
class AcquisitionLog:
    budget: int
    seed_views: tuple
    selection: str
    acquired: tuple
    d_bar_trajectory: tuple
    rounds: list = field(default_factory=list)

    @property
    def covered_round(self):
        for r in self.rounds:
            if r.covered:
                return r.round
        return None


def run_acquisition_loop(oracle: DegradedSceneOracle, proposer, views,
                         cfg: SimulationConfig, budget=10, seed_views=(0, 1),
                         selection="physics", selection_seed=0, ics=None,
                         opacity_threshold=0.3, n=3.0, slab_thickness=0.3,
                         slab_padding=0.1, unweighted=False) -> AcquisitionLog:
    """Acquire views until the budget is met, re-probing after each pick.

    `selection` chooses the final pick inside the proposer's top-K:
    "physics" takes the divergence-score argmax, "random" draws
    uniformly (the ablation baseline).  The log records one probe per
    round plus the initial state.
    """
    if budget < 2:
        raise ValueError(f"budget must be at least 2, got {budget}")
    if selection not in ("physics", "random"):
        raise ValueError(f"unknown selection strategy {selection!r}")
    seed_views = tuple(int(i) for i in seed_views)
    if len(set(seed_views)) != len(seed_views):
        raise ValueError("seed views must be distinct")
    for i in seed_views:
        if not 0 <= i < len(views):
            raise ValueError(f"seed view id {i} out of range for {len(views)} views")
    if len(seed_views) > budget:
        raise ValueError(
            f"{len(seed_views)} seed views exceed the budget {budget}")

    probe_kwargs = dict(ics=ics, opacity_threshold=opacity_threshold, n=n,
                        slab_thickness=slab_thickness,
                        slab_padding=slab_padding)
    rng = np.random.default_rng(selection_seed)
    acquired = list(seed_views)
    scene_cur = oracle.current_scene()
    result = probe_scene(scene_cur, cfg, **probe_kwargs)
    trajectory = [result.d_bar]
    rounds = []
    round_no = 0
    while len(acquired) < budget:
        round_no += 1
        k = top_k_size(budget, len(acquired))
        candidates = [int(c) for c in proposer.propose(views, acquired, k)]
        taken = set(acquired)
        distinct = set(candidates)
        if (len(candidates) < k or len(distinct) != len(candidates)
                or distinct & taken
                or any(not 0 <= c < len(views) for c in candidates)):
            raise ValueError(
                f"proposer {getattr(proposer, 'name', '?')} did not return "
                f"{k} distinct unacquired poses in round {round_no}")
        pool = CandidatePool(views=views, acquired=tuple(acquired),
                             budget=budget, top_k=tuple(candidates))
        scores = [view_divergence_score(views[c], scene_cur, result.d_g,
                                        unweighted=unweighted)
                  for c in candidates]
        if selection == "physics":
            chosen = select_next_view(pool, scores)
        else:
            chosen = candidates[int(rng.integers(len(candidates)))]
        vis = visible_set(views[chosen], scene_cur)
        covered = bool(np.intersect1d(vis, oracle.defect_indices).size)
        oracle.recover(vis)
        acquired.append(chosen)
        scene_cur = oracle.current_scene()
        result = probe_scene(scene_cur, cfg, **probe_kwargs)
        trajectory.append(result.d_bar)
        rounds.append(RoundRecord(round=round_no, candidates=tuple(candidates),
                                  scores=tuple(float(s) for s in scores),
                                  selected=chosen, covered=covered,
                                  d_bar=result.d_bar))
    return AcquisitionLog(budget=budget, seed_views=seed_views,
                          selection=selection, acquired=tuple(acquired),
                          d_bar_trajectory=tuple(trajectory), rounds=rounds)


# -------------------- velocity sweep --------------------

@dataclass
class SweepRow:
    u: float
    re: float
    dt: float
    d_bar_base: float
    d_bar_ours: float
    delta_gap: float


def velocity_sweep(scene_base: GaussianScene, scene_ours: GaussianScene,
                   speeds=DEFAULT_SPEEDS, cfg=None, ics=("-x",),
                   opacity_threshold=0.3, n=3.0, slab_thickness=0.3,
                   slab_padding=0.1):
    """Probe both geometries over an inflow-speed sweep at constant
    Courant number; the gap column is D-bar(base) minus D-bar(ours)."""
    speeds = tuple(float(u) for u in speeds)
    if not speeds:
        raise ValueError("speed list is empty")
    if cfg is None:
        cfg = SimulationConfig()
    probe_kwargs = dict(ics=ics, opacity_threshold=opacity_threshold, n=n,
                        slab_thickness=slab_thickness,
                        slab_padding=slab_padding)
    rows = []
    for u in speeds:
        dt = cfl_timestep(u)
        cfg_u = dataclasses.replace(cfg, initial_speed=u, dt=dt,
                                    divergence_tolerance=cfg.divergence_tolerance)
        base = probe_scene(scene_base, cfg_u, **probe_kwargs)
        ours = probe_scene(scene_ours, cfg_u, **probe_kwargs)
        first = base.summaries[base.ics[0]]
        extent = np.asarray(first["domain_max"]) - np.asarray(first["domain_min"])
        length = float(extent.max())
        re = reynolds_number(cfg.fluid_density, u, length, cfg.viscosity)
        rows.append(SweepRow(u=u, re=re, dt=dt,
                             d_bar_base=base.d_bar, d_bar_ours=ours.d_bar,
                             delta_gap=base.d_bar - ours.d_bar))
    return rows

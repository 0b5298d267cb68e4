"""Command-line front end.

Five subcommands built on the library: `simulate` runs one rollout and
dumps snapshots, `probe` scores a scene, `score` ranks camera poses,
`nbv` runs the acquisition loop against a synthetically degraded scene,
and `sweep` compares two reconstructions over an inflow-speed ladder.

Every run writes the fully resolved configuration to `<outdir>/config.ini`;
feeding that file back through `--config` reproduces the run.  Flags beat
config-file values, which beat the built-in defaults.

Exit codes: 0 success, 1 bad input or configuration, 2 solver failure
(blow-up, NaN), 3 a `--check` invariant failed.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as reports
from .cameras import load_views, score_view
from .data import demo_scene_path
from .nbv import (DEFAULT_SPEEDS, DegradedSceneOracle, ExternalScoreProposer,
                  FarthestProposer, RandomProposer, run_acquisition_loop,
                  velocity_sweep)
from .probe import probe_scene
from .scene import (CANONICAL_DIRECTIONS, FluidSlabSpec, build_domain,
                    load_scene, normalize_direction, voxelize)
from .sph import (SimulationConfig, SimulationError, run_rollout,
                  set_worker_count)


@dataclass
class RunConfig:
    """Everything a run needs, solver constants included.

    Serializes to an INI file with sections [simulation], [scene],
    [nbv], [output]; see `save_config` / `load_config`.
    """

    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    scene: str = "demo"            # path, or "demo" for the bundled plate
    scene_ours: str = ""           # second scene for `sweep`
    poses: str = ""                # camera transforms JSON for score/nbv
    direction: str = "-x"          # release direction for simulate/sweep
    ics: tuple = CANONICAL_DIRECTIONS
    opacity_threshold: float = 0.3
    membership_n: float = 3.0
    slab_thickness: float = 0.3
    slab_padding: float = 0.1
    budget: int = 10
    seed_views: tuple = (0, 1)
    proposer: str = "random"       # random | farthest | external:<file>
    selection: str = "physics"     # physics | random
    selection_seed: int = 0
    defect_fraction: float = 0.2
    defect_magnitude: float = 0.05
    defect_seed: int = 0
    opacity_attenuation: float = 0.0
    recovery: float = 0.3
    speeds: tuple = DEFAULT_SPEEDS
    unweighted: bool = False
    outdir: str = "out"
    vtk: bool = True
    csv: bool = True


# -------------------- config file --------------------

def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_vec3(text: str) -> tuple:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated numbers, got {text!r}")
    return tuple(parts)


def _parse_domain(text: str):
    # "auto" defers the domain box to build_domain
    if text.strip().lower() == "auto":
        return None
    return _parse_vec3(text)


def _parse_opt_float(text: str):
    if text.strip().lower() == "auto":
        return None
    return float(text)


def _parse_floats(text: str) -> tuple:
    values = tuple(float(p) for p in text.split(",") if p.strip())
    if not values:
        raise ValueError("expected a comma-separated list of numbers")
    return values


def _parse_ints(text: str) -> tuple:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _parse_ics(text: str) -> tuple:
    parts = [normalize_direction(p.strip()) for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("release-direction list is empty")
    return tuple(parts)


_SIM_PARSERS = {
    "dt": float,
    "n_steps": int,
    "particle_radius": float,
    "cutoff_radius": float,
    "kernel_size": float,
    "fluid_density": float,
    "rigid_density": float,
    "viscosity": float,
    "initial_speed": float,
    "gravity": _parse_vec3,
    "domain_min": _parse_domain,
    "domain_max": _parse_domain,
    "density_tolerance": float,
    "divergence_tolerance": _parse_opt_float,
    "max_iterations": int,
    "min_iterations": int,
    "stride": int,
    "deterministic": _parse_bool,
    "seed": int,
}

_SCENE_PARSERS = {
    "scene": str,
    "scene_ours": str,
    "poses": str,
    "direction": normalize_direction,
    "ics": _parse_ics,
    "opacity_threshold": float,
    "membership_n": float,
    "slab_thickness": float,
    "slab_padding": float,
}

_NBV_PARSERS = {
    "budget": int,
    "seed_views": _parse_ints,
    "proposer": str,
    "selection": str,
    "selection_seed": int,
    "defect_fraction": float,
    "defect_magnitude": float,
    "defect_seed": int,
    "opacity_attenuation": float,
    "recovery": float,
    "speeds": _parse_floats,
    "unweighted": _parse_bool,
}

_OUTPUT_PARSERS = {
    "outdir": str,
    "vtk": _parse_bool,
    "csv": _parse_bool,
}

_SECTIONS = {
    "simulation": _SIM_PARSERS,
    "scene": _SCENE_PARSERS,
    "nbv": _NBV_PARSERS,
    "output": _OUTPUT_PARSERS,
}


def _fmt(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def save_config(path, rc: RunConfig):
    """Write rc as an INI file that `load_config` parses back losslessly."""
    cp = configparser.ConfigParser()
    cp["simulation"] = {k: _fmt(getattr(rc.simulation, k)) for k in _SIM_PARSERS}
    cp["scene"] = {k: _fmt(getattr(rc, k)) for k in _SCENE_PARSERS}
    cp["nbv"] = {k: _fmt(getattr(rc, k)) for k in _NBV_PARSERS}
    cp["output"] = {k: _fmt(getattr(rc, k)) for k in _OUTPUT_PARSERS}
    with open(path, "w") as fh:
        cp.write(fh)


def load_config(path, base: RunConfig = None) -> RunConfig:
    """Read an INI file over `base` (defaults when omitted).

    Unknown sections and keys are rejected so typos fail loudly instead
    of silently running with defaults.
    """
    rc = base if base is not None else RunConfig()
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(f"config file not found: {path}")
    for name in cp.sections():
        if name not in _SECTIONS:
            raise ValueError(f"unknown config section [{name}]")
    sim_kwargs = {k: getattr(rc.simulation, k) for k in _SIM_PARSERS}
    for name, parsers in _SECTIONS.items():
        if not cp.has_section(name):
            continue
        for key, raw in cp.items(name):
            if key not in parsers:
                raise ValueError(f"unknown key '{key}' in section [{name}]")
            try:
                value = parsers[key](raw)
            except ValueError as e:
                raise ValueError(f"config [{name}] {key}: {e}") from e
            if name == "simulation":
                sim_kwargs[key] = value
            else:
                setattr(rc, key, value)
    rc.simulation = SimulationConfig(**sim_kwargs)
    return rc


# -------------------- argument parsing --------------------

class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1; plain argparse exits 2, which is reserved
    for solver failures here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


# Flags whose value legitimately starts with "-" ("-x", "-y").  argparse
# would read the value as an option, so `--flag value` is rewritten to
# `--flag=value` before parsing.
_MERGE_FLAGS = ("--direction", "--ics", "--speeds")


def _merge_value_flags(argv: list) -> list:
    merged = []
    i = 0
    while i < len(argv):
        token = argv[i]
        if token in _MERGE_FLAGS and i + 1 < len(argv):
            merged.append(f"{token}={argv[i + 1]}")
            i += 2
        else:
            merged.append(token)
            i += 1
    return merged


def _add_common(p):
    p.add_argument("--config", help="INI file of defaults; flags override it")
    p.add_argument("--outdir", help="output directory (default 'out')")
    p.add_argument("--scene", help="scene JSON path, or 'demo' for the bundled plate")
    p.add_argument("--steps", type=int, help="number of solver steps")
    p.add_argument("--dt", type=float, help="time step in seconds")
    p.add_argument("--stride", type=int, help="steps between snapshots")
    p.add_argument("--velocity", type=float,
                   help="slab release speed in m/s (0 drops under gravity)")
    p.add_argument("--seed", type=int, help="solver seed")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                   help="force bitwise-reproducible reductions")
    p.add_argument("--check", action="store_true",
                   help="verify post-run invariants; exit 3 if any fail")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="fluidprobe",
        description="Fluid-dynamics probing of reconstructed Gaussian scenes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one rollout and dump snapshots")
    _add_common(p)
    p.add_argument("--direction", help="release direction (+x, -x, +z, -z, -y)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("probe", help="score a scene by probing it with fluid")
    _add_common(p)
    p.add_argument("--ics", help="comma-separated release directions (default all five)")
    p.add_argument("--opacity-threshold", type=float, dest="opacity_threshold")
    p.add_argument("--membership-n", type=float, dest="membership_n",
                   help="Mahalanobis radius for fluid-to-Gaussian membership")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("score", help="rank camera poses by observed divergence")
    _add_common(p)
    p.add_argument("--poses", help="camera transforms JSON")
    p.add_argument("--ics", help="comma-separated release directions")
    p.add_argument("--unweighted", action="store_true",
                   help="skip the projected-area weights")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("nbv", help="acquisition loop against a degraded scene")
    _add_common(p)
    p.add_argument("--poses", help="camera transforms JSON")
    p.add_argument("--ics", help="comma-separated release directions")
    p.add_argument("--budget", type=int, help="total views to acquire")
    p.add_argument("--seed-views", dest="seed_views",
                   help="comma-separated starting view indices")
    p.add_argument("--proposer", help="random | farthest | external:<file>")
    p.add_argument("--selection", help="physics | random")
    p.add_argument("--selection-seed", type=int, dest="selection_seed")
    p.add_argument("--defect-fraction", type=float, dest="defect_fraction")
    p.add_argument("--defect-magnitude", type=float, dest="defect_magnitude")
    p.add_argument("--defect-seed", type=int, dest="defect_seed")
    p.add_argument("--unweighted", action="store_true")
    p.set_defaults(func=cmd_nbv)

    p = sub.add_parser("sweep", help="compare two scenes over inflow speeds")
    _add_common(p)
    p.add_argument("--scene-ours", dest="scene_ours",
                   help="reconstruction to compare against --scene")
    p.add_argument("--direction", help="release direction for the sweep")
    p.add_argument("--speeds", help="comma-separated inflow speeds in m/s")
    p.set_defaults(func=cmd_sweep)

    return parser


_FLAG_FIELDS = (
    "outdir", "scene", "scene_ours", "poses", "direction", "proposer",
    "selection", "budget", "seed_views", "selection_seed", "defect_fraction",
    "defect_magnitude", "defect_seed", "opacity_threshold", "membership_n",
)

_SIM_FLAGS = {
    "steps": "n_steps",
    "dt": "dt",
    "stride": "stride",
    "velocity": "initial_speed",
    "seed": "seed",
    "deterministic": "deterministic",
}


def _apply_flags(rc: RunConfig, args) -> RunConfig:
    updates = {}
    for flag, name in _SIM_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            updates[name] = value
    if updates:
        rc.simulation = dataclasses.replace(rc.simulation, **updates)
    for name in _FLAG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            setattr(rc, name, value)
    if isinstance(rc.seed_views, str):
        rc.seed_views = _parse_ints(rc.seed_views)
    if getattr(args, "ics", None) is not None:
        rc.ics = _parse_ics(args.ics)
    if getattr(args, "speeds", None) is not None:
        rc.speeds = _parse_floats(args.speeds)
    if getattr(args, "unweighted", False):
        rc.unweighted = True
    rc.direction = normalize_direction(rc.direction)
    return rc


# -------------------- commands --------------------

def _scene_path(token: str):
    return demo_scene_path() if token == "demo" else token


def cmd_simulate(rc: RunConfig, outdir: Path) -> list:
    scene = load_scene(_scene_path(rc.scene))
    cfg = rc.simulation
    rigid = voxelize(scene, opacity_threshold=rc.opacity_threshold,
                     spacing=2.0 * cfg.particle_radius,
                     kernel_size=cfg.kernel_size,
                     rigid_density=cfg.rigid_density)
    slab = FluidSlabSpec(direction=rc.direction, thickness=rc.slab_thickness,
                         padding=rc.slab_padding, speed=cfg.initial_speed)
    system = build_domain(rigid, slab, cfg)
    trace = run_rollout(system, cfg)

    snapdir = outdir / "snapshots"
    snapdir.mkdir(exist_ok=True)
    for snap in trace.snapshots:
        stem = f"step_{snap.step:06d}"
        if rc.vtk:
            reports.write_particles_vtk(snapdir / f"{stem}.vtk", snap,
                                        trace.rigid_positions)
        if rc.csv:
            reports.write_particles_csv(snapdir / f"{stem}.csv", snap,
                                        trace.rigid_positions)
    reports.write_rollout_summary(outdir / "summary.json", trace.summary, cfg)
    s = trace.summary
    print(f"simulate: {s.steps} steps, {s.n_fluid} fluid / {s.n_rigid} rigid, "
          f"{len(trace.snapshots)} snapshots -> {snapdir}")

    failures = []
    if s.escaped:
        failures.append(f"{s.escaped} particles escaped the domain")
    if s.non_converged_steps:
        failures.append(f"{s.non_converged_steps} steps hit the iteration cap")
    if trace.snapshots and not np.isfinite(trace.snapshots[-1].positions).all():
        failures.append("non-finite positions in the final snapshot")
    _, div_tol = cfg.solver_tolerances()
    worst_div = max((r.divergence_error for r in trace.reports), default=0.0)
    if worst_div > div_tol:
        failures.append(f"divergence error {worst_div:.4g} exceeds "
                        f"tolerance {div_tol:.4g}")
    worst_dev = max((r.mean_density_deviation for r in trace.reports), default=0.0)
    if worst_dev > 0.01 * cfg.fluid_density:
        failures.append(f"mean density deviation {worst_dev:.4g} exceeds "
                        f"1% of rest density")
    return failures


def cmd_probe(rc: RunConfig, outdir: Path) -> list:
    scene = load_scene(_scene_path(rc.scene))
    result = probe_scene(scene, rc.simulation, ics=rc.ics,
                         opacity_threshold=rc.opacity_threshold,
                         n=rc.membership_n,
                         slab_thickness=rc.slab_thickness,
                         slab_padding=rc.slab_padding)
    reports.write_gaussians_csv(outdir / "gaussians.csv", scene, result)
    reports.write_probe_summary(outdir / "summary.json", result)
    print(f"probe: {len(result.ics)} release directions over "
          f"{result.n_gaussians} Gaussians, D_bar = {result.d_bar:.6g} "
          f"-> {outdir / 'gaussians.csv'}")

    failures = []
    if not np.isfinite(result.d_g).all():
        failures.append("non-finite per-Gaussian divergence")
    if not math.isfinite(result.d_bar):
        failures.append("non-finite scene score")
    if (result.counts < 0).any():
        failures.append("negative membership count")
    if int(result.counts.sum()) == 0:
        failures.append("no membership events; the fluid never touched the scene")
    return failures


def cmd_score(rc: RunConfig, outdir: Path) -> list:
    if not rc.poses:
        raise ValueError("score requires --poses (camera transforms JSON)")
    scene = load_scene(_scene_path(rc.scene))
    views = load_views(rc.poses)
    result = probe_scene(scene, rc.simulation, ics=rc.ics,
                         opacity_threshold=rc.opacity_threshold,
                         n=rc.membership_n,
                         slab_thickness=rc.slab_thickness,
                         slab_padding=rc.slab_padding)
    scored = [score_view(v, scene, d_g=result.d_g, counts=result.counts,
                         unweighted=rc.unweighted) for v in views]
    order = sorted(range(len(scored)),
                   key=lambda i: (-scored[i].divergence_score, i))
    reports.write_scores_csv(outdir / "scores.csv", [scored[i] for i in order])
    best = scored[order[0]]
    print(f"score: {len(views)} poses, best '{best.view_id}' "
          f"S = {best.divergence_score:.6g} -> {outdir / 'scores.csv'}")

    failures = []
    if not all(math.isfinite(v.divergence_score) for v in scored):
        failures.append("non-finite view score")
    if not any(v.n_visible for v in scored):
        failures.append("no pose sees any Gaussian")
    return failures


def _make_proposer(spec: str, seed: int):
    if spec == "random":
        return RandomProposer(seed=seed)
    if spec == "farthest":
        return FarthestProposer()
    if spec.startswith("external:"):
        return ExternalScoreProposer(spec.split(":", 1)[1])
    raise ValueError(f"unknown proposer '{spec}' "
                     f"(expected random, farthest, or external:<file>)")


def cmd_nbv(rc: RunConfig, outdir: Path) -> list:
    if not rc.poses:
        raise ValueError("nbv requires --poses (camera transforms JSON)")
    scene = load_scene(_scene_path(rc.scene))
    views = load_views(rc.poses)
    rng = np.random.default_rng(rc.defect_seed)
    n_gaussians = len(scene)
    n_defect = max(1, int(round(rc.defect_fraction * n_gaussians)))
    n_defect = min(n_defect, n_gaussians)
    indices = np.sort(rng.choice(n_gaussians, size=n_defect, replace=False))
    oracle = DegradedSceneOracle.with_defect(
        scene, indices, rc.defect_magnitude, seed=rc.defect_seed,
        opacity_attenuation=rc.opacity_attenuation, recovery=rc.recovery)
    proposer = _make_proposer(rc.proposer, rc.selection_seed)
    log = run_acquisition_loop(
        oracle, proposer, views, rc.simulation, budget=rc.budget,
        seed_views=tuple(rc.seed_views), selection=rc.selection,
        selection_seed=rc.selection_seed, ics=rc.ics,
        opacity_threshold=rc.opacity_threshold, n=rc.membership_n,
        slab_thickness=rc.slab_thickness, slab_padding=rc.slab_padding,
        unweighted=rc.unweighted)
    reports.write_acquisition_log(outdir / "acquisition.json", log)
    covered = log.covered_round
    when = f"in round {covered}" if covered is not None else "never"
    print(f"nbv: budget {log.budget}, acquired {list(log.acquired)}, "
          f"D_bar {log.d_bar_trajectory[0]:.6g} -> {log.d_bar_trajectory[-1]:.6g}, "
          f"defect covered {when} -> {outdir / 'acquisition.json'}")

    failures = []
    if not all(math.isfinite(d) for d in log.d_bar_trajectory):
        failures.append("non-finite scene score in the acquisition trajectory")
    if len(log.acquired) != log.budget:
        failures.append(f"acquired {len(log.acquired)} views, budget was {log.budget}")
    return failures


def cmd_sweep(rc: RunConfig, outdir: Path) -> list:
    if not rc.scene_ours:
        raise ValueError("sweep requires --scene-ours (reconstruction to compare)")
    base = load_scene(_scene_path(rc.scene))
    ours = load_scene(_scene_path(rc.scene_ours))
    rows = velocity_sweep(base, ours, speeds=rc.speeds, cfg=rc.simulation,
                          ics=(rc.direction,),
                          opacity_threshold=rc.opacity_threshold,
                          n=rc.membership_n,
                          slab_thickness=rc.slab_thickness,
                          slab_padding=rc.slab_padding)
    reports.write_sweep_csv(outdir / "sweep.csv", rows)
    gaps = ", ".join(f"U={r.u:g}: {r.delta_gap:.4g}" for r in rows)
    print(f"sweep: {len(rows)} speeds ({gaps}) -> {outdir / 'sweep.csv'}")

    failures = []
    if not all(math.isfinite(r.delta_gap) for r in rows):
        failures.append("non-finite divergence gap")
    return failures


# -------------------- entry point --------------------

def _solver_failure(exc) -> bool:
    """True when a SimulationError sits anywhere on the cause chain."""
    seen = set()
    while exc is not None and id(exc) not in seen:
        if isinstance(exc, SimulationError):
            return True
        seen.add(id(exc))
        exc = exc.__cause__ or exc.__context__
    return False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(_merge_value_flags(argv))
    except SystemExit as e:  # argparse --help exits 0, usage errors exit 1
        return int(e.code or 0)
    try:
        workers = os.environ.get("FLUIDPROBE_WORKERS")
        if workers:
            set_worker_count(int(workers))
        rc = RunConfig()
        if args.config:
            rc = load_config(args.config, rc)
        rc = _apply_flags(rc, args)
        outdir = Path(rc.outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        save_config(outdir / "config.ini", rc)
        failures = args.func(rc, outdir)
    except (ValueError, OSError, RuntimeError, configparser.Error) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2 if _solver_failure(e) else 1
    if args.check and failures:
        for failure in failures:
            print(f"check failed: {failure}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Report writers: particle snapshots, per-Gaussian tables, view scores.

All floats are serialized with 9 significant digits and a fixed column
order, so identical inputs produce byte-identical files.
"""

import dataclasses
import json

import numpy as np

from .scene import CANONICAL_DIRECTIONS


def format_float(x) -> str:
    """Nine significant digits, shortest form."""
    return "%.9g" % float(x)


def _write_lines(path, lines):
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


# -------------------- particle output --------------------

def write_particles_csv(path, snapshot, rigid_positions=None):
    """One row per particle: position, velocity, divergence, type."""
    lines = ["x,y,z,vx,vy,vz,divergence,type"]
    pos = snapshot.positions
    vel = snapshot.velocities
    div = snapshot.divergence
    f = format_float
    for i in range(pos.shape[0]):
        lines.append(",".join((
            f(pos[i, 0]), f(pos[i, 1]), f(pos[i, 2]),
            f(vel[i, 0]), f(vel[i, 1]), f(vel[i, 2]),
            f(div[i]), "fluid",
        )))
    if rigid_positions is not None:
        for i in range(rigid_positions.shape[0]):
            lines.append(",".join((
                f(rigid_positions[i, 0]), f(rigid_positions[i, 1]),
                f(rigid_positions[i, 2]), "0", "0", "0", "0", "rigid",
            )))
    _write_lines(path, lines)


def write_particles_vtk(path, snapshot, rigid_positions=None):
    """Legacy ASCII polydata with divergence, type, and velocity fields."""
    pos = snapshot.positions
    nf = pos.shape[0]
    if rigid_positions is not None and rigid_positions.shape[0]:
        pos = np.vstack([pos, rigid_positions])
    n = pos.shape[0]
    f = format_float
    lines = [
        "# vtk DataFile Version 3.0",
        f"fluid probe particles step {snapshot.step}",
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {n} double",
    ]
    for i in range(n):
        lines.append(f"{f(pos[i, 0])} {f(pos[i, 1])} {f(pos[i, 2])}")
    lines.append(f"VERTICES {n} {2 * n}")
    for i in range(n):
        lines.append(f"1 {i}")
    lines.append(f"POINT_DATA {n}")
    lines.append("SCALARS divergence double 1")
    lines.append("LOOKUP_TABLE default")
    for i in range(n):
        lines.append(f(snapshot.divergence[i]) if i < nf else "0")
    lines.append("SCALARS type int 1")
    lines.append("LOOKUP_TABLE default")
    for i in range(n):
        lines.append("0" if i < nf else "1")
    lines.append("VECTORS velocity double")
    for i in range(n):
        if i < nf:
            v = snapshot.velocities[i]
            lines.append(f"{f(v[0])} {f(v[1])} {f(v[2])}")
        else:
            lines.append("0 0 0")
    _write_lines(path, lines)


# -------------------- tabular output --------------------

def write_gaussians_csv(path, scene, result):
    """Per-Gaussian table: reduced and per-direction scores plus shape.

    Directions the probe did not run are written as 0.0 so the column
    layout never varies.
    """
    header = ["gaussian_index", "D_g"]
    header += [f"D_g_{d}" for d in CANONICAL_DIRECTIONS]
    header += ["count", "s_g", "r_g"]
    lines = [",".join(header)]
    ng = len(scene)
    zeros = np.zeros(ng)
    per_ic = [np.asarray(result.per_ic.get(d, zeros)) for d in CANONICAL_DIRECTIONS]
    traces = scene.traces
    radii = scene.radii
    f = format_float
    for g in range(ng):
        row = [str(g), f(result.d_g[g])]
        row += [f(col[g]) for col in per_ic]
        row += [str(int(result.counts[g])), f(traces[g]), f(radii[g])]
        lines.append(",".join(row))
    _write_lines(path, lines)


def write_scores_csv(path, scores):
    """View-score table in the order given (callers pre-sort)."""
    lines = ["view_id,n_visible,S,C,S_normalized"]
    f = format_float
    for s in scores:
        lines.append(",".join((
            str(s.view_id), str(s.n_visible),
            f(s.divergence_score), f(s.count_score), f(s.normalized),
        )))
    _write_lines(path, lines)


def write_sweep_csv(path, rows):
    lines = ["U,Re,dt,D_bar_base,D_bar_ours,delta_gap"]
    f = format_float
    for r in rows:
        lines.append(",".join((
            f(r.u), f(r.re), f(r.dt),
            f(r.d_bar_base), f(r.d_bar_ours), f(r.delta_gap),
        )))
    _write_lines(path, lines)


# -------------------- JSON output --------------------

def _config_dict(cfg):
    if dataclasses.is_dataclass(cfg):
        d = dataclasses.asdict(cfg)
    else:
        d = dict(cfg)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)!r}")


def write_json(path, payload):
    with open(path, "w", newline="") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def write_probe_summary(path, result):
    """Scene-level probe report: D-bar, per-direction rollout summaries."""
    write_json(path, {
        "d_bar": result.d_bar,
        "ics": list(result.ics),
        "n_gaussians": result.n_gaussians,
        "summaries": result.summaries,
        "params": result.params,
        "config": _config_dict(result.config),
    })


def write_rollout_summary(path, summary, config):
    write_json(path, {
        "summary": dataclasses.asdict(summary),
        "config": _config_dict(config),
    })


def write_acquisition_log(path, log):
    write_json(path, {
        "budget": log.budget,
        "seed_views": list(log.seed_views),
        "selection": log.selection,
        "acquired": list(log.acquired),
        "d_bar_trajectory": list(log.d_bar_trajectory),
        "covered_round": log.covered_round,
        "rounds": [
            {
                "round": r.round,
                "candidates": list(r.candidates),
                "scores": list(r.scores),
                "selected": r.selected,
                "covered": r.covered,
                "d_bar": r.d_bar,
            }
            for r in log.rounds
        ],
    })

"""Figures, tables and occupancy dumps behind the reporting commands.

Every report lands as a document (YAML), a delimited table (CSV) and a
rendered figure (PNG); the spatial analyses add a flat binary occupancy
dump.  The dump format is fixed: magic, grid dims, origin, cell size,
then row-major cell bytes, so external tools can read it without this
package.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import yaml

from .allocation import AssemblyPlan
from .analysis import (
    CandidateGrid,
    GraspEnvelope,
    SweptVolume,
    Trajectory,
    check_collision,
    grasp_envelope,
    reach_and_placement,
    scene_table_height,
    swept_volume,
    trajectory_from_moves,
)
from .geometry import ShapeKind
from .kinematics import JointState
from .program import MoveJ, MoveL
from .scene import ResourceKind, Scene
from .trajectory import make_joint_move, make_linear_move
from .simulate import CycleResult, ShiftResult

OCC_MAGIC = b"OCC1"
_OCC_HEAD = struct.Struct("<4sIII3dd")  # magic, dims, origin mm, cell mm

ENVELOPE_CELL_MM = 25.0


# ---------------------------------------------------------------------------
# shared writers
# ---------------------------------------------------------------------------

def write_occupancy(path, origin, cell_size: float, cells: np.ndarray) -> Path:
    """Flat binary occupancy dump: header with dims, then row-major bytes."""
    path = Path(path)
    cells = np.ascontiguousarray(cells.astype(np.uint8))
    if cells.ndim != 3:
        raise ValueError(f"occupancy needs a 3-D grid, got {cells.ndim}-D")
    ox, oy, oz = (float(v) for v in origin)
    head = _OCC_HEAD.pack(OCC_MAGIC, *cells.shape, ox, oy, oz, float(cell_size))
    path.write_bytes(head + cells.tobytes(order="C"))
    return path


def read_occupancy(path) -> tuple[tuple[float, float, float], float, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < _OCC_HEAD.size or data[:4] != OCC_MAGIC:
        raise ValueError(f"{path}: not an occupancy dump")
    magic, nx, ny, nz, ox, oy, oz, cell = _OCC_HEAD.unpack_from(data)
    body = np.frombuffer(data, dtype=np.uint8, offset=_OCC_HEAD.size)
    if body.size != nx * ny * nz:
        raise ValueError(f"{path}: {body.size} cells for dims {(nx, ny, nz)}")
    return (ox, oy, oz), cell, body.reshape((nx, ny, nz))


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_doc(path, doc: dict) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


def _voxel_grid(volume: SweptVolume) -> tuple[tuple[float, float, float], np.ndarray]:
    """Dense grid over the volume's voxel set; origin shifts to its corner."""
    if not volume.voxels:
        return tuple(volume.origin), np.zeros((1, 1, 1), dtype=np.uint8)
    idx = np.array(sorted(volume.voxels), dtype=int)
    lo = idx.min(axis=0)
    span = idx.max(axis=0) - lo + 1
    cells = np.zeros(tuple(span), dtype=np.uint8)
    shifted = idx - lo
    cells[shifted[:, 0], shifted[:, 1], shifted[:, 2]] = 1
    origin = tuple(float(o + l * volume.voxel_size) for o, l in zip(volume.origin, lo))
    return origin, cells


# ---------------------------------------------------------------------------
# drawing
# ---------------------------------------------------------------------------

def _draw_layout(ax, scene: Scene) -> None:
    """Top-down footprint of every resource; orientation is ignored."""
    for r in scene.resources:
        x, y, _ = r.pose.position
        filled = r.kind is ResourceKind.FIXTURE
        style = {
            "fill": filled,
            "alpha": 0.35 if filled else 1.0,
            "edgecolor": "dimgray",
            "facecolor": "tab:blue" if filled else "none",
        }
        for s in r.shapes:
            if s.kind is ShapeKind.BOX:
                dx, dy = s.dimensions[0], s.dimensions[1]
                ax.add_patch(plt.Rectangle((x - dx / 2.0, y - dy / 2.0), dx, dy, **style))
            else:
                ax.add_patch(plt.Circle((x, y), s.dimensions[0], **style))
        if not r.shapes:
            ax.plot(x, y, "x", color="dimgray")
        ax.annotate(r.id, (x, y), fontsize=7, ha="center")
    bx, by, _ = scene.robot_base_pose().position
    ax.plot(bx, by, "o", color="tab:red", markersize=8)
    ax.set_aspect("equal")
    ax.set_xlabel("x (mm)")
    ax.set_ylabel("y (mm)")


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def _task_targets(scene: Scene) -> list:
    targets = []
    for t in scene.tasks:
        for pose in (t.pick, t.place):
            if pose is not None:
                targets.append(pose)
    if not targets:
        raise ValueError("scene defines no pick or place targets")
    return targets


def reach_report(scene: Scene, grid: CandidateGrid, out_dir, stem: str = "reach") -> dict:
    """Base placements from which every task target stays reachable."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    targets = _task_targets(scene)
    result = reach_and_placement(scene, targets, grid)

    rows = []
    for ix in range(result.shape[0]):
        for iy in range(result.shape[1]):
            for iz in range(result.shape[2]):
                c = grid.center((ix, iy, iz))
                rows.append([f"{c[0]:.1f}", f"{c[1]:.1f}", f"{c[2]:.1f}", int(result.cells[ix, iy, iz])])
    write_rows(out_dir / f"{stem}.csv", ["x_mm", "y_mm", "z_mm", "reachable"], rows)
    write_occupancy(out_dir / f"{stem}.occ", result.origin, result.cell_size, result.cells)

    fig, ax = plt.subplots(figsize=(7, 6))
    _draw_layout(ax, scene)
    flat = result.cells.any(axis=2)
    for ix in range(flat.shape[0]):
        for iy in range(flat.shape[1]):
            c = grid.center((ix, iy, 0))
            color = "tab:green" if flat[ix, iy] else "tab:red"
            ax.plot(c[0], c[1], "s", color=color, alpha=0.5, markersize=9)
    for p in targets:
        ax.plot(p.position[0], p.position[1], "+", color="black")
    ax.set_title(f"base placements reaching all {len(targets)} targets")
    _save(fig, out_dir / f"{stem}.png")

    doc = {
        "report": "reach",
        "targets": len(targets),
        "cells": int(np.prod(result.shape)),
        "reachable": result.reachable_count(),
        "cell_size_mm": grid.cell_size,
        "files": [f"{stem}.yaml", f"{stem}.csv", f"{stem}.occ", f"{stem}.png"],
    }
    write_doc(out_dir / f"{stem}.yaml", doc)
    return doc


def _program_moves(robot, program) -> list:
    """Kinematic moves the program commands, starting from home."""
    moves = []
    q = tuple(robot.home)
    for index, ins in enumerate(program.instructions):
        if isinstance(ins, MoveJ):
            moves.append(make_joint_move(robot, q, ins.target, ins.speed_scale))
            q = tuple(ins.target)
        elif isinstance(ins, MoveL):
            if not ins.joints:
                raise ValueError(f"instruction {index}: MoveL without joint solution")
            moves.append(make_linear_move(robot, q, ins.target, speed=ins.speed, q_end=ins.joints))
            q = tuple(ins.joints)
    return moves


def sweep_report(
    scene: Scene,
    program,
    out_dir,
    stem: str = "sweep",
    voxel_size: float = 10.0,
    walls=(),
) -> dict:
    """Voxelized swept volume of everything a program commands."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trajectory = trajectory_from_moves(_program_moves(scene.robot, program), walls=walls)
    volume = swept_volume(
        scene.robot, trajectory, base_pose=scene.robot_base_pose(), voxel_size=voxel_size
    )
    origin, cells = _voxel_grid(volume)
    write_occupancy(out_dir / f"{stem}.occ", origin, voxel_size, cells)
    lo, hi = volume.bounds()
    write_rows(
        out_dir / f"{stem}.csv",
        ["metric", "value"],
        [
            ["voxels", volume.count()],
            ["voxel_mm", voxel_size],
            ["volume_l", volume.count() * (voxel_size / 1000.0) ** 3 * 1000.0],
            ["min_x_mm", f"{lo[0]:.1f}"],
            ["min_y_mm", f"{lo[1]:.1f}"],
            ["min_z_mm", f"{lo[2]:.1f}"],
            ["max_x_mm", f"{hi[0]:.1f}"],
            ["max_y_mm", f"{hi[1]:.1f}"],
            ["max_z_mm", f"{hi[2]:.1f}"],
        ],
    )

    fig, ax = plt.subplots(figsize=(7, 6))
    _draw_layout(ax, scene)
    footprint = {}
    for vx, vy, vz in volume.voxels:
        key = (vx, vy)
        footprint[key] = max(footprint.get(key, 0), 1)
    xs = [volume.origin[0] + (vx + 0.5) * voxel_size for vx, _ in footprint]
    ys = [volume.origin[1] + (vy + 0.5) * voxel_size for _, vy in footprint]
    ax.plot(xs, ys, ".", color="tab:orange", markersize=2, alpha=0.6)
    ax.set_title(f"swept volume, {volume.count()} voxels at {voxel_size:g} mm")
    _save(fig, out_dir / f"{stem}.png")

    doc = {
        "report": "sweep",
        "moves": len(trajectory.moves),
        "duration_s": round(trajectory.duration_s, 3),
        "voxels": volume.count(),
        "voxel_mm": voxel_size,
        "files": [f"{stem}.yaml", f"{stem}.csv", f"{stem}.occ", f"{stem}.png"],
    }
    write_doc(out_dir / f"{stem}.yaml", doc)
    return doc


def collide_report(scene: Scene, out_dir, stem: str = "collide") -> dict:
    """Contacts at the scene's current behavior state."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    contacts = check_collision(scene)
    write_rows(
        out_dir / f"{stem}.csv",
        ["owner_a", "owner_b", "depth_mm"],
        [[c.owner_a, c.owner_b, f"{c.depth:.2f}"] for c in contacts],
    )
    pose_only = Trajectory((JointState(tuple(scene.behavior.joint_angles), 0.0),), ())
    volume = swept_volume(scene.robot, pose_only, base_pose=scene.robot_base_pose())
    origin, cells = _voxel_grid(volume)
    write_occupancy(out_dir / f"{stem}.occ", origin, volume.voxel_size, cells)

    fig, ax = plt.subplots(figsize=(7, 6))
    _draw_layout(ax, scene)
    for c in contacts:
        for owner in c.pair():
            r = next((res for res in scene.resources if res.id == owner), None)
            if r is not None:
                ax.plot(r.pose.position[0], r.pose.position[1], "X", color="tab:red", markersize=10)
    lines = [f"{c.owner_a} / {c.owner_b}: {c.depth:.1f} mm" for c in contacts]
    if lines:
        ax.text(0.02, 0.98, "\n".join(lines), transform=ax.transAxes,
                fontsize=7, va="top", bbox={"facecolor": "white", "alpha": 0.8})
    ax.set_title(f"{len(contacts)} contact(s) at current state")
    _save(fig, out_dir / f"{stem}.png")

    doc = {
        "report": "collide",
        "contacts": [
            {"a": c.owner_a, "b": c.owner_b, "depth_mm": round(float(c.depth), 2)}
            for c in contacts
        ],
        "files": [f"{stem}.yaml", f"{stem}.csv", f"{stem}.occ", f"{stem}.png"],
    }
    write_doc(out_dir / f"{stem}.yaml", doc)
    return doc


def envelope_report(scene: Scene, out_dir, stem: str = "envelope") -> dict:
    """Human grasp envelope against the scene's task points."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    envelope = grasp_envelope(scene.human, table_height=scene_table_height(scene))

    rows = []
    inside = 0
    points = []
    for t in scene.tasks:
        for which, pose in (("pick", t.pick), ("place", t.place)):
            if pose is None:
                continue
            ok = envelope.contains(pose.position)
            inside += int(ok)
            points.append((t.id, which, pose.position, ok))
            rows.append([t.id, which, f"{pose.position[0]:.1f}", f"{pose.position[1]:.1f}",
                         f"{pose.position[2]:.1f}", int(ok)])
    write_rows(out_dir / f"{stem}.csv", ["task", "point", "x_mm", "y_mm", "z_mm", "inside"], rows)

    cells, origin = _envelope_occupancy(envelope)
    write_occupancy(out_dir / f"{stem}.occ", origin, ENVELOPE_CELL_MM, cells)

    fig, ax = plt.subplots(figsize=(7, 6))
    _draw_layout(ax, scene)
    sx, sy, _ = envelope.shoulder
    circle = plt.Circle((sx, sy), envelope.radius, fill=False, color="tab:purple", linestyle="--")
    ax.add_patch(circle)
    fx, fy = envelope.facing[0], envelope.facing[1]
    ax.annotate("", (sx + fx * envelope.radius, sy + fy * envelope.radius), (sx, sy),
                arrowprops={"arrowstyle": "->", "color": "tab:purple"})
    for tid, which, p, ok in points:
        ax.plot(p[0], p[1], "o" if ok else "x", color="tab:green" if ok else "tab:red")
    ax.set_title(f"grasp envelope: {inside}/{len(points)} task points inside")
    _save(fig, out_dir / f"{stem}.png")

    doc = {
        "report": "envelope",
        "shoulder_mm": [round(v, 1) for v in envelope.shoulder],
        "radius_mm": round(envelope.radius, 1),
        "points": len(points),
        "inside": inside,
        "files": [f"{stem}.yaml", f"{stem}.csv", f"{stem}.occ", f"{stem}.png"],
    }
    write_doc(out_dir / f"{stem}.yaml", doc)
    return doc


def _envelope_occupancy(envelope: GraspEnvelope) -> tuple[np.ndarray, tuple[float, float, float]]:
    r = envelope.radius
    cell = ENVELOPE_CELL_MM
    s = np.asarray(envelope.shoulder)
    lo = s - r
    lo[2] = max(lo[2], envelope.min_z)
    hi = s + r
    shape = tuple(int(np.ceil((hi[a] - lo[a]) / cell)) for a in range(3))
    cells = np.zeros(shape, dtype=np.uint8)
    for ix in range(shape[0]):
        for iy in range(shape[1]):
            for iz in range(shape[2]):
                p = lo + (np.array([ix, iy, iz]) + 0.5) * cell
                cells[ix, iy, iz] = envelope.contains(p)
    return cells, tuple(float(v) for v in lo)


def cycle_report(scene: Scene, plan: AssemblyPlan, result: CycleResult, out_dir, stem: str = "cycle") -> dict:
    """Utilization timeline for one simulated cycle."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = result.report
    write_rows(
        out_dir / f"{stem}.csv",
        ["resource", "task", "start_s", "end_s", "trips"],
        [
            [e.resource, e.task_id, f"{e.start_s:.2f}", f"{e.end_s:.2f}", e.trips]
            for e in report.timeline
        ],
    )

    fig, ax = plt.subplots(figsize=(8, 3.2))
    resources = sorted({e.resource for e in report.timeline})
    colors = {r: c for r, c in zip(resources, ("tab:blue", "tab:orange", "tab:green"))}
    for e in report.timeline:
        y = resources.index(e.resource)
        ax.barh(y, e.end_s - e.start_s, left=e.start_s, height=0.5,
                color=colors.get(e.resource, "tab:gray"), edgecolor="white")
        ax.text(e.start_s + (e.end_s - e.start_s) / 2, y, e.task_id,
                ha="center", va="center", fontsize=7)
    for w in report.waits:
        y = resources.index(w.resource)
        ax.barh(y, w.wait_s, left=w.start_s, height=0.2, color="lightgray", hatch="//")
    ax.set_yticks(range(len(resources)), resources)
    ax.set_xlabel("time (s)")
    ax.set_title(f"cycle {report.cycle_s:.1f} s, " + ", ".join(
        f"{r} {report.utilization(r) * 100.0:.0f}%" for r in resources))
    _save(fig, out_dir / f"{stem}.png")

    doc = {
        "report": "cycle",
        "cycle_s": round(report.cycle_s, 2),
        "busy_s": {k: round(v, 2) for k, v in report.busy_s.items()},
        "waits": len(report.waits),
        "trips": report.trips,
        "files": [f"{stem}.yaml", f"{stem}.csv", f"{stem}.png"],
    }
    write_doc(out_dir / f"{stem}.yaml", doc)
    return doc


def shift_report(result: ShiftResult, out_dir, stem: str = "shift") -> dict:
    """Completions and cycle-time spread over one simulated shift."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_rows(
        out_dir / f"{stem}.csv",
        ["cycle", "duration_s"],
        [[i, f"{c:.3f}"] for i, c in enumerate(result.cycle_s)],
    )

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    if result.cycle_s:
        axes[0].hist(result.cycle_s, bins=24, color="tab:blue", alpha=0.8)
    axes[0].set_xlabel("cycle time (s)")
    axes[0].set_ylabel("cycles")
    axes[0].set_title(f"{result.completed} completed, mean {result.mean_cycle_s:.1f} s")
    ends = np.cumsum(result.cycle_s)
    axes[1].step(np.concatenate([[0.0], ends]) / 3600.0,
                 np.arange(0, result.completed + 1), where="post")
    axes[1].set_xlabel("shift time (h)")
    axes[1].set_ylabel("assemblies")
    axes[1].set_title(f"{result.force_trips} trips, {result.long_waits} long waits")
    _save(fig, out_dir / f"{stem}.png")

    doc = {
        "report": "shift",
        "shift_s": result.shift_s,
        "completed": result.completed,
        "mean_cycle_s": round(result.mean_cycle_s, 2),
        "force_trips": result.force_trips,
        "long_waits": result.long_waits,
        "utilization": {k: round(v, 3) for k, v in result.utilization.items()},
        "files": [f"{stem}.yaml", f"{stem}.csv", f"{stem}.png"],
    }
    write_doc(out_dir / f"{stem}.yaml", doc)
    return doc

"""Command-line entry points.

Each subcommand reads documents (YAML), writes its outputs under an
output directory, and prints one summary line per artifact so runs are
scriptable.  `serve` blocks running the HTTP API.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import yaml

from . import battery_pack
from .allocation import balance, normalize_weights, plan_from_document, plan_to_document
from .analysis import CandidateGrid
from .datalog import read_log
from .orchestrator import Orchestrator, TwinPhase
from .program import (
    default_motions,
    generate_program,
    parse,
    serialize,
    text_projection,
)
from .scene import Scene, load_scene
from .simulate import (
    run_cycle,
    simulate_shift,
    trace_lines,
    variation_from_document,
)
from .trajectory import VirtualWall
from .twinlink import PhysicalEmulator, TcpTransport, TwinLinkError

ENDPOINT_ENV = "TWINCELL_ENDPOINT"
DATA_DIR_ENV = "TWINCELL_DATA_DIR"


def _load_scene(path: str | None) -> Scene:
    if path is None:
        return battery_pack.load()
    return load_scene(Path(path))


def _load_doc(path: str) -> dict:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise SystemExit(f"{path}: expected a mapping document")
    return doc


def _write_doc(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    print(path)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data_dir(args) -> Path:
    raw = args.data_dir or os.environ.get(DATA_DIR_ENV) or "."
    d = Path(raw)
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    from . import report

    scene = _load_scene(args.scene)
    out = _out_dir(args)
    if args.what == "reach":
        base = scene.robot_base_pose().position
        nx, ny, nz = args.grid
        origin = (
            base[0] - (nx - 1) / 2.0 * args.cell,
            base[1] - (ny - 1) / 2.0 * args.cell,
            base[2],
        )
        grid = CandidateGrid(origin=origin, shape=(nx, ny, nz), cell_size=args.cell)
        doc = report.reach_report(scene, grid, out)
        print(f"reach: {doc['reachable']}/{doc['cells']} placements reach all {doc['targets']} targets")
    elif args.what == "sweep":
        plan = balance(scene)
        build = generate_program(scene, plan, default_motions(scene, plan))
        doc = report.sweep_report(scene, build.program, out, voxel_size=args.voxel)
        print(f"sweep: {doc['voxels']} voxels over {doc['duration_s']} s of motion")
    elif args.what == "collide":
        doc = report.collide_report(scene, out)
        print(f"collide: {len(doc['contacts'])} contact(s)")
    else:
        doc = report.envelope_report(scene, out)
        print(f"envelope: {doc['inside']}/{doc['points']} task points inside")
    for name in doc["files"]:
        print(out / name)
    return 0


# ---------------------------------------------------------------------------
# allocate / simulate
# ---------------------------------------------------------------------------

def cmd_allocate(args) -> int:
    scene = _load_scene(args.scene)
    weights = normalize_weights(_load_doc(args.weights)) if args.weights else None
    plan = balance(scene, weights=weights)
    _write_doc(Path(args.out), plan_to_document(plan))
    for a in plan.assignments:
        print(f"  {a.task_id:<16s} {a.resource:<6s} {a.start_s:8.2f} +{a.duration_s:.2f} s")
    print(f"allocate: cycle {plan.cycle_s:.2f} s")
    return 0


def cmd_simulate(args) -> int:
    scene = _load_scene(args.scene)
    plan = plan_from_document(_load_doc(args.plan)) if args.plan else balance(scene)
    variation = variation_from_document(_load_doc(args.variation)) if args.variation else None
    out = _out_dir(args)
    started = time.perf_counter()
    if args.what == "cycle":
        result = run_cycle(scene, plan, variation=variation, seed=args.seed)
        trace_path = out / "cycle_trace.txt"
        trace_path.write_text("\n".join(trace_lines(result.trace)) + "\n")
        from .report import cycle_report

        doc = cycle_report(scene, plan, result, out)
        print(trace_path)
        print(f"cycle: {result.report.cycle_s:.2f} s in {time.perf_counter() - started:.2f} s wall")
    else:
        result = simulate_shift(scene, plan, shift_s=args.shift_s, variation=variation, seed=args.seed)
        from .report import shift_report

        doc = shift_report(result, out)
        print(
            f"shift: {result.completed} completed, {result.force_trips} trips, "
            f"{result.long_waits} long waits in {time.perf_counter() - started:.2f} s wall"
        )
    for name in doc["files"]:
        print(out / name)
    return 0


# ---------------------------------------------------------------------------
# program
# ---------------------------------------------------------------------------

def _write_program(path: Path, program) -> None:
    data = serialize(program)
    path.write_bytes(data)
    txt = path.with_suffix(".txt")
    txt.write_text(text_projection(program))
    print(path)
    print(txt)


def cmd_program(args) -> int:
    if args.what == "gen":
        scene = _load_scene(args.scene)
        plan = plan_from_document(_load_doc(args.plan)) if args.plan else balance(scene)
        build = generate_program(scene, plan, default_motions(scene, plan))
        _write_program(Path(args.out), build.program)
        print(f"program: {len(build.program.instructions)} instructions, version {build.program.version}")
    elif args.what == "show":
        program = parse(Path(args.program).read_bytes())
        sys.stdout.write(text_projection(program))
    else:
        scene = _load_scene(args.scene)
        program = parse(Path(args.program).read_bytes())
        point = tuple(args.point)
        normal = tuple(args.normal)
        from .program import apply_virtual_wall

        guarded = apply_virtual_wall(program, VirtualWall(point, normal), scene.robot)
        _write_program(Path(args.out), guarded)
        print(f"program: wall at {point} applied, version {guarded.version}")
    return 0


# ---------------------------------------------------------------------------
# emulate
# ---------------------------------------------------------------------------

def cmd_emulate(args) -> int:
    scene = _load_scene(args.scene)
    plan = plan_from_document(_load_doc(args.plan)) if args.plan else balance(scene)
    if args.program:
        program = parse(Path(args.program).read_bytes())
        from .program import ProgramBuild, derive_layout

        build = ProgramBuild(program, derive_layout(scene, plan, program))
    else:
        build = generate_program(scene, plan, default_motions(scene, plan))
    variation = variation_from_document(_load_doc(args.variation)) if args.variation else None
    data_dir = _data_dir(args)
    log_path = data_dir / f"{args.run_id}.log"
    emulator = PhysicalEmulator(scene, plan, build, variation=variation, seed=args.seed)
    run = emulator.run(args.cycles, log_path=log_path, run_id=args.run_id)

    endpoint = os.environ.get(ENDPOINT_ENV)
    if endpoint:
        host, _, port = endpoint.rpartition(":")
        transport = TcpTransport.connect(host or "127.0.0.1", int(port))
        _stream_frames(transport, run, accelerated=args.accelerated)
        transport.close()
        print(f"emulate: streamed {len(run.frames)} frames to {endpoint}")
    else:
        frames_path = data_dir / f"{args.run_id}.frames"
        frames_path.write_bytes(run.frame_bytes())
        print(frames_path)
    print(log_path)
    trips = sum(1 for r in run.records if r.kind == 2)
    print(f"emulate: {run.cycles} cycles, {trips} trips, {run.duration_us / 1e6:.1f} s of cell time")
    return 0


def _stream_frames(transport, run, accelerated: bool) -> None:
    from .protocol import Heartbeat, encode_frame

    clock = time.perf_counter()
    start_us = None
    for message in run.frames:
        if not accelerated:
            t_us = message.uptime_ms * 1000 if isinstance(message, Heartbeat) else message.t_us
            if start_us is None:
                start_us = t_us
            lead = (t_us - start_us) / 1e6 - (time.perf_counter() - clock)
            if lead > 0:
                time.sleep(lead)
        transport.send(encode_frame(message))


# ---------------------------------------------------------------------------
# log
# ---------------------------------------------------------------------------

def cmd_log(args) -> int:
    from .datalog import predict_throughput, summarize

    data_dir = _data_dir(args)
    path = data_dir / f"{args.run}.log"
    if not path.exists():
        raise SystemExit(f"no log for run {args.run!r} at {path}")
    log = read_log(path)
    summary = summarize(log.records)
    if args.what == "summarize":
        doc = {
            "run": log.run_id,
            "records": len(log.records),
            "truncated": log.truncated,
            "completed": summary.completed,
            "mean_cycle_s": round(summary.mean_cycle_s, 3) if summary.completed else None,
            "force_trips": summary.force_trips,
            "waits": summary.waits,
            "long_waits": summary.long_waits,
        }
        print(yaml.safe_dump(doc, sort_keys=False), end="")
        if args.export:
            kinds = {1: "cycle", 2: "trip", 3: "wait", 4: "note"}
            with open(args.export, "w") as fh:
                for r in log.records:
                    fh.write(
                        f"{r.serial}\t{r.t_us}\t{kinds.get(r.kind, r.kind)}\t{r.value:.6f}\t{r.label}\n"
                    )
            print(args.export)
    else:
        predicted = predict_throughput(summary, shift_s=args.shift_s)
        print(f"predict: {predicted} assemblies per {args.shift_s:.0f} s shift")
    return 0


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------

def cmd_serve(args) -> int:
    from .server import ReplaySpec, serve

    scene = _load_scene(args.scene)
    orch = Orchestrator(
        scene,
        variation=battery_pack.variation() if args.scene is None else None,
        seed=args.seed,
        phase=TwinPhase.OPERATION,
    )
    replay = None
    if args.replay:
        replay = ReplaySpec(
            cycles=args.replay_cycles,
            seed=args.replay_seed,
            run_id=args.replay_run,
            time_scale=args.speed,
        )
    serve(orch, listen=args.listen, data_dir=args.data_dir, replay=replay)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _xyz(text: str) -> tuple[float, float, float]:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"{text!r}: expected x,y,z")
    return tuple(parts)


def _grid(text: str) -> tuple[int, int, int]:
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"{text!r}: expected nx,ny,nz")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twincell", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="geometric and ergonomic reports")
    analyze.add_argument("what", choices=["reach", "sweep", "collide", "envelope"])
    analyze.add_argument("--scene", help="scene document (defaults to the packaged cell)")
    analyze.add_argument("--out", default="reports", help="output directory")
    analyze.add_argument("--grid", type=_grid, default=(5, 5, 1), help="reach grid nx,ny,nz")
    analyze.add_argument("--cell", type=float, default=100.0, help="reach grid cell size, mm")
    analyze.add_argument("--voxel", type=float, default=10.0, help="sweep voxel size, mm")
    analyze.set_defaults(fn=cmd_analyze)

    allocate = sub.add_parser("allocate", help="classify tasks and balance the line")
    allocate.add_argument("--scene")
    allocate.add_argument("--weights", help="criterion weights document")
    allocate.add_argument("--out", default="plan.yaml")
    allocate.set_defaults(fn=cmd_allocate)

    simulate = sub.add_parser("simulate", help="discrete-event simulation")
    simulate.add_argument("what", choices=["cycle", "shift"])
    simulate.add_argument("--scene")
    simulate.add_argument("--plan", help="plan document (defaults to balancing the scene)")
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--variation", help="variation model document")
    simulate.add_argument("--shift-s", type=float, default=28800.0)
    simulate.add_argument("--out", default="reports")
    simulate.set_defaults(fn=cmd_simulate)

    program = sub.add_parser("program", help="robot program files")
    program.add_argument("what", choices=["gen", "show", "wall"])
    program.add_argument("--scene")
    program.add_argument("--plan")
    program.add_argument("--program", help="program file (show/wall)")
    program.add_argument("--point", type=_xyz, help="wall point x,y,z (mm)")
    program.add_argument("--normal", type=_xyz, help="wall normal x,y,z")
    program.add_argument("--out", default="cell_program.twp")
    program.set_defaults(fn=cmd_program)

    emulate = sub.add_parser("emulate", help="run the physical-cell emulator")
    emulate.add_argument("--scene")
    emulate.add_argument("--plan")
    emulate.add_argument("--program", help="program file (defaults to generating one)")
    emulate.add_argument("--variation")
    emulate.add_argument("--seed", type=int, default=0)
    emulate.add_argument("--cycles", type=int, default=30)
    emulate.add_argument("--run-id", default="emulated")
    emulate.add_argument("--accelerated", action="store_true", help="no real-time pacing")
    emulate.add_argument("--data-dir", help=f"log directory (or ${DATA_DIR_ENV})")
    emulate.set_defaults(fn=cmd_emulate)

    log = sub.add_parser("log", help="run telemetry repository")
    log.add_argument("what", choices=["summarize", "predict"])
    log.add_argument("--run", required=True)
    log.add_argument("--data-dir", help=f"log directory (or ${DATA_DIR_ENV})")
    log.add_argument("--export", help="write records as tab-separated lines")
    log.add_argument("--shift-s", type=float, default=28800.0)
    log.set_defaults(fn=cmd_log)

    serve_p = sub.add_parser("serve", help="HTTP API for the cell twin")
    serve_p.add_argument("--scene")
    serve_p.add_argument("--seed", type=int, default=battery_pack.EMULATOR_SEED)
    serve_p.add_argument("--listen", help="host:port (or $TWINCELL_LISTEN)")
    serve_p.add_argument("--data-dir", help=f"log directory (or ${DATA_DIR_ENV})")
    serve_p.add_argument("--replay", action="store_true", help="emulate a run at startup and stream it")
    serve_p.add_argument("--replay-cycles", type=int, default=30)
    serve_p.add_argument("--replay-seed", type=int, default=battery_pack.EMULATOR_SEED)
    serve_p.add_argument("--replay-run", default="shift-1")
    serve_p.add_argument("--speed", type=float, default=0.0, help="cell seconds per wall second; <= 0 replays flat out")
    serve_p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, TwinLinkError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

"""Command line driver: ``fracms {run-fine,run-gmsfem,export-field,sweep}``.

Exit codes: 0 success, 1 numerical failure, 2 input error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy.linalg as la

from . import config as C
from .coarse_solver import CoarseSolveError, CoarseSolver
from .fields import convert, load_trajectory, read_field, save_trajectory, write_field
from .fine_solver import SolverError, run
from .mesh import MeshError
from .metrics import ErrorEvaluator, ErrorReport, MetricsError
from .offline import construct_offline_space
from .online import run_online
from .physics import GAS_CONSTANT, PhysicsDomainError

log = logging.getLogger("fracms")

EXIT_OK, EXIT_NUMERIC, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _outdir(cfg) -> Path:
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(cfg, out: Path) -> None:
    (out / "resolved_config.toml").write_text(C.dumps(cfg))


def _export(out: Path, prefix: str, mesh, steps, times, states, cfg) -> list[Path]:
    kind = cfg["output.field"]
    paths = []
    for n in steps:
        p = out / f"{prefix}_step{n:04d}.txt"
        write_field(p, mesh.nodes, convert(states[n], kind, cfg["physics.R"], cfg["physics.T"]), kind)
        paths.append(p)
    return paths


def cmd_run_fine(cfg) -> dict:
    out = _outdir(cfg)
    _write_resolved(cfg, out)
    mesh = C.build_mesh(cfg)
    model, grid, bc = C.build_model(cfg), C.build_time(cfg), C.build_bc(cfg, mesh)
    c0 = np.full(mesh.n_nodes, cfg["initial.c0"])
    t0 = time.perf_counter()
    traj = run(c0, mesh, model, bc, grid)
    log.info("fine run: %d nodes, %d steps, %.2f s", mesh.n_nodes, grid.n_steps, time.perf_counter() - t0)
    times = np.array([s.t for s in traj])
    states = np.array([s.c for s in traj])
    save_trajectory(out / "reference.npz", mesh.nodes, times, states)
    _export(out, "fine", mesh, C.export_steps(cfg, grid), times, states, cfg)
    print(f"fine: nodes={mesh.n_nodes} steps={grid.n_steps} reference={out / 'reference.npz'}")
    return {"reference": out / "reference.npz"}


def cmd_run_gmsfem(cfg, reference=None) -> dict:
    ref = None
    if reference is not None:
        ref = load_trajectory(reference)
    out = _outdir(cfg)
    _write_resolved(cfg, out)
    mesh = C.build_mesh(cfg)
    model, tgrid, bc = C.build_model(cfg), C.build_time(cfg), C.build_bc(cfg, mesh)
    if ref is not None and ref["states"].shape != (tgrid.n_steps + 1, mesh.n_nodes):
        raise InputError(f"reference {reference} has shape {ref['states'].shape}, "
                         f"expected {(tgrid.n_steps + 1, mesh.n_nodes)}")
    grid = C.build_grid(cfg, mesh)
    c0 = np.full(mesh.n_nodes, cfg["initial.c0"])
    t0 = time.perf_counter()
    build = construct_offline_space(
        mesh, grid, model, c_ref=c0, M_off=cfg["offline.M_off"], snapshots=cfg["offline.snapshots"],
        M_i=cfg["offline.M_i"], layers=cfg["offline.layers"], seed=cfg["offline.seed"],
        variant=cfg["offline.variant"], tau=tgrid.tau, include_constant=cfg["offline.include_constant"],
    )
    build.space.save(out / "offline_space.npz")
    log.info("offline space: dim %d, snapshot ratio %.3f, %.2f s", build.space.dim, build.snapshot_ratio,
             time.perf_counter() - t0)

    solver = CoarseSolver(mesh, model, bc, tgrid.tau, build.space)
    policy = C.build_policy(cfg)
    if policy is None:
        states = [solver.initial_state(c0)]
        dims = [solver.dim]
        for _ in range(tgrid.n_steps):
            states.append(solver.step(states[-1]))
            dims.append(solver.dim)
        enrichments = []
    else:
        res = run_online(solver, policy, build.neighborhoods, c0, tgrid.n_steps)
        states, dims, enrichments = res.states, res.dims, res.enrichments
        res.write_indicator_log(out / "indicators.csv")
    times = np.array([s.t for s in states])
    fields = np.array([s.c for s in states])
    save_trajectory(out / "coarse.npz", mesh.nodes, times, fields, dims)
    _export(out, "coarse", mesh, C.export_steps(cfg, tgrid), times, fields, cfg)

    summary = {"dim": dims[-1], "snapshot_ratio": build.snapshot_ratio, "updates": len(enrichments)}
    if ref is not None:
        ev = ErrorEvaluator(mesh, model, ref["states"])
        report = ErrorReport(metadata={"M_off": cfg["offline.M_off"], "M_i": cfg["offline.M_i"],
                                       "m": cfg["offline.layers"], "online": policy is not None})
        for n, (st, d) in enumerate(zip(states, dims)):
            if n == 0:
                continue
            l2, h1 = ev(n, st.c)
            report.add(n, st.t, d, l2, h1)
        report.write_csv(out / "errors.csv")
        summary.update(l2=report.final.l2_pct, h1=report.final.h1_pct)
        print(f"M_off={cfg['offline.M_off']} dim={dims[-1]} L2a={report.final.l2_pct:.4f}% "
              f"H1a={report.final.h1_pct:.4f}%")
    else:
        print(f"M_off={cfg['offline.M_off']} dim={dims[-1]} (no reference, errors not computed)")
    return summary


def cmd_export_field(state, fmt, step=None, output=None, R=GAS_CONSTANT, T=413.0) -> Path:
    state = Path(state)
    if fmt not in ("concentration", "pressure"):
        raise InputError(f"unknown format {fmt!r}; expected concentration or pressure")
    if state.suffix == ".npz":
        traj = load_trajectory(state)
        n = len(traj["states"]) - 1 if step is None else step
        if not 0 <= n < len(traj["states"]):
            raise InputError(f"step {n} outside the stored range 0..{len(traj['states']) - 1}")
        nodes, values = traj["nodes"], traj["states"][n]
    else:
        nodes, values, kind = read_field(state)
        if kind != "concentration" and fmt == "pressure":
            raise InputError(f"{state} already holds {kind}")
    out = Path(output) if output else state.with_name(f"{state.stem}_{fmt}.txt")
    write_field(out, nodes, convert(values, fmt, R, T), fmt)
    print(out)
    return out


def _sweep_entry(args):
    cfg, reference = args
    return cmd_run_gmsfem(cfg, reference)


def cmd_sweep(cfg, reference=None, jobs: int = 1) -> list:
    base = _outdir(cfg)
    _write_resolved(cfg, base)
    if reference is None:
        fine_cfg = dict(cfg, **{"output.dir": str(base / "fine")})
        reference = cmd_run_fine(fine_cfg)["reference"]
    key = cfg["sweep.key"]
    entries = []
    for v in cfg["sweep.values"]:
        sub = C.resolve({**cfg, key: v, "output.dir": str(base / f"{key}={v}")})
        entries.append((sub, reference))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_sweep_entry, entries))
    else:
        results = [_sweep_entry(e) for e in entries]
    with open(base / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([key, "dim", "L2a_pct", "H1a_pct"])
        for v, r in zip(cfg["sweep.values"], results):
            w.writerow([v, r["dim"], f"{r['l2']:.10g}", f"{r['h1']:.10g}"])
    print(f"{key:>16} {'dim':>6} {'L2a %':>10} {'H1a %':>10}")
    for v, r in zip(cfg["sweep.values"], results):
        print(f"{v!s:>16} {r['dim']:>6} {r['l2']:>10.4f} {r['h1']:>10.4f}")
    return results


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracms", description="Multiscale simulation of gas transport in fractured shale.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run-fine", "run-gmsfem", "sweep"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int, help="overrides offline.seed")
        if name != "run-fine":
            s.add_argument("--reference", help="fine trajectory (reference.npz) for error tables")
        if name == "sweep":
            s.add_argument("--jobs", type=int, default=1)
    e = sub.add_parser("export-field")
    e.add_argument("--state", required=True, help="trajectory .npz or field text file")
    e.add_argument("--format", default="concentration")
    e.add_argument("--step", type=int)
    e.add_argument("--output")
    e.add_argument("--config", help="takes R and T from physics.* for pressure output")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "export-field":
            R, T = GAS_CONSTANT, 413.0
            if args.config:
                cfg = C.load_config(args.config)
                R, T = cfg["physics.R"], cfg["physics.T"]
            cmd_export_field(args.state, args.format, args.step, args.output, R, T)
            return EXIT_OK
        overrides = {} if args.seed is None else {"offline.seed": args.seed}
        cfg = C.load_config(args.config, overrides)
        if args.command == "run-fine":
            cmd_run_fine(cfg)
        elif args.command == "run-gmsfem":
            cmd_run_gmsfem(cfg, args.reference)
        else:
            if args.jobs < 1:
                raise InputError("--jobs must be at least 1")
            cmd_sweep(cfg, args.reference, args.jobs)
    except (SolverError, CoarseSolveError, PhysicsDomainError, MetricsError, la.LinAlgError,
            FloatingPointError) as exc:
        print(f"fracms: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, C.ConfigError, MeshError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"fracms: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

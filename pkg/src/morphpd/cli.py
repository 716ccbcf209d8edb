"""Command-line entry point and the scenario run driver.

Usage::

    morphpd run --config branch_plate_desk --out runs/bp [--criterion bond|strength] [--max-steps N]
    morphpd validate --config my.ini
    morphpd speeds --config branch_plate
    morphpd scenarios list
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .adaptivity import centroid_stress, von_mises
from .errors import ConfigError, MorphPDError, ParameterError
from .integrator import Simulation
from .output import crack_series, extract_crack_tips, write_snapshot, write_timing

log = logging.getLogger("morphpd")

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 1, 2
_CRITERIA = {"bond": "broken_bond", "strength": "strength"}


def find_config(name):
    """A path, or the name of a bundled scenario (with or without .ini)."""
    from .scenarios import builtin_path

    p = Path(name)
    if p.exists():
        return p
    stem = name[:-4] if name.endswith(".ini") else name
    q = builtin_path(f"{stem}.ini")
    if q.is_file():
        return Path(str(q))
    raise ConfigError(f"no config file or bundled scenario named '{name}'")


def crack_seeds(cfg):
    """Where cracks are expected to start: initial flags and an interior notch end."""
    seeds = [(x, y) for x, y, _, _ in cfg.criterion.initial_flags]
    if cfg.geometry.notch:
        seeds.append(tuple(cfg.geometry.notch[2:]))
    return seeds


@dataclass
class RunResult:
    sim: Simulation
    series: object
    wall_time: float
    phi: np.ndarray
    snapshots: list = field(default_factory=list)
    resolved: dict = field(default_factory=dict)


def run_scenario(cfg, out=None, max_steps=None, criterion=None, snapshots=None, observers=(), progress=False):
    """Run a config; writes snapshots, crack_series.csv, timing.csv and events.csv into ``out``."""
    if criterion is not None:
        if criterion not in _CRITERIA:
            raise ConfigError(f"criterion must be one of {', '.join(_CRITERIA)}")
        cfg.criterion.mode = _CRITERIA[criterion]
    mesh = cfgmod.build_mesh(cfg)
    problem = cfgmod.problem_from_config(cfg, mesh)
    resolved = cfgmod.resolved_values(cfg, mesh)
    out = Path(out) if out is not None else None
    write_vtk = cfg.output.snapshots if snapshots is None else snapshots
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfgmod.write_resolved(cfg, out / "resolved.ini", mesh)

    t_start = time.perf_counter()
    sim = Simulation(problem, observers)
    n_steps = int(round(problem.t_end / problem.dt))
    if max_steps is not None:
        n_steps = min(n_steps, int(max_steps))
    every = cfg.output.every
    seeds = crack_seeds(cfg)
    min_branch = 4.0 * problem.material.delta
    steps, times, tips, files = [], [], [], []
    phi = np.zeros(sim.mesh.n_elements)

    def sample():
        nonlocal phi
        st = sim.state
        phi = sim.damage()
        steps.append(st.step)
        times.append(st.t)
        tips.append(extract_crack_tips(phi, sim.mesh, cfg.output.phi_threshold, seeds, min_branch))
        if out is not None and write_vtk:
            sv = von_mises(centroid_stress(sim.mesh, st.u_curr, sim.element_stiffness()))
            path = out / f"snapshot_{st.step:06d}.vtk"
            write_snapshot(path, sim.mesh, st.u_curr, phi, sim.alpha_elem, sv, f"{cfg.name} step {st.step}")
            files.append(path)

    sample()
    while sim.state.step < n_steps:
        sim.advance()
        if sim.state.step % every == 0 or sim.state.step == n_steps:
            sample()
            if progress:
                log.info("step %d/%d  dofs %d  broken %d  tips %d", sim.state.step, n_steps, sim.mesh.n_dofs,
                         sim.n_broken, len(tips[-1]))
    wall = time.perf_counter() - t_start
    series = crack_series(steps, times, tips, every * problem.dt)
    if out is not None:
        series.write_csv(out / "crack_series.csv")
        write_timing(out / "timing.csv", sim.records)
        sim.events.write(out / "events.csv")
    return RunResult(sim, series, wall, phi, files, resolved)


# -- commands ---------------------------------------------------------------


def _load(args):
    return cfgmod.load_config(find_config(args.config), resolve=False)


def cmd_run(args):
    cfg = _load(args)
    res = run_scenario(cfg, args.out, args.max_steps, args.criterion, progress=args.verbose)
    sim = res.sim
    print(f"{cfg.name}: {sim.state.step} steps, t = {sim.state.t:.4g} s, wall {res.wall_time:.1f} s")
    print(f"broken bonds {sim.n_broken}, PD dofs {sim.pd_dofs} of {sim.mesh.n_dofs}, "
          f"max tips {int(res.series.tip_counts.max(initial=0))}")
    return EXIT_OK


def cmd_validate(args):
    cfg = _load(args)
    vals = cfgmod.validate(cfg)
    print(f"{cfg.name}: valid")
    for k, v in vals.items():
        print(f"  {k} = {v:.6g}" if isinstance(v, float) else f"  {k} = {v}")
    return EXIT_OK


def cmd_speeds(args):
    from .integrator import critical_dt, wave_speeds

    cfg = _load(args)
    mat = cfgmod.material_params(cfg)
    ws = wave_speeds(mat.E, mat.nu, mat.rho)
    mesh = cfgmod.build_mesh(cfg)
    print(f"C    = {ws.C:.4e} mm/s")
    print(f"C_S  = {ws.C_S:.4e} mm/s")
    print(f"C_R  = {ws.C_R:.4e} mm/s")
    print(f"dt_cr = {critical_dt(mesh, mat.E, mat.rho):.4e} s  (L = {mesh.min_edge:.4g} mm)")
    return EXIT_OK


def cmd_scenarios(args):
    from .scenarios import builtin_files

    for path in builtin_files():
        cfg = cfgmod.load_config(path, resolve=False)
        print(f"{cfg.name:26s} {cfg.description}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="morphpd", description="Adaptive PD/FEM dynamic fracture runs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("--config", required=True, help="config file or bundled scenario name")
    r.add_argument("--out", required=True)
    r.add_argument("--criterion", choices=sorted(_CRITERIA))
    r.add_argument("--max-steps", type=int)
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check a config and print resolved values")
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_validate)
    s = sub.add_parser("speeds", help="print wave speeds and the critical time step")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_speeds)
    sc = sub.add_parser("scenarios", help="bundled scenarios")
    sc.add_argument("action", choices=["list"])
    sc.set_defaults(func=cmd_scenarios)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except MorphPDError as exc:
        print(f"aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())

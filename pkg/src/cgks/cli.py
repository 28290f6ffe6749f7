"""Command-line surface: run, convergence, probe, meshgen."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import cases, io, mesh as meshmod, reconstruction, solver
from .reconstruction import WenoConfig
from .timestep import TimeController

log = logging.getLogger("cgks")


def build_case_setup(cfg: io.RunConfig):
    """Resolve a RunConfig against the case catalog."""
    catalog = cases.case_catalog()
    if cfg.case is None:
        raise io.ConfigError("config must name a case (key 'case')")
    if cfg.case not in catalog:
        raise io.ConfigError(
            f"unknown case {cfg.case!r}; available: {', '.join(sorted(catalog))}"
        )
    case = catalog[cfg.case]
    if cfg.freestream is not None:
        state = cases.prim_state(*(float(v) for v in cfg.freestream.split(",")), case.gamma)
        case.field = cases.UniformField(state)
        if "inflow" in case.bc_params:
            case.bc_params["inflow"] = {"state": state}
    tags = list(case.tags)
    for i, key in enumerate(("bc_left", "bc_right", "bc_bottom", "bc_top")):
        v = getattr(cfg, key)
        if v is not None:
            tags[i] = v
    case.tags = tuple(tags)
    return case


def make_simulation(case, cfg: io.RunConfig, mesh=None):
    if mesh is None:
        if cfg.mesh_file:
            mesh = meshmod.load_mesh(cfg.mesh_file)
        else:
            mesh = case.build_mesh(h=cfg.h, kind=cfg.mesh_kind, seed=cfg.seed)
    ctx = reconstruction.build_operators(
        mesh, cfg.degree, cfg.q, grad_weight=cfg.grad_weight
    )
    cfl = cfg.cfl if cfg.cfl is not None else case.cfl
    ctrl = TimeController(cfl=cfl, dt_fixed=cfg.dt_fixed)
    if cfg.dt_law and cfg.dt_law != "cfl":
        coef, power = (float(v) for v in cfg.dt_law.split(":")[1].split(","))
        ctrl.dt_fixed = coef * (cfg.h or case.h) ** power
    weno = WenoConfig(c_large=cfg.weno_c, power=cfg.weno_power, eps=cfg.weno_eps)
    sim = solver.Simulation(
        mesh,
        gamma=cfg.gamma if cfg.gamma is not None else case.gamma,
        viscosity=cfg.viscosity if cfg.viscosity is not None else case.viscosity,
        weno=weno,
        nonlinear=cfg.reconstruction == "nonlinear",
        ctrl=ctrl,
        bc_params=case.bc_params,
        ctx=ctx,
    )
    W, GX, GY = solver.initialize(mesh, case)
    sim.W, sim.GX, sim.GY = W, GX, GY
    return sim


def cmd_run(args):
    cfg = io.parse_config(args.config)
    case = build_case_setup(cfg)
    sim = make_simulation(case, cfg)
    t_end = cfg.t_end if cfg.t_end is not None else case.t_end
    os.makedirs(cfg.output_dir, exist_ok=True)
    t0 = time.time()
    state = sim.run(t_end, max_steps=cfg.max_steps)
    wall = time.time() - t0
    print(f"{case.id}: t={state.t:.6g} in {state.step} steps ({wall:.1f}s)")

    io.write_field(
        os.path.join(cfg.output_dir, f"{case.id}_final.vtk"), sim.mesh, state.W, sim.gamma
    )
    io.save_state(
        os.path.join(cfg.output_dir, f"{case.id}_final.npz"),
        sim.mesh, state.W, state.GX, state.GY, sim.gamma, state.t,
    )
    io.write_conservation(
        os.path.join(cfg.output_dir, f"{case.id}_conservation.csv"), state.totals
    )
    if cfg.probe:
        line = tuple(float(v) for v in cfg.probe.split(","))
        coeffs = reconstruction.reconstruct(
            sim.ctx, sim.W, sim.GX, sim.GY, sim.weno, nonlinear=sim.nonlinear
        )
        io.write_probe(
            os.path.join(cfg.output_dir, f"{case.id}_probe.csv"),
            sim.mesh, coeffs, sim.ctx.degree, sim.gamma, line, cfg.probe_samples,
        )
    audit = solver.conservation_audit(state.totals, boundary_open=True)
    print("max relative drift:", " ".join(f"{d:.3e}" for d in audit["drift"]))
    return 0


def cmd_convergence(args):
    catalog = cases.case_catalog()
    case = catalog[args.case]
    hs = []
    for tok in args.meshes.split(","):
        tok = tok.strip()
        hs.append(1.0 / float(tok.split("/")[1]) if "/" in tok else float(tok))
    cfg = io.RunConfig(degree=args.degree, reconstruction=args.reconstruction)
    t_end = args.t_end if args.t_end is not None else case.t_end
    if args.cfl is not None:
        case.cfl = args.cfl
    errs1, errsi = [], []
    for h in hs:
        cfg.h = h
        cfg.mesh_kind = args.kind
        sim = make_simulation(case, cfg)
        state = sim.run(t_end)
        ref = cases.exact_cell_averages(
            sim.mesh,
            lambda x, y: cases.advected_sine_field(sim.gamma, t=state.t).value(x, y)[..., 0],
        )
        l1, linf = cases.error_norms(state.W[: sim.mesh.ncells, 0], ref, sim.mesh)
        errs1.append(l1)
        errsi.append(linf)
    o1 = [""] + [f"{v:.2f}" for v in cases.convergence_order(errs1, hs)]
    oi = [""] + [f"{v:.2f}" for v in cases.convergence_order(errsi, hs)]
    print(f"{'h':>10} {'L1 error':>12} {'order':>6} {'Linf error':>12} {'order':>6}")
    for k, h in enumerate(hs):
        print(
            f"{h:>10.5f} {errs1[k]:>12.4e} {o1[k]:>6} {errsi[k]:>12.4e} {oi[k]:>6}"
        )
    return 0


def cmd_probe(args):
    mesh, W, GX, GY, gamma, t = io.load_state(args.state)
    ctx = reconstruction.build_operators(mesh, args.degree, 2)
    coeffs = reconstruction.reconstruct(ctx, W, GX, GY, WenoConfig())
    line = tuple(float(v) for v in args.line.split(","))
    io.write_probe(args.output, mesh, coeffs, args.degree, gamma, line, args.samples)
    print(f"probe written to {args.output}")
    return 0


def cmd_meshgen(args):
    domain = tuple(float(v) for v in args.domain.split(","))
    tags = tuple(args.bc.split(","))
    if len(tags) != 4:
        raise io.ConfigError("--bc needs four comma-separated tags (left,right,bottom,top)")
    nodes, cells = meshmod.generate_points_cells(args.kind, domain, args.h, seed=args.seed)
    btags = meshmod.rectangle_tags(nodes, cells, domain, tags)
    meshmod.save_mesh(args.output, nodes, cells, btags)
    print(f"{args.output}: {len(nodes)} nodes, {len(cells)} cells")
    return 0


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    ap = argparse.ArgumentParser(
        prog="cgks",
        description="Compact fourth-order gas-kinetic solver on triangular meshes",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a case from a config file")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("convergence", help="error/order table over a mesh ladder")
    p.add_argument("case")
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--meshes", default="1/5,1/10,1/20,1/40")
    p.add_argument("--kind", default="regular", choices=["regular", "irregular"])
    p.add_argument("--cfl", type=float, default=None)
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--reconstruction", default="nonlinear", choices=["nonlinear", "linear"])
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("probe", help="sample a state dump along a line")
    p.add_argument("state")
    p.add_argument("--line", required=True, help="x0,y0,x1,y1")
    p.add_argument("--samples", type=int, default=400)
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--output", default="probe.csv")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("meshgen", help="generate a mesh file")
    p.add_argument("kind", choices=["regular", "irregular"])
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--domain", required=True, help="x0,y0,x1,y1")
    p.add_argument("--bc", default="outflow,outflow,outflow,outflow")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default="mesh.msh")
    p.set_defaults(func=cmd_meshgen)

    try:
        args = ap.parse_args(argv)
        return args.func(args)
    except (io.ConfigError, meshmod.MeshError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

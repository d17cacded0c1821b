"""Command-line front end: ``hybridcst <command> --config study.yaml``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, ExperimentConfig
from .experiment import (
    ComparisonReport,
    ExperimentError,
    build_problems,
    improvement,
    log_grid,
    prepare_problem,
    noisy_block,
    reconstruct_block,
    regularization_sweep,
    run_comparison,
)
from .geometry import GeometryError
from .meshing import MeshError, mesh_report
from .phantom import PhantomError, add_noise, downsample_truth, forward_project
from .sensing import (
    assemble_sensing_matrix,
    matrix_stats,
    numerical_rank,
    nullspace_dimension,
    svd_spectrum,
)
from .solvers import SolverError, SolverKind, concentration_from_k

log = logging.getLogger("hybridcst")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class Context:
    """Loaded config plus the provenance stamped on every output."""

    def __init__(self, args):
        self.config = ExperimentConfig.load(args.config)
        self.seed = self.config.seed if args.seed is None else args.seed
        self.out = Path(args.out or self.config.output_dir)
        self.jobs = args.jobs or os.cpu_count() or 1
        self.command = args.command

    def prov(self, **extra) -> dict:
        return {"config_sha256": self.config.digest(), "seed": self.seed,
                "command": self.command, **extra}


def _pick(name, options, what):
    if name is None:
        if len(options) == 1:
            return next(iter(options))
        raise ConfigError(f"--{what} is required (choices: {', '.join(options)})")
    if name not in options:
        raise ConfigError(f"unknown {what} {name!r}")
    return name


def _snr(v: str | None):
    if v is None or v.lower() in ("none", "inf", "clean"):
        return None
    return float(v)


def cmd_mesh(ctx: Context, args) -> int:
    name = _pick(args.mesh, ctx.config.meshes, "mesh")
    layout, ros, mesh = ctx.config.build_mesh(name)
    prov = ctx.prov(mesh=name, layout=layout.layout_id)
    io.write_mesh_csv(ctx.out / f"mesh_{name}.csv", mesh, prov)
    io.write_raster(ctx.out / f"mesh_{name}.pgm", io.mesh_raster(mesh), prov)
    rep = mesh_report(mesh)
    io.write_text(ctx.out / f"mesh_{name}.txt", rep.lines(), prov)
    print("\n".join(rep.lines()))
    return EXIT_OK


def cmd_sense(ctx: Context, args) -> int:
    name = _pick(args.mesh, ctx.config.meshes, "mesh")
    layout, _, mesh = ctx.config.build_mesh(name)
    A = assemble_sensing_matrix(layout, mesh)
    prov = ctx.prov(mesh=name, layout=layout.layout_id)
    io.write_beams_csv(ctx.out / f"beams_{layout.layout_id}.csv", layout, prov)
    io.write_matrix_csv(ctx.out / f"matrix_{name}.csv", A.entries, prov)
    st = matrix_stats(A)
    lines = [
        f"shape={A.M}x{A.N}",
        f"n_in={st.n_in} n_out={st.n_out}",
        f"nnz={st.nnz} nonzero_percent={100 * st.nnz_fraction:.2f}",
        f"rows_all_zero={list(st.rows_all_zero)}",
        f"cols_all_zero={list(st.cols_all_zero)}",
        f"rank={numerical_rank(A.entries)} nullspace_dim={nullspace_dimension(A)}",
    ]
    io.write_text(ctx.out / f"stats_{name}.txt", lines, prov)
    _write_spectra(ctx, name, A, prov)
    print("\n".join(lines))
    return EXIT_OK


def _write_spectra(ctx, name, A, prov):
    ext = svd_spectrum(A, extend=True)
    raw = svd_spectrum(A, extend=False)
    io.write_spectrum_csv(ctx.out / f"spectrum_{name}_extended.csv", ext.singular_values,
                          {**prov, "extension": ext.extension_note})
    io.write_spectrum_csv(ctx.out / f"spectrum_{name}_raw.csv", raw.singular_values,
                          {**prov, "extension": raw.extension_note})
    return ext, raw


def cmd_svd(ctx: Context, args) -> int:
    name = _pick(args.mesh, ctx.config.meshes, "mesh")
    layout, _, mesh = ctx.config.build_mesh(name)
    A = assemble_sensing_matrix(layout, mesh)
    ext, _ = _write_spectra(ctx, name, A, ctx.prov(mesh=name, layout=layout.layout_id))
    s = ext.singular_values
    print(f"N={A.N} sigma_1={s[0]:.6g} rank={numerical_rank(A.entries)}")
    return EXIT_OK


def _phantom_field(ctx, args):
    pname = _pick(args.phantom, ctx.config.phantoms, "phantom")
    pc = ctx.config.phantom(pname)
    frame = args.frame if args.frame is not None else pc.frames[-1]
    mname = _pick(args.mesh, ctx.config.meshes, "mesh")
    layout, ros, mesh = ctx.config.build_mesh(mname)
    return pname, frame, mname, layout, mesh, pc.build(ros, frame)


def cmd_phantom(ctx: Context, args) -> int:
    pname, frame, mname, _, mesh, field = _phantom_field(ctx, args)
    prov = ctx.prov(phantom=pname, frame=frame, mesh=mname)
    io.write_raster(ctx.out / f"phantom_{pname}_f{frame}.pgm", field.grid, prov)
    truth = downsample_truth(field, mesh)
    io.write_csv(ctx.out / f"truth_{pname}_f{frame}_{mname}.csv", ["pixel", "x"],
                 enumerate(truth), prov)
    print(f"raster={field.shape[1]}x{field.shape[0]} max={field.grid.max():.6g} "
          f"cells_in_ros={int(field.inside_mask().sum())}")
    return EXIT_OK


def cmd_project(ctx: Context, args) -> int:
    pname, frame, _, layout, _, field = _phantom_field(ctx, args)
    m = forward_project(field, layout)
    snr = _snr(args.snr)
    if snr is not None:
        m = add_noise(m, snr, ctx.seed)
    prov = ctx.prov(phantom=pname, frame=frame, layout=layout.layout_id,
                    snr_db="none" if snr is None else snr)
    io.write_measurement_csv(ctx.out / f"measurement_{pname}_f{frame}.csv", m.b, prov)
    print(f"M={layout.M} max_b={m.b.max():.6g}")
    return EXIT_OK


def cmd_reconstruct(ctx: Context, args) -> int:
    pname, frame, mname, layout, mesh, field = _phantom_field(ctx, args)
    solver = _pick(args.solver, ctx.config.solvers, "solver")
    if args.value is None:
        raise ConfigError("--value (regularization or relaxation) is required")
    problem = prepare_problem(layout, mesh, [field])
    snr = _snr(args.snr)
    B = noisy_block(problem.b_clean, snr, 1, ctx.seed)
    K, conv = reconstruct_block(problem, solver, args.value, B, ctx.config.solvers[solver].options)
    k = K[:, 0]
    x = concentration_from_k(k, field.pressure, field.linestrength)
    truth = problem.truth[:, 0]
    rel = np.abs(x - truth) / truth
    prov = ctx.prov(phantom=pname, frame=frame, mesh=mname, solver=solver, value=args.value,
                    snr_db="none" if snr is None else snr, converged=bool(conv[0]))
    stem = f"recon_{mname}_{solver}_{pname}_f{frame}"
    io.write_recon_csv(ctx.out / f"{stem}.csv", k, x, prov)
    io.write_raster(ctx.out / f"{stem}.pgm", io.mesh_raster(mesh, x), prov)
    print(f"IE_RoI={rel[:mesh.n_in].mean():.6g} IE_RoS={rel.mean():.6g}")
    return EXIT_OK


def _write_sweep(ctx, scheme, sw, snr):
    prov = ctx.prov(mesh=scheme, solver=sw.solver, snr_db="none" if snr is None else snr,
                    optimal_value=sw.optimal_value, optimal_ie=sw.optimal_ie)
    rows = zip(sw.grid, sw.mean_ie, sw.std_ie,
               np.nanmean(sw.per_rep_ie_roi.reshape(len(sw.grid), -1), axis=1))
    io.write_csv(ctx.out / f"sweep_{scheme}_{sw.solver}.csv",
                 ["value", "mean_ie_ros", "std_ie_ros", "mean_ie_roi"], rows, prov)


def cmd_sweep(ctx: Context, args) -> int:
    cfg = ctx.config
    if cfg.study is None:
        raise ConfigError("sweep needs a study block")
    schemes = [_pick(args.mesh, cfg.study.schemes, "mesh")] if args.mesh else cfg.study.schemes
    solvers = [_pick(args.solver, cfg.study.solvers, "solver")] if args.solver else cfg.study.solvers
    problems = build_problems(cfg)
    failed = False
    for scheme in schemes:
        for solver in solvers:
            sc = cfg.solvers[solver]
            sw = regularization_sweep(problems[scheme], solver, log_grid(*sc.grid),
                                      cfg.study.sweep_snr_db, cfg.study.n_reps, ctx.seed,
                                      sc.options, ctx.jobs)
            failed |= bool(sw.failures)
            _write_sweep(ctx, scheme, sw, cfg.study.sweep_snr_db)
            print(f"{scheme} {solver}: optimum {sw.optimal_value:.6g} mean IE {sw.optimal_ie:.6g}")
    return EXIT_RUNTIME if failed else EXIT_OK


def write_report(ctx: Context, report: ComparisonReport) -> list[str]:
    rows = [(r.scheme, r.solver, "none" if r.snr_db is None else r.snr_db, r.value,
             r.ie_roi, r.ie_roi_std, r.ie_ros, r.ie_ros_std, r.n, r.failed) for r in report.rows]
    io.write_csv(ctx.out / "comparison.csv",
                 ["scheme", "solver", "snr_db", "value", "ie_roi", "ie_roi_std", "ie_ros",
                  "ie_ros_std", "n", "failed"], rows, ctx.prov())
    lines = [f"{'scheme':<12}{'solver':<7}{'snr':>6}{'value':>12}{'IE_RoI':>10}{'IE_RoS':>10}"]
    for r in report.rows:
        snr = "-" if r.snr_db is None else f"{r.snr_db:g}"
        lines.append(f"{r.scheme:<12}{r.solver:<7}{snr:>6}{r.value:>12.4g}{r.ie_roi:>10.4f}"
                     f"{r.ie_ros:>10.4f}")
    schemes = ctx.config.study.schemes
    if len(schemes) == 2:
        h, u = _hybrid_uniform(ctx.config, schemes)
        lines.append("")
        lines.append(f"improvement of {h} over {u} (%)")
        for r in report.rows:
            if r.scheme != h:
                continue
            ur = report.row(u, r.solver, r.snr_db)
            lines.append(f"  {r.solver} snr={r.snr_db}: RoI {improvement(ur.ie_roi, r.ie_roi):.1f} "
                         f"RoS {improvement(ur.ie_ros, r.ie_ros):.1f}")
    if report.failures:
        lines.append("")
        lines.append("failures:")
        lines.extend(f"  {f}" for f in report.failures)
    io.write_text(ctx.out / "summary.txt", lines, ctx.prov())
    return lines


def _hybrid_uniform(cfg, schemes):
    a, b = schemes
    return (a, b) if cfg.meshes[a].scheme.lower() == "hybrid" else (b, a)


def cmd_run(ctx: Context, args) -> int:
    cfg = ctx.config
    if cfg.study is None:
        raise ConfigError("run needs a study block")
    problems = build_problems(cfg)
    report = run_comparison(cfg, ctx.jobs, ctx.seed, problems)
    for (scheme, _), sw in report.sweeps.items():
        _write_sweep(ctx, scheme, sw, cfg.study.sweep_snr_db)
    for (scheme, solver), sw in report.sweeps.items():
        p = problems[scheme]
        B = noisy_block(p.b_clean, cfg.study.sweep_snr_db, 1, ctx.seed)
        K, _ = reconstruct_block(p, solver, sw.optimal_value, B, cfg.solvers[solver].options)
        X = K / (p.pressure * p.linestrength)
        for f, label in enumerate(p.frame_labels):
            prov = ctx.prov(mesh=scheme, solver=solver, frame=label, value=sw.optimal_value)
            stem = f"recon_{scheme}_{solver}_{label.replace(':', '_f')}"
            io.write_raster(ctx.out / f"{stem}.pgm", io.mesh_raster(p.mesh, X[:, f]), prov)
    print("\n".join(write_report(ctx, report)))
    return EXIT_RUNTIME if report.failures else EXIT_OK


COMMANDS = {
    "mesh": cmd_mesh,
    "sense": cmd_sense,
    "svd": cmd_svd,
    "phantom": cmd_phantom,
    "project": cmd_project,
    "reconstruct": cmd_reconstruct,
    "sweep": cmd_sweep,
    "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridcst", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML experiment file")
    common.add_argument("--out", help="output directory (default: output_dir from the config)")
    common.add_argument("--seed", type=int, help="base seed (default: seed from the config)")
    common.add_argument("--jobs", type=int, default=None, help="worker processes (default: CPUs)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name != "run":
            p.add_argument("--mesh")
        if name in ("phantom", "project", "reconstruct"):
            p.add_argument("--phantom")
            p.add_argument("--frame", type=int)
        if name in ("project", "reconstruct"):
            p.add_argument("--snr", help="SNR in dB, or 'none' for noise-free")
        if name in ("reconstruct", "sweep"):
            p.add_argument("--solver", choices=[k.value for k in SolverKind])
        if name == "reconstruct":
            p.add_argument("--value", type=float, help="gamma, beta or ART relaxation")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = Context(args)
        return COMMANDS[args.command](ctx, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GeometryError, MeshError, PhantomError, SolverError, ExperimentError, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

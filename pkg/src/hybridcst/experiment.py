"""Image error, regularization sweeps and hybrid-vs-uniform comparisons."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import BeamLayout
from .meshing import Mesh, adjacency
from .phantom import Field, Measurement, add_noise, downsample_truth, forward_project
from .sensing import assemble_sensing_matrix
from .solvers import (
    SolverError,
    SolverKind,
    SolverOptions,
    art_batch,
    difference_operator,
    tk_batch,
    tv_batch,
    tv_epsilon,
)

log = logging.getLogger(__name__)


class ExperimentError(ValueError):
    pass


def image_error(x_rec, x_true, mask=None) -> float:
    """Mean relative absolute error over the masked pixels.

    ``mask`` may be a boolean array or a collection of pixel ids; ``None``
    means every pixel.
    """
    x_rec = np.asarray(x_rec, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    if x_rec.shape != x_true.shape:
        raise ExperimentError("reconstruction and truth differ in length")
    idx = _mask_index(mask, len(x_true))
    if len(idx) == 0:
        raise ExperimentError("empty mask")
    t = x_true[idx]
    if np.any(t <= 0):
        raise ExperimentError("true values must be positive on the mask")
    return float(np.mean(np.abs(x_rec[idx] - t) / t))


def _mask_index(mask, n: int) -> np.ndarray:
    if mask is None:
        return np.arange(n)
    m = np.asarray(mask)
    if m.dtype == bool:
        if m.shape != (n,):
            raise ExperimentError("boolean mask has the wrong length")
        return np.flatnonzero(m)
    return np.unique(m.astype(int))


@dataclass(frozen=True)
class ImageErrorReport:
    ie_roi: float
    ie_ros: float
    per_pixel_relerr: np.ndarray
    mask_used: str = "RoS"


def image_error_report(x_rec, x_true, n_in: int, mask_used: str = "RoS") -> ImageErrorReport:
    """Per-pixel relative error with its RoI (first ``n_in`` pixels) and RoS means."""
    x_rec = np.asarray(x_rec, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    if np.any(x_true <= 0):
        raise ExperimentError("true values must be positive")
    rel = np.abs(x_rec - x_true) / x_true
    ie_roi = float(rel[:n_in].mean()) if n_in else float("nan")
    return ImageErrorReport(ie_roi, float(rel.mean()), rel, mask_used)


def log_grid(lo: float, hi: float, n: int) -> np.ndarray:
    """``n`` log-equispaced values from ``lo`` to ``hi``; endpoints are exact."""
    if not (0 < lo < hi) or n < 2:
        raise ExperimentError("grid needs 0 < lo < hi and n >= 2")
    g = np.logspace(math.log10(lo), math.log10(hi), n)
    g[0], g[-1] = lo, hi
    return g


@dataclass
class Problem:
    """Everything a reconstruction of one mesh needs, with truths for several frames."""

    mesh: Mesh
    A: np.ndarray
    F: np.ndarray
    b_clean: np.ndarray  # (M, n_frames)
    truth: np.ndarray  # (N, n_frames)
    pressure: float = 1.0
    linestrength: float = 1.0
    frame_labels: tuple[str, ...] = ()

    @property
    def n_frames(self) -> int:
        return self.b_clean.shape[1]


def prepare_problem(layout: BeamLayout, mesh: Mesh, fields: Sequence[Field], labels=()) -> Problem:
    if not fields:
        raise ExperimentError("need at least one phantom frame")
    P, S = fields[0].pressure, fields[0].linestrength
    if any(f.pressure != P or f.linestrength != S for f in fields):
        raise ExperimentError("all frames must share pressure and linestrength")
    A = assemble_sensing_matrix(layout, mesh).entries
    F = difference_operator(adjacency(mesh), mesh.N).matrix
    b = np.column_stack([forward_project(f, layout).b for f in fields])
    truth = np.column_stack([downsample_truth(f, mesh) for f in fields])
    labels = tuple(labels) or tuple(f"frame{i}" for i in range(len(fields)))
    return Problem(mesh, A, F, b, truth, P, S, labels)


def noisy_block(b_clean: np.ndarray, snr_db: float | None, n_reps: int, base_seed: int) -> np.ndarray:
    """(M, n_reps * n_frames) block; column ``r * n_frames + f`` is frame ``f``, rep ``r``.

    Rep ``r`` uses seed ``base_seed + r`` for every frame. ``snr_db=None``
    gives noise-free copies.
    """
    cols = []
    for r in range(n_reps):
        for f in range(b_clean.shape[1]):
            m = Measurement(b_clean[:, f])
            cols.append(m.b if snr_db is None else add_noise(m, snr_db, base_seed + r).b)
    return np.column_stack(cols)


def reconstruct_block(problem: Problem, solver, value: float, B: np.ndarray, opts: SolverOptions):
    """Absorption densities for every column of ``B``; returns ``(K, converged)``."""
    kind = SolverKind(solver)
    if kind is SolverKind.TK:
        if value < 0:
            raise SolverError("gamma must be non-negative")
        K, _, conv, _ = tk_batch(problem.A, B, value, problem.F, opts)
    elif kind is SolverKind.ART:
        if not 0 < value <= 2:
            raise SolverError("relaxation must lie in (0, 2]")
        K, _, conv = art_batch(problem.A, B, value, opts)
    else:
        if value < 0:
            raise SolverError("beta must be non-negative")
        eps = np.array([tv_epsilon(B[:, j]) for j in range(B.shape[1])])
        K, _, conv = tv_batch(problem.A, B, value, problem.F, opts, eps)
    return K, conv


def block_errors(problem: Problem, K: np.ndarray, n_reps: int) -> tuple[np.ndarray, np.ndarray]:
    """IE over RoS and RoI, each shaped (n_reps, n_frames)."""
    X = K / (problem.pressure * problem.linestrength)
    T = np.tile(problem.truth, (1, n_reps))
    rel = np.abs(X - T) / T
    n_in = problem.mesh.n_in
    ros = rel.mean(axis=0).reshape(n_reps, problem.n_frames)
    roi = (rel[:n_in].mean(axis=0) if n_in else np.full(rel.shape[1], np.nan))
    return ros, roi.reshape(n_reps, problem.n_frames)


@dataclass
class SweepResult:
    solver: str
    grid: np.ndarray
    mean_ie: np.ndarray
    per_rep_ie: np.ndarray  # (n_grid, n_reps, n_frames), RoS
    per_rep_ie_roi: np.ndarray
    optimal_value: float
    optimal_ie: float
    failures: list[tuple[float, str]] = field(default_factory=list)

    @property
    def std_ie(self) -> np.ndarray:
        return np.nanstd(self.per_rep_ie.reshape(len(self.grid), -1), axis=1)


def _sweep_cell(args):
    problem, solver, value, B, opts, n_reps = args
    try:
        K, _ = reconstruct_block(problem, solver, value, B, opts)
        ros, roi = block_errors(problem, K, n_reps)
        return ros, roi, None
    except (SolverError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return None, None, f"{type(exc).__name__}: {exc}"


def regularization_sweep(
    problem: Problem,
    solver,
    grid: Sequence[float],
    snr_db: float | None,
    n_reps: int,
    base_seed: int,
    opts: SolverOptions = SolverOptions(),
    jobs: int = 1,
) -> SweepResult:
    """Mean RoS image error for each regularization value; argmin is the optimum.

    The same noise realizations are reused for every grid value. Failed cells
    are recorded and left as NaN.
    """
    grid = np.asarray(grid, dtype=float)
    if len(grid) < 1 or np.any(np.diff(grid) <= 0):
        raise ExperimentError("grid must be strictly increasing")
    if n_reps < 1:
        raise ExperimentError("n_reps must be >= 1")
    B = noisy_block(problem.b_clean, snr_db, n_reps, base_seed)
    cells = [(problem, SolverKind(solver).value, float(v), B, opts, n_reps) for v in grid]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    shape = (n_reps, problem.n_frames)
    per_rep = np.full((len(grid),) + shape, np.nan)
    per_rep_roi = np.full((len(grid),) + shape, np.nan)
    failures = []
    for g, (ros, roi, err) in enumerate(results):
        if err is not None:
            failures.append((float(grid[g]), err))
            log.warning("sweep cell %s=%g failed: %s", solver, grid[g], err)
            continue
        per_rep[g], per_rep_roi[g] = ros, roi
    mean_ie = per_rep.reshape(len(grid), -1).mean(axis=1)
    if np.all(np.isnan(mean_ie)):
        raise ExperimentError(f"every {solver} sweep cell failed")
    best = int(np.nanargmin(mean_ie))
    return SweepResult(
        solver=SolverKind(solver).value,
        grid=grid,
        mean_ie=mean_ie,
        per_rep_ie=per_rep,
        per_rep_ie_roi=per_rep_roi,
        optimal_value=float(grid[best]),
        optimal_ie=float(mean_ie[best]),
        failures=failures,
    )


@dataclass(frozen=True)
class ComparisonRow:
    scheme: str
    solver: str
    snr_db: float | None
    value: float
    ie_roi: float
    ie_roi_std: float
    ie_ros: float
    ie_ros_std: float
    n: int
    failed: bool = False


@dataclass
class ComparisonReport:
    rows: list[ComparisonRow]
    sweeps: dict[tuple[str, str], SweepResult] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    def row(self, scheme: str, solver: str, snr_db=None) -> ComparisonRow:
        for r in self.rows:
            if r.scheme == scheme and r.solver == solver and (snr_db is None or r.snr_db == snr_db):
                return r
        raise KeyError((scheme, solver, snr_db))

    def improvements(self, hybrid: str, uniform: str) -> list[tuple[str, float | None, float, float]]:
        """``(solver, snr, improvement% RoI, improvement% RoS)`` of ``hybrid`` over ``uniform``."""
        out = []
        for r in self.rows:
            if r.scheme != hybrid:
                continue
            u = self.row(uniform, r.solver, r.snr_db)
            out.append((r.solver, r.snr_db, improvement(u.ie_roi, r.ie_roi),
                        improvement(u.ie_ros, r.ie_ros)))
        return out


def improvement(ie_uniform: float, ie_hybrid: float) -> float:
    return (ie_uniform - ie_hybrid) / ie_uniform * 100.0


def evaluate(problem: Problem, solver, value: float, snr_db, n_reps: int, base_seed: int,
             opts: SolverOptions) -> tuple[np.ndarray, np.ndarray]:
    """RoS and RoI image errors, each (n_reps, n_frames), at one regularization value."""
    B = noisy_block(problem.b_clean, snr_db, n_reps, base_seed)
    K, _ = reconstruct_block(problem, solver, value, B, opts)
    return block_errors(problem, K, n_reps)


def compare(
    problems: dict[str, Problem],
    solvers: dict[str, tuple[np.ndarray, SolverOptions]],
    sweep_snr_db: float | None,
    snr_list: Sequence[float | None],
    n_reps: int,
    base_seed: int,
    jobs: int = 1,
) -> ComparisonReport:
    """Sweep each (scheme, solver) at ``sweep_snr_db``, then evaluate its optimum at every SNR."""
    report = ComparisonReport(rows=[])
    for scheme, problem in problems.items():
        for solver, (grid, opts) in solvers.items():
            try:
                sw = regularization_sweep(problem, solver, grid, sweep_snr_db, n_reps, base_seed,
                                          opts, jobs)
            except (ExperimentError, SolverError) as exc:
                report.failures.append(f"{scheme}/{solver}: {exc}")
                for snr in snr_list:
                    report.rows.append(ComparisonRow(scheme, solver, snr, float("nan"), *[float("nan")] * 4,
                                                     0, True))
                continue
            report.sweeps[(scheme, solver)] = sw
            report.failures.extend(f"{scheme}/{solver} at {v:g}: {e}" for v, e in sw.failures)
            for snr in snr_list:
                try:
                    ros, roi = evaluate(problem, solver, sw.optimal_value, snr, n_reps, base_seed, opts)
                except (SolverError, ValueError) as exc:
                    report.failures.append(f"{scheme}/{solver} at SNR {snr}: {exc}")
                    report.rows.append(ComparisonRow(scheme, solver, snr, sw.optimal_value,
                                                     *[float("nan")] * 4, 0, True))
                    continue
                report.rows.append(ComparisonRow(
                    scheme, solver, snr, sw.optimal_value,
                    float(roi.mean()), float(roi.std()), float(ros.mean()), float(ros.std()),
                    int(ros.size),
                ))
    return report


def study_fields(config, scheme_layout_ros):
    """Phantom fields for every (study phantom, frame), with labels."""
    st = config.study
    fields, labels = [], []
    for name in st.phantoms:
        pc = config.phantom(name)
        for frame in pc.frames:
            fields.append(pc.build(scheme_layout_ros, frame))
            labels.append(f"{name}:{frame}")
    return fields, labels


def build_problems(config) -> dict[str, Problem]:
    """One :class:`Problem` per study scheme; all share one layout and phantom set."""
    st = config.study
    if st is None:
        raise ExperimentError("config has no study block")
    problems = {}
    fields = labels = None
    for scheme in st.schemes:
        layout, ros, mesh = config.build_mesh(scheme)
        if fields is None:
            fields, labels = study_fields(config, ros)
        problems[scheme] = prepare_problem(layout, mesh, fields, labels)
    return problems


def solver_grids(config) -> dict[str, tuple[np.ndarray, SolverOptions]]:
    return {s: (log_grid(*config.solvers[s].grid), config.solvers[s].options)
            for s in config.study.solvers}


def run_comparison(config, jobs: int = 1, seed: int | None = None,
                   problems: dict[str, Problem] | None = None) -> ComparisonReport:
    """Sweep every study (scheme, solver) and evaluate the optima at each SNR."""
    st = config.study
    problems = problems or build_problems(config)
    return compare(problems, solver_grids(config), st.sweep_snr_db, st.snr_db, st.n_reps,
                   config.seed if seed is None else seed, jobs)

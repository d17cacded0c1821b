"""Tikhonov, ART and total-variation reconstruction on arbitrary pixel meshes.

All solvers work on the chord-length system ``A k = b`` and return
non-negative absorption densities unless ``nonneg`` is switched off.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .meshing import AdjacencyGraph
from .phantom import Measurement
from .sensing import SensingMatrix


class SolverError(ValueError):
    pass


class SolverKind(str, enum.Enum):
    TK = "TK"
    ART = "ART"
    TV = "TV"


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 2000
    relative_tolerance: float = 1e-8
    nonneg: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise SolverError("max_iterations must be >= 1")
        if not self.relative_tolerance > 0:
            raise SolverError("relative_tolerance must be positive")


ART_DEFAULTS = SolverOptions(max_iterations=200, relative_tolerance=1e-6)
ART_DEFAULT_RELAXATION = 0.2


@dataclass(frozen=True)
class DifferenceOperator:
    """One row per adjacency edge: ``+1`` at pixel ``a`` and ``-1`` at pixel ``b``."""

    matrix: np.ndarray

    def __matmul__(self, k):
        return self.matrix @ k

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape


def difference_operator(adj: AdjacencyGraph, n: int) -> DifferenceOperator:
    pairs = adj.pairs
    if len(pairs) and (pairs.min() < 0 or pairs.max() >= n):
        raise SolverError("adjacency references a pixel id outside 0..n-1")
    F = np.zeros((len(pairs), n))
    rows = np.arange(len(pairs))
    if len(pairs):
        F[rows, pairs[:, 0]] = 1.0
        F[rows, pairs[:, 1]] = -1.0
    return DifferenceOperator(F)


@dataclass(frozen=True)
class ReconResult:
    k: np.ndarray
    x: np.ndarray
    solver: SolverKind
    hyperparams: dict = field(default_factory=dict)
    converged: bool = False
    residual_norm: float = float("nan")
    iterations: int = 0


def concentration_from_k(k, P: float, S: float, T: float | None = None) -> np.ndarray:
    """Mole fraction ``x = k / (P * S)``; ``T`` is carried for provenance only."""
    if not (P > 0 and S > 0):
        raise SolverError("pressure and linestrength must be positive")
    return np.asarray(k, dtype=float) / (P * S)


def _result(kind, k, e, bb, P, S, hyper, converged, iterations):
    return ReconResult(
        k=k,
        x=concentration_from_k(k, P, S),
        solver=kind,
        hyperparams=hyper,
        converged=converged,
        residual_norm=float(np.linalg.norm(e @ k - bb)),
        iterations=iterations,
    )


def power_iteration(H: np.ndarray, n_iter: int = 50) -> float:
    """Largest eigenvalue estimate of a symmetric PSD matrix."""
    v = np.ones(H.shape[0]) / math.sqrt(H.shape[0])
    lam = 0.0
    for _ in range(n_iter):
        w = H @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        lam = float(v @ w)
        v = w / nw
    return max(lam, float(v @ H @ v))


def tk_objective(e, b, gamma, F, k):
    """``|Ak - b|^2 + gamma |Fk|^2``, column-wise when ``k`` is 2-D."""
    r = e @ k - b
    Fk = F @ k
    return np.sum(r * r, axis=0) + gamma * np.sum(Fk * Fk, axis=0)


def tk_gradient(e, b, gamma, F, k):
    return 2.0 * (e.T @ (e @ k - b) + gamma * (F.T @ (F @ k)))


def _stack_rhs(A, b):
    """Matrix and an (M, K) right-hand-side block; ``b`` may be 1-D or 2-D."""
    e = A.entries if isinstance(A, SensingMatrix) else np.asarray(A, dtype=float)
    if isinstance(b, Measurement):
        B = b.b[:, None]
    else:
        B = np.asarray(b, dtype=float)
        B = B[:, None] if B.ndim == 1 else B
    if e.ndim != 2 or B.shape[0] != e.shape[0]:
        raise SolverError(f"dimension mismatch: A is {e.shape}, b has {B.shape[0]} rows")
    return e, B


def _tiny():
    return np.finfo(float).tiny


class _EdgeOps:
    """Fast ``F @ K`` and ``F.T @ W`` when every row of ``F`` is a ``+1/-1`` pair."""

    def __init__(self, Fm: np.ndarray):
        self.F = Fm
        self.n = Fm.shape[1]
        self.gram = Fm.T @ Fm
        nz = Fm != 0
        pairs = nz.sum(axis=1) == 2
        self.pairs = bool(len(Fm)) and bool(np.all(pairs))
        if self.pairs:
            self.ia = np.argmax(Fm == 1.0, axis=1)
            self.ib = np.argmax(Fm == -1.0, axis=1)
            ok = np.all(Fm[np.arange(len(Fm)), self.ia] == 1.0) and np.all(
                Fm[np.arange(len(Fm)), self.ib] == -1.0)
            self.pairs = bool(ok)
        if self.pairs:
            self._sa = self._segments(self.ia)
            self._sb = self._segments(self.ib)

    @staticmethod
    def _segments(idx):
        order = np.argsort(idx, kind="stable")
        uniq, starts = np.unique(idx[order], return_index=True)
        return order, uniq, starts

    def apply(self, K):
        if self.pairs:
            return K[self.ia] - K[self.ib]
        return self.F @ K

    def adjoint(self, W):
        if not self.pairs:
            return self.F.T @ W
        out = np.zeros((self.n,) + W.shape[1:])
        for (order, uniq, starts), sign in ((self._sa, 1.0), (self._sb, -1.0)):
            out[uniq] += sign * np.add.reduceat(W[order], starts, axis=0)
        return out


def tk_batch(e, B, gamma, Fm, opts: SolverOptions):
    """Projected-gradient Tikhonov for every column of ``B``.

    Returns ``(K, iterations, converged, step)`` with one column/entry per
    right-hand side. Each column follows exactly the iteration it would
    follow on its own; converged columns are frozen.
    """
    ops = _EdgeOps(Fm)
    H = e.T @ e + gamma * ops.gram
    n, nrhs = e.shape[1], B.shape[1]
    K = np.zeros((n, nrhs))
    iters = np.zeros(nrhs, dtype=int)
    conv = np.zeros(nrhs, dtype=bool)
    lam = power_iteration(H)
    if lam == 0:
        conv[:] = True
        return K, iters, conv, 0.0
    step = 1.0 / lam
    L = ops.gram
    R = -B.copy()  # residual A k - b
    LK = np.zeros_like(K)
    f = np.einsum("ij,ij->j", B, B)
    active = np.arange(nrhs)
    for it in range(1, opts.max_iterations + 1):
        Ka = K[:, active]
        g = e.T @ R[:, active]
        if gamma:
            g += gamma * LK[:, active]
        Kn = Ka - step * g
        if opts.nonneg:
            np.maximum(Kn, 0.0, out=Kn)
        Rn = e @ Kn - B[:, active]
        fn = np.einsum("ij,ij->j", Rn, Rn)
        if gamma:
            d = ops.apply(Kn)
            fn += gamma * np.einsum("ij,ij->j", d, d)
            LK[:, active] = L @ Kn
        dec = f[active] - fn
        scale = np.maximum(np.abs(f[active]), _tiny())
        K[:, active] = Kn
        R[:, active] = Rn
        f[active] = fn
        iters[active] = it
        done = dec <= opts.relative_tolerance * scale
        conv[active[done]] = True
        active = active[~done]
        if len(active) == 0:
            break
    return K, iters, conv, step


def _difference_matrix(F, n):
    if isinstance(F, DifferenceOperator):
        Fm = F.matrix
    elif isinstance(F, AdjacencyGraph):
        Fm = difference_operator(F, n).matrix
    else:
        Fm = np.asarray(F, dtype=float)
    if Fm.ndim != 2 or Fm.shape[1] != n:
        raise SolverError("difference operator does not match the number of pixels")
    return Fm


def solve_tk(
    A,
    b,
    gamma: float,
    F: DifferenceOperator,
    opts: SolverOptions = SolverOptions(),
    P: float = 1.0,
    S: float = 1.0,
) -> ReconResult:
    """First-order Tikhonov: minimize ``|Ak - b|^2 + gamma |Fk|^2`` over ``k >= 0``.

    Projected gradient with fixed step ``1 / lambda_max(A'A + gamma F'F)``
    (50 power iterations). Stops when the relative objective decrease falls
    below ``opts.relative_tolerance``.
    """
    e, B = _stack_rhs(A, b)
    if B.shape[1] != 1:
        raise SolverError("solve_tk takes a single measurement vector")
    if gamma < 0:
        raise SolverError("gamma must be non-negative")
    Fm = _difference_matrix(F, e.shape[1])
    K, iters, conv, step = tk_batch(e, B, gamma, Fm, opts)
    hyper = {"gamma": gamma, "step": step, "max_iterations": opts.max_iterations,
             "relative_tolerance": opts.relative_tolerance}
    return _result(SolverKind.TK, K[:, 0], e, B[:, 0], P, S, hyper, bool(conv[0]), int(iters[0]))


def art_batch(e, B, relaxation, opts: SolverOptions):
    norms = np.einsum("ij,ij->i", e, e)
    rows = np.flatnonzero(norms > 0)
    if len(rows) == 0:
        raise SolverError("sensing matrix is all zero")
    n, nrhs = e.shape[1], B.shape[1]
    K = np.zeros((n, nrhs))
    iters = np.zeros(nrhs, dtype=int)
    conv = np.zeros(nrhs, dtype=bool)
    active = np.arange(nrhs)
    scaled = [(e[i], e[i][:, None] * (relaxation / norms[i]), i) for i in rows]
    for it in range(1, opts.max_iterations + 1):
        Ka = K[:, active]
        old = Ka.copy()
        Ba = B[:, active]
        for a, a_scaled, i in scaled:
            Ka += a_scaled * (Ba[i] - a @ Ka)
        if opts.nonneg:
            np.maximum(Ka, 0.0, out=Ka)
        K[:, active] = Ka
        iters[active] = it
        change = np.linalg.norm(Ka - old, axis=0)
        done = change <= opts.relative_tolerance * np.maximum(np.linalg.norm(old, axis=0), _tiny())
        conv[active[done]] = True
        active = active[~done]
        if len(active) == 0:
            break
    return K, iters, conv


def solve_art(
    A,
    b,
    relaxation: float = ART_DEFAULT_RELAXATION,
    opts: SolverOptions = ART_DEFAULTS,
    P: float = 1.0,
    S: float = 1.0,
) -> ReconResult:
    """Relaxed Kaczmarz sweeps over the beams in index order, starting from zero.

    Each row update is ``k += relaxation * (b_i - A_i k) / |A_i|^2 * A_i``;
    all-zero rows are skipped and ``k`` is clipped to ``>= 0`` after every
    sweep when ``opts.nonneg`` is set.
    """
    e, B = _stack_rhs(A, b)
    if B.shape[1] != 1:
        raise SolverError("solve_art takes a single measurement vector")
    if not 0 < relaxation <= 2:
        raise SolverError("relaxation must lie in (0, 2]")
    K, iters, conv = art_batch(e, B, relaxation, opts)
    hyper = {"relaxation": relaxation, "max_iterations": opts.max_iterations,
             "relative_tolerance": opts.relative_tolerance}
    return _result(SolverKind.ART, K[:, 0], e, B[:, 0], P, S, hyper, bool(conv[0]), int(iters[0]))


def tv_epsilon(bb: np.ndarray) -> float:
    return 1e-8 * max(1.0, float(np.max(np.abs(bb))) if np.size(bb) else 1.0)


def tv_value(F, k, eps: float):
    d = F @ k
    return np.sum(np.sqrt(d * d + eps * eps), axis=0)


def tv_objective(e, b, beta, F, k, eps):
    r = e @ k - b
    return np.sum(r * r, axis=0) + beta * tv_value(F, k, eps)


def tv_gradient(e, b, beta, F, k, eps):
    d = F @ k
    return 2.0 * (e.T @ (e @ k - b)) + beta * (F.T @ (d / np.sqrt(d * d + eps * eps)))


def tv_batch(e, B, beta, Fm, opts: SolverOptions, eps):
    """Projected gradient with per-column Armijo backtracking.

    ``eps`` is one smoothing value per column.
    """
    ops = _EdgeOps(Fm)
    n, nrhs = e.shape[1], B.shape[1]
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (nrhs,))
    eps2 = eps * eps
    lip = 2.0 * power_iteration(e.T @ e)
    t = np.full(nrhs, 1.0 / lip if lip > 0 else 1.0)

    def objective(K, Bc, e2):
        r = e @ K - Bc
        d = ops.apply(K)
        return np.einsum("ij,ij->j", r, r) + beta * np.sum(np.sqrt(d * d + e2), axis=0), r, d

    K = np.zeros((n, nrhs))
    f, R, D = objective(K, B, eps2)
    iters = np.zeros(nrhs, dtype=int)
    conv = np.zeros(nrhs, dtype=bool)
    active = np.arange(nrhs)
    for it in range(1, opts.max_iterations + 1):
        Ka, Ba, ea = K[:, active], B[:, active], eps2[active]
        Da = D[:, active]
        g = 2.0 * (e.T @ R[:, active])
        if beta:
            g += beta * ops.adjoint(Da / np.sqrt(Da * Da + ea))
        ta = np.minimum(2.0 * t[active], 1e12)
        Kn = np.empty_like(Ka)
        Rn = np.empty_like(R[:, active])
        Dn = np.empty_like(Da)
        fn = np.empty(len(active))
        pending = np.arange(len(active))
        while len(pending):
            trial = Ka[:, pending] - ta[pending] * g[:, pending]
            if opts.nonneg:
                np.maximum(trial, 0.0, out=trial)
            ft, rt, dt = objective(trial, Ba[:, pending], ea[pending])
            armijo = f[active[pending]] + 1e-4 * np.einsum(
                "ij,ij->j", g[:, pending], trial - Ka[:, pending])
            ok = (ft <= armijo) | (ta[pending] < 1e-300)
            sel = pending[ok]
            Kn[:, sel], Rn[:, sel], Dn[:, sel] = trial[:, ok], rt[:, ok], dt[:, ok]
            fn[sel] = ft[ok]
            ta[pending[~ok]] *= 0.5
            pending = pending[~ok]
        fa = f[active]
        improved = fn <= fa
        dec = fa - fn
        upd = active[improved]
        K[:, upd] = Kn[:, improved]
        R[:, upd] = Rn[:, improved]
        D[:, upd] = Dn[:, improved]
        f[upd] = fn[improved]
        t[active] = ta
        iters[active] = it
        done = dec <= opts.relative_tolerance * np.maximum(np.abs(fa), _tiny())
        conv[active[done]] = True
        active = active[~done]
        if len(active) == 0:
            break
    return K, iters, conv


def solve_tv(
    A,
    b,
    beta: float,
    adj: AdjacencyGraph | DifferenceOperator,
    opts: SolverOptions = SolverOptions(),
    P: float = 1.0,
    S: float = 1.0,
    epsilon: float | None = None,
) -> ReconResult:
    """Edge-wise smoothed TV: minimize ``|Ak - b|^2 + beta * sum_e sqrt(dk_e^2 + eps^2)``.

    Projected gradient onto ``k >= 0`` with Armijo backtracking (halving,
    constant 1e-4); each trial step starts from twice the last accepted one.
    ``eps`` defaults to ``1e-8 * max(1, max|b|)``.
    """
    e, B = _stack_rhs(A, b)
    if B.shape[1] != 1:
        raise SolverError("solve_tv takes a single measurement vector")
    if beta < 0:
        raise SolverError("beta must be non-negative")
    Fm = _difference_matrix(adj, e.shape[1])
    eps = tv_epsilon(B[:, 0]) if epsilon is None else float(epsilon)
    K, iters, conv = tv_batch(e, B, beta, Fm, opts, eps)
    hyper = {"beta": beta, "epsilon": eps, "max_iterations": opts.max_iterations,
             "relative_tolerance": opts.relative_tolerance}
    return _result(SolverKind.TV, K[:, 0], e, B[:, 0], P, S, hyper, bool(conv[0]), int(iters[0]))

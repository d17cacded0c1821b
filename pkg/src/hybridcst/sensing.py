"""Chord-length sensing matrices and their singular-value analysis."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BeamLayout, segment_rect_chords
from .meshing import Mesh

ZERO_SV_RTOL = 1e-12
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class SensingMatrix:
    """Dense M x N chord-length matrix; columns ``[0, n_in)`` are the RoI block."""

    entries: np.ndarray
    n_in: int
    layout_id: str = ""
    mesh_id: str = ""

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2:
            raise ValueError("sensing matrix must be 2-D")
        if np.any(a < 0):
            raise ValueError("chord lengths must be non-negative")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def M(self) -> int:
        return self.entries.shape[0]

    @property
    def N(self) -> int:
        return self.entries.shape[1]

    @property
    def n_out(self) -> int:
        return self.N - self.n_in

    @property
    def a_in(self) -> np.ndarray:
        return self.entries[:, : self.n_in]

    @property
    def a_out(self) -> np.ndarray:
        return self.entries[:, self.n_in:]


def assemble_sensing_matrix(layout: BeamLayout, mesh: Mesh) -> SensingMatrix:
    """``A[i, j]`` is the length of beam ``i`` inside pixel ``j``."""
    rects = mesh.rects
    rows = [segment_rect_chords(b.start, b.end, rects) for b in layout.beams]
    return SensingMatrix(np.vstack(rows), mesh.n_in, layout.layout_id, mesh.mesh_id)


@dataclass(frozen=True)
class MatrixStats:
    nnz_fraction: float
    nnz: int
    n_in: int
    n_out: int
    rows_all_zero: tuple[int, ...]
    cols_all_zero: tuple[int, ...]


def matrix_stats(A: SensingMatrix) -> MatrixStats:
    e = A.entries
    nz = e > 0
    return MatrixStats(
        nnz_fraction=float(nz.sum()) / e.size if e.size else 0.0,
        nnz=int(nz.sum()),
        n_in=A.n_in,
        n_out=A.n_out,
        rows_all_zero=tuple(int(i) for i in np.flatnonzero(~nz.any(axis=1))),
        cols_all_zero=tuple(int(j) for j in np.flatnonzero(~nz.any(axis=0))),
    )


@dataclass(frozen=True)
class SvdSpectrum:
    singular_values: np.ndarray
    extension_note: str


def extend_to_square(e: np.ndarray) -> tuple[np.ndarray, str]:
    """Repeat the last non-zero row of an M x N matrix (M <= N) until it is N x N."""
    M, N = e.shape
    if M > N:
        raise ValueError("row extension needs M <= N")
    nonzero = np.flatnonzero(np.any(e != 0, axis=1))
    if len(nonzero) == 0:
        raise ValueError("matrix has no non-zero row to duplicate")
    last = int(nonzero[-1])
    ext = np.vstack([e, np.repeat(e[last : last + 1], N - M, axis=0)])
    return ext, f"row {last} duplicated {N - M} times to reach {N}x{N}"


def svd_spectrum(A: SensingMatrix, extend: bool = True) -> SvdSpectrum:
    """All N singular values in descending order.

    Values at or below ``1e-12 * sigma_1`` (the undetermined directions) are
    set to exactly zero, as are the ``N - min(M, N)`` values a rectangular
    SVD does not return.
    """
    e = A.entries
    if e.size == 0:
        raise ValueError("empty matrix")
    if extend:
        e, note = extend_to_square(e)
    else:
        note = "no extension"
    s = np.linalg.svd(e, compute_uv=False)
    out = np.zeros(A.N)
    out[: len(s)] = s
    if out[0] > 0:
        out[out <= ZERO_SV_RTOL * out[0]] = 0.0
    return SvdSpectrum(out, note)


def numerical_rank(e: np.ndarray, rtol: float = RANK_RTOL) -> int:
    s = np.linalg.svd(np.asarray(e, dtype=float), compute_uv=False)
    if len(s) == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def nullspace_dimension(A: SensingMatrix) -> int:
    """``N - rank(A)`` with rank counted above ``1e-10 * sigma_1``."""
    return A.N - numerical_rank(A.entries)

"""Analytic plume phantoms, the high-resolution forward problem, and noise."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .geometry import BeamLayout, ConvexPolygon
from .meshing import Mesh

DEFAULT_BACKGROUND = 0.005
DEFAULT_TEMPERATURE = 294.15


class PhantomError(ValueError):
    pass


class PlumeKind(str, enum.Enum):
    GAUSSIAN = "Gaussian"
    SMOOTHED_DISC = "SmoothedDisc"


@dataclass(frozen=True)
class PlumeSpec:
    """One analytic plume.

    For ``Gaussian`` plumes ``radius_or_sigma`` is the standard deviation; for
    ``SmoothedDisc`` it is the disc radius and the edge falls to zero with a
    raised cosine over ``taper`` cm (a quarter of the radius by default).
    """

    kind: PlumeKind
    center: tuple[float, float]
    radius_or_sigma: float
    peak: float
    taper: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PlumeKind(self.kind))
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if not self.radius_or_sigma > 0:
            raise PhantomError("plume radius/sigma must be positive")
        if self.taper is not None and not self.taper > 0:
            raise PhantomError("taper width must be positive")

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        d2 = (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2
        s = self.radius_or_sigma
        if self.kind is PlumeKind.GAUSSIAN:
            return self.peak * np.exp(-d2 / (2 * s * s))
        w = self.taper if self.taper is not None else 0.25 * s
        d = np.sqrt(d2)
        edge = 0.5 * (1 + np.cos(np.pi * np.clip((d - s) / w, 0.0, 1.0)))
        return self.peak * np.where(d <= s, 1.0, edge)


@dataclass(frozen=True)
class Field:
    """Mole-fraction raster; ``grid[iy, ix]`` is the cell whose lower-left corner
    is ``origin + (ix, iy) * cell_size``."""

    grid: np.ndarray
    cell_size: float
    origin: tuple[float, float]
    background: float = DEFAULT_BACKGROUND
    temperature: float = DEFAULT_TEMPERATURE
    pressure: float = 1.0
    linestrength: float = 1.0
    ros: ConvexPolygon | None = field(default=None, compare=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.grid.shape
        c = self.cell_size
        return self.origin[0] + c * np.arange(nx + 1), self.origin[1] + c * np.arange(ny + 1)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.grid.shape
        c = self.cell_size
        return self.origin[0] + c * (np.arange(nx) + 0.5), self.origin[1] + c * (np.arange(ny) + 0.5)

    def cell_rects(self) -> np.ndarray:
        """(ny*nx, 4) rectangles in row-major order, matching ``grid.ravel()``."""
        xe, ye = self.edges()
        X0, Y0 = np.meshgrid(xe[:-1], ye[:-1])
        X1, Y1 = np.meshgrid(xe[1:], ye[1:])
        return np.column_stack([X0.ravel(), Y0.ravel(), X1.ravel(), Y1.ravel()])

    def inside_mask(self) -> np.ndarray:
        """Cells whose centre lies in the RoS (all cells if no RoS is attached)."""
        if self.ros is None:
            return np.ones(self.grid.shape, dtype=bool)
        xc, yc = self.centers()
        X, Y = np.meshgrid(xc, yc)
        return self.ros.contains(np.stack([X, Y], axis=-1), tol=1e-12)

    def with_grid(self, grid: np.ndarray) -> "Field":
        return replace(self, grid=np.asarray(grid, dtype=float))


def build_field(
    ros: ConvexPolygon,
    cell_size: float,
    background: float = DEFAULT_BACKGROUND,
    plumes: Sequence[PlumeSpec] = (),
    T: float = DEFAULT_TEMPERATURE,
    P: float = 1.0,
    S: float = 1.0,
) -> Field:
    """Rasterize background plus plumes over the RoS bounding square.

    The raster is symmetric about the bounding-square centre and evaluated at
    cell centres, then clamped to [0, 1].
    """
    x0, y0, x1, y1 = ros.bbox
    side = max(x1 - x0, y1 - y0)
    if not cell_size > 0 or cell_size > side:
        raise PhantomError("cell_size must be positive and no larger than the RoS extent")
    for p in plumes:
        if p.peak < background:
            raise PhantomError("plume peak must not be below the background")
    q = side / cell_size
    n = round(q) if abs(q - round(q)) <= 1e-9 * q else math.ceil(q)
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    origin = (cx - n * cell_size / 2, cy - n * cell_size / 2)
    xc = origin[0] + cell_size * (np.arange(n) + 0.5)
    yc = origin[1] + cell_size * (np.arange(n) + 0.5)
    X, Y = np.meshgrid(xc, yc)
    grid = np.full(X.shape, float(background))
    for p in plumes:
        grid += p.evaluate(X, Y)
    np.clip(grid, 0.0, 1.0, out=grid)
    return Field(grid, float(cell_size), origin, float(background), float(T), float(P), float(S), ros)


def absorption_density(field: Field) -> np.ndarray:
    """``k = P * x * S`` on the raster."""
    return field.pressure * field.grid * field.linestrength


def raster_ray_lengths(field: Field, p0, p1) -> tuple[np.ndarray, np.ndarray]:
    """Flat cell indices crossed by a segment and the length inside each.

    Grid-line traversal: the segment is cut at every crossing of a raster line
    and each piece is charged to the cell containing its midpoint.
    """
    p0 = np.asarray(p0, dtype=float)
    d = np.asarray(p1, dtype=float) - p0
    seg_len = math.hypot(d[0], d[1])
    xe, ye = field.edges()
    ny, nx = field.grid.shape
    lo = np.array([xe[0], ye[0]])
    hi = np.array([xe[-1], ye[-1]])
    t0, t1 = 0.0, 1.0
    for ax in (0, 1):
        if d[ax] == 0.0:
            if not lo[ax] <= p0[ax] <= hi[ax]:
                return np.zeros(0, dtype=int), np.zeros(0)
            continue
        ta, tb = sorted(((lo[ax] - p0[ax]) / d[ax], (hi[ax] - p0[ax]) / d[ax]))
        t0, t1 = max(t0, ta), min(t1, tb)
    if t1 <= t0:
        return np.zeros(0, dtype=int), np.zeros(0)
    ts = [np.array([t0, t1])]
    for ax, e in ((0, xe), (1, ye)):
        if d[ax] != 0.0:
            t = (e - p0[ax]) / d[ax]
            ts.append(t[(t > t0) & (t < t1)])
    t = np.unique(np.concatenate(ts))
    mid = 0.5 * (t[1:] + t[:-1])
    ix = np.floor((p0[0] + mid * d[0] - xe[0]) / field.cell_size).astype(int)
    iy = np.floor((p0[1] + mid * d[1] - ye[0]) / field.cell_size).astype(int)
    np.clip(ix, 0, nx - 1, out=ix)
    np.clip(iy, 0, ny - 1, out=iy)
    return iy * nx + ix, np.diff(t) * seg_len


@dataclass(frozen=True)
class Measurement:
    b: np.ndarray
    snr_db: float | None = None
    seed: int | None = None

    def __post_init__(self):
        b = np.array(self.b, dtype=float)
        b.setflags(write=False)
        object.__setattr__(self, "b", b)


def forward_project(field: Field, layout: BeamLayout) -> Measurement:
    """Noise-free integrated absorbance of every beam through the raster."""
    k = absorption_density(field).ravel()
    b = np.empty(layout.M)
    for i, beam in enumerate(layout.beams):
        idx, lengths = raster_ray_lengths(field, beam.start, beam.end)
        b[i] = float(np.dot(lengths, k[idx]))
    return Measurement(b)


def add_noise(m: Measurement, snr_db: float, seed: int) -> Measurement:
    """Add zero-mean Gaussian noise with per-beam std ``b_i / 10**(snr_db/20)``.

    Noisy values are not clipped.
    """
    if not math.isfinite(snr_db):
        raise PhantomError("snr_db must be finite")
    rng = np.random.default_rng(seed)
    sigma = m.b / 10.0 ** (snr_db / 20.0)
    return Measurement(m.b + sigma * rng.standard_normal(m.b.shape), float(snr_db), seed)


def downsample_truth(field: Field, mesh: Mesh) -> np.ndarray:
    """Mean of the raster values whose cell centres fall inside each pixel.

    Pixels are treated as half-open ``[xmin, xmax) x [ymin, ymax)`` so a centre
    on a shared edge is counted once.
    """
    xc, yc = field.centers()
    tol = 1e-9 * field.cell_size
    out = np.empty(mesh.N)
    for j, (x0, y0, x1, y1) in enumerate(mesh.rects):
        i0, i1 = np.searchsorted(xc, [x0 - tol, x1 - tol])
        j0, j1 = np.searchsorted(yc, [y0 - tol, y1 - tol])
        if i1 <= i0 or j1 <= j0:
            raise PhantomError(f"pixel {j} contains no raster cell centres")
        out[j] = field.grid[j0:j1, i0:i1].mean()
    return out


def interpolate_plumes(
    first: Sequence[PlumeSpec], last: Sequence[PlumeSpec], n_frames: int
) -> list[list[PlumeSpec]]:
    """Linear interpolation of plume parameters across ``n_frames`` frames."""
    if len(first) != len(last):
        raise PhantomError("first and last frames need the same number of plumes")
    if n_frames < 1:
        raise PhantomError("need at least one frame")
    frames = []
    for f in range(n_frames):
        w = f / (n_frames - 1) if n_frames > 1 else 0.0
        frame = []
        for a, b in zip(first, last):
            if a.kind is not b.kind:
                raise PhantomError("cannot interpolate between plume kinds")
            lerp = lambda u, v: (1 - w) * u + w * v  # noqa: E731
            taper = None if a.taper is None or b.taper is None else lerp(a.taper, b.taper)
            frame.append(PlumeSpec(
                a.kind,
                (lerp(a.center[0], b.center[0]), lerp(a.center[1], b.center[1])),
                lerp(a.radius_or_sigma, b.radius_or_sigma),
                lerp(a.peak, b.peak),
                taper,
            ))
        frames.append(frame)
    return frames

"""Uniform and two-level (hybrid) pixelations of the region of sensing."""
from __future__ import annotations

import enum
import math
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .geometry import ConvexPolygon, Rect

_ALIGN_TOL = 1e-9


class MeshError(ValueError):
    pass


class Region(str, enum.Enum):
    IN_ROI = "InRoI"
    OUT_ROI = "OutRoI"


class Scheme(str, enum.Enum):
    UNIFORM = "Uniform"
    HYBRID = "Hybrid"


@dataclass(frozen=True)
class Pixel:
    id: int
    rect: Rect
    region: Region

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.rect
        return (x1 - x0) * (y1 - y0)

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.rect
        return (0.5 * (x0 + x1), 0.5 * (y0 + y1))


@dataclass(frozen=True)
class Mesh:
    """Pixels ordered RoI-first; ``pixels[:n_in]`` are all InRoI."""

    pixels: tuple[Pixel, ...]
    n_in: int
    roi_rect: Rect
    scheme: Scheme
    mesh_id: str = ""

    def __post_init__(self):
        for j, p in enumerate(self.pixels):
            if p.id != j:
                raise MeshError("pixel ids must be 0..N-1 in order")
            if (p.region is Region.IN_ROI) != (j < self.n_in):
                raise MeshError("pixels must be ordered RoI-first")

    @property
    def N(self) -> int:
        return len(self.pixels)

    @property
    def n_out(self) -> int:
        return self.N - self.n_in

    @property
    def rects(self) -> np.ndarray:
        return np.array([p.rect for p in self.pixels], dtype=float).reshape(-1, 4)

    @property
    def areas(self) -> np.ndarray:
        r = self.rects
        return (r[:, 2] - r[:, 0]) * (r[:, 3] - r[:, 1])

    @property
    def centers(self) -> np.ndarray:
        r = self.rects
        return np.column_stack([(r[:, 0] + r[:, 2]) / 2, (r[:, 1] + r[:, 3]) / 2])

    @property
    def roi_mask(self) -> np.ndarray:
        m = np.zeros(self.N, dtype=bool)
        m[: self.n_in] = True
        return m


def _in_rect(points: np.ndarray, rect: Rect) -> np.ndarray:
    x0, y0, x1, y1 = rect
    return (points[:, 0] >= x0) & (points[:, 0] <= x1) & (points[:, 1] >= y0) & (points[:, 1] <= y1)


def _grid_count(extent: float, h: float) -> int:
    q = extent / h
    n = round(q)
    if abs(q - n) > 1e-9 * max(1.0, q):
        n = math.ceil(q)
    return max(int(n), 1)


def _centered_grid(ros: ConvexPolygon, h: float):
    """Edges of a square grid of step ``h`` covering the bounding square, symmetric about its centre."""
    x0, y0, x1, y1 = ros.bbox
    side = max(x1 - x0, y1 - y0)
    if h > side * (1 + 1e-12):
        raise MeshError("pixel size exceeds the RoS bounding box")
    n = _grid_count(side, h)
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    offs = (np.arange(n + 1) - n / 2.0) * h
    return cx + offs, cy + offs


def _assemble(rects: list[Rect], in_roi: list[bool], roi_rect: Rect, scheme: Scheme, mesh_id: str) -> Mesh:
    if not rects:
        raise MeshError("mesh is empty")
    # RoI first, then row-major (bottom-to-top, left-to-right) inside each block
    order = sorted(range(len(rects)), key=lambda j: (not in_roi[j], rects[j][1], rects[j][0]))
    pixels = tuple(
        Pixel(new, rects[old], Region.IN_ROI if in_roi[old] else Region.OUT_ROI)
        for new, old in enumerate(order)
    )
    return Mesh(pixels, sum(in_roi), tuple(float(v) for v in roi_rect), scheme, mesh_id)


def build_uniform_mesh(ros: ConvexPolygon, pixel_size: float, roi_rect: Rect, mesh_id: str = "") -> Mesh:
    """Uniform square grid over the RoS, keeping pixels whose centre is inside it.

    A pixel is tagged InRoI iff its centre lies inside ``roi_rect``.
    """
    if pixel_size <= 0:
        raise MeshError("pixel_size must be positive")
    xs, ys = _centered_grid(ros, pixel_size)
    rects, tags = [], []
    for j in range(len(ys) - 1):
        for i in range(len(xs) - 1):
            r = (float(xs[i]), float(ys[j]), float(xs[i + 1]), float(ys[j + 1]))
            c = np.array([[(r[0] + r[2]) / 2, (r[1] + r[3]) / 2]])
            if not ros.contains(c, tol=1e-12)[0]:
                continue
            rects.append(r)
            tags.append(bool(_in_rect(c, roi_rect)[0]))
    return _assemble(rects, tags, roi_rect, Scheme.UNIFORM, mesh_id or f"uniform-h{pixel_size:g}")


def build_hybrid_mesh(
    ros: ConvexPolygon, h_out: float, h_in: float, refine_rect: Rect, mesh_id: str = ""
) -> Mesh:
    """Two-level mesh: coarse ``h_out`` cells, refined r x r inside ``refine_rect``.

    ``refine_rect`` must lie on coarse grid lines and ``h_out / h_in`` must be
    an integer >= 2. Fine pixels are InRoI; coarse cells with centre inside
    the RoS are kept as OutRoI.
    """
    if h_in <= 0 or h_out <= 0:
        raise MeshError("pixel sizes must be positive")
    ratio = h_out / h_in
    r = round(ratio)
    if abs(ratio - r) > _ALIGN_TOL * max(1.0, ratio) or r < 2:
        raise MeshError(f"h_out/h_in = {ratio:g} is not an integer >= 2")
    xs, ys = _centered_grid(ros, h_out)

    def snap(v, grid):
        k = int(np.argmin(np.abs(grid - v)))
        if abs(grid[k] - v) > _ALIGN_TOL * max(1.0, h_out):
            raise MeshError("refine_rect is not aligned to the coarse grid")
        return k

    fx0, fy0, fx1, fy1 = refine_rect
    i0, i1 = snap(fx0, xs), snap(fx1, xs)
    j0, j1 = snap(fy0, ys), snap(fy1, ys)
    if i1 <= i0 or j1 <= j0:
        raise MeshError("refine_rect is empty")

    rects, tags = [], []
    for j in range(len(ys) - 1):
        for i in range(len(xs) - 1):
            x0, x1, y0, y1 = xs[i], xs[i + 1], ys[j], ys[j + 1]
            if i0 <= i < i1 and j0 <= j < j1:
                for b in range(r):
                    for a in range(r):
                        rects.append((
                            float(x0 + a * h_in), float(y0 + b * h_in),
                            float(x1 if a == r - 1 else x0 + (a + 1) * h_in),
                            float(y1 if b == r - 1 else y0 + (b + 1) * h_in),
                        ))
                        tags.append(True)
                continue
            c = np.array([[(x0 + x1) / 2, (y0 + y1) / 2]])
            if ros.contains(c, tol=1e-12)[0]:
                rects.append((float(x0), float(y0), float(x1), float(y1)))
                tags.append(False)
    refine = (float(xs[i0]), float(ys[j0]), float(xs[i1]), float(ys[j1]))
    return _assemble(rects, tags, refine, Scheme.HYBRID, mesh_id or f"hybrid-{h_out:g}-{h_in:g}")


def centered_rect(side: float, center=(0.0, 0.0)) -> Rect:
    h = side / 2.0
    return (center[0] - h, center[1] - h, center[0] + h, center[1] + h)


@dataclass(frozen=True)
class AdjacencyGraph:
    """Edges ``(a, b, shared_edge_length, centroid_distance)`` with ``a < b``."""

    edges: tuple[tuple[int, int, float, float], ...]

    @property
    def pairs(self) -> np.ndarray:
        return np.array([(a, b) for a, b, _, _ in self.edges], dtype=int).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.edges)


def _key(v: float, scale: float) -> int:
    return int(round(v / (scale * 1e-9)))


def adjacency(mesh: Mesh) -> AdjacencyGraph:
    """Pixel pairs sharing a boundary segment of positive length.

    Rectangles are bucketed by their edge coordinates so only pixels meeting
    on a common grid line are compared.
    """
    rects = mesh.rects
    if mesh.N == 0:
        return AdjacencyGraph(())
    scale = float(np.abs(rects).max()) or 1.0
    centers = mesh.centers
    found: dict[tuple[int, int], float] = {}
    for ax in (0, 1):
        lo_side, hi_side = defaultdict(list), defaultdict(list)
        for j, r in enumerate(rects):
            lo_side[_key(r[ax], scale)].append(j)
            hi_side[_key(r[ax + 2], scale)].append(j)
        o = 1 - ax
        for k, right in lo_side.items():
            left = hi_side.get(k)
            if not left:
                continue
            for a in left:
                for b in right:
                    shared = min(rects[a, o + 2], rects[b, o + 2]) - max(rects[a, o], rects[b, o])
                    if shared > 1e-9 * scale:
                        found[(min(a, b), max(a, b))] = float(shared)
    edges = tuple(
        (a, b, found[(a, b)], float(np.hypot(*(centers[a] - centers[b]))))
        for a, b in sorted(found)
    )
    return AdjacencyGraph(edges)


@dataclass(frozen=True)
class MeshReport:
    N: int
    n_in: int
    n_out: int
    size_histogram: dict[float, int]
    covered_area: float

    def lines(self) -> list[str]:
        out = [f"N={self.N}", f"n_in={self.n_in}", f"n_out={self.n_out}",
               f"covered_area={self.covered_area:.6f}"]
        for size, count in self.size_histogram.items():
            out.append(f"pixels of size {size:g}: {count}")
        return out


def mesh_report(mesh: Mesh) -> MeshReport:
    r = mesh.rects
    sizes = Counter(round(float(w), 9) for w in r[:, 2] - r[:, 0])
    return MeshReport(
        N=mesh.N,
        n_in=mesh.n_in,
        n_out=mesh.n_out,
        size_histogram=dict(sorted(sizes.items())),
        covered_area=float(mesh.areas.sum()),
    )


"""Beam layouts, the region of sensing, and exact segment/region chord lengths.

Coordinates are in cm with the origin at the centroid of the region of
sensing, x to the right and y up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Chords shorter than this fraction of the segment length are round-off from
# grazing contact (corner touches) and are reported as exactly zero.
CHORD_EPS = 1e-12

Point = tuple[float, float]
Rect = tuple[float, float, float, float]


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class ConvexPolygon:
    """Convex polygon with counterclockwise vertices."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("polygon needs at least three 2-D vertices")
        if _signed_area(v) < 0:
            v = v[::-1]
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        if self.area <= 0:
            raise GeometryError("degenerate polygon")
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if np.any(cross < -1e-9 * self.area):
            raise GeometryError("polygon is not convex")

    @classmethod
    def from_rect(cls, rect: Rect) -> "ConvexPolygon":
        x0, y0, x1, y1 = rect
        return cls(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float))

    @classmethod
    def square(cls, side: float) -> "ConvexPolygon":
        h = side / 2.0
        return cls.from_rect((-h, -h, h, h))

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    @property
    def centroid(self) -> np.ndarray:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        cross = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        return ((v + w) * cross[:, None]).sum(axis=0) / (3.0 * cross.sum())

    @property
    def bbox(self) -> Rect:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))

    def halfplanes(self) -> tuple[np.ndarray, np.ndarray]:
        """Inward normals ``n`` and offsets ``c`` with interior ``n @ p >= c``."""
        v = self.vertices
        e = np.roll(v, -1, axis=0) - v
        normals = np.column_stack([-e[:, 1], e[:, 0]])
        normals /= np.linalg.norm(normals, axis=1)[:, None]
        return normals, np.einsum("ij,ij->i", normals, v)

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        """Closed point-in-polygon test, vectorized over an (..., 2) array."""
        p = np.asarray(points, dtype=float)
        normals, offsets = self.halfplanes()
        s = p @ normals.T - offsets
        return np.all(s >= -tol, axis=-1)

    def clip(self, normal, offset: float) -> "ConvexPolygon":
        """Intersect with the half-plane ``normal @ p <= offset``."""
        return ConvexPolygon(_clip_halfplane(self.vertices, np.asarray(normal, float), offset))


def _signed_area(v: np.ndarray) -> float:
    w = np.roll(v, -1, axis=0)
    return 0.5 * float(np.sum(v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]))


def _clip_halfplane(v: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    out = []
    n = len(v)
    s = v @ normal - offset
    scale = max(1.0, float(np.abs(v).max()))
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        sa, sb = s[i], s[(i + 1) % n]
        if sa <= 0:
            out.append(a)
        if (sa < 0 < sb) or (sb < 0 < sa):
            t = sa / (sa - sb)
            out.append(a + t * (b - a))
    pts = []
    for p in out:
        if not pts or np.linalg.norm(p - pts[-1]) > 1e-12 * scale:
            pts.append(p)
    if len(pts) > 1 and np.linalg.norm(pts[0] - pts[-1]) <= 1e-12 * scale:
        pts.pop()
    if len(pts) < 3:
        raise GeometryError("half-plane clipping produced an empty region")
    return np.array(pts)


@dataclass(frozen=True)
class Beam:
    id: int
    start: Point
    end: Point

    def __post_init__(self):
        if self.length <= 0:
            raise GeometryError(f"beam {self.id} has zero length")

    @property
    def length(self) -> float:
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1])


@dataclass(frozen=True)
class BeamLayout:
    """Parallel-beam layout: ``n_projections`` equiangular fans of equispaced beams.

    ``ros`` is set when the beams were clipped to an explicit sensing region
    instead of the default slab intersection.
    """

    beams: tuple[Beam, ...]
    n_projections: int
    beams_per_projection: int
    projection_angles: tuple[float, ...]
    beam_spacing: float
    D: float
    ros: ConvexPolygon | None = field(default=None, compare=False)

    @property
    def M(self) -> int:
        return len(self.beams)

    @property
    def layout_id(self) -> str:
        tag = "clipped" if self.ros is not None else "slab"
        return (
            f"layout-{self.n_projections}x{self.beams_per_projection}"
            f"-s{self.beam_spacing:g}-D{self.D:g}-{tag}"
        )

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        starts = np.array([b.start for b in self.beams], dtype=float)
        ends = np.array([b.end for b in self.beams], dtype=float)
        return starts, ends

    def beam_offsets(self) -> np.ndarray:
        """Signed perpendicular offset of each beam from the centroid."""
        out = []
        for b in self.beams:
            p = self.projection_angles[b.id // self.beams_per_projection]
            th = math.radians(p)
            mid = 0.5 * (np.asarray(b.start) + np.asarray(b.end))
            out.append(-math.sin(th) * mid[0] + math.cos(th) * mid[1])
        return np.array(out)


def build_beam_layout(
    n_projections: int,
    beams_per_projection: int,
    spacing: float,
    D: float,
    clip_to: ConvexPolygon | None = None,
) -> BeamLayout:
    """Build an equiangular parallel-beam layout centred on the origin.

    Projection ``p`` runs along angle ``p * 180 / n_projections`` degrees and
    holds ``beams_per_projection`` parallel beams spaced ``spacing`` apart,
    symmetric about the origin. Each beam is the emitter-to-detector segment
    of length ``D``. If ``clip_to`` is given, every beam is instead the full
    chord of its line through that polygon.
    """
    if n_projections < 1 or beams_per_projection < 1:
        raise GeometryError("need at least one projection and one beam per projection")
    if not (spacing > 0 and D > 0):
        raise GeometryError("spacing and D must be positive")
    if (beams_per_projection - 1) * spacing >= D:
        raise GeometryError("beam fan is wider than the emitter-detector distance")

    angles = tuple(p * 180.0 / n_projections for p in range(n_projections))
    offsets = (np.arange(beams_per_projection) - (beams_per_projection - 1) / 2.0) * spacing
    if clip_to is not None:
        lo = np.asarray(clip_to.bbox)
        reach = float(np.abs(lo).max()) * 4.0 + D
    beams = []
    for p, ang in enumerate(angles):
        th = math.radians(ang)
        u = np.array([math.cos(th), math.sin(th)])
        n = np.array([-math.sin(th), math.cos(th)])
        for k, off in enumerate(offsets):
            i = p * beams_per_projection + k
            if clip_to is None:
                a = off * n - 0.5 * D * u
                b = off * n + 0.5 * D * u
            else:
                a, b = _clip_line_to_polygon(off * n - reach * u, off * n + reach * u, clip_to)
                if a is None:
                    raise GeometryError(f"beam {i} misses the sensing region")
            beams.append(Beam(i, (float(a[0]), float(a[1])), (float(b[0]), float(b[1]))))
    return BeamLayout(
        beams=tuple(beams),
        n_projections=n_projections,
        beams_per_projection=beams_per_projection,
        projection_angles=angles,
        beam_spacing=float(spacing),
        D=float(D),
        ros=clip_to,
    )


def slab_polygon(angles_deg: Sequence[float], width: float) -> ConvexPolygon:
    """Intersection of slabs of the given width centred on the origin."""
    big = 4.0 * width
    poly = ConvexPolygon.square(2 * big)
    for ang in angles_deg:
        th = math.radians(ang)
        u = np.array([math.cos(th), math.sin(th)])
        poly = poly.clip(u, width / 2.0).clip(-u, width / 2.0)
    return poly


def ros_polygon(layout: BeamLayout) -> ConvexPolygon:
    """Region of sensing swept by the layout.

    For four equiangular projections this is the regular octagon with apothem
    ``D / 2``; for two orthogonal projections it is the square of side ``D``.
    """
    if layout.ros is not None:
        return layout.ros
    return slab_polygon(layout.projection_angles, layout.D)


def _parametric_clip(p0, d, normals, offsets):
    # interior: normals @ (p0 + t d) >= offsets, t in [0, 1]
    t0, t1 = 0.0, 1.0
    num = offsets - normals @ p0
    den = normals @ d
    for nu, de in zip(num, den):
        if de == 0.0:
            if nu > 0.0:
                return None
        elif de > 0.0:
            with np.errstate(over="ignore"):  # +-inf is the right limit
                t0 = max(t0, nu / de)
        else:
            with np.errstate(over="ignore"):
                t1 = min(t1, nu / de)
        if t0 > t1:
            return None
    return t0, t1


def _clip_line_to_polygon(a, b, poly: ConvexPolygon):
    a = np.asarray(a, float)
    d = np.asarray(b, float) - a
    normals, offsets = poly.halfplanes()
    t = _parametric_clip(a, d, normals, offsets)
    if t is None or t[1] - t[0] <= CHORD_EPS:
        return None, None
    return a + t[0] * d, a + t[1] * d


def segment_rect_chords(p0, p1, rects) -> np.ndarray:
    """Intersection lengths of one segment with many closed rectangles.

    Liang-Barsky slab clipping vectorized over ``rects`` (shape (K, 4) as
    ``xmin, ymin, xmax, ymax``). Collinear overlap with an edge counts at full
    length; corner touches give 0.
    """
    p0 = np.asarray(p0, dtype=float)
    d = np.asarray(p1, dtype=float) - p0
    r = np.atleast_2d(np.asarray(rects, dtype=float))
    seg_len = math.hypot(d[0], d[1])
    t0 = np.zeros(len(r))
    t1 = np.ones(len(r))
    ok = np.ones(len(r), dtype=bool)
    for ax in (0, 1):
        lo, hi = r[:, ax], r[:, ax + 2]
        if d[ax] == 0.0:
            ok &= (p0[ax] >= lo) & (p0[ax] <= hi)
        else:
            ta = (lo - p0[ax]) / d[ax]
            tb = (hi - p0[ax]) / d[ax]
            t0 = np.maximum(t0, np.minimum(ta, tb))
            t1 = np.minimum(t1, np.maximum(ta, tb))
    out = np.where(ok, np.clip(t1 - t0, 0.0, None), 0.0) * seg_len
    out[out <= CHORD_EPS * seg_len] = 0.0
    return out


def segment_rect_chord(segment, rect: Rect) -> float:
    """Exact length of ``segment`` inside the closed axis-aligned ``rect``."""
    x0, y0, x1, y1 = rect
    if not (x1 > x0 and y1 > y0):
        raise GeometryError("rectangle must have positive width and height")
    return float(segment_rect_chords(segment[0], segment[1], [rect])[0])


def segment_polygon_chord(segment, poly: ConvexPolygon) -> float:
    """Exact length of ``segment`` inside a convex polygon (half-plane clipping)."""
    p0 = np.asarray(segment[0], dtype=float)
    d = np.asarray(segment[1], dtype=float) - p0
    normals, offsets = poly.halfplanes()
    t = _parametric_clip(p0, d, normals, offsets)
    if t is None:
        return 0.0
    seg_len = math.hypot(d[0], d[1])
    length = (t[1] - t[0]) * seg_len
    return length if length > CHORD_EPS * seg_len else 0.0


def beam_segment(beam: Beam):
    return (beam.start, beam.end)

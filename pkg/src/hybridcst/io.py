"""CSV, greyscale-raster and text exports with provenance headers."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import BeamLayout
from .meshing import Mesh

# greyscale mapping: value v -> round(255 * (v - vmin) / (vmax - vmin)), 0 when vmax == vmin
GREY_LEVELS = 255


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _comment_lines(provenance: Mapping[str, object] | None) -> list[str]:
    if not provenance:
        return []
    return [f"# {k}={fmt(v)}" for k, v in provenance.items()]


def write_csv(
    path,
    header: Sequence[str],
    rows: Iterable[Sequence],
    provenance: Mapping[str, object] | None = None,
) -> Path:
    """Write a CSV with ``# key=value`` provenance lines above the header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in _comment_lines(provenance):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def write_text(path, lines: Iterable[str], provenance: Mapping[str, object] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = _comment_lines(provenance) + list(lines)
    path.write_text("\n".join(body) + "\n")
    return path


def to_grey(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Linear value-to-greyscale map; returns ``(uint8 image, vmin, vmax)``."""
    v = np.asarray(values, dtype=float)
    finite = v[np.isfinite(v)]
    vmin = float(finite.min()) if finite.size else 0.0
    vmax = float(finite.max()) if finite.size else 0.0
    if vmax > vmin:
        g = np.rint(GREY_LEVELS * (np.nan_to_num(v, nan=vmin) - vmin) / (vmax - vmin))
    else:
        g = np.zeros_like(v)
    return np.clip(g, 0, GREY_LEVELS).astype(np.uint8), vmin, vmax


def write_pgm(path, image: np.ndarray, provenance: Mapping[str, object] | None = None) -> Path:
    """Binary PGM (P5); row 0 of ``image`` is the top of the picture."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = ["P5"] + _comment_lines(provenance) + [f"{img.shape[1]} {img.shape[0]}", str(GREY_LEVELS)]
    with path.open("wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        fh.write(img.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        end = data.index(b"\n", pos)
        line = data[pos:end].decode("ascii")
        pos = end + 1
        if line.startswith("#"):
            continue
        tokens.extend(line.split())
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data[pos : pos + w * h], dtype=np.uint8).reshape(h, w)


def write_raster(path, values: np.ndarray, provenance: Mapping[str, object] | None = None) -> Path:
    """Greyscale PGM of ``values`` (row 0 = lowest y) plus a JSON sidecar with the range."""
    img, vmin, vmax = to_grey(np.asarray(values)[::-1])
    path = write_pgm(path, img, provenance)
    side = {"vmin": vmin, "vmax": vmax, "mapping": "linear", "levels": GREY_LEVELS}
    if provenance:
        side.update({k: v for k, v in provenance.items()})
    Path(str(path) + ".json").write_text(json.dumps(side, sort_keys=True, indent=1) + "\n")
    return path


def mesh_raster(mesh: Mesh, values=None, resolution: float | None = None) -> np.ndarray:
    """Rasterize per-pixel ``values`` (NaN outside the mesh).

    With ``values=None`` the result is a boundary preview: 1 on pixel edges,
    0 inside pixels.
    """
    r = mesh.rects
    x0, y0 = r[:, 0].min(), r[:, 1].min()
    x1, y1 = r[:, 2].max(), r[:, 3].max()
    h = resolution or float((r[:, 2] - r[:, 0]).min()) / 8
    nx = int(round((x1 - x0) / h))
    ny = int(round((y1 - y0) / h))
    out = np.full((ny, nx), np.nan)
    for j, (a, b, c, d) in enumerate(r):
        i0, i1 = int(round((a - x0) / h)), int(round((c - x0) / h))
        j0, j1 = int(round((b - y0) / h)), int(round((d - y0) / h))
        if values is None:
            out[j0:j1, i0:i1] = 0.0
            out[j0:j1, i0] = out[j0:j1, i1 - 1] = 1.0
            out[j0, i0:i1] = out[j1 - 1, i0:i1] = 1.0
        else:
            out[j0:j1, i0:i1] = values[j]
    return out


def write_mesh_csv(path, mesh: Mesh, provenance=None) -> Path:
    rows = ((p.id, *p.rect, p.region.value) for p in mesh.pixels)
    return write_csv(path, ["id", "xmin", "ymin", "xmax", "ymax", "region"], rows, provenance)


def write_beams_csv(path, layout: BeamLayout, provenance=None) -> Path:
    rows = ((b.id, *b.start, *b.end) for b in layout.beams)
    return write_csv(path, ["id", "x0", "y0", "x1", "y1"], rows, provenance)


def write_matrix_csv(path, entries: np.ndarray, provenance=None) -> Path:
    header = [f"p{j}" for j in range(entries.shape[1])]
    return write_csv(path, header, entries.tolist(), provenance)


def write_triplets_csv(path, entries: np.ndarray, provenance=None) -> Path:
    ii, jj = np.nonzero(entries)
    rows = ((i, j, entries[i, j]) for i, j in zip(ii, jj))
    return write_csv(path, ["i", "j", "value"], rows, provenance)


def write_spectrum_csv(path, sigma: np.ndarray, provenance=None) -> Path:
    return write_csv(path, ["j", "sigma"], ((j + 1, s) for j, s in enumerate(sigma)), provenance)


def write_measurement_csv(path, b: np.ndarray, provenance=None) -> Path:
    return write_csv(path, ["beam", "b"], enumerate(b), provenance)


def write_recon_csv(path, k: np.ndarray, x: np.ndarray, provenance=None) -> Path:
    return write_csv(path, ["pixel", "k", "x"], ((j, k[j], x[j]) for j in range(len(k))), provenance)

"""Experiment configuration: one YAML file describes a complete study."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .geometry import BeamLayout, ConvexPolygon, build_beam_layout, ros_polygon
from .meshing import Mesh, build_hybrid_mesh, build_uniform_mesh, centered_rect
from .phantom import Field, PlumeSpec, build_field, interpolate_plumes
from .solvers import SolverKind, SolverOptions


class ConfigError(ValueError):
    pass


def _rect(d: dict, side_key: str, rect_key: str):
    if d.get(rect_key) is not None:
        r = tuple(float(v) for v in d[rect_key])
        if len(r) != 4:
            raise ConfigError(f"{rect_key} needs four numbers")
        return r
    if d.get(side_key) is not None:
        return centered_rect(float(d[side_key]))
    raise ConfigError(f"either {rect_key} or {side_key} is required")


@dataclass(frozen=True)
class LayoutConfig:
    n_projections: int
    beams_per_projection: int
    spacing: float
    D: float
    # None: slab intersection; otherwise the side of a square RoS the beams are clipped to
    square_side: float | None = None

    def build(self) -> BeamLayout:
        clip = ConvexPolygon.square(self.square_side) if self.square_side else None
        return build_beam_layout(self.n_projections, self.beams_per_projection,
                                 self.spacing, self.D, clip_to=clip)


@dataclass(frozen=True)
class MeshConfig:
    scheme: str
    layout: str = "main"
    pixel_size: float | None = None
    divisions: int | None = None
    h_out: float | None = None
    h_in: float | None = None
    roi_side: float | None = None
    roi_rect: tuple[float, float, float, float] | None = None

    def build(self, ros: ConvexPolygon, name: str = "") -> Mesh:
        s = self.scheme.lower()
        x0, y0, x1, y1 = ros.bbox
        side = max(x1 - x0, y1 - y0)
        roi = _rect(asdict(self), "roi_side", "roi_rect")
        if s == "uniform":
            if self.divisions:
                h = side / self.divisions
            elif self.pixel_size:
                h = self.pixel_size
            else:
                raise ConfigError(f"mesh {name!r}: uniform mesh needs pixel_size or divisions")
            return build_uniform_mesh(ros, h, roi, mesh_id=name)
        if s == "hybrid":
            if not (self.h_out and self.h_in):
                raise ConfigError(f"mesh {name!r}: hybrid mesh needs h_out and h_in")
            return build_hybrid_mesh(ros, self.h_out, self.h_in, roi, mesh_id=name)
        raise ConfigError(f"mesh {name!r}: unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class PhantomConfig:
    first: tuple[PlumeSpec, ...]
    last: tuple[PlumeSpec, ...] | None = None
    cell_size: float = 0.13
    background: float = 0.005
    temperature: float = 294.15
    pressure: float = 1.0
    linestrength: float = 1.0
    n_frames: int = 50
    # 1-based frame numbers used by sweeps and comparisons
    frames: tuple[int, ...] = (11, 12, 13, 14, 15)

    def plumes(self, frame: int) -> list[PlumeSpec]:
        if not 1 <= frame <= self.n_frames:
            raise ConfigError(f"frame {frame} outside 1..{self.n_frames}")
        seq = interpolate_plumes(self.first, self.last or self.first, self.n_frames)
        return seq[frame - 1]

    def build(self, ros: ConvexPolygon, frame: int) -> Field:
        return build_field(ros, self.cell_size, self.background, self.plumes(frame),
                           self.temperature, self.pressure, self.linestrength)


@dataclass(frozen=True)
class SolverConfig:
    grid: tuple[float, float, int]
    max_iterations: int = 2000
    relative_tolerance: float = 1e-8
    nonneg: bool = True

    @property
    def options(self) -> SolverOptions:
        return SolverOptions(self.max_iterations, self.relative_tolerance, self.nonneg)


@dataclass(frozen=True)
class StudyConfig:
    schemes: tuple[str, ...]
    solvers: tuple[str, ...]
    phantoms: tuple[str, ...]
    sweep_snr_db: float | None = 40.0
    snr_db: tuple[float | None, ...] = (40.0,)
    n_reps: int = 20


@dataclass(frozen=True)
class ExperimentConfig:
    layouts: dict[str, LayoutConfig]
    meshes: dict[str, MeshConfig]
    phantoms: dict[str, PhantomConfig] = field(default_factory=dict)
    solvers: dict[str, SolverConfig] = field(default_factory=dict)
    study: StudyConfig | None = None
    seed: int = 0
    output_dir: str = "out"
    name: str = "experiment"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.layouts:
            raise ConfigError("at least one layout is required")
        for name, m in self.meshes.items():
            if m.layout not in self.layouts:
                raise ConfigError(f"mesh {name!r} references unknown layout {m.layout!r}")
        for name in self.solvers:
            if name not in SolverKind.__members__:
                raise ConfigError(f"unknown solver {name!r}")
        for name, s in self.solvers.items():
            lo, hi, n = s.grid
            if not (0 < lo < hi) or n < 2:
                raise ConfigError(f"solver {name!r}: grid needs 0 < lo < hi and at least 2 steps")
        st = self.study
        if st is None:
            return
        for m in st.schemes:
            if m not in self.meshes:
                raise ConfigError(f"study references unknown mesh {m!r}")
        if len({self.meshes[m].layout for m in st.schemes}) > 1:
            raise ConfigError("all compared meshes must share one layout")
        for s in st.solvers:
            if s not in self.solvers:
                raise ConfigError(f"study references solver {s!r} without a solver block")
        for p in st.phantoms:
            if p not in self.phantoms:
                raise ConfigError(f"study references unknown phantom {p!r}")
        if st.n_reps < 1:
            raise ConfigError("n_reps must be >= 1")

    # -- construction helpers -------------------------------------------------

    def layout_for(self, mesh_name: str) -> BeamLayout:
        return self.layouts[self.mesh(mesh_name).layout].build()

    def mesh(self, name: str) -> MeshConfig:
        if name not in self.meshes:
            raise ConfigError(f"unknown mesh {name!r}")
        return self.meshes[name]

    def phantom(self, name: str) -> PhantomConfig:
        if name not in self.phantoms:
            raise ConfigError(f"unknown phantom {name!r}")
        return self.phantoms[name]

    def build_mesh(self, name: str) -> tuple[BeamLayout, ConvexPolygon, Mesh]:
        layout = self.layout_for(name)
        ros = ros_polygon(layout)
        return layout, ros, self.mesh(name).build(ros, name)

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        def plumes(ps):
            return None if ps is None else [_plume_dict(p) for p in ps]

        d = {
            "name": self.name,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "layouts": {k: asdict(v) for k, v in self.layouts.items()},
            "meshes": {k: _drop_none(asdict(v)) for k, v in self.meshes.items()},
            "phantoms": {
                k: _drop_none({**asdict(v), "first": plumes(v.first), "last": plumes(v.last),
                               "frames": list(v.frames)})
                for k, v in self.phantoms.items()
            },
            "solvers": {k: {**asdict(v), "grid": list(v.grid)} for k, v in self.solvers.items()},
        }
        for m in d["meshes"].values():
            if "roi_rect" in m:
                m["roi_rect"] = list(m["roi_rect"])
        d = _drop_none(d)
        if self.study is not None:
            # None is meaningful here (noise-free), so it is kept
            st = asdict(self.study)
            d["study"] = {k: list(v) if isinstance(v, tuple) else v for k, v in st.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            layouts = {k: LayoutConfig(**v) for k, v in d["layouts"].items()}
            meshes = {}
            for k, v in d.get("meshes", {}).items():
                v = dict(v)
                if v.get("roi_rect") is not None:
                    v["roi_rect"] = tuple(float(x) for x in v["roi_rect"])
                meshes[k] = MeshConfig(**v)
            phantoms = {}
            for k, v in (d.get("phantoms") or {}).items():
                v = dict(v)
                v["first"] = tuple(_plume(p) for p in v["first"])
                if v.get("last") is not None:
                    v["last"] = tuple(_plume(p) for p in v["last"])
                if "frames" in v:
                    v["frames"] = tuple(int(f) for f in v["frames"])
                phantoms[k] = PhantomConfig(**v)
            solvers = {}
            for k, v in (d.get("solvers") or {}).items():
                v = dict(v)
                lo, hi, n = v["grid"]
                v["grid"] = (float(lo), float(hi), int(n))
                solvers[k] = SolverConfig(**v)
            study = None
            if d.get("study"):
                st = dict(d["study"])
                for key in ("schemes", "solvers", "phantoms"):
                    st[key] = tuple(st[key])
                if "snr_db" in st:
                    st["snr_db"] = tuple(None if s is None else float(s) for s in st["snr_db"])
                study = StudyConfig(**st)
            return cls(
                layouts=layouts,
                meshes=meshes,
                phantoms=phantoms,
                solvers=solvers,
                study=study,
                seed=int(d.get("seed", 0)),
                output_dir=str(d.get("output_dir", "out")),
                name=str(d.get("name", "experiment")),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        data = yaml.safe_load(text)
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        try:
            return cls.loads(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from exc

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _plume(d: dict) -> PlumeSpec:
    return PlumeSpec(d["kind"], tuple(d["center"]), float(d["radius_or_sigma"]), float(d["peak"]),
                     None if d.get("taper") is None else float(d["taper"]))


def _plume_dict(p: PlumeSpec) -> dict:
    return _drop_none({"kind": p.kind.value, "center": list(p.center),
                       "radius_or_sigma": p.radius_or_sigma, "peak": p.peak, "taper": p.taper})


def _drop_none(d):
    if isinstance(d, dict):
        return {k: _drop_none(v) for k, v in d.items() if v is not None}
    return d

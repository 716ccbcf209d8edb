"""Scenario configuration: sectioned key-value files and their validation.

Sections: ``scenario``, ``geometry``, ``material``, ``criterion``, ``load``,
``numerics``, ``output``. Units are N, mm, s, MPa, t/mm^3. The fracture
energy ``G0`` is read in J/mm^2 unless ``G0_unit = N/mm``.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, MorphPDError

SECTIONS = ("scenario", "geometry", "material", "criterion", "load", "numerics", "output")


@dataclass
class GeometryConfig:
    kind: str = "rect"  # rect | disk | mesh_file
    width: float = 40.0
    height: float = 100.0
    radius: float = 72.0  # disk
    hole_radius: float = 0.0  # disk, centred
    spacing: float = 0.5
    mesh_file: str = ""
    notch: tuple = ()  # (x0, y0, x1, y1)
    pores_file: str = ""
    pore_window: tuple = ()  # (x0, y0, x1, y1) keeps pores inside, shifts origin
    mesher: str = "auto"  # auto | quad | tri


@dataclass
class MaterialConfig:
    E: float | None = None
    rho: float | None = None
    nu: float = 1.0 / 3.0
    G0: float | None = None
    G0_unit: str = "J/mm2"  # or "N/mm" (= kJ/m^2)
    s_crit: float | None = None
    delta: float | None = None  # default 3 * spacing
    l: float | None = None  # default delta / 15


@dataclass
class CriterionConfig:
    mode: str = "broken_bond"
    sigma_crit: float | None = None
    von_mises: str = "standard"
    adaptive: bool = True
    initial_flags: tuple = ()  # ((x, y, r1, r2), ...)
    strip: tuple = ()  # (axis, center, half_inner, half_outer)
    r_p: float | None = None  # runtime radii, default 2 delta and 4 delta
    R_p: float | None = None


@dataclass
class LoadConfig:
    kind: str = "none"  # none | step | ramp | explosion
    sides: tuple = ()  # step and ramp: subset of left right top bottom
    sigma0: float = 0.0
    t0: float = 0.0
    P0: float = 0.0
    m_u: float = 0.0
    m_d: float = 0.0
    alpha1: float = 1e-7
    alpha2: float = 1e-3
    fixed: str = ""  # "bottom": y fixed along the bottom, x pinned at its left end


@dataclass
class NumericsConfig:
    t_end: float = 1e-6
    dt: float | None = None
    safety: float = 0.5
    quadrature: str = "subcell"
    clip_tol: float = 0.05


@dataclass
class OutputConfig:
    every: int = 25
    phi_threshold: float = 0.35
    snapshots: bool = True


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    description: str = ""
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    material: MaterialConfig = field(default_factory=MaterialConfig)
    criterion: CriterionConfig = field(default_factory=CriterionConfig)
    load: LoadConfig = field(default_factory=LoadConfig)
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    base_dir: str = ""

    @property
    def delta(self):
        return self.material.delta if self.material.delta is not None else 3.0 * self.geometry.spacing

    def resolve_path(self, p):
        if not p:
            return p
        path = Path(p)
        if not path.is_absolute() and self.base_dir:
            path = Path(self.base_dir) / path
        return str(path)


# -- parsing -----------------------------------------------------------------


def _floats(text, n=None):
    vals = tuple(float(v) for v in text.replace(",", " ").split())
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} numbers")
    return vals


def _parse_value(f, raw):
    t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
    raw = raw.strip()
    if f.name == "initial_flags":
        groups = [g for g in raw.split(";") if g.strip()]
        return tuple(_floats(g, 4) for g in groups)
    if f.name == "strip":
        return _floats(raw, 4) if raw else ()
    if f.name in ("notch", "pore_window"):
        return _floats(raw, 4) if raw else ()
    if f.name == "sides":
        return tuple(raw.replace(",", " ").split())
    if "bool" in t:
        return raw.lower() in ("1", "true", "yes", "on")
    if "int" in t and "float" not in t:
        return int(raw)
    if "float" in t:
        if raw.lower() in ("", "none", "auto"):
            return None
        return float(raw)
    return raw


def _format_value(v):
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return "; ".join(" ".join(repr(float(x)) for x in g) for g in v)
        return " ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    return str(v)


_SECTION_TYPES = {
    "geometry": GeometryConfig,
    "material": MaterialConfig,
    "criterion": CriterionConfig,
    "load": LoadConfig,
    "numerics": NumericsConfig,
    "output": OutputConfig,
}


def parse_text(text, base_dir="", source="<string>"):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    unknown = set(cp.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    for required in ("material", "criterion"):
        if not cp.has_section(required):
            raise ConfigError(f"missing [{required}] section")
    cfg = ScenarioConfig(base_dir=str(base_dir))
    if cp.has_section("scenario"):
        cfg.name = cp.get("scenario", "name", fallback=cfg.name)
        cfg.description = cp.get("scenario", "description", fallback="")
    for sec, cls in _SECTION_TYPES.items():
        obj = cls()
        if cp.has_section(sec):
            fields = {f.name: f for f in dataclasses.fields(cls)}
            for key, raw in cp.items(sec):
                if key not in fields:
                    raise ConfigError(f"[{sec}] unknown key '{key}'")
                try:
                    setattr(obj, key, _parse_value(fields[key], raw))
                except ValueError as exc:
                    raise ConfigError(f"[{sec}] {key}: {exc}") from None
        setattr(cfg, sec, obj)
    return cfg


def to_text(cfg, resolved=None):
    """Serialise a config; ``resolved`` adds a comment block of derived values."""
    out = ["[scenario]", f"name = {cfg.name}"]
    if cfg.description:
        out.append(f"description = {cfg.description}")
    for sec in _SECTION_TYPES:
        out.append("")
        out.append(f"[{sec}]")
        obj = getattr(cfg, sec)
        for f in dataclasses.fields(obj):
            out.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
    if resolved:
        out.append("")
        out.append("# resolved values")
        out += [f"# {k} = {v!r}" for k, v in resolved.items()]
    return "\n".join(out) + "\n"


def load_config(path, resolve=True):
    path = Path(str(path))
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    cfg = parse_text(text, base_dir=path.parent, source=str(path))
    if resolve:
        validate(cfg)
    return cfg


# -- building and validation ------------------------------------------------


def material_params(cfg):
    from .bonds import J_PER_MM2, MaterialParams

    m = cfg.material
    for key in ("E", "rho"):
        if getattr(m, key) is None:
            raise ConfigError(f"[material] missing required field '{key}'")
    if (m.G0 is None) == (m.s_crit is None):
        raise ConfigError("[material] give exactly one of G0 or s_crit")
    if m.G0_unit not in ("J/mm2", "N/mm"):
        raise ConfigError("[material] G0_unit must be 'J/mm2' or 'N/mm'")
    G0 = None if m.G0 is None else m.G0 * (J_PER_MM2 if m.G0_unit == "J/mm2" else 1.0)
    try:
        return MaterialParams(E=m.E, rho=m.rho, delta=cfg.delta, nu=m.nu, l=m.l, s_crit=m.s_crit, G0=G0,
                              sigma_crit=cfg.criterion.sigma_crit)
    except MorphPDError as exc:
        raise ConfigError(f"[material] {exc}") from None


def pores(cfg):
    g = cfg.geometry
    if not g.pores_file:
        return []
    from .scenarios import builtin_path, read_pores

    path = cfg.resolve_path(g.pores_file)
    if not Path(path).exists():
        path = str(builtin_path(g.pores_file))
    rows = read_pores(path)
    if g.pore_window:
        x0, y0, x1, y1 = g.pore_window
        rows = [(x - x0, y - y0, r) for x, y, r in rows if x - r > x0 and x + r < x1 and y - r > y0 and y + r < y1]
    return rows


def build_mesh(cfg):
    from .mesh import generate_perforated_mesh, generate_structured_quad_mesh, insert_pre_notch, load_unstructured_mesh

    g = cfg.geometry
    if g.spacing <= 0:
        raise ConfigError("[geometry] spacing must be positive")
    if g.kind == "rect":
        holes = pores(cfg)
        if holes or g.mesher == "tri":
            mesh = generate_perforated_mesh(("rect", (0.0, 0.0, g.width, g.height)), holes, g.spacing)
        else:
            mesh = generate_structured_quad_mesh(((0.0, 0.0), (g.width, g.height)), g.spacing)
    elif g.kind == "disk":
        holes = [(0.0, 0.0, g.hole_radius)] if g.hole_radius > 0 else []
        mesh = generate_perforated_mesh(("disk", (0.0, 0.0, g.radius)), holes, g.spacing)
    elif g.kind == "mesh_file":
        mesh = load_unstructured_mesh(cfg.resolve_path(g.mesh_file))
    else:
        raise ConfigError(f"[geometry] unknown kind '{g.kind}'")
    if g.notch:
        x0, y0, x1, y1 = g.notch
        mesh = insert_pre_notch(mesh, ((x0, y0), (x1, y1)))
    return mesh


def resolved_values(cfg, mesh=None):
    from .integrator import critical_dt, wave_speeds

    mat = material_params(cfg)
    mesh = mesh if mesh is not None else build_mesh(cfg)
    ws = wave_speeds(mat.E, mat.nu, mat.rho)
    dt_cr = critical_dt(mesh, mat.E, mat.rho)
    dt = cfg.numerics.dt if cfg.numerics.dt is not None else cfg.numerics.safety * dt_cr
    r_p = cfg.criterion.r_p if cfg.criterion.r_p is not None else 2.0 * mat.delta
    R_p = cfg.criterion.R_p if cfg.criterion.R_p is not None else 4.0 * mat.delta
    return {
        "delta": mat.delta, "l": mat.l, "tau0": mat.tau0, "s_crit": mat.s_crit,
        "C": ws.C, "C_S": ws.C_S, "C_R": ws.C_R, "L": mesh.min_edge, "dt_cr": dt_cr, "dt": dt,
        "r_p": r_p, "R_p": R_p, "n_elements": mesh.n_elements, "n_nodes": mesh.n_nodes,
        "avg_element_size": mesh.avg_element_size,
    }


def validate(cfg, mesh=None):
    """Check every constraint; raises ConfigError naming the first one violated."""
    from .adaptivity import check_expansion_radius

    c = cfg.criterion
    if c.mode not in ("broken_bond", "strength"):
        raise ConfigError(f"[criterion] unknown mode '{c.mode}'")
    if c.von_mises not in ("standard", "literal"):
        raise ConfigError("[criterion] von_mises must be 'standard' or 'literal'")
    if c.mode == "strength" and (c.sigma_crit is None or c.sigma_crit <= 0):
        raise ConfigError("[criterion] strength mode requires sigma_crit > 0")
    if cfg.numerics.t_end <= 0:
        raise ConfigError("[numerics] t_end must be positive")
    if cfg.output.every < 1:
        raise ConfigError("[output] every must be at least 1")
    if cfg.load.kind not in ("none", "step", "ramp", "explosion"):
        raise ConfigError(f"[load] unknown kind '{cfg.load.kind}'")
    if cfg.load.kind in ("step", "ramp"):
        bad = set(cfg.load.sides) - {"left", "right", "top", "bottom"}
        if bad or not cfg.load.sides:
            raise ConfigError("[load] sides must list some of left, right, top, bottom")
        if cfg.load.kind == "ramp" and cfg.load.t0 <= 0:
            raise ConfigError("[load] ramp needs t0 > 0")
    mat = material_params(cfg)
    d = mat.delta
    if c.mode == "broken_bond" and c.adaptive and not c.initial_flags:
        raise ConfigError("[criterion] broken_bond mode needs at least one initial flag point")
    for f in c.initial_flags:
        _, _, r1, r2 = f
        if r1 < d:
            raise ConfigError(f"[criterion] initial flag radius violates r1 >= delta (r1 = {r1:g}, delta = {d:g})")
        if r2 - r1 < 2 * d - 1e-12:
            raise ConfigError(f"[criterion] initial flag radii violate r2 - r1 >= 2 delta (r2 - r1 = {r2 - r1:g})")
    if c.strip:
        _, _, hi, ho = c.strip
        if ho - hi < 2 * d - 1e-12:
            raise ConfigError("[criterion] strip transition violates half_outer - half_inner >= 2 delta")
    try:
        mesh = mesh if mesh is not None else build_mesh(cfg)
    except MorphPDError as exc:
        raise ConfigError(f"[geometry] {exc}") from None
    vals = resolved_values(cfg, mesh)
    if vals["dt"] > vals["dt_cr"]:
        raise ConfigError(f"[numerics] dt = {vals['dt']:.4g} s exceeds dt_cr = L/C = {vals['dt_cr']:.4g} s")
    if vals["R_p"] <= vals["r_p"]:
        raise ConfigError("[criterion] runtime radii need R_p > r_p")
    chk = check_expansion_radius(vals["r_p"], vals["L"], vals["dt"], vals["C_R"])
    if not chk.ok:
        raise ConfigError("[criterion] expansion radius check failed: " + "; ".join(chk.reasons))
    return vals


def write_resolved(cfg, path, mesh=None):
    vals = resolved_values(cfg, mesh)
    Path(path).write_text(to_text(cfg, vals))
    return vals


def problem_from_config(cfg, mesh=None):
    """Turn a validated config into solver objects."""
    from . import assembly as asm
    from .adaptivity import Criterion
    from .integrator import Problem
    from .morphing import FlagPoint, StripRegion
    from .scenarios import ExplosionLoad, RampTraction, StepTraction

    mesh = mesh if mesh is not None else build_mesh(cfg)
    vals = validate(cfg, mesh)
    mat = material_params(cfg)
    ld = cfg.load
    program = asm.LoadProgram()
    normals = {"left": (-1.0, 0.0), "right": (1.0, 0.0), "bottom": (0.0, -1.0), "top": (0.0, 1.0)}
    if ld.kind in ("step", "ramp"):
        amp = StepTraction(ld.sigma0) if ld.kind == "step" else RampTraction(ld.sigma0, ld.t0)
        for side in ld.sides:
            program.tractions.append(asm.Traction(asm.side_selector(side), asm.constant_direction(normals[side]), amp,
                                                  side))
    elif ld.kind == "explosion":
        g = cfg.geometry
        if g.kind != "disk" or g.hole_radius <= 0:
            raise ConfigError("[load] explosion load needs a disk with a centre hole")
        program.tractions.append(asm.Traction(asm.circle_selector((0.0, 0.0), g.hole_radius),
                                              asm.radial_direction((0.0, 0.0)),
                                              ExplosionLoad(ld.P0, ld.m_u, ld.m_d, ld.alpha1, ld.alpha2), "hole"))
    fixed = {}
    if ld.fixed == "bottom":
        lo, _ = mesh.bbox
        tol = 1e-9 * mesh.diameter
        bottom = np.flatnonzero(np.abs(mesh.nodes[:, 1] - lo[1]) < tol)
        if len(bottom) == 0:
            raise ConfigError("[load] no nodes on the bottom edge")
        for n in bottom:
            fixed[(int(mesh.sites[n]), 1)] = 0.0
        corner = bottom[np.argmin(mesh.nodes[bottom, 0])]
        fixed[(int(mesh.sites[corner]), 0)] = 0.0
    elif ld.fixed:
        raise ConfigError(f"[load] unknown fixed region '{ld.fixed}'")
    c = cfg.criterion
    flags = [FlagPoint((x, y), 0.0, r1, r2) for x, y, r1, r2 in c.initial_flags]
    strips = []
    if c.strip:
        axis, center, hi, ho = c.strip
        strips.append(StripRegion(center, hi, ho, int(axis)))
    crit = Criterion(c.mode, s_crit=mat.s_crit, sigma_crit=c.sigma_crit, von_mises_form=c.von_mises)
    return Problem(mesh=mesh, material=mat, criterion=crit, load=program, dt=vals["dt"],
                   t_end=cfg.numerics.t_end, initial_flags=flags, strips=strips, adaptive=c.adaptive,
                   quadrature=cfg.numerics.quadrature, clip_tol=cfg.numerics.clip_tol,
                   runtime_radii=(vals["r_p"], vals["R_p"]), fixed_dofs=fixed)

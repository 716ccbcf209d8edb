"""Damage detection, flag points and growth of the nonlocal subdomain."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .mesh import CE
from .morphing import FlagPoint

BROKEN_BOND = "broken_bond"
STRENGTH = "strength"


@dataclass
class Criterion:
    mode: str
    s_crit: float | None = None
    sigma_crit: float | None = None
    von_mises_form: str = "standard"  # or "literal"

    def __post_init__(self):
        if self.mode not in (BROKEN_BOND, STRENGTH):
            raise ParameterError(f"unknown criterion mode {self.mode!r}")
        if self.mode == STRENGTH and (self.sigma_crit is None or self.sigma_crit <= 0):
            raise ParameterError("strength criterion needs a positive sigma_crit")
        if self.von_mises_form not in ("standard", "literal"):
            raise ParameterError("von_mises_form must be 'standard' or 'literal'")


@dataclass
class ExpansionEvent:
    new_flags: list = field(default_factory=list)
    changed: dict = field(default_factory=dict)  # group -> indices whose alpha rose
    convert: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def kappa(self):
        return len(self.convert) > 0 or any(len(v) for v in self.changed.values())


@dataclass
class RadiusCheck:
    ok: bool
    reasons: list

    def __bool__(self):
        return self.ok


def runtime_radii(delta):
    """Default radii of a runtime flag: r_p = 2 delta, R_p = 4 delta."""
    return 2.0 * delta, 4.0 * delta


def flags_from_broken_bonds(bond_ids, table, centroids, t, r_p, R_p, known=None):
    """Flag the centroids of both end elements of every newly broken bond."""
    bond_ids = np.asarray(bond_ids, dtype=np.int64)
    if len(bond_ids) == 0:
        return []
    elems = np.unique(np.concatenate([table.elem_p[bond_ids], table.elem_q[bond_ids]]))
    out = []
    for e in elems.tolist():
        if known is not None and e in known:
            continue
        out.append(FlagPoint(tuple(centroids[e].tolist()), float(t), r_p, R_p, int(e)))
    return out


def _as_tensor(sigma):
    s = np.asarray(sigma, dtype=float)
    if s.shape[-2:] == (3, 3):
        return s
    if s.shape[-1] != 3:
        raise ParameterError("stress must be (..., 3, 3) or plane Voigt (..., 3)")
    T = np.zeros(s.shape[:-1] + (3, 3))
    T[..., 0, 0] = s[..., 0]
    T[..., 1, 1] = s[..., 1]
    T[..., 0, 1] = T[..., 1, 0] = s[..., 2]
    return T


def von_mises(sigma, form="standard"):
    """Equivalent stress of a full tensor or of plane Voigt [sxx, syy, sxy].

    The ``literal`` form sums the three shears before squaring. It equals
    the standard form in plane stress, where two of them vanish.
    """
    T = _as_tensor(sigma)
    s11, s22, s33 = T[..., 0, 0], T[..., 1, 1], T[..., 2, 2]
    s12, s23, s31 = T[..., 0, 1], T[..., 1, 2], T[..., 2, 0]
    normal = (s11 - s22) ** 2 + (s22 - s33) ** 2 + (s33 - s11) ** 2
    if form == "standard":
        shear = s12**2 + s23**2 + s31**2
    elif form == "literal":
        shear = (s12 + s23 + s31) ** 2
    else:
        raise ParameterError("form must be 'standard' or 'literal'")
    return np.sqrt(0.5 * (normal + 6.0 * shear))


def centroid_stress(mesh, u, E_elem):
    """Plane stress at element centroids, [sxx, syy, sxy] per element."""
    from .assembly import element_dofs

    ue = np.asarray(u)[element_dofs(mesh)]
    eps = np.einsum("eij,ej->ei", mesh.geometry.centroid_B, ue)
    return np.einsum("eij,ej->ei", E_elem, eps)


def flags_from_strength(mesh, u, E_elem, sigma_crit, t, r_p, R_p, known=None, form="standard", skip=None):
    """Flag the centroid of every element whose von Mises stress reached sigma_crit."""
    sv = von_mises(centroid_stress(mesh, u, E_elem), form)
    hit = sv >= sigma_crit
    if skip is not None:
        hit &= ~skip
    out = []
    cen = mesh.centroids
    for e in np.flatnonzero(hit).tolist():
        if known is not None and e in known:
            continue
        out.append(FlagPoint(tuple(cen[e].tolist()), float(t), r_p, R_p, int(e)))
    return out


def conversion_candidates(mesh, field):
    """CE elements with alpha = 1 at the centroid and at every vertex site."""
    a_c = field.alpha["centroid"]
    a_s = field.alpha["site"]
    ce = mesh.kind == CE
    cand = np.flatnonzero(ce & (a_c >= 1.0))
    if len(cand) == 0:
        return cand
    sites = mesh.sites[mesh.conn_safe[cand]]
    full = (a_s[sites] >= 1.0).all(axis=1)
    return cand[full]


def expand(field, new_flags, mesh, flag_set=None):
    """Merge new flags into alpha and collect the elements to convert."""
    if flag_set is not None:
        new_flags = [p for p in new_flags if flag_set.add(p)]
    if not new_flags:
        return ExpansionEvent()
    changed = field.merge(new_flags)
    convert = conversion_candidates(mesh, field) if len(changed.get("centroid", [])) else np.zeros(0, np.int64)
    return ExpansionEvent(list(new_flags), changed, convert)


def check_expansion_radius(r_p, L, dt, C_R):
    """Both radius conditions: r_p >= L and r_p >= C_R * dt."""
    if min(r_p, L, dt, C_R) <= 0:
        raise ParameterError("all arguments must be positive")
    reasons = []
    if r_p < L:
        reasons.append(f"r_p = {r_p:g} mm is smaller than the smallest edge L = {L:g} mm (r_p >= L)")
    if r_p < C_R * dt:
        reasons.append(f"r_p = {r_p:g} mm is smaller than C_R*dt = {C_R * dt:g} mm (r_p >= v_c dt)")
    return RadiusCheck(not reasons, reasons)


@dataclass
class EventLog:
    """One record per expansion event: step, new flags, converted elements, dofs after."""

    records: list = field(default_factory=list)

    def add(self, step, n_flags, n_converted, n_dofs):
        self.records.append((int(step), int(n_flags), int(n_converted), int(n_dofs)))

    def write(self, path):
        lines = ["step,n_new_flags,n_converted_elements,n_dofs_after"]
        lines += [",".join(map(str, r)) for r in self.records]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

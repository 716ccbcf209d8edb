"""Morphing function field, effective local stiffness and subdomain labels.

The Morphing function alpha blends the local model (alpha = 0) into the
bond model (alpha = 1). It is the pointwise maximum of one radial profile
per flag point, and it never decreases. The local stiffness is reduced by
the bond moment so that a homogeneous strain stores the same energy
whatever the blend.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .bonds import MOMENT_FACTOR
from .errors import AssemblyError, ParameterError

OMEGA_1 = "omega_1"  # pure local
OMEGA_2 = "omega_2"  # pure nonlocal
OMEGA_M = "omega_m"  # transition


def cubic_transition(d, r_in, r_out):
    """Smooth step from 1 at ``r_in`` down to 0 at ``r_out``."""
    if r_out <= r_in:
        raise ParameterError("outer radius must exceed inner radius")
    d = np.asarray(d, dtype=float)
    f = 1.0 + (d - r_in) ** 2 * (2.0 * d - 3.0 * r_out + r_in) / (r_out - r_in) ** 3
    return np.clip(f, 0.0, 1.0)


@dataclass(frozen=True)
class FlagPoint:
    position: tuple
    birth_time: float
    r_in: float
    r_out: float
    element: int = -1

    def __post_init__(self):
        if self.r_out <= self.r_in:
            raise ParameterError("flag outer radius must exceed inner radius")

    def alpha(self, x):
        return alpha_for_flag(x, self)


@dataclass(frozen=True)
class StripRegion:
    """Band of fixed width around a line ``x = center`` (or ``y`` for axis 1)."""

    center: float
    half_inner: float
    half_outer: float
    axis: int = 0

    def alpha(self, x):
        d = np.abs(np.asarray(x, dtype=float)[..., self.axis] - self.center)
        return _profile(d, self.half_inner, self.half_outer)


def _profile(d, r_in, r_out):
    out = np.zeros_like(d)
    inner = d <= r_in
    ring = (d > r_in) & (d < r_out)
    out[inner] = 1.0
    if ring.any():
        out[ring] = cubic_transition(d[ring], r_in, r_out)
    return out


def alpha_for_flag(x, p):
    x = np.asarray(x, dtype=float)
    d = np.linalg.norm(x - np.asarray(p.position, dtype=float), axis=-1)
    return _profile(np.atleast_1d(d), p.r_in, p.r_out).reshape(np.shape(d))


@dataclass
class FlagPointSet:
    """Append-only set of flag points, de-duplicated by element id."""

    points: list = field(default_factory=list)
    _keys: set = field(default_factory=set)

    def add(self, p):
        if p.element >= 0:
            if p.element in self._keys:
                return False
            self._keys.add(p.element)
        self.points.append(p)
        return True

    def __contains__(self, element):
        return element in self._keys

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)


class MorphingField:
    """Alpha sampled at named groups of evaluation points.

    Groups used by the solver: ``pd`` (bond quadrature points), ``centroid``
    (element centroids) and ``site`` (vertex positions).
    """

    def __init__(self, groups):
        self.positions = {k: np.asarray(v, dtype=float) for k, v in groups.items()}
        self.alpha = {k: np.zeros(len(v)) for k, v in self.positions.items()}
        self._trees = {}
        self.revision = 0

    def tree(self, group):
        if group not in self._trees:
            self._trees[group] = cKDTree(self.positions[group])
        return self._trees[group]

    def merge(self, sources):
        """Raise alpha to the profile of each source; returns changed indices per group."""
        changed = {}
        for g, pos in self.positions.items():
            a = self.alpha[g]
            hit = np.zeros(len(a), dtype=bool)
            for s in sources:
                if isinstance(s, FlagPoint):
                    idx = np.asarray(self.tree(g).query_ball_point(s.position, s.r_out), dtype=np.int64)
                    if len(idx) == 0:
                        continue
                else:
                    idx = np.arange(len(a))
                cand = s.alpha(pos[idx])
                up = cand > a[idx]
                if up.any():
                    a[idx[up]] = cand[up]
                    hit[idx[up]] = True
            changed[g] = np.flatnonzero(hit)
        if any(len(v) for v in changed.values()):
            self.revision += 1
        return changed

    def snapshot(self):
        return {k: v.copy() for k, v in self.alpha.items()}


def merge_alpha(field, flag_set):
    return field.merge(list(flag_set))


def moment_components(table, alpha_pts, n_points, subset=None, delta_alpha=None):
    """Per-point bond moments [xxxx, xxyy, yyyy, xxxy, xyyy].

    Each bond contributes ``abar * c0 * w_other * xi^4`` to both ends.
    With ``delta_alpha`` the half-sum is built from alpha increments, which
    gives the change of the moments for an incremental update.
    """
    idx = np.arange(len(table)) if subset is None else subset
    p, q = table.p[idx], table.q[idx]
    a = alpha_pts if delta_alpha is None else delta_alpha
    abar = 0.5 * (a[p] + a[q])
    nz = abar != 0
    idx, p, q, abar = idx[nz], p[nz], q[nz], abar[nz]
    xi = table.xi[idx]
    x, y = xi[:, 0], xi[:, 1]
    powers = np.column_stack([x**4, x * x * y * y, y**4, x**3 * y, x * y**3])
    base = abar * table.c0[idx]
    wq, wp = table.wq[idx], table.wp[idx]
    out = np.zeros((n_points, 5))
    for k in range(5):
        out[:, k] += np.bincount(p, weights=base * wq * powers[:, k], minlength=n_points)
        out[:, k] += np.bincount(q, weights=base * wp * powers[:, k], minlength=n_points)
    return out


def moments_to_voigt(m):
    m = np.atleast_2d(m)
    D = np.empty((len(m), 3, 3))
    D[:, 0, 0] = m[:, 0]
    D[:, 0, 1] = D[:, 1, 0] = m[:, 1]
    D[:, 1, 1] = m[:, 2]
    D[:, 0, 2] = D[:, 2, 0] = m[:, 3]
    D[:, 1, 2] = D[:, 2, 1] = m[:, 4]
    D[:, 2, 2] = m[:, 1]
    return D


def raw_effective_stiffness(E0, moments):
    """E(x) = E0 - (energy factor) * bond moment, without any clipping."""
    return E0[None] - MOMENT_FACTOR * moments_to_voigt(moments)


def clip_psd(E, E0, clip_tol):
    """Zero negative eigenvalues down to ``-clip_tol * |E0|``; fail beyond that."""
    E = np.array(E, copy=True)
    w, V = np.linalg.eigh(E)
    neg = w < 0
    if not neg.any():
        return E
    limit = clip_tol * np.linalg.norm(E0)
    if (w < -limit).any():
        worst = float(w.min())
        raise AssemblyError(f"effective stiffness eigenvalue {worst:.4g} below clip limit {-limit:.4g}")
    rows = neg.any(axis=1)
    w = np.where(neg, 0.0, w)
    E[rows] = np.einsum("nij,nj,nkj->nik", V[rows], w[rows], V[rows])
    return E


def effective_stiffness(point, moments, E0, clip_tol=0.05):
    """Effective local stiffness at one PD point from precomputed moments."""
    E = raw_effective_stiffness(E0, moments[point][None])
    return clip_psd(E, E0, clip_tol)[0]


def classify(x, field, delta, group="pd"):
    """Label a position by the alpha values found within its horizon."""
    pos = field.positions[group]
    idx = field.tree(group).query_ball_point(np.asarray(x, dtype=float), delta)
    vals = field.alpha[group][idx] if len(idx) else np.zeros(1)
    if np.all(vals == 0.0):
        return OMEGA_1
    if np.all(vals == 1.0):
        return OMEGA_2
    return OMEGA_M

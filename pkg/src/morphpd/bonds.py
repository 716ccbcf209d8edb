"""Bond-based peridynamic kernel.

Micro-modulus ``c0(r) = tau0 * exp(-r / l)``, calibration of ``tau0`` against
the plane-stress elasticity tensor, critical stretch from the fracture
energy, geometric bond stretch, irreversible failure and damage.

Energy convention: an unordered bond between points of weights ``w_p`` and
``w_q`` stores ``0.5 * c0 * abar * w_p * w_q * (xi . eta)**2``, where ``abar``
is the half-sum of the Morphing function at both ends. With that convention
the bond moment that reproduces the continuum tensor is
``0.5 * int c0 xi x xi x xi x xi dV``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import CalibrationError, ParameterError

# The assembled pair stiffness counts every unordered bond once with a 1/2
# prefactor, so the equivalent continuum tensor is half the bond moment.
MOMENT_FACTOR = 0.5

J_PER_MM2 = 1.0e3  # 1 J/mm^2 = 1000 N/mm in the t-mm-s unit system


@dataclass
class MaterialParams:
    E: float  # MPa
    rho: float  # t/mm^3
    delta: float  # mm
    nu: float = 1.0 / 3.0
    l: float | None = None  # mm, defaults to delta / 15
    s_crit: float | None = None
    G0: float | None = None  # N/mm
    sigma_crit: float | None = None  # MPa
    tau0: float = field(default=None, init=False)

    def __post_init__(self):
        if self.E <= 0 or self.rho <= 0 or self.delta <= 0:
            raise ParameterError("E, rho and delta must be positive")
        if self.l is None:
            self.l = self.delta / 15.0
        if (self.s_crit is None) == (self.G0 is None):
            raise ParameterError("give exactly one of s_crit or G0")
        self.tau0 = calibrate_tau0(self.E, self.nu, self.delta, self.l)
        if self.s_crit is None:
            self.s_crit = critical_stretch_from_G0(self.G0, self.tau0, self.l, self.delta)

    @property
    def E0(self):
        return plane_stress_tensor(self.E, self.nu)


def plane_stress_tensor(E, nu):
    """Isotropic plane-stress stiffness in Voigt form (engineering shear)."""
    f = E / (1.0 - nu * nu)
    return f * np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]])


def micro_modulus_c0(r, tau0, l):
    return tau0 * np.exp(-np.asarray(r) / l)


def radial_moment(k, delta, l):
    """int_0^delta r^k exp(-r/l) dr."""
    val, _ = quad(lambda r: r**k * np.exp(-r / l), 0.0, delta, epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def calibrate_tau0(E, nu, delta, l):
    """Kernel amplitude making a pure-PD neighbourhood as stiff as E0.

    Matches the 1111 component: MOMENT_FACTOR * tau0 * (3 pi / 4) *
    int r^5 exp(-r/l) dr = E / (1 - nu^2). The other components follow
    only for nu = 1/3.
    """
    if abs(nu - 1.0 / 3.0) > 1e-12:
        raise CalibrationError(f"bond-based PD in 2D plane stress requires nu = 1/3, got {nu}")
    if delta <= 0 or l <= 0 or E <= 0:
        raise ParameterError("E, delta and l must be positive")
    return E / (1.0 - nu * nu) / (MOMENT_FACTOR * 0.75 * np.pi * radial_moment(5, delta, l))


def critical_stretch_from_G0(G0, tau0, l, delta):
    """Critical stretch whose crossing-bond energy equals G0 (N/mm).

    Summing ``w_crit = 0.5 c0 s^2 r^4`` over all pairs straddling a straight
    line per unit length reduces to ``s^2 int_0^delta c0(r) r^6 dr``.
    """
    if G0 < 0:
        raise ParameterError("G0 must be non-negative")
    if G0 == 0:
        return 0.0
    return float(np.sqrt(G0 / (tau0 * radial_moment(6, delta, l))))


def bond_stretch(xi, eta):
    """Relative elongation (|xi + eta| - |xi|) / |xi|, row-wise."""
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    r = np.linalg.norm(xi, axis=-1)
    if np.any(r == 0):
        raise ParameterError("bond with zero reference length")
    return (np.linalg.norm(xi + eta, axis=-1) - r) / r


@dataclass
class Bond:
    endpoints: tuple
    xi: np.ndarray
    length: float
    c0: float
    status: int
    weight_product: float


@dataclass
class BondTable:
    """Unordered pairs of PD points, stored as parallel arrays."""

    p: np.ndarray
    q: np.ndarray
    xi: np.ndarray
    length: np.ndarray
    wp: np.ndarray
    wq: np.ndarray
    elem_p: np.ndarray
    elem_q: np.ndarray
    delta: float
    c0: np.ndarray = None
    intact: np.ndarray = None
    broken_step: np.ndarray = None

    def __post_init__(self):
        n = len(self.p)
        if self.intact is None:
            self.intact = np.ones(n, dtype=bool)
        if self.broken_step is None:
            self.broken_step = np.full(n, -1, dtype=np.int64)
        if self.c0 is None:
            self.c0 = np.zeros(n)

    def __len__(self):
        return len(self.p)

    @property
    def wprod(self):
        return self.wp * self.wq

    def set_micro_modulus(self, tau0, l):
        self.c0 = micro_modulus_c0(self.length, tau0, l)
        return self

    @property
    def status(self):
        return self.intact.astype(np.int8)

    def bond(self, b):
        return Bond(((int(self.elem_p[b]), int(self.p[b])), (int(self.elem_q[b]), int(self.q[b]))),
                    self.xi[b].copy(), float(self.length[b]), float(self.c0[b]), int(self.intact[b]),
                    float(self.wprod[b]))

    def w_crit(self, s_crit):
        return 0.5 * self.c0 * s_crit**2 * self.length**4

    def incidence(self, n_points):
        """CSR-style (offsets, bond ids) listing the bonds of every point."""
        ends = np.concatenate([self.p, self.q])
        ids = np.concatenate([np.arange(len(self)), np.arange(len(self))])
        order = np.argsort(ends, kind="stable")
        offsets = np.zeros(n_points + 1, dtype=np.int64)
        np.cumsum(np.bincount(ends, minlength=n_points), out=offsets[1:])
        return offsets, ids[order]

    def extend(self, other):
        """Append the bonds of another table (same points and horizon)."""
        if len(other) == 0:
            return np.zeros(0, dtype=np.int64)
        start = len(self)
        for name in ("p", "q", "xi", "length", "wp", "wq", "elem_p", "elem_q", "c0", "intact", "broken_step"):
            setattr(self, name, np.concatenate([getattr(self, name), getattr(other, name)]))
        return np.arange(start, len(self))

    def copy(self):
        return BondTable(self.p, self.q, self.xi, self.length, self.wp, self.wq, self.elem_p, self.elem_q,
                         self.delta, self.c0.copy(), self.intact.copy(), self.broken_step.copy())


def stretches(table, u_points, subset=None):
    """Geometric stretch of the bonds in ``subset`` for point displacements."""
    idx = np.arange(len(table)) if subset is None else subset
    eta = u_points[table.q[idx]] - u_points[table.p[idx]]
    return bond_stretch(table.xi[idx], eta)


def apply_failure(table, u_points, s_crit, subset=None, step=-1):
    """Break every intact bond whose stretch reached ``s_crit``.

    Returns the ids broken by this call, sorted. Bonds never heal.
    """
    idx = np.arange(len(table)) if subset is None else np.asarray(subset)
    idx = idx[table.intact[idx]]
    if len(idx) == 0:
        return idx
    s = stretches(table, u_points, idx)
    newly = np.sort(idx[s >= s_crit])
    table.intact[newly] = False
    table.broken_step[newly] = step
    return newly


def damage_by_element(table, n_elements, s_crit=1.0, totals=None):
    """Element damage from all bonds touching the element's PD points.

    Returns ``(phi, has_bonds)``; elements without bonds report 0. The
    ``s_crit**2`` factor of ``w_crit`` cancels in the ratio but is kept so the
    weights are the physical ones. ``totals`` supplies the full-family
    denominators when the table holds only part of the bonds (all of
    them intact outside the table).
    """
    w = table.w_crit(s_crit) if s_crit > 0 else table.w_crit(1.0)
    ends = np.concatenate([table.elem_p, table.elem_q])
    ww = np.concatenate([w, w])
    same = table.elem_p == table.elem_q
    # an intra-element bond must not be counted twice for its own element
    ww[len(w):][same] = 0.0
    broken = np.concatenate([~table.intact, ~table.intact])
    if totals is None:
        total = np.bincount(ends, weights=ww, minlength=n_elements)
    else:
        total = np.asarray(totals, dtype=float) * (s_crit**2 if s_crit > 0 else 1.0)
    lost = np.bincount(ends, weights=ww * broken, minlength=n_elements)
    has = total > 0
    phi = np.zeros(n_elements)
    phi[has] = lost[has] / total[has]
    return np.clip(phi, 0.0, 1.0), has


def damage(point, table, s_crit):
    """Damage of one element; returns ``(phi, defined)``."""
    phi, has = damage_by_element(table, max(int(table.elem_p.max(initial=-1)), int(table.elem_q.max(initial=-1)), point) + 1, s_crit)
    return float(phi[point]), bool(has[point])

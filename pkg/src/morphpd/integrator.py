"""Explicit central-difference integration and the adaptive main loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import adaptivity as adp
from .assembly import HybridOperator, LoadProgram, assemble_load, lumped_masses, remap_after_conversion
from .bonds import apply_failure, damage_by_element, micro_modulus_c0
from .errors import ConsistencyError, InstabilityError, ParameterError, SingularMassError
from .mesh import BondBuilder, convert_to_discrete
from .morphing import FlagPoint, FlagPointSet, MorphingField, StripRegion

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WaveSpeeds:
    C: float
    C_S: float
    C_R: float


def rayleigh_factor(nu):
    """C_R / C for the dilatational proxy C = sqrt(E / rho)."""
    return (0.862 + 1.14 * nu) / (1.0 + nu) * np.sqrt(1.0 / (2.0 * (1.0 + nu)))


def wave_speeds(E, nu, rho):
    if E <= 0 or rho <= 0:
        raise ParameterError("E and rho must be positive")
    if not 0 <= nu < 0.5:
        raise ParameterError("Poisson ratio must lie in [0, 0.5)")
    C = float(np.sqrt(E / rho))
    C_S = C * float(np.sqrt(1.0 / (2.0 * (1.0 + nu))))
    C_R = (0.862 + 1.14 * nu) / (1.0 + nu) * C_S
    return WaveSpeeds(C, C_S, C_R)


def critical_dt(mesh, E, rho):
    """Time for a wave at sqrt(E / rho) to cross the shortest edge."""
    return mesh.min_edge / np.sqrt(E / rho)


def _apply(K, u):
    if callable(K) and not hasattr(K, "shape"):
        return K(u)
    return K @ u


def bootstrap(u0, v0, F0, m, K, dt):
    """Fictitious u(-dt) from the initial state and acceleration.

    ``m`` is the diagonal of the lumped mass, one entry per dof.
    """
    m = np.asarray(m, dtype=float)
    u0, v0, F0 = (np.asarray(x, dtype=float) for x in (u0, v0, F0))
    if not (len(u0) == len(v0) == len(F0) == len(m)):
        raise ConsistencyError("initial vectors and mass differ in size")
    if np.any(m == 0):
        raise SingularMassError(f"zero mass at dof {int(np.flatnonzero(m == 0)[0])}")
    a0 = (F0 - _apply(K, u0)) / m
    return u0 - dt * v0 + 0.5 * dt * dt * a0


def step(u, u_prev, F, m, K, dt, Ku=None):
    """One central-difference update, returns u(t + dt)."""
    if not (len(u) == len(u_prev) == len(F) == len(m)):
        raise ConsistencyError(f"dof count mismatch: u {len(u)}, u_prev {len(u_prev)}, F {len(F)}, M {len(m)}")
    if Ku is None:
        Ku = _apply(K, u)
    # M^ u(t+dt) = F - (K - 2 M^) u - M^ u(t-dt), with M^ = M / dt^2 diagonal
    mh = m / (dt * dt)
    return (F - Ku + 2.0 * mh * u - mh * u_prev) / mh


@dataclass
class SimulationState:
    t: float
    step: int
    u_prev: np.ndarray
    u_curr: np.ndarray
    m: np.ndarray  # lumped mass per dof
    dt: float

    @property
    def M_hat(self):
        return self.m / self.dt**2

    def velocity(self, u_next):
        return (u_next - self.u_prev) / (2.0 * self.dt)

    def acceleration(self, u_next):
        return (u_next - 2.0 * self.u_curr + self.u_prev) / self.dt**2

    def check(self, n_dofs):
        for name in ("u_prev", "u_curr", "m"):
            if len(getattr(self, name)) != n_dofs:
                raise ConsistencyError(f"{name} has {len(getattr(self, name))} entries, operator has {n_dofs}")


@dataclass
class Problem:
    """Everything the main loop needs, already resolved to objects."""

    mesh: object
    material: object
    criterion: adp.Criterion
    load: LoadProgram
    dt: float
    t_end: float
    initial_flags: list = field(default_factory=list)
    strips: list = field(default_factory=list)
    adaptive: bool = True
    quadrature: str = "subcell"
    clip_tol: float = 0.05
    runtime_radii: tuple | None = None  # (r_p, R_p); defaults to (2 delta, 4 delta)
    fixed_dofs: dict = field(default_factory=dict)  # site-based: (site, comp) -> value


@dataclass
class StepRecord:
    step: int
    t: float
    n_dofs: int
    n_broken: int
    wall_ms: float


class Simulation:
    """Adaptive PD/CCM run following the flowchart order.

    Per step: (4) remap if the previous scan converted elements, (5) M^,
    (6) bond failure, criterion scan and alpha update, (7) load,
    (8) explicit solve, (9) optional output, (10) advance.
    """

    def __init__(self, problem: Problem, observers=()):
        self.pb = problem
        mat = problem.material
        self.mesh = problem.mesh
        self.points = self.mesh.pd_points(problem.quadrature)
        # bonds are built lazily: a point's family is added once its alpha turns positive
        self.builder = BondBuilder(self.points, mat.delta, self.mesh.slits)
        self.table = self.builder.complete_points(np.zeros(0, dtype=np.int64)).set_micro_modulus(mat.tau0, mat.l)
        self._totals = None
        self.op = HybridOperator(self.mesh, self.points, self.table, mat.E0, problem.clip_tol)
        sites_xy = np.zeros((int(self.mesh.sites.max()) + 1, 2))
        sites_xy[self.mesh.sites] = self.mesh.nodes
        self.field = MorphingField({"pd": self.points.x, "centroid": self.mesh.centroids, "site": sites_xy})
        self.flags = FlagPointSet()
        self.events = adp.EventLog()
        self.records: list[StepRecord] = []
        self.observers = list(observers)
        self.radii = problem.runtime_radii or adp.runtime_radii(mat.delta)
        self.first_break = None  # (step, position)
        self.first_flag = None
        self.pending = np.zeros(0, dtype=np.int64)
        self.total_mass_log = []
        self.last_nodemap = None  # node map of the latest runtime conversion
        self.n_broken = 0
        self._fixed_cache = (None, None)

        problem.load.bind(self.mesh)
        sources = [*problem.initial_flags, *problem.strips]
        for p in problem.initial_flags:
            self.flags.add(p)
        if sources:
            self.field.merge(sources)
        self._set_alpha()
        self._convert(adp.conversion_candidates(self.mesh, self.field))
        self.m_nodes = lumped_masses(self.mesh, mat.rho)
        n = self.mesh.n_dofs
        u0 = np.zeros(n)
        F0 = self._load(0.0)
        m = np.repeat(self.m_nodes, 2)
        self.state = SimulationState(0.0, 0, bootstrap(u0, u0, F0, m, self.op, problem.dt), u0, m, problem.dt)

    # helpers
    def _load(self, t):
        return assemble_load(self.mesh, self.pb.load, t)

    def _fixed(self):
        if not self.pb.fixed_dofs:
            return None, None
        if self._fixed_cache[0] is self.mesh:
            return self._fixed_cache[1]
        dofs, vals = [], []
        for (site, comp), v in self.pb.fixed_dofs.items():
            for node in np.flatnonzero(self.mesh.sites == site):
                dofs.append(2 * int(node) + comp)
                vals.append(v)
        out = np.asarray(dofs, dtype=np.int64), np.asarray(vals)
        self._fixed_cache = (self.mesh, out)
        return out

    def _set_alpha(self):
        alpha = self.field.alpha["pd"]
        need = np.flatnonzero((alpha > 0) & ~self.builder.complete)
        if len(need):
            mat = self.pb.material
            self.table.extend(self.builder.complete_points(need).set_micro_modulus(mat.tau0, mat.l))
        self.op.set_alpha(alpha)

    def _convert(self, elems):
        """Conversion at set-up time, before any state exists."""
        if len(elems):
            self.mesh, _ = convert_to_discrete(self.mesh, elems)
            self.op.set_mesh(self.mesh)

    def _remap(self):
        st = self.state
        mass_before = float(st.m.sum())
        new_mesh, nodemap = convert_to_discrete(self.mesh, self.pending)
        (u, up), m_nodes = remap_after_conversion([st.u_curr, st.u_prev], nodemap, new_mesh, self.pb.material.rho)
        self.mesh = new_mesh
        self.last_nodemap = nodemap
        self.op.set_mesh(new_mesh)
        self.m_nodes = m_nodes
        st.u_curr, st.u_prev, st.m = u, up, np.repeat(m_nodes, 2)
        self.total_mass_log.append((st.step, mass_before, float(st.m.sum())))
        if self.events.records:
            rec = self.events.records[-1]
            self.events.records[-1] = rec[:3] + (new_mesh.n_dofs,)
        self.pending = np.zeros(0, dtype=np.int64)

    @property
    def alpha_elem(self):
        """Mean alpha over each element's PD points."""
        return np.bincount(self.points.elem, weights=self.field.alpha["pd"], minlength=self.mesh.n_elements) / \
            np.bincount(self.points.elem, minlength=self.mesh.n_elements)

    def damage(self):
        if self._totals is None:
            mat = self.pb.material
            self._totals = self.builder.element_totals(lambda r: 0.5 * micro_modulus_c0(r, mat.tau0, mat.l) * r**4)
        return damage_by_element(self.table, self.mesh.n_elements, 1.0, self._totals)[0]

    def element_stiffness(self):
        """E(x) per element, averaged over its Gauss points."""
        from .assembly import gauss_point_index

        gi = gauss_point_index(self.mesh, self.points)
        w = self.mesh.geometry.gauss_w
        E = self.op.E_pts[np.maximum(gi, 0)] * w[..., None, None]
        return E.sum(axis=1) / w.sum(axis=1)[:, None, None]

    @property
    def pd_dofs(self):
        """Dofs of nodes belonging to DE elements."""
        de = self.mesh.kind == 1
        nodes = np.unique(self.mesh.conn[de][self.mesh.conn[de] >= 0])
        return 2 * len(nodes)

    @property
    def pd_area(self):
        return float(self.mesh.areas[self.mesh.kind == 1].sum())

    # main loop
    def advance(self):
        pb, st = self.pb, self.state
        t0 = time.perf_counter()
        # (4) remap when the previous scan produced a conversion set
        if len(self.pending):
            self._remap()
        n = self.mesh.n_dofs
        st.check(n)
        # (6) failures, criterion, alpha
        newly = np.zeros(0, dtype=np.int64)
        if len(self.op.active):
            up = self.op.point_displacements(st.u_curr)
            newly = apply_failure(self.table, up, pb.material.s_crit, self.op.active, st.step)
            if len(newly):
                self.op.bonds_broken(newly)
                self.n_broken += len(newly)
                if self.first_break is None:
                    b = newly[0]
                    mid = 0.5 * (self.points.x[self.table.p[b]] + self.points.x[self.table.q[b]])
                    self.first_break = (st.step, mid)
        if pb.adaptive:
            r_p, R_p = self.radii
            if pb.criterion.mode == adp.BROKEN_BOND:
                new_flags = adp.flags_from_broken_bonds(newly, self.table, self.mesh.centroids, st.t, r_p, R_p,
                                                        self.flags)
            else:
                skip = self.mesh.kind == 1
                new_flags = adp.flags_from_strength(self.mesh, st.u_curr, self.element_stiffness(),
                                                    pb.criterion.sigma_crit, st.t, r_p, R_p, self.flags,
                                                    pb.criterion.von_mises_form, skip)
            ev = adp.expand(self.field, new_flags, self.mesh, self.flags)
            if ev.new_flags and self.first_flag is None:
                self.first_flag = (st.step, ev.new_flags[0])
            if ev.kappa:
                self._set_alpha()
                self.pending = np.union1d(self.pending, ev.convert)
                # dof count is corrected once the conversion is applied
                self.events.add(st.step, len(ev.new_flags), len(ev.convert), n)
        # (7) load, (8) solve
        F = self._load(st.t)
        Ku = self.op.matvec(st.u_curr)
        u_next = step(st.u_curr, st.u_prev, F, st.m, None, st.dt, Ku=Ku)
        dofs, vals = self._fixed()
        if dofs is not None:
            u_next[dofs] = vals
        limit = 1e3 * self.mesh.diameter
        peak = float(np.abs(u_next).max(initial=0.0))
        if not np.isfinite(peak) or peak > limit:
            raise InstabilityError(f"displacement {peak:.3g} mm exceeds {limit:.3g} mm at step {st.step}")
        # (9) observers see the state before the shift
        for obs in self.observers:
            obs(self, u_next)
        # (10) advance
        st.u_prev, st.u_curr = st.u_curr, u_next
        st.step += 1
        st.t = st.step * st.dt
        self.records.append(StepRecord(st.step, st.t, n, self.n_broken, 1e3 * (time.perf_counter() - t0)))
        log.debug("%d %.6g %d %d %.3f", st.step, st.t, n, self.n_broken, self.records[-1].wall_ms)

    def run(self, max_steps=None):
        n_steps = int(round(self.pb.t_end / self.pb.dt))
        if max_steps is not None:
            n_steps = min(n_steps, int(max_steps))
        while self.state.step < n_steps:
            self.advance()
        return self


def energies(sim, u_next):
    """Kinetic (centred velocity) and strain energy at the current step."""
    st = sim.state
    v = (u_next - st.u_prev) / (2 * st.dt)
    kin = 0.5 * float(np.sum(st.m * v * v))
    strain = sim.op.strain_energy(st.u_curr)
    return kin, strain


__all__ = [
    "WaveSpeeds", "wave_speeds", "critical_dt", "bootstrap", "step", "SimulationState", "Problem", "Simulation",
    "rayleigh_factor", "energies", "FlagPoint", "StripRegion",
]

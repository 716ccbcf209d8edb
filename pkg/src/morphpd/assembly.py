"""Mass, hybrid stiffness and load assembly.

Two views of the stiffness are provided. ``assemble_*`` build scipy sparse
matrices, used for verification and small problems. ``HybridOperator``
keeps per-element 8x8 blocks and the list of active bonds and applies
``K @ u`` directly, which is what the explicit time loop needs: it never
factors K, and most bonds carry zero weight outside the nonlocal zone.

Degrees of freedom follow node order: node ``i`` owns ``2i`` (x) and
``2i + 1`` (y). Thickness is 1 mm throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError, BindingError, ConsistencyError, ParameterError
from .morphing import clip_psd, moment_components, raw_effective_stiffness


@dataclass
class DofMap:
    n_nodes: int

    @property
    def total_dofs(self):
        return 2 * self.n_nodes

    def dofs(self, node):
        return 2 * int(node), 2 * int(node) + 1

    def node_of(self, dof):
        return int(dof) // 2, int(dof) % 2


@dataclass
class SparseSymmetricOperator:
    """Sparse symmetric matrix plus, for bond operators, the bonds it holds."""

    matrix: sp.csr_matrix
    included: np.ndarray | None = None  # per-bond flag, bond operators only
    context: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def __matmul__(self, u):
        return self.matrix @ u

    def toarray(self):
        return self.matrix.toarray()

    def triplets(self):
        c = self.matrix.tocoo()
        order = np.lexsort((c.col, c.row))
        return c.row[order], c.col[order], c.data[order]

    def write_triplets(self, path):
        r, c, v = self.triplets()
        lines = [f"{i} {j} {x!r}" for i, j, x in zip(r.tolist(), c.tolist(), v.tolist())]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def element_dofs(mesh):
    """(m, 8) global dofs per element; padded triangle slots repeat node 0."""
    c = mesh.conn_safe
    d = np.empty((mesh.n_elements, 8), dtype=np.int64)
    d[:, 0::2] = 2 * c
    d[:, 1::2] = 2 * c + 1
    return d


def _scatter_blocks(mesh, blocks):
    dofs = element_dofs(mesh)
    rows = np.repeat(dofs, 8, axis=1).ravel()
    cols = np.tile(dofs, (1, 8)).ravel()
    n = mesh.n_dofs
    return sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()


# -- mass -------------------------------------------------------------------


def lumped_masses(mesh, rho):
    """Nodal masses: density times the integral of each shape function."""
    if rho <= 0:
        raise ParameterError("density must be positive")
    frac = mesh.geometry.nodal_fraction * rho
    m = np.bincount(mesh.conn_safe.ravel(), weights=frac.ravel(), minlength=mesh.n_nodes)
    return m


def assemble_mass(mesh, rho, mode="lumped"):
    if rho <= 0:
        raise ParameterError("density must be positive")
    if mode == "lumped":
        m = lumped_masses(mesh, rho)
        return SparseSymmetricOperator(sp.diags(np.repeat(m, 2)).tocsr(), context={"mode": mode})
    if mode != "consistent":
        raise ParameterError(f"unknown mass mode {mode!r}")
    g = mesh.geometry
    blocks = np.zeros((mesh.n_elements, 8, 8))
    quad = np.flatnonzero(g.is_quad)
    if len(quad):
        from .mesh import _QUAD_GAUSS, quad_shape

        for k, (r, s) in enumerate(_QUAD_GAUSS):
            n, _ = quad_shape(r, s)
            nn = np.outer(n, n)
            blk = g.gauss_w[quad, k, None, None] * nn[None]
            for c in range(2):
                blocks[np.ix_(quad, np.arange(c, 8, 2), np.arange(c, 8, 2))] += rho * blk
    tri = np.flatnonzero(~g.is_quad)
    if len(tri):
        ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
        blk = np.zeros((4, 4))
        blk[:3, :3] = ref
        for c in range(2):
            blocks[np.ix_(tri, np.arange(c, 8, 2), np.arange(c, 8, 2))] += rho * g.area[tri, None, None] * blk[None]
    return SparseSymmetricOperator(_scatter_blocks(mesh, blocks), context={"mode": mode})


# -- effective local stiffness -------------------------------------------


def gauss_point_index(mesh, points):
    """(m, 4) PD point supplying E(x) at each Gauss point (-1 where unused)."""
    g = mesh.geometry
    if points.mode == "centroid":
        idx = np.repeat(np.arange(mesh.n_elements)[:, None], 4, axis=1)
    else:
        idx = 4 * np.arange(mesh.n_elements)[:, None] + g.gauss_sub
    return np.where(g.gauss_w > 0, idx, -1)


def point_stiffness(E0, moments, clip_tol=0.05):
    """Clipped E(x) at every PD point from its bond moments."""
    return clip_psd(raw_effective_stiffness(E0, moments), E0, clip_tol)


def ccm_blocks(mesh, E_gauss):
    """Element blocks sum_g W_g B_g^T E_g B_g; ``E_gauss`` is (m, 4, 3, 3)."""
    g = mesh.geometry
    k = np.einsum("eg,egip,egij,egjq->epq", g.gauss_w, g.gauss_B, E_gauss, g.gauss_B, optimize=True)
    return 0.5 * (k + k.transpose(0, 2, 1))


def _E_gauss(mesh, points, E_pts):
    gi = gauss_point_index(mesh, points)
    E = E_pts[np.maximum(gi, 0)]
    E[gi < 0] = 0.0
    return E


def assemble_ccm_stiffness(mesh, E0, table=None, alpha_pts=None, quadrature="subcell", clip_tol=0.05):
    """Local part of K with E(x) degraded by the bond moments.

    Without ``alpha_pts`` (or with alpha = 0) this is plain plane-stress FEM.
    """
    points = mesh.pd_points(quadrature)
    if alpha_pts is None or table is None:
        E_pts = np.broadcast_to(E0, (len(points), 3, 3)).copy()
    else:
        mom = moment_components(table, alpha_pts, len(points))
        E_pts = point_stiffness(E0, mom, clip_tol)
    return SparseSymmetricOperator(_scatter_blocks(mesh, ccm_blocks(mesh, _E_gauss(mesh, points, E_pts))))


# -- bond stiffness --------------------------------------------------------


def bond_weights(table, alpha_pts):
    """Per-bond spring constant c0 * abar * w_p * w_q (status ignored)."""
    abar = 0.5 * (alpha_pts[table.p] + alpha_pts[table.q])
    return table.c0 * abar * table.wp * table.wq


def _bond_vectors(mesh, points, table, ids):
    """Dofs (b, 16) and coefficients (b, 16) of g = xi . (u_q - u_p)."""
    c = mesh.conn_safe
    ep, eq = points.elem[table.p[ids]], points.elem[table.q[ids]]
    Np, Nq = points.shape[table.p[ids]], points.shape[table.q[ids]]
    xi = table.xi[ids]
    nodes = np.concatenate([c[ep], c[eq]], axis=1)  # (b, 8)
    coef = np.concatenate([-Np, Nq], axis=1)
    dofs = np.empty((len(ids), 16), dtype=np.int64)
    val = np.empty((len(ids), 16))
    dofs[:, 0::2] = 2 * nodes
    dofs[:, 1::2] = 2 * nodes + 1
    val[:, 0::2] = coef * xi[:, 0:1]
    val[:, 1::2] = coef * xi[:, 1:2]
    return dofs, val


def _pd_matrix(mesh, points, table, alpha_pts, ids):
    n = mesh.n_dofs
    if len(ids) == 0:
        return sp.csr_matrix((n, n))
    k = bond_weights(table, alpha_pts)[ids]
    dofs, val = _bond_vectors(mesh, points, table, ids)
    rows = np.repeat(dofs, 16, axis=1).ravel()
    cols = np.tile(dofs, (1, 16)).ravel()
    data = (k[:, None, None] * val[:, :, None] * val[:, None, :]).ravel()
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def assemble_pd_stiffness(mesh, table, alpha_pts, quadrature="subcell"):
    """Bond part of K over intact bonds, each counted once."""
    points = mesh.pd_points(quadrature)
    ids = np.flatnonzero(table.intact)
    mat = _pd_matrix(mesh, points, table, alpha_pts, ids)
    inc = table.intact.copy()
    return SparseSymmetricOperator(mat, inc, {"mesh": mesh, "points": points, "table": table,
                                              "alpha": np.array(alpha_pts, copy=True)})


def subtract_broken_bonds(op, ids):
    """Remove the listed bonds from a bond operator, in place."""
    ids = np.unique(np.asarray(ids, dtype=np.int64))
    if len(ids) == 0:
        return op
    if op.included is None:
        raise ConsistencyError("operator does not track bonds")
    if not op.included[ids].all():
        bad = int(ids[~op.included[ids]][0])
        raise ConsistencyError(f"bond {bad} was already removed from the operator")
    ctx = op.context
    op.matrix = (op.matrix - _pd_matrix(ctx["mesh"], ctx["points"], ctx["table"], ctx["alpha"], ids)).tocsr()
    op.included[ids] = False
    return op


def energy_bonds(mesh, points, table, alpha_pts, u):
    """Direct sum of 0.5 * k * (xi . eta)^2 over intact bonds."""
    up = point_displacements(mesh, points, u)
    eta = up[table.q] - up[table.p]
    proj = np.einsum("bi,bi->b", table.xi, eta)
    k = bond_weights(table, alpha_pts) * table.intact
    return 0.5 * float(np.sum(k * proj * proj))


def point_displacements(mesh, points, u):
    U = np.asarray(u).reshape(-1, 2)
    c = mesh.conn_safe[points.elem]
    return np.einsum("na,nac->nc", points.shape, U[c])


# -- loads -----------------------------------------------------------------


def side_selector(name, tol=1e-6):
    """Edges on one side of the bounding box: left, right, bottom or top."""
    axis, upper = {"left": (0, False), "right": (0, True), "bottom": (1, False), "top": (1, True)}[name]

    def select(mesh, pa, pb):
        lo, hi = mesh.bbox
        ref = hi[axis] if upper else lo[axis]
        scale = tol * max(mesh.diameter, 1.0)
        return (np.abs(pa[:, axis] - ref) < scale) & (np.abs(pb[:, axis] - ref) < scale)

    return select


def circle_selector(center, radius, tol=1e-3):
    c = np.asarray(center, dtype=float)

    def select(mesh, pa, pb):
        ra = np.linalg.norm(pa - c, axis=1)
        rb = np.linalg.norm(pb - c, axis=1)
        t = tol * max(radius, 1.0)
        return (np.abs(ra - radius) < t) & (np.abs(rb - radius) < t)

    return select


def constant_direction(vec):
    v = np.asarray(vec, dtype=float)
    return lambda x: np.broadcast_to(v, x.shape).copy()


def radial_direction(center):
    c = np.asarray(center, dtype=float)

    def f(x):
        d = x - c
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    return f


@dataclass
class Traction:
    selector: Callable  # (mesh, pa, pb) -> bool mask over boundary edges
    pattern: Callable  # x (n, 2) -> traction per unit amplitude (n, 2), MPa
    amplitude: Callable  # t -> scalar
    name: str = ""


@dataclass
class BodyForce:
    vector: tuple  # N/mm^3 per unit amplitude
    amplitude: Callable
    name: str = "body"


@dataclass
class LoadProgram:
    """Boundary tractions and body forces, each ``amplitude(t) * pattern(x)``."""

    tractions: list = field(default_factory=list)
    body: list = field(default_factory=list)
    _bound: list = field(default_factory=list, repr=False)

    def bind(self, mesh):
        """Resolve selectors to (element, local slot) edge lists.

        Slots stay valid after CE to DE conversion, since element ids and
        vertex positions never change.
        """
        edges = mesh.boundary_edges()
        if edges:
            e = np.array([r[0] for r in edges])
            a = np.array([r[1] for r in edges])
            b = np.array([r[2] for r in edges])
        else:
            e = a = b = np.zeros(0, dtype=np.int64)
        pa, pb = mesh.nodes[a], mesh.nodes[b]
        self._bound = []
        gp = 0.5 * np.array([1 - 1 / np.sqrt(3), 1 + 1 / np.sqrt(3)])
        for tr in self.tractions:
            mask = tr.selector(mesh, pa, pb)
            if not mask.any():
                raise BindingError(f"traction {tr.name or tr!r} selects no boundary edge")
            ee, aa, bb = e[mask], a[mask], b[mask]
            sa = np.array([int(np.flatnonzero(mesh.conn[i] == j)[0]) for i, j in zip(ee, aa)])
            sb = np.array([int(np.flatnonzero(mesh.conn[i] == j)[0]) for i, j in zip(ee, bb)])
            xa, xb = mesh.nodes[aa], mesh.nodes[bb]
            le = np.linalg.norm(xb - xa, axis=1)
            fa = np.zeros((len(ee), 2))
            fb = np.zeros((len(ee), 2))
            for s in gp:  # two-point Gauss along each edge
                x = (1 - s) * xa + s * xb
                t = tr.pattern(x)
                fa += 0.5 * le[:, None] * (1 - s) * t
                fb += 0.5 * le[:, None] * s * t
            self._bound.append((tr.amplitude, ee, sa, sb, fa, fb))
        return self

    def __call__(self, mesh, t):
        return assemble_load(mesh, self, t)


def assemble_load(mesh, program, t):
    if not program._bound and program.tractions:
        program.bind(mesh)
    F = np.zeros((mesh.n_nodes, 2))
    c = mesh.conn
    for amp, ee, sa, sb, fa, fb in program._bound:
        s = float(amp(t))
        if s == 0.0:
            continue
        np.add.at(F, c[ee, sa], s * fa)
        np.add.at(F, c[ee, sb], s * fb)
    for bf in program.body:
        s = float(bf.amplitude(t))
        if s == 0.0:
            continue
        frac = mesh.geometry.nodal_fraction
        w = np.bincount(mesh.conn_safe.ravel(), weights=frac.ravel(), minlength=mesh.n_nodes)
        F += s * w[:, None] * np.asarray(bf.vector, dtype=float)[None]
    return F.ravel()


# -- boundary conditions ---------------------------------------------------


def apply_dirichlet(K, F, dofs, values):
    """Eliminate prescribed dofs; returns (K_ff, F_f, free dofs)."""
    K = K.matrix if isinstance(K, SparseSymmetricOperator) else sp.csr_matrix(K)
    n = K.shape[0]
    dofs = np.asarray(dofs, dtype=np.int64)
    free = np.setdiff1d(np.arange(n), dofs)
    uc = np.zeros(n)
    uc[dofs] = values
    Kf = K[free][:, free]
    Ff = np.asarray(F)[free] - (K @ uc)[free]
    return Kf.tocsr(), Ff, free


def solve_static(K, F, dofs, values):
    """Static solve with prescribed dofs; returns (u, reactions)."""
    from scipy.sparse.linalg import spsolve

    Kf, Ff, free = apply_dirichlet(K, F, dofs, values)
    Km = K.matrix if isinstance(K, SparseSymmetricOperator) else sp.csr_matrix(K)
    u = np.zeros(Km.shape[0])
    u[np.asarray(dofs, dtype=np.int64)] = values
    u[free] = spsolve(Kf.tocsc(), Ff)
    reactions = Km @ u - np.asarray(F)
    return u, reactions


# -- remap -----------------------------------------------------------------


def remap_after_conversion(fields, nodemap, new_mesh, rho, mass_mode="lumped"):
    """Extend nodal fields to the duplicated nodes and rebuild lumped masses.

    ``fields`` is a sequence of dof vectors (e.g. u and u_prev). A new node
    takes the values of the node it was cut from, so the field stays
    continuous at every site. Masses are recomputed from element
    contributions, which splits each site's mass among its copies while
    keeping the per-site total.
    """
    if mass_mode != "lumped":
        raise AssemblyError("CE to DE conversion requires lumped mass; consistent mass is unsupported here")
    n_new = new_mesh.n_nodes
    source = np.arange(n_new)
    for old, ids in nodemap.pairs.items():
        for i in ids:
            source[i] = old
    out = []
    for f in fields:
        U = np.asarray(f).reshape(-1, 2)
        if source.max(initial=-1) >= len(U):
            raise ConsistencyError("field is shorter than the mesh it is remapped from")
        out.append(U[source].ravel())
    return out, lumped_masses(new_mesh, rho)


# -- matrix-free hybrid operator -------------------------------------------


class HybridOperator:
    """K = K_ccm(alpha) + K_pd(alpha, bond status), applied without assembly.

    Bond moments are kept per PD point and updated from alpha increments, so
    an expansion event only touches bonds incident to points whose alpha
    changed.
    """

    def __init__(self, mesh, points, table, E0, clip_tol=0.05):
        if len(table) and table.c0 is not None and not np.any(table.c0):
            raise AssemblyError("bond micro-modulus not set")
        self.mesh = mesh
        self.points = points
        self.table = table
        self.E0 = np.asarray(E0, dtype=float)
        self.clip_tol = clip_tol
        self.alpha = np.zeros(len(points))
        self.moments = np.zeros((len(points), 5))
        self._k = np.zeros(len(table))
        self.E_pts = np.broadcast_to(self.E0, (len(points), 3, 3)).copy()
        self.blocks = ccm_blocks(mesh, _E_gauss(mesh, points, self.E_pts))
        self.active = np.zeros(0, dtype=np.int64)
        self._refresh_mesh()

    # bookkeeping
    def _refresh_mesh(self):
        self._edofs = element_dofs(self.mesh)
        self._pt_nodes = self.mesh.conn_safe[self.points.elem]

    def bonds_added(self):
        """Grow per-bond storage after the table was extended.

        New bonds must join points whose alpha is still zero, so they carry
        no weight until the next alpha update.
        """
        n = len(self.table)
        if n > len(self._k):
            self._k = np.concatenate([self._k, np.zeros(n - len(self._k))])

    def _touching(self, changed):
        mask = np.zeros(len(self.points), dtype=bool)
        mask[changed] = True
        return np.flatnonzero(mask[self.table.p] | mask[self.table.q])

    def set_alpha(self, alpha):
        """Raise alpha at PD points; returns the indices that changed."""
        alpha = np.asarray(alpha, dtype=float)
        d = alpha - self.alpha
        changed = np.flatnonzero(d != 0)
        if len(changed) == 0:
            return changed
        if (d < 0).any():
            raise ConsistencyError("alpha may not decrease")
        self.bonds_added()
        bonds = self._touching(changed)
        self.moments += moment_components(self.table, self.alpha, len(alpha), subset=bonds, delta_alpha=d)
        self.alpha = alpha.copy()
        # points whose moments moved: both ends of every touched bond
        touched = np.unique(np.concatenate([self.table.p[bonds], self.table.q[bonds], changed]))
        self.E_pts[touched] = point_stiffness(self.E0, self.moments[touched], self.clip_tol)
        elems = np.unique(self.points.elem[touched])
        gi = gauss_point_index(self.mesh, self.points)[elems]
        E = self.E_pts[np.maximum(gi, 0)]
        E[gi < 0] = 0.0
        g = self.mesh.geometry
        k = np.einsum("eg,egip,egij,egjq->epq", g.gauss_w[elems], g.gauss_B[elems], E, g.gauss_B[elems],
                      optimize=True)
        self.blocks[elems] = 0.5 * (k + k.transpose(0, 2, 1))
        abar = 0.5 * (self.alpha[self.table.p[bonds]] + self.alpha[self.table.q[bonds]])
        self._k[bonds] = self.table.c0[bonds] * abar * self.table.wp[bonds] * self.table.wq[bonds]
        self._rebuild_active()
        return changed

    def _rebuild_active(self):
        self.active = np.flatnonzero((self._k > 0) & self.table.intact)

    def bonds_broken(self, ids):
        """Drop newly broken bonds from the active set."""
        if len(ids):
            self.active = self.active[self.table.intact[self.active]]

    def set_mesh(self, mesh):
        if mesh.n_elements != self.mesh.n_elements:
            raise ConsistencyError("element count changed; element ids must be stable")
        self.mesh = mesh
        self._refresh_mesh()

    @property
    def n_dofs(self):
        return self.mesh.n_dofs

    # products
    def point_displacements(self, u):
        U = u.reshape(-1, 2)
        return np.einsum("na,nac->nc", self.points.shape, U[self._pt_nodes])

    def matvec(self, u):
        u = np.asarray(u, dtype=float)
        if len(u) != self.n_dofs:
            raise ConsistencyError(f"vector has {len(u)} dofs, operator has {self.n_dofs}")
        ue = u[self._edofs]
        fe = np.einsum("epq,eq->ep", self.blocks, ue)
        out = np.bincount(self._edofs.ravel(), weights=fe.ravel(), minlength=len(u))
        if len(self.active):
            out += self._bond_forces(u)
        return out

    __call__ = matvec

    def _bond_forces(self, u):
        b = self.active
        t = self.table
        up = self.point_displacements(u)
        xi = t.xi[b]
        eta = up[t.q[b]] - up[t.p[b]]
        f = self._k[b] * np.einsum("bi,bi->b", xi, eta)
        fx, fy = f * xi[:, 0], f * xi[:, 1]
        n = len(self.points)
        Fp = np.empty((n, 2))
        Fp[:, 0] = np.bincount(t.q[b], weights=fx, minlength=n) - np.bincount(t.p[b], weights=fx, minlength=n)
        Fp[:, 1] = np.bincount(t.q[b], weights=fy, minlength=n) - np.bincount(t.p[b], weights=fy, minlength=n)
        nodes = self._pt_nodes.ravel()
        sh = self.points.shape
        out = np.zeros(self.n_dofs)
        out += np.bincount(2 * nodes, weights=(sh * Fp[:, 0:1]).ravel(), minlength=self.n_dofs)
        out += np.bincount(2 * nodes + 1, weights=(sh * Fp[:, 1:2]).ravel(), minlength=self.n_dofs)
        return out

    def to_sparse(self):
        K = _scatter_blocks(self.mesh, self.blocks)
        k_full = self._k
        n = self.n_dofs
        if len(self.active):
            dofs, val = _bond_vectors(self.mesh, self.points, self.table, self.active)
            k = k_full[self.active]
            rows = np.repeat(dofs, 16, axis=1).ravel()
            cols = np.tile(dofs, (1, 16)).ravel()
            data = (k[:, None, None] * val[:, :, None] * val[:, None, :]).ravel()
            K = K + sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
        return SparseSymmetricOperator(K.tocsr())

    def strain_energy(self, u):
        return 0.5 * float(u @ self.matvec(u))

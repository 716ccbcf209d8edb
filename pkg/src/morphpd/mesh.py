"""2D mesh of continuous (CE) and discrete (DE) elements.

The mesh is stored as flat numpy arrays. Elements are linear triangles or
bilinear quadrilaterals; triangles are padded to four vertex slots with -1 so
that all per-element arrays are rectangular. Node ids are row indices into
``nodes``; element ids are row indices into ``conn`` and never change, so
geometry computed once stays valid for the whole run.

Converting an element to DE gives it private copies of its nodes. Copies
keep the position and the *site* label of the node they were cut from, so
fields can always be matched by geometric position.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import GeometryError, MeshParseError, ParameterError

CE = 0
DE = 1

GAUSS = 1.0 / np.sqrt(3.0)

# Reference coordinates of the four 2x2 Gauss points and of the centres of
# the four sub-cells; both are listed in the same quadrant order so that
# Gauss point g lies in sub-cell g.
_QUAD_GAUSS = np.array([[-GAUSS, -GAUSS], [GAUSS, -GAUSS], [GAUSS, GAUSS], [-GAUSS, GAUSS]])
_QUAD_SUBCELL = 0.5 * np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])

# Barycentric (N1, N2, N3) of the centroids of the four midpoint sub-triangles.
# The last one is the middle triangle, whose centroid is the element centroid.
_TRI_SUBCELL = np.array(
    [
        [2 / 3, 1 / 6, 1 / 6],
        [1 / 6, 2 / 3, 1 / 6],
        [1 / 6, 1 / 6, 2 / 3],
        [1 / 3, 1 / 3, 1 / 3],
    ]
)

QUAD_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0))
TRI_EDGES = ((0, 1), (1, 2), (2, 0))


def quad_shape(xi, eta):
    """Bilinear shape functions and their reference derivatives."""
    n = 0.25 * np.array([(1 - xi) * (1 - eta), (1 + xi) * (1 - eta), (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)])
    dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
    deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
    return n, np.array([dxi, deta])


@dataclass(frozen=True)
class Node:
    id: int
    position: np.ndarray
    site: int


@dataclass(frozen=True)
class Element:
    id: int
    kind: int
    node_ids: tuple
    quad_points: tuple
    centroid: np.ndarray

    @property
    def is_discrete(self):
        return self.kind == DE


@dataclass
class PDPoints:
    """Quadrature points of the nonlocal (bond) integral."""

    x: np.ndarray  # (n, 2) positions
    w: np.ndarray  # (n,) weights, mm^2
    elem: np.ndarray  # (n,) owning element
    local: np.ndarray  # (n,) index within the owning element
    shape: np.ndarray  # (n, 4) shape-function values at the point, padded with 0
    mode: str

    def __len__(self):
        return len(self.w)


class ElementGeometry:
    """Geometry that depends only on vertex positions.

    Shared unchanged between a mesh and any mesh derived from it by node
    duplication, which is what keeps conversion bit-exact.
    """

    def __init__(self, coords, nverts):
        self.coords = coords  # (m, 4, 2), triangles padded with their last vertex
        self.nverts = nverts
        m = len(nverts)
        quad = nverts == 4
        tri = ~quad
        self.is_quad = quad

        self.area = np.zeros(m)
        self.centroid = np.zeros((m, 2))
        self.gauss_x = np.zeros((m, 4, 2))
        self.gauss_w = np.zeros((m, 4))
        self.gauss_B = np.zeros((m, 4, 3, 8))
        self.gauss_sub = np.zeros((m, 4), dtype=np.int64)  # PD sub-cell owning each Gauss point
        self.centroid_B = np.zeros((m, 3, 8))
        self.nodal_fraction = np.zeros((m, 4))  # integral of N_a over the element

        if quad.any():
            self._quads(np.flatnonzero(quad))
        if tri.any():
            self._tris(np.flatnonzero(tri))

    def _quads(self, idx):
        X = self.coords[idx]
        x, y = X[..., 0], X[..., 1]
        # polygon centroid via the shoelace formula
        xs, ys = np.roll(x, -1, axis=1), np.roll(y, -1, axis=1)
        cross = x * ys - xs * y
        a = 0.5 * cross.sum(axis=1)
        self.area[idx] = a
        self.centroid[idx, 0] = ((x + xs) * cross).sum(axis=1) / (6 * a)
        self.centroid[idx, 1] = ((y + ys) * cross).sum(axis=1) / (6 * a)
        for g, (r, s) in enumerate(_QUAD_GAUSS):
            n, dn = quad_shape(r, s)
            J = np.einsum("ka,eac->ekc", dn, X)
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            self.gauss_x[idx, g] = n @ X
            self.gauss_w[idx, g] = det
            self.gauss_B[idx, g] = _strain_matrix(J, det, dn)
            self.nodal_fraction[idx] += det[:, None] * n[None, :]
            self.gauss_sub[idx, g] = g
        n, dn = quad_shape(0.0, 0.0)
        J = np.einsum("ka,eac->ekc", dn, X)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        self.centroid_B[idx] = _strain_matrix(J, det, dn)

    def _tris(self, idx):
        X = self.coords[idx, :3]
        e1 = X[:, 1] - X[:, 0]
        e2 = X[:, 2] - X[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        a = 0.5 * det
        self.area[idx] = a
        self.centroid[idx] = X.mean(axis=1)
        dn = np.array([[-1.0, 1.0, 0.0, 0.0], [-1.0, 0.0, 1.0, 0.0]])
        J = np.einsum("ka,eac->ekc", dn[:, :3], X)
        B = _strain_matrix(J, det, dn[:, :3])
        self.gauss_x[idx, 0] = self.centroid[idx]
        self.gauss_w[idx, 0] = a
        self.gauss_B[idx, 0, :, :6] = B
        self.gauss_sub[idx] = 3
        self.centroid_B[idx, :, :6] = B
        self.nodal_fraction[idx, :3] = a[:, None] / 3.0

    @cached_property
    def edge_lengths(self):
        """(m, 4) edge lengths, NaN in the unused slot of triangles."""
        out = np.full((len(self.nverts), 4), np.nan)
        for k, (i, j) in enumerate(QUAD_EDGES):
            out[:, k] = np.linalg.norm(self.coords[:, j] - self.coords[:, i], axis=1)
        tri = ~self.is_quad
        if tri.any():
            for k, (i, j) in enumerate(TRI_EDGES):
                out[tri, k] = np.linalg.norm(self.coords[tri, j] - self.coords[tri, i], axis=1)
            out[tri, 3] = np.nan
        return out

    def pd_points(self, mode):
        m = len(self.nverts)
        if mode == "centroid":
            shape = np.zeros((m, 4))
            shape[self.is_quad] = 0.25
            shape[~self.is_quad, :3] = 1.0 / 3.0
            x = np.einsum("ea,eac->ec", shape, self.coords)
            return PDPoints(x, self.area.copy(), np.arange(m), np.zeros(m, dtype=np.int64), shape, mode)
        if mode != "subcell":
            raise ParameterError(f"unknown PD quadrature mode {mode!r}")
        shape = np.zeros((m, 4, 4))
        w = np.zeros((m, 4))
        quad = np.flatnonzero(self.is_quad)
        X = self.coords[quad]
        for k, (r, s) in enumerate(_QUAD_SUBCELL):
            n, dn = quad_shape(r, s)
            J = np.einsum("ka,eac->ekc", dn, X)
            shape[quad, k] = n
            # detJ is affine in (r, s) for a bilinear map, so the midpoint
            # rule integrates the sub-cell area exactly
            w[quad, k] = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        tri = np.flatnonzero(~self.is_quad)
        shape[tri, :, :3] = _TRI_SUBCELL
        w[tri] = self.area[tri, None] / 4.0
        x = np.einsum("eka,eac->ekc", shape, self.coords)
        elem = np.repeat(np.arange(m), 4)
        local = np.tile(np.arange(4), m)
        return PDPoints(x.reshape(-1, 2), w.ravel(), elem, local, shape.reshape(-1, 4), mode)


def _strain_matrix(J, det, dn):
    """Plane strain-displacement matrix [eps_xx, eps_yy, gamma_xy] per element."""
    inv = np.empty_like(J)
    inv[:, 0, 0] = J[:, 1, 1] / det
    inv[:, 0, 1] = -J[:, 0, 1] / det
    inv[:, 1, 0] = -J[:, 1, 0] / det
    inv[:, 1, 1] = J[:, 0, 0] / det
    dndx = np.einsum("eck,ka->eca", inv, dn)  # (m, 2, nv)
    nv = dn.shape[1]
    B = np.zeros((len(det), 3, 2 * nv))
    B[:, 0, 0::2] = dndx[:, 0]
    B[:, 1, 1::2] = dndx[:, 1]
    B[:, 2, 0::2] = dndx[:, 1]
    B[:, 2, 1::2] = dndx[:, 0]
    return B


@dataclass
class Mesh:
    nodes: np.ndarray
    conn: np.ndarray
    nverts: np.ndarray
    kind: np.ndarray = None
    sites: np.ndarray = None
    slits: list = field(default_factory=list)
    geometry: ElementGeometry = None

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.conn = np.asarray(self.conn, dtype=np.int64)
        self.nverts = np.asarray(self.nverts, dtype=np.int64)
        if self.kind is None:
            self.kind = np.full(len(self.conn), CE, dtype=np.int8)
        if self.sites is None:
            self.sites = np.arange(len(self.nodes))
        if self.geometry is None:
            self.geometry = ElementGeometry(self._vertex_coords(), self.nverts)
            if (self.geometry.area <= 0).any():
                bad = int(np.flatnonzero(self.geometry.area <= 0)[0])
                raise GeometryError(f"element {bad} has non-positive area (inverted or degenerate)")

    def _vertex_coords(self):
        c = self.conn.copy()
        tri = self.nverts == 3
        c[tri, 3] = c[tri, 2]
        return self.nodes[c]

    # -- sizes -------------------------------------------------------------
    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.conn)

    @property
    def n_dofs(self):
        return 2 * len(self.nodes)

    @property
    def conn_safe(self):
        """Connectivity with padding replaced by the element's own node 0."""
        c = self.conn.copy()
        pad = c < 0
        c[pad] = np.broadcast_to(c[:, :1], c.shape)[pad]
        return c

    @property
    def areas(self):
        return self.geometry.area

    @property
    def centroids(self):
        return self.geometry.centroid

    @property
    def avg_element_size(self):
        """Mean element edge length (equals the spacing of a square grid)."""
        return float(np.nanmean(self.geometry.edge_lengths))

    @property
    def min_edge(self):
        return min_edge_length(self)

    @property
    def bbox(self):
        return self.nodes.min(axis=0), self.nodes.max(axis=0)

    @property
    def diameter(self):
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    def node(self, i):
        return Node(int(i), self.nodes[i].copy(), int(self.sites[i]))

    def element(self, e):
        g = self.geometry
        nv = int(self.nverts[e])
        qp = tuple((g.gauss_x[e, k].copy(), float(g.gauss_w[e, k])) for k in range(4) if g.gauss_w[e, k] > 0)
        return Element(int(e), int(self.kind[e]), tuple(int(v) for v in self.conn[e, :nv]), qp, g.centroid[e].copy())

    def element_edges(self, e):
        nv = int(self.nverts[e])
        pairs = QUAD_EDGES if nv == 4 else TRI_EDGES
        return [(int(self.conn[e, i]), int(self.conn[e, j])) for i, j in pairs]

    def pd_points(self, mode="subcell"):
        return self.geometry.pd_points(mode)

    def edge_array(self):
        """Every element edge as arrays ``(element, node_a, node_b)`` in element order."""
        e_parts, a_parts, b_parts = [], [], []
        for nv, pairs in ((4, QUAD_EDGES), (3, TRI_EDGES)):
            els = np.flatnonzero(self.nverts == nv)
            for i, j in pairs:
                e_parts.append(els)
                a_parts.append(self.conn[els, i])
                b_parts.append(self.conn[els, j])
        e, a, b = (np.concatenate(v).astype(np.int64) for v in (e_parts, a_parts, b_parts))
        order = np.argsort(e, kind="stable")
        return e[order], a[order], b[order]

    def boundary_edges(self):
        """Edges lying on the physical boundary, as (element, node_a, node_b).

        Edge sharing is decided on sites, so the internal faces between DE
        elements (which share no node ids) are not reported.
        """
        e, a, b = self.edge_array()
        sa, sb = self.sites[a], self.sites[b]
        keys = np.column_stack([np.minimum(sa, sb), np.maximum(sa, sb)])
        _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        single = counts[inv.ravel()] == 1
        return list(zip(e[single].tolist(), a[single].tolist(), b[single].tolist()))

    def site_adjacency(self):
        """Element pairs sharing at least one site (vertex adjacency)."""
        rows, cols = [], []
        by_site = {}
        for e in range(self.n_elements):
            for v in self.conn[e, : self.nverts[e]]:
                by_site.setdefault(int(self.sites[v]), []).append(e)
        for members in by_site.values():
            for a in members:
                for b in members:
                    if a != b:
                        rows.append(a)
                        cols.append(b)
        return np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)

    def copy(self):
        return Mesh(self.nodes.copy(), self.conn.copy(), self.nverts.copy(), self.kind.copy(),
                    self.sites.copy(), list(self.slits), self.geometry)


@dataclass
class NodeMap:
    """Old node id -> node ids now standing at the same site."""

    pairs: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.pairs)

    def new_ids(self):
        out = set()
        for v in self.pairs.values():
            out.update(v)
        return out


def generate_structured_quad_mesh(rect, spacing):
    """Axis-aligned grid of square-ish bilinear quads, all CE."""
    if spacing <= 0:
        raise ParameterError("spacing must be positive")
    (x0, y0), (x1, y1) = np.asarray(rect, dtype=float)
    if x1 <= x0 or y1 <= y0:
        raise ParameterError("rectangle must have positive area")
    nx = max(1, int(round((x1 - x0) / spacing)))
    ny = max(1, int(round((y1 - y0) / spacing)))
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (j * (nx + 1) + i).ravel()
    conn = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    return Mesh(nodes, conn, np.full(len(conn), 4))


def generate_perforated_mesh(outer, holes, h):
    """Quasi-uniform triangle mesh of a rectangle or disk with circular holes.

    ``outer`` is ``("rect", (x0, y0, x1, y1))`` or ``("disk", (cx, cy, R))``;
    ``holes`` is a sequence of ``(cx, cy, r)``. Points are laid out on a
    triangular lattice (rectangle) or on concentric rings (disk), rings of
    points are placed on every hole rim, and the set is Delaunay-triangulated.
    A disk whose only hole is central has all its points on concentric
    rings; neighbouring rings are then stitched directly, which is much
    faster than a general triangulation.
    """
    if h <= 0:
        raise ParameterError("mesh size must be positive")
    holes = [tuple(map(float, hl)) for hl in holes]
    kind, params = outer
    pts = []
    if kind == "rect":
        x0, y0, x1, y1 = params
        dy = h * np.sqrt(3) / 2
        ny = max(1, int(round((y1 - y0) / dy)))
        for k, y in enumerate(np.linspace(y0, y1, ny + 1)):
            nx = max(1, int(round((x1 - x0) / h)))
            xs = np.linspace(x0, x1, nx + 1)
            if k % 2:
                xs = np.concatenate([[x0], 0.5 * (xs[1:] + xs[:-1]), [x1]])
            pts.append(np.column_stack([xs, np.full(len(xs), y)]))
    elif kind == "disk":
        cx, cy, R = params
        inner = [hl for hl in holes if np.hypot(hl[0] - cx, hl[1] - cy) < 1e-12]
        r_start = inner[0][2] if inner else 0.0
        nr = max(1, int(round((R - r_start) / h)))
        for k, r in enumerate(np.linspace(r_start, R, nr + 1)):
            if r == 0:
                pts.append(np.array([[cx, cy]]))
                continue
            n = max(6, int(round(2 * np.pi * r / h)))
            th = 2 * np.pi * (np.arange(n) + 0.5 * (k % 2)) / n
            pts.append(np.column_stack([cx + r * np.cos(th), cy + r * np.sin(th)]))
    else:
        raise ParameterError(f"unknown outer boundary {kind!r}")
    pts = np.vstack(pts)
    rings = []
    for cx, cy, r in holes:
        d = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
        pts = pts[d > r]
        for k, rr in enumerate((r, r + 0.85 * h)):
            n = max(8, int(round(2 * np.pi * rr / h)))
            th = 2 * np.pi * (np.arange(n) + 0.5 * k) / n
            rings.append(np.column_stack([cx + rr * np.cos(th), cy + rr * np.sin(th)]))
    if rings:
        rings = np.vstack(rings)
        # lattice points crowding a rim ring would leave slivers and short edges
        near = cKDTree(rings).query(pts, distance_upper_bound=0.55 * h)[0] < np.inf
        pts = np.vstack([pts[~near], rings])
    pts = _dedupe(pts, 1e-6 * h)
    if kind == "disk" and all(np.hypot(hx - params[0], hy - params[1]) < 1e-12 for hx, hy, _ in holes):
        tri = _stitch_rings(pts, params[:2], h)
    else:
        tri = Delaunay(pts).simplices
    X = pts[tri]
    c = X.mean(axis=1)
    keep = np.ones(len(tri), dtype=bool)
    for cx, cy, r in holes:
        keep &= np.hypot(c[:, 0] - cx, c[:, 1] - cy) > r
    if kind == "disk":
        keep &= np.hypot(c[:, 0] - params[0], c[:, 1] - params[1]) < params[2]
    e1, e2 = X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    keep &= np.abs(det) > 1e-6 * h * h
    tri, det = tri[keep], det[keep]
    flip = det < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    used = np.unique(tri)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    conn = np.full((len(tri), 4), -1, dtype=np.int64)
    conn[:, :3] = remap[tri]
    return Mesh(pts[used], conn, np.full(len(tri), 3))


def _stitch_rings(pts, center, h):
    """Triangles between consecutive concentric rings of points.

    Each ring is walked by angle together with the next one out; every step
    advances the ring whose next point comes first, closing one triangle.
    """
    d = pts - np.asarray(center, dtype=float)
    rad = np.hypot(d[:, 0], d[:, 1])
    ang = np.arctan2(d[:, 1], d[:, 0])
    key = np.round(rad / (1e-6 * h)).astype(np.int64)
    radii, which = np.unique(key, return_inverse=True)
    rings = []
    for k in range(len(radii)):
        idx = np.flatnonzero(which == k)
        rings.append(idx[np.argsort(ang[idx], kind="stable")])
    out = []
    for A, B in zip(rings[:-1], rings[1:]):
        ta = ang[A]
        j0 = int(np.argmin(np.abs(np.angle(np.exp(1j * (ang[B] - ta[0]))))))
        B = np.roll(B, -j0)
        # unwrapped angles, both rings starting next to ta[0]
        ua = np.unwrap(ta)
        ub = ua[0] + np.unwrap(np.angle(np.exp(1j * (ang[B] - ta[0]))))
        ea = np.append(ua[1:], ua[0] + 2 * np.pi)
        eb = np.append(ub[1:], ub[0] + 2 * np.pi)
        na, nb = len(A), len(B)
        # pointer of the other ring at each advance; ties advance ring A first
        jb = np.searchsorted(eb, ea, side="left")
        ia = np.searchsorted(ea, eb, side="right")
        ka = np.arange(na)
        kb = np.arange(nb)
        out.append(np.column_stack([A[ka], A[(ka + 1) % na], B[jb % nb]]))
        out.append(np.column_stack([A[ia % na], B[(kb + 1) % nb], B[kb]]))
    return np.vstack(out) if out else np.zeros((0, 3), dtype=np.int64)


def _dedupe(pts, tol):
    pairs = cKDTree(pts).query_pairs(tol, output_type="ndarray")
    keep = np.ones(len(pts), dtype=bool)
    # keep the lowest index of each cluster
    for i, j in pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))].tolist() if len(pairs) else ():
        if keep[i]:
            keep[j] = False
    return pts[keep]


def load_unstructured_mesh(path):
    """Read the plain-text mesh format.

    Header ``nodes N elements M``, then N lines ``id x y``, then M lines
    ``id n3|n4 v1 v2 v3 [v4]`` with vertices given as node ids.
    """
    lines = Path(path).read_text().splitlines()
    rows = [(k + 1, ln.split()) for k, ln in enumerate(lines) if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows:
        raise MeshParseError("empty mesh file", 1)
    lineno, head = rows[0]
    if len(head) != 4 or head[0] != "nodes" or head[2] != "elements":
        raise MeshParseError("expected header 'nodes N elements M'", lineno)
    try:
        n, m = int(head[1]), int(head[3])
    except ValueError:
        raise MeshParseError("node/element counts must be integers", lineno) from None
    if len(rows) < 1 + n + m:
        raise MeshParseError(f"expected {n} nodes and {m} elements, file is truncated", rows[-1][0])
    ids = {}
    nodes = np.zeros((n, 2))
    for k in range(n):
        lineno, tok = rows[1 + k]
        if len(tok) != 3:
            raise MeshParseError("node line must be 'id x y'", lineno)
        try:
            nid, x, y = int(tok[0]), float(tok[1]), float(tok[2])
        except ValueError:
            raise MeshParseError("could not parse node line", lineno) from None
        if nid in ids:
            raise MeshParseError(f"duplicate node id {nid}", lineno)
        ids[nid] = k
        nodes[k] = x, y
    conn = np.full((m, 4), -1, dtype=np.int64)
    nverts = np.zeros(m, dtype=np.int64)
    seen = set()
    for k in range(m):
        lineno, tok = rows[1 + n + k]
        if len(tok) < 2 or tok[1] not in ("n3", "n4"):
            raise MeshParseError("element line must be 'id n3|n4 v1 v2 v3 [v4]'", lineno)
        nv = 3 if tok[1] == "n3" else 4
        if len(tok) != 2 + nv:
            raise MeshParseError(f"element of kind {tok[1]} needs {nv} vertices", lineno)
        try:
            eid = int(tok[0])
            verts = [ids[int(v)] for v in tok[2:]]
        except ValueError:
            raise MeshParseError("could not parse element line", lineno) from None
        except KeyError as exc:
            raise MeshParseError(f"unknown node id {exc.args[0]}", lineno) from None
        if eid in seen:
            raise MeshParseError(f"duplicate element id {eid}", lineno)
        if len(set(verts)) != nv:
            raise MeshParseError("element repeats a vertex", lineno)
        seen.add(eid)
        conn[k, :nv] = verts
        nverts[k] = nv
    return Mesh(nodes, conn, nverts)


def write_mesh(mesh, path):
    out = [f"nodes {mesh.n_nodes} elements {mesh.n_elements}"]
    out += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(mesh.nodes.tolist())]
    for e in range(mesh.n_elements):
        nv = int(mesh.nverts[e])
        out.append(f"{e} n{nv} " + " ".join(str(int(v)) for v in mesh.conn[e, :nv]))
    Path(path).write_text("\n".join(out) + "\n")


def _edge_set(mesh):
    _, a, b = mesh.edge_array()
    return set(zip(np.minimum(a, b).tolist(), np.maximum(a, b).tolist()))


def insert_pre_notch(mesh, segment):
    """Cut a slit along a chain of element edges.

    Nodes strictly inside the segment are duplicated, and so is an end node
    that sits on the outer boundary (a notch cut in from the edge); an end
    lying inside the body is the crack tip and stays shared. Elements on the
    left of the directed segment take the copies.
    """
    a, b = (np.asarray(p, dtype=float) for p in segment)
    d = b - a
    length = float(np.linalg.norm(d))
    if length == 0.0:
        return mesh
    scale = max(mesh.diameter, length)
    tol = 1e-9 * scale
    rel = mesh.nodes - a
    t = rel @ d / length**2
    dist = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / length
    on = np.flatnonzero((dist < tol) & (t > -tol / length) & (t < 1 + tol / length))
    if len(on) < 2:
        raise GeometryError("pre-notch segment does not run along mesh nodes (outside the domain?)")
    on = on[np.argsort(t[on])]
    if abs(t[on[0]]) > tol / length or abs(t[on[-1]] - 1) > tol / length:
        raise GeometryError("pre-notch end points must coincide with mesh nodes")
    edges = _edge_set(mesh)
    for u, v in zip(on[:-1], on[1:]):
        if (min(u, v), max(u, v)) not in edges:
            raise GeometryError("pre-notch segment is not resolved by element edges")

    on_boundary = set()
    for _, p, q in mesh.boundary_edges():
        on_boundary.update((p, q))
    dup = [int(n) for n in on[1:-1]]
    dup += [int(n) for n in (on[0], on[-1]) if int(n) in on_boundary]

    out = mesh.copy()
    cen = mesh.centroids
    left = (d[0] * (cen[:, 1] - a[1]) - d[1] * (cen[:, 0] - a[0])) > 0
    new_nodes = []
    new_sites = []
    next_id = mesh.n_nodes
    next_site = int(mesh.sites.max()) + 1
    for n in dup:
        users = np.flatnonzero((mesh.conn == n).any(axis=1) & left)
        if len(users) == 0:
            continue
        for e in users:
            out.conn[e][out.conn[e] == n] = next_id
        new_nodes.append(mesh.nodes[n])
        new_sites.append(next_site)
        next_id += 1
        next_site += 1
    if new_nodes:
        out.nodes = np.vstack([mesh.nodes, np.asarray(new_nodes)])
        out.sites = np.concatenate([mesh.sites, np.asarray(new_sites, dtype=mesh.sites.dtype)])
    out.slits = list(mesh.slits) + [(tuple(a), tuple(b))]
    return out


def convert_to_discrete(mesh, element_ids):
    """Give each listed CE element private copies of its shared nodes."""
    out = mesh.copy()
    nodemap = NodeMap()
    todo = [int(e) for e in element_ids if mesh.kind[int(e)] == CE]
    if not todo:
        return out, nodemap
    todo = sorted(set(todo))
    n_users = np.bincount(out.conn[out.conn >= 0], minlength=out.n_nodes)
    new_pos = []
    new_site = []
    source = []
    next_id = out.n_nodes
    for e in todo:
        nv = int(out.nverts[e])
        for k in range(nv):
            v = int(out.conn[e, k])
            nodemap.pairs.setdefault(v, [])
            if n_users[v] > 1:
                n_users[v] -= 1
                out.conn[e, k] = next_id
                new_pos.append(out.nodes[v])
                new_site.append(out.sites[v])
                source.append(v)
                nodemap.pairs[v].append(next_id)
                next_id += 1
            else:
                nodemap.pairs[v].append(v)
        out.kind[e] = DE
    if new_pos:
        out.nodes = np.vstack([out.nodes, np.asarray(new_pos)])
        out.sites = np.concatenate([out.sites, np.asarray(new_site, dtype=out.sites.dtype)])
    # every old id must map to the full set of ids standing on its site
    for v, ids in nodemap.pairs.items():
        if v not in ids and n_users[v] > 0:
            ids.insert(0, v)
    return out, nodemap


def min_edge_length(mesh):
    if mesh.n_elements == 0:
        raise ParameterError("mesh has no elements")
    return float(np.nanmin(mesh.geometry.edge_lengths))


def segments_cross(p, q, a, b):
    """Proper intersection test of segments p-q against a-b (vectorised over p, q).

    Touching at an end point does not count as crossing.
    """

    def orient(u, v, w):
        return (v[..., 0] - u[..., 0]) * (w[..., 1] - u[..., 1]) - (v[..., 1] - u[..., 1]) * (w[..., 0] - u[..., 0])

    a = np.broadcast_to(np.asarray(a, dtype=float), np.shape(p))
    b = np.broadcast_to(np.asarray(b, dtype=float), np.shape(p))
    o1 = orient(a, b, p)
    o2 = orient(a, b, q)
    o3 = orient(p, q, a)
    o4 = orient(p, q, b)
    return (o1 * o2 < 0) & (o3 * o4 < 0)


class BondBuilder:
    """Builds bond families on demand.

    A point is *complete* once every pair joining it to a point within the
    horizon is in the table. Completing a batch adds each new unordered
    pair exactly once, so completing all points gives the full table.
    """

    CHUNK = 4096

    def __init__(self, points, delta, slits=()):
        if delta <= 0:
            raise ParameterError("horizon must be positive")
        self.points = points
        self.delta = float(delta)
        self.slits = list(slits)
        self.tree = cKDTree(points.x)
        self.complete = np.zeros(len(points), dtype=bool)

    def _neighbours(self, idx):
        """Ordered pairs (p in idx, q) within the horizon, slit-filtered, p != q."""
        x = self.points.x
        for chunk in np.array_split(idx, max(1, int(np.ceil(len(idx) / self.CHUNK)))):
            if len(chunk) == 0:
                continue
            rec = cKDTree(x[chunk]).sparse_distance_matrix(self.tree, self.delta * (1 + 1e-12), output_type="ndarray")
            p = chunk[rec["i"]].astype(np.int64)
            q = rec["j"].astype(np.int64)
            keep = p != q
            p, q = p[keep], q[keep]
            xi = x[q] - x[p]
            r = np.linalg.norm(xi, axis=1)
            keep = r <= self.delta
            for s0, s1 in self.slits:
                keep &= ~segments_cross(x[p], x[q], s0, s1)
            yield p[keep], q[keep], xi[keep], r[keep]

    def complete_points(self, idx):
        """Complete the given points; returns a BondTable of the new bonds only."""
        from .bonds import BondTable

        idx = np.unique(np.asarray(idx, dtype=np.int64))
        idx = idx[~self.complete[idx]]
        batch = np.zeros(len(self.points), dtype=bool)
        batch[idx] = True
        parts = []
        for p, q, xi, r in self._neighbours(idx):
            # a pair already exists if q was complete; inside the batch keep p < q
            keep = ~self.complete[q] & (~batch[q] | (p < q))
            parts.append((p[keep], q[keep], xi[keep], r[keep]))
        self.complete[idx] = True
        if parts:
            p, q, xi, r = (np.concatenate(v) for v in zip(*parts))
        else:
            p = q = np.zeros(0, dtype=np.int64)
            xi, r = np.zeros((0, 2)), np.zeros(0)
        order = np.lexsort((q, p))
        p, q, xi, r = p[order], q[order], xi[order], r[order]
        pts = self.points
        return BondTable(p=p, q=q, xi=xi, length=r, wp=pts.w[p], wq=pts.w[q],
                         elem_p=pts.elem[p], elem_q=pts.elem[q], delta=self.delta)

    def family_sums(self, weight):
        """Per point, the sum of ``weight(length)`` over its full family."""
        n = len(self.points)
        out = np.zeros(n)
        for p, _, _, r in self._neighbours(np.arange(n)):
            out += np.bincount(p, weights=weight(r), minlength=n)
        return out

    def element_totals(self, weight):
        """Per element, the weight of all bonds touching it, intra-element pairs once."""
        pts = self.points
        m = int(pts.elem.max()) + 1 if len(pts) else 0
        tot = np.bincount(pts.elem, weights=self.family_sums(weight), minlength=m)
        # intra-element pairs were counted from both ends
        order = np.argsort(pts.elem, kind="stable")
        counts = np.bincount(pts.elem, minlength=m)
        k = int(counts.max()) if m else 0
        if k > 1 and np.all(counts == k):
            grid = order.reshape(m, k)
            for a in range(k):
                for b in range(a + 1, k):
                    r = np.linalg.norm(pts.x[grid[:, b]] - pts.x[grid[:, a]], axis=1)
                    ok = (r > 0) & (r <= self.delta)
                    tot -= np.where(ok, weight(np.where(ok, r, 1.0)), 0.0)
        return tot


def find_bond_candidates(mesh, delta, quadrature="subcell", points=None):
    """Every pair of PD quadrature points closer than the horizon.

    Pairs are unordered and stored once with ``xi`` pointing from the first
    to the second point. Pairs whose connecting segment crosses a slit are
    dropped. Points of the same element interact like any others.
    """
    pts = points if points is not None else mesh.pd_points(quadrature)
    builder = BondBuilder(pts, delta, mesh.slits)
    return builder.complete_points(np.arange(len(pts)))

"""Snapshots, crack-tip tracking and CSV logs."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

_VTK_CELL = {3: 5, 4: 9}  # triangle, quad


def _fmt(a, fmt="%.10g"):
    buf = io.StringIO()
    np.savetxt(buf, np.atleast_2d(a), fmt=fmt)
    return buf.getvalue()


def write_snapshot(path, mesh, u, phi, alpha, sigma_v=None, title="morphpd snapshot"):
    """Legacy VTK unstructured grid with displacement and cell fields.

    Cell data: damage ``phi``, morphing ``alpha``, element ``kind`` (0 CE,
    1 DE) and von Mises stress ``sigma_v``. Duplicated DE nodes are written
    as separate points, so a crack opening shows up directly.
    """
    n, ne = mesh.n_nodes, mesh.n_elements
    u = np.asarray(u, dtype=float).reshape(n, 2)
    phi = np.asarray(phi, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    sigma_v = np.zeros(ne) if sigma_v is None else np.asarray(sigma_v, dtype=float)
    for name, arr in (("phi", phi), ("alpha", alpha), ("sigma_v", sigma_v)):
        if arr.shape != (ne,):
            raise ValueError(f"{name} has shape {arr.shape}, expected ({ne},)")
    out = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {n} double")
    body = [_fmt(np.column_stack([mesh.nodes, np.zeros(n)]))]
    cells = []
    for e in range(ne):
        k = int(mesh.nverts[e])
        cells.append(f"{k} " + " ".join(str(int(v)) for v in mesh.conn[e, :k]))
    size = int(np.sum(mesh.nverts + 1))
    text = "\n".join(out) + "\n" + body[0]
    text += f"CELLS {ne} {size}\n" + "\n".join(cells) + "\n"
    text += f"CELL_TYPES {ne}\n" + "\n".join(str(_VTK_CELL[int(k)]) for k in mesh.nverts) + "\n"
    text += f"POINT_DATA {n}\nVECTORS displacement double\n" + _fmt(np.column_stack([u, np.zeros(n)]))
    text += f"CELL_DATA {ne}\n"
    for name, arr, fmt in (("phi", phi, "%.10g"), ("alpha", alpha, "%.10g"),
                           ("kind", mesh.kind, "%d"), ("sigma_v", sigma_v, "%.10g")):
        typ = "int" if name == "kind" else "double"
        text += f"SCALARS {name} {typ} 1\nLOOKUP_TABLE default\n" + _fmt(np.asarray(arr).reshape(-1, 1), fmt)
    with open(path, "w") as fh:
        fh.write(text)
    return path


# -- crack tips -------------------------------------------------------------


def _damage_graph(mesh, elems):
    """Weighted adjacency between the given elements (shared sites)."""
    k = len(elems)
    nv = mesh.nverts[elems]
    site = mesh.sites[mesh.conn_safe[elems]]
    owner = np.repeat(np.arange(k), 4).reshape(k, 4)
    valid = np.arange(4)[None, :] < nv[:, None]
    site, owner = site[valid], owner[valid]
    order = np.lexsort((owner, site))
    site, owner = site[order], owner[order]
    rows, cols = [], []
    for off in range(1, 16):
        same = site[off:] == site[:-off]
        if not same.any():
            break
        a, b = owner[:-off][same], owner[off:][same]
        rows += [a, b]
        cols += [b, a]
    if rows:
        rows, cols = np.concatenate(rows), np.concatenate(cols)
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
    cen = mesh.centroids[elems]
    w = np.linalg.norm(cen[rows] - cen[cols], axis=1) + 1e-12
    return csr_matrix((w, (rows, cols)), shape=(k, k))


def extract_crack_tips(phi, mesh, threshold=0.35, seeds=(), min_branch=None, max_tips=8):
    """Crack tips of the damage field.

    Elements with ``phi >= threshold`` are grouped into vertex-connected
    components. A component's root is its element nearest to a seed point
    (initial flag or notch tip), or one end of its diameter when no seed
    lies close. The first tip is the element geodesically farthest from the
    root; further tips are added while some element ends a side branch at
    least ``min_branch`` long, measured from the tree already spanned.

    Returns an (n, 2) array of tip positions.
    """
    phi = np.asarray(phi)
    elems = np.flatnonzero(phi >= threshold)
    if len(elems) == 0:
        return np.zeros((0, 2))
    if min_branch is None:
        min_branch = 10.0 * mesh.avg_element_size
    G = _damage_graph(mesh, elems)
    ncomp, labels = connected_components(G, directed=False)
    cen = mesh.centroids[elems]
    seeds = np.asarray(seeds, dtype=float).reshape(-1, 2)
    tips = []
    for c in range(ncomp):
        members = np.flatnonzero(labels == c)
        if len(members) < 2:
            continue
        root = None
        if len(seeds):
            d = np.linalg.norm(cen[members][:, None, :] - seeds[None, :, :], axis=2)
            i, j = np.unravel_index(np.argmin(d), d.shape)
            if d[i, j] <= min_branch:
                root = members[i]
        if root is None:
            d0 = dijkstra(G, indices=members[0])
            root = members[np.argmax(np.where(np.isfinite(d0[members]), d0[members], -1))]
        ds = dijkstra(G, indices=root)[members]
        first = int(np.argmax(ds))
        if ds[first] < min_branch:
            continue
        found = [first]
        dist_tip = [dijkstra(G, indices=members[first])[members]]
        while len(found) < max_tips:
            branch = np.min([(ds + dt - ds[t]) / 2 for t, dt in zip(found, dist_tip)], axis=0)
            cand = int(np.argmax(branch))
            if branch[cand] < min_branch:
                break
            found.append(cand)
            dist_tip.append(dijkstra(G, indices=members[cand])[members])
        tips += [cen[members[t]] for t in found]
    return np.array(tips).reshape(-1, 2)


# -- crack speed ------------------------------------------------------------


@dataclass
class CrackSeries:
    """Tip positions, ids and speeds per output sample."""

    steps: list = field(default_factory=list)
    times: list = field(default_factory=list)
    tips: list = field(default_factory=list)
    ids: list = field(default_factory=list)
    speeds: list = field(default_factory=list)

    @property
    def tip_counts(self):
        return np.array([len(t) for t in self.tips], dtype=int)

    def all_speeds(self):
        v = [s for s in self.speeds if len(s)]
        return np.concatenate(v) if v else np.zeros(0)

    def rows(self):
        for step, t, X, I, V in zip(self.steps, self.times, self.tips, self.ids, self.speeds):
            for x, i, v in zip(X, I, V):
                yield int(step), float(t), int(i), float(x[0]), float(x[1]), float(v)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("step,t,tip_id,x,y,v_c\n")
            for r in self.rows():
                fh.write("%d,%.10g,%d,%.10g,%.10g,%.10g\n" % r)


def track_tips(tip_series):
    """Assign persistent ids by minimum-distance matching between samples.

    Returns ``(ids, raw)`` where ``raw`` holds the displacement of every
    matched tip since the previous sample and NaN for a newborn tip.
    """
    ids, raw = [], []
    prev, prev_ids, next_id = np.zeros((0, 2)), np.zeros(0, dtype=int), 0
    for X in tip_series:
        X = np.asarray(X, dtype=float).reshape(-1, 2)
        cur = np.full(len(X), -1, dtype=int)
        step = np.full(len(X), np.nan)
        if len(X) and len(prev):
            D = np.linalg.norm(X[:, None, :] - prev[None, :, :], axis=2)
            r, c = linear_sum_assignment(D)
            cur[r] = prev_ids[c]
            step[r] = D[r, c]
        for k in np.flatnonzero(cur < 0):
            cur[k] = next_id
            next_id += 1
        ids.append(cur)
        raw.append(step)
        prev, prev_ids = X, cur
    return ids, raw


def crack_speed(tip_series, dt_out):
    """Per-tip speed from tip displacement between samples.

    Raw speeds are smoothed with a centred three-sample window along each
    tip's track. A tip has no raw speed at its first sample, so its first
    value comes from the following one.

    Returns ``(ids, speeds)`` as lists aligned with ``tip_series``.
    """
    if dt_out <= 0:
        raise ValueError("output interval must be positive")
    ids, raw = track_tips(tip_series)
    raw_v = [r / dt_out for r in raw]
    where = {}
    for k, I in enumerate(ids):
        for j, i in enumerate(I):
            where.setdefault(int(i), []).append((k, j))
    speeds = [np.zeros(len(I)) for I in ids]
    for track in where.values():
        vals = np.array([raw_v[k][j] for k, j in track])
        for n, (k, j) in enumerate(track):
            window = vals[max(0, n - 1): n + 2]
            window = window[np.isfinite(window)]
            speeds[k][j] = window.mean() if len(window) else 0.0
    return ids, speeds


def crack_series(steps, times, tip_series, dt_out):
    ids, speeds = crack_speed(tip_series, dt_out)
    return CrackSeries(list(steps), list(times), [np.asarray(t).reshape(-1, 2) for t in tip_series], ids, speeds)


# -- logs -------------------------------------------------------------------


def write_timing(path, records):
    with open(path, "w") as fh:
        fh.write("step,t,n_dofs,n_broken,wall_ms\n")
        for r in records:
            fh.write(f"{r.step},{r.t:.10g},{r.n_dofs},{r.n_broken},{r.wall_ms:.4f}\n")

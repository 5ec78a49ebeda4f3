"""Charts on base self-motion manifolds.

Closed level curves get an arc-length angle chart with one cut point;
disk-topology level surfaces get a discrete harmonic parametrization onto
the unit disk (cotangent weights, circular boundary).  Chart values are
interpolated at off-mesh points through a KD-tree vertex query followed by
a barycentric test over the 1-ring, so lookups stay deterministic.
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu
from scipy.spatial import cKDTree

from .meshing import LevelSetMesh, boundary_loop, edge_manifold, euler_characteristic, unwrap_about
from .validation import NumericError, wrap_angle

_BARY_TOL = 1e-9


def _unwrapped_corners(mesh, elements):
    """Corner coordinates per element, min-image unwrapped about corner 0."""
    c = mesh.vertices[elements]  # (F, k, n)
    out = c.copy()
    anchor = c[:, :1, :]
    for d, per in enumerate(mesh.periodic):
        if per:
            out[:, :, d] = anchor[:, 0, d, None] + wrap_angle(c[:, :, d] - anchor[:, 0, d, None])
    return out


def half_circle_angle(theta):
    """Wrap angles to the chart's canonical range (−π, π]."""
    return -wrap_angle(-np.asarray(theta, float))


@dataclass
class BaseManifoldChart:
    """Discretized base leaf with per-vertex coordinate values.

    kind is "angle" (curves, r=1, values in (−π, π] with one cut point) or
    "harmonic-disk" (surfaces, r=2, values in the closed unit disk).
    """

    mesh: LevelSetMesh
    values: np.ndarray
    kind: str
    cut_vertex: Optional[int] = None
    _tree: object = field(default=None, repr=False, compare=False)
    _ghost_origin: np.ndarray = field(default=None, repr=False, compare=False)
    _rings: list = field(default=None, repr=False, compare=False)

    @property
    def r(self) -> int:
        return self.values.shape[1]

    # -- spatial index -----------------------------------------------------
    def _ensure_index(self):
        if self._tree is not None:
            return
        V = self.mesh.vertices
        shifts = [np.zeros(V.shape[1])]
        for d, per in enumerate(self.mesh.periodic):
            if per:
                new = []
                for s in shifts:
                    for off in (-2 * np.pi, 0.0, 2 * np.pi):
                        t = s.copy()
                        t[d] += off
                        new.append(t)
                shifts = new
        pts = np.concatenate([V + s for s in shifts])
        self._ghost_origin = np.tile(np.arange(len(V)), len(shifts))
        self._tree = cKDTree(pts)
        rings = [[] for _ in range(len(V))]
        for ei, el in enumerate(self.mesh.elements):
            for v in el:
                rings[v].append(ei)
        self._rings = [np.asarray(sorted(r), int) for r in rings]

    def _barycentric(self, element, point):
        """Barycentric coords of point in the unwrapped element (least squares)."""
        el = self.mesh.elements[element]
        corners = unwrap_about(self.mesh.vertices[el], self.mesh.vertices[el[0]],
                               self.mesh.periodic)
        p = unwrap_about(point, self.mesh.vertices[el[0]], self.mesh.periodic)[0]
        d = corners[1:] - corners[0]
        b, *_ = np.linalg.lstsq(d.T, p - corners[0], rcond=None)
        return np.concatenate([[1.0 - b.sum()], b])

    def _blend(self, element, bary):
        el = self.mesh.elements[element]
        vals = self.values[el]
        if self.kind == "angle":
            ref = vals[0]
            vals = ref + wrap_angle(vals - ref)
            return half_circle_angle(bary @ vals)
        return bary @ vals

    def lookup(self, points) -> np.ndarray:
        """Interpolate chart values at joint-space points near the base leaf.

        Nearest-vertex query, then the first 1-ring element (smallest index)
        containing the point barycentrically; falls back to the least-outside
        element when the point projects slightly off the mesh.
        """
        self._ensure_index()
        P = self.mesh.canonical_points(points)
        _, idx = self._tree.query(P)
        out = np.empty((len(P), self.r))
        for k, (p, gi) in enumerate(zip(P, idx)):
            vid = self._ghost_origin[gi]
            best, best_score = None, -np.inf
            for ei in self._rings[vid]:
                bary = self._barycentric(ei, p)
                if bary.min() >= -_BARY_TOL:
                    best, best_score = (ei, bary), np.inf
                    break
                if bary.min() > best_score:
                    best, best_score = (ei, bary), bary.min()
            ei, bary = best
            if best_score < np.inf:
                # point projects slightly off the mesh: stay in the convex hull
                bary = np.clip(bary, 0.0, None)
                bary /= bary.sum()
            out[k] = self._blend(ei, bary)
        return out if np.asarray(points).ndim > 1 else out[0]


# ---------------------------------------------------------------------------
# curve chart
# ---------------------------------------------------------------------------

def order_loop(mesh) -> np.ndarray:
    """Deterministic vertex ordering of a single closed curve.

    Starts at vertex 0, walks toward its smaller-index neighbor, then fixes
    the orientation so the unwrapped loop has positive signed area.
    """
    V = len(mesh.vertices)
    nbrs = [[] for _ in range(V)]
    for a, b in mesh.edges:
        nbrs[a].append(int(b))
        nbrs[b].append(int(a))
    if any(len(nb) != 2 for nb in nbrs):
        raise ValueError("curve is not a closed loop (vertex degree != 2)")
    order = [0]
    prev, cur = -1, 0
    nxt = min(nbrs[0])
    while nxt != 0:
        order.append(nxt)
        prev, cur = cur, nxt
        a, b = nbrs[cur]
        nxt = b if a == prev else a
    if len(order) != V:
        raise ValueError("level curve has multiple components; expected one loop")
    order = np.asarray(order, int)
    pos = _unwrap_loop(mesh, order)
    x, y = pos[:, 0], pos[:, 1]
    area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    if area < 0:
        order = np.concatenate([order[:1], order[1:][::-1]])
    return order


def _unwrap_loop(mesh, order):
    """Positions along the loop accumulated by min-image steps (no seam jumps)."""
    pts = mesh.vertices[order]
    steps = pts[1:] - pts[:-1]
    for d, per in enumerate(mesh.periodic):
        if per:
            steps[:, d] = wrap_angle(steps[:, d])
    return np.vstack([pts[0], pts[0] + np.cumsum(steps, axis=0)])


def angle_chart(curve: LevelSetMesh) -> BaseManifoldChart:
    """Arc-length angle chart on a closed level curve.

    The start vertex carries θ = π and is the cut point: the chart covers
    (−π, π], decreasing monotonically with arc length, and interpolation
    across the cut wraps.
    """
    if curve.dimension != "curve":
        raise ValueError("angle_chart needs a curve mesh")
    order = order_loop(curve)
    pos = _unwrap_loop(curve, order)
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    closing = np.linalg.norm(
        wrap_angle(curve.vertices[order[0]] - curve.vertices[order[-1]]))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1] + closing
    theta = np.pi - 2 * np.pi * s / total
    values = np.empty((len(order), 1))
    values[order, 0] = theta
    return BaseManifoldChart(mesh=curve, values=values, kind="angle",
                             cut_vertex=int(order[0]))


def cut_elements(chart: BaseManifoldChart) -> np.ndarray:
    """Boolean mask of elements whose raw chart values jump across the cut."""
    vals = chart.values[np.asarray(chart.mesh.elements), 0]
    return np.ptp(vals, axis=1) > np.pi


# ---------------------------------------------------------------------------
# harmonic disk chart
# ---------------------------------------------------------------------------

def harmonic_parametrization(surface_mesh: LevelSetMesh) -> BaseManifoldChart:
    """Discrete harmonic map of a disk-topology mesh onto the unit disk.

    Interior vertices satisfy the cotangent-weight Laplace equation; the
    boundary loop goes to the unit circle with arc-length spacing.  Raises
    when the mesh is not a disk, has degenerate triangles, the solve
    residual exceeds 1e-8, or any parameter triangle flips.
    """
    mesh = surface_mesh
    if mesh.dimension != "surface":
        raise ValueError("harmonic parametrization needs a surface mesh")
    if not edge_manifold(mesh) or euler_characteristic(mesh) != 1:
        raise ValueError("harmonic parametrization needs disk topology (chi = 1)")
    loop = boundary_loop(mesh)
    V = len(mesh.vertices)
    tris = mesh.triangles

    corners = _unwrapped_corners(mesh, tris)
    rows, cols, vals = [], [], []
    for p in range(3):
        a = corners[:, (p + 1) % 3] - corners[:, p]
        b = corners[:, (p + 2) % 3] - corners[:, p]
        cross = np.linalg.norm(np.cross(a, b), axis=-1)
        if np.any(cross < 1e-300):
            raise ValueError("degenerate (zero-area) triangle in surface mesh")
        cot = 0.5 * np.einsum("fd,fd->f", a, b) / cross
        i, j = tris[:, (p + 1) % 3], tris[:, (p + 2) % 3]
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [-cot, -cot, cot, cot]
    L = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(V, V))

    interior = np.ones(V, bool)
    interior[loop] = False
    keep = sparse.diags(interior.astype(float))
    system = (keep @ L + sparse.diags((~interior).astype(float))).tocsc()

    pos = _unwrap_loop(mesh, loop)
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    closing = np.linalg.norm(
        wrap_angle(mesh.vertices[loop[0]] - mesh.vertices[loop[-1]]))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    theta = 2 * np.pi * s / (s[-1] + closing)
    b = np.zeros((V, 2))
    b[loop, 0] = np.cos(theta)
    b[loop, 1] = np.sin(theta)

    u = splu(system).solve(b)
    residual = np.abs(system @ u - b).max()
    if residual > 1e-8:
        raise NumericError(f"harmonic solve residual {residual:.2e} > 1e-8")

    e1 = u[tris[:, 1]] - u[tris[:, 0]]
    e2 = u[tris[:, 2]] - u[tris[:, 0]]
    areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    if np.sum(areas) < 0:  # boundary traversed clockwise: mirror the disk
        u[:, 1] = -u[:, 1]
        areas = -areas
    flipped = int(np.sum(areas <= 0))
    if flipped:
        raise NumericError(f"harmonic parametrization flipped {flipped} triangles")
    norms = np.linalg.norm(u, axis=1)
    if norms.max() > 1 + 1e-9:
        raise NumericError("harmonic chart violates the maximum principle")
    return BaseManifoldChart(mesh=mesh, values=u, kind="harmonic-disk")


# ---------------------------------------------------------------------------
# chart bundle serialization
# ---------------------------------------------------------------------------

def save_chart(chart: BaseManifoldChart, path, meta=None) -> None:
    """Write a chart bundle (.npz): mesh arrays, values, kind, metadata."""
    mesh = chart.mesh
    wraps = mesh.query_wrap
    if wraps is None:
        wraps = tuple(-np.pi if per else None for per in mesh.periodic)
    np.savez_compressed(
        path,
        kind=np.array(chart.kind),
        dimension=np.array(mesh.dimension),
        task_selector=np.array(mesh.task_selector),
        task_value=mesh.task_value,
        periodic=np.array(mesh.periodic),
        query_wrap=np.array([np.nan if w is None else w for w in wraps]),
        vertices=mesh.vertices,
        elements=np.asarray(mesh.elements),
        values=chart.values,
        cut_vertex=np.array(-1 if chart.cut_vertex is None else chart.cut_vertex),
        meta_json=np.array(json.dumps(meta or {}, sort_keys=True)),
    )


def load_chart(path):
    """Read a chart bundle; returns (chart, meta)."""
    with np.load(path) as z:
        dimension = str(z["dimension"])
        mesh = LevelSetMesh(
            dimension=dimension,
            vertices=z["vertices"],
            task_value=z["task_value"],
            task_selector=str(z["task_selector"]),
            periodic=tuple(bool(p) for p in z["periodic"]),
            edges=z["elements"] if dimension == "curve" else None,
            triangles=z["elements"] if dimension == "surface" else None,
            query_wrap=tuple(None if np.isnan(w) else float(w)
                             for w in z["query_wrap"]),
        )
        cut = int(z["cut_vertex"])
        chart = BaseManifoldChart(
            mesh=mesh, values=z["values"], kind=str(z["kind"]),
            cut_vertex=None if cut < 0 else cut)
        meta = json.loads(str(z["meta_json"]))
    return chart, meta

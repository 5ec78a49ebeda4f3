"""Level-set meshes of self-motion manifolds on the joint-space torus.

Curves (2-DoF, scalar task) come from a hand-rolled periodic marching-squares
pass; surfaces (3-DoF, scalar task, half-torus region) from classic
marching cubes.  Vertices are Newton-refined onto the level set.  Meshes
export to binary STL or OBJ text.
"""

import struct
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .chains import forward_kinematics, forward_kinematics_batch, task_jacobian
from .validation import NumericError, as_vector, wrap_angle

_REFINE_TOL = 1e-12
_REFINE_MAX_RES = 1e-3  # invariant: every vertex satisfies |h − x0| below this


@dataclass
class LevelSetMesh:
    """Discretization of one task level set {q : h(q) = x0}.

    Curves live on the 2-torus: vertices wrapped to [−π, π), `periodic` all
    True, seam-crossing edges flagged in wrap_flags and unwrapped (min-image)
    for any metric use.  Surfaces are cut from one fundamental box of the
    configuration space, so they carry no identifications; `query_wrap` holds
    the per-dimension circle origin used to canonicalize off-mesh queries
    into that box (None for the region-cut dimension).
    """

    dimension: str
    vertices: np.ndarray
    task_value: np.ndarray
    task_selector: str
    periodic: Tuple[bool, ...]
    edges: Optional[np.ndarray] = None
    triangles: Optional[np.ndarray] = None
    wrap_flags: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    query_wrap: Optional[Tuple[Optional[float], ...]] = None

    @property
    def elements(self) -> np.ndarray:
        return self.edges if self.dimension == "curve" else self.triangles

    def element_coords(self, element_index: int) -> np.ndarray:
        """Corner coordinates of one element, unwrapped about its first corner."""
        el = self.elements[element_index]
        return unwrap_about(self.vertices[el], self.vertices[el[0]], self.periodic)

    def canonical_points(self, points) -> np.ndarray:
        """Map query points into the mesh's fundamental domain.

        Points already inside the closed domain stay untouched, so queries on
        the far cut face of a box mesh resolve to that face and not its
        2π-shifted twin.
        """
        P = np.atleast_2d(np.asarray(points, float)).copy()
        wraps = self.query_wrap
        if wraps is None:
            wraps = tuple(-np.pi if per else None for per in self.periodic)
        for d, origin in enumerate(wraps):
            if origin is not None:
                x = P[:, d]
                outside = (x < origin) | (x > origin + 2 * np.pi)
                P[outside, d] = origin + np.mod(x[outside] - origin, 2 * np.pi)
        return P


def unwrap_about(points, anchor, periodic):
    """Shift points by multiples of 2π in periodic dims to lie near anchor."""
    pts = np.atleast_2d(np.asarray(points, float)).copy()
    for d, per in enumerate(periodic):
        if per:
            pts[:, d] = anchor[d] + wrap_angle(pts[:, d] - anchor[d])
    return pts


def _wrapped_span_flags(vertices, elements, periodic):
    flags = np.zeros(len(elements), dtype=bool)
    for idx, el in enumerate(elements):
        pts = vertices[el]
        for d, per in enumerate(periodic):
            if per and np.ptp(pts[:, d]) > np.pi:
                flags[idx] = True
                break
    return flags


# ---------------------------------------------------------------------------
# marching squares on the 2-torus
# ---------------------------------------------------------------------------

# segment table indexed by the corner-sign case; edges B=0, R=1, T=2, L=3
_MS_TABLE = {
    1: [(3, 0)], 2: [(0, 1)], 3: [(3, 1)], 4: [(1, 2)],
    6: [(0, 2)], 7: [(3, 2)], 8: [(2, 3)], 9: [(0, 2)],
    11: [(1, 2)], 12: [(3, 1)], 13: [(0, 1)], 14: [(0, 3)],
}


def extract_level_curve(chain, task_map, x0, grid_resolution=256):
    """Trace the closed level curve h(q) = x0 of a scalar task on the 2-torus.

    Raises:
        ValueError: when the level set is below dimension (x0 at or beyond
            the boundary of the reachable interval) or the task is not scalar.
    """
    if task_map.dim(chain) != 1 or chain.n != 2:
        raise ValueError("level curves need a 2-DoF chain with a scalar task")
    x0 = float(np.atleast_1d(x0)[0])
    R = int(grid_resolution)
    g = -np.pi + 2 * np.pi * np.arange(R) / R
    Q = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    F = (forward_kinematics_batch(chain, Q, task_map)[:, 0] - x0).reshape(R, R)
    if x0 >= F.max() + x0 or x0 <= F.min() + x0:
        raise ValueError(f"level set below dimension: x0={x0} at or beyond the reachable range")
    F = np.where(F == 0.0, 1e-30, F)  # nudge exact zeros off the contour

    spacing = 2 * np.pi / R
    vertex_index = {}
    vertices = []

    def crossing(kind, i, j):
        """Vertex on grid edge (kind, i, j); kind 0 runs along axis 0."""
        key = (kind, i % R, j % R)
        if key in vertex_index:
            return vertex_index[key]
        i0, j0 = key[1], key[2]
        f0 = F[i0, j0]
        f1 = F[(i0 + 1) % R, j0] if kind == 0 else F[i0, (j0 + 1) % R]
        t = f0 / (f0 - f1)
        if kind == 0:
            pt = (g[i0] + t * spacing, g[j0])
        else:
            pt = (g[i0], g[j0] + t * spacing)
        vertex_index[key] = len(vertices)
        vertices.append(pt)
        return vertex_index[key]

    edges = []
    pos = F > 0
    for i in range(R):
        for j in range(R):
            c0 = pos[i, j]
            c1 = pos[(i + 1) % R, j]
            c2 = pos[(i + 1) % R, (j + 1) % R]
            c3 = pos[i, (j + 1) % R]
            case = c0 | c1 << 1 | c2 << 2 | c3 << 3
            if case in (0, 15):
                continue
            if case in (5, 10):
                center = 0.25 * (F[i, j] + F[(i + 1) % R, j]
                                 + F[(i + 1) % R, (j + 1) % R] + F[i, (j + 1) % R])
                if case == 5:
                    segs = [(0, 1), (2, 3)] if center > 0 else [(0, 3), (1, 2)]
                else:
                    segs = [(0, 3), (1, 2)] if center > 0 else [(0, 1), (2, 3)]
            else:
                segs = _MS_TABLE[case]
            cell_edges = {
                0: (0, i, j), 1: (1, i + 1, j), 2: (0, i, j + 1), 3: (1, i, j),
            }
            for a, b in segs:
                va = crossing(*cell_edges[a])
                vb = crossing(*cell_edges[b])
                edges.append((va, vb))

    if not edges:
        raise ValueError(f"level set below dimension: no crossings at x0={x0}")
    vertices = wrap_angle(np.asarray(vertices, float))
    vertices[vertices > np.pi - 1e-9] -= 2 * np.pi  # snap the seam to one side
    edges = np.asarray(edges, int)
    # weld coincident vertices from corner-touching crossings
    key = np.round(vertices / 1e-9).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    remap = np.empty(len(order), int)
    remap[order] = np.arange(len(order))
    vertices = vertices[first[order]]
    edges = remap[inverse[edges]]
    edges = np.unique(np.sort(edges[edges[:, 0] != edges[:, 1]], axis=1), axis=0)
    used = np.unique(edges)
    squeeze = np.full(len(vertices), -1, int)
    squeeze[used] = np.arange(len(used))
    vertices = vertices[used]
    edges = squeeze[edges]
    mesh = LevelSetMesh(
        dimension="curve", vertices=vertices, task_value=np.array([x0]),
        task_selector=task_map.selector, periodic=(True, True), edges=edges,
    )
    _newton_refine(mesh, chain, task_map)
    mesh.wrap_flags = _wrapped_span_flags(mesh.vertices, edges, mesh.periodic)
    return mesh


# ---------------------------------------------------------------------------
# marching cubes on the box region q1 >= 0
# ---------------------------------------------------------------------------

def extract_level_surface(chain, task_map, x0, grid_resolution=96, region="q1>=0"):
    """Triangle mesh of the level surface h(q) = x0 restricted to q1 ≥ 0.

    Works on one fundamental box of the configuration space (no torus
    identification): q1 ∈ [0, π], q2/q3 over one full period.  The box cut
    gives the leaf a boundary — disk topology for the stock 3-DoF arm.  The
    q2/q3 sampling is shifted by half a cell so the grid stays off special
    angles where h hits x0 exactly (those degenerate the cube tiling).
    """
    from skimage import measure

    if task_map.dim(chain) != 1 or chain.n != 3:
        raise ValueError("level surfaces need a 3-DoF chain with a scalar task")
    if region != "q1>=0":
        raise ValueError(f"unsupported region {region!r}")
    x0 = float(np.atleast_1d(x0)[0])
    R = int(grid_resolution)
    delta = 2 * np.pi / R
    base = -np.pi + 0.5 * delta
    g1 = np.linspace(0.0, np.pi, R + 1)
    g23 = base + delta * np.arange(R + 1)
    G = np.stack(np.meshgrid(g1, g23, g23, indexing="ij"), axis=-1)
    Q = G.reshape(-1, 3)
    F = (forward_kinematics_batch(chain, Q, task_map)[:, 0] - x0)
    F = F.reshape(R + 1, R + 1, R + 1)
    if not (F.min() < 0.0 < F.max()):
        raise ValueError(f"level set below dimension: x0={x0} at or beyond the reachable range")
    F = np.where(F == 0.0, 1e-30, F)  # on-grid level values degenerate the tiling

    # index space first (the raw output is float32); scale in float64
    verts, faces, _, _ = measure.marching_cubes(
        F, level=0.0, method="lorensen", allow_degenerate=False)
    verts = verts.astype(np.float64)
    verts = verts * np.array([np.pi / R, delta, delta]) + np.array([0.0, base, base])

    # degenerate corner crossings can leave collinear zero-area slivers; drop them
    cross = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]],
                     verts[faces[:, 2]] - verts[faces[:, 0]])
    keep = np.linalg.norm(cross, axis=1) > 1e-12
    faces = faces[keep]
    used = np.unique(faces)
    squeeze = np.full(len(verts), -1, int)
    squeeze[used] = np.arange(len(used))
    vertices = verts[used]
    faces = squeeze[faces]

    mesh = LevelSetMesh(
        dimension="surface", vertices=vertices, task_value=np.array([x0]),
        task_selector=task_map.selector, periodic=(False, False, False),
        triangles=faces, query_wrap=(None, base, base),
    )
    if not edge_manifold(mesh):
        raise NumericError("level-surface extraction produced a non-manifold mesh")
    lo = np.array([0.0, base, base])
    hi = np.array([np.pi, base + 2 * np.pi, base + 2 * np.pi])
    _newton_refine(mesh, chain, task_map, box=(lo, hi))
    mesh.wrap_flags = _wrapped_span_flags(mesh.vertices, faces, mesh.periodic)
    return mesh


def mesh_edges(mesh) -> np.ndarray:
    """Unique undirected edges of a surface mesh, shape (E, 2) sorted."""
    t = mesh.triangles
    e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    return np.unique(np.sort(e, axis=1), axis=0)


def edge_manifold(mesh) -> bool:
    """True when every undirected edge lies on at most two triangles."""
    t = mesh.triangles
    e = np.sort(np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return bool(np.all(counts <= 2))


def euler_characteristic(mesh) -> int:
    if mesh.dimension != "surface":
        raise ValueError("Euler characteristic defined for surface meshes")
    V = len(mesh.vertices)
    E = len(mesh_edges(mesh))
    F = len(mesh.triangles)
    return V - E + F


def boundary_loop(mesh):
    """Ordered vertex loop of the (single) mesh boundary, following face orientation."""
    t = mesh.triangles
    directed = {}
    for tri in t:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            directed[(int(a), int(b))] = directed.get((int(a), int(b)), 0) + 1
    boundary = {a: b for (a, b) in directed if (b, a) not in directed}
    if not boundary:
        raise ValueError("mesh has no boundary")
    start = min(boundary)
    loop = [start]
    nxt = boundary.pop(start)
    while nxt != start:
        loop.append(nxt)
        if nxt not in boundary:
            raise ValueError("boundary is not a single closed loop")
        nxt = boundary.pop(nxt)
    if boundary:
        raise ValueError("boundary is not a single closed loop")
    return np.asarray(loop, int)


# ---------------------------------------------------------------------------
# vertex refinement
# ---------------------------------------------------------------------------

def _newton_refine(mesh, chain, task_map, box=None, max_iter=30):
    """Project vertices onto the level set with least-norm Newton steps.

    Vertices lying exactly on a box face stay within that face so the cut
    keeps its shape.
    """
    x0 = mesh.task_value[0]
    V = mesh.vertices
    for k in range(len(V)):
        q = V[k].copy()
        clamp = []
        if box is not None:
            lo, hi = box
            clamp = [d for d in range(len(q))
                     if abs(q[d] - lo[d]) < 1e-12 or abs(q[d] - hi[d]) < 1e-12]
        for _ in range(max_iter):
            res = forward_kinematics(chain, q, task_map)[0] - x0
            if abs(res) < _REFINE_TOL:
                break
            J = task_jacobian(chain, q, task_map)[0]
            for d in clamp:
                J[d] = 0.0
            nrm2 = float(J @ J)
            if nrm2 < 1e-14:
                break  # singular vertex: leave at grid accuracy
            q -= res / nrm2 * J
        for d, per in enumerate(mesh.periodic):
            if per:
                q[d] = wrap_angle(q[d])
        V[k] = q
    res = np.abs(forward_kinematics_batch(chain, V, task_map)[:, 0] - x0)
    if res.max() > _REFINE_MAX_RES:
        raise NumericError(
            f"level-set refinement left residual {res.max():.2e} > {_REFINE_MAX_RES}")


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def export_mesh(mesh, fmt: str) -> bytes:
    """Serialize a mesh: binary STL (surfaces, 3-D) or OBJ text (bytes).

    STL layout: 80-byte header, uint32 facet count, then per facet a float32
    normal, three float32 vertices, and a zero uint16 attribute (50 bytes),
    all little-endian.
    """
    fmt = fmt.lower()
    if fmt == "stl":
        if mesh.dimension != "surface" or mesh.vertices.shape[1] != 3:
            raise ValueError("STL export needs a surface mesh with 3-D vertices")
        tris = np.stack([mesh.element_coords(i) for i in range(len(mesh.triangles))])
        out = bytearray()
        out += b"selfmotion level-set surface".ljust(80, b" ")[:80]
        out += struct.pack("<I", len(tris))
        for tri in tris:
            nrm = np.cross(tri[1] - tri[0], tri[2] - tri[0])
            norm = np.linalg.norm(nrm)
            nrm = nrm / norm if norm > 0 else nrm
            out += struct.pack("<3f", *np.asarray(nrm, np.float32))
            for v in tri:
                out += struct.pack("<3f", *np.asarray(v, np.float32))
            out += struct.pack("<H", 0)
        return bytes(out)
    if fmt == "obj":
        lines = ["# selfmotion level-set mesh"]
        for v in mesh.vertices:
            coords = list(v) + [0.0] * (3 - len(v))
            lines.append("v " + " ".join(f"{c:.9g}" for c in coords[:3]))
        if mesh.dimension == "surface":
            for f in mesh.triangles:
                lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
        else:
            for e in mesh.edges:
                lines.append(f"l {e[0] + 1} {e[1] + 1}")
        return ("\n".join(lines) + "\n").encode()
    raise ValueError(f"unknown mesh format {fmt!r}")


def triangle_mesh_from_arrays(vertices, triangles) -> LevelSetMesh:
    """Wrap raw arrays as a non-periodic surface mesh (export/testing helper)."""
    vertices = np.atleast_2d(np.asarray(vertices, float))
    return LevelSetMesh(
        dimension="surface", vertices=vertices, task_value=np.zeros(1),
        task_selector="custom", periodic=(False,) * vertices.shape[1],
        triangles=np.asarray(triangles, int),
    )

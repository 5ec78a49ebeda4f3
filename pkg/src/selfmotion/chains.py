"""Serial-chain models: planar n-link arms and DH-parameterised spatial chains.

Forward kinematics, task-coordinate maps, analytic task Jacobians, and chain
description file IO.  Rigid-body dynamics lives in :mod:`selfmotion.dynamics`.

Chain description files are YAML whose first line is the versioned header
``schema: chain/1``::

    schema: chain/1
    name: planar-2r
    kind: planar               # planar | spatial
    gravity: [0.0, 0.0, 0.0]   # m/s^2, world frame
    links:
      - {joint: revolute, length: 1.0, mass: 3.0}
      - {joint: revolute, length: 1.0, mass: 3.0}

Spatial links replace ``length`` by classic DH parameters
``{a, alpha, d, theta0}`` and may add ``rotor_inertia`` (kg m^2, reflected
motor inertia added to the corresponding diagonal mass-matrix entry).
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import yaml

from .validation import ConfigError, as_vector

REVOLUTE = "revolute"
PRISMATIC = "prismatic"

TASK_SELECTORS = ("planar-x", "planar-xy", "polar-rphi", "spatial-xyz", "custom")

CHAIN_SCHEMA = "chain/1"


@dataclass(frozen=True)
class KinematicChain:
    """A serial chain of n links with uniformly distributed link mass.

    Planar chains live in the x-y plane with all joint axes out of plane;
    spatial chains are described by classic DH rows (a, alpha, d, theta0).
    """

    kind: str
    joint_types: Tuple[str, ...]
    masses: np.ndarray
    gravity: np.ndarray
    lengths: Optional[np.ndarray] = None
    dh: Optional[np.ndarray] = None
    rotor_inertia: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("planar", "spatial"):
            raise ValueError(f"unknown chain kind {self.kind!r}")
        jt = tuple(self.joint_types)
        if len(jt) < 1:
            raise ValueError("chain needs at least one joint")
        for t in jt:
            if t not in (REVOLUTE, PRISMATIC):
                raise ValueError(f"unknown joint type {t!r}")
        object.__setattr__(self, "joint_types", jt)
        n = len(jt)
        masses = as_vector(self.masses, n, "masses")
        if np.any(masses < 0):
            raise ValueError("masses must be >= 0")
        grav = as_vector(self.gravity, name="gravity")
        if grav.shape[0] == 2:
            grav = np.array([grav[0], grav[1], 0.0])
        if grav.shape[0] != 3:
            raise ValueError("gravity must be a 2- or 3-vector")
        if self.kind == "planar":
            lengths = as_vector(self.lengths, n, "lengths")
            if np.any(lengths <= 0):
                raise ValueError("link lengths must be > 0")
            object.__setattr__(self, "lengths", _frozen(lengths))
            object.__setattr__(self, "dh", None)
        else:
            dh = np.asarray(self.dh, dtype=float)
            if dh.shape != (n, 4):
                raise ValueError(f"dh must have shape ({n}, 4) rows (a, alpha, d, theta0)")
            object.__setattr__(self, "dh", _frozen(dh))
            object.__setattr__(self, "lengths", None)
        rot = self.rotor_inertia
        rot = np.zeros(n) if rot is None else as_vector(rot, n, "rotor_inertia")
        if np.any(rot < 0):
            raise ValueError("rotor_inertia must be >= 0")
        object.__setattr__(self, "masses", _frozen(masses))
        object.__setattr__(self, "gravity", _frozen(grav))
        object.__setattr__(self, "rotor_inertia", _frozen(rot))

    @property
    def n(self) -> int:
        return len(self.joint_types)

    @property
    def is_revolute(self) -> np.ndarray:
        return np.array([t == REVOLUTE for t in self.joint_types])

    def pose_dim(self) -> int:
        return 2 if self.kind == "planar" else 3


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class JointState:
    """Joint position/velocity pair."""

    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        q = as_vector(self.q, name="q")
        qd = as_vector(self.qd, q.shape[0], "qd")
        object.__setattr__(self, "q", _frozen(q))
        object.__setattr__(self, "qd", _frozen(qd))


@dataclass(frozen=True)
class TaskMap:
    """Selection of end-effector coordinates used as the primary task.

    selector:
        planar-x     end-effector x (m=1, planar chains)
        planar-xy    end-effector (x, y) (m=2, planar chains)
        polar-rphi   polar radius/angle of the planar end-effector (m=2)
        spatial-xyz  end-effector position (m=3, spatial chains)
        custom       explicit row indices into the pose vector
    """

    selector: str
    rows: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.selector not in TASK_SELECTORS:
            raise ValueError(f"unknown task selector {self.selector!r}")
        if self.selector == "custom":
            if not self.rows:
                raise ValueError("custom task map needs row indices")
            object.__setattr__(self, "rows", tuple(int(i) for i in self.rows))
        elif self.rows is not None:
            raise ValueError("rows only valid for the custom selector")

    def dim(self, chain: KinematicChain) -> int:
        m = {"planar-x": 1, "planar-xy": 2, "polar-rphi": 2, "spatial-xyz": 3}.get(self.selector)
        if m is None:
            m = len(self.rows)
        if not 1 <= m <= chain.n:
            raise ValueError(f"task dim {m} incompatible with n={chain.n}")
        return m

    def check(self, chain: KinematicChain):
        planar_only = ("planar-x", "planar-xy", "polar-rphi")
        if self.selector in planar_only and chain.kind != "planar":
            raise ValueError(f"{self.selector} requires a planar chain")
        if self.selector == "spatial-xyz" and chain.kind != "spatial":
            raise ValueError("spatial-xyz requires a spatial chain")
        if self.selector == "custom":
            d = chain.pose_dim()
            if any(not 0 <= i < d for i in self.rows):
                raise ValueError(f"custom rows {self.rows} outside pose dim {d}")
        self.dim(chain)


# ---------------------------------------------------------------------------
# planar kinematics
# ---------------------------------------------------------------------------

def _planar_frame_batch(chain, Q):
    """Per-link absolute angles and effective reach for a (k, n) batch."""
    rev = chain.is_revolute
    theta = np.cumsum(np.where(rev[None, :], Q, 0.0), axis=1)
    reach = chain.lengths[None, :] + np.where(rev[None, :], 0.0, Q)
    return theta, reach


def planar_link_points(chain, q):
    """Joint origins of a planar chain, shape (n+1, 2); origin first."""
    theta, reach = _planar_frame_batch(chain, np.asarray(q, float)[None, :])
    steps = reach[0, :, None] * np.stack([np.cos(theta[0]), np.sin(theta[0])], axis=1)
    return np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)])


def _planar_pose_batch(chain, Q):
    theta, reach = _planar_frame_batch(chain, Q)
    x = np.sum(reach * np.cos(theta), axis=1)
    y = np.sum(reach * np.sin(theta), axis=1)
    return np.stack([x, y], axis=1)


def _planar_pose_jacobian_batch(chain, Q):
    """d(x, y)/dq for a (k, n) batch -> (k, 2, n)."""
    k, n = Q.shape
    theta, reach = _planar_frame_batch(chain, Q)
    rev = chain.is_revolute
    sx = reach * np.sin(theta)
    cx = reach * np.cos(theta)
    # revolute column j: (-sum_{i>=j} l_i sin θ_i, sum_{i>=j} l_i cos θ_i)
    tail_s = np.cumsum(sx[:, ::-1], axis=1)[:, ::-1]
    tail_c = np.cumsum(cx[:, ::-1], axis=1)[:, ::-1]
    J = np.empty((k, 2, n))
    J[:, 0, :] = np.where(rev[None, :], -tail_s, np.cos(theta))
    J[:, 1, :] = np.where(rev[None, :], tail_c, np.sin(theta))
    return J


# ---------------------------------------------------------------------------
# spatial kinematics (classic DH)
# ---------------------------------------------------------------------------

def _dh_transform(a, alpha, d, theta):
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    R = np.array([
        [ct, -st * ca, st * sa],
        [st, ct * ca, -ct * sa],
        [0.0, sa, ca],
    ])
    p = np.array([a * ct, a * st, d])
    return R, p


def spatial_frames(chain, q):
    """World rotation/origin of frames 0..n; frame 0 is the base.

    Returns:
        Rs: (n+1, 3, 3) rotations, ps: (n+1, 3) origins.
    """
    q = as_vector(q, chain.n, "q")
    n = chain.n
    Rs = np.empty((n + 1, 3, 3))
    ps = np.empty((n + 1, 3))
    Rs[0] = np.eye(3)
    ps[0] = 0.0
    R, p = np.eye(3), np.zeros(3)
    for i in range(n):
        a, alpha, d, theta0 = chain.dh[i]
        if chain.joint_types[i] == REVOLUTE:
            Ri, pi = _dh_transform(a, alpha, d, theta0 + q[i])
        else:
            Ri, pi = _dh_transform(a, alpha, d + q[i], theta0)
        p = p + R @ pi
        R = R @ Ri
        Rs[i + 1] = R
        ps[i + 1] = p
    return Rs, ps


def _spatial_pose_jacobian(chain, q):
    """Geometric position Jacobian of the end effector, (3, n)."""
    Rs, ps = spatial_frames(chain, q)
    pe = ps[-1]
    J = np.empty((3, chain.n))
    for i in range(chain.n):
        z = Rs[i][:, 2]
        if chain.joint_types[i] == REVOLUTE:
            J[:, i] = np.cross(z, pe - ps[i])
        else:
            J[:, i] = z
    return J


# ---------------------------------------------------------------------------
# task maps
# ---------------------------------------------------------------------------

def pose_batch(chain, Q):
    """End-effector pose for a (k, n) batch: (k, 2) planar or (k, 3) spatial."""
    Q = np.asarray(Q, dtype=float)
    if chain.kind == "planar":
        return _planar_pose_batch(chain, Q)
    out = np.empty((Q.shape[0], 3))
    for i, q in enumerate(Q):
        out[i] = spatial_frames(chain, q)[1][-1]
    return out


def forward_kinematics_batch(chain, Q, task_map):
    """Task values h(q) for a (k, n) batch -> (k, m)."""
    task_map.check(chain)
    from .validation import as_batch

    Q = as_batch(Q, chain.n, "Q")
    pose = pose_batch(chain, Q)
    sel = task_map.selector
    if sel == "planar-x":
        return pose[:, :1]
    if sel == "planar-xy":
        return pose
    if sel == "spatial-xyz":
        return pose
    if sel == "polar-rphi":
        r = np.hypot(pose[:, 0], pose[:, 1])
        phi = np.arctan2(pose[:, 1], pose[:, 0])
        return np.stack([r, phi], axis=1)
    return pose[:, list(task_map.rows)]


def forward_kinematics(chain, q, task_map):
    """Task point x = h(q), shape (m,)."""
    q = as_vector(q, chain.n, "q")
    return forward_kinematics_batch(chain, q[None, :], task_map)[0]


def task_jacobian_batch(chain, Q, task_map):
    """Task Jacobians J_x = dh/dq for a (k, n) batch -> (k, m, n)."""
    task_map.check(chain)
    from .validation import as_batch

    Q = as_batch(Q, chain.n, "Q")
    sel = task_map.selector
    if chain.kind == "planar":
        Jp = _planar_pose_jacobian_batch(chain, Q)
    else:
        Jp = np.stack([_spatial_pose_jacobian(chain, q) for q in Q])
    if sel == "planar-x":
        return Jp[:, :1, :]
    if sel in ("planar-xy", "spatial-xyz"):
        return Jp
    if sel == "polar-rphi":
        pose = _planar_pose_batch(chain, Q)
        x, y = pose[:, 0], pose[:, 1]
        r2 = x * x + y * y
        if np.any(r2 < 1e-300):
            raise ZeroDivisionError("polar task map undefined at the origin")
        r = np.sqrt(r2)
        T = np.empty((Q.shape[0], 2, 2))
        T[:, 0, 0] = x / r
        T[:, 0, 1] = y / r
        T[:, 1, 0] = -y / r2
        T[:, 1, 1] = x / r2
        return T @ Jp
    return Jp[:, list(task_map.rows), :]


def task_jacobian(chain, q, task_map):
    """Task Jacobian J_x(q), shape (m, n)."""
    q = as_vector(q, chain.n, "q")
    return task_jacobian_batch(chain, q[None, :], task_map)[0]


def singularity_margin(chain, q, task_map):
    """det(J_x J_xᵀ) >= 0; zero at task singularities."""
    J = task_jacobian(chain, q, task_map)
    return float(np.linalg.det(J @ J.T))


def singularity_margin_batch(chain, Q, task_map):
    J = task_jacobian_batch(chain, Q, task_map)
    return np.linalg.det(J @ np.transpose(J, (0, 2, 1)))


# ---------------------------------------------------------------------------
# chain description files
# ---------------------------------------------------------------------------

def chain_to_dict(chain: KinematicChain) -> dict:
    links = []
    for i in range(chain.n):
        row = {"joint": chain.joint_types[i], "mass": float(chain.masses[i])}
        if chain.kind == "planar":
            row["length"] = float(chain.lengths[i])
        else:
            a, alpha, d, theta0 = (float(v) for v in chain.dh[i])
            row.update(a=a, alpha=alpha, d=d, theta0=theta0)
        if chain.rotor_inertia[i] != 0.0:
            row["rotor_inertia"] = float(chain.rotor_inertia[i])
        links.append(row)
    return {
        "schema": CHAIN_SCHEMA,
        "name": chain.name,
        "kind": chain.kind,
        "gravity": [float(g) for g in chain.gravity],
        "links": links,
    }


def chain_from_dict(data: dict) -> KinematicChain:
    if not isinstance(data, dict):
        raise ConfigError("chain description must be a mapping")
    if data.get("schema") != CHAIN_SCHEMA:
        raise ConfigError(f"expected header 'schema: {CHAIN_SCHEMA}', got {data.get('schema')!r}")
    kind = data.get("kind")
    links = data.get("links")
    if kind not in ("planar", "spatial"):
        raise ConfigError(f"chain kind must be planar|spatial, got {kind!r}")
    if not isinstance(links, list) or not links:
        raise ConfigError("chain needs a non-empty 'links' table")
    joint_types, masses, rotor = [], [], []
    lengths, dh = [], []
    for idx, row in enumerate(links):
        if not isinstance(row, dict):
            raise ConfigError(f"links[{idx}] must be a mapping")
        joint_types.append(row.get("joint", REVOLUTE))
        masses.append(row.get("mass", 0.0))
        rotor.append(row.get("rotor_inertia", 0.0))
        if kind == "planar":
            if "length" not in row:
                raise ConfigError(f"links[{idx}] of a planar chain needs 'length'")
            lengths.append(row["length"])
        else:
            try:
                dh.append([row.get("a", 0.0), row.get("alpha", 0.0),
                           row.get("d", 0.0), row.get("theta0", 0.0)])
            except TypeError as exc:
                raise ConfigError(f"links[{idx}]: bad DH row ({exc})") from None
    try:
        return KinematicChain(
            kind=kind,
            joint_types=tuple(joint_types),
            masses=np.asarray(masses, float),
            gravity=np.asarray(data.get("gravity", (0.0, 0.0, 0.0)), float),
            lengths=np.asarray(lengths, float) if kind == "planar" else None,
            dh=np.asarray(dh, float) if kind == "spatial" else None,
            rotor_inertia=np.asarray(rotor, float),
            name=str(data.get("name", "")),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid chain description: {exc}") from None


def load_chain(path) -> KinematicChain:
    """Load a chain description file (YAML, header line ``schema: chain/1``)."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    first = text.lstrip().splitlines()[0].strip() if text.strip() else ""
    if first.replace(" ", "") != "schema:" + CHAIN_SCHEMA:
        raise ConfigError(f"{path}:1: first line must be 'schema: {CHAIN_SCHEMA}'")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return chain_from_dict(data)


def dump_chain(chain: KinematicChain, path):
    data = chain_to_dict(chain)
    # keep the schema key as the literal first line of the file
    body = yaml.safe_dump({k: v for k, v in data.items() if k != "schema"}, sort_keys=False)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"schema: {CHAIN_SCHEMA}\n" + body)


# ---------------------------------------------------------------------------
# stock chains
# ---------------------------------------------------------------------------

def planar_chain(n, lengths=1.0, masses=3.0, gravity=(0.0, 0.0, 0.0), name=None):
    """Planar all-revolute chain with uniform rods (defaults: 1 m, 3 kg links)."""
    return KinematicChain(
        kind="planar",
        joint_types=(REVOLUTE,) * n,
        masses=np.full(n, masses, dtype=float) if np.ndim(masses) == 0 else masses,
        gravity=gravity,
        lengths=np.full(n, lengths, dtype=float) if np.ndim(lengths) == 0 else lengths,
        name=name or f"planar-{n}r",
    )


def anthro7(masses=3.0, rotor_inertia=1e-3, gravity=(0.0, 0.0, 0.0)):
    """Generic anthropomorphic 7-R chain (alternating twists, wrist offsets)."""
    dh = np.array([
        # a, alpha, d, theta0
        [0.0, -np.pi / 2, 0.340, 0.0],
        [0.0, np.pi / 2, 0.0, 0.0],
        [0.0, np.pi / 2, 0.400, 0.0],
        [0.0, -np.pi / 2, 0.0, 0.0],
        [0.0, -np.pi / 2, 0.400, 0.0],
        [0.0, np.pi / 2, 0.0, 0.0],
        [0.0, 0.0, 0.126, 0.0],
    ])
    return KinematicChain(
        kind="spatial",
        joint_types=(REVOLUTE,) * 7,
        masses=np.full(7, masses, dtype=float) if np.ndim(masses) == 0 else masses,
        gravity=gravity,
        dh=dh,
        rotor_inertia=np.full(7, rotor_inertia, dtype=float),
        name="anthro-7r",
    )

"""Rigid-body dynamics for serial chains with uniformly distributed link mass.

Links are thin uniform rods spanning consecutive joint origins (closed-form
rod inertia); per-joint reflected rotor inertia is added on the mass-matrix
diagonal.  Planar all-revolute chains use closed-form expressions (also in
batched form); spatial chains compose link-COM Jacobians, with mass-matrix
partials by central differences.

Equation of motion convention: M(q) q̈ + C(q, q̇) q̇ + g(q) = τ.
"""

import numpy as np

from .chains import REVOLUTE, spatial_frames
from .validation import as_batch, as_vector

_FD_STEP = 1e-5


def _require_revolute_planar(chain):
    if any(t != REVOLUTE for t in chain.joint_types):
        raise NotImplementedError("planar dynamics are implemented for revolute chains")


def _planar_static(chain):
    """Static tensors of the closed-form planar dynamics.

    Returns:
        T: (n,n,n,n) with T[a,b,p,q] = sum_i m_i w[i,a,p] w[i,b,q], where
           w[i,a,p] is the coefficient of e'(θ_p) in ∂c_i/∂q_a,
        Wm: (n,n) mass-weighted sum of w over links (gravity term),
        Mrot: (n,n) configuration-independent rod-rotation part.
    """
    n = chain.n
    l = chain.lengths
    m = chain.masses
    i_idx = np.arange(n)[:, None, None]
    a_idx = np.arange(n)[None, :, None]
    p_idx = np.arange(n)[None, None, :]
    w = np.where((a_idx <= p_idx) & (p_idx < i_idx), l[None, None, :], 0.0)
    w = w + np.where((p_idx == i_idx) & (a_idx <= i_idx), (l / 2.0)[:, None, None], 0.0)
    T = np.einsum("i,iap,ibq->abpq", m, w, w)
    Wm = np.einsum("i,iap->ap", m, w)
    inertia = m * l**2 / 12.0
    idx = np.arange(n)
    le = (idx[:, None] <= idx[None, :]).astype(float)  # le[a, i] = [a <= i]
    Mrot = np.einsum("i,ai,bi->ab", inertia, le, le)
    return T, Wm, Mrot


def _theta(chain, Q):
    return np.cumsum(Q, axis=-1)


def mass_matrix_batch(chain, Q):
    """Mass matrices for a (k, n) batch of configurations -> (k, n, n)."""
    if chain.kind != "planar":
        Q = as_batch(Q, chain.n, "Q")
        return np.stack([mass_matrix(chain, q) for q in Q])
    _require_revolute_planar(chain)
    Q = as_batch(Q, chain.n, "Q")
    T, _, Mrot = _planar_static(chain)
    th = _theta(chain, Q)
    D = th[:, :, None] - th[:, None, :]
    M = np.einsum("abpq,kpq->kab", T, np.cos(D))
    M += Mrot[None] + np.diag(chain.rotor_inertia)[None]
    return M


def mass_matrix(chain, q):
    """Joint-space mass matrix M(q), symmetric positive definite."""
    q = as_vector(q, chain.n, "q")
    if chain.kind == "planar":
        return mass_matrix_batch(chain, q[None, :])[0]
    return _spatial_mass(chain, q)


def mass_matrix_partials(chain, q):
    """dM/dq as a (n, n, n) tensor, last index the differentiation direction."""
    q = as_vector(q, chain.n, "q")
    n = chain.n
    if chain.kind == "planar":
        _require_revolute_planar(chain)
        T, _, _ = _planar_static(chain)
        th = _theta(chain, q[None, :])[0]
        D = th[:, None] - th[None, :]
        idx = np.arange(n)
        S = (idx[None, None, :] <= idx[:, None, None]).astype(float) \
            - (idx[None, None, :] <= idx[None, :, None]).astype(float)  # [r<=p]-[r<=q]
        return np.einsum("abpq,pq,pqr->abr", T, -np.sin(D), S)
    dM = np.empty((n, n, n))
    for r in range(n):
        dq = np.zeros(n)
        dq[r] = _FD_STEP
        dM[:, :, r] = (_spatial_mass(chain, q + dq) - _spatial_mass(chain, q - dq)) / (2 * _FD_STEP)
    return dM


def coriolis_matrix(chain, q, qd):
    """Christoffel Coriolis matrix C(q, q̇); Ṁ − 2C is skew-symmetric."""
    qd = as_vector(qd, chain.n, "qd")
    dM = mass_matrix_partials(chain, q)
    # C_ij = 1/2 (dM_ij/dq_k + dM_ik/dq_j − dM_jk/dq_i) q̇_k
    return 0.5 * (np.einsum("ijk,k->ij", dM, qd)
                  + np.einsum("ikj,k->ij", dM, qd)
                  - np.einsum("jki,k->ij", dM, qd))


def gravity_vector(chain, q):
    """Joint torques of gravity, g(q) = ∂V/∂q."""
    q = as_vector(q, chain.n, "q")
    if chain.kind == "planar":
        _require_revolute_planar(chain)
        _, Wm, _ = _planar_static(chain)
        th = _theta(chain, q[None, :])[0]
        g2 = chain.gravity[:2]
        ge = -g2[0] * np.sin(th) + g2[1] * np.cos(th)
        return -Wm @ ge
    _, _, Jvs, _ = _spatial_body_jacobians(chain, q)
    g = np.zeros(chain.n)
    for i in range(chain.n):
        g -= chain.masses[i] * (Jvs[i].T @ chain.gravity)
    return g


def potential_energy(chain, q):
    """Gravitational potential V(q) (zero at the world origin)."""
    q = as_vector(q, chain.n, "q")
    if chain.kind == "planar":
        _require_revolute_planar(chain)
        th = _theta(chain, q[None, :])[0]
        e = np.stack([np.cos(th), np.sin(th)], axis=1)
        joints = np.vstack([np.zeros((1, 2)), np.cumsum(chain.lengths[:, None] * e, axis=0)])
        coms = joints[:-1] + 0.5 * chain.lengths[:, None] * e
        return float(-np.sum(chain.masses[:, None] * coms * chain.gravity[None, :2]))
    coms, _, _, _ = _spatial_body_jacobians(chain, q)
    return float(-sum(chain.masses[i] * (coms[i] @ chain.gravity) for i in range(chain.n)))


def kinetic_energy(chain, q, qd):
    qd = as_vector(qd, chain.n, "qd")
    return float(0.5 * qd @ mass_matrix(chain, q) @ qd)


def total_energy(chain, q, qd):
    return kinetic_energy(chain, q, qd) + potential_energy(chain, q)


# ---------------------------------------------------------------------------
# spatial chains
# ---------------------------------------------------------------------------

def _spatial_body_jacobians(chain, q):
    """Per-link COM positions and COM/angular Jacobians.

    Returns:
        coms: list of (3,) COM positions (rod midpoints),
        rods: list of (L, t̂) rod length/direction pairs (t̂ None when L=0),
        Jvs:  list of (3, n) COM position Jacobians,
        Jws:  list of (3, n) angular Jacobians.
    """
    n = chain.n
    Rs, ps = spatial_frames(chain, q)
    coms, rods, Jvs, Jws = [], [], [], []
    for i in range(n):
        seg = ps[i + 1] - ps[i]
        L = float(np.linalg.norm(seg))
        t = seg / L if L > 1e-12 else None
        c = 0.5 * (ps[i] + ps[i + 1])
        Jv = np.zeros((3, n))
        Jw = np.zeros((3, n))
        for j in range(i + 1):
            z = Rs[j][:, 2]
            if chain.joint_types[j] == REVOLUTE:
                Jv[:, j] = np.cross(z, c - ps[j])
                Jw[:, j] = z
            else:
                Jv[:, j] = z
        coms.append(c)
        rods.append((L, t))
        Jvs.append(Jv)
        Jws.append(Jw)
    return coms, rods, Jvs, Jws


def _spatial_mass(chain, q):
    n = chain.n
    _, rods, Jvs, Jws = _spatial_body_jacobians(chain, q)
    M = np.zeros((n, n))
    for i in range(n):
        m = chain.masses[i]
        M += m * Jvs[i].T @ Jvs[i]
        L, t = rods[i]
        if t is not None:
            Ic = (m * L * L / 12.0) * (np.eye(3) - np.outer(t, t))
            M += Jws[i].T @ Ic @ Jws[i]
    M += np.diag(chain.rotor_inertia)
    return 0.5 * (M + M.T)

"""Impedance, PD+ feed-forward, and projection-baseline control laws.

Forces live in stacked coordinates φ = (x, ξ); torques are the covectors
Jᵀf.  Damping matrices follow the design rule
D = M^{1/2} Z K^{1/2} + K^{1/2} Z M^{1/2} with diagonal ratio matrix Z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics
from .chains import forward_kinematics, task_jacobian
from .geometry import (
    PlaneStack,
    null_space_projector,
    plane_stack_eval,
    plane_stack_jacobian,
)
from .network import MlpParams, forward as network_value, input_jacobian
from .validation import ConfigError, as_matrix, as_vector

_EIG_FLOOR = 1e-12


def _diag_gain(K, name):
    K = np.asarray(K, float)
    if K.ndim == 1:
        K = np.diag(K)
    K = as_matrix(K, name=name)
    if K.shape[0] != K.shape[1] or np.any(K != np.diag(np.diagonal(K))):
        raise ConfigError(f"{name} must be a square diagonal matrix")
    if not np.all(np.diagonal(K) > 0):
        raise ConfigError(f"{name} needs positive stiffness entries")
    K = K.copy()
    K.flags.writeable = False
    return K


def _ratio_vector(z, p, name):
    z = as_vector(z, p, name)
    if not np.all(z > 0):
        raise ConfigError(f"{name} damping ratios must be positive")
    z = z.copy()
    z.flags.writeable = False
    return z


@dataclass(frozen=True)
class ImpedanceGains:
    """Diagonal stacked-coordinate stiffness K_φ with per-axis damping ratios ζ."""

    K_phi: np.ndarray
    zeta: np.ndarray

    def __post_init__(self):
        K = _diag_gain(self.K_phi, "K_phi")
        object.__setattr__(self, "K_phi", K)
        object.__setattr__(self, "zeta",
                           _ratio_vector(self.zeta, K.shape[0], "zeta"))

    @staticmethod
    def uniform(p, stiffness=100.0, zeta=0.7) -> "ImpedanceGains":
        return ImpedanceGains(np.full(p, float(stiffness)),
                              np.full(p, float(zeta)))

    @property
    def Z(self) -> np.ndarray:
        return np.diag(self.zeta)


@dataclass(frozen=True)
class ProjectionGains:
    """Primary task spring K_x and secondary joint spring K_q with ratios."""

    K_x: np.ndarray
    K_q: np.ndarray
    zeta_x: float = 0.7
    zeta_q: float = 0.7

    def __post_init__(self):
        object.__setattr__(self, "K_x", _diag_gain(self.K_x, "K_x"))
        object.__setattr__(self, "K_q", _diag_gain(self.K_q, "K_q"))
        if not (self.zeta_x > 0 and self.zeta_q > 0):
            raise ConfigError("damping ratios must be positive")

    @staticmethod
    def uniform(m, n, stiffness_x=100.0, stiffness_q=25.0,
                zeta=0.7) -> "ProjectionGains":
        return ProjectionGains(np.full(m, float(stiffness_x)),
                               np.full(n, float(stiffness_q)),
                               float(zeta), float(zeta))


@dataclass(frozen=True)
class TrajectorySpec:
    """Step schedule for the stacked reference plus its low-pass shaping."""

    times: np.ndarray
    targets: np.ndarray
    omega0: float = 2.0 * np.pi
    zeta: float = 0.7

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, float))
        Y = np.atleast_2d(np.asarray(self.targets, float))
        if t.ndim != 1 or t.size == 0:
            raise ConfigError("times must be a nonempty 1-D sequence")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("times must be strictly increasing")
        if Y.shape[0] != t.size:
            raise ConfigError(
                f"need one target row per time, got {Y.shape[0]} rows "
                f"for {t.size} times")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(Y))):
            raise ConfigError("trajectory entries must be finite")
        if not (np.isfinite(self.omega0) and self.omega0 > 0):
            raise ConfigError("omega0 must be positive")
        if not (np.isfinite(self.zeta) and self.zeta > 0):
            raise ConfigError("zeta must be positive")
        t = t.copy()
        Y = Y.copy()
        t.flags.writeable = False
        Y.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "targets", Y)

    @property
    def p(self) -> int:
        return self.targets.shape[1]


def prefilter(spec: TrajectorySpec, dt, duration=None):
    """Sample the twice-differentiable reference → (t, φ_d, φ̇_d, φ̈_d).

    Integrates ÿ = ω₀²(u − y) − 2ζω₀ẏ with RK4 against the piecewise-constant
    step input u.  The filter starts settled at the first target; switches
    take effect at their scheduled instant.
    """
    if not isinstance(spec, TrajectorySpec):
        raise ConfigError("prefilter needs a TrajectorySpec")
    if not dt > 0:
        raise ConfigError("dt must be positive")
    if duration is None:
        duration = spec.times[-1] + 5.0 / (spec.zeta * spec.omega0)
    steps = int(round(duration / dt))
    if steps < 1:
        raise ConfigError("duration shorter than one timestep")
    p = spec.p
    w2 = spec.omega0 ** 2
    tz = 2.0 * spec.zeta * spec.omega0
    times, targets = spec.times, spec.targets

    def u(tq):
        # right-continuous lookup; before the first entry hold its value
        i = np.searchsorted(times, tq * (1.0 + 1e-12) + 1e-15, side="right") - 1
        return targets[max(i, 0)]

    t = np.arange(steps + 1) * dt
    Y = np.empty((steps + 1, p))
    Yd = np.empty_like(Y)
    Ydd = np.empty_like(Y)
    s = np.concatenate([targets[0], np.zeros(p)])
    for k in range(steps + 1):
        # the input is held constant over each step, so a switch becomes
        # effective at the first grid point at or after its scheduled time
        uk = u(t[k])
        Y[k], Yd[k] = s[:p], s[p:]
        Ydd[k] = w2 * (uk - s[:p]) - tz * s[p:]
        if k == steps:
            break
        rhs = lambda v: np.concatenate([v[p:], w2 * (uk - v[:p]) - tz * v[p:]])
        k1 = rhs(s)
        k2 = rhs(s + 0.5 * dt * k1)
        k3 = rhs(s + 0.5 * dt * k2)
        k4 = rhs(s + dt * k3)
        s = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return t, Y, Yd, Ydd


def sampled_reference(t, Y, Yd, Ydd):
    """Wrap prefilter output as a lookup t → (φ_d, φ̇_d, φ̈_d).

    Linear interpolation between samples; clamped outside the sampled window.
    """
    t = np.asarray(t, float)
    blocks = tuple(np.atleast_2d(np.asarray(b, float)) for b in (Y, Yd, Ydd))

    def ref(tq):
        if tq <= t[0]:
            return tuple(b[0] for b in blocks)
        if tq >= t[-1]:
            return tuple(b[-1] for b in blocks)
        i = np.searchsorted(t, tq)
        w = (tq - t[i - 1]) / (t[i] - t[i - 1])
        return tuple((1.0 - w) * b[i - 1] + w * b[i] for b in blocks)

    return ref


def task_space_mass(J, M) -> np.ndarray:
    """Transformed mass M_φ = (J M⁻¹ Jᵀ)⁻¹ for full-row-rank J."""
    J = as_matrix(J, name="J")
    M = np.asarray(M, float)
    W = J @ np.linalg.solve(M, J.T)
    Mphi = np.linalg.inv(W)
    return 0.5 * (Mphi + Mphi.T)


def spd_sqrt(A) -> np.ndarray:
    """Symmetric square root by eigendecomposition, eigenvalues floored."""
    A = np.asarray(A, float)
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    return (V * np.sqrt(np.maximum(w, _EIG_FLOOR))) @ V.T


def damping_design(M_phi, K_phi, zeta) -> np.ndarray:
    """D_φ = M_φ^{1/2} Z K_φ^{1/2} + K_φ^{1/2} Z M_φ^{1/2}, Z = diag(ζ)."""
    Ms = spd_sqrt(M_phi)
    Ks = spd_sqrt(K_phi)
    Z = np.diag(as_vector(zeta, Ms.shape[0], "zeta"))
    D = Ms @ Z @ Ks + Ks @ Z @ Ms
    return 0.5 * (D + D.T)


def impedance_force(phi, phi_d, J, qd, K_phi, D_phi) -> np.ndarray:
    """f = −K_φ(φ − φ_d) − D_φ J q̇."""
    e = np.asarray(phi, float) - np.asarray(phi_d, float)
    return -(np.asarray(K_phi, float) @ e) \
        - np.asarray(D_phi, float) @ (np.asarray(J, float) @ np.asarray(qd, float))


def jacobian_dot(jac_fn, q, qd, step=1e-5) -> np.ndarray:
    """J̇ = Σᵢ (∂J/∂qᵢ) q̇ᵢ with central differences of the Jacobian map."""
    q = np.asarray(q, float)
    qd = np.asarray(qd, float)
    Jdot = np.zeros_like(np.asarray(jac_fn(q), float))
    for i in range(q.size):
        if qd[i] == 0.0:
            continue
        e = np.zeros_like(q)
        e[i] = step
        dJ = (np.asarray(jac_fn(q + e), float)
              - np.asarray(jac_fn(q - e), float)) / (2.0 * step)
        Jdot += dJ * qd[i]
    return Jdot


def feed_forward_force(point, J, Jdot, M, C, M_phi, D_phi) -> np.ndarray:
    """f_FF = M_φ[φ̈_d + (J M⁻¹ C − J̇) J⁻¹ φ̇_d] + D_φ φ̇_d.

    point: reference triple (φ_d, φ̇_d, φ̈_d); J must be the square stacked
    Jacobian so the reference joint rate J⁻¹φ̇_d is well defined.
    """
    _, phid_d, phidd_d = (np.asarray(v, float) for v in point)
    J = np.asarray(J, float)
    qd_ref = np.linalg.solve(J, phid_d)
    corr = J @ np.linalg.solve(np.asarray(M, float),
                               np.asarray(C, float) @ qd_ref)
    corr -= np.asarray(Jdot, float) @ qd_ref
    return np.asarray(M_phi, float) @ (phidd_d + corr) \
        + np.asarray(D_phi, float) @ phid_d


def pd_plus_torque(chain, q, J, f) -> np.ndarray:
    """τ = Jᵀ f + g(q): stacked force as joint torque with gravity makeup."""
    return np.asarray(J, float).T @ np.asarray(f, float) \
        + dynamics.gravity_vector(chain, q)


def projection_baseline_torque(chain, task_map, q, qd, x_d, q_d, gains,
                               metric=None) -> np.ndarray:
    """Classical resolution: task impedance plus inertia-projected joint spring.

    τ = J_xᵀ(−K_x e_x − D_x J_x q̇) + P_xᵀ(−K_q e_q − D_q q̇) + g(q) with
    P_x = I − J_x^{#M} J_x, so secondary forces never reach the task dynamics.
    The projector weight defaults to the mass matrix (dynamically consistent);
    pass a metric to override.
    """
    q = as_vector(q, chain.n, "q")
    qd = as_vector(qd, chain.n, "qd")
    M = dynamics.mass_matrix(chain, q) if metric is None \
        else metric.matrix(q, chain.n)
    J = task_jacobian(chain, q, task_map)
    e_x = forward_kinematics(chain, q, task_map) - np.asarray(x_d, float)
    e_q = q - as_vector(q_d, chain.n, "q_d")
    m = J.shape[0]
    D_x = damping_design(task_space_mass(J, M), gains.K_x,
                         np.full(m, gains.zeta_x))
    D_q = damping_design(M, gains.K_q, np.full(chain.n, gains.zeta_q))
    P = null_space_projector(J, M)
    f_task = -gains.K_x @ e_x - D_x @ (J @ qd)
    tau_sec = -gains.K_q @ e_q - D_q @ qd
    return J.T @ f_task + P.T @ tau_sec + dynamics.gravity_vector(chain, q)


def spring_potentials(e_x, e_q, K_x, K_q):
    """Virtual-spring energies (½e_xᵀK_x e_x, ½e_qᵀK_q e_q)."""
    e_x = np.asarray(e_x, float)
    e_q = np.asarray(e_q, float)
    U_x = 0.5 * float(e_x @ (np.asarray(K_x, float) @ e_x))
    U_q = 0.5 * float(e_q @ (np.asarray(K_q, float) @ e_q))
    return U_x, U_q


def stacked_maps(chain, task_map, coords):
    """Build (φ, J) callables stacking the task over self-motion coordinates.

    coords may be a PlaneStack, a network parameter bundle, or a pair of
    callables (value, jacobian) for anything else.
    """
    if isinstance(coords, PlaneStack):
        value = lambda q: plane_stack_eval(coords, q)
        jac = lambda q: plane_stack_jacobian(coords)
    elif isinstance(coords, MlpParams):
        value = lambda q: network_value(coords, q)
        jac = lambda q: input_jacobian(coords, q)
    elif (isinstance(coords, (tuple, list)) and len(coords) == 2
          and all(callable(c) for c in coords)):
        value, jac = coords
    else:
        raise ConfigError(
            "coords must be a PlaneStack, a parameter bundle, or a "
            "(value, jacobian) callable pair")

    def phi_fn(q):
        q = as_vector(q, chain.n, "q")
        return np.concatenate([forward_kinematics(chain, q, task_map),
                               np.atleast_1d(np.asarray(value(q), float))])

    def jac_fn(q):
        q = as_vector(q, chain.n, "q")
        return np.vstack([task_jacobian(chain, q, task_map),
                          np.atleast_2d(np.asarray(jac(q), float))])

    return phi_fn, jac_fn


def pd_plus_controller(chain, task_map, coords, gains: ImpedanceGains,
                       reference, *, feed_forward=True, jdot_step=1e-5):
    """Closed-loop torque law controller(t, q, q̇) → (τ, extras).

    reference: t → (φ_d, φ̇_d, φ̈_d), e.g. from sampled_reference.  extras
    carries the per-step diagnostics the simulator logs (φ, φ_d, f, spring
    energies split at the task/self-motion boundary).
    """
    phi_fn, jac_fn = stacked_maps(chain, task_map, coords)
    m = task_map.dim(chain)
    K, zeta = gains.K_phi, gains.zeta

    def controller(t, q, qd):
        q = np.asarray(q, float)
        qd = np.asarray(qd, float)
        J = jac_fn(q)
        phi = phi_fn(q)
        phi_d, phid_d, phidd_d = reference(t)
        M = dynamics.mass_matrix(chain, q)
        Mphi = task_space_mass(J, M)
        D = damping_design(Mphi, K, zeta)
        f = impedance_force(phi, phi_d, J, qd, K, D)
        if feed_forward:
            C = dynamics.coriolis_matrix(chain, q, qd)
            Jdot = jacobian_dot(jac_fn, q, qd, jdot_step)
            f = f + feed_forward_force((phi_d, phid_d, phidd_d), J, Jdot,
                                       M, C, Mphi, D)
        tau = J.T @ f + dynamics.gravity_vector(chain, q)
        e = phi - np.asarray(phi_d, float)
        U_x, U_xi = spring_potentials(e[:m], e[m:], K[:m, :m], K[m:, m:])
        extras = {"phi": phi, "phi_d": np.asarray(phi_d, float), "f": f,
                  "U_x": U_x, "U_xi": U_xi}
        return tau, extras

    return controller

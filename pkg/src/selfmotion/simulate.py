"""Fixed-step rigid-body simulation, energy bookkeeping, and closed-loop
acceleration diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import dynamics
from .control import jacobian_dot, task_space_mass
from .validation import ConfigError, NumericError, SingularityError, as_vector

_SPEED_LIMIT = 1e3   # rad/s; beyond this the run is declared divergent
_DET_FLOOR = 1e-10


@dataclass(frozen=True)
class SimulationLog:
    """Uniformly sampled closed-loop time series.

    tau is None for kinematic (velocity-level) runs; extras holds named
    per-step channels such as phi, phi_d, spring energies, or total energy.
    """

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    tau: Optional[np.ndarray]
    extras: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.t, float)
        if t.ndim != 1 or t.size < 2:
            raise ConfigError("log needs a 1-D time grid with ≥ 2 samples")
        dt = t[1] - t[0]
        if dt <= 0 or np.max(np.abs(np.diff(t) - dt)) > 1e-9 * dt:
            raise ConfigError("log requires a uniform positive timestep")
        q = np.asarray(self.q, float)
        qd = np.asarray(self.qd, float)
        if q.ndim != 2 or q.shape[0] != t.size or qd.shape != q.shape:
            raise ConfigError("q and qd must be (T, n) matching the time grid")
        arrays = {"t": t, "q": q, "qd": qd}
        if self.tau is not None:
            tau = np.asarray(self.tau, float)
            if tau.shape != q.shape:
                raise ConfigError("tau must match the q block")
            arrays["tau"] = tau
        extras = {}
        for name, chan in dict(self.extras).items():
            chan = np.asarray(chan, float)
            if chan.shape[:1] != (t.size,):
                raise ConfigError(f"extras[{name!r}] must have leading dim T")
            extras[name] = chan
            arrays[name] = chan
        for name, arr in arrays.items():
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"log channel {name!r} contains non-finite "
                                   "values; the run diverged")
        for arr in arrays.values():
            arr.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)
        object.__setattr__(self, "tau", arrays.get("tau"))
        object.__setattr__(self, "extras", extras)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def n(self) -> int:
        return self.q.shape[1]


def _steps(duration, dt):
    if not dt > 0:
        raise ConfigError("dt must be positive")
    steps = int(round(duration / dt))
    if steps < 1:
        raise ConfigError("duration shorter than one timestep")
    return steps


def _call(controller, t, q, qd):
    out = controller(t, q, qd)
    if isinstance(out, tuple):
        tau, extras = out
    else:
        tau, extras = out, {}
    return np.asarray(tau, float), extras


def _guard(t, qd):
    speed = float(np.linalg.norm(qd))
    if not np.isfinite(speed) or speed > _SPEED_LIMIT:
        raise NumericError(
            f"simulation diverged at t={t:.4f}s (‖q̇‖={speed:.3g} rad/s); "
            "reduce dt or gains")


def simulate(chain, controller, q0, qd0, duration, dt=1e-3) -> SimulationLog:
    """Integrate M(q)q̈ + C(q,q̇)q̇ + g(q) = τ with classical RK4.

    controller(t, q, q̇) returns τ or (τ, extras-dict); it is evaluated at
    every integrator stage.  Total energy is logged each step; extra
    controller channels are logged from the step-start evaluation.
    """
    q = as_vector(q0, chain.n, "q0").copy()
    qd = as_vector(qd0, chain.n, "qd0").copy()
    steps = _steps(duration, dt)
    t = np.arange(steps + 1) * dt
    Q = np.empty((steps + 1, chain.n))
    Qd = np.empty_like(Q)
    Tau = np.empty_like(Q)
    channels: Dict[str, list] = {}

    def accel(qq, qqd, tau):
        M = dynamics.mass_matrix(chain, qq)
        C = dynamics.coriolis_matrix(chain, qq, qqd)
        g = dynamics.gravity_vector(chain, qq)
        return np.linalg.solve(M, tau - C @ qqd - g)

    for k in range(steps + 1):
        tau, ex = _call(controller, t[k], q, qd)
        Q[k], Qd[k], Tau[k] = q, qd, tau
        for name, value in ex.items():
            channels.setdefault(name, []).append(np.asarray(value, float))
        channels.setdefault("energy", []).append(
            dynamics.total_energy(chain, q, qd))
        if k == steps:
            break
        h = dt
        a1 = accel(q, qd, tau)
        q2, v2 = q + 0.5 * h * qd, qd + 0.5 * h * a1
        a2 = accel(q2, v2, _call(controller, t[k] + 0.5 * h, q2, v2)[0])
        q3, v3 = q + 0.5 * h * v2, qd + 0.5 * h * a2
        a3 = accel(q3, v3, _call(controller, t[k] + 0.5 * h, q3, v3)[0])
        q4, v4 = q + h * v3, qd + h * a3
        a4 = accel(q4, v4, _call(controller, t[k] + h, q4, v4)[0])
        q = q + (h / 6.0) * (qd + 2.0 * v2 + 2.0 * v3 + v4)
        qd = qd + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        _guard(t[k + 1], qd)

    extras = {name: np.stack(vals) for name, vals in channels.items()}
    return SimulationLog(t=t, q=Q, qd=Qd, tau=Tau, extras=extras)


def acceleration_decomposition(chain, jac_fn, q, qd, f, m,
                               jdot_step=1e-5) -> Dict[str, np.ndarray]:
    """Split the stacked acceleration response to a force f.

    φ̈ = (J M⁻¹ Jᵀ) f + φ̈_curv − φ̈_CC with φ̈_curv = J̇q̇ and
    φ̈_CC = J M⁻¹ C q̇; x_err = J_x M⁻¹ J_ξᵀ f_ξ is the task-row leakage of
    the self-motion force (zero for exactly orthogonal rows).
    """
    q = as_vector(q, chain.n, "q")
    qd = as_vector(qd, chain.n, "qd")
    J = np.asarray(jac_fn(q), float)
    f = as_vector(f, J.shape[0], "f")
    if not 1 <= m < J.shape[0]:
        raise ConfigError("m must split the stacked rows")
    M = dynamics.mass_matrix(chain, q)
    C = dynamics.coriolis_matrix(chain, q, qd)
    curv = jacobian_dot(jac_fn, q, qd, jdot_step) @ qd
    cc = J @ np.linalg.solve(M, C @ qd)
    mobility = J @ np.linalg.solve(M, J.T @ f)
    x_err = J[:m] @ np.linalg.solve(M, J[m:].T @ f[m:])
    return {"x_err": x_err, "curv": curv, "cc": cc,
            "phidd": mobility + curv - cc}


def kinematic_velocity_control(maps, chain, reference, q0, duration,
                               dt=1e-3) -> SimulationLog:
    """Resolved-rate motion: q̇ = J⁻¹φ̇_d for a square stacked map, or the
    pseudo-inverse baseline q̇ = J_x⁺ẋ_d when the map is task-only.

    Aborts with the singularity margin when the Jacobian degenerates.  The
    log carries commanded (phi_d) and realized (phi) coordinate values; tau
    is None.
    """
    phi_fn, jac_fn = maps
    q = as_vector(q0, chain.n, "q0").copy()
    steps = _steps(duration, dt)
    t = np.arange(steps + 1) * dt

    def rate(tq, qq):
        J = np.asarray(jac_fn(qq), float)
        phid_d = np.asarray(reference(tq)[1], float)
        if J.shape[0] != phid_d.shape[0]:
            raise ConfigError("reference dimension does not match the map")
        if J.shape[0] == J.shape[1]:
            margin = abs(float(np.linalg.det(J)))
            if margin < _DET_FLOOR:
                raise SingularityError(
                    f"stacked Jacobian singular at t={tq:.4f}s "
                    f"(margin {margin:.3g})")
            return np.linalg.solve(J, phid_d)
        margin = float(np.sqrt(max(np.linalg.det(J @ J.T), 0.0)))
        if margin < _DET_FLOOR:
            raise SingularityError(
                f"task Jacobian singular at t={tq:.4f}s (margin {margin:.3g})")
        return np.linalg.lstsq(J, phid_d, rcond=None)[0]

    Q = np.empty((steps + 1, chain.n))
    Qd = np.empty_like(Q)
    Phi = []
    Phid = []
    for k in range(steps + 1):
        Q[k] = q
        Qd[k] = rate(t[k], q)
        Phi.append(phi_fn(q))
        Phid.append(np.asarray(reference(t[k])[0], float))
        if k == steps:
            break
        h = dt
        k1 = Qd[k]
        k2 = rate(t[k] + 0.5 * h, q + 0.5 * h * k1)
        k3 = rate(t[k] + 0.5 * h, q + 0.5 * h * k2)
        k4 = rate(t[k] + h, q + h * k3)
        q = q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _guard(t[k + 1], Qd[k])

    return SimulationLog(t=t, q=Q, qd=Qd, tau=None,
                         extras={"phi": np.stack(Phi), "phi_d": np.stack(Phid)})

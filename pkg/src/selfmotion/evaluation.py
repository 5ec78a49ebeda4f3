"""Residual-angle statistics between task gradients and learned coordinate gradients.

Samples configurations, folds every gradient-pair angle into [0°, 90°] via
|cos|, and reports mean and standard deviation per pair class: task-vs-ξ
(rows of J_x A⁻¹ against rows of J_ξ) and, for r ≥ 2, mutual ξ-vs-ξ (rows
of J_ξ A⁻¹ against rows of J_ξ).  A perfectly orthogonal pair scores 90°.

Samples inside exclusion balls (torus distance on revolute axes) are
discarded before computing statistics, which is how known singular
neighborhoods are kept out of the reported numbers.
"""

from dataclasses import dataclass

import numpy as np

from .network import MlpParams, input_jacobian
from .training import _geometry
from .validation import ConfigError, NumericError

_ZERO = 1e-300


@dataclass(frozen=True)
class AngleStats:
    """Folded pair angles in degrees with their mean and standard deviation."""

    angles: np.ndarray
    mean: float
    std: float


def _stats(angles) -> AngleStats:
    angles = np.asarray(angles, float).ravel()
    return AngleStats(angles=angles, mean=float(angles.mean()), std=float(angles.std()))


def exclusion_mask(Q, centers, radius, periodic):
    """True for samples farther than `radius` from every center.

    Distances wrap on axes flagged periodic (period 2π), so a ball around a
    singular configuration also covers its aliases across the ±π seam.
    """
    Q = np.atleast_2d(np.asarray(Q, float))
    centers = np.atleast_2d(np.asarray(centers, float))
    if radius <= 0.0:
        return np.ones(Q.shape[0], bool)
    d = Q[:, None, :] - centers[None, :, :]
    per = np.asarray(periodic, bool)
    d[:, :, per] = (d[:, :, per] + np.pi) % (2.0 * np.pi) - np.pi
    return (np.linalg.norm(d, axis=2) > radius).all(axis=1)


def _folded_degrees(cos):
    return np.degrees(np.arccos(np.clip(np.abs(cos), 0.0, 1.0)))


def evaluate_angles(
    params,
    chain,
    task_map,
    metric,
    n_samples,
    *,
    region="torus",
    center=None,
    edge=None,
    exclusion_centers=None,
    exclusion_radius=0.0,
    samples=None,
    seed=0,
):
    """Angle statistics over uniformly sampled configurations.

    `params` is an MlpParams or any callable q -> J_ξ row matrix.  Returns
    {"task_xi": AngleStats, "xi_xi": AngleStats or None}; the mutual class
    only exists for r ≥ 2.  Pass `samples` to skip sampling and evaluate a
    given (K, n) batch instead.
    """
    n = chain.n
    if samples is not None:
        Q = np.atleast_2d(np.asarray(samples, float))
    else:
        rng = np.random.default_rng(seed)
        if region == "torus":
            Q = rng.uniform(-np.pi, np.pi, size=(int(n_samples), n))
        elif region == "hypercube":
            if center is None or edge is None:
                raise ConfigError("hypercube region needs center and edge")
            c = np.asarray(center, float)
            Q = rng.uniform(c - edge / 2.0, c + edge / 2.0, size=(int(n_samples), n))
        else:
            raise ConfigError(f"unknown sampling region {region!r}")
    if exclusion_centers is not None and exclusion_radius > 0.0:
        keep = exclusion_mask(Q, exclusion_centers, exclusion_radius, chain.is_revolute)
        Q = Q[keep]
        if Q.shape[0] == 0:
            raise NumericError("every sample was excluded; grow n_samples or shrink the balls")

    U, Ainv = _geometry(chain, task_map, metric, Q)
    if isinstance(params, MlpParams):
        G = input_jacobian(params, Q)
    else:
        G = np.stack([np.atleast_2d(np.asarray(params(q), float)) for q in Q])
    r = G.shape[1]

    # rows with an exactly vanishing gradient have no defined angle; drop them
    beta = np.linalg.norm(G, axis=2)
    a = np.linalg.norm(U, axis=2)
    ok = (beta.min(axis=1) > _ZERO) & (a.min(axis=1) > _ZERO)
    Q, U, G, beta, a = Q[ok], U[ok], G[ok], beta[ok], a[ok]
    if Ainv is not None:
        Ainv = Ainv[ok]
    if Q.shape[0] == 0:
        raise NumericError("no evaluable samples (vanishing gradients everywhere)")

    C1 = np.einsum("kid,kjd->kij", U / a[:, :, None], G / beta[:, :, None])
    report = {"task_xi": _stats(_folded_degrees(C1)), "xi_xi": None}
    if r >= 2:
        W = G if Ainv is None else G @ Ainv
        alpha = np.linalg.norm(W, axis=2)
        C2 = np.einsum("kid,kjd->kij", W / alpha[:, :, None], G / beta[:, :, None])
        ii, jj = np.tril_indices(r, k=-1)
        report["xi_xi"] = _stats(_folded_degrees(C2[:, ii, jj]))
    return report

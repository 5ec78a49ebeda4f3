"""Cosine-orthogonality loss and gradient-based training of coordinate networks.

Per sample q the loss penalizes squared cosines between the A⁻¹-weighted
task-gradient rows u_i and the network Jacobian rows g_j,

    L(q, θ) = λ₁/(2mr) Σ_{i,j} (u_iᵀ g_j / (|u_i| |g_j|))²
            + λ₂/(2·C(r,2)) Σ_{i>j} (w_iᵀ g_j / (|w_i| |g_j|))²,

with u_i the rows of J_x A⁻¹ and w_i the rows of J_ξ A⁻¹; the second sum
(the mutual-decoupling term) only exists for r ≥ 2.  Cosines make the loss
insensitive to gradient magnitudes, so constant coordinate functions are
not a trivial optimum.

The parameter gradient is computed by reverse accumulation through the
explicit computation graph of the input Jacobian (both tanh layers and the
feature map); there is no generic autodiff here, the adjoint of every node
is spelled out in _backward.  Per-sample terms are accumulated in fixed
chunk order so a given seed reproduces training bit for bit.
"""

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from .chains import REVOLUTE, singularity_margin_batch, task_jacobian_batch
from .geometry import Metric
from .network import MlpParams, _activations, _jacobian_chain, init_params
from .validation import ConfigError, NumericError, SingularityError, as_batch

_CHUNK = 2048
_MARGIN = 1e-6  # singularity margin below which a training sample is redrawn
_RESAMPLE_ROUNDS = 200
_PARAM_NAMES = ("W1", "b1", "W2", "b2", "W_out", "b_out")


@dataclass(frozen=True)
class TrainingConfig:
    """Loss weights, schedule, sampling region, metric kind, optimizer, seed."""

    lambda1: float = 1000.0
    lambda2: float = 1.0
    epochs: int = 10
    steps_per_epoch: int = 50
    samples_per_epoch: int = 10_000
    region: str = "torus"  # "torus" | "hypercube"
    center: Optional[Tuple[float, ...]] = None
    edge: Optional[float] = None
    sample_margin: float = _MARGIN  # det(J_x J_xᵀ) floor; draws below it are rejected
    metric: str = "euclidean"  # "euclidean" | "inertia"
    learning_rate: float = 1e-3
    lr_decay: float = 1.0  # per-epoch multiplier; 1.0 keeps the rate fixed
    optimizer: str = "adam"  # "adam" | "sgd"
    batch_size: Optional[int] = None  # None: full epoch sample set per step
    widths: Tuple[int, int] = (256, 64)
    r: Optional[int] = None  # None: complement dimension n - m
    seed: int = 0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ConfigError("epochs and steps_per_epoch must be at least 1")
        if self.samples_per_epoch < 1:
            raise ConfigError("samples_per_epoch must be at least 1")
        if self.region not in ("torus", "hypercube"):
            raise ConfigError(f"unknown sampling region {self.region!r}")
        if self.region == "hypercube":
            if self.center is None or self.edge is None:
                raise ConfigError("hypercube region needs center and edge")
            if self.edge <= 0:
                raise ConfigError("hypercube edge must be positive")
            object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.metric not in ("euclidean", "inertia"):
            raise ConfigError(f"unknown metric kind {self.metric!r}")
        if self.sample_margin <= 0:
            raise ConfigError("sample_margin must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("lr_decay must lie in (0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        w = tuple(int(v) for v in self.widths)
        if len(w) != 2 or min(w) < 1:
            raise ConfigError("widths must be two positive layer sizes")
        object.__setattr__(self, "widths", w)
        if self.r is not None and self.r < 1:
            raise ConfigError("r must be at least 1")


def sample_configurations(rng, chain, task_map, config: TrainingConfig, count: int):
    """Uniform draws on the configured region, redrawing near-singular samples."""
    n = chain.n
    if config.region == "torus":
        if any(t != REVOLUTE for t in chain.joint_types):
            raise ConfigError("torus sampling needs an all-revolute chain")
        lo, hi = np.full(n, -np.pi), np.full(n, np.pi)
    else:
        center = np.asarray(config.center, float)
        if center.shape != (n,):
            raise ConfigError(f"hypercube center has length {center.size}, chain has {n} joints")
        lo, hi = center - config.edge / 2.0, center + config.edge / 2.0
    Q = rng.uniform(lo, hi, size=(count, n))
    for _ in range(_RESAMPLE_ROUNDS):
        bad = singularity_margin_batch(chain, Q, task_map) < config.sample_margin
        if not bad.any():
            return Q
        Q[bad] = rng.uniform(lo, hi, size=(int(bad.sum()), n))
    raise NumericError(
        f"could not draw nonsingular samples on the region after {_RESAMPLE_ROUNDS} rounds"
    )


def _geometry(chain, task_map, metric: Metric, Q):
    """θ-independent per-sample quantities: U = J_x A⁻¹ and A⁻¹ itself."""
    J = task_jacobian_batch(chain, Q, task_map)
    if metric.is_euclidean:
        return J, None
    Ainv = np.linalg.inv(np.stack([metric.matrix(q) for q in Q]))
    return J @ Ainv, Ainv


def _loss_terms(G, U, Ainv, lam1, lam2, need_grad):
    """Per-sample losses and, optionally, ∂L/∂G for a (K, r, n) Jacobian batch."""
    K, r, _ = G.shape
    m = U.shape[1]
    beta = np.linalg.norm(G, axis=2)
    if beta.min() < 1e-300:
        raise NumericError("degenerate network: zero-norm coordinate-gradient row")
    a = np.linalg.norm(U, axis=2)
    if a.min() < 1e-300:
        raise SingularityError("zero task gradient in a training sample")
    Uh = U / a[:, :, None]
    Gh = G / beta[:, :, None]
    C1 = np.einsum("kid,kjd->kij", Uh, Gh)
    k1 = lam1 / (2.0 * m * r)
    losses = k1 * np.einsum("kij,kij->k", C1, C1)
    Gbar = None
    if need_grad:
        s = np.einsum("kij,kij->kj", C1, C1)
        Gbar = 2.0 * k1 * (np.einsum("kij,kid->kjd", C1, Uh) - s[:, :, None] * Gh)
        Gbar /= beta[:, :, None]
    if r >= 2 and lam2 > 0:
        W = G if Ainv is None else G @ Ainv
        alpha = np.linalg.norm(W, axis=2)
        N = np.einsum("kid,kjd->kij", W, G)
        scale = alpha[:, :, None] * beta[:, None, :]
        D = np.tril(N / scale, k=-1)
        k2 = lam2 / (r * (r - 1))  # λ₂ / (2 C(r,2))
        losses = losses + k2 * np.einsum("kij,kij->k", D, D)
        if need_grad:
            E = D / scale
            D2sum_i = np.einsum("kij,kij->ki", D, D)
            D2sum_j = np.einsum("kij,kij->kj", D, D)
            Z = W if Ainv is None else W @ Ainv
            as_i = np.einsum("kij,kjd->kid", E, W) - (D2sum_i / alpha**2)[:, :, None] * Z
            as_j = np.einsum("kij,kid->kjd", E, W) - (D2sum_j / beta**2)[:, :, None] * G
            Gbar = Gbar + 2.0 * k2 * (as_i + as_j)
    return losses, Gbar


def _backward(params: MlpParams, acts, chain_parts, Gbar):
    """Adjoints of G = W_out D₂ W₂ D₁ W₁ ∂f/∂q back to every parameter block."""
    B, T1, D1, T2, D2 = acts
    C, S, M1, P1, P2, P3, _ = chain_parts
    P3b = np.tensordot(params.W_out, Gbar, axes=(0, 1)).transpose(1, 0, 2)
    Wout_g = np.tensordot(Gbar, P3, axes=([0, 2], [0, 2]))
    D2b = np.einsum("kaj,kaj->ka", P3b, P2)
    P2b = D2[:, :, None] * P3b
    W2_g = np.tensordot(P2b, P1, axes=([0, 2], [0, 2]))
    P1b = np.tensordot(params.W2, P2b, axes=(0, 1)).transpose(1, 0, 2)
    D1b = np.einsum("kbj,kbj->kb", P1b, M1)
    M1b = D1[:, :, None] * P1b
    W1_g = np.concatenate(
        [np.einsum("kaj,kj->aj", M1b, C), -np.einsum("kaj,kj->aj", M1b, S)], axis=1
    )
    S2b = -2.0 * T2 * D2 * D2b
    W2_g += S2b.T @ T1
    b2_g = S2b.sum(axis=0)
    T1b = S2b @ params.W2 - 2.0 * T1 * D1b
    S1b = D1 * T1b
    W1_g += S1b.T @ B
    b1_g = S1b.sum(axis=0)
    return {
        "W1": W1_g,
        "b1": b1_g,
        "W2": W2_g,
        "b2": b2_g,
        "W_out": Wout_g,
        "b_out": np.zeros(params.r),
    }


def _loss_and_gradient(params, Q, U, Ainv, lam1, lam2, need_grad=True):
    """Batch-mean loss (and parameter gradient) accumulated in fixed chunk order."""
    K = Q.shape[0]
    loss_sum = 0.0
    total = None
    for start in range(0, K, _CHUNK):
        sl = slice(start, start + _CHUNK)
        acts = _activations(params, Q[sl])
        parts = _jacobian_chain(params, Q[sl], acts)
        losses, Gbar = _loss_terms(
            parts[-1], U[sl], None if Ainv is None else Ainv[sl], lam1, lam2, need_grad
        )
        loss_sum += losses.sum()
        if need_grad:
            grads = _backward(params, acts, parts, Gbar)
            total = grads if total is None else {k: total[k] + grads[k] for k in total}
    if not need_grad:
        return loss_sum / K, None
    return loss_sum / K, {k: v / K for k, v in total.items()}


def sample_loss(q, params, chain, task_map, metric, lam1=1000.0, lam2=1.0) -> float:
    """L(q, θ) at one configuration."""
    Q = as_batch(np.atleast_2d(np.asarray(q, float)), chain.n, "q")
    U, Ainv = _geometry(chain, task_map, metric, Q)
    loss, _ = _loss_and_gradient(params, Q, U, Ainv, lam1, lam2, need_grad=False)
    return float(loss)


def batch_loss(samples, params, chain, task_map, metric, lam1=1000.0, lam2=1.0) -> float:
    """Mean of sample_loss over a (K, n) sample batch."""
    Q = as_batch(samples, chain.n, "samples")
    U, Ainv = _geometry(chain, task_map, metric, Q)
    loss, _ = _loss_and_gradient(params, Q, U, Ainv, lam1, lam2, need_grad=False)
    return float(loss)


def param_gradient(samples, params, chain, task_map, metric, lam1=1000.0, lam2=1.0):
    """∂ batch_loss / ∂θ as a dict over the parameter blocks (b_out is zero)."""
    Q = as_batch(samples, chain.n, "samples")
    U, Ainv = _geometry(chain, task_map, metric, Q)
    _, grads = _loss_and_gradient(params, Q, U, Ainv, lam1, lam2)
    return grads


def orthogonality_cosines(J_x, J_xi, metric: Optional[Metric] = None, q=None):
    """Cosine matrices behind the two loss terms, for one sample.

    Returns (C1, C2): C1[i, j] is the cosine between the weighted task
    gradient u_i = A⁻¹ J_x[i] and the coordinate-gradient row g_j; C2 holds
    the ξ-vs-ξ cosines on the strict lower triangle (zero elsewhere).
    """
    metric = metric or Metric.euclidean()
    J_x = np.atleast_2d(np.asarray(J_x, float))
    G = np.atleast_2d(np.asarray(J_xi, float))
    U = metric.solve(q, J_x.T).T
    W = metric.solve(q, G.T).T
    beta = np.linalg.norm(G, axis=1)
    if beta.min() < 1e-300:
        raise NumericError("degenerate network: zero-norm coordinate-gradient row")
    a = np.linalg.norm(U, axis=1)
    if a.min() < 1e-300:
        raise SingularityError("zero task gradient")
    C1 = (U / a[:, None]) @ (G / beta[:, None]).T
    r = G.shape[0]
    C2 = np.zeros((r, r))
    if r >= 2:
        alpha = np.linalg.norm(W, axis=1)
        C2 = np.tril((W / alpha[:, None]) @ (G / beta[:, None]).T, k=-1)
    return C1, C2


def _finite_params(arrays):
    return all(np.isfinite(v).all() for v in arrays.values())


def _apply_update(params: MlpParams, grads, state, config: TrainingConfig,
                  lr: Optional[float] = None) -> MlpParams:
    if lr is None:
        lr = config.learning_rate
    arrays = {k: getattr(params, k) for k in _PARAM_NAMES}
    if config.optimizer == "sgd":
        new = {k: arrays[k] - lr * grads[k] for k in arrays}
    else:
        state["t"] += 1
        t, b1, b2 = state["t"], 0.9, 0.999
        new = {}
        for k in arrays:
            state["m"][k] = b1 * state["m"][k] + (1 - b1) * grads[k]
            state["v"][k] = b2 * state["v"][k] + (1 - b2) * grads[k] ** 2
            mhat = state["m"][k] / (1 - b1**t)
            vhat = state["v"][k] / (1 - b2**t)
            new[k] = arrays[k] - lr * mhat / (np.sqrt(vhat) + 1e-8)
    if not _finite_params(new):
        raise NumericError("training diverged: non-finite parameter update")
    return MlpParams(joint_types=params.joint_types, **new)


def train(config: TrainingConfig, chain, task_map):
    """Optimize the cosine loss; returns (MlpParams, loss curve).

    The curve has one row (epoch, step, loss) per update, with the loss
    evaluated on that step's batch before the update.  Fresh samples are
    drawn every epoch; the same config and seed reproduce the run exactly.
    """
    task_map.check(chain)
    m = task_map.dim(chain)
    r = config.r if config.r is not None else chain.n - m
    if r < 1:
        raise ConfigError("chain has no redundancy for the given task map")
    if config.metric == "euclidean":
        metric = Metric.euclidean()
    else:
        metric = Metric.inertia(chain)
    rng = np.random.default_rng(config.seed)
    params = init_params(chain.n, r, config.widths, chain.joint_types, rng)
    state = {
        "t": 0,
        "m": {k: np.zeros_like(getattr(params, k)) for k in _PARAM_NAMES},
        "v": {k: np.zeros_like(getattr(params, k)) for k in _PARAM_NAMES},
    }
    rows = []
    K = config.samples_per_epoch
    for epoch in range(config.epochs):
        lr = config.learning_rate * config.lr_decay**epoch
        Q = sample_configurations(rng, chain, task_map, config, K)
        U, Ainv = _geometry(chain, task_map, metric, Q)
        for step in range(config.steps_per_epoch):
            if config.batch_size is None:
                sel = slice(None)
            else:
                sel = (step * config.batch_size + np.arange(config.batch_size)) % K
            loss, grads = _loss_and_gradient(
                params, Q[sel], U[sel], None if Ainv is None else Ainv[sel],
                config.lambda1, config.lambda2,
            )
            rows.append((float(epoch), float(step), loss))
            params = _apply_update(params, grads, state, config, lr)
    return params, np.asarray(rows, float)

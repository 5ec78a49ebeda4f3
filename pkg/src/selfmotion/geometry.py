"""Metric-weighted null-space geometry.

Gradients with a raised index, generalized pseudo-inverses, null-space
projectors, stacked coordinate Jacobians, numerical Lie brackets and the
involutivity residual of the task-gradient distribution, and plane-stack
local coordinates.

Conventions: A(q) is a symmetric positive definite metric on joint space;
J^{#A} = A⁻¹Jᵀ(JA⁻¹Jᵀ)⁻¹; orthogonality of two coordinate Jacobians means
J_x A⁻¹ J_ξᵀ = 0.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from . import dynamics
from .chains import task_jacobian
from .validation import SingularityError, as_matrix, as_spd, as_vector

_RANK_RTOL = 1e-8  # singular values below this times σ_max count as zero
_BRACKET_STEP = 1e-5


@dataclass(frozen=True)
class Metric:
    """Joint-space metric A(q): Euclidean, inertia M(q), or a custom matrix function."""

    kind: str
    func: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("euclidean", "inertia", "custom"):
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.kind != "euclidean" and self.func is None:
            raise ValueError(f"{self.kind} metric needs an evaluator")

    @staticmethod
    def euclidean() -> "Metric":
        return Metric("euclidean")

    @staticmethod
    def inertia(chain) -> "Metric":
        return Metric("inertia", lambda q: dynamics.mass_matrix(chain, q))

    @staticmethod
    def from_function(func) -> "Metric":
        return Metric("custom", func)

    @property
    def is_euclidean(self) -> bool:
        return self.kind == "euclidean"

    def matrix(self, q, n: Optional[int] = None) -> np.ndarray:
        if self.is_euclidean:
            if n is None:
                n = len(np.atleast_1d(q))
            return np.eye(n)
        return as_spd(self.func(np.asarray(q, float)), name="A(q)")

    def solve(self, q, B) -> np.ndarray:
        """A(q)⁻¹ B without forming the inverse."""
        B = np.asarray(B, float)
        if self.is_euclidean:
            return B.copy()
        return np.linalg.solve(self.matrix(q), B)


def metric_gradient(J_row, metric: Metric, q) -> np.ndarray:
    """Gradient with the index raised by the metric: ∇_A h = A(q)⁻¹ Jᵀ.

    Accepts a single Jacobian row (returns a vector) or a full (m, n)
    Jacobian (returns the (n, m) column stack of gradients).
    """
    J = np.asarray(J_row, float)
    if J.ndim == 1:
        return metric.solve(q, J)
    return metric.solve(q, J.T)


def _ainv_jt(J, A):
    """A⁻¹ Jᵀ for an evaluated metric matrix (or None for Euclidean)."""
    if A is None:
        return J.T.copy()
    return np.linalg.solve(as_spd(A), J.T)


def _check_rank(J, name="J"):
    s = np.linalg.svd(J, compute_uv=False)
    if s[0] == 0.0 or s[-1] <= _RANK_RTOL * s[0]:
        raise SingularityError(
            f"{name} is rank deficient (smallest singular value {s[-1]:.3e})",
            margin=float(s[-1]),
        )


def generalized_pseudoinverse(J, A=None) -> np.ndarray:
    """A-weighted generalized pseudo-inverse J^{#A} = A⁻¹Jᵀ(JA⁻¹Jᵀ)⁻¹.

    Args:
        J: (m, n) full-row-rank matrix.
        A: (n, n) SPD metric matrix, or None for the Euclidean metric.

    Raises:
        SingularityError: if J is rank deficient at the working precision.
    """
    J = as_matrix(J, name="J")
    _check_rank(J)
    AiJt = _ainv_jt(J, A)
    return AiJt @ np.linalg.inv(J @ AiJt)


def null_space_projector(J, A=None) -> np.ndarray:
    """Null-space projector P = I − J^{#A} J (idempotent, J P = 0)."""
    J = as_matrix(J, name="J")
    n = J.shape[1]
    return np.eye(n) - generalized_pseudoinverse(J, A) @ J


def stacked_jacobian(J_x, J_xi) -> np.ndarray:
    """Stack task and self-motion rows into the full coordinate Jacobian (n, n)."""
    J_x = np.atleast_2d(np.asarray(J_x, float))
    J_xi = np.atleast_2d(np.asarray(J_xi, float))
    if J_x.shape[1] != J_xi.shape[1]:
        raise ValueError("row blocks must share the column dimension")
    J = np.vstack([J_x, J_xi])
    if J.shape[0] != J.shape[1]:
        raise ValueError(f"stacked Jacobian must be square, got {J.shape}")
    return J


def stacked_inverse(J, A=None, m: Optional[int] = None) -> np.ndarray:
    """Inverse of a stacked Jacobian as the column block [J_x^{#A} | J_ξ^{#A}].

    When the two row blocks are A-orthogonal this equals J⁻¹ and the
    completeness identity J_x^{#A}J_x + J_ξ^{#A}J_ξ = I holds.

    Args:
        J: (n, n) stacked Jacobian with the m task rows on top.
        A: metric matrix or None.
        m: task dimension (required; the stack does not remember it).
    """
    J = as_matrix(J, name="J")
    if m is None or not 1 <= m < J.shape[0]:
        raise ValueError("stacked_inverse needs the task row count 1 <= m < n")
    _check_rank(J, name="stacked J")
    return np.hstack([
        generalized_pseudoinverse(J[:m], A),
        generalized_pseudoinverse(J[m:], A),
    ])


def lie_bracket(f1, f2, q, step: float = _BRACKET_STEP) -> np.ndarray:
    """Numerical Lie bracket [f1, f2](q) = ∂f2/∂q·f1(q) − ∂f1/∂q·f2(q).

    Vector fields are callables q -> (n,); derivatives are central
    differences with the given step.
    """
    q = np.asarray(q, float)
    n = q.shape[0]
    v1 = np.asarray(f1(q), float)
    v2 = np.asarray(f2(q), float)
    D1 = np.empty((n, n))
    D2 = np.empty((n, n))
    for i in range(n):
        dq = np.zeros(n)
        dq[i] = step
        D1[:, i] = (np.asarray(f1(q + dq), float) - np.asarray(f1(q - dq), float)) / (2 * step)
        D2[:, i] = (np.asarray(f2(q + dq), float) - np.asarray(f2(q - dq), float)) / (2 * step)
    return D2 @ v1 - D1 @ v2


def task_gradient_fields(chain, task_map, metric: Metric):
    """Callables q ↦ ∇_A h_i(q) for each task row i."""
    m = task_map.dim(chain)

    def field(i):
        def f(q):
            J = task_jacobian(chain, q, task_map)
            return metric.solve(q, J[i])

        return f

    return [field(i) for i in range(m)]


def _orthonormal_gradient_frame(chain, task_map, metric: Metric):
    """q ↦ orthonormal (n, m) frame spanning the task metric-gradients.

    QR with a positive-diagonal sign convention; smooth wherever the
    gradients keep full rank, so the columns are differentiable vector
    fields generating the same distribution in any task chart.
    """

    def frame(q):
        J = task_jacobian(chain, q, task_map)
        G = metric.solve(q, J.T)  # (n, m)
        Q, R = np.linalg.qr(G)
        d = np.diagonal(R)
        if np.min(np.abs(d)) <= _RANK_RTOL * np.max(np.abs(d)):
            raise SingularityError("task gradients are rank deficient",
                                   margin=float(np.min(np.abs(d))))
        return Q * np.where(d < 0, -1.0, 1.0)[None, :]

    return frame


def involutivity_residual(chain, task_map, metric: Metric, q, step: float = _BRACKET_STEP) -> float:
    """Component of the pairwise task-gradient brackets outside their span.

    The gradient fields are orthonormalized before bracketing, so the value
    depends only on the distribution they span (task-chart invariant), not
    on the particular rows.  Zero (to finite-difference tolerance) exactly
    when that distribution is involutive at q — the existence condition for
    an orthogonal foliation.  Scalar tasks have no pairs and return 0.
    """
    q = as_vector(q, chain.n, "q")
    m = task_map.dim(chain)
    if m < 2:
        return 0.0
    frame = _orthonormal_gradient_frame(chain, task_map, metric)
    F = frame(q)
    total = 0.0
    for i in range(m):
        fi = lambda x, i=i: frame(x)[:, i]
        for j in range(i + 1, m):
            fj = lambda x, j=j: frame(x)[:, j]
            b = lie_bracket(fi, fj, q, step)
            outside = b - F @ (F.T @ b)
            total += float(outside @ outside)
    return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# plane stacks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlaneStack:
    """Local orthogonal coordinates from a stack of planes through q₀.

    ξ(q) = N (q − q₀) with unit normal rows N (r, n); each normal satisfies
    J_x(q₀) A(q₀)⁻¹ nᵀ = 0, so orthogonality holds exactly at the base point.
    """

    q0: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        q0 = as_vector(self.q0, name="q0")
        N = np.atleast_2d(np.asarray(self.normals, float))
        if N.shape[1] != q0.shape[0]:
            raise ValueError("normals and q0 disagree on dimension")
        norms = np.linalg.norm(N, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("plane-stack normals must be unit length")
        if np.linalg.matrix_rank(N, tol=1e-9) != N.shape[0]:
            raise ValueError("plane-stack normals must be linearly independent")
        q0 = q0.copy()
        N = N.copy()
        q0.flags.writeable = False
        N.flags.writeable = False
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "normals", N)

    @property
    def r(self) -> int:
        return self.normals.shape[0]


def _sign_fix(v, tol=1e-12):
    for x in v:
        if abs(x) > tol:
            return v if x > 0 else -v
    return v


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def plane_stack_normals(chain, task_map, metric: Metric, q0) -> PlaneStack:
    """Construct the plane-stack normals at a nonsingular base configuration.

    For 3-DoF chains the two closed-form recipes are used: a scalar task
    takes n₁ ∝ (v₂, −v₁, 0), n₂ ∝ n₁ × v with v = ∇_A h(q₀); a planar
    position task takes the single normal n ∝ ∇_A x × ∇_A y.  The general
    construction is an orthonormal basis of null(J_x(q₀) A(q₀)⁻¹) with a
    deterministic sign convention (first nonzero entry positive).
    """
    q0 = as_vector(q0, chain.n, "q0")
    J = task_jacobian(chain, q0, task_map)
    _check_rank(J, name="J_x(q0)")
    m, n = J.shape
    grads = metric.solve(q0, J.T)  # (n, m) columns ∇_A h_i
    if n == 3 and m == 1:
        v = grads[:, 0]
        n1 = np.array([v[1], -v[0], 0.0])
        if np.linalg.norm(n1) > 1e-9 * np.linalg.norm(v):
            n2 = np.cross(n1, v)
            N = np.stack([_sign_fix(_unit(n1)), _sign_fix(_unit(n2))])
            return PlaneStack(q0=q0, normals=N)
        # v along the q3 axis: recipe degenerates, fall through to general case
    elif n == 3 and m == 2:
        nv = np.cross(grads[:, 0], grads[:, 1])
        return PlaneStack(q0=q0, normals=_sign_fix(_unit(nv))[None, :])
    # general case: orthonormal null-space basis of J_x A⁻¹
    K = (metric.solve(q0, J.T)).T  # rows J_x,i A⁻¹
    _, s, Vt = np.linalg.svd(K)
    N = Vt[m:]
    N = np.stack([_sign_fix(row) for row in N])
    return PlaneStack(q0=q0, normals=N)


def plane_stack_eval(stack: PlaneStack, q) -> np.ndarray:
    """Evaluate ξ(q) = N (q − q₀); affine, ξ(q₀) = 0."""
    q = np.asarray(q, float)
    if q.ndim == 1:
        return stack.normals @ (q - stack.q0)
    return (q - stack.q0[None, :]) @ stack.normals.T


def plane_stack_jacobian(stack: PlaneStack) -> np.ndarray:
    """Constant coordinate Jacobian J_ξ = N."""
    return stack.normals.copy()

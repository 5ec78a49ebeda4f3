"""Two-hidden-layer coordinate network with trigonometric input features.

ξ(q) = W_out tanh(W₂ tanh(W₁ f(q) + b₁) + b₂) + b_out, where the feature
map f stacks sines and cosines of every revolute coordinate so the network
is automatically 2π-periodic where the joint space is.  Prismatic joints
pass the raw coordinate instead (paired with a constant placeholder so the
feature width stays 2n).

The input Jacobian is evaluated analytically by the chain rule through
both tanh layers and the feature map; all functions accept a single
configuration (n,) or a batch (K, n).

Parameter bundles are stored in a small binary format: a fixed header
(magic, version, n, r, hidden widths, metric kind, rng seed, joint-type
codes) followed by the weight blocks W₁, b₁, W₂, b₂, W_out, b_out as
row-major little-endian float64.  Saving a loaded bundle reproduces the
file byte for byte.
"""

import re
import struct
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .chains import PRISMATIC, REVOLUTE
from .validation import ConfigError

_MAGIC = b"SMNB"
_VERSION = 1
_HASH_RE = re.compile(r"[0-9a-f]{12}")
_METRIC_CODES = {"euclidean": 0, "inertia": 1, "custom": 2}
_METRIC_NAMES = {v: k for k, v in _METRIC_CODES.items()}
_JOINT_CODES = {REVOLUTE: 0, PRISMATIC: 1}
_JOINT_NAMES = {v: k for k, v in _JOINT_CODES.items()}


@dataclass(frozen=True)
class MlpParams:
    """Network parameters plus the joint types the feature map needs."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray
    joint_types: Tuple[str, ...]

    def __post_init__(self):
        jt = tuple(self.joint_types)
        for t in jt:
            if t not in _JOINT_CODES:
                raise ConfigError(f"unknown joint type {t!r}")
        object.__setattr__(self, "joint_types", jt)
        for name in ("W1", "b1", "W2", "b2", "W_out", "b_out"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
        n = len(jt)
        n1, n2 = self.W1.shape[0], self.W2.shape[0]
        r = self.W_out.shape[0]
        expected = {
            "W1": (n1, 2 * n),
            "b1": (n1,),
            "W2": (n2, n1),
            "b2": (n2,),
            "W_out": (r, n2),
            "b_out": (r,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ConfigError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise ConfigError(f"{name} contains non-finite entries")

    @property
    def n(self) -> int:
        return len(self.joint_types)

    @property
    def r(self) -> int:
        return self.W_out.shape[0]

    @property
    def widths(self) -> Tuple[int, int]:
        return (self.W1.shape[0], self.W2.shape[0])


def _as_batch(q, n):
    Q = np.atleast_2d(np.asarray(q, float))
    if Q.shape[1] != n:
        raise ConfigError(f"expected configurations of length {n}, got shape {np.shape(q)}")
    return Q


def featurize(q, joint_types) -> np.ndarray:
    """Feature vector of length 2n: [sin-block, cos-block].

    Revolute joint i fills (sin qᵢ, cos qᵢ); a prismatic joint passes the
    raw coordinate and a constant 1 so the width does not depend on the
    joint mix.
    """
    n = len(joint_types)
    Q = _as_batch(q, n)
    rev = np.array([t == REVOLUTE for t in joint_types])
    a = np.where(rev, np.sin(Q), Q)
    b = np.where(rev, np.cos(Q), 1.0)
    B = np.concatenate([a, b], axis=1)
    return B if np.ndim(q) > 1 else B[0]


def _feature_derivatives(Q, joint_types):
    """Columns of ∂f/∂qᵢ: sin-slot coefficient C, cos-slot coefficient −S."""
    rev = np.array([t == REVOLUTE for t in joint_types])
    C = np.where(rev, np.cos(Q), 1.0)
    S = np.where(rev, np.sin(Q), 0.0)
    return C, S


def feature_jacobian(q, joint_types) -> np.ndarray:
    """∂f/∂q as a dense (2n, n) matrix (one configuration)."""
    n = len(joint_types)
    Q = _as_batch(q, n)
    C, S = _feature_derivatives(Q, joint_types)
    J = np.zeros((2 * n, n))
    idx = np.arange(n)
    J[idx, idx] = C[0]
    J[n + idx, idx] = -S[0]
    return J


def _activations(params: MlpParams, Q):
    """Forward intermediates for a batch: features and both tanh layers."""
    B = featurize(Q, params.joint_types)
    T1 = np.tanh(B @ params.W1.T + params.b1)
    D1 = 1.0 - T1**2
    T2 = np.tanh(T1 @ params.W2.T + params.b2)
    D2 = 1.0 - T2**2
    return B, T1, D1, T2, D2


def _jacobian_chain(params: MlpParams, Q, acts):
    """Intermediates of the input Jacobian G = W_out D₂ W₂ D₁ W₁ ∂f/∂q."""
    _, _, D1, _, D2 = acts
    n = params.n
    C, S = _feature_derivatives(Q, params.joint_types)
    W1s, W1c = params.W1[:, :n], params.W1[:, n:]
    # M1[k, :, j] = W1 ∂f/∂q_j without materializing the sparse feature Jacobian
    M1 = W1s[None, :, :] * C[:, None, :] - W1c[None, :, :] * S[:, None, :]
    P1 = D1[:, :, None] * M1
    P2 = np.tensordot(params.W2, P1, axes=(1, 1)).transpose(1, 0, 2)
    P3 = D2[:, :, None] * P2
    G = np.tensordot(params.W_out, P3, axes=(1, 1)).transpose(1, 0, 2)
    return C, S, M1, P1, P2, P3, G


def forward(params: MlpParams, q) -> np.ndarray:
    """Network output ξ(q); (r,) for one configuration, (K, r) for a batch."""
    Q = _as_batch(q, params.n)
    _, _, _, T2, _ = _activations(params, Q)
    out = T2 @ params.W_out.T + params.b_out
    return out if np.ndim(q) > 1 else out[0]


def input_jacobian(params: MlpParams, q) -> np.ndarray:
    """Analytic J_ξ = ∂ξ/∂q; (r, n) for one configuration, (K, r, n) for a batch."""
    Q = _as_batch(q, params.n)
    acts = _activations(params, Q)
    G = _jacobian_chain(params, Q, acts)[-1]
    return G if np.ndim(q) > 1 else G[0]


def init_params(n, r, widths, joint_types, rng) -> MlpParams:
    """Scaled-uniform weights with bound √(6/(fan_in+fan_out)), zero biases."""
    n1, n2 = widths
    if len(joint_types) != n:
        raise ConfigError("joint_types length does not match n")

    def layer(fan_out, fan_in):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_out, fan_in))

    return MlpParams(
        W1=layer(n1, 2 * n),
        b1=np.zeros(n1),
        W2=layer(n2, n1),
        b2=np.zeros(n2),
        W_out=layer(r, n2),
        b_out=np.zeros(r),
        joint_types=tuple(joint_types),
    )


_HEADER = struct.Struct("<4sIIIIIBQ")  # magic, version, n, r, n1, n2, metric, seed


def save_params(path, params: MlpParams, *, metric="euclidean", seed=0,
                config_hash=""):
    """Write a parameter bundle; see the module docstring for the layout.

    `config_hash` (12 hex chars or empty) is appended after the weight
    blocks so reruns of the same recipe can be identified byte-for-byte.
    """
    if metric not in _METRIC_CODES:
        raise ConfigError(f"unknown metric kind {metric!r}")
    if config_hash and not _HASH_RE.fullmatch(config_hash):
        raise ConfigError("config_hash must be 12 lowercase hex characters")
    n1, n2 = params.widths
    blob = [_HEADER.pack(_MAGIC, _VERSION, params.n, params.r, n1, n2, _METRIC_CODES[metric], int(seed))]
    blob.append(bytes(_JOINT_CODES[t] for t in params.joint_types))
    for name in ("W1", "b1", "W2", "b2", "W_out", "b_out"):
        blob.append(np.ascontiguousarray(getattr(params, name)).astype("<f8").tobytes())
    blob.append(config_hash.encode("ascii"))
    with open(path, "wb") as fh:
        fh.write(b"".join(blob))


def load_params(path):
    """Read a parameter bundle; returns (MlpParams, {"metric": ..., "seed": ...})."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ConfigError(f"{path}: truncated bundle header")
    magic, version, n, r, n1, n2, metric_code, seed = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise ConfigError(f"{path}: not a parameter bundle (bad magic)")
    if version != _VERSION:
        raise ConfigError(f"{path}: unsupported bundle version {version}")
    if metric_code not in _METRIC_NAMES:
        raise ConfigError(f"{path}: unknown metric code {metric_code}")
    off = _HEADER.size
    if len(blob) < off + n:
        raise ConfigError(f"{path}: truncated joint-type table")
    try:
        joint_types = tuple(_JOINT_NAMES[c] for c in blob[off : off + n])
    except KeyError as exc:
        raise ConfigError(f"{path}: unknown joint code {exc}") from None
    off += n
    shapes = [(n1, 2 * n), (n1,), (n2, n1), (n2,), (r, n2), (r,)]
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        nbytes = 8 * count
        if len(blob) < off + nbytes:
            raise ConfigError(f"{path}: truncated weight block")
        arrays.append(np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape))
        off += nbytes
    config_hash = ""
    if off != len(blob):
        tail = blob[off:]
        if len(tail) == 12 and _HASH_RE.fullmatch(tail.decode("ascii", "replace")):
            config_hash = tail.decode("ascii")
        else:
            raise ConfigError(f"{path}: {len(blob) - off} trailing bytes")
    params = MlpParams(*arrays, joint_types=joint_types)
    return params, {"metric": _METRIC_NAMES[metric_code], "seed": seed,
                    "config_hash": config_hash}

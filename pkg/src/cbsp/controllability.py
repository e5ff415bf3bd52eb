"""Finite-horizon controllability: Gramian, Kalman rank and the two set metrics."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import sparse

__all__ = [
    "MetricKind",
    "MetricError",
    "Gramian",
    "MetricValue",
    "EPS_REL",
    "EPS_FLOOR",
    "gramian",
    "gramian_trace",
    "column_traces",
    "controllability_matrix",
    "kalman_rank",
    "rank_tolerance",
    "gramian_full_rank",
    "logdet_epsilon",
    "metric",
    "logdet",
]

EPS_REL = 1e-12
EPS_FLOOR = 1e-300
_BLOCK = 256


class MetricKind(str, enum.Enum):
    TRACE = "trace"
    LOGDET = "logdet"


class MetricError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class Gramian:
    W: np.ndarray
    n_steps: int
    meta: dict = field(default_factory=dict)

    @property
    def n_x(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True)
class MetricValue:
    kind: MetricKind
    value: float
    eps: float | None = None


def _as_operator(A):
    if sparse.issparse(A):
        return A.tocsr()
    return np.asarray(A, dtype=float)


def _as_inputs(B, n_x: int) -> np.ndarray:
    B = B.toarray() if sparse.issparse(B) else np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    if B.shape[0] != n_x:
        raise ValueError(f"B has {B.shape[0]} rows, A is {n_x}x{n_x}")
    return B


def _check(A, B, n_steps):
    A = _as_operator(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if n_steps < 1:
        raise ValueError("horizon must be at least one step")
    return A, _as_inputs(B, A.shape[0])


def gramian(A, B, n_steps: int, **meta) -> Gramian:
    """W = sum_{tau < n_steps} A^tau B B^T (A^T)^tau.

    The controllability matrix is never formed; propagated blocks A^tau B
    are stacked a few hundred columns at a time and folded into W.
    """
    A, X = _check(A, B, n_steps)
    n = A.shape[0]
    W = np.zeros((n, n))
    buf, width = [], 0
    for tau in range(n_steps):
        buf.append(X)
        width += X.shape[1]
        if width >= _BLOCK or tau == n_steps - 1:
            K = np.hstack(buf)
            W += K @ K.T
            buf, width = [], 0
        if tau < n_steps - 1:
            X = A @ X
    W = 0.5 * (W + W.T)
    return Gramian(W, n_steps, dict(meta))


def column_traces(A, B, n_steps: int) -> np.ndarray:
    """trace(W(A, b_j, n_steps)) for every column b_j of B."""
    A, X = _check(A, B, n_steps)
    acc = np.zeros(X.shape[1])
    for tau in range(n_steps):
        acc += np.einsum("ij,ij->j", X, X)
        if tau < n_steps - 1:
            X = A @ X
    return acc


def gramian_trace(A, B, n_steps: int) -> float:
    """trace(W) = sum_tau ||A^tau B||_F^2 without building W."""
    A, X = _check(A, B, n_steps)
    total = 0.0
    for tau in range(n_steps):
        total += float(np.vdot(X, X))
        if tau < n_steps - 1:
            X = A @ X
    return total


def controllability_matrix(A, B, n_steps: int) -> np.ndarray:
    """Explicit [B, AB, ..., A^(N-1) B]. Test and small-system use only."""
    A, X = _check(A, B, n_steps)
    blocks = []
    for tau in range(n_steps):
        blocks.append(X)
        if tau < n_steps - 1:
            X = A @ X
    return np.hstack(blocks)


def rank_tolerance(shape: tuple[int, int], sigma_max: float) -> float:
    return max(shape) * np.finfo(float).eps * sigma_max


def kalman_rank(A, B, n_steps: int) -> int:
    """Numerical rank of the controllability matrix (SVD, tol = max(dims) eps sigma_max)."""
    C = controllability_matrix(A, B, n_steps)
    if C.size == 0:
        return 0
    s = scipy.linalg.svdvals(C)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rank_tolerance(C.shape, s[0])))


def gramian_full_rank(W: np.ndarray) -> bool:
    """Smallest eigenvalue of W above n eps lambda_max."""
    ev = np.linalg.eigvalsh(W)
    top = ev[-1]
    if top <= 0.0:
        return False
    return bool(ev[0] > W.shape[0] * np.finfo(float).eps * top)


def logdet_epsilon(trace: float, n_x: int, eps_rel: float = EPS_REL) -> float:
    """Regularization eps_rel * max(trace / n_x, floor)."""
    return eps_rel * max(trace / n_x, EPS_FLOOR)


def logdet(W: np.ndarray, eps: float) -> float:
    """log det(W + eps I) through a Cholesky factor."""
    M = W + eps * np.eye(W.shape[0])
    try:
        L = scipy.linalg.cholesky(M, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise MetricError(f"W + {eps:.3g} I is not positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def metric(W: Gramian | np.ndarray, kind: MetricKind | str, eps: float | None = None, eps_rel: float = EPS_REL) -> MetricValue:
    """Trace or regularized log-determinant of a Gramian.

    For LogDet, ``eps`` defaults to ``eps_rel * max(trace(W)/n_x, floor)``.
    Pass a fixed ``eps`` when comparing Gramians of different input sets.
    """
    kind = MetricKind(kind)
    Wm = W.W if isinstance(W, Gramian) else np.asarray(W, dtype=float)
    tr = float(np.trace(Wm))
    if kind is MetricKind.TRACE:
        return MetricValue(kind, tr)
    if eps is None:
        eps = logdet_epsilon(tr, Wm.shape[0], eps_rel)
    return MetricValue(kind, logdet(Wm, eps), eps)

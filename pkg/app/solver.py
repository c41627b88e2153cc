"""
Least-squares readout solver: Householder QR, back substitution, ridge fallback.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from app.errors import DimensionError, NumericError, SingularTriangularError, UnderdeterminedError
from application_sdk.observability.logger_adaptor import get_logger

logger = get_logger(__name__)

RIDGE_SCALE = 1e-8


class RankFlag(str, Enum):
    FULL_RANK = "full_rank"
    REGULARIZED = "regularized"


@dataclass(frozen=True, eq=False)
class LsqSolution:
    beta: np.ndarray
    residual_norm: float
    rank_flag: RankFlag
    ridge_lambda: float = 0.0


def _reflectors(A: np.ndarray) -> Tuple[List[Optional[np.ndarray]], np.ndarray]:
    """Householder reflectors v_k (unit norm, or None for a zero column) and R."""
    R = np.array(A, dtype=np.float64)
    n, M = R.shape
    reflectors: List[Optional[np.ndarray]] = []
    for k in range(M):
        x = R[k:, k]
        norm_x = np.linalg.norm(x)
        if norm_x == 0.0:
            reflectors.append(None)
            continue
        v = x.copy()
        v[0] += np.copysign(norm_x, x[0])
        v /= np.linalg.norm(v)
        R[k:, k:] -= 2.0 * np.outer(v, v @ R[k:, k:])
        R[k + 1 :, k] = 0.0
        reflectors.append(v)
    return reflectors, np.triu(R[:M])


def _apply_transpose(reflectors: List[Optional[np.ndarray]], y: np.ndarray) -> np.ndarray:
    z = np.array(y, dtype=np.float64)
    for k, v in enumerate(reflectors):
        if v is not None:
            z[k:] -= 2.0 * v * (v @ z[k:])
    return z


def _check_shape(A: np.ndarray) -> None:
    if A.ndim != 2:
        logger.error(f"least squares needs a matrix, got {A.ndim} axes")
        raise DimensionError(f"expected a matrix, got {A.ndim} axes")
    n, M = A.shape
    if n < M:
        logger.error(f"least squares with {n} rows and {M} unknowns is underdetermined")
        raise UnderdeterminedError(f"need at least {M} rows, got {n}")


def qr_factor(A: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Economy QR factorisation A = Q R.

    Args:
        A: n x M matrix with n >= M.

    Returns:
        Tuple[np.ndarray, np.ndarray]: Q (n x M, orthonormal columns) and R (M x M,
        upper triangular with a non-negative diagonal).
    """
    A = np.asarray(A, dtype=np.float64)
    _check_shape(A)
    n, M = A.shape
    reflectors, R = _reflectors(A)
    Qf = np.eye(n, M)
    for k in reversed(range(M)):
        v = reflectors[k]
        if v is not None:
            Qf[k:, :] -= 2.0 * np.outer(v, v @ Qf[k:, :])
    signs = np.where(np.diag(R) < 0.0, -1.0, 1.0)
    return Qf * signs, R * signs[:, np.newaxis]


def back_substitute(R: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Solve R beta = z for upper-triangular R.

    Raises:
        SingularTriangularError: Some |R[k, k]| falls below eps * M * max|R|.
    """
    R = np.asarray(R, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    M = R.shape[0]
    scale = np.max(np.abs(R)) if R.size else 0.0
    threshold = np.finfo(np.float64).eps * M * scale
    diagonal = np.abs(np.diag(R))
    if scale == 0.0 or np.any(diagonal < threshold):
        k = int(np.argmin(diagonal))
        raise SingularTriangularError(
            f"R[{k},{k}] = {R[k, k]:.3e} is below the singularity threshold {threshold:.3e}"
        )
    beta = np.zeros(M)
    for k in range(M - 1, -1, -1):
        beta[k] = (z[k] - R[k, k + 1 :] @ beta[k + 1 :]) / R[k, k]
    return beta


def solve_lsq(H_final: np.ndarray, Y: np.ndarray) -> LsqSolution:
    """Minimise ||H beta - Y||^2 through QR.

    A near-singular R triggers one retry on the ridge-augmented system
    [H; sqrt(lambda) I] beta = [Y; 0] with lambda = 1e-8 * trace(H^T H) / M.
    """
    H = np.asarray(H_final, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(Y))):
        logger.error("least-squares inputs contain non-finite values")
        raise NumericError("H and Y must be finite")
    _check_shape(H)
    if Y.shape != (H.shape[0],):
        logger.error(f"target shape {Y.shape} does not match {H.shape[0]} design rows")
        raise DimensionError(f"Y must have shape ({H.shape[0]},), got {Y.shape}")
    M = H.shape[1]

    reflectors, R = _reflectors(H)
    z = _apply_transpose(reflectors, Y)[:M]
    try:
        beta = back_substitute(R, z)
        flag, ridge = RankFlag.FULL_RANK, 0.0
    except SingularTriangularError as exc:
        ridge = RIDGE_SCALE * float(np.sum(H * H)) / M
        if ridge == 0.0:
            ridge = RIDGE_SCALE
        logger.info(f"rank-deficient design ({exc}); retrying with ridge lambda={ridge:.3e}")
        augmented = np.vstack([H, np.sqrt(ridge) * np.eye(M)])
        target = np.concatenate([Y, np.zeros(M)])
        reflectors, R = _reflectors(augmented)
        beta = back_substitute(R, _apply_transpose(reflectors, target)[:M])
        flag = RankFlag.REGULARIZED

    residual = float(np.linalg.norm(H @ beta - Y))
    return LsqSolution(beta=beta, residual_norm=residual, rank_flag=flag, ridge_lambda=ridge)

"""
Dense linear-algebra and elementary-statistics kernels.
All functions are pure: float64 in, float64 out, no shared state.
"""
import logging
from typing import NamedTuple

import numpy as np
import scipy.linalg as la

from src.errors import DegenerateInputError, NonFiniteError, UndefinedCorrelationError

logger = logging.getLogger(__name__)

CENTER = "center"
ZSCORE = "zscore"


class Standardized(NamedTuple):
    matrix: np.ndarray
    means: np.ndarray
    scales: np.ndarray
    constant: np.ndarray  # True where a column had zero variance (scale forced to 1)


class SvdFactors(NamedTuple):
    U: np.ndarray
    S: np.ndarray
    Vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.Vt

    @property
    def rank(self) -> int:
        return self.S.size


def as_matrix(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DegenerateInputError(f"expected a matrix, got shape {arr.shape}")
    return arr


def center_standardize(m, mode: str = CENTER) -> Standardized:
    """Center columns (and scale to unit sample SD in zscore mode).

    Columns with zero variance are centered, their scale is set to 1 and they
    are flagged in `constant`.
    """
    x = as_matrix(m)
    if x.shape[0] < 2:
        raise DegenerateInputError(f"standardizing needs at least 2 rows, got {x.shape[0]}")
    if mode not in (CENTER, ZSCORE):
        raise ValueError(f"unknown standardization mode {mode!r}")

    means = x.mean(axis=0)
    constant = np.ptp(x, axis=0) == 0
    scales = np.ones(x.shape[1])
    if mode == ZSCORE:
        sd = x.std(axis=0, ddof=1)
        scales = np.where(constant, 1.0, sd)
    if constant.any():
        logger.debug(f"{int(constant.sum())} constant column(s) left centered")
    return Standardized((x - means) / scales, means, scales, constant)


def thin_svd(m) -> SvdFactors:
    """Thin SVD with r = min(rows, cols); singular values descending."""
    x = as_matrix(m)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("SVD input contains NaN or inf")
    try:
        U, S, Vt = la.svd(x, full_matrices=False, lapack_driver="gesdd")
    except la.LinAlgError:
        logger.info("gesdd did not converge, retrying with gesvd")
        U, S, Vt = la.svd(x, full_matrices=False, lapack_driver="gesvd")
    return SvdFactors(U, S, Vt)


def pearson(x, y) -> float:
    """Pearson correlation of two equally long vectors (n >= 3, both non-constant)."""
    a = np.asarray(x, dtype=np.float64).ravel()
    b = np.asarray(y, dtype=np.float64).ravel()
    if a.size != b.size:
        raise DegenerateInputError(f"pearson needs equal lengths, got {a.size} and {b.size}")
    if a.size < 3:
        raise DegenerateInputError(f"pearson needs at least 3 samples, got {a.size}")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise UndefinedCorrelationError("correlation with a constant vector is undefined")
    da = a - a.mean()
    db = b - b.mean()
    r = float(np.dot(da, db) / np.sqrt(np.dot(da, da) * np.dot(db, db)))
    return min(1.0, max(-1.0, r))


def columnwise_pearson(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Pearson r between matching columns of two n x m matrices.

    Returns (r, undefined) where undefined marks columns in which either
    side is constant; r is NaN there.
    """
    x = as_matrix(a)
    y = as_matrix(b)
    if x.shape != y.shape:
        raise DegenerateInputError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.shape[0] < 3:
        raise DegenerateInputError(f"pearson needs at least 3 samples, got {x.shape[0]}")
    undefined = (np.ptp(x, axis=0) == 0) | (np.ptp(y, axis=0) == 0)
    dx = x - x.mean(axis=0)
    dy = y - y.mean(axis=0)
    num = np.einsum("ij,ij->j", dx, dy)
    den = np.sqrt(np.einsum("ij,ij->j", dx, dx) * np.einsum("ij,ij->j", dy, dy))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.clip(num / den, -1.0, 1.0)
    r[undefined] = np.nan
    return r, undefined

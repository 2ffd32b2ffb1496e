"""Least-squares helpers shared by the estimators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

RANK_TOL = 1e-10


class RankDeficientError(ValueError):
    """Design matrix has linearly dependent columns."""

    def __init__(self, message, dependent_columns=()):
        super().__init__(message)
        self.dependent_columns = tuple(dependent_columns)


@dataclass
class LstsqFit:
    params: np.ndarray
    resid: np.ndarray
    xtx_inv: np.ndarray
    ssr: float


def dependent_columns(X: np.ndarray, tol: float = RANK_TOL) -> list[int]:
    """Indices of columns that column-pivoted QR flags as redundant."""
    if X.shape[1] == 0:
        return []
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    sv_max = np.linalg.norm(X, 2)
    if sv_max == 0:
        return list(range(X.shape[1]))
    rank = int(np.sum(diag > tol * sv_max))
    return sorted(int(j) for j in piv[rank:])


def check_rank(X: np.ndarray, names=None, tol: float = RANK_TOL) -> None:
    dep = dependent_columns(X, tol)
    if dep:
        labels = [names[j] if names is not None else str(j) for j in dep]
        raise RankDeficientError(
            "design matrix is rank deficient; linearly dependent column(s): "
            + ", ".join(labels),
            labels,
        )


def lstsq(X: np.ndarray, y: np.ndarray, names=None, check: bool = True) -> LstsqFit:
    """Least squares through a QR factorization.

    Raises :class:`RankDeficientError` naming the redundant columns when
    ``check`` is set and the design is rank deficient.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if check:
        check_rank(X, names)
    q, r = np.linalg.qr(X, mode="reduced")
    params = scipy.linalg.solve_triangular(r, q.T @ y)
    r_inv = scipy.linalg.solve_triangular(r, np.eye(r.shape[0]))
    xtx_inv = r_inv @ r_inv.T
    resid = y - X @ params
    return LstsqFit(params, resid, xtx_inv, float(resid @ resid))


def sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)

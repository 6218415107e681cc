"""Weighted Frobenius geometry, GSVD/GQR, and rank utilities.

All "generalized" factorizations work against the A1 inner product on the
energy index via the symmetric square-root transform: factor the plainly
transformed matrix, then map the energy basis back with A1^{-1/2}. Column
signs are pinned so identical inputs give bit-identical outputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import BlockDiagSPD, SqrtPair, matrix_sqrt  # noqa: F401  (re-export)
from .errors import RankDeficient, RankRequestTooLarge, ShapeMismatch


def wfrob(Z: np.ndarray, W: np.ndarray, M: BlockDiagSPD | None = None) -> float:
    """M-weighted Frobenius inner product trace(Z M W^T); plain Frobenius if M is None."""
    Z = np.asarray(Z, dtype=float)
    W = np.asarray(W, dtype=float)
    if Z.shape != W.shape:
        raise ShapeMismatch(f"shapes {Z.shape} vs {W.shape}")
    ZM = Z if M is None else M.right_apply(Z)
    return float(np.sum(ZM * W))


def wnorm(Z: np.ndarray, M: BlockDiagSPD | None = None) -> float:
    """Weighted Frobenius norm sqrt((Z, Z)_M)."""
    return float(np.sqrt(max(wfrob(Z, Z, M), 0.0)))


def _fix_svd_signs(U: np.ndarray, Eh: np.ndarray) -> None:
    """Make the largest-magnitude entry of each U column positive (in place)."""
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U *= signs[None, :]
    Eh *= signs[None, :]


def _fix_qr_signs(Q: np.ndarray, R: np.ndarray) -> None:
    """Make diag(R) nonnegative (in place)."""
    signs = np.sign(np.diag(R)).copy()
    signs[signs == 0] = 1.0
    Q *= signs[None, :]
    R *= signs[:, None]


@dataclass(frozen=True)
class LowRankState:
    """Rank-r factors U S E^T with U^T U = E^T A1 E = I_r.

    The E-orthonormality is relative to the session's A1 and is checked by
    the producers, not here (the state does not carry the metric).
    """

    U: np.ndarray
    S: np.ndarray
    E: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        U, S, E = (np.asarray(a, dtype=float) for a in (self.U, self.S, self.E))
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "E", E)
        r = U.shape[1]
        if S.shape != (r, r) or E.shape[1] != r:
            raise ShapeMismatch("factor shapes disagree on the rank")
        if r > min(U.shape[0], E.shape[0]):
            raise RankRequestTooLarge(f"rank {r} exceeds min(m, n)")

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def matrix(self) -> np.ndarray:
        """Dense m x n coefficient matrix U S E^T."""
        return self.U @ self.S @ self.E.T

    def numerical_rank(self, tol: float) -> int:
        """Singular values of the (unweighted) dense matrix above tol.

        E is not plainly orthonormal, so factor it first: with E = Q R the
        spectrum of U S E^T equals that of S R^T.
        """
        _, R = np.linalg.qr(self.E)
        return numerical_rank(self.S @ R.T, tol)


def gsvd(F: np.ndarray, sqrt_pair: SqrtPair, r: int) -> LowRankState:
    """Rank-r truncated SVD of F against the A1 inner product.

    SVD F A1^{1/2} = U S Ehat^T, keep the r leading triples, map back
    E = A1^{-1/2} Ehat. A zero trailing singular value marks the state
    degenerate (the corresponding columns are arbitrary orthonormal).
    """
    F = np.asarray(F, dtype=float)
    m, n = F.shape
    if not 1 <= r <= min(m, n):
        raise RankRequestTooLarge(f"rank {r} not in [1, {min(m, n)}]")
    B = sqrt_pair.half.right_apply(F)
    U, s, Vt = np.linalg.svd(B, full_matrices=False)
    U = U[:, :r].copy()
    Eh = Vt[:r].T.copy()
    _fix_svd_signs(U, Eh)
    E = sqrt_pair.inv_half.left_apply(Eh)
    return LowRankState(U, np.diag(s[:r]), E, degenerate=bool(s[:r].min() <= 0.0))


def gqr(L: np.ndarray, sqrt_pair: SqrtPair) -> tuple[np.ndarray, np.ndarray]:
    """QR of L against the A1 inner product: L = E R, E^T A1 E = I.

    R is upper triangular with nonnegative diagonal. Raises RankDeficient when
    a diagonal falls below 1e-12 times the column's A1 norm.
    """
    L = np.asarray(L, dtype=float)
    if L.ndim == 1:
        L = L[:, None]
    B = sqrt_pair.half.left_apply(L)
    Q, R = np.linalg.qr(B)
    _fix_qr_signs(Q, R)
    col_norms = np.linalg.norm(B, axis=0)
    bad = np.diag(R) < 1e-12 * col_norms
    if np.any(bad):
        raise RankDeficient(f"columns {np.nonzero(bad)[0].tolist()} dependent")
    E = sqrt_pair.inv_half.left_apply(Q)
    return E, R


def weighted_gram_schmidt(B: np.ndarray, A1: BlockDiagSPD) -> tuple[np.ndarray, np.ndarray]:
    """Modified Gram-Schmidt in the A1 inner product with one re-orthogonalization.

    Same contract as gqr: B = E R, E^T A1 E = I, diag(R) >= 0. The second pass
    keeps orthonormality near 1e-10 even for nearly parallel columns.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n, r = B.shape
    if A1.n != n:
        raise ShapeMismatch("A1 does not match the column length")
    E = np.zeros((n, r))
    R = np.zeros((r, r))
    ref_norms = np.sqrt(np.einsum("nj,nj->j", B, A1.left_apply(B)))
    for i in range(r):
        v = B[:, i].copy()
        for _ in range(2):
            for j in range(i):
                c = float(E[:, j] @ A1.left_apply(v))
                R[j, i] += c
                v -= c * E[:, j]
        nrm = float(np.sqrt(v @ A1.left_apply(v)))
        if nrm < 1e-12 * ref_norms[i]:
            raise RankDeficient(f"column {i} dependent")
        R[i, i] = nrm
        E[:, i] = v / nrm
    return E, R


def numerical_rank(F: np.ndarray, tol: float) -> int:
    """Number of plain singular values strictly greater than the absolute tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    F = np.asarray(F, dtype=float)
    if F.size == 0 or not np.any(F):
        return 0
    s = np.linalg.svd(F, compute_uv=False)
    return int(np.count_nonzero(s > tol))


def orthonormality_defect(state: LowRankState, A1: BlockDiagSPD) -> float:
    """Max Frobenius defect of U^T U and E^T A1 E against the identity."""
    du = np.linalg.norm(state.U.T @ state.U - np.eye(state.rank))
    de = np.linalg.norm(state.E.T @ A1.left_apply(state.E) - np.eye(state.rank))
    return float(max(du, de))

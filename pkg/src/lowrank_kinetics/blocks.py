"""Block-diagonal SPD matrices and their factorizations.

The energy mass matrices are block diagonal (one dense (k+1)x(k+1) block per
energy cell, no cross-cell coupling), so every product, solve, and
factorization here is batched over the block axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotSPD, ShapeMismatch, SingularMass


@dataclass
class BlockDiagSPD:
    """Symmetric positive-definite block-diagonal matrix.

    blocks: (n_blocks, b, b) stack of dense symmetric blocks.
    weight_range: (min, max) of the generating weight over quadrature nodes,
        kept for diagnostics (e.g. opacity extrema); (nan, nan) if unknown.
    """

    blocks: np.ndarray
    weight_range: tuple[float, float] = (float("nan"), float("nan"))
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)
    _eig: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks, dtype=float)
        if self.blocks.ndim != 3 or self.blocks.shape[1] != self.blocks.shape[2]:
            raise ShapeMismatch(f"blocks must be (nb, b, b), got {self.blocks.shape}")

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def block_size(self) -> int:
        return self.blocks.shape[1]

    @property
    def n(self) -> int:
        return self.n_blocks * self.block_size

    def right_apply(self, Z: np.ndarray) -> np.ndarray:
        """Z @ A for Z with n columns."""
        Z = np.asarray(Z, dtype=float)
        if Z.shape[-1] != self.n:
            raise ShapeMismatch(f"last axis {Z.shape[-1]} != {self.n}")
        Zr = Z.reshape(Z.shape[:-1] + (self.n_blocks, self.block_size))
        out = np.einsum("...jb,jbc->...jc", Zr, self.blocks)
        return out.reshape(Z.shape)

    def left_apply(self, Z: np.ndarray) -> np.ndarray:
        """A @ Z for Z with n rows (1-D input returns 1-D)."""
        Z = np.asarray(Z, dtype=float)
        if Z.shape[0] != self.n:
            raise ShapeMismatch(f"first axis {Z.shape[0]} != {self.n}")
        squeeze = Z.ndim == 1
        Zc = Z[:, None] if squeeze else Z
        Zr = Zc.reshape(self.n_blocks, self.block_size, -1)
        out = np.einsum("jbc,jcp->jbp", self.blocks, Zr)
        out = out.reshape(Zc.shape)
        return out[:, 0] if squeeze else out

    def solve_left(self, B: np.ndarray) -> np.ndarray:
        """Solve A @ X = B for X with n rows."""
        B = np.asarray(B, dtype=float)
        if B.shape[0] != self.n:
            raise ShapeMismatch(f"first axis {B.shape[0]} != {self.n}")
        squeeze = B.ndim == 1
        Bc = B[:, None] if squeeze else B
        Br = Bc.reshape(self.n_blocks, self.block_size, -1)
        X = np.linalg.solve(self.blocks, Br).reshape(Bc.shape)
        return X[:, 0] if squeeze else X

    def solve_right(self, B: np.ndarray) -> np.ndarray:
        """Solve X @ A = B for B with n columns (blocks are symmetric)."""
        B = np.asarray(B, dtype=float)
        if B.shape[-1] != self.n:
            raise ShapeMismatch(f"last axis {B.shape[-1]} != {self.n}")
        lead = B.shape[:-1]
        Br = B.reshape(-1, self.n_blocks, self.block_size)  # (p, nb, b)
        rhs = np.ascontiguousarray(np.moveaxis(Br, 0, 2))   # (nb, b, p)
        X = np.linalg.solve(self.blocks, rhs)               # A_j X_j = B_j^T
        out = np.moveaxis(X, 2, 0).reshape(lead + (self.n,))
        return out

    def cholesky(self) -> np.ndarray:
        """Lower-triangular Cholesky factors (nb, b, b); raises SingularMass."""
        if self._chol is None:
            try:
                self._chol = np.linalg.cholesky(self.blocks)
            except np.linalg.LinAlgError as exc:
                raise SingularMass("block not positive definite") from exc
        return self._chol

    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        """Batched symmetric eigendecomposition: (eigvals (nb,b), eigvecs (nb,b,b))."""
        if self._eig is None:
            self._eig = np.linalg.eigh(self.blocks)
        return self._eig

    def scaled_shift(self, other: "BlockDiagSPD", scale: float) -> "BlockDiagSPD":
        """self + scale * other as a new BlockDiagSPD."""
        if other.blocks.shape != self.blocks.shape:
            raise ShapeMismatch("incompatible block structure")
        return BlockDiagSPD(self.blocks + scale * other.blocks)

    def inv_blocks(self) -> np.ndarray:
        """Explicit per-block inverses (small blocks only; used by cached steppers)."""
        eye = np.broadcast_to(np.eye(self.block_size), self.blocks.shape)
        return np.linalg.solve(self.blocks, np.ascontiguousarray(eye))

    def to_dense(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        b = self.block_size
        for j in range(self.n_blocks):
            A[j * b:(j + 1) * b, j * b:(j + 1) * b] = self.blocks[j]
        return A


@dataclass(frozen=True)
class SqrtPair:
    """Symmetric square root A^{1/2} and inverse square root A^{-1/2}."""

    half: BlockDiagSPD
    inv_half: BlockDiagSPD


def matrix_sqrt(A: BlockDiagSPD) -> SqrtPair:
    """Per-block symmetric-eigendecomposition square roots.

    Raises NotSPD on a nonpositive eigenvalue; below -1e-13 * ||block|| this
    indicates corrupted assembly rather than roundoff.
    """
    lam, phi = A.eigh()
    if np.any(lam <= 0.0):
        worst = float(lam.min())
        scale = float(np.abs(lam).max())
        raise NotSPD(f"nonpositive eigenvalue {worst} (block scale {scale})")
    root = np.sqrt(lam)
    half = np.einsum("jbc,jc,jdc->jbd", phi, root, phi)
    inv_half = np.einsum("jbc,jc,jdc->jbd", phi, 1.0 / root, phi)
    half = 0.5 * (half + np.swapaxes(half, 1, 2))
    inv_half = 0.5 * (inv_half + np.swapaxes(inv_half, 1, 2))
    return SqrtPair(BlockDiagSPD(half, A.weight_range), BlockDiagSPD(inv_half))

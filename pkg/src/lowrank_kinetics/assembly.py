"""Weighted mass matrices, moment vectors, and the discrete equilibrium.

The collision right-hand side in coefficient form is the affine map
G(F) = L0 Leta^T - F A_ea, where A_ea is the opacity-weighted energy mass
matrix and (L0, Leta) are the angular/energy moments of the constant and
the emissivity. Its unique root F_eq is rank one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .blocks import BlockDiagSPD
from .errors import NotPositive, ShapeMismatch
from .mesh import Mesh


def assemble_weighted_mass(mesh: Mesh, phi: Callable | float) -> BlockDiagSPD:
    """Energy mass matrix with weight phi(eps) * eps^2, one block per cell.

    phi must be positive at every quadrature node; the node extrema are
    recorded on the result as weight_range.
    """
    nodes = mesh.eps.nodes  # (nc, q)
    if callable(phi):
        pvals = np.asarray(phi(nodes), dtype=float)
        pvals = np.broadcast_to(pvals, nodes.shape)
    else:
        pvals = np.full(nodes.shape, float(phi))
    if np.any(pvals <= 0.0) or not np.all(np.isfinite(pvals)):
        raise NotPositive("weight must be positive and finite at quadrature nodes")
    w = mesh.eps.weights * pvals * nodes**2  # (nc, q)
    Y = mesh.eps.basis_q                     # (nc, k+1, q)
    blocks = np.einsum("jaq,jq,jbq->jab", Y, w, Y)
    blocks = 0.5 * (blocks + np.swapaxes(blocks, 1, 2))
    return BlockDiagSPD(blocks, (float(pvals.min()), float(pvals.max())))


@dataclass(frozen=True)
class MomentVectors:
    """L0 = (1, X) over angle; Leta = (eta, Y; eps^2) over energy."""

    L0: np.ndarray
    Leta: np.ndarray


def assemble_moments(mesh: Mesh, eta: Callable | float) -> MomentVectors:
    """Quadrature moments of the constant (in mu) and the emissivity (in eps)."""
    L0 = mesh.mu.quad_table() @ np.ones(mesh.mu.nodes.size)
    eps_nodes = mesh.eps.nodes.ravel()
    if callable(eta):
        evals = np.broadcast_to(np.asarray(eta(eps_nodes), dtype=float), eps_nodes.shape)
    else:
        evals = np.full(eps_nodes.shape, float(eta))
    Leta = mesh.eps.quad_table(weight=eps_nodes**2) @ evals
    return MomentVectors(L0=L0, Leta=Leta)


def eval_G(F: np.ndarray, moments: MomentVectors, A_ea: BlockDiagSPD) -> np.ndarray:
    """Collision right-hand side G(F) = L0 Leta^T - F A_ea, dense m x n."""
    F = np.asarray(F, dtype=float)
    if F.shape != (len(moments.L0), A_ea.n):
        raise ShapeMismatch(f"F shape {F.shape} inconsistent with moments/mass")
    return np.outer(moments.L0, moments.Leta) - A_ea.right_apply(F)


def eval_G_times(F: np.ndarray, E: np.ndarray, moments: MomentVectors,
                 A_ea: BlockDiagSPD) -> np.ndarray:
    """Thin product G(F) E without materializing L0 Leta^T: cost O((m+n) r)."""
    E = np.asarray(E, dtype=float)
    if E.shape[0] != A_ea.n:
        raise ShapeMismatch("E rows inconsistent with the energy dimension")
    return np.outer(moments.L0, moments.Leta @ E) - F @ A_ea.left_apply(E)


@dataclass(frozen=True)
class EquilibriumFactors:
    """Rank-1 factorization of the discrete equilibrium F_eq = U S E^T.

    U_eq has unit Euclidean norm, E_eq unit A1-norm, S_eq >= 0; degenerate
    marks the zero-emissivity case where the factors are conventional.
    """

    F_eq: np.ndarray
    U_eq: np.ndarray
    S_eq: float
    E_eq: np.ndarray
    degenerate: bool = False


def compute_equilibrium(mesh: Mesh, moments: MomentVectors, A1: BlockDiagSPD,
                        A_ea: BlockDiagSPD) -> EquilibriumFactors:
    """Solve G(F_eq) = 0 and factor: F_eq = L0 Leta^T A_ea^{-1}, rank one.

    E_eq is A_ea^{-1} Leta normalized in the A1 norm; S_eq equals the weighted
    norm of the equilibrium. Zero emissivity yields a flagged zero equilibrium
    with canonical unit factors.
    """
    m, n = len(moments.L0), A1.n
    if A_ea.n != n:
        raise ShapeMismatch("A1 and A_ea disagree on the energy dimension")
    norm_L0 = float(np.linalg.norm(moments.L0))
    if not np.any(moments.Leta):
        U = np.zeros(m)
        U[0] = 1.0
        E = np.zeros(n)
        E[0] = 1.0
        E /= np.sqrt(E @ A1.left_apply(E))
        return EquilibriumFactors(np.zeros((m, n)), U, 0.0, E, degenerate=True)
    E_raw = A_ea.solve_left(moments.Leta)
    s_E = float(np.sqrt(E_raw @ A1.left_apply(E_raw)))
    U_eq = moments.L0 / norm_L0
    E_eq = E_raw / s_E
    S_eq = norm_L0 * s_E
    F_eq = np.outer(U_eq * S_eq, E_eq)
    return EquilibriumFactors(F_eq, U_eq, S_eq, E_eq)

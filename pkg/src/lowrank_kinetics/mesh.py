"""Phase-space mesh, local orthonormal Legendre bases, and DG projection.

The domain is [-1, 1] x [0, eps_max] in (mu, eps). Each direction carries a
cell partition with degree-k Legendre bases that are orthonormal in the
plain (unweighted) L2 inner product of the cell. Global indexing is
cell-major, local degree ascending, which fixes the row/column layout of
every coefficient matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .blocks import BlockDiagSPD
from .errors import InvalidGrid, OutOfDomain, ShapeMismatch


@dataclass(frozen=True)
class Axis:
    """One direction of the tensor mesh: edges, quadrature, and basis tables."""

    edges: np.ndarray
    k: int
    quad_order: int
    nodes: np.ndarray = field(init=False)    # (ncells, q) physical quadrature nodes
    weights: np.ndarray = field(init=False)  # (ncells, q)
    basis_q: np.ndarray = field(init=False)  # (ncells, k+1, q) basis at the nodes

    def __post_init__(self):
        xg, wg = np.polynomial.legendre.leggauss(self.quad_order)
        h = np.diff(self.edges)
        nodes = self.edges[:-1, None] + 0.5 * (xg[None, :] + 1.0) * h[:, None]
        weights = 0.5 * h[:, None] * wg[None, :]
        vander = np.polynomial.legendre.legvander(xg, self.k)  # (q, k+1)
        scale = np.sqrt((2.0 * np.arange(self.k + 1) + 1.0)[None, :] / h[:, None])
        basis_q = scale[:, :, None] * vander.T[None, :, :]
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "basis_q", basis_q)

    @property
    def n_cells(self) -> int:
        return len(self.edges) - 1

    @property
    def dim(self) -> int:
        return (self.k + 1) * self.n_cells

    def quad_table(self, weight: np.ndarray | None = None) -> np.ndarray:
        """Dense (dim, ncells*q) table of basis * quadrature weight (* extra weight)."""
        nc, q = self.nodes.shape
        w = self.weights if weight is None else self.weights * weight.reshape(nc, q)
        out = np.zeros((self.dim, nc * q))
        for j in range(nc):
            out[j * (self.k + 1):(j + 1) * (self.k + 1), j * q:(j + 1) * q] = \
                self.basis_q[j] * w[j][None, :]
        return out

    def locate(self, z: np.ndarray) -> np.ndarray:
        """Cell index per point; cells are left-closed ([e_i, e_{i+1}), last closed)."""
        z = np.asarray(z, dtype=float)
        if np.any(z < self.edges[0]) or np.any(z > self.edges[-1]):
            raise OutOfDomain(f"point outside [{self.edges[0]}, {self.edges[-1]}]")
        idx = np.searchsorted(self.edges, z, side="right") - 1
        return np.clip(idx, 0, self.n_cells - 1)

    def basis_matrix_at(self, z: np.ndarray) -> np.ndarray:
        """Dense (dim, npts) basis table at arbitrary points inside the domain."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        cells = self.locate(z)
        a = self.edges[cells]
        h = self.edges[cells + 1] - a
        ref = 2.0 * (z - a) / h - 1.0
        vander = np.polynomial.legendre.legvander(ref, self.k)  # (npts, k+1)
        scale = np.sqrt((2.0 * np.arange(self.k + 1) + 1.0)[None, :] / h[:, None])
        vals = (vander * scale).T  # (k+1, npts)
        out = np.zeros((self.dim, len(z)))
        cols = np.arange(len(z))
        for l in range(self.k + 1):
            out[cells * (self.k + 1) + l, cols] = vals[l]
        return out


@dataclass(frozen=True)
class Mesh:
    """Tensor phase-space mesh with per-direction bases and quadrature."""

    mu_edges: np.ndarray
    eps_edges: np.ndarray
    k: int
    quad_order: int
    mu: Axis = field(init=False)
    eps: Axis = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "mu", Axis(self.mu_edges, self.k, self.quad_order))
        object.__setattr__(self, "eps", Axis(self.eps_edges, self.k, self.quad_order))

    @property
    def n_mu(self) -> int:
        return self.mu.n_cells

    @property
    def n_eps(self) -> int:
        return self.eps.n_cells

    @property
    def m(self) -> int:
        return self.mu.dim

    @property
    def n(self) -> int:
        return self.eps.dim

    @property
    def eps_max(self) -> float:
        return float(self.eps_edges[-1])

    def refined_axis(self, extra_order: int = 2) -> "Mesh":
        """Same mesh with a higher quadrature order (for over-integrated norms)."""
        return Mesh(self.mu_edges, self.eps_edges, self.k, self.quad_order + extra_order)


def _check_edges(edges: np.ndarray, lo: float, hi: float, name: str) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2:
        raise InvalidGrid(f"{name} needs at least two edges")
    if not np.all(np.diff(edges) > 0):
        raise InvalidGrid(f"{name} must be strictly increasing")
    if abs(edges[0] - lo) > 1e-14 or abs(edges[-1] - hi) > 1e-14 * max(1.0, abs(hi)):
        raise InvalidGrid(f"{name} must span [{lo}, {hi}]")
    edges = edges.copy()
    edges[0], edges[-1] = lo, hi
    return edges


def build_mesh(n_mu: int, n_eps: int, k: int, eps_max: float,
               quad_order: int | None = None) -> Mesh:
    """Uniform mesh with degree-k tensor Legendre basis.

    quad_order defaults to k+4, exact for every polynomial integrand appearing
    in the weighted mass matrices with quadratic opacity.
    """
    if n_mu < 1 or n_eps < 1:
        raise InvalidGrid("cell counts must be positive")
    if k < 0:
        raise InvalidGrid("degree must be nonnegative")
    if eps_max <= 0:
        raise InvalidGrid("eps_max must be positive")
    if quad_order is None:
        quad_order = k + 4
    if quad_order < k + 3:
        raise InvalidGrid(f"quad_order {quad_order} < k+3 loses mass-matrix exactness")
    mu_edges = np.linspace(-1.0, 1.0, n_mu + 1)
    eps_edges = np.linspace(0.0, eps_max, n_eps + 1)
    return Mesh(mu_edges, eps_edges, k, quad_order)


def build_mesh_from_edges(mu_edges, eps_edges, k: int,
                          quad_order: int | None = None) -> Mesh:
    """Nonuniform variant; edges must span [-1,1] and [0, eps_max] exactly."""
    if quad_order is None:
        quad_order = k + 4
    if quad_order < k + 3:
        raise InvalidGrid(f"quad_order {quad_order} < k+3 loses mass-matrix exactness")
    mu_edges = _check_edges(np.asarray(mu_edges), -1.0, 1.0, "mu_edges")
    eps_edges = np.asarray(eps_edges, dtype=float)
    eps_edges = _check_edges(eps_edges, 0.0, float(eps_edges[-1]), "eps_edges")
    if k < 0:
        raise InvalidGrid("degree must be nonnegative")
    return Mesh(mu_edges, eps_edges, k, quad_order)


def _eval_field(f: Callable, mu: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Evaluate f on the tensor grid mu x eps; accepts f(mu, eps) or f(eps)."""
    try:
        vals = f(mu[:, None], eps[None, :])
    except TypeError:
        vals = np.broadcast_to(np.asarray(f(eps), dtype=float)[None, :],
                               (len(mu), len(eps)))
    return np.broadcast_to(np.asarray(vals, dtype=float), (len(mu), len(eps)))


def project_initial(mesh: Mesh, f0: Callable, A1: BlockDiagSPD) -> np.ndarray:
    """Weighted L2 projection of f0 into the DG space: F0 solves F0 A1 = R.

    R_ij = (f0, x_i y_j; eps^2) by Gauss quadrature. A1 must come from the
    same mesh; a non-SPD block raises SingularMass out of the solve.
    """
    if A1.n != mesh.n:
        raise ShapeMismatch("A1 does not match the mesh")
    A1.cholesky()  # SPD check up front
    mu_nodes = mesh.mu.nodes.ravel()
    eps_nodes = mesh.eps.nodes.ravel()
    vals = _eval_field(f0, mu_nodes, eps_nodes)
    if not np.all(np.isfinite(vals)):
        raise ValueError("initial field not finite at quadrature nodes")
    Xw = mesh.mu.quad_table()
    Yw2 = mesh.eps.quad_table(weight=eps_nodes**2)
    R = Xw @ vals @ Yw2.T
    return A1.solve_right(R)


def eval_dg(mesh: Mesh, F: np.ndarray, mu, eps) -> np.ndarray | float:
    """Evaluate the DG function X(mu)^T F Y(eps) at points (pairwise)."""
    F = np.asarray(F, dtype=float)
    if F.shape != (mesh.m, mesh.n):
        raise ShapeMismatch(f"F must be {(mesh.m, mesh.n)}, got {F.shape}")
    scalar = np.isscalar(mu) and np.isscalar(eps)
    mu_a = np.atleast_1d(np.asarray(mu, dtype=float))
    eps_a = np.atleast_1d(np.asarray(eps, dtype=float))
    mu_a, eps_a = np.broadcast_arrays(mu_a, eps_a)
    X = mesh.mu.basis_matrix_at(mu_a.ravel())   # (m, p)
    Y = mesh.eps.basis_matrix_at(eps_a.ravel())  # (n, p)
    out = np.einsum("ap,ab,bp->p", X, F, Y)
    return float(out[0]) if scalar else out.reshape(mu_a.shape)


def eval_dg_grid(mesh: Mesh, F: np.ndarray, mu_pts: np.ndarray,
                 eps_pts: np.ndarray) -> np.ndarray:
    """Evaluate on the tensor grid mu_pts x eps_pts: returns (len(mu), len(eps))."""
    X = mesh.mu.basis_matrix_at(np.asarray(mu_pts, dtype=float))
    Y = mesh.eps.basis_matrix_at(np.asarray(eps_pts, dtype=float))
    return X.T @ np.asarray(F, dtype=float) @ Y


def weighted_field_norm(mesh: Mesh, f: Callable, extra_order: int = 0) -> float:
    """Quadrature value of ||eps f|| = sqrt(int f^2 eps^2 dmu deps)."""
    m = mesh if extra_order == 0 else mesh.refined_axis(extra_order)
    mu_nodes = m.mu.nodes.ravel()
    eps_nodes = m.eps.nodes.ravel()
    vals = _eval_field(f, mu_nodes, eps_nodes)
    wmu = m.mu.weights.ravel()
    weps = m.eps.weights.ravel() * eps_nodes**2
    return float(np.sqrt(wmu @ vals**2 @ weps))

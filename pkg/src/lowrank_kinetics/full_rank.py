"""Backward-Euler stepping of the full-rank DG scheme and its diagnostics.

One step solves F'(A1 + dt A_ea) = F A1 + dt L0 Leta^T, which is a per-block
SPD solve applied to the energy index. For stepping loops the solve is folded
into a cached affine update F' = F C + D with C = A1 (A1 + dt A_ea)^{-1}.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .assembly import EquilibriumFactors, MomentVectors
from .blocks import BlockDiagSPD
from .errors import ShapeMismatch, SingularSystem
from .mesh import Mesh, eval_dg_grid
from .weighted_linalg import numerical_rank, wnorm


@dataclass(frozen=True)
class FullRunConfig:
    dt: float
    n_steps: int
    record_every: int = 1
    rank_tol: float | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 0 or self.record_every < 1:
            raise ValueError("bad step counts")


@dataclass(frozen=True)
class StepRecord:
    step: int
    time: float
    err_exact: float | None
    err_eq: float | None
    num_rank: int | None
    norm: float


class FullRankStepper:
    """Caches the shifted factorization for a fixed dt.

    The per-step update is F <- F C + D with C = A1 (A1 + dt A_ea)^{-1}
    (block diagonal) and rank-one D = dt L0 ((A1 + dt A_ea)^{-1} Leta)^T.
    """

    def __init__(self, A1: BlockDiagSPD, A_ea: BlockDiagSPD,
                 moments: MomentVectors, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        shifted = A1.scaled_shift(A_ea, dt)
        try:
            shifted.cholesky()
        except Exception as exc:  # pragma: no cover - impossible for SPD inputs
            raise SingularSystem("shifted mass matrix not SPD") from exc
        # C_j = A1_j M_j^{-1} = (M_j^{-1} A1_j)^T by symmetry
        Cjt = np.linalg.solve(shifted.blocks, A1.blocks)
        self.C = BlockDiagSPD(np.ascontiguousarray(np.swapaxes(Cjt, 1, 2)))
        self.d_row = dt * shifted.solve_left(moments.Leta)
        self.L0 = moments.L0
        self.dt = dt

    def step(self, F: np.ndarray) -> np.ndarray:
        return self.C.right_apply(F) + np.outer(self.L0, self.d_row)


def step_full(F: np.ndarray, dt: float, A1: BlockDiagSPD, A_ea: BlockDiagSPD,
              moments: MomentVectors,
              stepper: FullRankStepper | None = None) -> np.ndarray:
    """One backward-Euler step of the full-rank scheme (unconditionally solvable)."""
    if stepper is None:
        stepper = FullRankStepper(A1, A_ea, moments, dt)
    elif stepper.dt != dt:
        raise ValueError("stepper was cached for a different dt")
    return stepper.step(np.asarray(F, dtype=float))


def weighted_l2_error(mesh: Mesh, F: np.ndarray, ref, A1: BlockDiagSPD,
                      extra_order: int = 2) -> float:
    """Weighted L2 distance ||eps (f_h - ref)||.

    A coefficient-matrix ref uses the exact A1-weighted norm of the
    difference; a callable ref is integrated with quad_order + extra_order
    Gauss points per cell to avoid superconvergence artifacts.
    """
    F = np.asarray(F, dtype=float)
    if F.shape != (mesh.m, mesh.n):
        raise ShapeMismatch(f"F must be {(mesh.m, mesh.n)}")
    if isinstance(ref, np.ndarray):
        if ref.shape != F.shape:
            raise ShapeMismatch("reference coefficient matrix has a different shape")
        return wnorm(F - ref, A1)
    over = mesh.refined_axis(extra_order)
    mu_nodes = over.mu.nodes.ravel()
    eps_nodes = over.eps.nodes.ravel()
    fh = eval_dg_grid(mesh, F, mu_nodes, eps_nodes)
    fr = ref(mu_nodes[:, None], eps_nodes[None, :])
    wmu = over.mu.weights.ravel()
    weps = over.eps.weights.ravel() * eps_nodes**2
    diff = fh - fr
    return float(np.sqrt(wmu @ diff**2 @ weps))


def run_full(F0: np.ndarray, config: FullRunConfig, mesh: Mesh,
             A1: BlockDiagSPD, A_ea: BlockDiagSPD, moments: MomentVectors,
             eq: EquilibriumFactors | None = None,
             exact: Callable | None = None) -> list[StepRecord]:
    """Iterate step_full, recording every record_every steps (and step 0, final).

    exact, if given, is a callable (mu, eps, t); err_eq is measured against
    the discrete equilibrium coefficient matrix.
    """
    stepper = FullRankStepper(A1, A_ea, moments, config.dt)
    F = np.asarray(F0, dtype=float).copy()
    records: list[StepRecord] = []

    def record(step: int, F: np.ndarray):
        t = step * config.dt
        err_exact = None
        if exact is not None:
            err_exact = weighted_l2_error(mesh, F, lambda mu, eps: exact(mu, eps, t), A1)
        err_eq = None if eq is None else wnorm(F - eq.F_eq, A1)
        nr = None if config.rank_tol is None else numerical_rank(F, config.rank_tol)
        records.append(StepRecord(step, t, err_exact, err_eq, nr, wnorm(F, A1)))

    record(0, F)
    for s in range(1, config.n_steps + 1):
        F = stepper.step(F)
        if s % config.record_every == 0 or s == config.n_steps:
            record(s, F)
    return records


def decay_ratios(errors: Sequence[float], floor: float = 1e-12) -> list[float | None]:
    """Per-step err ratios e[n]/e[n-1]; None where the numerator is under floor."""
    out: list[float | None] = []
    for prev, cur in zip(errors[:-1], errors[1:]):
        out.append(cur / prev if (cur > floor and prev > 0) else None)
    return out

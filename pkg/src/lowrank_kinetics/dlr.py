"""Semi-implicit unconventional integrator for the weighted low-rank DG scheme.

One step updates the bases by backward-Euler solves of the K and L matrix
equations (data-independent, so logically concurrent), projects the old core
onto the new bases, and finishes with a backward-Euler solve for the core.
All three solves are shifted SPD systems, so the step is unconditionally
well posed for any dt > 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .assembly import EquilibriumFactors, MomentVectors
from .blocks import BlockDiagSPD, SqrtPair
from .errors import InvariantViolation, SkipConditionViolated
from .mesh import Mesh
from .weighted_linalg import LowRankState, gqr, gsvd, wnorm


@dataclass(frozen=True)
class SIUIConfig:
    dt: float
    n_steps: int
    rank: int
    skip_k_step: bool = False
    record_every: int = 1
    diag_level: str = "basic"  # "basic" | "theory"
    rank_tol: float | None = None

    def __post_init__(self):
        if self.dt <= 0 or self.rank < 1:
            raise ValueError("dt must be positive and rank >= 1")
        if self.diag_level not in ("basic", "theory"):
            raise ValueError("diag_level must be 'basic' or 'theory'")


def init_low_rank(F0: np.ndarray, r: int, sqrt_pair: SqrtPair) -> LowRankState:
    """Rank-r GSVD truncation of the initial coefficient matrix.

    Truncation contracts the weighted norm, so the stability hypothesis
    ||eps f_hat_0|| <= ||eps f_h0|| holds by construction.
    """
    return gsvd(F0, sqrt_pair, r)


def _fix_qr(K: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Q, R = np.linalg.qr(K)
    signs = np.sign(np.diag(R)).copy()
    signs[signs == 0] = 1.0
    return Q * signs[None, :], R * signs[:, None]


def k_step(state: LowRankState, dt: float, moments: MomentVectors,
           A_ea: BlockDiagSPD) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward-Euler K update: K'(I + dt B) = K + dt L0 (Leta^T E), B = E^T A_ea E.

    Returns (K_new, U_new, M) with K_new = U_new R (sign-fixed QR) and
    M = U_new^T U_old.
    """
    E, U, S = state.E, state.U, state.S
    B = E.T @ A_ea.left_apply(E)
    rhs = U @ S + dt * np.outer(moments.L0, moments.Leta @ E)
    sys = np.eye(state.rank) + dt * B
    K_new = np.linalg.solve(sys.T, rhs.T).T
    U_new, _ = _fix_qr(K_new)
    return K_new, U_new, U_new.T @ U


def l_step(state: LowRankState, dt: float, moments: MomentVectors,
           A1: BlockDiagSPD, A_ea: BlockDiagSPD, sqrt_pair: SqrtPair,
           shifted: BlockDiagSPD | None = None
           ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward-Euler L update: (A1 + dt A_ea) L' = A1 L + dt Leta (L0^T U).

    Returns (L_new, E_new, N) with L_new = E_new R (generalized QR against A1)
    and N = E_new^T A1 E_old. RankDeficient propagates from the factorization;
    recovery (e.g. random completion) is the caller's explicit choice.
    """
    L = state.E @ state.S.T
    rhs = A1.left_apply(L) + dt * np.outer(moments.Leta, moments.L0 @ state.U)
    if shifted is None:
        shifted = A1.scaled_shift(A_ea, dt)
    L_new = shifted.solve_left(rhs)
    E_new, _ = gqr(L_new, sqrt_pair)
    return L_new, E_new, E_new.T @ A1.left_apply(state.E)


def s_step(U_new: np.ndarray, E_new: np.ndarray, M: np.ndarray, N: np.ndarray,
           state: LowRankState, dt: float, moments: MomentVectors,
           A_ea: BlockDiagSPD) -> np.ndarray:
    """Project the core onto the new bases, then backward-Euler core solve.

    S* = M S N^T is an orthogonal projection of the old iterate, so its
    Frobenius norm never grows; that contract is enforced here because a
    violation means the bases lost orthonormality upstream.
    """
    S_star = M @ state.S @ N.T
    limit = np.linalg.norm(state.S) * (1.0 + 1e-12) + 1e-12
    if np.linalg.norm(S_star) > limit:
        raise InvariantViolation("core projection increased the Frobenius norm")
    B = E_new.T @ A_ea.left_apply(E_new)
    rhs = S_star + dt * np.outer(U_new.T @ moments.L0, moments.Leta @ E_new)
    sys = np.eye(S_star.shape[0]) + dt * B
    return np.linalg.solve(sys.T, rhs.T).T


def siui_step(state: LowRankState, dt: float, moments: MomentVectors,
              A1: BlockDiagSPD, A_ea: BlockDiagSPD, sqrt_pair: SqrtPair,
              skip_k_step: bool = False,
              eq: EquilibriumFactors | None = None,
              shifted: BlockDiagSPD | None = None) -> LowRankState:
    """One step of the semi-implicit unconventional integrator.

    The K and L updates read only the input state; the core update uses both
    new bases. skip_k_step freezes U and is legal only when the equilibrium
    angular factor lies in span(U); the guard never falls back silently.
    """
    if skip_k_step:
        if eq is None:
            raise SkipConditionViolated("skip requested without equilibrium factors")
        proj = float(np.linalg.norm(state.U.T @ eq.U_eq))
        if proj < 1.0 - 1e-8:
            raise SkipConditionViolated(f"||P_U U_eq|| = {proj:.12f} is below 1")
        U_new = state.U
        M = np.eye(state.rank)
    else:
        _, U_new, M = k_step(state, dt, moments, A_ea)
    _, E_new, N = l_step(state, dt, moments, A1, A_ea, sqrt_pair, shifted)
    S_new = s_step(U_new, E_new, M, N, state, dt, moments, A_ea)
    return LowRankState(U_new, S_new, E_new)


def state_eq_error(state: LowRankState, eq: EquilibriumFactors,
                   A1: BlockDiagSPD) -> float:
    """||U S E^T - F_eq||_{A1}.

    Formed densely: the factored Gram-matrix route loses the difference to
    cancellation once it drops below ~1e-8, and the deep-decay diagnostics
    need the 1e-12 range.
    """
    return wnorm(state.matrix() - eq.F_eq, A1)


@dataclass(frozen=True)
class TheoryDiagnostics:
    """Alignment numbers and convergence-theory thresholds for one state.

    beta_n and e_proj_n are the angular/energy alignments of the equilibrium
    factors with the current bases (both in [0, 1]); alpha_n is the
    opacity-weighted oblique alignment of the energy factor. eq_proj_err is
    the distance from the equilibrium to its projection onto the current
    low-rank trial space. dt0/dt1/dt2 are step thresholds for the supplied
    (beta, alpha, delta); c the contraction factor at the supplied dt.
    """

    beta_n: float
    e_proj_n: float
    alpha_n: float
    err_eq: float
    eq_proj_err: float
    c: float
    delta_chi_budget: float
    dt0: float
    dt1: float
    dt2: float


@dataclass(frozen=True)
class DiagnosticParams:
    r: int
    beta: float
    alpha: float
    delta: float
    dt: float


def threshold_dts(r: int, beta: float, alpha: float, delta: float,
                  chi_min: float, chi_max: float) -> tuple[float, float, float]:
    """(dt0, dt1, dt2): step-size thresholds of the convergence theory."""
    rt = np.sqrt(r)
    dt1 = rt / (beta * delta * chi_min) if beta > 0 else np.inf
    dt2 = rt * np.sqrt(chi_max) / (alpha * delta * chi_min**1.5) if alpha > 0 else np.inf
    if beta > 0 and alpha > 0:
        dt0 = (np.sqrt(2.0) / delta) * max(rt / (beta * chi_min),
                                           rt * np.sqrt(chi_max) / (alpha * chi_min**1.5))
    else:
        dt0 = np.inf
    return float(dt0), float(dt1), float(dt2)


def theory_diagnostics(state: LowRankState, eq: EquilibriumFactors,
                       A1: BlockDiagSPD, A_ea: BlockDiagSPD,
                       params: DiagnosticParams) -> TheoryDiagnostics:
    """Alignment diagnostics of a state against the equilibrium factorization.

    A degenerate (zero) equilibrium yields flagged zeros for the alignments.
    """
    chi_min, chi_max = A_ea.weight_range
    U, E = state.U, state.E
    if eq.S_eq == 0.0:
        beta = e_proj = alpha = eq_proj = 0.0
        err_eq = wnorm(state.matrix(), A1)
    else:
        beta = float(np.linalg.norm(U.T @ eq.U_eq))
        A1Eeq = A1.left_apply(eq.E_eq)
        e_proj = float(np.linalg.norm(E.T @ A1Eeq))
        B = E.T @ A_ea.left_apply(E)
        v = np.linalg.solve(B, E.T @ A_ea.left_apply(eq.E_eq))
        alpha = float(np.linalg.norm(v))
        err_eq = state_eq_error(state, eq, A1)
        # projection of F_eq onto span(U) x span(E): core S_eq (U^T U_eq)(E^T A1 E_eq)^T
        S_proj = eq.S_eq * np.outer(U.T @ eq.U_eq, E.T @ A1Eeq)
        eq_proj = wnorm(eq.F_eq - U @ S_proj @ E.T, A1)
    dt0, dt1, dt2 = threshold_dts(params.r, params.beta, params.alpha,
                                  params.delta, chi_min, chi_max)
    return TheoryDiagnostics(
        beta_n=beta, e_proj_n=e_proj, alpha_n=alpha, err_eq=err_eq,
        eq_proj_err=eq_proj, c=1.0 / (1.0 + params.dt * chi_min),
        delta_chi_budget=(1.0 + chi_max / chi_min) * params.delta,
        dt0=dt0, dt1=dt1, dt2=dt2,
    )


@dataclass(frozen=True)
class BoundCheck:
    step: int
    name: str
    lhs: float
    rhs: float
    hypotheses_met: bool

    @property
    def holds(self) -> bool:
        return (not self.hypotheses_met) or self.lhs <= self.rhs + 1e-9


@dataclass(frozen=True)
class BoundReport:
    checks: list[BoundCheck]

    @property
    def violations(self) -> list[BoundCheck]:
        return [c for c in self.checks if not c.holds]

    @property
    def asserted(self) -> list[BoundCheck]:
        return [c for c in self.checks if c.hypotheses_met]


def check_projection_bounds(diags: Sequence[TheoryDiagnostics],
                            eq: EquilibriumFactors, r: int, dt: float,
                            beta: float, alpha: float, delta: float,
                            chi_min: float, chi_max: float) -> BoundReport:
    """Evaluate the projection-alignment and decay bounds along a run.

    diags[n] describes the state after n steps. Each inequality is asserted
    only at steps where its hypotheses held (alignments at or above beta and
    alpha, dt at or above the matching threshold); the report never raises.
    """
    checks: list[BoundCheck] = []
    if eq.S_eq == 0.0 or not diags:
        return BoundReport(checks)
    s2 = eq.S_eq**2
    c = 1.0 / (1.0 + dt * chi_min)
    delta_chi = (1.0 + chi_max / chi_min) * delta
    dt0, dt1, dt2 = threshold_dts(r, beta, alpha, delta, chi_min, chi_max)
    tol = 1e-12
    for n in range(len(diags) - 1):
        prev, cur = diags[n], diags[n + 1]
        rhs = (delta**2 / s2) * prev.err_eq**2
        hyp_e = prev.beta_n >= beta - tol and dt >= dt1 - tol
        checks.append(BoundCheck(n + 1, "energy_alignment",
                                 1.0 - cur.e_proj_n**2, rhs, hyp_e))
        hyp_u = prev.alpha_n >= alpha - tol and dt >= dt2 - tol
        checks.append(BoundCheck(n + 1, "angular_alignment",
                                 1.0 - cur.beta_n, rhs, hyp_u))
    hyp_run = dt >= dt0 - tol
    for n in range(1, len(diags)):
        hyp_run = hyp_run and diags[n - 1].beta_n >= beta - tol \
            and diags[n - 1].alpha_n >= alpha - tol
        checks.append(BoundCheck(n, "multi_step_decay", diags[n].err_eq,
                                 (c + delta_chi)**n * diags[0].err_eq, hyp_run))
    return BoundReport(checks)


def g_gamma_curve(alpha: float, chi_ratio: float,
                  samples: int = 10_000) -> tuple[np.ndarray, float]:
    """Tabulate the alignment-transfer function g on (alpha, 1].

    g(gamma) = gamma^2 (1 - tau) + (1 - gamma^2) chi_ratio (1 - 1/tau) with
    tau = (1 - alpha^2/gamma^2)/2. Returns (table (samples, 2), gamma_star)
    where gamma_star is the smallest sampled gamma from which g stays at or
    above alpha^2 up to 1 (it exists: g(1) = (1 + alpha^2)/2 > alpha^2).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    gammas = alpha + (1.0 - alpha) * np.arange(1, samples + 1) / samples
    tau = 0.5 * (1.0 - alpha**2 / gammas**2)
    g = gammas**2 * (1.0 - tau) + (1.0 - gammas**2) * chi_ratio * (1.0 - 1.0 / tau)
    ok = g >= alpha**2
    bad = np.nonzero(~ok)[0]
    start = 0 if len(bad) == 0 else bad[-1] + 1
    gamma_star = float(gammas[min(start, samples - 1)])
    return np.column_stack([gammas, g]), gamma_star


@dataclass(frozen=True)
class DLRStepRecord:
    step: int
    time: float
    err_exact: float | None
    err_eq: float | None
    num_rank: int | None
    norm: float
    beta: float | None = None
    e_proj: float | None = None
    alpha: float | None = None


@dataclass(frozen=True)
class DLRRunResult:
    records: list[DLRStepRecord]
    diags: list[TheoryDiagnostics] | None
    final_state: LowRankState


def state_exact_error(mesh: Mesh, state: LowRankState, exact_t: Callable,
                      extra_order: int = 2) -> float:
    """||eps (f_hat - f)|| by over-integrated quadrature, via thin factors."""
    over = mesh.refined_axis(extra_order)
    mu_nodes = over.mu.nodes.ravel()
    eps_nodes = over.eps.nodes.ravel()
    XU = mesh.mu.basis_matrix_at(mu_nodes).T @ state.U    # (Pmu, r)
    YE = mesh.eps.basis_matrix_at(eps_nodes).T @ state.E  # (Peps, r)
    fh = XU @ state.S @ YE.T
    fr = exact_t(mu_nodes[:, None], eps_nodes[None, :])
    wmu = over.mu.weights.ravel()
    weps = over.eps.weights.ravel() * eps_nodes**2
    diff = fh - fr
    return float(np.sqrt(wmu @ diff**2 @ weps))


def run_siui(state0: LowRankState, config: SIUIConfig, mesh: Mesh,
             A1: BlockDiagSPD, A_ea: BlockDiagSPD, moments: MomentVectors,
             sqrt_pair: SqrtPair, eq: EquilibriumFactors | None = None,
             exact: Callable | None = None,
             diag_params: DiagnosticParams | None = None) -> DLRRunResult:
    """Advance the integrator, recording every record_every steps (plus 0, final).

    diag_level="theory" additionally evaluates the alignment diagnostics at
    every step (not just recorded ones) so bound checks can use them.
    """
    shifted = A1.scaled_shift(A_ea, config.dt)
    shifted.cholesky()
    state = state0
    records: list[DLRStepRecord] = []
    diags: list[TheoryDiagnostics] | None = None
    want_theory = config.diag_level == "theory"
    if want_theory:
        if eq is None:
            raise ValueError("theory diagnostics need the equilibrium factors")
        if diag_params is None:
            diag_params = DiagnosticParams(r=state0.rank, beta=0.0, alpha=0.0,
                                           delta=1.0, dt=config.dt)
        diags = []

    def snapshot(step: int, state: LowRankState):
        t = step * config.dt
        err_exact = None
        if exact is not None:
            err_exact = state_exact_error(mesh, state,
                                          lambda mu, eps: exact(mu, eps, t))
        err_eq = None if eq is None else state_eq_error(state, eq, A1)
        nr = None if config.rank_tol is None else state.numerical_rank(config.rank_tol)
        nrm = wnorm(state.matrix(), A1)
        d = None
        if want_theory:
            d = theory_diagnostics(state, eq, A1, A_ea, diag_params)
            diags.append(d)
        records.append(DLRStepRecord(
            step, t, err_exact, err_eq, nr, nrm,
            beta=None if d is None else d.beta_n,
            e_proj=None if d is None else d.e_proj_n,
            alpha=None if d is None else d.alpha_n))

    snapshot(0, state)
    for s in range(1, config.n_steps + 1):
        state = siui_step(state, config.dt, moments, A1, A_ea, sqrt_pair,
                          skip_k_step=config.skip_k_step, eq=eq, shifted=shifted)
        if s % config.record_every == 0 or s == config.n_steps:
            snapshot(s, state)
        elif want_theory:
            diags.append(theory_diagnostics(state, eq, A1, A_ea, diag_params))
    return DLRRunResult(records, diags, state)

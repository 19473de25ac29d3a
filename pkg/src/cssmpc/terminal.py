"""Terminal ingredients for the receding-horizon controller.

Builds everything the per-step program needs at the end of the horizon:
a stationary covariance Sigma_f that some static feedback can hold, the
gain K_tilde that holds it, the mean penalty P_mean, tightened terminal
half-spaces, and the maximal positively invariant mean set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import chance, conic, linalg
from .model import ConstraintRow, HalfspaceSet


class TerminalError(ValueError):
    """Base class for terminal-ingredient failures."""


class SvdMismatch(TerminalError):
    """The paired factorizations do not share their left factor."""


class UnstableResult(TerminalError):
    """Computed gain fails the fixed-point or stability post-check."""


class TerminalSetEmpty(TerminalError):
    """Tightened terminal rows exclude the origin."""


class SolverInfeasible(TerminalError):
    """Conic solve reported infeasibility."""


class NotFinitelyDetermined(TerminalError):
    """Invariant-set iteration hit the cap without stabilizing."""


class Unbounded(TerminalError):
    """Redundancy subproblems stayed unbounded to the iteration cap."""


@dataclass(frozen=True)
class TerminalIngredients:
    Sigma_f: np.ndarray
    K_tilde: np.ndarray
    P_mean: np.ndarray
    X_f_mu: HalfspaceSet
    provenance: str


def lyapunov_lqr_cov(sys, Q, R):
    """Stationary covariance under the infinite-horizon LQR gain.

    Returns (Sigma_f, K_lqr) with Sigma_f the steady state of the
    noise-driven closed loop.
    """
    P, K = linalg.dare(sys.A, sys.B, Q, R)
    Sigma_f = linalg.dlyap(sys.A + sys.B @ K, sys.D @ sys.D.T, "forward")
    return Sigma_f, K


def lqr_propagated_cov(sys, Q, R, N):
    """Closed-loop LQR covariance at the last in-horizon state.

    Starts from a zero covariance at the current step and runs the
    noise-driven recursion up to step N-1 of an N-step horizon.
    """
    _, K = linalg.dare(sys.A, sys.B, Q, R)
    F = sys.A + sys.B @ K
    W = sys.D @ sys.D.T
    S = np.zeros_like(W)
    for _ in range(max(0, N - 1)):
        S = F @ S @ F.T + W
    return 0.5 * (S + S.T)


def _assignability_equality(sys):
    """Matrix form of the range-space stationarity condition.

    Returns (M, rhs) with M svec(Sigma) = rhs encoding
    P (Sigma - A Sigma A^T - D D^T) P = 0,  P = I - B B^+,
    rows orthonormalized to full rank (the raw map is rank deficient).
    """
    n = sys.n_x
    P = np.eye(n) - sys.B @ linalg.pinv(sys.B)
    nsv = n * (n + 1) // 2
    M = np.empty((nsv, nsv))
    rows, cols, _ = conic._svec_indices(n)
    for j in range(nsv):
        e = np.zeros(nsv)
        e[j] = 1.0
        E = conic.smat(e, n)
        M[:, j] = conic.svec(P @ (E - sys.A @ E @ sys.A.T) @ P)
    rhs = conic.svec(P @ sys.D @ sys.D.T @ P)
    U, lam, Vt = np.linalg.svd(M)
    r = int(np.sum(lam > 1e-10 * max(1.0, lam[0] if lam.size else 0.0)))
    Mr = (lam[:r, None] * Vt[:r])
    rhs_r = U[:, :r].T @ rhs
    # consistency of the dropped rows
    resid = U[:, r:].T @ rhs
    if resid.size and np.abs(resid).max() > 1e-8:
        raise TerminalError("stationarity condition is inconsistent")
    return Mr, rhs_r


def nearest_assignable(Sigma_d, sys, eps=1e-9):
    """Closest holdable covariance to Sigma_d in the Frobenius norm.

    Minimizes ||Sigma - Sigma_d||_F over the stationarity equality,
    Sigma >= eps*I, and Sigma >= D D^T, as one conic program.
    """
    Sigma_d = linalg.check_finite(Sigma_d, "Sigma_d")
    n = sys.n_x
    nsv = n * (n + 1) // 2
    # variables: (svec(Sigma), t)
    nv = nsv + 1
    c = np.zeros(nv)
    c[nsv] = 1.0
    Meq, rhs = _assignability_equality(sys)
    blocks = []
    hs = []
    cones = []
    # equality rows
    Geq = np.zeros((Meq.shape[0], nv))
    Geq[:, :nsv] = Meq
    blocks.append(Geq)
    hs.append(rhs)
    cones.append(conic.Zero(Meq.shape[0]))
    # ||svec(Sigma) - svec(Sigma_d)|| <= t
    Gs = np.zeros((1 + nsv, nv))
    Gs[0, nsv] = -1.0
    Gs[1:, :nsv] = -np.eye(nsv)
    blocks.append(Gs)
    hs.append(np.concatenate([[0.0], -conic.svec(Sigma_d)]))
    cones.append(conic.Soc(1 + nsv))
    # Sigma - eps I >= 0 and Sigma - D D^T >= 0
    for floor in (eps * np.eye(n), sys.D @ sys.D.T):
        Gp = np.zeros((nsv, nv))
        Gp[:, :nsv] = -np.eye(nsv)
        blocks.append(Gp)
        hs.append(-conic.svec(floor))
        cones.append(conic.Psd(n))
    prog = conic.ConicProgram(c=c, G=np.vstack(blocks),
                              h=np.concatenate(hs), cones=cones)
    sol = conic.solve(prog)
    if sol.status != "Optimal":
        raise SolverInfeasible(f"covariance projection: {sol.status}")
    Sigma = conic.smat(sol.x[:nsv], n)
    return 0.5 * (Sigma + Sigma.T)


def assignment_gain(Sigma_f, sys, tol=1e-6):
    """Static gain holding Sigma_f as the stationary closed-loop covariance.

    Pairs the two shared-left-factor decompositions by computing one SVD
    and least-squares fitting the other right factor, completing any null
    block with an orthonormal basis; the fixed-point and stability
    post-checks are the correctness contract.
    """
    n = sys.n_x
    S = linalg.sym_sqrt(Sigma_f, clip_tol=1e-8)
    DDt = sys.D @ sys.D.T
    Shat = linalg.sym_sqrt(Sigma_f - DDt, clip_tol=1e-8)
    Bpinv = linalg.pinv(sys.B)
    P = np.eye(n) - sys.B @ Bpinv
    M1 = P @ Shat
    M2 = P @ sys.A @ S
    L, lam, G1, r = linalg.svd_factor(M1)
    # right factor of M2 against the shared L, Lambda
    G2 = np.zeros((n, n))
    for i in range(r):
        G2[:, i] = M2.T @ L[:, i] / lam[i]
    if r < n:
        # orthonormal completion of the fitted columns
        Qfull, _ = np.linalg.qr(np.column_stack([G2[:, :r], np.eye(n)]))
        G2[:, r:] = Qfull[:, r:n]
    # snap to the nearest orthogonal matrix; tiny singular values of the
    # shared factor amplify solver-level error in the fitted columns and
    # the fixed-point post-check below is the actual contract
    U2, sig2, V2t = np.linalg.svd(G2)
    if sig2.min() < 0.5 or sig2.max() > 1.5:
        raise SvdMismatch("fitted right factor is far from orthogonal")
    G2 = U2 @ V2t
    scale = max(1.0, np.linalg.norm(M2, "fro"))
    mismatch = np.linalg.norm((L[:, :r] * lam[:r]) @ G2[:, :r].T - M2, "fro")
    if mismatch > math.sqrt(tol) * scale:
        raise SvdMismatch(
            "factorizations do not share a left factor; covariance "
            "is not assignable within tolerance")
    Sinv = np.linalg.inv(S)
    K_tilde = Bpinv @ (Shat @ G1 @ G2.T @ Sinv - sys.A)
    residual, rho = verify_assignable(Sigma_f, K_tilde, sys)
    if residual > tol * max(1.0, np.linalg.norm(Sigma_f, "fro")):
        raise UnstableResult(f"fixed-point residual {residual:.3e}")
    if rho >= 1.0:
        raise UnstableResult(f"closed-loop spectral radius {rho:.6f} >= 1")
    return K_tilde


def verify_assignable(Sigma_f, K_tilde, sys):
    """Fixed-point residual and closed-loop spectral radius for a gain."""
    F = sys.A + sys.B @ K_tilde
    residual = np.linalg.norm(
        Sigma_f - F @ Sigma_f @ F.T - sys.D @ sys.D.T, "fro")
    return float(residual), linalg.spectral_radius(F)


def p_mean(sys, K_tilde, Q, R):
    """Terminal mean penalty: adjoint Lyapunov solution for the loop cost."""
    F = sys.A + sys.B @ K_tilde
    W = Q + K_tilde.T @ R @ K_tilde
    P = linalg.dlyap(F, 0.5 * (W + W.T), "adjoint")
    return P


def terminal_rows(Sigma_f, K_tilde, state_constraints, input_constraints):
    """Tightened terminal half-spaces over the mean.

    State rows back off by the stationary standard deviation along the
    normal; input rows pull the gain into the normal first. Raises
    :class:`TerminalSetEmpty` when the origin itself is excluded.
    """
    S = linalg.sym_sqrt(Sigma_f, clip_tol=1e-8)
    rows = []
    for row in state_constraints:
        margin = chance.tightening_factor(row.p) * np.linalg.norm(S @ row.alpha)
        if margin > row.beta:
            raise TerminalSetEmpty(
                f"state row alpha={row.alpha.tolist()} needs margin "
                f"{margin:.4f} but only {row.beta:.4f} is available")
        rows.append(ConstraintRow(row.alpha, row.beta - margin, row.p))
    for row in input_constraints:
        margin = chance.tightening_factor(row.p) * \
            np.linalg.norm(S @ K_tilde.T @ row.alpha)
        if margin > row.beta:
            raise TerminalSetEmpty(
                f"input row alpha={row.alpha.tolist()} needs margin "
                f"{margin:.4f} but only {row.beta:.4f} is available")
        alpha_mu = K_tilde.T @ row.alpha
        if np.any(alpha_mu):
            rows.append(ConstraintRow(alpha_mu, row.beta - margin, row.p))
    return HalfspaceSet(tuple(rows))


def _row_max_lp(alphas, betas, objective, box=1e6):
    """Maximize objective^T mu over {alphas mu <= betas}.

    Returns the optimum, or None when the subproblem is unbounded. The
    feasible set is intersected with a large box so that unbounded
    directions show up as the optimizer pinned to the box instead of as
    a certificate the interior-point method may fail to isolate.
    """
    A = np.asarray(alphas)
    b = np.asarray(betas)
    n = A.shape[1]
    scale = max(1.0, np.abs(b).max())
    bound = box * scale
    G = np.vstack([A, np.eye(n), -np.eye(n)])
    h = np.concatenate([b, np.full(2 * n, bound)])
    prog = conic.ConicProgram(c=-objective, G=G, h=h,
                              cones=[conic.NonNeg(len(h))])
    sol = conic.solve(prog)
    if sol.status == "DualInfeasible":
        return None
    if sol.status != "Optimal":
        raise SolverInfeasible(f"redundancy subproblem: {sol.status}")
    if np.abs(sol.x).max() >= 0.99 * bound:
        return None
    return -sol.objective


def maximal_invariant_set(F, rows, max_iter=500, tol=1e-9):
    """Largest set of means the closed loop keeps inside the given rows.

    Fixed-point iteration on pre-images: keep adding rows alpha^T F^i mu
    <= beta until every candidate is certified redundant by a linear
    program; the output is pruned to non-redundant rows.
    """
    F = linalg.check_finite(F, "F")
    if not len(rows):
        raise TerminalError("invariant set needs at least one row")
    if linalg.spectral_radius(F) >= 1.0:
        raise TerminalError("closed loop must be strictly stable")
    alphas = [r.alpha for r in rows]
    betas = [float(r.beta) for r in rows]
    ps = [r.p for r in rows]
    frontier = list(range(len(rows)))
    saw_unbounded = False
    for _ in range(max_iter):
        A = np.asarray(alphas)
        b = np.asarray(betas)
        new_frontier = []
        saw_unbounded = False
        for idx in frontier:
            cand = F.T @ alphas[idx]
            beta = betas[idx]
            opt = _row_max_lp(A, b, cand)
            if opt is None:
                saw_unbounded = True
            elif opt <= beta + tol:
                continue
            new_frontier.append(len(alphas))
            alphas.append(cand)
            betas.append(beta)
            ps.append(ps[idx])
        if not new_frontier:
            break
        frontier = new_frontier
    else:
        if saw_unbounded:
            raise Unbounded(
                "redundancy subproblems stayed unbounded; the rows do "
                "not bound the relevant directions")
        raise NotFinitelyDetermined(f"no fixed point after {max_iter} rounds")

    # prune rows that the others already imply
    keep = list(range(len(alphas)))
    for idx in range(len(alphas) - 1, -1, -1):
        others = [j for j in keep if j != idx]
        if not others:
            continue
        A = np.asarray([alphas[j] for j in others])
        b = np.asarray([betas[j] for j in others])
        opt = _row_max_lp(A, b, alphas[idx])
        if opt is not None and opt <= betas[idx] + tol:
            keep.remove(idx)
    return HalfspaceSet(tuple(
        ConstraintRow(alphas[j], betas[j], ps[j]) for j in keep))


def build(scenario):
    """Terminal ingredients for a scenario, per its configured mode."""
    sys = scenario.system
    mode = scenario.terminal_mode
    if mode == "lyapunov-lqr":
        Sigma_f, K_lqr = lyapunov_lqr_cov(sys, scenario.Q, scenario.R)
        K_tilde = K_lqr  # stationary by construction of the Lyapunov solve
    elif mode == "nearest-assignable":
        Sigma_d = lqr_propagated_cov(sys, scenario.Q, scenario.R, scenario.N)
        Sigma_f = nearest_assignable(Sigma_d, sys)
        K_tilde = assignment_gain(Sigma_f, sys)
        # the conic projection is only solver-tolerance accurate; snapping
        # to the exact stationary covariance of the computed gain removes
        # the leftover fixed-point residual, which otherwise tilts the
        # near-singular directions of Sigma_f - DD^T that the per-step
        # programs must resolve
        Sigma_f = linalg.dlyap(sys.A + sys.B @ K_tilde,
                               sys.D @ sys.D.T, "forward")
    else:
        Sigma_f = scenario.sigma_f
        K_tilde = assignment_gain(Sigma_f, sys)
    P_mean = p_mean(sys, K_tilde, scenario.Q, scenario.R)
    rows = terminal_rows(Sigma_f, K_tilde,
                         scenario.state_constraints,
                         scenario.input_constraints)
    X_f_mu = maximal_invariant_set(sys.A + sys.B @ K_tilde, rows)
    return TerminalIngredients(Sigma_f=Sigma_f, K_tilde=K_tilde,
                               P_mean=P_mean, X_f_mu=X_f_mu,
                               provenance=mode)

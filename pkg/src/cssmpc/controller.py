"""Per-step convex programs and the receding-horizon controllers.

The main controller solves, at every step, a convex program over the
open-loop inputs V and the block-diagonal deviation-feedback gains K:
quadratic cost through rotated second-order-cone epigraphs, tightened
chance rows, terminal mean rows, and the terminal-covariance linear
matrix inequality in Schur form. Also implements the one-shot
mean/covariance steering problem and the three baselines (LQR,
deterministic MPC, disturbance feedback).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import chance, conic, lifting, linalg, terminal as terminal_mod


class ControllerError(RuntimeError):
    """Base class for controller failures."""


class SolverInfeasible(ControllerError):
    """The per-step program reported primal infeasibility."""


class SolverNumericalFailure(ControllerError):
    """The conic solve broke down numerically."""


class BothInitializationsInfeasible(ControllerError):
    """Neither the measured nor the predicted belief admits a solution."""


@dataclass(frozen=True)
class AffinePolicy:
    """Open-loop inputs plus structured deviation feedback over a horizon."""

    V: np.ndarray
    K: np.ndarray

    def input_at(self, t, n_u):
        return self.V[t * n_u:(t + 1) * n_u]

    def gain_at(self, t, n_u, n_x):
        return self.K[t * n_u:(t + 1) * n_u, t * n_x:(t + 1) * n_x]


@dataclass(frozen=True)
class BeliefState:
    mu: np.ndarray
    Sigma: np.ndarray
    mode: str  # "Measurement" | "Fallback"

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float).reshape(-1))
        Sigma = np.asarray(self.Sigma, dtype=float)
        object.__setattr__(self, "Sigma", 0.5 * (Sigma + Sigma.T))
        if self.mode == "Measurement" and np.any(self.Sigma):
            raise ValueError("measured beliefs carry zero covariance")


@dataclass
class StepResult:
    u: np.ndarray
    policy: AffinePolicy | None
    predicted_next: BeliefState | None
    mode: str
    solve_time: float
    diagnostics: dict = field(default_factory=dict)


def _sqrt_psd(M):
    return linalg.sym_sqrt(M, clip_tol=1e-8)


def _terminal_cov_blocks(Sigma_f, M0, coeffs, margin=0.0, kernel_tol=1e-7):
    """Deflated cone encoding of Sigma_f >= M M^T, M = M0 + sum_i x_i C_i.

    Noise directions that no coefficient slab C_i touches contribute a
    fixed covariance floor M0 Vn (M0 Vn)^T; on the boundary of
    assignability Sigma_f minus that floor is singular, so the raw
    Schur-form block has no interior point and its dual is unbounded.
    Splitting the kernel of the remainder into exact equality rows
    leaves a semidefinite block that is strictly feasible again.

    A positive margin pads Sigma_f by margin * I first. The receding-
    horizon programs need it: with the terminal covariance exactly on
    the noise-floor boundary the singular direction couples every gain
    degree of freedom and the exact program has an empty interior (it
    can even be marginally infeasible outright), while solutions with a
    sub-tolerance violation exist and are the ones every interior-point
    method actually returns.

    Returns (zero_h, zero_coeff, psd_h, psd_coeff, psd_side, neg_h):
    raveled equality rows U0^T M V1 = 0, the svec'd reduced block
    [[diag(lam), Upos^T M V1], [., I]], and the (infeasible) negative
    eigenvalues of the remainder as nonnegative-cone offsets.
    """
    nfree, n_x, r = coeffs.shape
    Sigma_f = Sigma_f + margin * np.eye(n_x)
    if nfree and r:
        flat = coeffs.reshape(nfree * n_x, r)
        _, svals, Vt = np.linalg.svd(flat, full_matrices=True)
        rank = int(np.sum(svals > 1e-10 * max(1.0, svals[0])))
        V1 = Vt[:rank].T
        Vn = Vt[rank:].T
    else:
        V1 = np.zeros((r, 0))
        Vn = np.eye(r)
    Mfix = M0 @ Vn
    S1 = Sigma_f - Mfix @ Mfix.T
    S1 = 0.5 * (S1 + S1.T)
    lam, U = np.linalg.eigh(S1)
    tol = kernel_tol * max(1.0, float(lam[-1]))
    keep = lam > tol
    U0, Upos, lam_pos = U[:, ~keep], U[:, keep], lam[keep]
    neg_h = lam[lam < -tol]
    r1 = V1.shape[1]
    q = int(keep.sum())
    side = q + r1

    M0V = M0 @ V1
    CV = coeffs @ V1 if nfree else np.zeros((0, n_x, r1))
    zero_h = (U0.T @ M0V).ravel()
    zero_coeff = (U0.T @ CV).reshape(nfree, -1)

    Mc = np.zeros((side, side))
    Mc[:q, :q] = np.diag(lam_pos)
    Mc[:q, q:] = Upos.T @ M0V
    Mc[q:, :q] = Mc[:q, q:].T
    Mc[q:, q:] = np.eye(r1)
    psd_h = conic.svec(Mc)
    psd_coeff = np.zeros((nfree, psd_h.size))
    top = Upos.T @ CV
    for i in range(nfree):
        Mi = np.zeros((side, side))
        Mi[:q, q:] = top[i]
        Mi[q:, :q] = top[i].T
        psd_coeff[i] = conic.svec(Mi)
    return zero_h, zero_coeff, psd_h, psd_coeff, side, neg_h


def _terminal_margin(Sigma_f):
    """Pad used by the receding-horizon programs; zero keeps things exact."""
    return 1e-6 * max(1.0, float(np.linalg.norm(Sigma_f, 2)))


class _ProgramTemplate:
    """Constraint matrix, cones, and an affine map for the right-hand side.

    Everything except h is fixed once the deviation factor L (with
    L L^T = Sigma_y) is fixed, so Measurement-mode steps rebuild only h.
    """

    def __init__(self, scenario, lifted, ingredients, L,
                 terminal_mean_rows=None, mean_equality=None,
                 Qbar_mean=None, Qbar_cov=None, include_horizon_rows=True,
                 terminal_margin=0.0):
        N, n_x, n_u = lifted.N, lifted.n_x, lifted.n_u
        nV = N * n_u
        nK = lifted.kvec_dim
        nv = nV + nK + 3
        self.nv = nv
        self.sl_V = slice(0, nV)
        self.sl_K = slice(nV, nV + nK)
        self.i_tcov = nV + nK
        self.i_tmean = nV + nK + 1
        self.i_tR = nV + nK + 2
        self.lifted = lifted
        self.n_x, self.n_u, self.N = n_x, n_u, N

        if Qbar_mean is None or Qbar_cov is None:
            Qm, Qc, Rbar = lifting.cost_blocks(
                scenario.Q, scenario.R, ingredients.P_mean, N)
            Qbar_mean = Qm if Qbar_mean is None else Qbar_mean
            Qbar_cov = Qc if Qbar_cov is None else Qbar_cov
        else:
            _, _, Rbar = lifting.cost_blocks(
                scenario.Q, scenario.R, np.zeros((n_x, n_x)), N)
        Qm_h = _sqrt_psd(Qbar_mean)
        Qc_h = _sqrt_psd(Qbar_cov)
        R_h = _sqrt_psd(Rbar)
        sB = lifted.script_B
        r = L.shape[1]

        c = np.zeros(nv)
        c[self.i_tcov] = 2.0
        c[self.i_tmean] = 2.0
        c[self.i_tR] = 2.0

        Gs, cones = [], []
        # h = h0 + Hmu @ mu + Hoff @ offset
        h0s, Hmus, Hoffs = [], [], []

        def push(G, h0, Hmu=None, Hoff=None):
            m = G.shape[0]
            Gs.append(G)
            h0s.append(np.asarray(h0, dtype=float).reshape(m))
            Hmus.append(np.zeros((m, n_x)) if Hmu is None else Hmu)
            Hoffs.append(np.zeros((m, (N + 1) * n_x)) if Hoff is None else Hoff)

        # --- optional stacked mean equality (one-shot steering)
        if mean_equality is not None:
            Sel, target = mean_equality  # Sel @ (sA mu + sB V + off) = target
            m = Sel.shape[0]
            G = np.zeros((m, nv))
            G[:, self.sl_V] = Sel @ sB
            push(G, target, Hmu=-Sel @ lifted.script_A, Hoff=-Sel)
            cones.append(conic.Zero(m))

        # --- linear rows first, collected into one nonnegative cone
        lin_G, lin_h0, lin_Hmu, lin_Hoff = [], [], [], []
        soc_specs = []  # deferred cones after the nonnegative block

        def add_tightened(row_obj, t, kind):
            if kind == "state":
                tr = chance.tighten_state_row(row_obj, lifted, L, t)
                EtA = lifted.script_A[t * n_x:(t + 1) * n_x]
                hmu_row = -(row_obj.alpha @ EtA)
                hoff_row = np.zeros((N + 1) * n_x)
                hoff_row[t * n_x:(t + 1) * n_x] = -row_obj.alpha
            else:
                tr = chance.tighten_input_row(row_obj, lifted, L, t)
                hmu_row = np.zeros(n_x)
                hoff_row = np.zeros((N + 1) * n_x)
            g0 = np.zeros(nv)
            g0[self.sl_V] = tr.lin_V
            if tr.is_linear:
                lin_G.append(g0)
                lin_h0.append(tr.offset - tr.lin_const)
                lin_Hmu.append(hmu_row)
                lin_Hoff.append(hoff_row)
                return
            dim = tr.norm_const.size
            G = np.zeros((1 + dim, nv))
            G[0] = g0
            G[1:, self.sl_K] = -tr.scale * tr.norm_K
            h0 = np.concatenate([[tr.offset - tr.lin_const],
                                 tr.scale * tr.norm_const])
            Hmu = np.zeros((1 + dim, n_x))
            Hmu[0] = hmu_row
            Hoff = np.zeros((1 + dim, (N + 1) * n_x))
            Hoff[0] = hoff_row
            soc_specs.append((G, h0, Hmu, Hoff))

        if include_horizon_rows:
            for t in range(N):
                for row_obj in scenario.state_constraints:
                    add_tightened(row_obj, t, "state")
            for t in range(N):
                for row_obj in scenario.input_constraints:
                    add_tightened(row_obj, t, "input")

        # terminal mean rows (deterministic rows over the predicted mean)
        if terminal_mean_rows is not None:
            ENA = lifted.script_A[N * n_x:]
            ENB = sB[N * n_x:]
            for row_obj in terminal_mean_rows:
                g0 = np.zeros(nv)
                g0[self.sl_V] = ENB.T @ row_obj.alpha
                lin_G.append(g0)
                lin_h0.append(float(row_obj.beta))
                lin_Hmu.append(-(row_obj.alpha @ ENA))
                hoff_row = np.zeros((N + 1) * n_x)
                hoff_row[N * n_x:] = -row_obj.alpha
                lin_Hoff.append(hoff_row)

        if lin_G:
            push(np.asarray(lin_G), np.asarray(lin_h0),
                 Hmu=np.asarray(lin_Hmu), Hoff=np.asarray(lin_Hoff))
            cones.append(conic.NonNeg(len(lin_G)))
        for G, h0, Hmu, Hoff in soc_specs:
            push(G, h0, Hmu, Hoff)
            cones.append(conic.Soc(G.shape[0]))

        # --- objective epigraphs
        # trace piece: ||[Qc^(1/2)(I+BK)L; R^(1/2) K L]||_F^2 <= 2 t_cov,
        # affine in kvec, compressed through its Gram matrix
        QcB = Qc_h @ sB
        QcL = Qc_h @ L
        stack_rows = (N + 1) * n_x * r + nV * r
        C = np.zeros((stack_rows, nK + 1))
        C[:(N + 1) * n_x * r, 0] = QcL.ravel()
        for tau in range(N):
            for i in range(n_u):
                col_u = QcB[:, tau * n_u + i]
                col_r = R_h[:, tau * n_u + i]
                for j in range(n_x):
                    k_idx = 1 + (tau * n_u + i) * n_x + j
                    Lrow = L[tau * n_x + j]
                    C[:(N + 1) * n_x * r, k_idx] = np.outer(col_u, Lrow).ravel()
                    C[(N + 1) * n_x * r:, k_idx] = np.outer(col_r, Lrow).ravel()
        C = chance._compress(C)
        dim = C.shape[0]
        G = np.zeros((2 + dim, nv))
        G[0, self.i_tcov] = -1.0
        G[1, self.i_tcov] = -1.0
        G[2:, self.sl_K] = -C[:, 1:]
        push(G, np.concatenate([[0.5], [-0.5], C[:, 0]]))
        cones.append(conic.Soc(2 + dim))

        # mean piece: ||Qm^(1/2)(sA mu + sB V + off)||^2 <= 2 t_mean
        rows = Qm_h.shape[0]
        G = np.zeros((2 + rows, nv))
        G[0, self.i_tmean] = -1.0
        G[1, self.i_tmean] = -1.0
        G[2:, self.sl_V] = -Qm_h @ sB
        Hmu = np.zeros((2 + rows, n_x))
        Hmu[2:] = Qm_h @ lifted.script_A
        Hoff = np.zeros((2 + rows, (N + 1) * n_x))
        Hoff[2:] = Qm_h
        push(G, np.concatenate([[0.5], [-0.5], np.zeros(rows)]), Hmu, Hoff)
        cones.append(conic.Soc(2 + rows))

        # input-energy piece: ||R^(1/2) V||^2 <= 2 t_R
        G = np.zeros((2 + nV, nv))
        G[0, self.i_tR] = -1.0
        G[1, self.i_tR] = -1.0
        G[2:, self.sl_V] = -R_h
        push(G, np.concatenate([[0.5], [-0.5], np.zeros(nV)]))
        cones.append(conic.Soc(2 + nV))

        # --- terminal covariance Sigma_f >= M M^T with M = E_N (I + B K) L,
        # encoded through the deflated Schur-form blocks
        ENL = L[N * n_x:]
        ENB = sB[N * n_x:]
        coeffs = np.zeros((nK, n_x, r))
        for tau in range(N):
            for i in range(n_u):
                col = ENB[:, tau * n_u + i]
                for j in range(n_x):
                    k_idx = (tau * n_u + i) * n_x + j
                    coeffs[k_idx] = np.outer(col, L[tau * n_x + j])
        zero_h, zero_coeff, psd_h, psd_coeff, side, neg_h = \
            _terminal_cov_blocks(ingredients.Sigma_f, ENL, coeffs,
                                 margin=terminal_margin)
        if zero_h.size:
            G = np.zeros((zero_h.size, nv))
            G[:, self.sl_K] = -zero_coeff.T
            push(G, zero_h)
            cones.append(conic.Zero(zero_h.size))
        if neg_h.size:
            push(np.zeros((neg_h.size, nv)), neg_h)
            cones.append(conic.NonNeg(neg_h.size))
        if side:
            G = np.zeros((psd_h.size, nv))
            G[:, self.sl_K] = -psd_coeff.T
            push(G, psd_h)
            cones.append(conic.Psd(side))

        self.c = c
        self.G = np.vstack(Gs)
        self.h0 = np.concatenate(h0s)
        self.Hmu = np.vstack(Hmus)
        self.Hoff = np.vstack(Hoffs)
        self.cones = tuple(cones)

    def program(self, mu, offset):
        h = self.h0 + self.Hmu @ mu + self.Hoff @ offset
        return conic.ConicProgram(c=self.c, G=self.G, h=h, cones=self.cones)

    def policy(self, x):
        V = x[self.sl_V].copy()
        K = lifting.kvec_to_K(x[self.sl_K], self.lifted)
        return AffinePolicy(V=V, K=K)


def assemble(belief, scenario, lifted, ingredients, offset=None):
    """Per-step program for a belief; returns (ConicProgram, index map)."""
    L = lifting.sigma_y_factor(lifted, belief.Sigma)
    tpl = _ProgramTemplate(scenario, lifted, ingredients, L,
                           terminal_mean_rows=ingredients.X_f_mu,
                           terminal_margin=_terminal_margin(
                               ingredients.Sigma_f))
    if offset is None:
        offset = np.zeros((lifted.N + 1) * lifted.n_x)
    prog = tpl.program(belief.mu, offset)
    index_map = {"V": tpl.sl_V, "kvec": tpl.sl_K, "t_cov": tpl.i_tcov,
                 "t_mean": tpl.i_tmean, "t_R": tpl.i_tR}
    return prog, index_map


def _solve_or_raise(prog):
    sol = conic.solve(prog)
    if sol.status == "Optimal":
        return sol
    if sol.status == "PrimalInfeasible":
        raise SolverInfeasible("program is primal infeasible")
    raise SolverNumericalFailure(f"solver returned {sol.status}")


class CsSmpcController:
    """Receding-horizon controller with measurement/fallback initialization."""

    def __init__(self, scenario, ingredients=None):
        self.scenario = scenario
        sys = scenario.system
        self.sys = sys
        self.lifted = lifting.lift(sys, scenario.N)
        self.ingredients = ingredients or terminal_mod.build(scenario)
        # Measurement-mode template is belief independent (Sigma = 0);
        # only the right-hand side changes step to step.
        L0 = lifting.sigma_y_factor(self.lifted, np.zeros((sys.n_x, sys.n_x)))
        self._meas_tpl = _ProgramTemplate(
            scenario, self.lifted, self.ingredients, L0,
            terminal_mean_rows=self.ingredients.X_f_mu,
            terminal_margin=_terminal_margin(self.ingredients.Sigma_f))
        self._Sy0 = self.lifted.script_D @ self.lifted.script_D.T
        self._predicted = None

    def reset(self):
        self._predicted = None

    def _offset(self, signal):
        if signal is None:
            return np.zeros((self.lifted.N + 1) * self.sys.n_x)
        return lifting.affine_offset(self.sys, self.lifted.N, signal)

    def _predict_next(self, mu, Sigma_y, tpl_policy, offset):
        n_x = self.sys.n_x
        V, K = tpl_policy.V, tpl_policy.K
        lifted = self.lifted
        mean = lifted.script_A @ mu + lifted.script_B @ V + offset
        mu1 = mean[n_x:2 * n_x]
        IBK = np.eye((lifted.N + 1) * n_x) + lifted.script_B @ K
        row = IBK[n_x:2 * n_x]
        Sig1 = row @ Sigma_y @ row.T
        return BeliefState(mu=mu1, Sigma=0.5 * (Sig1 + Sig1.T),
                           mode="Fallback")

    def step(self, x, signal=None):
        """One receding-horizon step from the measured state x."""
        x = np.asarray(x, dtype=float).reshape(-1)
        offset = self._offset(signal)
        t0 = time.perf_counter()
        diagnostics = {}
        try:
            prog = self._meas_tpl.program(x, offset)
            sol = _solve_or_raise(prog)
            mode = "Measurement"
            tpl = self._meas_tpl
            mu, Sigma_y = x, self._Sy0
        except (SolverInfeasible, SolverNumericalFailure) as first:
            diagnostics["measurement_failure"] = str(first)
            if self._predicted is None:
                raise BothInitializationsInfeasible(
                    "measured-state solve failed with no stored prediction"
                ) from first
            belief = self._predicted
            L = lifting.sigma_y_factor(self.lifted, belief.Sigma)
            tpl = _ProgramTemplate(
                self.scenario, self.lifted, self.ingredients, L,
                terminal_mean_rows=self.ingredients.X_f_mu,
                terminal_margin=_terminal_margin(self.ingredients.Sigma_f))
            prog = tpl.program(belief.mu, offset)
            try:
                sol = _solve_or_raise(prog)
            except (SolverInfeasible, SolverNumericalFailure) as second:
                raise BothInitializationsInfeasible(
                    f"measurement: {first}; fallback: {second}") from second
            mode = "Fallback"
            mu = belief.mu
            Sigma_y = self.lifted.script_A @ belief.Sigma @ \
                self.lifted.script_A.T + self._Sy0
        solve_time = time.perf_counter() - t0

        policy = tpl.policy(sol.x)
        n_u, n_x = self.sys.n_u, self.sys.n_x
        v0 = policy.input_at(0, n_u)
        if mode == "Measurement":
            u = v0.copy()
        else:
            K0 = policy.gain_at(0, n_u, n_x)
            u = v0 + K0 @ (x - mu)
        self._predicted = self._predict_next(mu, Sigma_y, policy, offset)
        diagnostics.update(iterations=sol.iterations, objective=sol.objective,
                           gap=sol.gap)
        return StepResult(u=u, policy=policy, predicted_next=self._predicted,
                          mode=mode, solve_time=solve_time,
                          diagnostics=diagnostics)


def covariance_steering_solve(sys, mu0, Sigma0, mu_f, Sigma_f, N,
                              state_constraints=(), input_constraints=(),
                              Q=None, R=None):
    """One-shot steering of (mu0, Sigma0) to mean mu_f, covariance <= Sigma_f.

    Terminal mean is an equality; the terminal covariance bound is the
    Schur-form inequality. Returns the optimal affine policy.
    """
    from .model import HalfspaceSet, Scenario, SimConfig

    n_x = sys.n_x
    mu0 = np.asarray(mu0, dtype=float).reshape(n_x)
    mu_f = np.asarray(mu_f, dtype=float).reshape(n_x)
    Q = np.zeros((n_x, n_x)) if Q is None else np.asarray(Q, dtype=float)
    R = np.eye(sys.n_u) if R is None else np.asarray(R, dtype=float)
    scenario = Scenario(system=sys,
                        state_constraints=HalfspaceSet(tuple(state_constraints)),
                        input_constraints=HalfspaceSet(tuple(input_constraints)),
                        Q=Q, R=R, N=N, sim=SimConfig(1, 1, 0))
    lifted = lifting.lift(sys, N)
    L = lifting.sigma_y_factor(lifted, np.asarray(Sigma0, dtype=float))
    Qbar, _, _ = lifting.cost_blocks(Q, R, np.zeros((n_x, n_x)), N)
    fake = terminal_mod.TerminalIngredients(
        Sigma_f=np.asarray(Sigma_f, dtype=float), K_tilde=np.zeros((sys.n_u, n_x)),
        P_mean=np.zeros((n_x, n_x)), X_f_mu=HalfspaceSet(()), provenance="explicit")
    Sel = np.zeros((n_x, (N + 1) * n_x))
    Sel[:, N * n_x:] = np.eye(n_x)
    tpl = _ProgramTemplate(
        scenario, lifted, fake, L,
        mean_equality=(Sel, mu_f),
        Qbar_mean=Qbar, Qbar_cov=Qbar,
        include_horizon_rows=bool(len(state_constraints) or
                                  len(input_constraints)))
    prog = tpl.program(mu0, np.zeros((N + 1) * n_x))
    sol = _solve_or_raise(prog)
    policy = tpl.policy(sol.x)
    # consistency of the reported terminal mean
    mean = lifted.script_A @ mu0 + lifted.script_B @ policy.V
    if np.abs(mean[N * n_x:] - mu_f).max() > 1e-6:
        raise SolverNumericalFailure("terminal mean drifted from its target")
    return policy


def steering_cost(policy, sys, mu0, Sigma0, N, Q=None, R=None):
    """Objective value of a steering policy (for reporting and tests)."""
    n_x = sys.n_x
    Q = np.zeros((n_x, n_x)) if Q is None else np.asarray(Q, dtype=float)
    R = np.eye(sys.n_u) if R is None else np.asarray(R, dtype=float)
    lifted = lifting.lift(sys, N)
    Qbar, _, Rbar = lifting.cost_blocks(Q, R, np.zeros((n_x, n_x)), N)
    Sy, _ = lifting.sigma_y(lifted, np.asarray(Sigma0, dtype=float))
    IBK = np.eye((N + 1) * n_x) + lifted.script_B @ policy.K
    mean = lifted.script_A @ np.asarray(mu0, dtype=float) + \
        lifted.script_B @ policy.V
    cov_term = np.trace((IBK.T @ Qbar @ IBK + policy.K.T @ Rbar @ policy.K) @ Sy)
    return float(cov_term + mean @ Qbar @ mean + policy.V @ Rbar @ policy.V)


class LqrController:
    """Static infinite-horizon LQR feedback."""

    def __init__(self, sys, Q, R):
        _, self.K = linalg.dare(sys.A, sys.B, Q, R)

    def reset(self):
        pass

    def step(self, x, signal=None):
        x = np.asarray(x, dtype=float).reshape(-1)
        t0 = time.perf_counter()
        u = self.K @ x
        return StepResult(u=u, policy=None, predicted_next=None,
                          mode="Measurement",
                          solve_time=time.perf_counter() - t0)


class ZeroController:
    """No control input; the open-loop plant."""

    def __init__(self, n_u):
        self.n_u = n_u

    def reset(self):
        pass

    def step(self, x, signal=None):
        return StepResult(u=np.zeros(self.n_u), policy=None,
                          predicted_next=None, mode="Measurement",
                          solve_time=0.0)


class DetMpcController:
    """Noise-ignoring MPC with hard raw constraints and a Riccati tail."""

    def __init__(self, scenario):
        sys = scenario.system
        self.sys = sys
        self.scenario = scenario
        N = scenario.N
        self.lifted = lifting.lift(sys, N)
        Qp, _ = linalg.dare(sys.A, sys.B, scenario.Q, scenario.R)
        Qbar, _, Rbar = lifting.cost_blocks(scenario.Q, scenario.R, Qp, N)
        self.Q_h = _sqrt_psd(Qbar)
        self.R_h = _sqrt_psd(Rbar)
        n_x, n_u = sys.n_x, sys.n_u
        nV = N * n_u
        self.nv = nV + 2
        self.sl_V = slice(0, nV)
        sB = self.lifted.script_B
        lin_G, lin_Hmu, lin_Hoff, lin_h0 = [], [], [], []
        for t in range(1, N + 1):
            for row in scenario.state_constraints:
                g = np.zeros(self.nv)
                g[self.sl_V] = sB[t * n_x:(t + 1) * n_x].T @ row.alpha
                lin_G.append(g)
                lin_h0.append(float(row.beta))
                lin_Hmu.append(-(row.alpha @
                                 self.lifted.script_A[t * n_x:(t + 1) * n_x]))
                hoff = np.zeros((N + 1) * n_x)
                hoff[t * n_x:(t + 1) * n_x] = -row.alpha
                lin_Hoff.append(hoff)
        for t in range(N):
            for row in scenario.input_constraints:
                g = np.zeros(self.nv)
                g[t * n_u:(t + 1) * n_u] = row.alpha
                lin_G.append(g)
                lin_h0.append(float(row.beta))
                lin_Hmu.append(np.zeros(n_x))
                lin_Hoff.append(np.zeros((N + 1) * n_x))
        Gs, h0s, Hmus, Hoffs, cones = [], [], [], [], []
        if lin_G:
            Gs.append(np.asarray(lin_G))
            h0s.append(np.asarray(lin_h0))
            Hmus.append(np.asarray(lin_Hmu))
            Hoffs.append(np.asarray(lin_Hoff))
            cones.append(conic.NonNeg(len(lin_G)))
        # state-cost epigraph
        rows = self.Q_h.shape[0]
        G = np.zeros((2 + rows, self.nv))
        G[0, nV] = -1.0
        G[1, nV] = -1.0
        G[2:, self.sl_V] = -self.Q_h @ sB
        Hmu = np.zeros((2 + rows, n_x))
        Hmu[2:] = self.Q_h @ self.lifted.script_A
        Hoff = np.zeros((2 + rows, (N + 1) * n_x))
        Hoff[2:] = self.Q_h
        Gs.append(G)
        h0s.append(np.concatenate([[0.5], [-0.5], np.zeros(rows)]))
        Hmus.append(Hmu)
        Hoffs.append(Hoff)
        cones.append(conic.Soc(2 + rows))
        # input-cost epigraph
        G = np.zeros((2 + nV, self.nv))
        G[0, nV + 1] = -1.0
        G[1, nV + 1] = -1.0
        G[2:, self.sl_V] = -self.R_h
        Gs.append(G)
        h0s.append(np.concatenate([[0.5], [-0.5], np.zeros(nV)]))
        Hmus.append(np.zeros((2 + nV, n_x)))
        Hoffs.append(np.zeros((2 + nV, (N + 1) * n_x)))
        cones.append(conic.Soc(2 + nV))
        self.G = np.vstack(Gs)
        self.h0 = np.concatenate(h0s)
        self.Hmu = np.vstack(Hmus)
        self.Hoff = np.vstack(Hoffs)
        self.cones = tuple(cones)
        c = np.zeros(self.nv)
        c[nV] = 2.0
        c[nV + 1] = 2.0
        self.c = c

    def reset(self):
        pass

    def step(self, x, signal=None):
        x = np.asarray(x, dtype=float).reshape(-1)
        if signal is None:
            offset = np.zeros((self.lifted.N + 1) * self.sys.n_x)
        else:
            offset = lifting.affine_offset(self.sys, self.lifted.N, signal)
        t0 = time.perf_counter()
        h = self.h0 + self.Hmu @ x + self.Hoff @ offset
        prog = conic.ConicProgram(c=self.c, G=self.G, h=h, cones=self.cones)
        sol = _solve_or_raise(prog)
        solve_time = time.perf_counter() - t0
        V = sol.x[self.sl_V]
        n_u = self.sys.n_u
        return StepResult(u=V[:n_u].copy(), policy=None, predicted_next=None,
                          mode="Measurement", solve_time=solve_time,
                          diagnostics={"iterations": sol.iterations})


class DistFbController:
    """Affine disturbance feedback over the stacked noise history.

    Same cost and constraint set as the main controller, but the policy
    U = V + M W uses a strictly-lower-block-triangular gain over the
    noise samples, a strictly larger (and slower) parameterization.
    Solves from the measured state with zero covariance.
    """

    def __init__(self, scenario, ingredients=None):
        sys = scenario.system
        self.sys = sys
        self.scenario = scenario
        N = scenario.N
        self.lifted = lifting.lift(sys, N)
        self.ingredients = ingredients or terminal_mod.build(scenario)
        self._build()

    def _build(self):
        scenario = self.scenario
        sys = self.sys
        lifted = self.lifted
        N, n_x, n_u, n_w = lifted.N, lifted.n_x, lifted.n_u, lifted.n_w
        nV = N * n_u
        nW = N * n_w
        # strictly-lower-block-triangular entries of M (N n_u x N n_w)
        self.m_index = []
        for t in range(1, N):
            for tau in range(t):
                for i in range(n_u):
                    for j in range(n_w):
                        self.m_index.append((t * n_u + i, tau * n_w + j))
        nM = len(self.m_index)
        nv = nV + nM + 3
        self.nv = nv
        self.sl_V = slice(0, nV)
        self.sl_M = slice(nV, nV + nM)
        i_tcov, i_tmean, i_tR = nV + nM, nV + nM + 1, nV + nM + 2

        Qm, Qc, Rbar = lifting.cost_blocks(
            scenario.Q, scenario.R, self.ingredients.P_mean, N)
        Qm_h = _sqrt_psd(Qm)
        Qc_h = _sqrt_psd(Qc)
        R_h = _sqrt_psd(Rbar)
        sB, sD = lifted.script_B, lifted.script_D

        # deviation map: X_dev = (B M + D) W, inputs U_dev = M W
        Gs, cones = [], []
        h0s, Hmus, Hoffs = [], [], []

        def push(G, h0, Hmu=None, Hoff=None):
            m = G.shape[0]
            Gs.append(G)
            h0s.append(np.asarray(h0, dtype=float).reshape(m))
            Hmus.append(np.zeros((m, n_x)) if Hmu is None else Hmu)
            Hoffs.append(np.zeros((m, (N + 1) * n_x)) if Hoff is None else Hoff)

        lin_G, lin_h0, lin_Hmu, lin_Hoff = [], [], [], []
        soc_specs = []
        for t in range(N):
            for row in scenario.state_constraints:
                scale = chance.tightening_factor(row.p)
                # norm argument: (B M + D)^T E_t^T alpha, affine in M
                base = sD[t * n_x:(t + 1) * n_x].T @ row.alpha
                bta = sB[t * n_x:(t + 1) * n_x].T @ row.alpha
                cols = np.zeros((nW, nM))
                for k_idx, (r_idx, c_idx) in enumerate(self.m_index):
                    if bta[r_idx] != 0.0:
                        cols[c_idx, k_idx] = bta[r_idx]
                g0 = np.zeros(nv)
                g0[self.sl_V] = bta
                hmu_row = -(row.alpha @ lifted.script_A[t * n_x:(t + 1) * n_x])
                hoff_row = np.zeros((N + 1) * n_x)
                hoff_row[t * n_x:(t + 1) * n_x] = -row.alpha
                if not np.any(base) and not np.any(cols):
                    lin_G.append(g0)
                    lin_h0.append(float(row.beta))
                    lin_Hmu.append(hmu_row)
                    lin_Hoff.append(hoff_row)
                    continue
                packed = chance._compress(np.column_stack([base, cols]))
                dim = packed.shape[0]
                G = np.zeros((1 + dim, nv))
                G[0] = g0
                G[1:, self.sl_M] = -scale * packed[:, 1:]
                h0 = np.concatenate([[float(row.beta)], scale * packed[:, 0]])
                Hmu = np.zeros((1 + dim, n_x))
                Hmu[0] = hmu_row
                Hoff = np.zeros((1 + dim, (N + 1) * n_x))
                Hoff[0] = hoff_row
                soc_specs.append((G, h0, Hmu, Hoff))
        for t in range(N):
            for row in scenario.input_constraints:
                scale = chance.tightening_factor(row.p)
                cols = np.zeros((nW, nM))
                for k_idx, (r_idx, c_idx) in enumerate(self.m_index):
                    blk, i = divmod(r_idx, n_u)
                    if blk == t and row.alpha[i] != 0.0:
                        cols[c_idx, k_idx] = row.alpha[i]
                g0 = np.zeros(nv)
                g0[t * n_u:(t + 1) * n_u] = row.alpha
                if not np.any(cols):
                    lin_G.append(g0)
                    lin_h0.append(float(row.beta))
                    lin_Hmu.append(np.zeros(n_x))
                    lin_Hoff.append(np.zeros((N + 1) * n_x))
                    continue
                packed = chance._compress(
                    np.column_stack([np.zeros(nW), cols]))
                dim = packed.shape[0]
                G = np.zeros((1 + dim, nv))
                G[0] = g0
                G[1:, self.sl_M] = -scale * packed[:, 1:]
                soc_specs.append((
                    G, np.concatenate([[float(row.beta)],
                                       scale * packed[:, 0]]),
                    np.zeros((1 + dim, n_x)), np.zeros((1 + dim, (N + 1) * n_x))))
        ENA = lifted.script_A[N * n_x:]
        ENB = sB[N * n_x:]
        for row in self.ingredients.X_f_mu:
            g0 = np.zeros(nv)
            g0[self.sl_V] = ENB.T @ row.alpha
            lin_G.append(g0)
            lin_h0.append(float(row.beta))
            lin_Hmu.append(-(row.alpha @ ENA))
            hoff = np.zeros((N + 1) * n_x)
            hoff[N * n_x:] = -row.alpha
            lin_Hoff.append(hoff)
        if lin_G:
            push(np.asarray(lin_G), np.asarray(lin_h0),
                 np.asarray(lin_Hmu), np.asarray(lin_Hoff))
            cones.append(conic.NonNeg(len(lin_G)))
        for G, h0, Hmu, Hoff in soc_specs:
            push(G, h0, Hmu, Hoff)
            cones.append(conic.Soc(G.shape[0]))

        # trace epigraph: ||[Qc^(1/2)(B M + D); R^(1/2) M]||_F^2 <= 2 t
        rows_top = (N + 1) * n_x * nW
        rows_bot = nV * nW
        C = np.zeros((rows_top + rows_bot, nM + 1))
        C[:rows_top, 0] = (Qc_h @ sD).ravel()
        for k_idx, (r_idx, c_idx) in enumerate(self.m_index):
            top = np.zeros(((N + 1) * n_x, nW))
            top[:, c_idx] = Qc_h @ sB[:, r_idx]
            bot = np.zeros((nV, nW))
            bot[:, c_idx] = R_h[:, r_idx]
            C[:rows_top, 1 + k_idx] = top.ravel()
            C[rows_top:, 1 + k_idx] = bot.ravel()
        C = chance._compress(C)
        dim = C.shape[0]
        G = np.zeros((2 + dim, nv))
        G[0, i_tcov] = -1.0
        G[1, i_tcov] = -1.0
        G[2:, self.sl_M] = -C[:, 1:]
        push(G, np.concatenate([[0.5], [-0.5], C[:, 0]]))
        cones.append(conic.Soc(2 + dim))
        # mean epigraph
        rows = Qm_h.shape[0]
        G = np.zeros((2 + rows, nv))
        G[0, i_tmean] = -1.0
        G[1, i_tmean] = -1.0
        G[2:, self.sl_V] = -Qm_h @ sB
        Hmu = np.zeros((2 + rows, n_x))
        Hmu[2:] = Qm_h @ lifted.script_A
        Hoff = np.zeros((2 + rows, (N + 1) * n_x))
        Hoff[2:] = Qm_h
        push(G, np.concatenate([[0.5], [-0.5], np.zeros(rows)]), Hmu, Hoff)
        cones.append(conic.Soc(2 + rows))
        # input-energy epigraph
        G = np.zeros((2 + nV, nv))
        G[0, i_tR] = -1.0
        G[1, i_tR] = -1.0
        G[2:, self.sl_V] = -R_h
        push(G, np.concatenate([[0.5], [-0.5], np.zeros(nV)]))
        cones.append(conic.Soc(2 + nV))
        # terminal covariance Sigma_f >= M M^T over the map (B M + D),
        # same deflated encoding as the gain-feedback template
        ENB_full = sB[N * n_x:]
        ENd = sD[N * n_x:]
        nM_ = len(self.m_index)
        coeffs = np.zeros((nM_, n_x, nW))
        for k_idx, (r_idx, c_idx) in enumerate(self.m_index):
            coeffs[k_idx, :, c_idx] = ENB_full[:, r_idx]
        zero_h, zero_coeff, psd_h, psd_coeff, side, neg_h = \
            _terminal_cov_blocks(self.ingredients.Sigma_f, ENd, coeffs,
                                 margin=_terminal_margin(
                                     self.ingredients.Sigma_f))
        if zero_h.size:
            G = np.zeros((zero_h.size, nv))
            G[:, self.sl_M] = -zero_coeff.T
            push(G, zero_h)
            cones.append(conic.Zero(zero_h.size))
        if neg_h.size:
            push(np.zeros((neg_h.size, nv)), neg_h)
            cones.append(conic.NonNeg(neg_h.size))
        if side:
            G = np.zeros((psd_h.size, nv))
            G[:, self.sl_M] = -psd_coeff.T
            push(G, psd_h)
            cones.append(conic.Psd(side))

        c = np.zeros(nv)
        c[i_tcov] = 2.0
        c[i_tmean] = 2.0
        c[i_tR] = 2.0
        self.c = c
        self.G = np.vstack(Gs)
        self.h0 = np.concatenate(h0s)
        self.Hmu = np.vstack(Hmus)
        self.Hoff = np.vstack(Hoffs)
        self.cones = tuple(cones)

    def reset(self):
        pass

    def solve_from(self, x, signal=None):
        x = np.asarray(x, dtype=float).reshape(-1)
        if signal is None:
            offset = np.zeros((self.lifted.N + 1) * self.sys.n_x)
        else:
            offset = lifting.affine_offset(self.sys, self.lifted.N, signal)
        h = self.h0 + self.Hmu @ x + self.Hoff @ offset
        prog = conic.ConicProgram(c=self.c, G=self.G, h=h, cones=self.cones)
        return _solve_or_raise(prog)

    def step(self, x, signal=None):
        t0 = time.perf_counter()
        sol = self.solve_from(x, signal)
        solve_time = time.perf_counter() - t0
        V = sol.x[self.sl_V]
        n_u = self.sys.n_u
        return StepResult(u=V[:n_u].copy(), policy=None, predicted_next=None,
                          mode="Measurement", solve_time=solve_time,
                          diagnostics={"iterations": sol.iterations,
                                       "objective": sol.objective})


def make_controller(kind, scenario, ingredients=None):
    """Factory for the closed-loop harness and the command line."""
    if kind == "cs-smpc":
        return CsSmpcController(scenario, ingredients)
    if kind == "det-mpc":
        return DetMpcController(scenario)
    if kind == "lqr":
        return LqrController(scenario.system, scenario.Q, scenario.R)
    if kind == "dist-fb":
        return DistFbController(scenario, ingredients)
    if kind == "none":
        return ZeroController(scenario.system.n_u)
    raise ValueError(f"unknown controller kind {kind!r}")

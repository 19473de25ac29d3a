"""Stacked-horizon representation of the plant.

The whole horizon is written as one linear map X = sA x0 + sB U + sD W,
with selector matrices picking out individual steps, the prior deviation
covariance Sigma_y, affine offsets from the known curvature channel, and
the block cost matrices of the per-step program.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg


@dataclass(frozen=True)
class LiftedSystem:
    """Horizon-stacked system matrices and dimensions."""

    script_A: np.ndarray   # (N+1)n_x x n_x
    script_B: np.ndarray   # (N+1)n_x x N n_u
    script_D: np.ndarray   # (N+1)n_x x N n_w
    N: int
    n_x: int
    n_u: int
    n_w: int

    @property
    def kvec_dim(self):
        return self.N * self.n_u * self.n_x


def lift(sys, N):
    """Build the stacked matrices so X = sA x0 + sB U + sD W exactly."""
    if N < 1:
        raise ValueError("horizon must be >= 1")
    n_x, n_u, n_w = sys.n_x, sys.n_u, sys.n_w
    powers = [np.eye(n_x)]
    for _ in range(N):
        powers.append(sys.A @ powers[-1])
    sA = np.vstack(powers)
    sB = np.zeros(((N + 1) * n_x, N * n_u))
    sD = np.zeros(((N + 1) * n_x, N * n_w))
    for t in range(1, N + 1):
        for j in range(t):
            blk = powers[t - 1 - j]
            sB[t * n_x:(t + 1) * n_x, j * n_u:(j + 1) * n_u] = blk @ sys.B
            sD[t * n_x:(t + 1) * n_x, j * n_w:(j + 1) * n_w] = blk @ sys.D
    return LiftedSystem(sA, sB, sD, N, n_x, n_u, n_w)


def selectors(N, n_x, n_u):
    """Selector matrices E_k (states, k=0..N) and F_k (inputs, k=0..N-1)."""
    E = []
    for k in range(N + 1):
        Ek = np.zeros((n_x, (N + 1) * n_x))
        Ek[:, k * n_x:(k + 1) * n_x] = np.eye(n_x)
        E.append(Ek)
    F = []
    for k in range(N):
        Fk = np.zeros((n_u, N * n_u))
        Fk[:, k * n_u:(k + 1) * n_u] = np.eye(n_u)
        F.append(Fk)
    return E, F


def sigma_y(lifted, Sigma0, clip_tol=1e-9):
    """Prior covariance Sigma_y = sA Sigma0 sA^T + sD sD^T and its sqrt."""
    Sy = lifted.script_A @ Sigma0 @ lifted.script_A.T + lifted.script_D @ lifted.script_D.T
    Sy = 0.5 * (Sy + Sy.T)
    return Sy, linalg.sym_sqrt(Sy, clip_tol=clip_tol)


def sigma_y_factor(lifted, Sigma0, clip_tol=1e-9):
    """Rectangular factor L with L L^T = Sigma_y.

    Cheaper than the symmetric square root and lower-dimensional when
    Sigma0 = 0 (only the noise columns remain).
    """
    if np.any(Sigma0):
        S0h = linalg.sym_sqrt(Sigma0, clip_tol=clip_tol)
        return np.hstack([lifted.script_A @ S0h, lifted.script_D])
    return lifted.script_D.copy()


def affine_offset(sys, N, signal):
    """Mean shift from the known affine channel over the horizon.

    Block t is sum_{j<t} A^{t-1-j} C signal_j; zero when the system has
    no affine channel.
    """
    n_x = sys.n_x
    offset = np.zeros((N + 1) * n_x)
    if sys.C is None:
        return offset
    signal = np.asarray(signal, dtype=float).reshape(-1)
    if signal.size != N:
        raise ValueError(f"affine signal must have length N={N}")
    x = np.zeros(n_x)
    for t in range(1, N + 1):
        x = sys.A @ x + sys.C * signal[t - 1]
        offset[t * n_x:(t + 1) * n_x] = x
    return offset


def kvec_to_K(kvec, lifted):
    """Expand the free gain entries into the structured stack K.

    Layout: per-step blocks K_t (n_u x n_x) raveled row-major,
    concatenated for t = 0..N-1; the trailing block column is zero.
    """
    N, n_x, n_u = lifted.N, lifted.n_x, lifted.n_u
    kvec = np.asarray(kvec, dtype=float).reshape(N, n_u, n_x)
    K = np.zeros((N * n_u, (N + 1) * n_x))
    for t in range(N):
        K[t * n_u:(t + 1) * n_u, t * n_x:(t + 1) * n_x] = kvec[t]
    return K


def K_to_kvec(K, lifted):
    N, n_x, n_u = lifted.N, lifted.n_x, lifted.n_u
    out = np.empty(N * n_u * n_x)
    for t in range(N):
        blk = K[t * n_u:(t + 1) * n_u, t * n_x:(t + 1) * n_x]
        out[t * n_u * n_x:(t + 1) * n_u * n_x] = blk.ravel()
    return out


def closed_loop_cov(lifted, K, Sigma_y, k):
    """Covariance of the state at step k under the deviation feedback K."""
    n_x = lifted.n_x
    IBK = np.eye((lifted.N + 1) * n_x) + lifted.script_B @ K
    block = IBK @ Sigma_y @ IBK.T
    sl = slice(k * n_x, (k + 1) * n_x)
    cov = block[sl, sl]
    return 0.5 * (cov + cov.T)


def cost_blocks(Q, R, P_mean, N):
    """Block-diagonal cost matrices with the two terminal variants.

    The mean path carries P_mean in the terminal block, the covariance
    path carries zero there (the terminal covariance is constrained, not
    penalized).
    """
    n_x = Q.shape[0]
    n_u = R.shape[0]
    Qbar_mean = np.zeros(((N + 1) * n_x, (N + 1) * n_x))
    Qbar_cov = np.zeros_like(Qbar_mean)
    for t in range(N):
        sl = slice(t * n_x, (t + 1) * n_x)
        Qbar_mean[sl, sl] = Q
        Qbar_cov[sl, sl] = Q
    Qbar_mean[N * n_x:, N * n_x:] = P_mean
    Rbar = np.kron(np.eye(N), R)
    return Qbar_mean, Qbar_cov, Rbar

"""Dense linear-algebra primitives shared by the whole toolkit.

Everything here operates on plain ``numpy`` arrays and is sized for
desk-scale control problems (n <= ~16 state dimensions), so the solvers
favour simplicity and exactness over asymptotic speed: the Lyapunov
equation is solved by Kronecker vectorization and the Riccati equation
by a structure-preserving doubling iteration.
"""

from __future__ import annotations

import numpy as np


class LinalgError(ValueError):
    """Base class for matrix-kernel failures."""


class NotSymmetric(LinalgError):
    """Input matrix is not symmetric within tolerance."""


class IndefiniteBeyondTolerance(LinalgError):
    """Matrix has an eigenvalue below the allowed clipping tolerance."""


class UnstableF(LinalgError):
    """Lyapunov dynamics matrix has spectral radius >= 1."""


class NoStabilizingSolution(LinalgError):
    """Riccati doubling iteration failed to converge."""


def check_finite(M, name="matrix"):
    """Return ``M`` as a float array, rejecting NaN/Inf entries."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise LinalgError(f"{name} contains non-finite entries")
    return M


def sym_sqrt(S, clip_tol=1e-12):
    """Symmetric square root of a symmetric PSD matrix.

    Eigenvalues in [-clip_tol, 0) are clipped to zero; anything below
    -clip_tol raises :class:`IndefiniteBeyondTolerance`.
    """
    S = check_finite(S, "S")
    scale = max(1.0, np.abs(S).max())
    if np.abs(S - S.T).max() > 1e-10 * scale:
        raise NotSymmetric("sym_sqrt requires a symmetric matrix")
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    if vals.min() < -clip_tol:
        raise IndefiniteBeyondTolerance(
            f"eigenvalue {vals.min():.3e} below -clip_tol={-clip_tol:.3e}"
        )
    vals = np.clip(vals, 0.0, None)
    M = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (M + M.T)


def svd_factor(M, rank_tol=1e-10):
    """SVD ``M = L diag(lam) G^T`` plus numerical rank at ``rank_tol``.

    Returns square orthogonal ``L`` (m x m) and ``G`` (n x n) with the
    singular values padded by zeros, so the factors are always full
    orthogonal bases (needed by the covariance-assignment gain).
    """
    M = check_finite(M, "M")
    L, lam, Gt = np.linalg.svd(M, full_matrices=True)
    if lam.size == 0 or lam[0] <= 0.0:
        rank = 0
    else:
        rank = int(np.sum(lam > rank_tol * lam[0]))
    return L, lam, Gt.T, rank


def pinv(M):
    """Moore-Penrose pseudoinverse."""
    M = check_finite(M, "M")
    return np.linalg.pinv(M, rcond=1e-12)


# Pade-13 numerator coefficients (scaling-and-squaring matrix exponential).
_PADE13_B = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
)


def expm(M):
    """Matrix exponential by Pade-13 with scaling and squaring."""
    M = check_finite(M, "M")
    n = M.shape[0]
    if M.shape != (n, n):
        raise LinalgError("expm requires a square matrix")
    norm = np.linalg.norm(M, 1)
    # theta_13 from Higham's analysis; scale down to that ball.
    theta13 = 5.371920351148152
    s = max(0, int(np.ceil(np.log2(norm / theta13))) if norm > theta13 else 0)
    A = M / (2.0 ** s)
    b = _PADE13_B
    I = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I)
    E = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        E = E @ E
    return E


def spectral_radius(M):
    """Largest eigenvalue magnitude."""
    M = check_finite(M, "M")
    if M.shape[0] != M.shape[1]:
        raise LinalgError("spectral_radius requires a square matrix")
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def dlyap(F, W, orientation="forward"):
    """Discrete Lyapunov solve by Kronecker vectorization.

    forward: Sigma = F Sigma F^T + W,  adjoint: P = F^T P F + W.
    Requires spectral_radius(F) < 1.
    """
    F = check_finite(F, "F")
    W = check_finite(W, "W")
    if orientation not in ("forward", "adjoint"):
        raise LinalgError(f"unknown orientation {orientation!r}")
    rho = spectral_radius(F)
    if rho >= 1.0 - 1e-9:
        raise UnstableF(f"spectral radius {rho:.6f} >= 1")
    G = F if orientation == "forward" else F.T
    n = G.shape[0]
    lhs = np.eye(n * n) - np.kron(G, G)
    X = np.linalg.solve(lhs, W.reshape(-1)).reshape(n, n)
    return 0.5 * (X + X.T)


def dare(A, B, Q, R, tol=1e-13, max_iters=200):
    """Discrete algebraic Riccati equation via the doubling iteration.

    Returns ``(P, K)`` with ``K = -(B^T P B + R)^{-1} B^T P A`` so that
    ``A + B K`` is the stable closed loop.
    """
    A = check_finite(A, "A")
    B = check_finite(B, "B")
    Q = check_finite(Q, "Q")
    R = check_finite(R, "R")
    n = A.shape[0]
    Ak = A.copy()
    Gk = B @ np.linalg.solve(R, B.T)
    Hk = Q.copy()
    I = np.eye(n)
    for _ in range(max_iters):
        M = np.linalg.solve(I + Gk @ Hk, np.column_stack([Ak, Gk @ Ak.T]))
        IGHinv_A = M[:, :n]
        IGHinv_GAt = M[:, n:]
        with np.errstate(over="ignore", invalid="ignore"):
            H_next = Hk + Ak.T @ Hk @ IGHinv_A
            G_next = Gk + Ak @ IGHinv_GAt
            A_next = Ak @ IGHinv_A
        if not (np.all(np.isfinite(H_next)) and np.all(np.isfinite(A_next))
                and np.all(np.isfinite(G_next))):
            raise NoStabilizingSolution("doubling iteration diverged")
        delta = np.abs(H_next - Hk).max()
        Ak, Gk, Hk = A_next, G_next, H_next
        if delta <= tol * max(1.0, np.abs(Hk).max()):
            break
    else:
        raise NoStabilizingSolution("doubling iteration did not converge")
    P = 0.5 * (Hk + Hk.T)
    K = -np.linalg.solve(B.T @ P @ B + R, B.T @ P @ A)
    residual = A.T @ P @ A - P + A.T @ P @ B @ K + Q
    if np.linalg.norm(residual, "fro") > 1e-9 * (1.0 + np.linalg.norm(P, "fro")):
        raise NoStabilizingSolution("Riccati residual too large after convergence")
    if spectral_radius(A + B @ K) >= 1.0:
        raise NoStabilizingSolution("closed loop not stable")
    return P, K

"""Primal-dual interior-point solver for symmetric-cone programs.

Solves min c^T x subject to h - G x in K, where K is an ordered product
of zero, nonnegative, second-order, and semidefinite cones (the last in
scaled symmetric vectorization). The algorithm is a homogeneous
self-dual embedding with Nesterov-Todd scaling and Mehrotra
predictor-corrector steps, with a dense Schur-complement KKT solve plus
static regularization and iterative refinement. Everything is
deterministic; a solve owns its workspace.

The single ``solve`` entry point is the backend boundary: an external
solver can be swapped in behind the same program representation.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

_SQRT2 = math.sqrt(2.0)


class NumericalFailure(RuntimeError):
    """KKT factorization breakdown, distinct from infeasibility."""


# ---------------------------------------------------------------------------
# Cones


@dataclass(frozen=True)
class Zero:
    dim: int


@dataclass(frozen=True)
class NonNeg:
    dim: int


@dataclass(frozen=True)
class Soc:
    """Second-order cone; first coordinate bounds the norm of the rest."""

    dim: int


@dataclass(frozen=True)
class Psd:
    """side x side symmetric block, svec form (off-diagonals x sqrt2)."""

    side: int

    @property
    def dim(self):
        return self.side * (self.side + 1) // 2


_SVEC_CACHE = {}


def _svec_indices(n):
    """(rows, cols, scale) index arrays for svec of a side-n matrix."""
    try:
        return _SVEC_CACHE[n]
    except KeyError:
        rows, cols = np.triu_indices(n)
        scale = np.where(rows == cols, 1.0, _SQRT2)
        _SVEC_CACHE[n] = (rows, cols, scale)
        return _SVEC_CACHE[n]


def svec(M):
    """Scaled vectorization: inner products match the matrix Frobenius one."""
    n = M.shape[0]
    rows, cols, scale = _svec_indices(n)
    return M[rows, cols] * scale


def smat(v, n):
    """Inverse of :func:`svec`."""
    rows, cols, scale = _svec_indices(n)
    M = np.zeros((n, n))
    vals = np.asarray(v) / scale
    M[rows, cols] = vals
    M[cols, rows] = vals
    return M


def _smat_cols(V, n):
    """smat applied to every column of V, returning shape (cols, n, n)."""
    rows, cols, scale = _svec_indices(n)
    vals = (V / scale[:, None]).T
    M = np.zeros((V.shape[1], n, n))
    M[:, rows, cols] = vals
    M[:, cols, rows] = vals
    return M


def _svec_cols(Ms):
    """svec applied to a stack of matrices, returning shape (dim, count)."""
    n = Ms.shape[1]
    rows, cols, scale = _svec_indices(n)
    return (Ms[:, rows, cols] * scale).T


# ---------------------------------------------------------------------------
# Program / solution containers


@dataclass
class ConicProgram:
    """min c^T x  s.t.  h - G x in K (K = ordered product of cones)."""

    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    cones: tuple

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        self.G = np.asarray(self.G, dtype=float)
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        self.cones = tuple(self.cones)
        m = sum(K.dim for K in self.cones)
        if self.G.shape != (m, self.c.size):
            raise ValueError(
                f"G is {self.G.shape}, expected ({m}, {self.c.size}) from cones")
        if self.h.size != m:
            raise ValueError("h length does not match cone dimensions")
        for K in self.cones:
            if K.dim < 0 or (isinstance(K, Soc) and K.dim < 1):
                raise ValueError(f"bad cone {K}")

    @property
    def n(self):
        return self.c.size

    @property
    def m(self):
        return self.h.size

    def dump(self, stream=None):
        """Human-readable text dump for cross-checking with other solvers."""
        out = stream or io.StringIO()
        out.write(f"conic program: n={self.n} m={self.m}\n")
        out.write("cones: " + ", ".join(
            f"{type(K).__name__}({K.side if isinstance(K, Psd) else K.dim})"
            for K in self.cones) + "\n")
        np.savetxt(out, self.c[None, :], header="c")
        np.savetxt(out, self.G, header="G")
        np.savetxt(out, self.h[None, :], header="h")
        return out.getvalue() if stream is None else None


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray | None
    duals: np.ndarray | None
    slacks: np.ndarray | None
    objective: float
    gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    certificate: np.ndarray | None = None


@dataclass
class VerifyReport:
    objective: float
    dual_objective: float
    gap: float
    primal_residual: float
    dual_residual: float
    cone_violations: dict = field(default_factory=dict)

    @property
    def worst_violation(self):
        return max(self.cone_violations.values(), default=0.0)


# ---------------------------------------------------------------------------
# Per-cone Nesterov-Todd scaling blocks


class _ZeroBlock:
    degree = 0

    def __init__(self, dim):
        self.dim = dim

    def init_point(self):
        return np.zeros(self.dim)

    def interior_violation(self, v):
        return -np.inf if self.dim else -np.inf


class _NonNegBlock:
    def __init__(self, dim):
        self.dim = dim
        self.degree = dim

    def init_point(self):
        return np.ones(self.dim)

    def interior_violation(self, v):
        return float(-v.min()) if self.dim else -np.inf

    def scale(self, s, z):
        if s.min() <= 0.0 or z.min() <= 0.0:
            raise NumericalFailure("nonnegative iterate left the cone")
        self.w = np.sqrt(s / z)
        self.lam = np.sqrt(s * z)

    def scale_G(self, Gblk):
        return Gblk / self.w[:, None]

    def vinv(self, v):
        return v / (self.w * self.w)

    def v_apply(self, v):
        return v * (self.w * self.w)

    def lam_sq(self):
        return self.lam * self.lam

    def lam_inv_circ(self, v):
        return v / self.lam

    def circ(self, u, v):
        return u * v

    def winv_t(self, v):      # W^{-T} v (W diagonal, symmetric)
        return v / self.w

    winv = winv_t

    def w_apply(self, v):     # W v
        return v * self.w

    def wt_apply(self, v):    # W^T v
        return v * self.w

    def max_step(self, rho):
        neg = rho < 0.0
        if not np.any(neg):
            return np.inf
        return float(np.min(-self.lam[neg] / rho[neg]))


class _SocBlock:
    def __init__(self, dim):
        self.dim = dim
        self.degree = 1

    def init_point(self):
        e = np.zeros(self.dim)
        e[0] = 1.0
        return e

    def interior_violation(self, v):
        return float(np.linalg.norm(v[1:]) - v[0])

    @staticmethod
    def _res(v):
        r2 = v[0] * v[0] - v[1:] @ v[1:]
        if r2 <= 0.0 or v[0] <= 0.0:
            raise NumericalFailure("second-order iterate left the cone")
        return math.sqrt(r2)

    def scale(self, s, z):
        rs = self._res(s)
        rz = self._res(z)
        sb = s / rs
        zb = z / rz
        gamma = math.sqrt((1.0 + sb[0] * zb[0] + sb[1:] @ zb[1:]) / 2.0)
        wb = np.empty(self.dim)
        wb[0] = (sb[0] + zb[0]) / (2.0 * gamma)
        wb[1:] = (sb[1:] - zb[1:]) / (2.0 * gamma)
        self.wb = wb
        wbi = wb.copy()
        wbi[1:] = -wbi[1:]
        self.wb_inv = wbi
        self.eta = math.sqrt(rs / rz)
        # scaled point lambda = W z = sqrt(rs rz) * Wbar zbar, closed form
        lam_bar = self._hyper_apply(wb, zb.reshape(-1, 1)).ravel()
        self.lam = math.sqrt(rs * rz) * lam_bar
        # reference quantities for the scaled point
        self.lam_res = self._res(self.lam)

    @staticmethod
    def _hyper_apply(wb, V):
        """Apply [wb0 wb1^T; wb1 I + wb1 wb1^T/(1+wb0)] to columns of V."""
        t = wb[0] * V[0] + wb[1:] @ V[1:]
        out = np.empty_like(V)
        out[0] = t
        out[1:] = V[1:] + np.outer(wb[1:], (V[0] + t) / (1.0 + wb[0]))
        return out

    def _apply(self, v, inverse=False):
        wb = self.wb_inv if inverse else self.wb
        if v.ndim == 1:
            w1 = wb[1:]
            t = wb[0] * v[0] + w1 @ v[1:]
            out = np.empty_like(v)
            out[0] = t
            out[1:] = v[1:] + ((v[0] + t) / (1.0 + wb[0])) * w1
        else:
            out = self._hyper_apply(wb, v)
        out *= (1.0 / self.eta) if inverse else self.eta
        return out

    def scale_G(self, Gblk):
        return self._apply(Gblk, inverse=True)

    def vinv(self, v):
        return self._apply(self._apply(v, inverse=True), inverse=True)

    def v_apply(self, v):
        return self._apply(self._apply(v))

    def lam_sq(self):
        lam = self.lam
        out = np.empty(self.dim)
        out[0] = lam @ lam
        out[1:] = 2.0 * lam[0] * lam[1:]
        return out

    def lam_inv_circ(self, v):
        a, b = self.lam[0], self.lam[1:]
        det = a * a - b @ b
        x0 = (a * v[0] - b @ v[1:]) / det
        out = np.empty(self.dim)
        out[0] = x0
        out[1:] = (v[1:] - x0 * b) / a
        return out

    def circ(self, u, v):
        out = np.empty(self.dim)
        out[0] = u @ v
        out[1:] = u[0] * v[1:] + v[0] * u[1:]
        return out

    def winv_t(self, v):
        return self._apply(v, inverse=True)

    winv = winv_t

    def w_apply(self, v):
        return self._apply(v)

    def wt_apply(self, v):
        return self._apply(v)

    def max_step(self, rho):
        lam = self.lam
        a = rho[0] * rho[0] - rho[1:] @ rho[1:]
        b = lam[0] * rho[0] - lam[1:] @ rho[1:]
        c = self.lam_res ** 2
        # roots of a t^2 + 2 b t + c = 0; feasible while positive
        best = np.inf
        if abs(a) < 1e-300:
            if b < 0.0:
                best = -c / (2.0 * b)
        else:
            disc = b * b - a * c
            if disc >= 0.0:
                sq = math.sqrt(disc)
                for t in ((-b - sq) / a, (-b + sq) / a):
                    if t > 0.0:
                        best = min(best, t)
        if rho[0] < 0.0:
            best = min(best, -lam[0] / rho[0])
        return best


class _PsdBlock:
    def __init__(self, side):
        self.side = side
        self.dim = side * (side + 1) // 2
        self.degree = side

    def init_point(self):
        return svec(np.eye(self.side))

    def interior_violation(self, v):
        return float(-np.linalg.eigvalsh(smat(v, self.side)).min())

    def scale(self, s, z):
        n = self.side
        S = smat(s, n)
        Z = smat(z, n)
        try:
            Ls = np.linalg.cholesky(S)
            Lz = np.linalg.cholesky(Z)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure("semidefinite iterate left the cone") from exc
        U, sig, Vt = np.linalg.svd(Lz.T @ Ls)
        if sig.min() <= 0.0:
            raise NumericalFailure("degenerate semidefinite scaling")
        self.R = Ls @ Vt.T / np.sqrt(sig)
        self.Rinv = np.linalg.solve(self.R, np.eye(n))
        self.sig = sig
        self.lam = svec(np.diag(sig))

    def scale_G(self, Gblk):
        Ms = _smat_cols(Gblk, self.side)
        out = self.Rinv @ Ms @ self.Rinv.T
        return _svec_cols(out)

    def vinv(self, v):
        M = smat(v, self.side)
        W = self.Rinv.T @ self.Rinv
        return svec(W @ M @ W)

    def v_apply(self, v):
        M = smat(v, self.side)
        W = self.R @ self.R.T
        return svec(W @ M @ W)

    def lam_sq(self):
        return svec(np.diag(self.sig * self.sig))

    def lam_inv_circ(self, v):
        M = smat(v, self.side)
        denom = 0.5 * (self.sig[:, None] + self.sig[None, :])
        return svec(M / denom)

    def circ(self, u, v):
        U = smat(u, self.side)
        V = smat(v, self.side)
        P = U @ V
        return svec(0.5 * (P + P.T))

    def winv_t(self, v):      # svec(R^{-1} mat(v) R^{-T})
        M = smat(v, self.side)
        return svec(self.Rinv @ M @ self.Rinv.T)

    def winv(self, v):        # svec(R^{-T} mat(v) R^{-1}), inverse of w_apply
        M = smat(v, self.side)
        return svec(self.Rinv.T @ M @ self.Rinv)

    def w_apply(self, v):     # svec(R^T mat(v) R)
        M = smat(v, self.side)
        return svec(self.R.T @ M @ self.R)

    def wt_apply(self, v):    # adjoint: svec(R mat(v) R^T)
        M = smat(v, self.side)
        return svec(self.R @ M @ self.R.T)

    def max_step(self, rho):
        P = smat(rho, self.side)
        rt = np.sqrt(self.sig)
        M = P / np.outer(rt, rt)
        lo = np.linalg.eigvalsh(M).min()
        if lo >= 0.0:
            return np.inf
        return 1.0 / (-lo)


def _make_blocks(cones):
    blocks = []
    for K in cones:
        if isinstance(K, Zero):
            blocks.append(_ZeroBlock(K.dim))
        elif isinstance(K, NonNeg):
            blocks.append(_NonNegBlock(K.dim))
        elif isinstance(K, Soc):
            blocks.append(_SocBlock(K.dim))
        elif isinstance(K, Psd):
            blocks.append(_PsdBlock(K.side))
        else:
            raise TypeError(f"unknown cone {K!r}")
    return blocks


# ---------------------------------------------------------------------------
# Solver


class _Workspace:
    """One factorized KKT system per Nesterov-Todd scaling.

    Works entirely in the scaled dual variable zt = W z (zero-cone rows
    scaled by sqrt(delta_zero) instead), where the system reads
        Gs^T zt = bx,  Gs dx - zt = W^{-T} bz,  Gs = W^{-T} G,
    so both the Schur solve and the iterative refinement avoid the
    catastrophic cancellation of forming W^T W products near convergence.
    """

    def __init__(self, prog, blocks, slices, delta_zero=1e-9, delta_x=1e-10):
        self.prog = prog
        self.blocks = blocks
        self.slices = slices
        self.delta_zero = delta_zero
        self.sqrt_dz = math.sqrt(delta_zero)
        self.delta_x = delta_x

    def factor(self, identity=False):
        G = self.prog.G
        self.identity = identity
        Gs = np.empty_like(G)
        for blk, sl in zip(self.blocks, self.slices):
            if isinstance(blk, _ZeroBlock):
                Gs[sl] = G[sl] / self.sqrt_dz
            elif identity:
                Gs[sl] = G[sl]
            else:
                Gs[sl] = blk.scale_G(G[sl])
        self.Gs = Gs
        # QR of the stacked scaled matrix instead of Cholesky of Gs^T Gs:
        # R^T R = Gs^T Gs + delta_x I without squaring the condition
        # number, and the regularization rows keep R full rank.
        n = G.shape[1]
        stacked = np.vstack([Gs, math.sqrt(self.delta_x) * np.eye(n)])
        R = np.linalg.qr(stacked, mode="r")
        if not np.all(np.isfinite(R)) or np.abs(R.diagonal()).min() == 0.0:
            raise NumericalFailure("KKT factorization breakdown")
        self.R = R

    def scale_rhs(self, bz):
        """Apply W^{-T} per cone (zero rows divided by sqrt(delta_zero))."""
        out = np.empty_like(bz)
        for blk, sl in zip(self.blocks, self.slices):
            if isinstance(blk, _ZeroBlock):
                out[sl] = bz[sl] / self.sqrt_dz
            elif self.identity:
                out[sl] = bz[sl]
            else:
                out[sl] = blk.winv_t(bz[sl])
        return out

    def unscale_dual(self, zt):
        """Recover z from zt = W z (zero rows: zt = sqrt(delta_zero) z)."""
        out = np.empty_like(zt)
        for blk, sl in zip(self.blocks, self.slices):
            if isinstance(blk, _ZeroBlock):
                out[sl] = zt[sl] / self.sqrt_dz
            elif self.identity:
                out[sl] = zt[sl]
            else:
                out[sl] = blk.winv(zt[sl])
        return out

    def _solve_once(self, bx, bzt):
        rhs = bx + self.Gs.T @ bzt
        y = solve_triangular(self.R.T, rhs, lower=True, check_finite=False)
        dx = solve_triangular(self.R, y, lower=False, check_finite=False)
        dzt = self.Gs @ dx - bzt
        return dx, dzt

    def solve_scaled(self, bx, bzt, refine=2):
        """Solve the scaled KKT system; returns (dx, zt)."""
        dx, dzt = self._solve_once(bx, bzt)
        for _ in range(refine):
            rx = bx - self.Gs.T @ dzt
            rzt = bzt - self.Gs @ dx + dzt
            # the true zero-cone equation carries no dual term
            for blk, sl in zip(self.blocks, self.slices):
                if isinstance(blk, _ZeroBlock):
                    rzt[sl] = bzt[sl] - self.Gs[sl] @ dx
            ex, ezt = self._solve_once(rx, rzt)
            dx += ex
            dzt += ezt
        return dx, dzt

    def solve(self, bx, bz, refine=2):
        """Solve [0 G^T; G -W^T W][dx; dz] = [bx; bz]; returns (dx, dz)."""
        dx, dzt = self.solve_scaled(bx, self.scale_rhs(bz), refine=refine)
        return dx, self.unscale_dual(dzt)


def _cone_slices(cones):
    out = []
    lo = 0
    for K in cones:
        out.append(slice(lo, lo + K.dim))
        lo += K.dim
    return out


def solve(prog, feas_tol=1e-8, gap_tol=1e-8, max_iter=200, verbose=False):
    """Solve a conic program; see module docstring for the algorithm."""
    n, m = prog.n, prog.m
    c, G, h = prog.c, prog.G, prog.h
    cones = prog.cones
    blocks = _make_blocks(cones)
    slices = _cone_slices(cones)
    degree = sum(blk.degree for blk in blocks)
    if degree == 0 and m > 0:
        degree = 1
    ws = _Workspace(prog, blocks, slices)

    zero_mask = np.zeros(m, dtype=bool)
    for blk, sl in zip(blocks, slices):
        if isinstance(blk, _ZeroBlock):
            zero_mask[sl] = True

    # --- initial point: two identity-scaled least-squares solves, then
    # shift s and z into the cone interior.
    ws.factor(identity=True)
    x, z0 = ws.solve(np.zeros(n), h)
    s = h - G @ x
    xz, z = ws.solve(-c, np.zeros(m))
    for blk, sl in zip(blocks, slices):
        if isinstance(blk, _ZeroBlock):
            s[sl] = 0.0
            continue
        e = blk.init_point()
        vs = blk.interior_violation(s[sl])
        if vs >= -1e-8:
            s[sl] = s[sl] + (1.0 + vs) * e
        vz = blk.interior_violation(z[sl])
        if vz >= -1e-8:
            z[sl] = z[sl] + (1.0 + vz) * e
    tau, kappa = 1.0, 1.0

    norm_c = max(1.0, np.linalg.norm(c))
    norm_h = max(1.0, np.linalg.norm(h))
    best = None
    status = "MaxIterations"
    iters = 0

    def cone_violation(v):
        worst = 0.0
        for blk, sl in zip(blocks, slices):
            u = v[sl]
            if u.size == 0:
                continue
            if isinstance(blk, _ZeroBlock):
                worst = max(worst, float(np.abs(u).max()))
            else:
                worst = max(worst, max(0.0, blk.interior_violation(u)))
        return worst

    def recovered_candidate(x, z, tau):
        """Optimality of (x, z)/tau measured directly on the recovered pair.

        Near solutions without a strictly feasible point tau tends to zero
        and the homogeneous residuals stop reflecting the quality of the
        recovered iterate; the direct test keeps such solves terminating.
        """
        xs = x / tau
        zs = z / tau
        sres = h - G @ xs
        if cone_violation(sres) > feas_tol * (1.0 + norm_h):
            return None
        zv = zs.copy()
        zv[zero_mask] = 0.0
        if cone_violation(zv) > feas_tol * (1.0 + np.linalg.norm(zs)):
            return None
        dres_vec = G.T @ zs + c
        dres = np.linalg.norm(dres_vec) / norm_c
        if dres > feas_tol * (1.0 + norm_c):
            return None
        pobj = float(c @ xs)
        gap = abs(pobj + h @ zs)
        relgap = gap / max(1.0, abs(pobj))
        if gap > gap_tol and relgap > gap_tol:
            return None
        pres = cone_violation(sres) / norm_h
        return (xs, zs, sres, pobj, relgap, pres, dres)

    for it in range(max_iter):
        iters = it + 1
        # residuals of the embedding
        res_x = G.T @ z + c * tau
        res_z = s + G @ x - h * tau
        res_tau = kappa + c @ x + h @ z
        live = ~zero_mask
        sz = float(s[live] @ z[live])
        mu = (sz + tau * kappa) / (degree + 1)

        pres = np.linalg.norm(res_z) / (tau * norm_h)
        dres = np.linalg.norm(res_x) / (tau * norm_c)
        pobj = c @ x / tau
        dobj = -h @ z / tau
        gap = sz / (tau * tau)
        relgap = gap / max(1.0, abs(pobj))
        if verbose:
            print(f"it {it:3d}  pres {pres:9.2e}  dres {dres:9.2e}  "
                  f"gap {gap:9.2e}  pobj {pobj: .8e}  dobj {dobj: .8e}  "
                  f"tau {tau:8.2e}  kappa {kappa:8.2e}")
        if pres <= feas_tol and dres <= feas_tol and \
                (gap <= gap_tol or relgap <= gap_tol):
            status = "Optimal"
            best = (x / tau, z / tau, s / tau, pobj, relgap, pres, dres)
            break
        hz = h @ z
        cx = c @ x
        # a certificate whose objective is tiny against its norm is noise
        # from a collapsing tau, not evidence of infeasibility
        if hz < 0.0 and np.linalg.norm(G.T @ z) / (-hz) <= feas_tol and \
                -hz >= 1e-8 * norm_h * np.linalg.norm(z):
            status = "PrimalInfeasible"
            best = (None, z / (-hz), None, np.inf, np.inf, pres, dres)
            break
        if cx < 0.0 and np.linalg.norm(G @ x + s) / (-cx) <= feas_tol and \
                -cx >= 1e-8 * norm_c * np.linalg.norm(x):
            status = "DualInfeasible"
            best = (x / (-cx), None, s / (-cx), -np.inf, np.inf, pres, dres)
            break
        cand = recovered_candidate(x, z, tau)
        if cand is not None:
            status = "Optimal"
            best = cand
            break

        try:
            for blk, sl in zip(blocks, slices):
                if not isinstance(blk, _ZeroBlock):
                    blk.scale(s[sl], z[sl])
            ws.factor()
        except NumericalFailure:
            status = "NumericalFailure"
            break

        # base direction for the tau elimination (scaled dual kept around)
        x1, z1t = ws.solve_scaled(-c, ws.scale_rhs(h))
        z1 = ws.unscale_dual(z1t)
        denom_base = c @ x1 + h @ z1 - kappa / tau
        if denom_base == 0.0:
            status = "NumericalFailure"
            break

        def newton(d_s, d_kappa, rx, rz, rt):
            """One Newton solve; all cone directions kept NT-scaled."""
            bzt = ws.scale_rhs(rz)
            for blk, sl in zip(blocks, slices):
                if not isinstance(blk, _ZeroBlock):
                    bzt[sl] = bzt[sl] - blk.lam_inv_circ(d_s[sl])
            x2, z2t = ws.solve_scaled(rx, bzt)
            z2 = ws.unscale_dual(z2t)
            dtau = (rt - d_kappa / tau - c @ x2 - h @ z2) / denom_base
            dx = x2 + dtau * x1
            dzt = z2t + dtau * z1t
            dz = z2 + dtau * z1
            dst = np.empty(m)
            ds = np.empty(m)
            for blk, sl in zip(blocks, slices):
                if isinstance(blk, _ZeroBlock):
                    dst[sl] = 0.0
                    ds[sl] = 0.0
                else:
                    dst[sl] = blk.lam_inv_circ(d_s[sl]) - dzt[sl]
                    ds[sl] = blk.wt_apply(dst[sl])
            dkappa = (d_kappa - kappa * dtau) / tau
            return dx, dz, ds, dtau, dkappa, dst, dzt

        def max_step(dst, dzt, dtau, dkappa):
            alpha = np.inf
            for blk, sl in zip(blocks, slices):
                if isinstance(blk, _ZeroBlock):
                    continue
                alpha = min(alpha, blk.max_step(dst[sl]))
                alpha = min(alpha, blk.max_step(dzt[sl]))
            if dtau < 0.0:
                alpha = min(alpha, -tau / dtau)
            if dkappa < 0.0:
                alpha = min(alpha, -kappa / dkappa)
            return alpha

        # predictor
        d_s = np.zeros(m)
        for blk, sl in zip(blocks, slices):
            if not isinstance(blk, _ZeroBlock):
                d_s[sl] = -blk.lam_sq()
        _, _, _, dtaua, dkappaa, dsta, dzta = newton(
            d_s, -tau * kappa, -res_x, -res_z, -res_tau)
        alpha_aff = min(1.0, max_step(dsta, dzta, dtaua, dkappaa))
        sigma = (1.0 - alpha_aff) ** 3

        # corrector (Mehrotra second-order term in scaled space)
        d_s2 = np.zeros(m)
        for blk, sl in zip(blocks, slices):
            if isinstance(blk, _ZeroBlock):
                continue
            d_s2[sl] = -blk.lam_sq() - blk.circ(dsta[sl], dzta[sl]) + \
                sigma * mu * blk.init_point()
        d_kappa2 = -tau * kappa - dtaua * dkappaa + sigma * mu
        fac = -(1.0 - sigma)
        dx, dz, ds, dtau, dkappa, dst, dzt = newton(
            d_s2, d_kappa2, fac * res_x, fac * res_z, fac * res_tau)
        alpha = min(1.0, 0.99 * max_step(dst, dzt, dtau, dkappa))
        if not np.isfinite(alpha) or alpha <= 1e-14:
            status = "NumericalFailure"
            break

        x = x + alpha * dx
        z = z + alpha * dz
        s = s + alpha * ds
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa
        if tau <= 1e-12 or kappa < 0.0 or not np.isfinite(tau):
            # tau collapsing without a valid certificate: the embedding
            # has run out of resolution
            status = "NumericalFailure"
            break

    if best is None and tau > 0.0 and np.isfinite(tau):
        # the final iterate was updated after its last direct test
        cand = recovered_candidate(x, z, tau)
        if cand is not None:
            status = "Optimal"
            best = cand
    if best is None:
        # report the last iterate scaled back, whatever the status
        res_x = G.T @ z + c * tau
        res_z = s + G @ x - h * tau
        live = ~zero_mask
        sz = float(s[live] @ z[live])
        pobj = c @ x / tau
        best = (x / tau, z / tau, s / tau, pobj,
                sz / (tau * tau) / max(1.0, abs(pobj)),
                np.linalg.norm(res_z) / (tau * norm_h),
                np.linalg.norm(res_x) / (tau * norm_c))

    xs, zs, ss, obj, relgap, pres, dres = best
    cert = None
    if status == "PrimalInfeasible":
        cert = zs
        xs, ss = None, None
        obj = np.inf
    elif status == "DualInfeasible":
        cert = xs
        zs = None
        obj = -np.inf
    return ConicSolution(status=status, x=xs, duals=zs, slacks=ss,
                         objective=float(obj), gap=float(relgap),
                         primal_residual=float(pres),
                         dual_residual=float(dres),
                         iterations=iters, certificate=cert)


def verify(prog, sol):
    """Independent residual/gap recomputation for an Optimal solution.

    Reports per-cone worst violations of the slack h - G x.
    """
    if sol.status != "Optimal":
        raise ValueError("verify requires an Optimal solution")
    x, z = sol.x, sol.duals
    slack = prog.h - prog.G @ x
    pres = 0.0
    violations = {}
    lo = 0
    for idx, K in enumerate(prog.cones):
        v = slack[lo:lo + K.dim]
        name = f"{idx}:{type(K).__name__}"
        if isinstance(K, Zero):
            violations[name] = float(np.abs(v).max()) if K.dim else 0.0
        elif isinstance(K, NonNeg):
            violations[name] = float(max(0.0, -v.min())) if K.dim else 0.0
        elif isinstance(K, Soc):
            violations[name] = float(max(0.0, np.linalg.norm(v[1:]) - v[0]))
        else:
            violations[name] = float(
                max(0.0, -np.linalg.eigvalsh(smat(v, K.side)).min()))
        lo += K.dim
    pres = max(violations.values(), default=0.0)
    dres = float(np.linalg.norm(prog.G.T @ z + prog.c))
    pobj = float(prog.c @ x)
    dobj = float(-prog.h @ z)
    gap = abs(pobj - dobj) / max(1.0, abs(pobj))
    return VerifyReport(objective=pobj, dual_objective=dobj, gap=gap,
                        primal_residual=pres, dual_residual=dres,
                        cone_violations=violations)

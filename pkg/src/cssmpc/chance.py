"""Deterministic tightening of Gaussian half-space chance constraints.

A row P(alpha^T v <= beta) >= 1 - p on a Gaussian v with mean m and
covariance LL^T becomes alpha^T m + Phi^{-1}(1-p) ||L^T alpha|| <= beta.
Over the stacked horizon, the mean part is affine in the feedforward V
and the norm argument is affine in the gain entries, which is exactly a
second-order cone row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class RiskOutOfRange(ValueError):
    """Row risk outside the open interval (0, 0.5)."""


# Wichura's rational approximation of the standard normal quantile.
_A = (3.3871328727963666080, 133.14166789178437745, 1971.5909503065514427,
      13731.693765509461125, 45921.953931549871457, 67265.770927008700853,
      33430.575583588128105, 2509.0809287301226727)
_B = (1.0, 42.313330701600911252, 687.18700749205790830,
      5394.1960214247511077, 21213.794301586595867, 39307.895800092710610,
      28729.085735721942674, 5226.4952788528545610)
_C = (1.42343711074968357734, 4.63033784615654529590, 5.76949722146069140550,
      3.64784832476320460504, 1.27045825245236838258, 0.241780725177450611770,
      0.0227238449892691845833, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187, 1.67638483018380384940,
      0.689767334985100004550, 0.148103976427480074590,
      0.0151986665636164571966, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720, 5.46378491116411436990, 1.78482653991729133580,
      0.296560571828504891230, 0.0265321895265761230930,
      0.00124266094738807843860, 2.71155556874348757815e-5,
      2.01033439929228813265e-7)
_F = (1.0, 0.599832206555887937690, 0.136929880922735805310,
      0.0148753612908506148525, 7.86869131145613259100e-4,
      1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(coeffs, x):
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def inv_norm_cdf(q):
    """Standard normal quantile Phi^{-1}(q) for q in (0, 1).

    Rational approximation followed by one Newton step against the
    erfc-based CDF, accurate to full double precision over the whole
    open interval.
    """
    if not (0.0 < q < 1.0):
        raise RiskOutOfRange(f"quantile argument {q} outside (0, 1)")
    r = q - 0.5
    if abs(r) <= 0.425:
        s = 0.180625 - r * r
        z = r * _poly(_A, s) / _poly(_B, s)
    else:
        s = q if r < 0.0 else 1.0 - q
        t = math.sqrt(-math.log(s))
        if t <= 5.0:
            t -= 1.6
            z = _poly(_C, t) / _poly(_D, t)
        else:
            t -= 5.0
            z = _poly(_E, t) / _poly(_F, t)
        if r < 0.0:
            z = -z
    # One Newton polish: Phi(z) - q has derivative phi(z).
    cdf = 0.5 * math.erfc(-z / math.sqrt(2.0))
    pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    if pdf > 0.0:
        z -= (cdf - q) / pdf
    return z


def tightening_factor(p):
    """Backoff multiplier Phi^{-1}(1 - p) for a row risk p in (0, 0.5].

    The boundary p = 0.5 gives a zero backoff, so the row degenerates to
    a constraint on the mean alone.
    """
    if p == 0.5:
        return 0.0
    if not (0.0 < p < 0.5):
        raise RiskOutOfRange(f"row risk {p} outside (0, 0.5]")
    return inv_norm_cdf(1.0 - p)


@dataclass(frozen=True)
class TightenedRow:
    """One deterministic surrogate row over the horizon decision variables.

    Feasibility for (V, kvec) means
        lin_V @ V + lin_const + scale * ||norm_const + norm_K @ kvec|| <= offset.
    ``norm_K`` columns follow the kvec layout of the gain stack; rows with
    ``scale == 0`` or an identically zero norm argument degenerate to a
    plain linear inequality.
    """

    lin_V: np.ndarray
    lin_const: float
    norm_const: np.ndarray
    norm_K: np.ndarray
    scale: float
    offset: float

    @property
    def is_linear(self):
        return self.scale == 0.0 or (
            not np.any(self.norm_const) and not np.any(self.norm_K))

    def margin(self, V, kvec):
        lhs = float(self.lin_V @ V) + self.lin_const
        if not self.is_linear:
            lhs += self.scale * np.linalg.norm(self.norm_const + self.norm_K @ kvec)
        return self.offset - lhs


def _compress(M, tol=1e-12):
    """Replace M by a short matrix with the same ||M v|| for all v.

    Gram-based reduction: if M is m x d with m > d, the d x d root of
    M^T M gives an equivalent norm with at most d rows.
    """
    m, d = M.shape
    if m <= d:
        return M
    G = M.T @ M
    vals, vecs = np.linalg.eigh(0.5 * (G + G.T))
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def tighten_state_row(row, lifted, L, t, affine=0.0):
    """Deterministic surrogate of a state chance row at horizon step t.

    ``L`` is any factor with L L^T equal to the prior stacked deviation
    covariance. ``affine`` carries the whole constant part of the mean at
    step t already dotted with alpha (initial-mean propagation plus the
    known affine channel).
    """
    n_x, n_u, N = lifted.n_x, lifted.n_u, lifted.N
    alpha = row.alpha
    scale = tightening_factor(row.p)
    sl = slice(t * n_x, (t + 1) * n_x)
    lin_V = lifted.script_B[sl].T @ alpha
    lin_const = float(affine)
    # norm argument: L^T (I + BK)^T E_t^T alpha = L^T E_t^T alpha + L^T K^T B_t^T alpha
    norm_const = L[sl].T @ alpha
    bta = lifted.script_B[sl].T @ alpha            # N n_u
    # column for kvec entry (tau, i, j): (bta at input tau, row i) * L^T e_{tau,j}
    r = L.shape[1]
    norm_K = np.zeros((r, N * n_u * n_x))
    for tau in range(min(t, N)):
        coef = bta[tau * n_u:(tau + 1) * n_u]
        if not np.any(coef):
            continue
        Lblk = L[tau * n_x:(tau + 1) * n_x].T      # r x n_x
        base = tau * n_u * n_x
        for i in range(n_u):
            if coef[i] == 0.0:
                continue
            norm_K[:, base + i * n_x:base + (i + 1) * n_x] += coef[i] * Lblk
    stacked = _compress(np.column_stack([norm_const, norm_K]))
    return TightenedRow(lin_V, lin_const, stacked[:, 0], stacked[:, 1:],
                        scale, float(row.beta))


def tighten_input_row(row, lifted, L, t):
    """Deterministic surrogate of an input chance row at horizon step t."""
    n_x, n_u, N = lifted.n_x, lifted.n_u, lifted.N
    alpha = row.alpha
    scale = tightening_factor(row.p)
    lin_V = np.zeros(N * n_u)
    lin_V[t * n_u:(t + 1) * n_u] = alpha
    # norm argument: L^T K^T F_t^T alpha lives entirely in gain block t.
    r = L.shape[1]
    norm_K = np.zeros((r, N * n_u * n_x))
    Lblk = L[t * n_x:(t + 1) * n_x].T
    base = t * n_u * n_x
    for i in range(n_u):
        if alpha[i] == 0.0:
            continue
        norm_K[:, base + i * n_x:base + (i + 1) * n_x] += alpha[i] * Lblk
    stacked = _compress(np.column_stack([np.zeros(r), norm_K]))
    return TightenedRow(lin_V, 0.0, stacked[:, 0], stacked[:, 1:],
                        scale, float(row.beta))

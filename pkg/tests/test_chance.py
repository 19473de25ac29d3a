import math

import numpy as np
import pytest
from scipy.special import ndtr, ndtri

from cssmpc import chance, lifting, model
from conftest import random_system


class TestInvNormCdf:
    def test_median(self):
        assert chance.inv_norm_cdf(0.5) == 0.0

    def test_known_quantiles(self):
        assert abs(chance.inv_norm_cdf(1.0 - 1e-3) - 3.090232) <= 1e-6
        assert abs(chance.inv_norm_cdf(0.975) - 1.959964) <= 1e-6

    def test_round_trip_log_grid(self):
        # Phi(Phi^{-1}(q)) = q over a log-spaced grid of both tails
        qs = np.concatenate([np.logspace(-9, -1, 40),
                             1.0 - np.logspace(-9, -1, 40), [0.5]])
        for q in qs:
            z = chance.inv_norm_cdf(float(q))
            assert abs(ndtr(z) - q) <= 1e-12

    def test_matches_reference_quantile(self):
        qs = np.linspace(0.001, 0.999, 199)
        zs = np.array([chance.inv_norm_cdf(float(q)) for q in qs])
        np.testing.assert_allclose(zs, ndtri(qs), atol=1e-12)

    def test_strictly_increasing(self):
        qs = np.concatenate([np.logspace(-9, -0.31, 60),
                             1.0 - np.logspace(-9, -0.32, 60)])
        qs.sort()
        zs = [chance.inv_norm_cdf(float(q)) for q in qs]
        assert all(b > a for a, b in zip(zs, zs[1:]))

    def test_rejects_boundary(self):
        for bad in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(chance.RiskOutOfRange):
                chance.inv_norm_cdf(bad)


class TestTighteningFactor:
    def test_half_is_zero(self):
        assert chance.tightening_factor(0.5) == 0.0

    def test_one_in_thousand(self):
        assert abs(chance.tightening_factor(1e-3) - 3.090232) <= 1e-6

    def test_zero_risk_rejected(self):
        with pytest.raises(chance.RiskOutOfRange):
            chance.tightening_factor(0.0)


def _lifted_pair(rng, n_x=2, n_u=1, n_w=2, N=4):
    sys = random_system(rng, n_x=n_x, n_u=n_u, n_w=n_w)
    lifted = lifting.lift(sys, N)
    L = lifting.sigma_y_factor(lifted, np.zeros((n_x, n_x)))
    return sys, lifted, L


class TestTightenStateRow:
    def test_mean_only_at_half_risk(self):
        from types import SimpleNamespace
        rng = np.random.default_rng(0)
        sys, lifted, L = _lifted_pair(rng)
        # p = 0.5 is below the scenario schema's floor but the tightening
        # itself degenerates cleanly to a mean-only row
        row = SimpleNamespace(alpha=np.array([1.0, 0.0]), beta=1.0, p=0.5)
        tr = chance.tighten_state_row(row, lifted, L, 2)
        assert tr.scale == 0.0

    def test_zero_gain_margin_formula(self):
        rng = np.random.default_rng(1)
        sys, lifted, L = _lifted_pair(rng, N=5)
        alpha = np.array([-2.0, 1.0])
        row = model.ConstraintRow(alpha=alpha, beta=2.5, p=1e-3)
        t = 3
        tr = chance.tighten_state_row(row, lifted, L, t)
        kvec = np.zeros(lifted.kvec_dim)
        V = rng.standard_normal(lifted.N * lifted.n_u)
        # direct formula: alpha^T mean + z * sqrt(alpha^T Sigma_t alpha)
        Sy = L @ L.T
        sl = slice(t * 2, (t + 1) * 2)
        sigma = math.sqrt(alpha @ Sy[sl, sl] @ alpha)
        mean_term = alpha @ (lifted.script_B[sl] @ V)
        expect_lhs = mean_term + chance.tightening_factor(1e-3) * sigma
        assert abs((tr.offset - tr.margin(V, kvec)) - expect_lhs) <= 1e-9

    def test_monte_carlo_guarantee(self):
        # satisfying the surrogate with equality-ish margin keeps the
        # true Gaussian violation below p plus binomial slack
        rng = np.random.default_rng(2)
        sys, lifted, L = _lifted_pair(rng, N=3)
        alpha = np.array([1.0, -0.5])
        p = 1e-3
        t = 3
        Sy = L @ L.T
        sl = slice(t * 2, (t + 1) * 2)
        sigma = math.sqrt(alpha @ Sy[sl, sl] @ alpha)
        # choose beta so the surrogate holds with zero slack at V = 0
        beta = chance.tightening_factor(p) * sigma
        row = model.ConstraintRow(alpha=alpha, beta=beta, p=p)
        tr = chance.tighten_state_row(row, lifted, L, t)
        assert tr.margin(np.zeros(lifted.N), np.zeros(lifted.kvec_dim)) \
            >= -1e-12
        M = 10 ** 6
        W = rng.standard_normal((M, L.shape[1]))
        vals = W @ (L[sl].T @ alpha)
        rate = np.mean(vals > beta)
        assert rate <= p + 3.0 * math.sqrt(p * (1 - p) / M)

    def test_affine_constant_enters_linearly(self):
        rng = np.random.default_rng(3)
        sys, lifted, L = _lifted_pair(rng)
        row = model.ConstraintRow(alpha=np.array([1.0, 1.0]), beta=1.0,
                                  p=1e-2)
        t0 = chance.tighten_state_row(row, lifted, L, 2, affine=0.0)
        t1 = chance.tighten_state_row(row, lifted, L, 2, affine=0.7)
        assert abs((t0.lin_const + 0.7) - t1.lin_const) <= 1e-15


class TestTightenInputRow:
    def test_zero_gain_is_deterministic(self):
        rng = np.random.default_rng(4)
        sys, lifted, L = _lifted_pair(rng)
        row = model.ConstraintRow(alpha=np.array([1.0]), beta=0.25, p=1e-3)
        tr = chance.tighten_input_row(row, lifted, L, 1)
        assert not np.any(tr.norm_const)
        V = np.zeros(4)
        V[1] = 0.2
        assert abs(tr.margin(V, np.zeros(lifted.kvec_dim))
                   - (0.25 - 0.2)) <= 1e-12

    def test_scalar_gain_margin(self):
        # unit scalar plant: deviation input at step 1 is k1 * w0, so the
        # backoff is z(p) * |k1|
        sys = model.LtiSystem(A=np.eye(1), B=np.eye(1), D=np.eye(1))
        lifted = lifting.lift(sys, 2)
        L = lifting.sigma_y_factor(lifted, np.zeros((1, 1)))
        p = 0.01
        row = model.ConstraintRow(alpha=np.array([1.0]), beta=1.0, p=p)
        tr = chance.tighten_input_row(row, lifted, L, 1)
        kvec = np.zeros(lifted.kvec_dim)
        K = np.zeros((2, 3))
        K[1, 1] = -1.0
        kvec = lifting.K_to_kvec(K, lifted)
        got = tr.margin(np.zeros(2), kvec)
        expect = 1.0 - chance.tightening_factor(p) * 1.0
        assert abs(got - expect) <= 1e-12

    def test_monte_carlo_guarantee(self):
        rng = np.random.default_rng(5)
        sys = model.LtiSystem(A=np.eye(1), B=np.eye(1), D=np.eye(1))
        lifted = lifting.lift(sys, 2)
        L = lifting.sigma_y_factor(lifted, np.zeros((1, 1)))
        p = 5e-3
        k1 = -0.8
        beta = chance.tightening_factor(p) * abs(k1)
        row = model.ConstraintRow(alpha=np.array([1.0]), beta=beta, p=p)
        tr = chance.tighten_input_row(row, lifted, L, 1)
        K = np.zeros((2, 3))
        K[1, 1] = k1
        kvec = lifting.K_to_kvec(K, lifted)
        assert tr.margin(np.zeros(2), kvec) >= -1e-12
        M = 10 ** 6
        w0 = rng.standard_normal(M)
        rate = np.mean(k1 * w0 > beta)
        assert rate <= p + 3.0 * math.sqrt(p * (1 - p) / M)


class TestCompress:
    def test_norm_preserved(self):
        rng = np.random.default_rng(6)
        M = rng.standard_normal((40, 5))
        C = chance._compress(M)
        assert C.shape[0] <= 5
        for _ in range(10):
            v = rng.standard_normal(5)
            assert abs(np.linalg.norm(M @ v) - np.linalg.norm(C @ v)) <= 1e-9

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from cssmpc import linalg


def rand_psd(rng, n):
    G = rng.standard_normal((n, n))
    return G @ G.T


class TestSymSqrt:
    def test_identity(self):
        np.testing.assert_allclose(linalg.sym_sqrt(np.eye(2)), np.eye(2),
                                   atol=1e-12)

    def test_diagonal(self):
        np.testing.assert_allclose(linalg.sym_sqrt(np.diag([4.0, 9.0])),
                                   np.diag([2.0, 3.0]), atol=1e-12)

    def test_random_psd_squares_back(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            S = rand_psd(rng, rng.integers(1, 7))
            M = linalg.sym_sqrt(S)
            err = np.linalg.norm(M @ M - S) / max(1.0, np.linalg.norm(S))
            assert err <= 1e-9
            np.testing.assert_allclose(M, M.T, atol=1e-12)

    def test_idempotence(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            S = rand_psd(rng, 4)
            M = linalg.sym_sqrt(S)
            np.testing.assert_allclose(linalg.sym_sqrt(M @ M), M, atol=1e-8)

    def test_clips_tiny_negative_eigenvalues(self):
        S = np.diag([1.0, -1e-13])
        M = linalg.sym_sqrt(S)
        assert np.all(np.linalg.eigvalsh(M @ M) >= -1e-15)

    def test_not_symmetric(self):
        with pytest.raises(linalg.NotSymmetric):
            linalg.sym_sqrt(np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_indefinite(self):
        with pytest.raises(linalg.IndefiniteBeyondTolerance):
            linalg.sym_sqrt(np.diag([1.0, -1.0]))


class TestSvdFactor:
    def test_zero_matrix(self):
        L, lam, G, r = linalg.svd_factor(np.zeros((3, 2)))
        assert r == 0
        assert np.all(lam == 0.0)

    def test_identity(self):
        L, lam, G, r = linalg.svd_factor(np.eye(3))
        assert r == 3
        np.testing.assert_allclose(lam, np.ones(3), atol=1e-14)

    def test_reconstruction(self):
        rng = np.random.default_rng(2)
        M = rng.standard_normal((4, 3))
        L, lam, G, r = linalg.svd_factor(M)
        # factors are full orthogonal bases; truncate L to the value count
        np.testing.assert_allclose(L[:, :lam.size] @ np.diag(lam) @ G.T, M,
                                   atol=1e-10)
        np.testing.assert_allclose(L.T @ L, np.eye(4), atol=1e-12)
        np.testing.assert_allclose(G.T @ G, np.eye(3), atol=1e-12)
        assert np.all(np.diff(lam) <= 1e-14)


class TestPinv:
    def test_identity(self):
        np.testing.assert_allclose(linalg.pinv(np.eye(3)), np.eye(3),
                                   atol=1e-12)

    def test_zero(self):
        Z = linalg.pinv(np.zeros((2, 4)))
        assert Z.shape == (4, 2)
        assert np.all(Z == 0.0)

    def test_full_column_rank_formula(self):
        rng = np.random.default_rng(3)
        B = rng.standard_normal((5, 2))
        expect = np.linalg.solve(B.T @ B, B.T)
        np.testing.assert_allclose(linalg.pinv(B), expect, atol=1e-9)

    def test_penrose_conditions(self):
        rng = np.random.default_rng(4)
        for _ in range(15):
            B = rng.standard_normal((rng.integers(1, 6), rng.integers(1, 6)))
            Bp = linalg.pinv(B)
            np.testing.assert_allclose(B @ Bp @ B, B, atol=1e-9)
            np.testing.assert_allclose(Bp @ B @ Bp, Bp, atol=1e-9)
            np.testing.assert_allclose(B @ Bp, (B @ Bp).T, atol=1e-9)
            np.testing.assert_allclose(Bp @ B, (Bp @ B).T, atol=1e-9)


class TestExpm:
    def test_zero(self):
        np.testing.assert_allclose(linalg.expm(np.zeros((3, 3))), np.eye(3),
                                   atol=1e-14)

    def test_scalar(self):
        np.testing.assert_allclose(linalg.expm(np.array([[1.0]])),
                                   [[np.e]], rtol=1e-13)

    def test_nilpotent(self):
        M = np.array([[0.0, 1.0], [0.0, 0.0]])
        np.testing.assert_allclose(linalg.expm(M),
                                   [[1.0, 1.0], [0.0, 1.0]], atol=1e-14)

    def test_against_scipy(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            M = rng.standard_normal((4, 4))
            M *= min(1.0, 10.0 / np.linalg.norm(M))
            np.testing.assert_allclose(linalg.expm(M), scipy.linalg.expm(M),
                                       rtol=1e-12, atol=1e-12)

    def test_inverse_property(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            M = rng.standard_normal((3, 3))
            M *= min(1.0, 5.0 / np.linalg.norm(M))
            np.testing.assert_allclose(linalg.expm(M) @ linalg.expm(-M),
                                       np.eye(3), atol=1e-9)


class TestDlyap:
    def test_zero_dynamics(self):
        W = np.diag([2.0, 3.0])
        np.testing.assert_allclose(linalg.dlyap(np.zeros((2, 2)), W), W,
                                   atol=1e-12)

    def test_scalar_fixed_point(self):
        # iterate s <- f s f + w to convergence as an independent oracle
        s = 0.0
        for _ in range(200):
            s = 0.5 * s * 0.5 + 1.0
        got = linalg.dlyap(np.array([[0.5]]), np.array([[1.0]]))
        np.testing.assert_allclose(got, [[s]], rtol=1e-12)
        np.testing.assert_allclose(got, [[4.0 / 3.0]], rtol=1e-12)

    def test_residuals_both_orientations(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            n = rng.integers(1, 6)
            F = rng.standard_normal((n, n))
            F *= 0.8 / max(1e-9, linalg.spectral_radius(F))
            W = rand_psd(rng, n)
            S = linalg.dlyap(F, W, "forward")
            res = np.linalg.norm(S - F @ S @ F.T - W)
            assert res <= 1e-10 * (1.0 + np.linalg.norm(W))
            assert np.min(np.linalg.eigvalsh(S)) >= -1e-10
            P = linalg.dlyap(F, W, "adjoint")
            res = np.linalg.norm(P - F.T @ P @ F - W)
            assert res <= 1e-10 * (1.0 + np.linalg.norm(W))

    def test_unstable_rejected(self):
        with pytest.raises(linalg.UnstableF):
            linalg.dlyap(np.array([[1.0]]), np.array([[1.0]]))


class TestDare:
    def test_scalar_golden_ratio(self):
        P, K = linalg.dare(np.eye(1), np.eye(1), np.eye(1), np.eye(1))
        np.testing.assert_allclose(P, [[(1.0 + np.sqrt(5.0)) / 2.0]],
                                   rtol=1e-10)

    def test_no_control_reduces_to_lyapunov(self):
        P, K = linalg.dare(np.array([[0.5]]), np.zeros((1, 1)),
                           np.eye(1), np.eye(1))
        np.testing.assert_allclose(P, [[4.0 / 3.0]], rtol=1e-10)

    def test_residual_and_stability(self, example1):
        sys = example1.system
        P, K = linalg.dare(sys.A, sys.B, example1.Q, example1.R)
        BPB = sys.B.T @ P @ sys.B + example1.R
        res = sys.A.T @ P @ sys.A - P \
            - sys.A.T @ P @ sys.B @ np.linalg.solve(BPB, sys.B.T @ P @ sys.A) \
            + example1.Q
        assert np.linalg.norm(res) <= 1e-9 * (1.0 + np.linalg.norm(P))
        np.testing.assert_allclose(
            K, -np.linalg.solve(BPB, sys.B.T @ P @ sys.A), atol=1e-9)
        assert linalg.spectral_radius(sys.A + sys.B @ K) < 1.0

    def test_random_residuals(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            n, m = rng.integers(1, 5), rng.integers(1, 4)
            A = rng.standard_normal((n, n))
            B = rng.standard_normal((n, m))
            Q = rand_psd(rng, n)
            R = rand_psd(rng, m) + np.eye(m)
            P, K = linalg.dare(A, B, Q, R)
            BPB = B.T @ P @ B + R
            res = A.T @ P @ A - P \
                - A.T @ P @ B @ np.linalg.solve(BPB, B.T @ P @ A) + Q
            assert np.linalg.norm(res) <= 1e-9 * (1.0 + np.linalg.norm(P))
            assert linalg.spectral_radius(A + B @ K) < 1.0

    def test_unstabilizable(self):
        with pytest.raises(linalg.NoStabilizingSolution):
            linalg.dare(np.array([[2.0]]), np.zeros((1, 1)),
                        np.eye(1), np.eye(1))


class TestSpectralRadius:
    def test_diagonal(self):
        assert abs(linalg.spectral_radius(np.diag([0.3, -0.7])) - 0.7) <= 1e-8

    def test_scaled_rotation(self):
        c = np.cos(np.pi / 4)
        R = 0.9 * np.array([[c, -c], [c, c]])
        assert abs(linalg.spectral_radius(R) - 0.9) <= 1e-8

    def test_spiral_plant(self, example1):
        # complex pair 1 +/- 0.098i, magnitude sqrt(1 + 0.098^2 + ...)
        rho = linalg.spectral_radius(example1.system.A)
        expect = np.max(np.abs(np.linalg.eigvals(example1.system.A)))
        assert abs(rho - expect) <= 1e-8
        assert rho > 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2 ** 31 - 1))
def test_sym_sqrt_property(n, seed):
    rng = np.random.default_rng(seed)
    S = rand_psd(rng, n)
    M = linalg.sym_sqrt(S)
    assert np.linalg.norm(M @ M - S) <= 1e-9 * max(1.0, np.linalg.norm(S))

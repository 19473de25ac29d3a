import copy

import numpy as np
import pytest
import yaml

from cssmpc import model


def bicycle_params():
    return model.BicycleParams(m=1653.0, Iz=2765.0, Vx=15.0,
                               lF=1.402, lR=1.646, Cf=42000.0, Cr=81000.0)


class TestDiscretizeZoh:
    def test_integrator(self):
        cont = model.ContinuousLti(Ac=np.zeros((2, 2)), Bc=np.eye(2), Cc=None)
        sys = model.discretize_zoh(cont, 0.5)
        np.testing.assert_allclose(sys.A, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(sys.B, 0.5 * np.eye(2), atol=1e-12)

    def test_scalar_closed_form(self):
        a, b, dt = -1.3, 0.7, 0.25
        cont = model.ContinuousLti(Ac=np.array([[a]]), Bc=np.array([[b]]),
                                   Cc=None)
        sys = model.discretize_zoh(cont, dt)
        np.testing.assert_allclose(sys.A, [[np.exp(a * dt)]], rtol=1e-12)
        np.testing.assert_allclose(sys.B, [[(np.exp(a * dt) - 1.0) / a * b]],
                                   rtol=1e-12)

    def test_small_dt_first_order(self):
        rng = np.random.default_rng(0)
        Ac = rng.standard_normal((3, 3))
        Ac *= 0.5 / max(1.0, np.max(np.abs(np.linalg.eigvals(Ac))))
        cont = model.ContinuousLti(Ac=Ac, Bc=rng.standard_normal((3, 1)),
                                   Cc=None)
        dt = 1e-6
        sys = model.discretize_zoh(cont, dt)
        np.testing.assert_allclose(sys.A, np.eye(3) + Ac * dt, atol=1e-8)

    def test_affine_channel_discretized(self):
        # scalar a=0: c integrates to c*dt
        cont = model.ContinuousLti(Ac=np.zeros((1, 1)),
                                   Bc=np.ones((1, 1)),
                                   Cc=np.array([2.0]))
        sys = model.discretize_zoh(cont, 0.5)
        np.testing.assert_allclose(sys.C, [1.0], atol=1e-12)


class TestBuildBicycle:
    def test_sideslip_entry(self):
        cont = model.build_bicycle(bicycle_params())
        expect = -(81000.0 + 42000.0) / (1653.0 * 15.0)
        np.testing.assert_allclose(cont.Ac[0, 0], expect, rtol=1e-12)

    def test_lateral_error_row(self):
        cont = model.build_bicycle(bicycle_params())
        np.testing.assert_allclose(cont.Ac[3], [15.0, 0.0, 15.0, 0.0],
                                   atol=1e-12)

    def test_curvature_channel(self):
        cont = model.build_bicycle(bicycle_params())
        np.testing.assert_allclose(cont.Cc, [0.0, 0.0, -15.0, 0.0],
                                   atol=1e-12)

    def test_positive_params_required(self):
        p = bicycle_params()
        with pytest.raises(model.ModelError):
            model.BicycleParams(m=-1.0, Iz=p.Iz, Vx=p.Vx, lF=p.lF,
                                lR=p.lR, Cf=p.Cf, Cr=p.Cr)


class TestValidateAssumptions:
    def test_example1_passes(self, example1):
        rep = model.validate_assumptions(example1.system, example1.N)
        assert rep.controllable and rep.horizon_ok and rep.noise_covers_input
        assert not rep.warnings

    def test_uncontrollable_warns(self):
        sys = model.LtiSystem(A=np.eye(2), B=np.zeros((2, 1)),
                              D=0.1 * np.eye(2))
        rep = model.validate_assumptions(sys, 4)
        assert not rep.controllable
        assert rep.warnings

    def test_noiseless_channels_warn(self):
        sys = model.LtiSystem(A=0.5 * np.eye(2), B=np.eye(2),
                              D=np.zeros((2, 1)))
        rep = model.validate_assumptions(sys, 4)
        assert not rep.noise_covers_input
        assert rep.warnings

    def test_short_horizon_warns(self):
        sys = model.LtiSystem(A=0.5 * np.eye(3), B=np.eye(3),
                              D=0.1 * np.eye(3))
        rep = model.validate_assumptions(sys, 2)
        assert not rep.horizon_ok


class TestAllocateRisk:
    def test_uniform_split(self):
        np.testing.assert_allclose(model.allocate_risk(0.1, 4),
                                   [0.025] * 4, atol=1e-15)

    def test_zero_budget(self):
        np.testing.assert_allclose(model.allocate_risk(0.0, 3), [0.0] * 3)

    def test_single_row(self):
        np.testing.assert_allclose(model.allocate_risk(0.001, 1), [0.001])

    def test_sum_never_exceeds_budget(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            eps = float(rng.uniform(0.0, 0.499))
            m = int(rng.integers(1, 20))
            out = model.allocate_risk(eps, m)
            assert sum(out) <= eps + 1e-15
            assert all(0.0 <= p < 0.5 for p in out)

    def test_out_of_range(self):
        with pytest.raises(model.InvalidRisk):
            model.allocate_risk(0.5, 2)
        with pytest.raises(model.InvalidRisk):
            model.allocate_risk(-0.1, 2)


class TestScenarioLoading:
    def test_example1_roundtrip(self, example1):
        assert example1.N == 10
        np.testing.assert_allclose(example1.system.A,
                                   [[1.02, -0.1], [0.1, 0.98]])
        assert len(example1.state_constraints.rows) == 1
        row = example1.state_constraints.rows[0]
        np.testing.assert_allclose(row.alpha, [-2.0, 1.0])
        assert row.beta == 2.5 and row.p == 1e-3
        assert example1.sim.seed == 20260823

    def test_vehicle_has_track_and_affine(self, vehicle):
        assert vehicle.track is not None
        assert vehicle.system.C is not None
        assert vehicle.N == 8
        assert len(vehicle.state_constraints.rows) == 8
        assert len(vehicle.input_constraints.rows) == 2

    def test_unknown_key_rejected(self, example1, tmp_path):
        d = {
            "system": {"A": [[0.5]], "B": [[1.0]], "D": [[0.1]]},
            "constraints": {"state": [], "input": []},
            "cost": {"Q": [[1.0]], "R": [[1.0]]},
            "horizon": 3,
            "terminal": {"mode": "lyapunov-lqr"},
            "sim": {"steps": 5, "rollouts": 2, "seed": 1},
            "banana": True,
        }
        with pytest.raises(model.ConfigError):
            model.scenario_from_dict(d)

    def test_bad_risk_rejected(self):
        d = {
            "system": {"A": [[0.5]], "B": [[1.0]], "D": [[0.1]]},
            "constraints": {"state": [{"alpha": [1.0], "beta": 1.0,
                                       "p": 0.7}], "input": []},
            "cost": {"Q": [[1.0]], "R": [[1.0]]},
            "horizon": 3,
            "terminal": {"mode": "lyapunov-lqr"},
            "sim": {"steps": 5, "rollouts": 2, "seed": 1},
        }
        with pytest.raises((model.ConfigError, model.InvalidRisk)):
            model.scenario_from_dict(d)

    def test_missing_file_has_path_context(self, tmp_path):
        missing = tmp_path / "nope.yaml"
        with pytest.raises(Exception) as exc:
            model.load_scenario(str(missing))
        assert "nope.yaml" in str(exc.value)

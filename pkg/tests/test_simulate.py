import numpy as np
import pytest

from cssmpc import model, simulate


X0 = np.array([-0.3, 1.2])


class TestDeterminism:
    def test_same_seed_same_trajectories(self, example1,
                                         example1_ingredients):
        kw = dict(steps=5, rollouts=2, master_seed=11, x0=X0,
                  ingredients=example1_ingredients)
        a = simulate.simulate(example1, "cs-smpc", **kw)
        b = simulate.simulate(example1, "cs-smpc", **kw)
        for la, lb in zip(a, b):
            np.testing.assert_array_equal(la.states, lb.states)
            np.testing.assert_array_equal(la.inputs, lb.inputs)
            np.testing.assert_array_equal(la.modes, lb.modes)
            np.testing.assert_array_equal(la.viol_state, lb.viol_state)

    def test_rollout_streams_differ(self, example1):
        logs = simulate.simulate(example1, "lqr", steps=5, rollouts=2,
                                 master_seed=11, x0=X0)
        assert not np.array_equal(logs[0].states, logs[1].states)

    def test_different_seed_differs(self, example1):
        a = simulate.simulate(example1, "lqr", steps=5, rollouts=1,
                              master_seed=11, x0=X0)
        b = simulate.simulate(example1, "lqr", steps=5, rollouts=1,
                              master_seed=12, x0=X0)
        assert not np.array_equal(a[0].states, b[0].states)


class TestZeroNoise:
    def test_trajectory_follows_mean_recursion(self, example1,
                                               example1_ingredients):
        sys = example1.system
        log = simulate.simulate(example1, "cs-smpc", steps=8, rollouts=1,
                                master_seed=3, x0=X0, noise_scale=0.0,
                                ingredients=example1_ingredients)[0]
        for k in range(log.steps - 1):
            pred = sys.A @ log.states[k] + sys.B @ log.inputs[k]
            np.testing.assert_allclose(log.states[k + 1], pred, atol=1e-9)


class TestUncontrolledSpiral:
    def test_violations_accumulate(self, example1):
        log = simulate.simulate(example1, "none", steps=150, rollouts=1,
                                master_seed=7, x0=X0)[0]
        assert log.error is None
        # the open-loop plant spirals outward: violations pile up and the
        # excursions keep growing
        assert log.viol_state.sum() > 30
        assert log.viol_state[100:].any()
        amp = np.linalg.norm(log.states, axis=1)
        assert amp[-20:].max() > 1.3 * amp[:20].max()


class TestSummarize:
    def _synthetic_log(self, n=1000, viol=3):
        vs = np.zeros((n, 1), dtype=bool)
        vs[:viol, 0] = True
        return simulate.RolloutLog(
            index=0, states=np.zeros((n, 2)), inputs=np.zeros((n, 2)),
            modes=np.ones(n, dtype=int), solve_times=np.full(n, 0.01),
            viol_state=vs, viol_input=np.zeros((n, 0), dtype=bool),
            positions=None, error=None, error_step=None)

    def test_exact_counting(self, example1):
        stats = simulate.summarize([self._synthetic_log()], example1)
        r = stats.state_rates[0]
        assert r.count == 3 and r.samples == 1000
        assert abs(r.rate - 0.003) <= 1e-15
        assert r.lo <= 0.003 <= r.hi
        assert stats.fallback_rate == 0.0
        assert stats.errors == 0

    def test_stage_cost_matches_quadratic(self, example1):
        n = 10
        rng = np.random.default_rng(0)
        log = self._synthetic_log(n=n, viol=0)
        states = rng.standard_normal((n, 2))
        inputs = rng.standard_normal((n, 2))
        log = simulate.RolloutLog(
            index=0, states=states, inputs=inputs,
            modes=np.ones(n, dtype=int), solve_times=np.full(n, 0.01),
            viol_state=np.zeros((n, 1), dtype=bool),
            viol_input=np.zeros((n, 0), dtype=bool),
            positions=None, error=None, error_step=None)
        stats = simulate.summarize([log], example1)
        expect = np.mean([x @ example1.Q @ x + u @ example1.R @ u
                          for x, u in zip(states, inputs)])
        assert abs(stats.avg_stage_cost - expect) <= 1e-12

    def test_empty_rejected(self, example1):
        with pytest.raises(simulate.SimulationError):
            simulate.summarize([], example1)


class TestWilsonInterval:
    def test_zero_count(self):
        lo, hi = simulate.wilson_interval(0, 100)
        assert abs(lo) <= 1e-15
        assert 0.0 < hi < 0.05

    def test_known_value(self):
        z = 1.959963984540054
        count, n = 5, 100
        p = count / n
        den = 1.0 + z * z / n
        mid = (p + z * z / (2 * n)) / den
        half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
        lo, hi = simulate.wilson_interval(count, n)
        assert abs(lo - (mid - half)) <= 1e-12
        assert abs(hi - (mid + half)) <= 1e-12

    def test_interval_brackets_rate(self):
        for count, n in ((0, 10), (1, 10), (5, 10), (10, 10), (37, 500)):
            lo, hi = simulate.wilson_interval(count, n)
            eps = 1e-12
            assert -eps <= lo <= count / n + eps
            assert count / n - eps <= hi <= 1.0 + eps


class TestEmit:
    def test_emit_is_byte_idempotent(self, example1, tmp_path):
        logs = simulate.simulate(example1, "lqr", steps=5, rollouts=2,
                                 master_seed=4, x0=X0)
        stats = simulate.summarize(logs, example1)
        d1, d2 = tmp_path / "a", tmp_path / "b"
        simulate.emit(logs, stats, str(d1))
        simulate.emit(logs, stats, str(d2))
        names = sorted(p.name for p in d1.iterdir())
        assert names == sorted(p.name for p in d2.iterdir())
        assert "rollout_0000.csv" in names
        for name in names:
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_csv_round_trip(self, example1, tmp_path):
        logs = simulate.simulate(example1, "lqr", steps=5, rollouts=1,
                                 master_seed=4, x0=X0)
        stats = simulate.summarize(logs, example1)
        simulate.emit(logs, stats, str(tmp_path))
        lines = (tmp_path / "rollout_0000.csv").read_text().splitlines()
        header = lines[0].split(",")
        assert header[:5] == ["k", "x_0", "x_1", "u_0", "u_1"]
        for k, line in enumerate(lines[1:6]):
            vals = line.split(",")
            assert int(vals[0]) == k
            x = np.array([float(vals[1]), float(vals[2])])
            u = np.array([float(vals[3]), float(vals[4])])
            np.testing.assert_allclose(x, logs[0].states[k], rtol=1e-15)
            np.testing.assert_allclose(u, logs[0].inputs[k], rtol=1e-15)

    def test_summary_file_written(self, example1, tmp_path):
        logs = simulate.simulate(example1, "lqr", steps=5, rollouts=1,
                                 master_seed=4, x0=X0)
        stats = simulate.summarize(logs, example1)
        simulate.emit(logs, stats, str(tmp_path))
        files = [p.name for p in tmp_path.iterdir()]
        summary = [n for n in files if "summary" in n]
        assert summary
        text = (tmp_path / summary[0]).read_text()
        assert "rollouts: 1" in text
        assert "state_row_0" in text


class TestErrorPaths:
    def test_infeasible_start_recorded(self, example1,
                                       example1_ingredients):
        log = simulate.simulate(example1, "cs-smpc", steps=3, rollouts=1,
                                master_seed=1, x0=np.array([-200.0, 100.0]),
                                ingredients=example1_ingredients)[0]
        assert log.error_step == 0
        assert "BothInitializationsInfeasible" in log.error
        assert log.steps == 0

    def test_bad_arguments(self, example1):
        with pytest.raises(simulate.SimulationError):
            simulate.simulate(example1, "lqr", steps=0, rollouts=1,
                              master_seed=1)

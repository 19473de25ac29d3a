"""Closed-loop Monte Carlo harness, statistics, and file emission.

Each rollout owns an independent PRNG stream derived from the master
seed and the rollout index, steps the plant under the chosen controller,
and logs states, inputs, modes, solve times, and per-row constraint
violations evaluated on the realized trajectory.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import controller as controller_mod
from . import rng as rng_mod


class SimulationError(RuntimeError):
    """Harness-level failure (not a controller error inside a rollout)."""


@dataclass
class RolloutLog:
    """Realized trajectory of one closed-loop rollout."""

    index: int
    states: np.ndarray       # (steps, n_x), state x_k before applying u_k
    inputs: np.ndarray       # (steps, n_u)
    modes: np.ndarray        # (steps,) 1 = Measurement, 0 = Fallback
    solve_times: np.ndarray  # (steps,) seconds
    viol_state: np.ndarray   # (steps, Ns) bool, realized raw-row violations
    viol_input: np.ndarray   # (steps, Nu) bool
    positions: np.ndarray | None = None  # (steps, 3) px, py, psi
    error: str | None = None
    error_step: int | None = None

    @property
    def steps(self):
        return self.states.shape[0]


@dataclass
class RateStat:
    rate: float
    lo: float
    hi: float
    count: int
    samples: int


@dataclass
class SummaryStats:
    state_rates: list
    input_rates: list
    avg_stage_cost: float
    fallback_rate: float
    solve_ms_median: float
    solve_ms_p90: float
    solve_ms_p99: float
    rollouts: int
    steps_total: int
    errors: int


class TrackPath:
    """Arc-length parameterized centerline of a constant-curvature circuit."""

    def __init__(self, segments):
        self.segments = tuple(segments)
        self.total = sum(seg.length for seg in self.segments)
        poses = [(0.0, 0.0, 0.0)]
        x = y = theta = 0.0
        for seg in self.segments:
            x, y, theta = self._advance(x, y, theta, seg.curvature, seg.length)
            poses.append((x, y, theta))
        self.start_poses = poses

    @staticmethod
    def _advance(x, y, theta, kappa, ell):
        if kappa == 0.0:
            return x + ell * math.cos(theta), y + ell * math.sin(theta), theta
        theta1 = theta + kappa * ell
        x1 = x + (math.sin(theta1) - math.sin(theta)) / kappa
        y1 = y - (math.cos(theta1) - math.cos(theta)) / kappa
        return x1, y1, theta1

    def pose_at(self, s):
        """Centerline (x, y, heading) at arc length s (loops around)."""
        if self.total <= 0.0:
            return 0.0, 0.0, 0.0
        laps, s = divmod(s, self.total)
        for seg, (x, y, theta) in zip(self.segments, self.start_poses):
            if s <= seg.length:
                return self._advance(x, y, theta, seg.curvature, s)
            s -= seg.length
        return self.start_poses[-1]


def _global_pose(path, s, e_psi, e_y):
    cx, cy, theta = path.pose_at(s)
    px = cx - e_y * math.sin(theta)
    py = cy + e_y * math.cos(theta)
    return px, py, theta + e_psi


def _run_rollout(scenario, ctrl, steps, master_seed, index, x0, noise_scale):
    sys = scenario.system
    n_x, n_u, n_w = sys.n_x, sys.n_u, sys.n_w
    stream = rng_mod.rollout_stream(master_seed, index)
    state_rows = list(scenario.state_constraints)
    input_rows = list(scenario.input_constraints)
    tracked = bool(scenario.track)
    path = TrackPath(scenario.track) if tracked else None

    states = np.zeros((steps, n_x))
    inputs = np.zeros((steps, n_u))
    modes = np.zeros(steps, dtype=int)
    times = np.zeros(steps)
    vs = np.zeros((steps, len(state_rows)), dtype=bool)
    vu = np.zeros((steps, len(input_rows)), dtype=bool)
    positions = np.zeros((steps, 3)) if tracked else None

    ctrl.reset()
    x = np.array(x0, dtype=float)
    s_arc = 0.0
    error = None
    error_step = None
    done = 0
    for k in range(steps):
        if tracked:
            signal = np.array([scenario.curvature_at(
                s_arc + scenario.speed * scenario.dt * t)
                for t in range(scenario.N)])
        else:
            signal = None
        try:
            res = ctrl.step(x, signal)
        except controller_mod.ControllerError as exc:
            error = f"{type(exc).__name__}: {exc}"
            error_step = k
            break
        u = res.u
        states[k] = x
        inputs[k] = u
        modes[k] = 1 if res.mode == "Measurement" else 0
        times[k] = res.solve_time
        for i, row in enumerate(state_rows):
            vs[k, i] = row.alpha @ x > row.beta
        for i, row in enumerate(input_rows):
            vu[k, i] = row.alpha @ u > row.beta
        if tracked:
            positions[k] = _global_pose(path, s_arc, x[2], x[3])
        w = noise_scale * np.array(stream.normals(n_w))
        x = sys.A @ x + sys.B @ u + sys.D @ w
        if sys.C is not None:
            x = x + sys.C * (signal[0] if signal is not None else 0.0)
        if tracked:
            s_arc += scenario.speed * scenario.dt
        done = k + 1
    return RolloutLog(
        index=index,
        states=states[:done], inputs=inputs[:done], modes=modes[:done],
        solve_times=times[:done], viol_state=vs[:done], viol_input=vu[:done],
        positions=positions[:done] if tracked else None,
        error=error, error_step=error_step)


def _worker(args):
    scenario, kind, steps, master_seed, index, x0, noise_scale, ing = args
    ctrl = controller_mod.make_controller(kind, scenario, ing)
    return _run_rollout(scenario, ctrl, steps, master_seed, index, x0,
                        noise_scale)


def simulate(scenario, controller_kind, steps, rollouts, master_seed,
             x0=None, noise_scale=1.0, parallel=None, ingredients=None):
    """Run closed-loop Monte Carlo rollouts; returns a list of RolloutLog.

    ``noise_scale = 0`` is the deterministic test hook. ``parallel``
    optionally gives a process count; results are returned in rollout
    order either way, and the per-rollout PRNG streams make the output
    independent of scheduling.
    """
    if steps < 1 or rollouts < 1:
        raise SimulationError("steps and rollouts must be positive")
    if x0 is None:
        x0 = np.zeros(scenario.system.n_x)
    x0 = np.asarray(x0, dtype=float).reshape(scenario.system.n_x)
    if ingredients is None and controller_kind in ("cs-smpc", "dist-fb"):
        from . import terminal as terminal_mod
        ingredients = terminal_mod.build(scenario)
    if parallel and parallel > 1 and rollouts > 1:
        from concurrent.futures import ProcessPoolExecutor
        args = [(scenario, controller_kind, steps, master_seed, r, x0,
                 noise_scale, ingredients) for r in range(rollouts)]
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_worker, args))
    ctrl = controller_mod.make_controller(controller_kind, scenario,
                                          ingredients)
    return [_run_rollout(scenario, ctrl, steps, master_seed, r, x0,
                         noise_scale) for r in range(rollouts)]


_Z95 = 1.959963984540054


def wilson_interval(count, n, z=_Z95):
    """Wilson score 95% interval for a binomial rate."""
    if n == 0:
        return 0.0, 1.0
    phat = count / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def summarize(logs, scenario):
    """Exact counting statistics over a set of rollout logs."""
    if not logs:
        raise SimulationError("summarize needs at least one rollout")
    Q, R = scenario.Q, scenario.R
    n_state = len(scenario.state_constraints)
    n_input = len(scenario.input_constraints)
    cs = np.zeros(n_state, dtype=int)
    cu = np.zeros(n_input, dtype=int)
    samples = 0
    fallback = 0
    costs = []
    times = []
    errors = 0
    for log in logs:
        if log.error is not None:
            errors += 1
        n = log.steps
        if n == 0:
            continue
        samples += n
        cs += log.viol_state.sum(axis=0)
        cu += log.viol_input.sum(axis=0)
        fallback += int(np.sum(log.modes == 0))
        stage = np.einsum("ki,ij,kj->k", log.states, Q, log.states) + \
            np.einsum("ki,ij,kj->k", log.inputs, R, log.inputs)
        costs.append(float(stage.mean()))
        times.append(log.solve_times)
    if samples == 0:
        raise SimulationError("all rollouts failed before the first step")
    t = np.concatenate(times) * 1e3

    def rate(c):
        lo, hi = wilson_interval(int(c), samples)
        return RateStat(rate=c / samples, lo=lo, hi=hi, count=int(c),
                        samples=samples)

    return SummaryStats(
        state_rates=[rate(c) for c in cs],
        input_rates=[rate(c) for c in cu],
        avg_stage_cost=float(np.mean(costs)),
        fallback_rate=fallback / samples,
        solve_ms_median=float(np.percentile(t, 50)),
        solve_ms_p90=float(np.percentile(t, 90)),
        solve_ms_p99=float(np.percentile(t, 99)),
        rollouts=len(logs),
        steps_total=samples,
        errors=errors)


def _fmt(v):
    return np.format_float_scientific(v, precision=16, trim="-")


def emit(logs, stats, out_dir):
    """Write one CSV per rollout plus a summary file (deterministic)."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise SimulationError(f"cannot create output dir {out_dir}: {exc}")
    paths = []
    for log in logs:
        n_x = log.states.shape[1]
        n_u = log.inputs.shape[1]
        ns = log.viol_state.shape[1]
        nu = log.viol_input.shape[1]
        header = ["k"] + [f"x_{i}" for i in range(n_x)] + \
            [f"u_{i}" for i in range(n_u)] + ["mode", "solve_ms"] + \
            [f"viol_s{i}" for i in range(ns)] + \
            [f"viol_u{i}" for i in range(nu)]
        if log.positions is not None:
            header += ["px", "py", "psi"]
        lines = [",".join(header)]
        for k in range(log.steps):
            row = [str(k)]
            row += [_fmt(v) for v in log.states[k]]
            row += [_fmt(v) for v in log.inputs[k]]
            row.append(str(int(log.modes[k])))
            row.append(_fmt(log.solve_times[k] * 1e3))
            row += [str(int(v)) for v in log.viol_state[k]]
            row += [str(int(v)) for v in log.viol_input[k]]
            if log.positions is not None:
                row += [_fmt(v) for v in log.positions[k]]
            lines.append(",".join(row))
        if log.error is not None:
            lines.append(f"# aborted at k={log.error_step}: {log.error}")
        path = os.path.join(out_dir, f"rollout_{log.index:04d}.csv")
        try:
            with open(path, "w") as fh:
                fh.write("\n".join(lines) + "\n")
        except OSError as exc:
            raise SimulationError(f"cannot write {path}: {exc}")
        paths.append(path)

    lines = ["closed-loop summary",
             f"rollouts: {stats.rollouts}",
             f"steps_total: {stats.steps_total}",
             f"errors: {stats.errors}",
             f"avg_stage_cost: {_fmt(stats.avg_stage_cost)}",
             f"fallback_rate: {_fmt(stats.fallback_rate)}",
             f"solve_ms_median: {_fmt(stats.solve_ms_median)}",
             f"solve_ms_p90: {_fmt(stats.solve_ms_p90)}",
             f"solve_ms_p99: {_fmt(stats.solve_ms_p99)}"]
    for i, r in enumerate(stats.state_rates):
        lines.append(f"state_row_{i}: rate {_fmt(r.rate)} "
                     f"[{_fmt(r.lo)}, {_fmt(r.hi)}] "
                     f"({r.count}/{r.samples})")
    for i, r in enumerate(stats.input_rates):
        lines.append(f"input_row_{i}: rate {_fmt(r.rate)} "
                     f"[{_fmt(r.lo)}, {_fmt(r.hi)}] "
                     f"({r.count}/{r.samples})")
    spath = os.path.join(out_dir, "summary.txt")
    try:
        with open(spath, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise SimulationError(f"cannot write {spath}: {exc}")
    paths.append(spath)
    return paths

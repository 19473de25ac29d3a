"""Command-line interface: closed-loop runs, terminal ingredients, steering.

Exit codes: 0 success, 2 infeasible at the first step, 3 solver failure,
4 configuration error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import controller as controller_mod
from . import conic, model, simulate as sim_mod
from . import terminal as terminal_mod

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_SOLVER = 3
EXIT_CONFIG = 4


def _parse_vector(text):
    return np.array([float(v) for v in text.replace(",", " ").split()])


def _parse_matrix(text):
    rows = [r for r in text.split(";") if r.strip()]
    return np.array([[float(v) for v in r.replace(",", " ").split()]
                     for r in rows])


def _load(path):
    try:
        return model.load_scenario(path)
    except OSError as exc:
        raise model.ConfigError(f"cannot read scenario {path}: {exc}")


def _cmd_run(args):
    scenario = _load(args.scenario)
    steps = args.steps if args.steps is not None else scenario.sim.steps
    rollouts = args.rollouts if args.rollouts is not None \
        else scenario.sim.rollouts
    seed = args.seed if args.seed is not None else scenario.sim.seed
    x0 = _parse_vector(args.x0) if args.x0 else None
    try:
        ingredients = None
        if args.controller in ("cs-smpc", "dist-fb"):
            ingredients = terminal_mod.build(scenario)
        logs = sim_mod.simulate(scenario, args.controller, steps, rollouts,
                                seed, x0=x0, parallel=args.parallel,
                                ingredients=ingredients)
    except terminal_mod.TerminalError as exc:
        print(f"terminal ingredients failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except sim_mod.SimulationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    first_errors = [log for log in logs if log.error_step == 0]
    if first_errors:
        print(f"infeasible at k=0 in {len(first_errors)} rollout(s): "
              f"{first_errors[0].error}", file=sys.stderr)
        return EXIT_INFEASIBLE
    stats = sim_mod.summarize(logs, scenario)
    if args.out:
        sim_mod.emit(logs, stats, args.out)
    print(f"rollouts: {stats.rollouts}  steps: {stats.steps_total}  "
          f"errors: {stats.errors}")
    print(f"avg stage cost: {stats.avg_stage_cost:.6g}  "
          f"fallback rate: {stats.fallback_rate:.6g}")
    print(f"solve ms median/p90/p99: {stats.solve_ms_median:.3f}/"
          f"{stats.solve_ms_p90:.3f}/{stats.solve_ms_p99:.3f}")
    for i, r in enumerate(stats.state_rates):
        print(f"state row {i}: violation rate {r.rate:.6g} "
              f"[{r.lo:.6g}, {r.hi:.6g}]")
    for i, r in enumerate(stats.input_rates):
        print(f"input row {i}: violation rate {r.rate:.6g} "
              f"[{r.lo:.6g}, {r.hi:.6g}]")
    if stats.errors:
        print(f"{stats.errors} rollout(s) aborted by solver failures",
              file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _cmd_terminal(args):
    scenario = _load(args.scenario)
    try:
        ing = terminal_mod.build(scenario)
    except terminal_mod.TerminalSetEmpty as exc:
        print(f"terminal set is empty: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except terminal_mod.TerminalError as exc:
        print(f"terminal ingredients failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    np.set_printoptions(precision=6, suppress=True)
    print(f"provenance: {ing.provenance}")
    print("Sigma_f:")
    print(ing.Sigma_f)
    print("K_tilde:")
    print(ing.K_tilde)
    print("P_mean:")
    print(ing.P_mean)
    print(f"terminal mean set: {len(ing.X_f_mu)} rows")
    for row in ing.X_f_mu:
        print(f"  {np.round(row.alpha, 6).tolist()} <= {row.beta:.6g}")
    return EXIT_OK


def _cmd_steer(args):
    scenario = _load(args.scenario)
    mu_f = _parse_vector(args.mu_f)
    sigma_f = _parse_matrix(args.sigma_f)
    sys_ = scenario.system
    x0 = _parse_vector(args.x0) if args.x0 else np.zeros(sys_.n_x)
    try:
        policy = controller_mod.covariance_steering_solve(
            sys_, x0, np.zeros((sys_.n_x, sys_.n_x)), mu_f, sigma_f,
            scenario.N,
            state_constraints=tuple(scenario.state_constraints),
            input_constraints=tuple(scenario.input_constraints),
            Q=scenario.Q, R=scenario.R)
    except controller_mod.SolverInfeasible as exc:
        print(f"steering problem infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (controller_mod.ControllerError, conic.NumericalFailure) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    np.set_printoptions(precision=6, suppress=True)
    cost = controller_mod.steering_cost(
        policy, sys_, x0, np.zeros((sys_.n_x, sys_.n_x)), scenario.N,
        Q=scenario.Q, R=scenario.R)
    print(f"objective: {cost:.8g}")
    print("V:")
    print(policy.V.reshape(scenario.N, sys_.n_u))
    print("K (per-step blocks):")
    for t in range(scenario.N):
        print(f"  t={t}:")
        print("   ", policy.gain_at(t, sys_.n_u, sys_.n_x))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cssmpc",
        description="Covariance-steering stochastic MPC toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="closed-loop Monte Carlo run")
    run.add_argument("--scenario", required=True)
    run.add_argument("--controller", default="cs-smpc",
                     choices=["cs-smpc", "det-mpc", "lqr", "dist-fb", "none"])
    run.add_argument("--steps", type=int, default=None)
    run.add_argument("--rollouts", type=int, default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--x0", default=None,
                     help="initial state, comma separated (default zeros)")
    run.add_argument("--parallel", type=int, default=None)
    run.set_defaults(func=_cmd_run)

    term = sub.add_parser("terminal", help="print terminal ingredients")
    term.add_argument("--scenario", required=True)
    term.set_defaults(func=_cmd_terminal)

    steer = sub.add_parser("steer", help="one-shot covariance steering")
    steer.add_argument("--scenario", required=True)
    steer.add_argument("--mu-f", required=True, dest="mu_f")
    steer.add_argument("--sigma-f", required=True, dest="sigma_f",
                       help="matrix rows separated by ';'")
    steer.add_argument("--x0", default=None)
    steer.set_defaults(func=_cmd_steer)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except controller_mod.BothInitializationsInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        code = EXIT_INFEASIBLE
    except (controller_mod.ControllerError, conic.NumericalFailure) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        code = EXIT_SOLVER
    except (ValueError, model.ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    return code


if __name__ == "__main__":
    raise SystemExit(main())

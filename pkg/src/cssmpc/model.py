"""Plant, constraint, and scenario definitions.

Covers the discrete LTI plant with an optional known-affine channel (the
road-curvature input of the vehicle example), zero-order-hold
discretization, the linearized bicycle model, assumption validation, and
fail-fast scenario-file loading.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import linalg


class ModelError(ValueError):
    """Base class for model/config failures."""


class InvalidRisk(ModelError):
    """Total risk outside [0, 0.5)."""


class ConfigError(ModelError):
    """Malformed or unknown scenario-file content."""


def _matrix(value, name):
    M = np.atleast_2d(np.asarray(value, dtype=float))
    return linalg.check_finite(M, name)


@dataclass(frozen=True)
class LtiSystem:
    """Discrete plant x+ = A x + B u + C rho + D w (C optional)."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    C: np.ndarray | None = None

    def __post_init__(self):
        A = _matrix(self.A, "A")
        B = _matrix(self.B, "B")
        D = _matrix(self.D, "D")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "D", D)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ModelError("A must be square")
        if B.shape[0] != n or D.shape[0] != n:
            raise ModelError("B and D must have as many rows as A")
        if self.C is not None:
            C = np.asarray(self.C, dtype=float).reshape(n)
            linalg.check_finite(C, "C")
            object.__setattr__(self, "C", C)

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def n_u(self):
        return self.B.shape[1]

    @property
    def n_w(self):
        return self.D.shape[1]


@dataclass(frozen=True)
class ContinuousLti:
    """Continuous-time counterpart dx/dt = Ac x + Bc u + Cc rho."""

    Ac: np.ndarray
    Bc: np.ndarray
    Cc: np.ndarray | None = None

    def __post_init__(self):
        Ac = _matrix(self.Ac, "Ac")
        Bc = _matrix(self.Bc, "Bc")
        object.__setattr__(self, "Ac", Ac)
        object.__setattr__(self, "Bc", Bc)
        if Ac.shape[0] != Ac.shape[1] or Bc.shape[0] != Ac.shape[0]:
            raise ModelError("continuous system dimensions inconsistent")
        if self.Cc is not None:
            Cc = np.asarray(self.Cc, dtype=float).reshape(Ac.shape[0])
            linalg.check_finite(Cc, "Cc")
            object.__setattr__(self, "Cc", Cc)


@dataclass(frozen=True)
class BicycleParams:
    """Linearized-bicycle parameters (SI units, stiffnesses in N/rad)."""

    m: float
    Iz: float
    Vx: float
    lF: float
    lR: float
    Cf: float
    Cr: float

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) <= 0.0:
                raise ModelError(f"bicycle parameter {f.name} must be positive")


@dataclass(frozen=True)
class ConstraintRow:
    """Half-space alpha^T v <= beta held with probability >= 1 - p."""

    alpha: np.ndarray
    beta: float
    p: float

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        linalg.check_finite(alpha, "alpha")
        object.__setattr__(self, "alpha", alpha)
        if not np.any(alpha):
            raise ModelError("constraint direction must be nonzero")
        if not (0.0 <= self.p < 0.5):
            raise InvalidRisk(f"row risk {self.p} outside [0, 0.5)")


@dataclass(frozen=True)
class HalfspaceSet:
    rows: tuple

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def contains(self, v, tol=0.0):
        return all(r.alpha @ v <= r.beta + tol for r in self.rows)


@dataclass(frozen=True)
class TrackSegment:
    length: float
    curvature: float


@dataclass(frozen=True)
class SimConfig:
    steps: int
    rollouts: int
    seed: int


@dataclass
class Scenario:
    """Full experiment description (plant, constraints, cost, horizon, sim)."""

    system: LtiSystem
    state_constraints: HalfspaceSet
    input_constraints: HalfspaceSet
    Q: np.ndarray
    R: np.ndarray
    N: int
    terminal_mode: str = "lyapunov-lqr"
    sigma_f: np.ndarray | None = None
    sim: SimConfig = field(default_factory=lambda: SimConfig(100, 100, 0))
    track: tuple = ()
    dt: float | None = None
    speed: float | None = None

    def __post_init__(self):
        self.Q = _matrix(self.Q, "Q")
        self.R = _matrix(self.R, "R")
        if self.N < 1:
            raise ModelError("horizon must be >= 1")
        if np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T)).min() < -1e-12:
            raise ModelError("Q must be PSD")
        if np.linalg.eigvalsh(0.5 * (self.R + self.R.T)).min() <= 0.0:
            raise ModelError("R must be PD")
        if self.terminal_mode not in ("lyapunov-lqr", "nearest-assignable", "explicit"):
            raise ModelError(f"unknown terminal mode {self.terminal_mode!r}")
        if self.terminal_mode == "explicit" and self.sigma_f is None:
            raise ModelError("explicit terminal mode requires sigma_f")
        if self.track and (self.dt is None or self.speed is None):
            raise ModelError("track scenarios need dt and longitudinal speed")

    def curvature_at(self, s):
        """Curvature of the circuit at arc length s (loops around)."""
        total = sum(seg.length for seg in self.track)
        if total <= 0.0:
            return 0.0
        s = s % total
        for seg in self.track:
            if s < seg.length:
                return seg.curvature
            s -= seg.length
        return self.track[-1].curvature


def discretize_zoh(cont, dt, D=None):
    """Zero-order-hold discretization via one augmented matrix exponential.

    ``D`` is the discrete-level noise matrix of the resulting plant
    (additive noise is specified per step, not integrated); it defaults
    to zero.
    """
    if dt <= 0.0:
        raise ModelError("dt must be positive")
    n = cont.Ac.shape[0]
    m = cont.Bc.shape[1]
    extra = 1 if cont.Cc is not None else 0
    aug = np.zeros((n + m + extra, n + m + extra))
    aug[:n, :n] = cont.Ac
    aug[:n, n:n + m] = cont.Bc
    if extra:
        aug[:n, n + m] = cont.Cc
    E = linalg.expm(aug * dt)
    A = E[:n, :n]
    B = E[:n, n:n + m]
    C = E[:n, n + m] if extra else None
    if D is None:
        D = np.zeros((n, 1))
    return LtiSystem(A, B, D, C)


def build_bicycle(params):
    """Continuous linearized bicycle in (beta, r, e_psi, e_y) coordinates.

    Input is the front-wheel angle; the affine channel carries the
    -Vx*rho term of the heading-error dynamics.
    """
    m, Iz, Vx = params.m, params.Iz, params.Vx
    lF, lR, Cf, Cr = params.lF, params.lR, params.Cf, params.Cr
    Ac = np.array([
        [-(Cr + Cf) / (m * Vx), -1.0 + (lR * Cr - lF * Cf) / (m * Vx ** 2), 0.0, 0.0],
        [(lR * Cr - lF * Cf) / Iz, -(lR ** 2 * Cr + lF ** 2 * Cf) / (Iz * Vx), 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [Vx, 0.0, Vx, 0.0],
    ])
    Bc = np.array([[Cf / (m * Vx)], [lF * Cf / Iz], [0.0], [0.0]])
    Cc = np.array([0.0, 0.0, -Vx, 0.0])
    return ContinuousLti(Ac, Bc, Cc)


@dataclass(frozen=True)
class AssumptionReport:
    controllable: bool
    horizon_ok: bool
    noise_covers_input: bool
    warnings: tuple

    @property
    def all_ok(self):
        return self.controllable and self.horizon_ok and self.noise_covers_input


def validate_assumptions(sys, N, tol=1e-9):
    """Check controllability, N >= n_x, and range(B) within range(D).

    Failures are reported as warnings, not raised: the per-step solve may
    still succeed for a particular instance.
    """
    n = sys.n_x
    ctrb = np.hstack([np.linalg.matrix_power(sys.A, k) @ sys.B for k in range(n)])
    controllable = np.linalg.matrix_rank(ctrb, tol=tol) == n
    horizon_ok = N >= n
    # Residual of projecting the columns of B onto range(D).
    if np.any(sys.D):
        proj = sys.D @ linalg.pinv(sys.D)
        resid = np.linalg.norm(sys.B - proj @ sys.B)
        noise_covers_input = resid <= tol * max(1.0, np.linalg.norm(sys.B))
    else:
        noise_covers_input = not np.any(sys.B)
    warnings = []
    if not controllable:
        warnings.append("(A, B) is not controllable")
    if not horizon_ok:
        warnings.append(f"horizon N={N} is shorter than n_x={n}")
    if not noise_covers_input:
        warnings.append("range(B) is not contained in range(D)")
    return AssumptionReport(controllable, horizon_ok, noise_covers_input,
                            tuple(warnings))


def allocate_risk(epsilon, m):
    """Uniform Boole split of a total risk budget across m rows."""
    if m < 1:
        raise ModelError("need at least one row")
    if not (0.0 <= epsilon < 0.5):
        raise InvalidRisk(f"total risk {epsilon} outside [0, 0.5)")
    return np.full(m, epsilon / m)


# ---------------------------------------------------------------------------
# Scenario files


def _require_keys(d, allowed, required, where):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in {where}")
    missing = set(required) - set(d)
    if missing:
        raise ConfigError(f"missing keys {sorted(missing)} in {where}")


def _parse_rows(rows, where):
    out = []
    for i, row in enumerate(rows):
        _require_keys(row, ("alpha", "beta", "p"), ("alpha", "beta", "p"),
                      f"{where}[{i}]")
        out.append(ConstraintRow(np.asarray(row["alpha"], dtype=float),
                                 float(row["beta"]), float(row["p"])))
    return HalfspaceSet(tuple(out))


def scenario_from_dict(d):
    """Build a Scenario from parsed config data, rejecting unknown keys."""
    _require_keys(d, ("system", "constraints", "cost", "horizon", "terminal",
                      "sim", "track"),
                  ("system", "constraints", "cost", "horizon", "sim"),
                  "scenario")
    sysd = d["system"]
    _require_keys(sysd, ("A", "B", "C", "D", "continuous", "dt", "bicycle"),
                  ("D",), "system")
    dt = float(sysd["dt"]) if "dt" in sysd else None
    speed = None
    if "bicycle" in sysd:
        _require_keys(sysd["bicycle"], ("m", "Iz", "Vx", "lF", "lR", "Cf", "Cr"),
                      ("m", "Iz", "Vx", "lF", "lR", "Cf", "Cr"), "system.bicycle")
        if dt is None:
            raise ConfigError("system.bicycle requires system.dt")
        params = BicycleParams(**{k: float(v) for k, v in sysd["bicycle"].items()})
        disc = discretize_zoh(build_bicycle(params), dt)
        A, B, C = disc.A, disc.B, disc.C
        speed = params.Vx
    elif "continuous" in sysd:
        _require_keys(sysd["continuous"], ("A", "B", "C"), ("A", "B"),
                      "system.continuous")
        if dt is None:
            raise ConfigError("system.continuous requires system.dt")
        cont = ContinuousLti(_matrix(sysd["continuous"]["A"], "Ac"),
                             _matrix(sysd["continuous"]["B"], "Bc"),
                             np.asarray(sysd["continuous"]["C"], dtype=float)
                             if "C" in sysd["continuous"] else None)
        disc = discretize_zoh(cont, dt)
        A, B, C = disc.A, disc.B, disc.C
    else:
        _require_keys(sysd, ("A", "B", "C", "D", "dt"), ("A", "B", "D"), "system")
        A = _matrix(sysd["A"], "A")
        B = _matrix(sysd["B"], "B")
        C = np.asarray(sysd["C"], dtype=float) if "C" in sysd else None
    system = LtiSystem(A, B, _matrix(sysd["D"], "D"), C)

    consd = d["constraints"]
    _require_keys(consd, ("state", "input"), (), "constraints")
    state_rows = _parse_rows(consd.get("state", ()), "constraints.state")
    input_rows = _parse_rows(consd.get("input", ()), "constraints.input")

    costd = d["cost"]
    _require_keys(costd, ("Q", "R"), ("Q", "R"), "cost")

    termd = d.get("terminal", {"mode": "lyapunov-lqr"})
    _require_keys(termd, ("mode", "sigma_f"), ("mode",), "terminal")
    sigma_f = _matrix(termd["sigma_f"], "sigma_f") if "sigma_f" in termd else None

    simd = d["sim"]
    _require_keys(simd, ("steps", "rollouts", "seed"),
                  ("steps", "rollouts", "seed"), "sim")

    track = ()
    if "track" in d:
        _require_keys(d["track"], ("segments",), ("segments",), "track")
        segs = []
        for i, seg in enumerate(d["track"]["segments"]):
            _require_keys(seg, ("length", "curvature"), ("length", "curvature"),
                          f"track.segments[{i}]")
            segs.append(TrackSegment(float(seg["length"]), float(seg["curvature"])))
        track = tuple(segs)

    return Scenario(
        system=system,
        state_constraints=state_rows,
        input_constraints=input_rows,
        Q=_matrix(costd["Q"], "Q"),
        R=_matrix(costd["R"], "R"),
        N=int(d["horizon"]),
        terminal_mode=termd["mode"],
        sigma_f=sigma_f,
        sim=SimConfig(int(simd["steps"]), int(simd["rollouts"]), int(simd["seed"])),
        track=track,
        dt=dt,
        speed=speed,
    )


def load_scenario(path):
    """Load a scenario from a YAML/JSON file with strict key validation."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"scenario file {path} is not a mapping")
    try:
        return scenario_from_dict(data)
    except ModelError:
        raise
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"malformed scenario file {path}: {exc}") from exc

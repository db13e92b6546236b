"""Phase lacing integrals: evaluation along trajectories, conservation and
functional-independence checks, and the a-posteriori reconstruction of the
interactive controls from observed data.

A set of 2n integrals that is functionally independent in the collective
control locally inverts to u = u(u_pure, phi, dphi; constants); the inversion
here is a damped-free Newton iteration warm-started along the trajectory so it
stays on one local branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import dsl
from .core import GameDefinition, Trajectory
from .errors import AnalysisError, ConfigError

__all__ = [
    "LacingIntegralSet",
    "ConservationRow",
    "RankReport",
    "ReconstructionResult",
    "TrajectoryReconstruction",
    "SingularJacobianError",
    "NewtonConvergenceError",
    "evaluate_integrals",
    "conservation_report",
    "dynamical_integrals_from_dynamics",
    "check_lacing_rank",
    "reconstruct_feedback",
    "reconstruct_trajectory",
    "measure_constants",
]

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
PIVOT_RTOL = 1e-14
RANK_DET_RTOL = 1e-10
FD_EPS = 1e-6

_ALLOWED_VARS = {"phi", "dphi", "u1", "u2", "u1o", "u2o", "k"}


class SingularJacobianError(AnalysisError):
    """Control Jacobian of the integral set is singular at the iterate."""


class NewtonConvergenceError(AnalysisError):
    """Newton did not reach tolerance; carries the final residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


def _classify(e: dsl.Expr) -> str:
    names = dsl.referenced_names(e)
    has_dphi = "dphi" in names
    has_pure = bool(names & {"u1o", "u2o"})
    if has_dphi and has_pure:
        return "general"
    if has_dphi:
        return "dynamical"
    return "configuration"


@dataclass(frozen=True)
class LacingIntegralSet:
    """2n scalar integrals K(u, u_pure, phi, dphi), their conserved constants,
    and optionally the analytic Jacobian d K / d u (finite differences are the
    fallback).  Each integral is classified: *configuration* (no dphi
    reference), *dynamical* (no pure-control reference), or *general*."""

    integrals: tuple[dsl.Expr, ...]
    constants: np.ndarray
    jacobian: tuple[tuple[dsl.Expr, ...], ...] | None = None
    kinds: tuple[str, ...] = field(init=False)
    _compiled: tuple = field(init=False, repr=False, compare=False)
    _compiled_jac: tuple | None = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.integrals) < 2 or len(self.integrals) % 2 != 0:
            raise ConfigError(
                f"an integral set needs 2n members, got {len(self.integrals)}"
            )
        constants = np.asarray(self.constants, dtype=float)
        if constants.shape != (len(self.integrals),):
            raise ConfigError(
                f"need one constant per integral ({len(self.integrals)}), "
                f"got shape {constants.shape}"
            )
        constants.flags.writeable = False
        object.__setattr__(self, "constants", constants)
        for e in self.integrals:
            extra = dsl.referenced_names(e) - _ALLOWED_VARS
            if extra:
                raise ConfigError(
                    f"integral '{dsl.to_string(e)}' references {sorted(extra)}; "
                    f"integrals may use only {sorted(_ALLOWED_VARS)}"
                )
        object.__setattr__(self, "kinds", tuple(_classify(e) for e in self.integrals))
        object.__setattr__(
            self, "_compiled", tuple(dsl.compile_expr(e) for e in self.integrals)
        )
        if self.jacobian is not None:
            size = len(self.integrals)
            if len(self.jacobian) != size or any(len(row) != size for row in self.jacobian):
                raise ConfigError(f"jacobian must be {size}x{size} expressions")
            compiled = tuple(
                tuple(dsl.compile_expr(e) for e in row) for row in self.jacobian
            )
            object.__setattr__(self, "_compiled_jac", compiled)
        else:
            object.__setattr__(self, "_compiled_jac", None)

    @property
    def n(self) -> int:
        return len(self.integrals) // 2

    @classmethod
    def from_strings(
        cls,
        integrals: Sequence[str],
        constants,
        jacobian: Sequence[Sequence[str]] | None = None,
    ) -> "LacingIntegralSet":
        jac = (
            tuple(tuple(dsl.parse_expr(e) for e in row) for row in jacobian)
            if jacobian is not None
            else None
        )
        return cls(tuple(dsl.parse_expr(s) for s in integrals), constants, jac)

    def control_vars(self) -> list[dsl.Var]:
        """Collective-control variables in Jacobian column order."""
        n = self.n
        return [dsl.Var("u1", j) for j in range(n)] + [dsl.Var("u2", j) for j in range(n)]


@dataclass(frozen=True)
class ConservationRow:
    alpha: int
    max_drift: float
    passed: bool


@dataclass(frozen=True)
class RankReport:
    jacobian: np.ndarray
    determinant: float
    condition: float
    degenerate: bool


@dataclass(frozen=True)
class ReconstructionResult:
    u: np.ndarray
    residual: float
    iterations: int


@dataclass(frozen=True)
class TrajectoryReconstruction:
    trajectory: Trajectory
    iterations: np.ndarray
    residuals: np.ndarray


# --- evaluation along trajectories ------------------------------------------


def evaluate_integrals(iset: LacingIntegralSet, traj: Trajectory) -> np.ndarray:
    """Every integral at every sample; shape (samples, 2n).

    The trajectory must carry interactive controls (ground truth or
    reconstructed).
    """
    if traj.u_interactive is None:
        raise ConfigError("trajectory has no interactive-control columns")
    if traj.n != iset.n:
        raise ConfigError(
            f"integral set is for n={iset.n}, trajectory has n={traj.n}"
        )
    n = iset.n
    times = traj.times.tolist()
    phi = traj.phi.tolist()
    dphi = traj.dphi.tolist()
    u_pure = traj.u_pure.tolist()
    u = traj.u_interactive.tolist()
    k = tuple(iset.constants.tolist())
    out = np.empty((len(traj), len(iset.integrals)))
    for i in range(len(traj)):
        args = (
            times[i],
            phi[i],
            dphi[i],
            u[i][:n],
            u[i][n:],
            u_pure[i][:n],
            u_pure[i][n:],
            k,
        )
        row = out[i]
        for a, f in enumerate(iset._compiled):
            row[a] = f(*args)
    return out


def conservation_report(values: np.ndarray, constants, tol: float) -> list[ConservationRow]:
    """Per-integral drift max |K_alpha(t) - k_alpha| against the configured
    constants; passes iff the drift is within tolerance."""
    if tol <= 0:
        raise ConfigError(f"tolerance must be positive, got {tol!r}")
    values = np.atleast_2d(np.asarray(values, dtype=float))
    constants = np.asarray(constants, dtype=float)
    rows = []
    for alpha in range(values.shape[1]):
        drift = float(np.max(np.abs(values[:, alpha] - constants[alpha])))
        rows.append(ConservationRow(alpha, drift, drift <= tol))
    return rows


def dynamical_integrals_from_dynamics(game: GameDefinition) -> tuple[dsl.Expr, ...]:
    """The m integrals supplied by the evolution equations themselves:
    K_i = dphi[i] - Phi_i(phi, u1, u2), conserved with constant 0.

    Requires the game to carry its dynamics as expressions.
    """
    if game.dynamics_exprs is None:
        raise ConfigError(
            "game carries no dynamics expressions; evolution-equation integrals "
            "need the symbolic right-hand side"
        )
    return tuple(
        dsl.BinOp("-", dsl.Var("dphi", i), rhs)
        for i, rhs in enumerate(game.dynamics_exprs)
    )


# --- functional independence -------------------------------------------------


def _env_args(t, phi, dphi, u1, u2, u1o, u2o, k):
    return (t, tuple(phi), tuple(dphi), tuple(u1), tuple(u2), tuple(u1o), tuple(u2o), tuple(k))


def _jacobian_at(iset: LacingIntegralSet, args, eps: float = FD_EPS) -> list[list[float]]:
    """d K / d u as nested lists; analytic expressions when configured, central
    finite differences (same formula as grad_fd) otherwise."""
    size = len(iset.integrals)
    n = iset.n
    if iset._compiled_jac is not None:
        return [[f(*args) for f in row] for row in iset._compiled_jac]
    t, phi, dphi, u1, u2, u1o, u2o, k = args
    u = list(u1) + list(u2)
    jac = [[0.0] * size for _ in range(size)]
    for col in range(size):
        hi = list(u)
        hi[col] += eps
        lo = list(u)
        lo[col] -= eps
        args_hi = (t, phi, dphi, tuple(hi[:n]), tuple(hi[n:]), u1o, u2o, k)
        args_lo = (t, phi, dphi, tuple(lo[:n]), tuple(lo[n:]), u1o, u2o, k)
        for row in range(size):
            f = iset._compiled[row]
            jac[row][col] = (f(*args_hi) - f(*args_lo)) / (2.0 * eps)
    return jac


def check_lacing_rank(
    iset: LacingIntegralSet, env: dsl.EvalEnv, eps: float = FD_EPS
) -> RankReport:
    """Jacobian of the integrals in the collective control at one phase point,
    with determinant and condition estimate.

    Degenerate iff |det| < 1e-10 * scale^(2n) where scale is the largest
    row max-norm (so the test is invariant under rescaling the integrals).
    """
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps!r}")
    args = _env_args(env.t, env.phi, env.dphi, env.u1, env.u2, env.u1o, env.u2o, env.k)
    jac = np.array(_jacobian_at(iset, args, eps))
    size = jac.shape[0]
    scale = float(np.max(np.abs(jac))) if jac.size else 0.0
    det = float(np.linalg.det(jac))
    cond = float(np.linalg.cond(jac))
    degenerate = scale == 0.0 or abs(det) < RANK_DET_RTOL * scale**size
    return RankReport(jacobian=jac, determinant=det, condition=cond, degenerate=degenerate)


# --- reconstruction ----------------------------------------------------------


def _solve_scaled_pp(matrix: list[list[float]], rhs: list[float]) -> list[float]:
    """Gaussian elimination with scaled partial pivoting; raises on a pivot
    below PIVOT_RTOL relative to its row scale."""
    size = len(rhs)
    a = [row[:] for row in matrix]
    b = list(rhs)
    scale = [max(abs(v) for v in row) for row in a]
    if min(scale) == 0.0:
        raise SingularJacobianError("Jacobian has an all-zero row")
    for col in range(size):
        pivot_row = max(range(col, size), key=lambda r: abs(a[r][col]) / scale[r])
        if abs(a[pivot_row][col]) <= PIVOT_RTOL * scale[pivot_row]:
            raise SingularJacobianError(
                f"pivot below {PIVOT_RTOL} relative threshold in column {col}"
            )
        if pivot_row != col:
            a[col], a[pivot_row] = a[pivot_row], a[col]
            b[col], b[pivot_row] = b[pivot_row], b[col]
            scale[col], scale[pivot_row] = scale[pivot_row], scale[col]
        piv = a[col][col]
        for r in range(col + 1, size):
            f = a[r][col] / piv
            if f != 0.0:
                for c in range(col + 1, size):
                    a[r][c] -= f * a[col][c]
                b[r] -= f * b[col]
    x = [0.0] * size
    for r in range(size - 1, -1, -1):
        acc = b[r]
        for c in range(r + 1, size):
            acc -= a[r][c] * x[c]
        x[r] = acc / a[r][r]
    return x


def _newton(
    iset: LacingIntegralSet,
    u1o,
    u2o,
    phi,
    dphi,
    u_init,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> tuple[tuple[float, ...], float, int]:
    n = iset.n
    k = tuple(iset.constants.tolist())
    consts = iset.constants.tolist()
    u = list(u_init)
    residual = 0.0
    for it in range(max_iter + 1):
        args = (0.0, phi, dphi, tuple(u[:n]), tuple(u[n:]), u1o, u2o, k)
        r = [f(*args) - c for f, c in zip(iset._compiled, consts)]
        residual = max(abs(v) for v in r)
        if residual <= tol:
            return tuple(u), residual, it
        if it == max_iter:
            break
        jac = _jacobian_at(iset, args)
        delta = _solve_scaled_pp(jac, r)
        u = [a - d for a, d in zip(u, delta)]
    raise NewtonConvergenceError(
        f"Newton stalled at residual {residual:.3e} after {max_iter} iterations "
        f"(outside the local validity region?)",
        residual,
    )


def reconstruct_feedback(
    iset: LacingIntegralSet,
    u_pure,
    phi,
    dphi,
    u_init,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER,
) -> ReconstructionResult:
    """Solve K(u, u_pure, phi, dphi) = constants for the interactive controls.

    Newton iteration from ``u_init``; linear solves use scaled partial
    pivoting.  Convergence means a max-norm residual within ``tol``.  Raises
    :class:`SingularJacobianError` or :class:`NewtonConvergenceError` when the
    local inversion breaks down.
    """
    n = iset.n
    u_pure = np.asarray(u_pure, dtype=float)
    if u_pure.shape != (2 * n,):
        raise ConfigError(f"u_pure must have length 2n={2 * n}")
    u1o = tuple(u_pure[:n].tolist())
    u2o = tuple(u_pure[n:].tolist())
    u, residual, iterations = _newton(
        iset,
        u1o,
        u2o,
        tuple(np.asarray(phi, dtype=float).tolist()),
        tuple(np.asarray(dphi, dtype=float).tolist()),
        tuple(np.asarray(u_init, dtype=float).tolist()),
        tol,
        max_iter,
    )
    return ReconstructionResult(np.array(u), residual, iterations)


def reconstruct_trajectory(
    iset: LacingIntegralSet, traj: Trajectory
) -> TrajectoryReconstruction:
    """Reconstruct the interactive controls at every sample.

    Each sample's Newton solve is warm-started from the previous solution
    (the first from zero), which keeps the iteration on one branch of the
    local inverse.  A failing sample aborts with the failing time and
    residual.
    """
    if traj.n != iset.n:
        raise ConfigError(f"integral set is for n={iset.n}, trajectory has n={traj.n}")
    n = iset.n
    phi = traj.phi.tolist()
    dphi = traj.dphi.tolist()
    u_pure = traj.u_pure.tolist()
    solutions = np.empty((len(traj), 2 * n))
    iterations = np.empty(len(traj), dtype=int)
    residuals = np.empty(len(traj))
    warm: tuple[float, ...] = (0.0,) * (2 * n)
    for i in range(len(traj)):
        try:
            u, res, its = _newton(
                iset,
                tuple(u_pure[i][:n]),
                tuple(u_pure[i][n:]),
                tuple(phi[i]),
                tuple(dphi[i]),
                warm,
            )
        except AnalysisError as exc:
            res = getattr(exc, "residual", float("nan"))
            raise AnalysisError(
                f"reconstruction failed at t={traj.times[i]!r} "
                f"(sample {i}, residual {res!r}): {exc}"
            ) from exc
        solutions[i] = u
        iterations[i] = its
        residuals[i] = res
        warm = u
    return TrajectoryReconstruction(
        trajectory=traj.with_controls(solutions),
        iterations=iterations,
        residuals=residuals,
    )


def measure_constants(integrals: Sequence[dsl.Expr], traj: Trajectory) -> np.ndarray:
    """Constants measured from the first sample of a trajectory with known
    interactive controls (the `measure_at_start` configuration mode)."""
    if traj.u_interactive is None:
        raise ConfigError(
            "measuring constants at the start requires interactive controls "
            "at the first sample"
        )
    n = traj.n
    env = dsl.EvalEnv(
        t=float(traj.times[0]),
        phi=traj.phi[0],
        dphi=traj.dphi[0],
        u1=traj.u_interactive[0][:n],
        u2=traj.u_interactive[0][n:],
        u1o=traj.u_pure[0][:n],
        u2o=traj.u_pure[0][n:],
        k=np.zeros(len(integrals)),
    )
    return np.array([dsl.eval_expr(e, env) for e in integrals])

"""Domain types shared by all analyses: game definitions, trajectories,
derivative estimation, interpolation and the trajectory CSV format.

All types are immutable after construction and all operations are pure, so
concurrent read-only use is safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np

from . import dsl
from .errors import ConfigError

__all__ = [
    "GameDefinition",
    "Trajectory",
    "ControlSchedule",
    "estimate_derivative",
    "with_estimated_derivatives",
    "interpolate_state",
    "hermite_interpolate",
    "trajectory_csv_text",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "format_float",
]

DerivativeSource = Literal["recorded", "estimated"]

# feedback: (u1o, u2o, phi, dphi) -> control vector of one player
FeedbackFn = Callable[[Sequence[float], Sequence[float], Sequence[float], Sequence[float]], Sequence[float]]
# dynamics: (phi, u1, u2) -> dphi
DynamicsFn = Callable[[Sequence[float], Sequence[float], Sequence[float]], Sequence[float]]


@dataclass(frozen=True)
class GameDefinition:
    """A two-player interactive system: state evolution plus (optionally) the
    hidden feedback laws that turn pure controls into effective controls.

    ``hidden_feedback`` is ground truth for simulation only; the a-posteriori
    analyses never read it.  ``dynamics_exprs`` keeps the defining expressions
    when the dynamics came from the expression DSL, which lets analyses build
    the evolution-equation integrals symbolically.
    """

    m: int
    n: int
    dynamics: DynamicsFn
    phi0: np.ndarray
    hidden_feedback: tuple[FeedbackFn, FeedbackFn] | None = None
    feedback_uses_dphi: bool = False
    dynamics_exprs: tuple[dsl.Expr, ...] | None = None

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ConfigError(f"dimensions must be positive, got m={self.m} n={self.n}")
        phi0 = np.asarray(self.phi0, dtype=float)
        if phi0.shape != (self.m,):
            raise ConfigError(f"phi0 must have length m={self.m}, got shape {phi0.shape}")
        phi0.flags.writeable = False
        object.__setattr__(self, "phi0", phi0)
        if self.dynamics_exprs is not None and len(self.dynamics_exprs) != self.m:
            raise ConfigError(
                f"dynamics needs {self.m} component expressions, got {len(self.dynamics_exprs)}"
            )


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Trajectory:
    """Time-sampled record of a play: state, state derivative, pure controls
    and (when known) the interactive controls.

    ``u_pure`` and ``u_interactive`` concatenate both players' vectors
    (player 1 first).  ``derivative_source`` records whether ``dphi`` is the
    exact right-hand side written by the simulator or a finite-difference
    estimate; the distinction sets the reconstruction accuracy downstream.
    """

    times: np.ndarray
    phi: np.ndarray           # (N, m)
    dphi: np.ndarray          # (N, m)
    u_pure: np.ndarray        # (N, 2n)
    u_interactive: np.ndarray | None = None
    derivative_source: DerivativeSource = "recorded"

    def __post_init__(self):
        times = _frozen_array(self.times)
        phi = _frozen_array(np.atleast_2d(self.phi))
        dphi = _frozen_array(np.atleast_2d(self.dphi))
        u_pure = _frozen_array(np.atleast_2d(self.u_pure))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "dphi", dphi)
        object.__setattr__(self, "u_pure", u_pure)
        if self.u_interactive is not None:
            u = _frozen_array(np.atleast_2d(self.u_interactive))
            object.__setattr__(self, "u_interactive", u)
        n = len(times)
        if n < 1:
            raise ConfigError("trajectory needs at least one sample")
        for name in ("phi", "dphi", "u_pure", "u_interactive"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[0] != n:
                raise ConfigError(f"{name} has {arr.shape[0]} rows for {n} times")
        if self.phi.shape != self.dphi.shape:
            raise ConfigError("phi and dphi shapes differ")
        if self.u_interactive is not None and self.u_interactive.shape != self.u_pure.shape:
            raise ConfigError("u_interactive and u_pure shapes differ")
        if self.u_pure.shape[1] % 2 != 0:
            raise ConfigError("u_pure must hold both players' controls (even width)")
        if n > 1 and not np.all(np.diff(times) > 0):
            raise ConfigError("times must be strictly increasing")
        if self.derivative_source not in ("recorded", "estimated"):
            raise ConfigError(f"unknown derivative_source {self.derivative_source!r}")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def m(self) -> int:
        return self.phi.shape[1]

    @property
    def n(self) -> int:
        return self.u_pure.shape[1] // 2

    def with_controls(self, u_interactive) -> "Trajectory":
        return replace(self, u_interactive=np.asarray(u_interactive, dtype=float))


@dataclass(frozen=True)
class ControlSchedule:
    """Pure-control signals as expressions of ``t`` only (one per control
    component, player 1's components first)."""

    exprs: tuple[dsl.Expr, ...]
    _compiled: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for e in self.exprs:
            extra = dsl.referenced_names(e) - {"t"}
            if extra:
                raise ConfigError(
                    f"schedule expression '{dsl.to_string(e)}' may only reference t, "
                    f"found {sorted(extra)}"
                )
        object.__setattr__(self, "_compiled", tuple(dsl.compile_expr(e) for e in self.exprs))

    @classmethod
    def from_strings(cls, texts: Sequence[str]) -> "ControlSchedule":
        return cls(tuple(dsl.parse_expr(s) for s in texts))

    @property
    def n(self) -> int:
        return len(self.exprs) // 2

    def __call__(self, t: float) -> tuple[float, ...]:
        empty = ()
        return tuple(f(t, empty, empty, empty, empty, empty, empty, empty) for f in self._compiled)


# --- derivative estimation --------------------------------------------------


def estimate_derivative(traj: Trajectory, index: int) -> np.ndarray:
    """Finite-difference estimate of the state derivative at one sample.

    Central difference at interior samples, first-order one-sided at the two
    endpoints.  Analyses should prefer interior samples: the endpoint estimate
    is only first-order accurate.
    """
    n = len(traj)
    if n < 2:
        raise ConfigError("derivative estimation needs at least 2 samples")
    if not 0 <= index < n:
        raise IndexError(f"sample index {index} out of range for {n} samples")
    t, phi = traj.times, traj.phi
    if index == 0:
        return (phi[1] - phi[0]) / (t[1] - t[0])
    if index == n - 1:
        return (phi[-1] - phi[-2]) / (t[-1] - t[-2])
    return (phi[index + 1] - phi[index - 1]) / (t[index + 1] - t[index - 1])


def with_estimated_derivatives(traj: Trajectory) -> Trajectory:
    """Copy of the trajectory with ``dphi`` replaced by finite-difference
    estimates and ``derivative_source`` set accordingly."""
    dphi = np.stack([estimate_derivative(traj, i) for i in range(len(traj))])
    return replace(traj, dphi=dphi, derivative_source="estimated")


# --- interpolation ----------------------------------------------------------


def hermite_interpolate(
    times: np.ndarray,
    phi: np.ndarray,
    dphi: np.ndarray,
    t: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Cubic Hermite interpolation of ``phi`` from (value, slope) node pairs,
    linear interpolation of ``dphi``.  Exact at the nodes; exact for cubic
    signals when the stored slopes are exact."""
    if t < times[0] or t > times[-1]:
        raise ConfigError(
            f"time {t!r} outside recorded range [{times[0]!r}, {times[-1]!r}]"
        )
    if len(times) == 1:
        return phi[0].copy(), dphi[0].copy()
    i = int(np.searchsorted(times, t, side="right")) - 1
    i = min(max(i, 0), len(times) - 2)
    dt = times[i + 1] - times[i]
    s = (t - times[i]) / dt
    s2 = s * s
    s3 = s2 * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = s3 - 2.0 * s2 + s
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = s3 - s2
    value = h00 * phi[i] + h10 * dt * dphi[i] + h01 * phi[i + 1] + h11 * dt * dphi[i + 1]
    slope = (1.0 - s) * dphi[i] + s * dphi[i + 1]
    return value, slope


def interpolate_state(traj: Trajectory, t: float) -> tuple[np.ndarray, np.ndarray]:
    """State and state derivative at an arbitrary time inside the recorded
    range; reproduces stored samples bit-exactly at the nodes."""
    return hermite_interpolate(traj.times, traj.phi, traj.dphi, t)


# --- CSV format ---------------------------------------------------------------


def format_float(x: float) -> str:
    """17 significant digits: round-trips any double exactly."""
    return format(float(x), ".17g")


def _csv_header(m: int, n: int, with_u: bool) -> list[str]:
    cols = ["t"]
    cols += [f"phi_{i}" for i in range(m)]
    cols += [f"dphi_{i}" for i in range(m)]
    cols += [f"u1o_{j}" for j in range(n)]
    cols += [f"u2o_{j}" for j in range(n)]
    if with_u:
        cols += [f"u1_{j}" for j in range(n)]
        cols += [f"u2_{j}" for j in range(n)]
    return cols


def trajectory_csv_text(traj: Trajectory) -> str:
    """The trajectory in the interchange CSV format (17 significant digits,
    comma-separated, newline-terminated rows).  The interactive control
    columns are included only when the trajectory carries them."""
    with_u = traj.u_interactive is not None
    lines = [",".join(_csv_header(traj.m, traj.n, with_u))]
    for i in range(len(traj)):
        row = [traj.times[i], *traj.phi[i], *traj.dphi[i], *traj.u_pure[i]]
        if with_u:
            row.extend(traj.u_interactive[i])
        lines.append(",".join(format_float(x) for x in row))
    return "\n".join(lines) + "\n"


def write_trajectory_csv(traj: Trajectory, path) -> None:
    Path(path).write_text(trajectory_csv_text(traj))


def read_trajectory_csv(path, derivative_source: DerivativeSource = "recorded") -> Trajectory:
    """Load a trajectory CSV.

    With ``derivative_source="estimated"`` the file's dphi columns are replaced
    by central-difference estimates (the a-posteriori setting where only the
    state was observed).
    """
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise ConfigError(f"{path}: trajectory CSV needs a header and at least one row")
    header = lines[0].split(",")
    m = sum(1 for c in header if c.startswith("phi_"))
    n = sum(1 for c in header if c.startswith("u1o_"))
    with_u = any(c.startswith("u1_") for c in header)
    if m < 1 or n < 1:
        raise ConfigError(f"{path}: header does not name phi_*/u1o_* columns")
    expected = _csv_header(m, n, with_u)
    if header != expected:
        raise ConfigError(
            f"{path}: header mismatch, expected {','.join(expected)!r}"
        )
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    if data.shape[1] != len(expected):
        raise ConfigError(f"{path}: row width {data.shape[1]} != header width {len(expected)}")
    times = data[:, 0]
    phi = data[:, 1 : 1 + m]
    dphi = data[:, 1 + m : 1 + 2 * m]
    u_pure = data[:, 1 + 2 * m : 1 + 2 * m + 2 * n]
    u = data[:, 1 + 2 * m + 2 * n :] if with_u else None
    traj = Trajectory(times, phi, dphi, u_pure, u, derivative_source="recorded")
    if derivative_source == "estimated":
        traj = with_estimated_derivatives(traj)
    return traj

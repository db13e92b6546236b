"""Approximating ordinary differential games built from reconstructed
feedbacks, and their prediction quality against the true trajectory.

Two constructions: freezing the reconstructed feedback's state arguments at
the start time, and delaying them by a fixed lag (integrated by the method of
steps, so every delayed lookup reads already-computed history).  A sweep over
start times scores each run and correlates the error curves pairwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    ControlSchedule,
    DynamicsFn,
    Trajectory,
    hermite_interpolate,
    interpolate_state,
)
from .errors import ConfigError, LacedGamesError, NumericError
from .lacing import LacingIntegralSet, _newton
from .simulate import time_grid

__all__ = [
    "ApproximationRun",
    "ErrorMetrics",
    "SweepResult",
    "InsufficientHistoryError",
    "frozen_predict",
    "retarded_predict",
    "prediction_error",
    "error_curve",
    "sweep_t0",
]


class InsufficientHistoryError(ConfigError):
    """The truth trajectory does not cover the required initial history."""


@dataclass(frozen=True)
class ErrorMetrics:
    l_inf: float
    l2: float


@dataclass(frozen=True)
class ApproximationRun:
    """One approximating-game integration and its prediction errors over
    [t0, t0 + horizon] against the truth."""

    kind: str  # "frozen" | "retarded"
    t0: float
    delta_t: float
    horizon: float
    h: float  # step actually used (may be reduced below delta_t / 4)
    predicted: Trajectory
    l_inf: float
    l2: float


@dataclass(frozen=True)
class SweepResult:
    t0_values: tuple[float, ...]
    runs: tuple[ApproximationRun | None, ...]
    failures: dict[int, str]
    # Pearson correlation of per-time error curves; None marks an undefined
    # entry (zero-variance curve or failed run), never NaN.
    correlations: tuple[tuple[float | None, ...], ...]


def _pure_control_source(truth: Trajectory, schedule: ControlSchedule | None):
    """Pure controls as a function of time: exact schedule expressions when
    available, otherwise linear interpolation of the recorded columns."""
    if schedule is not None:
        if len(schedule.exprs) != 2 * truth.n:
            raise ConfigError(
                f"schedule has {len(schedule.exprs)} components, trajectory needs {2 * truth.n}"
            )
        return schedule
    times = truth.times
    u_pure = truth.u_pure

    def lookup(t: float) -> tuple[float, ...]:
        if t < times[0] or t > times[-1]:
            raise InsufficientHistoryError(
                f"pure controls requested at t={t!r} outside the recorded range "
                f"[{times[0]!r}, {times[-1]!r}] and no schedule is available"
            )
        i = int(np.searchsorted(times, t, side="right")) - 1
        i = min(max(i, 0), len(times) - 2)
        s = (t - times[i]) / (times[i + 1] - times[i])
        return tuple((1.0 - s) * u_pure[i] + s * u_pure[i + 1])

    return lookup


class _Reconstructor:
    """Warm-started per-stage reconstruction of the interactive controls."""

    def __init__(self, iset: LacingIntegralSet):
        self.iset = iset
        self.n = iset.n
        self.warm: tuple[float, ...] = (0.0,) * (2 * iset.n)

    def __call__(self, u_pure, phi_args, dphi_args) -> tuple[float, ...]:
        n = self.n
        u, _, _ = _newton(
            self.iset,
            tuple(u_pure[:n]),
            tuple(u_pure[n:]),
            tuple(map(float, phi_args)),
            tuple(map(float, dphi_args)),
            self.warm,
        )
        self.warm = u
        return u


def _finite_or_raise(y, t):
    if not all(math.isfinite(v) for v in y):
        raise NumericError(f"non-finite predicted state at t={t!r}")


def frozen_predict(
    iset: LacingIntegralSet,
    dynamics: DynamicsFn,
    truth: Trajectory,
    t0: float,
    horizon: float,
    h: float,
    schedule: ControlSchedule | None = None,
) -> ApproximationRun:
    """Integrate the ordinary game obtained by freezing the reconstructed
    feedback's state arguments at t0.

    The feedback still sees the live pure controls; only its (state,
    state-derivative) arguments stay pinned at their t0 values.
    """
    if horizon < 0:
        raise ConfigError(f"horizon must be nonnegative, got {horizon!r}")
    source = _pure_control_source(truth, schedule)
    phi_frozen, dphi_frozen = interpolate_state(truth, t0)
    phi_frozen = tuple(phi_frozen.tolist())
    dphi_frozen = tuple(dphi_frozen.tolist())
    recon = _Reconstructor(iset)
    n = iset.n

    def controls_at(t: float) -> tuple[float, ...]:
        return recon(source(t), phi_frozen, dphi_frozen)

    def rhs(t: float, y):
        u = controls_at(t)
        return tuple(map(float, dynamics(y, u[:n], u[n:]))), u

    nodes = time_grid(t0, horizon, h)
    y = phi_frozen
    times, phis, dphis, ups, us = [], [], [], [], []

    deriv, u_node = rhs(nodes[0], y)
    for i in range(len(nodes)):
        times.append(nodes[i])
        phis.append(y)
        dphis.append(deriv)
        ups.append(tuple(source(nodes[i])))
        us.append(u_node)
        if i == len(nodes) - 1:
            break
        t_a, t_b = nodes[i], nodes[i + 1]
        dt = t_b - t_a
        half = 0.5 * dt
        k1 = deriv
        k2, _ = rhs(t_a + half, tuple(a + half * b for a, b in zip(y, k1)))
        k3, _ = rhs(t_a + half, tuple(a + half * b for a, b in zip(y, k2)))
        k4, _ = rhs(t_b, tuple(a + dt * b for a, b in zip(y, k3)))
        sixth = dt / 6.0
        y = tuple(
            a + sixth * (b1 + 2.0 * (b2 + b3) + b4)
            for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)
        )
        _finite_or_raise(y, t_b)
        deriv, u_node = rhs(t_b, y)

    predicted = Trajectory(
        np.array(times), np.array(phis), np.array(dphis), np.array(ups), np.array(us)
    )
    err = prediction_error(predicted, truth)
    return ApproximationRun("frozen", t0, 0.0, horizon, h, predicted, err.l_inf, err.l2)


class _HistoryBuffer:
    """Growing record of the prediction, interpolable like a trajectory."""

    def __init__(self, capacity: int, m: int):
        self.times = np.empty(capacity)
        self.phi = np.empty((capacity, m))
        self.dphi = np.empty((capacity, m))
        self.count = 0

    def append(self, t, phi, dphi):
        i = self.count
        self.times[i] = t
        self.phi[i] = phi
        self.dphi[i] = dphi
        self.count += 1

    def state(self, t: float):
        c = self.count
        return hermite_interpolate(self.times[:c], self.phi[:c], self.dphi[:c], t)

    @property
    def front(self) -> float:
        return float(self.times[self.count - 1])


def retarded_predict(
    iset: LacingIntegralSet,
    dynamics: DynamicsFn,
    truth: Trajectory,
    t0: float,
    delta_t: float,
    horizon: float,
    h: float,
    schedule: ControlSchedule | None = None,
) -> ApproximationRun:
    """Integrate the delay game obtained by handing the reconstructed feedback
    the state and state derivative delayed by ``delta_t``.

    Method of steps with RK4 substeps: the step is capped at ``delta_t / 4``
    (reduced with a warning if the configured ``h`` is larger) so no stage
    ever reads ahead of computed data.  Delayed lookups before t0 read the
    recorded truth; later ones read the already-computed prediction.  With
    ``delta_t = 0`` the feedback sees the current stage state, and the
    derivative argument is interpolated at the integration front, which
    degenerates to the true closed loop whenever the integrals do not
    reference the state derivative.
    """
    if delta_t < 0:
        raise ConfigError(f"delta_t must be nonnegative, got {delta_t!r}")
    if horizon < 0:
        raise ConfigError(f"horizon must be nonnegative, got {horizon!r}")
    if t0 - delta_t < truth.times[0] or t0 > truth.times[-1]:
        raise InsufficientHistoryError(
            f"truth must cover the initial history [t0 - delta_t, t0] = "
            f"[{t0 - delta_t!r}, {t0!r}]; recorded range is "
            f"[{truth.times[0]!r}, {truth.times[-1]!r}]"
        )
    h_used = h
    if delta_t > 0 and h > delta_t / 4.0:
        h_used = delta_t / 4.0
        warnings.warn(
            f"step {h!r} reduced to delta_t/4 = {h_used!r} so delayed lookups "
            f"stay behind the integration front",
            stacklevel=2,
        )
    source = _pure_control_source(truth, schedule)
    recon = _Reconstructor(iset)
    n = iset.n
    nodes = time_grid(t0, horizon, h_used)
    buffer = _HistoryBuffer(len(nodes), truth.m)

    def delayed_args(t_stage: float, y_stage):
        if delta_t == 0.0:
            front = min(t_stage, buffer.front)
            _, dphi_d = buffer.state(front)
            return y_stage, tuple(dphi_d.tolist())
        t_d = t_stage - delta_t
        if t_d < t0:
            phi_d, dphi_d = interpolate_state(truth, t_d)
        else:
            phi_d, dphi_d = buffer.state(t_d)
        return tuple(phi_d.tolist()), tuple(dphi_d.tolist())

    def rhs(t_stage: float, y_stage):
        phi_d, dphi_d = delayed_args(t_stage, y_stage)
        u = recon(source(t_stage), phi_d, dphi_d)
        return tuple(map(float, dynamics(y_stage, u[:n], u[n:]))), u

    phi_t0, dphi_t0 = interpolate_state(truth, t0)
    y = tuple(phi_t0.tolist())
    # seed the buffer so the first stage can interpolate at the front
    buffer.append(t0, y, dphi_t0)
    deriv, u_node = rhs(nodes[0], y)
    buffer.dphi[0] = deriv  # replace seed slope by the delay equation's own rhs

    times, phis, dphis, ups, us = [], [], [], [], []
    for i in range(len(nodes)):
        times.append(nodes[i])
        phis.append(y)
        dphis.append(deriv)
        ups.append(tuple(source(nodes[i])))
        us.append(u_node)
        if i == len(nodes) - 1:
            break
        t_a, t_b = nodes[i], nodes[i + 1]
        dt = t_b - t_a
        half = 0.5 * dt
        k1 = deriv
        k2, _ = rhs(t_a + half, tuple(a + half * b for a, b in zip(y, k1)))
        k3, _ = rhs(t_a + half, tuple(a + half * b for a, b in zip(y, k2)))
        k4, _ = rhs(t_b, tuple(a + dt * b for a, b in zip(y, k3)))
        sixth = dt / 6.0
        y = tuple(
            a + sixth * (b1 + 2.0 * (b2 + b3) + b4)
            for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)
        )
        _finite_or_raise(y, t_b)
        deriv, u_node = rhs(t_b, y)
        buffer.append(t_b, y, deriv)

    predicted = Trajectory(
        np.array(times), np.array(phis), np.array(dphis), np.array(ups), np.array(us)
    )
    err = prediction_error(predicted, truth)
    return ApproximationRun(
        "retarded", t0, delta_t, horizon, h_used, predicted, err.l_inf, err.l2
    )


# --- scoring ------------------------------------------------------------------


def _overlap_diffs(predicted: Trajectory, truth: Trajectory):
    lo = max(predicted.times[0], truth.times[0])
    hi = min(predicted.times[-1], truth.times[-1])
    if lo > hi:
        raise ConfigError("predicted and truth trajectories do not overlap in time")
    mask = (predicted.times >= lo) & (predicted.times <= hi)
    ts = predicted.times[mask]
    diffs = np.empty((len(ts), truth.m))
    for i, t in enumerate(ts):
        truth_phi, _ = interpolate_state(truth, float(t))
        diffs[i] = predicted.phi[mask][i] - truth_phi
    return ts, diffs


def prediction_error(predicted: Trajectory, truth: Trajectory) -> ErrorMetrics:
    """Max-norm and trapezoidal L2 state error of a prediction, with the truth
    interpolated onto the prediction's grid over their common time range."""
    ts, diffs = _overlap_diffs(predicted, truth)
    l_inf = float(np.max(np.abs(diffs)))
    if len(ts) < 2:
        return ErrorMetrics(l_inf, 0.0)
    sq = np.sum(diffs * diffs, axis=1)
    return ErrorMetrics(l_inf, float(math.sqrt(np.trapezoid(sq, ts))))


def error_curve(predicted: Trajectory, truth: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Per-time max-norm state error over the prediction grid, keyed by
    horizon offset from the prediction's start."""
    ts, diffs = _overlap_diffs(predicted, truth)
    return np.asarray(ts) - predicted.times[0], np.max(np.abs(diffs), axis=1)


def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    """Pearson correlation; None (undefined) for zero-variance input, exactly
    1.0 for identical curves."""
    length = min(len(x), len(y))
    x, y = x[:length], y[:length]
    if length == 0:
        return None
    cx = x - np.mean(x)
    cy = y - np.mean(y)
    sx = float(np.sqrt(np.sum(cx * cx)))
    sy = float(np.sqrt(np.sum(cy * cy)))
    if sx == 0.0 or sy == 0.0:
        return None
    if np.array_equal(x, y):
        return 1.0
    r = float(np.dot(cx, cy) / (sx * sy))
    return min(1.0, max(-1.0, r))


def sweep_t0(
    iset: LacingIntegralSet,
    dynamics: DynamicsFn,
    truth: Trajectory,
    t0_values,
    kind: str,
    delta_t: float,
    horizon: float,
    h: float,
    schedule: ControlSchedule | None = None,
) -> SweepResult:
    """One approximation run per start time plus the pairwise Pearson
    correlations of their per-time error curves on common horizon offsets.

    A failing run is recorded per start time without aborting the sweep; its
    correlation entries are undefined.  Runs are independent, so the result
    does not depend on execution order.
    """
    if kind not in ("frozen", "retarded"):
        raise ConfigError(f"sweep kind must be 'frozen' or 'retarded', got {kind!r}")
    t0_values = tuple(float(t) for t in t0_values)
    runs: list[ApproximationRun | None] = []
    failures: dict[int, str] = {}
    curves: list[np.ndarray | None] = []
    for idx, t0 in enumerate(t0_values):
        try:
            if kind == "frozen":
                run = frozen_predict(iset, dynamics, truth, t0, horizon, h, schedule)
            else:
                run = retarded_predict(
                    iset, dynamics, truth, t0, delta_t, horizon, h, schedule
                )
            runs.append(run)
            curves.append(error_curve(run.predicted, truth)[1])
        except LacedGamesError as exc:
            runs.append(None)
            curves.append(None)
            failures[idx] = str(exc)
    size = len(t0_values)
    corr: list[tuple[float | None, ...]] = []
    for i in range(size):
        row: list[float | None] = []
        for j in range(size):
            if curves[i] is None or curves[j] is None:
                row.append(None)
            else:
                row.append(_pearson(curves[i], curves[j]))
        corr.append(tuple(row))
    return SweepResult(t0_values, tuple(runs), failures, tuple(corr))

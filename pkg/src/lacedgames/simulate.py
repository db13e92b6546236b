"""Ground-truth forward simulation of an interactive system.

The hidden feedback laws are resolved at every integrator stage, so the
recorded controls and state derivative are stage-consistent: at each sample
``dphi`` equals the evolution right-hand side evaluated at the recorded
controls, which makes the evolution-equation integrals machine-exact at the
nodes.
"""

from __future__ import annotations

import math

import numpy as np

from .core import ControlSchedule, GameDefinition, Trajectory
from .errors import ConfigError, NumericError

__all__ = ["resolve_controls", "simulate", "FixedPointError", "NonFiniteStateError"]

FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 200


class FixedPointError(NumericError):
    """The dphi algebraic loop did not converge (ill-posed coupling)."""


class NonFiniteStateError(NumericError):
    """The state overflowed or became NaN; carries the offending time."""

    def __init__(self, time: float):
        super().__init__(f"non-finite state at t={time!r}")
        self.time = time


def _resolve(game: GameDefinition, u_pure, phi):
    """Controls and state derivative at one phase point, as float tuples."""
    if game.hidden_feedback is None:
        raise ConfigError("game has no hidden feedback laws to resolve")
    n = game.n
    f1, f2 = game.hidden_feedback
    u1o, u2o = u_pure[:n], u_pure[n:]
    zero = (0.0,) * game.m

    def feedback(dphi):
        u1 = tuple(map(float, f1(u1o, u2o, phi, dphi)))
        u2 = tuple(map(float, f2(u1o, u2o, phi, dphi)))
        if len(u1) != n or len(u2) != n:
            raise ConfigError(f"feedback output length must be n={n}")
        return u1, u2

    def rhs(u1, u2):
        dphi = tuple(map(float, game.dynamics(phi, u1, u2)))
        if len(dphi) != game.m:
            raise ConfigError(f"dynamics output length must be m={game.m}")
        return dphi

    if not game.feedback_uses_dphi:
        u1, u2 = feedback(zero)
        return u1 + u2, rhs(u1, u2)

    # damped fixed point of dphi -> Phi(phi, F(u_pure, phi, dphi))
    dphi = rhs(*feedback(zero))
    prev_residual = math.inf
    for _ in range(FIXED_POINT_MAX_ITER):
        u1, u2 = feedback(dphi)
        new = rhs(u1, u2)
        residual = max(abs(a - b) for a, b in zip(new, dphi))
        if residual <= FIXED_POINT_TOL:
            u1, u2 = feedback(new)
            return u1 + u2, rhs(u1, u2)
        if residual > prev_residual:
            dphi = tuple(0.5 * (a + b) for a, b in zip(new, dphi))
        else:
            dphi = new
        prev_residual = residual
    raise FixedPointError(
        f"dphi fixed point did not reach {FIXED_POINT_TOL} within "
        f"{FIXED_POINT_MAX_ITER} iterations (last residual {prev_residual:.3e})"
    )


def resolve_controls(game: GameDefinition, u_pure, phi) -> tuple[np.ndarray, np.ndarray]:
    """Effective controls and state derivative for given pure controls and state.

    When the hidden feedbacks reference the state derivative, the algebraic
    loop is closed by damped fixed-point iteration (tolerance 1e-12 in max
    norm, at most 200 iterations) started from the derivative obtained with a
    zero-dphi feedback evaluation.
    """
    u_pure = tuple(map(float, np.asarray(u_pure, dtype=float)))
    phi = tuple(map(float, np.asarray(phi, dtype=float)))
    if len(u_pure) != 2 * game.n:
        raise ConfigError(f"u_pure must have length 2n={2 * game.n}")
    if len(phi) != game.m:
        raise ConfigError(f"phi must have length m={game.m}")
    u, dphi = _resolve(game, u_pure, phi)
    return np.array(u), np.array(dphi)


def time_grid(t0: float, span: float, h: float) -> list[float]:
    """Fixed-step grid over [t0, t0+span]; the final step is shortened so the
    grid lands exactly on the endpoint.

    Node times are computed as t0 + k*h (not accumulated) to keep the grid
    deterministic and drift-free.
    """
    if h <= 0:
        raise ConfigError(f"step must be positive, got {h!r}")
    if span < 0:
        raise ConfigError(f"span must be nonnegative, got {span!r}")
    if span == 0:
        return [t0]
    steps = max(1, math.ceil(span / h - 1e-9))
    while steps > 1 and t0 + (steps - 1) * h >= t0 + span:
        steps -= 1
    return [t0 + k * h for k in range(steps)] + [t0 + span]


def simulate(game: GameDefinition, schedule: ControlSchedule, t_end: float, h: float) -> Trajectory:
    """Integrate the interactive system with classical fixed-step RK4,
    resolving the hidden feedbacks at every stage.

    Records state, exact state derivative, pure controls and ground-truth
    interactive controls at each grid time; ``derivative_source`` is
    ``recorded``.  Deterministic: identical inputs give bit-identical output.
    """
    if game.hidden_feedback is None:
        raise ConfigError("simulation requires hidden feedback laws")
    if t_end < h:
        raise ConfigError(f"t_end={t_end!r} must be at least one step h={h!r}")
    if len(schedule.exprs) != 2 * game.n:
        raise ConfigError(
            f"schedule has {len(schedule.exprs)} components, game needs {2 * game.n}"
        )
    nodes = time_grid(0.0, t_end, h)
    y = tuple(map(float, game.phi0))

    times, phis, dphis, u_pures, us = [], [], [], [], []

    def record(t, state):
        up = schedule(t)
        u, dphi = _resolve(game, up, state)
        times.append(t)
        phis.append(state)
        dphis.append(dphi)
        u_pures.append(up)
        us.append(u)
        return dphi

    k1 = record(nodes[0], y)
    for i in range(len(nodes) - 1):
        t_a, t_b = nodes[i], nodes[i + 1]
        dt = t_b - t_a
        half = 0.5 * dt
        t_mid = t_a + half

        y2 = tuple(a + half * b for a, b in zip(y, k1))
        _, k2 = _resolve(game, schedule(t_mid), y2)
        y3 = tuple(a + half * b for a, b in zip(y, k2))
        _, k3 = _resolve(game, schedule(t_mid), y3)
        y4 = tuple(a + dt * b for a, b in zip(y, k3))
        _, k4 = _resolve(game, schedule(t_b), y4)

        sixth = dt / 6.0
        y = tuple(
            a + sixth * (b1 + 2.0 * (b2 + b3) + b4)
            for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)
        )
        if not all(math.isfinite(v) for v in y):
            raise NonFiniteStateError(t_b)
        k1 = record(t_b, y)

    return Trajectory(
        times=np.array(times),
        phi=np.array(phis),
        dphi=np.array(dphis),
        u_pure=np.array(u_pures),
        u_interactive=np.array(us),
        derivative_source="recorded",
    )

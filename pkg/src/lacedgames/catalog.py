"""Built-in parameterized example games with canonical lacing integrals.

Every entry couples linear dynamics to a known feedback law and ships the
matching integral set (each integral is `control minus feedback law`, so it is
conserved identically on the entry's own simulated trajectories) plus an
analytic control Jacobian and a default pure-control schedule.

Entries with additive state coupling violate the decomposition hypothesis
(zero pure control maps to a nonzero control when the state is nonzero), so
the state-coupled entries also offer a `stationary` variant with
multiplicative state coupling for decomposition work.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsl
from .core import ControlSchedule, GameDefinition
from .errors import ConfigError
from .lacing import LacingIntegralSet, check_lacing_rank

__all__ = ["CatalogEntry", "CATALOG_NAMES", "build_catalog_game"]

CATALOG_NAMES = ("linear_laced", "cross_laced", "tanh_laced", "quad_cross_laced")


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    parameters: dict
    game: GameDefinition
    integrals: LacingIntegralSet
    schedule: ControlSchedule
    dynamics_strs: tuple[str, ...]
    feedback_strs: tuple[str, ...]  # u1 components then u2 components
    integral_strs: tuple[str, ...]
    jacobian_strs: tuple[tuple[str, ...], ...]
    schedule_strs: tuple[str, ...]

    def all_expression_strings(self) -> list[str]:
        out = list(self.dynamics_strs + self.feedback_strs + self.integral_strs)
        out += [e for row in self.jacobian_strs for e in row]
        out += list(self.schedule_strs)
        return out

    def config_template(self) -> str:
        return _config_template(self)


def _fmt(x: float) -> str:
    return repr(float(x))


def _matrix(value, rows: int, cols: int, name: str) -> np.ndarray:
    if np.isscalar(value):
        if rows == cols == 1:
            return np.array([[float(value)]])
        raise ConfigError(f"{name} must be a {rows}x{cols} matrix, got a scalar")
    arr = np.asarray(value, dtype=float)
    if arr.shape != (rows, cols):
        raise ConfigError(f"{name} must have shape ({rows}, {cols}), got {arr.shape}")
    return arr


def _vector(value, length: int, name: str) -> np.ndarray:
    if np.isscalar(value):
        if length == 1:
            return np.array([float(value)])
        raise ConfigError(f"{name} must be a length-{length} vector, got a scalar")
    arr = np.asarray(value, dtype=float)
    if arr.shape != (length,):
        raise ConfigError(f"{name} must have length {length}, got shape {arr.shape}")
    return arr


def _pattern(diag: float, off: float, rows: int, cols: int) -> np.ndarray:
    out = np.full((rows, cols), off)
    for i in range(min(rows, cols)):
        out[i, i] = diag
    return out


def _linear_terms(coeffs: np.ndarray, var: str) -> list[str]:
    terms = []
    for j, c in enumerate(coeffs):
        if c != 0.0:
            terms.append(f"{_fmt(c)}*{var}[{j}]")
    return terms


def _sum_or_zero(terms: list[str]) -> str:
    return " + ".join(terms) if terms else "0.0"


def _dynamics_strings(A, B1, B2) -> tuple[str, ...]:
    rows = []
    for i in range(A.shape[0]):
        terms = (
            _linear_terms(A[i], "phi")
            + _linear_terms(B1[i], "u1")
            + _linear_terms(B2[i], "u2")
        )
        rows.append(_sum_or_zero(terms))
    return tuple(rows)


def _identity_jacobian_strings(size: int) -> tuple[tuple[str, ...], ...]:
    return tuple(
        tuple("1.0" if i == j else "0.0" for j in range(size)) for i in range(size)
    )


def _feedback_callable(exprs: list[dsl.Expr]):
    compiled = [dsl.compile_expr(e) for e in exprs]
    empty = ()

    def feedback(u1o, u2o, phi, dphi):
        return tuple(f(0.0, phi, dphi, empty, empty, u1o, u2o, empty) for f in compiled)

    return feedback


def _dynamics_callable(exprs: list[dsl.Expr]):
    compiled = [dsl.compile_expr(e) for e in exprs]
    empty = ()

    def dynamics(phi, u1, u2):
        return tuple(f(0.0, phi, empty, u1, u2, empty, empty, empty) for f in compiled)

    return dynamics


def _state_coupled_feedback(
    own: str, other: str, cross: float, C: np.ndarray, stationary: bool
) -> list[str]:
    """Feedback strings for one player: own pure control, optional cross term
    in the other player's pure control, and state coupling that is additive or
    (stationary variant) multiplicative in the own pure control."""
    n, m = C.shape
    rows = []
    for j in range(n):
        expr = f"{own}[{j}]"
        if cross != 0.0:
            expr += f" + {_fmt(cross)}*{other}[{j}]"
        state = _sum_or_zero(_linear_terms(C[j], "phi"))
        if state != "0.0":
            if stationary:
                expr += f" + ({state})*{own}[{j}]"
            else:
                expr += f" + {state}"
        rows.append(expr)
    return rows


def _take(params: dict, name: str, default):
    return params[name] if name in params else default


def build_catalog_game(name: str, params: dict | None = None) -> CatalogEntry:
    """Construct a catalog entry; every entry is laced by construction and its
    integral set passes the rank check at the default initial condition."""
    if name not in CATALOG_NAMES:
        raise ConfigError(f"unknown catalog game {name!r}; choose from {CATALOG_NAMES}")
    params = dict(params or {})
    known = {"m", "n", "phi0", "stationary", "A", "B1", "B2"}
    known |= {
        "linear_laced": {"C1", "C2"},
        "cross_laced": {"a", "C1", "C2"},
        "tanh_laced": {"c1", "c2"},
        "quad_cross_laced": {"q"},
    }[name]
    unknown = set(params) - known
    if unknown:
        raise ConfigError(f"unknown parameters for {name}: {sorted(unknown)}")

    m = int(_take(params, "m", 1))
    n = int(_take(params, "n", 1))
    if m < 1 or n < 1:
        raise ConfigError(f"dimensions must be positive, got m={m} n={n}")
    stationary = bool(_take(params, "stationary", False))
    phi0 = _vector(_take(params, "phi0", np.ones(m)), m, "phi0")
    A = _matrix(_take(params, "A", -np.eye(m)), m, m, "A")
    B1 = _matrix(_take(params, "B1", _pattern(1.0, 0.1, m, n)), m, n, "B1")
    B2 = _matrix(_take(params, "B2", _pattern(1.0, 0.1, m, n)), m, n, "B2")

    if name == "linear_laced":
        C1 = _matrix(_take(params, "C1", _pattern(0.3, 0.1, n, m)), n, m, "C1")
        C2 = _matrix(_take(params, "C2", _pattern(0.2, 0.1, n, m)), n, m, "C2")
        fb1 = _state_coupled_feedback("u1o", "u2o", 0.0, C1, stationary)
        fb2 = _state_coupled_feedback("u2o", "u1o", 0.0, C2, stationary)
        parameters = {"m": m, "n": n, "phi0": phi0, "A": A, "B1": B1, "B2": B2,
                      "C1": C1, "C2": C2, "stationary": stationary}
    elif name == "cross_laced":
        a = float(_take(params, "a", 0.5))
        if abs(a) >= 1.0:
            raise ConfigError(
                f"cross coupling a={a!r} rejected: |a| >= 1 makes the "
                f"pure-to-interactive control map degenerate"
            )
        C1 = _matrix(_take(params, "C1", _pattern(0.3, 0.1, n, m)), n, m, "C1")
        C2 = _matrix(_take(params, "C2", _pattern(0.2, 0.1, n, m)), n, m, "C2")
        fb1 = _state_coupled_feedback("u1o", "u2o", a, C1, stationary)
        fb2 = _state_coupled_feedback("u2o", "u1o", a, C2, stationary)
        parameters = {"m": m, "n": n, "phi0": phi0, "A": A, "B1": B1, "B2": B2,
                      "a": a, "C1": C1, "C2": C2, "stationary": stationary}
    elif name == "tanh_laced":
        if stationary:
            raise ConfigError(
                "tanh_laced has no stationary variant; use c1 = c2 = 0 instead"
            )
        c1 = _matrix(_take(params, "c1", _pattern(0.3, 0.1, n, m)), n, m, "c1")
        c2 = _matrix(_take(params, "c2", _pattern(0.2, 0.1, n, m)), n, m, "c2")
        fb1 = [
            f"tanh(u1o[{j}] + {_sum_or_zero(_linear_terms(c1[j], 'phi'))})"
            for j in range(n)
        ]
        fb2 = [
            f"tanh(u2o[{j}] + {_sum_or_zero(_linear_terms(c2[j], 'phi'))})"
            for j in range(n)
        ]
        parameters = {"m": m, "n": n, "phi0": phi0, "A": A, "B1": B1, "B2": B2,
                      "c1": c1, "c2": c2, "stationary": stationary}
    else:  # quad_cross_laced
        if stationary:
            raise ConfigError("quad_cross_laced is stationary by construction")
        q = float(_take(params, "q", 0.1))
        fb1 = [f"u1o[{j}] + {_fmt(q)}*u2o[{j}]^2" for j in range(n)]
        fb2 = [f"u2o[{j}]" for j in range(n)]
        parameters = {"m": m, "n": n, "phi0": phi0, "A": A, "B1": B1, "B2": B2,
                      "q": q, "stationary": stationary}

    feedback_strs = tuple(fb1 + fb2)
    integral_strs = tuple(
        [f"u1[{j}] - ({fb1[j]})" for j in range(n)]
        + [f"u2[{j}] - ({fb2[j]})" for j in range(n)]
    )
    dynamics_strs = _dynamics_strings(A, B1, B2)
    jacobian_strs = _identity_jacobian_strings(2 * n)
    schedule_strs = tuple("0.0" for _ in range(2 * n))

    dynamics_exprs = tuple(dsl.parse_expr(s) for s in dynamics_strs)
    fb1_exprs = [dsl.parse_expr(s) for s in fb1]
    fb2_exprs = [dsl.parse_expr(s) for s in fb2]
    game = GameDefinition(
        m=m,
        n=n,
        dynamics=_dynamics_callable(list(dynamics_exprs)),
        phi0=phi0,
        hidden_feedback=(_feedback_callable(fb1_exprs), _feedback_callable(fb2_exprs)),
        feedback_uses_dphi=False,
        dynamics_exprs=dynamics_exprs,
    )
    integrals = LacingIntegralSet.from_strings(
        integral_strs, np.zeros(2 * n), jacobian_strs
    )
    schedule = ControlSchedule.from_strings(schedule_strs)

    env = dsl.EvalEnv(
        phi=phi0, dphi=np.zeros(m),
        u1=np.zeros(n), u2=np.zeros(n),
        u1o=np.zeros(n), u2o=np.zeros(n),
        k=integrals.constants,
    )
    if check_lacing_rank(integrals, env).degenerate:
        raise ConfigError(f"catalog entry {name} failed its own rank check")

    return CatalogEntry(
        name=name,
        parameters=parameters,
        game=game,
        integrals=integrals,
        schedule=schedule,
        dynamics_strs=dynamics_strs,
        feedback_strs=feedback_strs,
        integral_strs=integral_strs,
        jacobian_strs=jacobian_strs,
        schedule_strs=schedule_strs,
    )


# --- config template emission -------------------------------------------------


def _toml_matrix(arr: np.ndarray) -> str:
    rows = ", ".join("[" + ", ".join(_fmt(v) for v in row) + "]" for row in arr)
    return f"[{rows}]"


def _toml_strings(strs) -> str:
    return "[" + ", ".join(f'"{s}"' for s in strs) + "]"


def _config_template(entry: CatalogEntry) -> str:
    p = entry.parameters
    n = entry.integrals.n
    lines = [
        f"# {entry.name} catalog game (m={p['m']}, n={n})",
        "[game]",
        f'catalog = "{entry.name}"',
        "",
        "[game.params]",
        f"m = {p['m']}",
        f"n = {n}",
        f"phi0 = [{', '.join(_fmt(v) for v in p['phi0'])}]",
        f"stationary = {'true' if p['stationary'] else 'false'}",
        f"A = {_toml_matrix(p['A'])}",
        f"B1 = {_toml_matrix(p['B1'])}",
        f"B2 = {_toml_matrix(p['B2'])}",
    ]
    for key in ("C1", "C2", "c1", "c2"):
        if key in p:
            lines.append(f"{key} = {_toml_matrix(p[key])}")
    for key in ("a", "q"):
        if key in p:
            lines.append(f"{key} = {_fmt(p[key])}")
    lines += [
        "",
        "[controls]",
        f"u1o = {_toml_strings(entry.schedule_strs[:n])}",
        f"u2o = {_toml_strings(entry.schedule_strs[n:])}",
        "",
        "[lacing]",
        f"integrals = {_toml_strings(entry.integral_strs)}",
        f"constants = [{', '.join(_fmt(v) for v in entry.integrals.constants)}]",
        f"jacobian = [{', '.join(_toml_strings(row) for row in entry.jacobian_strs)}]",
        "",
        "[sim]",
        "step = 0.001",
        "t_end = 5.0",
        "",
        "[analysis]",
        "conservation_tol = 1e-8",
        "",
        "[approx]",
        'kind = "frozen"',
        "t0 = 1.0",
        "horizon = 1.0",
        "",
        "[sweep]",
        'kind = "retarded"',
        "t0 = [1.0, 1.5]",
        "delta_t = 0.1",
        "horizon = 1.0",
        "",
    ]
    return "\n".join(lines)

"""Configuration file loading.

A single TOML file drives every command, with top-level sections ``game``,
``controls``, ``lacing``, ``sim``, ``analysis``, ``approx`` and ``sweep``.
Unknown keys are errors (they are almost always typos that would silently
change a numeric experiment), and every error names the offending key path.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from . import dsl
from .catalog import CATALOG_NAMES, CatalogEntry, build_catalog_game
from .core import ControlSchedule, GameDefinition, Trajectory
from .errors import ConfigError
from .lacing import LacingIntegralSet, measure_constants

__all__ = ["RunConfig", "AnalysisSettings", "ApproxSettings", "SweepSettings", "load_config"]

_SECTIONS = {
    "game": {"catalog", "params", "m", "n", "phi0", "dynamics", "feedback_u1", "feedback_u2"},
    "controls": {"u1o", "u2o"},
    "lacing": {"integrals", "constants", "jacobian"},
    "sim": {"step", "t_end"},
    "analysis": {
        "conservation_tol",
        "fd_eps",
        "derivative_source",
        "base_phi",
        "base_dphi",
        "radii",
        "sphere_grid",
        "rank_sample",
    },
    "approx": {"kind", "t0", "delta_t", "horizon", "step"},
    "sweep": {"kind", "t0", "delta_t", "horizon", "step"},
}

_VAR_BOUNDS_BY_DIM = {"phi": "m", "dphi": "m", "u1": "n", "u2": "n", "u1o": "n", "u2o": "n", "k": "2n"}


def _check_keys(table: dict, allowed: set[str], path: str) -> None:
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key {path}.{key}")


def _require(table: dict, key: str, path: str):
    if key not in table:
        raise ConfigError(f"missing required key {path}.{key}")
    return table[key]


def _as_float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path} must be a number, got {value!r}")
    return float(value)


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path} must be an integer, got {value!r}")
    return value


def _as_str_list(value, path: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"{path} must be an array of strings")
    return value


def _as_float_list(value, path: str) -> list[float]:
    if not isinstance(value, list):
        raise ConfigError(f"{path} must be an array of numbers")
    return [_as_float(v, f"{path}[{i}]") for i, v in enumerate(value)]


def _parse_exprs(texts: list[str], path: str) -> list[dsl.Expr]:
    out = []
    for i, text in enumerate(texts):
        try:
            out.append(dsl.parse_expr(text))
        except ConfigError as exc:
            raise ConfigError(f"{path}[{i}]: {exc}") from exc
    return out


def _check_vars(exprs: list[dsl.Expr], allowed: set[str], m: int, n: int, path: str) -> None:
    limits = {"m": m, "n": n, "2n": 2 * n}
    for i, e in enumerate(exprs):
        extra = dsl.referenced_names(e) - allowed
        if extra:
            raise ConfigError(
                f"{path}[{i}] references {sorted(extra)}; allowed here: {sorted(allowed)}"
            )
        for name, top in dsl.max_indices(e).items():
            limit = limits[_VAR_BOUNDS_BY_DIM[name]]
            if top >= limit:
                raise ConfigError(
                    f"{path}[{i}]: index {name}[{top}] out of bounds "
                    f"(length {limit} for this game)"
                )


@dataclass
class AnalysisSettings:
    conservation_tol: float = 1e-8
    fd_eps: float = 1e-6
    derivative_source: str = "recorded"
    base_phi: np.ndarray | None = None
    base_dphi: np.ndarray | None = None
    radii: tuple[float, ...] = ()
    sphere_grid: int = 16
    rank_sample: int = 0


@dataclass
class ApproxSettings:
    kind: str
    t0: float
    horizon: float
    delta_t: float = 0.0
    step: float | None = None


@dataclass
class SweepSettings:
    kind: str
    t0_values: tuple[float, ...]
    horizon: float
    delta_t: float = 0.0
    step: float | None = None


@dataclass
class RunConfig:
    game: GameDefinition
    schedule: ControlSchedule
    entry: CatalogEntry | None = None
    integrals: LacingIntegralSet | None = None
    constants_mode: str = "fixed"  # or "measure_at_start"
    sim_step: float | None = None
    sim_t_end: float | None = None
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    approx: ApproxSettings | None = None
    sweep: SweepSettings | None = None

    def require_integrals(self) -> LacingIntegralSet:
        if self.integrals is None:
            raise ConfigError("missing required section lacing (no catalog defaults apply)")
        return self.integrals

    def integrals_for(self, traj: Trajectory) -> LacingIntegralSet:
        """The configured integral set, with constants measured from the
        trajectory's first sample when so configured."""
        iset = self.require_integrals()
        if self.constants_mode == "fixed":
            return iset
        constants = measure_constants(iset.integrals, traj)
        return LacingIntegralSet(iset.integrals, constants, iset.jacobian)

    def require_sim(self) -> tuple[float, float]:
        if self.sim_step is None:
            raise ConfigError("missing required key sim.step")
        if self.sim_t_end is None:
            raise ConfigError("missing required key sim.t_end")
        return self.sim_step, self.sim_t_end

    def base_point(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.game.m
        phi = self.analysis.base_phi if self.analysis.base_phi is not None else np.zeros(m)
        dphi = self.analysis.base_dphi if self.analysis.base_dphi is not None else np.zeros(m)
        return phi, dphi


def _build_explicit_game(game_cfg: dict) -> tuple[GameDefinition, int, int]:
    m = _as_int(_require(game_cfg, "m", "game"), "game.m")
    n = _as_int(_require(game_cfg, "n", "game"), "game.n")
    if m < 1 or n < 1:
        raise ConfigError(f"game dimensions must be positive, got m={m} n={n}")
    phi0 = np.array(_as_float_list(_require(game_cfg, "phi0", "game"), "game.phi0"))
    if len(phi0) != m:
        raise ConfigError(f"game.phi0 must have length m={m}, got {len(phi0)}")
    dyn_strs = _as_str_list(_require(game_cfg, "dynamics", "game"), "game.dynamics")
    if len(dyn_strs) != m:
        raise ConfigError(f"game.dynamics needs {m} expressions, got {len(dyn_strs)}")
    dyn_exprs = _parse_exprs(dyn_strs, "game.dynamics")
    _check_vars(dyn_exprs, {"phi", "u1", "u2"}, m, n, "game.dynamics")

    has_f1 = "feedback_u1" in game_cfg
    has_f2 = "feedback_u2" in game_cfg
    if has_f1 != has_f2:
        raise ConfigError("game.feedback_u1 and game.feedback_u2 must be given together")
    hidden = None
    uses_dphi = False
    if has_f1:
        fb_exprs = []
        for key in ("feedback_u1", "feedback_u2"):
            strs = _as_str_list(game_cfg[key], f"game.{key}")
            if len(strs) != n:
                raise ConfigError(f"game.{key} needs {n} expressions, got {len(strs)}")
            exprs = _parse_exprs(strs, f"game.{key}")
            _check_vars(exprs, {"u1o", "u2o", "phi", "dphi"}, m, n, f"game.{key}")
            fb_exprs.append(exprs)
        uses_dphi = any(
            "dphi" in dsl.referenced_names(e) for exprs in fb_exprs for e in exprs
        )
        from .catalog import _feedback_callable  # same calling convention

        hidden = (_feedback_callable(fb_exprs[0]), _feedback_callable(fb_exprs[1]))

    from .catalog import _dynamics_callable

    game = GameDefinition(
        m=m,
        n=n,
        dynamics=_dynamics_callable(dyn_exprs),
        phi0=phi0,
        hidden_feedback=hidden,
        feedback_uses_dphi=uses_dphi,
        dynamics_exprs=tuple(dyn_exprs),
    )
    return game, m, n


def load_config(path) -> RunConfig:
    """Parse and validate a configuration file into runtime objects."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    _check_keys(raw, set(_SECTIONS), "config")
    game_cfg = _require(raw, "game", "config")
    _check_keys(game_cfg, _SECTIONS["game"], "game")

    entry = None
    if "catalog" in game_cfg:
        overlap = set(game_cfg) & {"m", "n", "phi0", "dynamics", "feedback_u1", "feedback_u2"}
        if overlap:
            raise ConfigError(
                f"game.catalog excludes explicit game keys: {sorted(overlap)}"
            )
        name = game_cfg["catalog"]
        if not isinstance(name, str) or name not in CATALOG_NAMES:
            raise ConfigError(
                f"game.catalog must be one of {CATALOG_NAMES}, got {name!r}"
            )
        entry = build_catalog_game(name, game_cfg.get("params"))
        game = entry.game
        m, n = game.m, game.n
    else:
        if "params" in game_cfg:
            raise ConfigError("game.params requires game.catalog")
        game, m, n = _build_explicit_game(game_cfg)

    # controls: explicit schedule overrides the catalog default
    if "controls" in raw:
        controls = raw["controls"]
        _check_keys(controls, _SECTIONS["controls"], "controls")
        u1o = _as_str_list(_require(controls, "u1o", "controls"), "controls.u1o")
        u2o = _as_str_list(_require(controls, "u2o", "controls"), "controls.u2o")
        if len(u1o) != n or len(u2o) != n:
            raise ConfigError(f"controls.u1o and controls.u2o each need {n} expressions")
        exprs = _parse_exprs(u1o + u2o, "controls")
        _check_vars(exprs, {"t"}, m, n, "controls")
        schedule = ControlSchedule(tuple(exprs))
    elif entry is not None:
        schedule = entry.schedule
    else:
        raise ConfigError("missing required section controls (no catalog defaults apply)")

    # lacing: explicit integrals override the catalog canonical set
    integrals = None
    constants_mode = "fixed"
    if "lacing" in raw:
        lacing_cfg = raw["lacing"]
        _check_keys(lacing_cfg, _SECTIONS["lacing"], "lacing")
        strs = _as_str_list(_require(lacing_cfg, "integrals", "lacing"), "lacing.integrals")
        if len(strs) != 2 * n:
            raise ConfigError(f"lacing.integrals needs 2n={2 * n} expressions, got {len(strs)}")
        exprs = _parse_exprs(strs, "lacing.integrals")
        _check_vars(exprs, {"u1", "u2", "u1o", "u2o", "phi", "dphi", "k"}, m, n, "lacing.integrals")
        constants = np.zeros(2 * n)
        if "constants" in lacing_cfg:
            value = lacing_cfg["constants"]
            if value == "measure_at_start":
                constants_mode = "measure_at_start"
            else:
                consts = _as_float_list(value, "lacing.constants")
                if len(consts) != 2 * n:
                    raise ConfigError(
                        f"lacing.constants needs 2n={2 * n} values, got {len(consts)}"
                    )
                constants = np.array(consts)
        jacobian = None
        if "jacobian" in lacing_cfg:
            rows = lacing_cfg["jacobian"]
            if not isinstance(rows, list) or len(rows) != 2 * n:
                raise ConfigError(f"lacing.jacobian must be a {2 * n}x{2 * n} array of strings")
            jac_exprs = []
            for i, row in enumerate(rows):
                row_strs = _as_str_list(row, f"lacing.jacobian[{i}]")
                if len(row_strs) != 2 * n:
                    raise ConfigError(
                        f"lacing.jacobian[{i}] needs {2 * n} expressions, got {len(row_strs)}"
                    )
                row_exprs = _parse_exprs(row_strs, f"lacing.jacobian[{i}]")
                _check_vars(
                    row_exprs,
                    {"u1", "u2", "u1o", "u2o", "phi", "dphi", "k"},
                    m,
                    n,
                    f"lacing.jacobian[{i}]",
                )
                jac_exprs.append(tuple(row_exprs))
            jacobian = tuple(jac_exprs)
        integrals = LacingIntegralSet(tuple(exprs), constants, jacobian)
    elif entry is not None:
        integrals = entry.integrals

    sim_step = sim_t_end = None
    if "sim" in raw:
        sim_cfg = raw["sim"]
        _check_keys(sim_cfg, _SECTIONS["sim"], "sim")
        if "step" in sim_cfg:
            sim_step = _as_float(sim_cfg["step"], "sim.step")
            if sim_step <= 0:
                raise ConfigError(f"sim.step must be positive, got {sim_step!r}")
        if "t_end" in sim_cfg:
            sim_t_end = _as_float(sim_cfg["t_end"], "sim.t_end")

    analysis = AnalysisSettings()
    if "analysis" in raw:
        a = raw["analysis"]
        _check_keys(a, _SECTIONS["analysis"], "analysis")
        if "conservation_tol" in a:
            analysis.conservation_tol = _as_float(a["conservation_tol"], "analysis.conservation_tol")
        if "fd_eps" in a:
            analysis.fd_eps = _as_float(a["fd_eps"], "analysis.fd_eps")
            if analysis.fd_eps <= 0:
                raise ConfigError("analysis.fd_eps must be positive")
        if "derivative_source" in a:
            source = a["derivative_source"]
            if source not in ("recorded", "estimated"):
                raise ConfigError(
                    f"analysis.derivative_source must be 'recorded' or 'estimated', got {source!r}"
                )
            analysis.derivative_source = source
        if "base_phi" in a:
            vec = np.array(_as_float_list(a["base_phi"], "analysis.base_phi"))
            if len(vec) != m:
                raise ConfigError(f"analysis.base_phi must have length m={m}")
            analysis.base_phi = vec
        if "base_dphi" in a:
            vec = np.array(_as_float_list(a["base_dphi"], "analysis.base_dphi"))
            if len(vec) != m:
                raise ConfigError(f"analysis.base_dphi must have length m={m}")
            analysis.base_dphi = vec
        if "radii" in a:
            analysis.radii = tuple(_as_float_list(a["radii"], "analysis.radii"))
        if "sphere_grid" in a:
            analysis.sphere_grid = _as_int(a["sphere_grid"], "analysis.sphere_grid")
        if "rank_sample" in a:
            analysis.rank_sample = _as_int(a["rank_sample"], "analysis.rank_sample")

    approx = None
    if "approx" in raw:
        ap = raw["approx"]
        _check_keys(ap, _SECTIONS["approx"], "approx")
        kind = _require(ap, "kind", "approx")
        if kind not in ("frozen", "retarded"):
            raise ConfigError(f"approx.kind must be 'frozen' or 'retarded', got {kind!r}")
        approx = ApproxSettings(
            kind=kind,
            t0=_as_float(_require(ap, "t0", "approx"), "approx.t0"),
            horizon=_as_float(_require(ap, "horizon", "approx"), "approx.horizon"),
            delta_t=_as_float(ap.get("delta_t", 0.0), "approx.delta_t"),
            step=_as_float(ap["step"], "approx.step") if "step" in ap else None,
        )

    sweep = None
    if "sweep" in raw:
        sw = raw["sweep"]
        _check_keys(sw, _SECTIONS["sweep"], "sweep")
        kind = _require(sw, "kind", "sweep")
        if kind not in ("frozen", "retarded"):
            raise ConfigError(f"sweep.kind must be 'frozen' or 'retarded', got {kind!r}")
        sweep = SweepSettings(
            kind=kind,
            t0_values=tuple(_as_float_list(_require(sw, "t0", "sweep"), "sweep.t0")),
            horizon=_as_float(_require(sw, "horizon", "sweep"), "sweep.horizon"),
            delta_t=_as_float(sw.get("delta_t", 0.0), "sweep.delta_t"),
            step=_as_float(sw["step"], "sweep.step") if "step" in sw else None,
        )

    return RunConfig(
        game=game,
        schedule=schedule,
        entry=entry,
        integrals=integrals,
        constants_mode=constants_mode,
        sim_step=sim_step,
        sim_t_end=sim_t_end,
        analysis=analysis,
        approx=approx,
        sweep=sweep,
    )

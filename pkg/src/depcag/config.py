"""Strict TOML run configuration.

Unknown sections or keys are errors: a misspelled tolerance that silently
falls back to its default would corrupt an experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli

from .criteria import CriteriaOptions
from .expr import ExpressionError, parse
from .model import InitialCondition, ModelError, ProblemSpec, TailHint
from .pca import Custom, ScheduleError, Uniform
from .solver import SolverOptions

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "SCHEMA"]


class ConfigError(ValueError):
    pass


_num = (int, float)

SCHEMA: dict[str, dict[str, tuple]] = {
    "problem": {"r": (str,), "f": (str,), "p": (str,), "phi": (str,), "tau": _num,
                "linear_kappa": _num, "label": (str,)},
    "schedule": {"kind": (str,), "m": _num, "alpha": _num, "node_rule": (str,),
                 "switch_fraction": (str,), "index_origin": (int,)},
    "initial": {"x0": _num, "v0": _num},
    "simulation": {"horizon": _num, "dense_per_interval": (int,), "quad_tol": _num,
                   "fp_tol": _num, "max_iter": (int,), "blowup_bound": _num},
    "criteria": {"theorem": (int,), "epsilon": _num, "n_max": (int,), "delta": _num,
                 "i_max": (int,), "divergence_threshold": _num},
    "hints": {"r_inv": (str,), "p": (str,), "phi_inv": (str,), "series": (str,)},
    "output": {"dir": (str,), "trajectory": (str,), "nodes": (str,), "verdict": (str,)},
}


@dataclass
class RunConfig:
    sections: dict[str, dict[str, Any]] = field(default_factory=dict)
    source: str = "<memory>"

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def require(self, section: str, key: str):
        value = self.get(section, key)
        if value is None:
            raise ConfigError(f"{self.source}: missing required key {section}.{key}")
        return value

    # --- builders -------------------------------------------------------------

    def schedule(self):
        kind = self.get("schedule", "kind", "uniform")
        origin = self.get("schedule", "index_origin", 0)
        try:
            if kind == "uniform":
                return Uniform(float(self.get("schedule", "m", 1.0)),
                               float(self.get("schedule", "alpha", 0.0)), origin)
            if kind == "custom":
                return Custom(parse(self.require("schedule", "node_rule")),
                              parse(self.require("schedule", "switch_fraction")), origin)
        except (ScheduleError, ExpressionError) as exc:
            raise ConfigError(f"{self.source}: schedule: {exc}") from exc
        raise ConfigError(f"{self.source}: schedule.kind must be 'uniform' or 'custom', got {kind!r}")

    def hints(self) -> dict[str, TailHint]:
        out = {}
        for key, text in self.sections.get("hints", {}).items():
            try:
                out[key] = TailHint.parse(text)
            except ValueError as exc:
                raise ConfigError(f"{self.source}: hints.{key}: {exc}") from exc
        return out

    def problem(self) -> ProblemSpec:
        exprs = {}
        for key in ("r", "f", "p", "phi"):
            text = self.require("problem", key)
            try:
                exprs[key] = parse(text)
            except ExpressionError as exc:
                raise ConfigError(f"{self.source}: problem.{key}: {exc}") from exc
        kappa = self.get("problem", "linear_kappa")
        try:
            return ProblemSpec(
                tau=float(self.require("problem", "tau")),
                schedule=self.schedule(),
                linear_kappa=None if kappa is None else float(kappa),
                label=self.get("problem", "label", Path(self.source).stem),
                hints=self.hints(),
                **exprs,
            )
        except (ModelError, ScheduleError) as exc:
            raise ConfigError(f"{self.source}: {exc}") from exc

    def initial(self) -> InitialCondition:
        return InitialCondition(float(self.require("initial", "x0")),
                                float(self.require("initial", "v0")))

    def solver_options(self, **overrides) -> SolverOptions:
        values = {k: v for k, v in self.sections.get("simulation", {}).items() if k != "horizon"}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return SolverOptions(**values)

    def criteria_options(self, **overrides) -> CriteriaOptions:
        keep = {"delta", "i_max", "divergence_threshold"}
        values = {k: v for k, v in self.sections.get("criteria", {}).items() if k in keep}
        values.update({k: v for k, v in overrides.items() if v is not None})
        quad = self.get("simulation", "quad_tol")
        if quad is not None and "quad_tol" not in values:
            values["quad_tol"] = quad
        return CriteriaOptions(**values)


def parse_config(data: dict, source: str = "<memory>") -> RunConfig:
    sections: dict[str, dict[str, Any]] = {}
    for name, body in data.items():
        if name not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{name}]")
        if not isinstance(body, dict):
            raise ConfigError(f"{source}: [{name}] must be a table")
        allowed = SCHEMA[name]
        for key, value in body.items():
            if key not in allowed:
                raise ConfigError(f"{source}: unknown key {name}.{key}")
            types = allowed[key]
            if isinstance(value, bool) or not isinstance(value, types):
                want = " or ".join(t.__name__ for t in types)
                raise ConfigError(f"{source}: {name}.{key} must be {want}, got {value!r}")
        sections[name] = dict(body)
    return RunConfig(sections, source)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, str(path))


def builtin_config(name: str, spec: ProblemSpec, ic: InitialCondition) -> RunConfig:
    """A RunConfig equivalent to a builtin instance (used by ``--builtin``)."""
    sched = spec.schedule
    sections: dict[str, dict[str, Any]] = {
        "problem": {"r": spec.r.source, "f": spec.f.source, "p": spec.p.source,
                    "phi": spec.phi.source, "tau": spec.tau, "label": spec.label},
        "schedule": {"kind": "uniform", "m": sched.m, "alpha": sched.alpha,
                     "index_origin": sched.index_origin},
        "initial": {"x0": ic.x0, "v0": ic.v0},
        "hints": {k: str(v) for k, v in spec.hints.items()},
    }
    if spec.linear_kappa is not None:
        sections["problem"]["linear_kappa"] = spec.linear_kappa
    return RunConfig(sections, f"builtin:{name}")

"""Run configuration: YAML documents validated into typed objects.

A configuration is a single YAML mapping.  Matrices are row-major nested
lists.  Actuator modes are written as strings: ``healthy``, ``outage``,
``loe:<effectiveness>``, ``stuck:<value>`` or ``stuck`` (frozen at the
command applied when the fault occurs).  ``t_r: null`` means the fault is
never reconfigured.

Validation errors carry ``(location, message)`` diagnostics where the
location includes the line number of the offending entry when it can be
traced back to the source text.
"""

from __future__ import annotations

import copy
import math
from typing import Any, Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .network import Topology, build_topology
from .plant import (
    HEALTHY,
    LOE,
    OUTAGE,
    STUCK,
    ActuatorMode,
    AgentModel,
    DisturbanceSpec,
    FaultSpec,
    LeaderSpec,
    auv_preset,
)

SCHEMA_VERSION = 1


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PlantConfig(_Model):
    preset: str | None = "sentry"
    A: list[list[float]] | None = None
    B: list[list[float]] | None = None
    C: list[list[float]] | None = None
    B_w: list[list[float]] | None = None

    @model_validator(mode="after")
    def _one_source(self):
        explicit = [self.A, self.B, self.C, self.B_w]
        if any(m is not None for m in explicit):
            if any(m is None for m in explicit):
                raise ValueError("explicit plants need all of A, B, C and B_w")
            self.preset = None
        elif self.preset is None:
            raise ValueError("give a preset name or explicit matrices")
        return self


class LeaderConfig(_Model):
    times: list[float] = [0.0, 40.0, 80.0]
    speeds: list[float] = [0.5, 1.0, 0.8]
    x0: list[float] | None = None
    K0: list[list[float]] | None = None
    F0: list[list[float]] | None = None

    @model_validator(mode="after")
    def _schedule(self):
        if len(self.times) != len(self.speeds) or not self.times:
            raise ValueError("times and speeds must be nonempty and of equal length")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")
        return self


class TopologyConfig(_Model):
    n_followers: int = Field(5, ge=1)
    edges: list[tuple[int, int]] = [(0, 1), (0, 2), (1, 3), (1, 4)]
    pins: list[int] = [0]


class DesignConfig(_Model):
    gamma: float = Field(3.0, gt=0)
    c2_scale: float = Field(6e5, gt=0)
    safety: float = Field(1.1, gt=1)
    u0M: float | None = Field(None, gt=0)
    u0M_margin: float = Field(1.05, ge=1)
    phi: float = Field(2e-4, gt=0)
    pole_radius: float | None = Field(50.0, gt=0)
    feas_tol: float = Field(1e-7, gt=0)
    max_iter: int = Field(3000, ge=1)


class InitialConfig(_Model):
    std: float = Field(0.1, ge=0)
    x: list[list[float]] | None = None
    xa: list[list[float]] | Literal["same"] = "same"


class DisturbanceConfig(_Model):
    kind: Literal["zero", "gauss_markov", "random_walk", "deterministic"] = "zero"
    mu: float = Field(0.0, ge=0)
    sigma: float = Field(0.0, ge=0)
    v0: float = 0.0
    seed: int | None = None
    terms: list[tuple[float, float, float, float]] = []


class DisturbancesConfig(_Model):
    default: DisturbanceConfig = DisturbanceConfig()
    leader: DisturbanceConfig | None = None
    agents: dict[int, DisturbanceConfig] = {}


def parse_mode(text: str) -> ActuatorMode:
    """``healthy | outage | loe:<g> | stuck[:<value>]`` to an ``ActuatorMode``."""
    kind, _, val = str(text).strip().partition(":")
    kind = kind.strip().lower()
    if kind in (HEALTHY, OUTAGE):
        if val:
            raise ValueError(f"mode {kind!r} takes no value")
        return ActuatorMode(kind)
    if kind == LOE:
        return ActuatorMode(LOE, float(val))
    if kind == STUCK:
        return ActuatorMode(STUCK, float(val) if val.strip() else None)
    raise ValueError(f"unknown actuator mode {text!r}")


def format_mode(md: ActuatorMode) -> str:
    if md.kind in (HEALTHY, OUTAGE) or md.value is None:
        return md.kind
    return f"{md.kind}:{md.value!r}"


class FaultConfig(_Model):
    agent: int = Field(ge=0)
    t_f: float = Field(ge=0)
    t_r: float | None = None
    modes: list[str]
    estimated: list[str] | None = None

    @field_validator("modes", "estimated")
    @classmethod
    def _modes(cls, v):
        if v is None:
            return v
        return [format_mode(parse_mode(s)) for s in v]

    @model_validator(mode="after")
    def _times(self):
        if self.t_r is not None and self.t_r < self.t_f:
            raise ValueError("t_r must not precede t_f")
        if self.estimated is not None and len(self.estimated) != len(self.modes):
            raise ValueError("estimated must list every actuator")
        return self

    def spec(self) -> FaultSpec:
        return FaultSpec(
            agent=self.agent, t_f=self.t_f,
            t_r=math.inf if self.t_r is None else self.t_r,
            modes=tuple(parse_mode(s) for s in self.modes),
            estimated=None if self.estimated is None else tuple(parse_mode(s) for s in self.estimated),
        )


class RobustnessConfig(_Model):
    x_M: float | None = Field(None, gt=0)
    weights: list[float] | None = None
    norm: Literal["sigma_max", "sigma_min"] = "sigma_max"


class SimConfig(_Model):
    h: float = Field(2.5e-4, gt=0)
    horizon: float = Field(120.0, gt=0)
    overflow_guard: float = Field(1e9, gt=0)
    csv_stride: int = Field(40, ge=1)
    settle: float = Field(10.0, ge=0)
    window: float = Field(0.1, gt=0, le=1)


class SweepConfig(_Model):
    key: str
    values: list[Any]


class RunConfig(_Model):
    version: int = SCHEMA_VERSION
    name: str = "run"
    seed: int = 0
    plant: PlantConfig = PlantConfig()
    leader: LeaderConfig = LeaderConfig()
    topology: TopologyConfig = TopologyConfig()
    design: DesignConfig = DesignConfig()
    initial: InitialConfig = InitialConfig()
    disturbances: DisturbancesConfig = DisturbancesConfig()
    faults: list[FaultConfig] = []
    robustness: RobustnessConfig = RobustnessConfig()
    sim: SimConfig = SimConfig()
    sweep: SweepConfig | None = None

    @field_validator("version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported config version {v}; expected {SCHEMA_VERSION}")
        return v

    @model_validator(mode="after")
    def _agents_exist(self):
        N = self.topology.n_followers
        for j, i in self.topology.edges:
            if not (0 <= i < N and 0 <= j < N):
                raise ValueError(f"edge ({j}, {i}) references a follower outside 0..{N - 1}")
        for p in self.topology.pins:
            if not 0 <= p < N:
                raise ValueError(f"pin {p} outside 0..{N - 1}")
        seen = set()
        for f in self.faults:
            if f.agent >= N:
                raise ValueError(f"fault on agent {f.agent}, but only {N} followers")
            if f.agent in seen:
                raise ValueError(f"agent {f.agent} has more than one fault entry")
            seen.add(f.agent)
        for a in self.disturbances.agents:
            if not 0 <= a < N:
                raise ValueError(f"disturbance for agent {a} outside 0..{N - 1}")
        if self.initial.x is not None and len(self.initial.x) != N:
            raise ValueError("initial.x needs one row per follower")
        return self

    # -- builders ---------------------------------------------------------

    def model_and_leader(self) -> tuple:
        if self.plant.preset is not None:
            model, leader = auv_preset(self.plant.preset)
        else:
            p = self.plant
            model = AgentModel(np.array(p.A), np.array(p.B), np.array(p.C), np.array(p.B_w))
            if self.leader.K0 is None or self.leader.F0 is None:
                raise ConfigError("explicit plants need leader.K0 and leader.F0",
                                  [("leader", "K0 and F0 required")])
            leader = LeaderSpec(K0=np.zeros((model.m, model.n)), F0=np.zeros((model.m, model.n)))
        K0 = leader.K0 if self.leader.K0 is None else np.array(self.leader.K0)
        F0 = leader.F0 if self.leader.F0 is None else np.array(self.leader.F0)
        leader = LeaderSpec(K0=K0, F0=F0, times=tuple(self.leader.times), speeds=tuple(self.leader.speeds))
        return model, leader

    def build_topology(self) -> Topology:
        return build_topology(self.topology.edges, self.topology.pins, self.topology.n_followers)

    def fault_specs(self) -> list:
        return [f.spec() for f in self.faults]

    def initial_states(self, n: int) -> tuple:
        N = self.topology.n_followers
        x0 = np.zeros(n) if self.leader.x0 is None else np.array(self.leader.x0, dtype=float)
        if self.initial.x is not None:
            x = np.array(self.initial.x, dtype=float)
        else:
            x = np.random.default_rng(self.seed).normal(0.0, self.initial.std, (N, n))
        xa = x.copy() if self.initial.xa == "same" else np.array(self.initial.xa, dtype=float)
        return x0, x, xa

    def disturbance_specs(self, p: int) -> list:
        """Leader first, then one spec per follower; unset seeds derive from ``seed``."""
        d = self.disturbances
        out = []
        for k in range(self.topology.n_followers + 1):
            c = d.leader if k == 0 and d.leader is not None else d.agents.get(k - 1, d.default)
            seed = c.seed if c.seed is not None else self.seed * 1000 + 100 + k
            out.append(DisturbanceSpec(kind=c.kind, mu=c.mu, sigma=c.sigma, v0=c.v0, seed=seed,
                                       terms=tuple(tuple(t) for t in c.terms), dim=p))
        return out


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _line_index(text: str) -> dict:
    """Map key paths (tuples) to 1-based line numbers in the YAML source."""
    lines = {}

    def walk(node, path):
        lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = k.value
                try:
                    key = int(key)
                except (TypeError, ValueError):
                    pass
                lines[path + (key,)] = k.start_mark.line + 1
                walk(v, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return lines
    if root is not None:
        walk(root, ())
    return lines


def _locate(loc: tuple, lines: dict) -> str:
    path = tuple(p for p in loc if not (isinstance(p, str) and p in ("function-after", "list", "tuple")))
    dotted = ".".join(str(p) for p in path) or "<root>"
    for k in range(len(path), -1, -1):
        if path[:k] in lines:
            return f"line {lines[path[:k]]}: {dotted}"
    return dotted


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``key.path=value`` strings; values are parsed as YAML scalars or lists."""
    raw = copy.deepcopy(raw) if raw is not None else {}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", [(item, "expected key=value")])
        key, val = item.split("=", 1)
        parts = [int(p) if p.lstrip("-").isdigit() else p for p in key.strip().split(".")]
        node = raw
        for a, b in zip(parts[:-1], parts[1:]):
            if isinstance(node, list):
                node = node[a]
                continue
            if a not in node or node[a] is None:
                node[a] = [] if isinstance(b, int) else {}
            node = node[a]
        last = parts[-1]
        value = yaml.safe_load(val)
        if isinstance(node, list):
            if last == len(node):
                node.append(value)
            else:
                node[last] = value
        else:
            node[last] = value
    return raw


def load_config(text: str, overrides=(), seed: int | None = None) -> RunConfig:
    """Parse and validate a configuration document.

    Raises
    ------
    ConfigError
        With ``diagnostics`` as ``(location, message)`` pairs.
    """
    try:
        raw = yaml.safe_load(text) if text.strip() else {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "<document>"
        raise ConfigError(f"YAML syntax error at {where}", [(where, str(exc))]) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping", [("<root>", "expected a mapping")])
    raw = apply_overrides(raw, overrides)
    if seed is not None:
        raw["seed"] = seed
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        lines = _line_index(text)
        diags = [(_locate(tuple(e["loc"]), lines), e["msg"]) for e in exc.errors()]
        summary = "; ".join(f"{w}: {m}" for w, m in diags)
        raise ConfigError(f"invalid configuration: {summary}", diags) from None


def load_config_file(path, overrides=(), seed: int | None = None) -> RunConfig:
    with open(path) as fh:
        return load_config(fh.read(), overrides, seed)


def normalized(cfg: RunConfig) -> dict:
    """Plain-data form with every default filled in."""
    return cfg.model_dump(mode="json")


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(normalized(cfg), sort_keys=False, default_flow_style=None)

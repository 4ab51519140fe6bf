"""Scenario configuration: one JSON document describing a whole experiment.

Everything a run needs lives here: agent population and per-agent
overrides, topology, market bounds, clearing mechanism, fee/reward/
reputation parameters, tariffs, and episode length. Validation errors
carry the JSON field path that caused them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields as dataclass_fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .cooperation import DEFAULT_KPI_WINDOW, RewardConfig
from .ledger import DEFAULT_DIFFICULTY, MAX_DIFFICULTY
from .market import MECHANISMS, FeeConfig, MarketBounds
from .profiles import ProfileConfig
from .reputation import ReputationConfig


class ConfigError(ValueError):
    """Invalid scenario configuration, annotated with the offending field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"config error at {path}: {message}")


@dataclass(frozen=True)
class TopologyConfig:
    kind: str = "mesh"
    total_capacity: float = 1200.0
    loss_factor: float = 0.01
    n_zones: int = 1
    dso_node: int = 0


@dataclass(frozen=True)
class PriceConfig:
    fit_base: float = 50.0
    utility_base: float = 250.0
    peak_multiplier: float = 1.0
    peak_halfwidth: int = 2


@dataclass(frozen=True)
class PartnerConfig:
    rule_based: bool = False
    w_reputation: float = 0.7
    w_distance: float = 0.3


@dataclass(frozen=True)
class BatteryConfig:
    """Per-agent battery sizing: capacity = ratio * agent nominal capacity
    unless an absolute capacity is given."""

    ratio: float | None = None
    capacity: float | None = None
    soc_min: float = 0.1
    soc_max: float = 0.9
    eta_charge: float = 0.95
    eta_discharge: float = 0.95
    initial_soc: float | None = None  # None -> midpoint of [soc_min, soc_max]
    max_rate: float | None = None

    def capacity_for(self, nominal_capacity: float) -> float:
        if self.capacity is not None:
            return self.capacity
        return (self.ratio if self.ratio is not None else 1.0) * nominal_capacity

    def start_soc(self) -> float:
        if self.initial_soc is not None:
            return self.initial_soc
        return (self.soc_min + self.soc_max) / 2.0


@dataclass
class AgentOverrides:
    """Sparse per-agent deviations from the profile defaults."""

    battery: BatteryConfig | None = None
    node: int | None = None
    profile_fields: dict[str, Any] = field(default_factory=dict)


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    description: str = ""
    n_agents: int = 7
    periods: int = 24
    seed: int = 0
    mechanism: str = "average"
    market: MarketBounds = field(default_factory=MarketBounds)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    fees: FeeConfig = field(default_factory=FeeConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    reputation: ReputationConfig = field(default_factory=ReputationConfig)
    prices: PriceConfig = field(default_factory=PriceConfig)
    partner: PartnerConfig = field(default_factory=PartnerConfig)
    profile_defaults: dict[str, Any] = field(default_factory=dict)
    agents: list[AgentOverrides] = field(default_factory=list)
    ledger_difficulty: int = DEFAULT_DIFFICULTY
    kpi_window: int = DEFAULT_KPI_WINDOW

    def profile_for(self, agent_id: int) -> ProfileConfig:
        """Materialize one agent's profile config (defaults + overrides)."""
        merged: dict[str, Any] = dict(self.profile_defaults)
        if agent_id < len(self.agents):
            merged.update(self.agents[agent_id].profile_fields)
        merged["period_count"] = self.periods
        merged["seed"] = agent_profile_seed(self.seed, agent_id)
        return ProfileConfig(**merged)

    def battery_for(self, agent_id: int) -> BatteryConfig | None:
        if agent_id < len(self.agents):
            return self.agents[agent_id].battery
        return None

    def node_for(self, agent_id: int) -> int | None:
        if agent_id < len(self.agents):
            return self.agents[agent_id].node
        return None

    def with_seed(self, seed: int) -> "ScenarioConfig":
        from dataclasses import replace

        return replace(self, seed=seed)


def agent_profile_seed(scenario_seed: int, agent_id: int) -> int:
    """Stable per-agent profile seed derived from the scenario seed."""
    return int(np.random.SeedSequence([scenario_seed, 0, agent_id]).generate_state(1, np.uint64)[0])


def policy_rng(scenario_seed: int, agent_id: int) -> np.random.Generator:
    """Per-agent policy stream, independent of the profile streams."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([scenario_seed, 1, agent_id])))


_PROFILE_FIELDS = {
    f.name: f.type for f in dataclass_fields(ProfileConfig) if f.name not in ("period_count", "seed")
}


def _require(mapping: Mapping[str, Any], allowed: set[str], path: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown field")


def _typed(raw: Any, kind: type, path: str) -> Any:
    if kind is float:
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(path, f"expected a number, got {type(raw).__name__}")
        return float(raw)
    if kind is int:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(path, f"expected an integer, got {type(raw).__name__}")
        return raw
    if kind is bool:
        if not isinstance(raw, bool):
            raise ConfigError(path, f"expected a boolean, got {type(raw).__name__}")
        return raw
    if kind is str:
        if not isinstance(raw, str):
            raise ConfigError(path, f"expected a string, got {type(raw).__name__}")
        return raw
    raise ConfigError(path, f"unsupported field type {kind}")


def _build_dataclass(cls: type, raw: Mapping[str, Any], path: str, numeric_as_float: bool = True):
    if not isinstance(raw, Mapping):
        raise ConfigError(path, "expected an object")
    spec = {f.name: f for f in dataclass_fields(cls)}
    _require(raw, set(spec), path)
    kwargs: dict[str, Any] = {}
    for name, value in raw.items():
        field_path = f"{path}.{name}"
        if value is None:
            kwargs[name] = None
            continue
        if isinstance(value, bool):
            kwargs[name] = _typed(value, bool, field_path)
        elif isinstance(value, int) and not numeric_as_float:
            kwargs[name] = value
        elif isinstance(value, (int, float)):
            # Integer-typed fields keep ints; everything numeric else is float.
            target = spec[name].type
            kwargs[name] = value if "int" in str(target) else float(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _parse_battery(raw: Any, path: str) -> BatteryConfig | None:
    if raw is None:
        return None
    built = _build_dataclass(BatteryConfig, raw, path)
    if built.ratio is None and built.capacity is None:
        raise ConfigError(f"{path}.ratio", "battery needs either ratio or capacity")
    if built.ratio is not None and built.ratio <= 0:
        raise ConfigError(f"{path}.ratio", "must be > 0")
    if built.capacity is not None and built.capacity <= 0:
        raise ConfigError(f"{path}.capacity", "must be > 0")
    if not 0.0 <= built.soc_min < built.soc_max <= 1.0:
        raise ConfigError(f"{path}.soc_min", "require 0 <= soc_min < soc_max <= 1")
    if built.initial_soc is not None and not built.soc_min <= built.initial_soc <= built.soc_max:
        raise ConfigError(f"{path}.initial_soc", "must lie within [soc_min, soc_max]")
    for name in ("eta_charge", "eta_discharge"):
        if not 0.0 < getattr(built, name) <= 1.0:
            raise ConfigError(f"{path}.{name}", "must be in (0, 1]")
    return built


def _parse_agent(raw: Any, path: str) -> AgentOverrides:
    if not isinstance(raw, Mapping):
        raise ConfigError(path, "expected an object")
    allowed = set(_PROFILE_FIELDS) | {"battery", "node"}
    _require(raw, allowed, path)
    battery = _parse_battery(raw.get("battery"), f"{path}.battery")
    node = raw.get("node")
    if node is not None:
        node = _typed(node, int, f"{path}.node")
    profile_fields = {
        k: (v if isinstance(v, (int, bool)) and "int" in str(_PROFILE_FIELDS[k]) else float(v))
        for k, v in raw.items()
        if k in _PROFILE_FIELDS
    }
    return AgentOverrides(battery=battery, node=node, profile_fields=profile_fields)


def from_dict(raw: Mapping[str, Any]) -> ScenarioConfig:
    """Validate a parsed JSON document into a ScenarioConfig."""
    if not isinstance(raw, Mapping):
        raise ConfigError("$", "top level must be an object")
    allowed = {
        "name", "description", "n_agents", "periods", "seed", "mechanism", "market",
        "topology", "fees", "reward", "reputation", "prices", "partner",
        "profile_defaults", "agents", "ledger_difficulty", "kpi_window",
    }
    _require(raw, allowed, "$")

    cfg = ScenarioConfig()
    name = raw.get("name", cfg.name)
    n_agents = _typed(raw.get("n_agents", cfg.n_agents), int, "$.n_agents")
    periods = _typed(raw.get("periods", cfg.periods), int, "$.periods")
    seed = _typed(raw.get("seed", cfg.seed), int, "$.seed")
    mechanism = _typed(raw.get("mechanism", cfg.mechanism), str, "$.mechanism")
    if n_agents < 2:
        raise ConfigError("$.n_agents", "need at least 2 agents")
    if periods < 0:
        raise ConfigError("$.periods", "must be >= 0")
    if mechanism not in MECHANISMS:
        raise ConfigError("$.mechanism", f"unknown mechanism {mechanism!r}; expected one of {MECHANISMS}")

    market = _build_dataclass(MarketBounds, raw.get("market", {}), "$.market")
    topology = _build_dataclass(TopologyConfig, raw.get("topology", {}), "$.topology")
    fees = _build_dataclass(FeeConfig, raw.get("fees", {}), "$.fees")
    reward = _build_dataclass(RewardConfig, raw.get("reward", {}), "$.reward")
    reputation = _build_dataclass(ReputationConfig, raw.get("reputation", {}), "$.reputation")
    prices = _build_dataclass(PriceConfig, raw.get("prices", {}), "$.prices")
    partner = _build_dataclass(PartnerConfig, raw.get("partner", {}), "$.partner")
    if not prices.utility_base > prices.fit_base > 0:
        raise ConfigError("$.prices.fit_base", "require utility_base > fit_base > 0")
    if prices.peak_multiplier < 1.0:
        raise ConfigError("$.prices.peak_multiplier", "must be >= 1")

    profile_defaults_raw = raw.get("profile_defaults", {})
    if not isinstance(profile_defaults_raw, Mapping):
        raise ConfigError("$.profile_defaults", "expected an object")
    _require(profile_defaults_raw, set(_PROFILE_FIELDS), "$.profile_defaults")
    profile_defaults = {
        k: (v if isinstance(v, (int, bool)) and "int" in str(_PROFILE_FIELDS[k]) else float(v))
        for k, v in profile_defaults_raw.items()
    }

    agents_raw = raw.get("agents", [])
    if not isinstance(agents_raw, list):
        raise ConfigError("$.agents", "expected an array")
    if len(agents_raw) > n_agents:
        raise ConfigError("$.agents", f"{len(agents_raw)} overrides for {n_agents} agents")
    agents = [_parse_agent(a, f"$.agents[{i}]") for i, a in enumerate(agents_raw)]

    ledger_difficulty = _typed(raw.get("ledger_difficulty", cfg.ledger_difficulty), int, "$.ledger_difficulty")
    if not 0 <= ledger_difficulty <= MAX_DIFFICULTY:
        raise ConfigError("$.ledger_difficulty", f"must be in [0, {MAX_DIFFICULTY}]")
    kpi_window = _typed(raw.get("kpi_window", cfg.kpi_window), int, "$.kpi_window")
    if kpi_window < 1:
        raise ConfigError("$.kpi_window", "must be >= 1")

    built = ScenarioConfig(
        name=_typed(name, str, "$.name"),
        description=_typed(raw.get("description", ""), str, "$.description"),
        n_agents=n_agents,
        periods=periods,
        seed=seed,
        mechanism=mechanism,
        market=market,
        topology=topology,
        fees=fees,
        reward=reward,
        reputation=reputation,
        prices=prices,
        partner=partner,
        profile_defaults=profile_defaults,
        agents=agents,
        ledger_difficulty=ledger_difficulty,
        kpi_window=kpi_window,
    )
    # Materialize every profile once so bad values fail at load time with a path.
    if built.periods >= 1:
        for i in range(built.n_agents):
            try:
                built.profile_for(i)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"$.agents[{i}]", str(exc)) from exc
    return built


def bundled_config_path(name: str) -> Path | None:
    """Path of a packaged scenario config, or None if not bundled."""
    ref = resources.files("lemsim.configs").joinpath(f"{name}.json")
    with resources.as_file(ref) as concrete:
        return concrete if concrete.exists() else None


def load_config(path_or_name: str) -> ScenarioConfig:
    """Load a scenario from a JSON file path or a bundled config name."""
    candidate = Path(path_or_name)
    if not candidate.exists():
        bundled = bundled_config_path(path_or_name)
        if bundled is None:
            raise ConfigError("$", f"no such config file or bundled scenario: {path_or_name}")
        candidate = bundled
    try:
        raw = json.loads(candidate.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON in {candidate}: {exc}") from exc
    return from_dict(raw)

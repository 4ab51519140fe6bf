"""Deterministic multi-agent local energy market simulator.

A seedable trading-day simulator: prosumer agents with solar profiles
and optional batteries submit orders each period; a three-stage engine
(mutual preference, double auction, operator backstop) clears every
order; settlement runs over a constrained grid graph with transmission
losses and operator fees; KPIs, cooperative rewards, reputation, and a
hash-chained trade ledger close the loop.
"""

from .agents import AgentState, Battery, PeriodRecord, apply_battery_flow, feasible_bounds, settle_trades
from .config import (
    BatteryConfig,
    ConfigError,
    PartnerConfig,
    PriceConfig,
    ScenarioConfig,
    TopologyConfig,
    from_dict,
    load_config,
    policy_rng,
)
from .cooperation import (
    KpiSet,
    RewardBreakdown,
    RewardConfig,
    compute_kpis,
    compute_reward,
    contribution_factor,
    cooperation_factor,
)
from .environment import (
    EnvState,
    Environment,
    build_observation,
    observation_layout,
    observation_size,
    reset,
    step,
)
from .grid import (
    GridState,
    build_topology,
    congestion,
    electrical_distance,
    shortest_path,
    transmission_loss,
)
from .ledger import Block, export_chain, import_chain, seal_block, verify_chain
from .market import (
    DSO_ID,
    DsoState,
    FeeBreakdown,
    FeeConfig,
    MarketBounds,
    MarketStats,
    Order,
    Trade,
    action_to_order,
    clear_period,
    clearing_price,
    dso_clear,
    dso_fee,
    preference_match,
    price_match,
)
from .policies import rule_based_partner, zero_intelligence_action
from .profiles import (
    ProfileConfig,
    generate_demand,
    generate_dso_prices,
    generate_generation,
    smooth,
)
from .reputation import ReputationConfig, ReputationState, update_reputation
from .runner import (
    EpisodeResult,
    battery_mediated_ratio,
    compare_batches,
    run_batch,
    run_episode,
    summarize_episode,
    system_residual,
    write_episode_outputs,
)

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "Battery",
    "BatteryConfig",
    "Block",
    "ConfigError",
    "DSO_ID",
    "DsoState",
    "EnvState",
    "Environment",
    "EpisodeResult",
    "FeeBreakdown",
    "FeeConfig",
    "GridState",
    "KpiSet",
    "MarketBounds",
    "MarketStats",
    "Order",
    "PartnerConfig",
    "PeriodRecord",
    "PriceConfig",
    "ProfileConfig",
    "ReputationConfig",
    "ReputationState",
    "RewardBreakdown",
    "RewardConfig",
    "ScenarioConfig",
    "TopologyConfig",
    "Trade",
    "action_to_order",
    "apply_battery_flow",
    "battery_mediated_ratio",
    "build_observation",
    "build_topology",
    "clear_period",
    "clearing_price",
    "compare_batches",
    "compute_kpis",
    "compute_reward",
    "congestion",
    "contribution_factor",
    "cooperation_factor",
    "dso_clear",
    "dso_fee",
    "electrical_distance",
    "export_chain",
    "feasible_bounds",
    "from_dict",
    "generate_demand",
    "generate_dso_prices",
    "generate_generation",
    "import_chain",
    "load_config",
    "observation_layout",
    "observation_size",
    "policy_rng",
    "preference_match",
    "price_match",
    "reset",
    "rule_based_partner",
    "run_batch",
    "run_episode",
    "seal_block",
    "settle_trades",
    "shortest_path",
    "smooth",
    "step",
    "summarize_episode",
    "system_residual",
    "transmission_loss",
    "update_reputation",
    "verify_chain",
    "zero_intelligence_action",
]

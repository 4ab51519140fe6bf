"""Episode engine: reset/step over the full market day.

step is a pure function: it never mutates the state it is given and
returns a freshly assembled successor, so callers can branch, replay,
or snapshot mid-episode. Each step runs one trading period end to end:
action validation, order creation, three-stage clearing, settlement,
KPI and reward computation, reputation update, and block sealing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .agents import AgentState, Battery, PeriodRecord, feasible_bounds, settle_trades
from .config import ScenarioConfig
from .cooperation import (
    KpiSet,
    RewardBreakdown,
    compute_kpis,
    compute_reward,
    cooperation_factor,
)
from .grid import (
    GridState,
    build_topology,
    electrical_distance,
    grid_balance,
    reset_flows,
)
from .ledger import GENESIS_HASH, Block, seal_block
from .market import DsoState, MarketStats, Order, Trade, action_to_order, clear_period
from .policies import rule_based_partner
from .profiles import (
    ProfileConfig,
    generate_demand,
    generate_dso_prices,
    generate_generation,
)
from .reputation import ReputationState, update_reputation

OBS_MARKET_FIELDS = 6
OBS_PRIVATE_FIELDS = 5
OBS_KPI_FIELDS = 5


def observation_size(n_agents: int) -> int:
    return OBS_MARKET_FIELDS + n_agents + OBS_PRIVATE_FIELDS + OBS_KPI_FIELDS


def observation_layout(n_agents: int) -> list[str]:
    """Name every index of the observation vector, in order."""
    market = [
        "last_clearing_price",
        "last_total_volume",
        "last_p2p_volume",
        "last_dso_volume",
        "feed_in_tariff",
        "utility_price",
    ]
    reputations = [f"reputation_{i}" for i in range(n_agents)]
    private = ["generation", "demand", "soc", "cumulative_profit", "own_reputation"]
    kpi = ["coordination", "avg_congestion", "imbalance", "self_consumption", "welfare_normalized"]
    return market + reputations + private + kpi


@dataclass
class EnvState:
    """Complete simulation state between periods."""

    config: ScenarioConfig
    t: int
    tau: int
    agents: list[AgentState]
    grid: GridState
    dso: DsoState
    reputation: ReputationState
    kpis: KpiSet
    price_history: list[float | None] = field(default_factory=list)
    volume_history: list[float] = field(default_factory=list)
    last_stats: MarketStats | None = None
    blocks: list[Block] = field(default_factory=list)

    @property
    def done(self) -> bool:
        return self.t >= self.tau


def _default_profile(config: ScenarioConfig) -> ProfileConfig:
    merged: dict[str, Any] = dict(config.profile_defaults)
    merged["period_count"] = config.periods
    merged["seed"] = config.seed
    return ProfileConfig(**merged)


def _build_agents(config: ScenarioConfig, grid: GridState) -> list[AgentState]:
    agents: list[AgentState] = []
    for i in range(config.n_agents):
        if config.periods >= 1:
            profile = config.profile_for(i)
            generation = generate_generation(profile)
            demand = generate_demand(profile)
            nominal = profile.nominal_capacity
        else:
            generation = np.zeros(0)
            demand = np.zeros(0)
            nominal = 0.0
        battery = None
        bc = config.battery_for(i)
        if bc is not None:
            battery = Battery(
                capacity=bc.capacity_for(nominal),
                soc=bc.start_soc(),
                soc_min=bc.soc_min,
                soc_max=bc.soc_max,
                eta_charge=bc.eta_charge,
                eta_discharge=bc.eta_discharge,
                max_rate=bc.max_rate,
            )
        agents.append(
            AgentState(
                id=i,
                node=grid.node_of(i),
                generation=generation,
                demand=demand,
                battery=battery,
            )
        )
    return agents


def reset(
    config: ScenarioConfig, seed: int | None = None
) -> tuple[EnvState, dict[int, np.ndarray]]:
    """Build period-0 state and initial observations for every agent."""
    if seed is not None:
        config = config.with_seed(seed)

    grid = build_topology(
        config.topology.kind,
        config.n_agents,
        config.topology.total_capacity,
        loss_factor=config.topology.loss_factor,
        n_zones=config.topology.n_zones,
        dso_node=config.topology.dso_node,
    )
    overrides = {
        i: config.node_for(i) for i in range(config.n_agents) if config.node_for(i) is not None
    }
    if overrides:
        placed = dict(grid.agent_nodes)
        for agent_id, node in overrides.items():
            if node not in grid.nodes:
                raise ValueError(f"reset: agent {agent_id} placed on unknown node {node}")
            placed[agent_id] = node
        grid = replace(grid, agent_nodes=placed)

    if config.periods >= 1:
        fit, utility = generate_dso_prices(
            _default_profile(config),
            config.prices.fit_base,
            config.prices.utility_base,
            peak_multiplier=config.prices.peak_multiplier,
            peak_halfwidth=config.prices.peak_halfwidth,
        )
    else:
        fit, utility = np.zeros(0), np.zeros(0)

    state = EnvState(
        config=config,
        t=0,
        tau=config.periods,
        agents=_build_agents(config, grid),
        grid=grid,
        dso=DsoState(fit=fit, utility=utility),
        reputation=ReputationState.initial(list(range(config.n_agents))),
        kpis=KpiSet(),
    )
    return state, observe_all(state)


def build_observation(agent_id: int, state: EnvState) -> np.ndarray:
    """Observation for one agent: shared market block, everyone's
    reputation, the agent's private block, and last period's KPIs."""
    agent = state.agents[agent_id]
    t_idx = min(state.t, state.tau - 1) if state.tau > 0 else None

    last_price = 0.0
    for price in reversed(state.price_history):
        if price is not None:
            last_price = price
            break
    stats = state.last_stats
    market = [
        last_price,
        state.volume_history[-1] if state.volume_history else 0.0,
        stats.p2p_volume if stats else 0.0,
        stats.dso_volume if stats else 0.0,
        state.dso.fit_at(t_idx) if t_idx is not None else 0.0,
        state.dso.utility_at(t_idx) if t_idx is not None else 0.0,
    ]
    reputations = [state.reputation.scores[i] for i in sorted(state.reputation.scores)]
    private = [
        float(agent.generation[t_idx]) if t_idx is not None else 0.0,
        float(agent.demand[t_idx]) if t_idx is not None else 0.0,
        agent.battery.soc if agent.battery else 0.0,
        agent.profit,
        agent.reputation,
    ]
    k = state.kpis
    kpi_block = [
        k.coordination_score,
        k.avg_congestion,
        k.imbalance,
        k.self_consumption,
        k.welfare_normalized,
    ]
    return np.asarray(market + reputations + private + kpi_block, dtype=float)


def observe_all(state: EnvState) -> dict[int, np.ndarray]:
    return {agent.id: build_observation(agent.id, state) for agent in state.agents}


def _collect_orders(
    state: EnvState, actions: Mapping[int, Sequence[float]]
) -> tuple[list[Order], dict[int, Order]]:
    config = state.config
    all_ids = [a.id for a in state.agents]
    orders: list[Order] = []
    by_agent: dict[int, Order] = {}
    for agent in state.agents:
        raw = actions.get(agent.id)
        if raw is None:
            continue
        order = action_to_order(
            np.asarray(raw, dtype=float), agent, config.market, state.t, config.n_agents
        )
        if order is None:
            continue
        if order.preferred is None and config.partner.rule_based:
            distances = {
                p: electrical_distance(state.grid, agent.id, p) for p in all_ids if p != agent.id
            }
            partner = rule_based_partner(
                agent.id,
                all_ids,
                state.reputation.scores,
                distances,
                config.partner.w_reputation,
                config.partner.w_distance,
            )
            if partner is not None:
                order = replace(order, preferred=partner)
        orders.append(order)
        by_agent[agent.id] = order
    return orders, by_agent


def _last_known_price(history: Sequence[float | None]) -> float | None:
    for price in reversed(history):
        if price is not None:
            return price
    return None


def step(
    state: EnvState, actions: Mapping[int, Sequence[float]] | None
) -> tuple[EnvState, dict[int, np.ndarray], dict[int, float], bool, dict[str, Any]]:
    """Advance one trading period. Returns (state', observations,
    rewards, done, info); the input state is left untouched."""
    if state.done:
        raise RuntimeError("step: episode is done; reset before stepping again")
    config = state.config
    t = state.t
    actions = actions or {}
    known = {a.id for a in state.agents}
    unknown = set(actions) - known
    if unknown:
        raise ValueError(f"step: actions for unknown agent ids {sorted(unknown)}")

    orders, order_by_agent = _collect_orders(state, actions)

    grid = reset_flows(state.grid)
    b_grid = grid_balance(state.agents, t)
    flex_available = 0.0
    for agent in state.agents:
        q_sell, q_buy = feasible_bounds(agent, t)
        flex_available += q_sell + q_buy
    p_ref = state.price_history[-1] if state.price_history else None
    trades, stats, grid, dso = clear_period(
        orders, config.mechanism, grid, state.dso, config.fees, t, p_ref, b_grid
    )

    trades_by_agent: dict[int, list[Trade]] = {}
    for trade in trades:
        if not trade.buyer_is_dso:
            trades_by_agent.setdefault(trade.buyer, []).append(trade)
        if not trade.seller_is_dso:
            trades_by_agent.setdefault(trade.seller, []).append(trade)
    agents: list[AgentState] = []
    records: list[PeriodRecord] = []
    for agent in state.agents:
        settled, record = settle_trades(agent, trades_by_agent.get(agent.id, []), t)
        agents.append(settled)
        records.append(record)

    price_history = state.price_history + [stats.clearing_price]
    volume_history = state.volume_history + [stats.total_volume]
    kpis = compute_kpis(
        trades,
        orders,
        agents,
        grid,
        price_history,
        config.kpi_window,
        t,
        volume_history,
        flex_available,
    )

    prev_price = _last_known_price(state.price_history)
    if prev_price is None or stats.clearing_price is None or prev_price <= 0:
        stability = 1.0
    else:
        stability = 1.0 - abs(stats.clearing_price - prev_price) / prev_price

    p2p_matched: dict[int, float] = {}
    for trade in trades:
        if trade.is_p2p:
            p2p_matched[trade.buyer] = p2p_matched.get(trade.buyer, 0.0) + trade.quantity
            p2p_matched[trade.seller] = p2p_matched.get(trade.seller, 0.0) + trade.quantity

    f_coop = cooperation_factor(kpis)
    g_sign = float(np.sign(b_grid))
    rewards: dict[int, float] = {}
    breakdowns: dict[int, RewardBreakdown] = {}
    for record in records:
        order = order_by_agent.get(record.agent_id)
        fill = p2p_matched.get(record.agent_id, 0.0) / order.quantity if order else 0.0
        breakdown = compute_reward(
            record,
            kpis,
            config.reward,
            participated=order is not None,
            fill_ratio=fill,
            stability=stability,
            grid_balance_sign=g_sign,
            f_coop=f_coop,
        )
        rewards[record.agent_id] = breakdown.r_total
        breakdowns[record.agent_id] = breakdown

    reputation = update_reputation(
        state.reputation, trades, orders, stats.clearing_price, g_sign, config.reputation
    )
    agents = [replace(a, reputation=reputation.scores[a.id]) for a in agents]

    previous_hash = state.blocks[-1].block_hash if state.blocks else GENESIS_HASH
    block = seal_block(
        trades, previous_hash, config.ledger_difficulty, index=len(state.blocks), period=t
    )

    new_state = EnvState(
        config=config,
        t=t + 1,
        tau=state.tau,
        agents=agents,
        grid=grid,
        dso=dso,
        reputation=reputation,
        kpis=kpis,
        price_history=price_history,
        volume_history=volume_history,
        last_stats=stats,
        blocks=state.blocks + [block],
    )
    info: dict[str, Any] = {
        "orders": orders,
        "trades": trades,
        "records": records,
        "stats": stats,
        "kpis": kpis,
        "reward_breakdowns": breakdowns,
        "block": block,
        "b_grid": b_grid,
        "available_flexibility": flex_available,
        "stability": stability,
    }
    if not all(map(math.isfinite, rewards.values())):
        raise FloatingPointError(f"step: non-finite reward at period {t}")
    return new_state, observe_all(new_state), rewards, new_state.done, info


class Environment:
    """Stateful convenience wrapper around the pure reset/step functions."""

    def __init__(self, config: ScenarioConfig):
        self._config = config
        self._state: EnvState | None = None

    @property
    def state(self) -> EnvState:
        if self._state is None:
            raise RuntimeError("Environment: call reset() first")
        return self._state

    def reset(self, seed: int | None = None) -> dict[int, np.ndarray]:
        self._state, observations = reset(self._config, seed)
        return observations

    def step(
        self, actions: Mapping[int, Sequence[float]] | None
    ) -> tuple[dict[int, np.ndarray], dict[int, float], bool, dict[str, Any]]:
        new_state, observations, rewards, done, info = step(self.state, actions)
        self._state = new_state
        return observations, rewards, done, info

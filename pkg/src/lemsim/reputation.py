"""Per-agent reputation from reliability, price fairness, and grid support.

Each period blends three component scores with a decay factor, so recent
behavior dominates. Reputation feeds back into the market only as a
tie-breaking sort criterion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .market import Order, Trade

INITIAL_REPUTATION = 0.5


@dataclass(frozen=True)
class ReputationConfig:
    w_reliability: float = 0.4
    w_fairness: float = 0.3
    w_grid: float = 0.3
    decay: float = 0.3

    def __post_init__(self) -> None:
        weights = (self.w_reliability, self.w_fairness, self.w_grid)
        if any(w < 0 for w in weights):
            raise ValueError("reputation config: weights must be >= 0")
        if abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError("reputation config: weights must sum to 1")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("reputation config: decay must be in (0, 1]")


@dataclass
class ReputationState:
    """Current score and last component values per agent."""

    scores: dict[int, float]
    reliability: dict[int, float] = field(default_factory=dict)
    fairness: dict[int, float] = field(default_factory=dict)
    grid_support: dict[int, float] = field(default_factory=dict)

    @classmethod
    def initial(cls, agent_ids: Sequence[int]) -> "ReputationState":
        return cls(
            scores={i: INITIAL_REPUTATION for i in agent_ids},
            reliability={i: INITIAL_REPUTATION for i in agent_ids},
            fairness={i: INITIAL_REPUTATION for i in agent_ids},
            grid_support={i: INITIAL_REPUTATION for i in agent_ids},
        )


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


def update_reputation(
    state: ReputationState,
    period_trades: Sequence[Trade],
    period_orders: Sequence[Order],
    clearing_price: float | None,
    grid_stress_delta: float,
    config: ReputationConfig,
) -> ReputationState:
    """Blend this period's component scores into every agent's reputation.

    Reliability is P2P-matched volume over submitted volume (the DSO
    backstop fills everything, so counting it would make the score
    vacuous); agents with no order count as fully reliable. Fairness is
    one minus the normalized deviation of the agent's submitted price
    from the period's volume-weighted clearing price, carried over when
    either is missing. Grid support is 1 when the agent's trades pushed
    against the prevailing imbalance (grid_stress_delta: sign of the
    pre-trade system balance), 0 when they pushed with it, 0.5 when
    neutral or the grid was balanced.
    """
    orders_by_agent: dict[int, Order] = {}
    for order in period_orders:
        orders_by_agent[order.agent_id] = order

    p2p_matched: dict[int, float] = {}
    bought: dict[int, float] = {}
    sold: dict[int, float] = {}
    for trade in period_trades:
        if trade.is_p2p:
            p2p_matched[trade.buyer] = p2p_matched.get(trade.buyer, 0.0) + trade.quantity
            p2p_matched[trade.seller] = p2p_matched.get(trade.seller, 0.0) + trade.quantity
        if not trade.buyer_is_dso:
            bought[trade.buyer] = bought.get(trade.buyer, 0.0) + trade.quantity
        if not trade.seller_is_dso:
            sold[trade.seller] = sold.get(trade.seller, 0.0) + trade.quantity

    scores = dict(state.scores)
    reliability = dict(state.reliability)
    fairness = dict(state.fairness)
    grid_support = dict(state.grid_support)

    for agent_id in scores:
        order = orders_by_agent.get(agent_id)
        if order is None:
            rel = 1.0
            fair = fairness.get(agent_id, INITIAL_REPUTATION)
        else:
            rel = _clamp(p2p_matched.get(agent_id, 0.0) / order.quantity)
            if clearing_price is None or clearing_price <= 0:
                fair = fairness.get(agent_id, INITIAL_REPUTATION)
            else:
                fair = 1.0 - min(1.0, abs(order.price - clearing_price) / clearing_price)

        traded_buy = bought.get(agent_id, 0.0)
        traded_sell = sold.get(agent_id, 0.0)
        if grid_stress_delta == 0.0 or (traded_buy == 0.0 and traded_sell == 0.0):
            support = 0.5
        elif grid_stress_delta > 0:  # excess supply: buying helps
            support = 1.0 if traded_buy >= traded_sell else 0.0
        else:  # excess demand: selling helps
            support = 1.0 if traded_sell >= traded_buy else 0.0

        blended = (
            config.w_reliability * rel + config.w_fairness * fair + config.w_grid * support
        )
        scores[agent_id] = _clamp(
            config.decay * blended + (1.0 - config.decay) * scores[agent_id]
        )
        reliability[agent_id] = rel
        fairness[agent_id] = fair
        grid_support[agent_id] = support

    return ReputationState(
        scores=scores, reliability=reliability, fairness=fairness, grid_support=grid_support
    )

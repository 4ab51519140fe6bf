"""Market KPIs, the cooperation feedback factor, and the per-agent reward.

The KPI suite summarizes one period of market activity. Four of the KPIs
feed the market-wide cooperation factor, which multiplies each agent's
base reward through an individual contribution factor, closing the
implicit-cooperation loop without any agent-to-agent communication.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .agents import AgentState, PeriodRecord, feasible_bounds
from .grid import GridState, congestion, grid_balance
from .market import Order, Trade, BUY, SELL

DEFAULT_KPI_WINDOW = 6


@dataclass(frozen=True)
class KpiSet:
    social_welfare: float = 0.0  # $
    liquidity: float = 0.0  # kWh
    bid_ask_spread: float = 0.0  # $/MWh
    price_volatility: float = 0.0  # $/MWh
    imbalance: float = 0.0
    avg_congestion: float = 0.0
    grid_balance: float = 0.0  # kWh, signed
    self_consumption: float = 1.0
    flexibility_utilization: float = 0.0
    coordination_score: float = 1.0
    coordination_convergence: float = 1.0
    welfare_normalized: float = 0.0


@dataclass(frozen=True)
class RewardConfig:
    w_economic: float = 1.0
    w_grid: float = 0.25
    w_allocation: float = 0.25
    w_trading: float = 0.25
    w_stability: float = 0.25
    cooperation_gain: float = 1.0
    dso_penalty_rate: float = 0.5  # $ per kWh traded with the DSO
    unmet_penalty_rate: float = 2.0  # $ per kWh of unserved demand

    def __post_init__(self) -> None:
        for name in (
            "w_economic", "w_grid", "w_allocation", "w_trading", "w_stability",
            "cooperation_gain", "dso_penalty_rate", "unmet_penalty_rate",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"reward config: {name} must be >= 0")


@dataclass(frozen=True)
class RewardBreakdown:
    agent_id: int
    r_base: float
    f_coop: float
    f_contrib: float
    penalty_dso: float
    penalty_unmet: float
    r_total: float


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def compute_kpis(
    trades: Sequence[Trade],
    orders: Sequence[Order],
    agents: Sequence[AgentState],
    grid: GridState,
    price_history: Sequence[float | None],
    window: int = DEFAULT_KPI_WINDOW,
    t: int = 0,
    volume_history: Sequence[float] = (),
    available_flexibility: float | None = None,
) -> KpiSet:
    """Summarize one cleared period.

    price_history and volume_history are the run-so-far series including
    the current period; only the trailing `window` entries are used.
    available_flexibility should be the pre-trade sum of feasible bounds;
    when omitted it is recomputed from the agents as passed.
    """
    if window < 1:
        raise ValueError("compute_kpis: window must be >= 1")

    welfare = sum(tr.price * tr.quantity for tr in trades) * 1e-3
    liquidity = sum(tr.quantity for tr in trades)

    bids = [o.price for o in orders if o.side == BUY]
    asks = [o.price for o in orders if o.side == SELL]
    spread = (float(np.mean(asks)) - float(np.mean(bids))) if bids and asks else 0.0

    recent_prices = [p for p in price_history[-window:] if p is not None]
    volatility = float(np.std(recent_prices)) if len(recent_prices) >= 2 else 0.0

    buy_volume = sum(o.quantity for o in orders if o.side == BUY)
    sell_volume = sum(o.quantity for o in orders if o.side == SELL)
    imbalance = _clamp01(abs(buy_volume - sell_volume) / grid.total_capacity)

    p2p = sum(tr.quantity for tr in trades if tr.is_p2p)
    dso = liquidity - p2p
    self_consumption = p2p / (p2p + dso) if (p2p + dso) > 0 else 1.0

    if available_flexibility is None:
        available_flexibility = 0.0
        for agent in agents:
            q_sell, q_buy = feasible_bounds(agent, t)
            available_flexibility += q_sell + q_buy
    flexibility = _clamp01(p2p / available_flexibility) if available_flexibility > 0 else 0.0

    recent_volumes = list(volume_history[-window:])
    if len(recent_volumes) >= 2 and np.mean(recent_volumes) > 0:
        convergence = _clamp01(1.0 - float(np.std(recent_volumes) / np.mean(recent_volumes)))
    else:
        convergence = 1.0

    _, avg_cong = congestion(grid)

    # Full-liquidity welfare reference: every feasible kWh traded at the
    # volume-weighted mean price actually observed this period.
    mean_price = (sum(tr.price * tr.quantity for tr in trades) / liquidity) if liquidity > 0 else 0.0
    reference = available_flexibility * mean_price * 1e-3
    if reference > 0:
        welfare_normalized = _clamp01(welfare / reference)
    else:
        welfare_normalized = 0.0 if welfare == 0 else 1.0

    return KpiSet(
        social_welfare=welfare,
        liquidity=liquidity,
        bid_ask_spread=spread,
        price_volatility=volatility,
        imbalance=imbalance,
        avg_congestion=avg_cong,
        grid_balance=grid_balance(agents, t),
        self_consumption=self_consumption,
        flexibility_utilization=flexibility,
        coordination_score=1.0 - imbalance,
        coordination_convergence=convergence,
        welfare_normalized=welfare_normalized,
    )


def cooperation_factor(kpis: KpiSet) -> float:
    """Market-wide f_coop: mean of four [0,1] system-health signals."""
    return float(
        np.mean(
            [
                kpis.coordination_score,
                kpis.self_consumption,
                1.0 - kpis.avg_congestion,
                kpis.welfare_normalized,
            ]
        )
    )


def _countered_imbalance(record: PeriodRecord, grid_balance_sign: float) -> float:
    """+1 when the agent traded against the prevailing imbalance, -1 with it, 0 neutral."""
    traded = record.bought + record.sold
    if grid_balance_sign == 0.0 or traded == 0.0:
        return 0.0
    if grid_balance_sign > 0:  # excess supply: buying absorbs it
        return 1.0 if record.bought >= record.sold else -1.0
    return 1.0 if record.sold >= record.bought else -1.0


def contribution_factor(
    record: PeriodRecord, kpis: KpiSet, grid_balance_sign: float
) -> float:
    """Individual f_contrib in [0,1]: neutral 0.5, shifted by imbalance
    alignment (+/-0.3) and the agent's P2P share of traded volume (+0.2 max)."""
    value = 0.5 + 0.3 * _countered_imbalance(record, grid_balance_sign)
    traded = record.bought + record.sold
    if traded > 0:
        p2p_share = (record.p2p_bought + record.p2p_sold) / traded
        value += 0.2 * p2p_share
    return _clamp01(value)


def compute_reward(
    record: PeriodRecord,
    kpis: KpiSet,
    config: RewardConfig,
    *,
    participated: bool,
    fill_ratio: float,
    stability: float,
    grid_balance_sign: float,
    f_coop: float | None = None,
) -> RewardBreakdown:
    """Per-agent reward: modulated base minus DSO-reliance and unmet-demand penalties.

    A period with no valid order contributes zero base reward, so an
    abstaining agent's reward is exactly the negated penalties. fill_ratio
    is P2P-matched over submitted volume and stability is 1 minus the
    normalized clearing-price change, both supplied by the environment.
    """
    if participated:
        alignment = _countered_imbalance(record, grid_balance_sign)
        grid_credit = 0.5 + 0.5 * alignment  # 1 countered, 0.5 neutral, 0 with
        r_base = (
            config.w_economic * record.period_profit
            + config.w_grid * grid_credit
            + config.w_allocation * _clamp01(fill_ratio)
            + config.w_trading * 1.0
            + config.w_stability * _clamp01(stability)
        )
    else:
        r_base = 0.0

    coop = cooperation_factor(kpis) if f_coop is None else f_coop
    contrib = contribution_factor(record, kpis, grid_balance_sign)
    penalty_dso = config.dso_penalty_rate * (record.dso_bought + record.dso_sold)
    penalty_unmet = config.unmet_penalty_rate * record.unserved
    r_total = r_base * (1.0 + config.cooperation_gain * coop * contrib) - penalty_dso - penalty_unmet
    return RewardBreakdown(
        agent_id=record.agent_id,
        r_base=r_base,
        f_coop=coop,
        f_contrib=contrib,
        penalty_dso=penalty_dso,
        penalty_unmet=penalty_unmet,
        r_total=r_total,
    )

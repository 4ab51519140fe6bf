"""Order decoding, three-stage matching, clearing prices, and DSO fees.

Each trading period runs three stages: mutual-preference matching, a
price-sorted double auction over the remainder, and a DSO backstop that
absorbs every residual at the feed-in tariff (unmatched sells) or the
utility price (unmatched buys). The market therefore always clears.

Fees use kWh * $/MWh * 1e-3 to yield dollars, matching settlement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .agents import PRICE_TO_KWH, AgentState, feasible_bounds
from . import grid as gridmod
from .grid import GridState

DSO_ID = -1
PREFER_DSO = "dso"

BUY = "buy"
SELL = "sell"

STAGE_PREFERENCE = "preference"
STAGE_AUCTION = "auction"
STAGE_DSO = "dso"

MECHANISMS = ("average", "nash", "seller", "buyer", "proportional", "bid_ask_spread")


@dataclass(frozen=True)
class MarketBounds:
    """Admissible price and quantity ranges for submitted orders."""

    p_min: float = 35.0
    p_max: float = 280.0
    q_min: float = 0.1
    q_max: float = 200.0

    def __post_init__(self) -> None:
        if not 0 < self.p_min < self.p_max:
            raise ValueError("market bounds: require 0 < p_min < p_max")
        if not 0 < self.q_min < self.q_max:
            raise ValueError("market bounds: require 0 < q_min < q_max")


@dataclass(frozen=True)
class Order:
    agent_id: int
    side: str
    price: float
    quantity: float
    preferred: int | str | None = None  # agent id, PREFER_DSO, or None
    reputation: float = 0.5

    def __post_init__(self) -> None:
        if self.side not in (BUY, SELL):
            raise ValueError(f"order: side must be buy or sell, got {self.side!r}")
        if self.quantity <= 0:
            raise ValueError("order: quantity must be positive")


@dataclass(frozen=True)
class FeeConfig:
    """Factors and thresholds of the composite DSO fee schedule."""

    f_cong: float = 0.10
    f_trans: float = 0.01
    f_imb: float = 0.05
    f_volt: float = 0.02
    f_threshold: float = 0.15
    f_zone: float = 0.02
    congestion_threshold: float = 0.8
    voltage_threshold: float = 0.05
    thermal_threshold: float = 0.2

    def __post_init__(self) -> None:
        if not 0.0 <= self.thermal_threshold < 1.0:
            raise ValueError("fee config: thermal_threshold must be in [0, 1)")
        if not 0.0 <= self.congestion_threshold <= 1.0:
            raise ValueError("fee config: congestion_threshold must be in [0, 1]")


@dataclass(frozen=True)
class FeeBreakdown:
    congestion: float = 0.0
    transmission: float = 0.0
    imbalance: float = 0.0
    voltage: float = 0.0
    thermal: float = 0.0
    zone: float = 0.0
    balance_impact: float = 0.0  # signed B_impact score, not a fee

    @property
    def total(self) -> float:
        return (
            self.congestion
            + self.transmission
            + self.imbalance
            + self.voltage
            + self.thermal
            + self.zone
        )


@dataclass
class Trade:
    buyer: int
    seller: int
    price: float
    quantity: float
    stage: str
    period: int
    loss: float = 0.0
    fees: FeeBreakdown = field(default_factory=FeeBreakdown)

    def __post_init__(self) -> None:
        if self.quantity <= 0:
            raise ValueError("trade: quantity must be positive")

    @property
    def buyer_is_dso(self) -> bool:
        return self.buyer == DSO_ID

    @property
    def seller_is_dso(self) -> bool:
        return self.seller == DSO_ID

    @property
    def is_p2p(self) -> bool:
        return not (self.buyer_is_dso or self.seller_is_dso)

    @property
    def fee_total(self) -> float:
        return self.fees.total


@dataclass
class DsoState:
    """Distribution system operator: backstop counterparty and fee collector.

    balance is cumulative net sold minus bought (kWh): positive means the
    DSO has been a net seller into the local market.
    """

    fit: np.ndarray
    utility: np.ndarray
    balance: float = 0.0
    fee_revenue: float = 0.0

    def fit_at(self, t: int) -> float:
        return float(self.fit[t])

    def utility_at(self, t: int) -> float:
        return float(self.utility[t])


@dataclass
class MarketStats:
    """Per-period clearing summary."""

    period: int
    clearing_price: float | None = None  # volume-weighted price across all cleared legs
    matched_price: float | None = None  # volume-weighted price across matched legs only
    p2p_volume: float = 0.0
    dso_volume: float = 0.0
    dso_sold: float = 0.0  # DSO -> agents
    dso_bought: float = 0.0  # agents -> DSO
    buy_submitted: float = 0.0
    sell_submitted: float = 0.0
    trades_by_stage: dict[str, int] = field(default_factory=dict)

    @property
    def total_volume(self) -> float:
        return self.p2p_volume + self.dso_volume


def action_to_order(
    action: Sequence[float],
    agent: AgentState,
    market_bounds: MarketBounds,
    t: int,
    n_agents: int | None = None,
) -> Order | None:
    """Decode a raw 4-vector (price, quantity, alpha, beta) into an order.

    Price clips into the market band. Quantity clips down to the market
    cap and the physical feasible bound for the decoded side; anything
    left below q_min is rejected (the agent abstains this period), as are
    non-finite actions. beta rounds to a partner index: 0 none,
    1..n agents (self maps to none), n+1 the DSO.
    """
    if len(action) != 4:
        return None
    p_bid, q_bid, alpha, beta = (float(x) for x in action)
    if not all(map(math.isfinite, (p_bid, q_bid, alpha, beta))):
        return None

    side = BUY if alpha >= 0.5 else SELL
    q_sell_max, q_buy_max = feasible_bounds(agent, t)
    feasible = q_buy_max if side == BUY else q_sell_max

    price = min(max(p_bid, market_bounds.p_min), market_bounds.p_max)
    quantity = min(q_bid, market_bounds.q_max, feasible)
    if quantity < market_bounds.q_min:
        return None

    preferred: int | str | None = None
    if n_agents is not None:
        k = int(round(beta))
        if 1 <= k <= n_agents and (k - 1) != agent.id:
            preferred = k - 1
        elif k == n_agents + 1:
            preferred = PREFER_DSO

    return Order(
        agent_id=agent.id,
        side=side,
        price=price,
        quantity=quantity,
        preferred=preferred,
        reputation=agent.reputation,
    )


def clearing_price(mechanism: str, p_buy: float, p_sell: float, p_ref: float | None = None) -> float:
    """Price an executed pair under the configured rule.

    average, nash, and bid_ask_spread all resolve to the midpoint (the
    equal-surplus split of a bilateral bargain is the midpoint, so the
    named rules coincide algebraically). seller executes at the sell bid,
    buyer at the buy offer. proportional splits the spread around p_ref;
    when p_ref lies outside [p_sell, p_buy] it degenerates and the
    midpoint is used instead.
    """
    if p_buy < p_sell:
        raise ValueError("clearing_price: requires p_buy >= p_sell")
    if mechanism in ("average", "nash", "bid_ask_spread"):
        return (p_buy + p_sell) / 2.0
    if mechanism == "seller":
        return p_sell
    if mechanism == "buyer":
        return p_buy
    if mechanism == "proportional":
        if p_ref is None or not (p_sell <= p_ref <= p_buy) or p_buy == p_sell:
            return (p_buy + p_sell) / 2.0
        return p_sell + ((p_buy - p_ref) / ((p_buy - p_ref) + (p_ref - p_sell))) * (p_buy - p_sell)
    raise ValueError(f"clearing_price: unknown mechanism {mechanism!r}")


def preference_match(
    orders: Sequence[Order],
    mechanism: str = "average",
    p_ref: float | None = None,
    t: int = 0,
) -> tuple[list[Trade], list[Order]]:
    """Stage 1: execute price-compatible mutual-preference pairs.

    A buy and a sell match here only when each names the other as
    preferred partner and the buy price covers the sell price. Pairs run
    in ascending (buyer id, seller id) order; fills are min-quantity and
    residuals carry into the next stage.
    """
    remaining: list[Order | None] = list(orders)
    pairs = sorted(
        (b.agent_id, s.agent_id, bi, si)
        for bi, b in enumerate(remaining)
        for si, s in enumerate(remaining)
        if b.side == BUY
        and s.side == SELL
        and b.preferred == s.agent_id
        and s.preferred == b.agent_id
        and b.price >= s.price
    )
    trades: list[Trade] = []
    for buyer_id, seller_id, bi, si in pairs:
        b = remaining[bi]
        s = remaining[si]
        if b is None or s is None:
            continue
        quantity = min(b.quantity, s.quantity)
        price = clearing_price(mechanism, b.price, s.price, p_ref)
        trades.append(
            Trade(buyer=buyer_id, seller=seller_id, price=price, quantity=quantity,
                  stage=STAGE_PREFERENCE, period=t)
        )
        for order, idx in ((b, bi), (s, si)):
            residual = order.quantity - quantity
            remaining[idx] = replace(order, quantity=residual) if residual > 1e-12 else None
    return trades, [o for o in remaining if o is not None]


def _buy_key(o: Order) -> tuple[float, float, int]:
    return (-o.price, -o.reputation, o.agent_id)


def _sell_key(o: Order) -> tuple[float, float, int]:
    return (o.price, -o.reputation, o.agent_id)


def price_match(
    orders: Sequence[Order],
    mechanism: str = "average",
    p_ref: float | None = None,
    t: int = 0,
) -> tuple[list[Trade], list[Order]]:
    """Stage 2: double auction over price-sorted books.

    Buys sort by price descending, sells ascending, reputation then agent
    id breaking ties. Head pairs execute min quantity while the buy price
    covers the sell price; residuals stay at the head until exhausted.
    Returns executed trades and every unmatched residual.
    """
    buys = sorted((o for o in orders if o.side == BUY), key=_buy_key)
    sells = sorted((o for o in orders if o.side == SELL), key=_sell_key)
    trades: list[Trade] = []
    bi = si = 0
    buy_left = [o.quantity for o in buys]
    sell_left = [o.quantity for o in sells]
    while bi < len(buys) and si < len(sells) and buys[bi].price >= sells[si].price:
        b, s = buys[bi], sells[si]
        quantity = min(buy_left[bi], sell_left[si])
        price = clearing_price(mechanism, b.price, s.price, p_ref)
        trades.append(
            Trade(buyer=b.agent_id, seller=s.agent_id, price=price, quantity=quantity,
                  stage=STAGE_AUCTION, period=t)
        )
        buy_left[bi] -= quantity
        sell_left[si] -= quantity
        if buy_left[bi] <= 1e-12:
            bi += 1
        if sell_left[si] <= 1e-12:
            si += 1
    unmatched = [replace(o, quantity=left) for o, left in zip(buys, buy_left) if left > 1e-12]
    unmatched += [replace(o, quantity=left) for o, left in zip(sells, sell_left) if left > 1e-12]
    return trades, unmatched


def dso_clear(unmatched: Sequence[Order], fit_t: float, utility_t: float, t: int = 0) -> list[Trade]:
    """Stage 3: the DSO absorbs every residual so the market fully clears.

    Sell residuals are bought at the feed-in tariff, buy residuals served
    at the utility price; sells settle first, each side in ascending
    agent-id order.
    """
    if not utility_t > fit_t:
        raise ValueError("dso_clear: utility price must exceed the feed-in tariff")
    trades: list[Trade] = []
    for order in sorted((o for o in unmatched if o.side == SELL), key=lambda o: o.agent_id):
        trades.append(
            Trade(buyer=DSO_ID, seller=order.agent_id, price=fit_t, quantity=order.quantity,
                  stage=STAGE_DSO, period=t)
        )
    for order in sorted((o for o in unmatched if o.side == BUY), key=lambda o: o.agent_id):
        trades.append(
            Trade(buyer=order.agent_id, seller=DSO_ID, price=utility_t, quantity=order.quantity,
                  stage=STAGE_DSO, period=t)
        )
    return trades


def _balance_impact(trade: Trade, b_grid: float) -> float:
    """Signed balance-impact score of a DSO trade (Eq.-style sign rules).

    Positive when the DSO side alleviates the prevailing imbalance (DSO
    buying during excess supply or selling during excess demand), negative
    when it exacerbates it, zero for P2P trades or a balanced grid.
    """
    if trade.is_p2p or b_grid == 0.0:
        return 0.0
    magnitude = min(trade.quantity / abs(b_grid), 1.0)
    dso_buys = trade.buyer_is_dso
    alleviates = (dso_buys and b_grid > 0) or (not dso_buys and b_grid < 0)
    return magnitude if alleviates else -magnitude


def dso_fee(trade: Trade, grid: GridState, fee_config: FeeConfig, b_grid: float) -> FeeBreakdown:
    """Composite grid-usage fee for one trade, in dollars.

    Congestion and thermal terms react to current system congestion,
    transmission and voltage to electrical distance, imbalance to the
    trade's effect on the system balance, and the zone term grants a
    bonus (negative fee) for same-zone trades.
    """
    _, c_t = gridmod.congestion(grid)
    d_ij = gridmod.trade_distance(grid, trade)
    money = trade.quantity * trade.price * PRICE_TO_KWH

    congestion_fee = fee_config.f_cong * max(0.0, c_t - fee_config.congestion_threshold) * money
    transmission_fee = fee_config.f_trans * d_ij * money
    impact = _balance_impact(trade, b_grid)
    imbalance_fee = fee_config.f_imb * abs(impact) * money
    voltage_fee = min(fee_config.f_volt * d_ij, fee_config.voltage_threshold) * money
    thermal_factor = max(0.0, (c_t - fee_config.thermal_threshold) / (1.0 - fee_config.thermal_threshold))
    thermal_fee = min(thermal_factor, fee_config.f_threshold) * money

    buyer_node = grid.dso_node if trade.buyer_is_dso else grid.node_of(trade.buyer)
    seller_node = grid.dso_node if trade.seller_is_dso else grid.node_of(trade.seller)
    zone_fee = -fee_config.f_zone * money if gridmod.same_zone_nodes(grid, buyer_node, seller_node) else 0.0

    return FeeBreakdown(
        congestion=congestion_fee,
        transmission=transmission_fee,
        imbalance=imbalance_fee,
        voltage=voltage_fee,
        thermal=thermal_fee,
        zone=zone_fee,
        balance_impact=impact,
    )


def clear_period(
    orders: Sequence[Order],
    mechanism: str,
    grid: GridState,
    dso: DsoState,
    fee_config: FeeConfig,
    t: int = 0,
    p_ref: float | None = None,
    b_grid: float = 0.0,
) -> tuple[list[Trade], MarketStats, GridState, DsoState]:
    """Run the full three-stage clearing workflow for one period.

    Trades are processed in a canonical order (preference pairs, auction
    executions, DSO absorption); each trade adds its flow along the
    shortest path and is then charged fees against the updated congestion,
    so later trades face the stress earlier ones created. Returns the
    trades, per-period stats, and the updated grid and DSO states.
    """
    if mechanism not in MECHANISMS:
        raise ValueError(f"clear_period: unknown mechanism {mechanism!r}")
    fit_t = dso.fit_at(t)
    utility_t = dso.utility_at(t)
    if p_ref is None:
        p_ref = (fit_t + utility_t) / 2.0

    pref_trades, rest = preference_match(orders, mechanism, p_ref, t)
    auction_trades, unmatched = price_match(rest, mechanism, p_ref, t)
    dso_trades = dso_clear(unmatched, fit_t, utility_t, t)

    balance_delta = 0.0
    revenue_delta = 0.0
    all_trades = pref_trades + auction_trades + dso_trades
    for trade in all_trades:
        grid = gridmod.apply_trade_flow(grid, trade)
        trade.loss = gridmod.transmission_loss(
            gridmod.trade_distance(grid, trade), trade.quantity, grid.loss_factor
        )
        trade.fees = dso_fee(trade, grid, fee_config, b_grid)
        if trade.is_p2p:
            revenue_delta += trade.fees.total
        else:
            revenue_delta += trade.fees.total / 2.0
            balance_delta += trade.quantity if trade.seller_is_dso else -trade.quantity

    stats = MarketStats(period=t)
    stats.buy_submitted = sum(o.quantity for o in orders if o.side == BUY)
    stats.sell_submitted = sum(o.quantity for o in orders if o.side == SELL)
    p2p = [tr for tr in all_trades if tr.is_p2p]
    stats.p2p_volume = sum(tr.quantity for tr in p2p)
    stats.dso_sold = sum(tr.quantity for tr in all_trades if tr.seller_is_dso)
    stats.dso_bought = sum(tr.quantity for tr in all_trades if tr.buyer_is_dso)
    stats.dso_volume = stats.dso_sold + stats.dso_bought
    if stats.p2p_volume > 0:
        stats.matched_price = sum(tr.price * tr.quantity for tr in p2p) / stats.p2p_volume
    if stats.total_volume > 0:
        stats.clearing_price = (
            sum(tr.price * tr.quantity for tr in all_trades) / stats.total_volume
        )
    for trade in all_trades:
        stats.trades_by_stage[trade.stage] = stats.trades_by_stage.get(trade.stage, 0) + 1

    dso = replace(dso, balance=dso.balance + balance_delta, fee_revenue=dso.fee_revenue + revenue_delta)
    return all_trades, stats, grid, dso

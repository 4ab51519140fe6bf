"""Prosumer state, battery dynamics, and post-trade settlement.

Units: energy in kWh, prices in $/MWh, money in $. The 1e-3 price
conversion happens exactly once, here at settlement (and in the fee
schedule), never upstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Iterable

import numpy as np

if TYPE_CHECKING:
    from .market import Trade

PRICE_TO_KWH = 1e-3  # $/MWh -> $/kWh


@dataclass(frozen=True)
class Battery:
    """Storage unit with asymmetric conversion efficiencies.

    soc is the fraction of nominal capacity currently stored and always
    stays inside [soc_min, soc_max]. max_rate caps the grid-side energy
    moved per period; None means the nominal capacity (effectively
    unconstrained within one period).
    """

    capacity: float
    soc: float = 0.5
    soc_min: float = 0.1
    soc_max: float = 0.9
    eta_charge: float = 0.95
    eta_discharge: float = 0.95
    max_rate: float | None = None

    def __post_init__(self) -> None:
        if self.capacity < 0:
            raise ValueError("battery: capacity must be >= 0")
        if not 0.0 <= self.soc_min <= self.soc <= self.soc_max <= 1.0:
            raise ValueError("battery: require 0 <= soc_min <= soc <= soc_max <= 1")
        for name in ("eta_charge", "eta_discharge"):
            eta = getattr(self, name)
            if not 0.0 < eta <= 1.0:
                raise ValueError(f"battery: {name} must be in (0, 1]")
        if self.max_rate is not None and self.max_rate < 0:
            raise ValueError("battery: max_rate must be >= 0")

    @property
    def stored(self) -> float:
        return self.soc * self.capacity

    @property
    def rate_limit(self) -> float:
        return self.capacity if self.max_rate is None else self.max_rate

    def dischargeable(self) -> float:
        """Raw energy above the floor, before discharge losses.

        Capped at the per-period rate so an order sized to this value is
        always executable within one period.
        """
        return min(max(0.0, (self.soc - self.soc_min) * self.capacity), self.rate_limit)

    def chargeable(self) -> float:
        """Raw headroom below the cap, before charge losses. Rate-capped
        like dischargeable()."""
        return min(max(0.0, (self.soc_max - self.soc) * self.capacity), self.rate_limit)


def apply_battery_flow(battery: Battery, net_energy: float) -> tuple[Battery, float]:
    """Move grid-side energy through the battery and report what was accepted.

    Positive net_energy charges: the store gains net_energy * eta_charge,
    capped at soc_max. Negative discharges: delivering |net_energy| drains
    |net_energy| / eta_discharge, floored at soc_min. The realized value
    carries the sign of the request and its magnitude is the grid-side
    energy actually moved, so callers never assume full acceptance.
    """
    if battery.capacity <= 0 or net_energy == 0.0:
        return battery, 0.0
    if net_energy > 0:
        request = min(net_energy, battery.rate_limit)
        gained = min(request * battery.eta_charge, battery.chargeable())
        if gained <= 0:
            return battery, 0.0
        accepted = gained / battery.eta_charge
        soc = min(battery.soc_max, (battery.stored + gained) / battery.capacity)
        return replace(battery, soc=soc), accepted
    request = min(-net_energy, battery.rate_limit)
    drained = min(request / battery.eta_discharge, battery.dischargeable())
    if drained <= 0:
        return battery, 0.0
    delivered = drained * battery.eta_discharge
    soc = max(battery.soc_min, (battery.stored - drained) / battery.capacity)
    return replace(battery, soc=soc), -delivered


@dataclass
class AgentState:
    """One prosumer: profiles, optional battery, and cumulative accounts."""

    id: int
    node: int
    generation: np.ndarray
    demand: np.ndarray
    battery: Battery | None = None
    profit: float = 0.0
    energy_bought: np.ndarray = field(default=None)  # type: ignore[assignment]
    energy_sold: np.ndarray = field(default=None)  # type: ignore[assignment]
    demand_satisfied: float = 0.0
    demand_deferred: float = 0.0
    reputation: float = 0.5

    def __post_init__(self) -> None:
        tau = len(self.generation)
        if len(self.demand) != tau:
            raise ValueError(f"agent {self.id}: generation and demand lengths differ")
        if self.energy_bought is None:
            self.energy_bought = np.zeros(tau)
        if self.energy_sold is None:
            self.energy_sold = np.zeros(tau)
        if not 0.0 <= self.reputation <= 1.0:
            raise ValueError(f"agent {self.id}: reputation must be in [0, 1]")

    @property
    def period_count(self) -> int:
        return len(self.generation)


@dataclass
class PeriodRecord:
    """Settlement components for one agent and one period.

    The identity
        generation + bought + discharge_delivered
            == (demand - unserved) + sold + charge_absorbed + curtailment
    holds to machine precision. unserved is the deficit left after the
    battery ran dry; it can exceed the period demand only when the agent
    sold battery energy its discharge efficiency could not actually
    deliver (see feasible_bounds).
    """

    agent_id: int
    period: int
    generation: float = 0.0
    demand: float = 0.0
    bought: float = 0.0
    sold: float = 0.0
    p2p_bought: float = 0.0
    p2p_sold: float = 0.0
    dso_bought: float = 0.0
    dso_sold: float = 0.0
    charge_absorbed: float = 0.0
    discharge_delivered: float = 0.0
    curtailment: float = 0.0
    unserved: float = 0.0
    fee_share: float = 0.0
    period_profit: float = 0.0


def energy_balance(agent: AgentState, t: int) -> float:
    """Net position for period t: (G - D) + (bought - sold), in kWh."""
    return float(
        agent.generation[t] - agent.demand[t] + agent.energy_bought[t] - agent.energy_sold[t]
    )


def feasible_bounds(agent: AgentState, t: int) -> tuple[float, float]:
    """Physical order-size limits (q_sell_max, q_buy_max) for period t.

    Sellable: instantaneous surplus plus raw dischargeable battery energy.
    Purchasable: instantaneous deficit plus raw battery headroom. Battery
    terms are zero without a battery.
    """
    g = float(agent.generation[t])
    d = float(agent.demand[t])
    dischargeable = agent.battery.dischargeable() if agent.battery else 0.0
    chargeable = agent.battery.chargeable() if agent.battery else 0.0
    return max(0.0, g - d) + dischargeable, max(0.0, d - g) + chargeable


def settle_trades(
    agent: AgentState, trades: Iterable["Trade"], t: int
) -> tuple[AgentState, PeriodRecord]:
    """Apply one period's executed trades to the agent.

    Cash settles on contract quantity; transmission losses are borne by
    the receiving side in kind. Fees are split half per agent party.
    After cash settlement the net energy position charges or discharges
    the battery; leftover surplus is curtailed, leftover deficit is
    recorded as unserved and deferred demand.
    """
    g = float(agent.generation[t])
    d = float(agent.demand[t])
    rec = PeriodRecord(agent_id=agent.id, period=t, generation=g, demand=d)
    revenue = 0.0
    cost = 0.0
    for trade in trades:
        if trade.buyer == agent.id:
            received = trade.quantity - trade.loss
            rec.bought += received
            cost += trade.price * trade.quantity * PRICE_TO_KWH
            rec.fee_share += trade.fee_total / 2.0
            if trade.seller_is_dso:
                rec.dso_bought += trade.quantity
            else:
                rec.p2p_bought += trade.quantity
        elif trade.seller == agent.id:
            rec.sold += trade.quantity
            revenue += trade.price * trade.quantity * PRICE_TO_KWH
            rec.fee_share += trade.fee_total / 2.0
            if trade.buyer_is_dso:
                rec.dso_sold += trade.quantity
            else:
                rec.p2p_sold += trade.quantity
        else:
            raise ValueError(
                f"settle_trades: trade {trade.buyer}->{trade.seller} does not involve agent {agent.id}"
            )

    battery = agent.battery
    balance = g - d + rec.bought - rec.sold
    if balance > 0:
        if battery is not None:
            battery, realized = apply_battery_flow(battery, balance)
            rec.charge_absorbed = realized
        rec.curtailment = balance - rec.charge_absorbed
    elif balance < 0:
        if battery is not None:
            battery, realized = apply_battery_flow(battery, balance)
            rec.discharge_delivered = -realized
        rec.unserved = -balance - rec.discharge_delivered

    satisfied = max(0.0, d - rec.unserved)
    deferred = min(d, rec.unserved)
    rec.period_profit = revenue - cost - rec.fee_share

    bought_series = agent.energy_bought.copy()
    sold_series = agent.energy_sold.copy()
    bought_series[t] += rec.bought
    sold_series[t] += rec.sold
    settled = replace(
        agent,
        battery=battery,
        profit=agent.profit + rec.period_profit,
        energy_bought=bought_series,
        energy_sold=sold_series,
        demand_satisfied=agent.demand_satisfied + satisfied,
        demand_deferred=agent.demand_deferred + deferred,
    )
    return settled, rec

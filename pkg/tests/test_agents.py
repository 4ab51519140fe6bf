"""Battery dynamics, feasibility bounds, and settlement accounting."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lemsim.agents import (
    AgentState,
    Battery,
    apply_battery_flow,
    energy_balance,
    feasible_bounds,
    settle_trades,
)
from lemsim.market import DSO_ID, STAGE_AUCTION, STAGE_DSO, FeeBreakdown, Trade

from conftest import make_agent


def trade(buyer, seller, price, quantity, loss=0.0, fees=None, stage=STAGE_AUCTION):
    return Trade(
        buyer=buyer,
        seller=seller,
        price=price,
        quantity=quantity,
        stage=stage,
        period=0,
        loss=loss,
        fees=fees or FeeBreakdown(),
    )


class TestBatteryValidation:
    def test_negative_capacity_rejected(self):
        with pytest.raises(ValueError, match="capacity"):
            Battery(capacity=-1.0)

    def test_soc_ordering_enforced(self):
        with pytest.raises(ValueError):
            Battery(capacity=10.0, soc=0.05, soc_min=0.1)
        with pytest.raises(ValueError):
            Battery(capacity=10.0, soc=0.95, soc_max=0.9)
        with pytest.raises(ValueError):
            Battery(capacity=10.0, soc_min=0.5, soc_max=0.4, soc=0.45)

    def test_efficiency_range(self):
        with pytest.raises(ValueError, match="eta_charge"):
            Battery(capacity=10.0, eta_charge=0.0)
        with pytest.raises(ValueError, match="eta_discharge"):
            Battery(capacity=10.0, eta_discharge=1.5)
        # exactly 1.0 is a legal (lossless) efficiency
        Battery(capacity=10.0, eta_charge=1.0, eta_discharge=1.0)

    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError, match="max_rate"):
            Battery(capacity=10.0, max_rate=-2.0)


class TestBatteryLimits:
    def test_stored(self):
        assert Battery(capacity=100.0, soc=0.5).stored == 50.0

    def test_default_rate_limit_is_capacity(self):
        assert Battery(capacity=80.0).rate_limit == 80.0
        assert Battery(capacity=80.0, max_rate=12.0).rate_limit == 12.0

    def test_headroom_midband(self):
        b = Battery(capacity=100.0, soc=0.5, soc_min=0.1, soc_max=0.9)
        assert b.dischargeable() == pytest.approx(40.0)
        assert b.chargeable() == pytest.approx(40.0)

    def test_rate_caps_both_directions(self):
        b = Battery(capacity=100.0, soc=0.5, max_rate=10.0)
        assert b.dischargeable() == 10.0
        assert b.chargeable() == 10.0

    def test_empty_and_full(self):
        empty = Battery(capacity=50.0, soc=0.1)
        full = Battery(capacity=50.0, soc=0.9)
        assert empty.dischargeable() == 0.0
        assert full.chargeable() == 0.0


class TestBatteryFlow:
    def test_charge_applies_efficiency(self):
        b = Battery(capacity=100.0, soc=0.5, eta_charge=0.95)
        after, realized = apply_battery_flow(b, 10.0)
        assert realized == pytest.approx(10.0)
        assert after.stored == pytest.approx(59.5)
        assert after.soc == pytest.approx(0.595)

    def test_discharge_drains_more_than_delivered(self):
        b = Battery(capacity=100.0, soc=0.5, eta_discharge=0.95)
        after, realized = apply_battery_flow(b, -9.5)
        assert realized == pytest.approx(-9.5)
        # delivering 9.5 kWh drains 10 kWh from the store
        assert after.stored == pytest.approx(40.0)

    def test_charge_at_ceiling_is_noop(self):
        b = Battery(capacity=100.0, soc=0.9)
        after, realized = apply_battery_flow(b, 25.0)
        assert realized == 0.0
        assert after == b

    def test_discharge_at_floor_is_noop(self):
        b = Battery(capacity=100.0, soc=0.1)
        after, realized = apply_battery_flow(b, -25.0)
        assert realized == 0.0
        assert after == b

    def test_zero_flow_and_zero_capacity(self):
        b = Battery(capacity=100.0, soc=0.5)
        assert apply_battery_flow(b, 0.0) == (b, 0.0)
        none = Battery(capacity=0.0, soc=0.0, soc_min=0.0, soc_max=0.0)
        assert apply_battery_flow(none, 5.0) == (none, 0.0)

    def test_charge_clamped_by_headroom(self):
        b = Battery(capacity=100.0, soc=0.85, eta_charge=0.95)
        after, realized = apply_battery_flow(b, 100.0)
        # only 5 kWh of headroom; grid side accepted 5 / 0.95
        assert realized == pytest.approx(5.0 / 0.95)
        assert after.soc == pytest.approx(0.9)

    def test_rate_limits_flow(self):
        b = Battery(capacity=100.0, soc=0.5, max_rate=10.0, eta_charge=0.95)
        after, realized = apply_battery_flow(b, 50.0)
        assert realized == pytest.approx(10.0)
        assert after.stored == pytest.approx(50.0 + 9.5)
        after, realized = apply_battery_flow(b, -50.0)
        assert realized == pytest.approx(-9.5)

    @given(
        soc=st.floats(0.1, 0.9),
        flows=st.lists(st.floats(-50.0, 50.0, allow_nan=False), max_size=60),
    )
    @settings(max_examples=200, deadline=None)
    def test_soc_stays_in_band(self, soc, flows):
        b = Battery(capacity=30.0, soc=soc)
        for f in flows:
            b, realized = apply_battery_flow(b, f)
            assert 0.1 <= b.soc <= 0.9
            # realized keeps the request's sign and never exceeds it
            assert abs(realized) <= abs(f) + 1e-12
            if realized != 0.0:
                assert (realized > 0) == (f > 0)

    @given(energy=st.floats(0.1, 100.0))
    @settings(max_examples=100, deadline=None)
    def test_round_trip_never_gains(self, energy):
        b = Battery(capacity=200.0, soc=0.1, eta_charge=0.95, eta_discharge=0.95)
        b, accepted = apply_battery_flow(b, energy)
        b, realized = apply_battery_flow(b, -1e9)
        delivered = -realized
        assert delivered <= accepted * 0.95 * 0.95 + 1e-9


class TestAgentState:
    def test_profile_length_mismatch(self):
        with pytest.raises(ValueError, match="lengths differ"):
            AgentState(id=0, node=0, generation=np.zeros(3), demand=np.zeros(4))

    def test_reputation_bounds(self):
        with pytest.raises(ValueError, match="reputation"):
            AgentState(
                id=0, node=0, generation=np.zeros(2), demand=np.zeros(2), reputation=1.2
            )

    def test_accumulators_default_to_zero(self):
        a = make_agent(periods=4)
        assert a.profit == 0.0
        assert np.all(a.energy_bought == 0.0)
        assert np.all(a.energy_sold == 0.0)
        assert a.period_count == 4


class TestEnergyBalance:
    def test_balanced(self):
        assert energy_balance(make_agent(generation=10.0, demand=10.0), 0) == 0.0

    def test_purchase_raises_balance(self):
        a = make_agent(generation=10.0, demand=10.0)
        a.energy_bought[0] = 2.0
        assert energy_balance(a, 0) == 2.0

    def test_deficit(self):
        assert energy_balance(make_agent(generation=4.0, demand=10.0), 0) == -6.0


class TestFeasibleBounds:
    def test_surplus_without_battery(self):
        assert feasible_bounds(make_agent(generation=20.0, demand=5.0), 0) == (15.0, 0.0)

    def test_deficit_without_battery(self):
        assert feasible_bounds(make_agent(generation=5.0, demand=20.0), 0) == (0.0, 15.0)

    def test_battery_widens_both_sides(self):
        b = Battery(capacity=100.0, soc=0.5)
        sell, buy = feasible_bounds(make_agent(generation=10.0, demand=10.0, battery=b), 0)
        assert sell == pytest.approx(40.0)
        assert buy == pytest.approx(40.0)

    def test_full_battery_backs_sales_only(self):
        b = Battery(capacity=50.0, soc=0.9)
        sell, buy = feasible_bounds(make_agent(generation=0.0, demand=10.0, battery=b), 0)
        assert sell == pytest.approx(0.8 * 50.0)
        assert buy == pytest.approx(10.0)

    def test_rate_cap_respected(self):
        b = Battery(capacity=100.0, soc=0.5, max_rate=12.0)
        sell, buy = feasible_bounds(make_agent(battery=b), 0)
        assert sell == 12.0
        assert buy == 12.0


class TestSettlement:
    def test_sale_revenue(self):
        a = make_agent(generation=10.0, demand=0.0)
        settled, rec = settle_trades(a, [trade(buyer=2, seller=0, price=150.0, quantity=10.0)], 0)
        assert settled.profit == pytest.approx(1.5)
        assert rec.period_profit == pytest.approx(1.5)
        assert rec.sold == 10.0
        assert rec.p2p_sold == 10.0
        assert rec.curtailment == 0.0
        assert rec.unserved == 0.0
        assert settled.energy_sold[0] == 10.0

    def test_partial_purchase_defers_remainder(self):
        a = make_agent(generation=0.0, demand=5.0, agent_id=1)
        settled, rec = settle_trades(a, [trade(buyer=1, seller=0, price=100.0, quantity=3.0)], 0)
        assert rec.unserved == pytest.approx(2.0)
        assert settled.demand_deferred == pytest.approx(2.0)
        assert settled.demand_satisfied == pytest.approx(3.0)
        assert settled.profit == pytest.approx(-0.3)

    def test_no_trades_balanced_is_neutral(self):
        a = make_agent(generation=7.0, demand=7.0)
        settled, rec = settle_trades(a, [], 0)
        assert settled.profit == 0.0
        assert rec.curtailment == 0.0
        assert rec.unserved == 0.0
        assert settled.demand_satisfied == 7.0

    def test_fee_split_halved(self):
        fees = FeeBreakdown(transmission=0.4)
        a = make_agent(generation=10.0, demand=0.0)
        _, rec = settle_trades(
            a, [trade(buyer=3, seller=0, price=100.0, quantity=10.0, fees=fees)], 0
        )
        assert rec.fee_share == pytest.approx(0.2)
        assert rec.period_profit == pytest.approx(1.0 - 0.2)

    def test_loss_borne_in_kind_by_buyer(self):
        a = make_agent(generation=0.0, demand=10.0, agent_id=4)
        _, rec = settle_trades(
            a, [trade(buyer=4, seller=1, price=100.0, quantity=10.0, loss=0.5)], 0
        )
        assert rec.bought == pytest.approx(9.5)
        # cash settles on the contracted 10 kWh regardless of delivery loss
        assert rec.period_profit == pytest.approx(-1.0)
        assert rec.unserved == pytest.approx(0.5)

    def test_dso_purchase_categorized(self):
        a = make_agent(generation=0.0, demand=5.0, agent_id=2)
        _, rec = settle_trades(
            a, [trade(buyer=2, seller=DSO_ID, price=250.0, quantity=5.0, stage=STAGE_DSO)], 0
        )
        assert rec.dso_bought == 5.0
        assert rec.p2p_bought == 0.0

    def test_surplus_charges_battery_then_curtails(self):
        b = Battery(capacity=100.0, soc=0.85, eta_charge=0.95)
        a = make_agent(generation=20.0, demand=0.0, battery=b)
        settled, rec = settle_trades(a, [], 0)
        assert rec.charge_absorbed == pytest.approx(5.0 / 0.95)
        assert rec.curtailment == pytest.approx(20.0 - 5.0 / 0.95)
        assert settled.battery.soc == pytest.approx(0.9)

    def test_deficit_drains_battery_then_defers(self):
        b = Battery(capacity=10.0, soc=0.5, eta_discharge=0.95)
        a = make_agent(generation=0.0, demand=10.0, battery=b)
        settled, rec = settle_trades(a, [], 0)
        assert rec.discharge_delivered == pytest.approx(3.8)
        assert rec.unserved == pytest.approx(6.2)
        assert settled.battery.soc == pytest.approx(0.1)

    def test_foreign_trade_rejected(self):
        with pytest.raises(ValueError, match="does not involve"):
            settle_trades(make_agent(agent_id=0), [trade(buyer=1, seller=2, price=100.0, quantity=1.0)], 0)

    def test_profit_accumulates_across_periods(self):
        a = make_agent(generation=10.0, demand=0.0, periods=2)
        a, _ = settle_trades(a, [trade(buyer=5, seller=0, price=100.0, quantity=10.0)], 0)
        a, _ = settle_trades(a, [trade(buyer=5, seller=0, price=200.0, quantity=10.0)], 1)
        assert a.profit == pytest.approx(3.0)
        assert a.energy_sold[0] == 10.0 and a.energy_sold[1] == 10.0

    @given(
        g=st.floats(0.0, 50.0),
        d=st.floats(0.0, 50.0),
        bought=st.floats(0.0, 30.0),
        sold=st.floats(0.0, 30.0),
        soc=st.floats(0.1, 0.9),
        has_battery=st.booleans(),
    )
    @settings(max_examples=300, deadline=None)
    def test_period_identity(self, g, d, bought, sold, soc, has_battery):
        battery = Battery(capacity=25.0, soc=soc) if has_battery else None
        a = make_agent(agent_id=3, generation=g, demand=d, battery=battery)
        trades = []
        if bought > 0:
            trades.append(trade(buyer=3, seller=1, price=120.0, quantity=bought))
        if sold > 0:
            trades.append(trade(buyer=2, seller=3, price=120.0, quantity=sold))
        settled, rec = settle_trades(a, trades, 0)
        lhs = rec.generation + rec.bought + rec.discharge_delivered
        rhs = (rec.demand - rec.unserved) + rec.sold + rec.charge_absorbed + rec.curtailment
        assert lhs == pytest.approx(rhs, abs=1e-9)
        if settled.battery is not None:
            assert 0.1 <= settled.battery.soc <= 0.9

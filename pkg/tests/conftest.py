import numpy as np
import pytest

from lemsim.agents import AgentState, Battery
from lemsim.grid import build_topology
from lemsim.market import DsoState, FeeConfig, MarketBounds


@pytest.fixture
def bounds() -> MarketBounds:
    return MarketBounds(p_min=35.0, p_max=280.0, q_min=0.1, q_max=200.0)


@pytest.fixture
def mesh7():
    return build_topology("mesh", 7, 1200.0)


@pytest.fixture
def flat_dso():
    # 24 periods of constant tariffs; utility strictly above fit.
    return DsoState(fit=np.full(24, 50.0), utility=np.full(24, 250.0))


@pytest.fixture
def fee_config() -> FeeConfig:
    return FeeConfig()


def make_agent(
    agent_id: int = 0,
    generation: float = 0.0,
    demand: float = 0.0,
    periods: int = 1,
    battery: Battery | None = None,
    node: int | None = None,
) -> AgentState:
    """Single-period-profile agent used by most unit tests."""
    return AgentState(
        id=agent_id,
        node=agent_id if node is None else node,
        generation=np.full(periods, float(generation)),
        demand=np.full(periods, float(demand)),
        battery=battery,
    )

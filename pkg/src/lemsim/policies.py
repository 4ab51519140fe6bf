"""Baseline trading policies.

Zero-intelligence agents sample uniformly inside the market bounds and
only respect their own feasibility; the rule-based partner heuristic
scores counterparties by reputation and electrical proximity.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .agents import AgentState, feasible_bounds
from .market import MarketBounds


def zero_intelligence_action(
    rng: np.random.Generator,
    bounds: MarketBounds,
    agent: AgentState,
    t: int,
) -> np.ndarray:
    """Random-but-feasible action vector [price, quantity, alpha, beta].

    Side follows the net position (deficit buys, surplus sells, balanced
    flips a coin). Quantity is uniform on [q_min, feasible upper]; when
    the upper bound is below q_min the raw bound is emitted as-is, which
    downstream validation rejects, so under-minimum agents abstain.
    The quantity consumes exactly one draw either way, so runs whose
    configs differ only in storage keep every agent's stream aligned.
    """
    price = rng.uniform(bounds.p_min, bounds.p_max)
    q_sell_max, q_buy_max = feasible_bounds(agent, t)
    net = agent.generation[t] - agent.demand[t]
    if net > 0:
        buying = False
    elif net < 0:
        buying = True
    else:
        buying = bool(rng.uniform() < 0.5)
    upper = min(bounds.q_max, q_buy_max if buying else q_sell_max)
    span = rng.uniform()
    if upper > bounds.q_min:
        quantity = bounds.q_min + span * (upper - bounds.q_min)
    else:
        quantity = upper
    alpha = 1.0 if buying else 0.0
    return np.array([price, quantity, alpha, 0.0])


def rule_based_partner(
    agent_id: int,
    peers: Sequence[int],
    reputations: Mapping[int, float],
    distances: Mapping[int, float],
    w_reputation: float = 0.7,
    w_distance: float = 0.3,
) -> int | None:
    """Preferred counterparty: highest w_r * reputation + w_d * proximity.

    Proximity is 1 - d / d_max over the candidate set (1.0 when every
    candidate is co-located). Ties go to the lowest agent id.
    """
    candidates = [p for p in peers if p != agent_id]
    if not candidates:
        return None
    d_max = max(distances[p] for p in candidates)
    best: tuple[float, int] | None = None
    for p in sorted(candidates):
        proximity = 1.0 if d_max <= 0 else 1.0 - distances[p] / d_max
        score = w_reputation * reputations.get(p, 0.5) + w_distance * proximity
        if best is None or score > best[0] + 1e-12:
            best = (score, p)
    assert best is not None
    return best[1]

"""Batch execution and report files.

Runs whole episodes with the zero-intelligence baseline policy, writes
one directory of CSV/JSON artifacts per seed, and aggregates seeds into
a batch summary that the compare command can line up side by side.
"""

from __future__ import annotations

import csv
import json
import os
import statistics
from dataclasses import dataclass, field
from datetime import datetime, timezone
from io import StringIO
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .agents import PeriodRecord
from .config import ScenarioConfig, policy_rng
from .cooperation import KpiSet, RewardBreakdown
from .environment import EnvState, reset, step
from .grid import shortest_path
from .ledger import export_chain, verify_chain
from .market import DSO_ID, MarketStats, Trade
from .policies import zero_intelligence_action

TRADE_COLUMNS = ("period", "stage", "buyer", "seller", "price", "quantity", "loss", "fee_total")
KPI_COLUMNS = (
    "period",
    "social_welfare",
    "liquidity",
    "bid_ask_spread",
    "price_volatility",
    "imbalance",
    "avg_congestion",
    "grid_balance",
    "self_consumption",
    "flexibility_utilization",
    "coordination_score",
    "coordination_convergence",
    "welfare_normalized",
)
REWARD_COLUMNS = (
    "period",
    "agent",
    "r_base",
    "f_coop",
    "f_contrib",
    "penalty_dso",
    "penalty_unmet",
    "r_total",
)
PRICE_HISTOGRAM_BINS = 20


@dataclass
class EpisodeResult:
    """Everything one seeded episode produced, in period order."""

    config: ScenarioConfig
    seed: int
    final_state: EnvState
    stats: list[MarketStats] = field(default_factory=list)
    kpis: list[KpiSet] = field(default_factory=list)
    records: list[list[PeriodRecord]] = field(default_factory=list)
    rewards: list[dict[int, RewardBreakdown]] = field(default_factory=list)
    trades: list[Trade] = field(default_factory=list)
    pre_trade_balance: list[float] = field(default_factory=list)
    soc_min: float | None = None
    soc_max: float | None = None
    conservation_max_error: float = 0.0


def _observe_soc(result: EpisodeResult, state: EnvState) -> None:
    for agent in state.agents:
        if agent.battery is None:
            continue
        soc = agent.battery.soc
        result.soc_min = soc if result.soc_min is None else min(result.soc_min, soc)
        result.soc_max = soc if result.soc_max is None else max(result.soc_max, soc)


def system_residual(records: Sequence[PeriodRecord], trades: Sequence[Trade]) -> float:
    """Signed system energy balance for one period; zero when conserved.

    Supply side: generation, battery discharge, and energy the grid
    operator injected. Use side: served demand, battery charge,
    curtailment, energy the operator absorbed (net of transport loss on
    its own purchases), and every trade's transmission loss.
    """
    supply = sum(r.generation + r.discharge_delivered for r in records)
    use = sum(
        (r.demand - r.unserved) + r.charge_absorbed + r.curtailment for r in records
    )
    for trade in trades:
        if trade.seller == DSO_ID:
            supply += trade.quantity
        if trade.buyer == DSO_ID:
            use += trade.quantity - trade.loss
        use += trade.loss
    return supply - use


def run_episode(config: ScenarioConfig, seed: int | None = None) -> EpisodeResult:
    """One full episode under the zero-intelligence policy."""
    state, _ = reset(config, seed)
    effective_seed = state.config.seed
    result = EpisodeResult(config=state.config, seed=effective_seed, final_state=state)
    rngs = {a.id: policy_rng(effective_seed, a.id) for a in state.agents}
    _observe_soc(result, state)

    while not state.done:
        actions = {
            a.id: zero_intelligence_action(rngs[a.id], state.config.market, a, state.t)
            for a in state.agents
        }
        result.pre_trade_balance.append(
            sum(float(a.generation[state.t] - a.demand[state.t]) for a in state.agents)
        )
        state, _, _, _, info = step(state, actions)
        result.stats.append(info["stats"])
        result.kpis.append(info["kpis"])
        result.records.append(info["records"])
        result.rewards.append(info["reward_breakdowns"])
        result.trades.extend(info["trades"])
        residual = abs(system_residual(info["records"], info["trades"]))
        result.conservation_max_error = max(result.conservation_max_error, residual)
        _observe_soc(result, state)

    result.final_state = state
    return result


def _party(agent_id: int) -> str:
    return "dso" if agent_id == DSO_ID else str(agent_id)


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _csv_text(columns: Sequence[str], rows: Sequence[Sequence[Any]], timestamp: bool) -> str:
    buf = StringIO()
    if timestamp:
        buf.write(f"# generated {datetime.now(timezone.utc).isoformat()}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def clearing_prices(result: EpisodeResult) -> list[float]:
    """Per-period clearing prices, skipping periods where nothing traded."""
    return [s.clearing_price for s in result.stats if s.clearing_price is not None]


def matched_prices(result: EpisodeResult) -> list[float]:
    """Per-period matched-leg prices, skipping periods with no matches."""
    return [s.matched_price for s in result.stats if s.matched_price is not None]


def battery_mediated_ratio(result: EpisodeResult) -> float:
    """Share of P2P volume sourced from storage rather than live surplus.

    Selling beyond the period's instantaneous surplus is only possible by
    discharging, so the excess is attributed to the battery and prorated
    onto the seller's P2P share of sold volume.
    """
    battery_p2p = 0.0
    p2p_sold = 0.0
    for period_records in result.records:
        for rec in period_records:
            p2p_sold += rec.p2p_sold
            if rec.sold <= 0:
                continue
            surplus = max(0.0, rec.generation - rec.demand)
            from_battery = max(0.0, rec.sold - surplus)
            battery_p2p += from_battery * (rec.p2p_sold / rec.sold)
    return battery_p2p / p2p_sold if p2p_sold > 0 else 0.0


def summarize_episode(result: EpisodeResult) -> dict[str, Any]:
    config = result.config
    prices = clearing_prices(result)
    matched = matched_prices(result)
    total_reward = sum(b.r_total for period in result.rewards for b in period.values())
    final_period_reward = (
        sum(b.r_total for b in result.rewards[-1].values()) if result.rewards else 0.0
    )
    p2p = sum(s.p2p_volume for s in result.stats)
    dso_sold = sum(s.dso_sold for s in result.stats)
    dso_bought = sum(s.dso_bought for s in result.stats)
    total = p2p + dso_sold + dso_bought
    unserved = sum(r.unserved for period in result.records for r in period)
    curtailed = sum(r.curtailment for period in result.records for r in period)
    welfare = sum(k.social_welfare for k in result.kpis)
    dso_net = result.final_state.dso.balance  # sold - bought, cumulative
    if dso_net > 1e-9:
        dso_role = "seller"
    elif dso_net < -1e-9:
        dso_role = "buyer"
    else:
        dso_role = "neutral"
    reputation = result.final_state.reputation.scores
    return {
        "scenario": config.name,
        "seed": result.seed,
        "n_agents": config.n_agents,
        "periods": config.periods,
        "reward": {
            "aggregate": total_reward,
            "mean_per_period": total_reward / config.periods if config.periods else 0.0,
            "final_period": final_period_reward,
        },
        "price": {
            "mean": float(np.mean(prices)) if prices else 0.0,
            "median": float(np.median(prices)) if prices else 0.0,
            "std": float(np.std(prices)) if len(prices) >= 2 else 0.0,
            "periods_with_trades": len(prices),
        },
        "matched_price": {
            "mean": float(np.mean(matched)) if matched else 0.0,
            "std": float(np.std(matched)) if len(matched) >= 2 else 0.0,
            "periods_with_p2p": len(matched),
        },
        "volume": {
            "p2p": p2p,
            "dso_sold": dso_sold,
            "dso_bought": dso_bought,
            "total": total,
        },
        "p2p_ratio": p2p / total if total > 0 else 0.0,
        "dso_net_position": dso_net,
        "dso_role": dso_role,
        "battery_ratio": battery_mediated_ratio(result),
        "soc_range": (
            None
            if result.soc_min is None
            else {"min": result.soc_min, "max": result.soc_max}
        ),
        "welfare_total": welfare,
        "unserved_total": unserved,
        "curtailment_total": curtailed,
        "fee_revenue": result.final_state.dso.fee_revenue,
        "reputation_final_mean": (
            float(np.mean(list(reputation.values()))) if reputation else 0.0
        ),
        "ledger": {
            "blocks": len(result.final_state.blocks),
            "valid": verify_chain(result.final_state.blocks, config.ledger_difficulty),
        },
        "conservation_max_abs_error": result.conservation_max_error,
    }


def _trade_rows(result: EpisodeResult) -> list[tuple]:
    return [
        (t.period, t.stage, _party(t.buyer), _party(t.seller), t.price, t.quantity, t.loss, t.fee_total)
        for t in result.trades
    ]


def _kpi_rows(result: EpisodeResult) -> list[tuple]:
    rows = []
    for period, k in enumerate(result.kpis):
        rows.append(
            (
                period,
                k.social_welfare,
                k.liquidity,
                k.bid_ask_spread,
                k.price_volatility,
                k.imbalance,
                k.avg_congestion,
                k.grid_balance,
                k.self_consumption,
                k.flexibility_utilization,
                k.coordination_score,
                k.coordination_convergence,
                k.welfare_normalized,
            )
        )
    return rows


def _reward_rows(result: EpisodeResult) -> list[tuple]:
    rows = []
    for period, breakdowns in enumerate(result.rewards):
        for agent_id in sorted(breakdowns):
            b = breakdowns[agent_id]
            rows.append(
                (
                    period,
                    agent_id,
                    b.r_base,
                    b.f_coop,
                    b.f_contrib,
                    b.penalty_dso,
                    b.penalty_unmet,
                    b.r_total,
                )
            )
    return rows


def _price_histogram_rows(result: EpisodeResult) -> list[tuple]:
    bounds = result.config.market
    edges = np.linspace(bounds.p_min, bounds.p_max, PRICE_HISTOGRAM_BINS + 1)
    prices = [t.price for t in result.trades if t.is_p2p]
    counts, _ = np.histogram(prices, bins=edges)
    return [
        (float(edges[i]), float(edges[i + 1]), int(counts[i]))
        for i in range(PRICE_HISTOGRAM_BINS)
    ]


def _grid_deviation_rows(result: EpisodeResult) -> list[tuple]:
    return [
        (period, result.pre_trade_balance[period], k.grid_balance, k.imbalance)
        for period, k in enumerate(result.kpis)
    ]


def _p2p_ratio_rows(result: EpisodeResult) -> list[tuple]:
    rows = []
    for period, s in enumerate(result.stats):
        total = s.total_volume
        rows.append(
            (period, s.p2p_volume, s.dso_volume, s.p2p_volume / total if total > 0 else 0.0)
        )
    return rows


def _network_rows(result: EpisodeResult) -> list[tuple]:
    grid = result.final_state.grid
    volumes: dict[tuple[int, int], float] = {}
    counts: dict[tuple[int, int], int] = {}
    for t in result.trades:
        key = (t.buyer, t.seller)
        volumes[key] = volumes.get(key, 0.0) + t.quantity
        counts[key] = counts.get(key, 0) + 1
    rows = []
    for buyer, seller in sorted(volumes):
        buyer_node = grid.dso_node if buyer == DSO_ID else grid.node_of(buyer)
        seller_node = grid.dso_node if seller == DSO_ID else grid.node_of(seller)
        if buyer_node == seller_node:
            distance = 0.0
        else:
            distance, _ = shortest_path(grid, seller_node, buyer_node)
        rows.append(
            (
                _party(buyer),
                _party(seller),
                volumes[(buyer, seller)],
                counts[(buyer, seller)],
                distance,
            )
        )
    return rows


def write_episode_outputs(result: EpisodeResult, out_dir: Path, timestamp: bool = True) -> None:
    """Write one seed's full report directory (atomically per file)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_atomic(out_dir / "trades.csv", _csv_text(TRADE_COLUMNS, _trade_rows(result), timestamp))
    _write_atomic(out_dir / "kpis.csv", _csv_text(KPI_COLUMNS, _kpi_rows(result), timestamp))
    _write_atomic(out_dir / "rewards.csv", _csv_text(REWARD_COLUMNS, _reward_rows(result), timestamp))
    _write_atomic(
        out_dir / "plot_price_histogram.csv",
        _csv_text(("bin_left", "bin_right", "count"), _price_histogram_rows(result), timestamp),
    )
    _write_atomic(
        out_dir / "plot_grid_deviation.csv",
        _csv_text(
            ("period", "pre_trade_balance", "post_trade_balance", "imbalance"),
            _grid_deviation_rows(result),
            timestamp,
        ),
    )
    _write_atomic(
        out_dir / "plot_p2p_ratio.csv",
        _csv_text(("period", "p2p_volume", "dso_volume", "ratio"), _p2p_ratio_rows(result), timestamp),
    )
    _write_atomic(
        out_dir / "plot_trading_network.csv",
        _csv_text(
            ("buyer", "seller", "volume", "trades", "distance"), _network_rows(result), timestamp
        ),
    )
    _write_atomic(out_dir / "ledger.jsonl", export_chain(result.final_state.blocks))
    _write_atomic(
        out_dir / "summary.json",
        json.dumps(summarize_episode(result), indent=2, sort_keys=True) + "\n",
    )


def resolve_seeds(spec: str, base_seed: int) -> list[int]:
    """'n' -> n sequential seeds from the config seed; 'a,b,c' -> those seeds."""
    if "," in spec:
        return [int(part.strip()) for part in spec.split(",") if part.strip()]
    count = int(spec)
    if count < 1:
        raise ValueError("seed count must be >= 1")
    return [base_seed + i for i in range(count)]


def aggregate_summaries(per_seed: Sequence[dict[str, Any]], scenario: str) -> dict[str, Any]:
    rewards = [s["reward"]["aggregate"] for s in per_seed]
    price_means = [s["price"]["mean"] for s in per_seed]
    price_stds = [s["price"]["std"] for s in per_seed]
    ratios = [s["p2p_ratio"] for s in per_seed]
    nets = [s["dso_net_position"] for s in per_seed]
    battery = [s["battery_ratio"] for s in per_seed]
    net_mean = statistics.fmean(nets) if nets else 0.0
    if net_mean > 1e-9:
        role = "seller"
    elif net_mean < -1e-9:
        role = "buyer"
    else:
        role = "neutral"
    return {
        "scenario": scenario,
        "seeds": [s["seed"] for s in per_seed],
        "n_seeds": len(per_seed),
        "reward_aggregate_mean": statistics.fmean(rewards) if rewards else 0.0,
        "reward_aggregate_std": statistics.pstdev(rewards) if len(rewards) >= 2 else 0.0,
        "price_mean_mean": statistics.fmean(price_means) if price_means else 0.0,
        "price_median_mean": (
            statistics.fmean(s["price"]["median"] for s in per_seed) if per_seed else 0.0
        ),
        "price_std_mean": statistics.fmean(price_stds) if price_stds else 0.0,
        "p2p_ratio_mean": statistics.fmean(ratios) if ratios else 0.0,
        "dso_net_position_mean": net_mean,
        "dso_role": role,
        "battery_ratio_mean": statistics.fmean(battery) if battery else 0.0,
        "per_seed": list(per_seed),
    }


def run_batch(
    config: ScenarioConfig,
    seeds: Sequence[int],
    out_dir: Path,
    timestamp: bool = True,
) -> dict[str, Any]:
    """Run every seed, write per-seed directories and the batch summary."""
    out_dir.mkdir(parents=True, exist_ok=True)
    per_seed = []
    for seed in seeds:
        result = run_episode(config, seed)
        write_episode_outputs(result, out_dir / f"seed_{seed}", timestamp)
        per_seed.append(summarize_episode(result))
    batch = aggregate_summaries(per_seed, config.name)
    _write_atomic(out_dir / "summary.json", json.dumps(batch, indent=2, sort_keys=True) + "\n")
    return batch


def load_batch_summary(run_dir: Path) -> dict[str, Any]:
    path = Path(run_dir) / "summary.json"
    if not path.exists():
        raise FileNotFoundError(f"no batch summary at {path}")
    return json.loads(path.read_text())


COMPARISON_METRICS = (
    "reward_aggregate_mean",
    "reward_final_mean",
    "price_mean",
    "price_median",
    "price_std",
    "p2p_ratio",
    "dso_net_position",
    "dso_role",
    "battery_ratio",
)


def _metric_value(summary: dict[str, Any], metric: str) -> Any:
    per_seed = summary["per_seed"]
    if metric == "reward_final_mean":
        return statistics.fmean(s["reward"]["final_period"] for s in per_seed) if per_seed else 0.0
    mapping = {
        "reward_aggregate_mean": "reward_aggregate_mean",
        "price_mean": "price_mean_mean",
        "price_median": "price_median_mean",
        "price_std": "price_std_mean",
        "p2p_ratio": "p2p_ratio_mean",
        "dso_net_position": "dso_net_position_mean",
        "dso_role": "dso_role",
        "battery_ratio": "battery_ratio_mean",
    }
    return summary[mapping[metric]]


def _fraction(pairs: Sequence[tuple[float, float]], better) -> float:
    if not pairs:
        return 0.0
    return sum(1 for base, cand in pairs if better(base, cand)) / len(pairs)


def compare_batches(summaries: Sequence[dict[str, Any]]) -> dict[str, Any]:
    """Side-by-side metrics plus directional flags against the first batch.

    All batches must cover the identical seed list so per-seed pairings
    are meaningful.
    """
    if len(summaries) < 2:
        raise ValueError("compare: need at least 2 run directories")
    seeds = summaries[0]["seeds"]
    for s in summaries[1:]:
        if s["seeds"] != seeds:
            raise ValueError(
                f"compare: seed lists differ ({summaries[0]['scenario']}: {seeds} "
                f"vs {s['scenario']}: {s['seeds']})"
            )

    labels: list[str] = []
    for i, s in enumerate(summaries):
        label = s["scenario"]
        if label in labels:
            label = f"{label}#{i}"
        labels.append(label)

    metrics = {
        metric: [_metric_value(s, metric) for s in summaries] for metric in COMPARISON_METRICS
    }

    base = summaries[0]
    flags = []
    for label, cand in zip(labels[1:], summaries[1:]):
        reward_pairs = [
            (b["reward"]["aggregate"], c["reward"]["aggregate"])
            for b, c in zip(base["per_seed"], cand["per_seed"])
        ]
        std_pairs = [
            (b["price"]["std"], c["price"]["std"])
            for b, c in zip(base["per_seed"], cand["per_seed"])
        ]
        ratio_pairs = [
            (b["p2p_ratio"], c["p2p_ratio"])
            for b, c in zip(base["per_seed"], cand["per_seed"])
        ]
        gap = cand["reward_aggregate_mean"] - base["reward_aggregate_mean"]
        flags.append(
            {
                "baseline": labels[0],
                "candidate": label,
                "reward_gap": gap,
                "reward_gap_sign": (gap > 0) - (gap < 0),
                "reward_higher_fraction": _fraction(reward_pairs, lambda b, c: c > b),
                "price_std_lower_fraction": _fraction(std_pairs, lambda b, c: c < b),
                "p2p_ratio_higher_fraction": _fraction(ratio_pairs, lambda b, c: c > b),
                "dso_role_baseline": base["dso_role"],
                "dso_role_candidate": cand["dso_role"],
                "dso_role_reversed": {base["dso_role"], cand["dso_role"]} == {"seller", "buyer"},
                "battery_ratio_delta": cand["battery_ratio_mean"] - base["battery_ratio_mean"],
            }
        )
    return {"scenarios": labels, "seeds": seeds, "metrics": metrics, "flags": flags}


def comparison_csv(comparison: dict[str, Any], timestamp: bool = True) -> str:
    rows = [
        (metric, *comparison["metrics"][metric]) for metric in COMPARISON_METRICS
    ]
    return _csv_text(("metric", *comparison["scenarios"]), rows, timestamp)


def comparison_text(comparison: dict[str, Any]) -> str:
    labels = comparison["scenarios"]
    width = max(len(m) for m in COMPARISON_METRICS)
    col = max(18, max(len(s) for s in labels) + 2)
    lines = [" " * width + "".join(label.rjust(col) for label in labels)]
    for metric in COMPARISON_METRICS:
        cells = []
        for value in comparison["metrics"][metric]:
            cells.append((f"{value:.4f}" if isinstance(value, float) else str(value)).rjust(col))
        lines.append(metric.ljust(width) + "".join(cells))
    for flag in comparison["flags"]:
        lines.append("")
        lines.append(f"{flag['candidate']} vs {flag['baseline']}:")
        lines.append(
            f"  reward gap {flag['reward_gap']:+.4f} "
            f"(higher in {flag['reward_higher_fraction']:.0%} of seeds)"
        )
        lines.append(
            f"  price std lower in {flag['price_std_lower_fraction']:.0%} of seeds; "
            f"p2p ratio higher in {flag['p2p_ratio_higher_fraction']:.0%}"
        )
        lines.append(
            f"  dso role: {flag['dso_role_baseline']} -> {flag['dso_role_candidate']}"
            + (" (reversed)" if flag["dso_role_reversed"] else "")
        )
    return "\n".join(lines) + "\n"


def write_comparison(comparison: dict[str, Any], out_dir: Path, timestamp: bool = True) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_atomic(out_dir / "comparison.csv", comparison_csv(comparison, timestamp))
    _write_atomic(
        out_dir / "comparison.json", json.dumps(comparison, indent=2, sort_keys=True) + "\n"
    )
    _write_atomic(out_dir / "comparison.txt", comparison_text(comparison))

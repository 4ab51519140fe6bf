"""Distribution grid as a weighted graph: distances, flows, congestion, zones.

No power-flow solving happens here. Electrical distance is shortest-path
length, per-edge capacity is allocated inversely to edge length, and
congestion is flow over capacity. Flows are per-period utilization and
reset at the start of every trading period.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

import numpy as np

if TYPE_CHECKING:
    from .agents import AgentState
    from .market import Trade

Edge = tuple[int, int]

PROCEDURAL_KINDS = ("mesh", "ring", "line")
FIXTURE_KINDS = ("ieee13", "ieee34")


def _edge_key(u: int, v: int) -> Edge:
    return (u, v) if u <= v else (v, u)


@dataclass
class GridState:
    """Topology plus per-period flow state.

    edges maps canonical (u, v) with u < v to an index into the length,
    capacity, and flow arrays. agent_nodes places each agent id on a node;
    the DSO sits on dso_node. The shortest-path cache is keyed on topology
    only, so copies that differ in flows may share it.
    """

    nodes: tuple[int, ...]
    edges: dict[Edge, int]
    lengths: np.ndarray
    capacities: np.ndarray
    flows: np.ndarray
    zones: dict[int, int]
    agent_nodes: dict[int, int]
    total_capacity: float
    loss_factor: float
    dso_node: int = 0
    _adjacency: dict[int, tuple[tuple[int, float], ...]] = field(default_factory=dict, repr=False)
    _path_cache: dict[int, dict[int, tuple[float, tuple[int, ...]]]] = field(
        default_factory=dict, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        if not self._adjacency:
            adj: dict[int, list[tuple[int, float]]] = {n: [] for n in self.nodes}
            for (u, v), idx in self.edges.items():
                adj[u].append((v, float(self.lengths[idx])))
                adj[v].append((u, float(self.lengths[idx])))
            self._adjacency = {n: tuple(sorted(neigh)) for n, neigh in adj.items()}

    def edge_flow(self, u: int, v: int) -> float:
        return float(self.flows[self.edges[_edge_key(u, v)]])

    def edge_capacity(self, u: int, v: int) -> float:
        return float(self.capacities[self.edges[_edge_key(u, v)]])

    def node_of(self, agent_id: int) -> int:
        return self.agent_nodes[agent_id]


def _check_connected(nodes: Sequence[int], adjacency: Mapping[int, Iterable[tuple[int, float]]]) -> bool:
    if not nodes:
        return False
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        u = stack.pop()
        for v, _ in adjacency[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(nodes)


def _allocate_capacities(lengths: np.ndarray, total_capacity: float) -> np.ndarray:
    # Shorter (lower-impedance) edges get more capacity; the best edge
    # carries exactly the nominal grid capacity.
    inv = 1.0 / lengths
    return total_capacity * inv / inv.max()


def _procedural_edges(kind: str, n: int) -> list[tuple[int, int]]:
    if kind == "line":
        return [(i, i + 1) for i in range(n - 1)]
    if kind == "ring":
        if n == 2:
            return [(0, 1)]
        return [(i, (i + 1) % n) for i in range(n)]
    if kind == "mesh":
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    raise ValueError(f"unknown procedural topology {kind!r}")


def _fixture_rows(kind: str) -> list[tuple[int, int, float]]:
    ref = resources.files("lemsim.fixtures").joinpath(f"{kind}.csv")
    with ref.open("r") as fh:
        return _parse_edge_rows(fh)


def _parse_edge_rows(fh: Iterable[str]) -> list[tuple[int, int, float]]:
    rows: list[tuple[int, int, float]] = []
    reader = csv.reader(line for line in fh if line.strip() and not line.startswith("#"))
    header = next(reader)
    if [h.strip() for h in header] != ["u", "v", "length"]:
        raise ValueError("topology csv: expected header 'u,v,length'")
    for row in reader:
        u, v, length = int(row[0]), int(row[1]), float(row[2])
        if length <= 0:
            raise ValueError(f"topology csv: edge ({u},{v}) must have positive length")
        rows.append((u, v, length))
    return rows


def _contiguous_zones(
    nodes: Sequence[int], adjacency: Mapping[int, Iterable[tuple[int, float]]], n_zones: int
) -> dict[int, int]:
    """Peel connected chunks off the graph until every node has a zone.

    Each zone is connected by construction. If peeling disconnects the
    remainder the zone count can exceed the request; the partition
    invariant is kept over the exact count.
    """
    unassigned = set(nodes)
    zones: dict[int, int] = {}
    zone_id = 0
    while unassigned:
        remaining_zones = max(1, n_zones - zone_id)
        target = -(-len(unassigned) // remaining_zones)  # ceil division
        start = min(unassigned)
        chunk = [start]
        seen = {start}
        queue = [start]
        while queue and len(chunk) < target:
            u = queue.pop(0)
            for v, _ in adjacency[u]:
                if v in unassigned and v not in seen and len(chunk) < target:
                    seen.add(v)
                    chunk.append(v)
                    queue.append(v)
        for n in chunk:
            zones[n] = zone_id
            unassigned.discard(n)
        zone_id += 1
    return zones


def build_topology(
    kind: str,
    n_agents: int,
    total_capacity: float,
    *,
    loss_factor: float = 0.01,
    edge_lengths: Mapping[Edge, float] | None = None,
    n_zones: int = 1,
    zone_map: Mapping[int, int] | None = None,
    dso_node: int = 0,
) -> GridState:
    """Construct a connected grid and place agents on nodes round-robin.

    Procedural kinds (mesh, ring, line) build one node per agent with unit
    edge lengths unless edge_lengths overrides them. Fixture kinds load
    the stored feeder adjacency; n_agents may not exceed its node count.
    """
    if n_agents < 2:
        raise ValueError("build_topology: need at least 2 agents")
    if total_capacity <= 0:
        raise ValueError("build_topology: total_capacity must be > 0")
    if loss_factor < 0:
        raise ValueError("build_topology: loss_factor must be >= 0")

    if kind in PROCEDURAL_KINDS:
        raw = [(u, v, 1.0) for u, v in _procedural_edges(kind, n_agents)]
        node_list = list(range(n_agents))
    elif kind in FIXTURE_KINDS:
        raw = _fixture_rows(kind)
        node_list = sorted({u for u, _, _ in raw} | {v for _, v, _ in raw})
        if n_agents > len(node_list):
            raise ValueError(
                f"build_topology: {kind} has {len(node_list)} nodes, cannot place {n_agents} agents"
            )
    else:
        raise ValueError(f"build_topology: unknown topology kind {kind!r}")

    edges: dict[Edge, int] = {}
    lengths: list[float] = []
    for u, v, length in raw:
        key = _edge_key(u, v)
        if key in edges:
            raise ValueError(f"build_topology: duplicate edge {key}")
        if edge_lengths and key in edge_lengths:
            length = float(edge_lengths[key])
            if length <= 0:
                raise ValueError(f"build_topology: override for edge {key} must be positive")
        edges[key] = len(lengths)
        lengths.append(length)

    length_arr = np.asarray(lengths, dtype=float)
    grid = GridState(
        nodes=tuple(node_list),
        edges=edges,
        lengths=length_arr,
        capacities=_allocate_capacities(length_arr, total_capacity),
        flows=np.zeros(len(lengths)),
        zones={},
        agent_nodes={i: node_list[i % len(node_list)] for i in range(n_agents)},
        total_capacity=float(total_capacity),
        loss_factor=float(loss_factor),
        dso_node=dso_node,
    )
    if not _check_connected(grid.nodes, grid._adjacency):
        raise ValueError("build_topology: graph is not connected")
    if dso_node not in grid.nodes:
        raise ValueError(f"build_topology: dso_node {dso_node} not in graph")

    if zone_map is not None:
        zones = dict(zone_map)
        validate_zones(grid, zones)
    else:
        zones = _contiguous_zones(grid.nodes, grid._adjacency, max(1, n_zones))
    grid.zones = zones
    return grid


def validate_zones(grid: GridState, zones: Mapping[int, int]) -> None:
    """Require a partition of all nodes into connected subgraphs."""
    if set(zones) != set(grid.nodes):
        raise ValueError("zones: must assign every node exactly once")
    by_zone: dict[int, list[int]] = {}
    for node, z in zones.items():
        by_zone.setdefault(z, []).append(node)
    for z, members in by_zone.items():
        member_set = set(members)
        seen = {members[0]}
        stack = [members[0]]
        while stack:
            u = stack.pop()
            for v, _ in grid._adjacency[u]:
                if v in member_set and v not in seen:
                    seen.add(v)
                    stack.append(v)
        if seen != member_set:
            raise ValueError(f"zones: zone {z} is not a connected subgraph")


def shortest_path(grid: GridState, source: int, target: int) -> tuple[float, tuple[int, ...]]:
    """Shortest path between nodes; ties broken by smallest node-id sequence."""
    cache = grid._path_cache.get(source)
    if cache is None:
        cache = _dijkstra(grid, source)
        grid._path_cache[source] = cache
    return cache[target]


def _dijkstra(grid: GridState, source: int) -> dict[int, tuple[float, tuple[int, ...]]]:
    # Heap entries carry the whole path so equal-distance candidates pop
    # in lexicographic node-id order; edge lengths are strictly positive,
    # which makes the first pop per node the canonical shortest path.
    settled: dict[int, tuple[float, tuple[int, ...]]] = {}
    heap: list[tuple[float, tuple[int, ...]]] = [(0.0, (source,))]
    while heap:
        dist, path = heapq.heappop(heap)
        node = path[-1]
        if node in settled:
            continue
        settled[node] = (dist, path)
        for neighbor, length in grid._adjacency[node]:
            if neighbor not in settled:
                heapq.heappush(heap, (dist + length, path + (neighbor,)))
    return settled


def electrical_distance(grid: GridState, i: int, j: int) -> float:
    """Shortest-path length between two agents' nodes; 0 when co-located."""
    return shortest_path(grid, grid.node_of(i), grid.node_of(j))[0]


def transmission_loss(d_ij: float, q_ij: float, kappa: float) -> float:
    """Distance-proportional loss d*q*kappa, never more than the quantity itself."""
    return min(d_ij * q_ij * kappa, q_ij)


def _trade_endpoints(grid: GridState, trade: "Trade") -> tuple[int, int]:
    buyer_node = grid.dso_node if trade.buyer_is_dso else grid.node_of(trade.buyer)
    seller_node = grid.dso_node if trade.seller_is_dso else grid.node_of(trade.seller)
    return buyer_node, seller_node


def apply_trade_flow(grid: GridState, trade: "Trade") -> GridState:
    """Increment flow by the trade quantity on every shortest-path edge."""
    buyer_node, seller_node = _trade_endpoints(grid, trade)
    if buyer_node == seller_node:
        return grid
    _, path = shortest_path(grid, seller_node, buyer_node)
    flows = grid.flows.copy()
    for u, v in zip(path, path[1:]):
        flows[grid.edges[_edge_key(u, v)]] += trade.quantity
    return replace(grid, flows=flows, _adjacency=grid._adjacency, _path_cache=grid._path_cache)


def trade_distance(grid: GridState, trade: "Trade") -> float:
    """Electrical distance between a trade's endpoints (DSO at its node)."""
    buyer_node, seller_node = _trade_endpoints(grid, trade)
    return shortest_path(grid, seller_node, buyer_node)[0]


def congestion(grid: GridState) -> tuple[dict[Edge, float], float]:
    """Per-edge utilization F_e/C_e clamped to [0, 1], and the edge average."""
    ratios = np.clip(grid.flows / grid.capacities, 0.0, 1.0)
    per_edge = {edge: float(ratios[idx]) for edge, idx in grid.edges.items()}
    return per_edge, float(ratios.mean())


def reset_flows(grid: GridState) -> GridState:
    return replace(
        grid, flows=np.zeros_like(grid.flows), _adjacency=grid._adjacency, _path_cache=grid._path_cache
    )


def grid_balance(agents: Iterable["AgentState"], t: int) -> float:
    """Sum of all agents' net positions (G - D + bought - sold) at period t."""
    from .agents import energy_balance

    return sum(energy_balance(agent, t) for agent in agents)


def same_zone_nodes(grid: GridState, u: int, v: int) -> bool:
    return grid.zones[u] == grid.zones[v]


def same_zone(grid: GridState, i: int, j: int) -> bool:
    """True iff two agents' nodes share a zone."""
    return same_zone_nodes(grid, grid.node_of(i), grid.node_of(j))


def load_topology_csv(path: str) -> list[tuple[int, int, float]]:
    """Read a u,v,length edge list; comment lines start with '#'."""
    with open(path, newline="") as fh:
        return _parse_edge_rows(fh)


def load_zones_csv(path: str) -> dict[int, int]:
    """Read a node,zone assignment file."""
    zones: dict[int, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if line.strip() and not line.startswith("#"))
        header = next(reader)
        if [h.strip() for h in header] != ["node", "zone"]:
            raise ValueError("zone csv: expected header 'node,zone'")
        for row in reader:
            node = int(row[0])
            if node in zones:
                raise ValueError(f"zone csv: node {node} assigned twice")
            zones[node] = int(row[1])
    return zones

"""Topology construction, shortest paths, flows, congestion, and zones."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lemsim.agents import energy_balance
from lemsim.grid import (
    GridState,
    apply_trade_flow,
    build_topology,
    congestion,
    electrical_distance,
    grid_balance,
    load_topology_csv,
    load_zones_csv,
    reset_flows,
    same_zone,
    shortest_path,
    trade_distance,
    transmission_loss,
    validate_zones,
)
from lemsim.market import DSO_ID, STAGE_AUCTION, STAGE_DSO, Trade

from conftest import make_agent


def p2p(buyer, seller, quantity=10.0):
    return Trade(buyer=buyer, seller=seller, price=100.0, quantity=quantity, stage=STAGE_AUCTION, period=0)


class TestBuildTopology:
    def test_line_shape(self):
        g = build_topology("line", 3, 1200.0)
        assert g.nodes == (0, 1, 2)
        assert set(g.edges) == {(0, 1), (1, 2)}

    def test_ring_shape(self):
        g = build_topology("ring", 4, 1200.0)
        assert set(g.edges) == {(0, 1), (1, 2), (2, 3), (0, 3)}

    def test_mesh_is_complete(self):
        g = build_topology("mesh", 5, 1200.0)
        assert len(g.edges) == 10

    def test_fixture_feeders(self):
        g13 = build_topology("ieee13", 7, 1200.0)
        g34 = build_topology("ieee34", 7, 1200.0)
        assert len(g13.nodes) == 13 and len(g13.edges) == 12
        assert len(g34.nodes) == 34 and len(g34.edges) == 33

    def test_fixture_agent_overflow(self):
        with pytest.raises(ValueError, match="cannot place"):
            build_topology("ieee13", 50, 1200.0)

    def test_agents_round_robin_on_fixture(self):
        g = build_topology("ieee13", 15, 1200.0)
        assert g.agent_nodes[13] == g.nodes[0]
        assert g.agent_nodes[14] == g.nodes[1]

    def test_capacity_tracks_inverse_length(self):
        g = build_topology("line", 3, 1200.0, edge_lengths={(0, 1): 1.0, (1, 2): 2.0})
        assert g.edge_capacity(0, 1) == pytest.approx(1200.0)
        assert g.edge_capacity(1, 2) == pytest.approx(600.0)

    def test_validation(self):
        with pytest.raises(ValueError, match="at least 2"):
            build_topology("mesh", 1, 1200.0)
        with pytest.raises(ValueError, match="total_capacity"):
            build_topology("mesh", 3, 0.0)
        with pytest.raises(ValueError, match="loss_factor"):
            build_topology("mesh", 3, 1200.0, loss_factor=-0.1)
        with pytest.raises(ValueError, match="unknown topology"):
            build_topology("star", 3, 1200.0)
        with pytest.raises(ValueError, match="must be positive"):
            build_topology("line", 3, 1200.0, edge_lengths={(0, 1): 0.0})
        with pytest.raises(ValueError, match="dso_node"):
            build_topology("line", 3, 1200.0, dso_node=9)


class TestShortestPath:
    def test_line_distance_sums_edges(self):
        g = build_topology("line", 3, 1200.0)
        assert electrical_distance(g, 0, 2) == pytest.approx(2.0)

    def test_self_distance_zero(self):
        g = build_topology("ring", 4, 1200.0)
        assert electrical_distance(g, 1, 1) == 0.0

    def test_adjacent_custom_length(self):
        g = build_topology("line", 3, 1200.0, edge_lengths={(0, 1): 1.5})
        assert electrical_distance(g, 0, 1) == pytest.approx(1.5)

    def test_ring_tie_prefers_lowest_ids(self):
        # 0 -> 2 on a 4-ring: (0,1,2) and (0,3,2) both cost 2
        g = build_topology("ring", 4, 1200.0)
        dist, path = shortest_path(g, 0, 2)
        assert dist == pytest.approx(2.0)
        assert path == (0, 1, 2)

    def test_symmetric(self):
        g = build_topology("ieee34", 7, 1200.0)
        assert electrical_distance(g, 0, 6) == electrical_distance(g, 6, 0)

    @given(
        n=st.integers(4, 10),
        seed=st.integers(0, 2**31 - 1),
    )
    @settings(max_examples=40, deadline=None)
    def test_matches_floyd_warshall(self, n, seed):
        rng = np.random.default_rng(seed)
        lengths = {
            (i, j): float(rng.uniform(0.5, 4.0)) for i in range(n) for j in range(i + 1, n)
        }
        g = build_topology("mesh", n, 1200.0, edge_lengths=lengths)
        dist = np.full((n, n), np.inf)
        np.fill_diagonal(dist, 0.0)
        for (i, j), length in lengths.items():
            dist[i, j] = dist[j, i] = length
        for k in range(n):
            dist = np.minimum(dist, dist[:, [k]] + dist[[k], :])
        for i in range(n):
            for j in range(n):
                assert electrical_distance(g, i, j) == pytest.approx(dist[i, j])


class TestFlows:
    def test_loss_formula(self):
        assert transmission_loss(2.0, 10.0, 0.01) == pytest.approx(0.2)
        assert transmission_loss(2.0, 10.0, 0.0) == 0.0
        # losses can never exceed the energy shipped
        assert transmission_loss(1000.0, 5.0, 1.0) == 5.0

    def test_colocated_trade_moves_nothing(self):
        g = build_topology("line", 3, 1200.0, dso_node=0)
        dso_trade = Trade(buyer=DSO_ID, seller=0, price=50.0, quantity=10.0, stage=STAGE_DSO, period=0)
        after = apply_trade_flow(g, dso_trade)
        assert np.all(after.flows == 0.0)
        assert trade_distance(g, dso_trade) == 0.0

    def test_line_trade_loads_every_path_edge(self):
        g = build_topology("line", 3, 1200.0)
        after = apply_trade_flow(g, p2p(buyer=2, seller=0, quantity=10.0))
        assert after.edge_flow(0, 1) == 10.0
        assert after.edge_flow(1, 2) == 10.0

    def test_flows_accumulate(self):
        g = build_topology("line", 4, 1200.0)
        for tr in (p2p(1, 0, 5.0), p2p(3, 0, 2.0), p2p(2, 3, 4.0)):
            g = apply_trade_flow(g, tr)
        assert g.edge_flow(0, 1) == pytest.approx(7.0)
        assert g.edge_flow(1, 2) == pytest.approx(2.0)
        assert g.edge_flow(2, 3) == pytest.approx(6.0)

    def test_original_grid_untouched(self):
        g = build_topology("line", 3, 1200.0)
        apply_trade_flow(g, p2p(2, 0))
        assert np.all(g.flows == 0.0)

    def test_reset_flows(self):
        g = apply_trade_flow(build_topology("line", 3, 1200.0), p2p(2, 0))
        assert np.all(reset_flows(g).flows == 0.0)


class TestCongestion:
    def test_idle_grid(self):
        per_edge, mean = congestion(build_topology("line", 3, 1200.0))
        assert mean == 0.0
        assert all(v == 0.0 for v in per_edge.values())

    def test_single_edge_ratio(self):
        g = build_topology("line", 2, 1200.0)
        g.flows[0] = 960.0
        per_edge, mean = congestion(g)
        assert per_edge[(0, 1)] == pytest.approx(0.8)
        assert mean == pytest.approx(0.8)

    def test_mean_over_edges(self):
        g = build_topology("line", 3, 1200.0)  # both unit edges carry 1200 capacity
        g.flows[:] = (240.0, 720.0)
        _, mean = congestion(g)
        assert mean == pytest.approx(0.4)

    def test_overload_clamps_to_one(self):
        g = build_topology("line", 2, 1200.0)
        g.flows[0] = 5000.0
        per_edge, _ = congestion(g)
        assert per_edge[(0, 1)] == 1.0


class TestGridBalance:
    def test_net_positions_sum(self):
        agents = [make_agent(0, generation=10.0, demand=4.0), make_agent(1, generation=0.0, demand=6.0)]
        assert grid_balance(agents, 0) == pytest.approx(0.0)

    def test_surplus(self):
        agents = [make_agent(0, generation=10.0, demand=4.0), make_agent(1, generation=0.0, demand=4.0)]
        assert grid_balance(agents, 0) == pytest.approx(2.0)

    def test_closed_p2p_leaves_balance_unchanged(self):
        a = make_agent(0, generation=10.0, demand=4.0)
        b = make_agent(1, generation=0.0, demand=6.0)
        before = grid_balance([a, b], 0)
        a.energy_sold[0] += 5.0
        b.energy_bought[0] += 5.0
        assert grid_balance([a, b], 0) == pytest.approx(before)
        assert energy_balance(a, 0) == pytest.approx(1.0)


class TestZones:
    def test_default_single_zone(self):
        g = build_topology("mesh", 5, 1200.0)
        assert set(g.zones.values()) == {0}
        assert same_zone(g, 0, 4)

    def test_line_split_in_two(self):
        g = build_topology("line", 4, 1200.0, n_zones=2)
        assert g.zones == {0: 0, 1: 0, 2: 1, 3: 1}
        assert same_zone(g, 0, 1)
        assert not same_zone(g, 1, 2)

    def test_self_always_same_zone(self):
        g = build_topology("line", 4, 1200.0, n_zones=4)
        assert same_zone(g, 2, 2)

    @given(
        kind=st.sampled_from(["line", "ring", "mesh"]),
        n=st.integers(2, 12),
        n_zones=st.integers(1, 5),
    )
    @settings(max_examples=60, deadline=None)
    def test_partition_is_valid(self, kind, n, n_zones):
        g = build_topology(kind, n, 1200.0, n_zones=n_zones)
        assert set(g.zones) == set(g.nodes)
        validate_zones(g, g.zones)  # connectivity of every zone

    def test_explicit_zone_map_checked(self):
        with pytest.raises(ValueError, match="every node"):
            build_topology("line", 4, 1200.0, zone_map={0: 0, 1: 0})
        with pytest.raises(ValueError, match="not a connected"):
            build_topology("line", 4, 1200.0, zone_map={0: 0, 1: 1, 2: 0, 3: 1})
        g = build_topology("line", 4, 1200.0, zone_map={0: 0, 1: 0, 2: 0, 3: 1})
        assert not same_zone(g, 2, 3)


class TestCsvLoaders:
    def test_topology_round_trip(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("# comment\nu,v,length\n0,1,1.5\n1,2,2.5\n")
        rows = load_topology_csv(str(path))
        assert rows == [(0, 1, 1.5), (1, 2, 2.5)]

    def test_topology_bad_header(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("a,b,c\n0,1,1.0\n")
        with pytest.raises(ValueError, match="expected header"):
            load_topology_csv(str(path))

    def test_topology_nonpositive_length(self, tmp_path):
        path = tmp_path / "edges.csv"
        path.write_text("u,v,length\n0,1,0.0\n")
        with pytest.raises(ValueError, match="positive length"):
            load_topology_csv(str(path))

    def test_zones_round_trip(self, tmp_path):
        path = tmp_path / "zones.csv"
        path.write_text("node,zone\n0,0\n1,0\n2,1\n")
        assert load_zones_csv(str(path)) == {0: 0, 1: 0, 2: 1}

    def test_zones_duplicate_node(self, tmp_path):
        path = tmp_path / "zones.csv"
        path.write_text("node,zone\n0,0\n0,1\n")
        with pytest.raises(ValueError, match="assigned twice"):
            load_zones_csv(str(path))

    def test_zones_bad_header(self, tmp_path):
        path = tmp_path / "zones.csv"
        path.write_text("n,z\n0,0\n")
        with pytest.raises(ValueError, match="expected header"):
            load_zones_csv(str(path))

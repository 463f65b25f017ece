import numpy as np
import pytest

from ehdfl.topology import (build_topology, from_edges, k_hop_set,
                            load_edge_list, save_edge_list)


@pytest.mark.parametrize("kind,m", [("ring", 8), ("complete", 3), ("line", 5)])
def test_mixing_is_symmetric_doubly_stochastic(kind, m):
    topo = build_topology(kind, m)
    a = topo.mixing
    assert np.allclose(a, a.T)
    assert np.allclose(a.sum(axis=1), 1.0)
    assert (a >= 0).all()
    assert 0.0 <= topo.lam < 1.0


def test_ring_structure():
    topo = build_topology("ring", 6)
    assert topo.n_edges == 6
    assert all(topo.degree(i) == 2 for i in range(6))
    assert topo.diameter == 3


def test_complete_has_all_pairs():
    topo = build_topology("complete", 4)
    assert topo.n_edges == 6
    assert topo.diameter == 1


def test_line_endpoints():
    topo = build_topology("line", 4)
    assert topo.degree(0) == 1 and topo.degree(3) == 1
    assert topo.diameter == 3


def test_k_hop_sets_grow_to_everything():
    topo = build_topology("ring", 8)
    sets = [k_hop_set(topo.neighbors, 0, h) for h in range(5)]
    assert sets[0] == (0,)
    assert set(sets[1]) == {7, 0, 1}
    for a, b in zip(sets, sets[1:]):
        assert set(a) <= set(b)
    assert len(sets[4]) == 8


def test_two_hop_matches_k_hop():
    topo = build_topology("ring", 8)
    for i in range(8):
        assert tuple(topo.two_hop[i]) == k_hop_set(topo.neighbors, i, 2)


def test_random_geometric_connected_and_seeded():
    a = build_topology("random_geometric", 10, seed=3)
    b = build_topology("random_geometric", 10, seed=3)
    assert a.edges == b.edges
    assert a.lam < 1.0


def test_disconnected_edge_list_rejected():
    with pytest.raises(ValueError):
        from_edges(4, [(0, 1), (2, 3)])


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        build_topology("star", 4)


def test_edge_list_round_trip(tmp_path):
    topo = build_topology("ring", 5)
    save_edge_list(topo, tmp_path / "edges.txt")
    back = load_edge_list(tmp_path / "edges.txt")
    assert back.edges == topo.edges
    assert np.allclose(back.mixing, topo.mixing)

import numpy as np
import pytest

from oracles import betweenness_by_paths, map_equation_loops, modularity_loops, pagerank_flow
from resmob.network.communities import (edge_betweenness, edge_betweenness_communities,
                                        flow_matrix, map_equation, map_equation_communities,
                                        weighted_modularity)
from resmob.network.graph import MobilityNetwork


def two_triangles(bridge=1.0, inner=3.0):
    w = np.zeros((6, 6))
    for block in ((0, 1, 2), (3, 4, 5)):
        for i in block:
            for j in block:
                if i != j:
                    w[i, j] = inner
    w[2, 3] = w[3, 2] = bridge
    return MobilityNetwork([f"n{i}" for i in range(6)], w)


def random_weights(rng, n, density=0.5, integer=False):
    w = rng.uniform(0.5, 5.0, (n, n)) * (rng.uniform(size=(n, n)) < density)
    if integer:
        w = np.round(w)
    np.fill_diagonal(w, 0.0)
    return w


def test_two_triangles_recovered():
    res = edge_betweenness_communities(two_triangles())
    assert res.partition.groups() == [["n0", "n1", "n2"], ["n3", "n4", "n5"]]
    assert res.removed_edges[0][:2] in {("n2", "n3"), ("n3", "n2")}
    assert res.modularity == pytest.approx(modularity_loops(two_triangles().weights,
                                                            [0, 0, 0, 1, 1, 1]))


def test_betweenness_matches_path_enumeration(rng):
    for n in (4, 5, 6, 7, 8):
        for integer in (False, True):
            w = random_weights(rng, n, integer=integer)
            got = edge_betweenness(w)
            want = betweenness_by_paths(w)
            assert got.keys() == want.keys()
            for e in want:
                assert got[e] == pytest.approx(want[e], abs=1e-9)


def test_betweenness_path_graph_by_hand():
    w = np.zeros((3, 3))
    w[0, 1] = w[1, 2] = 1.0
    eb = edge_betweenness(w)
    assert eb == {(0, 1): 2.0, (1, 2): 2.0}


def test_modularity_matches_loops(rng):
    for _ in range(10):
        w = random_weights(rng, 7)
        labels = rng.integers(0, 3, 7)
        assert weighted_modularity(w, labels) == pytest.approx(modularity_loops(w, labels), abs=1e-12)


def test_flow_matrix_matches_loop_oracle(rng):
    w = random_weights(rng, 6)
    w[2] = 0.0   # a dangling node
    p, flow = flow_matrix(w)
    p_ref, flow_ref = pagerank_flow(w)
    assert p == pytest.approx(p_ref, abs=1e-10)
    assert flow == pytest.approx(np.array(flow_ref), abs=1e-10)
    assert flow.sum() == pytest.approx(1.0)


def test_map_equation_matches_loop_formula(rng):
    for _ in range(10):
        w = random_weights(rng, 7)
        p, flow = flow_matrix(w)
        labels = rng.integers(0, 3, 7)
        assert map_equation(p, flow, labels) == pytest.approx(
            map_equation_loops(p, flow.tolist(), list(labels)), abs=1e-10)


def test_one_module_codelength_is_node_entropy(rng):
    w = random_weights(rng, 6)
    p, flow = flow_matrix(w)
    entropy = -np.sum(p * np.log2(p))
    assert map_equation(p, flow, np.zeros(6, dtype=int)) == pytest.approx(entropy)


def test_map_equation_finds_two_dense_blocks():
    res = map_equation_communities(two_triangles(bridge=0.2, inner=10.0), seed=1)
    assert res.partition.groups() == [["n0", "n1", "n2"], ["n3", "n4", "n5"]]
    assert res.codelength < res.one_module_codelength
    assert all(a >= b - 1e-12 for a, b in zip(res.trace, res.trace[1:]))


def test_map_equation_deterministic_for_seed(rng):
    net = MobilityNetwork([f"n{i}" for i in range(12)], random_weights(rng, 12, 0.3))
    a = map_equation_communities(net, seed=7)
    b = map_equation_communities(net, seed=7)
    assert a.partition.labels == b.partition.labels and a.codelength == b.codelength


def test_map_equation_never_worse_than_one_module(rng):
    for _ in range(5):
        net = MobilityNetwork([f"n{i}" for i in range(10)], random_weights(rng, 10, 0.4))
        res = map_equation_communities(net, seed=0)
        assert res.codelength <= res.one_module_codelength + 1e-12
        p, flow = flow_matrix(net.weights)
        assert res.codelength == pytest.approx(map_equation(p, flow, res.partition.labels))

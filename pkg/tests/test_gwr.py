import json
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sstrl.gwr import (ACTION_NET_PARAMS, BEHAVIOR_NET_PARAMS, INTENTION_NET_PARAMS, GwrNetwork,
                       GwrParams, activity)


def net_with(weights, params=ACTION_NET_PARAMS, h=None):
    """Network whose nodes are set by hand (ids 0..n-1)."""
    w = np.asarray(weights, dtype=np.float32)
    net = GwrNetwork(w.shape[1], params, seed=0, low=0.0, high=1.0)
    net.W = w.copy()
    net.ids = list(range(len(w)))
    net.h = np.full(len(w), params.h0 if h is None else h, dtype=np.float32)
    net.t_c = np.zeros(len(w), dtype=np.int64)
    net.t_n = np.zeros(len(w), dtype=np.int64)
    net.next_id = len(w)
    return net


def test_parameter_tables():
    a, i, b = ACTION_NET_PARAMS, INTENTION_NET_PARAMS, BEHAVIOR_NET_PARAMS
    assert (a.activity_threshold, a.habituation_threshold, a.eps_c, a.eps_n, a.tau_c, a.tau_n, a.max_age) == \
        (0.7, 0.2, 0.1, 0.05, 0.5, 2.0, 80)
    assert (i.activity_threshold, i.habituation_threshold, i.eps_c, i.eps_n, i.tau_c, i.tau_n, i.max_age) == \
        (0.9, 0.3, 0.1, 0.01, 1.0, 2.7, 100)
    assert (b.activity_threshold, b.habituation_threshold, b.eps_c, b.eps_n, b.tau_c, b.tau_n, b.max_age) == \
        (0.8, 0.15, 0.1, 0.01, 3.3, 14.3, 90)
    for p in (a, i, b):
        assert p.h0 == 1.0 and p.alpha_c == p.alpha_n == 1.05


@pytest.mark.parametrize("kw", [dict(eps_c=0.01, eps_n=0.1), dict(activity_threshold=0.0),
                                dict(max_age=0), dict(eps_c=1.0)])
def test_invalid_params(kw):
    base = dict(activity_threshold=0.7, habituation_threshold=0.2, eps_c=0.1, eps_n=0.05)
    base.update(kw)
    with pytest.raises(ValueError):
        GwrParams(**base)


class TestInit:
    def test_two_nodes_no_edges(self):
        net = GwrNetwork(2, ACTION_NET_PARAMS, seed=5, low=0.0, high=1.0)
        assert len(net) == 2 and net.n_edges == 0
        assert np.all(net.h == 1.0)

    def test_seeded(self):
        a = GwrNetwork(3, ACTION_NET_PARAMS, seed=7, low=-1.0, high=1.0)
        b = GwrNetwork(3, ACTION_NET_PARAMS, seed=7, low=-1.0, high=1.0)
        assert np.array_equal(a.W, b.W)

    def test_anchor_on_first_stimulus(self):
        net = GwrNetwork(2, ACTION_NET_PARAMS, seed=1)
        z = np.array([10.0, -4.0])
        net.adapt(z)
        # both bootstrap nodes lie within 0.5 per dimension of the first input (before moving)
        assert np.all(np.abs(net.W - z) <= 0.5 + 1e-5)


class TestBmu:
    def test_identity(self):
        net = net_with([[0, 0], [1, 0], [0, 1]])
        r = net.find_bmus([1, 0])
        assert r.best == 1 and r.best_distance == 0.0

    def test_three_nodes(self):
        net = net_with([[0, 0], [1, 0], [0, 1]])
        r = net.find_bmus([0.9, 0])
        assert (r.best, r.second) == (1, 0)
        assert r.best_distance == pytest.approx(0.1, abs=1e-6)
        assert r.second_distance == pytest.approx(0.9, abs=1e-6)

    def test_tie_lowest_id(self):
        net = net_with([[1, 0], [-1, 0], [0, 5]])
        net.ids = [4, 2, 9]
        r = net.find_bmus([0, 0])
        assert (r.best, r.second) == (2, 4)

    def test_non_finite(self):
        net = net_with([[0, 0], [1, 0]])
        before = net.state_hash()
        with pytest.raises(ValueError):
            net.adapt([np.nan, 0])
        with pytest.raises(ValueError):
            net.find_bmus([np.inf, 0])
        assert net.state_hash() == before

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            net_with([[0, 0], [1, 0]]).find_bmus([1, 2, 3])


def test_activity_values():
    assert activity(0.0) == 1.0
    assert activity(math.log(2)) == pytest.approx(0.5)
    assert activity(0.35667) == pytest.approx(0.7, abs=1e-5)
    with pytest.raises(ValueError):
        activity(-1.0)


class TestAdapt:
    def test_zero_distance_no_move(self):
        net = net_with([[0.25, 0.5], [1, 1]], h=0.5)
        rep = net.adapt([0.25, 0.5])
        assert not rep.inserted and rep.activity == 1.0
        assert np.array_equal(net.weight(0), np.float32([0.25, 0.5]))

    def test_bmu_move(self):
        net = net_with([[0, 0], [5, 5]])
        rep = net.adapt([1, 0])
        assert not rep.inserted
        assert np.allclose(net.weight(0), [0.1, 0.0])

    def test_neighbor_move(self):
        net = net_with([[0, 0], [5, 5]])
        net.adapt([1, 0])  # creates edge 0-1 then moves both
        w1 = 5 + 0.05 * 1.0 * (np.array([1, 0]) - 5)
        assert np.allclose(net.weight(1), w1, atol=1e-6)

    def test_habituation_closed_form(self):
        expected = 1 - (1 - math.exp(-1.05 * 1 / 0.5)) / 1.05
        assert expected == pytest.approx(0.1642, abs=1e-4)
        assert ACTION_NET_PARAMS.habituation(1, "bmu") == pytest.approx(expected, abs=1e-12)
        net = net_with([[0, 0], [5, 5]])
        net.adapt([0.1, 0])
        assert net.habituation(0) == pytest.approx(expected, abs=1e-6)
        nb = 1 - (1 - math.exp(-1.05 / 2.0)) / 1.05
        assert net.habituation(1) == pytest.approx(nb, abs=1e-6)

    def test_insertion(self):
        net = net_with([[0, 0], [3, 0]], h=0.1)
        d = -math.log(0.6)
        rep = net.adapt([0, d])
        assert rep.inserted and rep.activity == pytest.approx(0.6, abs=1e-6)
        assert len(net) == 3 and rep.new_node_id == 2
        assert np.allclose(net.weight(2), [0, d / 2], atol=1e-6)
        assert (0, 1) not in net.edges
        assert net.neighbors(2) == [0, 1]
        assert net.habituation(2) == 1.0
        # steps 4-5 skipped: the BMU neither moved nor habituated further
        assert np.array_equal(net.weight(0), np.float32([0, 0]))
        assert net.habituation(0) == pytest.approx(0.1)

    def test_no_insertion_when_unhabituated(self):
        net = net_with([[0, 0], [3, 0]], h=1.0)
        assert not net.adapt([0, 2.0]).inserted

    def test_edge_ageing_and_pruning(self):
        p = GwrParams(0.7, 0.2, 0.1, 0.05, max_age=2)
        net = net_with([[0, 0], [1, 0], [10, 10], [10, 11]], params=p, h=1.0)
        net.edges = {(0, 1): 0, (2, 3): 0}
        for _ in range(3):
            net.adapt([10, 10])
        # edge 2-3 is refreshed to age 0 then aged each time: stays at 1
        assert net.edges[(2, 3)] == 1
        # edge 0-1 is never touched (not incident to the BMU)
        assert net.edges[(0, 1)] == 0

    def test_old_edge_removed_with_orphan(self):
        p = GwrParams(0.7, 0.2, 0.1, 0.05, max_age=1)
        net = net_with([[0, 0], [1, 0], [0.1, 0]], params=p)
        net.edges = {(0, 1): 1, (0, 2): 0}
        rep = net.adapt([0, 0])
        assert (0, 1) in rep.removed_edges
        assert 1 in rep.removed_nodes
        assert 1 not in net.ids

    def test_never_below_two_nodes(self):
        p = GwrParams(0.7, 0.2, 0.1, 0.05, max_age=1)
        net = net_with([[0, 0], [1, 0]], params=p)
        for _ in range(5):
            net.adapt([0, 0])
        assert len(net) == 2


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), kappa=st.integers(1, 20), spread=st.floats(0.1, 3.0))
def test_adapt_invariants(seed, kappa, spread):
    rng = np.random.default_rng(seed)
    p = GwrParams(0.7, 0.2, 0.1, 0.05, max_age=kappa)
    net = GwrNetwork(2, p, seed=seed)
    last_h = {}
    for _ in range(150):
        z = rng.normal(0, spread, size=2)
        before = dict(zip(net.ids, net.h.tolist()))
        c = net.find_bmus(z).best if net.anchor_pending is False else None
        rep = net.adapt(z)
        assert rep.inserted == (rep.activity < p.activity_threshold and rep.bmu_habituation < p.habituation_threshold)
        if c is not None:
            assert rep.bmu_id == c
        assert np.all((net.h >= 0) & (net.h <= 1))
        for i, h in zip(net.ids, net.h.tolist()):
            if i in before:
                assert h <= before[i] + 1e-7
        assert all(age <= kappa for age in net.edges.values())
        assert all(u != v for u, v in net.edges)
        if len(net) > 2:
            linked = {x for e in net.edges for x in e}
            assert set(net.ids) <= linked
        assert net.W.shape == (len(net), 2) and np.all(np.isfinite(net.W))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(1, 300))
def test_single_point_stream_bounded(seed, m):
    rng = np.random.default_rng(seed)
    z0 = rng.uniform(-1, 1, size=3)
    net = GwrNetwork(3, ACTION_NET_PARAMS, seed=seed)
    for _ in range(m):
        net.adapt(z0)
    assert len(net) <= 3


def four_cluster_run(seed=0):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    labels = rng.integers(0, 4, size=500)
    samples = centers[labels] + rng.normal(0, 0.05, size=(500, 2))
    net = GwrNetwork(2, ACTION_NET_PARAMS, seed=seed, low=samples.min(0), high=samples.max(0))
    for z in samples:
        net.adapt(z)
    means = np.array([samples[labels == k].mean(0) for k in range(4)])
    return net, centers, means


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_four_clusters(seed):
    t0 = time.time()
    net, centers, means = four_cluster_run(seed)
    assert len(net) >= 4
    for c, m in zip(centers, means):
        w = net.bmu_weight(c)
        assert np.linalg.norm(w - c) <= 0.2
        assert np.linalg.norm(w - m) <= 0.2
    assert time.time() - t0 < 60


class TestExport:
    def test_fresh(self):
        doc = GwrNetwork(4, INTENTION_NET_PARAMS, seed=0).to_document()
        assert len(doc["nodes"]) == 2 and doc["edges"] == []

    def test_round_trip_and_counts(self):
        rng = np.random.default_rng(3)
        net = GwrNetwork(3, BEHAVIOR_NET_PARAMS, seed=3)
        for _ in range(100):
            net.adapt(rng.normal(size=3))
        doc = json.loads(net.to_json())
        assert len(doc["nodes"]) == len(net) and len(doc["edges"]) == net.n_edges
        back = GwrNetwork.from_json(net.to_json())
        assert back.state_hash() == net.state_hash()
        # continued adaptation stays identical
        z = rng.normal(size=3)
        assert net.adapt(z) == back.adapt(z)
        assert back.state_hash() == net.state_hash()

    def test_dot(self):
        net = net_with([[0, 0], [1, 0]])
        net.adapt([0.2, 0])
        dot = net.to_dot("g")
        assert dot.startswith("graph g {") and "n0 -- n1" in dot

    def test_bad_version(self):
        doc = GwrNetwork(2, ACTION_NET_PARAMS).to_document()
        doc["version"] = 99
        with pytest.raises(ValueError):
            GwrNetwork.from_document(doc)

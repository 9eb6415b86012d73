import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedban import centralized as cen
from fedban import decentralized as dec
from fedban.environment import EnvConfig
from fedban.errors import Disconnected, ParseError
from fedban.privatizer import PrivacyBudget

from oracles import action_vectors, bfs_distances

BUDGET = PrivacyBudget(1.0, 0.1, 0.1)


@st.composite
def connected_graphs(draw, max_n=9):
    n = draw(st.integers(2, max_n))
    seed = draw(st.integers(0, 10**6))
    p = draw(st.floats(0.2, 0.9))
    g = nx.gnp_random_graph(n, p, seed=seed)
    # Chain the components together so the graph is connected.
    comps = [sorted(c) for c in nx.connected_components(g)]
    for a, b in zip(comps, comps[1:]):
        g.add_edge(a[0], b[0])
    return nx.to_numpy_array(g, nodelist=range(n), dtype=int).astype(bool)


def test_power_graph_line_example():
    out = dec.power_graph(dec.line_graph(5), 2)
    edges = {(i + 1, j + 1) for i in range(5) for j in range(i + 1, 5) if out[i, j]}
    assert edges == {(1, 2), (1, 3), (2, 3), (2, 4), (3, 4), (3, 5), (4, 5)}


@settings(max_examples=60, deadline=None)
@given(connected_graphs(), st.integers(1, 4))
def test_power_graph_matches_bfs(adj, gamma):
    dist = bfs_distances(adj)
    expect = (dist >= 1) & (dist <= gamma)
    assert np.array_equal(dec.power_graph(adj, gamma), expect)


def test_power_graph_trivial_cases():
    comp = dec.complete_graph(5)
    for gamma in (1, 2, 3):
        assert np.array_equal(dec.power_graph(comp, gamma), comp)
    ring = dec.ring_graph(7)
    diameter = int(bfs_distances(ring).max())
    assert np.array_equal(dec.power_graph(ring, diameter), dec.complete_graph(7))


def test_power_graph_disconnected():
    adj = np.zeros((3, 3), dtype=bool)
    adj[0, 1] = adj[1, 0] = True
    with pytest.raises(Disconnected):
        dec.power_graph(adj, 1)
    with pytest.raises(Disconnected):
        dec.Network(adj, 1)


def test_clique_cover_examples():
    assert dec.clique_cover_greedy(dec.power_graph(dec.complete_graph(6), 1)) == [tuple(range(6))]
    cover = dec.clique_cover_greedy(dec.power_graph(dec.line_graph(6), 2))
    assert cover == [(0, 1, 2), (3, 4, 5)]


@settings(max_examples=60, deadline=None)
@given(connected_graphs(), st.integers(1, 3))
def test_clique_cover_is_partition_of_cliques(adj, gamma):
    power = dec.power_graph(adj, gamma)
    cover = dec.clique_cover_greedy(power)
    members = sorted(v for c in cover for v in c)
    assert members == list(range(adj.shape[0]))
    for c in cover:
        for a in c:
            for b in c:
                assert a == b or power[a, b]


def test_subsample_index():
    assert dec.subsample_index(7, 3) == 1
    assert all(dec.subsample_index(t, 1) == 0 for t in range(1, 20))
    assert [dec.subsample_index(t, 4) for t in range(4, 12)] == [0, 1, 2, 3, 0, 1, 2, 3]
    with pytest.raises(ValueError):
        dec.subsample_index(3, 0)


def test_dec_sync_check_threshold():
    assert dec.dec_sync_check(np.array([0.0, 0.0]), np.array([5, 0]), 0.0, 1.0).all()
    assert not dec.dec_sync_check(np.array([1e9]), np.array([0]), math.inf, 1.0).any()
    # Doubling L shrinks the threshold by (1 + 1) / (1 + 4).
    gap, dt, D = np.array([0.45]), np.array([1]), 2.0
    assert not dec.dec_sync_check(gap, dt, D, 1.0)[0]  # threshold 0.5
    assert dec.dec_sync_check(gap, dt, D, 2.0)[0]  # threshold 0.2


def test_dec_sync_check_step_through():
    D, L = 3.0, 1.0
    gaps = [0.2, 0.35, 0.45, 0.5]
    fired = None
    for dt, gap in enumerate(gaps):
        # Hand oracle: D / ((dt+1)(1+L^2)) = 1.5, 0.75, 0.5, 0.375.
        if dec.dec_sync_check(np.array([gap]), np.array([dt]), D, L)[0]:
            fired = dt
            break
    assert fired == 3


def _deliveries(net, origin, t_sent, horizon):
    q = dec.MessageQueues(net)
    q.send(dec.Message(dec.SYNC_REQUEST, origin, 0, t_sent))
    got = {}
    for t in range(t_sent + 1, t_sent + horizon + 1):
        for agent, msgs in q.step(t).items():
            for _ in msgs:
                got.setdefault(agent, []).append(t)
    return got


def test_star_ttl_one():
    net = dec.Network(dec.star_graph(5), 1)
    got = _deliveries(net, 0, 10, 5)
    assert got == {v: [11] for v in range(1, 5)}
    got = _deliveries(net, 2, 10, 5)
    assert got == {0: [11]}


def test_line_ttl_three():
    net = dec.Network(dec.line_graph(5), 3)
    got = _deliveries(net, 0, 4, 6)
    assert got == {1: [5], 2: [6], 3: [7]}
    assert 4 not in got


@settings(max_examples=40, deadline=None)
@given(connected_graphs(), st.integers(1, 3), st.data())
def test_flooding_reaches_exactly_gamma_ball_once(adj, gamma, data):
    dist = bfs_distances(adj)
    gamma = min(gamma, max(int(dist.max()), 1))
    net = dec.Network(adj, gamma)
    origin = data.draw(st.integers(0, adj.shape[0] - 1))
    got = _deliveries(net, origin, 0, gamma + 3)
    for v in range(adj.shape[0]):
        if v != origin and dist[origin, v] <= gamma:
            assert got.get(v) == [int(dist[origin, v])]
        else:
            assert v not in got


def test_network_validation():
    with pytest.raises(ValueError):
        dec.Network(np.array([[0, 1], [0, 0]], dtype=bool), 1)
    with pytest.raises(ValueError):
        dec.Network(np.array([[1, 1], [1, 0]], dtype=bool), 1)
    with pytest.raises(ValueError):
        dec.Network(dec.line_graph(4), 4)
    net = dec.Network(dec.line_graph(4), 3)
    assert net.diameter == 3 and len(net.cliques) == 1


def test_generators_connected():
    for kind in ("complete", "line", "ring", "star"):
        adj = dec.make_graph(kind, 7)
        assert adj.shape == (7, 7) and nx.is_connected(nx.from_numpy_array(adj.astype(int)))
    a = dec.make_graph("random-regular", 8, degree=3, seed=4)
    b = dec.make_graph("random-regular", 8, degree=3, seed=4)
    assert np.array_equal(a, b) and np.all(a.sum(axis=1) == 3)
    with pytest.raises(ValueError):
        dec.make_graph("torus", 4)


def test_edge_list_parsing(tmp_path):
    text = "# ring of four\n0 1\n1 2\n\n2 3  # closing\n3 0\n"
    adj = dec.parse_edge_list(text)
    assert np.array_equal(adj, dec.ring_graph(4))
    path = tmp_path / "edges.txt"
    path.write_text(text)
    assert np.array_equal(dec.load_edge_list(path, M=4), adj)
    with pytest.raises(ParseError, match="line 2"):
        dec.parse_edge_list("0 1\n1 x\n")
    with pytest.raises(ParseError, match="line 1"):
        dec.parse_edge_list("0 1 2\n")
    with pytest.raises(ParseError):
        dec.parse_edge_list("0 5\n", M=3)


def test_single_agent_reduces_to_oful():
    env = EnvConfig(d=4, M=1, T=1500)
    net = dec.Network(np.zeros((1, 1), dtype=bool), 1)
    dcfg = cen.make_protocol(env, BUDGET, D=cen.EVERY_ROUND, private=False, gamma=1)
    ccfg = cen.make_protocol(env, BUDGET, D=cen.EVERY_ROUND, private=False)
    d_rec = dec.run_decentralized(dcfg, net, 3).record
    c_rec = cen.run_centralized(ccfg, 3)
    assert np.array_equal(d_rec.actions, c_rec.actions)


def test_complete_graph_close_to_centralized():
    env = EnvConfig(d=5, M=4, T=3000)
    net = dec.Network(dec.complete_graph(4), 1)
    dcfg = cen.make_protocol(env, BUDGET, D=cen.EVERY_ROUND, private=False, gamma=1)
    ccfg = cen.make_protocol(env, BUDGET, D=cen.EVERY_ROUND, private=False)
    r_dec = dec.run_decentralized(dcfg, net, 17).record.group_regret
    r_cen = cen.run_centralized(ccfg, 17).group_regret
    assert abs(r_dec - r_cen) <= 0.15 * r_cen


@pytest.mark.parametrize("private,D", [(False, cen.THEOREM_DEFAULT), (True, cen.THEOREM_DEFAULT),
                                       (False, cen.EVERY_ROUND)])
def test_audits_hold(private, D):
    env = EnvConfig(d=4, M=6, T=1500)
    net = dec.Network(dec.line_graph(6), 2)
    cfg = cen.make_protocol(env, BUDGET, D=D, private=private, gamma=2)
    if D == cen.THEOREM_DEFAULT:
        cfg = cen.ProtocolConfig(env=cfg.env, plan=cfg.plan, D=cfg.D * 0.01, alpha=cfg.alpha)
    res = dec.run_decentralized(cfg, net, 21, checkpoint_every=500)
    a = res.audit
    assert a["sync_checks"] > 0 and not a["sync_failures"]
    assert a["writes_ok"] and a["cross_clique_ok"]
    assert a["max_hops"] <= net.gamma
    assert int(a["flood_originated"].sum()) == int(res.record.messages_sent[-1].sum())
    assert np.all(np.diff(res.record.cum_regret, axis=0) >= 0)
    # Per-agent tree never exceeds its planned capacity.
    versions = [v for *_, v, _ in a["releases"]]
    assert max(versions, default=0) <= cfg.plan.capacity


def test_clique_replay_oracle_noise_off():
    env = EnvConfig(d=4, M=6, T=1200)
    net = dec.Network(dec.line_graph(6), 2)
    cfg = cen.make_protocol(env, BUDGET, D=cen.THEOREM_DEFAULT, private=False, gamma=2)
    cfg = cen.ProtocolConfig(env=cfg.env, plan=cfg.plan, D=cfg.D * 0.005, alpha=cfg.alpha)
    seed = 31
    res = dec.run_decentralized(cfg, net, seed)
    X = action_vectors(env, seed, res.record.actions)
    times = {(agent, g, v): (t, after) for t, agent, g, v, after in res.audit["releases"]}
    st_ = res.state
    shift = cfg.plan.shift
    for holder in range(env.M):
        for g in range(net.gamma):
            expect = np.zeros((env.d, env.d))
            for j in net.clique_of(holder):
                expect += shift * np.eye(env.d)
                v = st_.contrib_version[g, holder, j]
                if v == 0:
                    continue
                t_rel, after = times[(j, g, v)]
                last = t_rel if after else t_rel - 1
                taus = [tau for tau in range(1, last + 1) if tau % net.gamma == g]
                xs = X[np.array(taus) - 1, j]
                expect += xs.T @ xs
            np.testing.assert_allclose(st_.S[g, holder], expect, atol=1e-9)


def test_cross_clique_state_untouched():
    env = EnvConfig(d=3, M=6, T=800)
    net = dec.Network(dec.line_graph(6), 2)
    cfg = cen.make_protocol(env, BUDGET, D=cen.EVERY_ROUND, private=False, gamma=2)
    st_ = dec.run_decentralized(cfg, net, 2).state
    for holder in range(6):
        for src in range(6):
            if net.clique_id[src] != net.clique_id[holder]:
                assert not np.any(st_.contrib_U[:, holder, src])
                assert not np.any(st_.contrib_version[:, holder, src])


def test_decentralized_deterministic():
    env = EnvConfig(d=3, M=4, T=600)
    net = dec.Network(dec.ring_graph(4), 2)
    cfg = cen.make_protocol(env, BUDGET, D=cen.THEOREM_DEFAULT, private=True, gamma=2)
    a = dec.run_decentralized(cfg, net, 8).record
    b = dec.run_decentralized(cfg, net, 8).record
    assert np.array_equal(a.actions, b.actions) and np.array_equal(a.cum_regret, b.cum_regret)


def test_network_size_mismatch():
    env = EnvConfig(d=3, M=4, T=10)
    cfg = cen.make_protocol(env, BUDGET, gamma=1)
    with pytest.raises(ValueError):
        dec.run_decentralized(cfg, dec.Network(dec.complete_graph(3), 1), 0)

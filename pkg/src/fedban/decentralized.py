"""Peer-to-peer federated private LinUCB over a communication graph.

Messages are flooded over the graph ``G`` and live for ``gamma`` hops, one
hop per trial, so an agent hears from exactly the agents within distance
``gamma``. Agents are partitioned into cliques of the power graph ``G^gamma``
and only synchronize within their clique. Each agent keeps ``gamma``
independent parameter sets and uses set ``t mod gamma`` at trial ``t``; a
request to synchronize set ``g`` is therefore always answered before set
``g`` is used twice more.

One trial runs in this order:

1. deliver the messages in flight (sorted by origin, g, send time);
2. apply parameter broadcasts from clique-mates and answer sync requests by
   releasing the requested parameter set and broadcasting it;
3. every agent acts with parameter set ``g`` (vectorized over agents);
4. agents whose scaled log-det check fires broadcast a request and release
   their own set ``g`` in the same trial.
"""

import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from scipy.sparse.csgraph import shortest_path

from fedban.centralized import beta_radius, compose, local_update, logdet_gap, select_action
from fedban.environment import CHUNK, STREAM_TREE, Environment, reward_from_uniform, substream
from fedban.errors import Disconnected, ParseError
from fedban.linalg import logdet
from fedban.privatizer import NoiseTree, split_release
from fedban.records import RunRecord, checkpoint_times

SYNC_REQUEST = "sync"
PARAM_BROADCAST = "param"


# -- graphs -----------------------------------------------------------------


def hop_distances(adjacency):
    """All-pairs shortest-path hop counts (inf between components)."""
    adjacency = np.asarray(adjacency, dtype=bool)
    return shortest_path(adjacency.astype(float), unweighted=True, directed=False)


def power_graph(adjacency, gamma):
    """Adjacency of G^gamma: i ~ j iff 1 <= dist_G(i, j) <= gamma."""
    dist = hop_distances(adjacency)
    if not np.all(np.isfinite(dist)):
        raise Disconnected("communication graph is not connected")
    out = dist <= gamma
    np.fill_diagonal(out, False)
    return out


def clique_cover_greedy(power_adj):
    """Partition vertices into cliques of ``power_adj``.

    Colors the complement greedily in vertex order; every color class is an
    independent set of the complement, hence a clique of the graph.
    """
    power_adj = np.asarray(power_adj, dtype=bool)
    n = power_adj.shape[0]
    comp = nx.complement(nx.from_numpy_array(power_adj.astype(int)))
    colors = nx.greedy_color(comp, strategy=lambda g, _: list(range(n)))
    groups = {}
    for v in range(n):
        groups.setdefault(colors[v], []).append(v)
    return [tuple(groups[c]) for c in sorted(groups)]


def is_clique(power_adj, members):
    members = list(members)
    return all(power_adj[a, b] for k, a in enumerate(members) for b in members[k + 1:])


def subsample_index(t, gamma):
    if gamma < 1:
        raise ValueError("gamma must be at least 1")
    return t % gamma


@dataclass
class Network:
    adjacency: np.ndarray
    gamma: int
    power_adj: np.ndarray = field(init=False)
    cliques: list = field(init=False)
    clique_id: np.ndarray = field(init=False)
    distances: np.ndarray = field(init=False)

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {adj.shape}")
        if not np.array_equal(adj, adj.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(adj)):
            raise ValueError("adjacency must have a zero diagonal")
        self.adjacency = adj
        self.gamma = int(self.gamma)
        if self.gamma < 1:
            raise ValueError("gamma must be at least 1")
        self.distances = hop_distances(adj)
        if not np.all(np.isfinite(self.distances)):
            raise Disconnected("communication graph is not connected")
        if self.gamma > max(self.diameter, 1):
            raise ValueError(f"gamma={self.gamma} exceeds the graph diameter {self.diameter}")
        self.power_adj = power_graph(adj, self.gamma)
        self.cliques = clique_cover_greedy(self.power_adj)
        self.clique_id = np.empty(self.size, dtype=np.int64)
        for c, members in enumerate(self.cliques):
            self.clique_id[list(members)] = c

    @property
    def size(self):
        return self.adjacency.shape[0]

    @property
    def diameter(self):
        return int(self.distances.max()) if self.size > 1 else 0

    def neighbors(self, v):
        return np.flatnonzero(self.adjacency[v])

    def clique_of(self, v):
        return self.cliques[self.clique_id[v]]


def _from_nx(g):
    return nx.to_numpy_array(g, nodelist=range(g.number_of_nodes()), dtype=int).astype(bool)


def complete_graph(M):
    return _from_nx(nx.complete_graph(M))


def line_graph(M):
    return _from_nx(nx.path_graph(M))


def ring_graph(M):
    if M < 3:
        return line_graph(M)
    return _from_nx(nx.cycle_graph(M))


def star_graph(M):
    # networkx counts leaves, so star_graph(M - 1) has M nodes with hub 0.
    return _from_nx(nx.star_graph(M - 1))


def random_regular_graph(M, degree, seed):
    """Connected random ``degree``-regular graph; resamples until connected."""
    for attempt in range(1000):
        g = nx.random_regular_graph(degree, M, seed=int(seed) + attempt)
        if nx.is_connected(g):
            return _from_nx(g)
    raise Disconnected(f"no connected {degree}-regular graph on {M} nodes found")


GENERATORS = {
    "complete": complete_graph,
    "line": line_graph,
    "ring": ring_graph,
    "star": star_graph,
}


def make_graph(kind, M, degree=None, seed=0):
    if kind == "random-regular":
        if degree is None:
            raise ValueError("random-regular graphs need a degree")
        return random_regular_graph(M, degree, seed)
    if kind not in GENERATORS:
        raise ValueError(f"unknown topology {kind!r}")
    return GENERATORS[kind](M)


def parse_edge_list(text, M=None):
    """Adjacency from "i j" lines (0-indexed); '#' starts a comment."""
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"line {lineno}: expected 'i j', got {raw!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"line {lineno}: non-integer vertex in {raw!r}") from None
        if i < 0 or j < 0:
            raise ParseError(f"line {lineno}: negative vertex in {raw!r}")
        if i == j:
            raise ParseError(f"line {lineno}: self-loop on vertex {i}")
        edges.append((i, j))
    n = max((max(e) for e in edges), default=-1) + 1
    if M is not None:
        if n > M:
            raise ParseError(f"edge list mentions vertex {n - 1} but M={M}")
        n = M
    adj = np.zeros((n, n), dtype=bool)
    for i, j in edges:
        adj[i, j] = adj[j, i] = True
    return adj


def load_edge_list(path, M=None):
    with open(path) as fh:
        return parse_edge_list(fh.read(), M)


# -- message flooding ---------------------------------------------------------


@dataclass
class Message:
    kind: str
    origin: int
    g: int
    t_sent: int
    U_hat: np.ndarray = None
    u_hat: np.ndarray = None
    version: int = 0

    @property
    def key(self):
        return (self.origin, self.g, self.t_sent, self.kind)


@dataclass
class _InFlight:
    msg: Message
    frontier: np.ndarray
    visited: np.ndarray
    hops_remaining: int


class MessageQueues:
    """Time-to-live flooding: one hop per trial, each agent reached once."""

    def __init__(self, net):
        self.net = net
        self.flights = []
        self.originated = np.zeros(net.size, dtype=np.int64)
        self.deliveries = 0
        self.max_distance = 0

    def send(self, msg):
        visited = np.zeros(self.net.size, dtype=bool)
        visited[msg.origin] = True
        frontier = np.zeros(self.net.size, dtype=bool)
        frontier[msg.origin] = True
        self.flights.append(_InFlight(msg, frontier, visited, self.net.gamma))
        self.originated[msg.origin] += 1

    def step(self, t):
        """Advance every message one hop; return {agent: [messages]} for trial t."""
        inbox = {}
        alive = []
        adj = self.net.adjacency
        for f in self.flights:
            reached = adj[f.frontier].any(axis=0) & ~f.visited
            f.visited |= reached
            f.frontier = reached
            f.hops_remaining -= 1
            hops = t - f.msg.t_sent
            for v in np.flatnonzero(reached):
                inbox.setdefault(int(v), []).append(f.msg)
                self.deliveries += 1
                self.max_distance = max(self.max_distance, hops)
            if f.hops_remaining > 0 and reached.any():
                alive.append(f)
        self.flights = alive
        for msgs in inbox.values():
            msgs.sort(key=lambda m: (m.origin, m.g, m.t_sent, m.kind))
        return inbox


def step_network(queues, t):
    return queues.step(t)


# -- protocol -----------------------------------------------------------------


def dec_sync_check(gap, dt, D, L):
    """Scaled threshold test: gap >= D / ((dt + 1)(1 + L^2))."""
    dt = np.asarray(dt)
    if D == 0:
        return np.ones(dt.shape, dtype=bool)
    if math.isinf(D):
        return np.zeros(dt.shape, dtype=bool)
    return np.asarray(gap) >= D / ((dt + 1) * (1.0 + L**2))


@dataclass
class DecState:
    """Parameter sets indexed (g, agent, ...); contributions (g, holder, source, ...)."""

    S: np.ndarray
    s: np.ndarray
    U: np.ndarray
    u_bar: np.ndarray
    Q: np.ndarray
    staged: np.ndarray  # observations staged since the last release, (g, agent)
    dt: np.ndarray
    logdet_S: np.ndarray
    contrib_U: np.ndarray
    contrib_u: np.ndarray
    contrib_version: np.ndarray
    released: list  # [g][agent] -> (version, U_hat, u_hat)


@dataclass
class DecRun:
    record: RunRecord
    state: DecState
    audit: dict


class _Auditor:
    def __init__(self, net, gamma):
        self.net = net
        self.gamma = gamma
        self.writes_ok = True
        self.cross_clique_ok = True
        self.pending = []  # (deadline, origin, g, t_sent)
        self.sync_checks = 0
        self.sync_failures = []
        self.requests = {}  # (clique, g) -> sorted send times
        self.releases = []  # (t, agent, g, version, after_act)

    def write(self, t, g, cause_g):
        if cause_g is None:
            if t % self.gamma != g:
                self.writes_ok = False
        elif cause_g != g:
            self.writes_ok = False

    def mutation(self, source, holder):
        if self.net.clique_id[source] != self.net.clique_id[holder]:
            self.cross_clique_ok = False

    def request(self, origin, g, t):
        c = int(self.net.clique_id[origin])
        self.requests.setdefault((c, g), []).append(t)
        self.pending.append((t + 2 * self.gamma, origin, g, t))

    def check_due(self, t, st):
        due = [p for p in self.pending if p[0] == t]
        self.pending = [p for p in self.pending if p[0] != t]
        for _, origin, g, t_sent in due:
            members = list(self.net.clique_of(origin))
            ref = members[0]
            same = all(
                np.array_equal(st.S[g, ref], st.S[g, j]) and np.array_equal(st.s[g, ref], st.s[g, j])
                for j in members[1:]
            )
            self.sync_checks += 1
            if not same:
                c = int(self.net.clique_id[origin])
                later = [u for u in self.requests.get((c, g), []) if t_sent < u < t]
                self.sync_failures.append({"origin": origin, "g": g, "t_sent": t_sent,
                                           "superseded": bool(later)})


def _initial_state(net, plan, d, gamma):
    M = net.size
    size = np.array([len(net.clique_of(i)) for i in range(M)], dtype=float)
    eye = np.eye(d)
    contrib_U = np.zeros((gamma, M, M, d, d))
    for i in range(M):
        for j in net.clique_of(i):
            contrib_U[:, i, j] = plan.rho_min * eye
    S = contrib_U.sum(axis=2)
    return DecState(
        S=S,
        s=np.zeros((gamma, M, d)),
        U=np.zeros((gamma, M, d, d)),
        u_bar=np.zeros((gamma, M, d)),
        Q=np.zeros((gamma, M, d + 1, d + 1)),
        staged=np.zeros((gamma, M), dtype=np.int64),
        dt=np.zeros((gamma, M), dtype=np.int64),
        logdet_S=np.broadcast_to(d * np.log(size * plan.rho_min), (gamma, M)).copy(),
        contrib_U=contrib_U,
        contrib_u=np.zeros((gamma, M, M, d)),
        contrib_version=np.zeros((gamma, M, M), dtype=np.int64),
        released=[[(0, plan.rho_min * eye, np.zeros(d)) for _ in range(M)] for _ in range(gamma)],
    )


def _recompose(st, net, g, holder):
    members = list(net.clique_of(holder))
    S = st.contrib_U[g, holder, members[0]].copy()
    s = st.contrib_u[g, holder, members[0]].copy()
    for j in members[1:]:
        S += st.contrib_U[g, holder, j]
        s += st.contrib_u[g, holder, j]
    st.S[g, holder] = S
    st.s[g, holder] = s
    st.logdet_S[g, holder] = logdet(S)


def _accept(st, net, g, holder, source, version, U_hat, u_hat, auditor, t):
    if version <= st.contrib_version[g, holder, source]:
        return
    auditor.mutation(source, holder)
    auditor.write(t, g, g)
    st.contrib_U[g, holder, source] = U_hat
    st.contrib_u[g, holder, source] = u_hat
    st.contrib_version[g, holder, source] = version
    _recompose(st, net, g, holder)


def _release(st, net, trees, plan, g, agent, t, auditor, after_act):
    """Flush the staged block of set ``g`` into the agent's tree (if any) and publish.

    Without new observations since the last release the cached release is
    re-sent instead, so the tree holds at most one leaf per use of set ``g``.
    """
    if st.staged[g, agent] > 0:
        tree = trees[agent][g]
        tree.insert(st.Q[g, agent])
        U_hat, u_hat = split_release(tree.query(), plan.shift)
        version = tree.leaf_count
        st.released[g][agent] = (version, U_hat, u_hat)
        auditor.releases.append((t, agent, g, version, after_act))
        auditor.write(t, g, g)
        st.Q[g, agent] = 0.0
        st.U[g, agent] = 0.0
        st.u_bar[g, agent] = 0.0
        st.staged[g, agent] = 0
        st.dt[g, agent] = 0
        _accept(st, net, g, agent, agent, version, U_hat, u_hat, auditor, t)
    return st.released[g][agent]


def run_decentralized(cfg, net, seed, checkpoint_every=100, run_id=0, audit=True):
    """One seeded run of the decentralized protocol; returns a :class:`DecRun`."""
    env_cfg = cfg.env.check()
    plan = cfg.plan
    M, d, T, gamma = env_cfg.M, env_cfg.d, env_cfg.T, net.gamma
    if net.size != M:
        raise ValueError(f"network has {net.size} agents but env.M={M}")
    env = Environment(env_cfg, seed)
    st = _initial_state(net, plan, d, gamma)
    trees = [[NoiseTree(plan.m, d + 1, plan.sigma_N, substream(seed, STREAM_TREE, i, g))
              for g in range(gamma)] for i in range(M)]
    queues = MessageQueues(net)
    auditor = _Auditor(net, gamma)
    group = np.array([len(net.clique_of(i)) for i in range(M)], dtype=float)
    extra = M * (plan.rho_max - plan.rho_min)

    ckpts = checkpoint_times(T, checkpoint_every)
    n_ck = len(ckpts)
    out_regret = np.zeros((n_ck, M))
    out_sync = np.zeros((n_ck, M), dtype=np.int64)
    out_msgs = np.zeros((n_ck, M), dtype=np.int64)
    out_beta = np.zeros((n_ck, M))
    chosen_log = np.zeros((T, M), dtype=np.int16)
    cum_regret = np.zeros(M)
    clique_syncs = np.zeros(len(net.cliques), dtype=np.int64)
    sent = np.zeros(M, dtype=np.int64)
    agents = np.arange(M)
    k = 0

    def broadcast(msg):
        queues.send(msg)
        sent[msg.origin] += 1

    for t in range(1, T + 1):
        # 1-2. deliveries, broadcasts from clique-mates, answers to requests.
        inbox = queues.step(t)
        to_answer = set()
        for agent in sorted(inbox):
            for msg in inbox[agent]:
                if net.clique_id[msg.origin] != net.clique_id[agent] or msg.t_sent < t - gamma:
                    continue
                if msg.kind == PARAM_BROADCAST:
                    _accept(st, net, msg.g, agent, msg.origin, msg.version, msg.U_hat, msg.u_hat,
                            auditor, t)
                else:
                    to_answer.add((agent, msg.g))
        for agent, g_req in sorted(to_answer):
            version, U_hat, u_hat = _release(st, net, trees, plan, g_req, agent, t, auditor, False)
            broadcast(Message(PARAM_BROADCAST, agent, g_req, t, U_hat, u_hat, version))
        if audit:
            auditor.check_due(t, st)

        # 3. act with parameter set g.
        g = subsample_index(t, gamma)
        c, i = divmod(t - 1, CHUNK)
        actions, means, _, uniforms = (b[i] for b in env.block(c))
        view = _SliceView(st, g)
        cp = compose(view)
        beta = beta_radius(cp.logdet_V, d, group, plan.rho_min, plan.rho_max, plan.kappa,
                           env_cfg.sigma, env_cfg.S, cfg.alpha)
        idx = select_action(cp, beta, actions)
        x = actions[agents, idx]
        mu = means[agents, idx]
        y = reward_from_uniform(mu, uniforms)
        cum_regret += means.max(axis=-1) - mu
        chosen_log[t - 1] = idx
        local_update(view, x, y)
        st.staged[g] += 1
        auditor.write(t, g, None)

        # 4. scaled log-det check; requests and own releases.
        gap = logdet_gap(view, cp, x, extra)
        fired = dec_sync_check(gap, st.dt[g], cfg.D, env_cfg.L)
        st.dt[g] += 1
        for agent in np.flatnonzero(fired):
            agent = int(agent)
            broadcast(Message(SYNC_REQUEST, agent, g, t))
            clique_syncs[net.clique_id[agent]] += 1
            if audit:
                auditor.request(agent, g, t)
            version, U_hat, u_hat = _release(st, net, trees, plan, g, agent, t, auditor, True)
            broadcast(Message(PARAM_BROADCAST, agent, g, t, U_hat, u_hat, version))

        if k < n_ck and t == ckpts[k]:
            out_regret[k] = cum_regret
            out_sync[k] = clique_syncs[net.clique_id]
            out_msgs[k] = sent
            out_beta[k] = beta
            k += 1

    unchecked = len(auditor.pending)
    audit_info = {
        "writes_ok": auditor.writes_ok,
        "cross_clique_ok": auditor.cross_clique_ok,
        "sync_checks": auditor.sync_checks,
        "sync_failures": auditor.sync_failures,
        "sync_unchecked": unchecked,
        "flood_originated": queues.originated.copy(),
        "flood_deliveries": queues.deliveries,
        "max_hops": queues.max_distance,
        "releases": auditor.releases,
        "requests": auditor.requests,
    }
    record = RunRecord(
        run_id=run_id, seed=int(seed), mode="decentralized", checkpoints=ckpts,
        cum_regret=out_regret, sync_count=out_sync, messages_sent=out_msgs, beta=out_beta,
        actions=chosen_log,
        meta={"n_total": int(clique_syncs.sum()), "D": cfg.D, "private": plan.private,
              "m": plan.m, "Lambda": plan.Lambda, "gamma": gamma,
              "cover_size": len(net.cliques), "cliques": [list(c) for c in net.cliques]},
    )
    return DecRun(record=record, state=st, audit=audit_info)


class _SliceView:
    """AgentState-shaped view of parameter set ``g`` for all agents.

    The fields are numpy views, so ``local_update`` from the centralized
    protocol mutates the decentralized state in place.
    """

    def __init__(self, st, g):
        self.S = st.S[g]
        self.s = st.s[g]
        self.U = st.U[g]
        self.u_bar = st.u_bar[g]
        self.Q = st.Q[g]
        self.logdet_S = st.logdet_S[g]

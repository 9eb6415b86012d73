"""Federated private LinUCB with a synchronizing controller.

``M`` agents each run an optimistic linear bandit on the sum of a shared,
privatized Gram matrix ``S`` and their own unsynchronized observations ``U``.
When the log-determinant of an agent's Gram matrix outgrows ``S`` by more
than ``D / dt`` (``dt`` = trials since the last synchronization), the
controller collects a privatized release from every agent, sums them, and
sends the sum back to everyone.

All state arrays carry leading batch axes ``(runs, agents)``; one call to
:func:`simulate_centralized` advances many independent runs in lock-step.
Each run draws from its own random streams, so its trace does not depend on
which other runs share the batch.
"""

import math
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from fedban.environment import CHUNK, STREAM_TREE, Environment, reward_from_uniform, substream
from fedban.errors import BoundViolation
from fedban.linalg import inverse_factor, logdet
from fedban.privatizer import NoiseTree, nonprivate_plan, plan_noise, split_release
from fedban.records import RunRecord, checkpoint_times

# Symbolic synchronization regimes.
EVERY_ROUND = "every_round"
THEOREM_DEFAULT = "theorem_default"
NEVER = "never"


@dataclass(frozen=True)
class ProtocolConfig:
    env: object  # EnvConfig
    plan: object  # NoisePlan
    D: float
    alpha: float = 0.1

    @property
    def private(self):
        return self.plan.private


@dataclass
class AgentState:
    """Per-agent parameters; every array has the same leading batch shape."""

    S: np.ndarray
    s: np.ndarray
    U: np.ndarray
    u_bar: np.ndarray
    Q: np.ndarray
    dt: np.ndarray
    logdet_S: np.ndarray

    @classmethod
    def initial(cls, d, group_size, rho_min, batch_shape):
        batch_shape = tuple(batch_shape)
        S = np.broadcast_to(group_size * rho_min * np.eye(d), batch_shape + (d, d)).copy()
        return cls(
            S=S,
            s=np.zeros(batch_shape + (d,)),
            U=np.zeros(batch_shape + (d, d)),
            u_bar=np.zeros(batch_shape + (d,)),
            Q=np.zeros(batch_shape + (d + 1, d + 1)),
            dt=np.zeros(batch_shape, dtype=np.int64),
            logdet_S=np.full(batch_shape, d * math.log(group_size * rho_min)),
        )


@dataclass
class ComposedParams:
    V: np.ndarray
    u_tilde: np.ndarray
    theta_bar: np.ndarray
    inv_factor: np.ndarray  # W with V^{-1} = W^T W
    logdet_V: np.ndarray


def make_protocol(env, budget, D=THEOREM_DEFAULT, private=True, lam=1.0, gamma=None, n_fixed=None):
    """Build the noise plan and resolve the synchronization threshold."""
    if private:
        plan = plan_noise(budget, max(env.T, 1), n_fixed=n_fixed, gamma=gamma, L=env.L, d=env.d, M=env.M)
    else:
        plan = nonprivate_plan(max(env.T, 1), env.M, lam=lam, gamma=gamma)
    threshold = resolve_threshold(D, max(env.T, 1), env.d, env.L, plan.rho_min, plan.rho_max)
    return ProtocolConfig(env=env, plan=plan, D=threshold, alpha=budget.alpha)


def log_growth(T, d, L, rho_min, rho_max):
    """log(rho_max / rho_min + T L^2 / (d rho_min))."""
    return math.log(rho_max / rho_min + T * L**2 / (d * rho_min))


def theorem_threshold(T, d, L, rho_min, rho_max):
    """Threshold D = 2 T d / (log(rho_max/rho_min + T L^2/(d rho_min)) + 1)."""
    return 2.0 * T * d / (log_growth(T, d, L, rho_min, rho_max) + 1.0)


def communication_bound(T, d, L, D, rho_min, rho_max):
    """Upper bound on synchronization rounds for threshold ``D``."""
    if D == 0:
        return math.inf
    return 2.0 * math.sqrt((d * T / D) * log_growth(T, d, L, rho_min, rho_max)) + 4.0


def resolve_threshold(D, T, d, L, rho_min, rho_max):
    if D == EVERY_ROUND:
        return 0.0
    if D == NEVER:
        return math.inf
    if D == THEOREM_DEFAULT:
        return theorem_threshold(T, d, L, rho_min, rho_max)
    D = float(D)
    if not D >= 0:
        raise ValueError(f"threshold D must be nonnegative, got {D!r}")
    return D


def compose(st):
    """V = S + U, u~ = s + u_bar and the regularized least-squares estimate."""
    V = st.S + st.U
    u_tilde = st.s + st.u_bar
    W, chol = inverse_factor(V)
    logdet_V = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
    theta = (np.swapaxes(W, -1, -2) @ (W @ u_tilde[..., None]))[..., 0]
    return ComposedParams(V=V, u_tilde=u_tilde, theta_bar=theta, inv_factor=W, logdet_V=logdet_V)


def beta_radius(logdet_V, d, group_size, rho_min, rho_max, kappa, sigma, S, alpha):
    """Confidence radius for the privately regularized estimate.

    sigma * sqrt(2 log(2/alpha) + logdet V - d log(group * rho_min))
        + group * S * sqrt(rho_max) + group * kappa
    """
    group_size = np.asarray(group_size, dtype=float)
    inner = 2.0 * math.log(2.0 / alpha) + logdet_V - d * np.log(group_size * rho_min)
    return sigma * np.sqrt(np.maximum(inner, 0.0)) + group_size * (S * math.sqrt(rho_max) + kappa)


def compute_beta(cp, cfg, group_size=None):
    env, plan = cfg.env, cfg.plan
    group = env.M if group_size is None else group_size
    return beta_radius(cp.logdet_V, env.d, group, plan.rho_min, plan.rho_max, plan.kappa,
                       env.sigma, env.S, cfg.alpha)


def ucb_scores(cp, beta, actions):
    """<x, theta_bar> + beta ||x||_{V^{-1}} for actions of shape (..., K, d)."""
    mean = (actions @ cp.theta_bar[..., None])[..., 0]
    z = actions @ np.swapaxes(cp.inv_factor, -1, -2)
    width = np.sqrt(np.sum(z * z, axis=-1))
    return mean + np.asarray(beta)[..., None] * width


def select_action(cp, beta, actions):
    """Index of the UCB-maximizing action; ties go to the lowest index."""
    return np.argmax(ucb_scores(cp, beta, actions), axis=-1)


def local_update(st, x, y, L=None, B=None):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if L is not None and np.any(np.linalg.norm(x, axis=-1) > L * (1 + 1e-9)):
        raise BoundViolation(f"action norm exceeds L={L}")
    if B is not None and np.any(np.abs(y) > B * (1 + 1e-9)):
        raise BoundViolation(f"reward magnitude exceeds B={B}")
    st.U += x[..., :, None] * x[..., None, :]
    st.u_bar += y[..., None] * x
    z = np.concatenate([x, y[..., None]], axis=-1)
    st.Q += z[..., :, None] * z[..., None, :]


def logdet_gap(st, cp, x, extra):
    """logdet(V + x x^T + extra I) - logdet(S)."""
    if extra == 0:
        wx = (cp.inv_factor @ x[..., None])[..., 0]
        grown = cp.logdet_V + np.log1p(np.sum(wx * wx, axis=-1))
    else:
        d = x.shape[-1]
        grown = logdet(cp.V + x[..., :, None] * x[..., None, :] + extra * np.eye(d))
    return grown - st.logdet_S


def sync_check(st, cp, x, cfg, group_size=None):
    """True where an agent's log-det growth meets the threshold D / max(dt, 1)."""
    D = cfg.D
    shape = np.shape(st.dt)
    if D == 0:
        return np.ones(shape, dtype=bool)
    if math.isinf(D):
        return np.zeros(shape, dtype=bool)
    M = cfg.env.M if group_size is None else group_size
    extra = M * (cfg.plan.rho_max - cfg.plan.rho_min)
    gap = logdet_gap(st, cp, x, extra)
    return gap >= D / np.maximum(st.dt, 1)


def synchronize_all(st, trees, plan, runs):
    """Run a synchronization round in each listed run.

    ``st`` has batch shape (runs, agents); ``trees[r]`` stacks the trees of
    all agents of run ``r``.
    """
    for r in runs:
        tree = trees[r]
        tree.insert(st.Q[r])
        U_hat, u_hat = split_release(tree.query(), plan.shift)
        S_new = U_hat.sum(axis=0)
        s_new = u_hat.sum(axis=0)
        st.S[r] = S_new
        st.s[r] = s_new
        st.logdet_S[r] = logdet(S_new)
        st.Q[r] = 0.0
        st.U[r] = 0.0
        st.u_bar[r] = 0.0
        st.dt[r] = 0


def _make_trees(cfg, seeds):
    plan, env = cfg.plan, cfg.env
    return [
        NoiseTree(plan.m, env.d + 1, plan.sigma_N, substream(seed, STREAM_TREE), batch_shape=(env.M,))
        for seed in seeds
    ]


def simulate_centralized(cfg, seeds, checkpoint_every=100, callback=None, run_ids=None):
    """Run one centralized experiment per seed, batched; returns RunRecords.

    ``callback(info)``, if given, is invoked after every trial's actions with a
    namespace holding the trial-start parameters (V, theta_bar, beta), the
    chosen actions and rewards, and the agents whose sync check fired.
    """
    env_cfg = cfg.env.check()
    plan = cfg.plan
    seeds = [int(s) for s in seeds]
    R, M, d, T = len(seeds), env_cfg.M, env_cfg.d, env_cfg.T
    run_ids = list(range(R)) if run_ids is None else list(run_ids)
    envs = [Environment(env_cfg, s) for s in seeds]
    st = AgentState.initial(d, M, plan.rho_min, (R, M))
    trees = _make_trees(cfg, seeds)

    ckpts = checkpoint_times(T, checkpoint_every)
    n_ck = len(ckpts)
    out_regret = np.zeros((R, n_ck, M))
    out_sync = np.zeros((R, n_ck, M), dtype=np.int64)
    out_msgs = np.zeros((R, n_ck, M), dtype=np.int64)
    out_beta = np.zeros((R, n_ck, M))
    chosen_log = np.zeros((T, R, M), dtype=np.int16)
    cum_regret = np.zeros((R, M))
    sync_count = np.zeros(R, dtype=np.int64)
    messages = np.zeros((R, M), dtype=np.int64)
    rows = np.arange(R)[:, None]
    cols = np.arange(M)[None, :]
    k = 0
    block = None
    for t in range(1, T + 1):
        c, i = divmod(t - 1, CHUNK)
        if i == 0:
            parts = [e.block(c) for e in envs]
            block = tuple(np.stack([p[j] for p in parts], axis=1) for j in range(4))
        actions, means, _, uniforms = (b[i] for b in block)

        cp = compose(st)
        beta = compute_beta(cp, cfg)
        idx = select_action(cp, beta, actions)
        x = actions[rows, cols, idx]
        mu = means[rows, cols, idx]
        y = reward_from_uniform(mu, uniforms)
        cum_regret += means.max(axis=-1) - mu
        chosen_log[t - 1] = idx

        local_update(st, x, y)
        fired = sync_check(st, cp, x, cfg)
        if callback is not None:
            callback(SimpleNamespace(t=t, V=cp.V, u_tilde=cp.u_tilde, theta_bar=cp.theta_bar,
                                     beta=beta, x=x, y=y, index=idx, fired=fired,
                                     theta_star=[e.truth.theta_star for e in envs]))
        runs = np.flatnonzero(fired.any(axis=-1))
        if runs.size:
            synchronize_all(st, trees, plan, runs)
            sync_count[runs] += 1
            messages[runs] += 1
            messages += fired
        st.dt += 1
        st.dt[runs] = 0

        if k < n_ck and t == ckpts[k]:
            out_regret[:, k] = cum_regret
            out_sync[:, k] = sync_count[:, None]
            out_msgs[:, k] = messages
            out_beta[:, k] = beta
            k += 1

    records = []
    for r in range(R):
        records.append(RunRecord(
            run_id=run_ids[r], seed=seeds[r], mode="centralized", checkpoints=ckpts,
            cum_regret=out_regret[r], sync_count=out_sync[r], messages_sent=out_msgs[r],
            beta=out_beta[r], actions=chosen_log[:, r].copy(),
            meta={"n_total": int(sync_count[r]), "D": cfg.D, "private": plan.private,
                  "m": plan.m, "Lambda": plan.Lambda},
        ))
    return records


def run_centralized(cfg, seed, checkpoint_every=100, callback=None):
    return simulate_centralized(cfg, [seed], checkpoint_every, callback)[0]

"""Synthetic federated linear bandit with Beta-distributed rewards.

The ground-truth parameter sits near the unit sphere. Each decision set holds
one optimal action whose mean reward lies in [0.7, 0.8] and K - 1 suboptimal
actions whose mean lies in [0.5, 0.7 - gap], so every suboptimal pull costs at
least ``gap``. Rewards are Beta(mu, 1 - mu), bounded in [0, 1] with mean mu.

Randomness is addressed by counter: the stream for (run seed, purpose,
index...) is derived with ``numpy.random.SeedSequence`` spawn keys, so a
decision set depends only on the seed and its trial block, never on the order
in which anything else was drawn.
"""

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.special import betaincinv

from fedban.errors import (
    ActionNotInSet,
    GenerationFailure,
    MeanOutOfRange,
    ValidationError,
)

OPTIMAL_BAND = (0.7, 0.8)
SUBOPTIMAL_LOW = 0.5
THETA_RADIUS = (0.9, 1.0)
MAX_ATTEMPTS = 10_000

# Trials per pre-generated block of decision sets.
CHUNK = 512

# Spawn-key purposes.
STREAM_THETA = 0
STREAM_ACTIONS = 1
STREAM_TREE = 2


def substream(seed, *key):
    """Independent generator for ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class EnvConfig:
    d: int = 5
    M: int = 4
    T: int = 1000
    K: Optional[int] = None
    L: float = 1.0
    S: float = 1.0
    sigma: float = 0.5
    B: float = 1.0
    gap: float = 0.1
    master_seed: int = 0

    @property
    def n_actions(self):
        return self.d if self.K is None else self.K

    def problems(self):
        out = []
        if not isinstance(self.d, int) or self.d < 2:
            out.append("env.d must be an integer >= 2")
        if not isinstance(self.M, int) or self.M < 1:
            out.append("env.M must be an integer >= 1")
        if not isinstance(self.T, int) or self.T < 0:
            out.append("env.T must be an integer >= 0")
        if self.K is not None:
            if not isinstance(self.K, int) or self.K < 1:
                out.append("env.K must be an integer >= 1")
            elif isinstance(self.d, int) and self.K > self.d**2:
                out.append("env.K must not exceed d**2")
        if not self.L > 0:
            out.append("env.L must be positive")
        if not self.S > 0:
            out.append("env.S must be positive")
        if not self.sigma >= 0:
            out.append("env.sigma must be nonnegative")
        if not self.B > 0:
            out.append("env.B must be positive")
        if not 0 < self.gap <= 0.1:
            out.append("env.gap must lie in (0, 0.1]")
        if not isinstance(self.master_seed, int) or not 0 <= self.master_seed < 2**64:
            out.append("env.master_seed must be an unsigned 64-bit integer")
        return out

    def check(self):
        problems = self.problems()
        if problems:
            raise ValidationError(problems)
        return self

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class GroundTruth:
    theta_star: np.ndarray


@dataclass(frozen=True)
class DecisionSet:
    actions: np.ndarray  # (K, d)
    optimal_index: int

    @property
    def optimal(self):
        return self.actions[self.optimal_index]


def gen_theta(cfg, rng):
    """Uniform direction on the sphere, radius uniform in [0.9, 1.0] * S."""
    if cfg.d < 2:
        raise ValueError("d must be at least 2")
    g = rng.standard_normal(cfg.d)
    while not np.linalg.norm(g) > 0:
        g = rng.standard_normal(cfg.d)
    radius = cfg.S * rng.uniform(*THETA_RADIUS)
    return GroundTruth(theta_star=radius * g / np.linalg.norm(g))


def _band_actions(rng, theta, lo, hi, L):
    """Actions with <x, theta> ~ U[lo, hi] elementwise and ||x|| <= L.

    The component along theta is fixed by the target inner product; the
    orthogonal part is uniform in the largest (d-1)-ball that keeps the norm
    within L.
    """
    d = theta.shape[-1]
    norm = np.linalg.norm(theta)
    unit = theta / norm
    shape = np.broadcast(lo, hi).shape
    c = lo + (hi - lo) * rng.random(shape)
    along = c / norm
    if np.any(along > L):
        raise GenerationFailure(
            f"target inner product {c.max():.3f} unreachable with ||theta||={norm:.3f}, L={L}"
        )
    g = rng.standard_normal(shape + (d,))
    g -= (g @ unit)[..., None] * unit
    gnorm = np.linalg.norm(g, axis=-1, keepdims=True)
    # Shrink a hair so that rounding cannot push ||x|| past L.
    radius = np.sqrt(np.maximum(L**2 - along**2, 0.0)) * (1.0 - 1e-12)
    radius = radius * rng.random(shape) ** (1.0 / max(d - 1, 1))
    x = along[..., None] * unit + radius[..., None] * g / np.where(gnorm > 0, gnorm, 1.0)
    bad = np.linalg.norm(x, axis=-1) > L
    attempts = 1
    while np.any(bad):
        if attempts >= MAX_ATTEMPTS:
            raise GenerationFailure("rejection sampling exceeded attempt budget")
        redo = _band_actions(rng, theta, np.broadcast_to(lo, shape)[bad],
                             np.broadcast_to(hi, shape)[bad], L)
        x[bad] = redo
        bad = np.linalg.norm(x, axis=-1) > L
        attempts += 1
    return x


def _decision_block(rng, theta, cfg, shape):
    """Decision sets for every index in ``shape``: (actions, optimal index)."""
    K = cfg.n_actions
    opt = rng.integers(K, size=shape)
    is_opt = np.arange(K) == opt[..., None]
    lo = np.where(is_opt, OPTIMAL_BAND[0], SUBOPTIMAL_LOW)
    hi = np.where(is_opt, OPTIMAL_BAND[1], OPTIMAL_BAND[0] - cfg.gap)
    return _band_actions(rng, theta, lo, hi, cfg.L), opt


def gen_decision_set(gt, cfg, rng):
    theta = gt.theta_star
    if np.linalg.norm(theta) < OPTIMAL_BAND[0]:
        raise GenerationFailure("||theta*|| < 0.7 makes the optimal band unreachable")
    actions, opt = _decision_block(rng, theta, cfg, ())
    return DecisionSet(actions=actions, optimal_index=int(opt))


def reward_from_uniform(mu, u):
    """Inverse-CDF draw from Beta(mu, 1 - mu)."""
    return betaincinv(mu, 1.0 - mu, u)


def sample_reward(x, gt, rng):
    mu = float(np.dot(x, gt.theta_star))
    if not 0.0 < mu < 1.0:
        raise MeanOutOfRange(f"mean reward {mu!r} outside (0, 1)")
    return float(reward_from_uniform(mu, rng.random()))


def instant_regret(chosen, ds, gt):
    chosen = np.asarray(chosen, dtype=float)
    hit = np.all(ds.actions == chosen, axis=-1)
    if not np.any(hit):
        raise ActionNotInSet("chosen action is not a member of the decision set")
    means = ds.actions @ gt.theta_star
    return float(means.max() - means[np.argmax(hit)])


class Environment:
    """All randomness of one run of the federated bandit.

    Decision sets and reward uniforms are produced in blocks of ``CHUNK``
    trials (trial ``t`` is 1-based) for every agent at once.
    """

    def __init__(self, cfg, seed):
        cfg.check()
        self.cfg = cfg
        self.seed = int(seed)
        self.truth = gen_theta(cfg, substream(self.seed, STREAM_THETA))
        self._cached = None

    def block(self, c):
        """(actions (C, M, K, d), means (C, M, K), optimal (C, M), uniforms (C, M))."""
        if self._cached is not None and self._cached[0] == c:
            return self._cached[1]
        rng = substream(self.seed, STREAM_ACTIONS, c)
        shape = (CHUNK, self.cfg.M)
        actions, opt = _decision_block(rng, self.truth.theta_star, self.cfg, shape)
        uniforms = rng.random(shape)
        means = actions @ self.truth.theta_star
        out = (actions, means, opt, uniforms)
        self._cached = (c, out)
        return out

    def decision_set(self, t, agent):
        actions, _, opt, _ = self.block((t - 1) // CHUNK)
        r = (t - 1) % CHUNK
        return DecisionSet(actions=actions[r, agent].copy(), optimal_index=int(opt[r, agent]))

    def reward_uniform(self, t, agent):
        return float(self.block((t - 1) // CHUNK)[3][(t - 1) % CHUNK, agent])


def replay_regret(cfg, seed, chosen):
    """Group pseudoregret of a trace of chosen action indices, shape (T, M)."""
    env = Environment(cfg, seed)
    chosen = np.asarray(chosen)
    total = 0.0
    for start in range(0, chosen.shape[0], CHUNK):
        _, means, _, _ = env.block(start // CHUNK)
        part = chosen[start:start + CHUNK]
        m = means[: part.shape[0]]
        picked = np.take_along_axis(m, part[..., None], axis=-1)[..., 0]
        total += float(np.sum(m.max(axis=-1) - picked))
    return total

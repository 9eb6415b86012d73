"""Tree-based Gaussian mechanism for releasing running Gram/reward sums.

Each agent stages the outer products ``[x, y]^T [x, y]`` it observed since its
last release as one (d+1) x (d+1) block, inserts the block into a binary
counting tree, and releases the noisy prefix sum over all of its blocks. A
prefix sum over k leaves touches exactly popcount(k) tree nodes, so at most
``m`` independent noise matrices enter any release.

Only the nodes on the current dyadic decomposition of ``[1, k]`` are kept in
memory (the "p-sum" formulation of the binary mechanism). A node's noise is
drawn the moment the node is completed and is never redrawn, which has the
same distribution as drawing all 2^m - 1 node noises up front but needs
O(m) storage instead of O(2^m).
"""

import math
from dataclasses import dataclass

import numpy as np

from fedban.errors import EmptyTree, InvalidBudget, TreeFull
from fedban.linalg import symmetrize


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float
    alpha: float = 0.1

    def problems(self):
        out = []
        if not self.epsilon > 0:
            out.append("budget.epsilon must be positive")
        if not 0 < self.delta < 1:
            out.append("budget.delta must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            out.append("budget.alpha must lie in (0, 1)")
        return out


@dataclass(frozen=True)
class NoisePlan:
    """Tree depth, node noise scale and the spectral bounds they imply.

    ``shift`` is the multiple of the identity added to every release so that
    the perturbation is positive definite: 2 * Lambda when private, the plain
    ridge share ``lam / M`` when not.
    """

    m: int
    sigma_N: float
    Lambda: float
    rho_min: float
    rho_max: float
    kappa: float
    n_planned: int
    shift: float
    private: bool = True

    @property
    def capacity(self):
        return 2 ** (self.m - 1)


def tree_depth(n):
    """1 + ceil(log2 n), at least 1."""
    if n <= 1:
        return 1
    return 1 + math.ceil(math.log2(n))


def plan_noise(budget, T, n_fixed=None, gamma=None, L=1.0, d=5, M=1):
    """Calibrate the privatizer for a run of ``T`` trials.

    With ``n_fixed`` the number of releases is known in advance; otherwise the
    worst case is assumed: one release per trial (centralized) or one per
    round-robin cycle of length ``gamma`` (decentralized). In the
    decentralized case the failure probability is additionally split over the
    ``gamma`` independent release streams.
    """
    eps, delta, alpha = budget.epsilon, budget.delta, budget.alpha
    if not eps > 0:
        raise InvalidBudget(f"epsilon must be positive, got {eps!r}")
    if not 0 < delta < 1:
        raise InvalidBudget(f"delta must lie in (0, 1), got {delta!r}")
    if not 0 < alpha < 1:
        raise InvalidBudget(f"alpha must lie in (0, 1), got {alpha!r}")
    if T < 1:
        raise ValueError("horizon T must be at least 1")
    streams = 1
    if n_fixed is not None:
        n = int(n_fixed)
        if n < 1:
            raise ValueError("n_fixed must be at least 1")
        m = tree_depth(n)
    elif gamma is not None and gamma > 1:
        n = math.ceil(T / gamma)
        m = 1 if T <= gamma else 1 + math.ceil(math.log2(T / gamma))
        streams = int(gamma)
    else:
        n = int(T)
        m = tree_depth(n)
    l2 = L**2 + 1.0
    log_term = math.log(2.0 * n * M * streams / alpha)
    sigma_sq = 16.0 * m * l2**2 * math.log(2.0 / delta) ** 2 / eps**2
    lam = math.sqrt(32.0) * m * l2 * math.log(4.0 / delta) * (4.0 * math.sqrt(d) + 2.0 * log_term) / eps
    kappa = math.sqrt(m * l2 * (math.sqrt(d) + 2.0 * log_term) / (math.sqrt(2.0) * eps))
    return NoisePlan(
        m=m,
        sigma_N=math.sqrt(sigma_sq),
        Lambda=lam,
        rho_min=lam,
        rho_max=3.0 * lam,
        kappa=kappa,
        n_planned=0 if n_fixed is None else n,
        shift=2.0 * lam,
        private=True,
    )


def nonprivate_plan(T, M, lam=1.0, gamma=None):
    """Noise-free releases regularized by ``lam`` in total across ``M`` agents."""
    n = T if gamma is None or gamma <= 1 else math.ceil(T / gamma)
    rho = lam / M
    return NoisePlan(
        m=tree_depth(max(n, 1)),
        sigma_N=0.0,
        Lambda=0.0,
        rho_min=rho,
        rho_max=rho,
        kappa=0.0,
        n_planned=0,
        shift=rho,
        private=False,
    )


class NoiseTree:
    """Binary counting tree over (dim x dim) blocks with Gaussian node noise.

    ``batch_shape`` stacks independent trees that always receive inserts
    together (for instance all agents of one centralized run); they share a
    leaf count but draw independent noise.
    """

    def __init__(self, depth, dim, sigma, rng, batch_shape=()):
        if depth < 1:
            raise ValueError("tree depth must be at least 1")
        self.depth = int(depth)
        self.dim = int(dim)
        self.sigma = float(sigma)
        self.rng = rng
        self.batch_shape = tuple(batch_shape)
        shape = self.batch_shape + (self.depth, self.dim, self.dim)
        self._psum = np.zeros(shape)
        self._noise = np.zeros(shape)
        self.leaf_count = 0

    @property
    def capacity(self):
        return 2 ** (self.depth - 1)

    def _fresh_noise(self):
        shape = self.batch_shape + (self.dim, self.dim)
        if self.sigma == 0.0:
            return np.zeros(shape)
        return symmetrize(self.sigma * self.rng.standard_normal(shape))

    def insert(self, block):
        if self.leaf_count >= self.capacity:
            raise TreeFull(
                f"tree of depth {self.depth} holds {self.capacity} releases; "
                "plan for the worst-case number of synchronizations"
            )
        block = np.asarray(block, dtype=float)
        k = self.leaf_count + 1
        level = (k & -k).bit_length() - 1
        merged = block + self._psum[..., :level, :, :].sum(axis=-3)
        self._psum[..., :level, :, :] = 0.0
        self._noise[..., :level, :, :] = 0.0
        self._psum[..., level, :, :] = merged
        self._noise[..., level, :, :] = self._fresh_noise()
        self.leaf_count = k

    def query(self):
        if self.leaf_count == 0:
            raise EmptyTree("no blocks inserted yet")
        return (self._psum + self._noise).sum(axis=-3)

    def exact(self):
        """Noise-free prefix sum of all inserted blocks."""
        return self._psum.sum(axis=-3)

    def active_levels(self):
        """Levels of the nodes that make up the current prefix-sum query."""
        return [lvl for lvl in range(self.depth) if (self.leaf_count >> lvl) & 1]

    def decomposition(self):
        """(start, end) leaf ranges (1-based, inclusive) of the queried nodes."""
        out = []
        end = 0
        for lvl in reversed(self.active_levels()):
            out.append((end + 1, end + 2**lvl))
            end += 2**lvl
        return out


def tree_init(plan, d, rng, batch_shape=()):
    return NoiseTree(plan.m, d + 1, plan.sigma_N, rng, batch_shape)


def tree_insert(tree, block):
    tree.insert(block)


def tree_query(tree):
    return tree.query()


def split_release(noisy, shift):
    """(U_hat, u_hat) from a noisy (d+1) x (d+1) prefix sum."""
    d = noisy.shape[-1] - 1
    u_mat = noisy[..., :d, :d] + shift * np.eye(d)
    u_vec = noisy[..., :d, d].copy()
    return u_mat, u_vec


def privatize_output(tree, plan, d=None):
    noisy = tree.query()
    if d is not None and noisy.shape[-1] != d + 1:
        raise ValueError(f"tree holds {noisy.shape[-1]}-blocks, expected {d + 1}")
    return split_release(noisy, plan.shift)


def staged_block(x, y):
    """[x, y]^T [x, y] for one observation (or a stack of them)."""
    z = np.concatenate([np.asarray(x, dtype=float), np.asarray(y, dtype=float)[..., None]], axis=-1)
    return z[..., :, None] * z[..., None, :]

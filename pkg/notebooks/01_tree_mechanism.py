# %% [markdown]
# # Tree-based aggregation of Gram matrices
#
# Each agent privatizes the running sum of its local statistics with a binary
# counting tree. A prefix of k blocks is covered by popcount(k) tree nodes, so
# the released sum carries at most m noisy nodes no matter how long the run.

# %%
import numpy as np

from fedban.privatizer import NoiseTree, PrivacyBudget, plan_noise, split_release, staged_block

plan = plan_noise(PrivacyBudget(epsilon=1.0, delta=0.1), T=1000, d=5, M=4)
print(f"depth m={plan.m}  sigma_N={plan.sigma_N:.3g}  Lambda={plan.Lambda:.3g}  kappa={plan.kappa:.3g}")

# %% [markdown]
# ## Which nodes make up a prefix
# After 11 inserts (binary 1011) the prefix splits into blocks of 8, 2 and 1.

# %%
tree = NoiseTree(plan.m, 6, plan.sigma_N, np.random.default_rng(0))
rng = np.random.default_rng(1)
for _ in range(11):
    x = rng.normal(size=5) / 3
    tree.insert(staged_block(x, np.array(rng.uniform())))
print("decomposition:", tree.decomposition())
print("noisy levels: ", tree.active_levels())

# %% [markdown]
# ## The released pair
# The query is split into a Gram part and a reward vector. The Gram part is
# shifted by 2*Lambda so it stays positive definite with high probability.

# %%
U_hat, u_hat = split_release(tree.query(), plan.shift)
H = U_hat - plan.shift * np.eye(5) - tree.exact()[:5, :5]
print(f"||H||_2 = {np.linalg.norm(H, 2):.3g}  vs  Lambda = {plan.Lambda:.3g}")
print("min eigenvalue of U_hat:", np.linalg.eigvalsh(U_hat)[0].round(1))

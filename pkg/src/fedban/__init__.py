"""Federated differentially private linear contextual bandits.

Centralized and peer-to-peer variants of a LinUCB learner whose agents share
tree-mechanism-privatized Gram matrices, plus a seeded experiment harness.
"""

from fedban.centralized import make_protocol, run_centralized, simulate_centralized
from fedban.decentralized import Network, run_decentralized
from fedban.environment import EnvConfig, Environment
from fedban.harness import ExperimentConfig, load_config, run_experiment
from fedban.privatizer import NoiseTree, PrivacyBudget, plan_noise

__version__ = "0.1.0"

__all__ = [
    "EnvConfig",
    "Environment",
    "ExperimentConfig",
    "Network",
    "NoiseTree",
    "PrivacyBudget",
    "load_config",
    "make_protocol",
    "plan_noise",
    "run_centralized",
    "run_decentralized",
    "run_experiment",
    "simulate_centralized",
]

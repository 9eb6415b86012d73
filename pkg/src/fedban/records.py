"""Per-run traces shared by both protocols and the experiment harness."""

from dataclasses import dataclass, field

import numpy as np


def checkpoint_times(T, every):
    """Trials at which a run is sampled: every ``every`` trials plus ``T``."""
    if T <= 0:
        return np.zeros(0, dtype=np.int64)
    ts = np.arange(every, T + 1, every, dtype=np.int64)
    if ts.size == 0 or ts[-1] != T:
        ts = np.append(ts, T)
    return ts


@dataclass
class RunRecord:
    run_id: int
    seed: int
    mode: str
    checkpoints: np.ndarray  # (n,)
    cum_regret: np.ndarray  # (n, M)
    sync_count: np.ndarray  # (n, M)
    messages_sent: np.ndarray  # (n, M)
    beta: np.ndarray  # (n, M)
    actions: np.ndarray  # (T, M) chosen action indices
    meta: dict = field(default_factory=dict)

    @property
    def n_agents(self):
        return self.cum_regret.shape[1]

    @property
    def horizon(self):
        return int(self.actions.shape[0])

    @property
    def group_regret(self):
        return float(self.cum_regret[-1].sum()) if len(self.checkpoints) else 0.0

    @property
    def n_total(self):
        return int(self.meta.get("n_total", 0))

    def rows(self):
        for k, t in enumerate(self.checkpoints):
            for agent in range(self.n_agents):
                yield (
                    self.run_id,
                    int(t),
                    agent,
                    float(self.cum_regret[k, agent]),
                    int(self.sync_count[k, agent]),
                    int(self.messages_sent[k, agent]),
                )

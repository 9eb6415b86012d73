"""Experiment driver: JSON configs, seeded repeats, CSV and plot-data output.

A config describes one experiment (a protocol, an environment, a privacy
budget and how many seeded repeats to run). Per-run seeds are derived from
``env.master_seed`` and the run index only, so a run's trace does not depend
on how runs are batched or spread over worker processes.
"""

import csv
import dataclasses
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from fedban import centralized, decentralized
from fedban.environment import EnvConfig, replay_regret
from fedban.errors import MissingAxis, ParseError, ValidationError
from fedban.privatizer import PrivacyBudget

MODES = ("centralized", "decentralized")
REGIMES = (centralized.EVERY_ROUND, centralized.THEOREM_DEFAULT, centralized.NEVER)
TOPOLOGIES = ("complete", "line", "ring", "star", "random-regular", "edge-list")
AXES = ("epsilon", "communication", "dimension")
DEFAULT_SWEEPS = {
    "epsilon": [0.1, 1.0, 10.0],
    "communication": list(REGIMES),
    "dimension": [5, 10, 20],
}
CSV_HEADER = ("run_id", "t", "agent", "cum_regret", "sync_count", "messages_sent")
PLOT_HEADER = ("axis_value", "T", "mean_per_agent_regret", "std")

# Runs advanced together in one batched centralized simulation.
BATCH = 20


@dataclass(frozen=True)
class NetworkSpec:
    topology: str = "complete"
    gamma: int = 1
    degree: Optional[int] = None
    seed: int = 0
    path: Optional[str] = None

    def problems(self):
        out = []
        if self.topology not in TOPOLOGIES:
            out.append(f"network.topology must be one of {', '.join(TOPOLOGIES)}")
        if not isinstance(self.gamma, int) or self.gamma < 1:
            out.append("network.gamma must be an integer >= 1")
        if self.topology == "random-regular" and (not isinstance(self.degree, int) or self.degree < 1):
            out.append("network.degree must be a positive integer for random-regular graphs")
        if self.topology == "edge-list" and not self.path:
            out.append("network.path is required for edge-list topologies")
        return out

    def build(self, M):
        if self.topology == "edge-list":
            adj = decentralized.load_edge_list(self.path, M)
        else:
            adj = decentralized.make_graph(self.topology, M, degree=self.degree, seed=self.seed)
        return decentralized.Network(adj, self.gamma)


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "centralized"
    env: EnvConfig = field(default_factory=EnvConfig)
    budget: PrivacyBudget = field(default_factory=lambda: PrivacyBudget(1.0, 0.1))
    D: object = centralized.THEOREM_DEFAULT
    private: bool = True
    lam: float = 1.0
    network: Optional[NetworkSpec] = None
    repeats: int = 1
    checkpoint_every: int = 100
    sweep: Optional[dict] = None

    def problems(self):
        out = []
        if self.mode not in MODES:
            out.append(f"mode must be one of {', '.join(MODES)}")
        out += self.env.problems()
        out += self.budget.problems()
        if isinstance(self.D, str):
            if self.D not in REGIMES:
                out.append(f"D must be a nonnegative number or one of {', '.join(REGIMES)}")
        elif isinstance(self.D, bool) or not isinstance(self.D, (int, float)) or not self.D >= 0:
            out.append(f"D must be a nonnegative number or one of {', '.join(REGIMES)}")
        if not isinstance(self.private, bool):
            out.append("private must be true or false")
        if not self.lam > 0:
            out.append("lam must be positive")
        if not isinstance(self.repeats, int) or self.repeats < 1:
            out.append("repeats must be an integer >= 1")
        if not isinstance(self.checkpoint_every, int) or self.checkpoint_every < 1:
            out.append("checkpoint_every must be an integer >= 1")
        if self.mode == "decentralized":
            if self.network is None:
                out.append("network is required in decentralized mode")
            else:
                out += self.network.problems()
        if self.sweep is not None:
            for axis, values in self.sweep.items():
                if axis not in AXES:
                    out.append(f"sweep.{axis} is not a sweep axis ({', '.join(AXES)})")
                elif not isinstance(values, list) or not values:
                    out.append(f"sweep.{axis} must be a nonempty list")
        return out

    def check(self):
        problems = self.problems()
        if problems:
            raise ValidationError(problems)
        return self

    def to_dict(self):
        out = {
            "mode": self.mode,
            "env": self.env.to_dict(),
            "budget": dataclasses.asdict(self.budget),
            "D": self.D,
            "private": self.private,
            "lam": self.lam,
            "repeats": self.repeats,
            "checkpoint_every": self.checkpoint_every,
        }
        if self.network is not None:
            out["network"] = dataclasses.asdict(self.network)
        if self.sweep is not None:
            out["sweep"] = dict(self.sweep)
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


def _section(raw, name, cls, problems):
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        problems.append(f"{name} must be an object")
        return {}
    allowed = _fields(cls)
    for key in sorted(set(raw) - allowed):
        problems.append(f"{name}.{key} is not a recognized key")
    return {k: v for k, v in raw.items() if k in allowed}


def from_dict(raw):
    """Build and validate an ExperimentConfig from parsed JSON."""
    if not isinstance(raw, dict):
        raise ValidationError(["config must be a JSON object"])
    problems = []
    top = _fields(ExperimentConfig)
    for key in sorted(set(raw) - top):
        problems.append(f"{key} is not a recognized key")
    env = _section(raw.get("env"), "env", EnvConfig, problems)
    budget = _section(raw.get("budget"), "budget", PrivacyBudget, problems)
    if "budget" in raw and isinstance(raw["budget"], dict):
        for key in ("epsilon", "delta"):
            if key not in raw["budget"]:
                problems.append(f"budget.{key} is required")
    network = raw.get("network")
    if network is not None:
        network = _section(network, "network", NetworkSpec, problems)
    try:
        budget_obj = PrivacyBudget(**{"epsilon": 1.0, "delta": 0.1, **budget})
        cfg = ExperimentConfig(
            mode=raw.get("mode", "centralized"),
            env=EnvConfig(**env),
            budget=budget_obj,
            D=raw.get("D", centralized.THEOREM_DEFAULT),
            private=raw.get("private", True),
            lam=raw.get("lam", 1.0),
            network=None if network is None else NetworkSpec(**network),
            repeats=raw.get("repeats", 1),
            checkpoint_every=raw.get("checkpoint_every", 100),
            sweep=raw.get("sweep"),
        )
        problems += cfg.problems()
    except TypeError as exc:
        problems.append(str(exc))
        cfg = None
    if problems:
        raise ValidationError(problems)
    return cfg


def loads_config(text, source="<string>"):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return from_dict(raw)


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    return loads_config(text, source=str(path))


def run_seed(master_seed, run_id):
    """64-bit seed of run ``run_id`` derived from the master seed."""
    ss = np.random.SeedSequence([int(master_seed), int(run_id)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def protocol(cfg):
    gamma = cfg.network.gamma if cfg.mode == "decentralized" else None
    return centralized.make_protocol(cfg.env, cfg.budget, D=cfg.D, private=cfg.private,
                                     lam=cfg.lam, gamma=gamma)


def _run_batch(args):
    cfg, run_ids = args
    proto = protocol(cfg)
    seeds = [run_seed(cfg.env.master_seed, r) for r in run_ids]
    if cfg.mode == "centralized":
        return centralized.simulate_centralized(proto, seeds, cfg.checkpoint_every, run_ids=run_ids)
    net = cfg.network.build(cfg.env.M)
    out = []
    for run_id, seed in zip(run_ids, seeds):
        res = decentralized.run_decentralized(proto, net, seed, cfg.checkpoint_every, run_id=run_id)
        a = res.audit
        res.record.meta["audit"] = {
            "writes_ok": a["writes_ok"],
            "cross_clique_ok": a["cross_clique_ok"],
            "sync_checks": a["sync_checks"],
            "sync_failures": len(a["sync_failures"]),
            "flood_originated": int(a["flood_originated"].sum()),
            "flood_deliveries": a["flood_deliveries"],
        }
        out.append(res.record)
    return out


def _threads():
    raw = os.environ.get("FEDBAN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_experiment(cfg, threads=None):
    """All ``cfg.repeats`` runs, ordered by run_id."""
    cfg.check()
    step = BATCH if cfg.mode == "centralized" else 1
    ids = list(range(cfg.repeats))
    jobs = [(cfg, ids[i:i + step]) for i in range(0, len(ids), step)]
    workers = min(_threads() if threads is None else threads, len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_batch, jobs))
    else:
        parts = [_run_batch(job) for job in jobs]
    records = [rec for part in parts for rec in part]
    records.sort(key=lambda r: r.run_id)
    meta = {"config_hash": cfg.config_hash, "epsilon": cfg.budget.epsilon, "d": cfg.env.d,
            "M": cfg.env.M, "D_label": cfg.D, "private_label": cfg.private}
    for rec in records:
        rec.meta.update(meta)
    return records


def aggregate(records):
    """Mean and sample std over runs of the per-agent cumulative regret."""
    if not records:
        raise ValueError("no records to aggregate")
    ts = records[0].checkpoints
    per_agent = np.stack([r.cum_regret.sum(axis=1) / r.n_agents for r in records])
    std = per_agent.std(axis=0, ddof=1) if len(records) > 1 else np.zeros(len(ts))
    return {"t": ts, "mean": per_agent.mean(axis=0), "std": std}


def accounting_gap(record, env_cfg):
    """Group regret from the record minus the replayed trace (should be ~0)."""
    if record.horizon == 0:
        return 0.0
    return record.group_regret - replay_regret(env_cfg, record.seed, record.actions)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def write_csv(records, path):
    if not records:
        raise ValueError("write_csv needs at least one record")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for rec in sorted(records, key=lambda r: r.run_id):
            for row in rec.rows():
                w.writerow([_fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [(int(a), int(b), int(c), float(d), int(e), int(f)) for a, b, c, d, e, f in reader]
    return header, rows


def axis_label(record, axis):
    meta = record.meta
    if axis == "epsilon":
        key = "epsilon"
    elif axis == "dimension":
        key = "d"
    elif axis == "communication":
        key = "D_label"
    else:
        raise MissingAxis(f"unknown axis {axis!r}; expected one of {', '.join(AXES)}")
    if key not in meta:
        raise MissingAxis(f"record {record.run_id} carries no {axis} value")
    value = meta[key]
    if axis == "communication" and not meta.get("private_label", True):
        return f"{value}:nonprivate"
    return value


def emit_plot_data(records, axis, path):
    """Tidy (axis_value, T, mean_per_agent_regret, std) rows, one series per value."""
    if not records:
        raise MissingAxis("no records cover the axis")
    groups = {}
    for rec in records:
        groups.setdefault(axis_label(rec, axis), []).append(rec)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_HEADER)
        for value, recs in groups.items():
            agg = aggregate(recs)
            for t, mean, std in zip(agg["t"], agg["mean"], agg["std"]):
                w.writerow([_fmt(value), int(t), _fmt(mean), _fmt(std)])
    return list(groups)


def sweep_configs(cfg, axis):
    """(label, config) pairs for every value of ``axis``."""
    if axis not in AXES:
        raise MissingAxis(f"unknown axis {axis!r}; expected one of {', '.join(AXES)}")
    values = (cfg.sweep or {}).get(axis, DEFAULT_SWEEPS[axis])
    out = []
    for v in values:
        if axis == "epsilon":
            budget = dataclasses.replace(cfg.budget, epsilon=float(v))
            out.append((f"eps{v}", dataclasses.replace(cfg, budget=budget)))
        elif axis == "dimension":
            env = dataclasses.replace(cfg.env, d=int(v))
            out.append((f"d{v}", dataclasses.replace(cfg, env=env)))
        else:
            for private in (True, False):
                tag = "private" if private else "nonprivate"
                out.append((f"{v}_{tag}", dataclasses.replace(cfg, D=v, private=private)))
    for _, sub in out:
        sub.check()
    return out


def summary(cfg, records):
    agg = aggregate(records)
    return {
        "config_hash": cfg.config_hash,
        "mode": cfg.mode,
        "repeats": len(records),
        "seeds": [r.seed for r in records],
        "n_total": [r.n_total for r in records],
        "final_mean_per_agent_regret": float(agg["mean"][-1]) if len(agg["t"]) else 0.0,
        "final_std": float(agg["std"][-1]) if len(agg["t"]) else 0.0,
        "D": None if math.isinf(records[0].meta.get("D", 0.0)) else records[0].meta.get("D"),
    }

import csv
import dataclasses
import json
import math

import numpy as np
import pytest

from fedban import centralized as cen
from fedban import harness
from fedban.environment import EnvConfig
from fedban.errors import MissingAxis, ParseError, ValidationError
from fedban.privatizer import PrivacyBudget

MINIMAL = {"mode": "centralized", "env": {"d": 3, "M": 2, "T": 250}, "budget": {"epsilon": 1.0, "delta": 0.1}}


def small(**kw):
    base = harness.ExperimentConfig(env=EnvConfig(d=3, M=2, T=250), budget=PrivacyBudget(1.0, 0.1),
                                    repeats=3, checkpoint_every=100, private=False)
    return dataclasses.replace(base, **kw)


def test_minimal_config_round_trip(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(MINIMAL))
    cfg = harness.load_config(path)
    again = harness.loads_config(cfg.to_json())
    assert again == cfg
    assert again.config_hash == cfg.config_hash


def test_decentralized_round_trip():
    raw = dict(MINIMAL, mode="decentralized", network={"topology": "ring", "gamma": 1})
    cfg = harness.from_dict(raw)
    assert harness.loads_config(cfg.to_json()) == cfg


def test_delta_out_of_range_names_field():
    raw = dict(MINIMAL, budget={"epsilon": 1.0, "delta": 1.5})
    with pytest.raises(ValidationError) as exc:
        harness.from_dict(raw)
    assert any("budget.delta" in p for p in exc.value.problems)


def test_decentralized_requires_network():
    with pytest.raises(ValidationError) as exc:
        harness.from_dict(dict(MINIMAL, mode="decentralized"))
    assert any("network" in p for p in exc.value.problems)


def test_every_problem_is_listed():
    raw = dict(MINIMAL, colour="red", repeats=0, env={"d": 3, "M": 2, "T": 250, "speed": 2})
    with pytest.raises(ValidationError) as exc:
        harness.from_dict(raw)
    text = " | ".join(exc.value.problems)
    for needle in ("colour is not a recognized key", "env.speed is not a recognized key", "repeats"):
        assert needle in text


def test_parse_error_reports_line_and_column():
    with pytest.raises(ParseError, match=r"cfg\.json:3:5"):
        harness.loads_config('{\n  "mode": "centralized",\n    oops\n}', source="cfg.json")


def test_run_seeds_distinct_and_stable():
    seeds = [harness.run_seed(0, r) for r in range(100)]
    assert len(set(seeds)) == 100
    assert seeds == [harness.run_seed(0, r) for r in range(100)]
    assert harness.run_seed(1, 0) != seeds[0]


def test_repeats_distinct_and_reproducible():
    cfg = small(repeats=2)
    a = harness.run_experiment(cfg)
    b = harness.run_experiment(cfg)
    assert a[0].seed != a[1].seed
    assert not np.array_equal(a[0].actions, a[1].actions)
    for x, y in zip(a, b):
        assert np.array_equal(x.actions, y.actions) and np.array_equal(x.cum_regret, y.cum_regret)


def test_parallel_matches_serial():
    cfg = small(repeats=3)
    serial = harness.run_experiment(cfg, threads=1)
    split = dataclasses.replace(cfg, repeats=3)
    # Force one run per job so the pool actually has several jobs to spread.
    old = harness.BATCH
    harness.BATCH = 1
    try:
        pooled = harness.run_experiment(split, threads=2)
    finally:
        harness.BATCH = old
    for x, y in zip(serial, pooled):
        assert x.run_id == y.run_id and np.array_equal(x.cum_regret, y.cum_regret)


def test_csv_layout_and_recomputed_mean(tmp_path):
    cfg = small(repeats=3)
    records = harness.run_experiment(cfg)
    path = tmp_path / "runs.csv"
    harness.write_csv(records, path)
    with open(path) as fh:
        assert fh.readline() == "run_id,t,agent,cum_regret,sync_count,messages_sent\n"
    header, rows = harness.read_csv(path)
    assert tuple(header) == harness.CSV_HEADER
    env = cfg.env
    assert len(rows) == cfg.repeats * math.ceil(env.T / cfg.checkpoint_every) * env.M
    assert rows == sorted(rows, key=lambda r: (r[0], r[1], r[2]))
    finals = {}
    for run_id, t, agent, reg, *_ in rows:
        if t == env.T:
            finals[run_id] = finals.get(run_id, 0.0) + reg / env.M
    agg = harness.aggregate(records)
    assert agg["mean"][-1] == pytest.approx(np.mean(list(finals.values())), rel=1e-8)
    assert agg["std"][-1] == pytest.approx(np.std(list(finals.values()), ddof=1), rel=1e-6, abs=1e-9)


def test_csv_round_trip_to_printed_precision(tmp_path):
    records = harness.run_experiment(small(repeats=2))
    path = tmp_path / "runs.csv"
    harness.write_csv(records, path)
    _, rows = harness.read_csv(path)
    expect = [row for rec in records for row in rec.rows()]
    assert len(rows) == len(expect)
    for got, want in zip(rows, expect):
        assert got[:3] == want[:3] and got[4:] == want[4:]
        assert got[3] == pytest.approx(want[3], rel=1e-8)


def test_rows_monotone_per_agent():
    for rec in harness.run_experiment(small(repeats=2)):
        assert np.all(np.diff(rec.checkpoints) > 0)
        assert np.all(np.diff(rec.cum_regret, axis=0) >= 0)


def test_accounting_identity():
    cfg = small(repeats=2, private=True)
    for rec in harness.run_experiment(cfg):
        assert abs(harness.accounting_gap(rec, cfg.env)) <= 1e-9 * max(rec.group_regret, 1.0)


def test_write_csv_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        harness.write_csv([], tmp_path / "x.csv")


@pytest.mark.parametrize("axis,values", [
    ("epsilon", [0.1, 1.0, 10.0]),
    ("communication", ["every_round", "theorem_default", "never"]),
    ("dimension", [3, 4, 5]),
])
def test_plot_data_one_series_per_value(tmp_path, axis, values):
    base = small(repeats=2, private=True, sweep={axis: values})
    records = []
    for _, sub in harness.sweep_configs(base, axis):
        if not sub.private and axis == "communication":
            continue
        records += harness.run_experiment(sub)
    path = tmp_path / "plot.csv"
    labels = harness.emit_plot_data(records, axis, path)
    assert len(labels) == 3
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == harness.PLOT_HEADER
    assert len({r[0] for r in rows[1:]}) == 3
    assert len(rows) - 1 == 3 * math.ceil(base.env.T / base.checkpoint_every)


def test_communication_sweep_pairs_private_and_nonprivate():
    subs = harness.sweep_configs(small(), "communication")
    assert len(subs) == 6
    assert {s.private for _, s in subs} == {True, False}


def test_missing_axis():
    rec = harness.run_experiment(small(repeats=2))[0]
    rec.meta.pop("epsilon")
    with pytest.raises(MissingAxis):
        harness.axis_label(rec, "epsilon")
    with pytest.raises(MissingAxis):
        harness.axis_label(rec, "colour")
    with pytest.raises(MissingAxis):
        harness.emit_plot_data([], "epsilon", "unused.csv")
    with pytest.raises(MissingAxis):
        harness.sweep_configs(small(), "colour")


def test_centralized_n_total_counts_fired_trials():
    cfg = small(repeats=1, private=True)
    proto = harness.protocol(cfg)
    proto = dataclasses.replace(proto, D=proto.D * 0.05)
    fired = []
    rec = cen.run_centralized(proto, 5, callback=lambda info: fired.append(bool(info.fired.any())))
    assert rec.n_total == sum(fired)


def test_decentralized_experiment_audit_meta():
    cfg = small(mode="decentralized", network=harness.NetworkSpec("line", 1), repeats=1,
                env=EnvConfig(d=3, M=3, T=300))
    rec = harness.run_experiment(cfg)[0]
    audit = rec.meta["audit"]
    assert audit["sync_failures"] == 0
    assert audit["flood_originated"] == int(rec.messages_sent[-1].sum())
    assert rec.meta["cover_size"] >= 1

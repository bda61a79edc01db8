import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpefb.game_tree import compute_profiles, parse_tree, validate_tree
from dpefb.harness import (
    ConfigError,
    EnvSpecError,
    ExperimentConfig,
    FixedEnv,
    IIDEnv,
    PiecewiseEnv,
    compute_regret_curve,
    generate_random_tree,
    log_checkpoints,
    make_environment_sequence,
    parse_config,
    run_experiment,
    run_replication,
    write_outputs,
)
from dpefb.server import compute_schedule

from conftest import FIXTURES, MU1, MU2

T4_PATH = str(FIXTURES / "t4.tree")


def config(**kw):
    base = dict(tree=T4_PATH, horizon=50, epsilon=0.5, env="iid", seed=3, replications=2)
    base.update(kw)
    return ExperimentConfig(**base)


# -- environments ------------------------------------------------------------------


def test_fixed_sequence_cycles(t4):
    assert make_environment_sequence(t4, FixedEnv((MU1, MU2)), 4) == [MU1, MU2, MU1, MU2]


def test_iid_degenerate_weights_constant(t4):
    spec = IIDEnv({1: {3: 1.0, 4: 0.0}})
    seq = make_environment_sequence(t4, spec, 20, np.random.default_rng(0))
    assert all(mu == MU1 for mu in seq)


def test_iid_uniform_frequencies(t4):
    seq = make_environment_sequence(t4, IIDEnv(), 10_000, np.random.default_rng(0))
    share = sum(mu[1] == 3 for mu in seq) / len(seq)
    assert abs(share - 0.5) < 3 * math.sqrt(0.25 / 10_000)


def test_iid_rejects_mismatched_weights(t4):
    with pytest.raises(EnvSpecError):
        make_environment_sequence(t4, IIDEnv({1: {8: 1.0}}), 5)
    with pytest.raises(EnvSpecError):
        make_environment_sequence(t4, IIDEnv({5: {6: 1.0}}), 5)
    with pytest.raises(EnvSpecError):
        make_environment_sequence(t4, IIDEnv({1: {3: 0.0, 4: 0.0}}), 5)


def test_piecewise_concatenates(t4):
    spec = PiecewiseEnv(((FixedEnv((MU1,)), 3), (FixedEnv((MU2,)), 2)))
    assert make_environment_sequence(t4, spec, 5) == [MU1] * 3 + [MU2] * 2
    with pytest.raises(EnvSpecError):
        make_environment_sequence(t4, spec, 6)


# -- protocol loop ------------------------------------------------------------------


def test_smoke_two_trials(t4):
    results, summary = run_experiment(config(horizon=2, replications=1))
    records = results[0].records
    assert [r.t for r in records] == [1, 2]
    assert all(0.0 <= r.loss <= 1.0 for r in records)
    assert all(r.regret == r.cum_loss - r.best_fixed_cum for r in records)
    assert summary.final_regrets == (records[-1].regret,)


def test_deterministic(t4):
    first, s1 = run_experiment(config())
    second, s2 = run_experiment(config())
    assert [r.records for r in first] == [r.records for r in second]
    assert s1 == s2


def test_replications_differ(t4):
    results, _ = run_experiment(config(horizon=200))
    assert [r.loss for r in results[0].records] != [r.loss for r in results[1].records]


def test_environments_independent_of_algorithm_seed(t4):
    a = run_replication(t4, config(seed=1), 0, keep_environments=True)
    b = run_replication(t4, config(seed=2), 0, keep_environments=True)
    assert a.environments == b.environments
    assert [r.loss for r in a.records] != [r.loss for r in b.records]


def test_records_match_best_fixed(t4):
    res = run_replication(t4, config(horizon=300), 0, keep_environments=True)
    curve = compute_regret_curve(t4, res.records, res.environments)
    assert curve[-1][0] == 300
    assert curve[-1][1] == pytest.approx(res.final_regret, abs=1e-9)
    by_t = {r.t: r for r in res.records}
    for t, regret in curve:
        assert regret == pytest.approx(by_t[t].regret, abs=1e-9)


def test_regret_equals_cum_loss_under_mu1(tmp_path, t4):
    env_file = tmp_path / "mu1.env"
    env_file.write_text("1=3 2=5 6=8 7=9\n")
    res = run_replication(t4, config(env="fixed", env_file=str(env_file), horizon=100), 0, keep_environments=True)
    assert res.best_fixed_total == 0.0
    assert res.final_regret == res.final_cum_loss
    curve = compute_regret_curve(t4, res.records, res.environments)
    assert curve[-1][1] == pytest.approx(res.records[-1].cum_loss, abs=1e-12)


def test_regret_curve_zero_for_zero_losses():
    tree = parse_tree("0 I -\n1 A 0\n2 A 0\n3 L 1 0\n4 L 2 0\n5 L 2 0\n")
    cfg = ExperimentConfig(tree="unused", horizon=64, epsilon=0.5, env="iid")
    res = run_replication(tree, cfg, 0, keep_environments=True)
    assert all(regret == 0.0 for _, regret in compute_regret_curve(tree, res.records, res.environments))


def test_log_checkpoints():
    pts = log_checkpoints(50_000)
    assert pts[0] == 1 and pts[-1] == 50_000
    assert pts == sorted(set(pts))


def test_policy_recording(t4):
    res = run_replication(t4, config(horizon=20, record_policy_every=5), 0)
    assert [t for t, _ in res.policy_log] == [5, 10, 15, 20]
    for _, snap in res.policy_log:
        assert snap[1] + snap[2] == pytest.approx(1.0)


# -- outputs ------------------------------------------------------------------------


def test_write_outputs(tmp_path, t4):
    cfg = config(horizon=2, replications=1)
    results, summary = run_experiment(cfg)
    written = write_outputs(results, summary, tmp_path)
    csv_text = (tmp_path / "trials_rep000.csv").read_text().splitlines()
    assert csv_text[0] == "trial,loss,cum_loss,best_fixed_cum,regret"
    assert len(csv_text) == 3
    items = dict(line.split("=", 1) for line in (tmp_path / "summary.txt").read_text().splitlines())
    schedule = compute_schedule(compute_profiles(t4), 2, 0.5)
    assert float(items["eta"]) == schedule.eta
    assert float(items["gamma"]) == schedule.gamma
    for key in ("seed", "epsilon", "T", "final_regret_mean", "final_regret_stderr",
                "theorem_bound", "clamp_events", "max_trial_ops"):
        assert key in items
    assert tmp_path / "summary.txt" in written


# -- configuration ----------------------------------------------------------------


def test_parse_config_and_overrides(tmp_path):
    cfg = parse_config("tree=t4.tree\nT=100\nepsilon=0.5\n# note\nallow_large_epsilon=yes\n",
                       {"seed": "9"}, base_dir=tmp_path)
    assert cfg.tree == str(tmp_path / "t4.tree")
    assert cfg.horizon == 100 and cfg.seed == 9 and cfg.allow_large_epsilon


@pytest.mark.parametrize(
    "text",
    ["tree=a\nT=10\nepsilon=0.5\nbogus=1\n", "tree=a\nepsilon=0.5\n", "tree=a\nT=1\nepsilon=0.5\n",
     "tree=a\nT=10\nepsilon=0.5\nreplications=0\n", "tree=a\nT=ten\nepsilon=0.5\n", "just text\n"],
)
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


# -- random trees -------------------------------------------------------------------


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(2, 4), st.sampled_from(["uniform", "binary", "grid"]))
def test_generated_trees_validate(seed, depth, branch, law):
    tree = parse_tree(generate_random_tree(depth, branch, law, seed, p_infoset=0.3), validate=False)
    assert validate_tree(tree) == []
    for v in tree.infosets:
        assert 2 <= len(tree.children[v]) <= branch
    for a in tree.actions:
        assert 1 <= len(tree.children[a]) <= branch


def test_generator_deterministic():
    assert generate_random_tree(3, 3, "uniform", 42) == generate_random_tree(3, 3, "uniform", 42)


def test_depth_one_is_bandit():
    tree = parse_tree(generate_random_tree(1, 2, "uniform", 0))
    assert tree.infosets == (0,)
    assert len(tree.actions) == 2
    assert all(tree.is_leaf(c) for a in tree.actions for c in tree.children[a])

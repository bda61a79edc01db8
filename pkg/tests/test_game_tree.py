import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpefb.game_tree import (
    EnumerationCapError,
    Kind,
    TreeFormatError,
    TreeValidationError,
    compute_profiles,
    enumerate_environments,
    is_reduced_strategy,
    iter_environments,
    parse_environments,
    parse_tree,
    play,
    reachable_sets,
    terminal_actions,
    validate_tree,
)
from dpefb.oracle import enumerate_reduced_strategies

from conftest import A1, A2, B1, B2, L1, MU1, MU2, R, V2, random_tree


def test_parse_t4(t4):
    assert len(t4) == 10
    assert t4.root == 0
    assert t4.infosets == (R, V2)
    assert t4.actions == (A1, A2, B1, B2)
    assert t4.children[R] == (A1, A2)
    assert t4.losses[L1] == 0.3
    assert validate_tree(t4) == []


def test_roundtrip_text(t4):
    assert parse_tree(t4.to_text()) == t4


@pytest.mark.parametrize(
    "text, message",
    [
        ("", "no root"),
        ("# only a comment\n", "no root"),
        ("0 I -\n1 A 0\n2 L 1 1.5\n", "loss out of range"),
        ("0 I -\n1 A 0\n2 L 1 -0.1\n", "loss out of range"),
        ("0 I -\n1 X 0\n", "unknown kind"),
        ("0 I -\n1 A 0\n1 A 0\n", "duplicate id"),
        ("0 I -\n2 L 1 0.5\n1 A 0\n", "not declared before"),
        ("0 I -\n1 A\n", "malformed"),
        ("0 I -\n1 A 0 0.5\n", "non-leaf"),
        ("0 I -\n1 A 0\n2 L 1\n", "needs a loss"),
        ("1 I -\n", "dense"),
        ("0 I -\n1 A 0\n2 I -\n", "root"),
    ],
)
def test_parse_errors(text, message):
    with pytest.raises(TreeFormatError, match=message):
        parse_tree(text)


def test_validate_root_must_be_infoset():
    tree = parse_tree("0 A -\n1 L 0 0.5\n", validate=False)
    assert "node 0: root must be infoset" in validate_tree(tree)


def test_validate_infoset_needs_two_children():
    tree = parse_tree("0 I -\n1 A 0\n2 L 1 0.5\n", validate=False)
    violations = validate_tree(tree)
    assert any("|C(v)| > 1" in v for v in violations)
    with pytest.raises(TreeValidationError):
        parse_tree("0 I -\n1 A 0\n2 L 1 0.5\n")


def test_validate_kind_alternation():
    # infoset under infoset, action without children
    tree = parse_tree("0 I -\n1 A 0\n2 I 0\n3 L 1 0\n4 A 2\n5 A 2\n6 L 4 0\n", validate=False)
    violations = validate_tree(tree)
    assert any("infoset child 2 is not an action" in v for v in violations)
    assert any("node 5: action needs at least one child" in v for v in violations)


def test_minimal_legal_tree():
    assert validate_tree(parse_tree("0 I -\n1 A 0\n2 A 0\n3 L 1 0\n4 L 2 1\n")) == []


def test_profiles_t4(t4_profiles):
    p = t4_profiles
    assert p.m[R] == 4 and p.n[R] == 3
    assert p.n[A1] == 1 and p.n[A2] == 2 and p.n[V2] == 2
    assert p.beta[R] == 1.0
    assert p.beta[A1] == 1.0
    assert p.beta[A2] == 3.0
    assert p.beta[V2] == 1.5
    assert p.beta[B1] == p.beta[B2] == 1.5


@pytest.mark.parametrize("k", [2, 3, 7])
def test_profiles_bandit(k):
    lines = ["0 I -"] + [f"{i} A 0" for i in range(1, k + 1)]
    lines += [f"{k + i} L {i} 0.5" for i in range(1, k + 1)]
    tree = parse_tree("\n".join(lines))
    p = compute_profiles(tree)
    assert p.n[0] == k and p.m[0] == k
    assert all(p.beta[a] == 1.0 for a in tree.actions)


def test_profiles_exact_big_integers():
    # 40 binary infosets in parallel under one action: n = 2**40 + 1 exceeds
    # float precision but stays exact as an int
    lines = ["0 I -", "1 A 0", "2 A 0", "3 L 2 0.5"]
    nid = 4
    for _ in range(40):
        v = nid
        lines += [f"{v} I 1", f"{v + 1} A {v}", f"{v + 2} A {v}", f"{v + 3} L {v + 1} 0", f"{v + 4} L {v + 2} 1"]
        nid += 5
    p = compute_profiles(parse_tree("\n".join(lines)))
    assert p.n[0] == 2**40 + 1
    assert isinstance(p.n[0], int)


def test_play_examples(t4, mu1, mu2):
    out = play(t4, {R: A1}, mu1)
    assert out.loss == 0.3 and out.last_action == A1 and out.path == (R, A1, L1)
    for mu in (mu1, mu2):
        assert play(t4, {R: A2, V2: B2}, mu).loss == 1.0
        assert play(t4, {R: A2, V2: B2}, mu).last_action == B2
        assert play(t4, {R: A2, V2: B1}, mu).loss == 0.0
        assert play(t4, {R: A2, V2: B1}, mu).last_action == B1


def test_play_undefined_infoset(t4, mu1):
    with pytest.raises(KeyError, match="infoset 5"):
        play(t4, {R: A2}, mu1)


def test_reachable_sets(t4):
    assert reachable_sets(t4, {R: A2, V2: B1}) == ({R, V2}, {A2, B1})
    assert reachable_sets(t4, {R: A1}) == ({R}, {A1})


def test_reduced_strategy_check(t4):
    assert is_reduced_strategy(t4, {R: A1})
    assert not is_reduced_strategy(t4, {R: A1, V2: B1})  # V2 unreachable
    assert not is_reduced_strategy(t4, {R: A2})  # V2 reachable but unassigned
    assert not is_reduced_strategy(t4, {R: B1})


def test_terminal_actions(t4, t4_profiles, mu1):
    z = terminal_actions(t4, mu1)
    assert z == {A1, B1, B2}
    assert sum(t4_profiles.beta[a] for a in z) == pytest.approx(4.0, abs=1e-12)


def test_terminal_actions_bandit():
    tree = parse_tree("0 I -\n1 A 0\n2 A 0\n3 A 0\n4 L 1 0\n5 L 2 0\n6 L 3 0\n")
    mu = {1: 4, 2: 5, 3: 6}
    assert terminal_actions(tree, mu) == {1, 2, 3}


def test_enumerate_environments(t4):
    envs = enumerate_environments(t4)
    assert envs == [MU1, MU2]
    with pytest.raises(EnumerationCapError):
        enumerate_environments(t4, cap=1)


def test_single_environment_when_actions_single_child():
    tree = parse_tree("0 I -\n1 A 0\n2 A 0\n3 L 1 0\n4 L 2 1\n")
    assert enumerate_environments(tree) == [{1: 3, 2: 4}]


def test_environment_file(t4):
    envs = parse_environments(t4, "# c\n1=3 2=5 6=8 7=9\n\n1=4 2=5 6=8 7=9  # trailing\n")
    assert envs == [MU1, MU2]
    with pytest.raises(TreeFormatError, match="misses"):
        parse_environments(t4, "1=3 2=5\n")
    with pytest.raises(TreeFormatError, match="not a child"):
        parse_environments(t4, "1=8 2=5 6=8 7=9\n")


# -- properties over random trees ----------------------------------------------

tree_params = st.tuples(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(2, 3))


@settings(max_examples=60, deadline=None)
@given(tree_params)
def test_profile_counts_match_enumeration(params):
    seed, depth, branch = params
    tree = random_tree(seed, depth, branch)
    p = compute_profiles(tree)
    assert p.m[tree.root] == len(tree.actions)
    if p.n[tree.root] <= 5000:
        assert p.n[tree.root] == len(enumerate_reduced_strategies(tree, profiles=p))


@settings(max_examples=40, deadline=None)
@given(tree_params)
def test_beta_identities(params):
    seed, depth, branch = params
    tree = random_tree(seed, depth, branch)
    p = compute_profiles(tree)
    if p.n[tree.root] <= 2000:
        for sigma in enumerate_reduced_strategies(tree, profiles=p).strategies:
            assert math.fsum(1.0 / p.beta[a] for a in sigma.values()) == pytest.approx(1.0, abs=1e-9)
            infosets, _ = reachable_sets(tree, sigma)
            assert infosets == set(sigma)
    for mu in itertools.islice(iter_environments(tree), 500):
        assert math.fsum(p.beta[a] for a in terminal_actions(tree, mu)) == pytest.approx(len(tree.actions), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(tree_params, st.integers(0, 2**32 - 1))
def test_play_loss_in_range(params, env_seed):
    seed, depth, branch = params
    tree = random_tree(seed, depth, branch)
    rng = np.random.default_rng(env_seed)
    mu = {a: tree.children[a][rng.integers(len(tree.children[a]))] for a in tree.actions}
    sigma = {}
    stack = [tree.root]
    while stack:
        v = stack.pop()
        a = tree.children[v][rng.integers(len(tree.children[v]))]
        sigma[v] = a
        stack.extend(tree.infoset_children(a))
    out = play(tree, sigma, mu)
    assert 0.0 <= out.loss <= 1.0
    actions_on_path = [v for v in out.path if tree.kinds[v] is Kind.ACTION]
    assert out.last_action == actions_on_path[-1]
    assert tree.is_leaf(out.path[-1])

"""Brute-force and dynamic-programming ground truth.

Nothing in here is used by the learner itself. These routines enumerate
reduced sub-strategies, find the best fixed strategy in hindsight, and
recompute policy quantities the slow way so the server can be tested
against them.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .game_tree import (
    DEFAULT_ENUM_CAP,
    EnumerationCapError,
    Environment,
    GameTree,
    Kind,
    ReducedStrategy,
    TreeProfiles,
    compute_profiles,
    play_loss,
)


@dataclass(frozen=True)
class SubStrategyCatalog:
    anchor: int
    strategies: list[ReducedStrategy]

    def __len__(self) -> int:
        return len(self.strategies)


@dataclass(frozen=True)
class BestFixedResult:
    sigma_star: ReducedStrategy
    total_loss: float
    per_trial_loss: list[float]


def _sub_strategies(tree: GameTree, node: int) -> list[ReducedStrategy]:
    if tree.kinds[node] is Kind.INFOSET:
        out = []
        for a in tree.children[node]:
            for rest in _sub_strategies(tree, a):
                sigma = {node: a}
                sigma.update(rest)
                out.append(sigma)
        return out
    # action: independent choice below every infoset child
    parts = [_sub_strategies(tree, v) for v in tree.infoset_children(node)]
    out = []
    for combo in itertools.product(*parts):
        sigma: ReducedStrategy = {}
        for piece in combo:
            sigma.update(piece)
        out.append(sigma)
    return out


def enumerate_reduced_strategies(
    tree: GameTree,
    anchor: int | None = None,
    *,
    profiles: TreeProfiles | None = None,
    cap: int = DEFAULT_ENUM_CAP,
) -> SubStrategyCatalog:
    """Every reduced sub-strategy rooted at ``anchor`` (an infoset or action).

    For an action anchor the action itself is not part of the map; the map
    covers the infosets below it.
    """
    anchor = tree.root if anchor is None else anchor
    if tree.kinds[anchor] is Kind.LEAF:
        raise ValueError(f"anchor {anchor} is a leaf")
    profiles = profiles or compute_profiles(tree)
    if profiles.n[anchor] > cap:
        raise EnumerationCapError(f"n({anchor}) = {profiles.n[anchor]} exceeds cap {cap}")
    return SubStrategyCatalog(anchor, _sub_strategies(tree, anchor))


def _total(tree: GameTree, sigma: ReducedStrategy, envs: Sequence[Environment]) -> list[float]:
    return [play_loss(tree, sigma, mu) for mu in envs]


def best_fixed_bruteforce(
    tree: GameTree, envs: Sequence[Environment], *, cap: int = DEFAULT_ENUM_CAP
) -> BestFixedResult:
    catalog = enumerate_reduced_strategies(tree, cap=cap)
    best = None
    for sigma in catalog.strategies:
        losses = _total(tree, sigma, envs)
        total = math.fsum(losses)
        if best is None or total < best.total_loss:
            best = BestFixedResult(sigma, total, losses)
    assert best is not None
    return best


def best_fixed_dp(tree: GameTree, envs: Sequence[Environment]) -> BestFixedResult:
    """Best fixed reduced strategy over ``envs`` by recursion on trial subsets.

    At an action the trials are split by the child the environment picks;
    leaves contribute their loss, infoset children recurse on their share.
    Ties go to the lowest action id.
    """
    if not envs:
        raise ValueError("need at least one environment")
    kinds, losses = tree.kinds, tree.losses

    def best_action(a: int, trials: list[int]) -> tuple[float, ReducedStrategy]:
        split: dict[int, list[int]] = {c: [] for c in tree.children[a]}
        for t in trials:
            split[envs[t][a]].append(t)
        value = 0.0
        sigma: ReducedStrategy = {}
        for c, sub in split.items():
            if kinds[c] is Kind.LEAF:
                value += losses[c] * len(sub)
            else:
                v_val, v_sigma = best_infoset(c, sub)
                value += v_val
                sigma.update(v_sigma)
        return value, sigma

    def best_infoset(v: int, trials: list[int]) -> tuple[float, ReducedStrategy]:
        best_val = math.inf
        best_sigma: ReducedStrategy = {}
        for a in sorted(tree.children[v]):
            val, sub = best_action(a, trials)
            if val < best_val:
                best_val = val
                best_sigma = {v: a, **sub}
        return best_val, best_sigma

    _, sigma_star = best_infoset(tree.root, list(range(len(envs))))
    per_trial = _total(tree, sigma_star, envs)
    return BestFixedResult(sigma_star, math.fsum(per_trial), per_trial)


class PrefixBestFixed:
    """Incremental best-fixed cumulative loss over a growing trial prefix.

    Keeps, per node, the optimal cumulative loss over the trials that reach
    that node, and refreshes only the part of the tree an environment can
    reach. ``add`` is O(size of the environment's reachable subtree).
    """

    def __init__(self, tree: GameTree):
        self.tree = tree
        self._value = [0.0] * len(tree)
        self._leafsum = [0.0] * len(tree)
        self.trials = 0

    @property
    def value(self) -> float:
        return self._value[self.tree.root]

    def add(self, mu: Mapping[int, int]) -> float:
        tree = self.tree
        kinds, children = tree.kinds, tree.children
        value, leafsum = self._value, self._leafsum
        visited: list[int] = []
        stack = [tree.root]
        while stack:
            v = stack.pop()
            visited.append(v)
            for a in children[v]:
                visited.append(a)
                c = mu[a]
                if kinds[c] is Kind.LEAF:
                    leafsum[a] += tree.losses[c]
                else:
                    stack.append(c)
        # parents appear before children in `visited`
        for u in reversed(visited):
            if kinds[u] is Kind.INFOSET:
                value[u] = min(value[a] for a in children[u])
            else:
                value[u] = leafsum[u] + sum(
                    value[c] for c in children[u] if kinds[c] is Kind.INFOSET
                )
        self.trials += 1
        return value[tree.root]


def policy_marginal(
    tree: GameTree,
    pi: Mapping[int, float],
    a: int,
    *,
    profiles: TreeProfiles | None = None,
    cap: int = DEFAULT_ENUM_CAP,
) -> float:
    """Sum over sub-strategies below ``a`` of the product of ``pi`` over their
    actions (``a`` included). Should reproduce ``pi[a]`` for any policy."""
    catalog = enumerate_reduced_strategies(tree, a, profiles=profiles, cap=cap)
    base = pi[a]
    total = 0.0
    for sigma in catalog.strategies:
        prod = base
        for b in sigma.values():
            prod *= pi[b]
        total += prod
    return total


def potential_delta(tree: GameTree, pi: Mapping[int, float], sigma: Mapping[int, int]) -> float:
    """Sum of log-probabilities of the actions ``sigma`` plays."""
    total = 0.0
    for a in sigma.values():
        p = pi[a]
        if not p > 0.0:
            raise ValueError(f"non-positive probability {p} at action {a}")
        total += math.log(p)
    return total


def strategy_probability(pi: Mapping[int, float], sigma: Mapping[int, int]) -> float:
    return math.prod(pi[a] for a in sigma.values())


@dataclass(frozen=True)
class ReferenceUpdate:
    policy: dict[int, float]
    psi: dict[int, float]
    omega: dict[int, float]
    reach: dict[int, float]


def reference_update(
    tree: GameTree,
    profiles: TreeProfiles,
    eta: float,
    gamma: float,
    pi: Mapping[int, float],
    sigma: Mapping[int, int],
    report: Mapping[int, float],
    clamp: float = 700.0,
) -> ReferenceUpdate:
    """Policy update written step by step on a plain probability map.

    Copies the whole policy (O(|A|)) and renormalises each touched infoset
    explicitly, with the returned normaliser taken literally as
    ``1 - (1 - omega) * pi(chosen)``.
    """
    new_pi = dict(pi)
    psi: dict[int, float] = {}
    omega: dict[int, float] = {}
    reach: dict[int, float] = {}

    def update(v: int, x: float) -> float:
        a = sigma[v]
        pa = pi[a]
        reach[v] = x
        prod = 1.0
        for child in tree.infoset_children(a):
            prod *= update(child, pa * x)
        expo = -eta * report[a] / (gamma * profiles.beta[a] + pa * x)
        expo = min(max(expo, -clamp), clamp)
        w = math.exp(expo) * prod
        norm = 1.0 - (1.0 - w) * pa
        for b in tree.children[v]:
            new_pi[b] = (w * pi[b] if b == a else pi[b]) / norm
        omega[v] = w
        psi[v] = norm
        return norm

    update(tree.root, 1.0)
    return ReferenceUpdate(new_pi, psi, omega, reach)

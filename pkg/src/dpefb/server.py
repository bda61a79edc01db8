"""Server side of the private bandit learner.

The server holds one sum segment tree per infoset. It samples a reduced
strategy by descending those trees from the root, and folds a privatised
user report back in with a bottom-up multiplicative update that only
touches the infosets the sampled strategy reached.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping

from .game_tree import GameTree, Kind, ReducedStrategy, TreeProfiles
from .segtree import SumTree
from .user import UserReport

log = logging.getLogger(__name__)

EXPONENT_CLAMP = 700.0
WEIGHT_LOW, WEIGHT_HIGH = 1e-100, 1e100


class ScheduleError(ValueError):
    pass


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class Schedule:
    epsilon: float
    horizon: int
    eta: float
    gamma: float


def noise_factor(horizon: int, epsilon: float) -> float:
    """``6 ln T / eps + 9 (e - 2) / eps**2``, shared by the step size and
    the regret bound."""
    return 6.0 * math.log(horizon) / epsilon + 9.0 * (math.e - 2.0) / epsilon**2


def compute_schedule(
    profiles: TreeProfiles,
    horizon: int,
    epsilon: float,
    *,
    allow_large_epsilon: bool = False,
) -> Schedule:
    if horizon < 2:
        raise ScheduleError(f"horizon must be >= 2, got {horizon}")
    if not epsilon > 0.0:
        raise ScheduleError(f"epsilon must be positive, got {epsilon}")
    if epsilon >= 1.0:
        if not allow_large_epsilon:
            raise ScheduleError(f"epsilon must lie in (0, 1), got {epsilon}")
        log.warning("epsilon=%g >= 1 is outside the supported privacy range", epsilon)
    n_root = profiles.num_strategies
    if n_root < 2:
        raise ScheduleError("tree has fewer than two reduced strategies")
    eta = (noise_factor(horizon, epsilon) * profiles.num_actions * horizon / math.log(n_root)) ** -0.5
    gamma = 6.0 * math.log(horizon) * eta / epsilon
    return Schedule(epsilon=epsilon, horizon=horizon, eta=eta, gamma=gamma)


def theorem_bound(num_actions: int, num_strategies: int, horizon: int, epsilon: float) -> float:
    """Regret guarantee ``1 + 2 sqrt(noise_factor * |A| ln|S| T)``."""
    return 1.0 + 2.0 * math.sqrt(
        noise_factor(horizon, epsilon) * num_actions * math.log(num_strategies) * horizon
    )


@dataclass(frozen=True)
class UpdateTrace:
    """Per-infoset values from the last update (recorded when tracing)."""

    reach: dict[int, float]
    omega: dict[int, float]
    psi: dict[int, float]
    chosen_prob: dict[int, float]


class DPServer:
    """Mutable learner state: policy, schedule and instrumentation counters.

    Single writer; snapshots between updates are safe to share.
    """

    def __init__(self, tree: GameTree, profiles: TreeProfiles, schedule: Schedule, *, trace: bool = False):
        self.tree = tree
        self.profiles = profiles
        self.schedule = schedule
        self.trace_enabled = trace
        self.last_trace: UpdateTrace | None = None
        self.t = 1
        self.clamp_events = 0
        self.rescale_events = 0
        self.trial_ops = 0
        self.max_trial_ops = 0
        self.touched: list[int] = []

        self._counter = [0]
        kinds = tree.kinds
        self._trees: dict[int, SumTree] = {}
        self._slot: dict[int, int] = {}
        self._owner: dict[int, int] = {}
        # children of each action that are infosets, cached for the hot loop
        self._sub: dict[int, tuple[int, ...]] = {}
        n = profiles.n
        for v in tree.infosets:
            kids = tree.children[v]
            # initial policy n(a)/n(v); the ratio of exact ints is rounded once
            self._trees[v] = SumTree((n[a] / n[v] for a in kids), self._counter)
            for i, a in enumerate(kids):
                self._slot[a] = i
                self._owner[a] = v
                self._sub[a] = tuple(c for c in tree.children[a] if kinds[c] is Kind.INFOSET)
        self._children = {v: tree.children[v] for v in tree.infosets}
        self.init_ops = self._counter[0]

    # -- reading the policy -------------------------------------------------

    def prob(self, a: int) -> float:
        st = self._trees[self._owner[a]]
        return st.weight(self._slot[a]) / st.total

    def snapshot_policy(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for v, st in self._trees.items():
            total = st.total
            for a, w in zip(self._children[v], st.weights()):
                out[a] = w / total
        return out

    def reach_probability(self, a: int) -> float:
        """Probability that action ``a`` is in the sampled strategy's reach."""
        if not self.tree.is_action(a):
            raise ValueError(f"{a} is not an action")
        parents = self.tree.parents
        p = 1.0
        while a is not None:
            p *= self.prob(a)
            v = parents[a]
            a = parents[v]
        return p

    # -- sampling ------------------------------------------------------------

    def sample_strategy(self, rng) -> ReducedStrategy:
        """Draw a reduced strategy; ``rng`` only needs a ``random()`` method."""
        self._counter[0] = 0
        touched = self.touched = []
        trees, children, sub = self._trees, self._children, self._sub
        sigma: ReducedStrategy = {}
        stack = [self.tree.root]
        while stack:
            v = stack.pop()
            a = children[v][trees[v].find(rng.random())]
            sigma[v] = a
            touched.append(v)
            touched.append(a)
            stack.extend(sub[a])
        self.trial_ops = self._counter[0]
        return sigma

    # -- update ----------------------------------------------------------------

    def update_policy(self, sigma: Mapping[int, int], report) -> float:
        """Fold one report into the policy; returns the root normaliser.

        ``report`` is a :class:`~dpefb.user.UserReport` or a plain mapping
        over exactly the actions ``sigma`` plays.
        """
        values = report.values if isinstance(report, UserReport) else report
        if len(values) != len(sigma) or any(a not in values for a in sigma.values()):
            raise ReportError("report domain differs from the actions of the sampled strategy")
        for a in sigma.values():
            if not math.isfinite(values[a]):
                raise ReportError(f"non-finite report value at action {a}")

        counter = self._counter
        counter[0] = self.trial_ops
        eta, gamma = self.schedule.eta, self.schedule.gamma
        beta = self.profiles.beta
        trees, slot, sub = self._trees, self._slot, self._sub
        trace = UpdateTrace({}, {}, {}, {}) if self.trace_enabled else None

        def update(v: int, x: float) -> float:
            a = sigma[v]
            st = trees[v]
            i = slot[a]
            w_old = st.total
            pa = st.cells[st.size + i] / w_old
            counter[0] += 2
            xa = pa * x
            prod = 1.0
            for child in sub[a]:
                prod *= update(child, xa)
            expo = -eta * values[a] / (gamma * beta[a] + xa)
            if expo > EXPONENT_CLAMP or expo < -EXPONENT_CLAMP:
                self.clamp_events += 1
                expo = EXPONENT_CLAMP if expo > 0 else -EXPONENT_CLAMP
            omega = math.exp(expo) * prod
            st.multiply(i, omega)
            w_new = st.total
            counter[0] += 1
            psi = w_new / w_old
            if not WEIGHT_LOW <= w_new <= WEIGHT_HIGH:
                st.rescale(1.0 / w_new)
                self.rescale_events += 1
            if trace is not None:
                trace.reach[v] = x
                trace.omega[v] = omega
                trace.psi[v] = psi
                trace.chosen_prob[v] = pa
            return psi

        psi_root = update(self.tree.root, 1.0)
        self.trial_ops = counter[0]
        if self.trial_ops > self.max_trial_ops:
            self.max_trial_ops = self.trial_ops
        self.last_trace = trace
        self.t += 1
        return psi_root


def init_server(tree: GameTree, profiles: TreeProfiles, schedule: Schedule, **kwargs) -> DPServer:
    return DPServer(tree, profiles, schedule, **kwargs)

"""Privacy checks for the user's report mechanism.

For a fixed strategy the report under an environment is a product of
independent Laplace coordinates, so two environments differ only through
the (last action, loss) pair each one produces. The closed form below gives
the exact supremum of the log density ratio; the histogram audit is a
finite-sample sanity check that can refute but never certify.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .game_tree import GameTree, play
from .user import laplace_scale, sample_laplace_array

MIN_BIN_COUNT = 50
SLACK = 3.0 * math.sqrt(1.0 / MIN_BIN_COUNT + 1.0 / MIN_BIN_COUNT)


class AuditError(RuntimeError):
    pass


@dataclass(frozen=True)
class AuditResult:
    analytic_sup_log_ratio: float
    empirical_max_log_ratio: float
    bins_used: int
    epsilon: float
    slack: float
    passed: bool

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"


def analytic_log_ratio_bound(
    tree: GameTree,
    sigma: Mapping[int, int],
    mu: Mapping[int, int],
    mu_prime: Mapping[int, int],
    epsilon: float,
    *,
    scale: float | None = None,
) -> float:
    """Exact sup of ``|log p(d | mu) - log p(d | mu')|`` over reports ``d``.

    A Laplace coordinate of scale ``b`` shifted by ``s`` changes the log
    density by at most ``s / b``. Same last action: one coordinate, shift
    ``|l - l'|``. Different last actions: two coordinates, shifts ``l`` and
    ``l'``.
    """
    b = laplace_scale(epsilon) if scale is None else scale
    first = play(tree, sigma, mu)
    second = play(tree, sigma, mu_prime)
    if first.last_action == second.last_action:
        return abs(first.loss - second.loss) / b
    return (first.loss + second.loss) / b


def _report_samples(
    tree: GameTree,
    sigma: Mapping[int, int],
    mu: Mapping[int, int],
    epsilon: float,
    samples: int,
    rng: np.random.Generator,
    scale: float | None,
) -> np.ndarray:
    outcome = play(tree, sigma, mu)
    actions = sorted(sigma.values())
    draws = sample_laplace_array(epsilon, rng, (samples, len(actions)), scale=scale)
    draws[:, actions.index(outcome.last_action)] += outcome.loss
    return draws


def empirical_dp_check(
    tree: GameTree,
    sigma: Mapping[int, int],
    mu: Mapping[int, int],
    mu_prime: Mapping[int, int],
    epsilon: float,
    samples: int = 10**6,
    bins: int = 64,
    *,
    rng: np.random.Generator | None = None,
    seed: int = 0,
    scale: float | None = None,
    quantile: float = 1e-3,
) -> AuditResult:
    """Histogram audit of the report mechanism for one (sigma, mu, mu') triple.

    Each coordinate is binned on a common range clipped at the pooled
    ``quantile`` / ``1 - quantile`` points. The per-coordinate statistic is
    the largest ``|log(p/q)|`` over bins holding at least ``MIN_BIN_COUNT``
    draws under both environments; coordinates are independent, so their
    maxima are summed. ``scale`` replaces the Laplace scale ``2/epsilon``,
    which turns the audit into a negative control.
    """
    if samples < 10**5:
        raise ValueError("empirical audit needs at least 1e5 samples")
    rng = np.random.default_rng(seed) if rng is None else rng
    p = _report_samples(tree, sigma, mu, epsilon, samples, rng, scale)
    q = _report_samples(tree, sigma, mu_prime, epsilon, samples, rng, scale)

    total = 0.0
    used = 0
    for j in range(p.shape[1]):
        pooled = np.concatenate([p[:, j], q[:, j]])
        lo, hi = np.quantile(pooled, [quantile, 1.0 - quantile])
        edges = np.linspace(lo, hi, bins + 1)
        cp, _ = np.histogram(p[:, j], edges)
        cq, _ = np.histogram(q[:, j], edges)
        ok = (cp >= MIN_BIN_COUNT) & (cq >= MIN_BIN_COUNT)
        if not ok.any():
            continue
        used += int(ok.sum())
        ratios = np.abs(np.log(cp[ok] / cq[ok]))
        total += float(ratios.max())
    if used == 0:
        raise AuditError("no bin reached the minimum count under both environments")

    analytic = analytic_log_ratio_bound(tree, sigma, mu, mu_prime, epsilon, scale=scale)
    passed = analytic <= epsilon + 1e-9 and total <= epsilon + SLACK
    return AuditResult(analytic, total, used, epsilon, SLACK, passed)

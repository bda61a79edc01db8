"""User-side local randomiser.

The user learns the loss of the path it played and sends back one noisy
number per action of the sampled strategy: the loss on the last action
taken, zero elsewhere, each plus independent Laplace noise of scale
``2 / epsilon``. Nothing else leaves the user.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .game_tree import PlayOutcome


@dataclass(frozen=True)
class UserReport:
    values: dict[int, float]
    trial: int = 0


def laplace_scale(epsilon: float) -> float:
    return 2.0 / epsilon


def laplace_density(x: float, epsilon: float) -> float:
    return epsilon / 4.0 * math.exp(-epsilon / 2.0 * abs(x))


def laplace_from_uniform(u: float, scale: float) -> float:
    """Inverse CDF of the zero-mean Laplace law at ``u`` in (0, 1)."""
    v = u - 0.5
    mag = -scale * math.log(1.0 - 2.0 * abs(v))
    return mag if v > 0 else -mag


def sample_laplace(epsilon: float, rng, scale: float | None = None) -> float:
    if not epsilon > 0.0:
        raise ValueError("epsilon must be positive")
    b = laplace_scale(epsilon) if scale is None else scale
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return laplace_from_uniform(u, b)


def sample_laplace_array(epsilon: float, rng: np.random.Generator, size, scale: float | None = None) -> np.ndarray:
    """Vectorised draws with the same inverse-CDF map as :func:`sample_laplace`."""
    b = laplace_scale(epsilon) if scale is None else scale
    u = rng.random(size)
    # u == 0 has probability 2**-53; nudge instead of redrawing
    u[u == 0.0] = np.finfo(float).tiny
    v = u - 0.5
    return -b * np.sign(v) * np.log1p(-2.0 * np.abs(v))


def build_report(
    sigma: Mapping[int, int],
    outcome: PlayOutcome,
    epsilon: float,
    rng,
    *,
    trial: int = 0,
    scale: float | None = None,
) -> UserReport:
    """Privatise one trial's feedback.

    Noise is drawn over the strategy's actions in increasing id order so a
    seeded stream reproduces the report exactly. ``scale`` overrides the
    Laplace scale (used only to build deliberately broken mechanisms).
    """
    # paths alternate infoset, action, ..., leaf: infosets sit at even positions
    path = outcome.path
    for i in range(0, len(path) - 1, 2):
        v = path[i]
        if sigma.get(v) != path[i + 1]:
            raise ValueError(f"outcome path leaves infoset {v} by {path[i + 1]}, strategy plays {sigma.get(v)}")
    z = outcome.last_action
    actions = sorted(sigma.values())
    if z not in sigma.values():
        raise ValueError(f"last action {z} is not played by the strategy")
    loss = outcome.loss
    b = laplace_scale(epsilon) if scale is None else scale
    values: dict[int, float] = {}
    for a in actions:
        u = rng.random()
        while u == 0.0:
            u = rng.random()
        phi = laplace_from_uniform(u, b)
        values[a] = loss + phi if a == z else phi
    return UserReport(values, trial)

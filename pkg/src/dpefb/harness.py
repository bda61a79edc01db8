"""Simulation harness: environments, the protocol loop and regret accounting.

Each trial runs sample -> play -> report -> update. The server only ever
receives the sampled strategy and the user's report; environments, losses
and paths stay on this side of the call.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .game_tree import (
    Environment,
    GameTree,
    compute_profiles,
    load_environments,
    load_tree,
    play,
)
from .oracle import PrefixBestFixed, best_fixed_dp
from .server import compute_schedule, init_server, theorem_bound
from .user import build_report

log = logging.getLogger(__name__)

SERVER_STREAM, USER_STREAM = 0, 1


# -- random streams -----------------------------------------------------------


class UniformStream:
    """Buffered uniforms from a PCG64 generator seeded by ``(seed, *keys)``.

    Exposes ``random()`` like :class:`numpy.random.Generator`, but serves
    Python floats from blocks, which matters in the per-trial loop.
    """

    def __init__(self, seed: int, *keys: int, block: int = 4096):
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))
        self._block = block
        self._buf: list[float] = []
        self._pos = 0

    def random(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self.generator.random(self._block).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u


def make_generator(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


# -- environment specifications ---------------------------------------------


class EnvSpecError(ValueError):
    pass


@dataclass(frozen=True)
class FixedEnv:
    """A listed environment sequence, cycled when shorter than the horizon."""

    envs: tuple[Environment, ...]
    path: str | None = None


@dataclass(frozen=True)
class IIDEnv:
    """Independent categorical child per action; missing actions are uniform."""

    weights: dict[int, dict[int, float]] = field(default_factory=dict)
    seed: int = 0


@dataclass(frozen=True)
class PiecewiseEnv:
    segments: tuple[tuple[FixedEnv, int], ...]


EnvSpec = Union[FixedEnv, IIDEnv, PiecewiseEnv]


def fixed_env_from_file(tree: GameTree, path) -> FixedEnv:
    envs = load_environments(tree, path)
    if not envs:
        raise EnvSpecError(f"{path}: no environments listed")
    return FixedEnv(tuple(envs), str(path))


def parse_weights(text: str) -> dict[int, dict[int, float]]:
    """Lines of ``action child weight``; ``#`` starts a comment."""
    out: dict[int, dict[int, float]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise EnvSpecError(f"line {lineno}: expected 'action child weight'")
        a, c, w = int(parts[0]), int(parts[1]), float(parts[2])
        out.setdefault(a, {})[c] = w
    return out


def _iid_tables(tree: GameTree, spec: IIDEnv) -> list[tuple[int, tuple[int, ...], np.ndarray]]:
    for a, row in spec.weights.items():
        if not (0 <= a < len(tree)) or not tree.is_action(a):
            raise EnvSpecError(f"weights given for {a}, which is not an action")
        for c, w in row.items():
            if c not in tree.children[a]:
                raise EnvSpecError(f"weight for nonexistent child {c} of action {a}")
            if not (w >= 0.0 and math.isfinite(w)):
                raise EnvSpecError(f"weight {w} for ({a}, {c}) must be non-negative")
        if not sum(row.values()) > 0.0:
            raise EnvSpecError(f"weights for action {a} sum to zero")
    tables = []
    for a in sorted(tree.actions):
        kids = tree.children[a]
        row = spec.weights.get(a)
        w = np.ones(len(kids)) if row is None else np.array([row.get(c, 0.0) for c in kids])
        tables.append((a, kids, w / w.sum()))
    return tables


def _cycle(envs: Sequence[Environment], length: int) -> list[Environment]:
    return [envs[t % len(envs)] for t in range(length)]


def make_environment_sequence(tree: GameTree, spec: EnvSpec, horizon: int, rng: np.random.Generator | None = None) -> list[Environment]:
    """Materialise ``mu_1 .. mu_T`` in full before any trial is run."""
    if isinstance(spec, FixedEnv):
        if not spec.envs:
            raise EnvSpecError("fixed environment list is empty")
        return _cycle(spec.envs, horizon)
    if isinstance(spec, PiecewiseEnv):
        total = sum(length for _, length in spec.segments)
        if total != horizon:
            raise EnvSpecError(f"segment lengths sum to {total}, horizon is {horizon}")
        out: list[Environment] = []
        for seg, length in spec.segments:
            out.extend(_cycle(seg.envs, length))
        return out
    if isinstance(spec, IIDEnv):
        rng = make_generator(spec.seed) if rng is None else rng
        tables = _iid_tables(tree, spec)
        columns = []
        for a, kids, probs in tables:
            idx = rng.choice(len(kids), size=horizon, p=probs)
            columns.append((a, np.asarray(kids)[idx].tolist()))
        return [{a: col[t] for a, col in columns} for t in range(horizon)]
    raise TypeError(f"unknown environment spec {spec!r}")


# -- experiment configuration ---------------------------------------------------


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    tree: str
    horizon: int
    epsilon: float
    env: str = "iid"
    env_file: str | None = None
    env_weights: str | None = None
    env_segments: str | None = None
    env_seed: int = 0
    seed: int = 0
    replications: int = 1
    output_dir: str | None = None
    allow_large_epsilon: bool = False
    record_policy_every: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.horizon < 2:
            raise ConfigError("T must be >= 2")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.env not in ("fixed", "iid", "piecewise"):
            raise ConfigError(f"env must be fixed, iid or piecewise, not {self.env!r}")
        if self.record_policy_every < 0:
            raise ConfigError("record_policy_every must be >= 0")


_CONFIG_KEYS = {
    "tree": str,
    "T": int,
    "epsilon": float,
    "env": str,
    "env_file": str,
    "env_weights": str,
    "env_segments": str,
    "env_seed": int,
    "seed": int,
    "replications": int,
    "output_dir": str,
    "allow_large_epsilon": "bool",
    "record_policy_every": int,
    "workers": int,
}
_PATH_KEYS = ("tree", "env_file", "env_weights", "output_dir")


def _to_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_config(text: str, overrides: dict[str, str] | None = None, base_dir=None) -> ExperimentConfig:
    """Parse ``key=value`` lines; ``overrides`` win over file values.

    Relative paths in the file resolve against ``base_dir``; override paths
    are taken as given.
    """
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in _PATH_KEYS and base_dir is not None and not os.path.isabs(value):
            value = str(Path(base_dir) / value)
        raw[key] = value
    for key, value in (overrides or {}).items():
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = value

    kwargs = {}
    for key, value in raw.items():
        kind = _CONFIG_KEYS[key]
        try:
            parsed = _to_bool(value) if kind == "bool" else kind(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
        kwargs["horizon" if key == "T" else key] = parsed
    for required in ("tree", "horizon", "epsilon"):
        if required not in kwargs:
            raise ConfigError(f"missing required key {'T' if required == 'horizon' else required!r}")
    return ExperimentConfig(**kwargs)


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), overrides, base_dir=Path(path).parent)


def env_spec_from_config(tree: GameTree, cfg: ExperimentConfig) -> EnvSpec:
    if cfg.env == "fixed":
        if not cfg.env_file:
            raise ConfigError("env=fixed needs env_file")
        return fixed_env_from_file(tree, cfg.env_file)
    if cfg.env == "iid":
        weights = {}
        if cfg.env_weights:
            with open(cfg.env_weights) as fh:
                weights = parse_weights(fh.read())
        return IIDEnv(weights, cfg.env_seed)
    if not cfg.env_segments:
        raise ConfigError("env=piecewise needs env_segments")
    segments = []
    for item in cfg.env_segments.split(","):
        path, _, length = item.strip().rpartition(":")
        if not path:
            raise ConfigError(f"segment {item!r} must look like path:length")
        segments.append((fixed_env_from_file(tree, path), int(length)))
    return PiecewiseEnv(tuple(segments))


# -- the protocol loop ----------------------------------------------------------


@dataclass(frozen=True, slots=True)
class TrialRecord:
    t: int
    sigma: tuple[tuple[int, int], ...]
    loss: float
    cum_loss: float
    best_fixed_cum: float
    regret: float


@dataclass
class ReplicationResult:
    index: int
    records: list[TrialRecord] | None
    final_regret: float
    final_cum_loss: float
    best_fixed_total: float
    clamp_events: int
    rescale_events: int
    max_trial_ops: int
    max_ops_ratio: float
    init_ops: int
    policy_log: list[tuple[int, dict[int, float]]]
    environments: list[Environment] | None = None


@dataclass(frozen=True)
class RegretSummary:
    seed: int
    eta: float
    gamma: float
    epsilon: float
    horizon: int
    num_actions: int
    num_strategies: int
    final_regrets: tuple[float, ...]
    final_regret_mean: float
    final_regret_stderr: float
    theorem_bound: float
    clamp_events: int
    max_trial_ops: int
    max_ops_ratio: float

    def as_items(self) -> list[tuple[str, str]]:
        return [
            ("seed", str(self.seed)),
            ("eta", repr(self.eta)),
            ("gamma", repr(self.gamma)),
            ("epsilon", repr(self.epsilon)),
            ("T", str(self.horizon)),
            ("replications", str(len(self.final_regrets))),
            ("final_regret_mean", repr(self.final_regret_mean)),
            ("final_regret_stderr", repr(self.final_regret_stderr)),
            ("theorem_bound", repr(self.theorem_bound)),
            ("clamp_events", str(self.clamp_events)),
            ("max_trial_ops", str(self.max_trial_ops)),
        ]


def ops_budget(tree: GameTree, sigma) -> int:
    """``sum over reached infosets of ceil(log2 |C(v)|)``, plus one."""
    return 1 + sum(math.ceil(math.log2(len(tree.children[v]))) for v in sigma)


def run_replication(
    tree: GameTree,
    cfg: ExperimentConfig,
    index: int,
    *,
    keep_records: bool = True,
    keep_environments: bool = False,
) -> ReplicationResult:
    profiles = compute_profiles(tree)
    schedule = compute_schedule(profiles, cfg.horizon, cfg.epsilon, allow_large_epsilon=cfg.allow_large_epsilon)
    server = init_server(tree, profiles, schedule)
    spec = env_spec_from_config(tree, cfg)
    # the whole environment sequence exists before trial 1 (oblivious adversary)
    envs = make_environment_sequence(tree, spec, cfg.horizon, make_generator(cfg.env_seed, index))

    server_rng = UniformStream(cfg.seed, index, SERVER_STREAM)
    user_rng = UniformStream(cfg.seed, index, USER_STREAM)
    tracker = PrefixBestFixed(tree)
    records: list[TrialRecord] | None = [] if keep_records else None
    policy_log: list[tuple[int, dict[int, float]]] = []
    every = cfg.record_policy_every
    epsilon = cfg.epsilon
    cum = 0.0
    max_ratio = 0.0
    best = 0.0

    for t in range(1, cfg.horizon + 1):
        mu = envs[t - 1]
        try:
            sigma = server.sample_strategy(server_rng)
            outcome = play(tree, sigma, mu)
            report = build_report(sigma, outcome, epsilon, user_rng, trial=t)
            server.update_policy(sigma, report)
        except Exception as exc:
            raise RuntimeError(f"replication {index}, trial {t}: {exc}") from exc
        ratio = server.trial_ops / ops_budget(tree, sigma)
        if ratio > max_ratio:
            max_ratio = ratio
        cum += outcome.loss
        best = tracker.add(mu)
        if records is not None:
            records.append(TrialRecord(t, tuple(sorted(sigma.items())), outcome.loss, cum, best, cum - best))
        if every and t % every == 0:
            policy_log.append((t, server.snapshot_policy()))

    final_best = best_fixed_dp(tree, envs).total_loss
    if abs(final_best - best) > 1e-6 * max(1.0, final_best):
        raise RuntimeError(f"prefix tracker {best} disagrees with best_fixed_dp {final_best}")
    return ReplicationResult(
        index=index,
        records=records,
        final_regret=cum - final_best,
        final_cum_loss=cum,
        best_fixed_total=final_best,
        clamp_events=server.clamp_events,
        rescale_events=server.rescale_events,
        max_trial_ops=server.max_trial_ops,
        max_ops_ratio=max_ratio,
        init_ops=server.init_ops,
        policy_log=policy_log,
        environments=envs if keep_environments else None,
    )


def _replication_job(args) -> ReplicationResult:
    tree, cfg, index, keep_records = args
    return run_replication(tree, cfg, index, keep_records=keep_records)


def summarize(tree: GameTree, cfg: ExperimentConfig, results: Sequence[ReplicationResult]) -> RegretSummary:
    profiles = compute_profiles(tree)
    schedule = compute_schedule(profiles, cfg.horizon, cfg.epsilon, allow_large_epsilon=cfg.allow_large_epsilon)
    finals = np.array([r.final_regret for r in results])
    stderr = float(finals.std(ddof=1) / math.sqrt(len(finals))) if len(finals) > 1 else 0.0
    return RegretSummary(
        seed=cfg.seed,
        eta=schedule.eta,
        gamma=schedule.gamma,
        epsilon=cfg.epsilon,
        horizon=cfg.horizon,
        num_actions=profiles.num_actions,
        num_strategies=profiles.num_strategies,
        final_regrets=tuple(float(x) for x in finals),
        final_regret_mean=float(finals.mean()),
        final_regret_stderr=stderr,
        theorem_bound=theorem_bound(profiles.num_actions, profiles.num_strategies, cfg.horizon, cfg.epsilon),
        clamp_events=sum(r.clamp_events for r in results),
        max_trial_ops=max(r.max_trial_ops for r in results),
        max_ops_ratio=max(r.max_ops_ratio for r in results),
    )


def run_experiment(
    cfg: ExperimentConfig,
    *,
    tree: GameTree | None = None,
    keep_records: bool = True,
    on_replication: Callable[[ReplicationResult], None] | None = None,
) -> tuple[list[ReplicationResult], RegretSummary]:
    """Run every replication and aggregate.

    Replications are independent (own server, streams and environments), so
    with ``workers > 1`` they run in worker processes; results come back in
    replication order either way.
    """
    tree = load_tree(cfg.tree) if tree is None else tree
    jobs = [(tree, cfg, k, keep_records) for k in range(cfg.replications)]
    results: list[ReplicationResult] = []
    if cfg.workers > 1 and cfg.replications > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for res in pool.map(_replication_job, jobs):
                if on_replication:
                    on_replication(res)
                results.append(res)
    else:
        for job in jobs:
            res = _replication_job(job)
            if on_replication:
                on_replication(res)
            results.append(res)
    return results, summarize(tree, cfg, results)


# -- regret curves ------------------------------------------------------------


def log_checkpoints(horizon: int, count: int = 16) -> list[int]:
    """Roughly log-spaced trial indices in ``[1, horizon]``, always ending at ``horizon``."""
    points = np.unique(np.round(np.logspace(0, math.log10(horizon), count)).astype(int))
    out = [int(p) for p in points if 1 <= p <= horizon]
    if out[-1] != horizon:
        out.append(horizon)
    return out


def compute_regret_curve(
    tree: GameTree,
    records: Sequence[TrialRecord],
    envs: Sequence[Environment],
    checkpoints: Sequence[int] | None = None,
) -> list[tuple[int, float]]:
    """``(t, regret_t)`` at checkpoints, each prefix minimum from a fresh
    :func:`best_fixed_dp` over ``envs[:t]``."""
    if len(records) != len(envs):
        raise ValueError("records and environments differ in length")
    checkpoints = log_checkpoints(len(records)) if checkpoints is None else checkpoints
    cum = np.cumsum([r.loss for r in records])
    curve = []
    for t in checkpoints:
        best = best_fixed_dp(tree, envs[:t]).total_loss
        curve.append((t, float(cum[t - 1]) - best))
    return curve


# -- random trees ---------------------------------------------------------------


def _draw_loss(law: str, rng: np.random.Generator) -> float:
    if law == "uniform":
        return round(float(rng.random()), 3)
    if law == "binary":
        return float(rng.integers(0, 2))
    if law == "grid":
        return int(rng.integers(0, 11)) / 10
    raise ValueError(f"unknown leaf loss law {law!r}")


def generate_random_tree(
    depth: int,
    max_branch: int,
    leaf_loss_law: str = "uniform",
    rng: np.random.Generator | int | None = None,
    *,
    p_infoset: float = 0.5,
) -> str:
    """Random valid tree file with up to ``depth`` infoset levels.

    Infosets get ``[2, max_branch]`` actions, actions ``[1, max_branch]``
    children; a child below the last level is always a leaf, otherwise an
    infoset with probability ``p_infoset``. Node ids are breadth-first.
    """
    if depth < 1 or max_branch < 2:
        raise ValueError("need depth >= 1 and max_branch >= 2")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    lines = ["0 I -"]
    queue = [(0, 1)]  # (infoset id, level)
    next_id = 1
    head = 0
    while head < len(queue):
        v, level = queue[head]
        head += 1
        for _ in range(int(rng.integers(2, max_branch + 1))):
            a = next_id
            next_id += 1
            lines.append(f"{a} A {v}")
            for _ in range(int(rng.integers(1, max_branch + 1))):
                c = next_id
                next_id += 1
                if level < depth and rng.random() < p_infoset:
                    lines.append(f"{c} I {a}")
                    queue.append((c, level + 1))
                else:
                    lines.append(f"{c} L {a} {_draw_loss(leaf_loss_law, rng)!r}")
    return "\n".join(lines) + "\n"


# -- outputs --------------------------------------------------------------------

TRIAL_HEADER = ("trial", "loss", "cum_loss", "best_fixed_cum", "regret")


def write_trial_csv(path, records: Sequence[TrialRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRIAL_HEADER)
        for r in records:
            writer.writerow((r.t, repr(r.loss), repr(r.cum_loss), repr(r.best_fixed_cum), repr(r.regret)))


def write_policy_csv(path, policy_log) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("trial", "action", "prob"))
        for t, snap in policy_log:
            for a in sorted(snap):
                writer.writerow((t, a, repr(snap[a])))


def write_summary(path, summary: RegretSummary) -> None:
    with open(path, "w") as fh:
        for key, value in summary.as_items():
            fh.write(f"{key}={value}\n")


def replication_paths(output_dir, index: int) -> tuple[Path, Path]:
    out = Path(output_dir)
    return out / f"trials_rep{index:03d}.csv", out / f"policy_rep{index:03d}.csv"


def write_outputs(results: Sequence[ReplicationResult], summary: RegretSummary, output_dir) -> list[Path]:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for res in results:
        written.extend(write_replication(res, out))
    summary_path = out / "summary.txt"
    write_summary(summary_path, summary)
    written.append(summary_path)
    return written


def write_replication(res: ReplicationResult, output_dir) -> list[Path]:
    trials_path, policy_path = replication_paths(output_dir, res.index)
    written = []
    if res.records is not None:
        write_trial_csv(trials_path, res.records)
        written.append(trials_path)
    if res.policy_log:
        write_policy_csv(policy_path, res.policy_log)
        written.append(policy_path)
    return written

"""Command-line entry point.

Exit codes: 0 ok, 1 validation failure, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audit import analytic_log_ratio_bound, empirical_dp_check
from .game_tree import (
    TreeFormatError,
    TreeValidationError,
    compute_profiles,
    enumerate_environments,
    format_strategy,
    load_environments,
    load_tree,
    parse_tree,
    validate_tree,
)
from .harness import (
    generate_random_tree,
    load_config,
    run_experiment,
    write_replication,
    write_summary,
)
from .oracle import best_fixed_dp, enumerate_reduced_strategies

EXIT_OK, EXIT_INVALID, EXIT_ERROR = 0, 1, 2


def _read_tree(path: str):
    with open(path) as fh:
        text = fh.read()
    return parse_tree(text)


def cmd_validate(args) -> int:
    with open(args.file) as fh:
        text = fh.read()
    try:
        tree = parse_tree(text, validate=False)
    except TreeFormatError as exc:
        print(f"invalid: {exc}")
        return EXIT_INVALID
    violations = validate_tree(tree)
    if violations:
        for v in violations:
            print(f"invalid: {v}")
        return EXIT_INVALID
    profiles = compute_profiles(tree)
    print(
        f"ok nodes={len(tree)} infosets={len(tree.infosets)} actions={len(tree.actions)} "
        f"leaves={len(tree.leaves)} strategies={profiles.num_strategies}"
    )
    return EXIT_OK


def cmd_profile(args) -> int:
    tree = _read_tree(args.file)
    prof = compute_profiles(tree)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(("node", "kind", "n", "m", "beta"))
    for v in range(len(tree)):
        if tree.is_leaf(v):
            continue
        writer.writerow((v, tree.kinds[v].value, prof.n[v], prof.m[v], repr(prof.beta[v])))
    return EXIT_OK


def cmd_gen_tree(args) -> int:
    rng = np.random.default_rng(args.seed)
    sys.stdout.write(generate_random_tree(args.depth, args.branch, args.loss_law, rng, p_infoset=args.p_infoset))
    return EXIT_OK


def cmd_best_fixed(args) -> int:
    tree = _read_tree(args.tree)
    envs = load_environments(tree, args.envs)
    if not envs:
        print("error: environment file lists no trials", file=sys.stderr)
        return EXIT_INVALID
    res = best_fixed_dp(tree, envs)
    print(f"trials={len(envs)}")
    print(f"sigma_star={format_strategy(res.sigma_star)}")
    print(f"total_loss={res.total_loss!r}")
    return EXIT_OK


_OVERRIDES = ("tree", "T", "epsilon", "env", "env_file", "env_weights", "env_segments",
              "env_seed", "seed", "replications", "output_dir", "record_policy_every", "workers")


def cmd_simulate(args) -> int:
    overrides = {k: str(getattr(args, k)) for k in _OVERRIDES if getattr(args, k) is not None}
    if args.allow_large_epsilon:
        overrides["allow_large_epsilon"] = "true"
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            print(f"error: --set expects key=value, got {item!r}", file=sys.stderr)
            return EXIT_INVALID
        overrides[key.strip()] = value.strip()
    cfg = load_config(args.config, overrides)
    tree = load_tree(cfg.tree)
    out_dir = Path(cfg.output_dir or "results")
    out_dir.mkdir(parents=True, exist_ok=True)

    def emit(res):
        write_replication(res, out_dir)
        res.records = None

    results, summary = run_experiment(cfg, tree=tree, on_replication=emit)
    write_summary(out_dir / "summary.txt", summary)
    for key, value in summary.as_items():
        print(f"{key}={value}")
    return EXIT_OK


def cmd_audit(args) -> int:
    tree = _read_tree(args.tree)
    strategies = enumerate_reduced_strategies(tree).strategies
    envs = enumerate_environments(tree)
    if args.all:
        triples = [
            (s, i, j)
            for s in range(len(strategies))
            for i, j in itertools.combinations(range(len(envs)), 2)
        ]
    else:
        if args.sigma is None or args.mu is None or args.mu_prime is None:
            print("error: give --sigma, --mu and --mu-prime, or --all", file=sys.stderr)
            return EXIT_INVALID
        triples = [(args.sigma, args.mu, args.mu_prime)]

    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(("sigma", "mu", "mu_prime", "analytic_sup_log_ratio", "empirical_max_log_ratio", "bins_used", "verdict"))
    failed = False
    rng = np.random.default_rng(args.seed)
    for s, i, j in triples:
        sigma, mu, mu_prime = strategies[s], envs[i], envs[j]
        if args.analytic_only:
            bound = analytic_log_ratio_bound(tree, sigma, mu, mu_prime, args.epsilon)
            ok = bound <= args.epsilon + 1e-9
            writer.writerow((s, i, j, repr(bound), "", 0, "pass" if ok else "fail"))
        else:
            res = empirical_dp_check(tree, sigma, mu, mu_prime, args.epsilon, args.samples, args.bins, rng=rng)
            ok = res.passed
            writer.writerow((s, i, j, repr(res.analytic_sup_log_ratio), repr(res.empirical_max_log_ratio),
                             res.bins_used, res.verdict))
        failed |= not ok
    return EXIT_INVALID if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpefb", description="Locally private bandit learning on game trees.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a tree file")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("profile", help="print per-node n, m, beta as CSV")
    p.add_argument("file")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("gen-tree", help="print a random valid tree file")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--branch", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss-law", choices=("uniform", "binary", "grid"), default="uniform")
    p.add_argument("--p-infoset", type=float, default=0.5)
    p.set_defaults(func=cmd_gen_tree)

    p = sub.add_parser("best-fixed", help="best fixed reduced strategy over an environment file")
    p.add_argument("--tree", required=True)
    p.add_argument("--envs", required=True)
    p.set_defaults(func=cmd_best_fixed)

    p = sub.add_parser("simulate", help="run the protocol loop from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--tree")
    p.add_argument("--T", dest="T", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--env", choices=("fixed", "iid", "piecewise"))
    p.add_argument("--env-file", dest="env_file")
    p.add_argument("--env-weights", dest="env_weights")
    p.add_argument("--env-segments", dest="env_segments")
    p.add_argument("--env-seed", dest="env_seed", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--record-policy-every", dest="record_policy_every", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--allow-large-epsilon", action="store_true")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("audit-dp", help="audit the report mechanism's privacy")
    p.add_argument("--tree", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--samples", type=int, default=10**6)
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=int)
    p.add_argument("--mu", type=int)
    p.add_argument("--mu-prime", dest="mu_prime", type=int)
    p.add_argument("--all", action="store_true", help="every strategy and environment pair")
    p.add_argument("--analytic-only", action="store_true", help="skip the sampling audit")
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (TreeFormatError, TreeValidationError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError, RuntimeError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
